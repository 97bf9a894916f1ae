#include "saunet/metrics.hpp"

#include <sstream>

namespace saunet {

namespace {

void require_same_dims(const char* op, const IntMap& a, const IntMap& b) {
  if (!a.same_dims(b))
    fail(op, ": label maps are ", a.h, "x", a.w, " vs ", b.h, "x", b.w);
}

struct Overlap {
  int64_t a = 0, b = 0, inter = 0;
};

Overlap class_overlap(const IntMap& pred, const IntMap& truth, int cls) {
  Overlap o;
  const size_t n = pred.v.size();
  for (size_t i = 0; i < n; ++i) {
    const bool in_a = pred.v[i] == cls;
    const bool in_b = truth.v[i] == cls;
    o.a += in_a;
    o.b += in_b;
    o.inter += in_a && in_b;
  }
  return o;
}

}  // namespace

double dice_coefficient(const IntMap& pred, const IntMap& truth, int cls) {
  require_same_dims("dice_coefficient", pred, truth);
  const Overlap o = class_overlap(pred, truth, cls);
  if (o.a + o.b == 0) return 1.0;  // both sets empty
  return 2.0 * static_cast<double>(o.inter) / static_cast<double>(o.a + o.b);
}

double iou(const IntMap& pred, const IntMap& truth, int cls) {
  require_same_dims("iou", pred, truth);
  const Overlap o = class_overlap(pred, truth, cls);
  const int64_t uni = o.a + o.b - o.inter;
  if (uni == 0) return 1.0;
  return static_cast<double>(o.inter) / static_cast<double>(uni);
}

double miou(const IntMap& pred, const IntMap& truth, const std::vector<int>& classes) {
  if (classes.empty()) fail("miou: class list is empty");
  double acc = 0.0;
  for (int c : classes) acc += iou(pred, truth, c);
  return acc / static_cast<double>(classes.size());
}

double boundary_f1(const IntMap& pred, const IntMap& truth, int tolerance_px) {
  require_same_dims("boundary_f1", pred, truth);
  if (tolerance_px < 0) fail("boundary_f1: tolerance must be >= 0");
  const Mask pb = mask_to_boundary(pred);
  const Mask tb = mask_to_boundary(truth);
  const size_t np = pb.count(), nt = tb.count();
  if (np == 0 && nt == 0) return 1.0;
  if (np == 0 || nt == 0) return 0.0;
  const Mask tb_tol = dilate_chebyshev(tb, tolerance_px);
  const Mask pb_tol = dilate_chebyshev(pb, tolerance_px);
  size_t matched_p = 0, matched_t = 0;
  for (size_t i = 0; i < pb.v.size(); ++i) {
    if (pb.v[i] && tb_tol.v[i]) ++matched_p;
    if (tb.v[i] && pb_tol.v[i]) ++matched_t;
  }
  const double precision = static_cast<double>(matched_p) / static_cast<double>(np);
  const double recall = static_cast<double>(matched_t) / static_cast<double>(nt);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

std::string MetricReport::to_json() const {
  std::ostringstream os;
  os << "{\"classes\":[";
  for (size_t i = 0; i < classes.size(); ++i) os << (i ? "," : "") << classes[i];
  os << "],\"dice\":[";
  for (size_t i = 0; i < dice.size(); ++i) os << (i ? "," : "") << dice[i];
  os << "],\"iou\":[";
  for (size_t i = 0; i < iou.size(); ++i) os << (i ? "," : "") << iou[i];
  os << "],\"mean_dice\":" << mean_dice << ",\"mean_iou\":" << mean_iou
     << ",\"boundary_f1\":" << boundary_f1 << "}";
  return os.str();
}

MetricAccumulator::MetricAccumulator(int num_classes, int boundary_tolerance_px)
    : num_classes_(num_classes),
      tolerance_(boundary_tolerance_px),
      dice_sum_(static_cast<size_t>(num_classes - 1), 0.0),
      iou_sum_(static_cast<size_t>(num_classes - 1), 0.0) {
  if (num_classes < 2) fail("metrics need at least one foreground class");
}

std::vector<std::pair<double, double>> MetricAccumulator::add(const IntMap& pred,
                                                              const IntMap& truth) {
  std::vector<std::pair<double, double>> scores;
  for (int c = 1; c < num_classes_; ++c) {
    const double d = dice_coefficient(pred, truth, c);
    const double j = iou(pred, truth, c);
    dice_sum_[static_cast<size_t>(c - 1)] += d;
    iou_sum_[static_cast<size_t>(c - 1)] += j;
    scores.push_back({d, j});
  }
  bf1_sum_ += boundary_f1(pred, truth, tolerance_);
  ++samples_;
  return scores;
}

MetricReport MetricAccumulator::report() const {
  if (samples_ == 0) fail("metrics: no samples accumulated");
  MetricReport r;
  const double n = static_cast<double>(samples_);
  for (int c = 1; c < num_classes_; ++c) {
    r.classes.push_back(c);
    r.dice.push_back(dice_sum_[static_cast<size_t>(c - 1)] / n);
    r.iou.push_back(iou_sum_[static_cast<size_t>(c - 1)] / n);
  }
  for (double d : r.dice) r.mean_dice += d;
  for (double j : r.iou) r.mean_iou += j;
  r.mean_dice /= static_cast<double>(r.dice.size());
  r.mean_iou /= static_cast<double>(r.iou.size());
  r.boundary_f1 = bf1_sum_ / n;
  return r;
}

}  // namespace saunet

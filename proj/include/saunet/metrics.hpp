#pragma once

#include <string>
#include <vector>

#include "saunet/grid.hpp"

namespace saunet {

/// 2|A∩B| / (|A|+|B|) over the class-k pixel sets; 1 when both sets empty.
double dice_coefficient(const IntMap& pred, const IntMap& truth, int cls);

/// |A∩B| / |A∪B| for class-k pixel sets; 1 when both sets empty.
double iou(const IntMap& pred, const IntMap& truth, int cls);

/// Mean IoU over the listed classes.
double miou(const IntMap& pred, const IntMap& truth, const std::vector<int>& classes);

/// F1 of boundary-pixel matching within a Chebyshev pixel tolerance; 1 when
/// both boundaries are empty.
double boundary_f1(const IntMap& pred, const IntMap& truth, int tolerance_px);

/// Per-class scores plus their arithmetic means. Background (class 0) is
/// excluded from the reported classes.
struct MetricReport {
  std::vector<int> classes;
  std::vector<double> dice;
  std::vector<double> iou;
  double mean_dice = 0.0;
  double mean_iou = 0.0;
  double boundary_f1 = 0.0;

  std::string to_json() const;
};

/// Accumulates per-sample scores and averages them into a MetricReport.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(int num_classes, int boundary_tolerance_px = 1);
  /// Scores one sample; returns the per-class (dice, iou) pairs in class order
  /// so callers can emit per-sample TSV rows.
  std::vector<std::pair<double, double>> add(const IntMap& pred, const IntMap& truth);
  MetricReport report() const;

 private:
  int num_classes_;
  int tolerance_;
  int64_t samples_ = 0;
  std::vector<double> dice_sum_, iou_sum_;
  double bf1_sum_ = 0.0;
};

}  // namespace saunet

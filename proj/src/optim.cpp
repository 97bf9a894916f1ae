#include "saunet/optim.hpp"

#include <cmath>

namespace saunet {

template <typename S>
RAdam<S>::RAdam(ParamRegistry<S>& reg, RAdamConfig<S> cfg) : cfg_(cfg) {
  for (const auto& name : reg.names()) {
    if (!reg.trainable(name)) continue;
    Tensor<S> p = reg.get(name);
    names_.push_back(name);
    params_.push_back(p);
    m_.push_back(Tensor<S>::zeros(p.shape()));
    v_.push_back(Tensor<S>::zeros(p.shape()));
  }
}

template <typename S>
void RAdam<S>::step(S lr) {
  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double b1t = std::pow(b1, static_cast<double>(t_));
  const double b2t = std::pow(b2, static_cast<double>(t_));
  const double rho_inf = 2.0 / (1.0 - b2) - 1.0;
  const double rho_t = rho_inf - 2.0 * static_cast<double>(t_) * b2t / (1.0 - b2t);
  const bool rectified = rho_t > 4.0;
  double rect = 0.0;
  if (rectified)
    rect = std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) /
                     ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));

  const S m_corr = static_cast<S>(1.0 / (1.0 - b1t));
  const S v_corr = static_cast<S>(1.0 / (1.0 - b2t));
  const S rect_s = static_cast<S>(rect);
  const S wd_factor = S(1) - lr * cfg_.weight_decay;

  for (size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor<S>& p = params_[pi];
    if (!p.has_grad()) fail("radam: parameter '", names_[pi], "' has no gradient buffer");
    S* pv = p.raw();
    const S* gv = p.grad_raw();
    S* mv = m_[pi].raw();
    S* vv = v_[pi].raw();
    const int64_t n = p.numel();
    for (int64_t i = 0; i < n; ++i) {
      const S g = gv[i];
      if (!std::isfinite(g))
        fail("radam: non-finite gradient in parameter '", names_[pi], "'");
      if (cfg_.weight_decay != S(0)) pv[i] *= wd_factor;  // decoupled decay
      mv[i] = static_cast<S>(b1) * mv[i] + (S(1) - static_cast<S>(b1)) * g;
      vv[i] = static_cast<S>(b2) * vv[i] + (S(1) - static_cast<S>(b2)) * g * g;
      const S mhat = mv[i] * m_corr;
      if (rectified)
        pv[i] -= lr * rect_s * mhat / (std::sqrt(vv[i] * v_corr) + cfg_.eps);
      else
        pv[i] -= lr * mhat;
    }
  }
}

template <typename S>
std::vector<SaucEntry> RAdam<S>::to_entries() const {
  std::vector<SaucEntry> out;
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    SaucEntry em{"optim.m." + names_[pi], m_[pi].shape(), {}};
    em.values.assign(m_[pi].data().begin(), m_[pi].data().end());
    out.push_back(std::move(em));
    SaucEntry ev{"optim.v." + names_[pi], v_[pi].shape(), {}};
    ev.values.assign(v_[pi].data().begin(), v_[pi].data().end());
    out.push_back(std::move(ev));
  }
  out.push_back(SaucEntry{"optim.step", {1}, {static_cast<float>(t_)}});
  return out;
}

template <typename S>
void RAdam<S>::load_entries(const std::vector<SaucEntry>& entries) {
  auto find = [&](const std::string& name) -> const SaucEntry* {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  };
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    const SaucEntry* em = find("optim.m." + names_[pi]);
    const SaucEntry* ev = find("optim.v." + names_[pi]);
    if (!em || !ev) fail("checkpoint is missing optimizer state for '", names_[pi], "'");
    if (em->dims != m_[pi].shape() || ev->dims != v_[pi].shape())
      fail("optimizer state shape mismatch for '", names_[pi], "'");
    for (int64_t i = 0; i < m_[pi].numel(); ++i) {
      m_[pi].raw()[i] = static_cast<S>(em->values[static_cast<size_t>(i)]);
      v_[pi].raw()[i] = static_cast<S>(ev->values[static_cast<size_t>(i)]);
    }
  }
  const SaucEntry* es = find("optim.step");
  if (!es || es->values.size() != 1) fail("checkpoint is missing optimizer step count");
  t_ = static_cast<int64_t>(es->values[0]);
}

double lr_schedule(double lr0, double gamma, int epoch) {
  if (gamma <= 0.0 || gamma > 1.0) fail("lr_schedule: gamma must be in (0,1], got ", gamma);
  if (epoch < 0) fail("lr_schedule: epoch must be >= 0");
  return lr0 * std::pow(gamma, static_cast<double>(epoch));
}

template class RAdam<float>;
template class RAdam<double>;

}  // namespace saunet

#include "rglm/optim.hpp"

#include <cmath>
#include <numbers>

namespace rglm {

Adam::Adam(std::vector<Parameter> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.size(), 0.0);
    v_.emplace_back(p.tensor.size(), 0.0);
  }
}

void Adam::step(double lr_scale) {
  ++t_;
  const double lr = cfg_.lr * lr_scale;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor t = params_[k].tensor;
    const std::vector<double> g = t.grad();
    auto w = t.mutable_values();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      w[i] -= lr * (mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * w[i]);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) {
    p.tensor.zero_grad();
  }
}

double lr_multiplier(std::size_t step, std::size_t total, double warmup_frac, bool cosine) {
  const double warm = std::ceil(warmup_frac * static_cast<double>(total));
  const double s = static_cast<double>(step);
  if (warm > 0.0 && s < warm) {
    return (s + 1.0) / warm;
  }
  if (!cosine || total == 0) {
    return 1.0;
  }
  const double progress = (s - warm) / std::max(1.0, static_cast<double>(total) - warm);
  return 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(1.0, progress)));
}

}  // namespace rglm

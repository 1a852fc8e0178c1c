#pragma once

#include <cstddef>
#include <vector>

#include "rglm/params.hpp"

namespace rglm {

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW)
};

class Adam {
 public:
  Adam(std::vector<Parameter> params, AdamConfig cfg);

  // One update from the parameters' accumulated gradients, with the
  // learning rate multiplied by lr_scale.
  void step(double lr_scale = 1.0);
  void zero_grad();
  std::size_t steps() const { return t_; }

 private:
  std::vector<Parameter> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

// Linear warmup over the first warmup_frac of total steps, then constant
// (cosine == false) or cosine decay to zero.
double lr_multiplier(std::size_t step, std::size_t total, double warmup_frac, bool cosine);

}  // namespace rglm

#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rglm/rng.hpp"
#include "rglm/tensor.hpp"

namespace rglm {

struct Parameter {
  std::string name;
  Tensor tensor;
};

// Ordered collection of named trainable tensors. Names are unique.
class ParameterStore {
 public:
  // Registers a requires_grad leaf initialized from values.
  Tensor add(const std::string& name, std::size_t rows, std::size_t cols,
             std::vector<double> values);
  Tensor add_zeros(const std::string& name, std::size_t rows, std::size_t cols);
  Tensor add_const(const std::string& name, std::size_t rows, std::size_t cols, double v);
  // Gaussian init with standard deviation stddev.
  Tensor add_normal(const std::string& name, std::size_t rows, std::size_t cols,
                    double stddev, Rng& rng);
  // Glorot-uniform init for a fan_in x fan_out weight.
  Tensor add_glorot(const std::string& name, std::size_t rows, std::size_t cols, Rng& rng);

  // Moves all parameters of other in under prefix + name.
  void merge(const std::string& prefix, const ParameterStore& other);

  const std::vector<Parameter>& params() const { return params_; }
  bool contains(const std::string& name) const { return index_.contains(name); }
  const Tensor& get(const std::string& name) const;
  std::size_t count() const;  // scalar count

  void zero_grad();

  nlohmann::json to_json() const;
  // Overwrites values of every parameter present in j; shapes must match.
  void load_json(const nlohmann::json& j);

  // name -> values snapshot, and restore from it.
  std::map<std::string, std::vector<double>> snapshot() const;
  void restore(const std::map<std::string, std::vector<double>>& snap);

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

void save_params(const ParameterStore& store, const std::filesystem::path& path);
void load_params(ParameterStore& store, const std::filesystem::path& path);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::vector<std::pair<std::string, double>> per_param;
};

// Compares analytic gradients of loss_fn against central differences.
// Per parameter: ||analytic - fd|| / max(||fd||, 1e-8). loss_fn must be
// deterministic (fixed noise draws).
GradCheckResult grad_check(const std::function<Tensor()>& loss_fn,
                           const std::vector<Parameter>& params, double eps = 1e-5);

}  // namespace rglm

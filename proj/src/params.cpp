#include "rglm/params.hpp"

#include <cmath>
#include <fstream>

#include "rglm/error.hpp"

namespace rglm {

Tensor ParameterStore::add(const std::string& name, std::size_t rows, std::size_t cols,
                           std::vector<double> values) {
  if (index_.contains(name)) {
    throw ParameterError("duplicate parameter name: " + name);
  }
  Tensor t = Tensor::from(rows, cols, std::move(values), true);
  index_[name] = params_.size();
  params_.push_back({name, t});
  return t;
}

Tensor ParameterStore::add_zeros(const std::string& name, std::size_t rows, std::size_t cols) {
  return add_const(name, rows, cols, 0.0);
}

Tensor ParameterStore::add_const(const std::string& name, std::size_t rows, std::size_t cols,
                                 double v) {
  return add(name, rows, cols, std::vector<double>(rows * cols, v));
}

Tensor ParameterStore::add_normal(const std::string& name, std::size_t rows, std::size_t cols,
                                  double stddev, Rng& rng) {
  std::vector<double> v(rows * cols);
  for (double& x : v) {
    x = stddev * rng.normal();
  }
  return add(name, rows, cols, std::move(v));
}

Tensor ParameterStore::add_glorot(const std::string& name, std::size_t rows, std::size_t cols,
                                  Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::vector<double> v(rows * cols);
  for (double& x : v) {
    x = limit * (2.0 * rng.uniform() - 1.0);
  }
  return add(name, rows, cols, std::move(v));
}

void ParameterStore::merge(const std::string& prefix, const ParameterStore& other) {
  for (const auto& p : other.params_) {
    const std::string name = prefix + p.name;
    if (index_.contains(name)) {
      throw ParameterError("duplicate parameter name: " + name);
    }
    index_[name] = params_.size();
    params_.push_back({name, p.tensor});
  }
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw ParameterError("unknown parameter: " + name);
  }
  return params_[it->second].tensor;
}

std::size_t ParameterStore::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    n += p.tensor.size();
  }
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) {
    p.tensor.zero_grad();
  }
}

nlohmann::json ParameterStore::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& p : params_) {
    j[p.name] = {{"shape", {p.tensor.rows(), p.tensor.cols()}},
                 {"values", std::vector<double>(p.tensor.values().begin(),
                                                p.tensor.values().end())}};
  }
  return j;
}

void ParameterStore::load_json(const nlohmann::json& j) {
  for (auto& p : params_) {
    if (!j.contains(p.name)) {
      throw ParseError("checkpoint: missing parameter " + p.name);
    }
    const auto& e = j.at(p.name);
    const auto shape = e.at("shape").get<std::vector<std::size_t>>();
    const auto values = e.at("values").get<std::vector<double>>();
    if (shape.size() != 2 || shape[0] != p.tensor.rows() || shape[1] != p.tensor.cols() ||
        values.size() != p.tensor.size()) {
      throw ParseError("checkpoint: shape mismatch for " + p.name + ", expected " +
                       p.tensor.shape().str());
    }
    std::copy(values.begin(), values.end(), p.tensor.mutable_values().begin());
  }
}

std::map<std::string, std::vector<double>> ParameterStore::snapshot() const {
  std::map<std::string, std::vector<double>> snap;
  for (const auto& p : params_) {
    snap[p.name].assign(p.tensor.values().begin(), p.tensor.values().end());
  }
  return snap;
}

void ParameterStore::restore(const std::map<std::string, std::vector<double>>& snap) {
  for (auto& p : params_) {
    auto it = snap.find(p.name);
    if (it == snap.end() || it->second.size() != p.tensor.size()) {
      throw ParameterError("restore: snapshot missing or mismatched for " + p.name);
    }
    std::copy(it->second.begin(), it->second.end(), p.tensor.mutable_values().begin());
  }
}

void save_params(const ParameterStore& store, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw ParameterError("cannot write " + path.string());
  }
  out << store.to_json().dump();
}

void load_params(ParameterStore& store, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ParseError("cannot read " + path.string());
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint " + path.string() + ": " + e.what());
  }
  store.load_json(j.contains("params") ? j.at("params") : j);
}

GradCheckResult grad_check(const std::function<Tensor()>& loss_fn,
                           const std::vector<Parameter>& params, double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) {
    throw ParameterError("grad_check: eps must lie in (0, 1e-2]");
  }
  for (auto p : params) {
    p.tensor.zero_grad();
  }
  Tensor loss = loss_fn();
  if (!std::isfinite(loss.item())) {
    throw NumericError("grad_check: non-finite loss");
  }
  loss.backward();

  GradCheckResult result;
  NoGradGuard no_grad;
  for (auto p : params) {
    const std::vector<double> analytic = p.tensor.grad();
    auto vals = p.tensor.mutable_values();
    double diff2 = 0.0;
    double fd2 = 0.0;
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + eps;
      const double up = loss_fn().item();
      vals[i] = saved - eps;
      const double down = loss_fn().item();
      vals[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down) || !std::isfinite(analytic[i])) {
        throw NumericError("grad_check: non-finite value at " + p.name + "[" +
                           std::to_string(i) + "]");
      }
      const double fd = (up - down) / (2.0 * eps);
      diff2 += (analytic[i] - fd) * (analytic[i] - fd);
      fd2 += fd * fd;
    }
    const double rel = std::sqrt(diff2) / std::max(std::sqrt(fd2), 1e-8);
    result.per_param.emplace_back(p.name, rel);
    result.max_rel_error = std::max(result.max_rel_error, rel);
  }
  return result;
}

}  // namespace rglm

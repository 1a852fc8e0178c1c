#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

// Self-check suites shared by the command-line tool and the acceptance tests.
namespace rglm {

struct MiSuiteReport {
  std::string kind;
  std::size_t instances = 0;
  double max_residual = 0.0;  // decomposition residuals
  double min_slack = 0.0;     // upper-bound / DPI slacks
  std::vector<std::string> failures;
  double seconds = 0.0;

  bool ok() const { return failures.empty(); }
  nlohmann::json to_json() const;
};

// Identity I(x;s_G|s_T) = I(x;s_G) + I(x;s_T|s_G) - I(x;s_T) on
// random joints with alphabets of 2..4 symbols; failure when residual >= tol.
MiSuiteReport decomposition_suite(std::size_t instances, std::uint64_t seed, double tol = 1e-12);
// I(G;s_G) - I(x;s_G|s_T) >= -tol on random deterministic-encoder joints,
// plus one tight construction whose slack must be below tol in magnitude.
MiSuiteReport upper_bound_suite(std::size_t instances, std::uint64_t seed, double tol = 1e-12);
// I(X;Y) - I(X;Z) >= -tol on random Markov chains.
MiSuiteReport dpi_suite(std::size_t instances, std::uint64_t seed, double tol = 1e-12);

struct GradSuiteEntry {
  std::string loss;
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t scalars = 0;
};

// Finite-difference check of text, feat, topo, sim, diff and pretrain losses
// through the full model stacks at the given width. which empty = all.
std::vector<GradSuiteEntry> grad_suite(std::size_t d_model, std::uint64_t seed,
                                       const std::vector<std::string>& which = {});

}  // namespace rglm

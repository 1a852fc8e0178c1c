#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rglm/rng.hpp"

// Exact information quantities over small discrete joints (natural log).
namespace rglm {

class JointDistribution {
 public:
  // pmf is dense, row-major over the product of alphabets (last variable
  // fastest). Throws ParameterError unless entries are >= 0 and sum to 1.
  JointDistribution(std::vector<std::string> names, std::vector<std::size_t> alphabets,
                    std::vector<double> pmf);

  const std::vector<std::string>& names() const { return names_; }
  const std::vector<std::size_t>& alphabets() const { return alphabets_; }
  const std::vector<double>& pmf() const { return pmf_; }
  std::size_t index_of(const std::string& name) const;

  // Probability of a full assignment.
  double p(std::span<const std::size_t> values) const;
  // Marginal table over vars (in the given order).
  std::vector<double> marginal(std::span<const std::string> vars) const;
  std::size_t cells(std::span<const std::string> vars) const;

  // Calls fn(values, p) for every cell with p > 0.
  void for_each(const std::function<void(std::span<const std::size_t>, double)>& fn) const;

 private:
  std::vector<std::string> names_;
  std::vector<std::size_t> alphabets_;
  std::vector<double> pmf_;
};

double entropy(const JointDistribution& j, std::span<const std::string> vars);
double mutual_information(const JointDistribution& j, std::span<const std::string> x,
                          std::span<const std::string> y);
// I(X; Y | Z) = sum p(x,y,z) ln[p(x,y,z) p(z) / (p(x,z) p(y,z))]
double conditional_mi(const JointDistribution& j, std::span<const std::string> x,
                      std::span<const std::string> y, std::span<const std::string> z);

inline double entropy(const JointDistribution& j, const std::string& v) {
  return entropy(j, std::span<const std::string>(&v, 1));
}
inline double mutual_information(const JointDistribution& j, const std::string& x,
                                 const std::string& y) {
  return mutual_information(j, std::span<const std::string>(&x, 1),
                            std::span<const std::string>(&y, 1));
}
inline double conditional_mi(const JointDistribution& j, const std::string& x,
                             const std::string& y, const std::string& z) {
  return conditional_mi(j, std::span<const std::string>(&x, 1),
                        std::span<const std::string>(&y, 1),
                        std::span<const std::string>(&z, 1));
}

struct DecompositionTerms {
  double cgtmi = 0.0;          // I(x; s_G | s_T)
  double alignment = 0.0;      // I(x; s_G)
  double autoregressive = 0.0; // I(x; s_T | s_G)
  double text_only = 0.0;      // I(x; s_T)
  double residual = 0.0;       // |lhs - rhs|
};

// Joint over variables named "x", "s_G", "s_T".
DecompositionTerms decomposition_terms(const JointDistribution& j);
inline double verify_decomposition(const JointDistribution& j) {
  return decomposition_terms(j).residual;
}

// Joint over (G, s_G, s_T, x) with s_G = f(G).
struct PipelineJoint {
  JointDistribution joint;
  std::vector<std::size_t> f;  // f[g] = s_G
};

// Builds p(G) p(s_T | G) p(x | G, s_T) with s_G = f(G).
PipelineJoint make_pipeline_joint(std::span<const double> p_g, std::span<const std::size_t> f,
                                  std::size_t s_g_size,
                                  const std::vector<std::vector<double>>& p_st_given_g,
                                  const std::vector<std::vector<std::vector<double>>>& p_x);

// I(G; s_G) - I(x; s_G | s_T); throws PreconditionError when s_G != f(G)
// somewhere with positive mass.
double verify_upper_bound(const PipelineJoint& p);

// Joint over "X", "Y", "Z" from p(x) p(y|x) p(z|y).
JointDistribution markov_chain(std::span<const double> p_x,
                               const std::vector<std::vector<double>>& p_y_given_x,
                               const std::vector<std::vector<double>>& p_z_given_y);
// I(X;Y) - I(X;Z)
double verify_dpi(const JointDistribution& chain);

// Dirichlet(1) draw of the given length.
std::vector<double> random_simplex(std::size_t n, Rng& rng);
JointDistribution random_joint(std::vector<std::string> names,
                               std::vector<std::size_t> alphabets, Rng& rng);
PipelineJoint random_pipeline_joint(std::size_t max_g, Rng& rng);
JointDistribution random_markov_chain(std::size_t max_alphabet, Rng& rng);

// Plug-in MI of an equal-width binned joint after projecting each side onto
// its top principal direction. a: n x da, b: n x db, row-major. Biased; for
// relative comparisons only.
double binned_mi_estimate(std::span<const double> a, std::size_t da, std::span<const double> b,
                          std::size_t db, std::size_t bins);
// Plug-in entropy of the binned 1-D projection of a.
double binned_entropy(std::span<const double> a, std::size_t da, std::size_t bins);

}  // namespace rglm

#include "rglm/info.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

#include "rglm/error.hpp"

namespace rglm {

namespace {

constexpr double kNormTol = 1e-12;

struct Table {
  std::vector<std::size_t> dims;
  std::vector<double> p;

  std::size_t index(std::span<const std::size_t> v) const {
    std::size_t i = 0;
    for (std::size_t k = 0; k < dims.size(); ++k) {
      i = i * dims[k] + v[k];
    }
    return i;
  }
};

std::vector<std::size_t> resolve(const JointDistribution& j, std::span<const std::string> vars) {
  std::vector<std::size_t> out;
  for (const auto& v : vars) {
    out.push_back(j.index_of(v));
  }
  return out;
}

Table marginalize(const JointDistribution& j, const std::vector<std::size_t>& idx) {
  Table t;
  std::size_t cells = 1;
  for (std::size_t i : idx) {
    t.dims.push_back(j.alphabets()[i]);
    cells *= j.alphabets()[i];
  }
  t.p.assign(cells, 0.0);
  std::vector<std::size_t> sub(idx.size());
  j.for_each([&](std::span<const std::size_t> v, double p) {
    for (std::size_t k = 0; k < idx.size(); ++k) {
      sub[k] = v[idx[k]];
    }
    t.p[t.index(sub)] += p;
  });
  return t;
}

// Decodes cell index c of a table into per-variable values.
void decode(const std::vector<std::size_t>& dims, std::size_t c, std::vector<std::size_t>& out) {
  out.resize(dims.size());
  for (std::size_t k = dims.size(); k-- > 0;) {
    out[k] = c % dims[k];
    c /= dims[k];
  }
}

}  // namespace

JointDistribution::JointDistribution(std::vector<std::string> names,
                                     std::vector<std::size_t> alphabets, std::vector<double> pmf)
    : names_(std::move(names)), alphabets_(std::move(alphabets)), pmf_(std::move(pmf)) {
  if (names_.size() != alphabets_.size()) {
    throw ParameterError("joint: " + std::to_string(names_.size()) + " names for " +
                         std::to_string(alphabets_.size()) + " alphabets");
  }
  std::size_t cells = 1;
  for (std::size_t a : alphabets_) {
    if (a == 0) {
      throw ParameterError("joint: empty alphabet");
    }
    cells *= a;
  }
  if (pmf_.size() != cells) {
    throw ParameterError("joint: table has " + std::to_string(pmf_.size()) + " entries, expected " +
                         std::to_string(cells));
  }
  double total = 0.0;
  for (double p : pmf_) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw ParameterError("joint: negative or non-finite probability");
    }
    total += p;
  }
  if (std::abs(total - 1.0) > kNormTol) {
    throw ParameterError("joint: probabilities sum to " + std::to_string(total));
  }
  for (std::size_t i = 0; i < names_.size(); ++i) {
    for (std::size_t k = 0; k < i; ++k) {
      if (names_[i] == names_[k]) {
        throw ParameterError("joint: duplicate variable " + names_[i]);
      }
    }
  }
}

std::size_t JointDistribution::index_of(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) {
    throw UsageError("joint: no variable named \"" + name + "\"");
  }
  return static_cast<std::size_t>(it - names_.begin());
}

double JointDistribution::p(std::span<const std::size_t> values) const {
  if (values.size() != alphabets_.size()) {
    throw DimensionError("joint: assignment of wrong length");
  }
  std::size_t i = 0;
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (values[k] >= alphabets_[k]) {
      throw ParameterError("joint: value out of range for " + names_[k]);
    }
    i = i * alphabets_[k] + values[k];
  }
  return pmf_[i];
}

std::vector<double> JointDistribution::marginal(std::span<const std::string> vars) const {
  return marginalize(*this, resolve(*this, vars)).p;
}

std::size_t JointDistribution::cells(std::span<const std::string> vars) const {
  std::size_t c = 1;
  for (std::size_t i : resolve(*this, vars)) {
    c *= alphabets_[i];
  }
  return c;
}

void JointDistribution::for_each(
    const std::function<void(std::span<const std::size_t>, double)>& fn) const {
  std::vector<std::size_t> v;
  for (std::size_t c = 0; c < pmf_.size(); ++c) {
    if (pmf_[c] > 0.0) {
      decode(alphabets_, c, v);
      fn(v, pmf_[c]);
    }
  }
}

double entropy(const JointDistribution& j, std::span<const std::string> vars) {
  double h = 0.0;
  for (double p : j.marginal(vars)) {
    if (p > 0.0) {
      h -= p * std::log(p);
    }
  }
  return h;
}

double mutual_information(const JointDistribution& j, std::span<const std::string> x,
                          std::span<const std::string> y) {
  const auto xi = resolve(j, x);
  const auto yi = resolve(j, y);
  std::vector<std::size_t> all = xi;
  all.insert(all.end(), yi.begin(), yi.end());
  const Table pxy = marginalize(j, all);
  const Table px = marginalize(j, xi);
  const Table py = marginalize(j, yi);
  double mi = 0.0;
  std::vector<std::size_t> v;
  for (std::size_t c = 0; c < pxy.p.size(); ++c) {
    const double p = pxy.p[c];
    if (p <= 0.0) {
      continue;
    }
    decode(pxy.dims, c, v);
    const std::span<const std::size_t> vs(v);
    const double a = px.p[px.index(vs.subspan(0, xi.size()))];
    const double b = py.p[py.index(vs.subspan(xi.size()))];
    mi += p * std::log(p / (a * b));
  }
  return mi;
}

double conditional_mi(const JointDistribution& j, std::span<const std::string> x,
                      std::span<const std::string> y, std::span<const std::string> z) {
  const auto xi = resolve(j, x);
  const auto yi = resolve(j, y);
  const auto zi = resolve(j, z);
  auto cat = [](std::initializer_list<const std::vector<std::size_t>*> parts) {
    std::vector<std::size_t> out;
    for (auto* p : parts) {
      out.insert(out.end(), p->begin(), p->end());
    }
    return out;
  };
  const Table pxyz = marginalize(j, cat({&xi, &yi, &zi}));
  const Table pxz = marginalize(j, cat({&xi, &zi}));
  const Table pyz = marginalize(j, cat({&yi, &zi}));
  const Table pz = marginalize(j, zi);
  double cmi = 0.0;
  std::vector<std::size_t> v, sub;
  for (std::size_t c = 0; c < pxyz.p.size(); ++c) {
    const double p = pxyz.p[c];
    if (p <= 0.0) {
      continue;
    }
    decode(pxyz.dims, c, v);
    const auto xs = std::span<const std::size_t>(v).subspan(0, xi.size());
    const auto ys = std::span<const std::size_t>(v).subspan(xi.size(), yi.size());
    const auto zs = std::span<const std::size_t>(v).subspan(xi.size() + yi.size());
    sub.assign(xs.begin(), xs.end());
    sub.insert(sub.end(), zs.begin(), zs.end());
    const double a = pxz.p[pxz.index(sub)];
    sub.assign(ys.begin(), ys.end());
    sub.insert(sub.end(), zs.begin(), zs.end());
    const double b = pyz.p[pyz.index(sub)];
    const double d = pz.p[pz.index(zs)];
    cmi += p * std::log(p * d / (a * b));
  }
  return cmi;
}

DecompositionTerms decomposition_terms(const JointDistribution& j) {
  const std::string x = "x", sg = "s_G", st = "s_T";
  DecompositionTerms t;
  t.cgtmi = conditional_mi(j, x, sg, st);
  t.alignment = mutual_information(j, x, sg);
  t.autoregressive = conditional_mi(j, x, st, sg);
  t.text_only = mutual_information(j, x, st);
  t.residual = std::abs(t.cgtmi - (t.alignment + t.autoregressive - t.text_only));
  return t;
}

PipelineJoint make_pipeline_joint(std::span<const double> p_g, std::span<const std::size_t> f,
                                  std::size_t s_g_size,
                                  const std::vector<std::vector<double>>& p_st_given_g,
                                  const std::vector<std::vector<std::vector<double>>>& p_x) {
  const std::size_t ng = p_g.size();
  if (f.size() != ng || p_st_given_g.size() != ng || p_x.size() != ng || ng == 0) {
    throw DimensionError("pipeline joint: conditionals do not cover every graph");
  }
  const std::size_t nt = p_st_given_g[0].size();
  const std::size_t nx = p_x[0].empty() ? 0 : p_x[0][0].size();
  if (nt == 0 || nx == 0) {
    throw DimensionError("pipeline joint: empty alphabet");
  }
  std::vector<double> pmf(ng * s_g_size * nt * nx, 0.0);
  for (std::size_t g = 0; g < ng; ++g) {
    if (f[g] >= s_g_size) {
      throw ParameterError("pipeline joint: f maps outside the s_G alphabet");
    }
    if (p_st_given_g[g].size() != nt || p_x[g].size() != nt) {
      throw DimensionError("pipeline joint: ragged conditional tables");
    }
    for (std::size_t t = 0; t < nt; ++t) {
      if (p_x[g][t].size() != nx) {
        throw DimensionError("pipeline joint: ragged conditional tables");
      }
      for (std::size_t x = 0; x < nx; ++x) {
        pmf[((g * s_g_size + f[g]) * nt + t) * nx + x] = p_g[g] * p_st_given_g[g][t] * p_x[g][t][x];
      }
    }
  }
  // Renormalize away rounding so the joint passes its sum check.
  const double total = std::accumulate(pmf.begin(), pmf.end(), 0.0);
  for (double& p : pmf) {
    p /= total;
  }
  return {JointDistribution({"G", "s_G", "s_T", "x"}, {ng, s_g_size, nt, nx}, std::move(pmf)),
          {f.begin(), f.end()}};
}

double verify_upper_bound(const PipelineJoint& pj) {
  const auto& j = pj.joint;
  const std::size_t gi = j.index_of("G");
  const std::size_t si = j.index_of("s_G");
  if (pj.f.size() != j.alphabets()[gi]) {
    throw PreconditionError("pipeline joint: f does not cover the graph alphabet");
  }
  j.for_each([&](std::span<const std::size_t> v, double) {
    if (v[si] != pj.f[v[gi]]) {
      throw PreconditionError("pipeline joint: s_G differs from f(G) with positive mass at G = " +
                              std::to_string(v[gi]));
    }
  });
  return mutual_information(j, "G", "s_G") - conditional_mi(j, "x", "s_G", "s_T");
}

JointDistribution markov_chain(std::span<const double> p_x,
                               const std::vector<std::vector<double>>& p_y_given_x,
                               const std::vector<std::vector<double>>& p_z_given_y) {
  const std::size_t nx = p_x.size();
  if (p_y_given_x.size() != nx || p_y_given_x.empty()) {
    throw DimensionError("markov chain: p(y|x) rows do not match p(x)");
  }
  const std::size_t ny = p_y_given_x[0].size();
  if (p_z_given_y.size() != ny || p_z_given_y.empty()) {
    throw DimensionError("markov chain: p(z|y) rows do not match the Y alphabet");
  }
  const std::size_t nz = p_z_given_y[0].size();
  std::vector<double> pmf(nx * ny * nz);
  for (std::size_t x = 0; x < nx; ++x) {
    for (std::size_t y = 0; y < ny; ++y) {
      for (std::size_t z = 0; z < nz; ++z) {
        pmf[(x * ny + y) * nz + z] = p_x[x] * p_y_given_x.at(x).at(y) * p_z_given_y.at(y).at(z);
      }
    }
  }
  const double total = std::accumulate(pmf.begin(), pmf.end(), 0.0);
  for (double& p : pmf) {
    p /= total;
  }
  return JointDistribution({"X", "Y", "Z"}, {nx, ny, nz}, std::move(pmf));
}

double verify_dpi(const JointDistribution& chain) {
  return mutual_information(chain, "X", "Y") - mutual_information(chain, "X", "Z");
}

std::vector<double> random_simplex(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  double total = 0.0;
  for (double& x : v) {
    x = rng.exponential();
    total += x;
  }
  for (double& x : v) {
    x /= total;
  }
  return v;
}

JointDistribution random_joint(std::vector<std::string> names, std::vector<std::size_t> alphabets,
                               Rng& rng) {
  std::size_t cells = 1;
  for (std::size_t a : alphabets) {
    cells *= a;
  }
  auto pmf = random_simplex(cells, rng);
  const double total = std::accumulate(pmf.begin(), pmf.end(), 0.0);
  for (double& p : pmf) {
    p /= total;
  }
  return JointDistribution(std::move(names), std::move(alphabets), std::move(pmf));
}

PipelineJoint random_pipeline_joint(std::size_t max_g, Rng& rng) {
  if (max_g < 2) {
    throw ParameterError("random pipeline joint: max_g must be at least 2");
  }
  const std::size_t ng = 2 + rng.uniform_int(max_g - 1);
  const std::size_t ns = 1 + rng.uniform_int(ng);
  const std::size_t nt = 2 + rng.uniform_int(3);
  const std::size_t nx = 2 + rng.uniform_int(3);
  std::vector<std::size_t> f(ng);
  for (auto& v : f) {
    v = rng.uniform_int(ns);
  }
  const auto pg = random_simplex(ng, rng);
  std::vector<std::vector<double>> pt(ng);
  std::vector<std::vector<std::vector<double>>> px(ng, std::vector<std::vector<double>>(nt));
  for (std::size_t g = 0; g < ng; ++g) {
    pt[g] = random_simplex(nt, rng);
    for (std::size_t t = 0; t < nt; ++t) {
      px[g][t] = random_simplex(nx, rng);
    }
  }
  return make_pipeline_joint(pg, f, ns, pt, px);
}

JointDistribution random_markov_chain(std::size_t max_alphabet, Rng& rng) {
  if (max_alphabet < 2) {
    throw ParameterError("random markov chain: max_alphabet must be at least 2");
  }
  auto size = [&] { return 2 + rng.uniform_int(max_alphabet - 1); };
  const std::size_t nx = size(), ny = size(), nz = size();
  const auto px = random_simplex(nx, rng);
  std::vector<std::vector<double>> pyx(nx), pzy(ny);
  for (auto& r : pyx) {
    r = random_simplex(ny, rng);
  }
  for (auto& r : pzy) {
    r = random_simplex(nz, rng);
  }
  return markov_chain(px, pyx, pzy);
}

namespace {

std::vector<double> project_top(std::span<const double> a, std::size_t d, const char* side) {
  if (d == 0 || a.size() % d != 0) {
    throw DimensionError(std::string("binned MI: ") + side + " has a ragged sample matrix");
  }
  const std::size_t n = a.size() / d;
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(
      a.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  const Eigen::RowVectorXd mu = m.colwise().mean();
  const Eigen::MatrixXd c = m.rowwise() - mu;
  Eigen::VectorXd dir;
  if (d == 1) {
    dir = Eigen::VectorXd::Ones(1);
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(c.transpose() * c);
    dir = solver.eigenvectors().col(static_cast<Eigen::Index>(d) - 1);
  }
  const Eigen::VectorXd proj = c * dir;
  std::vector<double> out(proj.data(), proj.data() + proj.size());
  const auto [lo, hi] = std::minmax_element(out.begin(), out.end());
  if (!(*hi - *lo > 1e-12 * std::max(1.0, std::abs(*hi)))) {
    throw EstimationError(std::string("binned MI: ") + side + " has zero variance");
  }
  return out;
}

std::vector<std::size_t> bin(const std::vector<double>& x, std::size_t bins) {
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  const double a = *lo;
  const double w = (*hi - *lo) / static_cast<double>(bins);
  std::vector<std::size_t> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::min(bins - 1, static_cast<std::size_t>((x[i] - a) / w));
  }
  return out;
}

void check_estimator_inputs(std::size_t n, std::size_t bins) {
  if (n < 1000) {
    throw EstimationError("binned MI: need at least 1000 samples, got " + std::to_string(n));
  }
  if (bins < 2) {
    throw EstimationError("binned MI: need at least 2 bins");
  }
}

}  // namespace

double binned_mi_estimate(std::span<const double> a, std::size_t da, std::span<const double> b,
                          std::size_t db, std::size_t bins) {
  const auto pa = project_top(a, da, "A");
  const auto pb = project_top(b, db, "B");
  if (pa.size() != pb.size()) {
    throw DimensionError("binned MI: " + std::to_string(pa.size()) + " A samples vs " +
                         std::to_string(pb.size()) + " B samples");
  }
  check_estimator_inputs(pa.size(), bins);
  const auto ba = bin(pa, bins);
  const auto bb = bin(pb, bins);
  std::vector<double> joint(bins * bins, 0.0), ma(bins, 0.0), mb(bins, 0.0);
  const double w = 1.0 / static_cast<double>(pa.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    joint[ba[i] * bins + bb[i]] += w;
    ma[ba[i]] += w;
    mb[bb[i]] += w;
  }
  double mi = 0.0;
  for (std::size_t i = 0; i < bins; ++i) {
    for (std::size_t k = 0; k < bins; ++k) {
      const double p = joint[i * bins + k];
      if (p > 0.0) {
        mi += p * std::log(p / (ma[i] * mb[k]));
      }
    }
  }
  return mi;
}

double binned_entropy(std::span<const double> a, std::size_t da, std::size_t bins) {
  const auto pa = project_top(a, da, "A");
  check_estimator_inputs(pa.size(), bins);
  std::vector<double> m(bins, 0.0);
  for (std::size_t b : bin(pa, bins)) {
    m[b] += 1.0 / static_cast<double>(pa.size());
  }
  double h = 0.0;
  for (double p : m) {
    if (p > 0.0) {
      h -= p * std::log(p);
    }
  }
  return h;
}

}  // namespace rglm

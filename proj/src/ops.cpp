#include "rglm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "rglm/error.hpp"

namespace rglm {

using detail::Node;

namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + a.str() + " and " +
                       b.str());
}

// out[i x n] += a[i x k] * b[k x n]
void gemm_acc(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
              std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) {
        continue;
      }
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        orow[j] += av * brow[j];
      }
    }
  }
}

// out[m x n] += a[m x k] * b[n x k]^T
void gemm_nt_acc(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        s += arow[p] * brow[p];
      }
      out[i * n + j] += s;
    }
  }
}

// out[k x n] += a[m x k]^T * b[m x n]
void gemm_tn_acc(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) {
        continue;
      }
      double* orow = out + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        orow[j] += av * brow[j];
      }
    }
  }
}

struct Broadcast {
  Shape out;
  std::size_t a_rs, a_cs, b_rs, b_cs;  // row / col strides, 0 when broadcast

  std::size_t ia(std::size_t r, std::size_t c) const { return r * a_rs + c * a_cs; }
  std::size_t ib(std::size_t r, std::size_t c) const { return r * b_rs + c * b_cs; }
};

Broadcast broadcast(const char* op, const Shape& a, const Shape& b) {
  auto dim = [&](std::size_t x, std::size_t y) {
    if (x == y || y == 1) {
      return x;
    }
    if (x == 1) {
      return y;
    }
    shape_error(op, a, b);
  };
  Broadcast bc;
  bc.out = Shape{dim(a.rows, b.rows), dim(a.cols, b.cols)};
  bc.a_rs = a.rows == 1 ? 0 : a.cols;
  bc.a_cs = a.cols == 1 ? 0 : 1;
  bc.b_rs = b.rows == 1 ? 0 : b.cols;
  bc.b_cs = b.cols == 1 ? 0 : 1;
  return bc;
}

// fwd(x, y) -> value; da(x, y, out) and db(x, y, out) -> local partials.
template <typename Fwd, typename Da, typename Db>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, Da da, Db db) {
  const Broadcast bc = broadcast(op, a.shape(), b.shape());
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(bc.out.size());
  for (std::size_t r = 0; r < bc.out.rows; ++r) {
    for (std::size_t c = 0; c < bc.out.cols; ++c) {
      out[r * bc.out.cols + c] = fwd(av[bc.ia(r, c)], bv[bc.ib(r, c)]);
    }
  }
  return Tensor::make(bc.out, std::move(out), {a, b}, [bc, da, db](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const auto& g = self.grad;
    for (std::size_t r = 0; r < bc.out.rows; ++r) {
      for (std::size_t c = 0; c < bc.out.cols; ++c) {
        const std::size_t o = r * bc.out.cols + c;
        const double x = pa.value[bc.ia(r, c)];
        const double y = pb.value[bc.ib(r, c)];
        if (pa.requires_grad) {
          pa.ensure_grad()[bc.ia(r, c)] += g[o] * da(x, y, self.value[o]);
        }
        if (pb.requires_grad) {
          pb.ensure_grad()[bc.ib(r, c)] += g[o] * db(x, y, self.value[o]);
        }
      }
    }
  });
}

// fwd(x) -> value; d(x, out) -> derivative.
template <typename Fwd, typename D>
Tensor unary(const Tensor& a, Fwd fwd, D d) {
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    out[i] = fwd(av[i]);
  }
  return Tensor::make(a.shape(), std::move(out), {a}, [d](Node& self) {
    Node& p = *self.parents[0];
    auto& pg = p.ensure_grad();
    for (std::size_t i = 0; i < self.value.size(); ++i) {
      pg[i] += self.grad[i] * d(p.value[i], self.value[i]);
    }
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  if (sa.cols != sb.rows) {
    shape_error("matmul", sa, sb);
  }
  const std::size_t m = sa.rows, k = sa.cols, n = sb.cols;
  std::vector<double> out(m * n, 0.0);
  gemm_acc(a.values().data(), b.values().data(), out.data(), m, k, n);
  return Tensor::make(Shape{m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      gemm_nt_acc(self.grad.data(), pb.value.data(), pa.ensure_grad().data(), m, n, k);
    }
    if (pb.requires_grad) {
      gemm_tn_acc(pa.value.data(), self.grad.data(), pb.ensure_grad().data(), m, k, n);
    }
  });
}

Tensor transpose(const Tensor& a) {
  const Shape s = a.shape();
  const auto av = a.values();
  std::vector<double> out(s.size());
  for (std::size_t r = 0; r < s.rows; ++r) {
    for (std::size_t c = 0; c < s.cols; ++c) {
      out[c * s.rows + r] = av[r * s.cols + c];
    }
  }
  return Tensor::make(Shape{s.cols, s.rows}, std::move(out), {a}, [s](Node& self) {
    auto& pg = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < s.rows; ++r) {
      for (std::size_t c = 0; c < s.cols; ++c) {
        pg[r * s.cols + c] += self.grad[c * s.rows + r];
      }
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double out) { return -out / y; });
}

Tensor scale(const Tensor& a, double k) {
  return unary(
      a, [k](double x) { return k * x; }, [k](double, double) { return k; });
}

Tensor add_scalar(const Tensor& a, double k) {
  return unary(
      a, [k](double x) { return x + k; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) {
    throw UsageError("concat_rows: no inputs");
  }
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) {
      shape_error("concat_rows", parts[0].shape(), p.shape());
    }
    rows += p.rows();
  }
  std::vector<double> out;
  out.reserve(rows * cols);
  for (const auto& p : parts) {
    const auto v = p.values();
    out.insert(out.end(), v.begin(), v.end());
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return Tensor::make(Shape{rows, cols}, std::move(out), std::move(parents), [](Node& self) {
    std::size_t off = 0;
    for (auto& p : self.parents) {
      const std::size_t n = p->value.size();
      if (p->requires_grad) {
        auto& pg = p->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          pg[i] += self.grad[off + i];
        }
      }
      off += n;
    }
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) {
    throw UsageError("concat_cols: no inputs");
  }
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      shape_error("concat_cols", parts[0].shape(), p.shape());
    }
    cols += p.cols();
  }
  std::vector<double> out(rows * cols);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto v = p.values();
    const std::size_t pc = p.cols();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(v.begin() + r * pc, pc, out.begin() + r * cols + off);
    }
    off += pc;
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return Tensor::make(Shape{rows, cols}, std::move(out), std::move(parents),
                      [rows, cols](Node& self) {
                        std::size_t off = 0;
                        for (auto& p : self.parents) {
                          const std::size_t pc = p->shape.cols;
                          if (p->requires_grad) {
                            auto& pg = p->ensure_grad();
                            for (std::size_t r = 0; r < rows; ++r) {
                              for (std::size_t c = 0; c < pc; ++c) {
                                pg[r * pc + c] += self.grad[r * cols + off + c];
                              }
                            }
                          }
                          off += pc;
                        }
                      });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  const Shape s = a.shape();
  if (begin > end || end > s.rows) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") out of bounds for " + s.str());
  }
  const auto av = a.values();
  std::vector<double> out(av.begin() + begin * s.cols, av.begin() + end * s.cols);
  return Tensor::make(Shape{end - begin, s.cols}, std::move(out), {a},
                      [begin, s](Node& self) {
                        auto& pg = self.parents[0]->ensure_grad();
                        const std::size_t off = begin * s.cols;
                        for (std::size_t i = 0; i < self.grad.size(); ++i) {
                          pg[off + i] += self.grad[i];
                        }
                      });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  const Shape s = a.shape();
  if (begin > end || end > s.cols) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") out of bounds for " + s.str());
  }
  const std::size_t w = end - begin;
  const auto av = a.values();
  std::vector<double> out(s.rows * w);
  for (std::size_t r = 0; r < s.rows; ++r) {
    std::copy_n(av.begin() + r * s.cols + begin, w, out.begin() + r * w);
  }
  return Tensor::make(Shape{s.rows, w}, std::move(out), {a}, [begin, w, s](Node& self) {
    auto& pg = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < s.rows; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        pg[r * s.cols + begin + c] += self.grad[r * w + c];
      }
    }
  });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  const Shape s = a.shape();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> out(idx.size() * s.cols);
  const auto av = a.values();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= s.rows) {
      throw DimensionError("gather_rows: row " + std::to_string(idx[i]) +
                           " out of range for " + s.str());
    }
    std::copy_n(av.begin() + idx[i] * s.cols, s.cols, out.begin() + i * s.cols);
  }
  const Shape shape{idx.size(), s.cols};
  return Tensor::make(shape, std::move(out), {a},
                      [idx = std::move(idx), s](Node& self) {
                        auto& pg = self.parents[0]->ensure_grad();
                        for (std::size_t i = 0; i < idx.size(); ++i) {
                          for (std::size_t c = 0; c < s.cols; ++c) {
                            pg[idx[i] * s.cols + c] += self.grad[i * s.cols + c];
                          }
                        }
                      });
}

Tensor index_mean_pool(const Tensor& a, const std::vector<std::vector<std::size_t>>& groups) {
  const Shape s = a.shape();
  const auto av = a.values();
  std::vector<double> out(groups.size() * s.cols, 0.0);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].empty()) {
      throw UsageError("index_mean_pool: group " + std::to_string(g) + " is empty");
    }
    const double w = 1.0 / static_cast<double>(groups[g].size());
    for (std::size_t r : groups[g]) {
      if (r >= s.rows) {
        throw DimensionError("index_mean_pool: row " + std::to_string(r) +
                             " out of range for " + s.str());
      }
      for (std::size_t c = 0; c < s.cols; ++c) {
        out[g * s.cols + c] += w * av[r * s.cols + c];
      }
    }
  }
  return Tensor::make(Shape{groups.size(), s.cols}, std::move(out), {a},
                      [groups, s](Node& self) {
                        auto& pg = self.parents[0]->ensure_grad();
                        for (std::size_t g = 0; g < groups.size(); ++g) {
                          const double w = 1.0 / static_cast<double>(groups[g].size());
                          for (std::size_t r : groups[g]) {
                            for (std::size_t c = 0; c < s.cols; ++c) {
                              pg[r * s.cols + c] += w * self.grad[g * s.cols + c];
                            }
                          }
                        }
                      });
}

Tensor pick(const Tensor& a, std::span<const std::size_t> rows,
            std::span<const std::size_t> cols) {
  if (rows.size() != cols.size()) {
    throw DimensionError("pick: " + std::to_string(rows.size()) + " rows vs " +
                         std::to_string(cols.size()) + " cols");
  }
  const Shape s = a.shape();
  std::vector<std::size_t> flat(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= s.rows || cols[k] >= s.cols) {
      throw DimensionError("pick: index out of range for " + s.str());
    }
    flat[k] = rows[k] * s.cols + cols[k];
  }
  std::vector<double> out(flat.size());
  const auto av = a.values();
  for (std::size_t k = 0; k < flat.size(); ++k) {
    out[k] = av[flat[k]];
  }
  const Shape shape{flat.size(), 1};
  return Tensor::make(shape, std::move(out), {a},
                      [flat = std::move(flat)](Node& self) {
                        auto& pg = self.parents[0]->ensure_grad();
                        for (std::size_t k = 0; k < flat.size(); ++k) {
                          pg[flat[k]] += self.grad[k];
                        }
                      });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  return unary(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [inv_sqrt_2pi](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
        return cdf + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
      });
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a,
      [](double x) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor log_sigmoid(const Tensor& a) {
  return unary(
      a, [](double x) { return std::min(x, 0.0) - std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) {
        // d/dx log sigma(x) = sigma(-x)
        return x >= 0.0 ? std::exp(-x) / (1.0 + std::exp(-x)) : 1.0 / (1.0 + std::exp(x));
      });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary(
      a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& a) {
  return unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

namespace {

Tensor softmax_rows(const Tensor& a, std::span<const std::uint8_t> mask) {
  const Shape s = a.shape();
  if (!mask.empty() && mask.size() != s.size()) {
    throw DimensionError("softmax: mask of " + std::to_string(mask.size()) +
                         " entries for " + s.str());
  }
  const auto av = a.values();
  std::vector<double> out(s.size(), 0.0);
  for (std::size_t r = 0; r < s.rows; ++r) {
    const std::size_t o = r * s.cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < s.cols; ++c) {
      if (mask.empty() || mask[o + c]) {
        mx = std::max(mx, av[o + c]);
      }
    }
    if (mx == -std::numeric_limits<double>::infinity()) {
      continue;  // fully masked row stays zero
    }
    double z = 0.0;
    for (std::size_t c = 0; c < s.cols; ++c) {
      if (mask.empty() || mask[o + c]) {
        out[o + c] = std::exp(av[o + c] - mx);
        z += out[o + c];
      }
    }
    for (std::size_t c = 0; c < s.cols; ++c) {
      out[o + c] /= z;
    }
  }
  return Tensor::make(s, std::move(out), {a}, [s](Node& self) {
    auto& pg = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < s.rows; ++r) {
      const std::size_t o = r * s.cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < s.cols; ++c) {
        dot += self.grad[o + c] * self.value[o + c];
      }
      for (std::size_t c = 0; c < s.cols; ++c) {
        pg[o + c] += self.value[o + c] * (self.grad[o + c] - dot);
      }
    }
  });
}

}  // namespace

Tensor softmax(const Tensor& a, int axis, std::span<const std::uint8_t> mask) {
  if (axis == 1) {
    return softmax_rows(a, mask);
  }
  if (axis != 0) {
    throw UsageError("softmax: axis must be 0 or 1");
  }
  std::vector<std::uint8_t> mt;
  if (!mask.empty()) {
    const Shape s = a.shape();
    if (mask.size() != s.size()) {
      throw DimensionError("softmax: mask of " + std::to_string(mask.size()) +
                           " entries for " + s.str());
    }
    mt.resize(mask.size());
    for (std::size_t r = 0; r < s.rows; ++r) {
      for (std::size_t c = 0; c < s.cols; ++c) {
        mt[c * s.rows + r] = mask[r * s.cols + c];
      }
    }
  }
  return transpose(softmax_rows(transpose(a), mt));
}

Tensor log_softmax(const Tensor& a) {
  const Shape s = a.shape();
  const auto av = a.values();
  std::vector<double> out(s.size());
  for (std::size_t r = 0; r < s.rows; ++r) {
    const std::size_t o = r * s.cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < s.cols; ++c) {
      mx = std::max(mx, av[o + c]);
    }
    double z = 0.0;
    for (std::size_t c = 0; c < s.cols; ++c) {
      z += std::exp(av[o + c] - mx);
    }
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < s.cols; ++c) {
      out[o + c] = av[o + c] - lse;
    }
  }
  return Tensor::make(s, std::move(out), {a}, [s](Node& self) {
    auto& pg = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < s.rows; ++r) {
      const std::size_t o = r * s.cols;
      double gs = 0.0;
      for (std::size_t c = 0; c < s.cols; ++c) {
        gs += self.grad[o + c];
      }
      for (std::size_t c = 0; c < s.cols; ++c) {
        pg[o + c] += self.grad[o + c] - std::exp(self.value[o + c]) * gs;
      }
    }
  });
}

Tensor layer_norm(const Tensor& a, double eps) {
  const Shape s = a.shape();
  const auto av = a.values();
  std::vector<double> out(s.size());
  std::vector<double> inv_std(s.rows);
  const double n = static_cast<double>(s.cols);
  for (std::size_t r = 0; r < s.rows; ++r) {
    const std::size_t o = r * s.cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < s.cols; ++c) {
      mu += av[o + c];
    }
    mu /= n;
    double var = 0.0;
    for (std::size_t c = 0; c < s.cols; ++c) {
      var += (av[o + c] - mu) * (av[o + c] - mu);
    }
    var /= n;
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < s.cols; ++c) {
      out[o + c] = (av[o + c] - mu) * inv_std[r];
    }
  }
  return Tensor::make(s, std::move(out), {a}, [s, n, inv_std = std::move(inv_std)](Node& self) {
    auto& pg = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < s.rows; ++r) {
      const std::size_t o = r * s.cols;
      double gm = 0.0;
      double gx = 0.0;
      for (std::size_t c = 0; c < s.cols; ++c) {
        gm += self.grad[o + c];
        gx += self.grad[o + c] * self.value[o + c];
      }
      gm /= n;
      gx /= n;
      for (std::size_t c = 0; c < s.cols; ++c) {
        pg[o + c] += inv_std[r] * (self.grad[o + c] - gm - self.value[o + c] * gx);
      }
    }
  });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) {
    total += v;
  }
  return Tensor::make(Shape{1, 1}, {total}, {a}, [](Node& self) {
    auto& pg = self.parents[0]->ensure_grad();
    for (double& g : pg) {
      g += self.grad[0];
    }
  });
}

Tensor sum(const Tensor& a, int axis) {
  const Shape s = a.shape();
  const auto av = a.values();
  if (axis == 0) {
    std::vector<double> out(s.cols, 0.0);
    for (std::size_t r = 0; r < s.rows; ++r) {
      for (std::size_t c = 0; c < s.cols; ++c) {
        out[c] += av[r * s.cols + c];
      }
    }
    return Tensor::make(Shape{1, s.cols}, std::move(out), {a}, [s](Node& self) {
      auto& pg = self.parents[0]->ensure_grad();
      for (std::size_t r = 0; r < s.rows; ++r) {
        for (std::size_t c = 0; c < s.cols; ++c) {
          pg[r * s.cols + c] += self.grad[c];
        }
      }
    });
  }
  if (axis != 1) {
    throw UsageError("sum: axis must be 0 or 1");
  }
  std::vector<double> out(s.rows, 0.0);
  for (std::size_t r = 0; r < s.rows; ++r) {
    for (std::size_t c = 0; c < s.cols; ++c) {
      out[r] += av[r * s.cols + c];
    }
  }
  return Tensor::make(Shape{s.rows, 1}, std::move(out), {a}, [s](Node& self) {
    auto& pg = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < s.rows; ++r) {
      for (std::size_t c = 0; c < s.cols; ++c) {
        pg[r * s.cols + c] += self.grad[r];
      }
    }
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) {
    throw UsageError("mean: empty tensor");
  }
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor mean(const Tensor& a, int axis) {
  const std::size_t n = axis == 0 ? a.rows() : a.cols();
  if (n == 0) {
    throw UsageError("mean: empty axis");
  }
  return scale(sum(a, axis), 1.0 / static_cast<double>(n));
}

Tensor l2_norm(const Tensor& a) {
  const Shape s = a.shape();
  const auto av = a.values();
  std::vector<double> out(s.rows, 0.0);
  for (std::size_t r = 0; r < s.rows; ++r) {
    double ss = 0.0;
    for (std::size_t c = 0; c < s.cols; ++c) {
      ss += av[r * s.cols + c] * av[r * s.cols + c];
    }
    out[r] = std::sqrt(ss);
  }
  return Tensor::make(Shape{s.rows, 1}, std::move(out), {a}, [s](Node& self) {
    Node& p = *self.parents[0];
    auto& pg = p.ensure_grad();
    for (std::size_t r = 0; r < s.rows; ++r) {
      if (self.value[r] == 0.0) {
        continue;
      }
      const double k = self.grad[r] / self.value[r];
      for (std::size_t c = 0; c < s.cols; ++c) {
        pg[r * s.cols + c] += k * p.value[r * s.cols + c];
      }
    }
  });
}

}  // namespace rglm

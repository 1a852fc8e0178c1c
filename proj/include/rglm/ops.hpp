#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "rglm/tensor.hpp"

// Differentiable primitives. Binary elementwise ops broadcast any dimension
// of size 1 against the other operand; shape mismatches raise DimensionError
// naming both shapes.
namespace rglm {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double k);
Tensor add_scalar(const Tensor& a, double k);
Tensor neg(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double k) { return scale(a, k); }
inline Tensor operator*(double k, const Tensor& a) { return scale(a, k); }

Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);
inline Tensor embedding(const Tensor& table, std::span<const std::size_t> ids) {
  return gather_rows(table, ids);
}
// Row g of the result is the mean of rows groups[g] of a.
Tensor index_mean_pool(const Tensor& a, const std::vector<std::vector<std::size_t>>& groups);
// Elements a[rows[k], cols[k]] as a column vector.
Tensor pick(const Tensor& a, std::span<const std::size_t> rows,
            std::span<const std::size_t> cols);

Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope);
Tensor gelu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log_sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);

// Softmax along axis (0 = down columns, 1 = along rows). mask, when given,
// has the shape of a; zero entries receive exactly zero probability.
Tensor softmax(const Tensor& a, int axis = 1, std::span<const std::uint8_t> mask = {});
Tensor log_softmax(const Tensor& a);
// Row-wise normalization to zero mean and unit (biased) variance.
Tensor layer_norm(const Tensor& a, double eps = 1e-5);

Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, int axis);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, int axis);
// Euclidean norm of each row, as a column vector.
Tensor l2_norm(const Tensor& a);

}  // namespace rglm

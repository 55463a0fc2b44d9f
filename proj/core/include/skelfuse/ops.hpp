#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "skelfuse/autograd.hpp"
#include "skelfuse/tensor.hpp"

// Differentiable operations on tape variables. Every op is instantiated for float (the working
// precision) and double (used by the finite-difference oracle). Outputs are checked for
// finiteness; a NaN/Inf raises a numeric-error naming the op. No implicit broadcasting: binary
// elementwise ops require identical shapes, and `tile` makes repetition explicit.

namespace skelfuse {

struct Pair {
  std::size_t h = 1;
  std::size_t w = 1;
};

enum class MapKind { kRelu, kAbs, kSqrt, kSquare, kAdd, kMul, kScale };
enum class ReduceKind { kSum, kMean };

template <typename T>
struct BasicBatchNormState {
  BasicTensor<T> running_mean;
  BasicTensor<T> running_var;

  explicit BasicBatchNormState(std::size_t channels = 1)
      : running_mean(BasicTensor<T>::zeros({channels})), running_var(BasicTensor<T>::ones({channels})) {}
};

using BatchNormState = BasicBatchNormState<float>;

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

// conv2d: input [N,C_in,H,W], kernel [C_out,C_in,kh,kw], zero padding, cross-correlation.
template <typename T>
BasicVar<T> conv2d(BasicVar<T> input, BasicVar<T> kernel, Pair stride, Pair padding);

template <typename T>
BasicVar<T> matmul(BasicVar<T> a, BasicVar<T> b);

template <typename T>
BasicVar<T> relu(BasicVar<T> x);
template <typename T>
BasicVar<T> abs(BasicVar<T> x);
/// Numeric-error on negative input; gradient requires strictly positive input.
template <typename T>
BasicVar<T> sqrt(BasicVar<T> x);
template <typename T>
BasicVar<T> square(BasicVar<T> x);
template <typename T>
BasicVar<T> add(BasicVar<T> a, BasicVar<T> b);
template <typename T>
BasicVar<T> sub(BasicVar<T> a, BasicVar<T> b);
template <typename T>
BasicVar<T> mul(BasicVar<T> a, BasicVar<T> b);
template <typename T>
BasicVar<T> scale(BasicVar<T> x, T factor);

/// Dispatcher over the pointwise kinds; `factor` is only read by kScale.
template <typename T>
BasicVar<T> elementwise_map(MapKind kind, BasicVar<T> a, const BasicVar<T>* b = nullptr, T factor = T{1});

/// Removes the reduced axes from the shape; reducing every axis yields a rank-0 tensor.
template <typename T>
BasicVar<T> reduce(ReduceKind kind, BasicVar<T> x, std::vector<std::size_t> axes);

template <typename T>
BasicVar<T> sum_all(BasicVar<T> x) {
  std::vector<std::size_t> axes(x.shape().size());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
  return reduce(ReduceKind::kSum, x, std::move(axes));
}

template <typename T>
BasicVar<T> mean_all(BasicVar<T> x) {
  std::vector<std::size_t> axes(x.shape().size());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
  return reduce(ReduceKind::kMean, x, std::move(axes));
}

/// Row-wise softmax of [N,C] with max subtraction.
template <typename T>
BasicVar<T> softmax(BasicVar<T> x);

/// Mean over rows of -log softmax(logits)[label]; `onehot` is a constant [N,C] one-hot matrix.
template <typename T>
BasicVar<T> cross_entropy(BasicVar<T> logits, const BasicTensor<T>& onehot);

/// Per-channel normalization of [N,C,...]. Training mode uses batch statistics and, when `state`
/// is given, folds them into its running averages; evaluation mode reads `state`.
template <typename T>
BasicVar<T> batch_norm(BasicVar<T> x, BasicVar<T> gamma, BasicVar<T> beta, BasicBatchNormState<T>* state,
                       bool training);

template <typename T>
BasicVar<T> reshape(BasicVar<T> x, Shape shape);

/// Output axis i takes input axis perm[i].
template <typename T>
BasicVar<T> permute(BasicVar<T> x, std::vector<std::size_t> perm);

template <typename T>
BasicVar<T> transpose(BasicVar<T> x) {
  return permute(x, {1, 0});
}

/// Repeats the whole tensor reps[i] times along axis i.
template <typename T>
BasicVar<T> tile(BasicVar<T> x, std::vector<std::size_t> reps);

/// Selects columns of [N,M] into [N,K].
template <typename T>
BasicVar<T> gather_columns(BasicVar<T> x, std::span<const std::size_t> columns);

/// Divides each row of [N,K] by its maximum; a row whose maximum is not positive becomes ones.
template <typename T>
BasicVar<T> rescale_rows_to_max(BasicVar<T> x);

/// image [N,C,H,W], weights [N,K,G] with K | H and G | W: the pixel block at row band k and
/// column group g of sample n is multiplied by weights[n,k,g].
template <typename T>
BasicVar<T> scale_blocks(BasicVar<T> image, BasicVar<T> weights);

/// out[n] = first[n], except out[rows[r]] = (first[rows[r]] + second[r]) / 2.
template <typename T>
BasicVar<T> merge_pairs(BasicVar<T> first, BasicVar<T> second, std::span<const std::size_t> rows);

/// out[n] = base[n], except out[rows[r]] = src[r]. Rows must be distinct.
template <typename T>
BasicVar<T> overwrite_rows(BasicVar<T> base, BasicVar<T> src, std::span<const std::size_t> rows);

/// Stacks equally shaped operands along a new trailing axis: [...] x G -> [..., G].
template <typename T>
BasicVar<T> stack_last(std::span<const BasicVar<T>> parts);

}  // namespace skelfuse

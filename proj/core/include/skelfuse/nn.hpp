#pragma once

#include <string>
#include <vector>

#include "skelfuse/autograd.hpp"
#include "skelfuse/checkpoint.hpp"
#include "skelfuse/ops.hpp"
#include "skelfuse/rng.hpp"

namespace skelfuse {

/// Uniform in [-b, b] with b = sqrt(6 / fan_in).
Tensor he_uniform(Rng& rng, Shape shape, std::size_t fan_in);

/// Leaf (trainable) or frozen binding of a parameter onto a tape.
template <typename T>
BasicVar<T> bind(BasicTape<T>& tape, BasicParameter<T>& p, bool trainable) {
  return trainable ? tape.leaf(p) : tape.frozen(p);
}

/// x [N,C] * w [C,K] + b [K] (bias tiled explicitly over rows).
template <typename T>
BasicVar<T> linear(BasicVar<T> x, BasicVar<T> w, BasicVar<T> b) {
  const std::size_t rows = x.shape().at(0);
  BasicVar<T> bias = tile(reshape(b, Shape{1, b.shape().at(0)}), {rows, 1});
  return add(matmul(x, w), bias);
}

/// Convolution followed by batch norm; the unit of the residual classifier.
struct ConvBn {
  Parameter kernel;
  Parameter gamma;
  Parameter beta;
  BatchNormState bn;
  Pair stride;
  Pair padding;

  static ConvBn create(Rng& rng, std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
                       const std::string& name);
  void collect(std::vector<Parameter*>& out);
  void save(NamedTensors& out, const std::string& prefix) const;
  void load(const NamedTensors& in, const std::string& prefix);
};

template <typename T>
struct ConvBnVars {
  BasicVar<T> kernel;
  BasicVar<T> gamma;
  BasicVar<T> beta;
};

inline ConvBnVars<float> bind(Tape& tape, ConvBn& unit, bool trainable) {
  return {bind(tape, unit.kernel, trainable), bind(tape, unit.gamma, trainable), bind(tape, unit.beta, trainable)};
}

template <typename T>
BasicVar<T> conv_bn_forward(BasicVar<T> x, const ConvBnVars<T>& v, Pair stride, Pair padding,
                            BasicBatchNormState<T>* state, bool training) {
  return batch_norm(conv2d(x, v.kernel, stride, padding), v.gamma, v.beta, state, training);
}

/// Copies a tensor out of a bundle, checking its shape against the destination.
void load_into(Tensor& dst, const NamedTensors& in, const std::string& name);

}  // namespace skelfuse

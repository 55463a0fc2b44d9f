#pragma once

#include <cstddef>
#include <vector>

#include "skelfuse/autograd.hpp"
#include "skelfuse/checkpoint.hpp"
#include "skelfuse/nn.hpp"
#include "skelfuse/ops.hpp"
#include "skelfuse/rng.hpp"

namespace skelfuse {

struct RgbNetConfig {
  std::size_t input_side = 64;
  std::size_t stem_channels = 16;
  std::size_t stem_kernel = 3;
  std::size_t stem_stride = 1;
  std::vector<std::size_t> stage_channels{16, 32, 64};
  std::vector<std::size_t> stage_strides{2, 2, 2};
  std::size_t blocks_per_stage = 2;
  std::size_t num_classes = 4;

  /// usage-error on empty or inconsistent plans, or when the final feature map is below 4x4.
  void validate() const;
  std::size_t final_side() const;
};

/// Two 3x3 conv+bn units with a shortcut; the shortcut is a 1x1 conv+bn projection when the
/// stride or channel count changes.
struct ResidualBlock {
  ConvBn conv1;
  ConvBn conv2;
  bool has_projection = false;
  ConvBn projection;
  std::size_t stride = 1;

  static ResidualBlock create(Rng& rng, std::size_t in, std::size_t out, std::size_t stride, const std::string& name);
  void collect(std::vector<Parameter*>& out);
  void save(NamedTensors& out, const std::string& prefix) const;
  void load(const NamedTensors& in, const std::string& prefix);
};

template <typename T>
struct ResidualBlockVars {
  ConvBnVars<T> conv1;
  ConvBnVars<T> conv2;
  bool has_projection = false;
  ConvBnVars<T> projection;
};

/// Running statistics per unit; null pointers skip running-average updates (training) and are a
/// usage-error in evaluation mode.
template <typename T>
struct ResidualBlockStates {
  BasicBatchNormState<T>* bn1 = nullptr;
  BasicBatchNormState<T>* bn2 = nullptr;
  BasicBatchNormState<T>* projection = nullptr;
};

ResidualBlockVars<float> bind(Tape& tape, ResidualBlock& block, bool trainable);
ResidualBlockStates<float> states_of(ResidualBlock& block);

/// relu(bn(conv(relu(bn(conv(x))))) + shortcut(x)).
template <typename T>
BasicVar<T> residual_block_forward(BasicVar<T> x, const ResidualBlockVars<T>& vars, std::size_t stride,
                                   const ResidualBlockStates<T>& states, bool training);

struct RgbNet {
  RgbNetConfig config;
  ConvBn stem;
  std::vector<ResidualBlock> blocks;
  Parameter head_weight;  // [C_last, classes]
  Parameter head_bias;

  static RgbNet create(const RgbNetConfig& config, Rng& rng);
  std::vector<Parameter*> parameters();
  NamedTensors save() const;
  static RgbNet load(const NamedTensors& bundle);
};

struct RgbForward {
  Var logits;
  Var probs;
};

/// images [N,3,S,S]: stem, stages, global average pooling, linear head, softmax.
RgbForward rgb_forward(Tape& tape, RgbNet& net, Var images, bool trainable, bool training);

struct RgbClassification {
  Tensor logits;  // [N, classes]
  Tensor probs;
};

/// Evaluation-mode inference; sized-error when the input side differs from the config.
RgbClassification rgb_classify(RgbNet& net, const Tensor& images);

}  // namespace skelfuse

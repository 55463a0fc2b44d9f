#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "skelfuse/autograd.hpp"
#include "skelfuse/checkpoint.hpp"
#include "skelfuse/nn.hpp"
#include "skelfuse/ops.hpp"
#include "skelfuse/rng.hpp"
#include "skelfuse/skeleton.hpp"

namespace skelfuse {

struct StGcnLayerSpec {
  std::size_t channels = 16;
  std::size_t stride = 1;
};

struct StGcnConfig {
  std::size_t in_channels = 3;
  std::vector<StGcnLayerSpec> layers{{16, 1}, {16, 1}, {32, 2}, {32, 1}};
  std::size_t temporal_kernel = 9;
  std::size_t num_classes = 4;
  float alpha = kDefaultAlpha;

  /// usage-error unless channels are positive and non-decreasing and the temporal kernel is odd.
  void validate() const;
  /// Shortest sequence the stride plan accepts.
  std::size_t min_frames() const;
};

/// One spatial graph convolution (per-subset 1x1 weights W_k and edge masks M_k) followed by a
/// temporal convolution, batch norm and relu.
struct StGcnLayer {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 1;
  std::size_t temporal_kernel = 1;
  std::vector<Parameter> weights;  // [C_in, C_out] per subset
  std::vector<Parameter> masks;    // [V, V] per subset, ones at init
  Parameter temporal;              // [C_out, C_out, temporal_kernel, 1]
  Parameter bn_gamma;
  Parameter bn_beta;
  BatchNormState bn;

  static StGcnLayer create(Rng& rng, std::size_t in, std::size_t out, std::size_t stride,
                           std::size_t temporal_kernel, std::size_t vertices, const std::string& name);
  void collect(std::vector<Parameter*>& out);
  void save(NamedTensors& out, const std::string& prefix) const;
  void load(const NamedTensors& in, const std::string& prefix);
};

template <typename T>
struct StGcnLayerVars {
  std::vector<BasicVar<T>> weights;
  std::vector<BasicVar<T>> masks;
  BasicVar<T> temporal;
  BasicVar<T> bn_gamma;
  BasicVar<T> bn_beta;
};

StGcnLayerVars<float> bind(Tape& tape, StGcnLayer& layer, bool trainable);

/// Spatial step: sum_k (graph_k .* M_k) applied along V to x [N,C,T,V], then contracted with W_k.
/// `graphs` are the (normalized) subset matrices, row i aggregating vertex i's neighbors.
template <typename T>
BasicVar<T> gcn_spatial(BasicVar<T> x, std::span<const BasicVar<T>> weights, std::span<const BasicVar<T>> masks,
                        std::span<const Tensor> graphs);

/// Full layer: spatial step with adj.normalized, then temporal convolution (padding (G-1)/2,
/// stride `stride`), batch norm and relu. Numeric errors are rethrown naming `layer_name`.
template <typename T>
BasicVar<T> gcn_layer_forward(BasicVar<T> x, const StGcnLayerVars<T>& vars, const PartitionedAdjacency& adj,
                              std::size_t stride, BasicBatchNormState<T>* bn, bool training,
                              std::string_view layer_name = "st-gcn layer");

/// Per-vertex loop evaluation of the subset-cardinality-normalized graph convolution:
/// out[:,t,i] = sum_{j in N(i)} f[:,t,j] W_{l_i(j)} / Z_i(j), with Z_i(j) the size of j's subset in
/// N(i). features [C,T,V], weights[k] [C,C']. Oracle only; not differentiable.
Tensor gcn_reference_forward(const Tensor& features, const PartitionedAdjacency& adj, std::span<const Tensor> weights);

/// Joint weights, differentiable: mean over channels and time of |features|, [N,C,T,V] -> [N,V].
template <typename T>
BasicVar<T> joint_weights(BasicVar<T> features) {
  return reduce(ReduceKind::kMean, abs(features), {1, 2});
}

/// Single feature map [C,T,V] -> [V].
Tensor extract_joint_weights(const Tensor& features);

struct StGcnModel {
  StGcnConfig config;
  PartitionedAdjacency adjacency;
  std::vector<StGcnLayer> layers;
  Parameter head_weight;  // [C_last, classes]
  Parameter head_bias;    // [classes]

  /// `adjacency` must hold raw subsets; normalization with config.alpha happens here.
  static StGcnModel create(const StGcnConfig& config, PartitionedAdjacency adjacency, Rng& rng);
  std::vector<Parameter*> parameters();
  NamedTensors save() const;
  static StGcnModel load(const NamedTensors& bundle);
};

/// Network input: coordinates [T,M,C] -> [C,T,M], translated so the gravity center is the origin.
/// Missing joints stay zero.
Tensor skeleton_input(const SkeletonSequence& seq);

struct SkeletonBatch {
  Tensor first;                          // [N,C,T,V]
  Tensor second;                         // [N2,C,T,V]; meaningful when second_rows is non-empty
  std::vector<std::size_t> second_rows;  // sample index of each second-subject row
  std::size_t size() const { return first.dim(0); }
};

/// Each sample is its first performer and an optional second one (nullptr when absent).
SkeletonBatch make_skeleton_batch(std::span<const std::pair<const SkeletonSequence*, const SkeletonSequence*>> samples);

struct StGcnForward {
  Var logits;           // [N,classes]
  Var probs;            // softmax(logits)
  Var features;         // subject-averaged final feature map [N,C,T',V]
  Var features_first;   // final feature map of the first performers [N,C,T',V]
  Var features_second;  // same for second performers; valid iff has_second
  bool has_second = false;
};

/// Layer stack, subject averaging, global average pooling, linear head, softmax.
StGcnForward stgcn_forward(Tape& tape, StGcnModel& model, const SkeletonBatch& batch, bool trainable, bool training);

struct StGcnClassification {
  Tensor logits;                // [classes]
  Tensor probs;                 // [classes]
  Tensor features;              // [C,T',V] after subject averaging
  std::vector<Tensor> weights;  // joint weights per performer, [V] each
};

/// Evaluation-mode inference for one sample.
StGcnClassification stgcn_classify(StGcnModel& model, const SkeletonSequence& first,
                                   const SkeletonSequence* second = nullptr);

}  // namespace skelfuse

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "skelfuse/autograd.hpp"
#include "skelfuse/checkpoint.hpp"
#include "skelfuse/ops.hpp"
#include "skelfuse/rgb_net.hpp"
#include "skelfuse/stgcn.hpp"
#include "skelfuse/stroi.hpp"
#include "skelfuse/synthetic.hpp"

namespace skelfuse {

/// kNone trains the RGB branch on unweighted ST-ROIs; kFixed uses an evaluation-mode skeleton
/// branch as a constant weight source; kSoft trains both branches on the joint objective.
enum class AttentionMode { kNone, kFixed, kSoft };
enum class LossKind { kSquared, kCrossEntropy };

const char* to_string(AttentionMode mode);
AttentionMode parse_attention_mode(const std::string& text);

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch = 16;
  float lr0 = 0.1f;
  std::vector<std::size_t> decay_epochs{12, 16};  // 1-based: the first epoch run at the reduced rate
  float momentum = 0.9f;
  AttentionMode mode = AttentionMode::kFixed;
  LossKind loss = LossKind::kSquared;
  bool freeze_skeleton = false;  // forbids skeleton updates; incompatible with kSoft
  bool random_flip = false;
  bool random_frames = false;
  std::uint64_t seed = 42;

  /// 65 epochs, batch 64, lr 0.1 divided by 10 at the 45th and 55th epochs.
  static TrainConfig full_scale();
  void validate() const;
};

/// Piecewise-constant rate for a 0-based epoch: lr0 / 10^(number of decay epochs d with epoch >= d - 1).
float lr_at_epoch(const TrainConfig& cfg, std::size_t epoch);

/// usage-error unless every row has a single 1 and zeros elsewhere.
void check_one_hot(const Tensor& y);
Tensor one_hot(std::span<const int> labels, std::size_t classes);

/// Mean over rows of ||y_hat - y||^2.
template <typename T>
BasicVar<T> squared_error(BasicVar<T> y_hat, const BasicTensor<T>& y) {
  BasicTape<T>& tape = *y_hat.tape;
  const T rows = static_cast<T>(y_hat.shape().at(0));
  return scale(sum_all(square(sub(y_hat, tape.constant(y)))), T{1} / rows);
}

/// Joint objective: squared error of both branches' softmax outputs against the one-hot labels.
template <typename T>
BasicVar<T> multimodal_loss(BasicVar<T> y_hat_j, BasicVar<T> y_hat_r, const BasicTensor<T>& y) {
  check_one_hot(y.template cast<float>());
  if (y_hat_j.shape() != y.shape()) throw_shape("multimodal_loss skeleton prediction", y_hat_j.shape(), y.shape());
  if (y_hat_r.shape() != y.shape()) throw_shape("multimodal_loss rgb prediction", y_hat_r.shape(), y.shape());
  return add(squared_error(y_hat_j, y), squared_error(y_hat_r, y));
}

/// One branch's term under the configured loss (softmax squared error or cross-entropy on logits).
Var branch_loss(LossKind kind, Var logits, Var probs, const Tensor& y);

struct EpochMetrics {
  std::size_t epoch = 0;
  std::string stage;
  float lr = 0.0f;
  double loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
};

std::string to_json_line(const EpochMetrics& m);
std::string to_jsonl(std::span<const EpochMetrics> rows);

/// Single-frame sequence of per-joint mean positions over the given samples' first performers.
SkeletonSequence reference_pose(const Dataset& dataset, std::span<const std::size_t> indices);

/// Pairs each sample's performers for make_skeleton_batch.
std::vector<std::pair<const SkeletonSequence*, const SkeletonSequence*>> skeleton_pairs(
    const Dataset& dataset, std::span<const std::size_t> indices);

using EpochCallback = std::function<void(const EpochMetrics&)>;

struct SkeletonStageResult {
  StGcnModel model;
  std::vector<EpochMetrics> metrics;
};

/// Trains the skeleton branch alone; adjacency comes from the training split's reference pose.
SkeletonStageResult train_skeleton_stage(const Dataset& dataset, const StGcnConfig& config, const TrainConfig& cfg,
                                         const EpochCallback& on_epoch = {});

/// Trained RGB branch plus what inference needs: its attention mode, input statistics and, for
/// weighted modes, the skeleton branch that produces the weights.
struct RgbModel {
  RgbNet net;
  AttentionMode mode = AttentionMode::kNone;
  ChannelStats stats;
  std::size_t subject_slots = 1;
  std::optional<StGcnModel> weighting;

  NamedTensors save() const;
  static RgbModel load(const NamedTensors& bundle);
};

struct RgbTrainInputs {
  const Dataset* dataset = nullptr;
  const std::vector<Tensor>* grids = nullptr;  // unweighted ST-ROI image per sample, [3,H,W]
  std::size_t subject_slots = 1;
  /// Fixed mode only: precomputed part weights per sample, [parts, slots]; computed when absent.
  const std::vector<Tensor>* part_weights = nullptr;
  /// Random frame selection: rebuilds a sample's grid from jittered frame indices.
  std::function<Tensor(std::size_t sample, Rng& rng)> resample;
};

struct RgbStageResult {
  RgbModel model;
  std::vector<EpochMetrics> metrics;
};

/// Trains the RGB branch in cfg.mode. `skeleton` is required for kFixed and kSoft and is never
/// modified; the soft-mode skeleton update lives in the returned model's `weighting`.
RgbStageResult train_rgb_stage(const RgbTrainInputs& inputs, const StGcnModel* skeleton, const RgbNetConfig& config,
                               const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Gradient of the RGB-branch loss alone with respect to every edge-importance mask of `skeleton`
/// ([layer][subset], each [V,V]) for one soft-attention batch. Works on copies of both models.
std::vector<std::vector<Tensor>> rgb_loss_mask_gradients(const StGcnModel& skeleton, const RgbModel& rgb,
                                                         const Dataset& dataset, const std::vector<Tensor>& grids,
                                                         std::span<const std::size_t> batch, LossKind loss);

/// Evaluation-mode part weights of one sample, [parts, slots]; empty slots get ones.
Tensor sample_part_weights(StGcnModel& model, const Sample& sample, const SkeletonTemplate& tmpl, std::size_t slots);

std::vector<Tensor> skeleton_probabilities(StGcnModel& model, const Dataset& dataset, std::span<const std::size_t> indices);
std::vector<Tensor> rgb_probabilities(RgbModel& model, const Dataset& dataset, const std::vector<Tensor>& grids,
                                      std::span<const std::size_t> indices);

struct EnsembleEntry {
  Tensor combined;
  std::size_t predicted = 0;
};

/// (y_hat_j + y_hat_r) / 2 and its argmax, ties going to the lower class index.
EnsembleEntry ensemble_predict(const Tensor& y_hat_j, const Tensor& y_hat_r);

struct EnsembleResult {
  std::vector<EnsembleEntry> entries;
  double skeleton_accuracy = 0.0;
  double rgb_accuracy = 0.0;
  double combined_accuracy = 0.0;
};

EnsembleResult ensemble(const std::vector<Tensor>& y_hat_j, const std::vector<Tensor>& y_hat_r, std::span<const int> labels);

std::size_t argmax(const Tensor& scores);
double accuracy(const std::vector<Tensor>& probs, std::span<const int> labels);

struct AblationRow {
  std::size_t index = 0;
  std::string method;
  std::string skeleton;  // "train", "eval" or "-"
  std::string rgb;
  std::optional<double> accuracy;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  std::string to_text() const;
};

/// Seven rows: GCN, ResNet, ResNet+Weights (soft), ResNet+Weights (fixed), and the ensembles of
/// row 1 with rows 2-4. Rows whose model is null report no accuracy.
AblationReport evaluate(const Dataset& dataset, std::span<const std::size_t> split, const std::vector<Tensor>& grids,
                        StGcnModel* skeleton, RgbModel* unweighted, RgbModel* soft, RgbModel* fixed);

}  // namespace skelfuse

#include "skelfuse/fusion.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <json.hpp>

#include "skelfuse/error.hpp"
#include "skelfuse/optim.hpp"

namespace skelfuse {

const char* to_string(AttentionMode mode) {
  switch (mode) {
    case AttentionMode::kNone: return "none";
    case AttentionMode::kFixed: return "fixed";
    case AttentionMode::kSoft: return "soft";
  }
  return "?";
}

AttentionMode parse_attention_mode(const std::string& text) {
  if (text == "none") return AttentionMode::kNone;
  if (text == "fixed") return AttentionMode::kFixed;
  if (text == "soft") return AttentionMode::kSoft;
  throw_usage("unknown attention mode '" + text + "' (expected fixed, soft or none)");
}

TrainConfig TrainConfig::full_scale() {
  TrainConfig c;
  c.epochs = 65;
  c.batch = 64;
  c.lr0 = 0.1f;
  c.decay_epochs = {45, 55};
  return c;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw_usage("train config: epochs must be positive");
  if (batch == 0) throw_usage("train config: batch must be positive");
  if (!(lr0 > 0.0f)) throw_usage("train config: lr0 must be positive");
  if (!(momentum >= 0.0f && momentum < 1.0f)) throw_usage("train config: momentum must be in [0, 1)");
  for (std::size_t i = 0; i < decay_epochs.size(); ++i) {
    if (decay_epochs[i] == 0 || decay_epochs[i] >= epochs) {
      throw_usage("train config: decay epochs must lie in [1, epochs)");
    }
    if (i > 0 && decay_epochs[i] <= decay_epochs[i - 1]) throw_usage("train config: decay epochs must be strictly increasing");
  }
  if (mode == AttentionMode::kSoft && freeze_skeleton) {
    throw_usage("train config: soft attention needs skeleton gradients, but freeze_skeleton is set");
  }
}

float lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
  if (epoch >= cfg.epochs) {
    throw_usage("lr_at_epoch: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.epochs) + ")");
  }
  int drops = 0;
  for (std::size_t d : cfg.decay_epochs) drops += epoch + 1 >= d ? 1 : 0;
  // Divide in double so 0.1 / 100 rounds to the float nearest 0.001.
  return static_cast<float>(static_cast<double>(cfg.lr0) / std::pow(10.0, drops));
}

void check_one_hot(const Tensor& y) {
  if (y.rank() != 2) throw_usage("labels must be a [N,C] one-hot matrix, got " + shape_string(y.shape()));
  const std::size_t c = y.dim(1);
  for (std::size_t r = 0; r < y.dim(0); ++r) {
    std::size_t ones = 0;
    for (std::size_t k = 0; k < c; ++k) {
      const float v = y[r * c + k];
      if (v == 1.0f) {
        ++ones;
      } else if (v != 0.0f) {
        throw_usage("labels row " + std::to_string(r) + " is not one-hot");
      }
    }
    if (ones != 1) throw_usage("labels row " + std::to_string(r) + " is not one-hot");
  }
}

Tensor one_hot(std::span<const int> labels, std::size_t classes) {
  Tensor y = Tensor::zeros({labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw_data("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(classes) + ")");
    }
    y.at({i, static_cast<std::size_t>(labels[i])}) = 1.0f;
  }
  return y;
}

Var branch_loss(LossKind kind, Var logits, Var probs, const Tensor& y) {
  check_one_hot(y);
  if (kind == LossKind::kCrossEntropy) return cross_entropy(logits, y);
  return squared_error(probs, y);
}

std::string to_json_line(const EpochMetrics& m) {
  nlohmann::ordered_json j;
  j["epoch"] = m.epoch;
  j["stage"] = m.stage;
  // Shortest decimal form of the float rate, so 0.1f prints as 0.1.
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, m.lr);
  j["lr"] = std::stod(std::string(buf, r.ptr));
  j["loss"] = m.loss;
  j["train_acc"] = m.train_acc;
  j["val_acc"] = m.val_acc;
  return j.dump();
}

std::string to_jsonl(std::span<const EpochMetrics> rows) {
  std::string out;
  for (const auto& r : rows) out += to_json_line(r) + "\n";
  return out;
}

SkeletonSequence reference_pose(const Dataset& dataset, std::span<const std::size_t> indices) {
  if (indices.empty()) throw_data("reference_pose: no samples");
  const Shape& s = dataset.samples.at(indices[0]).skeletons.at(0).coords.shape();
  const std::size_t m = s[1], c = s[2];
  std::vector<double> sum(m * c, 0.0);
  std::vector<std::size_t> count(m, 0);
  for (std::size_t i : indices) {
    const SkeletonSequence& seq = dataset.samples.at(i).skeletons.at(0);
    if (seq.joints() != m || seq.channels() != c) throw_data("reference_pose: inconsistent joint layout");
    for (std::size_t t = 0; t < seq.frames(); ++t) {
      for (std::size_t j = 0; j < m; ++j) {
        if (!seq.joint_present(t, j)) continue;
        for (std::size_t k = 0; k < c; ++k) sum[j * c + k] += seq.coords.at({t, j, k});
        ++count[j];
      }
    }
  }
  SkeletonSequence ref;
  ref.coords = Tensor::zeros({1, m, c});
  for (std::size_t j = 0; j < m; ++j) {
    if (count[j] == 0) continue;
    for (std::size_t k = 0; k < c; ++k) {
      ref.coords.at({0, j, k}) = static_cast<float>(sum[j * c + k] / static_cast<double>(count[j]));
    }
  }
  return ref;
}

std::vector<std::pair<const SkeletonSequence*, const SkeletonSequence*>> skeleton_pairs(
    const Dataset& dataset, std::span<const std::size_t> indices) {
  std::vector<std::pair<const SkeletonSequence*, const SkeletonSequence*>> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    const Sample& s = dataset.samples.at(i);
    if (s.skeletons.empty()) throw_data("sample " + std::to_string(i) + " has no skeleton");
    out.emplace_back(&s.skeletons[0], s.skeletons.size() > 1 ? &s.skeletons[1] : nullptr);
  }
  return out;
}

namespace {

std::vector<int> labels_of(const Dataset& dataset, std::span<const std::size_t> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(dataset.samples.at(i).label);
  return out;
}

std::size_t count_correct(const Tensor& probs, std::span<const int> labels) {
  const std::size_t k = probs.dim(1);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const float* row = probs.data().data() + r * k;
    const auto pred = static_cast<std::size_t>(std::max_element(row, row + k) - row);
    correct += pred == static_cast<std::size_t>(labels[r]) ? 1 : 0;
  }
  return correct;
}

std::vector<std::size_t> slice(const std::vector<std::size_t>& v, std::size_t from, std::size_t count) {
  return {v.begin() + static_cast<long>(from), v.begin() + static_cast<long>(std::min(v.size(), from + count))};
}

constexpr std::size_t kEvalBatch = 32;

// Rng stream ids
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStream = 100;
constexpr std::uint64_t kAugmentStream = 100000;

}  // namespace

SkeletonStageResult train_skeleton_stage(const Dataset& dataset, const StGcnConfig& config, const TrainConfig& cfg,
                                         const EpochCallback& on_epoch) {
  cfg.validate();
  if (dataset.train.empty()) throw_data("train_skeleton_stage: empty training split");
  const Rng root(cfg.seed);
  StGcnConfig c = config;
  c.num_classes = dataset.num_classes;
  c.in_channels = dataset.samples.at(dataset.train[0]).skeletons.at(0).channels();
  Rng init = root.fork(kInitStream);
  SkeletonStageResult result{StGcnModel::create(c, partition_neighbors(dataset.tmpl, reference_pose(dataset, dataset.train)), init), {}};
  StGcnModel& model = result.model;
  std::vector<Parameter*> params = model.parameters();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const float lr = lr_at_epoch(cfg, epoch);
    std::vector<std::size_t> order = dataset.train;
    Rng shuffle = root.fork(kShuffleStream + epoch);
    shuffle.shuffle(order);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t from = 0; from < order.size(); from += cfg.batch) {
      const std::vector<std::size_t> idx = slice(order, from, cfg.batch);
      const std::vector<int> labels = labels_of(dataset, idx);
      const auto pairs = skeleton_pairs(dataset, idx);
      const SkeletonBatch batch = make_skeleton_batch(pairs);
      Tape tape;
      const StGcnForward f = stgcn_forward(tape, model, batch, true, true);
      Var loss = branch_loss(cfg.loss, f.logits, f.probs, one_hot(labels, dataset.num_classes));
      loss_sum += static_cast<double>(loss.value()[0]) * static_cast<double>(idx.size());
      correct += count_correct(f.probs.value(), labels);
      tape.backward(loss);
      sgd_step(params, lr, cfg.momentum);
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.stage = "skeleton";
    m.lr = lr;
    m.loss = loss_sum / static_cast<double>(order.size());
    m.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
    if (!dataset.test.empty()) {
      const std::vector<int> labels = labels_of(dataset, dataset.test);
      m.val_acc = accuracy(skeleton_probabilities(model, dataset, dataset.test), labels);
    }
    result.metrics.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return result;
}

NamedTensors RgbModel::save() const {
  NamedTensors out = net.save();
  out.emplace_back("rgb.mode", Tensor({1}, std::vector<float>{static_cast<float>(static_cast<int>(mode))}));
  out.emplace_back("rgb.slots", Tensor({1}, std::vector<float>{static_cast<float>(subject_slots)}));
  out.emplace_back("rgb.stats", Tensor({2, 3}, std::vector<float>{stats.mean[0], stats.mean[1], stats.mean[2],
                                                                  stats.stddev[0], stats.stddev[1], stats.stddev[2]}));
  if (weighting) {
    for (auto& [name, t] : weighting->save()) out.emplace_back("weighting." + name, t);
  }
  return out;
}

RgbModel RgbModel::load(const NamedTensors& bundle) {
  RgbModel m{RgbNet::load(bundle), AttentionMode::kNone, {}, 1, std::nullopt};
  const Tensor& mode = find_tensor(bundle, "rgb.mode");
  if (mode.numel() != 1 || mode[0] < 0.0f || mode[0] > 2.0f) throw_data("rgb checkpoint: invalid mode");
  m.mode = static_cast<AttentionMode>(static_cast<int>(mode[0]));
  const Tensor& slots = find_tensor(bundle, "rgb.slots");
  if (slots.numel() != 1 || (slots[0] != 1.0f && slots[0] != 2.0f)) throw_data("rgb checkpoint: invalid subject slots");
  m.subject_slots = static_cast<std::size_t>(slots[0]);
  const Tensor& stats = find_tensor(bundle, "rgb.stats");
  if (stats.shape() != Shape{2, 3}) throw_shape("rgb checkpoint stats", stats.shape(), Shape{2, 3});
  for (std::size_t c = 0; c < 3; ++c) {
    m.stats.mean[c] = stats[c];
    m.stats.stddev[c] = stats[3 + c];
  }
  if (m.mode != AttentionMode::kNone) {
    NamedTensors sub;
    for (const auto& [name, t] : bundle) {
      if (name.rfind("weighting.", 0) == 0) sub.emplace_back(name.substr(10), t);
    }
    m.weighting = StGcnModel::load(sub);
  }
  return m;
}

Tensor sample_part_weights(StGcnModel& model, const Sample& sample, const SkeletonTemplate& tmpl, std::size_t slots) {
  if (sample.skeletons.empty()) throw_data("sample has no skeleton");
  if (sample.skeletons.size() > slots) throw_usage("sample has more performers than subject slots");
  const StGcnClassification c =
      stgcn_classify(model, sample.skeletons[0], sample.skeletons.size() > 1 ? &sample.skeletons[1] : nullptr);
  const std::size_t k = tmpl.parts.size();
  Tensor w = Tensor::ones({k, slots});
  for (std::size_t s = 0; s < c.weights.size(); ++s) {
    const Tensor p = map_vertex_weights_to_parts(c.weights[s], tmpl);
    for (std::size_t j = 0; j < k; ++j) w.at({j, s}) = p[j];
  }
  return w;
}

namespace {

// Stacks per-sample [3,H,W] grids into [N,3,H,W], flipping each subject half horizontally where
// `flip[i]` is set.
Tensor stack_grids(const std::vector<Tensor>& grids, std::size_t slots, const std::vector<bool>& flip) {
  const Shape& s = grids.at(0).shape();
  const std::size_t h = s[1], w = s[2], per = 3 * h * w, half = w / slots;
  Tensor out({grids.size(), 3, h, w});
  for (std::size_t i = 0; i < grids.size(); ++i) {
    if (grids[i].shape() != s) throw_shape("ST-ROI batch", grids[i].shape(), s);
    const float* src = grids[i].data().data();
    float* dst = out.data().data() + i * per;
    if (flip.empty() || !flip[i]) {
      std::copy_n(src, per, dst);
      continue;
    }
    for (std::size_t r = 0; r < 3 * h; ++r) {
      for (std::size_t g = 0; g < slots; ++g) {
        for (std::size_t x = 0; x < half; ++x) dst[r * w + g * half + x] = src[r * w + g * half + (half - 1 - x)];
      }
    }
  }
  return out;
}

Tensor stack_weights(const std::vector<Tensor>& weights) {
  const Shape& s = weights.at(0).shape();
  std::vector<float> data;
  data.reserve(weights.size() * shape_numel(s));
  for (const Tensor& w : weights) {
    if (w.shape() != s) throw_shape("part weight batch", w.shape(), s);
    data.insert(data.end(), w.data().begin(), w.data().end());
  }
  return Tensor({weights.size(), s[0], s[1]}, std::move(data));
}

// Differentiable [N, parts, slots] weights from a skeleton forward pass.
Var soft_part_weights(Tape& tape, const StGcnForward& f, const SkeletonBatch& batch,
                      std::span<const std::size_t> part_joints, std::size_t slots) {
  const std::size_t n = batch.size(), k = part_joints.size();
  Var first = part_weights_from_joints(joint_weights(f.features_first), part_joints);
  if (slots == 1) return reshape(first, Shape{n, k, 1});
  Var second = tape.constant(Tensor::ones({n, k}));
  if (f.has_second) {
    second = overwrite_rows(second, part_weights_from_joints(joint_weights(f.features_second), part_joints),
                            std::span<const std::size_t>(batch.second_rows));
  }
  const std::vector<Var> parts{first, second};
  return stack_last(std::span<const Var>(parts));
}

}  // namespace

RgbStageResult train_rgb_stage(const RgbTrainInputs& inputs, const StGcnModel* skeleton, const RgbNetConfig& config,
                               const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (inputs.dataset == nullptr || inputs.grids == nullptr) throw_usage("train_rgb_stage: dataset and grids are required");
  const Dataset& dataset = *inputs.dataset;
  const std::vector<Tensor>& grids = *inputs.grids;
  if (dataset.train.empty()) throw_data("train_rgb_stage: empty training split");
  if (grids.size() != dataset.samples.size()) throw_data("train_rgb_stage: one ST-ROI grid per sample is required");
  if (cfg.mode != AttentionMode::kNone && skeleton == nullptr) {
    throw_usage(std::string("train_rgb_stage: ") + to_string(cfg.mode) + " attention needs a skeleton model");
  }
  if (cfg.random_frames && !inputs.resample) throw_usage("train_rgb_stage: random frame selection needs a resampler");
  const std::size_t slots = inputs.subject_slots;
  const std::vector<std::size_t> part_joints = dataset.tmpl.part_joints();
  const Rng root(cfg.seed);

  RgbStageResult result;
  RgbModel& model = result.model;
  model.mode = cfg.mode;
  model.subject_slots = slots;
  {
    std::vector<Tensor> resized;
    resized.reserve(dataset.train.size());
    for (std::size_t i : dataset.train) resized.push_back(resize_bilinear(grids.at(i), config.input_side, config.input_side));
    model.stats = ChannelStats::compute(resized);
  }
  RgbNetConfig c = config;
  c.num_classes = dataset.num_classes;
  Rng init = root.fork(kInitStream + 1);
  model.net = RgbNet::create(c, init);
  if (cfg.mode != AttentionMode::kNone) model.weighting = *skeleton;

  std::vector<Tensor> fixed_weights;
  if (cfg.mode == AttentionMode::kFixed) {
    if (inputs.part_weights != nullptr) {
      if (inputs.part_weights->size() != dataset.samples.size()) throw_data("train_rgb_stage: one weight set per sample is required");
      fixed_weights = *inputs.part_weights;
    } else {
      for (const Sample& s : dataset.samples) fixed_weights.push_back(sample_part_weights(*model.weighting, s, dataset.tmpl, slots));
    }
  }

  std::vector<Parameter*> params = model.net.parameters();
  std::vector<Parameter*> skel_params;
  if (cfg.mode == AttentionMode::kSoft) skel_params = model.weighting->parameters();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const float lr = lr_at_epoch(cfg, epoch);
    std::vector<std::size_t> order = dataset.train;
    Rng shuffle = root.fork(kShuffleStream + epoch);
    shuffle.shuffle(order);
    Rng augment = root.fork(kAugmentStream + epoch);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t from = 0; from < order.size(); from += cfg.batch) {
      const std::vector<std::size_t> idx = slice(order, from, cfg.batch);
      const std::vector<int> labels = labels_of(dataset, idx);
      const Tensor y = one_hot(labels, dataset.num_classes);
      std::vector<Tensor> batch_grids;
      std::vector<bool> flip;
      for (std::size_t i : idx) {
        batch_grids.push_back(cfg.random_frames ? inputs.resample(i, augment) : grids[i]);
        if (cfg.random_flip) flip.push_back(augment.below(2) == 1);
      }
      Tape tape;
      Var img = tape.constant(stack_grids(batch_grids, slots, flip));
      std::optional<StGcnForward> skel;
      if (cfg.mode == AttentionMode::kFixed) {
        std::vector<Tensor> w;
        for (std::size_t i : idx) w.push_back(fixed_weights[i]);
        img = scale_blocks(img, tape.constant(stack_weights(w)));
      } else if (cfg.mode == AttentionMode::kSoft) {
        const auto pairs = skeleton_pairs(dataset, idx);
        const SkeletonBatch sb = make_skeleton_batch(pairs);
        skel = stgcn_forward(tape, *model.weighting, sb, true, true);
        img = scale_blocks(img, soft_part_weights(tape, *skel, sb, part_joints, slots));
      }
      const RgbForward rf = rgb_forward(tape, model.net, preprocess_batch(img, c.input_side, model.stats), true, true);
      Var loss = branch_loss(cfg.loss, rf.logits, rf.probs, y);
      if (skel) loss = add(loss, branch_loss(cfg.loss, skel->logits, skel->probs, y));
      loss_sum += static_cast<double>(loss.value()[0]) * static_cast<double>(idx.size());
      correct += count_correct(rf.probs.value(), labels);
      tape.backward(loss);
      sgd_step(params, lr, cfg.momentum);
      if (!skel_params.empty()) sgd_step(skel_params, lr, cfg.momentum);
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.stage = std::string("rgb-") + to_string(cfg.mode);
    m.lr = lr;
    m.loss = loss_sum / static_cast<double>(order.size());
    m.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
    if (!dataset.test.empty()) {
      m.val_acc = accuracy(rgb_probabilities(model, dataset, grids, dataset.test), labels_of(dataset, dataset.test));
    }
    result.metrics.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return result;
}

std::vector<std::vector<Tensor>> rgb_loss_mask_gradients(const StGcnModel& skeleton, const RgbModel& rgb,
                                                         const Dataset& dataset, const std::vector<Tensor>& grids,
                                                         std::span<const std::size_t> batch, LossKind loss) {
  if (batch.empty()) throw_usage("rgb_loss_mask_gradients: empty batch");
  StGcnModel skel = skeleton;
  RgbModel model = rgb;
  const std::vector<std::size_t> idx(batch.begin(), batch.end());
  const std::vector<int> labels = labels_of(dataset, idx);
  std::vector<Tensor> batch_grids;
  for (std::size_t i : idx) batch_grids.push_back(grids.at(i));
  for (Parameter* p : skel.parameters()) p->zero_grad();
  Tape tape;
  Var img = tape.constant(stack_grids(batch_grids, model.subject_slots, {}));
  const auto pairs = skeleton_pairs(dataset, idx);
  const SkeletonBatch sb = make_skeleton_batch(pairs);
  const StGcnForward f = stgcn_forward(tape, skel, sb, true, false);
  img = scale_blocks(img, soft_part_weights(tape, f, sb, dataset.tmpl.part_joints(), model.subject_slots));
  const RgbForward rf =
      rgb_forward(tape, model.net, preprocess_batch(img, model.net.config.input_side, model.stats), false, false);
  tape.backward(branch_loss(loss, rf.logits, rf.probs, one_hot(labels, dataset.num_classes)));
  std::vector<std::vector<Tensor>> out;
  for (const StGcnLayer& layer : skel.layers) {
    out.emplace_back();
    for (const Parameter& m : layer.masks) out.back().push_back(m.grad);
  }
  return out;
}

std::vector<Tensor> skeleton_probabilities(StGcnModel& model, const Dataset& dataset, std::span<const std::size_t> indices) {
  std::vector<Tensor> out;
  const std::vector<std::size_t> all(indices.begin(), indices.end());
  for (std::size_t from = 0; from < all.size(); from += kEvalBatch) {
    const std::vector<std::size_t> idx = slice(all, from, kEvalBatch);
    const auto pairs = skeleton_pairs(dataset, idx);
    Tape tape;
    const StGcnForward f = stgcn_forward(tape, model, make_skeleton_batch(pairs), false, false);
    const Tensor& p = f.probs.value();
    const std::size_t k = p.dim(1);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      out.emplace_back(Shape{k}, std::vector<float>(p.data().begin() + static_cast<long>(r * k),
                                                    p.data().begin() + static_cast<long>((r + 1) * k)));
    }
  }
  return out;
}

std::vector<Tensor> rgb_probabilities(RgbModel& model, const Dataset& dataset, const std::vector<Tensor>& grids,
                                      std::span<const std::size_t> indices) {
  if (model.mode != AttentionMode::kNone && !model.weighting) throw_data("weighted rgb model lacks its skeleton branch");
  std::vector<Tensor> out;
  const std::vector<std::size_t> all(indices.begin(), indices.end());
  for (std::size_t from = 0; from < all.size(); from += kEvalBatch) {
    const std::vector<std::size_t> idx = slice(all, from, kEvalBatch);
    std::vector<Tensor> batch_grids;
    std::vector<Tensor> weights;
    for (std::size_t i : idx) {
      batch_grids.push_back(grids.at(i));
      if (model.mode != AttentionMode::kNone) {
        weights.push_back(sample_part_weights(*model.weighting, dataset.samples.at(i), dataset.tmpl, model.subject_slots));
      }
    }
    Tape tape;
    Var img = tape.constant(stack_grids(batch_grids, model.subject_slots, {}));
    if (!weights.empty()) img = scale_blocks(img, tape.constant(stack_weights(weights)));
    const RgbForward f =
        rgb_forward(tape, model.net, preprocess_batch(img, model.net.config.input_side, model.stats), false, false);
    const Tensor& p = f.probs.value();
    const std::size_t k = p.dim(1);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      out.emplace_back(Shape{k}, std::vector<float>(p.data().begin() + static_cast<long>(r * k),
                                                    p.data().begin() + static_cast<long>((r + 1) * k)));
    }
  }
  return out;
}

std::size_t argmax(const Tensor& scores) {
  const auto d = scores.data();
  return static_cast<std::size_t>(std::max_element(d.begin(), d.end()) - d.begin());
}

EnsembleEntry ensemble_predict(const Tensor& y_hat_j, const Tensor& y_hat_r) {
  if (y_hat_j.shape() != y_hat_r.shape() || y_hat_j.rank() != 1) {
    throw_shape("ensemble_predict", y_hat_j.shape(), y_hat_r.shape());
  }
  EnsembleEntry e;
  e.combined = Tensor(y_hat_j.shape());
  for (std::size_t i = 0; i < y_hat_j.numel(); ++i) e.combined[i] = (y_hat_j[i] + y_hat_r[i]) / 2.0f;
  e.predicted = argmax(e.combined);
  return e;
}

double accuracy(const std::vector<Tensor>& probs, std::span<const int> labels) {
  if (probs.size() != labels.size()) throw_usage("accuracy: prediction and label counts differ");
  if (probs.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) correct += argmax(probs[i]) == static_cast<std::size_t>(labels[i]) ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(probs.size());
}

EnsembleResult ensemble(const std::vector<Tensor>& y_hat_j, const std::vector<Tensor>& y_hat_r, std::span<const int> labels) {
  if (y_hat_j.size() != y_hat_r.size() || y_hat_j.size() != labels.size()) {
    throw_usage("ensemble: prediction and label counts differ");
  }
  EnsembleResult r;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    r.entries.push_back(ensemble_predict(y_hat_j[i], y_hat_r[i]));
    correct += r.entries.back().predicted == static_cast<std::size_t>(labels[i]) ? 1 : 0;
  }
  r.skeleton_accuracy = accuracy(y_hat_j, labels);
  r.rgb_accuracy = accuracy(y_hat_r, labels);
  r.combined_accuracy = labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels.size());
  return r;
}

std::string AblationReport::to_text() const {
  std::string out = "#  Method                 Skeleton  RGB    Accuracy\n";
  char line[128];
  for (const auto& r : rows) {
    const std::string acc = r.accuracy ? [&] {
      char b[16];
      std::snprintf(b, sizeof b, "%.4f", *r.accuracy);
      return std::string(b);
    }()
                                       : std::string("-");
    std::snprintf(line, sizeof line, "%-2zu %-22s %-9s %-6s %s\n", r.index, r.method.c_str(), r.skeleton.c_str(),
                  r.rgb.c_str(), acc.c_str());
    out += line;
  }
  return out;
}

AblationReport evaluate(const Dataset& dataset, std::span<const std::size_t> split, const std::vector<Tensor>& grids,
                        StGcnModel* skeleton, RgbModel* unweighted, RgbModel* soft, RgbModel* fixed) {
  if (split.empty()) throw_data("evaluate: empty split");
  const std::vector<int> labels = labels_of(dataset, split);
  std::optional<std::vector<Tensor>> pj;
  if (skeleton != nullptr) pj = skeleton_probabilities(*skeleton, dataset, split);
  std::array<std::optional<std::vector<Tensor>>, 3> pr;
  RgbModel* rgb[3] = {unweighted, soft, fixed};
  for (std::size_t i = 0; i < 3; ++i) {
    if (rgb[i] != nullptr) pr[i] = rgb_probabilities(*rgb[i], dataset, grids, split);
  }
  AblationReport rep;
  rep.rows.push_back({1, "GCN", "train", "-", pj ? std::optional(accuracy(*pj, labels)) : std::nullopt});
  const char* names[3] = {"ResNet", "ResNet+Weights (soft)", "ResNet+Weights (fixed)"};
  const char* skel_flag[3] = {"-", "train", "eval"};
  for (std::size_t i = 0; i < 3; ++i) {
    rep.rows.push_back({2 + i, names[i], skel_flag[i], "train", pr[i] ? std::optional(accuracy(*pr[i], labels)) : std::nullopt});
  }
  for (std::size_t i = 0; i < 3; ++i) {
    std::optional<double> acc;
    if (pj && pr[i]) acc = ensemble(*pj, *pr[i], labels).combined_accuracy;
    rep.rows.push_back({5 + i, "Ensemble (1+" + std::to_string(2 + i) + ")", "eval", "eval", acc});
  }
  return rep;
}

}  // namespace skelfuse

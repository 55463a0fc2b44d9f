#include "skelfuse/stgcn.hpp"

#include <cmath>

#include "skelfuse/error.hpp"

namespace skelfuse {

void StGcnConfig::validate() const {
  if (in_channels == 0) throw_usage("st-gcn config: in_channels must be positive");
  if (layers.empty()) throw_usage("st-gcn config: at least one layer is required");
  std::size_t prev = 0;
  for (const auto& l : layers) {
    if (l.channels == 0 || l.stride == 0) throw_usage("st-gcn config: layer channels and strides must be positive");
    if (l.channels < prev) throw_usage("st-gcn config: layer channels must be non-decreasing");
    prev = l.channels;
  }
  if (temporal_kernel == 0 || temporal_kernel % 2 == 0) throw_usage("st-gcn config: temporal kernel must be odd");
  if (num_classes < 2) throw_usage("st-gcn config: at least two classes are required");
  if (!(alpha > 0.0f)) throw_usage("st-gcn config: alpha must be positive");
}

std::size_t StGcnConfig::min_frames() const {
  std::size_t n = 1;
  for (const auto& l : layers) n *= l.stride;
  return n;
}

StGcnLayer StGcnLayer::create(Rng& rng, std::size_t in, std::size_t out, std::size_t stride,
                              std::size_t temporal_kernel, std::size_t vertices, const std::string& name) {
  StGcnLayer layer;
  layer.in_channels = in;
  layer.out_channels = out;
  layer.stride = stride;
  layer.temporal_kernel = temporal_kernel;
  for (std::size_t k = 0; k < kPartitionSubsets; ++k) {
    layer.weights.emplace_back(he_uniform(rng, {in, out}, in), name + ".w" + std::to_string(k));
    layer.masks.emplace_back(Tensor::ones({vertices, vertices}), name + ".mask" + std::to_string(k));
  }
  layer.temporal = Parameter(he_uniform(rng, {out, out, temporal_kernel, 1}, out * temporal_kernel), name + ".temporal");
  layer.bn_gamma = Parameter(Tensor::ones({out}), name + ".bn.gamma");
  layer.bn_beta = Parameter(Tensor::zeros({out}), name + ".bn.beta");
  layer.bn = BatchNormState(out);
  return layer;
}

void StGcnLayer::collect(std::vector<Parameter*>& out) {
  for (auto& w : weights) out.push_back(&w);
  for (auto& m : masks) out.push_back(&m);
  out.push_back(&temporal);
  out.push_back(&bn_gamma);
  out.push_back(&bn_beta);
}

void StGcnLayer::save(NamedTensors& out, const std::string& prefix) const {
  for (std::size_t k = 0; k < weights.size(); ++k) out.emplace_back(prefix + ".w" + std::to_string(k), weights[k].value);
  for (std::size_t k = 0; k < masks.size(); ++k) out.emplace_back(prefix + ".mask" + std::to_string(k), masks[k].value);
  out.emplace_back(prefix + ".temporal", temporal.value);
  out.emplace_back(prefix + ".bn.gamma", bn_gamma.value);
  out.emplace_back(prefix + ".bn.beta", bn_beta.value);
  out.emplace_back(prefix + ".bn.running_mean", bn.running_mean);
  out.emplace_back(prefix + ".bn.running_var", bn.running_var);
}

void StGcnLayer::load(const NamedTensors& in, const std::string& prefix) {
  for (std::size_t k = 0; k < weights.size(); ++k) load_into(weights[k].value, in, prefix + ".w" + std::to_string(k));
  for (std::size_t k = 0; k < masks.size(); ++k) load_into(masks[k].value, in, prefix + ".mask" + std::to_string(k));
  load_into(temporal.value, in, prefix + ".temporal");
  load_into(bn_gamma.value, in, prefix + ".bn.gamma");
  load_into(bn_beta.value, in, prefix + ".bn.beta");
  load_into(bn.running_mean, in, prefix + ".bn.running_mean");
  load_into(bn.running_var, in, prefix + ".bn.running_var");
}

StGcnLayerVars<float> bind(Tape& tape, StGcnLayer& layer, bool trainable) {
  StGcnLayerVars<float> v;
  for (auto& w : layer.weights) v.weights.push_back(bind(tape, w, trainable));
  for (auto& m : layer.masks) v.masks.push_back(bind(tape, m, trainable));
  v.temporal = bind(tape, layer.temporal, trainable);
  v.bn_gamma = bind(tape, layer.bn_gamma, trainable);
  v.bn_beta = bind(tape, layer.bn_beta, trainable);
  return v;
}

template <typename T>
BasicVar<T> gcn_spatial(BasicVar<T> x, std::span<const BasicVar<T>> weights, std::span<const BasicVar<T>> masks,
                        std::span<const Tensor> graphs) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw_usage("gcn spatial: input must be [N,C,T,V], got " + shape_string(s));
  if (weights.size() != graphs.size() || masks.size() != graphs.size() || graphs.empty()) {
    throw_usage("gcn spatial: need one weight and one mask per graph");
  }
  const std::size_t n = s[0], c = s[1], t = s[2], v = s[3];
  BasicTape<T>& tape = *x.tape;
  BasicVar<T> flat = reshape(x, Shape{n * c * t, v});
  BasicVar<T> acc{};
  for (std::size_t k = 0; k < graphs.size(); ++k) {
    if (graphs[k].shape() != Shape{v, v}) throw_shape("gcn spatial graph", graphs[k].shape(), Shape{v, v});
    BasicVar<T> g = mul(tape.constant(graphs[k].template cast<T>()), masks[k]);
    // row i of g aggregates the neighbors of vertex i
    BasicVar<T> mixed = matmul(flat, transpose(g));
    BasicVar<T> rows = reshape(permute(reshape(mixed, Shape{n, c, t, v}), {0, 2, 3, 1}), Shape{n * t * v, c});
    BasicVar<T> term = matmul(rows, weights[k]);
    acc = k == 0 ? term : add(acc, term);
  }
  const std::size_t out_c = acc.shape()[1];
  return permute(reshape(acc, Shape{n, t, v, out_c}), {0, 3, 1, 2});
}

template <typename T>
BasicVar<T> gcn_layer_forward(BasicVar<T> x, const StGcnLayerVars<T>& vars, const PartitionedAdjacency& adj,
                              std::size_t stride, BasicBatchNormState<T>* bn, bool training,
                              std::string_view layer_name) {
  if (adj.normalized.size() != kPartitionSubsets) throw_usage("gcn layer: adjacency is not normalized");
  if (x.shape().size() != 4 || x.shape()[3] != adj.joint_count()) {
    throw_shape(std::string(layer_name) + " input vertices", x.shape(), Shape{adj.joint_count()});
  }
  try {
    BasicVar<T> spatial = gcn_spatial<T>(x, vars.weights, vars.masks, adj.normalized);
    const std::size_t gamma = vars.temporal.shape().at(2);
    BasicVar<T> temporal = conv2d(spatial, vars.temporal, Pair{stride, 1}, Pair{(gamma - 1) / 2, 0});
    return relu(batch_norm(temporal, vars.bn_gamma, vars.bn_beta, bn, training));
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kNumeric) throw;
    throw Error(ErrorKind::kNumeric, std::string(layer_name) + ": " + e.what());
  }
}

Tensor gcn_reference_forward(const Tensor& features, const PartitionedAdjacency& adj, std::span<const Tensor> weights) {
  if (features.rank() != 3) throw_usage("gcn reference: features must be [C,T,V]");
  const std::size_t c = features.dim(0), t = features.dim(1), v = features.dim(2);
  if (adj.raw.size() != weights.size()) throw_usage("gcn reference: one weight per subset required");
  if (adj.joint_count() != v) throw_shape("gcn reference vertices", features.shape(), adj.raw.at(0).shape());
  const std::size_t out_c = weights.empty() ? c : weights[0].dim(1);
  for (const Tensor& w : weights) {
    if (w.shape() != Shape{c, out_c}) throw_shape("gcn reference weight", w.shape(), Shape{c, out_c});
  }
  Tensor out = Tensor::zeros({out_c, t, v});
  for (std::size_t i = 0; i < v; ++i) {
    for (std::size_t k = 0; k < adj.raw.size(); ++k) {
      const Tensor& a = adj.raw[k];
      std::size_t z = 0;
      for (std::size_t j = 0; j < v; ++j) z += a.at({i, j}) != 0.0f ? 1 : 0;
      if (z == 0) continue;
      for (std::size_t j = 0; j < v; ++j) {
        if (a.at({i, j}) == 0.0f) continue;
        for (std::size_t tt = 0; tt < t; ++tt) {
          for (std::size_t o = 0; o < out_c; ++o) {
            double s = 0.0;
            for (std::size_t ci = 0; ci < c; ++ci) {
              s += static_cast<double>(features.at({ci, tt, j})) * weights[k].at({ci, o});
            }
            out.at({o, tt, i}) += static_cast<float>(s / static_cast<double>(z));
          }
        }
      }
    }
  }
  return out;
}

Tensor extract_joint_weights(const Tensor& features) {
  if (features.rank() != 3) throw_usage("extract_joint_weights: features must be [C,T,V], got " + shape_string(features.shape()));
  if (!features.all_finite()) throw_numeric("extract_joint_weights: non-finite feature map");
  Tape tape;
  Var x = tape.constant(features.reshaped({1, features.dim(0), features.dim(1), features.dim(2)}));
  return joint_weights(x).value().reshaped({features.dim(2)});
}

StGcnModel StGcnModel::create(const StGcnConfig& config, PartitionedAdjacency adjacency, Rng& rng) {
  config.validate();
  if (adjacency.raw.size() != kPartitionSubsets) throw_usage("st-gcn model: adjacency must hold raw subsets");
  StGcnModel m;
  m.config = config;
  normalize_adjacency(adjacency, config.alpha);
  m.adjacency = std::move(adjacency);
  const std::size_t v = m.adjacency.joint_count();
  std::size_t in = config.in_channels;
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    const auto& spec = config.layers[i];
    m.layers.push_back(StGcnLayer::create(rng, in, spec.channels, spec.stride, config.temporal_kernel, v,
                                          "stgcn.layer" + std::to_string(i)));
    in = spec.channels;
  }
  m.head_weight = Parameter(he_uniform(rng, {in, config.num_classes}, in), "stgcn.head.weight");
  m.head_bias = Parameter(Tensor::zeros({config.num_classes}), "stgcn.head.bias");
  return m;
}

std::vector<Parameter*> StGcnModel::parameters() {
  std::vector<Parameter*> out;
  for (auto& l : layers) l.collect(out);
  out.push_back(&head_weight);
  out.push_back(&head_bias);
  return out;
}

namespace {

Tensor encode_config(const StGcnConfig& c) {
  std::vector<float> v{static_cast<float>(c.in_channels), static_cast<float>(c.temporal_kernel),
                       static_cast<float>(c.num_classes), c.alpha, static_cast<float>(c.layers.size())};
  for (const auto& l : c.layers) {
    v.push_back(static_cast<float>(l.channels));
    v.push_back(static_cast<float>(l.stride));
  }
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

StGcnConfig decode_config(const Tensor& t) {
  auto d = t.data();
  if (t.rank() != 1 || d.size() < 5) throw_data("st-gcn checkpoint: malformed config tensor");
  auto count = [](float f) {
    if (!(f >= 0.0f) || f != std::floor(f)) throw_data("st-gcn checkpoint: malformed config tensor");
    return static_cast<std::size_t>(f);
  };
  StGcnConfig c;
  c.in_channels = count(d[0]);
  c.temporal_kernel = count(d[1]);
  c.num_classes = count(d[2]);
  c.alpha = d[3];
  const std::size_t layers = count(d[4]);
  if (d.size() != 5 + 2 * layers) throw_data("st-gcn checkpoint: malformed config tensor");
  c.layers.clear();
  for (std::size_t i = 0; i < layers; ++i) c.layers.push_back({count(d[5 + 2 * i]), count(d[6 + 2 * i])});
  c.validate();
  return c;
}

}  // namespace

NamedTensors StGcnModel::save() const {
  NamedTensors out;
  out.emplace_back("stgcn.config", encode_config(config));
  for (std::size_t k = 0; k < adjacency.raw.size(); ++k) out.emplace_back("stgcn.adjacency" + std::to_string(k), adjacency.raw[k]);
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].save(out, "stgcn.layer" + std::to_string(i));
  out.emplace_back("stgcn.head.weight", head_weight.value);
  out.emplace_back("stgcn.head.bias", head_bias.value);
  return out;
}

StGcnModel StGcnModel::load(const NamedTensors& bundle) {
  const StGcnConfig config = decode_config(find_tensor(bundle, "stgcn.config"));
  PartitionedAdjacency adj;
  for (std::size_t k = 0; k < kPartitionSubsets; ++k) adj.raw.push_back(find_tensor(bundle, "stgcn.adjacency" + std::to_string(k)));
  Rng scratch(0);
  StGcnModel m = create(config, std::move(adj), scratch);
  for (std::size_t i = 0; i < m.layers.size(); ++i) m.layers[i].load(bundle, "stgcn.layer" + std::to_string(i));
  load_into(m.head_weight.value, bundle, "stgcn.head.weight");
  load_into(m.head_bias.value, bundle, "stgcn.head.bias");
  return m;
}

Tensor skeleton_input(const SkeletonSequence& seq) {
  const std::size_t t = seq.frames(), m = seq.joints(), c = seq.channels();
  const Tensor center = compute_gravity_center(seq);
  Tensor out = Tensor::zeros({c, t, m});
  for (std::size_t f = 0; f < t; ++f) {
    for (std::size_t j = 0; j < m; ++j) {
      if (!seq.joint_present(f, j)) continue;
      for (std::size_t k = 0; k < c; ++k) out.at({k, f, j}) = seq.coords.at({f, j, k}) - center[k];
    }
  }
  return out;
}

SkeletonBatch make_skeleton_batch(std::span<const std::pair<const SkeletonSequence*, const SkeletonSequence*>> samples) {
  if (samples.empty()) throw_usage("skeleton batch: no samples");
  const Shape ref = samples.front().first->coords.shape();
  auto check = [&](const SkeletonSequence& s) {
    if (s.coords.shape() != ref) throw_data("skeleton batch: sequence shape " + shape_string(s.coords.shape()) +
                                            " differs from " + shape_string(ref));
  };
  const std::size_t per = ref[0] * ref[1] * ref[2];
  const std::size_t n = samples.size();
  std::vector<float> first;
  std::vector<float> second;
  first.reserve(n * per);
  SkeletonBatch b;
  for (std::size_t i = 0; i < n; ++i) {
    check(*samples[i].first);
    const Tensor x = skeleton_input(*samples[i].first);
    first.insert(first.end(), x.data().begin(), x.data().end());
    if (samples[i].second != nullptr) {
      check(*samples[i].second);
      const Tensor y = skeleton_input(*samples[i].second);
      second.insert(second.end(), y.data().begin(), y.data().end());
      b.second_rows.push_back(i);
    }
  }
  b.first = Tensor({n, ref[2], ref[0], ref[1]}, std::move(first));
  if (!b.second_rows.empty()) b.second = Tensor({b.second_rows.size(), ref[2], ref[0], ref[1]}, std::move(second));
  return b;
}

StGcnForward stgcn_forward(Tape& tape, StGcnModel& model, const SkeletonBatch& batch, bool trainable, bool training) {
  const Shape& s = batch.first.shape();
  if (s.size() != 4 || s[1] != model.config.in_channels || s[3] != model.adjacency.joint_count()) {
    throw_shape("st-gcn input", s, Shape{0, model.config.in_channels, 0, model.adjacency.joint_count()});
  }
  if (s[2] < model.config.min_frames()) {
    throw_data("st-gcn input: " + std::to_string(s[2]) + " frames, the stride plan needs at least " +
               std::to_string(model.config.min_frames()));
  }
  std::vector<StGcnLayerVars<float>> vars;
  for (auto& l : model.layers) vars.push_back(bind(tape, l, trainable));
  auto stack = [&](const Tensor& input) {
    Var x = tape.constant(input);
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
      x = gcn_layer_forward<float>(x, vars[i], model.adjacency, model.layers[i].stride, &model.layers[i].bn, training,
                                   "st-gcn layer " + std::to_string(i));
    }
    return x;
  };
  StGcnForward out;
  out.features_first = stack(batch.first);
  out.features = out.features_first;
  if (!batch.second_rows.empty()) {
    out.has_second = true;
    out.features_second = stack(batch.second);
    out.features = merge_pairs(out.features_first, out.features_second, std::span<const std::size_t>(batch.second_rows));
  }
  Var pooled = reduce(ReduceKind::kMean, out.features, {2, 3});
  out.logits = linear(pooled, bind(tape, model.head_weight, trainable), bind(tape, model.head_bias, trainable));
  out.probs = softmax(out.logits);
  return out;
}

StGcnClassification stgcn_classify(StGcnModel& model, const SkeletonSequence& first, const SkeletonSequence* second) {
  const std::pair<const SkeletonSequence*, const SkeletonSequence*> sample{&first, second};
  const SkeletonBatch batch = make_skeleton_batch(std::span(&sample, 1));
  Tape tape;
  const StGcnForward f = stgcn_forward(tape, model, batch, false, false);
  const std::size_t k = model.config.num_classes;
  StGcnClassification r;
  r.logits = f.logits.value().reshaped({k});
  r.probs = f.probs.value().reshaped({k});
  const Shape& fs = f.features.value().shape();
  r.features = f.features.value().reshaped({fs[1], fs[2], fs[3]});
  const std::size_t v = fs[3];
  r.weights.push_back(joint_weights(f.features_first).value().reshaped({v}));
  if (f.has_second) r.weights.push_back(joint_weights(f.features_second).value().reshaped({v}));
  return r;
}

#define SKELFUSE_INSTANTIATE(T)                                                                                    \
  template BasicVar<T> gcn_spatial<T>(BasicVar<T>, std::span<const BasicVar<T>>, std::span<const BasicVar<T>>,    \
                                      std::span<const Tensor>);                                                   \
  template BasicVar<T> gcn_layer_forward<T>(BasicVar<T>, const StGcnLayerVars<T>&, const PartitionedAdjacency&,   \
                                            std::size_t, BasicBatchNormState<T>*, bool, std::string_view);

SKELFUSE_INSTANTIATE(float)
SKELFUSE_INSTANTIATE(double)

#undef SKELFUSE_INSTANTIATE

}  // namespace skelfuse

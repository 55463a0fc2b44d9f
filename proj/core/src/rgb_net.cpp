#include "skelfuse/rgb_net.hpp"

#include <cmath>
#include <string>

#include "skelfuse/error.hpp"

namespace skelfuse {

namespace {

std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (in + 2 * pad < k) return 0;
  return (in + 2 * pad - k) / stride + 1;
}

}  // namespace

void RgbNetConfig::validate() const {
  if (input_side == 0 || stem_channels == 0 || stem_kernel == 0 || stem_stride == 0) {
    throw_usage("rgb config: stem geometry must be positive");
  }
  if (stage_channels.empty() || stage_channels.size() != stage_strides.size()) {
    throw_usage("rgb config: stage channel and stride plans must be non-empty and of equal length");
  }
  for (std::size_t i = 0; i < stage_channels.size(); ++i) {
    if (stage_channels[i] == 0 || stage_strides[i] == 0) throw_usage("rgb config: stage plans must be positive");
  }
  if (blocks_per_stage == 0) throw_usage("rgb config: blocks_per_stage must be positive");
  if (num_classes < 2) throw_usage("rgb config: at least two classes are required");
  if (final_side() < 4) {
    throw_usage("rgb config: final feature map is " + std::to_string(final_side()) + "x" +
                std::to_string(final_side()) + ", at least 4x4 required");
  }
}

std::size_t RgbNetConfig::final_side() const {
  std::size_t s = conv_out(input_side, stem_kernel, stem_stride, stem_kernel / 2);
  for (std::size_t st : stage_strides) s = s == 0 ? 0 : conv_out(s, 3, st, 1);
  return s;
}

ResidualBlock ResidualBlock::create(Rng& rng, std::size_t in, std::size_t out, std::size_t stride,
                                    const std::string& name) {
  ResidualBlock b;
  b.stride = stride;
  b.conv1 = ConvBn::create(rng, in, out, 3, stride, name + ".conv1");
  b.conv2 = ConvBn::create(rng, out, out, 3, 1, name + ".conv2");
  b.has_projection = stride != 1 || in != out;
  if (b.has_projection) b.projection = ConvBn::create(rng, in, out, 1, stride, name + ".proj");
  return b;
}

void ResidualBlock::collect(std::vector<Parameter*>& out) {
  conv1.collect(out);
  conv2.collect(out);
  if (has_projection) projection.collect(out);
}

void ResidualBlock::save(NamedTensors& out, const std::string& prefix) const {
  conv1.save(out, prefix + ".conv1");
  conv2.save(out, prefix + ".conv2");
  if (has_projection) projection.save(out, prefix + ".proj");
}

void ResidualBlock::load(const NamedTensors& in, const std::string& prefix) {
  conv1.load(in, prefix + ".conv1");
  conv2.load(in, prefix + ".conv2");
  if (has_projection) projection.load(in, prefix + ".proj");
}

ResidualBlockVars<float> bind(Tape& tape, ResidualBlock& block, bool trainable) {
  ResidualBlockVars<float> v;
  v.conv1 = bind(tape, block.conv1, trainable);
  v.conv2 = bind(tape, block.conv2, trainable);
  v.has_projection = block.has_projection;
  if (block.has_projection) v.projection = bind(tape, block.projection, trainable);
  return v;
}

ResidualBlockStates<float> states_of(ResidualBlock& block) {
  return {&block.conv1.bn, &block.conv2.bn, block.has_projection ? &block.projection.bn : nullptr};
}

template <typename T>
BasicVar<T> residual_block_forward(BasicVar<T> x, const ResidualBlockVars<T>& vars, std::size_t stride,
                                   const ResidualBlockStates<T>& states, bool training) {
  BasicVar<T> h = relu(conv_bn_forward(x, vars.conv1, Pair{stride, stride}, Pair{1, 1}, states.bn1, training));
  h = conv_bn_forward(h, vars.conv2, Pair{1, 1}, Pair{1, 1}, states.bn2, training);
  BasicVar<T> shortcut =
      vars.has_projection ? conv_bn_forward(x, vars.projection, Pair{stride, stride}, Pair{0, 0}, states.projection, training)
                          : x;
  if (shortcut.shape() != h.shape()) throw_shape("residual shortcut", shortcut.shape(), h.shape());
  return relu(add(h, shortcut));
}

RgbNet RgbNet::create(const RgbNetConfig& config, Rng& rng) {
  config.validate();
  RgbNet net;
  net.config = config;
  net.stem = ConvBn::create(rng, 3, config.stem_channels, config.stem_kernel, config.stem_stride, "rgb.stem");
  std::size_t in = config.stem_channels;
  for (std::size_t s = 0; s < config.stage_channels.size(); ++s) {
    for (std::size_t b = 0; b < config.blocks_per_stage; ++b) {
      const std::size_t stride = b == 0 ? config.stage_strides[s] : 1;
      net.blocks.push_back(ResidualBlock::create(rng, in, config.stage_channels[s], stride,
                                                 "rgb.stage" + std::to_string(s) + ".block" + std::to_string(b)));
      in = config.stage_channels[s];
    }
  }
  net.head_weight = Parameter(he_uniform(rng, {in, config.num_classes}, in), "rgb.head.weight");
  net.head_bias = Parameter(Tensor::zeros({config.num_classes}), "rgb.head.bias");
  return net;
}

std::vector<Parameter*> RgbNet::parameters() {
  std::vector<Parameter*> out;
  stem.collect(out);
  for (auto& b : blocks) b.collect(out);
  out.push_back(&head_weight);
  out.push_back(&head_bias);
  return out;
}

namespace {

std::string block_prefix(const RgbNetConfig& c, std::size_t i) {
  return "rgb.stage" + std::to_string(i / c.blocks_per_stage) + ".block" + std::to_string(i % c.blocks_per_stage);
}

Tensor encode_config(const RgbNetConfig& c) {
  std::vector<float> v{static_cast<float>(c.input_side),       static_cast<float>(c.stem_channels),
                       static_cast<float>(c.stem_kernel),      static_cast<float>(c.stem_stride),
                       static_cast<float>(c.blocks_per_stage), static_cast<float>(c.num_classes),
                       static_cast<float>(c.stage_channels.size())};
  for (std::size_t i = 0; i < c.stage_channels.size(); ++i) {
    v.push_back(static_cast<float>(c.stage_channels[i]));
    v.push_back(static_cast<float>(c.stage_strides[i]));
  }
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

RgbNetConfig decode_config(const Tensor& t) {
  auto d = t.data();
  auto count = [](float f) {
    if (!(f >= 0.0f) || f != std::floor(f)) throw_data("rgb checkpoint: malformed config tensor");
    return static_cast<std::size_t>(f);
  };
  if (t.rank() != 1 || d.size() < 7) throw_data("rgb checkpoint: malformed config tensor");
  RgbNetConfig c;
  c.input_side = count(d[0]);
  c.stem_channels = count(d[1]);
  c.stem_kernel = count(d[2]);
  c.stem_stride = count(d[3]);
  c.blocks_per_stage = count(d[4]);
  c.num_classes = count(d[5]);
  const std::size_t stages = count(d[6]);
  if (d.size() != 7 + 2 * stages) throw_data("rgb checkpoint: malformed config tensor");
  c.stage_channels.clear();
  c.stage_strides.clear();
  for (std::size_t i = 0; i < stages; ++i) {
    c.stage_channels.push_back(count(d[7 + 2 * i]));
    c.stage_strides.push_back(count(d[8 + 2 * i]));
  }
  c.validate();
  return c;
}

}  // namespace

NamedTensors RgbNet::save() const {
  NamedTensors out;
  out.emplace_back("rgb.config", encode_config(config));
  stem.save(out, "rgb.stem");
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].save(out, block_prefix(config, i));
  out.emplace_back("rgb.head.weight", head_weight.value);
  out.emplace_back("rgb.head.bias", head_bias.value);
  return out;
}

RgbNet RgbNet::load(const NamedTensors& bundle) {
  Rng scratch(0);
  RgbNet net = create(decode_config(find_tensor(bundle, "rgb.config")), scratch);
  net.stem.load(bundle, "rgb.stem");
  for (std::size_t i = 0; i < net.blocks.size(); ++i) net.blocks[i].load(bundle, block_prefix(net.config, i));
  load_into(net.head_weight.value, bundle, "rgb.head.weight");
  load_into(net.head_bias.value, bundle, "rgb.head.bias");
  return net;
}

RgbForward rgb_forward(Tape& tape, RgbNet& net, Var images, bool trainable, bool training) {
  const Shape& s = images.shape();
  const std::size_t side = net.config.input_side;
  if (s.size() != 4 || s[1] != 3 || s[2] != side || s[3] != side) throw_shape("rgb input", s, Shape{0, 3, side, side});
  Var x = relu(conv_bn_forward(images, bind(tape, net.stem, trainable), net.stem.stride, net.stem.padding,
                               &net.stem.bn, training));
  for (auto& b : net.blocks) x = residual_block_forward(x, bind(tape, b, trainable), b.stride, states_of(b), training);
  Var pooled = reduce(ReduceKind::kMean, x, {2, 3});
  RgbForward f;
  f.logits = linear(pooled, bind(tape, net.head_weight, trainable), bind(tape, net.head_bias, trainable));
  f.probs = softmax(f.logits);
  return f;
}

RgbClassification rgb_classify(RgbNet& net, const Tensor& images) {
  Tape tape;
  const RgbForward f = rgb_forward(tape, net, tape.constant(images), false, false);
  return {f.logits.value(), f.probs.value()};
}

template BasicVar<float> residual_block_forward<float>(BasicVar<float>, const ResidualBlockVars<float>&, std::size_t,
                                                       const ResidualBlockStates<float>&, bool);
template BasicVar<double> residual_block_forward<double>(BasicVar<double>, const ResidualBlockVars<double>&,
                                                         std::size_t, const ResidualBlockStates<double>&, bool);

}  // namespace skelfuse

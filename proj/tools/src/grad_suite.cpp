#include "skelfuse_cli/grad_suite.hpp"

#include "skelfuse/fusion.hpp"
#include "skelfuse/gradcheck.hpp"
#include "skelfuse/rgb_net.hpp"
#include "skelfuse/stgcn.hpp"
#include "skelfuse/stroi.hpp"

namespace skelfuse::cli {
namespace {

Tensor random(Rng& rng, Shape shape, float lo = -1.0f, float hi = 1.0f) { return uniform_tensor(rng, std::move(shape), lo, hi); }

// Scalar read-out with distinct per-element weights so no gradient cancels by symmetry.
template <typename T>
BasicVar<T> probe_loss(BasicVar<T> y, const Tensor& r) {
  return sum_all(mul(y, as_constant(*y.tape, r)));
}

// Three-vertex path 0-1-2 with vertex 1 nearest the gravity center.
PartitionedAdjacency path_graph() {
  SkeletonTemplate tmpl;
  tmpl.joint_count = 3;
  tmpl.edges = {{0, 1}, {1, 2}};
  tmpl.names = {"a", "b", "c"};
  SkeletonSequence seq;
  seq.coords = Tensor({1, 3, 3}, std::vector<float>{-1.0f, 0.2f, 0.3f, 0.1f, 0.05f, 0.3f, 1.5f, -0.1f, 0.3f});
  PartitionedAdjacency adj = partition_neighbors(tmpl, seq);
  normalize_adjacency(adj);
  return adj;
}

struct GcnFixture {
  PartitionedAdjacency adj = path_graph();
  Tensor x, temporal, gamma, beta, r;
  std::vector<Tensor> weights, masks;

  explicit GcnFixture(Rng& rng) {
    x = random(rng, {2, 2, 4, 3});
    for (std::size_t k = 0; k < kPartitionSubsets; ++k) {
      weights.push_back(random(rng, {2, 3}));
      masks.push_back(random(rng, {3, 3}, 0.5f, 1.5f));
    }
    temporal = random(rng, {3, 3, 3, 1}, -0.5f, 0.5f);
    gamma = random(rng, {3}, 0.5f, 1.5f);
    beta = random(rng, {3}, -0.2f, 0.2f);
    r = random(rng, {2, 3, 4, 3});
  }

  // Evaluates the layer with `which` ("x", "w0", "m<k>") bound to `v` and everything else constant.
  template <typename T>
  BasicVar<T> run(BasicVar<T> v, const std::string& which) const {
    BasicTape<T>& tape = *v.tape;
    StGcnLayerVars<T> vars;
    for (std::size_t k = 0; k < kPartitionSubsets; ++k) {
      vars.weights.push_back(which == "w" + std::to_string(k) ? v : as_constant(tape, weights[k]));
      vars.masks.push_back(which == "m" + std::to_string(k) ? v : as_constant(tape, masks[k]));
    }
    vars.temporal = as_constant(tape, temporal);
    vars.bn_gamma = as_constant(tape, gamma);
    vars.bn_beta = as_constant(tape, beta);
    BasicVar<T> input = which == "x" ? v : as_constant(tape, x);
    return probe_loss(gcn_layer_forward<T>(input, vars, adj, 1, nullptr, true), r);
  }
};

}  // namespace

std::vector<GradCheckResult> run_gradient_suite() {
  Rng rng(7);
  std::vector<GradCheckResult> out;

  {
    const Tensor x = random(rng, {1, 2, 5, 5}), k = random(rng, {3, 2, 3, 3}), r = random(rng, {1, 3, 3, 5});
    out.push_back({"conv2d (input)", finite_diff_check(
                                         [&](auto v) { return probe_loss(conv2d(v, as_constant(*v.tape, k), {2, 1}, {1, 1}), r); }, x)});
    out.push_back({"conv2d (kernel)", finite_diff_check(
                                          [&](auto v) { return probe_loss(conv2d(as_constant(*v.tape, x), v, {2, 1}, {1, 1}), r); }, k)});
  }
  {
    const Tensor a = random(rng, {3, 4}), b = random(rng, {4, 2}), r = random(rng, {3, 2});
    out.push_back({"matmul (left)", finite_diff_check([&](auto v) { return probe_loss(matmul(v, as_constant(*v.tape, b)), r); }, a)});
    out.push_back({"matmul (right)", finite_diff_check([&](auto v) { return probe_loss(matmul(as_constant(*v.tape, a), v), r); }, b)});
  }
  {
    const Tensor x = random(rng, {4, 3, 2, 2}), g = random(rng, {3}, 0.5f, 1.5f), b = random(rng, {3}), r = random(rng, {4, 3, 2, 2});
    out.push_back({"batch_norm (input)", finite_diff_check([&](auto v) {
                     auto& t = *v.tape;
                     using T = typename std::remove_reference_t<decltype(t)>::Tensor::value_type;
                     return probe_loss(batch_norm<T>(v, as_constant(t, g), as_constant(t, b), nullptr, true), r);
                   }, x)});
    out.push_back({"batch_norm (gamma)", finite_diff_check([&](auto v) {
                     auto& t = *v.tape;
                     using T = typename std::remove_reference_t<decltype(t)>::Tensor::value_type;
                     return probe_loss(batch_norm<T>(as_constant(t, x), v, as_constant(t, b), nullptr, true), r);
                   }, g)});
  }
  {
    const Tensor logits = random(rng, {3, 4}, -2.0f, 2.0f);
    const std::vector<int> labels{0, 3, 1};
    const Tensor y = one_hot(labels, 4);
    out.push_back({"softmax + squared error", finite_diff_check([&](auto v) {
                     using T = typename std::remove_reference_t<decltype(v.value())>::value_type;
                     return squared_error(softmax(v), y.cast<T>());
                   }, logits)});
    out.push_back({"cross entropy", finite_diff_check([&](auto v) {
                     using T = typename std::remove_reference_t<decltype(v.value())>::value_type;
                     return cross_entropy(v, y.cast<T>());
                   }, logits)});
  }
  {
    const GcnFixture f(rng);
    out.push_back({"gcn_layer_forward (input)", finite_diff_check([&](auto v) { return f.run(v, "x"); }, f.x)});
    for (std::size_t k = 0; k < kPartitionSubsets; ++k) {
      const std::string w = "w" + std::to_string(k), m = "m" + std::to_string(k);
      out.push_back({"gcn_layer_forward (W_" + std::to_string(k) + ")",
                     finite_diff_check([&](auto v) { return f.run(v, w); }, f.weights[k])});
      out.push_back({"gcn_layer_forward (M_" + std::to_string(k) + ")",
                     finite_diff_check([&](auto v) { return f.run(v, m); }, f.masks[k])});
    }
  }
  {
    Rng init(11);
    ResidualBlock block = ResidualBlock::create(init, 2, 3, 2, "check");
    const Tensor x = random(rng, {2, 2, 4, 4}), r = random(rng, {2, 3, 2, 2});
    out.push_back({"residual_block_forward (input)", finite_diff_check([&](auto v) {
                     auto& t = *v.tape;
                     using T = typename std::remove_reference_t<decltype(v.value())>::value_type;
                     auto unit = [&](const ConvBn& c) {
                       return ConvBnVars<T>{as_constant(t, c.kernel.value), as_constant(t, c.gamma.value),
                                            as_constant(t, c.beta.value)};
                     };
                     ResidualBlockVars<T> vars{unit(block.conv1), unit(block.conv2), block.has_projection,
                                               unit(block.projection)};
                     return probe_loss(residual_block_forward<T>(v, vars, block.stride, {}, true), r);
                   }, x)});
  }
  {
    // Soft attention: features -> joint weights -> part weights -> weighted ST-ROI.
    const SkeletonTemplate tmpl = stick_figure_template();
    const std::vector<std::size_t> parts = tmpl.part_joints();
    const Tensor features = random(rng, {2, 3, 2, 15});
    const Tensor image = random(rng, {2, 3, 10, 10}, 0.0f, 1.0f), r = random(rng, {2, 3, 10, 10});
    out.push_back({"apply_joint_weights (soft)", finite_diff_check([&](auto v) {
                     auto w = part_weights_from_joints(joint_weights(v), std::span<const std::size_t>(parts));
                     auto blocks = reshape(w, Shape{2, parts.size(), 1});
                     return probe_loss(scale_blocks(as_constant(*v.tape, image), blocks), r);
                   }, features)});
  }
  return out;
}

}  // namespace skelfuse::cli

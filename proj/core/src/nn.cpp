#include "skelfuse/nn.hpp"

#include <cmath>

namespace skelfuse {

Tensor he_uniform(Rng& rng, Shape shape, std::size_t fan_in) {
  const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
  return uniform_tensor(rng, std::move(shape), -bound, bound);
}

ConvBn ConvBn::create(Rng& rng, std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
                      const std::string& name) {
  ConvBn u;
  u.kernel = Parameter(he_uniform(rng, {out, in, k, k}, in * k * k), name + ".kernel");
  u.gamma = Parameter(Tensor::ones({out}), name + ".bn.gamma");
  u.beta = Parameter(Tensor::zeros({out}), name + ".bn.beta");
  u.bn = BatchNormState(out);
  u.stride = {stride, stride};
  u.padding = {k / 2, k / 2};
  return u;
}

void ConvBn::collect(std::vector<Parameter*>& out) {
  out.push_back(&kernel);
  out.push_back(&gamma);
  out.push_back(&beta);
}

void ConvBn::save(NamedTensors& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".kernel", kernel.value);
  out.emplace_back(prefix + ".bn.gamma", gamma.value);
  out.emplace_back(prefix + ".bn.beta", beta.value);
  out.emplace_back(prefix + ".bn.running_mean", bn.running_mean);
  out.emplace_back(prefix + ".bn.running_var", bn.running_var);
}

void ConvBn::load(const NamedTensors& in, const std::string& prefix) {
  load_into(kernel.value, in, prefix + ".kernel");
  load_into(gamma.value, in, prefix + ".bn.gamma");
  load_into(beta.value, in, prefix + ".bn.beta");
  load_into(bn.running_mean, in, prefix + ".bn.running_mean");
  load_into(bn.running_var, in, prefix + ".bn.running_var");
}

void load_into(Tensor& dst, const NamedTensors& in, const std::string& name) {
  const Tensor& src = find_tensor(in, name);
  if (src.shape() != dst.shape()) throw_shape("checkpoint tensor '" + name + "'", src.shape(), dst.shape());
  dst = src;
}

}  // namespace skelfuse

#include "skelfuse/optim.hpp"

#include <string>

namespace skelfuse {

void sgd_step(std::span<Parameter* const> params, float lr, float momentum) {
  if (!(lr > 0.0f)) throw_usage("sgd_step: learning rate must be positive, got " + std::to_string(lr));
  if (!(momentum >= 0.0f && momentum < 1.0f)) throw_usage("sgd_step: momentum must lie in [0,1)");
  for (Parameter* p : params) {
    auto value = p->value.data();
    auto grad = p->grad.data();
    auto buf = p->momentum_buffer.data();
    for (std::size_t i = 0; i < value.size(); ++i) {
      buf[i] = momentum * buf[i] + grad[i];
      value[i] -= lr * buf[i];
      grad[i] = 0.0f;
    }
  }
}

void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

}  // namespace skelfuse

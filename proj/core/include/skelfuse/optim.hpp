#pragma once

#include <span>

#include "skelfuse/autograd.hpp"

namespace skelfuse {

/// buffer <- momentum * buffer + grad; value <- value - lr * buffer; grad <- 0.
void sgd_step(std::span<Parameter* const> params, float lr, float momentum);

void zero_grads(std::span<Parameter* const> params);

}  // namespace skelfuse

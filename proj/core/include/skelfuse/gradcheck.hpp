#pragma once

#include <algorithm>
#include <cmath>

#include "skelfuse/autograd.hpp"
#include "skelfuse/tensor.hpp"

namespace skelfuse {

/// Compares the float reverse-mode gradient of `fn` at `input` against central differences.
///
/// `fn` must be generic over the scalar type: it is invoked once with a float variable (analytic
/// path, recorded on a tape and differentiated) and repeatedly with double variables (the
/// difference oracle). Evaluating the oracle in double keeps its rounding error far below the
/// tolerance a float-evaluated central difference could reach at h = 1e-3. Constants the function
/// closes over should be converted with `as_constant<T>`.
///
/// Returns max_i |analytic_i - central_i| / max(|analytic_i|, |central_i|, 1e-6).
/// Throws usage-error if the loss is not scalar or two evaluations at the same point differ.
template <typename Fn>
double finite_diff_check(Fn&& fn, const Tensor& input, double h = 1e-3) {
  if (!(h > 0.0)) throw_usage("finite_diff_check: step must be positive");

  Parameter p(input);
  {
    Tape tape;
    Var x = tape.leaf(p);
    Var loss = fn(x);
    if (loss.value().numel() != 1) throw_usage("finite_diff_check: function must return a scalar");
    tape.backward(loss);
  }

  auto eval = [&fn](const BasicTensor<double>& at) {
    BasicTape<double> tape;
    BasicVar<double> x = tape.constant(at);
    BasicVar<double> loss = fn(x);
    if (loss.value().numel() != 1) throw_usage("finite_diff_check: function must return a scalar");
    return loss.value()[0];
  };

  const BasicTensor<double> base = input.cast<double>();
  if (eval(base) != eval(base)) throw_usage("finite_diff_check: function is not deterministic");

  double worst = 0.0;
  BasicTensor<double> probe = base;
  for (std::size_t i = 0; i < base.numel(); ++i) {
    probe[i] = base[i] + h;
    const double up = eval(probe);
    probe[i] = base[i] - h;
    const double down = eval(probe);
    probe[i] = base[i];
    const double central = (up - down) / (2.0 * h);
    const double analytic = static_cast<double>(p.grad[i]);
    const double denom = std::max({std::abs(analytic), std::abs(central), 1e-6});
    worst = std::max(worst, std::abs(analytic - central) / denom);
  }
  return worst;
}

/// Records a float tensor as a constant on a tape of either precision.
template <typename T>
BasicVar<T> as_constant(BasicTape<T>& tape, const Tensor& value) {
  return tape.constant(value.template cast<T>());
}

}  // namespace skelfuse

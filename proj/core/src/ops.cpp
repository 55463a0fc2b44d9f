#include "skelfuse/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace skelfuse {
namespace {

template <typename T>
using TensorT = BasicTensor<T>;
template <typename T>
using VarT = BasicVar<T>;
template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<Mat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const Mat<T>>;

template <typename T>
BasicTape<T>& same_tape(std::initializer_list<VarT<T>> vars) {
  BasicTape<T>* tape = vars.begin()->tape;
  for (const VarT<T>& v : vars) {
    if (v.tape != tape || tape == nullptr) throw_usage("operands recorded on different tapes");
  }
  return *tape;
}

template <typename T>
VarT<T> emit(const char* op, BasicTape<T>& tape, TensorT<T> out, std::initializer_list<VarT<T>> inputs,
            typename BasicTape<T>::BackwardFn fn) {
  if (!out.all_finite()) throw_numeric(std::string(op) + ": non-finite output");
  return tape.record(std::move(out), inputs, std::move(fn));
}

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// ---------------------------------------------------------------- conv2d

struct ConvGeom {
  std::size_t n, c, h, w, o, kh, kw, sh, sw, ph, pw, ho, wo;
  std::size_t patch() const { return c * kh * kw; }
  std::size_t cols() const { return n * ho * wo; }
};

template <typename T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const std::size_t ncols = g.cols();
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = cols + ((ci * g.kh + ki) * g.kw + kj) * ncols;
        for (std::size_t ni = 0; ni < g.n; ++ni) {
          const T* plane = x + (ni * g.c + ci) * g.h * g.w;
          T* dst = row + ni * g.ho * g.wo;
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.sh + ki) - static_cast<std::ptrdiff_t>(g.ph);
            T* drow = dst + oy * g.wo;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
              std::fill(drow, drow + g.wo, T{0});
              continue;
            }
            const T* srow = plane + iy * g.w;
            for (std::size_t ox = 0; ox < g.wo; ++ox) {
              const std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(ox * g.sw + kj) - static_cast<std::ptrdiff_t>(g.pw);
              drow[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? T{0} : srow[ix];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, const ConvGeom& g, T* x) {
  const std::size_t ncols = g.cols();
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = cols + ((ci * g.kh + ki) * g.kw + kj) * ncols;
        for (std::size_t ni = 0; ni < g.n; ++ni) {
          T* plane = x + (ni * g.c + ci) * g.h * g.w;
          const T* src = row + ni * g.ho * g.wo;
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.sh + ki) - static_cast<std::ptrdiff_t>(g.ph);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
            T* drow = plane + iy * g.w;
            const T* srow = src + oy * g.wo;
            for (std::size_t ox = 0; ox < g.wo; ++ox) {
              const std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(ox * g.sw + kj) - static_cast<std::ptrdiff_t>(g.pw);
              if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) drow[ix] += srow[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
BasicVar<T> conv2d(BasicVar<T> input, BasicVar<T> kernel, Pair stride, Pair padding) {
  BasicTape<T>& tape = same_tape<T>({input, kernel});
  const Shape& xs = input.shape();
  const Shape& ks = kernel.shape();
  if (xs.size() != 4 || ks.size() != 4 || xs[1] != ks[1]) throw_shape("conv2d input vs kernel", xs, ks);
  if (stride.h == 0 || stride.w == 0) throw_usage("conv2d: stride must be positive");
  if (xs[2] + 2 * padding.h < ks[2] || xs[3] + 2 * padding.w < ks[3]) {
    throw_shape("conv2d kernel larger than padded input", xs, ks);
  }
  ConvGeom g{xs[0], xs[1], xs[2], xs[3], ks[0], ks[2], ks[3], stride.h, stride.w, padding.h, padding.w, 0, 0};
  g.ho = (g.h + 2 * g.ph - g.kh) / g.sh + 1;
  g.wo = (g.w + 2 * g.pw - g.kw) / g.sw + 1;

  std::vector<T> cols(g.patch() * g.cols());
  im2col(input.value().data().data(), g, cols.data());
  Mat<T> prod = CMapMat<T>(kernel.value().data().data(), g.o, g.patch()) *
                CMapMat<T>(cols.data(), g.patch(), g.cols());
  TensorT<T> out({g.n, g.o, g.ho, g.wo});
  const std::size_t hw = g.ho * g.wo;
  for (std::size_t oi = 0; oi < g.o; ++oi) {
    for (std::size_t ni = 0; ni < g.n; ++ni) {
      std::copy_n(prod.data() + oi * g.cols() + ni * hw, hw, out.data().data() + (ni * g.o + oi) * hw);
    }
  }
  cols = {};
  return emit<T>("conv2d", tape, std::move(out), {input, kernel},
                 [input, kernel, g](BasicTape<T>& tp, const TensorT<T>& dy) {
                   const std::size_t hw = g.ho * g.wo;
                   Mat<T> dmat(g.o, g.cols());
                   for (std::size_t oi = 0; oi < g.o; ++oi) {
                     for (std::size_t ni = 0; ni < g.n; ++ni) {
                       std::copy_n(dy.data().data() + (ni * g.o + oi) * hw, hw, dmat.data() + oi * g.cols() + ni * hw);
                     }
                   }
                   if (kernel.requires_grad()) {
                     std::vector<T> cols(g.patch() * g.cols());
                     im2col(input.value().data().data(), g, cols.data());
                     TensorT<T> dk(kernel.shape());
                     MapMat<T>(dk.data().data(), g.o, g.patch()).noalias() =
                         dmat * CMapMat<T>(cols.data(), g.patch(), g.cols()).transpose();
                     tp.accumulate(kernel, dk);
                   }
                   if (input.requires_grad()) {
                     Mat<T> dcols =
                         CMapMat<T>(kernel.value().data().data(), g.o, g.patch()).transpose() * dmat;
                     TensorT<T> dx(input.shape());
                     col2im(dcols.data(), g, dx.data().data());
                     tp.accumulate(input, dx);
                   }
                 });
}

template <typename T>
BasicVar<T> matmul(BasicVar<T> a, BasicVar<T> b) {
  BasicTape<T>& tape = same_tape<T>({a, b});
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0]) throw_shape("matmul inner extents", as, bs);
  const std::size_t m = as[0], k = as[1], n = bs[1];
  TensorT<T> out({m, n});
  MapMat<T>(out.data().data(), m, n).noalias() =
      CMapMat<T>(a.value().data().data(), m, k) * CMapMat<T>(b.value().data().data(), k, n);
  return emit<T>("matmul", tape, std::move(out), {a, b}, [a, b, m, k, n](BasicTape<T>& tp, const TensorT<T>& dy) {
    CMapMat<T> g(dy.data().data(), m, n);
    if (a.requires_grad()) {
      TensorT<T> da({m, k});
      MapMat<T>(da.data().data(), m, k).noalias() = g * CMapMat<T>(b.value().data().data(), k, n).transpose();
      tp.accumulate(a, da);
    }
    if (b.requires_grad()) {
      TensorT<T> db({k, n});
      MapMat<T>(db.data().data(), k, n).noalias() = CMapMat<T>(a.value().data().data(), m, k).transpose() * g;
      tp.accumulate(b, db);
    }
  });
}

// ---------------------------------------------------------------- pointwise

namespace {

template <typename T, typename F, typename D>
VarT<T> unary(const char* name, VarT<T> x, F f, D dfdx) {
  BasicTape<T>& tape = *x.tape;
  TensorT<T> out(x.shape());
  const auto in = x.value().data();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return emit<T>(name, tape, std::move(out), {x}, [x, dfdx](BasicTape<T>& tp, const TensorT<T>& dy) {
    TensorT<T> dx(x.shape());
    const auto in = x.value().data();
    for (std::size_t i = 0; i < in.size(); ++i) dx[i] = dy[i] * dfdx(in[i]);
    tp.accumulate(x, dx);
  });
}

template <typename T>
void require_same_shape(const char* op, VarT<T> a, VarT<T> b) {
  if (a.shape() != b.shape()) throw_shape(op, a.shape(), b.shape());
}

}  // namespace

template <typename T>
BasicVar<T> relu(BasicVar<T> x) {
  return unary<T>(
      "relu", x, [](T v) { return v > T{0} ? v : T{0}; }, [](T v) { return v > T{0} ? T{1} : T{0}; });
}

template <typename T>
BasicVar<T> abs(BasicVar<T> x) {
  return unary<T>(
      "abs", x, [](T v) { return std::abs(v); },
      [](T v) { return v > T{0} ? T{1} : (v < T{0} ? T{-1} : T{0}); });
}

template <typename T>
BasicVar<T> sqrt(BasicVar<T> x) {
  for (T v : x.value().data()) {
    if (v < T{0}) throw_numeric("sqrt of negative value");
  }
  return unary<T>(
      "sqrt", x, [](T v) { return std::sqrt(v); },
      [](T v) {
        if (!(v > T{0})) throw_numeric("sqrt gradient undefined at non-positive input");
        return T{0.5} / std::sqrt(v);
      });
}

template <typename T>
BasicVar<T> square(BasicVar<T> x) {
  return unary<T>(
      "square", x, [](T v) { return v * v; }, [](T v) { return T{2} * v; });
}

template <typename T>
BasicVar<T> scale(BasicVar<T> x, T factor) {
  return unary<T>(
      "scale", x, [factor](T v) { return v * factor; }, [factor](T) { return factor; });
}

template <typename T>
BasicVar<T> add(BasicVar<T> a, BasicVar<T> b) {
  BasicTape<T>& tape = same_tape<T>({a, b});
  require_same_shape("add", a, b);
  TensorT<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
  return emit<T>("add", tape, std::move(out), {a, b}, [a, b](BasicTape<T>& tp, const TensorT<T>& dy) {
    tp.accumulate(a, dy);
    tp.accumulate(b, dy);
  });
}

template <typename T>
BasicVar<T> sub(BasicVar<T> a, BasicVar<T> b) {
  BasicTape<T>& tape = same_tape<T>({a, b});
  require_same_shape("sub", a, b);
  TensorT<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
  return emit<T>("sub", tape, std::move(out), {a, b}, [a, b](BasicTape<T>& tp, const TensorT<T>& dy) {
    tp.accumulate(a, dy);
    if (b.requires_grad()) {
      TensorT<T> nd = dy;
      for (T& v : nd.data()) v = -v;
      tp.accumulate(b, nd);
    }
  });
}

template <typename T>
BasicVar<T> mul(BasicVar<T> a, BasicVar<T> b) {
  BasicTape<T>& tape = same_tape<T>({a, b});
  require_same_shape("mul", a, b);
  TensorT<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  return emit<T>("mul", tape, std::move(out), {a, b}, [a, b](BasicTape<T>& tp, const TensorT<T>& dy) {
    if (a.requires_grad()) {
      TensorT<T> da(a.shape());
      for (std::size_t i = 0; i < da.numel(); ++i) da[i] = dy[i] * b.value()[i];
      tp.accumulate(a, da);
    }
    if (b.requires_grad()) {
      TensorT<T> db(b.shape());
      for (std::size_t i = 0; i < db.numel(); ++i) db[i] = dy[i] * a.value()[i];
      tp.accumulate(b, db);
    }
  });
}

template <typename T>
BasicVar<T> elementwise_map(MapKind kind, BasicVar<T> a, const BasicVar<T>* b, T factor) {
  auto second = [&]() -> BasicVar<T> {
    if (b == nullptr) throw_usage("elementwise_map: binary kind needs two operands");
    return *b;
  };
  switch (kind) {
    case MapKind::kRelu: return relu(a);
    case MapKind::kAbs: return abs(a);
    case MapKind::kSqrt: return sqrt(a);
    case MapKind::kSquare: return square(a);
    case MapKind::kAdd: return add(a, second());
    case MapKind::kMul: return mul(a, second());
    case MapKind::kScale: return scale(a, factor);
  }
  throw_usage("elementwise_map: unknown kind");
}

// ---------------------------------------------------------------- reductions

template <typename T>
BasicVar<T> reduce(ReduceKind kind, BasicVar<T> x, std::vector<std::size_t> axes) {
  BasicTape<T>& tape = *x.tape;
  const Shape& s = x.shape();
  std::vector<bool> reduced(s.size(), false);
  for (std::size_t ax : axes) {
    if (ax >= s.size()) throw_usage("reduce: axis " + std::to_string(ax) + " out of range for rank " +
                                    std::to_string(s.size()));
    if (reduced[ax]) throw_usage("reduce: duplicate axis " + std::to_string(ax));
    reduced[ax] = true;
  }
  Shape out_shape;
  std::size_t count = 1;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (reduced[i]) {
      count *= s[i];
    } else {
      out_shape.push_back(s[i]);
    }
  }
  // Map each input element to its output slot through mixed-radix decomposition.
  const auto in_strides = strides_of(s);
  const auto out_strides_full = [&] {
    std::vector<std::size_t> st(s.size(), 0);
    std::size_t acc = 1;
    for (std::size_t i = s.size(); i-- > 0;) {
      if (!reduced[i]) {
        st[i] = acc;
        acc *= s[i];
      }
    }
    return st;
  }();
  const std::size_t n = x.value().numel();
  std::vector<std::size_t> slot(n);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t rem = flat, o = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const std::size_t idx = rem / in_strides[i];
      rem %= in_strides[i];
      o += idx * out_strides_full[i];
    }
    slot[flat] = o;
  }
  const std::size_t out_n = shape_numel(out_shape);
  std::vector<double> acc(out_n, 0.0);
  const auto in = x.value().data();
  for (std::size_t flat = 0; flat < n; ++flat) acc[slot[flat]] += static_cast<double>(in[flat]);
  const double norm = kind == ReduceKind::kMean ? 1.0 / static_cast<double>(count) : 1.0;
  TensorT<T> out(out_shape);
  for (std::size_t i = 0; i < out_n; ++i) out[i] = static_cast<T>(acc[i] * norm);
  return emit<T>("reduce", tape, std::move(out), {x},
                 [x, slot = std::move(slot), norm](BasicTape<T>& tp, const TensorT<T>& dy) {
                   TensorT<T> dx(x.shape());
                   const T f = static_cast<T>(norm);
                   for (std::size_t i = 0; i < slot.size(); ++i) dx[i] = dy[slot[i]] * f;
                   tp.accumulate(x, dx);
                 });
}

// ---------------------------------------------------------------- softmax / losses

template <typename T>
BasicVar<T> softmax(BasicVar<T> x) {
  BasicTape<T>& tape = *x.tape;
  const Shape& s = x.shape();
  if (s.size() != 2) throw_shape("softmax expects [N,C]", s, Shape{0, 0});
  if (!x.value().all_finite()) throw_numeric("softmax: non-finite input");
  const std::size_t rows = s[0], cols = s[1];
  TensorT<T> out(s);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.value().data().data() + r * cols;
    T* o = out.data().data() + r * cols;
    const T mx = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - mx);
      z += static_cast<double>(o[c]);
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] = static_cast<T>(static_cast<double>(o[c]) / z);
  }
  TensorT<T> saved = out;
  return emit<T>("softmax", tape, std::move(out), {x},
                 [x, y = std::move(saved), rows, cols](BasicTape<T>& tp, const TensorT<T>& dy) {
                   TensorT<T> dx(y.shape());
                   for (std::size_t r = 0; r < rows; ++r) {
                     double dot = 0.0;
                     for (std::size_t c = 0; c < cols; ++c) dot += static_cast<double>(dy[r * cols + c]) * y[r * cols + c];
                     for (std::size_t c = 0; c < cols; ++c) {
                       dx[r * cols + c] = static_cast<T>(y[r * cols + c] * (dy[r * cols + c] - dot));
                     }
                   }
                   tp.accumulate(x, dx);
                 });
}

template <typename T>
BasicVar<T> cross_entropy(BasicVar<T> logits, const BasicTensor<T>& onehot) {
  BasicTape<T>& tape = *logits.tape;
  const Shape& s = logits.shape();
  if (s.size() != 2 || onehot.shape() != s) throw_shape("cross_entropy logits vs targets", s, onehot.shape());
  const std::size_t rows = s[0], cols = s[1];
  TensorT<T> probs(s);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = logits.value().data().data() + r * cols;
    const T mx = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(static_cast<double>(in[c] - mx));
    const double log_z = std::log(z) + static_cast<double>(mx);
    for (std::size_t c = 0; c < cols; ++c) {
      probs[r * cols + c] = static_cast<T>(std::exp(static_cast<double>(in[c]) - log_z));
      loss -= static_cast<double>(onehot[r * cols + c]) * (static_cast<double>(in[c]) - log_z);
    }
  }
  TensorT<T> out = TensorT<T>::scalar(static_cast<T>(loss / static_cast<double>(rows)));
  return emit<T>("cross_entropy", tape, std::move(out), {logits},
                 [logits, probs = std::move(probs), onehot, rows](BasicTape<T>& tp, const TensorT<T>& dy) {
                   TensorT<T> dx(probs.shape());
                   const T f = dy[0] / static_cast<T>(rows);
                   for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] = (probs[i] - onehot[i]) * f;
                   tp.accumulate(logits, dx);
                 });
}

// ---------------------------------------------------------------- batch norm

template <typename T>
BasicVar<T> batch_norm(BasicVar<T> x, BasicVar<T> gamma, BasicVar<T> beta, BasicBatchNormState<T>* state,
                       bool training) {
  BasicTape<T>& tape = same_tape<T>({x, gamma, beta});
  const Shape& s = x.shape();
  if (s.size() < 2) throw_shape("batch_norm expects [N,C,...]", s, Shape{0, 0});
  const std::size_t n = s[0], ch = s[1];
  if (gamma.shape() != Shape{ch}) throw_shape("batch_norm gamma", gamma.shape(), Shape{ch});
  if (beta.shape() != Shape{ch}) throw_shape("batch_norm beta", beta.shape(), Shape{ch});
  std::size_t spatial = 1;
  for (std::size_t i = 2; i < s.size(); ++i) spatial *= s[i];
  const std::size_t m = n * spatial;
  if (training && m < 2) throw_usage("batch_norm: training mode needs N*spatial >= 2, got " + std::to_string(m));
  if (!training && state == nullptr) throw_usage("batch_norm: evaluation mode needs running statistics");

  const auto in = x.value().data();
  std::vector<T> mean(ch), inv_std(ch);
  for (std::size_t c = 0; c < ch; ++c) {
    if (training) {
      double sum = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = in.data() + (b * ch + c) * spatial;
        for (std::size_t k = 0; k < spatial; ++k) sum += static_cast<double>(p[k]);
      }
      const double mu = sum / static_cast<double>(m);
      double sq = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = in.data() + (b * ch + c) * spatial;
        for (std::size_t k = 0; k < spatial; ++k) {
          const double d = static_cast<double>(p[k]) - mu;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(m);
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + kBatchNormEps));
      if (state != nullptr) {
        const double unbiased = sq / static_cast<double>(m - 1);
        T& rm = state->running_mean[c];
        T& rv = state->running_var[c];
        rm = static_cast<T>(kBatchNormMomentum * rm + (1.0 - kBatchNormMomentum) * mu);
        rv = static_cast<T>(kBatchNormMomentum * rv + (1.0 - kBatchNormMomentum) * unbiased);
      }
    } else {
      mean[c] = state->running_mean[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(state->running_var[c]) + kBatchNormEps));
    }
  }

  TensorT<T> xhat(s);
  TensorT<T> out(s);
  const auto g = gamma.value().data();
  const auto bt = beta.value().data();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t base = (b * ch + c) * spatial;
      for (std::size_t k = 0; k < spatial; ++k) {
        const T xh = (in[base + k] - mean[c]) * inv_std[c];
        xhat[base + k] = xh;
        out[base + k] = xh * g[c] + bt[c];
      }
    }
  }
  return emit<T>(
      "batch_norm", tape, std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), n, ch, spatial, m,
       training](BasicTape<T>& tp, const TensorT<T>& dy) {
        const auto g = gamma.value().data();
        std::vector<double> sum_dy(ch, 0.0), sum_dy_xhat(ch, 0.0);
        for (std::size_t b = 0; b < n; ++b) {
          for (std::size_t c = 0; c < ch; ++c) {
            const std::size_t base = (b * ch + c) * spatial;
            for (std::size_t k = 0; k < spatial; ++k) {
              sum_dy[c] += static_cast<double>(dy[base + k]);
              sum_dy_xhat[c] += static_cast<double>(dy[base + k]) * xhat[base + k];
            }
          }
        }
        if (gamma.requires_grad()) {
          TensorT<T> dg({ch});
          for (std::size_t c = 0; c < ch; ++c) dg[c] = static_cast<T>(sum_dy_xhat[c]);
          tp.accumulate(gamma, dg);
        }
        if (beta.requires_grad()) {
          TensorT<T> db({ch});
          for (std::size_t c = 0; c < ch; ++c) db[c] = static_cast<T>(sum_dy[c]);
          tp.accumulate(beta, db);
        }
        if (x.requires_grad()) {
          TensorT<T> dx(x.shape());
          const double inv_m = 1.0 / static_cast<double>(m);
          for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t c = 0; c < ch; ++c) {
              const std::size_t base = (b * ch + c) * spatial;
              const double gi = static_cast<double>(g[c]) * inv_std[c];
              for (std::size_t k = 0; k < spatial; ++k) {
                double v = static_cast<double>(dy[base + k]);
                if (training) v -= inv_m * (sum_dy[c] + xhat[base + k] * sum_dy_xhat[c]);
                dx[base + k] = static_cast<T>(gi * v);
              }
            }
          }
          tp.accumulate(x, dx);
        }
      });
}

// ---------------------------------------------------------------- shape ops

template <typename T>
BasicVar<T> reshape(BasicVar<T> x, Shape shape) {
  BasicTape<T>& tape = *x.tape;
  TensorT<T> out = x.value().reshaped(std::move(shape));
  return emit<T>("reshape", tape, std::move(out), {x}, [x](BasicTape<T>& tp, const TensorT<T>& dy) {
    tp.accumulate(x, dy.reshaped(x.shape()));
  });
}

namespace {

// For each output flat index, the matching input flat index.
std::vector<std::size_t> permutation_map(const Shape& in_shape, const std::vector<std::size_t>& perm,
                                         Shape& out_shape) {
  const std::size_t r = in_shape.size();
  out_shape.resize(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = in_shape[perm[i]];
  const auto in_strides = strides_of(in_shape);
  const std::size_t n = shape_numel(in_shape);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < r; ++i) src += idx[i] * in_strides[perm[i]];
    map[flat] = src;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  return map;
}

}  // namespace

template <typename T>
BasicVar<T> permute(BasicVar<T> x, std::vector<std::size_t> perm) {
  BasicTape<T>& tape = *x.tape;
  const Shape& s = x.shape();
  if (perm.size() != s.size()) throw_usage("permute: permutation rank mismatch");
  std::vector<bool> seen(perm.size(), false);
  for (std::size_t p : perm) {
    if (p >= perm.size() || seen[p]) throw_usage("permute: invalid permutation");
    seen[p] = true;
  }
  Shape out_shape;
  auto map = permutation_map(s, perm, out_shape);
  TensorT<T> out(out_shape);
  const auto in = x.value().data();
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = in[map[i]];
  return emit<T>("permute", tape, std::move(out), {x},
                 [x, map = std::move(map)](BasicTape<T>& tp, const TensorT<T>& dy) {
                   TensorT<T> dx(x.shape());
                   for (std::size_t i = 0; i < map.size(); ++i) dx[map[i]] = dy[i];
                   tp.accumulate(x, dx);
                 });
}

template <typename T>
BasicVar<T> tile(BasicVar<T> x, std::vector<std::size_t> reps) {
  BasicTape<T>& tape = *x.tape;
  const Shape& s = x.shape();
  if (reps.size() != s.size()) throw_usage("tile: reps rank mismatch");
  Shape out_shape(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (reps[i] == 0) throw_usage("tile: repetition counts must be positive");
    out_shape[i] = s[i] * reps[i];
  }
  const auto in_strides = strides_of(s);
  const std::size_t n = shape_numel(out_shape);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(s.size(), 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < s.size(); ++i) src += (idx[i] % s[i]) * in_strides[i];
    map[flat] = src;
    for (std::size_t i = s.size(); i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  TensorT<T> out(out_shape);
  const auto in = x.value().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = in[map[i]];
  return emit<T>("tile", tape, std::move(out), {x}, [x, map = std::move(map)](BasicTape<T>& tp, const TensorT<T>& dy) {
    TensorT<T> dx(x.shape());
    for (std::size_t i = 0; i < map.size(); ++i) dx[map[i]] += dy[i];
    tp.accumulate(x, dx);
  });
}

template <typename T>
BasicVar<T> gather_columns(BasicVar<T> x, std::span<const std::size_t> columns) {
  BasicTape<T>& tape = *x.tape;
  const Shape& s = x.shape();
  if (s.size() != 2) throw_shape("gather_columns expects [N,M]", s, Shape{0, 0});
  if (columns.empty()) throw_usage("gather_columns: no columns");
  for (std::size_t c : columns) {
    if (c >= s[1]) throw_usage("gather_columns: column " + std::to_string(c) + " out of range");
  }
  const std::size_t rows = s[0], m = s[1], k = columns.size();
  std::vector<std::size_t> cols(columns.begin(), columns.end());
  TensorT<T> out({rows, k});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = x.value()[r * m + cols[j]];
  }
  return emit<T>("gather_columns", tape, std::move(out), {x},
                 [x, cols = std::move(cols), rows, m, k](BasicTape<T>& tp, const TensorT<T>& dy) {
                   TensorT<T> dx(x.shape());
                   for (std::size_t r = 0; r < rows; ++r) {
                     for (std::size_t j = 0; j < k; ++j) dx[r * m + cols[j]] += dy[r * k + j];
                   }
                   tp.accumulate(x, dx);
                 });
}

template <typename T>
BasicVar<T> rescale_rows_to_max(BasicVar<T> x) {
  BasicTape<T>& tape = *x.tape;
  const Shape& s = x.shape();
  if (s.size() != 2) throw_shape("rescale_rows_to_max expects [N,K]", s, Shape{0, 0});
  const std::size_t rows = s[0], k = s[1];
  TensorT<T> out(s);
  // argmax per row; npos marks the all-ones fallback (gradient zero).
  std::vector<std::size_t> arg(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.value().data().data() + r * k;
    const std::size_t a = static_cast<std::size_t>(std::max_element(in, in + k) - in);
    if (in[a] > T{0}) {
      arg[r] = a;
      for (std::size_t j = 0; j < k; ++j) out[r * k + j] = in[j] / in[a];
    } else {
      arg[r] = static_cast<std::size_t>(-1);
      for (std::size_t j = 0; j < k; ++j) out[r * k + j] = T{1};
    }
  }
  return emit<T>("rescale_rows_to_max", tape, std::move(out), {x},
                 [x, arg = std::move(arg), rows, k](BasicTape<T>& tp, const TensorT<T>& dy) {
                   TensorT<T> dx(x.shape());
                   for (std::size_t r = 0; r < rows; ++r) {
                     if (arg[r] == static_cast<std::size_t>(-1)) continue;
                     const T* in = x.value().data().data() + r * k;
                     const T mx = in[arg[r]];
                     T cross = T{0};
                     for (std::size_t j = 0; j < k; ++j) {
                       dx[r * k + j] = dy[r * k + j] / mx;
                       cross += dy[r * k + j] * in[j];
                     }
                     dx[r * k + arg[r]] -= cross / (mx * mx);
                   }
                   tp.accumulate(x, dx);
                 });
}

template <typename T>
BasicVar<T> scale_blocks(BasicVar<T> image, BasicVar<T> weights) {
  BasicTape<T>& tape = same_tape<T>({image, weights});
  const Shape& s = image.shape();
  const Shape& ws = weights.shape();
  if (s.size() != 4 || ws.size() != 3 || ws[0] != s[0] || s[2] % ws[1] != 0 || s[3] % ws[2] != 0) {
    throw_shape("scale_blocks image vs weights", s, ws);
  }
  const std::size_t n = s[0], c = s[1], h = s[2], w = s[3], k = ws[1], groups = ws[2];
  const std::size_t bh = h / k, bw = w / groups;
  auto weight_index = [=](std::size_t b, std::size_t y, std::size_t x) {
    return (b * k + y / bh) * groups + x / bw;
  };
  TensorT<T> out(s);
  const auto in = image.value().data();
  const auto wt = weights.value().data();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ci = 0; ci < c; ++ci) {
      for (std::size_t y = 0; y < h; ++y) {
        const std::size_t base = ((b * c + ci) * h + y) * w;
        for (std::size_t x = 0; x < w; ++x) out[base + x] = in[base + x] * wt[weight_index(b, y, x)];
      }
    }
  }
  return emit<T>("scale_blocks", tape, std::move(out), {image, weights},
                 [image, weights, n, c, h, w, weight_index](BasicTape<T>& tp, const TensorT<T>& dy) {
                   const auto in = image.value().data();
                   const auto wt = weights.value().data();
                   if (image.requires_grad()) {
                     TensorT<T> dx(image.shape());
                     for (std::size_t b = 0; b < n; ++b) {
                       for (std::size_t ci = 0; ci < c; ++ci) {
                         for (std::size_t y = 0; y < h; ++y) {
                           const std::size_t base = ((b * c + ci) * h + y) * w;
                           for (std::size_t x = 0; x < w; ++x) dx[base + x] = dy[base + x] * wt[weight_index(b, y, x)];
                         }
                       }
                     }
                     tp.accumulate(image, dx);
                   }
                   if (weights.requires_grad()) {
                     std::vector<double> acc(weights.value().numel(), 0.0);
                     for (std::size_t b = 0; b < n; ++b) {
                       for (std::size_t ci = 0; ci < c; ++ci) {
                         for (std::size_t y = 0; y < h; ++y) {
                           const std::size_t base = ((b * c + ci) * h + y) * w;
                           for (std::size_t x = 0; x < w; ++x) {
                             acc[weight_index(b, y, x)] += static_cast<double>(dy[base + x]) * in[base + x];
                           }
                         }
                       }
                     }
                     TensorT<T> dw(weights.shape());
                     for (std::size_t i = 0; i < acc.size(); ++i) dw[i] = static_cast<T>(acc[i]);
                     tp.accumulate(weights, dw);
                   }
                 });
}

template <typename T>
BasicVar<T> merge_pairs(BasicVar<T> first, BasicVar<T> second, std::span<const std::size_t> rows) {
  BasicTape<T>& tape = same_tape<T>({first, second});
  const Shape& a = first.shape();
  const Shape& b = second.shape();
  if (a.empty() || b.size() != a.size() || b[0] != rows.size() ||
      !std::equal(a.begin() + 1, a.end(), b.begin() + 1)) {
    throw_shape("merge_pairs", a, b);
  }
  const std::size_t per = shape_numel(a) / a[0];
  std::vector<std::size_t> dst(rows.begin(), rows.end());
  TensorT<T> out = first.value();
  for (std::size_t r = 0; r < dst.size(); ++r) {
    if (dst[r] >= a[0]) throw_usage("merge_pairs: row index out of range");
    T* o = out.data().data() + dst[r] * per;
    const T* s = second.value().data().data() + r * per;
    for (std::size_t i = 0; i < per; ++i) o[i] = (o[i] + s[i]) * T{0.5};
  }
  return emit<T>("merge_pairs", tape, std::move(out), {first, second},
                 [first, second, dst = std::move(dst), per](BasicTape<T>& tp, const TensorT<T>& dy) {
                   if (first.requires_grad()) {
                     TensorT<T> d1 = dy;
                     for (std::size_t r : dst) {
                       for (std::size_t i = 0; i < per; ++i) d1[r * per + i] *= T{0.5};
                     }
                     tp.accumulate(first, d1);
                   }
                   if (second.requires_grad()) {
                     TensorT<T> d2(second.shape());
                     for (std::size_t r = 0; r < dst.size(); ++r) {
                       for (std::size_t i = 0; i < per; ++i) d2[r * per + i] = dy[dst[r] * per + i] * T{0.5};
                     }
                     tp.accumulate(second, d2);
                   }
                 });
}


template <typename T>
BasicVar<T> overwrite_rows(BasicVar<T> base, BasicVar<T> src, std::span<const std::size_t> rows) {
  BasicTape<T>& tape = same_tape<T>({base, src});
  const Shape& a = base.shape();
  const Shape& b = src.shape();
  if (a.empty() || b.size() != a.size() || b[0] != rows.size() ||
      !std::equal(a.begin() + 1, a.end(), b.begin() + 1)) {
    throw_shape("overwrite_rows", a, b);
  }
  const std::size_t per = shape_numel(a) / a[0];
  std::vector<std::size_t> dst(rows.begin(), rows.end());
  std::vector<bool> taken(a[0], false);
  TensorT<T> out = base.value();
  for (std::size_t r = 0; r < dst.size(); ++r) {
    if (dst[r] >= a[0] || taken[dst[r]]) throw_usage("overwrite_rows: row indices must be distinct and in range");
    taken[dst[r]] = true;
    std::copy_n(src.value().data().data() + r * per, per, out.data().data() + dst[r] * per);
  }
  return emit<T>("overwrite_rows", tape, std::move(out), {base, src},
                 [base, src, dst = std::move(dst), per](BasicTape<T>& tp, const TensorT<T>& dy) {
                   if (base.requires_grad()) {
                     TensorT<T> d1 = dy;
                     for (std::size_t r : dst) std::fill_n(d1.data().data() + r * per, per, T{0});
                     tp.accumulate(base, d1);
                   }
                   if (src.requires_grad()) {
                     TensorT<T> d2(src.shape());
                     for (std::size_t r = 0; r < dst.size(); ++r) {
                       std::copy_n(dy.data().data() + dst[r] * per, per, d2.data().data() + r * per);
                     }
                     tp.accumulate(src, d2);
                   }
                 });
}

template <typename T>
BasicVar<T> stack_last(std::span<const BasicVar<T>> parts) {
  if (parts.empty()) throw_usage("stack_last: no operands");
  BasicTape<T>& tape = *parts.front().tape;
  const Shape s = parts.front().shape();
  for (const auto& p : parts) {
    if (p.tape != &tape) throw_usage("operands recorded on different tapes");
    if (p.shape() != s) throw_shape("stack_last", p.shape(), s);
  }
  const std::size_t g = parts.size();
  const std::size_t n = shape_numel(s);
  Shape os = s;
  os.push_back(g);
  TensorT<T> out(os);
  for (std::size_t k = 0; k < g; ++k) {
    const auto src = parts[k].value().data();
    for (std::size_t i = 0; i < n; ++i) out[i * g + k] = src[i];
  }
  if (!out.all_finite()) throw_numeric("stack_last: non-finite output");
  std::vector<BasicVar<T>> inputs(parts.begin(), parts.end());
  return tape.record_many(std::move(out), inputs, [inputs, g, n](BasicTape<T>& tp, const TensorT<T>& dy) {
    for (std::size_t k = 0; k < g; ++k) {
      if (!inputs[k].requires_grad()) continue;
      TensorT<T> d(inputs[k].shape());
      for (std::size_t i = 0; i < n; ++i) d[i] = dy[i * g + k];
      tp.accumulate(inputs[k], d);
    }
  });
}

#define SKELFUSE_INSTANTIATE_OPS(T)                                                                          \
  template BasicVar<T> conv2d<T>(BasicVar<T>, BasicVar<T>, Pair, Pair);                                      \
  template BasicVar<T> matmul<T>(BasicVar<T>, BasicVar<T>);                                                  \
  template BasicVar<T> relu<T>(BasicVar<T>);                                                                 \
  template BasicVar<T> abs<T>(BasicVar<T>);                                                                  \
  template BasicVar<T> sqrt<T>(BasicVar<T>);                                                                 \
  template BasicVar<T> square<T>(BasicVar<T>);                                                               \
  template BasicVar<T> add<T>(BasicVar<T>, BasicVar<T>);                                                     \
  template BasicVar<T> sub<T>(BasicVar<T>, BasicVar<T>);                                                     \
  template BasicVar<T> mul<T>(BasicVar<T>, BasicVar<T>);                                                     \
  template BasicVar<T> scale<T>(BasicVar<T>, T);                                                             \
  template BasicVar<T> elementwise_map<T>(MapKind, BasicVar<T>, const BasicVar<T>*, T);                      \
  template BasicVar<T> reduce<T>(ReduceKind, BasicVar<T>, std::vector<std::size_t>);                         \
  template BasicVar<T> softmax<T>(BasicVar<T>);                                                              \
  template BasicVar<T> cross_entropy<T>(BasicVar<T>, const BasicTensor<T>&);                                 \
  template BasicVar<T> batch_norm<T>(BasicVar<T>, BasicVar<T>, BasicVar<T>, BasicBatchNormState<T>*, bool);  \
  template BasicVar<T> reshape<T>(BasicVar<T>, Shape);                                                       \
  template BasicVar<T> permute<T>(BasicVar<T>, std::vector<std::size_t>);                                    \
  template BasicVar<T> tile<T>(BasicVar<T>, std::vector<std::size_t>);                                       \
  template BasicVar<T> gather_columns<T>(BasicVar<T>, std::span<const std::size_t>);                         \
  template BasicVar<T> rescale_rows_to_max<T>(BasicVar<T>);                                                  \
  template BasicVar<T> scale_blocks<T>(BasicVar<T>, BasicVar<T>);                                            \
  template BasicVar<T> merge_pairs<T>(BasicVar<T>, BasicVar<T>, std::span<const std::size_t>);               \
  template BasicVar<T> overwrite_rows<T>(BasicVar<T>, BasicVar<T>, std::span<const std::size_t>);            \
  template BasicVar<T> stack_last<T>(std::span<const BasicVar<T>>);

SKELFUSE_INSTANTIATE_OPS(float)
SKELFUSE_INSTANTIATE_OPS(double)

#undef SKELFUSE_INSTANTIATE_OPS

}  // namespace skelfuse

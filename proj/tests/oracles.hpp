#pragma once

// Naive loop implementations the library is checked against. Kept deliberately simple.

#include <cmath>
#include <cstddef>
#include <vector>

#include "skelfuse/rng.hpp"
#include "skelfuse/tensor.hpp"

namespace oracle {

using skelfuse::Shape;
using skelfuse::Tensor;

inline Tensor random(skelfuse::Rng& rng, Shape shape, float lo = -1.0f, float hi = 1.0f) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline Tensor conv2d(const Tensor& x, const Tensor& k, std::size_t sh, std::size_t sw, std::size_t ph, std::size_t pw) {
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const std::size_t oh = (h + 2 * ph - kh) / sh + 1, ow = (w + 2 * pw - kw) / sw + 1;
  Tensor out({n, co, oh, ow});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          double acc = 0.0;
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const long iy = static_cast<long>(y * sh + u) - static_cast<long>(ph);
                const long ix = static_cast<long>(xx * sw + v) - static_cast<long>(pw);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                acc += static_cast<double>(x.at({b, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)})) *
                       static_cast<double>(k.at({o, c, u, v}));
              }
          out.at({b, o, y, xx}) = static_cast<float>(acc);
        }
  return out;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += static_cast<double>(a.at({i, p})) * static_cast<double>(b.at({p, j}));
      out.at({i, j}) = static_cast<float>(acc);
    }
  return out;
}

/// Sum or mean over the listed axes of a tensor of any rank; reduced axes are dropped.
inline Tensor reduce(const Tensor& x, const std::vector<std::size_t>& axes, bool mean) {
  const Shape& s = x.shape();
  std::vector<bool> reduced(s.size(), false);
  for (std::size_t a : axes) reduced[a] = true;
  Shape out_shape;
  for (std::size_t a = 0; a < s.size(); ++a) {
    if (!reduced[a]) out_shape.push_back(s[a]);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<double> acc(skelfuse::shape_numel(out_shape), 0.0);
  std::size_t count = 1;
  for (std::size_t a : axes) count *= s[a];
  std::vector<std::size_t> idx(s.size(), 0);
  for (std::size_t flat = 0; flat < x.numel(); ++flat) {
    std::size_t rem = flat;
    for (std::size_t a = s.size(); a-- > 0;) {
      idx[a] = rem % s[a];
      rem /= s[a];
    }
    std::size_t o = 0;
    for (std::size_t a = 0; a < s.size(); ++a) {
      if (!reduced[a]) o = o * s[a] + idx[a];
    }
    acc[o] += static_cast<double>(x[flat]);
  }
  Tensor out(out_shape);
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(mean ? acc[i] / static_cast<double>(count) : acc[i]);
  return out;
}

/// Mean over t and c of sqrt(Y^2) for a [C,T,V] feature map.
inline Tensor joint_weights(const Tensor& f) {
  const std::size_t c = f.dim(0), t = f.dim(1), v = f.dim(2);
  Tensor out({v});
  for (std::size_t j = 0; j < v; ++j) {
    double acc = 0.0;
    for (std::size_t a = 0; a < c; ++a)
      for (std::size_t b = 0; b < t; ++b) {
        const double y = f.at({a, b, j});
        acc += std::sqrt(y * y);
      }
    out[j] = static_cast<float>(acc / static_cast<double>(c * t));
  }
  return out;
}

inline double max_rel_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double x = a[i], y = b[i];
    const double denom = std::max({std::abs(x), std::abs(y), 1.0});
    worst = std::max(worst, std::abs(x - y) / denom);
  }
  return worst;
}

}  // namespace oracle

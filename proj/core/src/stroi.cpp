#include "skelfuse/stroi.hpp"

#include <algorithm>
#include <cmath>

#include "skelfuse/error.hpp"

namespace skelfuse {
namespace {

Tensor transposed(const Tensor& m) {
  Tensor t({m.dim(1), m.dim(0)});
  for (std::size_t i = 0; i < m.dim(0); ++i) {
    for (std::size_t j = 0; j < m.dim(1); ++j) t.at({j, i}) = m.at({i, j});
  }
  return t;
}

// Separable bilinear resize of [N,C,H,W] as two constant matrix products; a no-op along an axis
// whose size already matches.
template <typename T>
BasicVar<T> resize_batch(BasicVar<T> x, std::size_t out_h, std::size_t out_w) {
  const Shape s = x.shape();
  const std::size_t n = s[0], c = s[1], h = s[2], w = s[3];
  BasicTape<T>& tape = *x.tape;
  if (w != out_w) {
    BasicVar<T> rx = tape.constant(transposed(resize_matrix(w, out_w)).template cast<T>());
    x = reshape(matmul(reshape(x, Shape{n * c * h, w}), rx), Shape{n, c, h, out_w});
  }
  if (h != out_h) {
    BasicVar<T> ry = tape.constant(transposed(resize_matrix(h, out_h)).template cast<T>());
    BasicVar<T> t = reshape(permute(x, {0, 1, 3, 2}), Shape{n * c * out_w, h});
    x = permute(reshape(matmul(t, ry), Shape{n, c, out_w, out_h}), {0, 1, 3, 2});
  }
  return x;
}

}  // namespace

void FrameSequence::validate() const {
  if (frames.empty()) throw_data("frame sequence '" + source + "' is empty");
  for (const Image& f : frames) {
    if (f.height != frames[0].height || f.width != frames[0].width || f.pixels.size() != f.height * f.width * 3) {
      throw_data("frame sequence '" + source + "' has inconsistent frame sizes");
    }
  }
}

std::vector<std::size_t> temporal_sample_indices(std::size_t frames, std::size_t samples) {
  if (frames == 0 || samples == 0) throw_usage("temporal_sample_indices: T and L must be positive");
  std::vector<std::size_t> idx(samples);
  for (std::size_t l = 1; l <= samples; ++l) {
    idx[l - 1] = std::min((2 * l - 1) * frames / (2 * samples), frames - 1);
  }
  return idx;
}

std::vector<std::size_t> jittered_sample_indices(std::size_t frames, std::size_t samples, Rng& rng) {
  if (frames == 0 || samples == 0) throw_usage("jittered_sample_indices: T and L must be positive");
  std::vector<std::size_t> idx(samples);
  for (std::size_t l = 0; l < samples; ++l) {
    const std::size_t lo = l * frames / samples;
    const std::size_t hi = std::max(lo + 1, (l + 1) * frames / samples);
    idx[l] = std::min(lo + static_cast<std::size_t>(rng.below(hi - lo)), frames - 1);
  }
  return idx;
}

Tensor crop_patch(const Image& frame, float cx, float cy, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw_usage("crop_patch: patch side must be positive");
  Tensor out = Tensor::zeros({3, height, width});
  const long top = std::lround(cy) - static_cast<long>(height / 2);
  const long left = std::lround(cx) - static_cast<long>(width / 2);
  for (std::size_t y = 0; y < height; ++y) {
    const long sy = top + static_cast<long>(y);
    if (sy < 0 || sy >= static_cast<long>(frame.height)) continue;
    for (std::size_t x = 0; x < width; ++x) {
      const long sx = left + static_cast<long>(x);
      if (sx < 0 || sx >= static_cast<long>(frame.width)) continue;
      for (std::size_t c = 0; c < 3; ++c) {
        out.at({c, y, x}) = static_cast<float>(frame.at(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx), c)) / 255.0f;
      }
    }
  }
  return out;
}

StRoiGrid assemble_stroi(const FrameSequence& frames, std::span<const JointTrack> tracks, const SkeletonTemplate& tmpl,
                         std::size_t samples, std::size_t patch, std::size_t subject_slots,
                         const std::vector<std::size_t>* frame_indices) {
  frames.validate();
  if (samples == 0 || patch == 0) throw_usage("assemble_stroi: L and P must be positive");
  if (subject_slots == 0 || subject_slots > 2) throw_usage("assemble_stroi: one or two subject slots supported");
  if (patch % subject_slots != 0) throw_usage("assemble_stroi: patch side must split evenly between subjects");
  if (tracks.size() > subject_slots) throw_usage("assemble_stroi: more tracks than subject slots");
  if (tmpl.parts.empty()) throw_data("assemble_stroi: template defines no body parts");
  const std::size_t parts = tmpl.parts.size();
  const std::vector<std::size_t> idx = frame_indices != nullptr ? *frame_indices : temporal_sample_indices(frames.size(), samples);
  if (idx.size() != samples) throw_usage("assemble_stroi: frame index count differs from L");
  const std::size_t pw = patch / subject_slots;

  StRoiGrid g;
  g.parts = parts;
  g.samples = samples;
  g.patch = patch;
  g.subject_slots = subject_slots;
  g.image = Tensor::zeros({3, parts * patch, samples * patch});
  const std::size_t out_w = samples * patch;
  for (std::size_t s = 0; s < tracks.size(); ++s) {
    const JointTrack& tr = tracks[s];
    if (tr.frames() != frames.size()) {
      throw_data("assemble_stroi: track has " + std::to_string(tr.frames()) + " frames, video has " +
                 std::to_string(frames.size()));
    }
    for (const BodyPart& p : tmpl.parts) {
      if (p.joint >= tr.joints()) {
        throw_data("assemble_stroi: part '" + p.name + "' references joint " + std::to_string(p.joint) +
                   " but the track has " + std::to_string(tr.joints()) + " joints");
      }
    }
    for (std::size_t j = 0; j < parts; ++j) {
      const std::size_t joint = tmpl.parts[j].joint;
      for (std::size_t l = 0; l < samples; ++l) {
        const std::size_t t = idx[l];
        if (t >= frames.size()) throw_usage("assemble_stroi: frame index out of range");
        if (tr.confidence.at({t, joint}) <= 0.0f) continue;
        const Tensor crop = crop_patch(frames.frames[t], tr.pixels.at({t, joint, 0}), tr.pixels.at({t, joint, 1}), patch, pw);
        const std::size_t x0 = s * samples * pw + l * pw;
        for (std::size_t c = 0; c < 3; ++c) {
          for (std::size_t y = 0; y < patch; ++y) {
            const float* src = crop.data().data() + (c * patch + y) * pw;
            float* dst = g.image.data().data() + (c * parts * patch + j * patch + y) * out_w + x0;
            std::copy_n(src, pw, dst);
          }
        }
      }
    }
  }
  return g;
}

Tensor map_vertex_weights_to_parts(const Tensor& weights, const SkeletonTemplate& tmpl) {
  if (weights.rank() != 1) throw_usage("map_vertex_weights_to_parts: weights must be a vector");
  const std::vector<std::size_t> joints = tmpl.part_joints();
  for (std::size_t j : joints) {
    if (j >= weights.numel()) throw_data("map_vertex_weights_to_parts: part joint " + std::to_string(j) + " out of range");
  }
  Tape tape;
  Var w = tape.constant(weights.reshaped({1, weights.numel()}));
  return part_weights_from_joints(w, std::span<const std::size_t>(joints)).value().reshaped({joints.size()});
}

WeightedStRoi apply_joint_weights(const StRoiGrid& grid, const Tensor& part_weights) {
  const std::size_t k = grid.parts, slots = grid.subject_slots;
  Tensor w;
  if (part_weights.shape() == Shape{k}) {
    w = Tensor({k, slots});
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t s = 0; s < slots; ++s) w.at({j, s}) = part_weights[j];
    }
  } else if (part_weights.shape() == Shape{k, slots}) {
    w = part_weights;
  } else {
    throw_shape("apply_joint_weights part weights", part_weights.shape(), Shape{k, slots});
  }
  for (float v : w.data()) {
    if (v < 0.0f) throw_usage("apply_joint_weights: negative part weight");
  }
  const Shape& s = grid.image.shape();
  Tape tape;
  Var img = tape.constant(grid.image.reshaped({1, s[0], s[1], s[2]}));
  Var wv = tape.constant(w.reshaped({1, k, slots}));
  return {scale_blocks(img, wv).value().reshaped(s), w};
}

Tensor resize_matrix(std::size_t in, std::size_t out) {
  if (in == 0 || out == 0) throw_usage("resize_matrix: sizes must be positive");
  Tensor m = Tensor::zeros({out, in});
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const std::size_t i0 = static_cast<std::size_t>(std::floor(src));
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    const double frac = src - static_cast<double>(i0);
    m.at({o, i0}) += static_cast<float>(1.0 - frac);
    if (frac > 0.0) m.at({o, i1}) += static_cast<float>(frac);
  }
  return m;
}

Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  if (image.rank() != 3) throw_usage("resize_bilinear: image must be [C,H,W]");
  Tape tape;
  Var x = tape.constant(image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)}));
  return resize_batch(x, out_h, out_w).value().reshaped({image.dim(0), out_h, out_w});
}

ChannelStats ChannelStats::compute(std::span<const Tensor> images) {
  ChannelStats st;
  if (images.empty()) return st;
  std::array<double, 3> sum{}, sq{};
  std::array<std::size_t, 3> count{};
  for (const Tensor& img : images) {
    if (img.rank() != 3 || img.dim(0) != 3) throw_usage("ChannelStats: images must be [3,H,W]");
    const std::size_t plane = img.dim(1) * img.dim(2);
    for (std::size_t c = 0; c < 3; ++c) {
      const float* p = img.data().data() + c * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum[c] += p[i];
        sq[c] += static_cast<double>(p[i]) * p[i];
      }
      count[c] += plane;
    }
  }
  for (std::size_t c = 0; c < 3; ++c) {
    const double mean = sum[c] / static_cast<double>(count[c]);
    const double var = std::max(0.0, sq[c] / static_cast<double>(count[c]) - mean * mean);
    st.mean[c] = static_cast<float>(mean);
    st.stddev[c] = var > 0.0 ? static_cast<float>(std::sqrt(var)) : 1.0f;
  }
  return st;
}

template <typename T>
BasicVar<T> preprocess_batch(BasicVar<T> images, std::size_t side, const ChannelStats& stats) {
  const Shape s = images.shape();
  if (s.size() != 4 || s[1] != 3) throw_shape("preprocess input", s, Shape{0, 3, 0, 0});
  if (side == 0) throw_usage("preprocess: side must be positive");
  const std::size_t n = s[0];
  BasicTape<T>& tape = *images.tape;
  BasicVar<T> x = resize_batch(images, side, side);
  BasicTensor<T> inv({n, 3, side, side});
  BasicTensor<T> shift({n, 3, side, side});
  const std::size_t plane = side * side;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t c = 0; c < 3; ++c) {
      const T sd = static_cast<T>(stats.stddev[c]);
      const T mu = static_cast<T>(stats.mean[c]);
      for (std::size_t i = 0; i < plane; ++i) {
        inv[(b * 3 + c) * plane + i] = T{1} / sd;
        shift[(b * 3 + c) * plane + i] = -mu / sd;
      }
    }
  }
  return add(mul(x, tape.constant(std::move(inv))), tape.constant(std::move(shift)));
}

Tensor preprocess_for_net(const Tensor& image, std::size_t side, const ChannelStats& stats) {
  if (image.rank() != 3) throw_usage("preprocess_for_net: image must be [3,H,W]");
  Tape tape;
  Var x = tape.constant(image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)}));
  return preprocess_batch(x, side, stats).value().reshaped({3, side, side});
}

template BasicVar<float> preprocess_batch<float>(BasicVar<float>, std::size_t, const ChannelStats&);
template BasicVar<double> preprocess_batch<double>(BasicVar<double>, std::size_t, const ChannelStats&);

}  // namespace skelfuse

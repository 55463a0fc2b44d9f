#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "skelfuse/autograd.hpp"
#include "skelfuse/ops.hpp"
#include "skelfuse/rng.hpp"
#include "skelfuse/skeleton.hpp"

namespace skelfuse {

/// 8-bit RGB image, row-major H x W x 3.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w) : height(h), width(w), pixels(h * w * 3, 0) {}
  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }
};

struct FrameSequence {
  std::vector<Image> frames;
  std::string source;

  std::size_t size() const { return frames.size(); }
  /// data-error unless non-empty with uniform frame size.
  void validate() const;
};

/// 2-D pixel positions of every joint per frame; confidence 0 marks a missing detection.
struct JointTrack {
  Tensor pixels;      // [T, M, 2] as (x, y)
  Tensor confidence;  // [T, M]

  std::size_t frames() const { return pixels.dim(0); }
  std::size_t joints() const { return pixels.dim(1); }
};

/// Body-part crops tiled as rows (parts) by columns (sampled frames). With two subject slots each
/// performer fills one half-width sub-grid, left then right.
struct StRoiGrid {
  Tensor image;  // [3, parts * patch, samples * patch], values in [0, 1]
  std::size_t parts = 0;
  std::size_t samples = 0;
  std::size_t patch = 0;
  std::size_t subject_slots = 1;
};

struct WeightedStRoi {
  Tensor image;
  Tensor weights_used;  // [parts, subject_slots]
};

/// Centers of L equal bins over [0, T): floor((2l - 1) T / (2L)) for l = 1..L, clamped to T - 1.
std::vector<std::size_t> temporal_sample_indices(std::size_t frames, std::size_t samples);

/// One uniformly drawn frame inside each of the L bins (the random frame selection augmentation).
std::vector<std::size_t> jittered_sample_indices(std::size_t frames, std::size_t samples, Rng& rng);

/// Crop of `height` x `width` pixels whose top-left corner is (round(cy) - height/2, round(cx) - width/2).
/// Out-of-frame pixels are zero. Returns [3, height, width] in [0, 1].
Tensor crop_patch(const Image& frame, float cx, float cy, std::size_t height, std::size_t width);

/// Builds the grid from one track per performer (at most `subject_slots`). Missing performers and
/// confidence-0 joints leave zero blocks. `frame_indices` overrides the bin-center sampling.
StRoiGrid assemble_stroi(const FrameSequence& frames, std::span<const JointTrack> tracks, const SkeletonTemplate& tmpl,
                         std::size_t samples, std::size_t patch, std::size_t subject_slots = 1,
                         const std::vector<std::size_t>* frame_indices = nullptr);

/// w [M] -> [parts]: the anchor joint's weight per part, divided by the maximum; all ones when the
/// maximum is not positive.
Tensor map_vertex_weights_to_parts(const Tensor& weights, const SkeletonTemplate& tmpl);

/// Multiplies every pixel of row band j (in slot g) by part_weights[j] (or [j, g]).
/// part_weights is [parts] or [parts, subject_slots]; a negative entry is a usage-error.
WeightedStRoi apply_joint_weights(const StRoiGrid& grid, const Tensor& part_weights);

/// Differentiable joint-to-part mapping: [N,M] -> [N,parts], rows rescaled to max 1.
template <typename T>
BasicVar<T> part_weights_from_joints(BasicVar<T> joint_weights, std::span<const std::size_t> part_joints) {
  return rescale_rows_to_max(gather_columns(joint_weights, part_joints));
}

/// Row-major [out, in] bilinear interpolation matrix with half-pixel centers and edge clamping.
Tensor resize_matrix(std::size_t in, std::size_t out);

/// [C,H,W] -> [C,out_h,out_w].
Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w);

struct ChannelStats {
  std::array<float, 3> mean{0.0f, 0.0f, 0.0f};
  std::array<float, 3> stddev{1.0f, 1.0f, 1.0f};

  /// Population statistics over every pixel of the given [3,H,W] images; a zero deviation becomes 1.
  static ChannelStats compute(std::span<const Tensor> images);
};

/// [N,3,H,W] -> [N,3,S,S]: bilinear resize, then (x - mean_c) / stddev_c. Differentiable.
template <typename T>
BasicVar<T> preprocess_batch(BasicVar<T> images, std::size_t side, const ChannelStats& stats);

/// Single image [3,H,W] -> [3,S,S].
Tensor preprocess_for_net(const Tensor& image, std::size_t side, const ChannelStats& stats);

}  // namespace skelfuse

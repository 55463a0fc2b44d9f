#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "skelfuse/skeleton.hpp"
#include "skelfuse/stroi.hpp"

namespace skelfuse {

struct SyntheticSpec {
  std::size_t num_classes = 4;  // 2..5
  std::size_t samples_per_class = 100;
  std::size_t frames = 24;
  std::size_t image_size = 96;
  float pixel_noise = 0.04f;    // std of additive pixel noise, fraction of full scale
  float joint_noise = 0.01f;    // std of coordinate jitter, body units
  std::size_t distractors = 2;  // clutter squares at inactive parts
  bool two_subject = false;
  float train_fraction = 0.8f;
  std::uint64_t seed = 42;

  void validate() const;
};

/// Class names in label order: wave-left-hand, wave-right-hand, kick-left, nod, kick-right.
const std::vector<std::string>& synthetic_class_names();
/// Joint whose motion defines the class.
std::size_t synthetic_active_joint(std::size_t label);
/// Marker colour of a class (the palette distractors draw from).
std::array<std::uint8_t, 3> synthetic_class_color(std::size_t label);

struct SyntheticSample {
  std::vector<SkeletonSequence> skeletons;  // one per performer
  std::vector<JointTrack> tracks;
  FrameSequence frames;
  int label = 0;
};

/// Sample `index` of the dataset; labels cycle through the classes. Depends only on (spec, index).
/// Without `with_frames` the frame sequence is left empty.
SyntheticSample generate_synthetic_sample(const SyntheticSpec& spec, std::size_t index, bool with_frames = true);

/// Renders only the listed frames of sample `index` (others stay black); each rendered frame is
/// identical to the one generate_synthetic_sample produces.
FrameSequence render_synthetic_frames(const SyntheticSpec& spec, std::size_t index, std::span<const std::size_t> which);

struct Sample {
  std::vector<SkeletonSequence> skeletons;
  std::vector<JointTrack> tracks;
  int label = 0;
};

struct Dataset {
  SkeletonTemplate tmpl;
  std::vector<Sample> samples;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::size_t num_classes = 0;
  std::vector<std::string> class_names;
};

/// Stratified train/test split drawn from the spec seed.
void split_dataset(Dataset& dataset, float train_fraction, std::uint64_t seed);

/// Skeletons and tracks for every sample (frames are regenerated on demand), plus the split.
Dataset generate_synthetic_dataset(const SyntheticSpec& spec);

/// Unweighted ST-ROI image of one sample, [3, parts * patch, samples * patch]. Only the sampled
/// frames are rendered. `frame_indices` overrides the bin-center sampling.
Tensor synthetic_grid(const SyntheticSpec& spec, const Dataset& dataset, std::size_t index, std::size_t samples,
                      std::size_t patch, const std::vector<std::size_t>* frame_indices = nullptr);

/// synthetic_grid for every sample of the dataset.
std::vector<Tensor> build_synthetic_grids(const SyntheticSpec& spec, const Dataset& dataset, std::size_t samples,
                                          std::size_t patch);

}  // namespace skelfuse

#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "skelfuse/tensor.hpp"

namespace skelfuse {

struct BodyPart {
  std::string name;
  std::size_t joint = 0;
};

/// Joint set, bone list and the joint that anchors each ST-ROI body part.
struct SkeletonTemplate {
  std::size_t joint_count = 0;
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  std::vector<std::string> names;
  std::vector<BodyPart> parts;

  /// data-error unless edges connect {0..M-1} without self-loops or duplicates and every part
  /// references an existing joint.
  void validate() const;

  std::vector<std::size_t> part_joints() const;
  std::vector<std::vector<std::size_t>> neighbors() const;

  /// Text form: first line M, then "i j" per edge, then "part <name> <joint>" lines.
  /// Blank lines and lines starting with '#' are ignored.
  static SkeletonTemplate parse(std::istream& in);
  static SkeletonTemplate load(const std::filesystem::path& path);
  void write(std::ostream& out) const;
};

/// 15-joint stick figure used by the synthetic generator. Parts: head, left_hand, right_hand,
/// left_foot, right_foot.
SkeletonTemplate stick_figure_template();

namespace joints {
inline constexpr std::size_t kPelvis = 0, kNeck = 1, kHead = 2, kLeftShoulder = 3, kLeftElbow = 4,
                             kLeftHand = 5, kRightShoulder = 6, kRightElbow = 7, kRightHand = 8,
                             kLeftHip = 9, kLeftKnee = 10, kLeftFoot = 11, kRightHip = 12,
                             kRightKnee = 13, kRightFoot = 14;
}

/// One performer's joint coordinates over time. All-zero joint rows mark missing detections.
struct SkeletonSequence {
  Tensor coords;  // [T, M, C]
  int label = 0;
  std::size_t subject_count = 1;

  std::size_t frames() const { return coords.dim(0); }
  std::size_t joints() const { return coords.dim(1); }
  std::size_t channels() const { return coords.dim(2); }
  bool joint_present(std::size_t t, std::size_t j) const;
};

/// Mean of all non-missing joint coordinates over every frame; data-error when nothing is present.
Tensor compute_gravity_center(const SkeletonSequence& seq);

/// Per-joint mean position over the frames where the joint is present, [M, C]; `present[j]` is
/// false for joints never observed.
Tensor joint_mean_positions(const SkeletonSequence& seq, std::vector<bool>* present = nullptr);

inline constexpr std::size_t kPartitionSubsets = 3;
inline constexpr float kDefaultAlpha = 0.001f;

/// Spatial partition into {root, centripetal, centrifugal} subsets over 1-hop neighborhoods.
struct PartitionedAdjacency {
  std::vector<Tensor> raw;         // kPartitionSubsets matrices [M, M] in {0,1}
  std::vector<Tensor> normalized;  // empty until normalize_adjacency runs
  float alpha = kDefaultAlpha;

  std::size_t joint_count() const { return raw.empty() ? 0 : raw.front().dim(0); }
};

/// Row i of subset k marks the neighbors j of vertex i in that subset: k=0 the vertex itself,
/// k=1 neighbors whose distance to the gravity center is <= that of i (ties included),
/// k=2 neighbors strictly farther. Distances use per-joint mean positions over the sequence.
PartitionedAdjacency partition_neighbors(const SkeletonTemplate& tmpl, const SkeletonSequence& seq);

/// normalized_k[i][j] = A_k[i][j] / sqrt((d_i + alpha)(d_j + alpha)), d = row sums of A_k.
void normalize_adjacency(PartitionedAdjacency& adj, float alpha = kDefaultAlpha);

}  // namespace skelfuse

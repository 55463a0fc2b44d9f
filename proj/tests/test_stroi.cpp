#include <doctest.h>

#include <cstdlib>
#include <filesystem>

#include "oracles.hpp"
#include "skelfuse/data_io.hpp"
#include "skelfuse/stroi.hpp"
#include "skelfuse/synthetic.hpp"

using namespace skelfuse;

#ifndef SKELFUSE_TEST_DATA
#define SKELFUSE_TEST_DATA "tests/data"
#endif

namespace {

const std::size_t kPartY[5] = {4, 12, 20, 28, 36};

std::array<std::uint8_t, 3> block_color(std::size_t part, std::size_t subject, std::size_t frame) {
  return {static_cast<std::uint8_t>(20 + 40 * part), static_cast<std::uint8_t>(60 + 120 * subject),
          static_cast<std::uint8_t>(30 + 60 * frame)};
}

// Frames with an 8x8 square of a unique colour around each part joint of each subject.
struct ColourScene {
  FrameSequence frames;
  std::vector<JointTrack> tracks;

  ColourScene(std::size_t subjects, std::size_t t_count) {
    const SkeletonTemplate tmpl = stick_figure_template();
    for (std::size_t s = 0; s < subjects; ++s) {
      JointTrack tr;
      tr.pixels = Tensor({t_count, 15, 2});
      tr.confidence = Tensor::ones({t_count, 15});
      tracks.push_back(tr);
    }
    for (std::size_t t = 0; t < t_count; ++t) {
      Image img(40, 40);
      for (std::size_t s = 0; s < subjects; ++s) {
        const std::size_t cx = 10 + 20 * s;
        for (std::size_t p = 0; p < 5; ++p) {
          const std::size_t joint = tmpl.parts[p].joint;
          tracks[s].pixels.at({t, joint, 0}) = static_cast<float>(cx);
          tracks[s].pixels.at({t, joint, 1}) = static_cast<float>(kPartY[p]);
          const auto col = block_color(p, s, t);
          for (std::size_t y = kPartY[p] - 4; y < kPartY[p] + 4; ++y)
            for (std::size_t x = cx - 4; x < cx + 4; ++x)
              for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = col[c];
        }
      }
      frames.frames.push_back(img);
    }
  }
};

}  // namespace

TEST_CASE("temporal sampling picks bin centres") {
  CHECK(temporal_sample_indices(10, 5) == std::vector<std::size_t>{1, 3, 5, 7, 9});
  CHECK(temporal_sample_indices(5, 5) == std::vector<std::size_t>{0, 1, 2, 3, 4});
  CHECK(temporal_sample_indices(3, 5) == std::vector<std::size_t>{0, 0, 1, 2, 2});
  for (std::size_t t = 1; t < 40; ++t) {
    for (std::size_t l = 1; l < 9; ++l) {
      const auto idx = temporal_sample_indices(t, l);
      REQUIRE(idx.size() == l);
      for (std::size_t i = 0; i < l; ++i) {
        CHECK(idx[i] < t);
        if (i > 0) CHECK(idx[i] >= idx[i - 1]);
        if (i > 0 && t >= l) CHECK(idx[i] > idx[i - 1]);
      }
    }
  }
}

TEST_CASE("jittered sampling stays inside each bin") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto idx = jittered_sample_indices(24, 5, rng);
    for (std::size_t l = 0; l < 5; ++l) {
      CHECK(idx[l] >= l * 24 / 5);
      CHECK(idx[l] < (l + 1) * 24 / 5);
    }
  }
}

TEST_CASE("crop geometry and zero padding") {
  Image img(100, 100);
  for (std::size_t y = 0; y < 100; ++y)
    for (std::size_t x = 0; x < 100; ++x) {
      img.at(y, x, 0) = static_cast<std::uint8_t>(y);
      img.at(y, x, 1) = static_cast<std::uint8_t>(x);
      img.at(y, x, 2) = 255;
    }
  const Tensor p = crop_patch(img, 50.0f, 50.0f, 48, 48);
  CHECK(p.shape() == Shape{3, 48, 48});
  CHECK(p.at({0, 0, 0}) == 26.0f / 255.0f);
  CHECK(p.at({1, 0, 0}) == 26.0f / 255.0f);
  CHECK(p.at({0, 47, 47}) == 73.0f / 255.0f);

  const Tensor corner = crop_patch(img, 0.0f, 0.0f, 48, 48);
  for (std::size_t y = 0; y < 48; ++y)
    for (std::size_t x = 0; x < 48; ++x) {
      const bool outside = y < 24 || x < 24;
      CHECK((corner.at({2, y, x}) == 0.0f) == outside);
    }
}

TEST_CASE("grid sizes for the full-scale geometries") {
  const ColourScene scene(1, 5);
  const SkeletonTemplate tmpl = stick_figure_template();
  CHECK(assemble_stroi(scene.frames, scene.tracks, tmpl, 5, 96).image.shape() == Shape{3, 480, 480});
  CHECK(assemble_stroi(scene.frames, scene.tracks, tmpl, 5, 48).image.shape() == Shape{3, 240, 240});
  CHECK(assemble_stroi(scene.frames, scene.tracks, tmpl, 5, 48, 2).image.shape() == Shape{3, 240, 240});
}

TEST_CASE("block (j,l) holds part j of sampled frame l") {
  const ColourScene scene(1, 5);
  const StRoiGrid g = assemble_stroi(scene.frames, scene.tracks, stick_figure_template(), 5, 8);
  for (std::size_t j = 0; j < 5; ++j)
    for (std::size_t l = 0; l < 5; ++l) {
      const auto col = block_color(j, 0, l);
      for (std::size_t y = j * 8; y < (j + 1) * 8; ++y)
        for (std::size_t x = l * 8; x < (l + 1) * 8; ++x)
          for (std::size_t c = 0; c < 3; ++c) CHECK(g.image.at({c, y, x}) == static_cast<float>(col[c]) / 255.0f);
    }
}

TEST_CASE("two-subject layout puts each performer in its own half") {
  const ColourScene scene(2, 5);
  const StRoiGrid g = assemble_stroi(scene.frames, scene.tracks, stick_figure_template(), 5, 8, 2);
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t l = 0; l < 5; ++l) {
        const auto col = block_color(j, s, l);
        for (std::size_t y = j * 8; y < (j + 1) * 8; ++y)
          for (std::size_t x = s * 20 + l * 4; x < s * 20 + (l + 1) * 4; ++x)
            for (std::size_t c = 0; c < 3; ++c) CHECK(g.image.at({c, y, x}) == static_cast<float>(col[c]) / 255.0f);
      }

  const std::filesystem::path golden = std::filesystem::path(SKELFUSE_TEST_DATA) / "two_subject_golden.png";
  if (std::getenv("SKELFUSE_REGEN_GOLDEN") != nullptr) export_stroi_png(g, golden);
  const Image expected = read_png(golden);
  REQUIRE(expected.height == 40);
  REQUIRE(expected.width == 40);
  for (std::size_t y = 0; y < 40; ++y)
    for (std::size_t x = 0; x < 40; ++x)
      for (std::size_t c = 0; c < 3; ++c) REQUIRE(expected.at(y, x, c) == to_byte(g.image.at({c, y, x})));

  const std::vector<JointTrack> only_first{scene.tracks[0]};
  const StRoiGrid half = assemble_stroi(scene.frames, only_first, stick_figure_template(), 5, 8, 2);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 40; ++y)
      for (std::size_t x = 20; x < 40; ++x) CHECK(half.image.at({c, y, x}) == 0.0f);
}

TEST_CASE("missing detections leave zero blocks; bad part joints are data errors") {
  ColourScene scene(1, 5);
  scene.tracks[0].confidence.at({2, joints::kLeftHand}) = 0.0f;
  const StRoiGrid g = assemble_stroi(scene.frames, scene.tracks, stick_figure_template(), 5, 8);
  for (std::size_t y = 8; y < 16; ++y)
    for (std::size_t x = 16; x < 24; ++x) CHECK(g.image.at({0, y, x}) == 0.0f);

  SkeletonTemplate bad = stick_figure_template();
  bad.parts[0].joint = 20;
  try {
    (void)assemble_stroi(scene.frames, scene.tracks, bad, 5, 8);
    FAIL("expected data error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kData);
  }
}

TEST_CASE("a sentinel pixel under joint j of sampled frame l lands at the centre of block (j,l)") {
  const SkeletonTemplate tmpl = stick_figure_template();
  const std::size_t t_count = 7, samples = 3, patch = 6;
  const auto picked = temporal_sample_indices(t_count, samples);
  for (std::size_t j = 0; j < 5; ++j)
    for (std::size_t l = 0; l < samples; ++l) {
      FrameSequence frames;
      JointTrack tr;
      tr.pixels = Tensor({t_count, 15, 2});
      tr.confidence = Tensor::ones({t_count, 15});
      for (std::size_t t = 0; t < t_count; ++t) {
        frames.frames.emplace_back(30, 30);
        for (std::size_t p = 0; p < 5; ++p) {
          tr.pixels.at({t, tmpl.parts[p].joint, 0}) = static_cast<float>(5 + 4 * p);
          tr.pixels.at({t, tmpl.parts[p].joint, 1}) = static_cast<float>(7 + 3 * p);
        }
      }
      const std::size_t sx = 5 + 4 * j, sy = 7 + 3 * j;
      frames.frames[picked[l]].at(sy, sx, 1) = 201;
      const std::vector<JointTrack> tracks{tr};
      const StRoiGrid g = assemble_stroi(frames, tracks, tmpl, samples, patch);
      for (std::size_t y = 0; y < 5 * patch; ++y)
        for (std::size_t x = 0; x < samples * patch; ++x) {
          const bool at_sentinel = y == j * patch + patch / 2 && x == l * patch + patch / 2;
          if (at_sentinel) {
            CHECK(g.image.at({1, y, x}) == 201.0f / 255.0f);
          } else if (g.image.at({1, y, x}) != 0.0f) {
            // Neighbouring parts may overlap the sentinel pixel; those copies must be other blocks
            // of the same frame.
            CHECK(x / patch == l);
          }
        }
    }
}

TEST_CASE("vertex to part weights") {
  const SkeletonTemplate tmpl = stick_figure_template();
  CHECK(map_vertex_weights_to_parts(Tensor::ones({15}), tmpl) == Tensor::ones({5}));
  Tensor w({15}, 2.0f);
  w[joints::kLeftHand] = 4.0f;
  CHECK(map_vertex_weights_to_parts(w, tmpl) == Tensor({5}, std::vector<float>{0.5f, 1.0f, 0.5f, 0.5f, 0.5f}));
  CHECK(map_vertex_weights_to_parts(Tensor::zeros({15}), tmpl) == Tensor::ones({5}));
}

TEST_CASE("weighting: identity, annihilation, exact halving, linearity, negative weights") {
  Rng rng(21);
  StRoiGrid g{oracle::random(rng, {3, 20, 20}, 0.0f, 1.0f), 5, 5, 4, 1};
  CHECK(apply_joint_weights(g, Tensor::ones({5})).image == g.image);

  Tensor w = Tensor::ones({5});
  w[3] = 0.0f;
  w[0] = 0.5f;
  const Tensor out = apply_joint_weights(g, w).image;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t x = 0; x < 20; ++x) {
      for (std::size_t y = 12; y < 16; ++y) CHECK(out.at({c, y, x}) == 0.0f);
      for (std::size_t y = 0; y < 4; ++y) CHECK(out.at({c, y, x}) == g.image.at({c, y, x}) * 0.5f);
    }

  const Tensor ww = oracle::random(rng, {5}, 0.0f, 1.0f);
  StRoiGrid b{oracle::random(rng, {3, 20, 20}, 0.0f, 1.0f), 5, 5, 4, 1};
  StRoiGrid sum = g;
  for (std::size_t i = 0; i < sum.image.numel(); ++i) sum.image[i] += b.image[i];
  const Tensor lhs = apply_joint_weights(sum, ww).image;
  const Tensor ra = apply_joint_weights(g, ww).image, rb = apply_joint_weights(b, ww).image;
  for (std::size_t i = 0; i < lhs.numel(); ++i) CHECK(std::abs(lhs[i] - (ra[i] + rb[i])) < 1e-6);
  StRoiGrid scaled = g;
  for (std::size_t i = 0; i < scaled.image.numel(); ++i) scaled.image[i] *= 3.0f;
  const Tensor ls = apply_joint_weights(scaled, ww).image;
  for (std::size_t i = 0; i < ls.numel(); ++i) CHECK(std::abs(ls[i] - 3.0f * ra[i]) < 1e-6);

  w[1] = -0.1f;
  try {
    (void)apply_joint_weights(g, w);
    FAIL("expected usage error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kUsage);
  }
}

TEST_CASE("two-slot weights scale each subject half separately") {
  StRoiGrid g{Tensor::ones({3, 10, 10}), 5, 5, 2, 2};
  Tensor w = Tensor::ones({5, 2});
  w.at({1, 1}) = 0.5f;
  const Tensor out = apply_joint_weights(g, w).image;
  CHECK(out.at({0, 2, 4}) == 1.0f);
  CHECK(out.at({0, 2, 5}) == 0.5f);
  CHECK(out.at({0, 4, 9}) == 1.0f);
}

TEST_CASE("bilinear resize") {
  Rng rng(5);
  const Tensor x = oracle::random(rng, {3, 7, 9});
  CHECK(max_abs_diff(resize_bilinear(x, 7, 9), x) < 1e-6);
  const Tensor checker({1, 2, 2}, std::vector<float>{0.0f, 1.0f, 1.0f, 0.0f});
  CHECK(resize_bilinear(checker, 1, 1)[0] == doctest::Approx(0.5));
  const Tensor m = resize_matrix(6, 4);
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 6; ++c) s += m.at({r, c});
    CHECK(s == doctest::Approx(1.0));
  }
}

TEST_CASE("normalization with dataset statistics") {
  const Tensor constant({3, 4, 4}, 0.5f);
  ChannelStats stats;
  stats.mean = {0.2f, 0.5f, 0.7f};
  stats.stddev = {0.5f, 1.0f, 0.25f};
  const Tensor out = preprocess_for_net(constant, 8, stats);
  CHECK(out.shape() == Shape{3, 8, 8});
  for (std::size_t i = 0; i < 64; ++i) {
    CHECK(out[i] == doctest::Approx(0.6));
    CHECK(out[64 + i] == doctest::Approx(0.0));
    CHECK(out[128 + i] == doctest::Approx(-0.8));
  }
  std::vector<Tensor> imgs{Tensor({3, 2, 2}, 1.0f), Tensor({3, 2, 2}, 3.0f)};
  const ChannelStats s = ChannelStats::compute(imgs);
  CHECK(s.mean[0] == doctest::Approx(2.0));
  CHECK(s.stddev[0] == doctest::Approx(1.0));
  std::vector<Tensor> flat{Tensor({3, 2, 2}, 1.0f)};
  CHECK(ChannelStats::compute(flat).stddev[1] == 1.0f);
}

TEST_CASE("synthetic ST-ROI: the class marker shows only where the active joint is in reach") {
  SyntheticSpec spec;
  spec.pixel_noise = 0.0f;
  const Dataset d = generate_synthetic_dataset(spec);
  const SkeletonTemplate tmpl = stick_figure_template();
  const auto picked = temporal_sample_indices(spec.frames, 5);
  // Crop half-side, marker half-side and one pixel of rounding.
  const float reach = 8.0f + 4.0f + 1.0f;
  for (std::size_t i = 0; i < 12; ++i) {
    const Tensor grid = synthetic_grid(spec, d, i, 5, 16);
    const auto label = static_cast<std::size_t>(d.samples[i].label);
    const std::size_t active = synthetic_active_joint(label);
    const Tensor& px = d.samples[i].tracks[0].pixels;
    const auto col = synthetic_class_color(label);
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t l = 0; l < 5; ++l) {
        bool found = false;
        for (std::size_t y = j * 16; y < (j + 1) * 16 && !found; ++y)
          for (std::size_t x = l * 16; x < (l + 1) * 16 && !found; ++x) {
            found = to_byte(grid.at({0, y, x})) == col[0] && to_byte(grid.at({1, y, x})) == col[1] &&
                    to_byte(grid.at({2, y, x})) == col[2];
          }
        const std::size_t joint = tmpl.parts[j].joint;
        if (joint == active) {
          CHECK(found);
        } else if (found) {
          const std::size_t t = picked[l];
          CHECK(std::abs(px.at({t, joint, 0}) - px.at({t, active, 0})) <= reach);
          CHECK(std::abs(px.at({t, joint, 1}) - px.at({t, active, 1})) <= reach);
        }
      }
  }
}

#include "skelfuse/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "skelfuse/error.hpp"
#include "skelfuse/rng.hpp"

namespace skelfuse {
namespace {

constexpr std::size_t kJoints = 15;
constexpr double kUpperArm = 0.30, kForearm = 0.28, kThigh = 0.45, kShin = 0.45, kNeckToHead = 0.25;

const std::array<std::array<std::uint8_t, 3>, 5> kPalette{{
    {230, 40, 40}, {40, 210, 60}, {50, 90, 240}, {235, 215, 40}, {210, 60, 220}}};

struct Motion {
  double phase = 0.0;
  double cycles = 2.0;
  double amplitude = 1.0;
  std::array<double, 5> fidget_phase{};  // head, left arm, right arm, left leg, right leg
};

constexpr double kFidget = 0.12;  // radians of idle sway on every part

struct SampleParams {
  int label = 0;
  std::vector<Motion> motions;  // per performer
  std::vector<double> offset_x, offset_y;
  std::vector<std::size_t> distractor_parts;
  std::vector<std::size_t> distractor_colors;
  double background = 40.0;
};

std::size_t performers(const SyntheticSpec& spec) { return spec.two_subject ? 2 : 1; }

SampleParams draw_params(const SyntheticSpec& spec, std::size_t index) {
  Rng rng = Rng(spec.seed).fork(index);
  SampleParams p;
  p.label = static_cast<int>(index % spec.num_classes);
  for (std::size_t s = 0; s < performers(spec); ++s) {
    Motion m;
    m.phase = rng.uniform_double() * 2.0 * std::numbers::pi;
    m.cycles = 1.5 + rng.uniform_double();
    m.amplitude = 0.8 + 0.4 * rng.uniform_double();
    for (double& f : m.fidget_phase) f = rng.uniform_double() * 2.0 * std::numbers::pi;
    p.motions.push_back(m);
    p.offset_x.push_back(rng.uniform(-4.0f, 4.0f));
    p.offset_y.push_back(rng.uniform(-3.0f, 3.0f));
  }
  // Distractors sit on parts other than the active one. A part that is another class's active
  // part gets that class's colour, so the clutter mimics a competing class; other parts get a
  // random colour from the other classes.
  const std::size_t active = synthetic_active_joint(static_cast<std::size_t>(p.label));
  std::vector<std::size_t> parts;
  for (std::size_t j : stick_figure_template().part_joints()) {
    if (j != active) parts.push_back(j);
  }
  rng.shuffle(parts);
  std::vector<std::size_t> colors;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    if (c != static_cast<std::size_t>(p.label)) colors.push_back(c);
  }
  for (std::size_t d = 0; d < std::min(spec.distractors, parts.size()); ++d) {
    p.distractor_parts.push_back(parts[d]);
    std::size_t color = colors[rng.below(colors.size())];
    for (std::size_t c : colors) {
      if (synthetic_active_joint(c) == parts[d]) color = c;
    }
    p.distractor_colors.push_back(color);
  }
  p.background = 30.0 + 25.0 * rng.uniform_double();
  return p;
}

struct Vec2 {
  double x, y;
};

// Limb direction at angle `a` from straight down, swung towards `side` (-1 left, +1 right).
Vec2 limb(double side, double a, double len) { return {side * std::sin(a) * len, -std::cos(a) * len}; }

// Body-space joint positions (x right, y up) of one performer at frame t.
std::array<Vec2, kJoints> pose(int label, const Motion& m, std::size_t t, std::size_t frames) {
  const double s = std::sin(2.0 * std::numbers::pi * m.cycles * static_cast<double>(t) / static_cast<double>(frames) + m.phase);
  std::array<Vec2, kJoints> j{};
  j[joints::kPelvis] = {0.0, 1.0};
  j[joints::kNeck] = {0.0, 1.55};
  const double u = 2.0 * std::numbers::pi * static_cast<double>(t) / static_cast<double>(frames);
  auto fidget = [&](std::size_t part) { return kFidget * std::sin(u + m.fidget_phase[part]); };
  double nod = fidget(0);
  if (label == 3) nod = 0.55 * m.amplitude * s;
  j[joints::kHead] = {j[joints::kNeck].x + std::sin(nod) * kNeckToHead, j[joints::kNeck].y + std::cos(nod) * kNeckToHead};
  for (int side : {-1, 1}) {
    const bool left = side < 0;
    const bool wave = (left && label == 0) || (!left && label == 1);
    const bool kick = (left && label == 2) || (!left && label == 4);
    const double arm_idle = fidget(left ? 1 : 2), leg_idle = fidget(left ? 3 : 4);
    double upper = 0.25 + 0.5 * arm_idle, fore = 0.15 + arm_idle, thigh = 0.08 + 0.5 * leg_idle, shin = 0.05 + leg_idle;
    if (wave) {
      upper = 0.35 + 0.5 * 0.6 * m.amplitude * s;
      fore = 0.45 + 0.6 * m.amplitude * s;
    }
    if (kick) {
      thigh = 0.25 + 0.5 * 0.5 * m.amplitude * s;
      shin = 0.25 + 0.5 * m.amplitude * s;
    }
    const std::size_t sh = left ? joints::kLeftShoulder : joints::kRightShoulder;
    const std::size_t el = left ? joints::kLeftElbow : joints::kRightElbow;
    const std::size_t ha = left ? joints::kLeftHand : joints::kRightHand;
    const std::size_t hi = left ? joints::kLeftHip : joints::kRightHip;
    const std::size_t kn = left ? joints::kLeftKnee : joints::kRightKnee;
    const std::size_t fo = left ? joints::kLeftFoot : joints::kRightFoot;
    j[sh] = {side * 0.2, 1.5};
    Vec2 d = limb(side, upper, kUpperArm);
    j[el] = {j[sh].x + d.x, j[sh].y + d.y};
    d = limb(side, fore, kForearm);
    j[ha] = {j[el].x + d.x, j[el].y + d.y};
    j[hi] = {side * 0.1, 0.95};
    d = limb(side, thigh, kThigh);
    j[kn] = {j[hi].x + d.x, j[hi].y + d.y};
    d = limb(side, shin, kShin);
    j[fo] = {j[kn].x + d.x, j[kn].y + d.y};
  }
  return j;
}

struct Projection {
  double scale, cx, cy;
};

Projection projection_of(const SyntheticSpec& spec, const SampleParams& p, std::size_t subject) {
  const double size = static_cast<double>(spec.image_size);
  if (!spec.two_subject) return {size * 40.0 / 96.0, size / 2.0 + p.offset_x[subject], size / 2.0 + p.offset_y[subject]};
  const double cx = size * (subject == 0 ? 0.28 : 0.72);
  return {size * 30.0 / 96.0, cx + p.offset_x[subject] * 0.5, size / 2.0 + p.offset_y[subject]};
}

void paint(Image& img, long y, long x, const std::array<std::uint8_t, 3>& c) {
  if (y < 0 || x < 0 || y >= static_cast<long>(img.height) || x >= static_cast<long>(img.width)) return;
  for (std::size_t k = 0; k < 3; ++k) img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), k) = c[k];
}

void draw_segment(Image& img, double x0, double y0, double x1, double y1, const std::array<std::uint8_t, 3>& c) {
  const double len = std::hypot(x1 - x0, y1 - y0);
  const int steps = std::max(1, static_cast<int>(std::ceil(len * 2.0)));
  for (int i = 0; i <= steps; ++i) {
    const double f = static_cast<double>(i) / steps;
    const long x = std::lround(x0 + f * (x1 - x0));
    const long y = std::lround(y0 + f * (y1 - y0));
    paint(img, y, x, c);
    paint(img, y, x + 1, c);
  }
}

void draw_square(Image& img, double cx, double cy, long side, const std::array<std::uint8_t, 3>& c) {
  const long x0 = std::lround(cx) - side / 2;
  const long y0 = std::lround(cy) - side / 2;
  for (long y = y0; y < y0 + side; ++y) {
    for (long x = x0; x < x0 + side; ++x) paint(img, y, x, c);
  }
}

Image render_frame(const SyntheticSpec& spec, std::size_t index, const SampleParams& p,
                   const std::vector<JointTrack>& tracks, std::size_t t) {
  Image img(spec.image_size, spec.image_size);
  const auto bg = static_cast<std::uint8_t>(p.background);
  std::fill(img.pixels.begin(), img.pixels.end(), bg);
  const SkeletonTemplate tmpl = stick_figure_template();
  // Bones sit barely above the background, inside the pixel noise.
  const auto b = static_cast<std::uint8_t>(p.background + 12.0);
  const std::array<std::uint8_t, 3> bone{b, b, b};
  const long marker = std::max<long>(3, std::lround(static_cast<double>(spec.image_size) * 7.0 / 96.0));
  for (const JointTrack& tr : tracks) {
    auto px = [&](std::size_t j) { return tr.pixels.at({t, j, 0}); };
    auto py = [&](std::size_t j) { return tr.pixels.at({t, j, 1}); };
    for (const auto& [a, b] : tmpl.edges) draw_segment(img, px(a), py(a), px(b), py(b), bone);
    const std::size_t active = synthetic_active_joint(static_cast<std::size_t>(p.label));
    for (std::size_t d = 0; d < p.distractor_parts.size(); ++d) {
      const std::size_t j = p.distractor_parts[d];
      draw_square(img, px(j), py(j), marker, kPalette[p.distractor_colors[d]]);
    }
    draw_square(img, px(active), py(active), marker, kPalette[static_cast<std::size_t>(p.label)]);
  }
  if (spec.pixel_noise > 0.0f) {
    Rng rng = Rng(spec.seed).fork(index).fork(1000 + t);
    const double sd = static_cast<double>(spec.pixel_noise) * 255.0;
    for (auto& v : img.pixels) {
      const double n = static_cast<double>(v) + sd * rng.normal();
      v = static_cast<std::uint8_t>(std::clamp(std::lround(n), 0L, 255L));
    }
  }
  return img;
}

struct Kinematics {
  SampleParams params;
  std::vector<SkeletonSequence> skeletons;
  std::vector<JointTrack> tracks;
};

Kinematics simulate(const SyntheticSpec& spec, std::size_t index) {
  spec.validate();
  Kinematics k;
  k.params = draw_params(spec, index);
  const std::size_t t_count = spec.frames;
  Rng jitter = Rng(spec.seed).fork(index).fork(1);
  for (std::size_t s = 0; s < performers(spec); ++s) {
    SkeletonSequence seq;
    seq.coords = Tensor({t_count, kJoints, 3});
    seq.label = k.params.label;
    seq.subject_count = performers(spec);
    JointTrack tr;
    tr.pixels = Tensor({t_count, kJoints, 2});
    tr.confidence = Tensor::ones({t_count, kJoints});
    const Projection proj = projection_of(spec, k.params, s);
    const double body_x = spec.two_subject ? (s == 0 ? -0.9 : 0.9) : 0.0;
    for (std::size_t t = 0; t < t_count; ++t) {
      const auto j = pose(k.params.label, k.params.motions[s], t, t_count);
      for (std::size_t v = 0; v < kJoints; ++v) {
        const double x = j[v].x + spec.joint_noise * jitter.normal();
        const double y = j[v].y + spec.joint_noise * jitter.normal();
        const double z = 3.0 + spec.joint_noise * jitter.normal();
        seq.coords.at({t, v, 0}) = static_cast<float>(x + body_x);
        seq.coords.at({t, v, 1}) = static_cast<float>(y);
        seq.coords.at({t, v, 2}) = static_cast<float>(z);
        // the renderer draws exactly these pixel positions
        tr.pixels.at({t, v, 0}) = static_cast<float>(proj.cx + proj.scale * x);
        tr.pixels.at({t, v, 1}) = static_cast<float>(proj.cy + proj.scale * (0.95 - y));
      }
    }
    k.skeletons.push_back(std::move(seq));
    k.tracks.push_back(std::move(tr));
  }
  return k;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (num_classes < 2 || num_classes > 5) throw_usage("synthetic spec: num_classes must be in [2, 5]");
  if (samples_per_class == 0) throw_usage("synthetic spec: samples_per_class must be positive");
  if (frames == 0) throw_usage("synthetic spec: frames must be positive");
  if (image_size < 32) throw_usage("synthetic spec: image_size must be at least 32");
  if (pixel_noise < 0.0f || joint_noise < 0.0f) throw_usage("synthetic spec: noise levels must be non-negative");
  if (!(train_fraction > 0.0f && train_fraction < 1.0f)) throw_usage("synthetic spec: train_fraction must be in (0, 1)");
}

const std::vector<std::string>& synthetic_class_names() {
  static const std::vector<std::string> names{"wave-left-hand", "wave-right-hand", "kick-left", "nod", "kick-right"};
  return names;
}

std::size_t synthetic_active_joint(std::size_t label) {
  static constexpr std::array<std::size_t, 5> active{joints::kLeftHand, joints::kRightHand, joints::kLeftFoot,
                                                     joints::kHead, joints::kRightFoot};
  if (label >= active.size()) throw_usage("synthetic_active_joint: label out of range");
  return active[label];
}

std::array<std::uint8_t, 3> synthetic_class_color(std::size_t label) {
  if (label >= kPalette.size()) throw_usage("synthetic_class_color: label out of range");
  return kPalette[label];
}

SyntheticSample generate_synthetic_sample(const SyntheticSpec& spec, std::size_t index, bool with_frames) {
  Kinematics k = simulate(spec, index);
  SyntheticSample out;
  out.label = k.params.label;
  out.frames.source = "synthetic:" + std::to_string(spec.seed) + ":" + std::to_string(index);
  if (with_frames) {
    for (std::size_t t = 0; t < spec.frames; ++t) out.frames.frames.push_back(render_frame(spec, index, k.params, k.tracks, t));
  }
  out.skeletons = std::move(k.skeletons);
  out.tracks = std::move(k.tracks);
  return out;
}

FrameSequence render_synthetic_frames(const SyntheticSpec& spec, std::size_t index, std::span<const std::size_t> which) {
  const Kinematics k = simulate(spec, index);
  FrameSequence fs;
  fs.source = "synthetic:" + std::to_string(spec.seed) + ":" + std::to_string(index);
  fs.frames.assign(spec.frames, Image(spec.image_size, spec.image_size));
  for (std::size_t t : which) {
    if (t >= spec.frames) throw_usage("render_synthetic_frames: frame index out of range");
    fs.frames[t] = render_frame(spec, index, k.params, k.tracks, t);
  }
  return fs;
}

void split_dataset(Dataset& dataset, float train_fraction, std::uint64_t seed) {
  dataset.train.clear();
  dataset.test.clear();
  std::vector<std::vector<std::size_t>> by_class(dataset.num_classes);
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto label = static_cast<std::size_t>(dataset.samples[i].label);
    if (label >= dataset.num_classes) throw_data("split_dataset: label " + std::to_string(label) + " out of range");
    by_class[label].push_back(i);
  }
  Rng rng = Rng(seed).fork(0x5eed5);
  for (auto& members : by_class) {
    rng.shuffle(members);
    const auto n_train = static_cast<std::size_t>(std::lround(static_cast<double>(members.size()) * train_fraction));
    for (std::size_t i = 0; i < members.size(); ++i) (i < n_train ? dataset.train : dataset.test).push_back(members[i]);
  }
  std::sort(dataset.train.begin(), dataset.train.end());
  std::sort(dataset.test.begin(), dataset.test.end());
}

Dataset generate_synthetic_dataset(const SyntheticSpec& spec) {
  spec.validate();
  Dataset d;
  d.tmpl = stick_figure_template();
  d.num_classes = spec.num_classes;
  d.class_names.assign(synthetic_class_names().begin(), synthetic_class_names().begin() + static_cast<long>(spec.num_classes));
  const std::size_t total = spec.num_classes * spec.samples_per_class;
  d.samples.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    SyntheticSample s = generate_synthetic_sample(spec, i, false);
    d.samples.push_back({std::move(s.skeletons), std::move(s.tracks), s.label});
  }
  split_dataset(d, spec.train_fraction, spec.seed);
  return d;
}

Tensor synthetic_grid(const SyntheticSpec& spec, const Dataset& dataset, std::size_t index, std::size_t samples,
                      std::size_t patch, const std::vector<std::size_t>* frame_indices) {
  const std::vector<std::size_t> which =
      frame_indices != nullptr ? *frame_indices : temporal_sample_indices(spec.frames, samples);
  const FrameSequence frames = render_synthetic_frames(spec, index, which);
  const Sample& s = dataset.samples.at(index);
  return assemble_stroi(frames, s.tracks, dataset.tmpl, samples, patch, performers(spec), &which).image;
}

std::vector<Tensor> build_synthetic_grids(const SyntheticSpec& spec, const Dataset& dataset, std::size_t samples,
                                          std::size_t patch) {
  std::vector<Tensor> out;
  out.reserve(dataset.samples.size());
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) out.push_back(synthetic_grid(spec, dataset, i, samples, patch));
  return out;
}

}  // namespace skelfuse

// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers as arguments to run a
// subset, e.g. `skelfuse_acceptance 1 2 3`.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "skelfuse/checkpoint.hpp"
#include "skelfuse/data_io.hpp"
#include "skelfuse/fusion.hpp"
#include "skelfuse/stgcn.hpp"
#include "skelfuse/stroi.hpp"
#include "skelfuse/synthetic.hpp"
#include "skelfuse_cli/cli.hpp"
#include "skelfuse_cli/grad_suite.hpp"

using namespace skelfuse;
namespace fs = std::filesystem;

#ifndef SKELFUSE_CONFIG_DIR
#define SKELFUSE_CONFIG_DIR "configs"
#endif
#ifndef SKELFUSE_TEST_DATA
#define SKELFUSE_TEST_DATA "tests/data"
#endif

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) {
      pass = false;
      detail = what;
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char b[64];
  std::snprintf(b, sizeof b, f, v);
  return b;
}

int run_cli(const std::vector<std::string>& args, std::string* err_text = nullptr) {
  std::ostringstream out, err;
  const int code = cli::dispatch(args, out, err);
  if (err_text != nullptr) *err_text = err.str();
  return code;
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------------------------

Outcome gradient_suite() {
  Outcome o;
  const auto t0 = Clock::now();
  const auto results = cli::run_gradient_suite();
  const double secs = seconds_since(t0);
  double worst = 0.0;
  for (const auto& r : results) {
    worst = std::max(worst, r.max_rel_error);
    o.require(r.max_rel_error < cli::kGradTolerance, r.name + " error " + fmt("%.3g", r.max_rel_error));
  }
  for (const char* needed : {"conv2d", "matmul", "batch_norm", "softmax + squared error", "gcn_layer_forward",
                             "residual_block_forward", "apply_joint_weights (soft)"}) {
    const bool found = std::any_of(results.begin(), results.end(),
                                   [&](const cli::GradCheckResult& r) { return r.name.find(needed) != std::string::npos; });
    o.require(found, std::string("missing check ") + needed);
  }
  bool masks = false;
  for (const auto& r : results) masks = masks || r.name.find("M_") != std::string::npos;
  o.require(masks, "no check through M_k");
  o.require(secs < 120.0, "took " + fmt("%.1f s", secs));
  if (o.pass) o.detail = std::to_string(results.size()) + " checks, max error " + fmt("%.2g", worst) + ", " + fmt("%.1f s", secs);
  return o;
}

Outcome oracle_equivalence() {
  Outcome o;
  Rng rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(2), ci = 1 + rng.below(4), co = 1 + rng.below(4);
    const std::size_t kh = 1 + rng.below(4), kw = 1 + rng.below(4);
    const std::size_t h = kh + rng.below(8), w = kw + rng.below(8);
    const Pair stride{1 + rng.below(3), 1 + rng.below(3)}, pad{rng.below(3), rng.below(3)};
    const Tensor x = oracle::random(rng, {n, ci, h, w}), k = oracle::random(rng, {co, ci, kh, kw});
    Tape tape;
    const double d = oracle::max_rel_diff(conv2d(tape.constant(x), tape.constant(k), stride, pad).value(),
                                          oracle::conv2d(x, k, stride.h, stride.w, pad.h, pad.w));
    worst = std::max(worst, d);
    o.require(d < 1e-5, "conv2d trial " + std::to_string(trial));
  }
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 1 + rng.below(20), k = 1 + rng.below(40), n = 1 + rng.below(20);
    const Tensor a = oracle::random(rng, {m, k}), b = oracle::random(rng, {k, n});
    Tape tape;
    const double d = oracle::max_rel_diff(matmul(tape.constant(a), tape.constant(b)).value(), oracle::matmul(a, b));
    worst = std::max(worst, d);
    o.require(d < 1e-5, "matmul trial " + std::to_string(trial));
  }
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t rank = 1 + rng.below(4);
    Shape s;
    for (std::size_t r = 0; r < rank; ++r) s.push_back(1 + rng.below(6));
    std::vector<std::size_t> axes;
    for (std::size_t r = 0; r < rank; ++r)
      if (rng.below(2) == 1) axes.push_back(r);
    if (axes.empty()) axes.push_back(rng.below(rank));
    const bool mean = rng.below(2) == 1;
    const Tensor x = oracle::random(rng, s);
    Tape tape;
    const Tensor got = reduce(mean ? ReduceKind::kMean : ReduceKind::kSum, tape.constant(x), axes).value();
    const double d = oracle::max_rel_diff(got, oracle::reduce(x, axes, mean));
    worst = std::max(worst, d);
    o.require(d < 1e-5, "reduce trial " + std::to_string(trial));
  }
  if (o.pass) o.detail = "150 random shapes, max relative difference " + fmt("%.2g", worst);
  return o;
}

Outcome adjacency() {
  Outcome o;
  Rng rng(7);
  const float alpha = 0.001f;
  for (int g = 0; g < 20; ++g) {
    PartitionedAdjacency adj;
    for (int k = 0; k < 3; ++k) {
      Tensor a({6, 6});
      for (std::size_t i = 0; i < 36; ++i) a[i] = rng.below(3) == 0 ? 1.0f : 0.0f;
      adj.raw.push_back(a);
    }
    normalize_adjacency(adj, alpha);
    for (std::size_t k = 0; k < 3; ++k) {
      const Tensor& a = adj.raw[k];
      for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 6; ++j) {
          float di = 0.0f, dj = 0.0f;
          for (std::size_t c = 0; c < 6; ++c) {
            di += a.at({i, c});
            dj += a.at({j, c});
          }
          const float want = a.at({i, j}) / std::sqrt((di + alpha) * (dj + alpha));
          o.require(adj.normalized[k].at({i, j}) == want, "graph " + std::to_string(g) + " differs");
        }
    }
  }
  const SkeletonTemplate tmpl = stick_figure_template();
  const auto nb = tmpl.neighbors();
  for (int pose = 0; pose < 10; ++pose) {
    SkeletonSequence s;
    s.coords = oracle::random(rng, {2, 15, 3}, 0.2f, 2.0f);
    const PartitionedAdjacency adj = partition_neighbors(tmpl, s);
    o.require(adj.raw.size() == 3, "expected three subsets");
    for (std::size_t i = 0; i < 15; ++i)
      for (std::size_t j = 0; j < 15; ++j) {
        float total = 0.0f;
        for (const Tensor& a : adj.raw) {
          o.require(a.at({i, j}) == 0.0f || a.at({i, j}) == 1.0f, "non-binary subset entry");
          total += a.at({i, j});
        }
        const bool adjacent = i == j || std::find(nb[i].begin(), nb[i].end(), j) != nb[i].end();
        o.require(total == (adjacent ? 1.0f : 0.0f), "partition not disjoint/covering at " + std::to_string(i) + "," + std::to_string(j));
      }
  }
  if (o.pass) o.detail = "20 random 6-vertex graphs bit-exact; partition exhaustive on 10 poses";
  return o;
}

Outcome joint_weights_oracle() {
  Outcome o;
  Rng rng(11);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor f = oracle::random(rng, {8, 6, 15}, -3.0f, 3.0f);
    const Tensor w = extract_joint_weights(f);
    worst = std::max(worst, max_abs_diff(w, oracle::joint_weights(f)));
    Tensor neg = f;
    for (std::size_t i = 0; i < neg.numel(); ++i) neg[i] = -neg[i];
    o.require(extract_joint_weights(neg) == w, "sign flip changed the weights");
    for (float c : {0.5f, 2.0f, 8.0f}) {
      Tensor sc = f;
      for (std::size_t i = 0; i < sc.numel(); ++i) sc[i] *= c;
      const Tensor ws = extract_joint_weights(sc);
      for (std::size_t v = 0; v < 15; ++v) o.require(ws[v] == c * w[v], "homogeneity failed");
    }
  }
  o.require(worst < 1e-6, "oracle difference " + fmt("%.3g", worst));
  if (o.pass) o.detail = "20 random (8,6,15) maps, max difference " + fmt("%.2g", worst);
  return o;
}

// Frames with an 8x8 square of a unique colour around each part joint of each subject.
std::array<std::uint8_t, 3> block_color(std::size_t part, std::size_t subject, std::size_t frame) {
  return {static_cast<std::uint8_t>(20 + 40 * part), static_cast<std::uint8_t>(60 + 120 * subject),
          static_cast<std::uint8_t>(30 + 60 * frame)};
}

void colour_scene(std::size_t subjects, FrameSequence& frames, std::vector<JointTrack>& tracks) {
  const SkeletonTemplate tmpl = stick_figure_template();
  const std::size_t ys[5] = {4, 12, 20, 28, 36};
  for (std::size_t s = 0; s < subjects; ++s) tracks.push_back({Tensor({5, 15, 2}), Tensor::ones({5, 15})});
  for (std::size_t t = 0; t < 5; ++t) {
    Image img(40, 40);
    for (std::size_t s = 0; s < subjects; ++s) {
      const std::size_t cx = 10 + 20 * s;
      for (std::size_t p = 0; p < 5; ++p) {
        tracks[s].pixels.at({t, tmpl.parts[p].joint, 0}) = static_cast<float>(cx);
        tracks[s].pixels.at({t, tmpl.parts[p].joint, 1}) = static_cast<float>(ys[p]);
        const auto col = block_color(p, s, t);
        for (std::size_t y = ys[p] - 4; y < ys[p] + 4; ++y)
          for (std::size_t x = cx - 4; x < cx + 4; ++x)
            for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = col[c];
      }
    }
    frames.frames.push_back(img);
  }
}

Outcome stroi_geometry() {
  Outcome o;
  const SkeletonTemplate tmpl = stick_figure_template();
  // Sentinel: a single marked pixel under joint j in sampled frame l lands at the centre of block (j,l).
  const std::size_t t_count = 9, samples = 5, patch = 6;
  const auto picked = temporal_sample_indices(t_count, samples);
  for (std::size_t j = 0; j < 5; ++j)
    for (std::size_t l = 0; l < samples; ++l) {
      FrameSequence frames;
      JointTrack tr{Tensor({t_count, 15, 2}), Tensor::ones({t_count, 15})};
      for (std::size_t t = 0; t < t_count; ++t) {
        frames.frames.emplace_back(40, 40);
        for (std::size_t p = 0; p < 5; ++p) {
          tr.pixels.at({t, tmpl.parts[p].joint, 0}) = static_cast<float>(4 + 7 * p);
          tr.pixels.at({t, tmpl.parts[p].joint, 1}) = static_cast<float>(5 + 7 * p);
        }
      }
      frames.frames[picked[l]].at(5 + 7 * j, 4 + 7 * j, 0) = 77;
      const std::vector<JointTrack> tracks{tr};
      const StRoiGrid g = assemble_stroi(frames, tracks, tmpl, samples, patch);
      for (std::size_t y = 0; y < 5 * patch; ++y)
        for (std::size_t x = 0; x < samples * patch; ++x) {
          const bool here = y == j * patch + patch / 2 && x == l * patch + patch / 2;
          o.require((g.image.at({0, y, x}) == 77.0f / 255.0f) == here, "sentinel misplaced for block (" +
                                                                          std::to_string(j) + "," + std::to_string(l) + ")");
        }
    }

  FrameSequence frames;
  std::vector<JointTrack> tracks;
  colour_scene(1, frames, tracks);
  o.require(assemble_stroi(frames, tracks, tmpl, 5, 96).image.shape() == Shape{3, 480, 480}, "P=96 is not 480x480");
  o.require(assemble_stroi(frames, tracks, tmpl, 5, 48).image.shape() == Shape{3, 240, 240}, "P=48 is not 240x240");

  FrameSequence two_frames;
  std::vector<JointTrack> two_tracks;
  colour_scene(2, two_frames, two_tracks);
  const StRoiGrid g = assemble_stroi(two_frames, two_tracks, tmpl, 5, 8, 2);
  const Image golden = read_png(fs::path(SKELFUSE_TEST_DATA) / "two_subject_golden.png");
  o.require(golden.height == 40 && golden.width == 40, "golden image has the wrong size");
  if (o.pass) {
    for (std::size_t y = 0; y < 40; ++y)
      for (std::size_t x = 0; x < 40; ++x)
        for (std::size_t c = 0; c < 3; ++c) o.require(golden.at(y, x, c) == to_byte(g.image.at({c, y, x})), "two-subject layout differs from the golden image");
  }
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t l = 0; l < 5; ++l) {
        const auto col = block_color(j, s, l);
        o.require(to_byte(g.image.at({0, j * 8, s * 20 + l * 4})) == col[0] &&
                      to_byte(g.image.at({1, j * 8 + 7, s * 20 + l * 4 + 3})) == col[1],
                  "two-subject block holds the wrong crop");
      }
  if (o.pass) o.detail = "sentinel bit-exact for 25 blocks; 480x480 and 240x240; two-subject golden matches";
  return o;
}

Outcome weighting_properties() {
  Outcome o;
  Rng rng(13);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t slots = 1 + rng.below(2);
    const std::size_t p = 2 * (1 + rng.below(4));
    StRoiGrid g{oracle::random(rng, {3, 5 * p, 5 * p}, 0.0f, 1.0f), 5, 5, p, slots};
    const Tensor ones = Tensor::ones({5, slots});
    o.require(apply_joint_weights(g, ones).image == g.image, "all-ones weights changed the image");

    Tensor w = oracle::random(rng, {5, slots}, 0.0f, 1.0f);
    const std::size_t dead = rng.below(5);
    for (std::size_t s = 0; s < slots; ++s) w.at({dead, s}) = 0.0f;
    const Tensor out = apply_joint_weights(g, w).image;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = dead * p; y < (dead + 1) * p; ++y)
        for (std::size_t x = 0; x < 5 * p; ++x) o.require(out.at({c, y, x}) == 0.0f, "zero weight left pixels");

    StRoiGrid b{oracle::random(rng, {3, 5 * p, 5 * p}, 0.0f, 1.0f), 5, 5, p, slots};
    const float a1 = rng.uniform(-2.0f, 2.0f), a2 = rng.uniform(-2.0f, 2.0f);
    StRoiGrid mix = g;
    for (std::size_t i = 0; i < mix.image.numel(); ++i) mix.image[i] = a1 * g.image[i] + a2 * b.image[i];
    const Tensor lhs = apply_joint_weights(mix, w).image;
    const Tensor wa = apply_joint_weights(g, w).image, wb = apply_joint_weights(b, w).image;
    for (std::size_t i = 0; i < lhs.numel(); ++i) worst = std::max(worst, std::abs(static_cast<double>(lhs[i]) - (a1 * wa[i] + a2 * wb[i])));
  }
  o.require(worst < 1e-6, "linearity error " + fmt("%.3g", worst));
  if (o.pass) o.detail = "20 random grids; linearity error " + fmt("%.2g", worst);
  return o;
}

Outcome schedule() {
  Outcome o;
  const TrainConfig c = TrainConfig::full_scale();
  o.require(lr_at_epoch(c, 0) == 0.1f, "epoch 0");
  o.require(lr_at_epoch(c, 44) == 0.01f, "epoch 44");
  o.require(lr_at_epoch(c, 54) == 0.001f, "epoch 54");
  o.require(lr_at_epoch(c, 43) == 0.1f && lr_at_epoch(c, 53) == 0.01f && lr_at_epoch(c, 64) == 0.001f, "boundaries");
  if (o.pass) o.detail = "0.1 / 0.01 / 0.001 at epochs 0 / 44 / 54";
  return o;
}

std::vector<std::vector<std::string>> pipeline(const fs::path& cfg, const fs::path& out, bool with_soft) {
  const std::vector<std::string> common{"--config", cfg.string(), "--out", out.string(), "--seed", "42"};
  std::vector<std::vector<std::string>> steps{{"gen-synthetic"},  {"train-skeleton"},          {"build-stroi"},
                                              {"extract-weights"}, {"train-rgb", "--mode", "none"},
                                              {"train-rgb", "--mode", "fixed"}};
  if (with_soft) steps.push_back({"train-rgb", "--mode", "soft"});
  steps.push_back({"evaluate"});
  steps.push_back({"ensemble"});
  for (auto& s : steps) s.insert(s.end(), common.begin(), common.end());
  return steps;
}

bool run_pipeline(const fs::path& cfg, const fs::path& out, bool with_soft, Outcome& o) {
  fs::remove_all(out);
  for (const auto& step : pipeline(cfg, out, with_soft)) {
    std::string err;
    const int code = run_cli(step, &err);
    if (code != 0) {
      o.require(false, step.front() + " exited " + std::to_string(code) + ": " + err.substr(0, err.find('\n')));
      return false;
    }
  }
  return true;
}

Outcome determinism() {
  Outcome o;
  const fs::path cfg = fs::path(SKELFUSE_CONFIG_DIR) / "smoke.cfg";
  const fs::path base = fs::temp_directory_path() / "skelfuse_acceptance_det";
  const fs::path a = base / "a", b = base / "b";
  if (!run_pipeline(cfg, a, true, o) || !run_pipeline(cfg, b, true, o)) return o;
  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file() || e.path().filename() == "resolved.cfg") continue;
    const fs::path rel = fs::relative(e.path(), a);
    o.require(fs::exists(b / rel), rel.string() + " missing in the second run");
    o.require(read_bytes(e.path()) == read_bytes(b / rel), rel.string() + " differs between runs");
    ++compared;
  }
  std::size_t ckpts = 0, metrics = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ckpts += e.path().extension() == ".ckpt";
    metrics += e.path().extension() == ".jsonl" && e.path().filename().string().rfind("metrics", 0) == 0;
  }
  o.require(ckpts >= 6 && metrics == 4, "expected checkpoints and four metrics files");
  if (o.pass) o.detail = std::to_string(compared) + " files bit-identical (" + std::to_string(ckpts) + " checkpoints, " +
                         std::to_string(metrics) + " metrics files)";
  return o;
}

// Accuracy column of report.txt by row number.
std::map<int, double> read_report(const fs::path& p) {
  std::map<int, double> rows;
  std::ifstream f(p);
  for (std::string line; std::getline(f, line);) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    int idx = 0;
    ls >> idx;
    const std::string last = line.substr(line.find_last_of(' ') + 1);
    if (last != "-") rows[idx] = std::stod(last);
  }
  return rows;
}

Outcome synthetic_end_to_end() {
  Outcome o;
  const auto t0 = Clock::now();
  const fs::path out = fs::temp_directory_path() / "skelfuse_acceptance_desk";
  if (!run_pipeline(fs::path(SKELFUSE_CONFIG_DIR) / "desk.cfg", out, false, o)) return o;
  const double secs = seconds_since(t0);
  const auto r = read_report(out / "report.txt");
  for (int k : {1, 2, 4, 5, 7}) o.require(r.count(k) == 1, "report row " + std::to_string(k) + " missing");
  if (!o.pass) return o;
  const double gcn = r.at(1), plain = r.at(2), fixed = r.at(4), ens_plain = r.at(5), ens_fixed = r.at(7);
  o.require(gcn >= 0.80, "(a) skeleton accuracy " + fmt("%.4f", gcn));
  o.require(fixed >= 0.80, "(b) weighted rgb accuracy " + fmt("%.4f", fixed));
  o.require(fixed >= plain - 0.01, "(c) weighted " + fmt("%.4f", fixed) + " below unweighted " + fmt("%.4f", plain));
  o.require(fixed > plain, "(c) weighted " + fmt("%.4f", fixed) + " not above unweighted " + fmt("%.4f", plain));
  o.require(ens_fixed >= std::max(gcn, fixed) - 0.02, "(d) ensemble " + fmt("%.4f", ens_fixed));
  o.require(ens_plain >= std::max(gcn, plain) - 0.02, "(d) ensemble with unweighted rgb " + fmt("%.4f", ens_plain));
  o.require(secs < 900.0, "took " + fmt("%.0f s", secs));
  std::ostringstream d;
  d << "gcn " << fmt("%.3f", gcn) << ", rgb " << fmt("%.3f", plain) << ", rgb+weights " << fmt("%.3f", fixed)
    << ", ensembles " << fmt("%.3f", ens_plain) << "/" << fmt("%.3f", ens_fixed) << ", " << fmt("%.0f s", secs);
  if (o.pass) o.detail = d.str();
  else o.detail += " [" + d.str() + "]";
  return o;
}

Outcome mode_contracts() {
  Outcome o;
  SyntheticSpec spec;
  spec.num_classes = 3;
  spec.samples_per_class = 6;
  spec.frames = 12;
  spec.image_size = 64;
  const Dataset data = generate_synthetic_dataset(spec);
  const std::vector<Tensor> grids = build_synthetic_grids(spec, data, 4, 8);
  StGcnConfig gcn;
  gcn.layers = {{8, 1}, {8, 2}};
  gcn.temporal_kernel = 3;
  RgbNetConfig rgb;
  rgb.input_side = 16;
  rgb.stem_channels = 4;
  rgb.stage_channels = {8};
  rgb.stage_strides = {2};
  rgb.blocks_per_stage = 1;
  TrainConfig train;
  train.epochs = 2;
  train.batch = 8;
  train.decay_epochs = {};
  SkeletonStageResult sk = train_skeleton_stage(data, gcn, train);
  const auto before = encode_checkpoint(sk.model.save());
  RgbTrainInputs in;
  in.dataset = &data;
  in.grids = &grids;

  train.mode = AttentionMode::kFixed;
  const RgbStageResult fixed = train_rgb_stage(in, &sk.model, rgb, train);
  o.require(encode_checkpoint(sk.model.save()) == before, "fixed mode modified the skeleton model");
  o.require(fixed.model.weighting && encode_checkpoint(fixed.model.weighting->save()) == before,
            "fixed mode's weighting branch differs from the trained skeleton");

  train.mode = AttentionMode::kSoft;
  train.epochs = 1;
  train.batch = data.train.size();
  const RgbStageResult soft = train_rgb_stage(in, &sk.model, rgb, train);
  std::size_t changed = 0;
  {
    StGcnModel after = *soft.model.weighting;
    const auto pa = sk.model.parameters(), pb = after.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) changed += pa[i]->value != pb[i]->value;
  }
  o.require(changed > 0, "soft mode left every GCN parameter unchanged");
  const std::vector<std::size_t> batch(data.train.begin(), data.train.begin() + 8);
  const auto grads = rgb_loss_mask_gradients(sk.model, soft.model, data, grids, batch, train.loss);
  double probe = 0.0;
  for (const auto& layer : grads)
    for (const Tensor& g : layer)
      for (std::size_t i = 0; i < g.numel(); ++i) probe = std::max(probe, static_cast<double>(std::abs(g[i])));
  o.require(probe > 0.0, "RGB loss gradient with respect to M_k is zero");
  if (o.pass) o.detail = "fixed mode byte-identical; soft step changed " + std::to_string(changed) +
                         " GCN tensors; max |dL/dM_k| " + fmt("%.3g", probe);
  return o;
}

Outcome persistence() {
  Outcome o;
  Rng rng(17);
  StGcnConfig gcn;
  gcn.layers = {{8, 1}, {8, 2}};
  gcn.temporal_kernel = 3;
  SyntheticSpec spec;
  spec.two_subject = true;
  const SyntheticSample sample = generate_synthetic_sample(spec, 5, false);
  StGcnModel m = StGcnModel::create(gcn, partition_neighbors(stick_figure_template(), sample.skeletons[0]), rng);
  const NamedTensors bundle = m.save();
  const fs::path dir = fs::temp_directory_path() / "skelfuse_acceptance_persist";
  fs::create_directories(dir);
  save_checkpoint(bundle, dir / "m.ckpt");
  const auto bytes = read_bytes(dir / "m.ckpt");
  o.require(bytes == encode_checkpoint(bundle), "file bytes differ from the encoding");
  const NamedTensors back = load_checkpoint(dir / "m.ckpt");
  o.require(encode_checkpoint(StGcnModel::load(back).save()) == bytes, "load/save round trip changed bytes");

  std::size_t rejected = 0, tried = 0;
  for (std::size_t pos = 0; pos < bytes.size(); pos += std::max<std::size_t>(1, bytes.size() / 64)) {
    auto bad = bytes;
    bad[pos] ^= 0x5a;
    ++tried;
    try {
      (void)decode_checkpoint(bad);
    } catch (const Error& e) {
      rejected += e.kind() == ErrorKind::kCorrupt || e.kind() == ErrorKind::kVersion;
    }
  }
  o.require(rejected == tried, std::to_string(tried - rejected) + " corrupted checkpoints accepted");

  write_skeleton_file(dir / "s.skel", sample.skeletons);
  const auto parsed = parse_skeleton_file(dir / "s.skel");
  o.require(parsed.size() == sample.skeletons.size(), "subject count changed");
  for (std::size_t s = 0; s < parsed.size() && o.pass; ++s)
    o.require(parsed[s].coords == sample.skeletons[s].coords && parsed[s].label == sample.skeletons[s].label,
              "skeleton text round trip changed values");
  if (o.pass) o.detail = "round trip bit-identical; " + std::to_string(tried) + " corrupted variants rejected; text round trip exact";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"oracle equivalence", oracle_equivalence},
      {"adjacency normalization and partition", adjacency},
      {"joint-weight oracle", joint_weights_oracle},
      {"ST-ROI geometry", stroi_geometry},
      {"joint weighting properties", weighting_properties},
      {"learning-rate schedule", schedule},
      {"pipeline determinism", determinism},
      {"synthetic end-to-end", synthetic_end_to_end},
      {"attention mode contracts", mode_contracts},
      {"persistence", persistence},
  };
  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoul(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && selected.count(i + 1) == 0) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << (i + 1 < 10 ? " " : "") << i + 1 << "  " << criteria[i].first
              << ": " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}

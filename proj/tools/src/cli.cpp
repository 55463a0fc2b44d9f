#include "skelfuse_cli/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <optional>
#include <ostream>

#include "skelfuse/checkpoint.hpp"
#include "skelfuse/data_io.hpp"
#include "skelfuse/error.hpp"
#include "skelfuse/fusion.hpp"
#include "skelfuse_cli/config.hpp"
#include "skelfuse_cli/grad_suite.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace skelfuse::cli {
namespace {

constexpr std::size_t kPreviewCount = 4;

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string mode;
};

Config resolve(const Options& o) {
  Config c = o.config_path.empty() ? Config{} : load_config(o.config_path);
  apply_environment(c);
  if (o.seed) c.train.seed = c.synthetic.seed = *o.seed;
  if (!o.out.empty()) c.out = o.out;
  if (!o.mode.empty()) c.train.mode = parse_attention_mode(o.mode);
  c.validate();
  write_resolved_config(c);
  return c;
}

std::string sample_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%05zu", i);
  return buf;
}

fs::path data_dir(const Config& c) { return c.out / "data"; }

void require(const fs::path& p, const char* producer) {
  if (!fs::exists(p)) throw_data("missing '" + p.string() + "' (run " + producer + " first)");
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f || !(f << text)) throw_io("cannot write '" + p.string() + "'");
}

json read_json(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw_io("cannot read '" + p.string() + "'");
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, p.string() + ": " + e.what());
  }
}

// Skeletons and split as written by gen-synthetic; tracks are not stored.
Dataset load_dataset(const Config& c) {
  const fs::path split_path = data_dir(c) / "split.json";
  require(split_path, "gen-synthetic");
  const json meta = read_json(split_path);
  Dataset d;
  d.tmpl = c.load_template();
  try {
    d.num_classes = meta.at("num_classes").get<std::size_t>();
    d.class_names = meta.at("class_names").get<std::vector<std::string>>();
    d.train = meta.at("train").get<std::vector<std::size_t>>();
    d.test = meta.at("test").get<std::vector<std::size_t>>();
    const auto count = meta.at("samples").get<std::size_t>();
    for (std::size_t i = 0; i < count; ++i) {
      std::vector<SkeletonSequence> subjects = parse_skeleton_file(data_dir(c) / (sample_name(i) + ".skel"));
      const int label = subjects.at(0).label;
      d.samples.push_back({std::move(subjects), {}, label});
    }
  } catch (const json::exception& e) {
    throw_data(split_path.string() + ": " + e.what());
  }
  for (std::size_t i : d.train) {
    if (i >= d.samples.size()) throw_data("split index " + std::to_string(i) + " out of range");
  }
  for (std::size_t i : d.test) {
    if (i >= d.samples.size()) throw_data("split index " + std::to_string(i) + " out of range");
  }
  return d;
}

// The synthetic generator is deterministic, so tracks and frames are regenerated on demand. The
// stored labels must agree with the regenerated ones.
Dataset regenerate_with_tracks(const Config& c, const Dataset& stored) {
  Dataset d = generate_synthetic_dataset(c.synthetic);
  if (d.samples.size() != stored.samples.size()) throw_data("stored dataset does not match the configured synthetic spec");
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    if (d.samples[i].label != stored.samples[i].label) {
      throw_data("stored dataset does not match the configured synthetic spec (sample " + std::to_string(i) + ")");
    }
  }
  d.train = stored.train;
  d.test = stored.test;
  return d;
}

void save_tensor_list(const std::vector<Tensor>& tensors, const std::string& prefix, NamedTensors extra, const fs::path& p) {
  NamedTensors bundle = std::move(extra);
  for (std::size_t i = 0; i < tensors.size(); ++i) bundle.emplace_back(prefix + "." + std::to_string(i), tensors[i]);
  save_checkpoint(bundle, p);
}

std::vector<Tensor> load_tensor_list(const fs::path& p, const std::string& prefix, std::size_t count) {
  const NamedTensors bundle = load_checkpoint(p);
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(find_tensor(bundle, prefix + "." + std::to_string(i)));
  return out;
}

std::vector<Tensor> load_grids(const Config& c, const Dataset& d) {
  const fs::path p = c.out / "stroi.ckpt";
  require(p, "build-stroi");
  std::vector<Tensor> grids = load_tensor_list(p, "stroi", d.samples.size());
  const Shape expect{3, c.parts * c.patch, c.samples * c.patch};
  for (const Tensor& g : grids) {
    if (g.shape() != expect) throw_data("stroi.ckpt geometry does not match the config (rerun build-stroi)");
  }
  return grids;
}

StGcnModel load_skeleton(const Config& c) {
  const fs::path p = c.out / "skeleton.ckpt";
  require(p, "train-skeleton");
  return StGcnModel::load(load_checkpoint(p));
}

fs::path rgb_path(const Config& c, AttentionMode mode) { return c.out / (std::string("rgb_") + to_string(mode) + ".ckpt"); }

std::optional<RgbModel> load_rgb_if_present(const Config& c, AttentionMode mode) {
  const fs::path p = rgb_path(c, mode);
  if (!fs::exists(p)) return std::nullopt;
  return RgbModel::load(load_checkpoint(p));
}

EpochCallback printer(std::ostream& out) {
  return [&out](const EpochMetrics& m) { out << to_json_line(m) << "\n" << std::flush; };
}

std::vector<int> labels_of(const Dataset& d, std::span<const std::size_t> idx) {
  std::vector<int> out;
  for (std::size_t i : idx) out.push_back(d.samples[i].label);
  return out;
}

int cmd_gen_synthetic(const Config& c, std::ostream& out) {
  const Dataset d = generate_synthetic_dataset(c.synthetic);
  fs::create_directories(data_dir(c));
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    write_skeleton_file(data_dir(c) / (sample_name(i) + ".skel"), d.samples[i].skeletons);
  }
  json meta;
  meta["samples"] = d.samples.size();
  meta["num_classes"] = d.num_classes;
  meta["class_names"] = d.class_names;
  meta["train"] = d.train;
  meta["test"] = d.test;
  write_text(data_dir(c) / "split.json", meta.dump(2) + "\n");
  for (std::size_t i = 0; i < std::min(kPreviewCount, d.samples.size()); ++i) {
    const std::vector<std::size_t> first{0};
    export_png(render_synthetic_frames(c.synthetic, i, first).frames.at(0), data_dir(c) / (sample_name(i) + "_frame0.png"));
  }
  out << "generated " << d.samples.size() << " samples (" << d.train.size() << " train, " << d.test.size()
      << " test) in " << data_dir(c).string() << "\n";
  return kExitOk;
}

int cmd_train_skeleton(const Config& c, std::ostream& out) {
  const Dataset d = load_dataset(c);
  const SkeletonStageResult r = train_skeleton_stage(d, c.gcn, c.train, printer(out));
  save_checkpoint(r.model.save(), c.out / "skeleton.ckpt");
  write_text(c.out / "metrics_skeleton.jsonl", to_jsonl(r.metrics));
  out << "skeleton held-out accuracy " << r.metrics.back().val_acc << "\n";
  return kExitOk;
}

int cmd_build_stroi(const Config& c, std::ostream& out) {
  const Dataset d = regenerate_with_tracks(c, load_dataset(c));
  const std::vector<Tensor> grids = build_synthetic_grids(c.synthetic, d, c.samples, c.patch);
  save_tensor_list(grids, "stroi", {}, c.out / "stroi.ckpt");
  fs::create_directories(c.out / "stroi_preview");
  for (std::size_t i = 0; i < std::min(kPreviewCount, grids.size()); ++i) {
    export_png(grids[i], c.out / "stroi_preview" / (sample_name(i) + ".png"));
  }
  out << "built " << grids.size() << " ST-ROI images of " << grids[0].dim(1) << "x" << grids[0].dim(2) << "\n";
  return kExitOk;
}

int cmd_extract_weights(const Config& c, std::ostream& out) {
  const Dataset d = load_dataset(c);
  StGcnModel model = load_skeleton(c);
  std::vector<Tensor> weights;
  for (const Sample& s : d.samples) weights.push_back(sample_part_weights(model, s, d.tmpl, c.subject_slots()));
  save_tensor_list(weights, "weights", {}, c.out / "weights.ckpt");
  if (fs::exists(c.out / "stroi.ckpt")) {
    const std::vector<Tensor> grids = load_grids(c, d);
    fs::create_directories(c.out / "weighted_preview");
    for (std::size_t i = 0; i < std::min(kPreviewCount, grids.size()); ++i) {
      StRoiGrid g{grids[i], c.parts, c.samples, c.patch, c.subject_slots()};
      export_png(apply_joint_weights(g, weights[i]).image, c.out / "weighted_preview" / (sample_name(i) + ".png"));
    }
  }
  for (std::size_t i = 0; i < std::min(kPreviewCount, weights.size()); ++i) {
    out << sample_name(i) << " (" << d.class_names.at(static_cast<std::size_t>(d.samples[i].label)) << "):";
    for (std::size_t k = 0; k < weights[i].numel(); ++k) out << " " << weights[i][k];
    out << "\n";
  }
  out << "wrote part weights for " << weights.size() << " samples\n";
  return kExitOk;
}

int cmd_train_rgb(const Config& c, std::ostream& out) {
  const Dataset stored = load_dataset(c);
  const std::vector<Tensor> grids = load_grids(c, stored);
  std::optional<StGcnModel> skeleton;
  if (c.train.mode != AttentionMode::kNone) skeleton = load_skeleton(c);
  std::optional<std::vector<Tensor>> weights;
  if (c.train.mode == AttentionMode::kFixed && fs::exists(c.out / "weights.ckpt")) {
    weights = load_tensor_list(c.out / "weights.ckpt", "weights", stored.samples.size());
  }
  std::optional<Dataset> with_tracks;
  RgbTrainInputs in;
  in.dataset = &stored;
  in.grids = &grids;
  in.subject_slots = c.subject_slots();
  in.part_weights = weights ? &*weights : nullptr;
  if (c.train.random_frames) {
    with_tracks = regenerate_with_tracks(c, stored);
    in.resample = [&](std::size_t i, Rng& rng) {
      const std::vector<std::size_t> idx = jittered_sample_indices(c.synthetic.frames, c.samples, rng);
      return synthetic_grid(c.synthetic, *with_tracks, i, c.samples, c.patch, &idx);
    };
  }
  const RgbStageResult r = train_rgb_stage(in, skeleton ? &*skeleton : nullptr, c.rgb, c.train, printer(out));
  save_checkpoint(r.model.save(), rgb_path(c, c.train.mode));
  write_text(c.out / (std::string("metrics_rgb_") + to_string(c.train.mode) + ".jsonl"), to_jsonl(r.metrics));
  out << "rgb (" << to_string(c.train.mode) << ") held-out accuracy " << r.metrics.back().val_acc << "\n";
  return kExitOk;
}

struct Models {
  std::optional<StGcnModel> skeleton;
  std::optional<RgbModel> none, soft, fixed;
};

Models load_models(const Config& c) {
  Models m;
  if (fs::exists(c.out / "skeleton.ckpt")) m.skeleton = load_skeleton(c);
  m.none = load_rgb_if_present(c, AttentionMode::kNone);
  m.soft = load_rgb_if_present(c, AttentionMode::kSoft);
  m.fixed = load_rgb_if_present(c, AttentionMode::kFixed);
  if (!m.skeleton && !m.none && !m.soft && !m.fixed) throw_data("no trained models in '" + c.out.string() + "'");
  return m;
}

template <typename T>
T* ptr(std::optional<T>& o) {
  return o ? &*o : nullptr;
}

int cmd_evaluate(const Config& c, std::ostream& out) {
  const Dataset d = load_dataset(c);
  const std::vector<Tensor> grids = load_grids(c, d);
  Models m = load_models(c);
  const AblationReport rep = evaluate(d, d.test, grids, ptr(m.skeleton), ptr(m.none), ptr(m.soft), ptr(m.fixed));
  json j = json::array();
  for (const AblationRow& row : rep.rows) {
    if (row.index > 4) continue;
    json r;
    r["method"] = row.method;
    r["accuracy"] = row.accuracy ? json(*row.accuracy) : json(nullptr);
    j.push_back(r);
  }
  write_text(c.out / "evaluation.json", j.dump(2) + "\n");
  for (const AblationRow& row : rep.rows) {
    if (row.index <= 4) out << row.method << ": " << (row.accuracy ? std::to_string(*row.accuracy) : "-") << "\n";
  }
  return kExitOk;
}

int cmd_ensemble(const Config& c, std::ostream& out) {
  const Dataset d = load_dataset(c);
  const std::vector<Tensor> grids = load_grids(c, d);
  Models m = load_models(c);
  if (!m.skeleton) throw_data("ensemble needs skeleton.ckpt (run train-skeleton first)");
  RgbModel* rgb = m.fixed ? &*m.fixed : m.soft ? &*m.soft : ptr(m.none);
  if (rgb == nullptr) throw_data("ensemble needs an rgb model (run train-rgb first)");
  const AblationReport rep = evaluate(d, d.test, grids, ptr(m.skeleton), ptr(m.none), ptr(m.soft), ptr(m.fixed));
  write_text(c.out / "report.txt", rep.to_text());

  const std::vector<Tensor> pj = skeleton_probabilities(*m.skeleton, d, d.test);
  const std::vector<Tensor> pr = rgb_probabilities(*rgb, d, grids, d.test);
  const EnsembleResult e = ensemble(pj, pr, labels_of(d, d.test));
  std::string lines;
  for (std::size_t i = 0; i < d.test.size(); ++i) {
    json j;
    j["sample"] = d.test[i];
    j["label"] = d.samples[d.test[i]].label;
    j["rgb_mode"] = to_string(rgb->mode);
    j["combined"] = std::vector<float>(e.entries[i].combined.data().begin(), e.entries[i].combined.data().end());
    j["predicted"] = e.entries[i].predicted;
    lines += j.dump() + "\n";
  }
  write_text(c.out / "predictions.jsonl", lines);
  out << rep.to_text();
  return kExitOk;
}

int cmd_grad_check(std::ostream& out) {
  bool ok = true;
  for (const GradCheckResult& r : run_gradient_suite()) {
    const bool pass = r.max_rel_error < kGradTolerance;
    ok = ok && pass;
    char line[128];
    std::snprintf(line, sizeof line, "%-34s %.3e  %s\n", r.name.c_str(), r.max_rel_error, pass ? "ok" : "FAIL");
    out << line;
  }
  return ok ? kExitOk : kExitNumeric;
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShape:
    case ErrorKind::kUsage: return kExitUsage;
    case ErrorKind::kNumeric: return kExitNumeric;
    default: return kExitData;
  }
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Skeleton-guided attention fusion for activity recognition", "skelfuse"};
  app.require_subcommand(1);
  app.set_version_flag("--version", version_string());
  Options o;

  struct Sub {
    const char* name;
    const char* help;
  };
  const Sub subs[] = {
      {"gen-synthetic", "Generate the synthetic skeleton/video dataset"},
      {"train-skeleton", "Train the skeleton branch"},
      {"build-stroi", "Build ST-ROI images for every sample"},
      {"extract-weights", "Compute per-part joint weights with the trained skeleton branch"},
      {"train-rgb", "Train the RGB branch on (weighted) ST-ROI images"},
      {"evaluate", "Held-out accuracy of every trained model"},
      {"ensemble", "Ensemble inference and the ablation report"},
      {"grad-check", "Finite-difference gradient checks"},
  };
  for (const Sub& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    if (std::string(s.name) == "grad-check") continue;
    sub->add_option("--config", o.config_path, "Config file (key = value)");
    sub->add_option("--seed", o.seed, "Seed for data generation and training");
    sub->add_option("--out", o.out, "Output directory");
    if (std::string(s.name) == "train-rgb") {
      sub->add_option("--mode", o.mode, "Attention mode")->check(CLI::IsMember({"fixed", "soft", "none"}));
    }
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << version_string() << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (name == "grad-check") return cmd_grad_check(out);
    const Config c = resolve(o);
    if (name == "gen-synthetic") return cmd_gen_synthetic(c, out);
    if (name == "train-skeleton") return cmd_train_skeleton(c, out);
    if (name == "build-stroi") return cmd_build_stroi(c, out);
    if (name == "extract-weights") return cmd_extract_weights(c, out);
    if (name == "train-rgb") return cmd_train_rgb(c, out);
    if (name == "evaluate") return cmd_evaluate(c, out);
    return cmd_ensemble(c, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace skelfuse::cli

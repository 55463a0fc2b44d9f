#include "skelfuse_cli/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "skelfuse/error.hpp"
#include "skelfuse_cli/version.hpp"

namespace skelfuse::cli {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  return out;
}

struct BadValue {};

template <typename T>
T number(const std::string& s) {
  T v{};
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) throw BadValue{};
  return v;
}

bool boolean(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw BadValue{};
}

std::vector<std::size_t> sizes(const std::string& s) {
  std::vector<std::size_t> out;
  if (trim(s).empty()) return out;
  for (const auto& item : split(s, ',')) out.push_back(number<std::size_t>(item));
  return out;
}

std::string fmt(float v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}

std::string fmt(bool v) { return v ? "true" : "false"; }

std::string fmt(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::vector<StGcnLayerSpec> layer_plan(const std::string& s) {
  std::vector<StGcnLayerSpec> out;
  for (const auto& item : split(s, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw BadValue{};
    out.push_back({number<std::size_t>(trim(item.substr(0, colon))), number<std::size_t>(trim(item.substr(colon + 1)))});
  }
  if (out.empty()) throw BadValue{};
  return out;
}

std::string fmt(const std::vector<StGcnLayerSpec>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out += (i ? "," : "") + std::to_string(v[i].channels) + ":" + std::to_string(v[i].stride);
  }
  return out;
}

struct Key {
  const char* name;
  std::function<void(Config&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

#define SIZE_KEY(name, field) \
  Key { name, [](Config& c, const std::string& v) { c.field = number<std::size_t>(v); }, [](const Config& c) { return std::to_string(c.field); } }
#define FLOAT_KEY(name, field) \
  Key { name, [](Config& c, const std::string& v) { c.field = number<float>(v); }, [](const Config& c) { return fmt(c.field); } }
#define BOOL_KEY(name, field) \
  Key { name, [](Config& c, const std::string& v) { c.field = boolean(v); }, [](const Config& c) { return fmt(c.field); } }
#define SIZES_KEY(name, field) \
  Key { name, [](Config& c, const std::string& v) { c.field = sizes(v); }, [](const Config& c) { return fmt(c.field); } }

const std::vector<Key>& keys() {
  static const std::vector<Key> table{
      {"template", [](Config& c, const std::string& v) { c.template_source = v; }, [](const Config& c) { return c.template_source; }},
      {"dataset", [](Config& c, const std::string& v) { c.dataset = v; }, [](const Config& c) { return c.dataset; }},
      SIZE_KEY("synthetic.classes", synthetic.num_classes),
      SIZE_KEY("synthetic.samples_per_class", synthetic.samples_per_class),
      SIZE_KEY("synthetic.frames", synthetic.frames),
      SIZE_KEY("synthetic.image_size", synthetic.image_size),
      FLOAT_KEY("synthetic.pixel_noise", synthetic.pixel_noise),
      FLOAT_KEY("synthetic.joint_noise", synthetic.joint_noise),
      SIZE_KEY("synthetic.distractors", synthetic.distractors),
      BOOL_KEY("synthetic.two_subject", synthetic.two_subject),
      FLOAT_KEY("synthetic.train_fraction", synthetic.train_fraction),
      SIZE_KEY("K_roi", parts),
      SIZE_KEY("L", samples),
      SIZE_KEY("P", patch),
      SIZE_KEY("S", rgb.input_side),
      SIZE_KEY("gamma", gcn.temporal_kernel),
      FLOAT_KEY("alpha", gcn.alpha),
      {"gcn.layers", [](Config& c, const std::string& v) { c.gcn.layers = layer_plan(v); }, [](const Config& c) { return fmt(c.gcn.layers); }},
      SIZE_KEY("rgb.stem_channels", rgb.stem_channels),
      SIZE_KEY("rgb.stem_kernel", rgb.stem_kernel),
      SIZE_KEY("rgb.stem_stride", rgb.stem_stride),
      SIZES_KEY("rgb.stage_channels", rgb.stage_channels),
      SIZES_KEY("rgb.stage_strides", rgb.stage_strides),
      SIZE_KEY("rgb.blocks_per_stage", rgb.blocks_per_stage),
      SIZE_KEY("epochs", train.epochs),
      SIZE_KEY("batch", train.batch),
      FLOAT_KEY("lr0", train.lr0),
      SIZES_KEY("decay_epochs", train.decay_epochs),
      FLOAT_KEY("momentum", train.momentum),
      {"loss",
       [](Config& c, const std::string& v) {
         if (v == "squared") {
           c.train.loss = LossKind::kSquared;
         } else if (v == "cross_entropy") {
           c.train.loss = LossKind::kCrossEntropy;
         } else {
           throw BadValue{};
         }
       },
       [](const Config& c) { return std::string(c.train.loss == LossKind::kSquared ? "squared" : "cross_entropy"); }},
      {"attention_mode",
       [](Config& c, const std::string& v) {
         if (v != "fixed" && v != "soft" && v != "none") throw BadValue{};
         c.train.mode = parse_attention_mode(v);
       },
       [](const Config& c) { return std::string(to_string(c.train.mode)); }},
      BOOL_KEY("random_flip", train.random_flip),
      BOOL_KEY("random_frames", train.random_frames),
      {"seed",
       [](Config& c, const std::string& v) { c.train.seed = c.synthetic.seed = number<std::uint64_t>(v); },
       [](const Config& c) { return std::to_string(c.train.seed); }},
      {"out", [](Config& c, const std::string& v) { c.out = v; }, [](const Config& c) { return c.out.string(); }},
  };
  return table;
}

#undef SIZE_KEY
#undef FLOAT_KEY
#undef BOOL_KEY
#undef SIZES_KEY

}  // namespace

void Config::validate() const {
  if (dataset != "synthetic") throw_usage("dataset '" + dataset + "' is not supported (only 'synthetic')");
  synthetic.validate();
  gcn.validate();
  rgb.validate();
  train.validate();
  const SkeletonTemplate tmpl = load_template();
  if (parts != tmpl.parts.size()) {
    throw_usage("K_roi = " + std::to_string(parts) + " but the template defines " + std::to_string(tmpl.parts.size()) + " parts");
  }
  if (tmpl.joint_count != stick_figure_template().joint_count) {
    throw_usage("synthetic data has 15 joints; the template defines " + std::to_string(tmpl.joint_count));
  }
  if (samples == 0 || samples > synthetic.frames) throw_usage("L must lie in [1, synthetic.frames]");
  if (patch < 2 || patch % subject_slots() != 0) throw_usage("P must be at least 2 and divisible by the subject count");
  if (synthetic.frames < gcn.min_frames()) throw_usage("synthetic.frames is shorter than the GCN stride plan allows");
}

SkeletonTemplate Config::load_template() const {
  if (template_source == "stick15") return stick_figure_template();
  return SkeletonTemplate::load(template_source);
}

std::string Config::to_text() const {
  std::string out;
  for (const Key& k : keys()) out += std::string(k.name) + " = " + k.get(*this) + "\n";
  return out;
}

Config parse_config(const std::string& text) {
  Config c;
  std::istringstream in(text);
  std::string line;
  std::size_t number_of_line = 0;
  while (std::getline(in, line)) {
    ++number_of_line;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = " (line " + std::to_string(number_of_line) + ")";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw_usage("expected key = value" + where);
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    const auto& table = keys();
    const auto it = std::find_if(table.begin(), table.end(), [&](const Key& k) { return key == k.name; });
    if (it == table.end()) throw_usage("unknown key '" + key + "'" + where);
    try {
      it->set(c, value);
    } catch (const BadValue&) {
      throw_usage("invalid value '" + value + "' for key '" + key + "'" + where);
    }
  }
  return c;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw_data("cannot read config file '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void apply_environment(Config& config) {
  if (const char* seed = std::getenv("SKELFUSE_SEED"); seed != nullptr && *seed != '\0') {
    try {
      config.train.seed = config.synthetic.seed = number<std::uint64_t>(seed);
    } catch (const BadValue&) {
      throw_usage(std::string("SKELFUSE_SEED is not an unsigned integer: '") + seed + "'");
    }
  }
  if (const char* out = std::getenv("SKELFUSE_OUT"); out != nullptr && *out != '\0') config.out = out;
}

std::string version_string() { return std::string("skelfuse ") + kVersion + " (" + kRevision + ")"; }

void write_resolved_config(const Config& config) {
  std::filesystem::create_directories(config.out);
  const auto path = config.out / "resolved.cfg";
  std::ofstream f(path);
  if (!f) throw_io("cannot write '" + path.string() + "'");
  f << "# " << version_string() << "\n" << config.to_text();
}

}  // namespace skelfuse::cli

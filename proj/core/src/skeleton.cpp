#include "skelfuse/skeleton.hpp"

#include <cmath>
#include <fstream>
#include <queue>
#include <set>
#include <sstream>

#include "skelfuse/error.hpp"

namespace skelfuse {

void SkeletonTemplate::validate() const {
  if (joint_count == 0) throw_data("skeleton template has no joints");
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (auto [a, b] : edges) {
    if (a >= joint_count || b >= joint_count) {
      throw_data("edge (" + std::to_string(a) + "," + std::to_string(b) + ") references a joint >= " +
                 std::to_string(joint_count));
    }
    if (a == b) throw_data("self-loop on joint " + std::to_string(a));
    if (!seen.insert({std::min(a, b), std::max(a, b)}).second) {
      throw_data("duplicate edge (" + std::to_string(a) + "," + std::to_string(b) + ")");
    }
  }
  const auto nb = neighbors();
  std::vector<bool> reached(joint_count, false);
  std::queue<std::size_t> q;
  q.push(0);
  reached[0] = true;
  std::size_t count = 1;
  while (!q.empty()) {
    std::size_t v = q.front();
    q.pop();
    for (std::size_t u : nb[v]) {
      if (!reached[u]) {
        reached[u] = true;
        ++count;
        q.push(u);
      }
    }
  }
  if (count != joint_count) throw_data("skeleton template is disconnected");
  for (const BodyPart& p : parts) {
    if (p.joint >= joint_count) {
      throw_data("part '" + p.name + "' references joint " + std::to_string(p.joint) + " >= " +
                 std::to_string(joint_count));
    }
  }
}

std::vector<std::size_t> SkeletonTemplate::part_joints() const {
  std::vector<std::size_t> out;
  out.reserve(parts.size());
  for (const BodyPart& p : parts) out.push_back(p.joint);
  return out;
}

std::vector<std::vector<std::size_t>> SkeletonTemplate::neighbors() const {
  std::vector<std::vector<std::size_t>> nb(joint_count);
  for (auto [a, b] : edges) {
    if (a < joint_count && b < joint_count) {
      nb[a].push_back(b);
      nb[b].push_back(a);
    }
  }
  return nb;
}

SkeletonTemplate SkeletonTemplate::parse(std::istream& in) {
  SkeletonTemplate t;
  std::string line;
  std::size_t lineno = 0;
  bool have_count = false;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string first;
    if (!(ls >> first) || first[0] == '#') continue;
    if (!have_count) {
      try {
        std::size_t pos = 0;
        t.joint_count = std::stoul(first, &pos);
        if (pos != first.size()) throw std::invalid_argument(first);
      } catch (const std::exception&) {
        throw ParseError(lineno, "expected joint count, got '" + first + "'");
      }
      have_count = true;
      continue;
    }
    if (first == "part") {
      BodyPart p;
      if (!(ls >> p.name >> p.joint)) throw ParseError(lineno, "expected 'part <name> <joint>'");
      t.parts.push_back(p);
      continue;
    }
    std::size_t a = 0, b = 0;
    std::istringstream es(line);
    if (!(es >> a >> b)) throw ParseError(lineno, "expected 'i j' edge");
    std::string extra;
    if (es >> extra) throw ParseError(lineno, "trailing tokens after edge");
    t.edges.emplace_back(a, b);
  }
  if (!have_count) throw ParseError(lineno + 1, "missing joint count");
  t.names.resize(t.joint_count);
  for (std::size_t i = 0; i < t.joint_count; ++i) t.names[i] = "joint" + std::to_string(i);
  t.validate();
  return t;
}

SkeletonTemplate SkeletonTemplate::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw_io("cannot open template file " + path.string());
  return parse(in);
}

void SkeletonTemplate::write(std::ostream& out) const {
  out << joint_count << '\n';
  for (auto [a, b] : edges) out << a << ' ' << b << '\n';
  for (const BodyPart& p : parts) out << "part " << p.name << ' ' << p.joint << '\n';
}

SkeletonTemplate stick_figure_template() {
  using namespace joints;
  SkeletonTemplate t;
  t.joint_count = 15;
  t.edges = {{kPelvis, kNeck},         {kNeck, kHead},           {kNeck, kLeftShoulder},
             {kLeftShoulder, kLeftElbow}, {kLeftElbow, kLeftHand}, {kNeck, kRightShoulder},
             {kRightShoulder, kRightElbow}, {kRightElbow, kRightHand}, {kPelvis, kLeftHip},
             {kLeftHip, kLeftKnee},     {kLeftKnee, kLeftFoot},   {kPelvis, kRightHip},
             {kRightHip, kRightKnee},   {kRightKnee, kRightFoot}};
  t.names = {"pelvis",   "neck",      "head",      "l_shoulder", "l_elbow",
             "l_hand",   "r_shoulder", "r_elbow",  "r_hand",     "l_hip",
             "l_knee",   "l_foot",    "r_hip",     "r_knee",     "r_foot"};
  t.parts = {{"head", kHead},
             {"left_hand", kLeftHand},
             {"right_hand", kRightHand},
             {"left_foot", kLeftFoot},
             {"right_foot", kRightFoot}};
  t.validate();
  return t;
}

bool SkeletonSequence::joint_present(std::size_t t, std::size_t j) const {
  const std::size_t c = channels();
  const float* p = coords.data().data() + (t * joints() + j) * c;
  for (std::size_t k = 0; k < c; ++k) {
    if (p[k] != 0.0f) return true;
  }
  return false;
}

Tensor compute_gravity_center(const SkeletonSequence& seq) {
  const std::size_t c = seq.channels();
  std::vector<double> sum(c, 0.0);
  std::size_t count = 0;
  for (std::size_t t = 0; t < seq.frames(); ++t) {
    for (std::size_t j = 0; j < seq.joints(); ++j) {
      if (!seq.joint_present(t, j)) continue;
      const float* p = seq.coords.data().data() + (t * seq.joints() + j) * c;
      for (std::size_t k = 0; k < c; ++k) sum[k] += p[k];
      ++count;
    }
  }
  if (count == 0) throw_data("gravity center: every joint is missing");
  Tensor out({c});
  for (std::size_t k = 0; k < c; ++k) out[k] = static_cast<float>(sum[k] / static_cast<double>(count));
  return out;
}

Tensor joint_mean_positions(const SkeletonSequence& seq, std::vector<bool>* present) {
  const std::size_t m = seq.joints(), c = seq.channels();
  std::vector<double> sum(m * c, 0.0);
  std::vector<std::size_t> count(m, 0);
  for (std::size_t t = 0; t < seq.frames(); ++t) {
    for (std::size_t j = 0; j < m; ++j) {
      if (!seq.joint_present(t, j)) continue;
      const float* p = seq.coords.data().data() + (t * m + j) * c;
      for (std::size_t k = 0; k < c; ++k) sum[j * c + k] += p[k];
      ++count[j];
    }
  }
  Tensor out({m, c});
  if (present != nullptr) present->assign(m, false);
  for (std::size_t j = 0; j < m; ++j) {
    if (count[j] == 0) continue;
    if (present != nullptr) (*present)[j] = true;
    for (std::size_t k = 0; k < c; ++k) out[j * c + k] = static_cast<float>(sum[j * c + k] / count[j]);
  }
  return out;
}

PartitionedAdjacency partition_neighbors(const SkeletonTemplate& tmpl, const SkeletonSequence& seq) {
  tmpl.validate();
  if (seq.joints() != tmpl.joint_count) {
    throw_data("sequence has " + std::to_string(seq.joints()) + " joints, template expects " +
               std::to_string(tmpl.joint_count));
  }
  const std::size_t m = tmpl.joint_count, c = seq.channels();
  const Tensor center = compute_gravity_center(seq);
  std::vector<bool> present;
  const Tensor mean_pos = joint_mean_positions(seq, &present);
  std::vector<double> r(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      const double d = static_cast<double>(mean_pos[j * c + k]) - center[k];
      s += d * d;
    }
    r[j] = std::sqrt(s);
  }

  PartitionedAdjacency adj;
  for (std::size_t k = 0; k < kPartitionSubsets; ++k) adj.raw.push_back(Tensor::zeros({m, m}));
  const auto nb = tmpl.neighbors();
  for (std::size_t i = 0; i < m; ++i) {
    if (!present[i]) continue;
    adj.raw[0][i * m + i] = 1.0f;
    for (std::size_t j : nb[i]) {
      if (!present[j]) continue;
      const std::size_t subset = r[j] <= r[i] ? 1 : 2;
      adj.raw[subset][i * m + j] = 1.0f;
    }
  }
  return adj;
}

void normalize_adjacency(PartitionedAdjacency& adj, float alpha) {
  if (!(alpha > 0.0f)) throw_usage("normalize_adjacency: alpha must be positive");
  if (adj.raw.empty()) throw_usage("normalize_adjacency: raw adjacency is empty");
  adj.alpha = alpha;
  adj.normalized.clear();
  for (const Tensor& a : adj.raw) {
    const std::size_t m = a.dim(0);
    std::vector<float> deg(m, 0.0f);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < m; ++j) deg[i] += a[i * m + j];
    }
    Tensor out({m, m});
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        out[i * m + j] = a[i * m + j] / std::sqrt((deg[i] + alpha) * (deg[j] + alpha));
      }
    }
    adj.normalized.push_back(std::move(out));
  }
}

}  // namespace skelfuse

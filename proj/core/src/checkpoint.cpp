#include "skelfuse/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "skelfuse/error.hpp"

namespace skelfuse {
namespace {

constexpr char kMagic[4] = {'S', 'K', 'F', 'Z'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }
  std::vector<std::uint8_t> take() { return std::move(out_); }
  std::span<const std::uint8_t> view() const { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  template <typename U>
  U uint() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(in_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  float f32() { return std::bit_cast<float>(uint<std::uint32_t>()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw Error(ErrorKind::kCorrupt, "checkpoint truncated");
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::uint8_t> encode_checkpoint(const NamedTensors& tensors) {
  std::set<std::string> names;
  for (const auto& [name, t] : tensors) {
    if (!names.insert(name).second) throw_usage("checkpoint: duplicate tensor name '" + name + "'");
  }
  Writer w;
  w.bytes(kMagic, 4);
  w.uint<std::uint32_t>(kCheckpointVersion);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) w.uint<std::uint64_t>(e);
    for (float v : t.data()) w.f32(v);
  }
  w.uint<std::uint64_t>(fnv1a64(w.view()));
  return w.take();
}

NamedTensors decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 + 4 + 4 + 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error(ErrorKind::kCorrupt, "checkpoint: bad magic");
  }
  Reader r(bytes.subspan(4));
  const auto version = r.uint<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::kVersion, "checkpoint: unsupported format version " + std::to_string(version));
  }
  const auto body = bytes.first(bytes.size() - 8);
  Reader tail(bytes.subspan(bytes.size() - 8));
  if (fnv1a64(body) != tail.uint<std::uint64_t>()) throw Error(ErrorKind::kCorrupt, "checkpoint: checksum mismatch");

  Reader in(body.subspan(8));
  const auto count = in.uint<std::uint32_t>();
  NamedTensors out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = in.uint<std::uint32_t>();
    std::string name = in.str(len);
    const auto rank = in.uint<std::uint32_t>();
    Shape shape(rank);
    std::size_t numel = 1;
    for (auto& e : shape) {
      e = static_cast<std::size_t>(in.uint<std::uint64_t>());
      if (e == 0) throw Error(ErrorKind::kCorrupt, "checkpoint: zero extent in '" + name + "'");
      numel *= e;
    }
    if (numel > in.remaining() / 4) throw Error(ErrorKind::kCorrupt, "checkpoint: tensor '" + name + "' overruns file");
    std::vector<float> data(numel);
    for (float& v : data) v = in.f32();
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (in.remaining() != 0) throw Error(ErrorKind::kCorrupt, "checkpoint: trailing bytes");
  return out;
}

void save_checkpoint(const NamedTensors& tensors, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(tensors);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw_io("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw_io("short write to " + path.string());
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_io("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

const Tensor& find_tensor(const NamedTensors& tensors, const std::string& name) {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw_data("tensor '" + name + "' not found in bundle");
}

bool has_tensor(const NamedTensors& tensors, const std::string& name) {
  for (const auto& [n, t] : tensors) {
    if (n == name) return true;
  }
  return false;
}

}  // namespace skelfuse

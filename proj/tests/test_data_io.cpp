#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "skelfuse/checkpoint.hpp"
#include "skelfuse/data_io.hpp"
#include "skelfuse/synthetic.hpp"

using namespace skelfuse;

#ifndef SKELFUSE_TEST_DATA
#define SKELFUSE_TEST_DATA "tests/data"
#endif

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "skelfuse_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

NamedTensors golden_bundle() {
  return {{"a", Tensor({2, 2}, std::vector<float>{1.0f, -2.5f, 0.125f, 3.0f})}, {"scalar.b", Tensor::scalar(7.0f)}};
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::kUsage;
}

}  // namespace

TEST_CASE("skeleton text parses header and rows") {
  std::istringstream in("2 3 3 0 1\n1 2 3\n4 5 6\n7 8 9\n1 1 1\n2 2 2\n3 3 3\n");
  const auto subjects = parse_skeleton_text(in);
  REQUIRE(subjects.size() == 1);
  CHECK(subjects[0].coords.shape() == Shape{2, 3, 3});
  CHECK(subjects[0].coords.at({0, 2, 0}) == 7.0f);
  CHECK(subjects[0].coords.at({1, 0, 2}) == 1.0f);
  CHECK(subjects[0].label == 0);
}

TEST_CASE("truncated skeleton text reports the first missing line") {
  std::istringstream in("5 1 3 1 1\n0 0 1\n0 0 2\n0 0 3\n");
  try {
    (void)parse_skeleton_text(in);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 5);
    CHECK(e.kind() == ErrorKind::kParse);
  }
  std::istringstream bad("1 1 3 0 1\n0 x 1\n");
  CHECK(kind_of([&] { (void)parse_skeleton_text(bad); }) == ErrorKind::kParse);
}

TEST_CASE("skeleton text round trip is bit-exact") {
  SyntheticSpec spec;
  spec.two_subject = true;
  const auto sample = generate_synthetic_sample(spec, 3, false);
  const auto path = scratch("round.skel");
  write_skeleton_file(path, sample.skeletons);
  const auto back = parse_skeleton_file(path);
  REQUIRE(back.size() == sample.skeletons.size());
  for (std::size_t s = 0; s < back.size(); ++s) CHECK(back[s].coords == sample.skeletons[s].coords);
}

TEST_CASE("checkpoint round trip and integrity checks") {
  Rng rng(1);
  NamedTensors bundle{{"w", oracle::random(rng, {3, 4})}, {"b", oracle::random(rng, {4})}};
  const auto bytes = encode_checkpoint(bundle);
  const NamedTensors back = decode_checkpoint(bytes);
  REQUIRE(back.size() == 2);
  CHECK(back[0].first == "w");
  CHECK(back[0].second == bundle[0].second);
  CHECK(back[1].second == bundle[1].second);

  for (std::size_t pos : {std::size_t{5}, std::size_t{20}, bytes.size() - 3}) {
    auto flipped = bytes;
    flipped[pos] ^= 0x10;
    const ErrorKind k = kind_of([&] { (void)decode_checkpoint(flipped); });
    CHECK((k == ErrorKind::kCorrupt || k == ErrorKind::kVersion));
  }
  auto flipped = bytes;
  flipped[20] ^= 0x01;
  CHECK(kind_of([&] { (void)decode_checkpoint(flipped); }) == ErrorKind::kCorrupt);

  NamedTensors future = bundle;
  auto v2 = encode_checkpoint(future);
  v2[4] = 2;
  // Re-seal the checksum so only the version differs.
  const std::uint64_t h = fnv1a64(std::span<const std::uint8_t>(v2.data(), v2.size() - 8));
  for (int i = 0; i < 8; ++i) v2[v2.size() - 8 + i] = static_cast<std::uint8_t>(h >> (8 * i));
  CHECK(kind_of([&] { (void)decode_checkpoint(v2); }) == ErrorKind::kVersion);

  const auto empty = encode_checkpoint({});
  CHECK(decode_checkpoint(empty).empty());
  CHECK(kind_of([&] { (void)decode_checkpoint(std::vector<std::uint8_t>{1, 2, 3}); }) == ErrorKind::kCorrupt);
  CHECK(kind_of([&] { (void)load_checkpoint(scratch("does_not_exist.ckpt")); }) == ErrorKind::kIo);
  CHECK(kind_of([&] { (void)find_tensor(bundle, "nope"); }) == ErrorKind::kData);
}

TEST_CASE("version-1 golden checkpoint still loads") {
  const auto path = std::filesystem::path(SKELFUSE_TEST_DATA) / "golden_v1.ckpt";
  if (std::getenv("SKELFUSE_REGEN_GOLDEN") != nullptr) save_checkpoint(golden_bundle(), path);
  const NamedTensors got = load_checkpoint(path);
  const NamedTensors want = golden_bundle();
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    CHECK(got[i].first == want[i].first);
    CHECK(got[i].second == want[i].second);
  }
  std::ifstream f(path, std::ios::binary);
  const std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  CHECK(raw == encode_checkpoint(want));
}

TEST_CASE("png export rounds to the nearest byte") {
  CHECK(to_byte(0.5f) == 128);
  CHECK(to_byte(0.0f) == 0);
  CHECK(to_byte(1.0f) == 255);
  CHECK(to_byte(-3.0f) == 0);
  CHECK(to_byte(7.0f) == 255);
  Tensor img({3, 2, 3}, 0.5f);
  img.at({2, 1, 2}) = 1.0f;
  const auto path = scratch("half.png");
  export_png(img, path);
  const Image back = read_png(path);
  CHECK(back.height == 2);
  CHECK(back.width == 3);
  CHECK(back.at(0, 0, 0) == 128);
  CHECK(back.at(1, 2, 2) == 255);
  CHECK(kind_of([] { (void)read_png(scratch("missing.png")); }) == ErrorKind::kIo);
}

TEST_CASE("synthetic generator is deterministic") {
  SyntheticSpec spec;
  const auto a = generate_synthetic_sample(spec, 7);
  const auto b = generate_synthetic_sample(spec, 7);
  CHECK(a.skeletons[0].coords == b.skeletons[0].coords);
  CHECK(a.frames.frames[3].pixels == b.frames.frames[3].pixels);
  const std::vector<std::size_t> which{3};
  CHECK(render_synthetic_frames(spec, 7, which).frames[3].pixels == a.frames.frames[3].pixels);
  spec.seed = 43;
  CHECK(generate_synthetic_sample(spec, 7).skeletons[0].coords != a.skeletons[0].coords);
}

TEST_CASE("the joint with the largest motion is the class's active joint") {
  SyntheticSpec spec;
  spec.num_classes = 5;
  for (std::size_t i = 0; i < 10; ++i) {
    const auto s = generate_synthetic_sample(spec, i, false);
    const Tensor& c = s.skeletons[0].coords;
    const std::size_t t_count = c.dim(0);
    std::size_t best = 0;
    double best_var = -1.0;
    for (std::size_t j = 0; j < 15; ++j) {
      double var = 0.0;
      for (std::size_t k = 0; k < 3; ++k) {
        double m = 0.0, m2 = 0.0;
        for (std::size_t t = 0; t < t_count; ++t) {
          m += c.at({t, j, k});
          m2 += c.at({t, j, k}) * c.at({t, j, k});
        }
        m /= static_cast<double>(t_count);
        var += m2 / static_cast<double>(t_count) - m * m;
      }
      if (var > best_var) {
        best_var = var;
        best = j;
      }
    }
    CHECK(best == synthetic_active_joint(static_cast<std::size_t>(s.label)));
  }
}

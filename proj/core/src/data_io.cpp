#include "skelfuse/data_io.hpp"

#include <png.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <memory>
#include <ostream>
#include <sstream>

#include "skelfuse/error.hpp"

namespace skelfuse {
namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

template <typename T>
T parse_number(std::string_view field, std::size_t line, const char* what) {
  T v{};
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw ParseError(line, std::string("invalid ") + what + " '" + std::string(field) + "'");
  }
  return v;
}

}  // namespace

std::vector<SkeletonSequence> parse_skeleton_text(std::istream& in) {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) throw ParseError(1, "missing header");
  const auto head = split_fields(line);
  if (head.size() != 5) throw ParseError(1, "header must be 'T M C label subject_count'");
  const auto t = parse_number<std::size_t>(head[0], 1, "T");
  const auto m = parse_number<std::size_t>(head[1], 1, "M");
  const auto c = parse_number<std::size_t>(head[2], 1, "C");
  const auto label = parse_number<int>(head[3], 1, "label");
  const auto subjects = parse_number<std::size_t>(head[4], 1, "subject_count");
  if (t == 0 || m == 0) throw ParseError(1, "T and M must be positive");
  if (c != 2 && c != 3) throw ParseError(1, "C must be 2 or 3");
  if (subjects != 1 && subjects != 2) throw ParseError(1, "subject_count must be 1 or 2");
  if (label < 0) throw ParseError(1, "label must be non-negative");

  std::vector<SkeletonSequence> out;
  for (std::size_t s = 0; s < subjects; ++s) {
    std::vector<float> coords;
    coords.reserve(t * m * c);
    for (std::size_t r = 0; r < t * m; ++r) {
      ++lineno;
      if (!std::getline(in, line)) throw ParseError(lineno, "expected " + std::to_string(c) + " coordinates, file ended");
      const auto fields = split_fields(line);
      if (fields.size() != c) {
        throw ParseError(lineno, "expected " + std::to_string(c) + " coordinates, got " + std::to_string(fields.size()));
      }
      for (auto f : fields) {
        const float v = parse_number<float>(f, lineno, "coordinate");
        if (!std::isfinite(v)) throw ParseError(lineno, "non-finite coordinate");
        coords.push_back(v);
      }
    }
    SkeletonSequence seq;
    seq.coords = Tensor({t, m, c}, std::move(coords));
    seq.label = label;
    seq.subject_count = subjects;
    out.push_back(std::move(seq));
  }
  while (std::getline(in, line)) {
    ++lineno;
    if (!split_fields(line).empty()) throw ParseError(lineno, "unexpected content after the declared frames");
  }
  return out;
}

std::vector<SkeletonSequence> parse_skeleton_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw_io("cannot open skeleton file '" + path.string() + "'");
  try {
    return parse_skeleton_text(in);
  } catch (const ParseError& e) {
    throw ParseError(e.line(), path.string() + ": " + e.what());
  }
}

void write_skeleton_text(std::ostream& out, const std::vector<SkeletonSequence>& subjects) {
  if (subjects.empty() || subjects.size() > 2) throw_usage("write_skeleton_text: one or two subjects required");
  const Shape& s = subjects[0].coords.shape();
  for (const auto& seq : subjects) {
    if (seq.coords.shape() != s) throw_shape("write_skeleton_text subjects", seq.coords.shape(), s);
  }
  out << s[0] << ' ' << s[1] << ' ' << s[2] << ' ' << subjects[0].label << ' ' << subjects.size() << '\n';
  char buf[64];
  for (const auto& seq : subjects) {
    const auto d = seq.coords.data();
    for (std::size_t r = 0; r < s[0] * s[1]; ++r) {
      for (std::size_t k = 0; k < s[2]; ++k) {
        const auto res = std::to_chars(buf, buf + sizeof buf, d[r * s[2] + k]);
        if (k > 0) out << ' ';
        out.write(buf, res.ptr - buf);
      }
      out << '\n';
    }
  }
}

void write_skeleton_file(const std::filesystem::path& path, const std::vector<SkeletonSequence>& subjects) {
  std::ofstream out(path);
  if (!out) throw_io("cannot write skeleton file '" + path.string() + "'");
  write_skeleton_text(out, subjects);
  if (!out) throw_io("write failed for '" + path.string() + "'");
}

std::uint8_t to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::floor(c * 255.0f + 0.5f));
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

void write_rgb_png(const std::filesystem::path& path, std::size_t h, std::size_t w, const std::vector<std::uint8_t>& rgb) {
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "wb"));
  if (!f) throw_io("cannot open '" + path.string() + "' for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_write_struct(&png, &info);
    throw_io("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw_io("libpng failed writing '" + path.string() + "'");
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < h; ++y) {
    png_write_row(png, const_cast<png_bytep>(rgb.data() + y * w * 3));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void export_png(const Tensor& image, const std::filesystem::path& path) {
  if (image.rank() != 3 || image.dim(0) != 3) throw_usage("export_png: image must be [3,H,W]");
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::vector<std::uint8_t> rgb(h * w * 3);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < h * w; ++i) rgb[i * 3 + c] = to_byte(image[c * h * w + i]);
  }
  write_rgb_png(path, h, w, rgb);
}

void export_stroi_png(const StRoiGrid& grid, const std::filesystem::path& path) { export_png(grid.image, path); }

void export_png(const Image& image, const std::filesystem::path& path) {
  write_rgb_png(path, image.height, image.width, image.pixels);
}

Image read_png(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "rb"));
  if (!f) throw_io("cannot open '" + path.string() + "'");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw_io("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorKind::kCorrupt, "'" + path.string() + "' is not a readable PNG");
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  Image img(h, w);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = img.pixels.data() + static_cast<std::size_t>(y) * w * 3;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

}  // namespace skelfuse

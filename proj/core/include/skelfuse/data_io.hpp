#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "skelfuse/skeleton.hpp"
#include "skelfuse/stroi.hpp"
#include "skelfuse/tensor.hpp"

namespace skelfuse {

// Skeleton text format: a header line "T M C label subject_count", then subject_count blocks of
// T*M lines with C space-separated values each (frame-major, joint-minor).

/// One sequence per performer; all share the header's label. Malformed input raises ParseError
/// with the 1-based line number (for truncated files, the first missing line).
std::vector<SkeletonSequence> parse_skeleton_text(std::istream& in);
std::vector<SkeletonSequence> parse_skeleton_file(const std::filesystem::path& path);

/// Values are written in shortest round-trip form, so parsing the output is bit-exact.
void write_skeleton_text(std::ostream& out, const std::vector<SkeletonSequence>& subjects);
void write_skeleton_file(const std::filesystem::path& path, const std::vector<SkeletonSequence>& subjects);

/// [3,H,W] in [0,1] -> 8-bit RGB PNG with byte = floor(clamp(v,0,1) * 255 + 0.5).
void export_png(const Tensor& image, const std::filesystem::path& path);
void export_stroi_png(const StRoiGrid& grid, const std::filesystem::path& path);
void export_png(const Image& image, const std::filesystem::path& path);
/// Reads 8-bit RGB or RGBA PNGs (alpha dropped).
Image read_png(const std::filesystem::path& path);

/// Byte value used by export_png.
std::uint8_t to_byte(float v);

}  // namespace skelfuse

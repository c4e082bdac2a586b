#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "crispedge/grid.hpp"
#include "crispedge/tensor.hpp"

namespace crispedge {

/// CRB1 container: "CRB1", four little-endian u32 dims (n, c, h, w), then the
/// values as little-endian IEEE-754 doubles, row-major.
std::string encode_crb(const Tensor& t);
/// Throws ParseError naming the offending byte offset, or the expected and
/// available byte counts when the payload is short.
Tensor decode_crb(std::string_view bytes);

/// Binary P5 graymap with maxval 255; stored values are 0 or 255.
std::string encode_pgm(const BoundaryMap& b);
/// ParseError on a malformed header, ValidationError on a value outside {0, 255}.
BoundaryMap decode_pgm(std::string_view bytes);

/// Whole-file helpers; IoError when the file cannot be opened.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

Tensor read_crb(const std::filesystem::path& path);
void write_crb(const Tensor& t, const std::filesystem::path& path);
BoundaryMap read_pgm(const std::filesystem::path& path);
void write_pgm(const BoundaryMap& b, const std::filesystem::path& path);

struct ManifestEntry {
  std::string id;
  std::string image;
  std::vector<std::string> annotations;
  std::string split;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// One `id<TAB>image<TAB>ann[,ann...]<TAB>split` line per entry. Paths are
/// relative to the manifest's directory unless absolute.
struct Manifest {
  std::vector<ManifestEntry> entries;

  /// ParseError with the line number on a malformed line.
  static Manifest parse(std::string_view text);
  [[nodiscard]] std::string format() const;
  static Manifest read(const std::filesystem::path& path);
  void write(const std::filesystem::path& path) const;
};

/// FNV-1a 64-bit hash, used for id-based splits.
std::uint64_t fnv1a(std::string_view s);

}  // namespace crispedge

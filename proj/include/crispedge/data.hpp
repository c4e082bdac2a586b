#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "crispedge/grid.hpp"
#include "crispedge/losses.hpp"
#include "crispedge/tensor.hpp"

namespace crispedge {

struct Sample {
  std::string id;
  /// (1, C, H, W), values in [0, 1].
  Tensor image;
  AnnotationSet annotations;
  /// Jitter-free outline for generated samples; empty otherwise.
  BoundaryMap outline;
  /// "train" or "test".
  std::string split = "train";
};

struct GenConfig {
  int count = 200;
  int height = 64;
  int width = 64;
  int channels = 3;
  int annotators = 3;
  double jitter = 1.0;
  std::uint64_t seed = 1;
  /// Percentage of ids (by hash) tagged "test".
  int holdout_percent = 20;
  int jobs = 1;

  /// ContractError on degenerate values.
  void validate() const;
};

/// Smooth background plus 1-4 occluding disks, rectangles and triangles with
/// pixel noise. Each annotator traces the visible outline displaced along the
/// normal by a smooth offset of magnitude <= jitter, rasterized and thinned
/// to unit width. Sample i depends only on (seed, i).
std::vector<Sample> gen_synthetic(const GenConfig& config);

/// "test" when fnv1a(id) % 100 < percent.
std::string holdout_split(const std::string& id, int percent);

struct AugmentSpec {
  double scale_lo = 1.0;
  double scale_hi = 1.0;
  /// Degrees, counter-clockwise about the image centre.
  std::vector<double> rotations{0.0};
  /// Also emit a horizontally mirrored copy for each rotation.
  bool flips = false;
  std::optional<std::pair<int, int>> crop;

  void validate() const;
};

/// One output per rotation (two with flips). One scale is drawn per call.
/// Multiples of 90 degrees at unit scale and flips are exact permutations;
/// other transforms resample the image bilinearly and the annotations by
/// nearest lookup plus forward splatting, then re-thin them. Throws
/// ContractError when the crop does not fit.
std::vector<Sample> augment(const Sample& sample, const AugmentSpec& spec, std::uint64_t seed);

/// Mirrors columns of the image, annotations and outline.
Sample flip_horizontal(const Sample& s);

/// Writes images/<id>.crb, annotations/<id>_<k>.pgm and `manifest.tsv` under
/// `dir`; returns the manifest path.
std::filesystem::path save_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples);
/// Loads every entry of a manifest written by save_dataset (or by hand).
std::vector<Sample> load_dataset(const std::filesystem::path& manifest);

/// Splits `samples` by their split tag.
std::pair<std::vector<Sample>, std::vector<Sample>> partition(const std::vector<Sample>& samples);

}  // namespace crispedge

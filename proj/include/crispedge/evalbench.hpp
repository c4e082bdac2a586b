#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "crispedge/grid.hpp"
#include "crispedge/losses.hpp"

namespace crispedge {

/// fraction * sqrt(h^2 + w^2).
double tolerance_pixels(int h, int w, double max_dist_fraction);

/// Localness fraction used for NYUD-style evaluation (0.011 / 4).
inline constexpr double nyud_localness_fraction = 0.011 / 4.0;

/// Separable Gaussian blur with replicated borders.
ProbabilityMap gaussian_smooth(const ProbabilityMap& p, double sigma = 1.0);

/// Keeps pixels that are not strictly exceeded by either neighbour along the
/// quantized ridge normal, the principal curvature direction of the smoothed map.
ProbabilityMap non_max_suppress(const ProbabilityMap& p);

/// Two-subiteration morphological thinning to unit width (8-connected).
BoundaryMap thin(BoundaryMap b);

/// NMS followed by thinning of the support, repeated until nothing changes.
/// Surviving pixels keep their probability; the result is a fixed point.
ProbabilityMap nms_thin(const ProbabilityMap& p);

/// 1 where p >= t.
BoundaryMap binarize(const ProbabilityMap& p, double t);

struct MatchResult {
  int matched_detected = 0;
  int matched_gt = 0;
};

/// Maximum one-to-one matching between detected and gt pixels no farther
/// than tol_px apart. Throws ShapeError.
MatchResult match_boundaries(const BoundaryMap& detected, const BoundaryMap& gt, double tol_px);

/// Same matching, reporting which detected pixels were matched.
std::vector<bool> matched_detections(const BoundaryMap& detected, const BoundaryMap& gt, double tol_px);

struct MatchCounts {
  double threshold = 0.0;
  long matched_detected = 0;
  long total_detected = 0;
  long matched_gt = 0;
  long total_gt = 0;

  /// 1 when nothing was detected.
  [[nodiscard]] double precision() const;
  /// 1 when there is nothing to find.
  [[nodiscard]] double recall() const;
  [[nodiscard]] double f() const;
  MatchCounts& operator+=(const MatchCounts& o);
};

double f_measure(double precision, double recall);

/// `n` uniform thresholds k / (n + 1), k = 1..n.
std::vector<double> threshold_grid(int n);

/// Binarizes (after nms_thin and a per-level re-thinning when post_process is
/// set) and matches against each annotator. A detection counts once if any
/// annotator matches it; gt totals and matches are summed over annotators.
MatchCounts pr_at_threshold(const ProbabilityMap& p, const AnnotationSet& annotations, double t, double tol_px,
                            bool post_process);

/// Counts for every threshold of the grid; nms_thin runs once.
std::vector<MatchCounts> evaluate_image(const ProbabilityMap& p, const AnnotationSet& annotations,
                                        std::span<const double> thresholds, double tol_px, bool post_process);

enum class Criterion { correctness, localness, thickness };
const char* criterion_suffix(Criterion c);

struct PrPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;
};
using PrCurve = std::vector<PrPoint>;

struct BenchmarkScores {
  double ods = 0.0;
  double ois = 0.0;
  double ap = 0.0;
  Criterion criterion = Criterion::correctness;
};

struct Summary {
  BenchmarkScores scores;
  PrCurve curve;
};

/// counts[image][threshold]. Throws ContractError on an empty set or a
/// ragged threshold grid.
Summary summarize(const std::vector<std::vector<MatchCounts>>& counts, Criterion criterion);

/// Area under the PR curve with running-max interpolated precision.
double average_precision(const PrCurve& curve);

struct EvalOptions {
  int thresholds = 33;
  int jobs = 1;
};

struct CriteriaReport {
  Summary correctness;
  Summary localness;
  Summary thickness;
  /// Tolerances in pixels of the first image, for reporting.
  double tol_default = 0.0;
  double tol_local = 0.0;

  [[nodiscard]] const Summary& get(Criterion c) const;
};

/// Correctness: d0 with post-processing; localness: d0/4 with
/// post-processing; thickness: d0 without. d0 is per-image.
CriteriaReport eval_criteria(std::span<const ProbabilityMap> predictions, std::span<const AnnotationSet> annotations,
                             double base_fraction, const EvalOptions& options = {});

void write_pr_csv(std::ostream& os, const PrCurve& curve);
/// `ods_c=...` lines for all three criteria.
void write_score_block(std::ostream& os, const CriteriaReport& report);

/// %.6g
std::string format_number(double v);

}  // namespace crispedge

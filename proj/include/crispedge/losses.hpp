#pragma once

#include <span>
#include <vector>

#include "crispedge/autograd.hpp"
#include "crispedge/grid.hpp"

namespace crispedge {

struct LossConfig {
  /// Guard in the soft dice ratio.
  double epsilon = 1e-6;
  /// Fixed balance factor of the soft dice term in the adaptive loss.
  double zeta = 0.1;
  /// Probabilities are clamped to [clamp, 1 - clamp] before any log.
  double clamp = 1e-6;

  void validate() const;
};

/// The n >= 1 binary boundary maps drawn by different annotators for one image.
class AnnotationSet {
 public:
  AnnotationSet() = default;
  /// Throws ShapeError if the maps disagree in shape, ValidationError on a
  /// non-binary value, ContractError when empty.
  explicit AnnotationSet(std::vector<BoundaryMap> maps);

  [[nodiscard]] std::size_t size() const { return maps_.size(); }
  [[nodiscard]] int rows() const { return maps_.empty() ? 0 : maps_.front().rows(); }
  [[nodiscard]] int cols() const { return maps_.empty() ? 0 : maps_.front().cols(); }
  [[nodiscard]] const std::vector<BoundaryMap>& maps() const { return maps_; }
  [[nodiscard]] const BoundaryMap& operator[](std::size_t i) const { return maps_[i]; }

 private:
  std::vector<BoundaryMap> maps_;
};

/// Per-pixel annotator agreement W with the positive/negative split it induces.
/// `w` is shaped like the prediction it is compared with (N, 1, H, W).
struct ConsensusWeightMap {
  Tensor w;
  /// |Y-| / (|Y+| + |Y-|)
  double beta = 1.0;
  std::size_t pos_count = 0;
  std::size_t neg_count = 0;
};

/// Mean of the annotation maps, as a (1, 1, H, W) map.
ConsensusWeightMap weight_map(const AnnotationSet& annotations);

/// Derives beta and the counts from an explicit weight tensor with values in [0,1].
ConsensusWeightMap weight_map_from_values(Tensor w);

/// Concatenates single-image maps along the batch axis; beta and the counts
/// are recomputed over the whole batch.
ConsensusWeightMap stack_weight_maps(std::span<const ConsensusWeightMap> maps);

/// Maps positive weights affinely from (0,1] onto (floor,1]; zeros stay zero.
ConsensusWeightMap remap_weights(const ConsensusWeightMap& w, double floor);

/// Binary label: positive where at least ceil(n/2) annotators agree. (1, 1, H, W).
Tensor majority_labels(const AnnotationSet& annotations);

/// Class-balanced cross-entropy against binary labels (unnormalized sums).
Var weighted_ce(Var p, const Tensor& labels, const LossConfig& config);
Var weighted_ce(Var p, const AnnotationSet& annotations, const LossConfig& config);

/// Cross-entropy with positives weighted by W and both classes averaged over
/// their own counts. An empty class contributes 0.
Var soft_ce(Var p, const ConsensusWeightMap& w, const LossConfig& config);

/// (sum p^2 + sum l^2) / (2 sum p*l); throws DomainError when the denominator
/// is zero (soft_dice handles that case).
Var dice(Var p, const Tensor& labels);
Var dice(Var p, const AnnotationSet& annotations);

/// (sum p^2 + sum w^2 + eps) / (2 sum p*w + eps), one global ratio over the batch.
Var soft_dice(Var p, const ConsensusWeightMap& w, const LossConfig& config);

/// kappa * SCE + tau * SD with fixed weights. Zero-weight terms are omitted
/// from the graph.
Var combined_loss(Var p, const ConsensusWeightMap& w, double kappa, double tau, const LossConfig& config);

/// Trainable fusion weights. Stored as logarithms so kappa and tau stay positive.
struct AwlState {
  explicit AwlState(double kappa = 1.0, double tau = 1.0);

  Parameter log_kappa;
  Parameter log_tau;

  [[nodiscard]] double kappa() const;
  [[nodiscard]] double tau() const;
  [[nodiscard]] std::vector<Parameter*> parameters() { return {&log_kappa, &log_tau}; }
};

/// SCE / kappa^2 + zeta * SD / tau^2 + log(1 + kappa * tau).
Var adaptive_fusion(Var sce, Var sd, AwlState& awl, double zeta);
Var adaptive_loss(Var p, const ConsensusWeightMap& w, AwlState& awl, const LossConfig& config);

/// Closed form of adaptive_fusion on plain numbers.
double adaptive_fusion_value(double sce, double sd, double kappa, double tau, double zeta);

}  // namespace crispedge

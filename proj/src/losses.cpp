#include "crispedge/losses.hpp"

#include <algorithm>
#include <cmath>

#include "crispedge/errors.hpp"

namespace crispedge {

void LossConfig::validate() const {
  if (!(epsilon > 0.0)) throw ConfigError("loss: epsilon must be > 0");
  if (!(zeta > 0.0)) throw ConfigError("loss: zeta must be > 0");
  if (!(clamp > 0.0 && clamp < 0.5)) throw ConfigError("loss: clamp must lie in (0, 0.5)");
}

AnnotationSet::AnnotationSet(std::vector<BoundaryMap> maps) : maps_(std::move(maps)) {
  if (maps_.empty()) throw ContractError("annotation set needs at least one map");
  for (const BoundaryMap& m : maps_) {
    if (!m.same_shape(maps_.front())) throw ShapeError("annotation maps differ in shape");
    for (auto v : m.values()) {
      if (v > 1) throw ValidationError("annotation map value " + std::to_string(v) + " is not binary");
    }
  }
}

ConsensusWeightMap weight_map_from_values(Tensor w) {
  ConsensusWeightMap out;
  for (double v : w.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("weight map value outside [0,1]");
    if (v > 0.0) {
      ++out.pos_count;
    } else {
      ++out.neg_count;
    }
  }
  const std::size_t total = out.pos_count + out.neg_count;
  out.beta = total == 0 ? 1.0 : static_cast<double>(out.neg_count) / static_cast<double>(total);
  out.w = std::move(w);
  return out;
}

ConsensusWeightMap weight_map(const AnnotationSet& annotations) {
  if (annotations.size() == 0) throw ContractError("weight_map: empty annotation set");
  Tensor w(Shape{1, 1, annotations.rows(), annotations.cols()});
  for (const BoundaryMap& m : annotations.maps()) {
    for (std::size_t i = 0; i < m.size(); ++i) w[i] += m[i];
  }
  const double n = static_cast<double>(annotations.size());
  for (double& v : w.values()) v /= n;
  return weight_map_from_values(std::move(w));
}

ConsensusWeightMap stack_weight_maps(std::span<const ConsensusWeightMap> maps) {
  if (maps.empty()) throw ContractError("stack_weight_maps: nothing to stack");
  Shape s = maps.front().w.shape();
  std::vector<double> values;
  int n = 0;
  for (const ConsensusWeightMap& m : maps) {
    const Shape& ms = m.w.shape();
    if (ms.c != s.c || ms.h != s.h || ms.w != s.w) throw ShapeError("stack_weight_maps: shape mismatch");
    values.insert(values.end(), m.w.values().begin(), m.w.values().end());
    n += ms.n;
  }
  s.n = n;
  return weight_map_from_values(Tensor(s, std::move(values)));
}

ConsensusWeightMap remap_weights(const ConsensusWeightMap& w, double floor) {
  if (!(floor >= 0.0 && floor < 1.0)) throw ContractError("remap_weights: floor must lie in [0,1)");
  ConsensusWeightMap out = w;
  for (double& v : out.w.values()) {
    if (v > 0.0) v = floor + (1.0 - floor) * v;
  }
  return out;
}

Tensor majority_labels(const AnnotationSet& annotations) {
  const std::size_t n = annotations.size();
  if (n == 0) throw ContractError("majority_labels: empty annotation set");
  const std::size_t need = (n + 1) / 2;
  Tensor out(Shape{1, 1, annotations.rows(), annotations.cols()});
  std::vector<std::size_t> votes(out.size(), 0);
  for (const BoundaryMap& m : annotations.maps()) {
    for (std::size_t i = 0; i < m.size(); ++i) votes[i] += m[i];
  }
  for (std::size_t i = 0; i < votes.size(); ++i) out[i] = votes[i] >= need ? 1.0 : 0.0;
  return out;
}

namespace {

struct Clamped {
  double value;
  bool active;  // false where the clamp bit and the gradient is zero
};

Clamped clamp_prob(double p, double c) {
  if (p < c) return {c, false};
  if (p > 1.0 - c) return {1.0 - c, false};
  return {p, true};
}

void check_binary_labels(const Tensor& labels) {
  for (double v : labels.values()) {
    if (v != 0.0 && v != 1.0) throw ValidationError("label tensor is not binary");
  }
}

}  // namespace

Var weighted_ce(Var p, const Tensor& labels, const LossConfig& config) {
  const Tensor* pv = &p.value();
  require_same_shape(pv->shape(), labels.shape(), "weighted_ce");
  check_binary_labels(labels);
  std::size_t pos = 0;
  for (double v : labels.values()) pos += v > 0.0;
  const double total = static_cast<double>(labels.size());
  const double beta = static_cast<double>(labels.size() - pos) / total;

  double pos_sum = 0.0;
  double neg_sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double q = clamp_prob((*pv)[i], config.clamp).value;
    if (labels[i] > 0.0) {
      pos_sum += std::log(q);
    } else {
      neg_sum += std::log(1.0 - q);
    }
  }
  const double loss = -beta * pos_sum - (1.0 - beta) * neg_sum;
  return p.graph->record(
      Tensor::scalar(loss), {p},
      [pv, labels, beta, c = config.clamp](const Tensor&, const Tensor& g, std::span<Tensor* const> d) {
        Tensor& dp = *d[0];
        for (std::size_t i = 0; i < labels.size(); ++i) {
          const Clamped q = clamp_prob((*pv)[i], c);
          if (!q.active) continue;
          dp[i] += labels[i] > 0.0 ? -g[0] * beta / q.value : g[0] * (1.0 - beta) / (1.0 - q.value);
        }
      });
}

Var weighted_ce(Var p, const AnnotationSet& annotations, const LossConfig& config) {
  return weighted_ce(p, majority_labels(annotations), config);
}

Var soft_ce(Var p, const ConsensusWeightMap& wm, const LossConfig& config) {
  const Tensor* pv = &p.value();
  require_same_shape(pv->shape(), wm.w.shape(), "soft_ce");
  const double pos_scale = wm.pos_count > 0 ? wm.beta / static_cast<double>(wm.pos_count) : 0.0;
  const double neg_scale = wm.neg_count > 0 ? (1.0 - wm.beta) / static_cast<double>(wm.neg_count) : 0.0;

  double pos_sum = 0.0;
  double neg_sum = 0.0;
  const Tensor& w = wm.w;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double q = clamp_prob((*pv)[i], config.clamp).value;
    if (w[i] > 0.0) {
      pos_sum += w[i] * std::log(q);
    } else {
      neg_sum += std::log(1.0 - q);
    }
  }
  const double loss = -pos_scale * pos_sum - neg_scale * neg_sum;
  return p.graph->record(
      Tensor::scalar(loss), {p},
      [pv, w, pos_scale, neg_scale, c = config.clamp](const Tensor&, const Tensor& g,
                                                      std::span<Tensor* const> d) {
        Tensor& dp = *d[0];
        for (std::size_t i = 0; i < w.size(); ++i) {
          const Clamped q = clamp_prob((*pv)[i], c);
          if (!q.active) continue;
          dp[i] += w[i] > 0.0 ? -g[0] * pos_scale * w[i] / q.value : g[0] * neg_scale / (1.0 - q.value);
        }
      });
}

namespace {

// (sum p^2 + sum t^2 + eps) / (2 sum p*t + eps) with d/dp_i = (2 p_i - 2 t_i r) / den.
Var dice_ratio(Var p, const Tensor& target, double eps, const char* what) {
  const Tensor* pv = &p.value();
  require_same_shape(pv->shape(), target.shape(), what);
  double num = eps;
  double den = eps;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double pi = (*pv)[i];
    num += pi * pi + target[i] * target[i];
    den += 2.0 * pi * target[i];
  }
  if (den == 0.0) {
    throw DomainError(std::string(what) + ": zero overlap denominator; use soft_dice with epsilon");
  }
  const double ratio = num / den;
  return p.graph->record(Tensor::scalar(ratio), {p},
                         [pv, target, ratio, den](const Tensor&, const Tensor& g, std::span<Tensor* const> d) {
                           Tensor& dp = *d[0];
                           const double k = 2.0 * g[0] / den;
                           for (std::size_t i = 0; i < target.size(); ++i) {
                             dp[i] += k * ((*pv)[i] - target[i] * ratio);
                           }
                         });
}

}  // namespace

Var dice(Var p, const Tensor& labels) {
  check_binary_labels(labels);
  return dice_ratio(p, labels, 0.0, "dice");
}

Var dice(Var p, const AnnotationSet& annotations) { return dice(p, majority_labels(annotations)); }

Var soft_dice(Var p, const ConsensusWeightMap& w, const LossConfig& config) {
  return dice_ratio(p, w.w, config.epsilon, "soft_dice");
}

Var combined_loss(Var p, const ConsensusWeightMap& w, double kappa, double tau, const LossConfig& config) {
  if (kappa < 0.0 || tau < 0.0) throw ContractError("combined_loss: manual weights must be >= 0");
  if (tau == 0.0) return scale(soft_ce(p, w, config), kappa);
  if (kappa == 0.0) return scale(soft_dice(p, w, config), tau);
  return add(scale(soft_ce(p, w, config), kappa), scale(soft_dice(p, w, config), tau));
}

AwlState::AwlState(double kappa0, double tau0) {
  if (!(kappa0 > 0.0) || !(tau0 > 0.0)) throw ContractError("AwlState: kappa and tau must be > 0");
  log_kappa = Parameter("awl.kappa", Tensor::scalar(std::log(kappa0)), false);
  log_tau = Parameter("awl.tau", Tensor::scalar(std::log(tau0)), false);
}

double AwlState::kappa() const { return std::exp(log_kappa.value[0]); }
double AwlState::tau() const { return std::exp(log_tau.value[0]); }

Var adaptive_fusion(Var sce, Var sd, AwlState& awl, double zeta) {
  if (!(awl.kappa() > 0.0) || !(awl.tau() > 0.0) || !std::isfinite(awl.kappa()) || !std::isfinite(awl.tau())) {
    throw ContractError("adaptive loss: kappa and tau must be finite and > 0");
  }
  Graph& g = *sce.graph;
  Var kappa = exp(g.parameter(awl.log_kappa));
  Var tau = exp(g.parameter(awl.log_tau));
  Var fused = add(div(sce, square(kappa)), div(scale(sd, zeta), square(tau)));
  return add(fused, log(add_scalar(mul(kappa, tau), 1.0)));
}

Var adaptive_loss(Var p, const ConsensusWeightMap& w, AwlState& awl, const LossConfig& config) {
  return adaptive_fusion(soft_ce(p, w, config), soft_dice(p, w, config), awl, config.zeta);
}

double adaptive_fusion_value(double sce, double sd, double kappa, double tau, double zeta) {
  return sce / (kappa * kappa) + zeta * sd / (tau * tau) + std::log(1.0 + kappa * tau);
}

}  // namespace crispedge

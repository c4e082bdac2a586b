#pragma once

#include <span>

#include "crispedge/autograd.hpp"

namespace crispedge {

/// SGD hyperparameters. Defaults are the published training settings.
struct OptimizerConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  /// Multiplicative learning-rate factor applied at each decay milestone.
  double lr_decay = 0.1;

  /// Throws ConfigError on lr <= 0, momentum outside [0,1) or negative decay.
  void validate() const;
};

/// Classical momentum: v <- momentum*v + grad + wd*p; p <- p - lr*v.
/// Weight decay is skipped for parameters with `decay == false`. Gradients
/// are zeroed afterwards.
void sgd_step(std::span<Parameter* const> params, const OptimizerConfig& config);

void zero_grad(std::span<Parameter* const> params);

}  // namespace crispedge

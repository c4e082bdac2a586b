#include "crispedge/optim.hpp"

#include "crispedge/errors.hpp"

namespace crispedge {

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("optimizer: learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("optimizer: momentum must lie in [0,1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("optimizer: weight_decay must be >= 0");
  if (!(lr_decay > 0.0)) throw ConfigError("optimizer: lr_decay must be > 0");
}

void sgd_step(std::span<Parameter* const> params, const OptimizerConfig& config) {
  config.validate();
  for (Parameter* p : params) {
    if (!p->requires_grad) continue;
    const double wd = p->decay ? config.weight_decay : 0.0;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      double g = p->grad[i];
      if (wd != 0.0) g += wd * p->value[i];
      p->velocity[i] = config.momentum * p->velocity[i] + g;
      p->value[i] -= config.learning_rate * p->velocity[i];
    }
    p->zero_grad();
  }
}

void zero_grad(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

}  // namespace crispedge

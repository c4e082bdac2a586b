#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "crispedge/autograd.hpp"

namespace crispedge {

struct GradCheckOptions {
  double step = 1e-5;
  /// Elements probed per parameter; 0 probes every element.
  std::size_t max_entries = 0;
  std::uint64_t seed = 0;
  /// Lower bound on the relative-error denominator, so that gradients that are
  /// zero up to finite-difference noise do not register as failures.
  double abs_floor = 1e-6;
  /// Skip probes whose +/- step changes the relu activation pattern; the
  /// function is not differentiable across that interval.
  bool skip_kinks = false;
};

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

/// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor);

/// Builds the loss once for analytic gradients, then compares each probed
/// element against a central difference. Parameter gradients are zeroed on
/// entry and left holding the analytic gradient on return.
std::vector<GradCheckResult> check_gradients(const std::function<Var(Graph&)>& build,
                                             std::span<Parameter* const> params,
                                             const GradCheckOptions& options);

}  // namespace crispedge

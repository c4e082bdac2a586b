#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace crispedge {

inline constexpr double kGradTolerance = 1e-4;

struct GradSuiteRow {
  std::string op;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Probes whose step crossed a relu kink.
  std::size_t skipped = 0;
  int seeds = 0;
};

/// Central-difference check of every differentiable op, each loss, the weight
/// convolution and refine block, and the default network under the adaptive
/// loss. Each row is the worst case over `seeds` consecutive seeds from `seed`.
std::vector<GradSuiteRow> gradient_suite(std::uint64_t seed, int seeds, double step = 1e-5);

/// `op max_rel_error checked skipped seeds` table plus a verdict line. Returns
/// true when every row checked something and stayed below kGradTolerance.
bool write_grad_table(std::ostream& os, const std::vector<GradSuiteRow>& rows);

}  // namespace crispedge

#include "crispedge/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "crispedge/optim.hpp"

namespace crispedge {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

std::vector<GradCheckResult> check_gradients(const std::function<Var(Graph&)>& build,
                                             std::span<Parameter* const> params,
                                             const GradCheckOptions& options) {
  zero_grad(params);
  std::uint64_t base_pattern = 0;
  {
    KinkRecorder rec;
    Graph g;
    g.backward(build(g));
    base_pattern = rec.fingerprint();
  }
  bool crossed = false;
  auto eval = [&] {
    KinkRecorder rec;
    Graph g;
    const double v = build(g).item();
    crossed = crossed || rec.fingerprint() != base_pattern;
    return v;
  };

  std::mt19937_64 rng(options.seed);
  std::vector<GradCheckResult> results;
  for (Parameter* p : params) {
    GradCheckResult r;
    r.name = p->name;
    std::vector<std::size_t> idx(p->value.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (options.max_entries != 0 && idx.size() > options.max_entries) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(options.max_entries);
      std::sort(idx.begin(), idx.end());
    }
    for (std::size_t i : idx) {
      const double orig = p->value[i];
      crossed = false;
      p->value[i] = orig + options.step;
      const double up = eval();
      p->value[i] = orig - options.step;
      const double down = eval();
      p->value[i] = orig;
      if (options.skip_kinks && crossed) {
        ++r.skipped;
        continue;
      }
      const double numeric = (up - down) / (2.0 * options.step);
      r.max_rel_error = std::max(r.max_rel_error, relative_error(p->grad[i], numeric, options.abs_floor));
      ++r.checked;
    }
    results.push_back(r);
  }
  return results;
}

}  // namespace crispedge

#include "crispedge/evalbench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <ostream>
#include <queue>

#include "crispedge/errors.hpp"
#include "crispedge/parallel.hpp"

namespace crispedge {

double tolerance_pixels(int h, int w, double max_dist_fraction) {
  if (h < 1 || w < 1) throw ContractError("tolerance needs a non-empty image");
  if (!(max_dist_fraction > 0.0)) throw ContractError("max_dist_fraction must be positive");
  return max_dist_fraction * std::hypot(static_cast<double>(h), static_cast<double>(w));
}

ProbabilityMap gaussian_smooth(const ProbabilityMap& p, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) total += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= total;

  const int rows = p.rows();
  const int cols = p.cols();
  ProbabilityMap tmp(rows, cols);
  ProbabilityMap out(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * p(r, std::clamp(c + i, 0, cols - 1));
      tmp(r, c) = acc;
    }
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp(std::clamp(r + i, 0, rows - 1), c);
      out(r, c) = acc;
    }
  return out;
}

ProbabilityMap non_max_suppress(const ProbabilityMap& p) {
  const int rows = p.rows();
  const int cols = p.cols();
  ProbabilityMap out(rows, cols);
  if (p.empty()) return out;
  const ProbabilityMap s = gaussian_smooth(p, 1.0);
  // Ridge normal from the Hessian of the smoothed map: first derivatives
  // vanish on a ridge crest, second derivatives do not.
  auto diff = [rows, cols](const ProbabilityMap& m, int dr, int dc) {
    ProbabilityMap d(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        const int r0 = std::clamp(r - dr, 0, rows - 1), r1 = std::clamp(r + dr, 0, rows - 1);
        const int c0 = std::clamp(c - dc, 0, cols - 1), c1 = std::clamp(c + dc, 0, cols - 1);
        d(r, c) = (m(r1, c1) - m(r0, c0)) * 0.5;
      }
    return d;
  };
  const ProbabilityMap gx = diff(s, 0, 1);
  const ProbabilityMap gy = diff(s, 1, 0);
  const ProbabilityMap hxx = diff(gx, 0, 1);
  const ProbabilityMap hyy = diff(gy, 1, 0);
  const ProbabilityMap hxy = diff(gx, 1, 0);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const double v = p(r, c);
      if (v <= 0.0) continue;
      double angle = 0.5 * std::atan2(2.0 * hxy(r, c), hxx(r, c) - hyy(r, c)) + std::numbers::pi / 2;
      if (angle < 0) angle += std::numbers::pi;
      const int bin = static_cast<int>(std::floor(angle / (std::numbers::pi / 4) + 0.5)) % 4;
      static constexpr int dr[4] = {0, 1, 1, 1};
      static constexpr int dc[4] = {1, 1, 0, -1};
      bool suppressed = false;
      for (int sign : {-1, 1}) {
        const int rr = r + sign * dr[bin];
        const int cc = c + sign * dc[bin];
        if (p.contains(rr, cc) && p(rr, cc) > v) suppressed = true;
      }
      if (!suppressed) out(r, c) = v;
    }
  return out;
}

BoundaryMap thin(BoundaryMap b) {
  const int rows = b.rows();
  const int cols = b.cols();
  auto px = [&](int r, int c) -> int { return b.contains(r, c) && b(r, c) != 0 ? 1 : 0; };
  std::vector<std::size_t> doomed;
  for (bool changed = true; changed;) {
    changed = false;
    for (int pass = 0; pass < 2; ++pass) {
      doomed.clear();
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
          if (b(r, c) == 0) continue;
          // Clockwise from north.
          const int n[8] = {px(r - 1, c), px(r - 1, c + 1), px(r, c + 1), px(r + 1, c + 1),
                            px(r + 1, c), px(r + 1, c - 1), px(r, c - 1), px(r - 1, c - 1)};
          int count = 0;
          int transitions = 0;
          for (int i = 0; i < 8; ++i) {
            count += n[i];
            transitions += n[i] == 0 && n[(i + 1) % 8] == 1;
          }
          if (count < 2 || count > 6 || transitions != 1) continue;
          const bool ok = pass == 0 ? (n[0] * n[2] * n[4] == 0 && n[2] * n[4] * n[6] == 0)
                                    : (n[0] * n[2] * n[6] == 0 && n[0] * n[4] * n[6] == 0);
          if (ok) doomed.push_back(static_cast<std::size_t>(r) * cols + c);
        }
      for (std::size_t i : doomed) b[i] = 0;
      changed = changed || !doomed.empty();
    }
  }
  return b;
}

namespace {

BoundaryMap support(const ProbabilityMap& p) {
  BoundaryMap b(p.rows(), p.cols(), 0);
  for (std::size_t i = 0; i < p.size(); ++i) b[i] = p[i] > 0.0 ? 1 : 0;
  return b;
}

}  // namespace

ProbabilityMap nms_thin(const ProbabilityMap& p) {
  ProbabilityMap cur = p;
  for (;;) {
    ProbabilityMap next = non_max_suppress(cur);
    const BoundaryMap keep = thin(support(next));
    for (std::size_t i = 0; i < next.size(); ++i) {
      if (keep[i] == 0) next[i] = 0.0;
    }
    if (next == cur) return cur;
    cur = std::move(next);
  }
}

BoundaryMap binarize(const ProbabilityMap& p, double t) {
  BoundaryMap b(p.rows(), p.cols(), 0);
  for (std::size_t i = 0; i < p.size(); ++i) b[i] = p[i] >= t ? 1 : 0;
  return b;
}

namespace {

/// Hopcroft-Karp over detected (left) and gt (right) pixels.
class Matcher {
 public:
  Matcher(const BoundaryMap& det, const BoundaryMap& gt, double tol) {
    if (!det.same_shape(gt)) throw ShapeError("detected and ground-truth maps differ in shape");
    if (!(tol >= 0.0)) throw ContractError("tolerance must be non-negative");
    const int reach = static_cast<int>(std::floor(tol));
    const double tol2 = tol * tol;
    std::vector<std::pair<int, int>> offsets;
    for (int dy = -reach; dy <= reach; ++dy)
      for (int dx = -reach; dx <= reach; ++dx)
        if (dy * dy + dx * dx <= tol2) offsets.emplace_back(dy, dx);

    std::vector<int> gt_index(gt.size(), -1);
    int ng = 0;
    for (std::size_t i = 0; i < gt.size(); ++i)
      if (gt[i] != 0) gt_index[i] = ng++;
    right_match_.assign(ng, -1);

    for (int r = 0; r < det.rows(); ++r)
      for (int c = 0; c < det.cols(); ++c) {
        if (det(r, c) == 0) continue;
        left_pixel_.push_back(static_cast<std::size_t>(r) * det.cols() + c);
        std::vector<int> adj;
        for (auto [dy, dx] : offsets) {
          if (!gt.contains(r + dy, c + dx)) continue;
          const int j = gt_index[static_cast<std::size_t>(r + dy) * gt.cols() + (c + dx)];
          if (j >= 0) adj.push_back(j);
        }
        adj_.push_back(std::move(adj));
      }
    left_match_.assign(adj_.size(), -1);
    solve();
  }

  [[nodiscard]] int matched() const { return matched_; }
  [[nodiscard]] std::vector<bool> detected_mask(std::size_t size) const {
    std::vector<bool> m(size, false);
    for (std::size_t i = 0; i < left_match_.size(); ++i)
      if (left_match_[i] >= 0) m[left_pixel_[i]] = true;
    return m;
  }

 private:
  bool bfs() {
    std::queue<int> q;
    dist_.assign(adj_.size(), -1);
    for (std::size_t u = 0; u < adj_.size(); ++u) {
      if (left_match_[u] < 0) {
        dist_[u] = 0;
        q.push(static_cast<int>(u));
      }
    }
    bool found = false;
    while (!q.empty()) {
      const int u = q.front();
      q.pop();
      for (int v : adj_[u]) {
        const int w = right_match_[v];
        if (w < 0) {
          found = true;
        } else if (dist_[w] < 0) {
          dist_[w] = dist_[u] + 1;
          q.push(w);
        }
      }
    }
    return found;
  }

  bool dfs(int u) {
    for (int v : adj_[u]) {
      const int w = right_match_[v];
      if (w < 0 || (dist_[w] == dist_[u] + 1 && dfs(w))) {
        left_match_[u] = v;
        right_match_[v] = u;
        return true;
      }
    }
    dist_[u] = -1;
    return false;
  }

  void solve() {
    while (bfs()) {
      for (std::size_t u = 0; u < adj_.size(); ++u) {
        if (left_match_[u] < 0 && dfs(static_cast<int>(u))) ++matched_;
      }
    }
  }

  std::vector<std::size_t> left_pixel_;
  std::vector<std::vector<int>> adj_;
  std::vector<int> left_match_;
  std::vector<int> right_match_;
  std::vector<int> dist_;
  int matched_ = 0;
};

}  // namespace

MatchResult match_boundaries(const BoundaryMap& detected, const BoundaryMap& gt, double tol_px) {
  Matcher m(detected, gt, tol_px);
  return {m.matched(), m.matched()};
}

std::vector<bool> matched_detections(const BoundaryMap& detected, const BoundaryMap& gt, double tol_px) {
  return Matcher(detected, gt, tol_px).detected_mask(detected.size());
}

double MatchCounts::precision() const {
  return total_detected == 0 ? 1.0 : static_cast<double>(matched_detected) / total_detected;
}

double MatchCounts::recall() const {
  return total_gt == 0 ? 1.0 : static_cast<double>(matched_gt) / total_gt;
}

double MatchCounts::f() const {
  if (total_detected == 0) return 0.0;
  return f_measure(precision(), recall());
}

MatchCounts& MatchCounts::operator+=(const MatchCounts& o) {
  matched_detected += o.matched_detected;
  total_detected += o.total_detected;
  matched_gt += o.matched_gt;
  total_gt += o.total_gt;
  return *this;
}

double f_measure(double precision, double recall) {
  const double s = precision + recall;
  return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

std::vector<double> threshold_grid(int n) {
  if (n < 1) throw ContractError("threshold grid needs at least one threshold");
  std::vector<double> t(n);
  for (int k = 1; k <= n; ++k) t[k - 1] = static_cast<double>(k) / (n + 1);
  return t;
}

namespace {

MatchCounts count_detection(const BoundaryMap& det, const AnnotationSet& annotations, double t, double tol_px) {
  MatchCounts mc;
  mc.threshold = t;
  std::vector<bool> any(det.size(), false);
  for (const BoundaryMap& gt : annotations.maps()) {
    Matcher m(det, gt, tol_px);
    mc.matched_gt += m.matched();
    mc.total_gt += static_cast<long>(count_nonzero(gt));
    const std::vector<bool> mask = m.detected_mask(det.size());
    for (std::size_t i = 0; i < mask.size(); ++i) any[i] = any[i] || mask[i];
  }
  mc.total_detected = static_cast<long>(count_nonzero(det));
  mc.matched_detected = static_cast<long>(std::count(any.begin(), any.end(), true));
  return mc;
}

void check_inputs(const ProbabilityMap& p, const AnnotationSet& annotations) {
  if (annotations.size() == 0) throw ContractError("evaluation needs at least one annotation map");
  if (p.rows() != annotations.rows() || p.cols() != annotations.cols()) {
    throw ShapeError("prediction and annotations differ in shape");
  }
}

}  // namespace

MatchCounts pr_at_threshold(const ProbabilityMap& p, const AnnotationSet& annotations, double t, double tol_px,
                            bool post_process) {
  check_inputs(p, annotations);
  if (!(t > 0.0 && t < 1.0)) throw ContractError("threshold must lie in (0, 1)");
  BoundaryMap det = post_process ? thin(binarize(nms_thin(p), t)) : binarize(p, t);
  return count_detection(det, annotations, t, tol_px);
}

std::vector<MatchCounts> evaluate_image(const ProbabilityMap& p, const AnnotationSet& annotations,
                                        std::span<const double> thresholds, double tol_px, bool post_process) {
  check_inputs(p, annotations);
  const ProbabilityMap src = post_process ? nms_thin(p) : p;
  std::vector<MatchCounts> out;
  out.reserve(thresholds.size());
  for (double t : thresholds) {
    BoundaryMap det = post_process ? thin(binarize(src, t)) : binarize(src, t);
    out.push_back(count_detection(det, annotations, t, tol_px));
  }
  return out;
}

const char* criterion_suffix(Criterion c) {
  switch (c) {
    case Criterion::correctness: return "c";
    case Criterion::localness: return "l";
    case Criterion::thickness: return "t";
  }
  return "?";
}

double average_precision(const PrCurve& curve) {
  std::vector<std::pair<double, double>> pts;
  for (const PrPoint& p : curve) pts.emplace_back(p.recall, p.precision);
  std::sort(pts.begin(), pts.end());
  // Interpolated precision at recall r is the best precision at recall >= r.
  for (std::size_t i = pts.size(); i-- > 1;) pts[i - 1].second = std::max(pts[i - 1].second, pts[i].second);
  double area = 0.0;
  double prev = 0.0;
  for (auto [r, p] : pts) {
    area += (r - prev) * p;
    prev = r;
  }
  return area;
}

Summary summarize(const std::vector<std::vector<MatchCounts>>& counts, Criterion criterion) {
  if (counts.empty()) throw ContractError("cannot summarize an empty dataset");
  const std::size_t nt = counts.front().size();
  if (nt == 0) throw ContractError("no thresholds to summarize");
  for (const auto& img : counts) {
    if (img.size() != nt) throw ContractError("images were evaluated on different threshold grids");
    for (std::size_t k = 0; k < nt; ++k) {
      if (img[k].threshold != counts.front()[k].threshold) {
        throw ContractError("images were evaluated on different threshold grids");
      }
    }
  }
  Summary s;
  s.scores.criterion = criterion;
  for (std::size_t k = 0; k < nt; ++k) {
    MatchCounts total;
    total.threshold = counts.front()[k].threshold;
    for (const auto& img : counts) total += img[k];
    s.curve.push_back({total.threshold, total.precision(), total.recall(), total.f()});
    s.scores.ods = std::max(s.scores.ods, total.f());
  }
  double ois = 0.0;
  for (const auto& img : counts) {
    double best = 0.0;
    for (const MatchCounts& mc : img) best = std::max(best, mc.f());
    ois += best;
  }
  s.scores.ois = ois / static_cast<double>(counts.size());
  s.scores.ap = average_precision(s.curve);
  return s;
}

const Summary& CriteriaReport::get(Criterion c) const {
  switch (c) {
    case Criterion::correctness: return correctness;
    case Criterion::localness: return localness;
    case Criterion::thickness: return thickness;
  }
  return correctness;
}

CriteriaReport eval_criteria(std::span<const ProbabilityMap> predictions, std::span<const AnnotationSet> annotations,
                             double base_fraction, const EvalOptions& options) {
  if (predictions.empty()) throw ContractError("no predictions to evaluate");
  if (predictions.size() != annotations.size()) {
    throw ContractError("prediction and annotation counts differ");
  }
  const std::vector<double> grid = threshold_grid(options.thresholds);
  const std::size_t n = predictions.size();
  std::vector<std::vector<MatchCounts>> c(n), l(n), t(n);
  parallel_for(n, options.jobs, [&](std::size_t i) {
    const ProbabilityMap& p = predictions[i];
    check_inputs(p, annotations[i]);
    const double d0 = tolerance_pixels(p.rows(), p.cols(), base_fraction);
    const ProbabilityMap thinned = nms_thin(p);
    std::vector<MatchCounts> ci, li, ti;
    for (double th : grid) {
      const BoundaryMap post = thin(binarize(thinned, th));
      ci.push_back(count_detection(post, annotations[i], th, d0));
      li.push_back(count_detection(post, annotations[i], th, d0 / 4.0));
      ti.push_back(count_detection(binarize(p, th), annotations[i], th, d0));
    }
    c[i] = std::move(ci);
    l[i] = std::move(li);
    t[i] = std::move(ti);
  });
  CriteriaReport r;
  r.correctness = summarize(c, Criterion::correctness);
  r.localness = summarize(l, Criterion::localness);
  r.thickness = summarize(t, Criterion::thickness);
  r.tol_default = tolerance_pixels(predictions.front().rows(), predictions.front().cols(), base_fraction);
  r.tol_local = r.tol_default / 4.0;
  return r;
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

void write_pr_csv(std::ostream& os, const PrCurve& curve) {
  os << "threshold,precision,recall,f\n";
  for (const PrPoint& p : curve) {
    os << format_number(p.threshold) << ',' << format_number(p.precision) << ',' << format_number(p.recall) << ','
       << format_number(p.f) << '\n';
  }
}

void write_score_block(std::ostream& os, const CriteriaReport& report) {
  for (Criterion c : {Criterion::correctness, Criterion::localness, Criterion::thickness}) {
    const BenchmarkScores& s = report.get(c).scores;
    const std::string suf = criterion_suffix(c);
    os << "ods_" << suf << '=' << format_number(s.ods) << '\n';
    os << "ois_" << suf << '=' << format_number(s.ois) << '\n';
    os << "ap_" << suf << '=' << format_number(s.ap) << '\n';
  }
}

}  // namespace crispedge

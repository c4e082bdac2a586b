#include <cmath>
#include <random>
#include <sstream>

#include "crispedge/errors.hpp"
#include "crispedge/evalbench.hpp"
#include "doctest.h"
#include "eval_oracles.hpp"

using namespace crispedge;

namespace {

BoundaryMap line_map(int rows, int cols, int row, int c0, int c1) {
  BoundaryMap b(rows, cols, 0);
  for (int c = c0; c <= c1; ++c) b(row, c) = 1;
  return b;
}

ProbabilityMap as_prob(const BoundaryMap& b, double v = 1.0) {
  ProbabilityMap p(b.rows(), b.cols());
  for (std::size_t i = 0; i < b.size(); ++i) p[i] = b[i] ? v : 0.0;
  return p;
}

/// Smooth random blob map: a few Gaussian bumps plus noise, in [0, 1].
ProbabilityMap random_prob(int rows, int cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ProbabilityMap p(rows, cols);
  for (int k = 0; k < 4; ++k) {
    const double cy = u(rng) * rows;
    const double cx = u(rng) * cols;
    const double rad = 2.0 + u(rng) * rows / 3.0;
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        const double d = std::hypot(r - cy, c - cx) - rad;
        p(r, c) = std::max(p(r, c), std::exp(-d * d / 2.0));
      }
  }
  for (auto& v : p.values()) v = std::clamp(v * (0.8 + 0.2 * u(rng)), 0.0, 1.0);
  return p;
}

}  // namespace

TEST_CASE("tolerance arithmetic") {
  const double d0 = tolerance_pixels(481, 321, 0.0075);
  CHECK(d0 == doctest::Approx(4.33706).epsilon(1e-5));
  CHECK(std::round(d0 * 10) / 10 == doctest::Approx(4.3));
  CHECK(tolerance_pixels(100, 37, 0.02) == 2.0 * tolerance_pixels(100, 37, 0.01));
  CHECK(nyud_localness_fraction == 0.00275);
  CHECK_THROWS_AS(tolerance_pixels(0, 4, 0.01), ContractError);
  CHECK_THROWS_AS(tolerance_pixels(4, 4, 0.0), ContractError);
}

TEST_CASE("nms_thin examples") {
  ProbabilityMap zero(9, 9);
  CHECK(nms_thin(zero) == zero);

  BoundaryMap vline(9, 9, 0);
  for (int r = 0; r < 9; ++r) vline(r, 4) = 1;
  CHECK(nms_thin(as_prob(vline, 0.7)) == as_prob(vline, 0.7));
  BoundaryMap hline = line_map(9, 9, 3, 0, 8);
  CHECK(nms_thin(as_prob(hline, 0.4)) == as_prob(hline, 0.4));

  ProbabilityMap ridge(9, 9);
  for (int r = 0; r < 9; ++r) {
    ridge(r, 3) = 0.5;
    ridge(r, 4) = 0.9;
    ridge(r, 5) = 0.6;
  }
  ProbabilityMap expect(9, 9);
  for (int r = 0; r < 9; ++r) expect(r, 4) = 0.9;
  CHECK(nms_thin(ridge) == expect);
}

TEST_CASE("thinning reduces a flat thick bar to one pixel width") {
  BoundaryMap bar(10, 12, 0);
  for (int r = 3; r <= 5; ++r)
    for (int c = 1; c <= 10; ++c) bar(r, c) = 1;
  BoundaryMap t = thin(bar);
  for (int c = 0; c < 12; ++c) {
    int n = 0;
    for (int r = 0; r < 10; ++r) n += t(r, c);
    CHECK(n <= 1);
    if (c >= 3 && c <= 8) CHECK(n == 1);
  }
  CHECK(thin(t) == t);
}

TEST_CASE("nms_thin is idempotent") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 40; ++trial) {
    ProbabilityMap p = random_prob(24, 20, rng);
    ProbabilityMap once = nms_thin(p);
    CHECK(nms_thin(once) == once);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK((once[i] == 0.0 || once[i] == p[i]));
  }
}

TEST_CASE("match_boundaries examples") {
  BoundaryMap a = line_map(8, 12, 4, 1, 10);
  CHECK(match_boundaries(a, a, 0.0).matched_detected == 10);
  BoundaryMap shifted = line_map(8, 12, 4, 2, 11);
  MatchResult m = match_boundaries(shifted, a, 1.5);
  CHECK(m.matched_detected == 10);
  CHECK(m.matched_gt == 10);
  CHECK(match_boundaries(shifted, a, 0.5).matched_gt == 9);
  CHECK_THROWS_AS(match_boundaries(a, BoundaryMap(8, 11, 0), 1.0), ShapeError);
}

TEST_CASE("match_boundaries equals the augmenting-path oracle") {
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<int> side(1, 12);
  std::uniform_real_distribution<double> density(0.05, 0.4);
  for (int trial = 0; trial < 300; ++trial) {
    const int r = side(rng);
    const int c = side(rng);
    BoundaryMap d = oracle::random_sparse(r, c, density(rng), rng);
    BoundaryMap g = oracle::random_sparse(r, c, density(rng), rng);
    int prev = 0;
    for (double tol : {0.0, 1.0, 1.5, 3.0}) {
      MatchResult m = match_boundaries(d, g, tol);
      CHECK(m.matched_detected == oracle::kuhn_matching(d, g, tol));
      CHECK(m.matched_detected == m.matched_gt);
      CHECK(m.matched_detected >= prev);
      prev = m.matched_detected;
    }
  }
}

TEST_CASE("pr_at_threshold") {
  BoundaryMap gt = line_map(8, 8, 3, 1, 6);
  AnnotationSet one({gt});
  ProbabilityMap p = as_prob(gt, 0.6);
  for (bool post : {false, true}) {
    MatchCounts mc = pr_at_threshold(p, one, 0.5, 1.0, post);
    CHECK(mc.precision() == 1.0);
    CHECK(mc.recall() == 1.0);
  }
  MatchCounts empty = pr_at_threshold(p, one, 0.7, 1.0, false);
  CHECK(empty.total_detected == 0);
  CHECK(empty.recall() == 0.0);
  CHECK(empty.precision() == 1.0);
  CHECK(empty.f() == 0.0);
  CHECK_THROWS_AS(pr_at_threshold(p, one, 1.0, 1.0, false), ContractError);

  // Two annotators: rows 2 and 5. Detections: row 2 at 0.8, (4,3) at 0.8,
  // (7,7) at 0.8 and (0,0) at 0.3.
  AnnotationSet two({line_map(8, 8, 2, 1, 6), line_map(8, 8, 5, 1, 6)});
  ProbabilityMap det = as_prob(line_map(8, 8, 2, 1, 6), 0.8);
  det(4, 3) = 0.8;
  det(7, 7) = 0.8;
  det(0, 0) = 0.3;
  MatchCounts hi = pr_at_threshold(det, two, 0.5, 1.5, false);
  CHECK(hi.total_detected == 8);
  CHECK(hi.matched_detected == 7);
  CHECK(hi.total_gt == 12);
  CHECK(hi.matched_gt == 7);
  MatchCounts lo = pr_at_threshold(det, two, 0.2, 1.5, false);
  CHECK(lo.total_detected == 9);
  CHECK(lo.matched_detected == 7);
  CHECK(lo.matched_gt == 7);
  // At 2.3 px (7,7) reaches (5,6); rows 2 and 5 stay out of reach.
  MatchCounts wide = pr_at_threshold(det, two, 0.5, 2.3, false);
  CHECK(wide.matched_detected == 8);
  CHECK(wide.matched_gt == 8);
}

TEST_CASE("recall is non-increasing in the threshold") {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 10; ++trial) {
    ProbabilityMap p = random_prob(20, 20, rng);
    AnnotationSet gt({thin(binarize(p, 0.6)), thin(binarize(p, 0.8))});
    const std::vector<double> grid = threshold_grid(9);
    for (bool post : {false, true}) {
      std::vector<MatchCounts> counts = evaluate_image(p, gt, grid, 2.0, post);
      for (std::size_t k = 1; k < counts.size(); ++k) {
        CHECK(counts[k].recall() <= counts[k - 1].recall() + 1e-15);
        if (!post) CHECK(counts[k].total_detected <= counts[k - 1].total_detected);
      }
    }
  }
}

TEST_CASE("summarize") {
  CHECK_THROWS_AS(summarize({}, Criterion::correctness), ContractError);

  std::vector<MatchCounts> perfect;
  for (double t : threshold_grid(5)) perfect.push_back({t, 10, 10, 10, 10});
  Summary s = summarize({perfect}, Criterion::correctness);
  CHECK(s.scores.ods == 1.0);
  CHECK(s.scores.ois == 1.0);
  CHECK(s.scores.ap == 1.0);

  std::vector<std::vector<MatchCounts>> hand = {
      {{0.3, 8, 10, 6, 10}, {0.6, 5, 5, 4, 10}},
      {{0.3, 2, 4, 3, 6}, {0.6, 2, 2, 2, 6}},
  };
  Summary h = summarize(hand, Criterion::localness);
  auto f = [](double p, double r) { return 2 * p * r / (p + r); };
  const double f_low = f(10.0 / 14, 9.0 / 16);
  const double f_high = f(1.0, 6.0 / 16);
  CHECK(h.scores.ods == doctest::Approx(std::max(f_low, f_high)).epsilon(1e-14));
  const double img1 = std::max(f(0.8, 0.6), f(1.0, 0.4));
  const double img2 = std::max(f(0.5, 0.5), f(1.0, 2.0 / 6));
  CHECK(h.scores.ois == doctest::Approx((img1 + img2) / 2).epsilon(1e-14));
  CHECK(h.scores.ap == doctest::Approx(0.375 * 1.0 + (0.5625 - 0.375) * (10.0 / 14)).epsilon(1e-14));
  CHECK(h.curve.size() == 2);
  CHECK(h.curve[0].recall == 9.0 / 16);

  auto scaled = hand;
  for (auto& img : scaled)
    for (auto& mc : img) {
      mc.matched_detected *= 7;
      mc.total_detected *= 7;
      mc.matched_gt *= 7;
      mc.total_gt *= 7;
    }
  CHECK(summarize(scaled, Criterion::localness).scores.ods == doctest::Approx(h.scores.ods).epsilon(1e-15));

  for (const PrPoint& pt : h.curve) CHECK(h.scores.ods >= pt.f);

  auto ragged = hand;
  ragged[1].pop_back();
  CHECK_THROWS_AS(summarize(ragged, Criterion::correctness), ContractError);
}

TEST_CASE("eval_criteria") {
  ProbabilityMap blank(481, 321);
  AnnotationSet bgt({line_map(481, 321, 100, 10, 200)});
  std::vector<ProbabilityMap> preds{blank};
  std::vector<AnnotationSet> anns{bgt};
  CriteriaReport big = eval_criteria(preds, anns, 0.0075, EvalOptions{3, 1});
  CHECK(big.tol_default == doctest::Approx(4.34).epsilon(1e-3));
  CHECK(big.tol_local == doctest::Approx(1.085).epsilon(1e-3));

  std::mt19937_64 rng(31);
  std::vector<ProbabilityMap> thin_preds;
  std::vector<AnnotationSet> thin_gt;
  for (int i = 0; i < 4; ++i) {
    BoundaryMap g = thin(binarize(random_prob(32, 32, rng), 0.7));
    thin_gt.emplace_back(std::vector<BoundaryMap>{g, g});
    thin_preds.push_back(as_prob(g, 0.9));
  }
  CriteriaReport perfect = eval_criteria(thin_preds, thin_gt, 0.05);
  for (Criterion c : {Criterion::correctness, Criterion::localness, Criterion::thickness}) {
    CHECK(perfect.get(c).scores.ods == 1.0);
    CHECK(perfect.get(c).scores.ois == 1.0);
    CHECK(perfect.get(c).scores.ap == 1.0);
  }

  // 3-px thick detection around a thin horizontal contour.
  BoundaryMap g = line_map(32, 32, 15, 2, 29);
  ProbabilityMap thick(32, 32);
  for (int c = 2; c <= 29; ++c) {
    thick(14, c) = 0.9;
    thick(15, c) = 0.9;
    thick(16, c) = 0.9;
  }
  std::vector<ProbabilityMap> tp{thick};
  std::vector<AnnotationSet> tg{AnnotationSet({g})};
  CriteriaReport r = eval_criteria(tp, tg, 0.05);
  CHECK(r.correctness.scores.ods > 0.9);
  CHECK(r.thickness.scores.ods < r.correctness.scores.ods);

  std::ostringstream a, b;
  write_score_block(a, eval_criteria(thin_preds, thin_gt, 0.05, EvalOptions{33, 1}));
  write_score_block(b, eval_criteria(thin_preds, thin_gt, 0.05, EvalOptions{33, 3}));
  CHECK(a.str() == b.str());
  CHECK(a.str().rfind("ods_c=1\nois_c=1\nap_c=1\n", 0) == 0);

  std::ostringstream csv;
  write_pr_csv(csv, r.thickness.curve);
  CHECK(csv.str().rfind("threshold,precision,recall,f\n", 0) == 0);
}

TEST_CASE("localness never beats correctness on random data") {
  std::mt19937_64 rng(37);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<ProbabilityMap> preds;
    std::vector<AnnotationSet> gts;
    for (int i = 0; i < 2; ++i) {
      preds.push_back(random_prob(20, 20, rng));
      ProbabilityMap other = random_prob(20, 20, rng);
      gts.emplace_back(std::vector<BoundaryMap>{thin(binarize(other, 0.7)), thin(binarize(preds.back(), 0.75))});
    }
    CriteriaReport r = eval_criteria(preds, gts, 0.1, EvalOptions{9, 1});
    CHECK(r.localness.scores.ods <= r.correctness.scores.ods);
  }
}

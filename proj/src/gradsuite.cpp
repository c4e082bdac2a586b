#include "crispedge/gradsuite.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>
#include <random>

#include "crispedge/errors.hpp"
#include "crispedge/gradcheck.hpp"
#include "crispedge/losses.hpp"
#include "crispedge/network.hpp"

namespace crispedge {

namespace {

Tensor uniform(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(s);
  for (double& v : t.values()) v = u(rng);
  return t;
}

// Keeps relu and division inputs clear of their kinks and poles.
Tensor away_from_zero(Tensor t) {
  for (double& v : t.values()) v = v < 0 ? v - 0.1 : v + 0.1;
  return t;
}

Tensor sparse_weights(Shape s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  Tensor t(s);
  for (double& v : t.values()) v = u(rng) < 0.6 ? 0.0 : std::max(1e-3, u(rng));
  t[0] = 0.0;
  t[t.size() - 1] = 0.8;
  return t;
}

class Table {
 public:
  void add(const std::string& op, const std::vector<GradCheckResult>& results) {
    auto it = std::find_if(rows_.begin(), rows_.end(), [&](const GradSuiteRow& r) { return r.op == op; });
    if (it == rows_.end()) {
      rows_.push_back({op, 0.0, 0, 0, 0});
      it = rows_.end() - 1;
    }
    for (const GradCheckResult& r : results) {
      it->max_rel_error = std::max(it->max_rel_error, r.max_rel_error);
      it->checked += r.checked;
      it->skipped += r.skipped;
    }
    ++it->seeds;
  }
  std::vector<GradSuiteRow> rows() && { return std::move(rows_); }

 private:
  std::vector<GradSuiteRow> rows_;
};

}  // namespace

std::vector<GradSuiteRow> gradient_suite(std::uint64_t seed, int seeds, double step) {
  if (seeds < 1) throw ContractError("gradient_suite: seeds must be >= 1");
  Table table;
  const LossConfig cfg;

  for (int k = 0; k < seeds; ++k) {
    const std::uint64_t s = seed + static_cast<std::uint64_t>(k);
    std::mt19937_64 rng(s * 0x9e3779b97f4a7c15ULL + 17);
    GradCheckOptions opt;
    opt.step = step;
    opt.seed = s;
    opt.skip_kinks = true;
    auto check = [&](const char* op, const std::function<Var(Graph&)>& build, std::vector<Parameter*> ps) {
      table.add(op, check_gradients(build, ps, opt));
    };

    Parameter x("x", uniform(Shape{2, 2, 5, 6}, rng));
    Parameter k1("k", uniform(Shape{3, 2, 3, 3}, rng));
    check("conv2d", [&](Graph& g) { return sum(square(conv2d(g.parameter(x), g.parameter(k1), 1, 1))); }, {&x, &k1});
    check("conv2d_stride2", [&](Graph& g) { return sum(square(conv2d(g.parameter(x), g.parameter(k1), 2, 1))); },
          {&x, &k1});
    const Tensor mix = uniform(Shape{2, 2, 9, 4}, rng);
    const Tensor mix_down = uniform(Shape{2, 2, 3, 3}, rng);
    check("bilinear_resize",
          [&](Graph& g) {
            return add(sum(mul(bilinear_resize(g.parameter(x), 9, 4), g.constant(mix))),
                       sum(mul(bilinear_resize(g.parameter(x), 3, 3), g.constant(mix_down))));
          },
          {&x});

    Parameter a("a", away_from_zero(uniform(Shape{1, 3, 2, 2}, rng)));
    Parameter b("b", away_from_zero(uniform(Shape{1, 3, 2, 2}, rng)));
    Parameter sc("s", Tensor::scalar(0.5 + std::uniform_real_distribution<double>(0, 1)(rng)));
    Parameter bias("bias", uniform(Shape{1, 3, 1, 1}, rng));
    Parameter pos("pos", uniform(Shape{1, 3, 2, 2}, rng, 0.2, 2.0));
    check("add", [&](Graph& g) { return sum(square(add(g.parameter(a), g.parameter(b)))); }, {&a, &b});
    check("add_channel_bias", [&](Graph& g) { return sum(square(add_channel_bias(g.parameter(a), g.parameter(bias)))); },
          {&a, &bias});
    check("relu", [&](Graph& g) { return sum(mul(relu(g.parameter(a)), g.parameter(b))); }, {&a, &b});
    check("sigmoid", [&](Graph& g) { return sum(mul(sigmoid(g.parameter(a)), g.parameter(b))); }, {&a, &b});
    check("exp", [&](Graph& g) { return sum(mul(exp(g.parameter(a)), g.parameter(b))); }, {&a, &b});
    check("log", [&](Graph& g) { return sum(mul(log(g.parameter(pos)), g.parameter(b))); }, {&pos, &b});
    check("square", [&](Graph& g) { return sum(mul(square(g.parameter(a)), g.parameter(b))); }, {&a, &b});
    check("scale", [&](Graph& g) { return sum(square(scale(g.parameter(a), -1.7))); }, {&a});
    check("add_scalar", [&](Graph& g) { return sum(square(add_scalar(g.parameter(a), 0.3))); }, {&a});
    check("mul", [&](Graph& g) { return sum(square(mul(g.parameter(a), g.parameter(b)))); }, {&a, &b});
    check("mul_broadcast", [&](Graph& g) { return sum(square(mul(g.parameter(a), g.parameter(sc)))); }, {&a, &sc});
    check("div", [&](Graph& g) { return sum(div(g.parameter(a), g.parameter(pos))); }, {&a, &pos});
    check("div_broadcast", [&](Graph& g) { return sum(square(div(g.parameter(a), g.parameter(sc)))); }, {&a, &sc});
    check("sum", [&](Graph& g) { return square(sum(g.parameter(a))); }, {&a});

    Parameter p("p", uniform(Shape{2, 1, 4, 4}, rng, 0.02, 0.98));
    const ConsensusWeightMap w = weight_map_from_values(sparse_weights(Shape{2, 1, 4, 4}, rng));
    Tensor labels(Shape{2, 1, 4, 4});
    for (double& v : labels.values()) v = rng() % 3 == 0 ? 1.0 : 0.0;
    labels[3] = 1.0;
    std::uniform_real_distribution<double> around(-0.5, 0.5);
    AwlState awl(std::exp(around(rng)), std::exp(around(rng)));
    check("weighted_ce", [&](Graph& g) { return weighted_ce(g.parameter(p), labels, cfg); }, {&p});
    check("soft_ce", [&](Graph& g) { return soft_ce(g.parameter(p), w, cfg); }, {&p});
    check("dice", [&](Graph& g) { return dice(g.parameter(p), labels); }, {&p});
    check("soft_dice", [&](Graph& g) { return soft_dice(g.parameter(p), w, cfg); }, {&p});
    check("combined_loss", [&](Graph& g) { return combined_loss(g.parameter(p), w, 0.7, 1.3, cfg); }, {&p});
    check("adaptive_loss", [&](Graph& g) { return adaptive_loss(g.parameter(p), w, awl, cfg); },
          {&p, &awl.log_kappa, &awl.log_tau});

    WeightConvLayer layer{Parameter("kernel", uniform(Shape{3, 2, 3, 3}, rng)),
                          Parameter("alpha", Tensor::scalar(around(rng)))};
    const Tensor wc_in = uniform(Shape{1, 2, 5, 5}, rng);
    const Tensor wc_mix = uniform(Shape{1, 3, 5, 5}, rng);
    check("weight_conv",
          [&](Graph& g) { return sum(mul(weight_conv_forward(layer, g.constant(wc_in)), g.constant(wc_mix))); },
          {&layer.kernel, &layer.alpha});

    RefineBlock block;
    block.spec = {"r", ConnectionKind::adjacent, {"u", "v"}, 2};
    block.projections.emplace_back();
    block.projections.emplace_back("proj", uniform(Shape{2, 3, 1, 1}, rng));
    block.has_projection = {false, true};
    block.conv = {Parameter("kernel", uniform(Shape{2, 2, 3, 3}, rng)), Parameter("alpha", Tensor::scalar(around(rng)))};
    Parameter fine("fine", uniform(Shape{1, 2, 6, 6}, rng));
    Parameter coarse("coarse", uniform(Shape{1, 3, 3, 3}, rng));
    const Tensor rb_mix = uniform(Shape{1, 2, 6, 6}, rng);
    check("refine_block",
          [&](Graph& g) {
            std::vector<Var> in{g.parameter(fine), g.parameter(coarse)};
            return sum(mul(refine_block_forward(block, in), g.constant(rb_mix)));
          },
          {&fine, &coarse, &block.projections[1], &block.conv.kernel, &block.conv.alpha});

    MicroDrnet net(NetworkTopology::micro_default(), s);
    std::normal_distribution<double> nudge(0.0, 0.3);
    for (Parameter* q : net.parameters()) {
      if (q->value.size() == 1 || q->name.find("bias") != std::string::npos) {
        for (double& v : q->value.values()) v = nudge(rng);
      }
    }
    const Tensor image = uniform(Shape{1, 3, 16, 16}, rng, 0.0, 1.0);
    const ConsensusWeightMap target = weight_map_from_values(sparse_weights(Shape{1, 1, 16, 16}, rng));
    AwlState net_awl(std::exp(around(rng)), std::exp(around(rng)));
    std::vector<Parameter*> all = net.parameters();
    all.push_back(&net_awl.log_kappa);
    all.push_back(&net_awl.log_tau);
    GradCheckOptions net_opt = opt;
    net_opt.max_entries = 6;
    table.add("network+adaptive_loss",
              check_gradients(
                  [&](Graph& g) { return adaptive_loss(net.forward(g, g.constant(image)), target, net_awl, cfg); },
                  all, net_opt));
  }
  return std::move(table).rows();
}

bool write_grad_table(std::ostream& os, const std::vector<GradSuiteRow>& rows) {
  bool ok = true;
  char line[160];
  std::snprintf(line, sizeof line, "%-24s %14s %9s %8s %6s\n", "op", "max_rel_error", "checked", "skipped", "seeds");
  os << line;
  for (const GradSuiteRow& r : rows) {
    const bool pass = r.checked > 0 && r.max_rel_error < kGradTolerance;
    ok = ok && pass;
    std::snprintf(line, sizeof line, "%-24s %14.6g %9zu %8zu %6d%s\n", r.op.c_str(), r.max_rel_error, r.checked,
                  r.skipped, r.seeds,
                  pass ? "" : "  FAIL");
    os << line;
  }
  os << (ok ? "all ops below " : "some ops exceed ") << kGradTolerance << '\n';
  return ok;
}

}  // namespace crispedge

#include "crispedge/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include "crispedge/errors.hpp"

namespace crispedge {

std::string loss_mode_name(LossMode m) {
  switch (m) {
    case LossMode::ce: return "ce";
    case LossMode::sce: return "sce";
    case LossMode::sd: return "sd";
    case LossMode::manual: return "sce+sd";
    case LossMode::awl: return "awl";
  }
  return "?";
}

LossMode parse_loss_mode(const std::string& s) {
  for (LossMode m : {LossMode::ce, LossMode::sce, LossMode::sd, LossMode::manual, LossMode::awl}) {
    if (s == loss_mode_name(m)) return m;
  }
  throw ConfigError("unknown loss mode '" + s + "' (expected ce, sce, sd, sce+sd or awl)");
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
  if (mode == LossMode::manual && (!(kappa >= 0.0) || !(tau >= 0.0))) {
    throw ConfigError("train: manual loss weights must be >= 0");
  }
  if (mode == LossMode::manual && kappa == 0.0 && tau == 0.0) {
    throw ConfigError("train: manual loss weights cannot both be 0");
  }
  if (mode == LossMode::awl && (!(kappa > 0.0) || !(tau > 0.0))) {
    throw ConfigError("train: adaptive loss needs kappa, tau > 0");
  }
  if (!(weight_floor >= 0.0 && weight_floor < 1.0)) throw ConfigError("train: weight_floor must lie in [0, 1)");
  if (!(eval_fraction > 0.0)) throw ConfigError("train: eval fraction must be > 0");
  if (eval_thresholds < 1) throw ConfigError("train: eval thresholds must be >= 1");
  for (int e : lr_decay_epochs) {
    if (e < 0) throw ConfigError("train: lr decay epochs must be >= 0");
  }
  optimizer.validate();
  if (!(loss.epsilon > 0.0)) throw ConfigError("loss: epsilon must be > 0");
  if (!(loss.zeta > 0.0)) throw ConfigError("loss: zeta must be > 0");
  if (!(loss.clamp > 0.0 && loss.clamp < 0.5)) throw ConfigError("loss: clamp must lie in (0, 0.5)");
}

namespace {

struct Batch {
  Tensor images;
  ConsensusWeightMap weights;
  Tensor labels;  // majority vote, ce mode only
};

Batch make_batch(const std::vector<Sample>& data, std::span<const std::size_t> idx, const TrainConfig& cfg) {
  const Shape s0 = data[idx[0]].image.shape();
  std::vector<double> img;
  std::vector<ConsensusWeightMap> maps;
  std::vector<double> labels;
  for (std::size_t i : idx) {
    const Sample& s = data[i];
    if (s.image.shape() != s0) throw ShapeError("train: every sample in a batch must share one image shape");
    img.insert(img.end(), s.image.values().begin(), s.image.values().end());
    maps.push_back(weight_map(s.annotations));
    if (cfg.mode == LossMode::ce) {
      Tensor l = majority_labels(s.annotations);
      labels.insert(labels.end(), l.values().begin(), l.values().end());
    }
  }
  const int n = static_cast<int>(idx.size());
  Batch b;
  b.images = Tensor(Shape{n, s0.c, s0.h, s0.w}, std::move(img));
  b.weights = stack_weight_maps(maps);
  if (cfg.weight_floor > 0.0) b.weights = remap_weights(b.weights, cfg.weight_floor);
  if (cfg.mode == LossMode::ce) b.labels = Tensor(Shape{n, 1, s0.h, s0.w}, std::move(labels));
  return b;
}

Var batch_loss(Var p, const Batch& b, AwlState& awl, const TrainConfig& cfg) {
  switch (cfg.mode) {
    case LossMode::ce:
      return scale(weighted_ce(p, b.labels, cfg.loss), 1.0 / static_cast<double>(b.labels.size()));
    case LossMode::sce: return soft_ce(p, b.weights, cfg.loss);
    case LossMode::sd: return soft_dice(p, b.weights, cfg.loss);
    case LossMode::manual: return combined_loss(p, b.weights, cfg.kappa, cfg.tau, cfg.loss);
    case LossMode::awl: return adaptive_loss(p, b.weights, awl, cfg.loss);
  }
  throw ContractError("unknown loss mode");
}

}  // namespace

TrainResult train(const std::vector<Sample>& train_set, const std::vector<Sample>& held_out,
                  const NetworkTopology& topology, const TrainConfig& config) {
  config.validate();
  if (train_set.empty()) throw ContractError("train: the training split is empty");
  TrainResult result{MicroDrnet(topology, config.seed), {}};
  MicroDrnet& net = result.net;
  AwlState awl(config.mode == LossMode::awl ? config.kappa : 1.0, config.mode == LossMode::awl ? config.tau : 1.0);

  std::vector<Parameter*> params = net.parameters();
  if (config.mode == LossMode::awl) {
    for (Parameter* p : awl.parameters()) params.push_back(p);
  }

  OptimizerConfig opt = config.optimizer;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(config.seed ^ 0x5deece66dULL);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (int milestone : config.lr_decay_epochs) {
      if (milestone == epoch) opt.learning_rate *= opt.lr_decay;
    }
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const Batch b = make_batch(train_set, std::span<const std::size_t>(order).subspan(start, end - start), config);
      double loss = 0.0;
      {
        Graph g;
        Var l = batch_loss(net.forward(g, g.constant(b.images)), b, awl, config);
        loss = l.item();
        if (!std::isfinite(loss)) {
          throw TrainingError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                              std::to_string(batches + 1));
        }
        g.backward(l);
      }
      sgd_step(params, opt);
      result.report.batch_losses.push_back(loss);
      total += loss;
      ++batches;
    }
    result.report.epochs.push_back({epoch + 1, total / batches, opt.learning_rate, awl.kappa(), awl.tau()});
  }
  result.report.final_kappa = awl.kappa();
  result.report.final_tau = awl.tau();
  if (!held_out.empty()) {
    result.report.held_out =
        evaluate_network(net, held_out, config.eval_fraction, EvalOptions{config.eval_thresholds, config.jobs});
  }
  return result;
}

CriteriaReport evaluate_network(MicroDrnet& net, const std::vector<Sample>& samples, double fraction,
                                const EvalOptions& options) {
  std::vector<ProbabilityMap> preds;
  std::vector<AnnotationSet> anns;
  for (const Sample& s : samples) {
    preds.push_back(predict(net, s.image));
    anns.push_back(s.annotations);
  }
  return eval_criteria(preds, anns, fraction, options);
}

std::vector<AblationRow> ablation_run(const std::vector<Sample>& train_set, const std::vector<Sample>& held_out,
                                      const NetworkTopology& topology, const TrainConfig& base,
                                      const std::vector<LossMode>& modes) {
  if (held_out.empty()) throw ContractError("ablate: the held-out split is empty");
  std::vector<AblationRow> rows;
  for (LossMode m : modes) {
    TrainConfig cfg = base;
    cfg.mode = m;
    if (m == LossMode::manual || m == LossMode::awl) {
      cfg.kappa = base.kappa;
      cfg.tau = base.tau;
    }
    TrainResult r = train(train_set, held_out, topology, cfg);
    rows.push_back({loss_mode_name(m), *r.report.held_out});
  }
  return rows;
}

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << "mode,ods_c,ois_c,ap_c,ods_l,ois_l,ap_l,ods_t,ois_t,ap_t\n";
  for (const AblationRow& r : rows) {
    os << r.mode;
    for (Criterion c : {Criterion::correctness, Criterion::localness, Criterion::thickness}) {
      const BenchmarkScores& s = r.scores.get(c).scores;
      os << ',' << format_number(s.ods) << ',' << format_number(s.ois) << ',' << format_number(s.ap);
    }
    os << '\n';
  }
}

void write_loss_trace(std::ostream& os, const TrainReport& report) {
  os << "epoch,loss,lr,kappa,tau\n";
  for (const EpochRecord& e : report.epochs) {
    os << e.epoch << ',' << format_number(e.mean_loss) << ',' << format_number(e.learning_rate) << ','
       << format_number(e.kappa) << ',' << format_number(e.tau) << '\n';
  }
}

AwlFit fit_awl_constants(double sce, double sd, double zeta, const OptimizerConfig& optimizer, int max_steps,
                         double tolerance) {
  if (!(sce > 0.0) || !(sd > 0.0)) throw ContractError("fit_awl_constants: loss values must be > 0");
  AwlState awl;
  std::vector<Parameter*> params = awl.parameters();
  AwlFit fit;
  auto residuals = [&] {
    const double k = awl.kappa();
    const double t = awl.tau();
    fit.kappa = k;
    fit.tau = t;
    fit.residual_kappa = std::abs(2.0 * sce / (k * k * k) - t / (1.0 + k * t));
    fit.residual_tau = std::abs(2.0 * zeta * sd / (t * t * t) - k / (1.0 + k * t));
    return fit.residual_kappa < tolerance && fit.residual_tau < tolerance;
  };
  for (fit.steps = 0; fit.steps < max_steps; ++fit.steps) {
    if (residuals()) return fit;
    Graph g;
    g.backward(adaptive_fusion(g.constant(Tensor::scalar(sce)), g.constant(Tensor::scalar(sd)), awl, zeta));
    sgd_step(params, optimizer);
  }
  residuals();
  return fit;
}

}  // namespace crispedge

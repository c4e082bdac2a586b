#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "crispedge/data.hpp"
#include "crispedge/evalbench.hpp"
#include "crispedge/losses.hpp"
#include "crispedge/network.hpp"
#include "crispedge/optim.hpp"

namespace crispedge {

enum class LossMode { ce, sce, sd, manual, awl };

/// "ce", "sce", "sd", "sce+sd", "awl".
std::string loss_mode_name(LossMode m);
/// Accepts the names above; ConfigError otherwise.
LossMode parse_loss_mode(const std::string& s);

struct TrainConfig {
  int batch_size = 10;
  int epochs = 40;
  LossMode mode = LossMode::awl;
  /// Manual weights in sce+sd mode; initial values in awl mode.
  double kappa = 1.0;
  double tau = 1.0;
  /// Positive consensus weights are remapped to floor + (1 - floor) * w.
  double weight_floor = 0.0;
  OptimizerConfig optimizer;
  /// 0-based epochs at whose start the learning rate is multiplied by optimizer.lr_decay.
  std::vector<int> lr_decay_epochs{30};
  std::uint64_t seed = 1;
  LossConfig loss;
  /// Held-out evaluation.
  double eval_fraction = 0.048;
  int eval_thresholds = 33;
  int jobs = 1;

  /// ConfigError on invalid values.
  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  double learning_rate = 0.0;
  /// Only meaningful in awl mode.
  double kappa = 1.0;
  double tau = 1.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::vector<double> batch_losses;
  double final_kappa = 1.0;
  double final_tau = 1.0;
  /// Present when a held-out split was given.
  std::optional<CriteriaReport> held_out;
};

struct TrainResult {
  MicroDrnet net;
  TrainReport report;
};

/// Mini-batch SGD over `train_set`, reshuffled every epoch from the seed. The
/// network is initialized from the same seed. Throws TrainingError naming the
/// epoch and batch on a non-finite loss.
TrainResult train(const std::vector<Sample>& train_set, const std::vector<Sample>& held_out,
                  const NetworkTopology& topology, const TrainConfig& config);

/// Single-scale predictions of `samples` scored with eval_criteria.
CriteriaReport evaluate_network(MicroDrnet& net, const std::vector<Sample>& samples, double fraction,
                                const EvalOptions& options);

struct AblationRow {
  std::string mode;
  CriteriaReport scores;
};

/// One training run per mode from the same base config and seed.
std::vector<AblationRow> ablation_run(const std::vector<Sample>& train_set, const std::vector<Sample>& held_out,
                                      const NetworkTopology& topology, const TrainConfig& base,
                                      const std::vector<LossMode>& modes);

/// `mode,ods_c,ois_c,ap_c,ods_l,ois_l,ap_l,ods_t,ois_t,ap_t`
void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows);
/// `epoch,loss,lr,kappa,tau`
void write_loss_trace(std::ostream& os, const TrainReport& report);

struct AwlFit {
  double kappa = 1.0;
  double tau = 1.0;
  int steps = 0;
  /// |2 SCE / k^3 - t / (1 + k t)| and |2 zeta SD / t^3 - k / (1 + k t)|.
  double residual_kappa = 0.0;
  double residual_tau = 0.0;
};

/// Optimizes only kappa and tau of the adaptive fusion against fixed loss
/// values, stopping once both stationarity residuals drop below `tolerance`.
AwlFit fit_awl_constants(double sce, double sd, double zeta, const OptimizerConfig& optimizer, int max_steps,
                         double tolerance);

}  // namespace crispedge

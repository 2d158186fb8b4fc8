#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cmn/eval.hpp"

namespace cmn {

struct TrainConfig {
  double lr = 1e-4;
  double decay = 0.99;
  double eps = 1e-8;
  int iterations = 2000;
  int batch_size = 8;
  int eval_every = 100;
  Supervision supervision = Supervision::Mixed;
  std::size_t max_steps_per_round = 12;
  bool sample = false;
  bool detach_across_rounds = true;
  double threshold_m = kSuccessThreshold;
  std::vector<Split> eval_splits = {Split::ValSeen, Split::ValUnseen};
  Split select_split = Split::ValUnseen;  // best checkpoint by GP here
  std::size_t eval_limit = 0;             // 0 = whole split
  std::uint64_t seed = 1;

  void validate() const;  // throws ConfigError
  RolloutOptions rollout_options() const;
};

struct MetricsRow {
  int iteration = 0;
  double train_loss = 0.0;
  Split split = Split::ValUnseen;
  MetricReport report;
};

struct TrainResult {
  Model best;
  Model final;
  int best_iteration = 0;
  double best_gp = 0.0;
  std::vector<double> losses;  // mean batch loss per iteration
  std::vector<MetricsRow> log;
};

// Loss of one student-forcing episode; trajectory included.
RolloutResult student_forcing_rollout(const NdhInstance& inst, Environment& env, const ModelConfig& cfg,
                                      ParamView& pv, const TrainConfig& config, std::uint64_t sample_seed = 0);

// Mean episode loss over `batch` and its gradient.
Gradients batch_gradient(const Model& model, std::span<const NdhInstance> batch, Environment& env,
                         const TrainConfig& config, double* loss, std::uint64_t sample_seed = 0);

using TrainObserver = std::function<void(const MetricsRow&)>;

TrainResult train(const Dataset& data, const ModelConfig& model_config, const TrainConfig& config,
                  const TrainObserver& observer = {});
// Same, starting from given parameters.
TrainResult train(const Dataset& data, Model initial, const TrainConfig& config, const TrainObserver& observer = {});

std::string metrics_csv(const std::vector<MetricsRow>& rows);

}  // namespace cmn

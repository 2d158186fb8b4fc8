#include "cmn/training.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "cmn/errors.hpp"
#include "cmn/rng.hpp"

namespace cmn {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("train.lr: must be positive");
  if (!(decay > 0.0 && decay < 1.0)) throw ConfigError("train.decay: must lie in (0, 1)");
  if (!(eps >= 0.0)) throw ConfigError("train.eps: must be nonnegative");
  if (iterations < 0) throw ConfigError("train.iterations: must be nonnegative");
  if (batch_size <= 0) throw ConfigError("train.batch_size: must be positive");
  if (eval_every <= 0) throw ConfigError("train.eval_every: must be positive");
  if (max_steps_per_round == 0) throw ConfigError("train.max_steps_per_round: must be positive");
  if (!(threshold_m > 0.0)) throw ConfigError("eval.threshold_m: must be positive");
}

RolloutOptions TrainConfig::rollout_options() const {
  RolloutOptions o;
  o.supervision = supervision;
  o.max_steps_per_round = max_steps_per_round;
  o.detach_across_rounds = detach_across_rounds;
  return o;
}

RolloutResult student_forcing_rollout(const NdhInstance& inst, Environment& env, const ModelConfig& cfg,
                                      ParamView& pv, const TrainConfig& config, std::uint64_t sample_seed) {
  auto opts = config.rollout_options();
  opts.compute_loss = true;
  opts.sample = config.sample;
  opts.sample_seed = sample_seed;
  return rollout(inst, env, cfg, pv, opts);
}

Gradients batch_gradient(const Model& model, std::span<const NdhInstance> batch, Environment& env,
                         const TrainConfig& config, double* loss, std::uint64_t sample_seed) {
  Gradients total = model.params.zero_gradients();
  double sum = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    double value = 0.0;
    auto g = gradient(
        [&](ParamView& pv) {
          return student_forcing_rollout(batch[i], env, model.config, pv, config, derive_seed({sample_seed, i})).loss;
        },
        model.params, &value);
    total.add(g);
    sum += value;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  total.scale(inv);
  if (loss) *loss = sum * inv;
  return total;
}

namespace {

std::vector<NdhInstance> limited(const std::vector<NdhInstance>& v, std::size_t limit) {
  if (limit == 0 || v.size() <= limit) return v;
  return {v.begin(), v.begin() + static_cast<std::ptrdiff_t>(limit)};
}

}  // namespace

TrainResult train(const Dataset& data, const ModelConfig& model_config, const TrainConfig& config,
                  const TrainObserver& observer) {
  return train(data, make_model(model_config), config, observer);
}

TrainResult train(const Dataset& data, Model initial, const TrainConfig& config, const TrainObserver& observer) {
  config.validate();
  const auto& train_set = data.split(Split::Train);
  if (train_set.empty()) throw ConfigError("train: the training split is empty");

  Environment env(data.houses, initial.config.F);
  std::map<Split, std::vector<NdhInstance>> eval_sets;
  for (Split s : config.eval_splits) eval_sets[s] = limited(data.split(s), config.eval_limit);
  Split select = config.select_split;
  if (eval_sets[select].empty()) {
    for (Split s : config.eval_splits) {
      if (!eval_sets[s].empty()) {
        select = s;
        break;
      }
    }
  }
  if (eval_sets[select].empty()) {
    select = Split::Train;
    eval_sets[select] = limited(train_set, config.eval_limit);
  }

  const RmsPropConfig opt{config.lr, config.decay, config.eps};
  const RolloutOptions eval_opts = config.rollout_options();
  TrainResult result;
  result.final = std::move(initial);
  Rng rng(derive_seed({config.seed, 0x747261696eULL}));

  auto evaluate = [&](int iteration, double train_loss) {
    for (const auto& [split, instances] : eval_sets) {
      if (instances.empty()) continue;
      MetricsRow row{iteration, train_loss, split, evaluate_model(result.final, instances, env, eval_opts,
                                                                  config.threshold_m)};
      if (split == select && (iteration == 0 || row.report.GP > result.best_gp)) {
        result.best_gp = row.report.GP;
        result.best_iteration = iteration;
        result.best = result.final;
      }
      result.log.push_back(row);
      if (observer) observer(row);
    }
  };

  {
    const std::size_t n = std::min(train_set.size(), static_cast<std::size_t>(config.batch_size));
    double initial_loss = 0.0;
    batch_gradient(result.final, std::span(train_set).first(n), env, config, &initial_loss, config.seed);
    evaluate(0, initial_loss);
  }

  double window = 0.0;
  int window_n = 0;
  std::vector<NdhInstance> batch(static_cast<std::size_t>(config.batch_size));
  for (int it = 1; it <= config.iterations; ++it) {
    for (auto& b : batch) b = train_set[rng.below(train_set.size())];
    double loss = 0.0;
    const auto grads = batch_gradient(result.final, batch, env, config, &loss,
                                      derive_seed({config.seed, static_cast<std::uint64_t>(it)}));
    if (!std::isfinite(loss)) throw NumericError("train: non-finite loss at iteration " + std::to_string(it));
    rmsprop_step(result.final.params, grads, opt);
    if (!result.final.params.all_finite()) {
      throw NumericError("train: non-finite parameters after iteration " + std::to_string(it));
    }
    result.losses.push_back(loss);
    window += loss;
    ++window_n;
    if (it % config.eval_every == 0 || it == config.iterations) {
      evaluate(it, window / window_n);
      window = 0.0;
      window_n = 0;
    }
  }
  return result;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream out;
  out << "iteration,train_loss,split,GP,SR,OSR,OPSR\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.9f,%s,%.6f,%.6f,%.6f,%.6f\n", r.iteration, r.train_loss,
                  split_name(r.split).c_str(), r.report.GP, r.report.SR, r.report.OSR, r.report.OPSR);
    out << buf;
  }
  return out.str();
}

}  // namespace cmn

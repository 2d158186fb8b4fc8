#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "cmn/rollout.hpp"

namespace cmn {

inline constexpr double kSuccessThreshold = 3.0;  // meters

struct MetricReport {
  double GP = 0.0;
  double SR = 0.0;
  double OSR = 0.0;
  double OPSR = 0.0;
  std::size_t n = 0;
};

// Goal is the end node of the chosen supervision path.
int metric_goal(const NdhInstance& inst, Supervision supervision);

double goal_progress(const Trajectory& traj, const NdhInstance& inst, const HouseGraph& g, Supervision supervision);
double success_rate(std::span<const Trajectory> trajs, std::span<const NdhInstance> instances, const Environment& env,
                    Supervision supervision, double threshold_m = kSuccessThreshold);
double oracle_success_rate(std::span<const Trajectory> trajs, std::span<const NdhInstance> instances,
                           const Environment& env, Supervision supervision, double threshold_m = kSuccessThreshold);
// Success at the best node of the shortest path from p_0 to the supervision
// end, judged against the instance's true target (the oracle path end).
double oracle_path_success_rate(std::span<const NdhInstance> instances, const Environment& env,
                                Supervision supervision, double threshold_m = kSuccessThreshold);

MetricReport compute_metrics(std::span<const Trajectory> trajs, std::span<const NdhInstance> instances,
                             const Environment& env, Supervision supervision, double threshold_m = kSuccessThreshold);

std::vector<Trajectory> run_model(const Model& model, std::span<const NdhInstance> instances, Environment& env,
                                  const RolloutOptions& opts);
MetricReport evaluate_model(const Model& model, std::span<const NdhInstance> instances, Environment& env,
                            const RolloutOptions& opts, double threshold_m = kSuccessThreshold);

enum class Baseline { ShortestPath, Random, VisionOnly, DialogOnly };
std::string baseline_name(Baseline b);
Baseline parse_baseline(const std::string& s);

Trajectory shortest_path_agent(const NdhInstance& inst, Supervision supervision);
// Random heading, then up to 5 moves, each to the neighbor best aligned with
// the heading if it lies within 90 degrees of it.
Trajectory random_agent(const NdhInstance& inst, const HouseGraph& g, std::uint64_t seed);
inline constexpr int kRandomAgentSteps = 5;

// VisionOnly / DialogOnly need a model; it is evaluated with the matching input mask.
MetricReport run_baseline(Baseline kind, std::span<const NdhInstance> instances, Environment& env,
                          const RolloutOptions& opts, const Model* model = nullptr, std::uint64_t seed = 0,
                          double threshold_m = kSuccessThreshold);

struct AblationTable {
  std::vector<Split> splits;
  std::map<Mode, std::map<Split, MetricReport>> rows;

  std::string to_csv() const;
  std::string to_text() const;
};

// `models` must contain Mode::Full. Each checkpoint runs under the mode stored in its config.
AblationTable ablation_report(const std::map<Mode, Model>& models, const Dataset& data, Environment& env,
                              std::span<const Split> splits, const RolloutOptions& opts,
                              double threshold_m = kSuccessThreshold);

}  // namespace cmn

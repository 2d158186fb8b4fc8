#include "cmn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <sstream>

#include "cmn/errors.hpp"
#include "cmn/rng.hpp"

namespace cmn {

namespace {

void check_aligned(std::size_t a, std::size_t b) {
  if (a != b) {
    throw DataError("metrics: " + std::to_string(a) + " trajectories for " + std::to_string(b) + " instances");
  }
}

double min_distance(const std::vector<int>& nodes, const std::vector<double>& to_goal) {
  double best = std::numeric_limits<double>::infinity();
  for (int n : nodes) best = std::min(best, to_goal[static_cast<std::size_t>(n)]);
  return best;
}

std::string fmt(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

}  // namespace

int metric_goal(const NdhInstance& inst, Supervision supervision) { return inst.supervision_path(supervision).back(); }

double goal_progress(const Trajectory& traj, const NdhInstance& inst, const HouseGraph& g, Supervision supervision) {
  const auto d = distances_to(g, metric_goal(inst, supervision));
  return d[static_cast<std::size_t>(inst.start)] - d[static_cast<std::size_t>(traj.nodes.back())];
}

double success_rate(std::span<const Trajectory> trajs, std::span<const NdhInstance> instances, const Environment& env,
                    Supervision supervision, double threshold_m) {
  check_aligned(trajs.size(), instances.size());
  if (instances.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const auto& g = env.house(instances[i].scan_id);
    hits += graph_distance(g, trajs[i].nodes.back(), metric_goal(instances[i], supervision)) < threshold_m;
  }
  return static_cast<double>(hits) / static_cast<double>(instances.size());
}

double oracle_success_rate(std::span<const Trajectory> trajs, std::span<const NdhInstance> instances,
                           const Environment& env, Supervision supervision, double threshold_m) {
  check_aligned(trajs.size(), instances.size());
  if (instances.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const auto d = distances_to(env.house(instances[i].scan_id), metric_goal(instances[i], supervision));
    hits += min_distance(trajs[i].nodes, d) < threshold_m;
  }
  return static_cast<double>(hits) / static_cast<double>(instances.size());
}

double oracle_path_success_rate(std::span<const NdhInstance> instances, const Environment& env,
                                Supervision supervision, double threshold_m) {
  if (instances.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& inst : instances) {
    const auto& g = env.house(inst.scan_id);
    const auto path = shortest_path(g, inst.start, metric_goal(inst, supervision));
    hits += min_distance(path, distances_to(g, inst.oracle_path.back())) < threshold_m;
  }
  return static_cast<double>(hits) / static_cast<double>(instances.size());
}

MetricReport compute_metrics(std::span<const Trajectory> trajs, std::span<const NdhInstance> instances,
                             const Environment& env, Supervision supervision, double threshold_m) {
  check_aligned(trajs.size(), instances.size());
  MetricReport r;
  r.n = instances.size();
  if (r.n == 0) return r;
  double gp = 0.0;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    gp += goal_progress(trajs[i], instances[i], env.house(instances[i].scan_id), supervision);
  }
  r.GP = gp / static_cast<double>(r.n);
  r.SR = success_rate(trajs, instances, env, supervision, threshold_m);
  r.OSR = oracle_success_rate(trajs, instances, env, supervision, threshold_m);
  r.OPSR = oracle_path_success_rate(instances, env, supervision, threshold_m);
  return r;
}

std::vector<Trajectory> run_model(const Model& model, std::span<const NdhInstance> instances, Environment& env,
                                  const RolloutOptions& opts) {
  std::vector<Trajectory> out;
  out.reserve(instances.size());
  for (const auto& inst : instances) out.push_back(run_agent(inst, env, model, opts));
  return out;
}

MetricReport evaluate_model(const Model& model, std::span<const NdhInstance> instances, Environment& env,
                            const RolloutOptions& opts, double threshold_m) {
  const auto trajs = run_model(model, instances, env, opts);
  return compute_metrics(trajs, instances, env, opts.supervision, threshold_m);
}

std::string baseline_name(Baseline b) {
  switch (b) {
    case Baseline::ShortestPath: return "shortest_path";
    case Baseline::Random: return "random";
    case Baseline::VisionOnly: return "vision_only";
    case Baseline::DialogOnly: return "dialog_only";
  }
  return "?";
}

Baseline parse_baseline(const std::string& s) {
  for (Baseline b : {Baseline::ShortestPath, Baseline::Random, Baseline::VisionOnly, Baseline::DialogOnly})
    if (baseline_name(b) == s) return b;
  throw ConfigError("unknown baseline '" + s + "'");
}

Trajectory shortest_path_agent(const NdhInstance& inst, Supervision supervision) {
  Trajectory t;
  t.nodes = inst.supervision_path(supervision);
  t.stopped = true;
  return t;
}

Trajectory random_agent(const NdhInstance& inst, const HouseGraph& g, std::uint64_t seed) {
  Rng rng(seed);
  double heading = rng.uniform(0.0, 2 * std::numbers::pi);
  Trajectory t;
  t.nodes.push_back(inst.start);
  for (int step = 0; step < kRandomAgentSteps; ++step) {
    const int node = t.nodes.back();
    int best = -1;
    double best_gap = std::numbers::pi / 2;
    for (int n : g.neighbors(node)) {
      const double gap = std::abs(std::remainder(g.bearing(node, n) - heading, 2 * std::numbers::pi));
      if (gap < best_gap) {
        best_gap = gap;
        best = n;
      }
    }
    if (best < 0) break;
    heading = g.bearing(node, best);
    t.nodes.push_back(best);
  }
  t.stopped = true;
  return t;
}

MetricReport run_baseline(Baseline kind, std::span<const NdhInstance> instances, Environment& env,
                          const RolloutOptions& opts, const Model* model, std::uint64_t seed, double threshold_m) {
  if (instances.empty()) throw DataError("run_baseline: no instances");
  std::vector<Trajectory> trajs;
  switch (kind) {
    case Baseline::ShortestPath:
      for (const auto& inst : instances) trajs.push_back(shortest_path_agent(inst, opts.supervision));
      break;
    case Baseline::Random:
      for (std::size_t i = 0; i < instances.size(); ++i) {
        trajs.push_back(random_agent(instances[i], env.house(instances[i].scan_id), derive_seed({seed, i})));
      }
      break;
    case Baseline::VisionOnly:
    case Baseline::DialogOnly: {
      if (model == nullptr) throw ConfigError("run_baseline: " + baseline_name(kind) + " needs a model");
      Model masked = *model;
      masked.config.mask = kind == Baseline::VisionOnly ? InputMask::VisionOnly : InputMask::DialogOnly;
      trajs = run_model(masked, instances, env, opts);
      break;
    }
  }
  return compute_metrics(trajs, instances, env, opts.supervision, threshold_m);
}

std::string AblationTable::to_csv() const {
  std::ostringstream out;
  out << "mode,split,GP,SR,OSR,OPSR,n,dGP,dSR,dOSR,dOPSR\n";
  const auto& full = rows.at(Mode::Full);
  for (const auto& [mode, by_split] : rows) {
    for (Split s : splits) {
      const auto& r = by_split.at(s);
      const auto& f = full.at(s);
      out << mode_name(mode) << ',' << split_name(s) << ',' << fmt(r.GP, 6) << ',' << fmt(r.SR, 6) << ','
          << fmt(r.OSR, 6) << ',' << fmt(r.OPSR, 6) << ',' << r.n << ',' << fmt(f.GP - r.GP, 6) << ','
          << fmt(f.SR - r.SR, 6) << ',' << fmt(f.OSR - r.OSR, 6) << ',' << fmt(f.OPSR - r.OPSR, 6) << '\n';
    }
  }
  return out.str();
}

std::string AblationTable::to_text() const {
  std::ostringstream out;
  const auto& full = rows.at(Mode::Full);
  for (Split s : splits) {
    out << split_name(s) << "\n";
    char line[160];
    std::snprintf(line, sizeof line, "  %-10s %8s %7s %7s %7s %9s\n", "mode", "GP(m)", "OSR", "SR", "OPSR", "dGP");
    out << line;
    for (const auto& [mode, by_split] : rows) {
      const auto& r = by_split.at(s);
      std::snprintf(line, sizeof line, "  %-10s %8.3f %7.3f %7.3f %7.3f %+9.3f\n", mode_name(mode).c_str(), r.GP,
                    r.OSR, r.SR, r.OPSR, full.at(s).GP - r.GP);
      out << line;
    }
  }
  return out.str();
}

AblationTable ablation_report(const std::map<Mode, Model>& models, const Dataset& data, Environment& env,
                              std::span<const Split> splits, const RolloutOptions& opts, double threshold_m) {
  if (!models.count(Mode::Full)) throw ReportError("ablation_report: missing checkpoint for mode full");
  AblationTable table;
  table.splits.assign(splits.begin(), splits.end());
  for (const auto& [mode, model] : models) {
    for (Split s : splits) table.rows[mode][s] = evaluate_model(model, data.split(s), env, opts, threshold_m);
  }
  return table;
}

}  // namespace cmn

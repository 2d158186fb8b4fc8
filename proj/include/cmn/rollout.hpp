#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cmn/cmn.hpp"
#include "cmn/datagen.hpp"
#include "cmn/world.hpp"

namespace cmn {

// Houses by scan id with lazily computed panoramas.
class Environment {
 public:
  Environment(std::span<const HouseGraph> houses, std::size_t feature_dim);

  const HouseGraph& house(const std::string& scan_id) const;
  const Tensor& panorama(const std::string& scan_id, int node);
  std::size_t feature_dim() const { return feature_dim_; }

 private:
  struct Entry {
    const HouseGraph* graph;
    std::vector<std::optional<Tensor>> panoramas;
  };
  std::size_t feature_dim_;
  std::map<std::string, Entry> houses_;
};

struct StepTrace {
  std::size_t round = 0;
  std::size_t step = 0;
  int node = 0;
  std::vector<int> candidates;  // neighbor ids; STOP is the index after the last
  std::vector<double> logits;
  std::size_t action = 0;
  std::size_t teacher = 0;
  std::vector<double> vmem;
  std::vector<std::vector<double>> lmem;
  std::vector<double> l2v;
  std::vector<double> v2l;
};

struct Trajectory {
  std::vector<int> nodes;
  bool stopped = false;
  std::vector<StepTrace> steps;  // filled when tracing
};

// Candidate index of the next move on the shortest path from `current` to
// `goal`, or neighbors(current).size() (STOP) when already there.
std::size_t teacher_action(int current, const HouseGraph& g, int goal);

// Node the agent is steered towards during round t.
int round_goal(const NdhInstance& inst, std::size_t t, Supervision supervision);

struct RolloutOptions {
  Supervision supervision = Supervision::Mixed;
  std::size_t max_steps_per_round = 12;
  bool compute_loss = false;
  bool sample = false;  // sample moves from the policy instead of argmax
  bool follow_teacher = false;  // move by the teacher action (diagnostics)
  std::uint64_t sample_seed = 0;
  bool detach_across_rounds = true;
  bool record_trace = false;
};

struct RolloutResult {
  Var loss;  // mean step cross-entropy, when requested
  Trajectory trajectory;
};

// Runs the agent through every dialog round of `inst`, moving by its own
// predictions. Parameters are read through `pv`.
RolloutResult rollout(const NdhInstance& inst, Environment& env, const ModelConfig& cfg, ParamView& pv,
                      const RolloutOptions& opts);

// Greedy rollout without recording gradients.
Trajectory run_agent(const NdhInstance& inst, Environment& env, const Model& model, RolloutOptions opts);

}  // namespace cmn

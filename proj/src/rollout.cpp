#include "cmn/rollout.hpp"

#include <algorithm>
#include <cmath>

#include "cmn/errors.hpp"
#include "cmn/rng.hpp"

namespace cmn {

Environment::Environment(std::span<const HouseGraph> houses, std::size_t feature_dim) : feature_dim_(feature_dim) {
  for (const auto& g : houses) houses_[g.scan_id()] = {&g, std::vector<std::optional<Tensor>>(g.size())};
}

const HouseGraph& Environment::house(const std::string& scan_id) const {
  auto it = houses_.find(scan_id);
  if (it == houses_.end()) throw DataError("unknown scan " + scan_id);
  return *it->second.graph;
}

const Tensor& Environment::panorama(const std::string& scan_id, int node) {
  auto it = houses_.find(scan_id);
  if (it == houses_.end()) throw DataError("unknown scan " + scan_id);
  auto& slot = it->second.panoramas.at(static_cast<std::size_t>(node));
  if (!slot) slot = panoramic_features(*it->second.graph, node, feature_dim_);
  return *slot;
}

std::size_t teacher_action(int current, const HouseGraph& g, int goal) {
  const auto& nbrs = g.neighbors(current);
  if (current == goal) return nbrs.size();
  const auto path = shortest_path(g, current, goal);
  const auto it = std::find(nbrs.begin(), nbrs.end(), path[1]);
  return static_cast<std::size_t>(it - nbrs.begin());
}

int round_goal(const NdhInstance& inst, std::size_t t, Supervision supervision) {
  if (t + 1 < inst.rounds.size()) return inst.round_end(t);
  return inst.supervision_path(supervision).back();
}

namespace {

std::vector<double> values_of(Var v) { return v.value().values(); }

std::size_t argmax(const Tensor& t) {
  return static_cast<std::size_t>(std::max_element(t.values().begin(), t.values().end()) - t.values().begin());
}

std::size_t sample_from(const Tensor& logits, Rng& rng) {
  const double hi = *std::max_element(logits.values().begin(), logits.values().end());
  std::vector<double> p;
  double total = 0;
  for (double x : logits.values()) total += p.emplace_back(std::exp(x - hi));
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (u < p[i]) return i;
    u -= p[i];
  }
  return p.size() - 1;
}

}  // namespace

RolloutResult rollout(const NdhInstance& inst, Environment& env, const ModelConfig& cfg, ParamView& pv,
                      const RolloutOptions& opts) {
  if (inst.rounds.empty()) throw DataError("rollout: instance without dialog rounds");
  const HouseGraph& g = env.house(inst.scan_id);
  Tape& tape = pv.tape();
  Rng rng(opts.sample_seed);

  std::vector<SentenceEncoding> enc;
  for (const auto& r : inst.rounds) {
    auto s = encode_dialog(r.q_tokens, r.r_tokens, pv);
    if (cfg.mask == InputMask::VisionOnly) {
      s.d = tape.constant(Tensor(s.d.shape()));
      s.word_states = tape.constant(Tensor(s.word_states.shape()));
    }
    enc.push_back(s);
  }

  RolloutResult out;
  std::vector<Var> losses;
  int node = inst.start;
  double heading = 0.0;
  out.trajectory.nodes.push_back(node);
  StepState state = initial_state(tape, cfg);

  for (std::size_t t = 0; t < inst.rounds.size(); ++t) {
    Var history = tape.constant(Tensor({0, cfg.L}));
    if (t > 0) {
      std::vector<Var> rows;
      for (std::size_t i = 0; i < t; ++i) rows.push_back(enc[i].d);
      history = ops::stack_rows(rows);
    }
    const RoundContext ctx = round_context(enc[t].d, enc[t].word_states, history, pv, cfg);
    const int goal = round_goal(inst, t, opts.supervision);
    out.trajectory.stopped = false;

    for (std::size_t s = 0; s < opts.max_steps_per_round; ++s) {
      const Tensor observed = mask_visual(observe(env.panorama(inst.scan_id, node), heading), cfg.mask);
      const auto& nbrs = g.neighbors(node);
      std::vector<Var> rows;
      for (int n : nbrs) {
        auto r = observed.row(view_towards(g, node, n, heading));
        rows.push_back(tape.constant(Tensor::vector({r.begin(), r.end()})));
      }
      rows.push_back(pv("dec.stop"));
      Var candidates = ops::stack_rows(rows);
      Var views = tape.constant(observed);

      StepResult res = cmn_step(state, views, ctx, candidates, pv, cfg);
      const std::size_t teacher = teacher_action(node, g, goal);
      if (opts.compute_loss) losses.push_back(ops::cross_entropy(res.logits, teacher));
      const std::size_t chosen = opts.sample ? sample_from(res.logits.value(), rng) : argmax(res.logits.value());
      const std::size_t action = opts.follow_teacher ? teacher : chosen;

      if (opts.record_trace) {
        StepTrace tr;
        tr.round = t;
        tr.step = s;
        tr.node = node;
        tr.candidates = nbrs;
        tr.logits = values_of(res.logits);
        tr.action = chosen;
        tr.teacher = teacher;
        tr.vmem = values_of(res.weights.vmem);
        for (Var w : res.weights.lmem) tr.lmem.push_back(values_of(w));
        tr.l2v = values_of(res.weights.l2v);
        tr.v2l = values_of(res.weights.v2l);
        out.trajectory.steps.push_back(std::move(tr));
      }
      state = std::move(res.next);
      if (action == nbrs.size()) {
        out.trajectory.stopped = true;
        break;
      }
      const int next = nbrs[action];
      heading = g.bearing(node, next);
      node = next;
      out.trajectory.nodes.push_back(node);
    }
    state = next_round(state, opts.detach_across_rounds);
  }
  if (opts.compute_loss) out.loss = ops::mean_scalars(losses);
  return out;
}

Trajectory run_agent(const NdhInstance& inst, Environment& env, const Model& model, RolloutOptions opts) {
  Tape tape;
  ParamView pv(tape, model.params, false);
  opts.compute_loss = false;
  return rollout(inst, env, model.config, pv, opts).trajectory;
}

}  // namespace cmn

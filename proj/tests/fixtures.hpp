#pragma once

// Small models, graphs and episodes shared by the test binaries.

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "cmn/cmn.hpp"
#include "cmn/eval.hpp"
#include "cmn/datagen.hpp"
#include "cmn/rng.hpp"
#include "cmn/world.hpp"

namespace cmn::fixtures {

inline ModelConfig tiny_config(Mode mode = Mode::Full, std::uint64_t seed = 1) {
  ModelConfig c;
  c.d_w = 4;
  c.L = 8;
  c.c = 8;
  c.K = 8;
  c.heads = 2;
  c.F = kDefaultFeatureDim;
  c.mode = mode;
  c.seed = seed;
  c.init_range = 0.3;
  return c;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& x : t.values()) x = rng.uniform(lo, hi);
  return t;
}

// Random parameters of the given config with every tensor redrawn, so that
// layer-norm gains and biases are generic too.
inline ParameterStore scrambled_params(const ModelConfig& cfg, std::uint64_t seed, double range = 0.5) {
  ParameterStore p = init_params(cfg);
  Rng rng(seed);
  for (const auto& name : p.names()) {
    auto& t = p.get_mut(name);
    for (auto& x : t.values()) x = rng.uniform(-range, range);
    if (name == "enc.embed")
      for (auto& x : t.row(0)) x = 0.0;
  }
  return p;
}

struct Episode {
  std::vector<std::pair<std::vector<int>, std::vector<int>>> dialogs;  // one per round
  std::vector<std::size_t> round_of_step;
  std::vector<Tensor> views;       // 36 x F per step
  std::vector<Tensor> candidates;  // M x F per step, STOP appended at run time
  std::vector<std::size_t> targets;
};

inline Episode random_episode(const ModelConfig& cfg, std::uint64_t seed, std::vector<std::size_t> round_of_step) {
  Rng rng(seed);
  Episode e;
  e.round_of_step = std::move(round_of_step);
  const std::size_t rounds = e.round_of_step.back() + 1;
  const int v = static_cast<int>(cfg.vocab_size());
  for (std::size_t r = 0; r < rounds; ++r) {
    std::vector<int> q, a;
    for (int i = rng.between(1, 3); i > 0; --i) q.push_back(rng.between(3, v - 1));
    for (int i = rng.between(1, 3); i > 0; --i) a.push_back(rng.between(3, v - 1));
    e.dialogs.emplace_back(q, a);
  }
  for (std::size_t s = 0; s < e.round_of_step.size(); ++s) {
    e.views.push_back(random_tensor({kNumViews, cfg.F}, rng, 0.0, 1.0));
    const std::size_t m = static_cast<std::size_t>(rng.between(1, 4));
    e.candidates.push_back(random_tensor({m, cfg.F}, rng, 0.0, 1.0));
    e.targets.push_back(static_cast<std::size_t>(rng.between(0, static_cast<int>(m))));
  }
  return e;
}

struct Unrolled {
  std::vector<Var> logits;
  std::vector<StepWeights> weights;
  std::vector<StepState> states;  // state after each step
  Var loss;
};

// Runs the episode through the model step by step; the round context is
// rebuilt whenever the round index changes.
inline Unrolled unroll(const Episode& e, ParamView& pv, const ModelConfig& cfg, bool detach = false) {
  Tape& tape = pv.tape();
  std::vector<SentenceEncoding> enc;
  for (const auto& [q, a] : e.dialogs) enc.push_back(encode_dialog(q, a, pv));
  Unrolled out;
  std::vector<Var> losses;
  StepState state = initial_state(tape, cfg);
  RoundContext ctx;
  std::size_t current = static_cast<std::size_t>(-1);
  for (std::size_t s = 0; s < e.views.size(); ++s) {
    const std::size_t r = e.round_of_step[s];
    if (r != current) {
      while (current != static_cast<std::size_t>(-1) && current < r) {
        state = next_round(state, detach);
        ++current;
      }
      current = r;
      Var history = tape.constant(Tensor({0, cfg.L}));
      if (r > 0) {
        std::vector<Var> rows;
        for (std::size_t i = 0; i < r; ++i) rows.push_back(enc[i].d);
        history = ops::stack_rows(rows);
      }
      ctx = round_context(enc[r].d, enc[r].word_states, history, pv, cfg);
    }
    std::vector<Var> rows;
    for (std::size_t i = 0; i < e.candidates[s].rows(); ++i) {
      auto row = e.candidates[s].row(i);
      rows.push_back(tape.constant(Tensor::vector({row.begin(), row.end()})));
    }
    rows.push_back(pv("dec.stop"));
    auto res = cmn_step(state, tape.constant(e.views[s]), ctx, ops::stack_rows(rows), pv, cfg);
    losses.push_back(ops::cross_entropy(res.logits, e.targets[s]));
    out.logits.push_back(res.logits);
    out.weights.push_back(res.weights);
    state = res.next;
    out.states.push_back(state);
  }
  out.loss = ops::mean_scalars(losses);
  return out;
}

// Nodes on the x axis, `spacing` meters apart, each linked to the next.
inline HouseGraph path_graph(int n, double spacing = 2.0, const std::string& scan = "line") {
  std::vector<HouseNode> nodes;
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < n; ++i) {
    nodes.push_back({i, spacing * i, 0.0, i % 3, {}});
    if (i > 0) edges.emplace_back(i - 1, i);
  }
  return HouseGraph(scan, std::move(nodes), std::move(edges));
}

// Instance on `g` whose oracle path is `oracle`, split into rounds at `cuts`
// (indices into the path where a new round begins).
inline NdhInstance hand_instance(const HouseGraph& g, std::vector<int> oracle, std::vector<int> navigator = {},
                                 std::vector<std::size_t> cuts = {}) {
  NdhInstance inst;
  inst.scan_id = g.scan_id();
  inst.start = oracle.front();
  inst.oracle_path = oracle;
  inst.navigator_path = navigator.empty() ? oracle : navigator;
  inst.mixed_path = mixed_path(inst.oracle_path, inst.navigator_path);
  std::size_t begin = 0;
  cuts.push_back(oracle.size());
  for (std::size_t cut : cuts) {
    DialogRound r;
    r.q_tokens = {3, 4};
    r.r_tokens = {5, 6, 7};
    r.segment.assign(oracle.begin() + static_cast<long>(begin), oracle.begin() + static_cast<long>(cut));
    if (r.segment.empty()) r.segment.push_back(oracle[begin == 0 ? 0 : begin - 1]);
    inst.rounds.push_back(r);
    begin = cut;
  }
  return inst;
}

inline DatasetConfig small_dataset_config(std::uint64_t seed = 3) {
  DatasetConfig d;
  d.n_houses = 5;
  d.nodes_min = 12;
  d.nodes_max = 16;
  d.instances_per_house = 3;
  d.val_seen_per_house = 1;
  d.unseen_per_house = 3;
  d.split_fractions = {0.6, 0.2, 0.2};
  d.seed = seed;
  return d;
}

// Bellman-Ford relaxation from `source` over Euclidean edge lengths; shares
// no code with the library's Dijkstra.
inline std::vector<double> brute_distances(const HouseGraph& g, int source) {
  std::vector<double> d(g.size(), std::numeric_limits<double>::infinity());
  d[static_cast<std::size_t>(source)] = 0;
  for (std::size_t it = 0; it < g.size(); ++it) {
    for (const auto& [u, v] : g.edges()) {
      const double w = std::hypot(g.node(u).x - g.node(v).x, g.node(u).y - g.node(v).y);
      auto& du = d[static_cast<std::size_t>(u)];
      auto& dv = d[static_cast<std::size_t>(v)];
      du = std::min(du, dv + w);
      dv = std::min(dv, du + w);
    }
  }
  return d;
}

// Shortest a->b path rebuilt from brute distances, smallest id first on ties.
inline std::vector<int> brute_path(const HouseGraph& g, int a, int b) {
  const auto d = brute_distances(g, b);
  std::vector<int> path = {a};
  while (path.back() != b) {
    const int u = path.back();
    for (int v = 0; v < static_cast<int>(g.size()); ++v) {
      if (!g.adjacent(u, v)) continue;
      const double w = std::hypot(g.node(u).x - g.node(v).x, g.node(u).y - g.node(v).y);
      if (std::abs(w + d[static_cast<std::size_t>(v)] - d[static_cast<std::size_t>(u)]) <= 1e-9) {
        path.push_back(v);
        break;
      }
    }
  }
  return path;
}

inline MetricReport brute_metrics(std::span<const Trajectory> trajs, std::span<const NdhInstance> instances,
                                  std::span<const HouseGraph> houses, Supervision sup, double threshold = 3.0) {
  MetricReport r;
  r.n = instances.size();
  std::size_t sr = 0, osr = 0, opsr = 0;
  double gp = 0;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& inst = instances[i];
    const HouseGraph* g = nullptr;
    for (const auto& h : houses)
      if (h.scan_id() == inst.scan_id) g = &h;
    const int goal = inst.supervision_path(sup).back();
    const auto to_goal = brute_distances(*g, goal);
    auto at = [&](int n) { return to_goal[static_cast<std::size_t>(n)]; };
    gp += at(inst.start) - at(trajs[i].nodes.back());
    sr += at(trajs[i].nodes.back()) < threshold;
    double best = std::numeric_limits<double>::infinity();
    for (int n : trajs[i].nodes) best = std::min(best, at(n));
    osr += best < threshold;
    const auto to_target = brute_distances(*g, inst.oracle_path.back());
    double best_path = std::numeric_limits<double>::infinity();
    for (int n : brute_path(*g, inst.start, goal)) best_path = std::min(best_path, to_target[static_cast<std::size_t>(n)]);
    opsr += best_path < threshold;
  }
  const double n = static_cast<double>(r.n);
  r.GP = gp / n;
  r.SR = static_cast<double>(sr) / n;
  r.OSR = static_cast<double>(osr) / n;
  r.OPSR = static_cast<double>(opsr) / n;
  return r;
}

// Random walk of 0..max_moves moves from the instance start.
inline Trajectory random_walk(const NdhInstance& inst, const HouseGraph& g, Rng& rng, int max_moves = 8) {
  Trajectory t;
  t.nodes.push_back(inst.start);
  for (int m = rng.between(0, max_moves); m > 0; --m) {
    const auto& nb = g.neighbors(t.nodes.back());
    t.nodes.push_back(nb[rng.below(nb.size())]);
  }
  t.stopped = true;
  return t;
}

}  // namespace cmn::fixtures

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "cmn/cmn.hpp"
#include "cmn/errors.hpp"
#include "doctest.h"
#include "fixtures.hpp"

using namespace cmn;
using fixtures::random_tensor;
using fixtures::tiny_config;

namespace {

using Vec = std::vector<double>;

Vec softmax(const Vec& x) {
  const double hi = *std::max_element(x.begin(), x.end());
  Vec e(x.size());
  double z = 0;
  for (std::size_t i = 0; i < x.size(); ++i) z += e[i] = std::exp(x[i] - hi);
  for (auto& v : e) v /= z;
  return e;
}

double dot(const Vec& a, const Vec& b) { return std::inner_product(a.begin(), a.end(), b.begin(), 0.0); }

// x [n] times w [n x m]
Vec vecmat(const Vec& x, const Tensor& w) {
  Vec out(w.cols(), 0.0);
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) out[j] += x[i] * w.at(i, j);
  return out;
}

Vec layer_norm(const Vec& x, const Vec& g, const Vec& b, double eps) {
  const double n = static_cast<double>(x.size());
  double mean = 0, var = 0;
  for (double v : x) mean += v / n;
  for (double v : x) var += (v - mean) * (v - mean) / n;
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) / std::sqrt(var + eps) * g[i] + b[i];
  return out;
}

Vec relu(Vec x) {
  for (auto& v : x) v = std::max(v, 0.0);
  return x;
}

Vec add(Vec a, const Vec& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

Tensor identity_block(std::size_t rows, std::size_t cols) {
  Tensor t({rows, cols});
  for (std::size_t i = 0; i < std::min(rows, cols); ++i) t.at(i, i) = 1.0;
  return t;
}

void set_linear(ParameterStore& p, const std::string& name, Tensor w) {
  const std::size_t out = w.cols();
  p.get_mut(name + ".w") = std::move(w);
  p.get_mut(name + ".b") = Tensor({out});
}

Vec values(Var v) { return v.value().values(); }

bool sums_to_one(const Vec& w, double tol = 1e-6) {
  double s = 0;
  for (double x : w) {
    if (x < 0.0) return false;
    s += x;
  }
  return std::abs(s - 1.0) <= tol;
}

}  // namespace

TEST_CASE("ModelConfig validation and JSON") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());
  c.c = 32;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig{};
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig{};
  c.F = 20;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  ModelConfig t = tiny_config(Mode::NoLmem);
  t.mask = InputMask::DialogOnly;
  const ModelConfig back = ModelConfig::from_json(t.to_json());
  CHECK(back.to_json() == t.to_json());
  auto j = t.to_json();
  j["bogus"] = 1;
  CHECK_THROWS_AS(ModelConfig::from_json(j), ConfigError);
  CHECK_THROWS_AS(parse_mode("no_memory"), ConfigError);
  for (Mode m : kAllModes) CHECK(parse_mode(mode_name(m)) == m);
}

TEST_CASE("init_params is seeded and enumerable") {
  const auto a = init_params(tiny_config());
  const auto b = init_params(tiny_config());
  const auto c = init_params(tiny_config(Mode::Full, 2));
  CHECK(a == b);
  CHECK_FALSE(a == c);
  CHECK(a.names() == b.names());
  CHECK(a.all_finite());
  CHECK(a.get("dec.f_m.w").shape() == Shape{16, 8});
  CHECK(a.get("dec.f_a.w").shape() == Shape{32, 8});
  CHECK(a.get("lmem.l0.h1.wq").shape() == Shape{8, 4});
}

TEST_CASE("vmem_attend") {
  ModelConfig cfg = tiny_config();
  cfg.L = cfg.c = 4;
  ParameterStore p = init_params(cfg);
  Rng rng(5);

  SUBCASE("identical views give uniform weights") {
    Tape tape;
    ParamView pv(tape, p);
    Tensor one = random_tensor({1, cfg.F}, rng, 0, 1);
    Tensor views({kNumViews, cfg.F});
    for (std::size_t r = 0; r < kNumViews; ++r)
      for (std::size_t j = 0; j < cfg.F; ++j) views.at(r, j) = one[j];
    auto res = vmem_attend(tape.constant(random_tensor({4}, rng)), tape.constant(views), pv, cfg);
    for (double w : values(res.weights)) CHECK(w == doctest::Approx(1.0 / 36).epsilon(1e-12));
  }

  SUBCASE("zero memory with zero-bias query net gives uniform weights") {
    p.get_mut("vmem.f_v.l1.b") = Tensor({4});
    p.get_mut("vmem.f_v.l2.b") = Tensor({4});
    Tape tape;
    ParamView pv(tape, p);
    auto res = vmem_attend(tape.constant(Tensor({4})), tape.constant(random_tensor({kNumViews, cfg.F}, rng)), pv, cfg);
    for (double w : values(res.weights)) CHECK(std::abs(w - 1.0 / 36) < 1e-9);
  }

  SUBCASE("hand attention with identity projections") {
    set_linear(p, "vmem.f_v.l1", identity_block(4, 4));
    set_linear(p, "vmem.f_v.l2", identity_block(4, 4));
    set_linear(p, "vmem.f_vlm.l1", identity_block(cfg.F, 4));
    set_linear(p, "vmem.f_vlm.l2", identity_block(4, 4));
    Tensor views = random_tensor({kNumViews, cfg.F}, rng, 0, 1);
    const Vec e = {0.7, 1.3, 0.2, 0.9};
    Tape tape;
    ParamView pv(tape, p);
    auto res = vmem_attend(tape.constant(Tensor::vector(e)), tape.constant(views), pv, cfg);

    Vec scores;
    for (std::size_t i = 0; i < kNumViews; ++i) {
      Vec k(views.row(i).begin(), views.row(i).begin() + 4);
      scores.push_back(dot(e, k) / 2.0);
    }
    const Vec w = softmax(scores);
    Vec mem(4, 0.0);
    for (std::size_t i = 0; i < kNumViews; ++i)
      for (std::size_t j = 0; j < 4; ++j) mem[j] += w[i] * views.at(i, j);
    for (std::size_t i = 0; i < kNumViews; ++i) CHECK(res.weights.value()[i] == doctest::Approx(w[i]).epsilon(1e-12));
    for (std::size_t j = 0; j < 4; ++j) CHECK(res.v_mem.value()[j] == doctest::Approx(mem[j]).epsilon(1e-12));

    // raw-space variant mixes the unprojected rows with the same weights
    ModelConfig raw = cfg;
    raw.vmem_raw = true;
    auto rr = vmem_attend(tape.constant(Tensor::vector(e)), tape.constant(views), pv, raw);
    REQUIRE(rr.v_mem.shape() == Shape{cfg.F});
    double want = 0;
    for (std::size_t i = 0; i < kNumViews; ++i) want += w[i] * views.at(i, 10);
    CHECK(rr.v_mem.value()[10] == doctest::Approx(want).epsilon(1e-12));
  }

  SUBCASE("wrong view count") {
    Tape tape;
    ParamView pv(tape, p);
    CHECK_THROWS_AS(vmem_attend(tape.constant(Tensor({4})), tape.constant(Tensor({35, cfg.F})), pv, cfg),
                    DimensionError);
  }
}

TEST_CASE("lmem_attend") {
  const ModelConfig cfg = tiny_config();
  const ParameterStore p = fixtures::scrambled_params(cfg, 3);
  Rng rng(9);

  SUBCASE("single history row") {
    Tape tape;
    ParamView pv(tape, p);
    auto res = lmem_attend(tape.constant(random_tensor({8}, rng)), tape.constant(random_tensor({1, 8}, rng)), pv, cfg);
    REQUIRE(res.head_weights.size() == cfg.heads);
    for (Var w : res.head_weights) CHECK(values(w) == Vec{1.0});
    CHECK(res.d_ctx.shape() == Shape{16});
  }

  SUBCASE("identical history rows give uniform weights") {
    Tape tape;
    ParamView pv(tape, p);
    Tensor row = random_tensor({8}, rng);
    Tensor hist({3, 8});
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t j = 0; j < 8; ++j) hist.at(r, j) = row[j];
    auto res = lmem_attend(tape.constant(random_tensor({8}, rng)), tape.constant(hist), pv, cfg);
    for (Var w : res.head_weights)
      for (double x : values(w)) CHECK(x == doctest::Approx(1.0 / 3).epsilon(1e-12));
  }

  SUBCASE("empty history is rejected") {
    Tape tape;
    ParamView pv(tape, p);
    CHECK_THROWS_AS(lmem_attend(tape.constant(Tensor({8})), tape.constant(Tensor({0, 8})), pv, cfg), DimensionError);
  }

  SUBCASE("hand-unrolled single head, L = c = 2") {
    ModelConfig small = cfg;
    small.L = small.c = 2;
    small.heads = 1;
    ParameterStore q;
    q.add("lmem.l0.h0.wq", Tensor::matrix({{0.5, -0.2}, {0.3, 0.8}}));
    q.add("lmem.l0.h0.wk", Tensor::matrix({{1.1, 0.4}, {-0.6, 0.9}}));
    q.add("lmem.l0.h0.wv", Tensor::matrix({{0.2, 0.7}, {1.0, -0.3}}));
    q.add("lmem.l0.ln1.gamma", Tensor::vector({1.2, 0.8}));
    q.add("lmem.l0.ln1.beta", Tensor::vector({0.1, -0.2}));
    q.add("lmem.l0.ln2.gamma", Tensor::vector({0.9, 1.1}));
    q.add("lmem.l0.ln2.beta", Tensor::vector({0.0, 0.3}));
    q.add("lmem.l0.f_lan.l1.w", Tensor::matrix({{0.6, -0.4}, {0.2, 0.5}}));
    q.add("lmem.l0.f_lan.l1.b", Tensor::vector({0.1, 0.05}));
    q.add("lmem.l0.f_lan.l2.w", Tensor::matrix({{-0.3, 0.7}, {0.8, 0.1}}));
    q.add("lmem.l0.f_lan.l2.b", Tensor::vector({0.02, -0.04}));
    const Vec d = {0.4, -0.9};
    const Tensor hist = Tensor::matrix({{0.3, 0.5}, {-0.7, 0.2}});

    Tape tape;
    ParamView pv(tape, q);
    auto res = lmem_attend(tape.constant(Tensor::vector(d)), tape.constant(hist), pv, small);

    const Vec qv = vecmat(d, q.get("lmem.l0.h0.wq"));
    Vec scores, v0, v1;
    for (std::size_t i = 0; i < 2; ++i) {
      Vec h(hist.row(i).begin(), hist.row(i).end());
      scores.push_back(dot(qv, vecmat(h, q.get("lmem.l0.h0.wk"))) / std::sqrt(2.0));
    }
    const Vec w = softmax(scores);
    const Vec h0 = vecmat(Vec(hist.row(0).begin(), hist.row(0).end()), q.get("lmem.l0.h0.wv"));
    const Vec h1 = vecmat(Vec(hist.row(1).begin(), hist.row(1).end()), q.get("lmem.l0.h0.wv"));
    const Vec head = {w[0] * h0[0] + w[1] * h1[0], w[0] * h0[1] + w[1] * h1[1]};
    const Vec x = layer_norm(add(head, d), {1.2, 0.8}, {0.1, -0.2}, small.ln_eps);
    Vec hidden = relu(add(vecmat(x, q.get("lmem.l0.f_lan.l1.w")), {0.1, 0.05}));
    Vec mlp = add(vecmat(hidden, q.get("lmem.l0.f_lan.l2.w")), {0.02, -0.04});
    const Vec dhat = layer_norm(add(mlp, x), {0.9, 1.1}, {0.0, 0.3}, small.ln_eps);

    for (std::size_t i = 0; i < 2; ++i) CHECK(res.head_weights[0].value()[i] == doctest::Approx(w[i]).epsilon(1e-12));
    for (std::size_t j = 0; j < 2; ++j) CHECK(res.d_hat.value()[j] == doctest::Approx(dhat[j]).epsilon(1e-12));
    CHECK(values(res.d_ctx) == Vec{res.d_hat.value()[0], res.d_hat.value()[1], d[0], d[1]});
  }
}

TEST_CASE("cross_modal") {
  ModelConfig cfg = tiny_config();
  const ParameterStore p = fixtures::scrambled_params(cfg, 4);
  Rng rng(10);

  SUBCASE("single visual entry passes through") {
    Tape tape;
    ParamView pv(tape, p);
    std::vector<Var> bank = {tape.constant(random_tensor({8}, rng))};
    auto res = cross_modal(tape.constant(random_tensor({16}, rng)), bank, tape.constant(random_tensor({2, 8}, rng)),
                           pv, cfg);
    CHECK(values(res.e_vm) == values(bank[0]));
    CHECK(values(res.l2v) == Vec{1.0});
  }

  SUBCASE("equal dialog rows give the projected row") {
    Tape tape;
    ParamView pv(tape, p);
    Tensor row = random_tensor({8}, rng);
    Tensor d_bank({3, 8});
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t j = 0; j < 8; ++j) d_bank.at(r, j) = row[j];
    std::vector<Var> bank = {tape.constant(random_tensor({8}, rng)), tape.constant(random_tensor({8}, rng))};
    auto res = cross_modal(tape.constant(random_tensor({16}, rng)), bank, tape.constant(d_bank), pv, cfg);
    Vec want = add(vecmat(values(tape.constant(row)), p.get("cross.p_d.w")), p.get("cross.p_d.b").values());
    for (std::size_t j = 0; j < 8; ++j) CHECK(res.e_vlm.value()[j] == doctest::Approx(want[j]).epsilon(1e-12));
  }

  SUBCASE("hand oracle with identity projections, c = L = 2") {
    ModelConfig small = cfg;
    small.L = small.c = 2;
    ParameterStore q;
    q.add("cross.p_l.w", identity_block(4, 2));
    q.add("cross.p_l.b", Tensor({2}));
    q.add("cross.p_v.w", identity_block(2, 2));
    q.add("cross.p_v.b", Tensor({2}));
    q.add("cross.p_d.w", identity_block(2, 2));
    q.add("cross.p_d.b", Tensor({2}));
    const Vec d_ctx = {0.8, -0.3, 0.5, 0.1};
    const Vec b0 = {1.0, 0.2}, b1 = {-0.4, 0.9};
    const Vec r0 = {0.6, -0.5}, r1 = {0.3, 0.7};
    Tape tape;
    ParamView pv(tape, q);
    std::vector<Var> bank = {tape.constant(Tensor::vector(b0)), tape.constant(Tensor::vector(b1))};
    auto res = cross_modal(tape.constant(Tensor::vector(d_ctx)), bank,
                           tape.constant(Tensor::matrix({{r0[0], r0[1]}, {r1[0], r1[1]}})), pv, small);

    const Vec ql = {0.8, -0.3};
    const Vec a = softmax({dot(ql, b0) / std::sqrt(2.0), dot(ql, b1) / std::sqrt(2.0)});
    const Vec e_vm = {a[0] * b0[0] + a[1] * b1[0], a[0] * b0[1] + a[1] * b1[1]};
    const Vec bw = softmax({dot(e_vm, r0) / std::sqrt(2.0), dot(e_vm, r1) / std::sqrt(2.0)});
    const Vec e_vlm = {bw[0] * r0[0] + bw[1] * r1[0], bw[0] * r0[1] + bw[1] * r1[1]};
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(res.l2v.value()[i] == doctest::Approx(a[i]).epsilon(1e-12));
      CHECK(res.v2l.value()[i] == doctest::Approx(bw[i]).epsilon(1e-12));
      CHECK(res.e_vm.value()[i] == doctest::Approx(e_vm[i]).epsilon(1e-12));
      CHECK(res.e_vlm.value()[i] == doctest::Approx(e_vlm[i]).epsilon(1e-12));
    }
  }

  SUBCASE("empty banks") {
    Tape tape;
    ParamView pv(tape, p);
    std::vector<Var> none;
    std::vector<Var> one = {tape.constant(Tensor({8}))};
    CHECK_THROWS_AS(cross_modal(tape.constant(Tensor({16})), none, tape.constant(Tensor({1, 8})), pv, cfg),
                    DimensionError);
    CHECK_THROWS_AS(cross_modal(tape.constant(Tensor({16})), one, tape.constant(Tensor({0, 8})), pv, cfg),
                    DimensionError);
  }
}

TEST_CASE("decode_action") {
  const ModelConfig cfg = tiny_config();
  const ParameterStore p = fixtures::scrambled_params(cfg, 6);
  Rng rng(12);
  Tape tape;
  ParamView pv(tape, p);
  Var fused = tape.constant(random_tensor({16}, rng));

  SUBCASE("single candidate") {
    Var logits = decode_action(fused, tape.constant(random_tensor({1, cfg.F}, rng)), pv, cfg);
    CHECK(values(ops::softmax(logits)) == Vec{1.0});
  }

  SUBCASE("duplicate candidates score equally") {
    Tensor c = random_tensor({3, cfg.F}, rng);
    for (std::size_t j = 0; j < cfg.F; ++j) c.at(2, j) = c.at(0, j);
    Var logits = decode_action(fused, tape.constant(c), pv, cfg);
    CHECK(logits.value()[0] == logits.value()[2]);
  }

  SUBCASE("hand scoring") {
    ModelConfig small = cfg;
    small.K = 3;
    ParameterStore q;
    q.add("dec.f_m.w", identity_block(16, 3));
    q.add("dec.f_m.b", Tensor({3}));
    q.add("dec.f_a.w", identity_block(cfg.F, 3));
    q.add("dec.f_a.b", Tensor({3}));
    Tape t2;
    ParamView pv2(t2, q);
    Tensor cands({3, cfg.F});
    cands.at(0, 0) = 1.0;
    cands.at(1, 1) = 1.0;
    cands.at(2, 2) = 1.0;
    Vec e(16, 0.0);
    e[0] = 0.2;
    e[1] = 0.9;
    e[2] = -0.5;
    Var logits = decode_action(t2.constant(Tensor::vector(e)), t2.constant(cands), pv2, small);
    CHECK(values(logits) == Vec{0.2, 0.9, -0.5});
    // shifting the memory moves the winner to the third candidate
    e[2] += 1.5;
    Var shifted = decode_action(t2.constant(Tensor::vector(e)), t2.constant(cands), pv2, small);
    CHECK(shifted.value()[2] == doctest::Approx(1.0));
    CHECK(shifted.value()[2] > shifted.value()[1]);
  }

  SUBCASE("no candidates") {
    CHECK_THROWS_AS(decode_action(fused, tape.constant(Tensor({0, cfg.F})), pv, cfg), DimensionError);
  }
}

TEST_CASE("round_context") {
  const ModelConfig cfg = tiny_config();
  const ParameterStore p = fixtures::scrambled_params(cfg, 8);
  Rng rng(13);
  Tape tape;
  ParamView pv(tape, p);
  Var d = tape.constant(random_tensor({8}, rng));
  Var words = tape.constant(random_tensor({4, 8}, rng));

  SUBCASE("first round attends over the begin row") {
    auto ctx = round_context(d, words, tape.constant(Tensor({0, 8})), pv, cfg);
    CHECK(ctx.d_bank.shape() == Shape{1, 8});
    REQUIRE(ctx.lmem_weights.size() == cfg.heads);
    CHECK(values(ctx.lmem_weights[0]) == Vec{1.0});
  }
  SUBCASE("history rows then the current dialog") {
    Tensor hist = random_tensor({2, 8}, rng);
    auto ctx = round_context(d, words, tape.constant(hist), pv, cfg);
    REQUIRE(ctx.d_bank.shape() == Shape{3, 8});
    for (std::size_t j = 0; j < 8; ++j) {
      CHECK(ctx.d_bank.value().at(1, j) == hist.at(1, j));
      CHECK(ctx.d_bank.value().at(2, j) == d.value()[j]);
    }
  }
  SUBCASE("no_lmem pools the word states") {
    const ModelConfig nl = tiny_config(Mode::NoLmem);
    auto ctx = round_context(d, words, tape.constant(random_tensor({2, 8}, rng)), pv, nl);
    CHECK(ctx.lmem_weights.empty());
    for (std::size_t j = 0; j < 8; ++j) {
      double mean = 0;
      for (std::size_t r = 0; r < 4; ++r) mean += words.value().at(r, j) / 4.0;
      CHECK(ctx.d_ctx.value()[j] == doctest::Approx(mean).epsilon(1e-12));
      CHECK(ctx.d_ctx.value()[8 + j] == d.value()[j]);
    }
  }
}

TEST_CASE("cmn_step bookkeeping and modes") {
  const auto e = fixtures::random_episode(tiny_config(), 21, {0, 0, 0});
  for (Mode m : kAllModes) {
    const ModelConfig cfg = tiny_config(m);
    const ParameterStore p = fixtures::scrambled_params(cfg, 22);
    Tape tape;
    ParamView pv(tape, p);
    auto u = fixtures::unroll(e, pv, cfg);
    for (std::size_t s = 0; s < 3; ++s) {
      CHECK(u.states[s].v_bank.size() == s + 1);
      CHECK(u.states[s].step == s + 1);
      CHECK(u.logits[s].size() == e.candidates[s].rows() + 1);
      CHECK(u.weights[s].vmem.size() == kNumViews);
      CHECK(u.weights[s].l2v.size() == (m == Mode::NoVlmem ? 1 : s + 1));
      CHECK(values(u.states[s].e_prev).size() == cfg.c);
    }
    if (m == Mode::NoVmem)
      for (double w : values(u.weights[0].vmem)) CHECK(w == 1.0 / 36);
  }
}

TEST_CASE("full and no_vmem disagree on a seeded model") {
  const auto e = fixtures::random_episode(tiny_config(), 31, {0, 0});
  const ParameterStore p = fixtures::scrambled_params(tiny_config(), 32);
  Tape tape;
  ParamView pv(tape, p);
  auto full = fixtures::unroll(e, pv, tiny_config(Mode::Full));
  auto novm = fixtures::unroll(e, pv, tiny_config(Mode::NoVmem));
  CHECK(values(full.logits[1]) != values(novm.logits[1]));
}

TEST_CASE("attention weights are distributions") {
  for (std::uint64_t draw = 0; draw < 60; ++draw) {
    const Mode m = kAllModes[draw % 4];
    ModelConfig cfg = tiny_config(m, draw);
    cfg.lmem_layers = 1 + draw % 2;
    const ParameterStore p = fixtures::scrambled_params(cfg, 1000 + draw, 2.0);
    const auto e = fixtures::random_episode(cfg, 2000 + draw, {0, 0, 1, 2, 2});
    Tape tape;
    ParamView pv(tape, p);
    auto u = fixtures::unroll(e, pv, cfg);
    for (const auto& w : u.weights) {
      CHECK(sums_to_one(values(w.vmem)));
      CHECK(sums_to_one(values(w.l2v)));
      CHECK(sums_to_one(values(w.v2l)));
      for (Var h : w.lmem) CHECK(sums_to_one(values(h)));
    }
  }
}

TEST_CASE("unrolled loss passes grad_check in every mode") {
  for (Mode m : kAllModes) {
    for (std::uint64_t seed : {1, 2}) {
      const ModelConfig cfg = tiny_config(m, seed);
      const ParameterStore p = fixtures::scrambled_params(cfg, 40 + seed);
      const auto e = fixtures::random_episode(cfg, 50 + seed, {0, 0, 1});
      ScalarFn f = [&](ParamView& pv) { return fixtures::unroll(e, pv, cfg).loss; };
      CHECK(grad_check(f, p) < 1e-4);
    }
  }
}

TEST_CASE("logits are causal and deterministic") {
  const ModelConfig cfg = tiny_config();
  const ParameterStore p = fixtures::scrambled_params(cfg, 60);
  auto e = fixtures::random_episode(cfg, 61, {0, 0, 1, 1});
  Tape t1;
  ParamView pv1(t1, p);
  auto a = fixtures::unroll(e, pv1, cfg);
  Tape t2;
  ParamView pv2(t2, p);
  auto b = fixtures::unroll(e, pv2, cfg);
  for (std::size_t s = 0; s < 4; ++s) {
    CHECK(values(a.logits[s]) == values(b.logits[s]));
    CHECK(values(a.weights[s].vmem) == values(b.weights[s].vmem));
  }

  Rng rng(62);
  e.views[3] = random_tensor({kNumViews, cfg.F}, rng);
  e.candidates[2] = random_tensor({2, cfg.F}, rng);
  e.dialogs[1] = {{7, 8, 9}, {10}};
  Tape t3;
  ParamView pv3(t3, p);
  auto c = fixtures::unroll(e, pv3, cfg);
  CHECK(values(c.logits[0]) == values(a.logits[0]));
  CHECK(values(c.logits[1]) == values(a.logits[1]));
  CHECK(values(c.logits[2]) != values(a.logits[2]));
}

TEST_CASE("no_vlmem steps ignore earlier steps") {
  const ModelConfig cfg = tiny_config(Mode::NoVlmem);
  const ParameterStore p = fixtures::scrambled_params(cfg, 70);
  auto a = fixtures::random_episode(cfg, 71, {0, 0, 0});
  auto b = fixtures::random_episode(cfg, 72, {0, 0, 0});
  // same dialog and same current step, different past observations
  b.dialogs = a.dialogs;
  b.views[2] = a.views[2];
  b.candidates[2] = a.candidates[2];
  b.targets[2] = a.targets[2];
  Tape t1;
  ParamView pv1(t1, p);
  Tape t2;
  ParamView pv2(t2, p);
  auto ua = fixtures::unroll(a, pv1, cfg);
  auto ub = fixtures::unroll(b, pv2, cfg);
  CHECK(values(ua.logits[2]) == values(ub.logits[2]));
  CHECK(values(ua.logits[0]) != values(ub.logits[0]));

  // the full model does remember
  const ModelConfig full = tiny_config(Mode::Full);
  Tape t3;
  ParamView pv3(t3, p);
  Tape t4;
  ParamView pv4(t4, p);
  CHECK(values(fixtures::unroll(a, pv3, full).logits[2]) != values(fixtures::unroll(b, pv4, full).logits[2]));
}

TEST_CASE("next_round keeps memory and clears the bank") {
  const ModelConfig cfg = tiny_config();
  const ParameterStore p = fixtures::scrambled_params(cfg, 80);
  const auto e = fixtures::random_episode(cfg, 81, {0, 0});
  Tape tape;
  ParamView pv(tape, p);
  auto u = fixtures::unroll(e, pv, cfg);
  const StepState n = next_round(u.states[1], true);
  CHECK(n.v_bank.empty());
  CHECK(n.round == 1);
  CHECK(values(n.e_prev) == values(u.states[1].e_prev));
  CHECK_FALSE(n.e_prev.requires_grad());
  CHECK(next_round(u.states[1], false).e_prev.requires_grad());
  const StepState s0 = initial_state(tape, cfg);
  for (double x : values(s0.e_prev)) CHECK(x == 0.0);
}

TEST_CASE("mask_visual") {
  Rng rng(90);
  const Tensor v = random_tensor({kNumViews, 32}, rng);
  CHECK(mask_visual(v, InputMask::None) == v);
  CHECK(mask_visual(v, InputMask::VisionOnly) == v);
  const Tensor m = mask_visual(v, InputMask::DialogOnly);
  for (std::size_t r = 0; r < kNumViews; ++r) {
    for (std::size_t j = 0; j < 32; ++j) {
      const bool kept = j == FeatureLayout::kDirSin || j == FeatureLayout::kDirCos;
      CHECK(m.at(r, j) == (kept ? v.at(r, j) : 0.0));
    }
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  namespace fs = std::filesystem;
  ModelConfig cfg = tiny_config(Mode::NoLmem, 5);
  Model m = make_model(cfg);
  m.params = fixtures::scrambled_params(cfg, 91);
  m.params.get_mut("dec.stop")[0] = 0.1 + 0.2;  // not exactly representable in short decimal
  m.params.get_mut("dec.stop")[1] = 1e-300;
  const fs::path dir = fs::temp_directory_path() / "cmn_test_ckpt";
  fs::create_directories(dir);
  save_checkpoint(m, dir / "m.json");
  const Model back = load_checkpoint(dir / "m.json");
  CHECK(back.params.values() == m.params.values());
  CHECK(back.config.to_json() == m.config.to_json());

  SUBCASE("shape mismatch") {
    auto j = checkpoint_json(m);
    j["params"]["dec.f_a.w"]["shape"] = {32, 9};
    j["params"]["dec.f_a.w"]["data"] = std::vector<double>(32 * 9, 0.0);
    CHECK_THROWS_AS(model_from_checkpoint(j), DimensionError);
  }
  SUBCASE("missing parameter") {
    auto j = checkpoint_json(m);
    j["params"].erase("dec.stop");
    CHECK_THROWS_AS(model_from_checkpoint(j), DimensionError);
  }
  SUBCASE("bad config and version") {
    auto j = checkpoint_json(m);
    j["model"]["heads"] = 3;
    CHECK_THROWS_AS(model_from_checkpoint(j), DataError);
    j = checkpoint_json(m);
    j["version"] = 99;
    CHECK_THROWS_AS(model_from_checkpoint(j), DataError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_checkpoint(dir / "absent.json"), DataError); }
  fs::remove_all(dir);
}

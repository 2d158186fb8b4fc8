#include "cmn/cmn.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "cmn/datagen.hpp"
#include "cmn/errors.hpp"
#include "cmn/world.hpp"

namespace cmn {

std::string mode_name(Mode m) {
  switch (m) {
    case Mode::Full: return "full";
    case Mode::NoVmem: return "no_vmem";
    case Mode::NoLmem: return "no_lmem";
    case Mode::NoVlmem: return "no_vlmem";
  }
  return "?";
}

Mode parse_mode(const std::string& s) {
  for (Mode m : kAllModes)
    if (mode_name(m) == s) return m;
  throw ConfigError("model.mode: unknown mode '" + s + "'");
}

std::string mask_name(InputMask m) {
  switch (m) {
    case InputMask::None: return "none";
    case InputMask::VisionOnly: return "vision_only";
    case InputMask::DialogOnly: return "dialog_only";
  }
  return "?";
}

InputMask parse_mask(const std::string& s) {
  for (InputMask m : {InputMask::None, InputMask::VisionOnly, InputMask::DialogOnly})
    if (mask_name(m) == s) return m;
  throw ConfigError("model.mask: unknown mask '" + s + "'");
}

std::size_t ModelConfig::vocab_size() const { return vocab == 0 ? Vocabulary::standard().size() : vocab; }

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* key) {
    if (v == 0) throw ConfigError(std::string("model.") + key + ": must be positive");
  };
  positive(d_w, "d_w");
  positive(L, "L");
  positive(c, "c");
  positive(K, "K");
  positive(heads, "heads");
  positive(lmem_layers, "lmem_layers");
  if (F < FeatureLayout::kMinWidth) throw ConfigError("model.F: feature width must be at least 31");
  if (c != L) throw ConfigError("model.c: the L-mem residual needs c == L");
  if (c % heads != 0) throw ConfigError("model.heads: c must be divisible by the head count");
  if (!(ln_eps >= 0.0)) throw ConfigError("model.ln_eps: must be nonnegative");
  if (!(init_range > 0.0)) throw ConfigError("model.init_range: must be positive");
  if (vocab != 0 && vocab < 3) throw ConfigError("model.vocab: too small");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"vocab", vocab_size()}, {"d_w", d_w},         {"L", L},
          {"c", c},                {"F", F},             {"K", K},
          {"heads", heads},        {"lmem_layers", lmem_layers}, {"mode", mode_name(mode)},
          {"mask", mask_name(mask)}, {"vmem_raw", vmem_raw}, {"ln_eps", ln_eps},
          {"init_range", init_range}, {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  if (!j.is_object()) throw ConfigError("model: expected an object");
  auto count = [](const nlohmann::json& v, const std::string& k) {
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<long long>() < 0)) {
      throw ConfigError("model." + k + ": expected a nonnegative integer");
    }
    return v.get<std::size_t>();
  };
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const auto& v = it.value();
    try {
      if (k == "vocab") cfg.vocab = count(v, k);
      else if (k == "d_w") cfg.d_w = count(v, k);
      else if (k == "L") cfg.L = count(v, k);
      else if (k == "c") cfg.c = count(v, k);
      else if (k == "F") cfg.F = count(v, k);
      else if (k == "K") cfg.K = count(v, k);
      else if (k == "heads") cfg.heads = count(v, k);
      else if (k == "lmem_layers") cfg.lmem_layers = count(v, k);
      else if (k == "mode") cfg.mode = parse_mode(v.get<std::string>());
      else if (k == "mask") cfg.mask = parse_mask(v.get<std::string>());
      else if (k == "vmem_raw") cfg.vmem_raw = v.get<bool>();
      else if (k == "ln_eps") cfg.ln_eps = v.get<double>();
      else if (k == "init_range") cfg.init_range = v.get<double>();
      else if (k == "seed") cfg.seed = count(v, k);
      else throw ConfigError("model." + k + ": unknown key");
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("model." + k + ": wrong type");
    }
  }
  cfg.validate();
  return cfg;
}

namespace {

Tensor uniform(Shape shape, double range, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& x : t.values()) x = rng.uniform(-range, range);
  return t;
}

void add_linear(ParameterStore& p, const std::string& name, std::size_t in, std::size_t out, double r, Rng& rng) {
  p.add(name + ".w", uniform({in, out}, r, rng));
  p.add(name + ".b", uniform({out}, r, rng));
}

void add_mlp(ParameterStore& p, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
             double r, Rng& rng) {
  add_linear(p, name + ".l1", in, hidden, r, rng);
  add_linear(p, name + ".l2", hidden, out, r, rng);
}

Var linear(Var x, ParamView& pv, const std::string& name) { return ops::linear(x, pv(name + ".w"), pv(name + ".b")); }

Var mlp(Var x, ParamView& pv, const std::string& name) {
  return linear(ops::relu(linear(x, pv, name + ".l1")), pv, name + ".l2");
}

Var zeros(Tape& tape, std::size_t n) { return tape.constant(Tensor({n})); }

}  // namespace

ParameterStore init_params(const ModelConfig& cfg) {
  cfg.validate();
  ParameterStore p;
  Rng rng(derive_seed({cfg.seed, 0x6d6f64656cULL}));
  const double r = cfg.init_range;
  init_encoder_params(p, {cfg.vocab_size(), cfg.d_w, cfg.L, r}, rng);

  add_mlp(p, "vmem.f_v", cfg.c, cfg.c, cfg.c, r, rng);
  add_mlp(p, "vmem.f_vlm", cfg.F, cfg.c, cfg.c, r, rng);

  p.add("lmem.begin", uniform({cfg.L}, r, rng));
  const std::size_t ch = cfg.c / cfg.heads;
  for (std::size_t l = 0; l < cfg.lmem_layers; ++l) {
    const std::string layer = "lmem.l" + std::to_string(l);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      const std::string head = layer + ".h" + std::to_string(h);
      p.add(head + ".wq", uniform({cfg.L, ch}, r, rng));
      p.add(head + ".wk", uniform({cfg.L, ch}, r, rng));
      p.add(head + ".wv", uniform({cfg.L, ch}, r, rng));
    }
    for (const char* ln : {".ln1", ".ln2"}) {
      p.add(layer + ln + ".gamma", Tensor({cfg.c}, 1.0));
      p.add(layer + ln + ".beta", Tensor({cfg.c}, 0.0));
    }
    add_mlp(p, layer + ".f_lan", cfg.c, cfg.c, cfg.c, r, rng);
  }

  const std::size_t bw = cfg.bank_width();
  add_linear(p, "cross.p_l", 2 * cfg.L, bw, r, rng);
  add_linear(p, "cross.p_v", bw, cfg.c, r, rng);
  add_linear(p, "cross.p_d", cfg.L, cfg.c, r, rng);

  add_linear(p, "dec.f_m", bw + cfg.c, cfg.K, r, rng);
  add_linear(p, "dec.f_a", cfg.F, cfg.K, r, rng);
  p.add("dec.stop", uniform({cfg.F}, r, rng));
  return p;
}

VmemResult vmem_attend(Var e_prev, Var views, ParamView& pv, const ModelConfig& cfg) {
  if (views.value().rank() != 2 || views.shape()[0] != kNumViews) {
    throw DimensionError("vmem_attend: expected 36 view rows, got " + shape_str(views.shape()));
  }
  Var keys = mlp(views, pv, "vmem.f_vlm");
  Var q = mlp(e_prev, pv, "vmem.f_v");
  auto att = ops::scaled_dot_attention(q, keys, cfg.vmem_raw ? views : keys);
  return {att.output, att.weights};
}

LmemResult lmem_attend(Var d_t, Var history, ParamView& pv, const ModelConfig& cfg) {
  if (history.value().rank() != 2 || history.shape()[0] == 0) {
    throw DimensionError("lmem_attend: empty dialog history");
  }
  LmemResult out;
  Var d = d_t;
  for (std::size_t l = 0; l < cfg.lmem_layers; ++l) {
    const std::string layer = "lmem.l" + std::to_string(l);
    Var heads;
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      const std::string head = layer + ".h" + std::to_string(h);
      Var q = ops::vecmat(d, pv(head + ".wq"));
      Var k = ops::matmul(history, pv(head + ".wk"));
      Var v = ops::matmul(history, pv(head + ".wv"));
      auto att = ops::scaled_dot_attention(q, k, v);
      out.head_weights.push_back(att.weights);
      heads = h == 0 ? att.output : ops::concat(heads, att.output);
    }
    Var x = ops::layer_norm(ops::add(heads, d), pv(layer + ".ln1.gamma"), pv(layer + ".ln1.beta"), cfg.ln_eps);
    d = ops::layer_norm(ops::add(mlp(x, pv, layer + ".f_lan"), x), pv(layer + ".ln2.gamma"),
                        pv(layer + ".ln2.beta"), cfg.ln_eps);
  }
  out.d_hat = d;
  out.d_ctx = ops::concat(d, d_t);
  return out;
}

CrossResult cross_modal(Var d_ctx, std::span<const Var> v_bank, Var d_bank, ParamView& pv, const ModelConfig&) {
  if (v_bank.empty()) throw DimensionError("cross_modal: empty visual memory bank");
  if (d_bank.value().rank() != 2 || d_bank.shape()[0] == 0) throw DimensionError("cross_modal: empty dialog bank");
  Var bank = ops::stack_rows(v_bank);
  auto l2v = ops::scaled_dot_attention(linear(d_ctx, pv, "cross.p_l"), bank, bank);
  Var dialog = linear(d_bank, pv, "cross.p_d");
  auto v2l = ops::scaled_dot_attention(linear(l2v.output, pv, "cross.p_v"), dialog, dialog);
  return {l2v.output, v2l.output, l2v.weights, v2l.weights};
}

Var decode_action(Var fused, Var candidates, ParamView& pv, const ModelConfig&) {
  if (candidates.value().rank() != 2 || candidates.shape()[0] == 0) {
    throw DimensionError("decode_action: no candidates");
  }
  Var a = linear(fused, pv, "dec.f_m");
  return ops::matvec(linear(candidates, pv, "dec.f_a"), a);
}

RoundContext round_context(Var d_t, Var word_states, Var history, ParamView& pv, const ModelConfig& cfg) {
  RoundContext ctx;
  const std::size_t t = history.shape()[0];
  std::vector<Var> rows;
  for (std::size_t i = 0; i < t; ++i) rows.push_back(ops::row(history, i));
  rows.push_back(d_t);
  ctx.d_bank = ops::stack_rows(rows);
  if (cfg.mode == Mode::NoLmem) {
    ctx.d_ctx = ops::concat(ops::mean_rows(word_states), d_t);
    return ctx;
  }
  Var begin = pv("lmem.begin");
  auto lm = lmem_attend(d_t, t == 0 ? ops::stack_rows(std::span<const Var>(&begin, 1)) : history, pv, cfg);
  ctx.d_ctx = lm.d_ctx;
  ctx.lmem_weights = std::move(lm.head_weights);
  return ctx;
}

StepState initial_state(Tape& tape, const ModelConfig& cfg, std::size_t round) {
  StepState s;
  s.e_prev = zeros(tape, cfg.c);
  s.round = round;
  return s;
}

StepState next_round(const StepState& s, bool detach) {
  StepState n;
  n.e_prev = detach ? ops::detach(s.e_prev) : s.e_prev;
  n.round = s.round + 1;
  return n;
}

StepResult cmn_step(const StepState& state, Var views, const RoundContext& ctx, Var candidates, ParamView& pv,
                    const ModelConfig& cfg) {
  StepResult out;
  Var e_prev = cfg.mode == Mode::NoVlmem ? zeros(pv.tape(), cfg.c) : state.e_prev;

  VmemResult vm;
  if (cfg.mode == Mode::NoVmem) {
    if (views.shape()[0] != kNumViews) throw DimensionError("cmn_step: expected 36 view rows");
    vm.v_mem = ops::mean_rows(cfg.vmem_raw ? views : mlp(views, pv, "vmem.f_vlm"));
    vm.weights = pv.tape().constant(Tensor({kNumViews}, 1.0 / static_cast<double>(kNumViews)));
  } else {
    vm = vmem_attend(e_prev, views, pv, cfg);
  }

  out.next = state;
  out.next.v_bank.push_back(vm.v_mem);
  out.next.step = state.step + 1;
  std::span<const Var> bank = out.next.v_bank;
  if (cfg.mode == Mode::NoVlmem) bank = bank.last(1);

  auto cr = cross_modal(ctx.d_ctx, bank, ctx.d_bank, pv, cfg);
  out.logits = decode_action(ops::concat(cr.e_vm, cr.e_vlm), candidates, pv, cfg);
  out.next.e_prev = cr.e_vlm;
  out.weights = {vm.weights, ctx.lmem_weights, cr.l2v, cr.v2l};
  return out;
}

Tensor mask_visual(Tensor views, InputMask mask) {
  if (mask != InputMask::DialogOnly) return views;
  for (std::size_t r = 0; r < views.rows(); ++r) {
    auto row = views.row(r);
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i != FeatureLayout::kDirSin && i != FeatureLayout::kDirCos) row[i] = 0.0;
    }
  }
  return views;
}

Model make_model(const ModelConfig& cfg) { return {cfg, init_params(cfg)}; }

nlohmann::json checkpoint_json(const Model& m) {
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, t] : m.params.values()) params[name] = {{"shape", t.shape()}, {"data", t.values()}};
  return {{"version", kCheckpointVersion}, {"model", m.config.to_json()}, {"params", params}};
}

Model model_from_checkpoint(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw DataError("checkpoint: unsupported version " + j.at("version").dump());
    }
    Model m;
    m.config = ModelConfig::from_json(j.at("model"));
    const auto reference = init_params(m.config);
    const auto& params = j.at("params");
    if (params.size() != reference.values().size()) {
      throw DimensionError("checkpoint: " + std::to_string(params.size()) + " parameters, model expects " +
                           std::to_string(reference.values().size()));
    }
    for (const auto& [name, expected] : reference.values()) {
      if (!params.contains(name)) throw DimensionError("checkpoint: missing parameter " + name);
      Tensor t(params[name].at("shape").get<Shape>(), params[name].at("data").get<std::vector<double>>());
      if (t.shape() != expected.shape()) {
        throw DimensionError("checkpoint: parameter " + name + " has shape " + shape_str(t.shape()) +
                             ", model expects " + shape_str(expected.shape()));
      }
      m.params.add(name, std::move(t));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Model& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << checkpoint_json(m).dump() << "\n";
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint " + path.string() + ": " + e.what());
  }
  return model_from_checkpoint(j);
}

}  // namespace cmn

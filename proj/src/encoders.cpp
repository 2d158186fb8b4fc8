#include "cmn/encoders.hpp"

#include "cmn/datagen.hpp"
#include "cmn/errors.hpp"

namespace cmn {

namespace {

Tensor uniform(Shape shape, double range, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& x : t.values()) x = rng.uniform(-range, range);
  return t;
}

}  // namespace

void init_encoder_params(ParameterStore& params, const EncoderConfig& cfg, Rng& rng) {
  if (cfg.vocab < 3 || cfg.d_w == 0 || cfg.L == 0) throw ConfigError("model: encoder widths must be positive");
  Tensor embed = uniform({cfg.vocab, cfg.d_w}, cfg.init_range, rng);
  for (auto& x : embed.row(kPadToken)) x = 0.0;
  params.add("enc.embed", std::move(embed));
  for (int layer = 0; layer < 2; ++layer) {
    const std::string p = "enc.lstm" + std::to_string(layer) + ".";
    const std::size_t in = layer == 0 ? cfg.d_w : cfg.L;
    params.add(p + "w_ih", uniform({in, 4 * cfg.L}, cfg.init_range, rng));
    params.add(p + "w_hh", uniform({cfg.L, 4 * cfg.L}, cfg.init_range, rng));
    Tensor bias = uniform({4 * cfg.L}, cfg.init_range, rng);
    for (std::size_t i = cfg.L; i < 2 * cfg.L; ++i) bias[i] += cfg.forget_bias;
    params.add(p + "b", std::move(bias));
  }
}

Var embed_tokens(std::span<const int> tokens, Var E) { return ops::embedding(E, tokens, kPadToken); }

SentenceEncoding encode_dialog(const std::vector<int>& q_tokens, const std::vector<int>& r_tokens, ParamView& pv) {
  if (q_tokens.empty() && r_tokens.empty()) throw DimensionError("encode_dialog: empty dialog");
  std::vector<int> tokens = q_tokens;
  tokens.push_back(kSepToken);
  tokens.insert(tokens.end(), r_tokens.begin(), r_tokens.end());
  Var h = embed_tokens(tokens, pv("enc.embed"));
  for (int layer = 0; layer < 2; ++layer) {
    const std::string p = "enc.lstm" + std::to_string(layer) + ".";
    h = ops::lstm_layer(h, pv(p + "w_ih"), pv(p + "w_hh"), pv(p + "b"));
  }
  return {ops::row(h, tokens.size() - 1), h};
}

Var encode_history(std::span<const std::pair<std::vector<int>, std::vector<int>>> rounds, ParamView& pv,
                   std::size_t L) {
  if (rounds.empty()) return pv.tape().constant(Tensor({0, L}));
  std::vector<Var> rows;
  for (const auto& [q, r] : rounds) rows.push_back(encode_dialog(q, r, pv).d);
  return ops::stack_rows(rows);
}

}  // namespace cmn

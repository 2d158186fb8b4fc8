#pragma once

#include <span>
#include <vector>

#include "cmn/autodiff.hpp"
#include "cmn/params.hpp"
#include "cmn/rng.hpp"

namespace cmn {

struct EncoderConfig {
  std::size_t vocab = 0;
  std::size_t d_w = 32;  // embedding width
  std::size_t L = 64;    // LSTM hidden width
  double init_range = 0.1;
  double forget_bias = 1.0;  // added to the forget-gate block of both LSTM biases
};

// enc.embed plus two LSTM layers, uniform in [-init_range, init_range]; the
// padding row of the embedding starts at zero.
void init_encoder_params(ParameterStore& params, const EncoderConfig& cfg, Rng& rng);

// Row lookup into E; the padding row stays zero and receives no gradient.
Var embed_tokens(std::span<const int> tokens, Var E);

struct SentenceEncoding {
  Var d;            // [L], last hidden state
  Var word_states;  // [N x L]
};

// Q, separator, R through the embedding and the two-layer LSTM.
SentenceEncoding encode_dialog(const std::vector<int>& q_tokens, const std::vector<int>& r_tokens, ParamView& pv);

// One encoded row per sentence pair, in order. No pairs gives a 0 x L constant.
Var encode_history(std::span<const std::pair<std::vector<int>, std::vector<int>>> rounds, ParamView& pv,
                   std::size_t L);

}  // namespace cmn

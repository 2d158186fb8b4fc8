#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cmn/autodiff.hpp"
#include "cmn/encoders.hpp"
#include "cmn/params.hpp"
#include "json.hpp"

namespace cmn {

enum class Mode { Full, NoVmem, NoLmem, NoVlmem };
std::string mode_name(Mode m);
Mode parse_mode(const std::string& s);
inline constexpr std::array<Mode, 4> kAllModes = {Mode::Full, Mode::NoVmem, Mode::NoLmem, Mode::NoVlmem};

// Inputs hidden from the model for the vision-only / dialog-only baselines.
enum class InputMask { None, VisionOnly, DialogOnly };
std::string mask_name(InputMask m);
InputMask parse_mask(const std::string& s);

struct ModelConfig {
  std::size_t vocab = 0;  // 0 means the standard vocabulary size
  std::size_t d_w = 32;
  std::size_t L = 64;
  std::size_t c = 64;
  std::size_t F = 32;
  std::size_t K = 64;
  std::size_t heads = 4;
  std::size_t lmem_layers = 1;
  Mode mode = Mode::Full;
  InputMask mask = InputMask::None;
  bool vmem_raw = false;  // V-mem sums raw view rows instead of projected ones
  double ln_eps = 1e-5;
  double init_range = 0.1;
  std::uint64_t seed = 1;

  std::size_t vocab_size() const;
  std::size_t bank_width() const { return vmem_raw ? F : c; }
  void validate() const;  // throws ConfigError
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);  // unknown keys rejected
};

ParameterStore init_params(const ModelConfig& cfg);

struct VmemResult {
  Var v_mem;    // [bank width]
  Var weights;  // [36]
};
VmemResult vmem_attend(Var e_prev, Var views, ParamView& pv, const ModelConfig& cfg);

struct LmemResult {
  Var d_ctx;                      // [2L]
  Var d_hat;                      // [L]
  std::vector<Var> head_weights;  // layers x heads, each [t]
};
LmemResult lmem_attend(Var d_t, Var history, ParamView& pv, const ModelConfig& cfg);

struct CrossResult {
  Var e_vm;
  Var e_vlm;
  Var l2v;  // over the visual bank
  Var v2l;  // over the dialog bank
};
CrossResult cross_modal(Var d_ctx, std::span<const Var> v_bank, Var d_bank, ParamView& pv, const ModelConfig& cfg);

// Scores every candidate row against f_m(fused); softmax is left to the caller.
Var decode_action(Var fused, Var candidates, ParamView& pv, const ModelConfig& cfg);

// Dialog-side inputs, fixed for a whole round.
struct RoundContext {
  Var d_ctx;   // [2L]
  Var d_bank;  // [(t+1) x L], encodings of rounds 0..t
  std::vector<Var> lmem_weights;
};
// d_t, word_states: current round; history: rounds before it (possibly 0 rows).
RoundContext round_context(Var d_t, Var word_states, Var history, ParamView& pv, const ModelConfig& cfg);

struct StepState {
  Var e_prev;
  std::vector<Var> v_bank;
  std::size_t round = 0;
  std::size_t step = 0;
};
StepState initial_state(Tape& tape, const ModelConfig& cfg, std::size_t round = 0);
// Same carried memory, fresh bank for the next round.
StepState next_round(const StepState& s, bool detach);

struct StepWeights {
  Var vmem;
  std::vector<Var> lmem;
  Var l2v;
  Var v2l;
};

struct StepResult {
  Var logits;
  StepWeights weights;
  StepState next;
};

// views: the observed panorama [36 x F]; candidates: [M x F] with STOP last.
StepResult cmn_step(const StepState& state, Var views, const RoundContext& ctx, Var candidates, ParamView& pv,
                    const ModelConfig& cfg);

// Zeroes what the mask hides from a panorama or candidate matrix.
Tensor mask_visual(Tensor views, InputMask mask);

struct Model {
  ModelConfig config;
  ParameterStore params;
};

Model make_model(const ModelConfig& cfg);

inline constexpr int kCheckpointVersion = 1;
nlohmann::json checkpoint_json(const Model& m);
Model model_from_checkpoint(const nlohmann::json& j);  // DataError / DimensionError on mismatch
void save_checkpoint(const Model& m, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace cmn

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "avemo/autodiff.hpp"
#include "avemo/optim.hpp"
#include "avemo/rng.hpp"

namespace avemo {

struct ToyLMConfig {
  int vocab_size = 32;
  int d_model = 32;
  int n_layers = 2;
  int n_heads = 4;
  int max_seq_len = 64;
  double rope_base = 10000.0;

  void validate() const;
};

/// Token layout of one teacher-forced sequence:
/// [pre tokens][modality span][post tokens][response tokens].
/// `span_len` counts soft modality tokens; it may be zero (text-only).
struct PromptLayout {
  std::vector<int> pre_tokens;
  int span_len = 0;
  std::vector<int> post_tokens;
  std::vector<int> response;

  int total_len() const {
    return static_cast<int>(pre_tokens.size()) + span_len +
           static_cast<int>(post_tokens.size()) +
           static_cast<int>(response.size());
  }
  int span_offset() const { return static_cast<int>(pre_tokens.size()); }
};

/// Position-id grid for a layout. A function of the layout only: the span
/// receives the position ids its video tokens would receive, no matter which
/// modality actually fills it, and text after the span continues from the
/// span's end.
std::vector<int> rope_positions(const PromptLayout& layout);

/// One low-rank branch on a projection: y += (alpha/r) * (x A) B.
struct LoRABranch {
  Parameter* A = nullptr;  // [d, r]
  Parameter* B = nullptr;  // [r, d], zero-init
  int rank = 0;
  double alpha = 0.0;
};

/// Decoder-only transformer with rotary positions, pre-LN blocks, and an
/// optional soft-token span spliced into the embedding stream.
class ToyLM {
 public:
  struct Layer {
    Parameter *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
    Parameter *ln1_g, *ln1_b, *ln2_g, *ln2_b;
    Parameter *w_up, *b_up, *w_down, *b_down;
    std::optional<LoRABranch> lora_q, lora_k, lora_v, lora_o;
  };

  ToyLM() = default;
  static ToyLM init(ParamStore& store, const ToyLMConfig& cfg, uint64_t seed,
                    const std::string& group = "backbone");

  /// Attaches zero-init LoRA branches to every q/k/v/o projection.
  /// With B = 0 the wrapped model is exactly the base model.
  void lora_wrap(ParamStore& store, int rank, double alpha,
                 const std::string& group = "lora");
  bool lora_wrapped() const { return lora_wrapped_; }
  /// Added parameter count: n_layers * 4 * 2 * d * r.
  long long lora_param_count() const;

  /// Full-sequence logits [n, V]. `modality` fills the span when
  /// layout.span_len > 0; its row count must equal span_len.
  Var forward(ParamCtx& ctx, const PromptLayout& layout,
              std::optional<Var> modality) const;

  /// Teacher-forced logits for the response positions only: [T, V],
  /// row t predicting response token t. Empty response gives an empty
  /// (nullopt) result.
  std::optional<Var> response_logits(ParamCtx& ctx, const PromptLayout& layout,
                                     std::optional<Var> modality) const;

  /// Greedy decode starting after [pre][span][post]; stops at EOS or
  /// max_len. Returned tokens exclude the EOS.
  std::vector<int> greedy_decode(const PromptLayout& prompt, ParamStore& store,
                                 std::optional<Tensor> modality,
                                 int max_len) const;

  const ToyLMConfig& config() const { return cfg_; }

 private:
  ToyLMConfig cfg_;
  Parameter* tok_embed_ = nullptr;  // [V, d]
  Parameter* unembed_ = nullptr;    // [d, V]
  Parameter *lnf_g_ = nullptr, *lnf_b_ = nullptr;
  std::vector<Layer> layers_;
  bool lora_wrapped_ = false;

  Var project(ParamCtx& ctx, Var x, Parameter* w, Parameter* b,
              const std::optional<LoRABranch>& lora) const;
};

}  // namespace avemo

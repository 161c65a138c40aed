#pragma once

#include <map>
#include <optional>

#include "avemo/autodiff.hpp"
#include "avemo/optim.hpp"
#include "avemo/world.hpp"

namespace avemo {

/// Shared residual enhancer: Enh(z) = z + W2 gelu(W1 LN(z)), one parameter
/// instance for every pathway. With W2 = 0 it is the identity map, bit-exact
/// (the residual branch contributes exact zeros).
class Enhancer {
 public:
  Enhancer() = default;
  static Enhancer init(ParamStore& store, int d_model, uint64_t seed,
                       const std::string& group = "enhancer");
  static Enhancer attach(ParamStore& store, int d_model,
                         const std::string& group = "enhancer");

  Var enhance(ParamCtx& ctx, Var tokens) const;
  int d_model() const { return d_; }

 private:
  int d_ = 0;
  Parameter *w1_, *w2_, *ln_g_, *ln_b_;
};

/// Shared pooling + V-A head: g_psi(mean_pool(tokens)) -> (valence, arousal).
class Supervisor {
 public:
  Supervisor() = default;
  static Supervisor init(ParamStore& store, int d_model, uint64_t seed,
                         const std::string& group = "supervisor");
  static Supervisor attach(ParamStore& store, int d_model,
                           const std::string& group = "supervisor");

  /// tokens [L, d] -> prediction [2]; pooling makes the result permutation
  /// invariant over token order.
  Var predict_va(ParamCtx& ctx, Var tokens) const;

 private:
  int d_ = 0;
  Parameter *w1_, *b1_, *w2_, *b2_;
};

/// Sequence concatenation z_av = [z_a; z_v], audio first.
Var fuse(Tape& tape, Var z_a, Var z_v);

/// Masked multi-pathway emotion loss: mean over available pathways of the
/// squared L2 error. Empty M gives a constant zero with no gradient.
Var emo_loss(Tape& tape, const std::map<Modality, Var>& preds,
             const ModalityLabelSet& labels);

/// L = L_LM + lambda * L_emo.
Var total_loss(Tape& tape, std::optional<Var> lm_loss, std::optional<Var> emo,
               double lambda);

}  // namespace avemo

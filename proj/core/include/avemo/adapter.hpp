#pragma once

#include "avemo/autodiff.hpp"
#include "avemo/optim.hpp"

namespace avemo {

/// g_phi: trainable map from frozen audio features [T_a, d_a] to the visual
/// token space [L_v, d]. Two fully connected layers reduce the sequence
/// axis, then two project the channel axis; GELU between each pair
/// (switchable for the ablation).
class AudioAdapter {
 public:
  struct Shape {
    int t_a, d_a, l_v, d_model;
    int h_seq() const { return 2 * l_v; }
    int h_ch() const { return 2 * d_model; }
  };

  AudioAdapter() = default;

  /// Seeded Gaussian init: per layer, stddev = (scale / 0.02) / sqrt(fan_in),
  /// i.e. scale = 0.02 is unit-gain. Biases start at zero.
  static AudioAdapter init(ParamStore& store, const Shape& shape, uint64_t seed,
                           double scale = 0.02, bool use_gelu = true,
                           const std::string& group = "audio_adapter");

  /// Rebind to parameters already present in a store (after checkpoint load).
  static AudioAdapter attach(ParamStore& store, const Shape& shape,
                             bool use_gelu = true,
                             const std::string& group = "audio_adapter");

  /// audio_feats [T_a, d_a] -> z_a [L_v, d]; differentiable end to end.
  Var adapt(ParamCtx& ctx, Var audio_feats) const;

  /// Convenience: pure forward on a fresh throwaway tape.
  Tensor adapt_value(const Tensor& audio_feats) const;

  const Shape& shape() const { return shape_; }

 private:
  Shape shape_{};
  bool use_gelu_ = true;
  Parameter *w_s1_, *b_s1_, *w_s2_, *b_s2_;  // sequence axis
  Parameter *w_c1_, *b_c1_, *w_c2_, *b_c2_;  // channel axis
};

}  // namespace avemo

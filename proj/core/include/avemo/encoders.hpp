#pragma once

#include "avemo/optim.hpp"
#include "avemo/rng.hpp"
#include "avemo/tensor.hpp"

namespace avemo {

/// Frozen random projection stack: raw [rows_in, d_in] -> tokens
/// [rows_out, d_out] through a sequence mix, tanh, and a channel
/// projection. Deterministic given its seed; never trained.
class FrozenEncoder {
 public:
  FrozenEncoder() = default;
  FrozenEncoder(ParamStore& store, const std::string& group, int rows_in,
                int d_in, int rows_out, int d_out, uint64_t seed);

  Tensor encode(const Tensor& raw) const;

  int rows_in() const { return rows_in_; }
  int d_in() const { return d_in_; }
  int rows_out() const { return rows_out_; }
  int d_out() const { return d_out_; }

 private:
  int rows_in_ = 0, d_in_ = 0, rows_out_ = 0, d_out_ = 0;
  Parameter* seq_mix_ = nullptr;   // [rows_out, rows_in]
  Parameter* chan_proj_ = nullptr; // [d_in, d_out]
};

/// f_v: raw video features [F, d_raw_v] -> z_v [L_v, d_model].
class VisionEncoder {
 public:
  VisionEncoder() = default;
  VisionEncoder(ParamStore& store, int frames, int d_raw, int l_v, int d_model,
                uint64_t seed)
      : enc_(store, "vision_encoder", frames, d_raw, l_v, d_model, seed) {}
  Tensor encode(const Tensor& raw_video) const { return enc_.encode(raw_video); }
  int token_len() const { return enc_.rows_out(); }

 private:
  FrozenEncoder enc_;
};

/// e_a: raw audio features [S, d_raw_a] -> features [T_a, d_a]. The output
/// geometry deliberately differs from the vision token grid (T_a != L_v,
/// d_a != d_model) so the adapter has real work to do.
class AudioEncoder {
 public:
  AudioEncoder() = default;
  AudioEncoder(ParamStore& store, int steps, int d_raw, int t_a, int d_a,
               uint64_t seed)
      : enc_(store, "audio_encoder", steps, d_raw, t_a, d_a, seed) {}
  Tensor encode(const Tensor& raw_audio) const { return enc_.encode(raw_audio); }
  int seq_len() const { return enc_.rows_out(); }
  int feat_dim() const { return enc_.d_out(); }

 private:
  FrozenEncoder enc_;
};

}  // namespace avemo

#include "avemo/adapter.hpp"

#include <cmath>

#include "avemo/rng.hpp"

namespace avemo {

namespace {
constexpr double kUnitScale = 0.02;
}

AudioAdapter AudioAdapter::init(ParamStore& store, const Shape& shape,
                                uint64_t seed, double scale, bool use_gelu,
                                const std::string& group) {
  if (scale <= 0.0) throw std::invalid_argument("AudioAdapter: scale must be > 0");
  AudioAdapter a;
  a.shape_ = shape;
  a.use_gelu_ = use_gelu;
  Rng rng(seed);
  auto mat = [&](int fan_in, std::vector<int> s) {
    double std = (scale / kUnitScale) / std::sqrt(static_cast<double>(fan_in));
    return rng.gaussian_tensor(std::move(s), std);
  };
  a.w_s1_ = &store.add(group + ".seq1.w", group, mat(shape.t_a, {shape.t_a, shape.h_seq()}));
  a.b_s1_ = &store.add(group + ".seq1.b", group, Tensor({shape.h_seq()}));
  a.w_s2_ = &store.add(group + ".seq2.w", group, mat(shape.h_seq(), {shape.h_seq(), shape.l_v}));
  a.b_s2_ = &store.add(group + ".seq2.b", group, Tensor({shape.l_v}));
  a.w_c1_ = &store.add(group + ".chan1.w", group, mat(shape.d_a, {shape.d_a, shape.h_ch()}));
  a.b_c1_ = &store.add(group + ".chan1.b", group, Tensor({shape.h_ch()}));
  a.w_c2_ = &store.add(group + ".chan2.w", group, mat(shape.h_ch(), {shape.h_ch(), shape.d_model}));
  a.b_c2_ = &store.add(group + ".chan2.b", group, Tensor({shape.d_model}));
  return a;
}

AudioAdapter AudioAdapter::attach(ParamStore& store, const Shape& shape,
                                  bool use_gelu, const std::string& group) {
  AudioAdapter a;
  a.shape_ = shape;
  a.use_gelu_ = use_gelu;
  a.w_s1_ = &store.get(group + ".seq1.w");
  a.b_s1_ = &store.get(group + ".seq1.b");
  a.w_s2_ = &store.get(group + ".seq2.w");
  a.b_s2_ = &store.get(group + ".seq2.b");
  a.w_c1_ = &store.get(group + ".chan1.w");
  a.b_c1_ = &store.get(group + ".chan1.b");
  a.w_c2_ = &store.get(group + ".chan2.w");
  a.b_c2_ = &store.get(group + ".chan2.b");
  return a;
}

Var AudioAdapter::adapt(ParamCtx& ctx, Var audio_feats) const {
  Tape& t = ctx.tape;
  const Tensor& X = audio_feats.val();
  if (X.rank() != 2 || X.rows() != shape_.t_a || X.cols() != shape_.d_a)
    throw std::invalid_argument("AudioAdapter: input shape " + X.shape_str());
  // sequence reduction: work on [d_a, T_a] so the FC layers act along time
  Var u = t.transpose(audio_feats);
  Var u1 = t.add_rowvec(t.matmul(u, ctx(*w_s1_)), ctx(*b_s1_));
  if (use_gelu_) u1 = t.gelu(u1);
  Var u2 = t.add_rowvec(t.matmul(u1, ctx(*w_s2_)), ctx(*b_s2_));
  Var y = t.transpose(u2);  // [L_v, d_a]
  // channel projection
  Var c1 = t.add_rowvec(t.matmul(y, ctx(*w_c1_)), ctx(*b_c1_));
  if (use_gelu_) c1 = t.gelu(c1);
  return t.add_rowvec(t.matmul(c1, ctx(*w_c2_)), ctx(*b_c2_));
}

Tensor AudioAdapter::adapt_value(const Tensor& audio_feats) const {
  Tape tape;
  ParamCtx ctx(tape);
  return adapt(ctx, tape.constant(audio_feats)).val();
}

}  // namespace avemo

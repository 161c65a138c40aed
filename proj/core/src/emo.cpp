#include "avemo/emo.hpp"

#include <cmath>

#include "avemo/rng.hpp"

namespace avemo {

Enhancer Enhancer::init(ParamStore& store, int d_model, uint64_t seed,
                        const std::string& group) {
  Enhancer e;
  e.d_ = d_model;
  Rng rng(seed);
  int h = 2 * d_model;
  double std = 1.0 / std::sqrt(static_cast<double>(d_model));
  e.w1_ = &store.add(group + ".w1", group, rng.gaussian_tensor({d_model, h}, std));
  // zero W2: the enhancer starts as the identity map
  e.w2_ = &store.add(group + ".w2", group, Tensor({h, d_model}));
  e.ln_g_ = &store.add(group + ".ln.gamma", group, Tensor::full({d_model}, 1.0));
  e.ln_b_ = &store.add(group + ".ln.beta", group, Tensor({d_model}));
  return e;
}

Enhancer Enhancer::attach(ParamStore& store, int d_model,
                          const std::string& group) {
  Enhancer e;
  e.d_ = d_model;
  e.w1_ = &store.get(group + ".w1");
  e.w2_ = &store.get(group + ".w2");
  e.ln_g_ = &store.get(group + ".ln.gamma");
  e.ln_b_ = &store.get(group + ".ln.beta");
  return e;
}

Var Enhancer::enhance(ParamCtx& ctx, Var tokens) const {
  Tape& t = ctx.tape;
  const Tensor& Z = tokens.val();
  if (Z.rank() != 2 || Z.cols() != d_)
    throw std::invalid_argument("enhance: token dim mismatch");
  Var h = t.layer_norm(tokens, ctx(*ln_g_), ctx(*ln_b_), 1e-5);
  Var r = t.matmul(t.gelu(t.matmul(h, ctx(*w1_))), ctx(*w2_));
  return t.add(tokens, r);
}

Supervisor Supervisor::init(ParamStore& store, int d_model, uint64_t seed,
                            const std::string& group) {
  Supervisor s;
  s.d_ = d_model;
  Rng rng(seed);
  int h = d_model;
  double std = 1.0 / std::sqrt(static_cast<double>(d_model));
  s.w1_ = &store.add(group + ".w1", group, rng.gaussian_tensor({d_model, h}, std));
  s.b1_ = &store.add(group + ".b1", group, Tensor({h}));
  s.w2_ = &store.add(group + ".w2", group,
                     rng.gaussian_tensor({h, 2}, std));
  s.b2_ = &store.add(group + ".b2", group, Tensor({2}));
  return s;
}

Supervisor Supervisor::attach(ParamStore& store, int d_model,
                              const std::string& group) {
  Supervisor s;
  s.d_ = d_model;
  s.w1_ = &store.get(group + ".w1");
  s.b1_ = &store.get(group + ".b1");
  s.w2_ = &store.get(group + ".w2");
  s.b2_ = &store.get(group + ".b2");
  return s;
}

Var Supervisor::predict_va(ParamCtx& ctx, Var tokens) const {
  Tape& t = ctx.tape;
  Var s = t.reshape(t.mean_pool(tokens), {1, d_});
  Var h = t.gelu(t.add_rowvec(t.matmul(s, ctx(*w1_)), ctx(*b1_)));
  Var y = t.add_rowvec(t.matmul(h, ctx(*w2_)), ctx(*b2_));
  return t.reshape(y, {2});  // linear head; labels live in [-1,1]
}

Var fuse(Tape& tape, Var z_a, Var z_v) {
  if (z_a.val().cols() != z_v.val().cols())
    throw std::invalid_argument("fuse: channel dim mismatch");
  std::vector<Var> parts = {z_a, z_v};
  return tape.concat_rows(parts);
}

Var emo_loss(Tape& tape, const std::map<Modality, Var>& preds,
             const ModalityLabelSet& labels) {
  std::vector<std::pair<Modality, const VALabel*>> want;
  if (labels.a) want.emplace_back(Modality::Audio, &*labels.a);
  if (labels.v) want.emplace_back(Modality::Video, &*labels.v);
  if (labels.av) want.emplace_back(Modality::AudioVisual, &*labels.av);
  if (want.empty()) return tape.constant(Tensor::scalar(0.0));
  std::optional<Var> acc;
  for (auto [m, y] : want) {
    auto it = preds.find(m);
    if (it == preds.end())
      throw std::invalid_argument("emo_loss: label present without prediction (" +
                                  modality_name(m) + ")");
    Var diff = tape.sub(it->second,
                        tape.constant(Tensor({2}, {y->valence, y->arousal})));
    Var sq = tape.sum_sq(diff);
    acc = acc ? tape.add(*acc, sq) : sq;
  }
  return tape.scale(*acc, 1.0 / static_cast<double>(want.size()));
}

Var total_loss(Tape& tape, std::optional<Var> lm_loss, std::optional<Var> emo,
               double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("total_loss: lambda < 0");
  std::optional<Var> out = lm_loss;
  if (emo && lambda > 0.0) {
    Var weighted = tape.scale(*emo, lambda);
    out = out ? tape.add(*out, weighted) : weighted;
  }
  if (!out) return tape.constant(Tensor::scalar(0.0));
  return *out;
}

}  // namespace avemo

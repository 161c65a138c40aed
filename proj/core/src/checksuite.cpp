#include "avemo/checksuite.hpp"

#include <functional>

#include "avemo/emo.hpp"
#include "avemo/gradcheck.hpp"
#include "avemo/train.hpp"

namespace avemo {

namespace {

// Fixed non-uniform projection weights so cancellation can't hide errors.
Tensor ramp(const std::vector<int>& shape) {
  Tensor t(shape);
  for (size_t i = 0; i < t.data.size(); ++i)
    t.data[i] = 0.3 + 0.1 * static_cast<double>(i % 17) -
                0.05 * static_cast<double>(i % 5);
  return t;
}

Var proj(Tape& t, Var y) { return t.sum(t.mul(y, t.constant(ramp(y.val().shape)))); }

using LossFn = std::function<Var(Tape&, const std::vector<Var>&)>;

GradCheckEntry check(const std::string& name, std::vector<Tensor> inputs,
                     const LossFn& loss_fn) {
  std::vector<Tensor> xs = std::move(inputs);
  std::vector<Tensor> analytic;
  auto run = [&](std::vector<Tensor>* grads) {
    Tape t;
    std::vector<Var> vs;
    vs.reserve(xs.size());
    for (Tensor& x : xs) vs.push_back(t.leaf(x, true));
    Var l = loss_fn(t, vs);
    double v = l.val().item();
    if (grads) {
      t.backward(l);
      grads->clear();
      for (Var vv : vs)
        grads->push_back(t.has_grad(vv) ? t.grad(vv) : Tensor(vv.val().shape));
    }
    return v;
  };
  run(&analytic);
  std::vector<Tensor*> ptrs;
  for (Tensor& x : xs) ptrs.push_back(&x);
  double err = grad_check([&] { return run(nullptr); }, ptrs, analytic);
  return {name, err};
}

}  // namespace

std::vector<GradCheckEntry> gradcheck_ops() {
  Rng rng(0xC0FFEE);
  auto g = [&](std::vector<int> shape) { return rng.gaussian_tensor(shape, 1.0); };

  std::vector<GradCheckEntry> out;
  auto a34 = g({3, 4}), b34 = g({3, 4});

  out.push_back(check("add", {a34, b34}, [](Tape& t, const std::vector<Var>& v) {
    return proj(t, t.add(v[0], v[1]));
  }));
  out.push_back(check("sub", {a34, b34}, [](Tape& t, const std::vector<Var>& v) {
    return proj(t, t.sub(v[0], v[1]));
  }));
  out.push_back(check("mul", {a34, b34}, [](Tape& t, const std::vector<Var>& v) {
    return proj(t, t.mul(v[0], v[1]));
  }));
  out.push_back(check("scale", {a34}, [](Tape& t, const std::vector<Var>& v) {
    return proj(t, t.scale(v[0], 1.7));
  }));
  Tensor c34 = g({3, 4});
  out.push_back(check("add_const", {a34}, [c34](Tape& t, const std::vector<Var>& v) {
    return proj(t, t.add_const(v[0], c34));
  }));
  out.push_back(check("add_rowvec", {a34, g({4})},
                      [](Tape& t, const std::vector<Var>& v) {
    return proj(t, t.add_rowvec(v[0], v[1]));
  }));
  out.push_back(check("transpose", {a34}, [](Tape& t, const std::vector<Var>& v) {
    return proj(t, t.transpose(v[0]));
  }));
  out.push_back(check("matmul", {a34, g({4, 2})},
                      [](Tape& t, const std::vector<Var>& v) {
    return proj(t, t.matmul(v[0], v[1]));
  }));
  out.push_back(check("slice_cols", {a34}, [](Tape& t, const std::vector<Var>& v) {
    return proj(t, t.slice_cols(v[0], 1, 3));
  }));
  out.push_back(check("slice_rows", {a34}, [](Tape& t, const std::vector<Var>& v) {
    return proj(t, t.slice_rows(v[0], 0, 2));
  }));
  out.push_back(check("concat_cols", {g({3, 2}), g({3, 3})},
                      [](Tape& t, const std::vector<Var>& v) {
    std::vector<Var> parts = {v[0], v[1]};
    return proj(t, t.concat_cols(parts));
  }));
  out.push_back(check("concat_rows", {g({2, 4}), g({3, 4})},
                      [](Tape& t, const std::vector<Var>& v) {
    std::vector<Var> parts = {v[0], v[1]};
    return proj(t, t.concat_rows(parts));
  }));
  // repeated index exercises gradient accumulation into one row
  out.push_back(check("gather_rows", {g({5, 3})},
                      [](Tape& t, const std::vector<Var>& v) {
    return proj(t, t.gather_rows(v[0], {0, 2, 2, 4}));
  }));
  out.push_back(check("reshape", {a34}, [](Tape& t, const std::vector<Var>& v) {
    return proj(t, t.reshape(v[0], {2, 6}));
  }));
  out.push_back(check("gelu", {a34}, [](Tape& t, const std::vector<Var>& v) {
    return proj(t, t.gelu(v[0]));
  }));
  out.push_back(check("layer_norm", {a34, g({4}), g({4})},
                      [](Tape& t, const std::vector<Var>& v) {
    return proj(t, t.layer_norm(v[0], v[1], v[2], 1e-5));
  }));
  out.push_back(check("softmax_rows", {a34}, [](Tape& t, const std::vector<Var>& v) {
    return proj(t, t.softmax_rows(v[0], 0.7));
  }));
  out.push_back(check("rope", {g({4, 8})}, [](Tape& t, const std::vector<Var>& v) {
    return proj(t, t.rope(v[0], {0, 1, 2, 3}, 2, 100.0));
  }));
  out.push_back(check("sum", {a34}, [](Tape& t, const std::vector<Var>& v) {
    return t.sum(v[0]);
  }));
  out.push_back(check("mean_pool", {a34}, [](Tape& t, const std::vector<Var>& v) {
    return proj(t, t.mean_pool(v[0]));
  }));
  out.push_back(check("sum_sq", {a34}, [](Tape& t, const std::vector<Var>& v) {
    return t.sum_sq(v[0]);
  }));
  Tensor target({5});
  {
    double z = 0;
    for (int i = 0; i < 5; ++i) z += target.at(i) = 0.5 + i;
    for (auto& x : target.data) x /= z;
  }
  out.push_back(check("soft_cross_entropy", {g({5})},
                      [target](Tape& t, const std::vector<Var>& v) {
    return t.soft_cross_entropy(target, v[0], 1.3);
  }));
  out.push_back(check("cross_entropy_rows", {g({3, 6})},
                      [](Tape& t, const std::vector<Var>& v) {
    return t.cross_entropy_rows(v[0], {1, 4, 0});
  }));
  return out;
}

GradCheckEntry gradcheck_stage2_composite() {
  WorldConfig wc;
  wc.latent_dim = 4;
  wc.frames = 3;
  wc.d_raw_v = 6;
  wc.audio_steps = 4;
  wc.d_raw_a = 6;
  World world = World::generate(wc, 5);

  BundleConfig bc = BundleConfig::defaults(wc);
  bc.lm.d_model = 16;
  bc.lm.n_layers = 1;
  bc.lm.n_heads = 2;
  bc.l_v = 4;
  bc.t_a = 5;
  bc.d_a = 12;
  bc.lora_rank = 2;
  bc.has_lora = bc.has_enhancer = bc.has_supervisor = true;
  bc.seed = 9;
  ModelBundle bundle = ModelBundle::build(bc);
  set_trainable(bundle.store(), {"enhancer", "supervisor", "lora"});

  // Nudge the trainable parameters off their zero inits so no gradient path
  // is vacuously zero (LoRA B, enhancer W2).
  Rng noise(0xBADA55);
  std::vector<Parameter*> trainable;
  for (const char* grp : {"enhancer", "supervisor", "lora"})
    for (Parameter* p : bundle.store().in_group(grp)) {
      for (double& x : p->value.data) x += 0.05 * noise.gaussian();
      trainable.push_back(p);
    }

  Rng rng(3);
  ClipSample clip = world.emotion_clip(rng, 0);
  World::LabelSet ls =
      world.labels_for(clip.ua_val, clip.ua_aro, clip.uv_val, clip.uv_aro);
  clip.labels.a = ls.a;
  clip.labels.v = ls.v;
  clip.labels.av = ls.av;

  auto eval_loss = [&](ParamCtx* out_ctx, Var* out_loss) {
    Tape& tape = out_ctx->tape;
    ParamCtx& ctx = *out_ctx;
    Var lm = clip_lm_loss(bundle, ctx, clip);
    std::map<Modality, Var> preds;
    for (Modality m :
         {Modality::Audio, Modality::Video, Modality::AudioVisual}) {
      Var z = bundle.tokens(ctx, m, &clip.video, &clip.audio);
      preds.emplace(m, bundle.supervisor().predict_va(ctx, z));
    }
    Var emo = emo_loss(tape, preds, clip.labels);
    *out_loss = total_loss(tape, lm, emo, 1.0);
  };

  std::vector<Tensor> analytic;
  {
    Tape tape;
    ParamCtx ctx(tape);
    Var loss;
    eval_loss(&ctx, &loss);
    tape.backward(loss);
    for (Parameter* p : trainable) analytic.push_back(ctx.grad_of(*p));
  }
  std::vector<Tensor*> ptrs;
  for (Parameter* p : trainable) ptrs.push_back(&p->value);
  double err = grad_check(
      [&] {
        Tape tape;
        ParamCtx ctx(tape);
        Var loss;
        eval_loss(&ctx, &loss);
        return loss.val().item();
      },
      ptrs, analytic);
  return {"stage2_composite", err};
}

}  // namespace avemo

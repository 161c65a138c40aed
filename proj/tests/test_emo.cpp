#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "avemo/bundle.hpp"
#include "avemo/emo.hpp"
#include "avemo/rng.hpp"
#include "avemo/train.hpp"
#include "avemo/vocab.hpp"

using namespace avemo;

namespace {

BundleConfig full_config() {
  WorldConfig wc;
  BundleConfig bc = BundleConfig::defaults(wc);
  bc.seed = 5;
  bc.has_lora = true;
  bc.has_enhancer = true;
  bc.has_supervisor = true;
  return bc;
}

}  // namespace

TEST_CASE("enhancer with W2 = 0 is the identity, bit-exact") {
  ParamStore store;
  Enhancer e = Enhancer::init(store, 16, 3);
  // W2 starts at zero by construction; assert, then exercise
  for (double v : store.get("enhancer.w2").value.data) REQUIRE(v == 0.0);
  Rng rng(4);
  Tensor z = rng.gaussian_tensor({5, 16}, 1.3);
  Tape tape;
  ParamCtx ctx(tape);
  Tensor out = e.enhance(ctx, tape.constant(z)).val();
  CHECK(out.data == z.data);  // residual branch contributes exact zeros
}

TEST_CASE("enhancer is one shared parameter group, pathway-count independent") {
  ModelBundle b = ModelBundle::build(full_config());
  long long n = b.store().numel_in_group("enhancer");
  CHECK(n > 0);
  // run all three pathways; no new parameters appear
  WorldConfig wc;
  World world = World::generate(wc, 1);
  Rng rng(2);
  ClipSample c = world.emotion_clip(rng, 0);
  size_t before = b.store().all().size();
  Tape tape;
  ParamCtx ctx(tape);
  b.tokens(ctx, Modality::Audio, nullptr, &c.audio);
  b.tokens(ctx, Modality::Video, &c.video, nullptr);
  b.tokens(ctx, Modality::AudioVisual, &c.video, &c.audio);
  CHECK(b.store().all().size() == before);
  CHECK(b.store().numel_in_group("enhancer") == n);
}

TEST_CASE("enhancer rejects wrong token dim") {
  ParamStore store;
  Enhancer e = Enhancer::init(store, 16, 3);
  Tape tape;
  ParamCtx ctx(tape);
  CHECK_THROWS_AS(e.enhance(ctx, tape.constant(Tensor({4, 8}))),
                  std::invalid_argument);
}

TEST_CASE("supervisor: 2 outputs, permutation invariant, constant rows") {
  ParamStore store;
  Supervisor s = Supervisor::init(store, 16, 7);
  Rng rng(5);
  Tensor z = rng.gaussian_tensor({6, 16}, 1.0);
  Tensor zp({6, 16});
  int perm[6] = {4, 2, 0, 5, 1, 3};
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 16; ++j) zp.at(i, j) = z.at(perm[i], j);

  Tape tape;
  ParamCtx ctx(tape);
  Tensor y = s.predict_va(ctx, tape.constant(z)).val();
  Tensor yp = s.predict_va(ctx, tape.constant(zp)).val();
  REQUIRE(y.numel() == 2);
  CHECK(max_abs_diff(y, yp) < 1e-12);

  // constant tokens pool to themselves: prediction = head(c)
  Tensor zc({3, 16});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 16; ++j) zc.at(i, j) = z.at(0, j);
  Tensor z1({1, 16});
  for (int j = 0; j < 16; ++j) z1.at(0, j) = z.at(0, j);
  Tensor yc = s.predict_va(ctx, tape.constant(zc)).val();
  Tensor y1 = s.predict_va(ctx, tape.constant(z1)).val();
  CHECK(max_abs_diff(yc, y1) < 1e-12);
}

TEST_CASE("fuse concatenates audio first and preserves rows") {
  Rng rng(1);
  Tensor za = rng.gaussian_tensor({3, 4}, 1.0);
  Tensor zv = rng.gaussian_tensor({5, 4}, 1.0);
  Tape tape;
  Tensor out = fuse(tape, tape.constant(za), tape.constant(zv)).val();
  REQUIRE(out.rows() == 8);
  REQUIRE(out.cols() == 4);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) CHECK(out.at(i, j) == za.at(i, j));
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 4; ++j) CHECK(out.at(3 + i, j) == zv.at(i, j));
}

TEST_CASE("masked emotion loss: pinned cases") {
  Tape tape;
  auto pred = [&](double v, double a) {
    return tape.constant(Tensor({2}, {v, a}));
  };

  ModalityLabelSet none;
  std::map<Modality, Var> preds{{Modality::Audio, pred(0.1, 0.2)}};
  CHECK(emo_loss(tape, preds, none).val().item() == 0.0);

  // single pathway, error (0.3, -0.4) -> 0.25
  ModalityLabelSet one;
  one.av = VALabel{0.5, 0.1};
  std::map<Modality, Var> pav{{Modality::AudioVisual, pred(0.8, -0.3)}};
  CHECK(emo_loss(tape, pav, one).val().item() ==
        doctest::Approx(0.25).epsilon(1e-12));

  // perfect predictions -> 0
  ModalityLabelSet full;
  full.a = VALabel{0.2, -0.1};
  full.v = VALabel{-0.3, 0.4};
  full.av = VALabel{0.0, 0.5};
  std::map<Modality, Var> pfull{{Modality::Audio, pred(0.2, -0.1)},
                                {Modality::Video, pred(-0.3, 0.4)},
                                {Modality::AudioVisual, pred(0.0, 0.5)}};
  CHECK(emo_loss(tape, pfull, full).val().item() ==
        doctest::Approx(0.0).epsilon(1e-15));

  // full M is the mean of the three singleton losses
  std::map<Modality, Var> poff{{Modality::Audio, pred(0.4, 0.1)},
                               {Modality::Video, pred(0.0, 0.0)},
                               {Modality::AudioVisual, pred(-0.5, 0.2)}};
  double lf = emo_loss(tape, poff, full).val().item();
  double ls = 0.0;
  for (auto m : {Modality::Audio, Modality::Video, Modality::AudioVisual}) {
    ModalityLabelSet single;
    if (m == Modality::Audio) single.a = full.a;
    if (m == Modality::Video) single.v = full.v;
    if (m == Modality::AudioVisual) single.av = full.av;
    ls += emo_loss(tape, poff, single).val().item();
  }
  CHECK(lf == doctest::Approx(ls / 3.0).epsilon(1e-12));

  // label without a prediction is an error
  std::map<Modality, Var> missing{{Modality::Audio, pred(0.0, 0.0)}};
  CHECK_THROWS_AS(emo_loss(tape, missing, full), std::invalid_argument);
}

TEST_CASE("total_loss composes L_LM + lambda * L_emo") {
  Tape tape;
  Var lm = tape.constant(Tensor::scalar(1.5));
  Var emo = tape.constant(Tensor::scalar(0.4));
  CHECK(total_loss(tape, lm, emo, 2.0).val().item() ==
        doctest::Approx(1.5 + 2.0 * 0.4).epsilon(1e-14));
  CHECK(total_loss(tape, lm, std::nullopt, 1.0).val().item() ==
        doctest::Approx(1.5).epsilon(1e-14));
  CHECK_THROWS_AS(total_loss(tape, lm, emo, -1.0), std::invalid_argument);
}

TEST_CASE("branch gradient decomposition on a fully labeled sample") {
  ModelBundle b = ModelBundle::build(full_config());
  WorldConfig wc;
  World world = World::generate(wc, 1);
  Rng rng(6);
  ClipSample c = world.emotion_clip(rng, 0);
  auto ls = world.labels_for(c.ua_val, c.ua_aro, c.uv_val, c.uv_aro);
  c.labels.a = ls.a;
  c.labels.v = ls.v;
  c.labels.av = ls.av;

  BranchGradReport r = branch_grad_decomposition(b, c);
  CHECK(r.max_abs_err_enhancer < 1e-8);
  CHECK(r.max_abs_err_supervisor < 1e-8);
  CHECK(r.adapter_grad_norm_v_only == 0.0);
}

TEST_CASE("lambda = 0 leaves the supervisor trajectory constant") {
  ModelBundle b = ModelBundle::build(full_config());
  WorldConfig wc;
  World world = World::generate(wc, 1);
  std::vector<double> before;
  for (Parameter* p : b.store().in_group("supervisor"))
    before.insert(before.end(), p->value.data.begin(), p->value.data.end());

  Stage2Config cfg;
  cfg.steps = 10;
  cfg.lambda = 0.0;
  cfg.n_emotion = 32;
  cfg.n_instruction = 4;
  cfg.n_val = 8;
  cfg.eval_every = 10;
  train_stage2(b, world, cfg);

  std::vector<double> after;
  for (Parameter* p : b.store().in_group("supervisor"))
    after.insert(after.end(), p->value.data.begin(), p->value.data.end());
  CHECK(before == after);  // no gradient path, and decay is gradient-gated
}

#include "avemo/train.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <stdexcept>

#include "avemo/distill.hpp"

namespace avemo {

namespace {

std::string fmt(double v, const char* spec = "%.6f") {
  char buf[48];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

void apply_step(AdamW& opt, ParamStore& store, ParamCtx& ctx,
                const std::vector<std::string>& groups) {
  // Only parameters on the loss's gradient path take a step; otherwise
  // decoupled decay would drift components that have no gradient path
  // (e.g. the supervisor when lambda = 0).
  std::vector<std::pair<Parameter*, Tensor>> grads;
  for (const std::string& g : groups)
    for (Parameter* p : store.in_group(g)) {
      if (p->frozen) continue;
      auto it = ctx.uses.find(p);
      if (it == ctx.uses.end() || !ctx.tape.has_grad(it->second)) continue;
      grads.emplace_back(p, ctx.tape.grad(it->second));
    }
  opt.step(grads);
}

AdamWConfig opt_config(double lr) {
  AdamWConfig c;
  c.lr = lr;
  return c;
}

void check_loss(double v, const char* stage) {
  if (!std::isfinite(v))
    throw std::runtime_error(std::string(stage) + ": non-finite loss, aborting");
}

Var predict_pathway(const ModelBundle& bundle, ParamCtx& ctx, Modality m,
                    const ClipSample& clip) {
  Var z = bundle.tokens(ctx, m, &clip.video, &clip.audio);
  return bundle.supervisor().predict_va(ctx, z);
}

VALabel label_of(const World::LabelSet& ls, Modality m) {
  switch (m) {
    case Modality::Audio: return ls.a;
    case Modality::Video: return ls.v;
    case Modality::AudioVisual: return ls.av;
  }
  throw std::logic_error("label_of: bad modality");
}

}  // namespace

void set_trainable(ParamStore& store, const std::vector<std::string>& groups) {
  store.freeze_all();
  for (const std::string& g : groups) store.freeze_group(g, false);
  store.require_trainable_groups(groups);
}

Var clip_lm_loss(const ModelBundle& bundle, ParamCtx& ctx,
                 const ClipSample& clip) {
  if (clip.answer.empty())
    throw std::invalid_argument("clip_lm_loss: clip has no answer tokens");
  Modality m = clip.instr_modality;
  Var z = bundle.tokens(ctx, m, &clip.video, &clip.audio);
  PromptLayout lay = bundle.make_layout(m, clip.instruction, clip.answer);
  auto logits = bundle.lm().response_logits(ctx, lay, z);
  return ctx.tape.cross_entropy_rows(*logits, clip.answer);
}

double content_accuracy(const ModelBundle& bundle,
                        const std::vector<BenchmarkItem>& items, Modality m) {
  EvalReport r = evaluate(bundle, items, m);
  std::string oc = modality_name(m) + "/OC";
  std::string sc = modality_name(m) + "/SC";
  if (!r.cell_acc.count(oc) || !r.cell_acc.count(sc))
    throw std::invalid_argument("content_accuracy: probe lacks content cells");
  return 0.5 * (r.cell_acc.at(oc) + r.cell_acc.at(sc));
}

// ---- Stage 0 ----

double pretrain_teacher(ModelBundle& bundle, const World& world,
                        const PretrainConfig& cfg, std::ostream* log) {
  set_trainable(bundle.store(), {"backbone"});
  AdamW opt(opt_config(cfg.lr));
  Rng data_rng(Rng::derive(cfg.seed, 0xDA7A));
  auto gate = world.build_benchmark(cfg.gate_items, Rng::derive(cfg.seed, 0xE7A1));
  long long next_id = 0;
  double acc = 0.0;
  for (int step = 1; step <= cfg.steps; ++step) {
    Tape tape;
    ParamCtx ctx(tape);
    std::optional<Var> total;
    for (int b = 0; b < cfg.batch; ++b) {
      ClipSample clip = world.paired_clip(data_rng, next_id++);
      Var l = clip_lm_loss(bundle, ctx, clip);
      total = total ? tape.add(*total, l) : l;
    }
    Var loss = tape.scale(*total, 1.0 / cfg.batch);
    check_loss(loss.val().item(), "pretrain_teacher");
    tape.backward(loss);
    apply_step(opt, bundle.store(), ctx, {"backbone"});
    if (step % cfg.eval_every == 0 || step == cfg.steps) {
      acc = content_accuracy(bundle, gate, Modality::Video);
      if (log)
        *log << "pretrain step " << step << " loss " << fmt(loss.val().item())
             << " video_acc " << fmt(acc, "%.4f") << "\n";
      if (acc >= cfg.gate_acc) {
        bundle.store().freeze_group("backbone");
        return acc;
      }
    }
  }
  throw std::runtime_error(
      "pretrain_teacher: step budget exhausted with held-out video accuracy " +
      fmt(acc, "%.4f") + " below the gate " + fmt(cfg.gate_acc, "%.2f") +
      "; raise steps or lr");
}

// ---- Stage 1 ----

Stage1Result train_stage1(ModelBundle& bundle, const World& world,
                          const Stage1Config& cfg, std::ostream* metrics_csv) {
  Rng pool_rng(Rng::derive(cfg.seed, 0x57A6E1));
  std::vector<ClipSample> pool;
  pool.reserve(cfg.n_train);
  for (int i = 0; i < cfg.n_train; ++i)
    pool.push_back(world.paired_clip(pool_rng, i));
  return train_stage1(bundle, world, std::move(pool), cfg, metrics_csv);
}

Stage1Result train_stage1(ModelBundle& bundle, const World& world,
                          std::vector<ClipSample> pool, const Stage1Config& cfg,
                          std::ostream* metrics_csv) {
  if (cfg.temperature <= 0.0)
    throw std::invalid_argument("train_stage1: temperature must be > 0");
  if (!bundle.has_adapter())
    throw std::invalid_argument("train_stage1: bundle has no audio adapter");
  if (pool.empty()) throw std::invalid_argument("train_stage1: empty dataset");
  set_trainable(bundle.store(), {"audio_adapter"});

  auto probe = world.build_benchmark(cfg.probe_items, Rng::derive(cfg.seed, 0xBE7C));

  // Teacher work is memoized per clip: one rollout and one teacher-forced
  // logit pass each, computed lazily.
  int n = static_cast<int>(pool.size());
  std::vector<std::optional<std::vector<int>>> rollouts(n);
  std::vector<std::optional<Tensor>> teacher_logits(n), z_v_cache(n);
  auto prepare = [&](int i) {
    if (rollouts[i]) return;
    rollouts[i] = teacher_rollout(bundle, pool[i].video, pool[i].instruction,
                                  cfg.rollout_max_len);
    if (rollouts[i]->empty()) return;  // EOS-first rollout: skip this clip
    std::vector<int> resp = *rollouts[i];
    resp.push_back(tok::kEos);
    Tape tt;
    ParamCtx tctx(tt);
    Var zv = bundle.tokens(tctx, Modality::Video, &pool[i].video, nullptr);
    z_v_cache[i] = zv.val();
    PromptLayout lay = bundle.make_layout(Modality::Video, pool[i].instruction, resp);
    teacher_logits[i] = bundle.lm().response_logits(tctx, lay, zv)->val();
  };

  AdamW opt(opt_config(cfg.lr));
  Rng batch_rng(Rng::derive(cfg.seed, 0xBA7C4));
  const char* mode = cfg.features_mode ? "features" : "logits";
  if (metrics_csv) *metrics_csv << "step,loss,kl,student_acc,mode,seed\n";

  Stage1Result res;
  double last_acc = -1.0;
  for (int step = 1; step <= cfg.steps; ++step) {
    Tape tape;
    ParamCtx ctx(tape);
    std::optional<Var> total;
    int used = 0;
    double kl_batch = 0.0;
    for (int attempts = 0; used < cfg.batch && attempts < 4 * cfg.batch;
         ++attempts) {
      int i = batch_rng.uniform_int(n);
      prepare(i);
      if (rollouts[i]->empty()) continue;
      std::vector<int> resp = *rollouts[i];
      resp.push_back(tok::kEos);
      Var za = bundle.tokens(ctx, Modality::Audio, nullptr, &pool[i].audio);
      Var l;
      if (cfg.features_mode) {
        l = feature_align_loss(tape, za, *z_v_cache[i]);
      } else {
        PromptLayout lay = bundle.make_layout(Modality::Audio, pool[i].instruction, resp);
        Var sl = *bundle.lm().response_logits(ctx, lay, za);
        l = vg_loss(tape, *teacher_logits[i], sl, cfg.temperature);
        kl_batch += vg_kl(*teacher_logits[i], sl.val(), cfg.temperature);
      }
      total = total ? tape.add(*total, l) : l;
      ++used;
    }
    if (used == 0)
      throw std::runtime_error("train_stage1: every sampled rollout was empty");
    Var loss = tape.scale(*total, 1.0 / used);
    res.final_loss = loss.val().item();
    check_loss(res.final_loss, "train_stage1");
    tape.backward(loss);
    apply_step(opt, bundle.store(), ctx, {"audio_adapter"});

    if (step % cfg.eval_every == 0 || step == cfg.steps)
      last_acc = content_accuracy(bundle, probe, Modality::Audio);
    if (metrics_csv) {
      *metrics_csv << step << "," << fmt(res.final_loss) << ",";
      if (!cfg.features_mode) *metrics_csv << fmt(kl_batch / used);
      *metrics_csv << ",";
      if (last_acc >= 0.0) *metrics_csv << fmt(last_acc, "%.4f");
      *metrics_csv << "," << mode << "," << cfg.seed << "\n";
    }
    res.steps_run = step;
  }

  // Final mean tempered KL over the whole pool, the convergence gate metric.
  double kl_sum = 0.0;
  int kl_n = 0;
  for (int i = 0; i < n; ++i) {
    prepare(i);
    if (rollouts[i]->empty()) continue;
    std::vector<int> resp = *rollouts[i];
    resp.push_back(tok::kEos);
    Tape tape;
    ParamCtx ctx(tape);
    Var za = bundle.tokens(ctx, Modality::Audio, nullptr, &pool[i].audio);
    PromptLayout lay = bundle.make_layout(Modality::Audio, pool[i].instruction, resp);
    Var sl = *bundle.lm().response_logits(ctx, lay, za);
    kl_sum += vg_kl(*teacher_logits[i], sl.val(), cfg.temperature);
    ++kl_n;
  }
  res.final_kl = kl_n ? kl_sum / kl_n : 0.0;
  res.student_acc = last_acc >= 0.0 ? last_acc
                                    : content_accuracy(bundle, probe, Modality::Audio);
  res.teacher_acc = content_accuracy(bundle, probe, Modality::Video);
  return res;
}

// ---- Stage 2 ----

double va_mse(const ModelBundle& bundle, const World& world,
              const std::vector<ClipSample>& clips, Modality m) {
  if (!bundle.has_supervisor())
    return std::numeric_limits<double>::quiet_NaN();
  if (clips.empty()) throw std::invalid_argument("va_mse: no clips");
  double se = 0.0;
  for (const ClipSample& c : clips) {
    Tape tape;
    ParamCtx ctx(tape);
    Var pred = predict_pathway(bundle, ctx, m, c);
    World::LabelSet ls = world.labels_for(c.ua_val, c.ua_aro, c.uv_val, c.uv_aro);
    VALabel y = label_of(ls, m);
    double dv = pred.val().at(0) - y.valence;
    double da = pred.val().at(1) - y.arousal;
    se += dv * dv + da * da;
  }
  return se / (2.0 * clips.size());
}

Stage2Result train_stage2(ModelBundle& bundle, const World& world,
                          const Stage2Config& cfg, std::ostream* metrics_csv) {
  Rng data_rng(Rng::derive(cfg.seed, 0xDA7A2));
  std::vector<ClipSample> pool;
  long long id = 0;
  for (int i = 0; i < cfg.n_emotion; ++i)
    pool.push_back(world.emotion_clip(data_rng, id++));
  for (int i = 0; i < cfg.n_instruction; ++i)
    pool.push_back(world.instruction_clip(data_rng, id++));
  return train_stage2(bundle, world, std::move(pool), cfg, metrics_csv);
}

Stage2Result train_stage2(ModelBundle& bundle, const World& world,
                          std::vector<ClipSample> pool, const Stage2Config& cfg,
                          std::ostream* metrics_csv) {
  if (!bundle.has_adapter())
    throw std::invalid_argument("train_stage2: requires the aligned audio adapter");
  if (pool.empty()) throw std::invalid_argument("train_stage2: empty dataset");
  std::vector<std::string> groups;
  if (bundle.has_enhancer()) groups.push_back("enhancer");
  if (bundle.has_supervisor()) groups.push_back("supervisor");
  if (bundle.config().has_lora) groups.push_back("lora");
  if (groups.empty())
    throw std::invalid_argument("train_stage2: no trainable component enabled");
  set_trainable(bundle.store(), groups);
  double lambda = bundle.has_supervisor() ? cfg.lambda : 0.0;
  if (cfg.lambda < 0.0) throw std::invalid_argument("train_stage2: lambda < 0");

  Rng val_rng(Rng::derive(cfg.seed, 0x7A1));
  std::vector<ClipSample> val;
  for (int i = 0; i < cfg.n_val; ++i)
    val.push_back(world.emotion_clip(val_rng, 1000000 + i));

  auto validate = [&](double& a, double& v, double& av) {
    a = va_mse(bundle, world, val, Modality::Audio);
    v = va_mse(bundle, world, val, Modality::Video);
    av = va_mse(bundle, world, val, Modality::AudioVisual);
  };

  Stage2Result res;
  validate(res.val_mse_a0, res.val_mse_v0, res.val_mse_av0);
  AdamW opt(opt_config(cfg.lr));
  Rng batch_rng(Rng::derive(cfg.seed, 0xBA7C42));
  if (metrics_csv)
    *metrics_csv << "step,lm_loss,emo_loss_a,emo_loss_v,emo_loss_av,"
                    "val_mse_a,val_mse_v,val_mse_av\n";

  int pool_n = static_cast<int>(pool.size());
  for (int step = 1; step <= cfg.steps; ++step) {
    Tape tape;
    ParamCtx ctx(tape);
    std::optional<Var> lm_total, emo_total;
    double se[3] = {0, 0, 0};
    int cnt[3] = {0, 0, 0};
    for (int b = 0; b < cfg.batch; ++b) {
      const ClipSample& c = pool[batch_rng.uniform_int(pool_n)];
      Var lml = clip_lm_loss(bundle, ctx, c);
      lm_total = lm_total ? tape.add(*lm_total, lml) : lml;
      if (lambda <= 0.0 || c.labels.count() == 0) continue;
      std::map<Modality, Var> preds;
      for (Modality m : {Modality::Audio, Modality::Video, Modality::AudioVisual}) {
        const auto& lab = m == Modality::Audio  ? c.labels.a
                          : m == Modality::Video ? c.labels.v
                                                 : c.labels.av;
        if (!lab) continue;
        Var p = predict_pathway(bundle, ctx, m, c);
        preds.emplace(m, p);
        const VALabel& y = *lab;
        double dv = p.val().at(0) - y.valence, da = p.val().at(1) - y.arousal;
        int k = m == Modality::Audio ? 0 : m == Modality::Video ? 1 : 2;
        se[k] += dv * dv + da * da;
        cnt[k] += 1;
      }
      Var el = emo_loss(tape, preds, c.labels);
      emo_total = emo_total ? tape.add(*emo_total, el) : el;
    }
    Var lm_mean = tape.scale(*lm_total, 1.0 / cfg.batch);
    Var loss = emo_total
                   ? tape.add(lm_mean, tape.scale(*emo_total, lambda / cfg.batch))
                   : lm_mean;
    res.final_lm_loss = lm_mean.val().item();
    check_loss(loss.val().item(), "train_stage2");
    tape.backward(loss);
    apply_step(opt, bundle.store(), ctx, groups);

    bool eval_now = step % cfg.eval_every == 0 || step == cfg.steps;
    if (eval_now) validate(res.val_mse_a, res.val_mse_v, res.val_mse_av);
    if (metrics_csv) {
      *metrics_csv << step << "," << fmt(res.final_lm_loss);
      for (int k = 0; k < 3; ++k) {
        *metrics_csv << ",";
        if (cnt[k]) *metrics_csv << fmt(se[k] / (2.0 * cnt[k]));
      }
      for (double v : {res.val_mse_a, res.val_mse_v, res.val_mse_av}) {
        *metrics_csv << ",";
        if (eval_now && std::isfinite(v)) *metrics_csv << fmt(v);
      }
      *metrics_csv << "\n";
    }
    res.steps_run = step;
  }
  validate(res.val_mse_a, res.val_mse_v, res.val_mse_av);
  return res;
}

ModelBundle derive_bundle(const ModelBundle& src, const BundleConfig& cfg) {
  ModelBundle b = ModelBundle::build(cfg);
  for (const Parameter* p : src.store().all()) {
    if (!b.store().contains(p->name)) continue;
    Parameter& q = b.store().get(p->name);
    if (q.value.shape != p->value.shape)
      throw std::invalid_argument("derive_bundle: shape mismatch for " + p->name);
    q.value = p->value;
  }
  return b;
}

// ---- gradient bookkeeping checks ----

BranchGradReport branch_grad_decomposition(ModelBundle& bundle,
                                           const ClipSample& sample) {
  if (!bundle.has_enhancer() || !bundle.has_supervisor() || !bundle.has_adapter())
    throw std::logic_error("branch_grad_decomposition: needs full stage-2 bundle");
  if (sample.labels.count() != 3)
    throw std::invalid_argument("branch_grad_decomposition: needs full label set");

  ParamStore& store = bundle.store();
  // Temporarily unfreeze so the zero-gradient claims are structural, not
  // bookkeeping side effects; restore afterwards.
  std::map<Parameter*, bool> saved;
  for (const char* g : {"enhancer", "supervisor", "audio_adapter"})
    for (Parameter* p : store.in_group(g)) {
      saved[p] = p->frozen;
      p->frozen = false;
    }

  auto grads_for = [&](const ModalityLabelSet& labels) {
    Tape tape;
    ParamCtx ctx(tape);
    std::map<Modality, Var> preds;
    if (labels.a)
      preds.emplace(Modality::Audio,
                    predict_pathway(bundle, ctx, Modality::Audio, sample));
    if (labels.v)
      preds.emplace(Modality::Video,
                    predict_pathway(bundle, ctx, Modality::Video, sample));
    if (labels.av)
      preds.emplace(Modality::AudioVisual,
                    predict_pathway(bundle, ctx, Modality::AudioVisual, sample));
    Var l = emo_loss(tape, preds, labels);
    tape.backward(l);
    std::map<Parameter*, Tensor> out;
    for (const char* g : {"enhancer", "supervisor", "audio_adapter"})
      for (Parameter* p : store.in_group(g)) out.emplace(p, ctx.grad_of(*p));
    return out;
  };

  ModalityLabelSet only_a, only_v, only_av;
  only_a.a = sample.labels.a;
  only_v.v = sample.labels.v;
  only_av.av = sample.labels.av;
  auto full = grads_for(sample.labels);
  auto ga = grads_for(only_a);
  auto gv = grads_for(only_v);
  auto gav = grads_for(only_av);

  BranchGradReport rep;
  auto check_group = [&](const char* g, double& err) {
    for (Parameter* p : store.in_group(g)) {
      const Tensor& f = full.at(p);
      for (size_t i = 0; i < f.data.size(); ++i) {
        double mean3 = (ga.at(p).data[i] + gv.at(p).data[i] + gav.at(p).data[i]) / 3.0;
        err = std::max(err, std::abs(f.data[i] - mean3));
      }
    }
  };
  check_group("enhancer", rep.max_abs_err_enhancer);
  check_group("supervisor", rep.max_abs_err_supervisor);
  double sq = 0.0;
  for (Parameter* p : store.in_group("audio_adapter"))
    for (double v : gv.at(p).data) sq += v * v;
  rep.adapter_grad_norm_v_only = std::sqrt(sq);

  for (auto& [p, frozen] : saved) p->frozen = frozen;
  return rep;
}

// ---- ablation matrix ----

std::vector<AblationRow> run_ablation(const World& world,
                                      const AblationConfig& cfg,
                                      std::ostream* log) {
  BundleConfig base = BundleConfig::defaults(world.config());
  base.seed = cfg.seeds.empty() ? 1 : cfg.seeds.front();
  base.has_adapter = true;
  base.has_lora = base.has_enhancer = base.has_supervisor = false;

  ModelBundle aligned = ModelBundle::build(base);
  if (log) *log << "ablation: pretraining the shared teacher\n";
  pretrain_teacher(aligned, world, cfg.pretrain, log);
  if (log) *log << "ablation: aligning the shared audio adapter\n";
  train_stage1(aligned, world, cfg.stage1, nullptr);
  auto bench = world.build_benchmark(cfg.bench_items, cfg.bench_seed);

  struct RowDef {
    const char* name;
    bool adapter, lora, enhancer, supervisor;
  };
  const RowDef defs[] = {
      {"backbone", false, false, false, false},
      {"+adapter", true, false, false, false},
      {"+lora", true, true, false, false},
      {"+lora+enhancer", true, true, true, false},
      {"+lora+supervisor", true, true, false, true},
      {"full", true, true, true, true},
  };

  std::vector<AblationRow> rows;
  for (const RowDef& rd : defs) {
    AblationRow row;
    row.name = rd.name;
    row.adapter = rd.adapter;
    row.lora = rd.lora;
    row.enhancer = rd.enhancer;
    row.supervisor = rd.supervisor;
    bool trains = rd.lora || rd.enhancer || rd.supervisor;
    std::vector<uint64_t> seeds =
        trains ? cfg.seeds : std::vector<uint64_t>{cfg.seeds.front()};

    std::optional<double> sum_a, sum_v, sum_av, sum_all;
    bool any_missing_a = false, any_missing_v = false, any_missing_av = false,
         any_missing_all = false;
    for (uint64_t seed : seeds) {
      BundleConfig bc = base;
      bc.has_adapter = rd.adapter;
      bc.has_lora = rd.lora;
      bc.has_enhancer = rd.enhancer;
      bc.has_supervisor = rd.supervisor;
      bc.seed = seed;
      ModelBundle m = derive_bundle(aligned, bc);
      if (trains) {
        Stage2Config s2 = cfg.stage2;
        s2.seed = seed;
        train_stage2(m, world, s2, nullptr);
      }
      EvalReport r = evaluate(m, bench);
      auto acc = [](std::optional<double>& sum, bool& missing,
                    const std::optional<double>& v) {
        if (!v) missing = true;
        else sum = sum.value_or(0.0) + *v;
      };
      acc(sum_a, any_missing_a, r.avg_a);
      acc(sum_v, any_missing_v, r.avg_v);
      acc(sum_av, any_missing_av, r.avg_av);
      acc(sum_all, any_missing_all, r.avg_all);
      if (log)
        *log << "ablation row " << rd.name << " seed " << seed << " All "
             << (r.avg_all ? fmt(*r.avg_all, "%.4f") : std::string("-")) << "\n";
    }
    double n = static_cast<double>(seeds.size());
    if (!any_missing_a && sum_a) row.avg_a = *sum_a / n;
    if (!any_missing_v && sum_v) row.avg_v = *sum_v / n;
    if (!any_missing_av && sum_av) row.avg_av = *sum_av / n;
    if (!any_missing_all && sum_all) row.avg_all = *sum_all / n;
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << "# ablation.v1\n";
  os << "name,adapter,lora,enhancer,supervisor,avg_a,avg_v,avg_av,avg_all\n";
  auto pct = [](const std::optional<double>& v) {
    return v ? fmt(100.0 * *v, "%.1f") : std::string("-");
  };
  for (const AblationRow& r : rows) {
    os << r.name << "," << (r.adapter ? 1 : 0) << "," << (r.lora ? 1 : 0) << ","
       << (r.enhancer ? 1 : 0) << "," << (r.supervisor ? 1 : 0) << ","
       << pct(r.avg_a) << "," << pct(r.avg_v) << "," << pct(r.avg_av) << ","
       << pct(r.avg_all) << "\n";
  }
}

}  // namespace avemo

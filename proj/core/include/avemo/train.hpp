#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "avemo/bundle.hpp"
#include "avemo/eval.hpp"
#include "avemo/world.hpp"

namespace avemo {

/// Freeze everything, then unfreeze exactly `groups`; verifies the policy.
void set_trainable(ParamStore& store, const std::vector<std::string>& groups);

/// Teacher-forced LM loss for one clip: mean next-token cross-entropy over
/// the response positions, with the clip's modality tokens in the span.
Var clip_lm_loss(const ModelBundle& bundle, ParamCtx& ctx,
                 const ClipSample& clip);

/// Accuracy over the content cells (OC and SC) of one modality group.
double content_accuracy(const ModelBundle& bundle,
                        const std::vector<BenchmarkItem>& items, Modality m);

// ---- Stage 0: backbone pretraining on video content QA ----

struct PretrainConfig {
  int steps = 4000;       // budget; stops early once the gate holds
  int batch = 8;
  double lr = 1e-3;
  uint64_t seed = 11;
  int eval_every = 100;
  int gate_items = 480;   // held-out MCQ probe size
  double gate_acc = 0.90;
};

/// Trains the backbone group on video content/subtype QA until the held-out
/// video MCQ gate passes; freezes the backbone afterwards. Returns the gate
/// accuracy reached. Throws if the step budget runs out below the gate.
double pretrain_teacher(ModelBundle& bundle, const World& world,
                        const PretrainConfig& cfg, std::ostream* log = nullptr);

// ---- Stage 1: audio-pathway alignment ----

struct Stage1Config {
  double temperature = 1.0;
  int steps = 3000;
  int batch = 8;
  double lr = 1e-3;
  uint64_t seed = 21;
  bool features_mode = false;  // align on adapter outputs instead of logits
  int eval_every = 100;
  int rollout_max_len = 4;
  int n_train = 1024;    // fixed clip pool (teacher rollouts are memoized)
  int probe_items = 480; // audio/video content-MCQ probe
};

struct Stage1Result {
  int steps_run = 0;
  double final_loss = 0.0;
  double final_kl = 0.0;       // mean tempered KL over the last probe batch
  double student_acc = 0.0;    // audio content-MCQ accuracy
  double teacher_acc = 0.0;    // video content-MCQ accuracy, same probe
};

/// Distills the frozen visual pathway into the audio pathway. Only the
/// audio_adapter group trains. Metrics CSV columns:
/// step,loss,kl,student_acc,mode,seed
Stage1Result train_stage1(ModelBundle& bundle, const World& world,
                          const Stage1Config& cfg,
                          std::ostream* metrics_csv = nullptr);

/// Same, over an explicit clip pool (e.g. loaded from clips.v1 JSONL);
/// cfg.n_train is ignored.
Stage1Result train_stage1(ModelBundle& bundle, const World& world,
                          std::vector<ClipSample> pool,
                          const Stage1Config& cfg,
                          std::ostream* metrics_csv = nullptr);

// ---- Stage 2: emotion adapter training ----

struct Stage2Config {
  double lambda = 1.0;
  int steps = 8000;
  int batch = 8;
  double lr = 1e-3;
  uint64_t seed = 31;
  int eval_every = 200;
  int n_emotion = 768;      // emotion-labeled training clips
  int n_instruction = 96;   // plain instruction clips mixed in
  int n_val = 96;           // validation clips for V-A MSE
};

struct Stage2Result {
  int steps_run = 0;
  double final_lm_loss = 0.0;
  // per-component V-A MSE on the validation clips, at step 0 and at the end;
  // NaN when the bundle has no supervisor
  double val_mse_a0 = 0.0, val_mse_v0 = 0.0, val_mse_av0 = 0.0;
  double val_mse_a = 0.0, val_mse_v = 0.0, val_mse_av = 0.0;
};

/// Joint LM + masked emotion objective. Trainable groups are exactly the
/// enabled subset of {enhancer, supervisor, lora}. Metrics CSV columns:
/// step,lm_loss,emo_loss_a,emo_loss_v,emo_loss_av,val_mse_a,val_mse_v,val_mse_av
Stage2Result train_stage2(ModelBundle& bundle, const World& world,
                          const Stage2Config& cfg,
                          std::ostream* metrics_csv = nullptr);

/// Same, over an explicit mixed clip pool (emotion-labeled and plain
/// instruction clips); cfg.n_emotion / cfg.n_instruction are ignored.
Stage2Result train_stage2(ModelBundle& bundle, const World& world,
                          std::vector<ClipSample> pool,
                          const Stage2Config& cfg,
                          std::ostream* metrics_csv = nullptr);

/// Per-component V-A MSE of the supervisor on one pathway over `clips`,
/// against the world's exact labels.
double va_mse(const ModelBundle& bundle, const World& world,
              const std::vector<ClipSample>& clips, Modality m);

/// Builds a bundle with `cfg` and copies every parameter value whose name
/// also exists in `src` (frozen flags kept from the fresh build).
ModelBundle derive_bundle(const ModelBundle& src, const BundleConfig& cfg);

// ---- gradient bookkeeping checks ----

/// Recomputes the masked emotion-loss gradient with the label set restricted
/// to each singleton pathway and with the full set, on one fully labeled
/// sample. The full-set gradient must equal the mean of the three singleton
/// gradients.
struct BranchGradReport {
  double max_abs_err_enhancer = 0.0;
  double max_abs_err_supervisor = 0.0;
  double adapter_grad_norm_v_only = 0.0;  // must be 0: adapter frozen here
};
BranchGradReport branch_grad_decomposition(ModelBundle& bundle,
                                           const ClipSample& sample);

// ---- ablation matrix ----

struct AblationRow {
  std::string name;
  bool adapter = false, lora = false, enhancer = false, supervisor = false;
  std::optional<double> avg_a, avg_v, avg_av, avg_all;  // mean over seeds
};

struct AblationConfig {
  PretrainConfig pretrain;
  Stage1Config stage1;
  Stage2Config stage2;
  std::vector<uint64_t> seeds = {101, 102, 103};  // stage-2 seeds per row
  int bench_items = 1200;
  uint64_t bench_seed = 99;
};

/// Six-row component matrix: bare backbone; +adapter (alignment only); then
/// +lora, +lora/enhancer, +lora/supervisor, full. The teacher and the
/// aligned adapter are trained once and shared; the seeds vary the stage-2
/// runs. Missing modalities report no value (printed as a dash).
std::vector<AblationRow> run_ablation(const World& world,
                                      const AblationConfig& cfg,
                                      std::ostream* log = nullptr);

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows);

}  // namespace avemo

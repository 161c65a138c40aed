// Operator entry point: data generation, the two training stages, benchmark
// evaluation, the ablation matrix, and the gradient-check suite.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "avemo/checkpoint.hpp"
#include "avemo/checksuite.hpp"
#include "avemo/distill.hpp"
#include "avemo/eval.hpp"
#include "avemo/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace avemo;

namespace {

constexpr const char* kVersion = "avemo 0.1.0";

uint64_t fnv1a_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + p.string());
  uint64_t h = 1469598103934665603ull;
  char buf[1 << 16];
  while (f.read(buf, sizeof buf), f.gcount() > 0)
    for (std::streamsize i = 0; i < f.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
  return h;
}

std::string hex64(uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

fs::path resolve_out(const std::string& out) {
  fs::path p(out);
  const char* root = std::getenv("AVEMO_OUT_ROOT");
  if (p.is_absolute() || !root || !*root) return p;
  return fs::path(root) / p;
}

fs::path prepare_dir(const std::string& out, bool force) {
  fs::path dir = resolve_out(out);
  if (fs::exists(dir / "manifest.json") && !force)
    throw std::runtime_error("output " + dir.string() +
                             " already holds a run (use --force to overwrite)");
  fs::create_directories(dir);
  return dir;
}

struct Manifest {
  json j;
  explicit Manifest(const std::string& cmd) {
    j["command"] = cmd;
    j["version"] = kVersion;
    j["config"] = json::object();
    j["inputs"] = json::object();
    j["outputs"] = json::object();
    j["results"] = json::object();
  }
  void input(const fs::path& p) {
    j["inputs"][p.filename().string()] = {{"path", p.string()},
                                          {"fnv1a64", hex64(fnv1a_file(p))}};
  }
  void output(const fs::path& p) {
    j["outputs"][p.filename().string()] = {{"path", p.string()},
                                           {"fnv1a64", hex64(fnv1a_file(p))}};
  }
  void write(const fs::path& dir) {
    std::ofstream o(dir / "manifest.json");
    o << j.dump(2) << "\n";
  }
};

std::optional<std::string> opt_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return s;
}

// ---- gen-data ----

struct GenDataOpts {
  std::string world_config, out, stage;
  uint64_t seed = 1;
  int n = -1;
  bool force = false;
};

void run_gen_data(const GenDataOpts& o) {
  WorldConfig wc = WorldConfig::load(o.world_config);
  World world = World::generate(wc, wc.seed);
  fs::path dir = prepare_dir(o.out, o.force);
  Manifest man("gen-data");
  man.j["config"] = {{"stage", o.stage}, {"seed", o.seed}, {"n", o.n}};
  man.input(o.world_config);
  wc.save((dir / "world.cfg").string());
  man.output(dir / "world.cfg");

  if (o.stage == "bench") {
    int n = o.n > 0 ? o.n : 1200;
    auto items = world.build_benchmark(n, o.seed);
    save_benchmark((dir / "bench.jsonl").string(), items);
    man.output(dir / "bench.jsonl");
    std::cout << "wrote " << items.size() << " benchmark items\n";
  } else {
    std::vector<ClipSample> clips;
    if (o.stage == "1") {
      int n = o.n > 0 ? o.n : 512;
      Rng rng(Rng::derive(o.seed, 0x57A6E1));
      for (int i = 0; i < n; ++i) clips.push_back(world.paired_clip(rng, i));
    } else {
      int n = o.n > 0 ? o.n : 384;
      Rng rng(Rng::derive(o.seed, 0xDA7A2));
      long long id = 0;
      for (int i = 0; i < n; ++i) clips.push_back(world.emotion_clip(rng, id++));
      for (int i = 0; i < n / 3; ++i)
        clips.push_back(world.instruction_clip(rng, id++));
    }
    save_clips((dir / "clips.jsonl").string(), clips);
    man.output(dir / "clips.jsonl");
    std::cout << "wrote " << clips.size() << " clips\n";
  }
  man.write(dir);
}

// ---- train-stage1 ----

struct Stage1Opts {
  std::string world_config, data, teacher_ckpt, align = "logits", out;
  int steps = 3000, batch = 8, pretrain_steps = 4000;
  double lr = 1e-3, temperature = 1.0;
  uint64_t seed = 21, model_seed = 7;
  bool paper_lr = false, force = false;
};

void run_train_stage1(const Stage1Opts& o) {
  WorldConfig wc = WorldConfig::load(o.world_config);
  World world = World::generate(wc, wc.seed);
  fs::path dir = prepare_dir(o.out, o.force);
  Manifest man("train-stage1");
  man.input(o.world_config);
  if (!o.data.empty()) man.input(o.data);
  if (!o.teacher_ckpt.empty()) man.input(o.teacher_ckpt);

  ModelBundle bundle = [&] {
    if (!o.teacher_ckpt.empty()) return ModelBundle::load(o.teacher_ckpt);
    BundleConfig bc = BundleConfig::defaults(wc);
    bc.seed = o.model_seed;
    bc.has_adapter = true;
    ModelBundle b = ModelBundle::build(bc);
    PretrainConfig pc;
    pc.steps = o.pretrain_steps;
    pc.seed = o.seed;
    double acc = pretrain_teacher(b, world, pc, &std::cout);
    std::cout << "teacher gate passed at video accuracy " << acc << "\n";
    return b;
  }();

  Stage1Config cfg;
  cfg.temperature = o.temperature;
  cfg.steps = o.steps;
  cfg.batch = o.batch;
  cfg.lr = o.paper_lr ? 1e-5 : o.lr;
  cfg.seed = o.seed;
  cfg.features_mode = o.align == "features";
  man.j["config"] = {{"align", o.align},       {"steps", cfg.steps},
                     {"batch", cfg.batch},     {"lr", cfg.lr},
                     {"paper_lr", o.paper_lr}, {"temperature", cfg.temperature},
                     {"seed", cfg.seed}};

  std::ofstream metrics(dir / "metrics.csv");
  Stage1Result r =
      o.data.empty()
          ? train_stage1(bundle, world, cfg, &metrics)
          : train_stage1(bundle, world, load_clips(o.data), cfg, &metrics);
  metrics.close();
  bundle.save((dir / "stage1.ckpt").string(),
              json{{"stage", 1}, {"align", o.align}});
  man.output(dir / "stage1.ckpt");
  man.output(dir / "metrics.csv");
  man.j["results"] = {{"final_loss", r.final_loss},
                      {"final_kl", r.final_kl},
                      {"student_acc", r.student_acc},
                      {"teacher_acc", r.teacher_acc}};
  man.write(dir);
  std::cout << "stage1 done: loss " << r.final_loss << " kl " << r.final_kl
            << " student_acc " << r.student_acc << " teacher_acc "
            << r.teacher_acc << "\n";
}

// ---- train-stage2 ----

struct Stage2Opts {
  std::string world_config, data, stage1_ckpt, out;
  std::vector<std::string> disable;
  int steps = 8000, batch = 8;
  double lr = 1e-3, lambda = 1.0;
  uint64_t seed = 31;
  bool paper_lr = false, force = false;
};

void run_train_stage2(const Stage2Opts& o) {
  bool no_enh = false, no_sup = false, no_lora = false;
  for (const std::string& d : o.disable) {
    if (d == "enhancer") no_enh = true;
    else if (d == "supervisor") no_sup = true;
    else if (d == "lora") no_lora = true;
  }
  if (no_enh && no_sup && no_lora)
    throw CLI::ValidationError(
        "--disable", "disabling every component leaves nothing to train");

  WorldConfig wc = WorldConfig::load(o.world_config);
  World world = World::generate(wc, wc.seed);
  fs::path dir = prepare_dir(o.out, o.force);
  Manifest man("train-stage2");
  man.input(o.world_config);
  man.input(o.stage1_ckpt);
  if (!o.data.empty()) man.input(o.data);

  json echo = read_checkpoint_config(o.stage1_ckpt);
  BundleConfig bc = BundleConfig::from_json(echo.at("bundle"));
  bc.has_lora = !no_lora;
  bc.has_enhancer = !no_enh;
  bc.has_supervisor = !no_sup;
  bc.seed = o.seed;
  ModelBundle bundle = ModelBundle::build(bc);
  load_checkpoint(o.stage1_ckpt, bundle.store());

  // snapshot of the groups the frozen-parameter contract protects
  const std::vector<std::string> frozen_groups = {
      "backbone", "vision_encoder", "audio_encoder", "audio_adapter"};
  std::map<std::string, Tensor> before;
  for (const std::string& g : frozen_groups)
    for (Parameter* p : bundle.store().in_group(g)) before.emplace(p->name, p->value);

  Stage2Config cfg;
  cfg.lambda = o.lambda;
  cfg.steps = o.steps;
  cfg.batch = o.batch;
  cfg.lr = o.paper_lr ? 1e-5 : o.lr;
  cfg.seed = o.seed;
  man.j["config"] = {{"lambda", cfg.lambda},   {"steps", cfg.steps},
                     {"batch", cfg.batch},     {"lr", cfg.lr},
                     {"paper_lr", o.paper_lr}, {"seed", cfg.seed},
                     {"disable", o.disable}};

  std::ofstream metrics(dir / "metrics.csv");
  Stage2Result r =
      o.data.empty()
          ? train_stage2(bundle, world, cfg, &metrics)
          : train_stage2(bundle, world, load_clips(o.data), cfg, &metrics);
  metrics.close();

  for (const std::string& g : frozen_groups)
    for (Parameter* p : bundle.store().in_group(g))
      if (p->value.data != before.at(p->name).data)
        throw std::logic_error("frozen parameter " + p->name +
                               " changed during stage 2");

  bundle.save((dir / "stage2.ckpt").string(), json{{"stage", 2}});
  man.output(dir / "stage2.ckpt");
  man.output(dir / "metrics.csv");
  man.j["results"] = {{"final_lm_loss", r.final_lm_loss},
                      {"val_mse_a", r.val_mse_a},
                      {"val_mse_v", r.val_mse_v},
                      {"val_mse_av", r.val_mse_av},
                      {"val_mse_av_step0", r.val_mse_av0}};
  man.write(dir);
  std::cout << "stage2 done: lm_loss " << r.final_lm_loss << " val_mse_av "
            << r.val_mse_av << " (from " << r.val_mse_av0 << ")\n";
}

// ---- eval ----

struct EvalOpts {
  std::string ckpt, bench, out, name, modality;
  bool force = false;
};

void run_eval(const EvalOpts& o) {
  fs::path dir = prepare_dir(o.out, o.force);
  Manifest man("eval");
  man.input(o.ckpt);
  man.input(o.bench);
  ModelBundle bundle = ModelBundle::load(o.ckpt);
  auto items = load_benchmark(o.bench);
  std::optional<Modality> filter;
  if (!o.modality.empty()) filter = modality_from_name(o.modality);
  std::string name = o.name.empty() ? fs::path(o.ckpt).stem().string() : o.name;

  EvalReport r = evaluate(bundle, items, filter);
  {
    std::ofstream rep(dir / "report.csv");
    write_reports_csv(rep, {{name, r}});
  }
  {
    std::ofstream il(dir / "items.jsonl");
    write_item_log(il, r);
  }
  man.output(dir / "report.csv");
  man.output(dir / "items.jsonl");
  man.j["config"] = {{"name", name}, {"modality", o.modality}};
  auto put = [&](const char* k, const std::optional<double>& v) {
    if (v) man.j["results"][k] = *v;
  };
  put("avg_a", r.avg_a);
  put("avg_v", r.avg_v);
  put("avg_av", r.avg_av);
  put("avg_all", r.avg_all);
  man.write(dir);
  std::cout << "evaluated " << r.items.size() << " items";
  if (r.avg_all) std::cout << ", All " << 100.0 * *r.avg_all << "%";
  std::cout << "\n";
}

// ---- ablate ----

struct AblateOpts {
  std::string world_config, out, matrix = "full";
  std::vector<uint64_t> seeds = {101, 102, 103};
  int pretrain_steps = 4000, stage1_steps = 3000, stage2_steps = 8000;
  int bench_items = 1200;
  bool force = false;
};

void run_ablate(const AblateOpts& o) {
  WorldConfig wc = WorldConfig::load(o.world_config);
  World world = World::generate(wc, wc.seed);
  fs::path dir = prepare_dir(o.out, o.force);
  Manifest man("ablate");
  man.input(o.world_config);

  AblationConfig ac;
  ac.pretrain.steps = o.pretrain_steps;
  ac.stage1.steps = o.stage1_steps;
  ac.stage2.steps = o.stage2_steps;
  ac.seeds = o.seeds;
  ac.bench_items = o.bench_items;
  man.j["config"] = {{"matrix", o.matrix},
                     {"seeds", o.seeds},
                     {"pretrain_steps", o.pretrain_steps},
                     {"stage1_steps", o.stage1_steps},
                     {"stage2_steps", o.stage2_steps},
                     {"bench_items", o.bench_items}};

  auto rows = run_ablation(world, ac, &std::cout);
  {
    std::ofstream csv(dir / "ablation.csv");
    write_ablation_csv(csv, rows);
  }
  man.output(dir / "ablation.csv");
  man.write(dir);
  write_ablation_csv(std::cout, rows);
}

// ---- gradcheck ----

void run_gradcheck() {
  constexpr double kTol = 1e-4;
  auto entries = gradcheck_ops();
  entries.push_back(gradcheck_stage2_composite());
  int failures = 0;
  for (const auto& e : entries) {
    bool ok = e.rel_err < kTol;
    std::cout << (ok ? "ok   " : "FAIL ") << e.name << " rel_err " << e.rel_err
              << "\n";
    failures += ok ? 0 : 1;
  }
  if (failures)
    throw std::runtime_error(std::to_string(failures) +
                             " gradient check(s) at or above " +
                             std::to_string(kTol));
  std::cout << "all " << entries.size() << " gradient checks passed\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-stage audio-visual language model workbench"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  GenDataOpts gd;
  auto* sub_gd = app.add_subcommand("gen-data", "generate clips or a benchmark");
  sub_gd->add_option("--world-config", gd.world_config)->required();
  sub_gd->add_option("--out", gd.out)->required();
  sub_gd->add_option("--stage", gd.stage)
      ->required()
      ->check(CLI::IsMember({"1", "2", "bench"}));
  sub_gd->add_option("--seed", gd.seed);
  sub_gd->add_option("--n", gd.n);
  sub_gd->add_flag("--force", gd.force);
  sub_gd->set_config("--config");
  sub_gd->callback([&] { run_gen_data(gd); });

  Stage1Opts s1;
  auto* sub_s1 = app.add_subcommand("train-stage1", "align the audio pathway");
  sub_s1->add_option("--world-config", s1.world_config)->required();
  sub_s1->add_option("--out", s1.out)->required();
  sub_s1->add_option("--data", s1.data);
  sub_s1->add_option("--teacher-ckpt", s1.teacher_ckpt);
  sub_s1->add_option("--align", s1.align)
      ->check(CLI::IsMember({"logits", "features"}));
  sub_s1->add_option("--steps", s1.steps);
  sub_s1->add_option("--batch", s1.batch);
  sub_s1->add_option("--lr", s1.lr);
  sub_s1->add_option("--temperature", s1.temperature);
  sub_s1->add_option("--seed", s1.seed);
  sub_s1->add_option("--model-seed", s1.model_seed);
  sub_s1->add_option("--pretrain-steps", s1.pretrain_steps);
  sub_s1->add_flag("--paper-lr", s1.paper_lr,
                   "use the reference learning rate 1e-5");
  sub_s1->add_flag("--force", s1.force);
  sub_s1->set_config("--config");
  sub_s1->callback([&] { run_train_stage1(s1); });

  Stage2Opts s2;
  auto* sub_s2 = app.add_subcommand("train-stage2", "train the emotion adapter");
  sub_s2->add_option("--world-config", s2.world_config)->required();
  sub_s2->add_option("--stage1-ckpt", s2.stage1_ckpt)->required();
  sub_s2->add_option("--out", s2.out)->required();
  sub_s2->add_option("--data", s2.data);
  sub_s2->add_option("--disable", s2.disable)
      ->check(CLI::IsMember({"enhancer", "supervisor", "lora"}));
  sub_s2->add_option("--lambda", s2.lambda);
  sub_s2->add_option("--steps", s2.steps);
  sub_s2->add_option("--batch", s2.batch);
  sub_s2->add_option("--lr", s2.lr);
  sub_s2->add_option("--seed", s2.seed);
  sub_s2->add_flag("--paper-lr", s2.paper_lr,
                   "use the reference learning rate 1e-5");
  sub_s2->add_flag("--force", s2.force);
  sub_s2->set_config("--config");
  sub_s2->callback([&] { run_train_stage2(s2); });

  EvalOpts ev;
  auto* sub_ev = app.add_subcommand("eval", "score a checkpoint on a benchmark");
  sub_ev->add_option("--ckpt", ev.ckpt)->required();
  sub_ev->add_option("--bench", ev.bench)->required();
  sub_ev->add_option("--out", ev.out)->required();
  sub_ev->add_option("--name", ev.name);
  sub_ev->add_option("--modality", ev.modality)
      ->check(CLI::IsMember({"a", "v", "av"}));
  sub_ev->add_flag("--force", ev.force);
  sub_ev->callback([&] { run_eval(ev); });

  AblateOpts ab;
  auto* sub_ab = app.add_subcommand("ablate", "run the component matrix");
  sub_ab->add_option("--world-config", ab.world_config)->required();
  sub_ab->add_option("--out", ab.out)->required();
  sub_ab->add_option("--matrix", ab.matrix)->check(CLI::IsMember({"full"}));
  sub_ab->add_option("--seeds", ab.seeds);
  sub_ab->add_option("--pretrain-steps", ab.pretrain_steps);
  sub_ab->add_option("--stage1-steps", ab.stage1_steps);
  sub_ab->add_option("--stage2-steps", ab.stage2_steps);
  sub_ab->add_option("--bench-items", ab.bench_items);
  sub_ab->add_flag("--force", ab.force);
  sub_ab->callback([&] { run_ablate(ab); });

  auto* sub_gc =
      app.add_subcommand("gradcheck", "finite-difference operator audit");
  sub_gc->callback([&] { run_gradcheck(); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

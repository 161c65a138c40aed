#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "avemo/rng.hpp"
#include "avemo/vocab.hpp"
#include "avemo/world.hpp"

using namespace avemo;
namespace fs = std::filesystem;

namespace {

fs::path tmp_file(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "avemo-world-tests";
  fs::create_directories(dir);
  return dir / name;
}

// Exemplar oracle: one noise-free rendering per (class, subtype), harvested
// from a twin world with all noise and the emotion injection off (the world's
// fixed maps depend only on the seed). Subtype offsets are comparable in size
// to class separation, so classifying against bare class centroids is wrong
// by construction; nearest exemplar is the right independent rule.
struct FeatureOracle {
  std::vector<int> cls;
  std::vector<Tensor> video, audio;

  static FeatureOracle build(WorldConfig cfg, uint64_t world_seed) {
    cfg.sigma = 0.0;
    cfg.feat_noise = 0.0;
    cfg.emo_gain = 0.0;
    World w0 = World::generate(cfg, world_seed);
    std::map<std::pair<int, int>, size_t> seen;
    FeatureOracle o;
    Rng rng(0xE8E);
    size_t want = static_cast<size_t>(cfg.n_classes) *
                  static_cast<size_t>(cfg.n_subtypes);
    for (long long i = 0; seen.size() < want && i < 5000; ++i) {
      ClipSample c = w0.paired_clip(rng, i);
      auto [it, fresh] = seen.emplace(std::make_pair(c.scene_class, c.subtype),
                                      o.cls.size());
      if (!fresh) continue;
      o.cls.push_back(c.scene_class);
      o.video.push_back(c.video);
      o.audio.push_back(c.audio);
    }
    REQUIRE(seen.size() == want);
    return o;
  }

  int classify(const std::vector<Tensor>& exemplars, const Tensor& x) const {
    int best = 0;
    double best_d = 1e300;
    for (size_t k = 0; k < exemplars.size(); ++k) {
      double d = 0.0;
      for (size_t i = 0; i < x.data.size(); ++i) {
        double e = x.data[i] - exemplars[k].data[i];
        d += e * e;
      }
      if (d < best_d) {
        best_d = d;
        best = cls[k];
      }
    }
    return best;
  }

  int video_class(const Tensor& v) const { return classify(video, v); }
  int audio_class(const Tensor& a) const { return classify(audio, a); }
};

}  // namespace

TEST_CASE("generation is a pure function of (cfg, seed)") {
  WorldConfig cfg;
  World a = World::generate(cfg, 5);
  World b = World::generate(cfg, 5);
  CHECK(a.class_centers().data == b.class_centers().data);
  Rng r1(3), r2(3);
  ClipSample c1 = a.paired_clip(r1, 0);
  ClipSample c2 = b.paired_clip(r2, 0);
  CHECK(c1.video.data == c2.video.data);
  CHECK(c1.audio.data == c2.audio.data);
  CHECK(c1.answer == c2.answer);
}

TEST_CASE("class centroids are pairwise separated beyond 4 sigma") {
  WorldConfig cfg;
  World w = World::generate(cfg, 1);
  const Tensor& c = w.class_centers();
  for (int i = 0; i < cfg.n_classes; ++i)
    for (int j = i + 1; j < cfg.n_classes; ++j) {
      double d2 = 0.0;
      for (int p = 0; p < cfg.latent_dim; ++p) {
        double e = c.at(i, p) - c.at(j, p);
        d2 += e * e;
      }
      CHECK(std::sqrt(d2) > 4.0 * cfg.sigma);
    }
}

TEST_CASE("audio and video maps differ") {
  WorldConfig cfg;
  World w = World::generate(cfg, 1);
  // different renderings of the same centroid must not be transposes/copies:
  // compare flattened prefixes of equal length
  Tensor v = w.class_video_centroid(0);
  Tensor a = w.class_audio_centroid(0);
  double diff = 0.0;
  size_t n = std::min(v.data.size(), a.data.size());
  for (size_t i = 0; i < n; ++i) diff += std::abs(v.data[i] - a.data[i]);
  CHECK(diff > 1e-3);
}

TEST_CASE("nearest-exemplar oracle recovers the class; pathways agree") {
  WorldConfig cfg;
  cfg.emo_gain = 0.0;  // emotion injection is a deliberate class confound
  World w = World::generate(cfg, 1);
  FeatureOracle oracle = FeatureOracle::build(cfg, 1);
  Rng rng(9);
  int n = 400, v_ok = 0, agree = 0;
  for (int i = 0; i < n; ++i) {
    ClipSample c = w.paired_clip(rng, i);
    int cv = oracle.video_class(c.video);
    int ca = oracle.audio_class(c.audio);
    if (cv == c.scene_class) ++v_ok;
    if (cv == ca) ++agree;
  }
  CHECK(v_ok >= static_cast<int>(0.99 * n));
  CHECK(agree >= static_cast<int>(0.99 * n));
}

TEST_CASE("zero noise: oracle is exact") {
  WorldConfig cfg;
  cfg.sigma = 0.0;
  cfg.feat_noise = 0.0;
  cfg.emo_gain = 0.0;
  World w = World::generate(cfg, 2);
  FeatureOracle oracle = FeatureOracle::build(cfg, 2);
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    ClipSample c = w.paired_clip(rng, i);
    CHECK(oracle.video_class(c.video) == c.scene_class);
    CHECK(oracle.audio_class(c.audio) == c.scene_class);
  }
}

TEST_CASE("labels stay in [-1,1]; joint label carries the cross term") {
  WorldConfig cfg;
  World w = World::generate(cfg, 1);
  Rng rng(7);
  for (int i = 0; i < 500; ++i) {
    ClipSample c = w.emotion_clip(rng, i);
    for (auto* y : {&c.labels.a, &c.labels.v, &c.labels.av})
      if (*y) CHECK_NOTHROW((*y)->validate());
  }
  // alpha_x = 0 degenerates to the normalized sum of unimodal parts
  WorldConfig flat = cfg;
  flat.alpha_x = 0.0;
  World wf = World::generate(flat, 1);
  auto ls = wf.labels_for(0.5, -0.4, 0.6, 0.8);
  CHECK(ls.av.valence ==
        doctest::Approx((flat.alpha_a * 0.5 + flat.alpha_v * 0.6) / flat.av_norm)
            .epsilon(1e-12));
  CHECK(ls.av.arousal ==
        doctest::Approx((flat.alpha_a * -0.4 + flat.alpha_v * 0.8) / flat.av_norm)
            .epsilon(1e-12));
}

TEST_CASE("interaction necessity: unimodal regressor cannot explain y_av") {
  WorldConfig cfg;
  World w = World::generate(cfg, 1);
  Rng rng(13);
  // brute-force conditional-mean regressor of valence_av from u_a alone,
  // fit on binned u_a over 10k samples; the joint oracle has MSE 0
  const int kBins = 40;
  std::array<double, kBins> sum{}, cnt{};
  std::vector<std::pair<double, double>> samples;  // (ua_val, y_av_val)
  for (int i = 0; i < 10000; ++i) {
    ClipSample c = w.emotion_clip(rng, i);
    auto ls = w.labels_for(c.ua_val, c.ua_aro, c.uv_val, c.uv_aro);
    int bin = std::min(kBins - 1,
                       static_cast<int>((c.ua_val + 1.0) / 2.0 * kBins));
    sum[bin] += ls.av.valence;
    cnt[bin] += 1.0;
    samples.emplace_back(c.ua_val, ls.av.valence);
  }
  double mse = 0.0;
  for (auto [u, y] : samples) {
    int bin = std::min(kBins - 1, static_cast<int>((u + 1.0) / 2.0 * kBins));
    double pred = cnt[bin] > 0 ? sum[bin] / cnt[bin] : 0.0;
    mse += (pred - y) * (pred - y);
  }
  mse /= static_cast<double>(samples.size());
  CHECK(mse > 0.1);  // joint oracle reaches 0; unimodal stays far away
}

TEST_CASE("benchmark items: shape, option balance, cell coverage") {
  WorldConfig cfg;
  World w = World::generate(cfg, 1);
  auto items = w.build_benchmark(1200, 99);
  REQUIRE(items.size() == 1200);
  std::array<int, 4> correct_pos{};
  std::map<std::string, int> cells;
  for (const auto& it : items) {
    REQUIRE(it.options.size() == 4);
    REQUIRE(it.correct >= 0);
    REQUIRE(it.correct < 4);
    int dup = 0;
    for (int t : it.options)
      if (t == it.options[static_cast<size_t>(it.correct)]) ++dup;
    CHECK(dup == 1);  // exactly one correct option
    ++correct_pos[static_cast<size_t>(it.correct)];
    ++cells[modality_name(it.modality) + "/" + category_name(it.category)];
    if (it.modality == Modality::Audio) CHECK(it.video.numel() == 0);
    if (it.modality == Modality::Video) CHECK(it.audio.numel() == 0);
  }
  CHECK(cells.size() == 12);
  for (auto& [k, n] : cells) CHECK(n == 100);
  for (int p = 0; p < 4; ++p) {
    double frac = correct_pos[static_cast<size_t>(p)] / 1200.0;
    INFO("position ", p, " fraction ", frac);
    CHECK(frac > 0.21);
    CHECK(frac < 0.29);
  }
}

TEST_CASE("benchmark remainder pads the leading cells in cell order") {
  WorldConfig cfg;
  World w = World::generate(cfg, 1);
  auto items = w.build_benchmark(14, 5);
  REQUIRE(items.size() == 14);
  std::map<std::string, int> cells;
  for (const auto& it : items)
    ++cells[modality_name(it.modality) + "/" + category_name(it.category)];
  CHECK(cells["a/OC"] == 2);
  CHECK(cells["a/OE"] == 2);
  CHECK(cells["a/SC"] == 1);
}

TEST_CASE("clips serialization round-trips value-exactly") {
  WorldConfig cfg;
  World w = World::generate(cfg, 1);
  Rng rng(8);
  std::vector<ClipSample> clips;
  for (int i = 0; i < 100; ++i)
    clips.push_back(i % 2 ? w.emotion_clip(rng, i) : w.paired_clip(rng, i));
  auto path = tmp_file("clips.jsonl");
  save_clips(path.string(), clips);
  auto back = load_clips(path.string());
  REQUIRE(back.size() == clips.size());
  for (size_t i = 0; i < clips.size(); ++i) {
    CHECK(back[i].id == clips[i].id);
    CHECK(back[i].video.data == clips[i].video.data);
    CHECK(back[i].audio.data == clips[i].audio.data);
    CHECK(back[i].ua_val == clips[i].ua_val);
    CHECK(back[i].instruction == clips[i].instruction);
    CHECK(back[i].answer == clips[i].answer);
    CHECK(back[i].labels.count() == clips[i].labels.count());
    if (clips[i].labels.av) {
      CHECK(back[i].labels.av->valence == clips[i].labels.av->valence);
      CHECK(back[i].labels.av->arousal == clips[i].labels.av->arousal);
    }
  }
  // identical bytes when saved twice
  auto path2 = tmp_file("clips2.jsonl");
  save_clips(path2.string(), clips);
  std::ifstream f1(path), f2(path2);
  std::stringstream s1, s2;
  s1 << f1.rdbuf();
  s2 << f2.rdbuf();
  CHECK(s1.str() == s2.str());
}

TEST_CASE("benchmark serialization round-trips; nulls encode missing modality") {
  WorldConfig cfg;
  World w = World::generate(cfg, 1);
  auto items = w.build_benchmark(36, 3);
  auto path = tmp_file("bench.jsonl");
  save_benchmark(path.string(), items);
  auto back = load_benchmark(path.string());
  REQUIRE(back.size() == items.size());
  for (size_t i = 0; i < items.size(); ++i) {
    CHECK(back[i].modality == items[i].modality);
    CHECK(back[i].category == items[i].category);
    CHECK(back[i].video.data == items[i].video.data);
    CHECK(back[i].audio.data == items[i].audio.data);
    CHECK(back[i].options == items[i].options);
    CHECK(back[i].correct == items[i].correct);
  }
}

TEST_CASE("malformed lines report the line number; schema is enforced") {
  auto path = tmp_file("bad.jsonl");
  {
    std::ofstream f(path);
    f << R"({"schema":"clips.v1","id":0,"class":0,"subtype":0,"ua":[0.5,0.5],)"
      << R"("uv":[0.5,0.5],"modality":"v","video":{"shape":[1,1],"data":[0.0]},)"
      << R"("audio":{"shape":[1,1],"data":[0.0]},"instr":[3],"answer":[10,2],)"
      << R"("labels":{}})" << "\n";
    f << "{truncated\n";
  }
  try {
    load_clips(path.string());
    FAIL("expected malformed-line error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }

  auto path2 = tmp_file("wrong-schema.jsonl");
  {
    std::ofstream f(path2);
    f << R"({"schema":"clips.v2"})" << "\n";
  }
  CHECK_THROWS_AS(load_clips(path2.string()), std::runtime_error);
}

TEST_CASE("world config file round-trips and rejects unknown keys") {
  WorldConfig cfg;
  cfg.sigma = 0.123456789012345;
  cfg.alpha_x = 2.5;
  cfg.seed = 77;
  auto path = tmp_file("world.cfg");
  cfg.save(path.string());
  WorldConfig back = WorldConfig::load(path.string());
  CHECK(back.sigma == cfg.sigma);
  CHECK(back.alpha_x == cfg.alpha_x);
  CHECK(back.seed == cfg.seed);
  CHECK(back.emo_gain == cfg.emo_gain);

  auto path2 = tmp_file("bad.cfg");
  {
    std::ofstream f(path2);
    f << "schema = world.v1\nnot_a_key = 3\n";
  }
  CHECK_THROWS_AS(WorldConfig::load(path2.string()), std::runtime_error);
  auto path3 = tmp_file("noschema.cfg");
  {
    std::ofstream f(path3);
    f << "sigma = 0.05\n";
  }
  CHECK_THROWS_AS(WorldConfig::load(path3.string()), std::runtime_error);
}

TEST_CASE("config validation bounds") {
  WorldConfig cfg;
  cfg.n_classes = tok::kNumClasses + 1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = WorldConfig{};
  cfg.sigma = -1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  CHECK_THROWS_AS((VALabel{1.5, 0.0}.validate()), std::invalid_argument);
}

#include "avemo/world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace avemo {

using nlohmann::json;

std::string modality_name(Modality m) {
  switch (m) {
    case Modality::Audio: return "a";
    case Modality::Video: return "v";
    case Modality::AudioVisual: return "av";
  }
  throw std::logic_error("modality_name");
}

Modality modality_from_name(const std::string& s) {
  if (s == "a") return Modality::Audio;
  if (s == "v") return Modality::Video;
  if (s == "av") return Modality::AudioVisual;
  throw std::invalid_argument("unknown modality: " + s);
}

std::string category_name(Category c) {
  switch (c) {
    case Category::OC: return "OC";
    case Category::OE: return "OE";
    case Category::SC: return "SC";
    case Category::SE: return "SE";
    case Category::SpA: return "Sp-A";
    case Category::SpV: return "Sp-V";
    case Category::SpAV: return "Sp-AV";
  }
  throw std::logic_error("category_name");
}

Category category_from_name(const std::string& s) {
  if (s == "OC") return Category::OC;
  if (s == "OE") return Category::OE;
  if (s == "SC") return Category::SC;
  if (s == "SE") return Category::SE;
  if (s == "Sp-A") return Category::SpA;
  if (s == "Sp-V") return Category::SpV;
  if (s == "Sp-AV") return Category::SpAV;
  throw std::invalid_argument("unknown category: " + s);
}

void VALabel::validate() const {
  if (!std::isfinite(valence) || !std::isfinite(arousal) ||
      std::abs(valence) > 1.0 || std::abs(arousal) > 1.0)
    throw std::invalid_argument("VALabel out of [-1,1]");
}

void WorldConfig::validate() const {
  if (n_classes > tok::kNumClasses)
    throw std::invalid_argument("WorldConfig: n_classes exceeds token budget");
  if (n_subtypes > tok::kNumSubtypes)
    throw std::invalid_argument("WorldConfig: n_subtypes exceeds token budget");
  if (sigma < 0.0) throw std::invalid_argument("WorldConfig: sigma < 0");
  if (av_norm <= 0.0) throw std::invalid_argument("WorldConfig: av_norm <= 0");
}

void WorldConfig::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "schema = world.v1\n";
  f << "n_classes = " << n_classes << "\n";
  f << "n_subtypes = " << n_subtypes << "\n";
  f << "latent_dim = " << latent_dim << "\n";
  char buf[64];
  auto put = [&](const char* k, double v) {
    snprintf(buf, sizeof buf, "%.17g", v);
    f << k << " = " << buf << "\n";
  };
  put("sigma", sigma);
  put("feat_noise", feat_noise);
  f << "frames = " << frames << "\n";
  f << "d_raw_v = " << d_raw_v << "\n";
  f << "audio_steps = " << audio_steps << "\n";
  f << "d_raw_a = " << d_raw_a << "\n";
  put("alpha_a", alpha_a);
  put("alpha_v", alpha_v);
  put("alpha_x", alpha_x);
  put("av_norm", av_norm);
  put("emo_gain", emo_gain);
  f << "seed = " << seed << "\n";
}

WorldConfig WorldConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  WorldConfig cfg;
  std::string line;
  bool schema_seen = false;
  while (std::getline(f, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      size_t a = s.find_first_not_of(" \t");
      size_t b = s.find_last_not_of(" \t");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key == "schema") {
      if (val != "world.v1")
        throw std::runtime_error("world config schema mismatch: " + val);
      schema_seen = true;
    } else if (key == "n_classes") cfg.n_classes = std::stoi(val);
    else if (key == "n_subtypes") cfg.n_subtypes = std::stoi(val);
    else if (key == "latent_dim") cfg.latent_dim = std::stoi(val);
    else if (key == "sigma") cfg.sigma = std::stod(val);
    else if (key == "feat_noise") cfg.feat_noise = std::stod(val);
    else if (key == "frames") cfg.frames = std::stoi(val);
    else if (key == "d_raw_v") cfg.d_raw_v = std::stoi(val);
    else if (key == "audio_steps") cfg.audio_steps = std::stoi(val);
    else if (key == "d_raw_a") cfg.d_raw_a = std::stoi(val);
    else if (key == "alpha_a") cfg.alpha_a = std::stod(val);
    else if (key == "alpha_v") cfg.alpha_v = std::stod(val);
    else if (key == "alpha_x") cfg.alpha_x = std::stod(val);
    else if (key == "av_norm") cfg.av_norm = std::stod(val);
    else if (key == "emo_gain") cfg.emo_gain = std::stod(val);
    else if (key == "seed") cfg.seed = std::stoull(val);
    else throw std::runtime_error("world config: unknown key " + key);
  }
  if (!schema_seen) throw std::runtime_error("world config: missing schema line");
  cfg.validate();
  return cfg;
}

World World::generate(const WorldConfig& cfg, uint64_t seed) {
  cfg.validate();
  World w;
  w.cfg_ = cfg;
  Rng rng(Rng::derive(seed, 0xC0FFEE));
  // class centroids, resampled until pairwise separated
  for (int attempt = 0; attempt < 1000; ++attempt) {
    w.centers_ = rng.gaussian_tensor({cfg.n_classes, cfg.latent_dim}, 1.0);
    double min_d = 1e300;
    for (int i = 0; i < cfg.n_classes; ++i)
      for (int j = i + 1; j < cfg.n_classes; ++j) {
        double d2 = 0.0;
        for (int p = 0; p < cfg.latent_dim; ++p) {
          double c = w.centers_.at(i, p) - w.centers_.at(j, p);
          d2 += c * c;
        }
        min_d = std::min(min_d, std::sqrt(d2));
      }
    if (min_d > 4.0 * cfg.sigma) break;
    if (attempt == 999)
      throw std::runtime_error("gen_world: could not separate centroids");
  }
  w.subtype_offsets_ = rng.gaussian_tensor({cfg.n_subtypes, cfg.latent_dim}, 0.6);
  double ms = 1.0 / std::sqrt(static_cast<double>(cfg.latent_dim));
  // independent streams for the two maps, so A(.) and V(.) differ
  Rng rv(Rng::derive(seed, 0x51DE0));
  Rng ra(Rng::derive(seed, 0xA0D10));
  w.map_v_ = rv.gaussian_tensor({cfg.frames * cfg.d_raw_v, cfg.latent_dim}, ms);
  w.map_a_ = ra.gaussian_tensor({cfg.audio_steps * cfg.d_raw_a, cfg.latent_dim}, ms);
  w.emo_v_ = rv.gaussian_tensor({cfg.d_raw_v, 2}, 0.7);
  w.emo_a_ = ra.gaussian_tensor({cfg.d_raw_a, 2}, 0.7);
  return w;
}

Tensor World::sample_latent(Rng& rng, int cls, int subtype) const {
  Tensor s({cfg_.latent_dim});
  for (int p = 0; p < cfg_.latent_dim; ++p)
    s.at(p) = centers_.at(cls, p) + subtype_offsets_.at(subtype, p) +
              cfg_.sigma * rng.gaussian();
  return s;
}

Tensor World::render_video(const Tensor& latent, double uv_val, double uv_aro,
                           Rng* noise) const {
  Tensor out({cfg_.frames, cfg_.d_raw_v});
  for (int f = 0; f < cfg_.frames; ++f)
    for (int j = 0; j < cfg_.d_raw_v; ++j) {
      double s = 0.0;
      int row = f * cfg_.d_raw_v + j;
      for (int p = 0; p < cfg_.latent_dim; ++p)
        s += map_v_.at(row, p) * latent.at(p);
      double e = cfg_.emo_gain *
                 (emo_v_.at(j, 0) * uv_val + emo_v_.at(j, 1) * uv_aro);
      double n = noise ? cfg_.feat_noise * noise->gaussian() : 0.0;
      out.at(f, j) = std::tanh(s) + e + n;
    }
  return out;
}

Tensor World::render_audio(const Tensor& latent, double ua_val, double ua_aro,
                           Rng* noise) const {
  Tensor out({cfg_.audio_steps, cfg_.d_raw_a});
  for (int f = 0; f < cfg_.audio_steps; ++f)
    for (int j = 0; j < cfg_.d_raw_a; ++j) {
      double s = 0.0;
      int row = f * cfg_.d_raw_a + j;
      for (int p = 0; p < cfg_.latent_dim; ++p)
        s += map_a_.at(row, p) * latent.at(p);
      double e = cfg_.emo_gain *
                 (emo_a_.at(j, 0) * ua_val + emo_a_.at(j, 1) * ua_aro);
      double n = noise ? cfg_.feat_noise * noise->gaussian() : 0.0;
      out.at(f, j) = std::tanh(s) + e + n;
    }
  return out;
}

Tensor World::class_video_centroid(int cls) const {
  Tensor latent({cfg_.latent_dim});
  for (int p = 0; p < cfg_.latent_dim; ++p) latent.at(p) = centers_.at(cls, p);
  return render_video(latent, 0.0, 0.0, nullptr);
}

Tensor World::class_audio_centroid(int cls) const {
  Tensor latent({cfg_.latent_dim});
  for (int p = 0; p < cfg_.latent_dim; ++p) latent.at(p) = centers_.at(cls, p);
  return render_audio(latent, 0.0, 0.0, nullptr);
}

namespace {
double clamp1(double x) { return std::max(-1.0, std::min(1.0, x)); }

// emotion factors stay away from sign boundaries so quadrants are crisp
double sample_factor(Rng& rng) {
  for (;;) {
    double u = rng.uniform(-1.0, 1.0);
    if (std::abs(u) >= 0.3) return u;
  }
}

// keep the pathway label's arousal clear of the bin edges
double sample_arousal_factor(Rng& rng, double alpha) {
  for (;;) {
    double u = sample_factor(rng);
    double y = clamp1(alpha * u);
    double d = std::min({std::abs(y + 0.5), std::abs(y), std::abs(y - 0.5)});
    if (d > 0.05) return u;
  }
}
}  // namespace

World::LabelSet World::labels_for(double ua_val, double ua_aro, double uv_val,
                                  double uv_aro) const {
  LabelSet ls;
  ls.a = {clamp1(cfg_.alpha_a * ua_val), clamp1(cfg_.alpha_a * ua_aro)};
  ls.v = {clamp1(cfg_.alpha_v * uv_val), clamp1(cfg_.alpha_v * uv_aro)};
  ls.av = {clamp1((cfg_.alpha_a * ua_val + cfg_.alpha_v * uv_val +
                   cfg_.alpha_x * ua_val * uv_val) /
                  cfg_.av_norm),
           clamp1((cfg_.alpha_a * ua_aro + cfg_.alpha_v * uv_aro +
                   cfg_.alpha_x * ua_aro * uv_aro) /
                  cfg_.av_norm)};
  ls.cross = {clamp1(ua_val * uv_val), clamp1(ua_aro * uv_aro)};
  return ls;
}

ClipSample World::base_clip(Rng& rng, long long id) const {
  ClipSample c;
  c.id = id;
  c.scene_class = rng.uniform_int(cfg_.n_classes);
  c.subtype = rng.uniform_int(cfg_.n_subtypes);
  c.ua_val = sample_factor(rng);
  c.ua_aro = sample_arousal_factor(rng, cfg_.alpha_a);
  c.uv_val = sample_factor(rng);
  c.uv_aro = sample_arousal_factor(rng, cfg_.alpha_v);
  Tensor latent = sample_latent(rng, c.scene_class, c.subtype);
  c.video = render_video(latent, c.uv_val, c.uv_aro, &rng);
  c.audio = render_audio(latent, c.ua_val, c.ua_aro, &rng);
  return c;
}

ClipSample World::paired_clip(Rng& rng, long long id) const {
  ClipSample c = base_clip(rng, id);
  c.instr_modality = Modality::Video;
  bool content = rng.uniform() < 0.5;
  c.instruction = {content ? tok::kAskContent : tok::kAskSubtype};
  c.answer = {content ? tok::kClassBase + c.scene_class
                      : tok::kSubtypeBase + c.subtype,
              tok::kEos};
  return c;
}

ClipSample World::emotion_clip(Rng& rng, long long id) const {
  ClipSample c = base_clip(rng, id);
  LabelSet ls = labels_for(c.ua_val, c.ua_aro, c.uv_val, c.uv_aro);
  // joint questions are the hard case; oversample them (and the cross
  // question inside them) so the batch mix matches task difficulty
  double pu = rng.uniform();
  int path = pu < 0.25 ? 0 : pu < 0.5 ? 1 : 2;  // 0=a, 1=v, 2=av
  if (path == 0 || path == 1) {
    const VALabel& y = path == 0 ? ls.a : ls.v;
    c.instr_modality = path == 0 ? Modality::Audio : Modality::Video;
    bool overall = rng.uniform() < 0.5;
    c.instruction = {overall ? tok::kAskEmotion : tok::kAskArousal};
    c.answer = {overall ? tok::kQuadBase + tok::quadrant(y.valence, y.arousal)
                        : tok::kBinBase + tok::arousal_bin(y.arousal),
                tok::kEos};
  } else {
    c.instr_modality = Modality::AudioVisual;
    double qu = rng.uniform();
    int q = qu < 0.2 ? 0 : qu < 0.4 ? 1 : qu < 0.6 ? 2 : 3;
    static constexpr int kQ[4] = {tok::kAskEmotion, tok::kAskEmotionAudio,
                                  tok::kAskEmotionVideo, tok::kAskEmotionCross};
    const VALabel* y = q == 0 ? &ls.av : q == 1 ? &ls.a : q == 2 ? &ls.v
                                                                 : &ls.cross;
    c.instruction = {kQ[q]};
    c.answer = {tok::kQuadBase + tok::quadrant(y->valence, y->arousal),
                tok::kEos};
  }
  // full label set most of the time; occasional singletons exercise masking
  if (rng.uniform() < 0.7) {
    c.labels.a = ls.a;
    c.labels.v = ls.v;
    c.labels.av = ls.av;
  } else {
    int which = rng.uniform_int(3);
    if (which == 0) c.labels.a = ls.a;
    else if (which == 1) c.labels.v = ls.v;
    else c.labels.av = ls.av;
  }
  return c;
}

ClipSample World::instruction_clip(Rng& rng, long long id) const {
  ClipSample c = base_clip(rng, id);
  c.instr_modality = rng.uniform() < 0.5 ? Modality::Audio : Modality::Video;
  bool content = rng.uniform() < 0.5;
  c.instruction = {content ? tok::kAskContent : tok::kAskSubtype};
  c.answer = {content ? tok::kClassBase + c.scene_class
                      : tok::kSubtypeBase + c.subtype,
              tok::kEos};
  return c;
}

std::vector<BenchmarkItem> World::build_benchmark(int n_items,
                                                  uint64_t seed) const {
  struct Cell {
    Modality m;
    Category c;
  };
  static const std::vector<Cell> cells = {
      {Modality::Audio, Category::OC},       {Modality::Audio, Category::OE},
      {Modality::Audio, Category::SC},       {Modality::Audio, Category::SE},
      {Modality::Video, Category::OC},       {Modality::Video, Category::OE},
      {Modality::Video, Category::SC},       {Modality::Video, Category::SE},
      {Modality::AudioVisual, Category::SpA}, {Modality::AudioVisual, Category::SpV},
      {Modality::AudioVisual, Category::SpAV}, {Modality::AudioVisual, Category::OE}};
  int nc = static_cast<int>(cells.size());
  // remainder items pad the leading cells, in cell order
  std::vector<BenchmarkItem> items;
  long long next_id = 0;
  for (int ci = 0; ci < nc; ++ci) {
    int count = n_items / nc + (ci < n_items % nc ? 1 : 0);
    for (int k = 0; k < count; ++k) {
      Rng rng(Rng::derive(seed, static_cast<uint64_t>(next_id) + 1));
      ClipSample clip = base_clip(rng, next_id);
      LabelSet ls = labels_for(clip.ua_val, clip.ua_aro, clip.uv_val, clip.uv_aro);
      BenchmarkItem it;
      it.id = next_id++;
      it.modality = cells[static_cast<size_t>(ci)].m;
      it.category = cells[static_cast<size_t>(ci)].c;
      if (it.modality != Modality::Audio) it.video = clip.video;
      if (it.modality != Modality::Video) it.audio = clip.audio;

      int correct_token = 0;
      switch (it.category) {
        case Category::OC:
          it.question = {tok::kAskContent};
          correct_token = tok::kClassBase + clip.scene_class;
          break;
        case Category::SC:
          it.question = {tok::kAskSubtype};
          correct_token = tok::kSubtypeBase + clip.subtype;
          break;
        case Category::OE: {
          it.question = {tok::kAskEmotion};
          const VALabel& y = it.modality == Modality::Audio  ? ls.a
                             : it.modality == Modality::Video ? ls.v
                                                              : ls.av;
          correct_token = tok::kQuadBase + tok::quadrant(y.valence, y.arousal);
          break;
        }
        case Category::SE: {
          it.question = {tok::kAskArousal};
          const VALabel& y = it.modality == Modality::Audio ? ls.a : ls.v;
          correct_token = tok::kBinBase + tok::arousal_bin(y.arousal);
          break;
        }
        case Category::SpA:
          it.question = {tok::kAskEmotionAudio};
          correct_token = tok::kQuadBase + tok::quadrant(ls.a.valence, ls.a.arousal);
          break;
        case Category::SpV:
          it.question = {tok::kAskEmotionVideo};
          correct_token = tok::kQuadBase + tok::quadrant(ls.v.valence, ls.v.arousal);
          break;
        case Category::SpAV:
          it.question = {tok::kAskEmotionCross};
          correct_token =
              tok::kQuadBase + tok::quadrant(ls.cross.valence, ls.cross.arousal);
          break;
      }

      // assemble four options
      std::vector<int> opts;
      if (it.category == Category::OC) {
        opts.push_back(correct_token);
        while (opts.size() < 4) {
          int cand = tok::kClassBase + rng.uniform_int(cfg_.n_classes);
          if (std::find(opts.begin(), opts.end(), cand) == opts.end())
            opts.push_back(cand);
        }
      } else {
        int base = it.category == Category::SC ? tok::kSubtypeBase
                   : it.category == Category::SE ? tok::kBinBase
                                                 : tok::kQuadBase;
        for (int j = 0; j < 4; ++j) opts.push_back(base + j);
      }
      rng.shuffle(opts);
      it.options = opts;
      it.correct = static_cast<int>(
          std::find(opts.begin(), opts.end(), correct_token) - opts.begin());
      items.push_back(std::move(it));
    }
  }
  return items;
}

// ---- JSONL ----

namespace {

json tensor_to_json(const Tensor& t) {
  json j;
  j["shape"] = t.shape;
  j["data"] = t.data;
  return j;
}

Tensor tensor_from_json(const json& j) {
  std::vector<int> shape = j.at("shape").get<std::vector<int>>();
  std::vector<double> data = j.at("data").get<std::vector<double>>();
  return Tensor(std::move(shape), std::move(data));
}

json label_to_json(const VALabel& y) { return json::array({y.valence, y.arousal}); }

VALabel label_from_json(const json& j) {
  VALabel y{j.at(0).get<double>(), j.at(1).get<double>()};
  y.validate();
  return y;
}

template <typename Fn>
void read_jsonl(const std::string& path, const std::string& schema, Fn&& per_line) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::string line;
  long long lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": malformed line: " + e.what());
    }
    if (j.value("schema", "") != schema)
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": schema mismatch (want " + schema + ")");
    try {
      per_line(j);
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " +
                               e.what());
    }
  }
}

}  // namespace

void save_clips(const std::string& path, const std::vector<ClipSample>& clips) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  for (const ClipSample& c : clips) {
    json j;
    j["schema"] = "clips.v1";
    j["id"] = c.id;
    j["class"] = c.scene_class;
    j["subtype"] = c.subtype;
    j["ua"] = json::array({c.ua_val, c.ua_aro});
    j["uv"] = json::array({c.uv_val, c.uv_aro});
    j["modality"] = modality_name(c.instr_modality);
    j["video"] = tensor_to_json(c.video);
    j["audio"] = tensor_to_json(c.audio);
    j["instr"] = c.instruction;
    j["answer"] = c.answer;
    json labels = json::object();
    if (c.labels.a) labels["a"] = label_to_json(*c.labels.a);
    if (c.labels.v) labels["v"] = label_to_json(*c.labels.v);
    if (c.labels.av) labels["av"] = label_to_json(*c.labels.av);
    j["labels"] = labels;
    f << j.dump() << "\n";
  }
}

std::vector<ClipSample> load_clips(const std::string& path) {
  std::vector<ClipSample> out;
  read_jsonl(path, "clips.v1", [&](const json& j) {
    ClipSample c;
    c.id = j.at("id").get<long long>();
    c.scene_class = j.at("class").get<int>();
    c.subtype = j.at("subtype").get<int>();
    c.ua_val = j.at("ua").at(0).get<double>();
    c.ua_aro = j.at("ua").at(1).get<double>();
    c.uv_val = j.at("uv").at(0).get<double>();
    c.uv_aro = j.at("uv").at(1).get<double>();
    c.instr_modality = modality_from_name(j.at("modality").get<std::string>());
    c.video = tensor_from_json(j.at("video"));
    c.audio = tensor_from_json(j.at("audio"));
    c.instruction = j.at("instr").get<std::vector<int>>();
    c.answer = j.at("answer").get<std::vector<int>>();
    const json& labels = j.at("labels");
    if (labels.contains("a")) c.labels.a = label_from_json(labels.at("a"));
    if (labels.contains("v")) c.labels.v = label_from_json(labels.at("v"));
    if (labels.contains("av")) c.labels.av = label_from_json(labels.at("av"));
    out.push_back(std::move(c));
  });
  return out;
}

void save_benchmark(const std::string& path,
                    const std::vector<BenchmarkItem>& items) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  for (const BenchmarkItem& it : items) {
    json j;
    j["schema"] = "bench.v1";
    j["id"] = it.id;
    j["modality"] = modality_name(it.modality);
    j["category"] = category_name(it.category);
    j["video"] = it.video.numel() ? tensor_to_json(it.video) : json(nullptr);
    j["audio"] = it.audio.numel() ? tensor_to_json(it.audio) : json(nullptr);
    j["question"] = it.question;
    j["options"] = it.options;
    j["correct"] = it.correct;
    f << j.dump() << "\n";
  }
}

std::vector<BenchmarkItem> load_benchmark(const std::string& path) {
  std::vector<BenchmarkItem> out;
  read_jsonl(path, "bench.v1", [&](const json& j) {
    BenchmarkItem it;
    it.id = j.at("id").get<long long>();
    it.modality = modality_from_name(j.at("modality").get<std::string>());
    it.category = category_from_name(j.at("category").get<std::string>());
    if (!j.at("video").is_null()) it.video = tensor_from_json(j.at("video"));
    if (!j.at("audio").is_null()) it.audio = tensor_from_json(j.at("audio"));
    it.question = j.at("question").get<std::vector<int>>();
    it.options = j.at("options").get<std::vector<int>>();
    it.correct = j.at("correct").get<int>();
    if (it.options.size() != 4)
      throw std::runtime_error("benchmark item must have exactly 4 options");
    if (it.correct < 0 || it.correct >= 4)
      throw std::runtime_error("benchmark correct index out of range");
    out.push_back(std::move(it));
  });
  return out;
}

}  // namespace avemo

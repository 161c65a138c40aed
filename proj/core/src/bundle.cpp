#include "avemo/bundle.hpp"

#include "avemo/checkpoint.hpp"

namespace avemo {

using nlohmann::json;

BundleConfig BundleConfig::defaults(const WorldConfig& world) {
  BundleConfig c;
  c.frames = world.frames;
  c.d_raw_v = world.d_raw_v;
  c.audio_steps = world.audio_steps;
  c.d_raw_a = world.d_raw_a;
  return c;
}

json BundleConfig::to_json() const {
  json j;
  j["lm"] = {{"vocab_size", lm.vocab_size}, {"d_model", lm.d_model},
             {"n_layers", lm.n_layers},     {"n_heads", lm.n_heads},
             {"max_seq_len", lm.max_seq_len}, {"rope_base", lm.rope_base}};
  j["l_v"] = l_v;
  j["t_a"] = t_a;
  j["d_a"] = d_a;
  j["frames"] = frames;
  j["d_raw_v"] = d_raw_v;
  j["audio_steps"] = audio_steps;
  j["d_raw_a"] = d_raw_a;
  j["seed"] = seed;
  j["has_adapter"] = has_adapter;
  j["has_lora"] = has_lora;
  j["has_enhancer"] = has_enhancer;
  j["has_supervisor"] = has_supervisor;
  j["lora_rank"] = lora_rank;
  j["lora_alpha"] = lora_alpha;
  j["adapter_gelu"] = adapter_gelu;
  return j;
}

BundleConfig BundleConfig::from_json(const json& j) {
  BundleConfig c;
  const json& lm = j.at("lm");
  c.lm.vocab_size = lm.at("vocab_size").get<int>();
  c.lm.d_model = lm.at("d_model").get<int>();
  c.lm.n_layers = lm.at("n_layers").get<int>();
  c.lm.n_heads = lm.at("n_heads").get<int>();
  c.lm.max_seq_len = lm.at("max_seq_len").get<int>();
  c.lm.rope_base = lm.at("rope_base").get<double>();
  c.l_v = j.at("l_v").get<int>();
  c.t_a = j.at("t_a").get<int>();
  c.d_a = j.at("d_a").get<int>();
  c.frames = j.at("frames").get<int>();
  c.d_raw_v = j.at("d_raw_v").get<int>();
  c.audio_steps = j.at("audio_steps").get<int>();
  c.d_raw_a = j.at("d_raw_a").get<int>();
  c.seed = j.at("seed").get<uint64_t>();
  c.has_adapter = j.at("has_adapter").get<bool>();
  c.has_lora = j.at("has_lora").get<bool>();
  c.has_enhancer = j.at("has_enhancer").get<bool>();
  c.has_supervisor = j.at("has_supervisor").get<bool>();
  c.lora_rank = j.at("lora_rank").get<int>();
  c.lora_alpha = j.at("lora_alpha").get<double>();
  c.adapter_gelu = j.at("adapter_gelu").get<bool>();
  return c;
}

ModelBundle ModelBundle::build(const BundleConfig& cfg) {
  // T_a != L_v and d_a != d_model by construction: the adapter must do real
  // sequence and channel work
  if (cfg.t_a == cfg.l_v)
    throw std::invalid_argument("BundleConfig: t_a must differ from l_v");
  if (cfg.d_a == cfg.lm.d_model)
    throw std::invalid_argument("BundleConfig: d_a must differ from d_model");
  ModelBundle b;
  b.cfg_ = cfg;
  b.lm_ = ToyLM::init(b.store_, cfg.lm, Rng::derive(cfg.seed, 1));
  b.vis_ = VisionEncoder(b.store_, cfg.frames, cfg.d_raw_v, cfg.l_v,
                         cfg.lm.d_model, Rng::derive(cfg.seed, 2));
  b.aud_ = AudioEncoder(b.store_, cfg.audio_steps, cfg.d_raw_a, cfg.t_a,
                        cfg.d_a, Rng::derive(cfg.seed, 3));
  if (cfg.has_adapter) {
    AudioAdapter::Shape sh{cfg.t_a, cfg.d_a, cfg.l_v, cfg.lm.d_model};
    b.adapter_ = AudioAdapter::init(b.store_, sh, Rng::derive(cfg.seed, 4),
                                    0.02, cfg.adapter_gelu);
  }
  if (cfg.has_lora) b.lm_.lora_wrap(b.store_, cfg.lora_rank, cfg.lora_alpha);
  if (cfg.has_enhancer)
    b.enhancer_ = Enhancer::init(b.store_, cfg.lm.d_model, Rng::derive(cfg.seed, 5));
  if (cfg.has_supervisor)
    b.supervisor_ =
        Supervisor::init(b.store_, cfg.lm.d_model, Rng::derive(cfg.seed, 6));
  return b;
}

ModelBundle ModelBundle::load(const std::string& checkpoint_path) {
  json echo = read_checkpoint_config(checkpoint_path);
  ModelBundle b = build(BundleConfig::from_json(echo.at("bundle")));
  load_checkpoint(checkpoint_path, b.store_);
  return b;
}

const AudioAdapter& ModelBundle::adapter() const {
  if (!adapter_) throw std::logic_error("bundle has no audio adapter");
  return *adapter_;
}

const Enhancer& ModelBundle::enhancer() const {
  if (!enhancer_) throw std::logic_error("bundle has no enhancer");
  return *enhancer_;
}

const Supervisor& ModelBundle::supervisor() const {
  if (!supervisor_) throw std::logic_error("bundle has no supervisor");
  return *supervisor_;
}

bool ModelBundle::supports(Modality m) const {
  return m == Modality::Video || cfg_.has_adapter;
}

Var ModelBundle::raw_tokens(ParamCtx& ctx, Modality m, const Tensor* video,
                            const Tensor* audio) const {
  Tape& t = ctx.tape;
  auto video_tok = [&] {
    if (!video) throw std::invalid_argument("raw_tokens: missing video");
    return t.constant(vis_.encode(*video));
  };
  auto audio_tok = [&] {
    if (!audio) throw std::invalid_argument("raw_tokens: missing audio");
    if (!adapter_) throw std::logic_error("raw_tokens: no audio adapter");
    return adapter_->adapt(ctx, t.constant(aud_.encode(*audio)));
  };
  switch (m) {
    case Modality::Video: return video_tok();
    case Modality::Audio: return audio_tok();
    case Modality::AudioVisual: return fuse(t, audio_tok(), video_tok());
  }
  throw std::logic_error("raw_tokens: bad modality");
}

Var ModelBundle::tokens(ParamCtx& ctx, Modality m, const Tensor* video,
                        const Tensor* audio) const {
  Var z = raw_tokens(ctx, m, video, audio);
  if (enhancer_) z = enhancer_->enhance(ctx, z);
  return z;
}

int ModelBundle::span_len(Modality m) const {
  return m == Modality::AudioVisual ? 2 * cfg_.l_v : cfg_.l_v;
}

PromptLayout ModelBundle::make_layout(Modality m,
                                      const std::vector<int>& question,
                                      const std::vector<int>& response) const {
  PromptLayout lay;
  lay.pre_tokens = {tok::kBos};
  lay.span_len = span_len(m);
  lay.post_tokens = question;
  lay.response = response;
  return lay;
}

void ModelBundle::save(const std::string& path, const json& extra_config) const {
  json echo = extra_config.is_null() ? json::object() : extra_config;
  echo["bundle"] = cfg_.to_json();
  save_checkpoint(path, store_, echo);
}

}  // namespace avemo

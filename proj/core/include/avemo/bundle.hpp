#pragma once

#include <optional>

#include "json.hpp"

#include "avemo/adapter.hpp"
#include "avemo/emo.hpp"
#include "avemo/encoders.hpp"
#include "avemo/model.hpp"
#include "avemo/world.hpp"

namespace avemo {

/// Everything needed to rebuild a model's parameter skeleton from a
/// checkpoint's config echo.
struct BundleConfig {
  ToyLMConfig lm;
  int l_v = 8;
  int t_a = 13;
  int d_a = 24;
  int frames = 4, d_raw_v = 16;
  int audio_steps = 6, d_raw_a = 16;
  uint64_t seed = 7;
  bool has_adapter = true;
  bool has_lora = false;
  bool has_enhancer = false;
  bool has_supervisor = false;
  int lora_rank = 4;
  double lora_alpha = 8.0;
  bool adapter_gelu = true;

  static BundleConfig defaults(const WorldConfig& world);
  nlohmann::json to_json() const;
  static BundleConfig from_json(const nlohmann::json& j);
};

/// The assembled system: frozen encoders, the shared LM, and whichever
/// adapters the configuration enables. Owns every parameter.
class ModelBundle {
 public:
  static ModelBundle build(const BundleConfig& cfg);
  static ModelBundle load(const std::string& checkpoint_path);

  ModelBundle(ModelBundle&&) = default;
  ModelBundle& operator=(ModelBundle&&) = default;

  const BundleConfig& config() const { return cfg_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }
  ToyLM& lm() { return lm_; }
  const ToyLM& lm() const { return lm_; }
  const VisionEncoder& vision() const { return vis_; }
  const AudioEncoder& audio() const { return aud_; }
  const AudioAdapter& adapter() const;
  const Enhancer& enhancer() const;
  const Supervisor& supervisor() const;
  bool has_adapter() const { return cfg_.has_adapter; }
  bool has_enhancer() const { return cfg_.has_enhancer; }
  bool has_supervisor() const { return cfg_.has_supervisor; }

  bool supports(Modality m) const;

  /// Raw (pre-enhancer) pathway tokens in the LM token space.
  Var raw_tokens(ParamCtx& ctx, Modality m, const Tensor* video,
                 const Tensor* audio) const;

  /// Pathway tokens as the LM consumes them: raw tokens, passed through the
  /// shared enhancer when one is configured.
  Var tokens(ParamCtx& ctx, Modality m, const Tensor* video,
             const Tensor* audio) const;

  /// Span length the layout reserves for a modality.
  int span_len(Modality m) const;

  /// [BOS][span][question][response] layout.
  PromptLayout make_layout(Modality m, const std::vector<int>& question,
                           const std::vector<int>& response) const;

  void save(const std::string& path,
            const nlohmann::json& extra_config = {}) const;

 private:
  ModelBundle() = default;
  BundleConfig cfg_;
  ParamStore store_;
  ToyLM lm_;
  VisionEncoder vis_;
  AudioEncoder aud_;
  std::optional<AudioAdapter> adapter_;
  std::optional<Enhancer> enhancer_;
  std::optional<Supervisor> supervisor_;
};

}  // namespace avemo

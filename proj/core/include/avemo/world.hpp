#pragma once

#include <optional>
#include <string>
#include <vector>

#include "avemo/rng.hpp"
#include "avemo/tensor.hpp"
#include "avemo/vocab.hpp"

namespace avemo {

enum class Modality { Audio, Video, AudioVisual };

std::string modality_name(Modality m);
Modality modality_from_name(const std::string& s);

/// (valence, arousal), both in [-1, 1].
struct VALabel {
  double valence = 0.0;
  double arousal = 0.0;
  void validate() const;
};

/// Per-pathway optional labels; the set M of Eq-style masking.
struct ModalityLabelSet {
  std::optional<VALabel> a, v, av;
  int count() const { return (a ? 1 : 0) + (v ? 1 : 0) + (av ? 1 : 0); }
};

struct WorldConfig {
  int n_classes = tok::kNumClasses;
  int n_subtypes = tok::kNumSubtypes;
  int latent_dim = 8;       // class/subtype latent dims
  double sigma = 0.05;      // latent noise stddev
  double feat_noise = 0.02; // raw-feature noise stddev
  int frames = 4;           // F
  int d_raw_v = 16;
  int audio_steps = 6;      // S
  int d_raw_a = 16;
  double alpha_a = 0.9;
  double alpha_v = 0.9;
  double alpha_x = 3.0;   // cross-term weight; joint labels are not a
                          // function of either unimodal label when != 0
  double av_norm = 2.4;
  double emo_gain = 1.2;  // amplitude of emotion factors in raw features
  uint64_t seed = 1;

  void validate() const;
  void save(const std::string& path) const;
  static WorldConfig load(const std::string& path);
};

/// One synchronized synthetic audio/video pair.
struct ClipSample {
  long long id = 0;
  Tensor video;  // [F, d_raw_v]
  Tensor audio;  // [S, d_raw_a]
  // latent scene record (held out of training)
  int scene_class = 0;
  int subtype = 0;
  double ua_val = 0, ua_aro = 0, uv_val = 0, uv_aro = 0;
  // instruction
  Modality instr_modality = Modality::Video;
  std::vector<int> instruction;  // question tokens (after the span)
  std::vector<int> answer;       // response tokens incl. EOS
  ModalityLabelSet labels;
};

enum class Category { OC, OE, SC, SE, SpA, SpV, SpAV };

std::string category_name(Category c);
Category category_from_name(const std::string& s);

/// One four-option multiple-choice question, self-contained (carries its
/// clip's raw features).
struct BenchmarkItem {
  long long id = 0;
  Modality modality = Modality::Video;
  Category category = Category::OC;
  Tensor video;  // present unless audio-only
  Tensor audio;  // present unless video-only
  std::vector<int> question;
  std::vector<int> options;  // 4 single-token options
  int correct = 0;
};

/// Fixed random maps from latent scene state to raw features, plus the
/// label-generating coefficients.
class World {
 public:
  World() = default;
  static World generate(const WorldConfig& cfg, uint64_t seed);

  const WorldConfig& config() const { return cfg_; }

  ClipSample paired_clip(Rng& rng, long long id) const;        // stage 1
  ClipSample emotion_clip(Rng& rng, long long id) const;       // stage 2
  ClipSample instruction_clip(Rng& rng, long long id) const;   // stage 2 plain

  std::vector<BenchmarkItem> build_benchmark(int n_items, uint64_t seed) const;

  /// Exact (noise-free) raw features of a class centroid; the
  /// nearest-centroid oracle in tests classifies against these.
  Tensor class_video_centroid(int cls) const;
  Tensor class_audio_centroid(int cls) const;

  const Tensor& class_centers() const { return centers_; }

  struct LabelSet {
    VALabel a, v, av;
    VALabel cross;  // quadrant source for Sp-AV questions
  };
  LabelSet labels_for(double ua_val, double ua_aro, double uv_val,
                      double uv_aro) const;

 private:
  WorldConfig cfg_;
  Tensor centers_;          // [n_classes, latent_dim]
  Tensor subtype_offsets_;  // [n_subtypes, latent_dim]
  Tensor map_v_;            // [F*d_raw_v, latent_dim]
  Tensor map_a_;            // [S*d_raw_a, latent_dim]
  Tensor emo_v_;            // [d_raw_v, 2] injection of u_v
  Tensor emo_a_;            // [d_raw_a, 2] injection of u_a

  Tensor render_video(const Tensor& latent, double uv_val, double uv_aro,
                      Rng* noise) const;
  Tensor render_audio(const Tensor& latent, double ua_val, double ua_aro,
                      Rng* noise) const;
  Tensor sample_latent(Rng& rng, int cls, int subtype) const;
  ClipSample base_clip(Rng& rng, long long id) const;
};

// ---- JSONL serialization (schemas clips.v1 / bench.v1) ----

void save_clips(const std::string& path, const std::vector<ClipSample>& clips);
std::vector<ClipSample> load_clips(const std::string& path);

void save_benchmark(const std::string& path,
                    const std::vector<BenchmarkItem>& items);
std::vector<BenchmarkItem> load_benchmark(const std::string& path);

}  // namespace avemo

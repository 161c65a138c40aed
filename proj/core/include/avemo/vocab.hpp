#pragma once

namespace avemo::tok {

// Fixed token layout of the synthetic world. Tokens are plain integer ids;
// there is no natural-language tokenizer.
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;

// Question tokens.
inline constexpr int kAskContent = 3;   // scene class
inline constexpr int kAskSubtype = 4;   // scene subtype
inline constexpr int kAskEmotion = 5;   // V-A quadrant of the span's pathway
inline constexpr int kAskArousal = 6;   // arousal bin of the span's pathway
inline constexpr int kAskEmotionAudio = 7;   // joint input, audio-only answer
inline constexpr int kAskEmotionVideo = 8;   // joint input, video-only answer
inline constexpr int kAskEmotionCross = 9;   // joint input, cross-term answer

// Answer token blocks.
inline constexpr int kClassBase = 10;    // kNumClasses tokens
inline constexpr int kNumClasses = 6;
inline constexpr int kSubtypeBase = 16;  // kNumSubtypes tokens
inline constexpr int kNumSubtypes = 4;
inline constexpr int kQuadBase = 20;     // 4 V-A quadrant tokens
inline constexpr int kBinBase = 24;      // 4 arousal-bin tokens

inline constexpr int kVocab = 32;

/// Quadrant index from (valence, arousal) signs: bit0 = valence >= 0,
/// bit1 = arousal >= 0.
inline int quadrant(double valence, double arousal) {
  return (valence >= 0.0 ? 1 : 0) | (arousal >= 0.0 ? 2 : 0);
}

/// Arousal bin over [-1,1] split into 4 equal intervals.
inline int arousal_bin(double arousal) {
  if (arousal < -0.5) return 0;
  if (arousal < 0.0) return 1;
  if (arousal < 0.5) return 2;
  return 3;
}

}  // namespace avemo::tok

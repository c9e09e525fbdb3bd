#pragma once

#include <string>

namespace scenepref {

// Symbolic attributes of a synthetic scene. The captioner talks about these;
// the judge and the downstream rule-reader look for the words naming them.
enum class Expression { smile = 0, frown = 1, neutral = 2 };
enum class Tone { flat = 0, exaggerated = 1 };
enum class Congruence { match = 0, mismatch = 1 };

struct SceneFeatures {
  Expression expression = Expression::neutral;
  Tone tone = Tone::flat;
  Congruence congruence = Congruence::match;
  int style = 0;  // presentation nuisance; carries no label information

  bool operator==(const SceneFeatures&) const = default;
};

const std::string& expression_word(Expression e);
const std::string& tone_word(Tone t);
const std::string& congruence_word(Congruence c);

Expression expression_from_word(const std::string& w);
Tone tone_from_word(const std::string& w);
Congruence congruence_from_word(const std::string& w);

// The two description words that count as sarcasm cues downstream.
inline constexpr const char* kToneCue = "exaggerated";
inline constexpr const char* kCongruenceCue = "mismatch";

// Label rule of the synthetic world: sarcastic iff the delivery is exaggerated
// while words and nonverbal cues disagree.
inline bool scene_is_sarcastic(const SceneFeatures& f) {
  return f.tone == Tone::exaggerated && f.congruence == Congruence::mismatch;
}

}  // namespace scenepref

#include "scenepref/scene.hpp"

#include "scenepref/errors.hpp"

namespace scenepref {

const std::string& expression_word(Expression e) {
  static const std::string words[] = {"smile", "frown", "neutral"};
  return words[static_cast<int>(e)];
}

const std::string& tone_word(Tone t) {
  static const std::string words[] = {"flat", "exaggerated"};
  return words[static_cast<int>(t)];
}

const std::string& congruence_word(Congruence c) {
  static const std::string words[] = {"match", "mismatch"};
  return words[static_cast<int>(c)];
}

Expression expression_from_word(const std::string& w) {
  if (w == "smile") return Expression::smile;
  if (w == "frown") return Expression::frown;
  if (w == "neutral") return Expression::neutral;
  throw ConfigError("unknown expression word \"" + w + "\"");
}

Tone tone_from_word(const std::string& w) {
  if (w == "flat") return Tone::flat;
  if (w == "exaggerated") return Tone::exaggerated;
  throw ConfigError("unknown tone word \"" + w + "\"");
}

Congruence congruence_from_word(const std::string& w) {
  if (w == "match") return Congruence::match;
  if (w == "mismatch") return Congruence::mismatch;
  throw ConfigError("unknown congruence word \"" + w + "\"");
}

}  // namespace scenepref

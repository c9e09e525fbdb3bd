#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace scenepref {

// The three preference-elicitation conditions.
enum class Condition { without_gt, with_gt, with_icl };

std::string to_string(Condition c);
Condition condition_from_string(const std::string& s);

// A worked example embedded in the with-ICL judge prompt.
struct IclExemplar {
  std::string description;
  std::vector<std::string> context;
  std::string utterance;
  int score = 0;  // 1 (clearly not sarcastic) or 10 (clearly sarcastic)
};

// Words used when the with-GT template names the gold label, and scanned for
// by the leakage guard everywhere else.
struct LabelWords {
  std::string positive = "sarcastic";
  std::string negative = "not sarcastic";
  std::string as_text(bool label) const { return label ? positive : negative; }
};

// "Previous conversation:" block. Empty context renders to the empty string;
// otherwise the block ends with a newline so the next line starts fresh.
std::string context_block(const std::vector<std::string>& context);

// Replaces every "{key}" with its value. Throws ConfigError if any {slot}
// token survives substitution (catches template/field drift).
std::string substitute(std::string tmpl, const std::map<std::string, std::string>& fields);

// Speaker tag of a "NAME: line" utterance, or "the speaker".
std::string speaker_of(const std::string& utterance);

// Throws LeakageError if the rendered prompt names the gold label or refers
// to ground truth. Applied to every prompt outside the with-GT condition.
void assert_no_label_leakage(const std::string& rendered, const LabelWords& words = {});

// Loads the template fixtures once and renders judge prompts from them.
// Rendering is pure string substitution; templates are never modified.
class PromptLibrary {
 public:
  explicit PromptLibrary(const std::filesystem::path& prompts_dir);

  // Raw bytes of a template fixture ("judge_without_gt", "eval_accuracy", ...).
  const std::string& template_text(const std::string& name) const;

  // The five captioning prompts, in fixture order.
  const std::vector<std::string>& diverse_prompts() const;

  // The two bundled worked examples (one scored 10, one scored 1).
  const std::vector<IclExemplar>& default_exemplars() const;

  // Sarcasm-likelihood prompt, no label shown.
  std::string render_without_gt(const std::string& description, const std::string& utterance,
                                const std::vector<std::string>& context) const;

  // Five-description helpfulness ranking prompt; the only render that sees the label.
  std::string render_with_gt(const std::vector<std::string>& descriptions,
                             const std::string& utterance,
                             const std::vector<std::string>& context, bool gt_label,
                             const LabelWords& words = {}) const;

  // Likelihood prompt with two worked examples ahead of the query.
  std::string render_with_icl(const std::string& description, const std::string& utterance,
                              const std::vector<std::string>& context,
                              const std::vector<IclExemplar>& exemplars) const;

  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  std::map<std::string, std::string> templates_;
  std::vector<std::string> diverse_prompts_;
  std::vector<IclExemplar> exemplars_;
};

}  // namespace scenepref

#include "scenepref/prompts.hpp"

#include <regex>

#include <nlohmann/json.hpp>

#include "scenepref/errors.hpp"
#include "scenepref/util.hpp"

namespace scenepref {

std::string to_string(Condition c) {
  switch (c) {
    case Condition::without_gt: return "without_gt";
    case Condition::with_gt: return "with_gt";
    case Condition::with_icl: return "with_icl";
  }
  throw ConfigError("invalid condition value");
}

Condition condition_from_string(const std::string& s) {
  if (s == "without_gt") return Condition::without_gt;
  if (s == "with_gt") return Condition::with_gt;
  if (s == "with_icl") return Condition::with_icl;
  throw ConfigError("unknown condition tag \"" + s + "\"");
}

std::string context_block(const std::vector<std::string>& context) {
  if (context.empty()) return "";
  return "Previous conversation:\n" + util::join(context, "\n") + "\n";
}

std::string substitute(std::string tmpl, const std::map<std::string, std::string>& fields) {
  for (const auto& [key, value] : fields) {
    const std::string slot = "{" + key + "}";
    std::size_t pos = 0;
    while ((pos = tmpl.find(slot, pos)) != std::string::npos) {
      tmpl.replace(pos, slot.size(), value);
      pos += value.size();
    }
  }
  static const std::regex leftover(R"(\{[a-z][a-z0-9_]*\})");
  std::smatch m;
  if (std::regex_search(tmpl, m, leftover)) {
    throw ConfigError("unresolved template slot " + m.str());
  }
  return tmpl;
}

std::string speaker_of(const std::string& utterance) {
  auto colon = utterance.find(':');
  if (colon == std::string::npos || colon == 0) return "the speaker";
  return utterance.substr(0, colon);
}

void assert_no_label_leakage(const std::string& rendered, const LabelWords& words) {
  const std::string haystack = util::lower(rendered);
  // "utterance is <label>" is how the with-GT template names the gold label;
  // the generic phrases catch leakage smuggled in through field values.
  const std::vector<std::string> forbidden = {
      "utterance is " + util::lower(words.positive),
      "utterance is " + util::lower(words.negative),
      "ground truth",
      "gold label",
  };
  for (const auto& phrase : forbidden) {
    if (haystack.find(phrase) != std::string::npos) {
      throw LeakageError("rendered prompt leaks the gold label (matched \"" + phrase + "\")");
    }
  }
}

PromptLibrary::PromptLibrary(const std::filesystem::path& prompts_dir) : dir_(prompts_dir) {
  for (const char* name : {"judge_without_gt", "judge_with_gt", "judge_with_icl",
                           "eval_accuracy", "eval_zero_shot_vlm"}) {
    templates_[name] = util::read_file(dir_ / (std::string(name) + ".txt"));
  }

  std::string diverse = util::read_file(dir_ / "diverse_prompts.txt");
  std::size_t start = 0;
  while (start < diverse.size()) {
    auto end = diverse.find('\n', start);
    if (end == std::string::npos) end = diverse.size();
    if (end > start) diverse_prompts_.emplace_back(diverse.substr(start, end - start));
    start = end + 1;
  }
  if (diverse_prompts_.size() != 5) {
    throw ConfigError("diverse_prompts.txt must contain exactly 5 prompts, found " +
                      std::to_string(diverse_prompts_.size()));
  }

  auto ex = nlohmann::json::parse(util::read_file(dir_ / "icl_exemplars.json"));
  for (const auto& e : ex.at("exemplars")) {
    IclExemplar x;
    x.description = e.at("description").get<std::string>();
    x.context = e.at("context").get<std::vector<std::string>>();
    x.utterance = e.at("utterance").get<std::string>();
    x.score = e.at("score").get<int>();
    if (x.score != 1 && x.score != 10) {
      throw ConfigError("exemplar score must be 1 or 10, found " + std::to_string(x.score));
    }
    exemplars_.push_back(std::move(x));
  }
  if (exemplars_.size() != 2) {
    throw ConfigError("icl_exemplars.json must contain exactly 2 exemplars");
  }
}

const std::string& PromptLibrary::template_text(const std::string& name) const {
  auto it = templates_.find(name);
  if (it == templates_.end()) throw ConfigError("unknown template \"" + name + "\"");
  return it->second;
}

const std::vector<std::string>& PromptLibrary::diverse_prompts() const { return diverse_prompts_; }

const std::vector<IclExemplar>& PromptLibrary::default_exemplars() const { return exemplars_; }

std::string PromptLibrary::render_without_gt(const std::string& description,
                                             const std::string& utterance,
                                             const std::vector<std::string>& context) const {
  std::string rendered = substitute(
      template_text("judge_without_gt"),
      {{"video_description", description},
       {"raw_utterance_text", "\n" + context_block(context) + "Utterance: " + utterance}});
  assert_no_label_leakage(rendered);
  return rendered;
}

std::string PromptLibrary::render_with_gt(const std::vector<std::string>& descriptions,
                                          const std::string& utterance,
                                          const std::vector<std::string>& context, bool gt_label,
                                          const LabelWords& words) const {
  if (descriptions.size() != 5) {
    throw ConfigError("with-GT ranking needs exactly 5 descriptions, got " +
                      std::to_string(descriptions.size()));
  }
  std::map<std::string, std::string> fields = {
      {"sarcasm_status", words.as_text(gt_label)},
      {"raw_utterance_text", context_block(context) + "Utterance: " + utterance + "\n"}};
  for (std::size_t i = 0; i < 5; ++i) {
    fields["description_" + std::to_string(i + 1)] = descriptions[i];
  }
  return substitute(template_text("judge_with_gt"), fields);
}

std::string PromptLibrary::render_with_icl(const std::string& description,
                                           const std::string& utterance,
                                           const std::vector<std::string>& context,
                                           const std::vector<IclExemplar>& exemplars) const {
  if (exemplars.size() != 2) {
    throw ConfigError("with-ICL prompt needs exactly 2 exemplars, got " +
                      std::to_string(exemplars.size()));
  }
  std::map<std::string, std::string> fields = {
      {"video_description", description},
      {"context_text", context_block(context)},
      {"raw_utterance_text", "Utterance: " + utterance}};
  for (std::size_t i = 0; i < 2; ++i) {
    const std::string p = "example_" + std::to_string(i + 1) + "_";
    fields[p + "description"] = exemplars[i].description;
    fields[p + "context"] = util::join(exemplars[i].context, "\n");
    fields[p + "utterance"] = exemplars[i].utterance;
    fields[p + "score"] = std::to_string(exemplars[i].score);
  }
  std::string rendered = substitute(template_text("judge_with_icl"), fields);
  assert_no_label_leakage(rendered);
  return rendered;
}

}  // namespace scenepref

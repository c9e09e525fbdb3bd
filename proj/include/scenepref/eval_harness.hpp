#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scenepref/captioner.hpp"
#include "scenepref/corpus.hpp"
#include "scenepref/judge.hpp"

namespace scenepref {

// What the downstream agent gets to see when classifying a sample.
enum class EvalMode { utterance_only, visual_only, multimodal, zero_shot_vlm };

std::string to_string(EvalMode m);
EvalMode eval_mode_from_string(const std::string& s);

// The two inference prompts compared in the prompt ablation.
inline constexpr const char* kInferencePromptP1 = "Describe the video in detail";
inline constexpr const char* kInferencePromptP2 =
    "Describe the speaker's nonverbal cues, the context, and any mismatches between them";

// "P1"/"P2" to full prompt text; throws ConfigError on other tags.
const std::string& inference_prompt_text(const std::string& tag);

struct EvalRecord {
  std::string sample_id;
  EvalMode mode = EvalMode::multimodal;
  std::string inference_prompt;  // "P1" or "P2"; empty when no description is used
  std::optional<int> agent_score;   // 1-10 modes
  std::optional<bool> agent_yesno;  // zero-shot mode
  bool predicted = false;
  bool gold = false;
};

struct Metrics {
  long tp = 0, fp = 0, fn = 0, tn = 0;
  double accuracy = 0.0;
  double precision = 0.0;  // 0 when tp+fp == 0
  double recall = 0.0;     // 0 when tp+fn == 0
};

// Renders the rating prompt for one sample. The description must be present
// exactly for the modes that see the video (visual_only, multimodal); the
// dialogue lines appear exactly for the modes that hear it (utterance_only,
// multimodal, zero_shot_vlm). Template lines whose slot has no content are
// dropped whole, so e.g. the visual-only prompt carries no empty "Context:"
// stub. Context renders as one " | "-joined line. The leakage guard runs on
// every rendered prompt.
std::string build_eval_prompt(const PromptLibrary& library, const Sample& sample,
                              const std::optional<std::string>& description, EvalMode mode);

// Rubric band boundary: 6-10 is sarcastic. Score must be in [1,10].
bool score_to_label(int score);

// First standalone yes/no token, case-insensitive; anything else is a parse
// error.
bool parse_yes_no(const std::string& reply);

// Confusion counts and derived ratios; zero denominators yield 0.
Metrics compute_metrics(const std::vector<EvalRecord>& records);

struct EvalResult {
  std::vector<EvalRecord> records;
  Metrics metrics;
  int excluded = 0;  // replies the parser rejected; never defaulted to a label
  EvalMode mode = EvalMode::multimodal;
  std::string inference_prompt;
  std::string checkpoint_tag;
};

// Evaluates one (mode, prompt, checkpoint) cell over a split. For the modes
// that see the video, each sample's description is decoded greedily from
// `policy` under the inference prompt; `policy` may be null for the other
// modes. Unparseable agent replies are excluded and counted.
EvalResult run_eval(const Manifest& split, EvalMode mode, const std::string& prompt_tag,
                    const std::string& checkpoint_tag, const ToyPolicy* policy,
                    const SceneResolver& scenes, Agent& agent, const PromptLibrary& library,
                    ReplyCache* cache = nullptr);

nlohmann::json eval_record_to_json(const EvalRecord& r);
EvalRecord eval_record_from_json(const nlohmann::json& j);
nlohmann::json metrics_to_json(const Metrics& m);

}  // namespace scenepref

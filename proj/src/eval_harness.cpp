#include "scenepref/eval_harness.hpp"

#include <cctype>
#include <sstream>

#include "scenepref/errors.hpp"
#include "scenepref/util.hpp"

namespace scenepref {

using nlohmann::json;

std::string to_string(EvalMode m) {
  switch (m) {
    case EvalMode::utterance_only: return "utterance_only";
    case EvalMode::visual_only: return "visual_only";
    case EvalMode::multimodal: return "multimodal";
    case EvalMode::zero_shot_vlm: return "zero_shot_vlm";
  }
  throw ConfigError("unknown eval mode");
}

EvalMode eval_mode_from_string(const std::string& s) {
  if (s == "utterance_only") return EvalMode::utterance_only;
  if (s == "visual_only") return EvalMode::visual_only;
  if (s == "multimodal") return EvalMode::multimodal;
  if (s == "zero_shot_vlm") return EvalMode::zero_shot_vlm;
  throw ConfigError("unknown eval mode: " + s);
}

const std::string& inference_prompt_text(const std::string& tag) {
  static const std::string p1 = kInferencePromptP1;
  static const std::string p2 = kInferencePromptP2;
  if (tag == "P1") return p1;
  if (tag == "P2") return p2;
  throw ConfigError("inference prompt tag must be P1 or P2, got \"" + tag + "\"");
}

namespace {

bool sees_video(EvalMode m) { return m == EvalMode::visual_only || m == EvalMode::multimodal; }
bool hears_dialogue(EvalMode m) {
  return m == EvalMode::utterance_only || m == EvalMode::multimodal ||
         m == EvalMode::zero_shot_vlm;
}

}  // namespace

std::string build_eval_prompt(const PromptLibrary& library, const Sample& sample,
                              const std::optional<std::string>& description, EvalMode mode) {
  if (description.has_value() != sees_video(mode)) {
    throw ConfigError("mode " + to_string(mode) +
                      (description ? " must not carry a description" : " needs a description"));
  }

  std::string rendered;
  if (mode == EvalMode::zero_shot_vlm) {
    std::vector<std::string> lines = sample.context;
    lines.push_back(sample.utterance);
    rendered = substitute(library.template_text("eval_zero_shot_vlm"),
                          {{"dialogue", "\n" + util::join(lines, "\n")},
                           {"speaker", speaker_of(sample.utterance)}});
  } else {
    std::map<std::string, std::string> fields;
    if (description) fields["description"] = *description;
    if (hears_dialogue(mode)) {
      fields["utterance"] = sample.utterance;
      if (!sample.context.empty()) fields["context"] = util::join(sample.context, " | ");
    }
    // Drop whole template lines whose slot has nothing to carry.
    std::istringstream in(library.template_text("eval_accuracy"));
    std::string line, kept;
    bool first = true;
    while (std::getline(in, line)) {
      bool drop = false;
      for (const char* slot : {"description", "context", "utterance"}) {
        if (line.find("{" + std::string(slot) + "}") != std::string::npos && !fields.count(slot)) {
          drop = true;
        }
      }
      if (drop) continue;
      if (!first) kept += '\n';
      kept += line;
      first = false;
    }
    kept += '\n';
    rendered = substitute(kept, fields);
  }
  assert_no_label_leakage(rendered);
  return rendered;
}

bool score_to_label(int score) {
  if (score < 1 || score > 10) {
    throw NumericError("score " + std::to_string(score) + " is outside the 1-10 rubric");
  }
  return score >= 6;
}

bool parse_yes_no(const std::string& reply) {
  for (const auto& raw : util::split_whitespace(reply)) {
    std::size_t b = 0, e = raw.size();
    while (b < e && !std::isalnum(static_cast<unsigned char>(raw[b]))) ++b;
    while (e > b && !std::isalnum(static_cast<unsigned char>(raw[e - 1]))) --e;
    const std::string token = util::lower(raw.substr(b, e - b));
    if (token == "yes") return true;
    if (token == "no") return false;
  }
  throw JudgeParseError("reply contains neither a yes nor a no", reply);
}

Metrics compute_metrics(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw EmptyInputError("cannot compute metrics over zero records");
  Metrics m;
  for (const auto& r : records) {
    if (r.predicted && r.gold) ++m.tp;
    else if (r.predicted && !r.gold) ++m.fp;
    else if (!r.predicted && r.gold) ++m.fn;
    else ++m.tn;
  }
  const double total = static_cast<double>(records.size());
  m.accuracy = static_cast<double>(m.tp + m.tn) / total;
  m.precision = (m.tp + m.fp) == 0 ? 0.0 : static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
  m.recall = (m.tp + m.fn) == 0 ? 0.0 : static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
  return m;
}

EvalResult run_eval(const Manifest& split, EvalMode mode, const std::string& prompt_tag,
                    const std::string& checkpoint_tag, const ToyPolicy* policy,
                    const SceneResolver& scenes, Agent& agent, const PromptLibrary& library,
                    ReplyCache* cache) {
  if (sees_video(mode) && policy == nullptr) {
    throw ConfigError("mode " + to_string(mode) + " needs a captioner policy");
  }
  if (split.samples.empty()) throw EmptyInputError("cannot evaluate an empty split");
  const std::string cache_tag = "eval:" + to_string(mode);

  EvalResult out;
  out.mode = mode;
  out.checkpoint_tag = checkpoint_tag;
  out.inference_prompt = sees_video(mode) ? prompt_tag : "";
  if (sees_video(mode)) inference_prompt_text(prompt_tag);  // validate early

  for (const auto& sample : split.samples) {
    std::optional<std::string> description;
    if (sees_video(mode)) {
      const SceneFeatures features = scenes.features(sample.scene_ref);
      const int pid = policy->prompt_id(inference_prompt_text(prompt_tag));
      description = policy->vocab().decode(policy->greedy_decode(pid, features));
    }
    const std::string prompt = build_eval_prompt(library, sample, description, mode);

    std::string reply;
    bool from_cache = false;
    if (cache != nullptr) {
      if (auto hit = cache->get(agent.id(), prompt)) {
        reply = std::move(*hit);
        from_cache = true;
      }
    }
    if (!from_cache) reply = agent.complete(prompt);

    EvalRecord record;
    record.sample_id = sample.id;
    record.mode = mode;
    record.inference_prompt = out.inference_prompt;
    record.gold = sample.label;
    try {
      if (mode == EvalMode::zero_shot_vlm) {
        record.agent_yesno = parse_yes_no(reply);
        record.predicted = *record.agent_yesno;
      } else {
        record.agent_score = parse_final_score(reply);
        record.predicted = score_to_label(*record.agent_score);
      }
    } catch (const JudgeParseError&) {
      ++out.excluded;  // never defaulted to a label
      continue;
    }
    if (!from_cache && cache != nullptr) {
      cache->put(agent.id(), prompt, reply, sample.id, cache_tag);
    }
    out.records.push_back(std::move(record));
  }

  out.metrics = compute_metrics(out.records);
  return out;
}

json eval_record_to_json(const EvalRecord& r) {
  json j{{"sample_id", r.sample_id},
         {"mode", to_string(r.mode)},
         {"inference_prompt", r.inference_prompt},
         {"predicted", r.predicted},
         {"gold", r.gold}};
  if (r.agent_score) j["agent_score"] = *r.agent_score;
  if (r.agent_yesno) j["agent_yesno"] = *r.agent_yesno ? "yes" : "no";
  return j;
}

EvalRecord eval_record_from_json(const json& j) {
  EvalRecord r;
  try {
    r.sample_id = j.at("sample_id").get<std::string>();
    r.mode = eval_mode_from_string(j.at("mode").get<std::string>());
    r.inference_prompt = j.at("inference_prompt").get<std::string>();
    r.predicted = j.at("predicted").get<bool>();
    r.gold = j.at("gold").get<bool>();
    if (j.contains("agent_score")) r.agent_score = j.at("agent_score").get<int>();
    if (j.contains("agent_yesno")) r.agent_yesno = j.at("agent_yesno").get<std::string>() == "yes";
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad eval record: ") + e.what());
  }
  if (r.agent_score.has_value() == r.agent_yesno.has_value()) {
    throw SchemaError("eval record for " + r.sample_id +
                      " must carry exactly one of agent_score / agent_yesno");
  }
  return r;
}

json metrics_to_json(const Metrics& m) {
  return json{{"tp", m.tp},       {"fp", m.fp},           {"fn", m.fn},
              {"tn", m.tn},       {"accuracy", m.accuracy}, {"precision", m.precision},
              {"recall", m.recall}};
}

}  // namespace scenepref

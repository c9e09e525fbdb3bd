#include "scenepref/judge.hpp"

#include <cstdlib>
#include <regex>
#include <sstream>

#include <nlohmann/json.hpp>

#include "scenepref/errors.hpp"
#include "scenepref/scene.hpp"
#include "scenepref/util.hpp"

#include "httplib.h"

namespace scenepref {

using nlohmann::json;

JudgeQuery make_judge_query(const std::string& description, const Sample& sample,
                            Condition condition) {
  JudgeQuery q;
  q.description = description;
  q.utterance = sample.utterance;
  q.context = sample.context;
  q.condition = condition;
  if (condition == Condition::with_gt) q.gt_label = sample.label;
  return q;
}

// ---------------------------------------------------------------------------
// ReplyCache

ReplyCache::ReplyCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::filesystem::path ReplyCache::key_path(const std::string& agent_id,
                                           const std::string& prompt) const {
  // One file per (agent, prompt). The 0x1f separator keeps
  // ("ab", "c") and ("a", "bc") from colliding.
  return dir_ / (util::fnv1a64_hex(agent_id + '\x1f' + prompt) + ".json");
}

std::optional<std::string> ReplyCache::get(const std::string& agent_id,
                                           const std::string& prompt) const {
  std::lock_guard<std::mutex> lock(mutex_);
  const auto path = key_path(agent_id, prompt);
  if (!std::filesystem::exists(path)) return std::nullopt;
  try {
    const json j = json::parse(util::read_file(path));
    return j.at("reply").get<std::string>();
  } catch (const std::exception&) {
    // A truncated or hand-edited entry is a miss, not a fatal error; the next
    // put overwrites it.
    return std::nullopt;
  }
}

void ReplyCache::put(const std::string& agent_id, const std::string& prompt,
                     const std::string& reply, const std::string& sample_id,
                     const std::string& condition_tag) {
  std::lock_guard<std::mutex> lock(mutex_);
  json j;
  j["agent_id"] = agent_id;
  j["prompt_fingerprint"] = util::fnv1a64_hex(prompt);
  j["sample_id"] = sample_id;
  j["condition"] = condition_tag;
  j["reply"] = reply;
  util::write_file_atomic(key_path(agent_id, prompt), j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// OracleAgent

namespace {

int clip_score(int s) { return s < 1 ? 1 : (s > 10 ? 10 : s); }

int cue_count(const std::string& text) {
  return (util::contains_keyword_word_start(text, kToneCue) ? 1 : 0) +
         (util::contains_keyword_word_start(text, kCongruenceCue) ? 1 : 0);
}

// Text of `prompt` from `from` up to the next newline (or the end).
std::string rest_of_line(const std::string& prompt, std::size_t from) {
  const auto eol = prompt.find('\n', from);
  return prompt.substr(from, eol == std::string::npos ? std::string::npos : eol - from);
}

// Line following the marker, or nullopt when the marker is absent.
std::optional<std::string> line_after(const std::string& prompt, const std::string& marker) {
  const auto pos = prompt.find(marker);
  if (pos == std::string::npos) return std::nullopt;
  return rest_of_line(prompt, pos + marker.size());
}

std::string final_score_reply(int score) {
  return "FINAL SCORE: " + std::to_string(score) + "\n";
}

}  // namespace

OracleAgent::OracleAgent(OracleJudgeConfig config, LabelWords words, std::string marker_word)
    : config_(config), words_(std::move(words)), marker_(std::move(marker_word)) {}

std::string OracleAgent::id() const {
  return "oracle:b" + std::to_string(config_.base_score) + "+" +
         std::to_string(config_.cue_bonus) + ":" + marker_;
}

std::string OracleAgent::complete(const std::string& prompt) {
  // Helpfulness ranking: five descriptions, label visible in the prompt.
  if (prompt.find("Please rank each description") != std::string::npos) {
    bool gt;
    if (prompt.find("utterance is " + words_.negative) != std::string::npos) {
      gt = false;
    } else if (prompt.find("utterance is " + words_.positive) != std::string::npos) {
      gt = true;
    } else {
      return "I cannot tell which label these descriptions should support.";
    }
    const auto head = prompt.find("Video Descriptions:\n");
    if (head == std::string::npos) return "I cannot find the descriptions.";
    std::istringstream lines(prompt.substr(head + std::string("Video Descriptions:\n").size()));
    std::ostringstream reply;
    std::string line;
    for (int k = 1; k <= 5; ++k) {
      if (!std::getline(lines, line)) return "I cannot find all five descriptions.";
      const std::string prefix = std::to_string(k) + ". ";
      if (line.rfind(prefix, 0) == 0) line = line.substr(prefix.size());
      const int cues = cue_count(line);
      // A description is helpful when its cues argue for the stated label:
      // cue words push the score up under "sarcastic" and down otherwise.
      const int raw = gt ? config_.base_score + config_.cue_bonus * cues
                         : config_.base_score - config_.cue_bonus * cues;
      reply << "Description " << k << ": " << clip_score(raw) << "\n";
    }
    return reply.str();
  }

  // Likelihood with worked examples: score the query description only.
  if (prompt.find("**Now you try**") != std::string::npos) {
    const auto tail = prompt.find("**Now you try**");
    const auto desc = line_after(prompt.substr(tail), "Video description: ");
    if (!desc) return "I cannot find the description to score.";
    return final_score_reply(clip_score(config_.base_score + config_.cue_bonus * cue_count(*desc)));
  }

  // Zero-shot verdict: sees dialogue only, so it can only go on the wording
  // of the utterances themselves.
  if (prompt.find("Answer with only 'yes' or 'no'") != std::string::npos) {
    const auto start = prompt.find("video:");
    auto end = prompt.find("\nConsidering");
    if (end == std::string::npos) end = prompt.size();
    const std::string dialogue =
        start == std::string::npos ? prompt : prompt.substr(start + 6, end - (start + 6));
    return util::contains_keyword_word_start(dialogue, marker_) ? "yes" : "no";
  }

  // Plain likelihood: description is inline after " is: ".
  if (prompt.find("Please rate the likelihood") != std::string::npos) {
    const auto at = prompt.find(" is: ");
    if (at == std::string::npos) return "I cannot find the description to score.";
    const auto from = at + 5;
    auto end = std::min(prompt.find("\nPrevious conversation:", from),
                        prompt.find("\nUtterance: ", from));
    if (end == std::string::npos) end = prompt.size();
    std::string desc = prompt.substr(from, end - from);
    if (!desc.empty() && desc.back() == '.') desc.pop_back();
    return final_score_reply(clip_score(config_.base_score + config_.cue_bonus * cue_count(desc)));
  }

  // Accuracy evaluation: score whatever evidence the prompt carries. A
  // description, when present, decides the verdict on its own; the utterance
  // wording is consulted only without one. That keeps the verdict pinned to
  // what the description actually says.
  if (prompt.find("Your job is to rate how likely the scene contains SARCASM") !=
      std::string::npos) {
    const auto desc = line_after(prompt, "Video description: ");
    const auto utt = line_after(prompt, "Target Utterance: ");
    int score;
    if (desc) {
      const int cues = cue_count(*desc);
      score = cues == 2 ? 9 : (cues == 1 ? 4 : 2);
    } else if (utt) {
      score = util::contains_keyword_word_start(*utt, marker_) ? 7 : 3;
    } else {
      score = 2;
    }
    return final_score_reply(score);
  }

  return "I do not recognize this request.";
}

// ---------------------------------------------------------------------------
// RemoteAgent

RemoteAgent::RemoteAgent(std::string endpoint, std::string token)
    : endpoint_(std::move(endpoint)), token_(std::move(token)) {
  if (endpoint_.empty()) {
    if (const char* env = std::getenv("SCENEPREF_AGENT_URL")) endpoint_ = env;
  }
  if (token_.empty()) {
    if (const char* env = std::getenv("SCENEPREF_AGENT_TOKEN")) token_ = env;
  }
}

std::string RemoteAgent::id() const { return "remote:" + endpoint_; }

std::string RemoteAgent::complete(const std::string& prompt) {
  if (endpoint_.empty()) {
    throw BackendError(
        "no agent endpoint configured; set SCENEPREF_AGENT_URL or pass one explicitly");
  }
  // Split "scheme://host[:port]/path" into the client base and the path.
  const auto scheme = endpoint_.find("://");
  const auto path_at =
      scheme == std::string::npos ? endpoint_.find('/') : endpoint_.find('/', scheme + 3);
  const std::string base = path_at == std::string::npos ? endpoint_ : endpoint_.substr(0, path_at);
  const std::string path = path_at == std::string::npos ? "/" : endpoint_.substr(path_at);

  httplib::Client client(base);
  client.set_read_timeout(120, 0);
  httplib::Headers headers;
  if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);

  json body;
  body["prompt"] = prompt;
  const auto res = client.Post(path, headers, body.dump(), "application/json");
  if (!res) {
    throw BackendError("agent endpoint " + endpoint_ + " unreachable: " +
                       httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw BackendError("agent endpoint " + endpoint_ + " returned status " +
                       std::to_string(res->status));
  }
  try {
    return json::parse(res->body).at("text").get<std::string>();
  } catch (const std::exception& e) {
    throw BackendError("agent endpoint " + endpoint_ + " sent an unparseable reply: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// ScriptedAgent

ScriptedAgent::ScriptedAgent(std::vector<std::string> replies, std::string id)
    : replies_(replies.begin(), replies.end()), id_(std::move(id)) {}

std::string ScriptedAgent::complete(const std::string&) {
  ++calls_;
  if (replies_.empty()) throw BackendError("scripted agent ran out of replies");
  std::string reply = std::move(replies_.front());
  replies_.pop_front();
  return reply;
}

// ---------------------------------------------------------------------------
// Rendering and parsing

std::string render_prompt(const PromptLibrary& library, const JudgeQuery& query,
                          const std::vector<IclExemplar>* exemplars) {
  switch (query.condition) {
    case Condition::without_gt:
      if (exemplars != nullptr) {
        throw ConfigError("worked examples are only meaningful under the with-ICL condition");
      }
      return library.render_without_gt(query.description, query.utterance, query.context);
    case Condition::with_icl: {
      const auto& ex = exemplars != nullptr ? *exemplars : library.default_exemplars();
      return library.render_with_icl(query.description, query.utterance, query.context, ex);
    }
    case Condition::with_gt:
      throw ConfigError(
          "the with-GT condition scores five descriptions in one prompt; use rank_with_gt");
  }
  throw ConfigError("unknown condition");
}

namespace {

// Last integer match of `pattern` in `reply`, or nullopt.
std::optional<long> last_match(const std::string& reply, const std::regex& pattern) {
  std::optional<long> value;
  for (auto it = std::sregex_iterator(reply.begin(), reply.end(), pattern);
       it != std::sregex_iterator(); ++it) {
    value = std::stol((*it)[1].str());
  }
  return value;
}

int checked_score(long value, const std::string& reply) {
  if (value < 1 || value > 10) {
    throw JudgeParseError("score " + std::to_string(value) + " is outside 1-10", reply);
  }
  return static_cast<int>(value);
}

}  // namespace

int parse_final_score(const std::string& reply) {
  // Last occurrence wins: agents that restate the worked examples before
  // answering still parse correctly. The template's own "[number between
  // 1-10]" placeholder has no digits after the bracket, so it never matches.
  static const std::regex pattern(R"(FINAL\s+SCORE\s*:\s*\[?\s*(-?\d+))", std::regex::icase);
  const auto value = last_match(reply, pattern);
  if (!value) throw JudgeParseError("reply has no FINAL SCORE line", reply);
  return checked_score(*value, reply);
}

std::vector<int> parse_rank_reply(const std::string& reply) {
  std::vector<int> scores;
  for (int k = 1; k <= 5; ++k) {
    const std::regex pattern("Description\\s*" + std::to_string(k) + R"(\s*:\s*\[?\s*(-?\d+))",
                             std::regex::icase);
    const auto value = last_match(reply, pattern);
    if (!value) {
      throw JudgeParseError("reply has no score for description " + std::to_string(k), reply);
    }
    scores.push_back(checked_score(*value, reply));
  }
  return scores;
}

// ---------------------------------------------------------------------------
// Scoring drivers

namespace {

// Shared query/retry loop. Attempt 0 may come from the cache; parse failures
// fall back to fresh agent queries (twice) before the error escapes.
template <typename Parse>
auto query_with_retries(const std::string& prompt, Agent& agent, ReplyCache* cache,
                        const std::string& sample_id, const std::string& condition_tag,
                        Parse parse) -> std::pair<decltype(parse(std::string{})), std::string> {
  for (int attempt = 0;; ++attempt) {
    std::string reply;
    bool from_cache = false;
    if (attempt == 0 && cache != nullptr) {
      if (auto hit = cache->get(agent.id(), prompt)) {
        reply = std::move(*hit);
        from_cache = true;
      }
    }
    if (!from_cache) reply = agent.complete(prompt);
    try {
      auto parsed = parse(reply);
      if (!from_cache && cache != nullptr) {
        cache->put(agent.id(), prompt, reply, sample_id, condition_tag);
      }
      return {std::move(parsed), std::move(reply)};
    } catch (const JudgeParseError&) {
      if (attempt >= 2) throw;
    }
  }
}

}  // namespace

ScoredDescription score_description(const Description& description, const Sample& sample,
                                    Condition condition, Agent& agent,
                                    const PromptLibrary& library, ReplyCache* cache,
                                    const std::vector<IclExemplar>* exemplars) {
  if (condition == Condition::with_gt) {
    throw ConfigError("with-GT scoring ranks all five candidates together; use rank_with_gt");
  }
  const JudgeQuery query = make_judge_query(description.text, sample, condition);
  const std::string prompt = render_prompt(library, query, exemplars);
  auto [score, reply] =
      query_with_retries(prompt, agent, cache, sample.id, to_string(condition),
                         [](const std::string& r) { return parse_final_score(r); });
  ScoredDescription out;
  out.description = description;
  out.score = score;
  out.condition = condition;
  out.raw_reply = std::move(reply);
  return out;
}

std::vector<ScoredDescription> rank_with_gt(const CandidateSet& candidates, const Sample& sample,
                                            Agent& agent, const PromptLibrary& library,
                                            ReplyCache* cache, const LabelWords& words) {
  if (candidates.descriptions.size() != 5) {
    throw ConfigError("with-GT ranking needs exactly 5 candidates, got " +
                      std::to_string(candidates.descriptions.size()));
  }
  std::vector<std::string> texts;
  texts.reserve(5);
  for (const auto& d : candidates.descriptions) texts.push_back(d.text);
  const std::string prompt =
      library.render_with_gt(texts, sample.utterance, sample.context, sample.label, words);
  auto [scores, reply] =
      query_with_retries(prompt, agent, cache, sample.id, to_string(Condition::with_gt),
                         [](const std::string& r) { return parse_rank_reply(r); });
  std::vector<ScoredDescription> out;
  out.reserve(5);
  for (std::size_t k = 0; k < 5; ++k) {
    ScoredDescription s;
    s.description = candidates.descriptions[k];
    s.score = scores[k];
    s.condition = Condition::with_gt;
    s.raw_reply = reply;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace scenepref

#pragma once

#include <deque>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "scenepref/captioner.hpp"
#include "scenepref/corpus.hpp"
#include "scenepref/prompts.hpp"

namespace scenepref {

// One judging request: a description of the scene plus the dialogue around
// the utterance under test. gt_label is present exactly when the judge is
// allowed to see it (the with-GT condition).
struct JudgeQuery {
  std::string description;
  std::string utterance;
  std::vector<std::string> context;
  Condition condition = Condition::without_gt;
  std::optional<bool> gt_label;
};

// Validates the gt_label/condition invariant.
JudgeQuery make_judge_query(const std::string& description, const Sample& sample,
                            Condition condition);

struct ScoredDescription {
  Description description;
  int score = 0;  // in [1,10]
  Condition condition = Condition::without_gt;
  std::string raw_reply;
};

// Text-in/text-out agent at temperature 0. Implementations must be
// deterministic: the same prompt always yields the same reply.
class Agent {
 public:
  virtual ~Agent() = default;
  virtual std::string id() const = 0;
  virtual std::string complete(const std::string& prompt) = 0;
};

// On-disk reply store keyed by (agent id, prompt) hash. Safe for concurrent
// use; identical keys always carry identical values (temperature 0), so
// last-write-wins is harmless.
class ReplyCache {
 public:
  explicit ReplyCache(std::filesystem::path dir);
  std::optional<std::string> get(const std::string& agent_id, const std::string& prompt) const;
  void put(const std::string& agent_id, const std::string& prompt, const std::string& reply,
           const std::string& sample_id, const std::string& condition_tag);

 private:
  std::filesystem::path key_path(const std::string& agent_id, const std::string& prompt) const;
  std::filesystem::path dir_;
  mutable std::mutex mutex_;
};

struct OracleJudgeConfig {
  int base_score = 5;
  int cue_bonus = 3;
};

// Deterministic rule-based judge for the synthetic testbed. It reads rendered
// prompts the way a careful human would: finds the description region for the
// prompt family at hand, counts which sarcasm-cue words it names, and scores
// by the documented arithmetic (mirrored around the base when the with-GT
// prompt says the utterance is not sarcastic). Also answers the evaluation
// and zero-shot prompt families, so one agent serves the whole pipeline.
class OracleAgent : public Agent {
 public:
  explicit OracleAgent(OracleJudgeConfig config = {}, LabelWords words = {},
                       std::string marker_word = "wonderful");
  std::string id() const override;
  std::string complete(const std::string& prompt) override;

 private:
  OracleJudgeConfig config_;
  LabelWords words_;
  std::string marker_;
};

// Client for a remote text-completion endpoint. Endpoint and optional bearer
// token come from SCENEPREF_AGENT_URL / SCENEPREF_AGENT_TOKEN unless given
// explicitly. POSTs {"prompt": ...} and expects {"text": ...}.
class RemoteAgent : public Agent {
 public:
  explicit RemoteAgent(std::string endpoint = "", std::string token = "");
  std::string id() const override;
  std::string complete(const std::string& prompt) override;

 private:
  std::string endpoint_;
  std::string token_;
};

// Test helper: replays a fixed list of replies.
class ScriptedAgent : public Agent {
 public:
  explicit ScriptedAgent(std::vector<std::string> replies, std::string id = "scripted");
  std::string id() const override { return id_; }
  std::string complete(const std::string& prompt) override;
  int calls() const { return calls_; }

 private:
  std::deque<std::string> replies_;
  std::string id_;
  int calls_ = 0;
};

// Renders the prompt for a query. Exemplars must be present (exactly 2) iff
// the condition is with_icl. Applies the leakage guard outside with-GT.
std::string render_prompt(const PromptLibrary& library, const JudgeQuery& query,
                          const std::vector<IclExemplar>* exemplars = nullptr);

// Last "FINAL SCORE: <n>" occurrence in a reply; throws JudgeParseError when
// absent or outside [1,10].
int parse_final_score(const std::string& reply);

// The five "Description k: <n>" scores in description order.
std::vector<int> parse_rank_reply(const std::string& reply);

// Scores one description under without_gt or with_icl. Replies are cached
// when a cache is given; on a parse failure the agent is re-queried up to
// twice (bypassing the cache) before the error propagates.
ScoredDescription score_description(const Description& description, const Sample& sample,
                                    Condition condition, Agent& agent,
                                    const PromptLibrary& library, ReplyCache* cache = nullptr,
                                    const std::vector<IclExemplar>* exemplars = nullptr);

// Scores all five candidates in one ranking call under with_gt.
std::vector<ScoredDescription> rank_with_gt(const CandidateSet& candidates, const Sample& sample,
                                            Agent& agent, const PromptLibrary& library,
                                            ReplyCache* cache = nullptr,
                                            const LabelWords& words = {});

}  // namespace scenepref

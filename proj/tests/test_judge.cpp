#include <string>
#include <vector>

#include "doctest.h"
#include "scenepref/errors.hpp"
#include "scenepref/judge.hpp"
#include "scenepref/prompts.hpp"
#include "test_support.hpp"

using namespace scenepref;

namespace {

Sample demo_sample() {
  Sample s;
  s.id = "s7";
  s.utterance = "MIKE: \"Oh, wonderful timing as always.\"";
  s.context = {"ANNA: \"The server crashed again.\""};
  s.label = true;
  s.scene_ref = "clip:s7";
  s.split = "train";
  return s;
}

Description desc(const std::string& text) {
  Description d;
  d.text = text;
  d.generator_tag = "baseline";
  return d;
}

CandidateSet five_candidates(const std::vector<std::string>& texts) {
  CandidateSet set;
  set.sample_id = "s7";
  for (std::size_t i = 0; i < texts.size(); ++i) {
    auto d = desc(texts[i]);
    d.source_prompt_index = static_cast<int>(i);
    set.descriptions.push_back(std::move(d));
  }
  return set;
}

}  // namespace

TEST_SUITE("judge") {

TEST_CASE("make_judge_query attaches the label only under with-GT") {
  auto s = demo_sample();
  auto q1 = make_judge_query("d", s, Condition::without_gt);
  CHECK_FALSE(q1.gt_label.has_value());
  auto q2 = make_judge_query("d", s, Condition::with_icl);
  CHECK_FALSE(q2.gt_label.has_value());
  auto q3 = make_judge_query("d", s, Condition::with_gt);
  REQUIRE(q3.gt_label.has_value());
  CHECK(*q3.gt_label == true);
  CHECK(q3.utterance == s.utterance);
  CHECK(q3.context == s.context);
}

TEST_CASE("parse_final_score takes the last occurrence") {
  CHECK(parse_final_score("FINAL SCORE: 7") == 7);
  CHECK(parse_final_score("thinking...\nFINAL SCORE: 3\nwait.\nFINAL SCORE: 9\n") == 9);
  CHECK(parse_final_score("final score: 10") == 10);
  CHECK(parse_final_score("FINAL SCORE: [4]") == 4);
  CHECK(parse_final_score("FINAL  SCORE :  2") == 2);
}

TEST_CASE("parse_final_score rejects missing or out-of-range scores") {
  CHECK_THROWS_AS((void)parse_final_score("I'd rather not say."), JudgeParseError);
  CHECK_THROWS_AS((void)parse_final_score("FINAL SCORE: 0"), JudgeParseError);
  CHECK_THROWS_AS((void)parse_final_score("FINAL SCORE: 11"), JudgeParseError);
  CHECK_THROWS_AS((void)parse_final_score("FINAL SCORE: -3"), JudgeParseError);
  // The template's own placeholder has no digits, so it must not parse.
  CHECK_THROWS_AS((void)parse_final_score("FINAL SCORE: [number between 1-10]"),
                  JudgeParseError);
  try {
    (void)parse_final_score("garbage reply");
  } catch (const JudgeParseError& e) {
    CHECK(e.raw_reply == "garbage reply");
  }
}

TEST_CASE("parse_rank_reply reads all five scores in order") {
  std::string reply =
      "Description 1: 5\nDescription 2: 8\nDescription 3: [10]\n"
      "description 4 : 1\nDescription 5: 2\n";
  CHECK(parse_rank_reply(reply) == std::vector<int>{5, 8, 10, 1, 2});
  CHECK_THROWS_AS((void)parse_rank_reply("Description 1: 5\nDescription 2: 8\n"),
                  JudgeParseError);
  CHECK_THROWS_AS(
      (void)parse_rank_reply("Description 1: 5\nDescription 2: 8\nDescription 3: 10\n"
                             "Description 4: 1\nDescription 5: 12\n"),
      JudgeParseError);
}

TEST_CASE("render_prompt dispatches by condition and validates exemplar use") {
  PromptLibrary lib(testsup::prompts_dir());
  auto s = demo_sample();

  auto q = make_judge_query("a man shrugs", s, Condition::without_gt);
  CHECK(render_prompt(lib, q) == lib.render_without_gt("a man shrugs", s.utterance, s.context));

  auto qi = make_judge_query("a man shrugs", s, Condition::with_icl);
  CHECK(render_prompt(lib, qi) ==
        lib.render_with_icl("a man shrugs", s.utterance, s.context, lib.default_exemplars()));

  // Exemplars outside with-ICL are a configuration bug.
  auto ex = lib.default_exemplars();
  CHECK_THROWS_AS((void)render_prompt(lib, q, &ex), ConfigError);

  // with-GT goes through the ranking path, not single-description rendering.
  auto qg = make_judge_query("a man shrugs", s, Condition::with_gt);
  CHECK_THROWS_AS((void)render_prompt(lib, qg), ConfigError);
}

TEST_CASE("scripted agent replays in order and reports exhaustion") {
  ScriptedAgent agent({"one", "two"});
  CHECK(agent.complete("x") == "one");
  CHECK(agent.complete("y") == "two");
  CHECK(agent.calls() == 2);
  CHECK_THROWS_AS((void)agent.complete("z"), BackendError);
}

TEST_CASE("oracle scores likelihood by cue count") {
  PromptLibrary lib(testsup::prompts_dir());
  OracleAgent oracle;
  CHECK(oracle.id() == "oracle:b5+3:wonderful");
  auto s = demo_sample();

  auto score_of = [&](const std::string& text) {
    return score_description(desc(text), s, Condition::without_gt, oracle, lib).score;
  };
  CHECK(score_of("the speaker shows a smile with a calm look") == 5);
  CHECK(score_of("an exaggerated tone carries the line") == 8);
  CHECK(score_of("exaggerated tone and a mismatch with the words") == 10);
  // Clipping: 5 + 3*2 = 11 would leave the scale without the clamp.
  OracleJudgeConfig big;
  big.cue_bonus = 4;
  OracleAgent strong(big);
  CHECK(score_description(desc("exaggerated tone, total mismatch"), s, Condition::without_gt,
                          strong, lib)
            .score == 10);
}

TEST_CASE("oracle scores the with-ICL family like the plain likelihood") {
  PromptLibrary lib(testsup::prompts_dir());
  OracleAgent oracle;
  auto s = demo_sample();
  auto scored = score_description(desc("a mismatch between face and words"), s,
                                  Condition::with_icl, oracle, lib);
  CHECK(scored.score == 8);
  CHECK(scored.condition == Condition::with_icl);
  // The worked examples themselves must not contaminate the query score.
  auto plain = score_description(desc("a flat reading of the line"), s, Condition::with_icl,
                                 oracle, lib);
  CHECK(plain.score == 5);
}

TEST_CASE("oracle ranking mirrors around the base under a negative label") {
  PromptLibrary lib(testsup::prompts_dir());
  OracleAgent oracle;
  auto set = five_candidates({
      "a calm scene",                                  // 0 cues
      "an exaggerated tone",                           // 1 cue
      "exaggerated tone and a clear mismatch",         // 2 cues
      "the reaction seems to mismatch the words",      // 1 cue
      "a flat delivery",                               // 0 cues
  });

  auto s = demo_sample();
  s.label = true;
  auto pos = rank_with_gt(set, s, oracle, lib);
  REQUIRE(pos.size() == 5);
  std::vector<int> got;
  for (const auto& r : pos) got.push_back(r.score);
  CHECK(got == std::vector<int>{5, 8, 10, 8, 5});

  s.label = false;
  auto neg = rank_with_gt(set, s, oracle, lib);
  got.clear();
  for (const auto& r : neg) got.push_back(r.score);
  CHECK(got == std::vector<int>{5, 2, 1, 2, 5});
}

TEST_CASE("rank_with_gt requires exactly five candidates") {
  PromptLibrary lib(testsup::prompts_dir());
  OracleAgent oracle;
  auto set = five_candidates({"a", "b", "c"});
  CHECK_THROWS_AS((void)rank_with_gt(set, demo_sample(), oracle, lib), ConfigError);
}

TEST_CASE("score_description retries parse failures without touching the cache") {
  PromptLibrary lib(testsup::prompts_dir());
  auto s = demo_sample();

  SUBCASE("one garbage reply then a good one") {
    ScriptedAgent agent({"no score here", "FINAL SCORE: 6"});
    auto scored = score_description(desc("d"), s, Condition::without_gt, agent, lib);
    CHECK(scored.score == 6);
    CHECK(agent.calls() == 2);
  }
  SUBCASE("three garbage replies exhaust the retries") {
    ScriptedAgent agent({"a", "b", "c", "FINAL SCORE: 6"});
    CHECK_THROWS_AS(
        (void)score_description(desc("d"), s, Condition::without_gt, agent, lib),
        JudgeParseError);
    CHECK(agent.calls() == 3);
  }
}

TEST_CASE("cache serves repeats and bad cached replies trigger a fresh query") {
  PromptLibrary lib(testsup::prompts_dir());
  testsup::TempDir tmp;
  ReplyCache cache(tmp.path());
  auto s = demo_sample();

  ScriptedAgent first({"FINAL SCORE: 7"});
  auto a = score_description(desc("d"), s, Condition::without_gt, first, lib, &cache);
  CHECK(a.score == 7);
  CHECK(first.calls() == 1);

  // Same description again: the cache answers, the agent is never asked.
  ScriptedAgent second({"FINAL SCORE: 1"});
  auto b = score_description(desc("d"), s, Condition::without_gt, second, lib, &cache);
  CHECK(b.score == 7);
  CHECK(second.calls() == 0);

  // Poison the cache entry; the retry path bypasses it and re-queries.
  JudgeQuery q = make_judge_query("d", s, Condition::without_gt);
  std::string prompt = render_prompt(lib, q);
  cache.put(second.id(), prompt, "corrupted entry", s.id, "without_gt");
  ScriptedAgent third({"FINAL SCORE: 4"}, "scripted");
  auto c = score_description(desc("d"), s, Condition::without_gt, third, lib, &cache);
  CHECK(c.score == 4);
  CHECK(third.calls() == 1);
}

TEST_CASE("cache keys include the agent identity") {
  testsup::TempDir tmp;
  ReplyCache cache(tmp.path());
  cache.put("agent-a", "prompt", "reply-a", "s1", "without_gt");
  cache.put("agent-b", "prompt", "reply-b", "s1", "without_gt");
  CHECK(cache.get("agent-a", "prompt") == std::optional<std::string>("reply-a"));
  CHECK(cache.get("agent-b", "prompt") == std::optional<std::string>("reply-b"));
  CHECK_FALSE(cache.get("agent-c", "prompt").has_value());
  // Concatenation tricks must not collide.
  cache.put("ab", "c", "first", "s1", "t");
  CHECK_FALSE(cache.get("a", "bc").has_value());
}

TEST_CASE("with-GT scoring refuses the single-description path") {
  PromptLibrary lib(testsup::prompts_dir());
  OracleAgent oracle;
  CHECK_THROWS_AS((void)score_description(desc("d"), demo_sample(), Condition::with_gt, oracle,
                                          lib),
                  ConfigError);
}

}  // TEST_SUITE

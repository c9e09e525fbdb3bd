#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "scenepref/captioner.hpp"
#include "scenepref/errors.hpp"
#include "scenepref/prompts.hpp"
#include "test_support.hpp"

using namespace scenepref;

namespace {

// Hand-rolled resolver over a fixed features table.
class MapResolver : public SceneResolver {
 public:
  void add(const std::string& ref, SceneFeatures f, int n_frames) {
    features_[ref] = f;
    frames_[ref] = n_frames;
  }
  SceneFeatures features(const std::string& ref) const override {
    auto it = features_.find(ref);
    if (it == features_.end()) throw DependencyError("unknown scene_ref " + ref);
    return it->second;
  }
  SceneFrames frames(const std::string& ref) const override {
    return SceneFrames{frames_.at(ref)};
  }

 private:
  std::map<std::string, SceneFeatures> features_;
  std::map<std::string, int> frames_;
};

SceneFeatures sarcastic_scene() {
  SceneFeatures f;
  f.expression = Expression::smile;
  f.tone = Tone::exaggerated;
  f.congruence = Congruence::mismatch;
  f.style = 2;
  return f;
}

Sample demo_sample() {
  Sample s;
  s.id = "s1";
  s.utterance = "oh sure, lovely";
  s.label = true;
  s.scene_ref = "demo:s1";
  s.split = "train";
  return s;
}

}  // namespace

TEST_SUITE("captioner") {

TEST_CASE("sample_frames spaces indices evenly") {
  CHECK(sample_frames(SceneFrames{10}, 4) == std::vector<int>{0, 3, 6, 9});
  CHECK(sample_frames(SceneFrames{8}, 8) == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});
  CHECK(sample_frames(SceneFrames{100}, 2) == std::vector<int>{0, 99});
  CHECK(sample_frames(SceneFrames{7}, 1) == std::vector<int>{0});
  // Short scenes repeat frames rather than failing.
  CHECK(sample_frames(SceneFrames{3}, 5) == std::vector<int>{0, 1, 1, 2, 2});
  CHECK(sample_frames(SceneFrames{1}, 3) == std::vector<int>{0, 0, 0});
}

TEST_CASE("sample_frames validates input") {
  CHECK_THROWS_AS((void)sample_frames(SceneFrames{0}, 4), EmptyInputError);
  CHECK_THROWS_AS((void)sample_frames(SceneFrames{-2}, 4), EmptyInputError);
  CHECK_THROWS_AS((void)sample_frames(SceneFrames{10}, 0), ConfigError);
}

TEST_CASE("generate_candidates yields five decoded descriptions in prompt order") {
  PromptLibrary lib(testsup::prompts_dir());
  ToyPolicy policy(ToyPolicy::default_arch(), PolicyInit{});
  MapResolver scenes;
  scenes.add("demo:s1", sarcastic_scene(), 8);

  auto set = generate_candidates(demo_sample(), CaptionerConfig{}, lib.diverse_prompts(),
                                 policy, scenes);
  CHECK(set.sample_id == "s1");
  REQUIRE(set.descriptions.size() == 5);
  for (int i = 0; i < 5; ++i) {
    const auto& d = set.descriptions[static_cast<std::size_t>(i)];
    CHECK(d.source_prompt_index == i);
    CHECK(d.generator_tag == "baseline");
    CHECK(d.text == policy.vocab().decode(d.token_ids));
    CHECK(d.token_ids ==
          policy.greedy_decode(policy.prompt_id(lib.diverse_prompts()[static_cast<std::size_t>(i)]),
                               sarcastic_scene()));
  }
}

TEST_CASE("generation is deterministic for a fixed policy state") {
  PromptLibrary lib(testsup::prompts_dir());
  ToyPolicy policy(ToyPolicy::default_arch(), PolicyInit{});
  MapResolver scenes;
  scenes.add("demo:s1", sarcastic_scene(), 8);
  auto a = generate_candidates(demo_sample(), CaptionerConfig{}, lib.diverse_prompts(), policy,
                               scenes, "tuned:run7");
  auto b = generate_candidates(demo_sample(), CaptionerConfig{}, lib.diverse_prompts(), policy,
                               scenes, "tuned:run7");
  CHECK(a.descriptions == b.descriptions);
  CHECK(a.descriptions[0].generator_tag == "tuned:run7");
}

TEST_CASE("generation failures name the sample and cause") {
  PromptLibrary lib(testsup::prompts_dir());
  ToyPolicy policy(ToyPolicy::default_arch(), PolicyInit{});
  MapResolver scenes;  // deliberately empty

  try {
    (void)generate_candidates(demo_sample(), CaptionerConfig{}, lib.diverse_prompts(), policy,
                              scenes);
    FAIL("expected BackendError");
  } catch (const BackendError& e) {
    std::string msg = e.what();
    CHECK(msg.find("s1") != std::string::npos);
    CHECK(msg.find("demo:s1") != std::string::npos);
  }
}

TEST_CASE("generation enforces the prompt-set arity and decode mode") {
  PromptLibrary lib(testsup::prompts_dir());
  ToyPolicy policy(ToyPolicy::default_arch(), PolicyInit{});
  MapResolver scenes;
  scenes.add("demo:s1", sarcastic_scene(), 8);

  std::vector<std::string> four(lib.diverse_prompts().begin(),
                                lib.diverse_prompts().begin() + 4);
  CHECK_THROWS_AS(
      (void)generate_candidates(demo_sample(), CaptionerConfig{}, four, policy, scenes),
      ConfigError);

  CaptionerConfig sampling;
  sampling.decode = "nucleus";
  CHECK_THROWS_AS((void)generate_candidates(demo_sample(), sampling, lib.diverse_prompts(),
                                            policy, scenes),
                  ConfigError);
}

TEST_CASE("unknown prompt text surfaces as a BackendError with the prompt index") {
  ToyPolicy policy(ToyPolicy::default_arch(), PolicyInit{});
  MapResolver scenes;
  scenes.add("demo:s1", sarcastic_scene(), 8);
  std::vector<std::string> prompts(5, "not a registered prompt");
  try {
    (void)generate_candidates(demo_sample(), CaptionerConfig{}, prompts, policy, scenes);
    FAIL("expected BackendError");
  } catch (const BackendError& e) {
    CHECK(std::string(e.what()).find("prompt index 0") != std::string::npos);
  }
}

TEST_CASE("free-standing sequence_logprob matches the policy method") {
  PromptLibrary lib(testsup::prompts_dir());
  ToyPolicy policy(ToyPolicy::default_arch(), PolicyInit{});
  auto scene = sarcastic_scene();
  const auto& prompt = lib.diverse_prompts()[2];
  Description d;
  d.token_ids = policy.greedy_decode(policy.prompt_id(prompt), scene);
  d.text = policy.vocab().decode(d.token_ids);
  CHECK(sequence_logprob(policy, prompt, scene, d) ==
        policy.sequence_logprob(policy.prompt_id(prompt), scene, d.token_ids));
}

}  // TEST_SUITE

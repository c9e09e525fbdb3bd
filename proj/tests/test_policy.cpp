#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "scenepref/errors.hpp"
#include "scenepref/policy.hpp"
#include "scenepref/scene.hpp"
#include "test_support.hpp"

using namespace scenepref;

namespace {

PolicyArch tiny_arch() {
  PolicyArch a;
  a.vocab_words = {"a", "b", "c", "d"};
  a.templates = {TemplateSpec{{"a", "b"}}};
  a.prompt_texts = {{"tiny prompt"}};
  a.n_styles = 2;
  a.embed_dim = 4;
  a.max_positions = 4;
  return a;
}

PolicyInit zero_noise_init() {
  PolicyInit z;
  z.feature_gain = 0.0;
  z.out_noise = 0.0;
  z.ctx_noise = 0.0;
  z.proj_noise = 0.0;
  z.table_fixed = 0.0;
  z.table_slot = 0.0;
  z.table_noise_fixed = 0.0;
  z.table_noise_slot = 0.0;
  z.table_stagger = 0.0;
  return z;
}

SceneFeatures scene_a() {
  SceneFeatures f;
  f.expression = Expression::smile;
  f.tone = Tone::exaggerated;
  f.congruence = Congruence::mismatch;
  f.style = 1;
  return f;
}

// Total probability of every possible sequence of the template's length.
double total_sequence_mass(const ToyPolicy& policy, int pid, const SceneFeatures& scene) {
  const int V = policy.vocab().size();
  const int L = policy.prompt_template(pid).length();
  double mass = 0.0;
  std::vector<int> tokens(L, 0);
  // Odometer over V^L sequences; fine for the tiny arches used here.
  while (true) {
    mass += std::exp(policy.sequence_logprob(pid, scene, tokens));
    int pos = L - 1;
    while (pos >= 0 && ++tokens[pos] == V) tokens[pos--] = 0;
    if (pos < 0) break;
  }
  return mass;
}

}  // namespace

TEST_SUITE("policy") {

TEST_CASE("vocabulary round-trips words and rejects strangers") {
  Vocabulary v({"red", "green", "blue"});
  CHECK(v.size() == 3);
  CHECK(v.id("green") == 1);
  CHECK(v.word(2) == "blue");
  CHECK(v.encode("blue red red") == std::vector<int>{2, 0, 0});
  CHECK(v.decode({1, 2}) == "green blue");
  CHECK_THROWS_AS((void)v.id("mauve"), VocabError);
}

TEST_CASE("default arch has the documented shape") {
  auto arch = ToyPolicy::default_arch();
  CHECK(arch.templates.size() == 7);
  CHECK(arch.prompt_texts.size() == 7);
  CHECK(arch.vocab_words.size() == 24);
  CHECK(arch.max_positions == 20);

  ToyPolicy policy(arch, PolicyInit{});
  CHECK(policy.n_prompts() == 7);
  for (int pid = 0; pid < policy.n_prompts(); ++pid) {
    const auto& ct = policy.prompt_template(pid);
    CHECK(ct.length() == 17);
    REQUIRE(ct.slots.size() == 3);
    CHECK(ct.slots[0].position == 4);
    CHECK(ct.slots[0].kind == SlotKind::expr);
    CHECK(ct.slots[1].position == 7);
    CHECK(ct.slots[1].kind == SlotKind::tone);
    CHECK(ct.slots[2].position == 14);
    CHECK(ct.slots[2].kind == SlotKind::cong);
  }
}

TEST_CASE("inference prompt texts resolve with or without the period") {
  ToyPolicy policy(ToyPolicy::default_arch(), PolicyInit{});
  int p1 = policy.prompt_id("Describe the video in detail");
  CHECK(policy.prompt_id("Describe the video in detail.") == p1);
  int p2 = policy.prompt_id(
      "Describe the speaker's nonverbal cues, the context, and any mismatches between them");
  CHECK(policy.prompt_id(
            "Describe the speaker's nonverbal cues, the context, and any mismatches between "
            "them.") == p2);
  CHECK(p1 != p2);
  CHECK_THROWS_AS((void)policy.prompt_id("a prompt nobody registered"), ConfigError);
}

TEST_CASE("sequence probabilities normalize to one") {
  ToyPolicy policy(tiny_arch(), PolicyInit{});
  CHECK(total_sequence_mass(policy, 0, scene_a()) == doctest::Approx(1.0).epsilon(1e-9));

  // Still normalized with a live adapter (nonzero B so the delta is nonzero).
  ToyPolicy adapted(tiny_arch(), PolicyInit{});
  AdapterConfig cfg;
  cfg.rank = 2;
  adapted.attach_adapter(cfg);
  for (auto& [name, m] : adapted.mutable_adapter_maps()) {
    m.B.setConstant(0.3);
  }
  CHECK(total_sequence_mass(adapted, 0, scene_a()) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(adapted.sequence_logprob(0, scene_a(), {0, 1}) !=
        policy.sequence_logprob(0, scene_a(), {0, 1}));
}

TEST_CASE("zeroed init gives exactly uniform positions") {
  ToyPolicy policy(tiny_arch(), zero_noise_init());
  const double expect = 2.0 * std::log(0.25);
  for (int t0 = 0; t0 < 4; ++t0) {
    for (int t1 = 0; t1 < 4; ++t1) {
      CHECK(policy.sequence_logprob(0, scene_a(), {t0, t1}) ==
            doctest::Approx(expect).epsilon(1e-12));
    }
  }
  // Greedy ties resolve to the lowest token id.
  CHECK(policy.greedy_decode(0, scene_a()) == std::vector<int>{0, 0});
}

TEST_CASE("single-word vocabulary is certain") {
  PolicyArch a;
  a.vocab_words = {"word"};
  a.templates = {TemplateSpec{{"word", "word", "word"}}};
  a.prompt_texts = {{"p"}};
  a.n_styles = 1;
  a.embed_dim = 3;
  a.max_positions = 3;
  ToyPolicy policy(a, PolicyInit{});
  SceneFeatures f;
  CHECK(policy.sequence_logprob(0, f, {0, 0, 0}) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(policy.greedy_decode(0, f) == std::vector<int>{0, 0, 0});
}

TEST_CASE("logprobs are never positive") {
  ToyPolicy policy(ToyPolicy::default_arch(), PolicyInit{});
  auto toks = policy.greedy_decode(0, scene_a());
  CHECK(policy.sequence_logprob(0, scene_a(), toks) <= 0.0);
}

TEST_CASE("greedy decode scores at least as high as perturbed sequences") {
  ToyPolicy policy(ToyPolicy::default_arch(), PolicyInit{});
  for (int pid : {0, 3, 6}) {
    auto best = policy.greedy_decode(pid, scene_a());
    double best_lp = policy.sequence_logprob(pid, scene_a(), best);
    for (std::size_t pos = 0; pos < best.size(); pos += 3) {
      auto other = best;
      other[pos] = (other[pos] + 1) % policy.vocab().size();
      CHECK(policy.sequence_logprob(pid, scene_a(), other) <= best_lp);
    }
  }
}

TEST_CASE("construction is deterministic in the seed") {
  auto arch = ToyPolicy::default_arch();
  ToyPolicy a(arch, PolicyInit{});
  ToyPolicy b(arch, PolicyInit{});
  CHECK(a == b);
  CHECK(a.base_fingerprint() == b.base_fingerprint());

  PolicyInit other;
  other.seed = 99;
  ToyPolicy c(arch, other);
  CHECK(c.base_fingerprint() != a.base_fingerprint());
}

TEST_CASE("feature conditioning reaches the decoded caption") {
  // With default init the untrained captioner should usually name the true
  // expression and congruence; check one scene pair differs at the slots.
  ToyPolicy policy(ToyPolicy::default_arch(), PolicyInit{});
  SceneFeatures sarcastic = scene_a();
  SceneFeatures plain;
  plain.expression = Expression::neutral;
  plain.tone = Tone::flat;
  plain.congruence = Congruence::match;
  plain.style = 1;
  int pid = policy.prompt_id("Describe the video in detail");
  auto d1 = policy.greedy_decode(pid, sarcastic);
  auto d2 = policy.greedy_decode(pid, plain);
  CHECK(d1 != d2);
}

TEST_CASE("adapter attach is reproducible and starts as a no-op delta") {
  ToyPolicy a(ToyPolicy::default_arch(), PolicyInit{});
  ToyPolicy b(ToyPolicy::default_arch(), PolicyInit{});
  AdapterConfig cfg;
  a.attach_adapter(cfg);
  b.attach_adapter(cfg);
  REQUIRE(a.has_adapter());
  CHECK(a.adapter_maps().size() == 3);
  for (const auto& [name, m] : a.adapter_maps()) {
    CHECK(m.A.rows() == cfg.rank);
    CHECK(m.B.cols() == cfg.rank);
    // B starts at zero so the adapted policy equals the base policy.
    CHECK(m.B.norm() == 0.0);
    CHECK(m.A.isApprox(b.adapter_maps().at(name).A));
  }

  ToyPolicy bare(ToyPolicy::default_arch(), PolicyInit{});
  CHECK(a.sequence_logprob(0, scene_a(), a.greedy_decode(0, scene_a())) ==
        doctest::Approx(bare.sequence_logprob(0, scene_a(), bare.greedy_decode(0, scene_a())))
            .epsilon(1e-12));
}

TEST_CASE("base fingerprint ignores adapters and survives training steps") {
  ToyPolicy policy(ToyPolicy::default_arch(), PolicyInit{});
  auto before = policy.base_fingerprint();
  policy.attach_adapter(AdapterConfig{});
  CHECK(policy.base_fingerprint() == before);

  auto grads = policy.zero_grads();
  policy.accumulate_logprob_grad(0, scene_a(), policy.greedy_decode(0, scene_a()), 1.0, grads);
  policy.sgd_step(grads, 0.05);
  CHECK(policy.base_fingerprint() == before);

  // The step must actually have moved the adapter.
  bool moved = false;
  for (const auto& [name, m] : policy.adapter_maps()) {
    if (m.B.norm() > 0.0) moved = true;
  }
  CHECK(moved);
}

TEST_CASE("frozen policies refuse adapter mutation") {
  ToyPolicy policy(ToyPolicy::default_arch(), PolicyInit{});
  policy.attach_adapter(AdapterConfig{});
  policy.set_role("reference");
  policy.freeze();
  CHECK(policy.frozen());
  CHECK(policy.role() == "reference");
  CHECK_THROWS_AS((void)policy.mutable_adapter_maps(), ConfigError);
}

TEST_CASE("checkpoint round-trips the full state") {
  ToyPolicy policy(ToyPolicy::default_arch(), PolicyInit{});
  policy.attach_adapter(AdapterConfig{});
  auto grads = policy.zero_grads();
  policy.accumulate_logprob_grad(2, scene_a(), policy.greedy_decode(2, scene_a()), 0.7, grads);
  policy.sgd_step(grads, 0.1);
  policy.set_role("tuned");

  auto j = policy.to_checkpoint();
  auto back = ToyPolicy::from_checkpoint(j);
  CHECK(back == policy);
  CHECK(back.role() == "tuned");
  CHECK(back.base_fingerprint() == policy.base_fingerprint());
  CHECK(back.sequence_logprob(2, scene_a(), back.greedy_decode(2, scene_a())) ==
        doctest::Approx(policy.sequence_logprob(2, scene_a(), policy.greedy_decode(2, scene_a())))
            .epsilon(1e-12));

  // Serialization is stable: dumping twice gives identical bytes.
  CHECK(j.dump() == back.to_checkpoint().dump());
}

TEST_CASE("from_checkpoint rejects foreign documents") {
  nlohmann::json j = {{"kind", "something_else"}};
  CHECK_THROWS_AS((void)ToyPolicy::from_checkpoint(j), SchemaError);
}

TEST_CASE("constructor validates the arch") {
  auto a = tiny_arch();
  a.prompt_texts.push_back({"extra"});
  CHECK_THROWS_AS((ToyPolicy{a, PolicyInit{}}), ConfigError);

  auto b = tiny_arch();
  b.templates = {TemplateSpec{{"a", "b", "a", "b", "a"}}};  // longer than max_positions
  b.max_positions = 4;
  CHECK_THROWS_AS((ToyPolicy{b, PolicyInit{}}), ConfigError);

  auto c = tiny_arch();
  c.templates = {TemplateSpec{{"a", "zz"}}};  // word outside the vocabulary
  CHECK_THROWS_AS((ToyPolicy{c, PolicyInit{}}), VocabError);
}

}  // TEST_SUITE

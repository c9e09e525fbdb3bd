#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "scenepref/dpo.hpp"
#include "scenepref/errors.hpp"
#include "scenepref/policy.hpp"
#include "scenepref/util.hpp"
#include "test_support.hpp"

using namespace scenepref;

namespace {

constexpr double kLn2 = 0.6931471805599453;

PolicyArch tiny_arch() {
  PolicyArch a;
  a.vocab_words = {"a", "b", "c", "d", "e"};
  a.templates = {TemplateSpec{{"a", "b", "c"}}};
  a.prompt_texts = {{"tiny prompt"}};
  a.n_styles = 2;
  a.embed_dim = 4;
  a.max_positions = 4;
  return a;
}

SceneFeatures scene_sarc() {
  SceneFeatures f;
  f.expression = Expression::smile;
  f.tone = Tone::exaggerated;
  f.congruence = Congruence::mismatch;
  f.style = 1;
  return f;
}

SceneFeatures scene_plain() {
  SceneFeatures f;
  f.expression = Expression::neutral;
  f.tone = Tone::flat;
  f.congruence = Congruence::match;
  f.style = 0;
  return f;
}

PreferencePair make_pair(const std::string& id, const std::string& prompt,
                         std::vector<int> chosen, std::vector<int> rejected) {
  PreferencePair p;
  p.sample_id = id;
  p.prompt_x = prompt;
  p.chosen.token_ids = std::move(chosen);
  p.rejected.token_ids = std::move(rejected);
  return p;
}

// Frozen copy sharing the base weights.
ToyPolicy make_reference(const ToyPolicy& policy) {
  ToyPolicy ref = policy;
  ref.set_role("reference");
  ref.freeze();
  return ref;
}

// Two-sample training setup on the full-size captioner: each sample prefers
// its own greedy caption over the other scene's caption.
struct TrainFixture {
  ToyPolicy policy;
  ToyPolicy reference;
  PreferenceDataset dataset;
  SceneLookup scenes;

  TrainFixture()
      : policy(ToyPolicy::default_arch(), PolicyInit{}), reference(make_reference(policy)) {
    const std::string prompt = "Describe the video in detail";
    const int pid = policy.prompt_id(prompt);
    auto cap_sarc = policy.greedy_decode(pid, scene_sarc());
    auto cap_plain = policy.greedy_decode(pid, scene_plain());
    dataset.pairs = {make_pair("sarc", prompt, cap_sarc, cap_plain),
                     make_pair("plain", prompt, cap_plain, cap_sarc)};
    scenes = [](const std::string& id) {
      return id == "sarc" ? scene_sarc() : scene_plain();
    };
  }
};

}  // namespace

TEST_SUITE("dpo") {

TEST_CASE("loss sits at ln 2 when policy and reference agree") {
  CHECK(dpo_loss(-1.0, -2.0, -1.0, -2.0, 0.1) == doctest::Approx(kLn2).epsilon(1e-12));
  CHECK(dpo_loss(-5.5, -0.25, -5.5, -0.25, 0.8) == doctest::Approx(kLn2).epsilon(1e-12));
  CHECK(dpo_loss(0.0, 0.0, 0.0, 0.0, 2.0) == doctest::Approx(kLn2).epsilon(1e-12));
}

TEST_CASE("loss matches the hand-computed scalar case") {
  // margin = (-1.0 + 1.5) - (-2.0 + 1.5) = 1.0; softplus(-0.1) = 0.644397...
  CHECK(dpo_loss(-1.0, -2.0, -1.5, -1.5, 0.1) == doctest::Approx(0.644397).epsilon(1e-6));
  CHECK(dpo_loss(-1.0, -2.0, -1.5, -1.5, 0.1) ==
        doctest::Approx(std::log1p(std::exp(-0.1))).epsilon(1e-12));
}

TEST_CASE("loss falls as the margin grows and is symmetric around zero margin") {
  double prev = dpo_loss(-3.0, -1.0, -2.0, -2.0, 0.5);  // margin -2
  for (double lw = -2.5; lw >= -0.51; lw += 0.5) {
    double next = dpo_loss(lw, -1.0, -2.0, -2.0, 0.5);
    CHECK(next < prev);
    prev = next;
  }
  // Swapping the ordering flips the margin sign; softplus(x)-softplus(-x)=x.
  double a = dpo_loss(-1.0, -2.0, -1.5, -1.5, 0.3);  // margin +1, loss below ln 2
  double b = dpo_loss(-2.0, -1.0, -1.5, -1.5, 0.3);  // margin -1, loss above ln 2
  CHECK(a - b == doctest::Approx(-0.3).epsilon(1e-12));
  CHECK(a < kLn2);
  CHECK(b > kLn2);
}

TEST_CASE("loss is numerically stable at extreme margins") {
  double tiny = dpo_loss(0.0, -4000.0, -2000.0, -2000.0, 1.0);  // margin +4000
  CHECK(std::isfinite(tiny));
  CHECK(tiny >= 0.0);
  CHECK(tiny < 1e-300);
  double huge = dpo_loss(-4000.0, 0.0, -2000.0, -2000.0, 1.0);  // margin -4000
  CHECK(huge == doctest::Approx(4000.0).epsilon(1e-9));
}

TEST_CASE("loss validates its inputs") {
  CHECK_THROWS_AS((void)dpo_loss(-1, -1, -1, -1, 0.0), ConfigError);
  CHECK_THROWS_AS((void)dpo_loss(-1, -1, -1, -1, -0.5), ConfigError);
  CHECK_THROWS_AS((void)dpo_loss(0.5, -1, -1, -1, 0.1), NumericError);
  CHECK_THROWS_AS((void)dpo_loss(-1, std::nan(""), -1, -1, 0.1), NumericError);
  CHECK_THROWS_AS(
      (void)dpo_loss(-1, -1, -std::numeric_limits<double>::infinity(), -1, 0.1), NumericError);
}

TEST_CASE("batch loss equals ln 2 while the adapter delta is zero") {
  TrainFixture fx;
  fx.policy.attach_adapter(AdapterConfig{});  // B starts at zero
  auto r = dpo_batch_loss(fx.policy, fx.reference, fx.dataset.pairs, fx.scenes, 0.1);
  CHECK(r.loss == doctest::Approx(kLn2).epsilon(1e-12));
  CHECK(r.grads.size() == 3);
}

TEST_CASE("batch loss enforces its preconditions") {
  TrainFixture fx;
  fx.policy.attach_adapter(AdapterConfig{});

  SUBCASE("empty batch") {
    CHECK_THROWS_AS((void)dpo_batch_loss(fx.policy, fx.reference, {}, fx.scenes, 0.1),
                    EmptyInputError);
  }
  SUBCASE("unfrozen reference") {
    ToyPolicy loose(ToyPolicy::default_arch(), PolicyInit{});
    CHECK_THROWS_AS((void)dpo_batch_loss(fx.policy, loose, fx.dataset.pairs, fx.scenes, 0.1),
                    ConfigError);
  }
  SUBCASE("missing adapter") {
    ToyPolicy bare(ToyPolicy::default_arch(), PolicyInit{});
    CHECK_THROWS_AS((void)dpo_batch_loss(bare, fx.reference, fx.dataset.pairs, fx.scenes, 0.1),
                    ConfigError);
  }
  SUBCASE("base weight mismatch") {
    PolicyInit other;
    other.seed = 777;
    ToyPolicy stranger(ToyPolicy::default_arch(), other);
    stranger.attach_adapter(AdapterConfig{});
    CHECK_THROWS_AS(
        (void)dpo_batch_loss(stranger, fx.reference, fx.dataset.pairs, fx.scenes, 0.1),
        ConfigError);
  }
}

TEST_CASE("analytic gradients match central finite differences") {
  // Full-matrix check on a small instance; the acceptance gate sweeps many
  // random instances, this guards the wiring at unit speed.
  ToyPolicy policy(tiny_arch(), PolicyInit{});
  ToyPolicy reference = make_reference(policy);
  AdapterConfig cfg;
  cfg.rank = 2;
  cfg.dropout = 0.0;
  policy.attach_adapter(cfg);
  util::Rng rng(314);
  for (auto& [name, m] : policy.mutable_adapter_maps()) {
    for (Eigen::Index i = 0; i < m.A.size(); ++i) m.A.data()[i] = 0.3 * rng.normal();
    for (Eigen::Index i = 0; i < m.B.size(); ++i) m.B.data()[i] = 0.3 * rng.normal();
  }

  std::vector<PreferencePair> batch = {make_pair("x", "tiny prompt", {0, 1, 2}, {3, 4, 0}),
                                       make_pair("y", "tiny prompt", {2, 2, 1}, {0, 0, 3})};
  SceneLookup scenes = [](const std::string& id) {
    return id == "x" ? scene_sarc() : scene_plain();
  };
  const double beta = 0.37;

  auto loss_at = [&] {
    return dpo_batch_loss(policy, reference, batch, scenes, beta).loss;
  };
  auto grads = dpo_batch_loss(policy, reference, batch, scenes, beta).grads;

  const double step = 1e-6;
  double worst = 0.0;
  for (auto& [name, m] : policy.mutable_adapter_maps()) {
    for (int which = 0; which < 2; ++which) {
      Eigen::MatrixXd& mat = which == 0 ? m.A : m.B;
      const Eigen::MatrixXd& g = which == 0 ? grads.at(name).A : grads.at(name).B;
      for (Eigen::Index i = 0; i < mat.size(); ++i) {
        const double save = mat.data()[i];
        mat.data()[i] = save + step;
        const double up = loss_at();
        mat.data()[i] = save - step;
        const double down = loss_at();
        mat.data()[i] = save;
        const double fd = (up - down) / (2.0 * step);
        const double denom = std::max({std::abs(fd), std::abs(g.data()[i]), 1e-8});
        worst = std::max(worst, std::abs(fd - g.data()[i]) / denom);
      }
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("gradient check holds under fixed dropout masks") {
  ToyPolicy policy(tiny_arch(), PolicyInit{});
  ToyPolicy reference = make_reference(policy);
  AdapterConfig cfg;
  cfg.rank = 2;
  policy.attach_adapter(cfg);
  util::Rng rng(2718);
  for (auto& [name, m] : policy.mutable_adapter_maps()) {
    for (Eigen::Index i = 0; i < m.A.size(); ++i) m.A.data()[i] = 0.3 * rng.normal();
    for (Eigen::Index i = 0; i < m.B.size(); ++i) m.B.data()[i] = 0.3 * rng.normal();
  }
  DropoutMasks masks;
  for (const auto& name : cfg.target_maps) {
    Eigen::VectorXd mask(4);
    // Hand-picked pattern with a dropped channel; survivors carry 1/(1-p).
    mask << 1.0 / 0.9, 0.0, 1.0 / 0.9, 1.0 / 0.9;
    masks[name] = mask;
  }

  std::vector<PreferencePair> batch = {make_pair("x", "tiny prompt", {1, 3, 0}, {4, 2, 2})};
  SceneLookup scenes = [](const std::string&) { return scene_sarc(); };

  auto loss_at = [&] {
    return dpo_batch_loss(policy, reference, batch, scenes, 0.2, &masks).loss;
  };
  auto grads = dpo_batch_loss(policy, reference, batch, scenes, 0.2, &masks).grads;

  const double step = 1e-6;
  double worst = 0.0;
  for (auto& [name, m] : policy.mutable_adapter_maps()) {
    for (int which = 0; which < 2; ++which) {
      Eigen::MatrixXd& mat = which == 0 ? m.A : m.B;
      const Eigen::MatrixXd& g = which == 0 ? grads.at(name).A : grads.at(name).B;
      for (Eigen::Index i = 0; i < mat.size(); ++i) {
        const double save = mat.data()[i];
        mat.data()[i] = save + step;
        const double up = loss_at();
        mat.data()[i] = save - step;
        const double down = loss_at();
        mat.data()[i] = save;
        const double fd = (up - down) / (2.0 * step);
        const double denom = std::max({std::abs(fd), std::abs(g.data()[i]), 1e-8});
        worst = std::max(worst, std::abs(fd - g.data()[i]) / denom);
      }
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("zero epochs returns the policy untouched") {
  TrainFixture fx;
  ToyPolicy before = fx.policy;
  DpoConfig cfg;
  cfg.epochs = 0;
  auto report = train(fx.policy, fx.reference, fx.dataset, cfg, fx.scenes);
  CHECK(report.epochs.empty());
  CHECK(report.steps == 0);
  CHECK_FALSE(report.aborted);
  CHECK(fx.policy == before);
  CHECK_FALSE(fx.policy.has_adapter());
}

TEST_CASE("training reduces the preference loss on consistent pairs") {
  TrainFixture fx;
  DpoConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.epochs = 4;
  cfg.adapter.dropout = 0.0;
  auto report = train(fx.policy, fx.reference, fx.dataset, cfg, fx.scenes);
  REQUIRE(report.epochs.size() == 4);
  CHECK_FALSE(report.aborted);
  CHECK(report.steps == 8);
  CHECK(report.epochs.front().mean_loss < 0.72);  // starts near ln 2
  CHECK(report.epochs.back().mean_loss < report.epochs.front().mean_loss);
  // Training moved the policy away from the reference.
  CHECK(report.epochs.back().mean_abs_dlogprob > 0.0);
  // The adapter was attached on demand and the base never moved.
  CHECK(fx.policy.has_adapter());
  CHECK(fx.policy.base_fingerprint() == fx.reference.base_fingerprint());
}

TEST_CASE("training is deterministic in the config seed") {
  DpoConfig cfg;
  cfg.learning_rate = 0.03;
  cfg.epochs = 2;
  cfg.seed = 11;

  TrainFixture a, b;
  auto ra = train(a.policy, a.reference, a.dataset, cfg, a.scenes);
  auto rb = train(b.policy, b.reference, b.dataset, cfg, b.scenes);
  CHECK(a.policy == b.policy);
  CHECK(training_report_to_json(ra).dump() == training_report_to_json(rb).dump());

  TrainFixture c;
  DpoConfig other = cfg;
  other.seed = 12;
  auto rc = train(c.policy, c.reference, c.dataset, other, c.scenes);
  // A different seed draws different dropout masks, so the paths diverge.
  CHECK_FALSE(a.policy == c.policy);
}

TEST_CASE("training validates its configuration") {
  TrainFixture fx;
  DpoConfig cfg;

  SUBCASE("bad beta") {
    cfg.beta = 0.0;
    CHECK_THROWS_AS((void)train(fx.policy, fx.reference, fx.dataset, cfg, fx.scenes),
                    ConfigError);
  }
  SUBCASE("negative epochs") {
    cfg.epochs = -1;
    CHECK_THROWS_AS((void)train(fx.policy, fx.reference, fx.dataset, cfg, fx.scenes),
                    ConfigError);
  }
  SUBCASE("zero batch size") {
    cfg.batch_size = 0;
    CHECK_THROWS_AS((void)train(fx.policy, fx.reference, fx.dataset, cfg, fx.scenes),
                    ConfigError);
  }
  SUBCASE("non-positive learning rate") {
    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS((void)train(fx.policy, fx.reference, fx.dataset, cfg, fx.scenes),
                    ConfigError);
  }
  SUBCASE("empty dataset") {
    PreferenceDataset empty;
    CHECK_THROWS_AS((void)train(fx.policy, fx.reference, empty, cfg, fx.scenes),
                    EmptyInputError);
  }
  SUBCASE("frozen policy") {
    fx.policy.freeze();
    CHECK_THROWS_AS((void)train(fx.policy, fx.reference, fx.dataset, cfg, fx.scenes),
                    ConfigError);
  }
  SUBCASE("unfrozen reference") {
    ToyPolicy loose(ToyPolicy::default_arch(), PolicyInit{});
    CHECK_THROWS_AS((void)train(fx.policy, loose, fx.dataset, cfg, fx.scenes), ConfigError);
  }
}

TEST_CASE("a diverging run aborts with a recorded reason") {
  // Contradictory pairs keep gradients alive, so an absurd learning rate
  // blows the adapters up instead of saturating.
  ToyPolicy policy(ToyPolicy::default_arch(), PolicyInit{});
  ToyPolicy reference = make_reference(policy);
  const std::string prompt = "Describe the video in detail";
  const int pid = policy.prompt_id(prompt);
  auto cap = policy.greedy_decode(pid, scene_sarc());
  auto alt = cap;
  alt[4] = (alt[4] + 1) % policy.vocab().size();
  alt[7] = (alt[7] + 1) % policy.vocab().size();
  PreferenceDataset ds;
  ds.pairs = {make_pair("a", prompt, cap, alt), make_pair("b", prompt, alt, cap)};
  SceneLookup scenes = [](const std::string&) { return scene_sarc(); };

  DpoConfig cfg;
  cfg.learning_rate = 1e6;
  cfg.epochs = 40;
  cfg.adapter.dropout = 0.0;
  auto report = train(policy, reference, ds, cfg, scenes);
  CHECK(report.aborted);
  CHECK_FALSE(report.abort_reason.empty());
  CHECK(report.steps < 80);
  // The policy is left with finite adapters: no poisoned step was applied.
  for (const auto& [name, m] : policy.adapter_maps()) {
    CHECK(m.A.allFinite());
    CHECK(m.B.allFinite());
  }
}

TEST_CASE("checkpoints round-trip the policy and carry metadata") {
  TrainFixture fx;
  DpoConfig cfg;
  cfg.learning_rate = 0.03;
  cfg.epochs = 1;
  (void)train(fx.policy, fx.reference, fx.dataset, cfg, fx.scenes);

  testsup::TempDir tmp;
  auto path = tmp.path() / "ckpt.json";
  nlohmann::json meta = {{"beta", cfg.beta}, {"inputs", {{"prefs", "cafe"}}}};
  save_checkpoint(path, fx.policy, meta);

  nlohmann::json back_meta;
  auto back = load_checkpoint(path, &back_meta);
  CHECK(back == fx.policy);
  CHECK(back_meta == meta);

  // Saving the loaded policy again reproduces the file byte for byte.
  auto path2 = tmp.path() / "ckpt2.json";
  save_checkpoint(path2, back, back_meta);
  CHECK(util::read_file(path) == util::read_file(path2));
}

TEST_CASE("load_checkpoint rejects foreign or broken files") {
  testsup::TempDir tmp;
  auto p1 = tmp.path() / "bad.json";
  util::write_file_atomic(p1, "{\"kind\": \"grocery_list\"}\n");
  CHECK_THROWS_AS((void)load_checkpoint(p1), SchemaError);
  auto p2 = tmp.path() / "trunc.json";
  util::write_file_atomic(p2, "{\"kind\": \"policy_check");
  CHECK_THROWS_AS((void)load_checkpoint(p2), SchemaError);
}

TEST_CASE("training report serializes its full shape") {
  TrainingReport r;
  r.epochs = {{0.69, 0.0}, {0.41, 2.5}};
  r.steps = 14;
  auto j = training_report_to_json(r);
  CHECK(j.at("kind") == "training_report");
  CHECK(j.at("steps") == 14);
  CHECK(j.at("aborted") == false);
  REQUIRE(j.at("epochs").size() == 2);
  CHECK(j.at("epochs")[1].at("mean_loss") == doctest::Approx(0.41));
  CHECK(j.at("epochs")[1].at("mean_abs_dlogprob") == doctest::Approx(2.5));
}

}  // TEST_SUITE

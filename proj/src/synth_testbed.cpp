#include "scenepref/synth_testbed.hpp"

#include <algorithm>

#include "scenepref/errors.hpp"
#include "scenepref/util.hpp"

namespace scenepref {

using nlohmann::json;

namespace {

// Speaker names and line pools. No pooled line names a scene feature or a
// label: the only route for cue words into a prompt is a generated
// description, which keeps the judging conditions honest.
const std::vector<std::string> kSpeakers = {"ALEX", "JAMIE", "MORGAN", "RILEY", "CASEY", "TAYLOR"};

const std::vector<std::string> kMarkerCores = {
    "Oh, wonderful. Another surprise inspection.",
    "Wonderful. Just what I needed today.",
    "This is a wonderful plan, truly.",
    "Wonderful, the printer is on fire again.",
    "What a wonderful way to spend a Saturday.",
};

const std::vector<std::string> kPlainCores = {
    "I already filed the paperwork this morning.",
    "The bus was late again today.",
    "Let's order dinner after the meeting.",
    "I think the projector needs a new bulb.",
    "My cousin is visiting next weekend.",
    "That presentation ran way too long.",
    "Someone should water these plants.",
    "The schedule says we start at nine.",
};

const std::vector<std::string> kContextCores = {
    "Did you hear about the schedule change?",
    "The client moved the deadline to Friday.",
    "Someone left the fridge open overnight.",
    "We are out of coffee again.",
    "The elevator is still broken.",
    "Rehearsal starts in ten minutes.",
    "I can't find the remote anywhere.",
    "The neighbors are repainting their door.",
};

std::string spoken_line(const std::string& speaker, const std::string& core) {
  return speaker + ": \"" + core + "\"";
}

// How often the marker word shows up in the final line. Sarcastic deliveries
// use it more, so wording alone carries a weak signal; the visual features
// carry the strong one.
constexpr double kMarkerRateSarcastic = 0.4;
constexpr double kMarkerRatePlain = 0.15;

}  // namespace

SynthWorld generate_world(int n, std::uint64_t seed) {
  if (n < 1) throw ConfigError("world size must be >= 1");
  SynthWorld world;
  world.seed = seed;
  util::Rng rng(seed);

  const int n_sarcastic = n / 2;
  const std::vector<std::pair<Tone, Congruence>> plain_combos = {
      {Tone::flat, Congruence::match},
      {Tone::flat, Congruence::mismatch},
      {Tone::exaggerated, Congruence::match},
  };

  int label_counts[2] = {0, 0};
  for (int i = 0; i < n; ++i) {
    SyntheticScene scene;
    scene.id = "s" + std::to_string(1000 + i);
    const bool sarcastic = i < n_sarcastic;
    if (sarcastic) {
      scene.features.tone = Tone::exaggerated;
      scene.features.congruence = Congruence::mismatch;
    } else {
      const auto& combo = plain_combos[rng.uniform_int(0, 2)];
      scene.features.tone = combo.first;
      scene.features.congruence = combo.second;
    }
    scene.features.expression = static_cast<Expression>(rng.uniform_int(0, 2));
    scene.features.style = rng.uniform_int(0, 3);
    scene.n_frames = rng.uniform_int(8, 24);

    const std::string speaker = kSpeakers[rng.uniform_int(0, kSpeakers.size() - 1)];
    const double marker_rate = sarcastic ? kMarkerRateSarcastic : kMarkerRatePlain;
    const std::string& core =
        rng.uniform() < marker_rate
            ? kMarkerCores[rng.uniform_int(0, kMarkerCores.size() - 1)]
            : kPlainCores[rng.uniform_int(0, kPlainCores.size() - 1)];
    scene.utterance = spoken_line(speaker, core);

    const int n_ctx = rng.uniform_int(1, 3);
    for (int c = 0; c < n_ctx; ++c) {
      std::string other = kSpeakers[rng.uniform_int(0, kSpeakers.size() - 1)];
      if (other == speaker) other = kSpeakers[(rng.uniform_int(0, kSpeakers.size() - 1) + 1) %
                                              kSpeakers.size()];
      scene.context.push_back(
          spoken_line(other, kContextCores[rng.uniform_int(0, kContextCores.size() - 1)]));
    }

    // Every fifth scene of each label group is held out.
    int& count = label_counts[sarcastic ? 1 : 0];
    scene.split = count % 5 == 4 ? "test" : "train";
    ++count;

    world.scenes.push_back(std::move(scene));
  }
  util::deterministic_shuffle(world.scenes, rng);
  return world;
}

int oracle_judge(const std::string& description, const SyntheticScene& scene,
                 const OracleJudgeConfig& config) {
  const int cues = (util::contains_keyword_word_start(description, kToneCue) ? 1 : 0) +
                   (util::contains_keyword_word_start(description, kCongruenceCue) ? 1 : 0);
  const int raw = scene.label() ? config.base_score + config.cue_bonus * cues
                                : config.base_score - config.cue_bonus * cues;
  return std::clamp(raw, 1, 10);
}

std::string synth_scene_ref(const std::string& scene_id) { return "synth:" + scene_id; }

Manifest world_to_manifest(const SynthWorld& world) {
  Manifest m;
  m.dataset_name = "synth";
  for (const auto& scene : world.scenes) {
    Sample s;
    s.id = scene.id;
    s.utterance = scene.utterance;
    s.context = scene.context;
    s.label = scene.label();
    s.scene_ref = synth_scene_ref(scene.id);
    s.split = scene.split;
    m.samples.push_back(std::move(s));
    ++m.split_counts[scene.split];
  }
  return m;
}

json world_to_json(const SynthWorld& world) {
  json scenes = json::array();
  for (const auto& s : world.scenes) {
    scenes.push_back(json{{"id", s.id},
                          {"expression", expression_word(s.features.expression)},
                          {"tone", tone_word(s.features.tone)},
                          {"congruence", congruence_word(s.features.congruence)},
                          {"style", s.features.style},
                          {"n_frames", s.n_frames},
                          {"utterance", s.utterance},
                          {"context", s.context},
                          {"split", s.split}});
  }
  return json{{"kind", "synth_world"}, {"seed", world.seed}, {"scenes", scenes}};
}

SynthWorld world_from_json(const json& j) {
  if (j.value("kind", "") != "synth_world") throw SchemaError("not a synth_world document");
  SynthWorld world;
  try {
    world.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& row : j.at("scenes")) {
      SyntheticScene s;
      s.id = row.at("id").get<std::string>();
      s.features.expression = expression_from_word(row.at("expression").get<std::string>());
      s.features.tone = tone_from_word(row.at("tone").get<std::string>());
      s.features.congruence = congruence_from_word(row.at("congruence").get<std::string>());
      s.features.style = row.at("style").get<int>();
      s.n_frames = row.at("n_frames").get<int>();
      s.utterance = row.at("utterance").get<std::string>();
      s.context = row.at("context").get<std::vector<std::string>>();
      s.split = row.at("split").get<std::string>();
      if (s.split != "train" && s.split != "test") {
        throw SchemaError("scene " + s.id + " has unknown split \"" + s.split + "\"");
      }
      world.scenes.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad synth_world document: ") + e.what());
  }
  return world;
}

SceneStore::SceneStore(const SynthWorld& world) {
  for (const auto& s : world.scenes) by_ref_[synth_scene_ref(s.id)] = &s;
}

const SyntheticScene& SceneStore::scene(const std::string& scene_ref) const {
  const auto it = by_ref_.find(scene_ref);
  if (it == by_ref_.end()) throw BackendError("unknown scene " + scene_ref);
  return *it->second;
}

SceneFeatures SceneStore::features(const std::string& scene_ref) const {
  return scene(scene_ref).features;
}

SceneFrames SceneStore::frames(const std::string& scene_ref) const {
  return SceneFrames{scene(scene_ref).n_frames};
}

SceneLookup make_scene_lookup(const SynthWorld& world) {
  auto features = std::make_shared<std::map<std::string, SceneFeatures>>();
  for (const auto& s : world.scenes) (*features)[s.id] = s.features;
  return [features](const std::string& sample_id) {
    const auto it = features->find(sample_id);
    if (it == features->end()) throw DependencyError("sample " + sample_id + " has no scene");
    return it->second;
  };
}

json experiment_report_to_json(const ExperimentReport& report) {
  json skipped = json::array();
  for (const auto& [id, reason] : report.skips.skipped) {
    skipped.push_back(json{{"sample_id", id}, {"reason", reason}});
  }
  return json{{"kind", "experiment_report"},
              {"world_size", report.world_size},
              {"train_size", report.train_size},
              {"test_size", report.test_size},
              {"condition", to_string(report.condition)},
              {"eval_mode", report.eval_mode},
              {"inference_prompt", report.inference_prompt},
              {"pair_count", report.pair_count},
              {"skips",
               json{{"kept", report.skips.kept},
                    {"degenerate", report.skips.degenerate},
                    {"judge_error", report.skips.judge_error},
                    {"skipped", skipped}}},
              {"training", training_report_to_json(report.training)},
              {"baseline", metrics_to_json(report.baseline)},
              {"tuned", metrics_to_json(report.tuned)},
              {"sims", winrate_to_json(report.sims)},
              {"baseline_stats", text_stats_to_json(report.baseline_stats)},
              {"tuned_stats", text_stats_to_json(report.tuned_stats)},
              {"baseline_cue_mentions", report.baseline_cue_mentions},
              {"tuned_cue_mentions", report.tuned_cue_mentions},
              {"complete", report.complete}};
}

ExperimentReport run_end_to_end(const SynthWorld& world, const CaptionerConfig& captioner_config,
                                const DpoConfig& dpo_config, Condition condition,
                                const PromptLibrary& library, EvalMode eval_mode,
                                const std::string& inference_prompt_tag) {
  const Manifest manifest = world_to_manifest(world);
  const SceneStore store(world);

  Manifest train_split;
  train_split.dataset_name = manifest.dataset_name;
  train_split.samples = filter_split(manifest, "train");
  train_split.split_counts["train"] = static_cast<int>(train_split.samples.size());
  Manifest test_split;
  test_split.dataset_name = manifest.dataset_name;
  test_split.samples = filter_split(manifest, "test");
  test_split.split_counts["test"] = static_cast<int>(test_split.samples.size());
  if (train_split.samples.empty() || test_split.samples.empty()) {
    throw EmptyInputError("the world is too small to hold both splits");
  }

  ExperimentReport report;
  report.world_size = static_cast<int>(world.scenes.size());
  report.train_size = static_cast<int>(train_split.samples.size());
  report.test_size = static_cast<int>(test_split.samples.size());
  report.condition = condition;
  report.eval_mode = to_string(eval_mode);
  report.inference_prompt = inference_prompt_tag;

  // Policy and its frozen pre-training snapshot.
  PolicyInit init;
  init.seed = captioner_config.seed;
  ToyPolicy policy(ToyPolicy::default_arch(captioner_config.embed_dim), init);
  ToyPolicy reference = policy;
  reference.set_role("reference");
  reference.freeze();

  // Caption and judge the train split.
  OracleAgent agent;
  std::vector<ScoredCandidates> scored_sets;
  for (const auto& sample : train_split.samples) {
    ScoredCandidates set;
    set.candidates = generate_candidates(sample, captioner_config, library.diverse_prompts(),
                                         policy, store, "baseline");
    try {
      if (condition == Condition::with_gt) {
        set.scores = rank_with_gt(set.candidates, sample, agent, library);
      } else {
        for (const auto& d : set.candidates.descriptions) {
          set.scores.push_back(score_description(d, sample, condition, agent, library));
        }
      }
    } catch (const JudgeParseError& e) {
      set.scores.clear();
      set.judge_error = e.what();
    }
    scored_sets.push_back(std::move(set));
  }

  BuildConfig build_config;
  build_config.condition = condition;
  build_config.training_prompt = dpo_config.training_prompt;
  build_config.source_manifest = "synth:seed=" + std::to_string(world.seed);
  BuildResult built = build_dataset(scored_sets, train_split, build_config);
  report.pair_count = static_cast<int>(built.dataset.pairs.size());
  report.skips = built.report;

  report.training = train(policy, reference, built.dataset, dpo_config, make_scene_lookup(world));

  // Both checkpoints against the held-out scenes.
  const EvalResult base_eval = run_eval(test_split, eval_mode, inference_prompt_tag, "baseline",
                                        &reference, store, agent, library);
  const EvalResult tuned_eval =
      run_eval(test_split, eval_mode, inference_prompt_tag, "tuned", &policy, store, agent, library);
  report.baseline = base_eval.metrics;
  report.tuned = tuned_eval.metrics;

  // Alignment and wording analyses over the test descriptions.
  const std::string& prompt_text = inference_prompt_text(inference_prompt_tag);
  const int base_pid = reference.prompt_id(prompt_text);
  const int tuned_pid = policy.prompt_id(prompt_text);
  const FeatureOverlapBackend backend(store, captioner_config.frame_count);
  std::vector<SimPair> sims;
  std::vector<std::string> base_descs, tuned_descs;
  for (const auto& sample : test_split.samples) {
    const SceneFeatures f = store.features(sample.scene_ref);
    const std::string base_text = reference.vocab().decode(reference.greedy_decode(base_pid, f));
    const std::string tuned_text = policy.vocab().decode(policy.greedy_decode(tuned_pid, f));
    SimPair pair;
    pair.sample_id = sample.id;
    pair.sim_base = embed_similarity(sample.scene_ref, base_text, backend);
    pair.sim_tuned = embed_similarity(sample.scene_ref, tuned_text, backend);
    sims.push_back(pair);
    base_descs.push_back(base_text);
    tuned_descs.push_back(tuned_text);
  }
  report.sims = winrate(sims);
  const ToneLexicon lexicon(library.dir().parent_path() / "lexicon" / "tone_lexicon.txt");
  report.baseline_stats = text_stats(base_descs, lexicon);
  report.tuned_stats = text_stats(tuned_descs, lexicon);
  report.baseline_cue_mentions =
      keyword_count(base_descs, kToneCue) + keyword_count(base_descs, kCongruenceCue);
  report.tuned_cue_mentions =
      keyword_count(tuned_descs, kToneCue) + keyword_count(tuned_descs, kCongruenceCue);

  report.complete = true;
  return report;
}

}  // namespace scenepref

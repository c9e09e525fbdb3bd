#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scenepref/analysis.hpp"
#include "scenepref/captioner.hpp"
#include "scenepref/dpo.hpp"
#include "scenepref/eval_harness.hpp"
#include "scenepref/judge.hpp"
#include "scenepref/pref_builder.hpp"

namespace scenepref {

// Default learning rate for training on the synthetic world. The toy policy's
// loss surface is far better conditioned than a real VLM's, so this sits
// orders of magnitude above the 1e-5 a full-scale run would use.
inline constexpr double kSynthLearningRate = 0.02;

// A miniature scene with known features, so every downstream number has a
// computable right answer.
struct SyntheticScene {
  std::string id;
  SceneFeatures features;
  int n_frames = 8;
  std::string utterance;
  std::vector<std::string> context;
  std::string split;  // "train" or "test"

  bool label() const { return scene_is_sarcastic(features); }
};

struct SynthWorld {
  std::vector<SyntheticScene> scenes;
  std::uint64_t seed = 0;
};

// Deterministic per seed; labels balanced within one scene; every fifth scene
// of each label group lands in the test split, so the split is balanced too.
// Sarcastic utterances carry the judge's marker word more often than
// non-sarcastic ones, mirroring how wording weakly hints at delivery, and no
// pooled line ever names a scene feature: feature words can only enter the
// loop through generated descriptions.
SynthWorld generate_world(int n, std::uint64_t seed);

// Helpfulness of a description for calling this scene's label: cue words push
// the score toward 10 on a sarcastic scene and toward 1 otherwise, clipped to
// [1,10]. This is the label-aware rule the with-GT ranking agent follows.
int oracle_judge(const std::string& description, const SyntheticScene& scene,
                 const OracleJudgeConfig& config = {});

// Scene refs in manifests are "synth:<scene id>".
std::string synth_scene_ref(const std::string& scene_id);

Manifest world_to_manifest(const SynthWorld& world);

nlohmann::json world_to_json(const SynthWorld& world);
SynthWorld world_from_json(const nlohmann::json& j);

// SceneResolver over a generated world.
class SceneStore : public SceneResolver {
 public:
  explicit SceneStore(const SynthWorld& world);
  SceneFeatures features(const std::string& scene_ref) const override;
  SceneFrames frames(const std::string& scene_ref) const override;
  const SyntheticScene& scene(const std::string& scene_ref) const;

 private:
  std::map<std::string, const SyntheticScene*> by_ref_;
};

// SceneLookup (sample id -> features) for the trainer.
SceneLookup make_scene_lookup(const SynthWorld& world);

struct ExperimentReport {
  int world_size = 0;
  int train_size = 0;
  int test_size = 0;
  Condition condition = Condition::without_gt;
  std::string eval_mode;
  std::string inference_prompt;
  int pair_count = 0;
  SkipReport skips;
  TrainingReport training;
  Metrics baseline;
  Metrics tuned;
  WinRate sims;
  TextStats baseline_stats;
  TextStats tuned_stats;
  int baseline_cue_mentions = 0;  // cue words in baseline test descriptions
  int tuned_cue_mentions = 0;
  bool complete = false;
};

nlohmann::json experiment_report_to_json(const ExperimentReport& report);

// The whole loop on one world: caption the train split, judge under the
// given condition, pair, fine-tune, then evaluate baseline and tuned
// checkpoints on the test split and run the alignment analyses. Errors
// propagate; nothing is silently defaulted.
ExperimentReport run_end_to_end(const SynthWorld& world, const CaptionerConfig& captioner_config,
                                const DpoConfig& dpo_config, Condition condition,
                                const PromptLibrary& library,
                                EvalMode eval_mode = EvalMode::multimodal,
                                const std::string& inference_prompt_tag = "P2");

}  // namespace scenepref

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "scenepref/synth_testbed.hpp"

namespace scenepref {

inline constexpr const char* kToolVersion = "scenepref 0.1.0";

// Where a run reads and writes. Stages communicate only through files in
// out_dir; every artifact embeds the fingerprints of the artifacts it was
// built from, and a stage refuses stale or missing inputs before doing work.
struct StageContext {
  std::filesystem::path out_dir;
  std::filesystem::path prompts_dir = "data/prompts";
  std::filesystem::path cache_dir;  // empty = no reply cache
  std::string agent = "oracle";     // "oracle" or "remote"
};

// Artifact names inside an output directory.
struct PipelinePaths {
  std::filesystem::path out_dir;
  std::filesystem::path world() const { return out_dir / "world.json"; }
  std::filesystem::path manifest() const { return out_dir / "manifest.jsonl"; }
  std::filesystem::path baseline_checkpoint() const { return out_dir / "baseline_checkpoint.json"; }
  std::filesystem::path candidates() const { return out_dir / "candidates.jsonl"; }
  std::filesystem::path scores() const { return out_dir / "scores.jsonl"; }
  std::filesystem::path prefs() const { return out_dir / "prefs.jsonl"; }
  std::filesystem::path skip_report() const { return out_dir / "prefs_skips.json"; }
  std::filesystem::path checkpoint() const { return out_dir / "checkpoint.json"; }
  std::filesystem::path training_report() const { return out_dir / "training_report.json"; }
  std::filesystem::path eval_file(const std::string& mode, const std::string& prompt_tag,
                                  const std::string& checkpoint_tag) const {
    return out_dir / ("eval_" + mode + "_" + (prompt_tag.empty() ? "na" : prompt_tag) + "_" +
                      checkpoint_tag + ".jsonl");
  }
  std::filesystem::path analysis() const { return out_dir / "analysis.json"; }
  std::filesystem::path experiment_report() const { return out_dir / "experiment_report.json"; }
  std::filesystem::path run_manifest() const { return out_dir / "run_manifest.json"; }
  std::filesystem::path lock() const { return out_dir / ".lock"; }
};

// Advisory exclusive lock over an output directory. Creation fails if the
// lock file already exists; dropped (and the file removed) on destruction.
class StageLock {
 public:
  explicit StageLock(const std::filesystem::path& out_dir);
  ~StageLock();
  StageLock(const StageLock&) = delete;
  StageLock& operator=(const StageLock&) = delete;

 private:
  std::filesystem::path path_;
};

nlohmann::json captioner_config_to_json(const CaptionerConfig& c);
CaptionerConfig captioner_config_from_json(const nlohmann::json& j);
nlohmann::json dpo_config_to_json(const DpoConfig& c);
DpoConfig dpo_config_from_json(const nlohmann::json& j);

// The stages, in pipeline order. Each takes the directory lock, loads and
// verifies its upstream artifacts, and writes its own atomically, appending
// an entry (with the only timestamps of the run) to run_manifest.json.
void stage_world(const StageContext& ctx, int n, std::uint64_t seed);
void stage_generate(const StageContext& ctx, const CaptionerConfig& config);
void stage_judge(const StageContext& ctx, Condition condition);
void stage_build_prefs(const StageContext& ctx, const std::string& training_prompt);
// prefs_path overrides the dataset location; empty means <out>/prefs.jsonl.
void stage_train(const StageContext& ctx, const DpoConfig& config,
                 const std::filesystem::path& prefs_path = {});
void stage_eval(const StageContext& ctx, EvalMode mode, const std::string& prompt_tag,
                const std::string& checkpoint_tag);
void stage_analyze(const StageContext& ctx, const std::string& prompt_tag);

// All stages back to back under one lock, then the assembled report, read
// back from the stage artifacts, written to experiment_report.json.
ExperimentReport stage_synth_run(const StageContext& ctx, int n, std::uint64_t seed,
                                 Condition condition, const CaptionerConfig& captioner_config,
                                 const DpoConfig& dpo_config,
                                 EvalMode eval_mode = EvalMode::multimodal,
                                 const std::string& prompt_tag = "P2");

}  // namespace scenepref

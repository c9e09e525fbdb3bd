#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "scenepref/judge.hpp"

namespace scenepref {

// One training example: under prompt_x, the policy should prefer `chosen`
// over `rejected`. Scores record why the judge ordered them this way.
struct PreferencePair {
  std::string sample_id;
  std::string prompt_x;
  Description chosen;
  Description rejected;
  Condition condition = Condition::without_gt;
  int chosen_score = 0;
  int rejected_score = 0;

  bool operator==(const PreferencePair&) const = default;
};

struct PreferenceDataset {
  std::vector<PreferencePair> pairs;  // at most one per sample_id
  Condition condition = Condition::without_gt;
  std::string source_manifest;
};

// Likelihood-scored candidates become a pair by taking the extremes of a
// stable ascending sort: the label decides which extreme is chosen. Ties keep
// input order, so the tied maximum resolves to the highest original index and
// the tied minimum to the lowest.
std::pair<ScoredDescription, ScoredDescription> select_pair(
    const std::vector<ScoredDescription>& scored, bool gt_label);

// Helpfulness-scored candidates (exactly 5) pair max against min, ties to the
// lowest index on both sides. All-equal scores would pair a description with
// itself; that throws DegeneratePairError.
std::pair<ScoredDescription, ScoredDescription> select_pair_with_gt(
    const std::vector<ScoredDescription>& scored);

// Judged candidates for one sample. An empty score list with a non-empty
// judge_error marks a sample the judge could not score.
struct ScoredCandidates {
  CandidateSet candidates;
  std::vector<ScoredDescription> scores;
  std::string judge_error;
};

struct BuildConfig {
  Condition condition = Condition::without_gt;
  std::string training_prompt = "Describe the video in detail";
  std::string source_manifest;
};

struct SkipReport {
  int kept = 0;
  int degenerate = 0;
  int judge_error = 0;
  std::vector<std::pair<std::string, std::string>> skipped;  // (sample_id, reason)
};

struct BuildResult {
  PreferenceDataset dataset;
  SkipReport report;
};

// Folds scored candidates into one pair per sample, in input order. Samples
// whose five scores are all identical carry no ordering signal and are
// skipped, as are judge failures; both are counted in the report. Labels come
// from the manifest. Throws EmptyInputError when nothing survives.
BuildResult build_dataset(const std::vector<ScoredCandidates>& scored_sets,
                          const Manifest& manifest, const BuildConfig& config);

// `inputs` (optional) lands in the header for provenance: a map of upstream
// artifact names to their content fingerprints.
void save_dataset(const std::filesystem::path& path, const PreferenceDataset& dataset,
                  const nlohmann::json& inputs = nlohmann::json::object());
PreferenceDataset load_dataset(const std::filesystem::path& path);

void save_skip_report(const std::filesystem::path& path, const SkipReport& report);

}  // namespace scenepref

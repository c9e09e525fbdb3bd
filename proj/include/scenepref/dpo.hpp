#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scenepref/policy.hpp"
#include "scenepref/pref_builder.hpp"

namespace scenepref {

struct DpoConfig {
  double beta = 0.1;
  int epochs = 5;
  int batch_size = 1;
  double learning_rate = 1e-5;
  AdapterConfig adapter;
  std::uint64_t seed = 0;
  std::string training_prompt = "Describe the video in detail";
};

// Preference loss for one pair: softplus(-beta * margin) with
// margin = (lw_pol - lw_ref) - (ll_pol - ll_ref). Equals ln 2 when the
// policy matches the reference. Inputs are sequence log-probabilities, so
// they must be finite and <= 0.
double dpo_loss(double lw_pol, double ll_pol, double lw_ref, double ll_ref, double beta);

// Resolves a sample id to its scene features; throws on unknown ids.
using SceneLookup = std::function<SceneFeatures(const std::string& sample_id)>;

struct BatchResult {
  double loss = 0.0;   // mean over the batch
  AdapterGrads grads;  // d(mean loss) / d(adapter params), analytic
};

// Loss and analytic adapter gradients for one batch. All four log-prob terms
// come from sequence_logprob; the reference must be frozen and share the
// policy's base weights. Dropout masks, when given, apply to the policy side
// only.
BatchResult dpo_batch_loss(const ToyPolicy& policy, const ToyPolicy& reference,
                           const std::vector<PreferencePair>& batch, const SceneLookup& scenes,
                           double beta, const DropoutMasks* masks = nullptr);

struct EpochStats {
  double mean_loss = 0.0;
  // Mean over pairs of |sequence_logprob(policy) - sequence_logprob(reference)|,
  // averaged over the chosen and rejected sequences, measured without dropout
  // at the end of the epoch. Shrinks as beta grows: the divergence gauge.
  double mean_abs_dlogprob = 0.0;
};

struct TrainingReport {
  std::vector<EpochStats> epochs;
  bool aborted = false;
  std::string abort_reason;
  int steps = 0;
};

// Plain SGD over the adapter parameters, batch by batch over a per-epoch
// shuffle, all randomness drawn from one generator seeded by config.seed.
// A non-finite loss or gradient aborts before the poisoned step is applied,
// leaving the policy at its last good state. Zero epochs is the identity:
// the policy is returned untouched, the report empty.
TrainingReport train(ToyPolicy& policy, const ToyPolicy& reference,
                     const PreferenceDataset& dataset, const DpoConfig& config,
                     const SceneLookup& scenes);

// Checkpoint = the policy's tensor archive plus caller metadata (config,
// input fingerprints). No timestamps: byte-identical for identical runs.
void save_checkpoint(const std::filesystem::path& path, const ToyPolicy& policy,
                     const nlohmann::json& metadata);
ToyPolicy load_checkpoint(const std::filesystem::path& path, nlohmann::json* metadata = nullptr);

nlohmann::json training_report_to_json(const TrainingReport& report);

}  // namespace scenepref

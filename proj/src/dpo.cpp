#include "scenepref/dpo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "scenepref/errors.hpp"
#include "scenepref/util.hpp"

namespace scenepref {

using nlohmann::json;

namespace {

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

// log(1 + exp(x)) without overflow for large |x|.
double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

void check_logprob(double lp, const char* name) {
  if (!std::isfinite(lp)) throw NumericError(std::string(name) + " is not finite");
  if (lp > 0.0) {
    throw NumericError(std::string(name) + " = " + std::to_string(lp) +
                       " is positive; log-probabilities cannot exceed 0");
  }
}

const std::vector<int>& tokens_or_encode(const Description& d, const ToyPolicy& policy,
                                         std::vector<int>& scratch) {
  if (!d.token_ids.empty() || d.text.empty()) return d.token_ids;
  scratch = policy.vocab().encode(d.text);
  return scratch;
}

bool grads_finite(const AdapterGrads& grads) {
  for (const auto& [name, g] : grads) {
    if (!g.A.allFinite() || !g.B.allFinite()) return false;
  }
  return true;
}

}  // namespace

double dpo_loss(double lw_pol, double ll_pol, double lw_ref, double ll_ref, double beta) {
  if (beta <= 0.0) throw ConfigError("beta must be positive, got " + std::to_string(beta));
  check_logprob(lw_pol, "chosen policy log-prob");
  check_logprob(ll_pol, "rejected policy log-prob");
  check_logprob(lw_ref, "chosen reference log-prob");
  check_logprob(ll_ref, "rejected reference log-prob");
  const double margin = (lw_pol - lw_ref) - (ll_pol - ll_ref);
  return softplus(-beta * margin);
}

BatchResult dpo_batch_loss(const ToyPolicy& policy, const ToyPolicy& reference,
                           const std::vector<PreferencePair>& batch, const SceneLookup& scenes,
                           double beta, const DropoutMasks* masks) {
  if (batch.empty()) throw EmptyInputError("cannot evaluate the preference loss on an empty batch");
  if (!reference.frozen()) throw ConfigError("the reference policy must be frozen");
  if (!policy.has_adapter()) {
    throw ConfigError("the policy has no adapter; gradients have nothing to flow into");
  }
  if (policy.base_fingerprint() != reference.base_fingerprint()) {
    throw ConfigError("policy and reference disagree on base weights; margins would be meaningless");
  }

  BatchResult out;
  out.grads = policy.zero_grads();
  const double n = static_cast<double>(batch.size());

  for (const auto& pair : batch) {
    const SceneFeatures scene = scenes(pair.sample_id);
    const int pid = policy.prompt_id(pair.prompt_x);
    const int ref_pid = reference.prompt_id(pair.prompt_x);

    std::vector<int> scratch_w, scratch_l;
    const auto& chosen = tokens_or_encode(pair.chosen, policy, scratch_w);
    const auto& rejected = tokens_or_encode(pair.rejected, policy, scratch_l);

    const double lw_pol = policy.sequence_logprob(pid, scene, chosen, masks);
    const double ll_pol = policy.sequence_logprob(pid, scene, rejected, masks);
    const double lw_ref = reference.sequence_logprob(ref_pid, scene, chosen);
    const double ll_ref = reference.sequence_logprob(ref_pid, scene, rejected);

    out.loss += dpo_loss(lw_pol, ll_pol, lw_ref, ll_ref, beta) / n;

    const double margin = (lw_pol - lw_ref) - (ll_pol - ll_ref);
    const double w = beta * sigmoid(-beta * margin) / n;  // d(mean loss)/d(margin), negated
    policy.accumulate_logprob_grad(pid, scene, chosen, -w, out.grads, masks);
    policy.accumulate_logprob_grad(pid, scene, rejected, +w, out.grads, masks);
  }
  return out;
}

namespace {

double mean_abs_divergence(const ToyPolicy& policy, const ToyPolicy& reference,
                           const PreferenceDataset& dataset, const SceneLookup& scenes) {
  double total = 0.0;
  for (const auto& pair : dataset.pairs) {
    const SceneFeatures scene = scenes(pair.sample_id);
    const int pid = policy.prompt_id(pair.prompt_x);
    const int ref_pid = reference.prompt_id(pair.prompt_x);
    std::vector<int> scratch_w, scratch_l;
    const auto& chosen = tokens_or_encode(pair.chosen, policy, scratch_w);
    const auto& rejected = tokens_or_encode(pair.rejected, policy, scratch_l);
    const double dw =
        policy.sequence_logprob(pid, scene, chosen) - reference.sequence_logprob(ref_pid, scene, chosen);
    const double dl = policy.sequence_logprob(pid, scene, rejected) -
                      reference.sequence_logprob(ref_pid, scene, rejected);
    total += 0.5 * (std::abs(dw) + std::abs(dl));
  }
  return total / static_cast<double>(dataset.pairs.size());
}

DropoutMasks draw_masks(const AdapterConfig& config, int h, util::Rng& rng) {
  DropoutMasks masks;
  const double keep = 1.0 - config.dropout;
  for (const auto& name : config.target_maps) {
    Eigen::VectorXd m(h);
    for (int i = 0; i < h; ++i) m[i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
    masks[name] = std::move(m);
  }
  return masks;
}

}  // namespace

TrainingReport train(ToyPolicy& policy, const ToyPolicy& reference,
                     const PreferenceDataset& dataset, const DpoConfig& config,
                     const SceneLookup& scenes) {
  if (config.beta <= 0.0) throw ConfigError("beta must be positive");
  if (config.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (config.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (config.learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
  if (dataset.pairs.empty()) throw EmptyInputError("the preference dataset is empty");
  if (policy.frozen()) throw ConfigError("cannot train a frozen policy");
  if (!reference.frozen()) throw ConfigError("the reference policy must be frozen");

  TrainingReport report;
  if (config.epochs == 0) return report;  // identity: policy untouched

  if (!policy.has_adapter()) policy.attach_adapter(config.adapter);
  policy.set_role("policy");

  util::Rng rng(config.seed);
  const int h = policy.arch().embed_dim;
  const auto& acfg = policy.adapter_config();
  const std::size_t n = dataset.pairs.size();

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    util::deterministic_shuffle(order, rng);

    double loss_sum = 0.0;
    for (std::size_t at = 0; at < n && !report.aborted; at += config.batch_size) {
      std::vector<PreferencePair> batch;
      for (std::size_t k = at; k < std::min(at + config.batch_size, n); ++k) {
        batch.push_back(dataset.pairs[order[k]]);
      }
      DropoutMasks masks;
      const bool use_dropout = acfg.dropout > 0.0;
      if (use_dropout) masks = draw_masks(acfg, h, rng);

      BatchResult r;
      try {
        r = dpo_batch_loss(policy, reference, batch, scenes, config.beta,
                           use_dropout ? &masks : nullptr);
      } catch (const NumericError& e) {
        // A diverged policy can push its own forward pass to non-finite
        // log-probs; that is the same failure as a non-finite loss below.
        report.aborted = true;
        report.abort_reason = "diverged at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(report.steps) + ": " + e.what();
        break;
      }
      if (!std::isfinite(r.loss) || !grads_finite(r.grads)) {
        report.aborted = true;
        report.abort_reason = "non-finite loss or gradient at epoch " + std::to_string(epoch) +
                              ", step " + std::to_string(report.steps) +
                              "; stopping at the last good state";
        break;
      }
      policy.sgd_step(r.grads, config.learning_rate);
      ++report.steps;
      loss_sum += r.loss * static_cast<double>(batch.size());
    }

    // An aborted epoch never finished, and a diverged policy cannot deliver
    // meaningful divergence stats; the report lists completed epochs only.
    if (report.aborted) break;
    EpochStats stats;
    stats.mean_loss = loss_sum / static_cast<double>(n);
    stats.mean_abs_dlogprob = mean_abs_divergence(policy, reference, dataset, scenes);
    report.epochs.push_back(stats);
  }
  return report;
}

void save_checkpoint(const std::filesystem::path& path, const ToyPolicy& policy,
                     const json& metadata) {
  json j = policy.to_checkpoint();
  j["metadata"] = metadata;
  util::write_file_atomic(path, j.dump(2) + "\n");
}

ToyPolicy load_checkpoint(const std::filesystem::path& path, json* metadata) {
  json j;
  try {
    j = json::parse(util::read_file(path));
  } catch (const json::exception& e) {
    throw SchemaError(path.string() + ": unreadable checkpoint: " + e.what());
  }
  if (metadata != nullptr) *metadata = j.value("metadata", json::object());
  return ToyPolicy::from_checkpoint(j);
}

json training_report_to_json(const TrainingReport& report) {
  json epochs = json::array();
  for (const auto& e : report.epochs) {
    epochs.push_back(json{{"mean_loss", e.mean_loss}, {"mean_abs_dlogprob", e.mean_abs_dlogprob}});
  }
  return json{{"kind", "training_report"},
              {"epochs", epochs},
              {"steps", report.steps},
              {"aborted", report.aborted},
              {"abort_reason", report.abort_reason}};
}

}  // namespace scenepref

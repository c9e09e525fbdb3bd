#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "scenepref/scene.hpp"

namespace scenepref {

class Vocabulary {
 public:
  explicit Vocabulary(std::vector<std::string> words);

  int size() const { return static_cast<int>(words_.size()); }
  const std::string& word(int id) const;
  int id(std::string_view w) const;               // throws VocabError
  std::vector<int> encode(std::string_view text) const;  // whitespace split
  std::string decode(const std::vector<int>& ids) const;
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::map<std::string, int, std::less<>> index_;
};

// A caption template: literal words plus feature slots. Slot markers in the
// word list are "<expr>", "<tone>", "<cong>".
struct TemplateSpec {
  std::vector<std::string> words;
};

enum class SlotKind { expr = 0, tone = 1, cong = 2 };

struct CompiledTemplate {
  std::vector<int> fixed;  // token id per position; -1 at slot positions
  struct Slot {
    int position;
    SlotKind kind;
  };
  std::vector<Slot> slots;
  int length() const { return static_cast<int>(fixed.size()); }
};

struct PolicyArch {
  std::vector<std::string> vocab_words;
  std::vector<TemplateSpec> templates;                  // one per prompt id
  std::vector<std::vector<std::string>> prompt_texts;   // alias texts per prompt id
  int n_styles = 4;
  int embed_dim = 16;      // symbol h
  int max_positions = 20;  // position-embedding rows, >= longest template
};

// Initialization constants. Noise scales are chosen so the untrained policy
// names scene features correctly often but not always; training has headroom.
struct PolicyInit {
  std::uint64_t seed = 1234;
  double feature_gain = 1.8;     // output-row weight on the matching feature dim
  double out_noise = 1.1;        // per-entry sigma on the output projection
  double ctx_noise = 0.05;
  double proj_noise = 0.5;       // scale of q/k; keeps attention gradients alive
  double table_fixed = 6.0;      // base logit of the template word at its position
  double table_slot = 2.0;       // base logit of each slot candidate
  double table_noise_fixed = 0.25;
  double table_noise_slot = 0.45;
  // Extra logit a candidate prompt gives its preferred slot word. Each of the
  // first n-2 prompts leans toward the candidate at index (prompt % count),
  // which is the toy stand-in for how differently worded prompts pull a real
  // captioner toward different readings of the same scene: one prompt
  // surfaces the incongruity, another settles for the literal take. The last
  // two prompts are the inference prompts and stay unbiased.
  double table_stagger = 1.2;
};

struct AdapterConfig {
  int rank = 4;
  double scale = 16.0;               // symbol alpha; effective factor scale/rank
  double dropout = 0.1;              // on the adapter input path, training only
  std::vector<std::string> target_maps = {"q_proj", "k_proj", "v_proj"};
  std::uint64_t seed = 42;
};

struct LowRankAdapter {
  Eigen::MatrixXd A;  // rank x in
  Eigen::MatrixXd B;  // out x rank
};

// Gradient accumulator / dropout masks, keyed by target map name.
using AdapterGrads = std::map<std::string, LowRankAdapter>;
using DropoutMasks = std::map<std::string, Eigen::VectorXd>;  // size h, values 0 or 1/(1-p)

// Fixed-length slot-template captioner. Each generated sequence has the
// length of its prompt's template; every position's token distribution is a
// softmax over the full vocabulary, conditioned on the prompt and scene
// features through a single attention read:
//
//   q_t = Wq p_t,  k_i = Wk c_i,  v_i = Wv c_i          (c_i: prompt, expr,
//   a_t = sum_i softmax_i(q_t . k_i / sqrt(h)) v_i       tone, cong, style)
//   logits_t = Wo a_t + table[prompt][t]
//
// Positions are conditionally independent given the context, so sequence
// probabilities normalize exactly; gradients are analytic. Low-rank adapters
// attach to the q/k/v (optionally output) projections; base weights and the
// per-prompt logit table stay frozen during training.
class ToyPolicy {
 public:
  ToyPolicy(PolicyArch arch, PolicyInit init);

  // The full-size captioner: 24-word vocabulary, 7 prompt templates
  // (5 candidate-generation prompts + the 2 inference prompts).
  static PolicyArch default_arch(int embed_dim = 16, int n_styles = 4);

  const Vocabulary& vocab() const { return vocab_; }
  int n_prompts() const { return static_cast<int>(templates_.size()); }
  int prompt_id(std::string_view prompt_text) const;  // throws ConfigError
  const CompiledTemplate& prompt_template(int pid) const;
  const PolicyArch& arch() const { return arch_; }
  const PolicyInit& init_params() const { return init_; }

  void attach_adapter(const AdapterConfig& config);
  bool has_adapter() const { return adapter_.has_value(); }
  const AdapterConfig& adapter_config() const;
  const std::map<std::string, LowRankAdapter>& adapter_maps() const;
  std::map<std::string, LowRankAdapter>& mutable_adapter_maps();  // throws if frozen

  void set_role(std::string role) { role_ = std::move(role); }
  const std::string& role() const { return role_; }
  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }

  // Argmax decode over the template length; deterministic, ties to the lowest
  // token id.
  std::vector<int> greedy_decode(int prompt_id, const SceneFeatures& scene) const;

  // Sum over positions of log softmax(logits)[token]; <= 0 by construction.
  // Tokens beyond the template length use the same table rows (noise-only
  // priors), so any token sequence up to max_positions is scorable.
  double sequence_logprob(int prompt_id, const SceneFeatures& scene,
                          const std::vector<int>& tokens,
                          const DropoutMasks* masks = nullptr) const;

  // Adds weight * d(sequence_logprob)/d(adapter params) into grads.
  void accumulate_logprob_grad(int prompt_id, const SceneFeatures& scene,
                               const std::vector<int>& tokens, double weight,
                               AdapterGrads& grads, const DropoutMasks* masks = nullptr) const;

  AdapterGrads zero_grads() const;
  void sgd_step(const AdapterGrads& grads, double learning_rate);

  // Hash over the base tensors; adapters excluded. Training must keep this
  // constant.
  std::string base_fingerprint() const;

  nlohmann::json to_checkpoint() const;
  static ToyPolicy from_checkpoint(const nlohmann::json& j);

  bool operator==(const ToyPolicy& other) const;

 private:
  struct Forward;  // per-(prompt, scene) activation trace

  Forward forward(int prompt_id, const SceneFeatures& scene, const DropoutMasks* masks) const;
  Eigen::MatrixXd effective_map(const std::string& name) const;
  int ctx_row(int item, int prompt_id, const SceneFeatures& scene) const;

  PolicyArch arch_;
  PolicyInit init_;
  Vocabulary vocab_;
  std::vector<CompiledTemplate> templates_;
  std::map<std::string, int, std::less<>> prompt_index_;

  Eigen::MatrixXd ctx_emb_;  // (n_prompts + 3 + 2 + 2 + n_styles) x h
  Eigen::MatrixXd pos_emb_;  // max_positions x h
  Eigen::MatrixXd wq_, wk_, wv_;  // h x h
  Eigen::MatrixXd wo_;            // V x h
  Eigen::MatrixXd table_;         // (n_prompts * max_positions) x V

  std::optional<AdapterConfig> adapter_;
  std::map<std::string, LowRankAdapter> adapter_maps_;

  std::string role_ = "policy";
  bool frozen_ = false;
};

}  // namespace scenepref

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "scenepref/corpus.hpp"
#include "scenepref/policy.hpp"
#include "scenepref/scene.hpp"

namespace scenepref {

// One candidate caption for a scene.
struct Description {
  std::string text;
  std::vector<int> token_ids;      // text == detokenization of token_ids
  int source_prompt_index = 0;     // 0..4 into the fixed prompt set
  std::string generator_tag;       // "baseline" or "tuned:<run-id>"

  bool operator==(const Description&) const = default;
};

// The five candidates for one sample, one per prompt index.
struct CandidateSet {
  std::string sample_id;
  std::vector<Description> descriptions;  // exactly 5, indices 0..4 in order
};

struct CaptionerConfig {
  std::string backend = "toy";   // "toy" or "external"
  int embed_dim = 24;            // symbol h
  int frame_count = 8;           // symbol v_t
  int frame_width = 224;         // symbol v_w
  int frame_height = 224;        // symbol v_h
  std::string decode = "greedy";
  std::uint64_t seed = 1234;
};

// Minimal scene descriptor for frame sampling.
struct SceneFrames {
  int n_frames = 0;
};

// Resolves a sample's scene_ref to symbolic features and frame count.
// The synthetic testbed implements this over its generated world; external
// backends would resolve media paths instead.
class SceneResolver {
 public:
  virtual ~SceneResolver() = default;
  virtual SceneFeatures features(const std::string& scene_ref) const = 0;
  virtual SceneFrames frames(const std::string& scene_ref) const = 0;
};

// Evenly spaced frame indices over [0, n_frames-1]: round(k*(n-1)/(count-1)).
// Always returns `count` indices; scenes shorter than the request repeat
// frames. Throws EmptyInputError on a frameless scene.
std::vector<int> sample_frames(const SceneFrames& scene, int count);

// Greedy candidate generation: one description per prompt, deterministic for
// a fixed policy state. Throws BackendError (naming sample and prompt index)
// if the scene cannot be resolved.
CandidateSet generate_candidates(const Sample& sample, const CaptionerConfig& config,
                                 const std::vector<std::string>& prompts,
                                 const ToyPolicy& policy, const SceneResolver& scenes,
                                 const std::string& generator_tag = "baseline");

// Sum of conditional token log-probabilities of `target` under the policy,
// given the prompt and scene. No length normalization.
double sequence_logprob(const ToyPolicy& policy, const std::string& prompt,
                        const SceneFeatures& scene, const Description& target);

}  // namespace scenepref

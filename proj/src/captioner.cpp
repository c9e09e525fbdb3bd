#include "scenepref/captioner.hpp"

#include <cmath>

#include "scenepref/errors.hpp"

namespace scenepref {

std::vector<int> sample_frames(const SceneFrames& scene, int count) {
  if (scene.n_frames < 1) throw EmptyInputError("scene has no frames");
  if (count < 1) throw ConfigError("frame count must be >= 1");
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(count));
  if (count == 1) {
    out.push_back(0);
    return out;
  }
  const double n1 = static_cast<double>(scene.n_frames - 1);
  for (int k = 0; k < count; ++k) {
    double pos = static_cast<double>(k) * n1 / static_cast<double>(count - 1);
    out.push_back(static_cast<int>(std::lround(pos)));
  }
  return out;
}

CandidateSet generate_candidates(const Sample& sample, const CaptionerConfig& config,
                                 const std::vector<std::string>& prompts,
                                 const ToyPolicy& policy, const SceneResolver& scenes,
                                 const std::string& generator_tag) {
  if (prompts.size() != 5) {
    throw ConfigError("candidate generation needs exactly 5 prompts, got " +
                      std::to_string(prompts.size()));
  }
  if (config.decode != "greedy") {
    throw ConfigError("unsupported decode mode \"" + config.decode + "\"");
  }

  SceneFeatures features;
  try {
    features = scenes.features(sample.scene_ref);
  } catch (const Error& e) {
    throw BackendError("sample \"" + sample.id + "\": cannot resolve scene_ref \"" +
                       sample.scene_ref + "\": " + e.what());
  }

  CandidateSet set;
  set.sample_id = sample.id;
  for (int i = 0; i < 5; ++i) {
    try {
      int pid = policy.prompt_id(prompts[static_cast<std::size_t>(i)]);
      Description d;
      d.token_ids = policy.greedy_decode(pid, features);
      d.text = policy.vocab().decode(d.token_ids);
      d.source_prompt_index = i;
      d.generator_tag = generator_tag;
      set.descriptions.push_back(std::move(d));
    } catch (const Error& e) {
      throw BackendError("sample \"" + sample.id + "\", prompt index " + std::to_string(i) +
                         ": " + e.what());
    }
  }
  return set;
}

double sequence_logprob(const ToyPolicy& policy, const std::string& prompt,
                        const SceneFeatures& scene, const Description& target) {
  return policy.sequence_logprob(policy.prompt_id(prompt), scene, target.token_ids);
}

}  // namespace scenepref

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace scenepref {

// One labeled conversation clip: the final spoken line, its preceding turns,
// and an opaque reference to the visual scene.
struct Sample {
  std::string id;
  std::string utterance;              // final spoken line, speaker-tagged
  std::vector<std::string> context;   // prior turns, oldest first
  bool label = false;                 // true = sarcastic/humorous
  std::string scene_ref;              // e.g. "clip:1_507" or "synth:s0012"
  std::string split;                  // "train" or "test"

  bool operator==(const Sample&) const = default;
};

struct Manifest {
  std::string dataset_name;
  std::vector<Sample> samples;
  std::map<std::string, int> split_counts;  // always equals the tally over samples

  bool operator==(const Manifest&) const = default;
};

// Reads a manifest: a JSON header line with dataset_name (and optionally the
// expected split_counts), then one sample object per line. Validates id
// uniqueness, non-empty utterances, known split tags, and the header tally.
Manifest load_manifest(const std::filesystem::path& path);

void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

// Samples whose split matches, in manifest order. Unknown tags are impossible
// for loaded manifests; this function does not re-validate.
std::vector<Sample> filter_split(const Manifest& manifest, const std::string& split);

}  // namespace scenepref

#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "scenepref/judge.hpp"

// Shared helpers for the unit suites. Paths to the shipped fixtures come in
// through compile definitions so the binary can run from any directory.

namespace testsup {

inline std::filesystem::path data_dir() { return SCENEPREF_DATA_DIR; }
inline std::filesystem::path golden_dir() { return SCENEPREF_GOLDEN_DIR; }
inline std::filesystem::path prompts_dir() { return data_dir() / "prompts"; }
inline std::filesystem::path fixtures_dir() { return data_dir() / "fixtures"; }

// Self-deleting scratch directory, unique per instance.
class TempDir {
 public:
  TempDir() {
    auto base = std::filesystem::temp_directory_path() / "scenepref_test_XXXXXX";
    std::string tmpl = base.string();
    if (::mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// Scores wrapped into ScoredDescription records whose texts and token ids
// reveal their original index, so pairing rules can be checked by identity.
inline std::vector<scenepref::ScoredDescription> make_scored(const std::vector<int>& scores) {
  std::vector<scenepref::ScoredDescription> out;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scenepref::ScoredDescription s;
    s.description.text = "candidate " + std::to_string(i);
    s.description.token_ids = {static_cast<int>(i)};
    s.description.source_prompt_index = static_cast<int>(i);
    s.score = scores[i];
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace testsup

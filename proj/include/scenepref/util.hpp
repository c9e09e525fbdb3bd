#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace scenepref::util {

// FNV-1a over bytes. Used for artifact fingerprints and cache keys; stability
// across platforms matters more than collision resistance here.
std::uint64_t fnv1a64(std::string_view bytes);
std::string fnv1a64_hex(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

// Writes via a temp file in the same directory followed by rename, so readers
// never observe a half-written artifact.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

// Fingerprint of a file's bytes; throws DependencyError if the file is missing.
std::string file_fingerprint_hex(const std::filesystem::path& path);

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& rows);

std::string lower(std::string_view s);
std::vector<std::string> split_whitespace(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

// Case-insensitive occurrences of `keyword` starting at a word boundary:
// "voiceover" counts for "voice", "invoice" does not.
int count_keyword_word_start(std::string_view text, std::string_view keyword);
inline bool contains_keyword_word_start(std::string_view text, std::string_view keyword) {
  return count_keyword_word_start(text, keyword) > 0;
}

// Seeded generator with explicit Box-Muller normals and a hand-rolled shuffle,
// so every random draw in the toolkit is reproducible bit-for-bit regardless
// of standard-library distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double normal();

  // Uniform integer in [lo, hi], inclusive.
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(eng_() % static_cast<std::uint64_t>(hi - lo + 1));
  }

  std::uint64_t raw() { return eng_(); }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Fisher-Yates with our Rng; std::shuffle's draw sequence is implementation
// defined, which would break the determinism contract.
template <class T>
void deterministic_shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace scenepref::util

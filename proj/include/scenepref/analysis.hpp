#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "scenepref/captioner.hpp"

namespace scenepref {

// Frame/text alignment of one sample's baseline and tuned descriptions.
struct SimPair {
  std::string sample_id;
  double sim_base = 0.0;
  double sim_tuned = 0.0;
};

struct WinRate {
  double tuned_win = 0.0;
  double base_win = 0.0;
  double tie = 0.0;  // the three fractions sum to 1
};

// Strict-inequality wins; equal similarities land in the tie bucket.
WinRate winrate(const std::vector<SimPair>& pairs);

std::vector<SimPair> load_sim_pairs(const std::filesystem::path& path);

// Total occurrences of the keyword at word starts, case-insensitive, summed
// over the descriptions ("voiceover" counts for "voice", "invoice" does not).
// The keyword must be non-empty.
int keyword_count(const std::vector<std::string>& descriptions, const std::string& keyword);

// Word list with +1/-1 polarity, one "word<TAB>polarity" per line, '#'
// comments allowed. Lookup is exact after lowercasing and stripping edge
// punctuation.
class ToneLexicon {
 public:
  explicit ToneLexicon(const std::filesystem::path& path);
  int polarity(const std::string& word) const;  // +1, -1, or 0 when unknown
  std::size_t size() const { return polarity_.size(); }

 private:
  std::map<std::string, int> polarity_;
};

struct TextStats {
  double mean_length = 0.0;  // whitespace tokens per description
  double mean_tone = 0.0;    // 50 + 50*(pos-neg)/(pos+neg+1), averaged
};

TextStats text_stats(const std::vector<std::string>& descriptions, const ToneLexicon& lexicon);

// How often human raters preferred the same description as the judge.
struct AgreementTable {
  std::map<std::string, std::pair<int, int>> per_sample;  // id -> (match, mismatch)
};

AgreementTable load_agreement_table(const std::filesystem::path& path);

struct AgreementStats {
  double match_rate = 0.0;
  // Two one-sample z statistics against chance (p = 0.5): the Wald form uses
  // the estimated variance p(1-p)/n, the score form the null variance 0.25/n.
  // They disagree slightly; both are reported.
  double wald_z = 0.0;
  double score_z = 0.0;
  std::map<std::string, std::string> per_sample_majority;  // agree / disagree / tie
  int agree_count = 0;
  int disagree_count = 0;
  int tie_count = 0;
};

AgreementStats agreement_stats(const AgreementTable& table);

// Embeds frames and text into one space so cosine similarity is meaningful.
class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;
  virtual std::string id() const = 0;
  virtual Eigen::VectorXd embed_text(const std::string& text) const = 0;
  // One embedding per sampled frame of the scene.
  virtual std::vector<Eigen::VectorXd> embed_frames(const std::string& scene_ref) const = 0;
};

// Mean over the scene's sampled frames of cosine(frame, text).
double embed_similarity(const std::string& scene_ref, const std::string& description,
                        const EmbeddingBackend& backend);

// Deterministic backend over symbolic scenes: dimensions are the feature
// words plus one constant coordinate shared by every embedding. A
// description naming the scene's true features lands close to its frames;
// naming wrong ones pushes it away.
class FeatureOverlapBackend : public EmbeddingBackend {
 public:
  explicit FeatureOverlapBackend(const SceneResolver& scenes, int frame_count = 8);
  std::string id() const override { return "feature-overlap"; }
  Eigen::VectorXd embed_text(const std::string& text) const override;
  std::vector<Eigen::VectorXd> embed_frames(const std::string& scene_ref) const override;

 private:
  const SceneResolver& scenes_;
  int frame_count_;
};

nlohmann::json winrate_to_json(const WinRate& w);
nlohmann::json text_stats_to_json(const TextStats& s);
nlohmann::json agreement_stats_to_json(const AgreementStats& a);

}  // namespace scenepref

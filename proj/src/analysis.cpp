#include "scenepref/analysis.hpp"

#include <cctype>
#include <cmath>
#include <fstream>

#include "scenepref/errors.hpp"
#include "scenepref/scene.hpp"
#include "scenepref/util.hpp"

namespace scenepref {

using nlohmann::json;

WinRate winrate(const std::vector<SimPair>& pairs) {
  if (pairs.empty()) throw EmptyInputError("cannot compute a win rate over zero pairs");
  long tuned = 0, base = 0, tie = 0;
  for (const auto& p : pairs) {
    if (!std::isfinite(p.sim_base) || !std::isfinite(p.sim_tuned)) {
      throw NumericError("similarity for " + p.sample_id + " is not finite");
    }
    if (p.sim_tuned > p.sim_base) ++tuned;
    else if (p.sim_tuned < p.sim_base) ++base;
    else ++tie;
  }
  const double n = static_cast<double>(pairs.size());
  return WinRate{tuned / n, base / n, tie / n};
}

std::vector<SimPair> load_sim_pairs(const std::filesystem::path& path) {
  std::vector<SimPair> out;
  for (const auto& row : util::read_jsonl(path)) {
    try {
      SimPair p;
      p.sample_id = row.at("sample_id").get<std::string>();
      p.sim_base = row.at("sim_base").get<double>();
      p.sim_tuned = row.at("sim_tuned").get<double>();
      out.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw SchemaError(path.string() + ": bad similarity record: " + e.what());
    }
  }
  return out;
}

int keyword_count(const std::vector<std::string>& descriptions, const std::string& keyword) {
  if (keyword.empty()) throw ConfigError("keyword must be non-empty");
  int n = 0;
  for (const auto& d : descriptions) n += util::count_keyword_word_start(d, keyword);
  return n;
}

namespace {

std::string strip_token(const std::string& raw) {
  std::size_t b = 0, e = raw.size();
  while (b < e && !std::isalnum(static_cast<unsigned char>(raw[b]))) ++b;
  while (e > b && !std::isalnum(static_cast<unsigned char>(raw[e - 1]))) --e;
  return util::lower(raw.substr(b, e - b));
}

}  // namespace

ToneLexicon::ToneLexicon(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("tone lexicon not found: " + path.string());
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw SchemaError(path.string() + ":" + std::to_string(line_no) +
                        ": expected word<TAB>polarity");
    }
    const std::string word = util::lower(line.substr(0, tab));
    const std::string pol = line.substr(tab + 1);
    if (pol != "1" && pol != "+1" && pol != "-1") {
      throw SchemaError(path.string() + ":" + std::to_string(line_no) +
                        ": polarity must be +1 or -1, got \"" + pol + "\"");
    }
    polarity_[word] = pol == "-1" ? -1 : 1;
  }
  if (polarity_.empty()) throw ConfigError("tone lexicon is empty: " + path.string());
}

int ToneLexicon::polarity(const std::string& word) const {
  const auto it = polarity_.find(util::lower(word));
  return it == polarity_.end() ? 0 : it->second;
}

TextStats text_stats(const std::vector<std::string>& descriptions, const ToneLexicon& lexicon) {
  if (descriptions.empty()) throw EmptyInputError("cannot compute statistics over zero descriptions");
  double length_sum = 0.0, tone_sum = 0.0;
  for (const auto& d : descriptions) {
    const auto tokens = util::split_whitespace(d);
    length_sum += static_cast<double>(tokens.size());
    int pos = 0, neg = 0;
    for (const auto& t : tokens) {
      const int p = lexicon.polarity(strip_token(t));
      if (p > 0) ++pos;
      else if (p < 0) ++neg;
    }
    tone_sum += 50.0 + 50.0 * static_cast<double>(pos - neg) / static_cast<double>(pos + neg + 1);
  }
  const double n = static_cast<double>(descriptions.size());
  return TextStats{length_sum / n, tone_sum / n};
}

AgreementTable load_agreement_table(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(util::read_file(path));
  } catch (const json::exception& e) {
    throw SchemaError(path.string() + ": unreadable agreement file: " + e.what());
  }
  AgreementTable table;
  try {
    const int raters = j.value("raters_per_sample", 0);
    for (const auto& row : j.at("samples")) {
      const std::string id = row.at("sample_id").get<std::string>();
      const int match = row.at("match").get<int>();
      const int mismatch = row.at("mismatch").get<int>();
      if (match < 0 || mismatch < 0) {
        throw SchemaError(path.string() + ": negative count for sample " + id);
      }
      if (raters > 0 && match + mismatch != raters) {
        throw SchemaError(path.string() + ": sample " + id + " sums to " +
                          std::to_string(match + mismatch) + ", expected " +
                          std::to_string(raters) + " raters");
      }
      if (!table.per_sample.emplace(id, std::make_pair(match, mismatch)).second) {
        throw SchemaError(path.string() + ": duplicate sample " + id);
      }
    }
  } catch (const json::exception& e) {
    throw SchemaError(path.string() + ": bad agreement record: " + e.what());
  }
  return table;
}

AgreementStats agreement_stats(const AgreementTable& table) {
  long matches = 0, total = 0;
  AgreementStats out;
  for (const auto& [id, counts] : table.per_sample) {
    matches += counts.first;
    total += counts.first + counts.second;
    out.per_sample_majority[id] = counts.first > counts.second    ? "agree"
                                  : counts.first < counts.second ? "disagree"
                                                                 : "tie";
  }
  if (total == 0) throw EmptyInputError("agreement table holds zero judgments");
  for (const auto& [id, verdict] : out.per_sample_majority) {
    if (verdict == "agree") ++out.agree_count;
    else if (verdict == "disagree") ++out.disagree_count;
    else ++out.tie_count;
  }
  const double n = static_cast<double>(total);
  const double p = static_cast<double>(matches) / n;
  out.match_rate = p;
  if (p == 0.0 || p == 1.0) {
    throw NumericError("every judgment fell on one side; the Wald variance is zero");
  }
  out.wald_z = (p - 0.5) / std::sqrt(p * (1.0 - p) / n);
  out.score_z = (p - 0.5) / std::sqrt(0.25 / n);
  return out;
}

double embed_similarity(const std::string& scene_ref, const std::string& description,
                        const EmbeddingBackend& backend) {
  const auto frames = backend.embed_frames(scene_ref);
  if (frames.empty()) throw BackendError("backend returned no frame embeddings for " + scene_ref);
  const Eigen::VectorXd text = backend.embed_text(description);
  const double tn = text.norm();
  double sum = 0.0;
  for (const auto& f : frames) {
    const double fn = f.norm();
    if (tn == 0.0 || fn == 0.0) throw NumericError("zero-norm embedding for " + scene_ref);
    sum += f.dot(text) / (fn * tn);
  }
  return sum / static_cast<double>(frames.size());
}

namespace {

// Dimension order: smile, frown, neutral, flat, exaggerated, match, mismatch,
// then the shared constant coordinate.
constexpr int kEmbedDims = 8;

const std::vector<std::string>& feature_words() {
  static const std::vector<std::string> words = {
      expression_word(Expression::smile),  expression_word(Expression::frown),
      expression_word(Expression::neutral), tone_word(Tone::flat),
      tone_word(Tone::exaggerated),         congruence_word(Congruence::match),
      congruence_word(Congruence::mismatch)};
  return words;
}

}  // namespace

FeatureOverlapBackend::FeatureOverlapBackend(const SceneResolver& scenes, int frame_count)
    : scenes_(scenes), frame_count_(frame_count) {
  if (frame_count_ < 1) throw ConfigError("frame_count must be >= 1");
}

Eigen::VectorXd FeatureOverlapBackend::embed_text(const std::string& text) const {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(kEmbedDims);
  const auto& words = feature_words();
  for (int i = 0; i < static_cast<int>(words.size()); ++i) {
    if (util::contains_keyword_word_start(text, words[i])) v[i] = 1.0;
  }
  v[kEmbedDims - 1] = 1.0;
  return v;
}

std::vector<Eigen::VectorXd> FeatureOverlapBackend::embed_frames(
    const std::string& scene_ref) const {
  const SceneFeatures f = scenes_.features(scene_ref);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(kEmbedDims);
  v[static_cast<int>(f.expression)] = 1.0;
  v[3 + static_cast<int>(f.tone)] = 1.0;
  v[5 + static_cast<int>(f.congruence)] = 1.0;
  v[kEmbedDims - 1] = 1.0;
  // Every frame of a symbolic scene shows the same features; sampling keeps
  // the frame-count contract of the real pipeline.
  const auto indices = sample_frames(scenes_.frames(scene_ref), frame_count_);
  return std::vector<Eigen::VectorXd>(indices.size(), v);
}

json winrate_to_json(const WinRate& w) {
  return json{{"tuned_win", w.tuned_win}, {"base_win", w.base_win}, {"tie", w.tie}};
}

json text_stats_to_json(const TextStats& s) {
  return json{{"mean_length", s.mean_length}, {"mean_tone", s.mean_tone}};
}

json agreement_stats_to_json(const AgreementStats& a) {
  json per_sample = json::object();
  for (const auto& [id, verdict] : a.per_sample_majority) per_sample[id] = verdict;
  return json{{"match_rate", a.match_rate},
              {"wald_z", a.wald_z},
              {"score_z", a.score_z},
              {"agree", a.agree_count},
              {"disagree", a.disagree_count},
              {"tie", a.tie_count},
              {"per_sample", per_sample}};
}

}  // namespace scenepref

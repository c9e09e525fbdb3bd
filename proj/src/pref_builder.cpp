#include "scenepref/pref_builder.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include <nlohmann/json.hpp>

#include "scenepref/errors.hpp"
#include "scenepref/util.hpp"

namespace scenepref {

using nlohmann::json;

namespace {

void check_scores(const std::vector<ScoredDescription>& scored) {
  for (const auto& s : scored) {
    if (s.score < 1 || s.score > 10) {
      throw NumericError("candidate score " + std::to_string(s.score) + " is outside 1-10");
    }
  }
}

bool all_scores_equal(const std::vector<ScoredDescription>& scored) {
  return std::all_of(scored.begin(), scored.end(),
                     [&](const ScoredDescription& s) { return s.score == scored.front().score; });
}

}  // namespace

std::pair<ScoredDescription, ScoredDescription> select_pair(
    const std::vector<ScoredDescription>& scored, bool gt_label) {
  if (scored.empty()) throw EmptyInputError("cannot select a pair from zero candidates");
  check_scores(scored);
  std::vector<std::size_t> order(scored.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scored[a].score < scored[b].score; });
  const ScoredDescription& lowest = scored[order.front()];
  const ScoredDescription& highest = scored[order.back()];
  return gt_label ? std::make_pair(highest, lowest) : std::make_pair(lowest, highest);
}

std::pair<ScoredDescription, ScoredDescription> select_pair_with_gt(
    const std::vector<ScoredDescription>& scored) {
  if (scored.size() != 5) {
    throw ConfigError("helpfulness pairing needs exactly 5 scores, got " +
                      std::to_string(scored.size()));
  }
  check_scores(scored);
  std::size_t best = 0, worst = 0;
  for (std::size_t i = 1; i < scored.size(); ++i) {
    if (scored[i].score > scored[best].score) best = i;
    if (scored[i].score < scored[worst].score) worst = i;
  }
  if (best == worst) {
    throw DegeneratePairError("all five helpfulness scores are " +
                              std::to_string(scored.front().score) +
                              "; a pair would prefer a description over itself");
  }
  return {scored[best], scored[worst]};
}

BuildResult build_dataset(const std::vector<ScoredCandidates>& scored_sets,
                          const Manifest& manifest, const BuildConfig& config) {
  std::map<std::string, const Sample*> by_id;
  for (const auto& s : manifest.samples) by_id[s.id] = &s;

  BuildResult out;
  out.dataset.condition = config.condition;
  out.dataset.source_manifest = config.source_manifest;

  std::map<std::string, bool> seen;
  for (const auto& set : scored_sets) {
    const std::string& id = set.candidates.sample_id;
    if (seen.count(id)) throw SchemaError("sample " + id + " was scored twice");
    seen[id] = true;

    if (!set.judge_error.empty()) {
      ++out.report.judge_error;
      out.report.skipped.emplace_back(id, "judge: " + set.judge_error);
      continue;
    }
    const auto found = by_id.find(id);
    if (found == by_id.end()) throw SchemaError("scored sample " + id + " is not in the manifest");
    const Sample& sample = *found->second;
    if (set.scores.size() != set.candidates.descriptions.size()) {
      throw SchemaError("sample " + id + " has " + std::to_string(set.scores.size()) +
                        " scores for " + std::to_string(set.candidates.descriptions.size()) +
                        " candidates");
    }
    if (all_scores_equal(set.scores)) {
      ++out.report.degenerate;
      out.report.skipped.emplace_back(
          id, "degenerate: all scores equal " + std::to_string(set.scores.front().score));
      continue;
    }

    std::pair<ScoredDescription, ScoredDescription> pair;
    if (config.condition == Condition::with_gt) {
      pair = select_pair_with_gt(set.scores);
    } else {
      pair = select_pair(set.scores, sample.label);
    }

    PreferencePair record;
    record.sample_id = id;
    record.prompt_x = config.training_prompt;
    record.chosen = pair.first.description;
    record.rejected = pair.second.description;
    record.condition = config.condition;
    record.chosen_score = pair.first.score;
    record.rejected_score = pair.second.score;
    out.dataset.pairs.push_back(std::move(record));
    ++out.report.kept;
  }

  if (out.dataset.pairs.empty()) {
    throw EmptyInputError("every sample was skipped; the preference dataset is empty");
  }
  return out;
}

namespace {

json description_to_json(const Description& d) {
  return json{{"token_ids", d.token_ids},
              {"source_prompt_index", d.source_prompt_index},
              {"generator_tag", d.generator_tag}};
}

Description description_from_json(const std::string& text, const json& j) {
  Description d;
  d.text = text;
  d.token_ids = j.at("token_ids").get<std::vector<int>>();
  d.source_prompt_index = j.at("source_prompt_index").get<int>();
  d.generator_tag = j.at("generator_tag").get<std::string>();
  return d;
}

}  // namespace

void save_dataset(const std::filesystem::path& path, const PreferenceDataset& dataset,
                  const json& inputs) {
  std::vector<json> rows;
  json header{{"kind", "preference_dataset"},
              {"condition", to_string(dataset.condition)},
              {"source_manifest", dataset.source_manifest},
              {"pair_count", dataset.pairs.size()}};
  if (!inputs.empty()) header["inputs"] = inputs;
  rows.push_back(std::move(header));
  for (const auto& p : dataset.pairs) {
    rows.push_back(json{{"sample_id", p.sample_id},
                        {"prompt", p.prompt_x},
                        {"chosen_text", p.chosen.text},
                        {"rejected_text", p.rejected.text},
                        {"condition", to_string(p.condition)},
                        {"chosen_score", p.chosen_score},
                        {"rejected_score", p.rejected_score},
                        {"chosen_detail", description_to_json(p.chosen)},
                        {"rejected_detail", description_to_json(p.rejected)}});
  }
  util::write_jsonl(path, rows);
}

PreferenceDataset load_dataset(const std::filesystem::path& path) {
  const auto rows = util::read_jsonl(path);
  if (rows.empty()) throw SchemaError(path.string() + ": empty preference dataset file");
  const json& header = rows.front();
  if (header.value("kind", "") != "preference_dataset") {
    throw SchemaError(path.string() + ": missing preference_dataset header line");
  }
  PreferenceDataset out;
  try {
    out.condition = condition_from_string(header.at("condition").get<std::string>());
    out.source_manifest = header.at("source_manifest").get<std::string>();
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const json& r = rows[i];
      PreferencePair p;
      p.sample_id = r.at("sample_id").get<std::string>();
      p.prompt_x = r.at("prompt").get<std::string>();
      p.condition = condition_from_string(r.at("condition").get<std::string>());
      p.chosen_score = r.at("chosen_score").get<int>();
      p.rejected_score = r.at("rejected_score").get<int>();
      p.chosen = description_from_json(r.at("chosen_text").get<std::string>(), r.at("chosen_detail"));
      p.rejected =
          description_from_json(r.at("rejected_text").get<std::string>(), r.at("rejected_detail"));
      out.pairs.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw SchemaError(path.string() + ": bad preference record: " + e.what());
  }
  const std::size_t declared = header.value("pair_count", out.pairs.size());
  if (declared != out.pairs.size()) {
    throw SchemaError(path.string() + ": header declares " + std::to_string(declared) +
                      " pairs but the file holds " + std::to_string(out.pairs.size()));
  }
  return out;
}

void save_skip_report(const std::filesystem::path& path, const SkipReport& report) {
  json j;
  j["kept"] = report.kept;
  j["degenerate"] = report.degenerate;
  j["judge_error"] = report.judge_error;
  json skipped = json::array();
  for (const auto& [id, reason] : report.skipped) {
    skipped.push_back(json{{"sample_id", id}, {"reason", reason}});
  }
  j["skipped"] = skipped;
  util::write_file_atomic(path, j.dump(2) + "\n");
}

}  // namespace scenepref

#include "scenepref/corpus.hpp"

#include <set>

#include <nlohmann/json.hpp>

#include "scenepref/errors.hpp"
#include "scenepref/util.hpp"

namespace scenepref {

namespace {

const std::set<std::string>& known_splits() {
  static const std::set<std::string> splits{"train", "test"};
  return splits;
}

Sample sample_from_json(const nlohmann::json& j, std::size_t record_index) {
  auto where = [&] { return "sample record " + std::to_string(record_index) + ": "; };
  Sample s;
  try {
    s.id = j.at("id").get<std::string>();
    s.utterance = j.at("utterance").get<std::string>();
    s.context = j.value("context", std::vector<std::string>{});
    s.label = j.at("label").get<bool>();
    s.scene_ref = j.value("scene_ref", std::string{});
    s.split = j.at("split").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(where() + e.what());
  }
  if (s.id.empty()) throw SchemaError(where() + "empty id");
  if (s.utterance.empty()) throw SchemaError(where() + "empty utterance for id \"" + s.id + "\"");
  if (!known_splits().count(s.split)) {
    throw SchemaError(where() + "unknown split tag \"" + s.split + "\" for id \"" + s.id + "\"");
  }
  return s;
}

std::map<std::string, int> tally_splits(const std::vector<Sample>& samples) {
  std::map<std::string, int> counts;
  for (const auto& s : samples) ++counts[s.split];
  return counts;
}

}  // namespace

Manifest load_manifest(const std::filesystem::path& path) {
  auto rows = util::read_jsonl(path);
  if (rows.empty()) throw SchemaError(path.string() + ": missing header line");
  const auto& header = rows.front();
  if (!header.is_object() || !header.contains("dataset_name")) {
    throw SchemaError(path.string() + ": first line must be a header with dataset_name");
  }

  Manifest m;
  m.dataset_name = header.at("dataset_name").get<std::string>();

  std::set<std::string> seen;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    Sample s = sample_from_json(rows[i], i);
    if (!seen.insert(s.id).second) {
      throw SchemaError(path.string() + ": duplicate sample id \"" + s.id + "\"");
    }
    m.samples.push_back(std::move(s));
  }
  m.split_counts = tally_splits(m.samples);

  if (header.contains("split_counts")) {
    std::map<std::string, int> declared = header.at("split_counts").get<std::map<std::string, int>>();
    if (declared != m.split_counts) {
      throw SchemaError(path.string() + ": header split_counts disagree with the sample tally");
    }
  }
  return m;
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  std::vector<nlohmann::json> rows;
  rows.push_back({{"dataset_name", manifest.dataset_name},
                  {"split_counts", tally_splits(manifest.samples)}});
  for (const auto& s : manifest.samples) {
    rows.push_back({{"id", s.id},
                    {"utterance", s.utterance},
                    {"context", s.context},
                    {"label", s.label},
                    {"scene_ref", s.scene_ref},
                    {"split", s.split}});
  }
  util::write_jsonl(path, rows);
}

std::vector<Sample> filter_split(const Manifest& manifest, const std::string& split) {
  std::vector<Sample> out;
  for (const auto& s : manifest.samples) {
    if (s.split == split) out.push_back(s);
  }
  return out;
}

}  // namespace scenepref

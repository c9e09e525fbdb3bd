#include "scenepref/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <ctime>
#include <map>
#include <memory>

#include "scenepref/errors.hpp"
#include "scenepref/util.hpp"

namespace scenepref {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Lock and shared helpers

StageLock::StageLock(const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  path_ = out_dir / ".lock";
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    throw ConfigError("output directory is locked by another run: " + path_.string() +
                      " exists (remove it if that run is dead)");
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  if (::write(fd, pid.data(), pid.size()) < 0) { /* advisory content only */ }
  ::close(fd);
}

StageLock::~StageLock() {
  std::error_code ec;
  std::filesystem::remove(path_, ec);
}

namespace {

std::string fp_of(const std::filesystem::path& p) {
  if (!std::filesystem::exists(p)) throw DependencyError("missing file: " + p.string());
  return util::file_fingerprint_hex(p);
}

void require_artifact(const std::filesystem::path& p, const std::string& stage,
                      const std::string& producer) {
  if (!std::filesystem::exists(p)) {
    throw DependencyError("stage " + stage + " needs " + p.string() + "; run the " + producer +
                          " stage first");
  }
}

json read_json_file(const std::filesystem::path& p) {
  try {
    return json::parse(util::read_file(p));
  } catch (const json::exception& e) {
    throw SchemaError(p.string() + ": " + e.what());
  }
}

void write_json_atomic(const std::filesystem::path& p, const json& j) {
  util::write_file_atomic(p, j.dump(2) + "\n");
}

// An artifact declares what it was built from; a consumer refuses to use it
// if any of those files has since changed or vanished. Declared names are
// resolved next to the artifact itself.
void verify_declared_inputs(const json& header, const std::filesystem::path& artifact) {
  if (!header.contains("inputs")) return;
  for (const auto& [name, declared] : header.at("inputs").items()) {
    const auto path = artifact.parent_path() / name;
    if (!std::filesystem::exists(path)) {
      throw DependencyError(artifact.string() + " was built from " + name +
                            ", which no longer exists");
    }
    const std::string current = util::file_fingerprint_hex(path);
    if (current != declared.get<std::string>()) {
      throw DependencyError(artifact.string() + " is stale: " + name +
                            " has changed since it was built (fingerprint " + current +
                            " != " + declared.get<std::string>() + ")");
    }
  }
}

std::string now_utc() {
  std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// The run manifest is the one artifact allowed to carry timestamps; the
// determinism contract therefore excludes it from byte comparison.
void append_run_manifest(const StageContext& ctx, const std::string& stage,
                         const std::map<std::string, std::string>& inputs,
                         const std::vector<std::filesystem::path>& outputs) {
  const PipelinePaths p{ctx.out_dir};
  json manifest;
  if (std::filesystem::exists(p.run_manifest())) {
    manifest = read_json_file(p.run_manifest());
  } else {
    manifest = json{{"kind", "run_manifest"}, {"tool_version", kToolVersion}, {"stages", json::array()}};
  }
  json in = json::object();
  for (const auto& [name, fp] : inputs) in[name] = fp;
  json out = json::object();
  for (const auto& o : outputs) out[o.filename().string()] = fp_of(o);
  manifest["stages"].push_back(
      json{{"stage", stage}, {"timestamp", now_utc()}, {"inputs", in}, {"outputs", out}});
  write_json_atomic(p.run_manifest(), manifest);
}

json description_to_json(const Description& d) {
  return json{{"text", d.text},
              {"token_ids", d.token_ids},
              {"source_prompt_index", d.source_prompt_index},
              {"generator_tag", d.generator_tag}};
}

Description description_from_json(const json& j) {
  Description d;
  d.text = j.at("text").get<std::string>();
  d.token_ids = j.at("token_ids").get<std::vector<int>>();
  d.source_prompt_index = j.at("source_prompt_index").get<int>();
  d.generator_tag = j.at("generator_tag").get<std::string>();
  return d;
}

std::unique_ptr<Agent> make_agent(const StageContext& ctx) {
  if (ctx.agent == "oracle") return std::make_unique<OracleAgent>();
  if (ctx.agent == "remote") return std::make_unique<RemoteAgent>();
  throw ConfigError("unknown agent \"" + ctx.agent + "\"; expected oracle or remote");
}

Manifest split_manifest(const Manifest& full, const std::string& split) {
  Manifest m;
  m.dataset_name = full.dataset_name;
  m.samples = filter_split(full, split);
  m.split_counts[split] = static_cast<int>(m.samples.size());
  return m;
}

SynthWorld load_world(const PipelinePaths& p, const std::string& stage) {
  require_artifact(p.world(), stage, "world");
  return world_from_json(read_json_file(p.world()));
}

ToyPolicy load_verified_checkpoint(const std::filesystem::path& path, json* metadata = nullptr) {
  json meta;
  ToyPolicy policy = load_checkpoint(path, &meta);
  verify_declared_inputs(meta, path);
  if (metadata != nullptr) *metadata = std::move(meta);
  return policy;
}

Metrics metrics_from_json(const json& j) {
  Metrics m;
  m.tp = j.at("tp").get<long>();
  m.fp = j.at("fp").get<long>();
  m.fn = j.at("fn").get<long>();
  m.tn = j.at("tn").get<long>();
  m.accuracy = j.at("accuracy").get<double>();
  m.precision = j.at("precision").get<double>();
  m.recall = j.at("recall").get<double>();
  return m;
}

TrainingReport training_report_from_json(const json& j) {
  TrainingReport r;
  for (const auto& e : j.at("epochs")) {
    r.epochs.push_back(EpochStats{e.at("mean_loss").get<double>(),
                                  e.at("mean_abs_dlogprob").get<double>()});
  }
  r.steps = j.at("steps").get<int>();
  r.aborted = j.at("aborted").get<bool>();
  r.abort_reason = j.at("abort_reason").get<std::string>();
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config serialization

json captioner_config_to_json(const CaptionerConfig& c) {
  return json{{"backend", c.backend},          {"embed_dim", c.embed_dim},
              {"frame_count", c.frame_count},  {"frame_width", c.frame_width},
              {"frame_height", c.frame_height}, {"decode", c.decode},
              {"seed", c.seed}};
}

CaptionerConfig captioner_config_from_json(const json& j) {
  CaptionerConfig c;
  try {
    c.backend = j.at("backend").get<std::string>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.frame_count = j.at("frame_count").get<int>();
    c.frame_width = j.at("frame_width").get<int>();
    c.frame_height = j.at("frame_height").get<int>();
    c.decode = j.at("decode").get<std::string>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad captioner config: ") + e.what());
  }
  return c;
}

json dpo_config_to_json(const DpoConfig& c) {
  return json{{"beta", c.beta},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate},
              {"adapter",
               json{{"rank", c.adapter.rank},
                    {"scale", c.adapter.scale},
                    {"dropout", c.adapter.dropout},
                    {"target_maps", c.adapter.target_maps},
                    {"seed", c.adapter.seed}}},
              {"seed", c.seed},
              {"training_prompt", c.training_prompt}};
}

DpoConfig dpo_config_from_json(const json& j) {
  DpoConfig c;
  try {
    c.beta = j.at("beta").get<double>();
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    const json& a = j.at("adapter");
    c.adapter.rank = a.at("rank").get<int>();
    c.adapter.scale = a.at("scale").get<double>();
    c.adapter.dropout = a.at("dropout").get<double>();
    c.adapter.target_maps = a.at("target_maps").get<std::vector<std::string>>();
    c.adapter.seed = a.at("seed").get<std::uint64_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.training_prompt = j.at("training_prompt").get<std::string>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad training config: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Stage bodies (lock already held)

namespace {

void world_impl(const StageContext& ctx, int n, std::uint64_t seed) {
  const PipelinePaths p{ctx.out_dir};
  const SynthWorld world = generate_world(n, seed);

  json wj = world_to_json(world);
  wj["tool_version"] = kToolVersion;
  wj["inputs"] = json::object();
  write_json_atomic(p.world(), wj);
  const std::string wfp = fp_of(p.world());

  const Manifest manifest = world_to_manifest(world);
  std::vector<json> rows;
  rows.push_back(json{{"dataset_name", manifest.dataset_name},
                      {"split_counts", manifest.split_counts},
                      {"inputs", json{{"world.json", wfp}}}});
  for (const auto& s : manifest.samples) {
    rows.push_back(json{{"id", s.id},
                        {"utterance", s.utterance},
                        {"context", s.context},
                        {"label", s.label},
                        {"scene_ref", s.scene_ref},
                        {"split", s.split}});
  }
  util::write_jsonl(p.manifest(), rows);

  append_run_manifest(ctx, "world", {}, {p.world(), p.manifest()});
}

void generate_impl(const StageContext& ctx, const CaptionerConfig& config) {
  const PipelinePaths p{ctx.out_dir};
  const SynthWorld world = load_world(p, "generate");
  const std::string wfp = fp_of(p.world());
  const Manifest train = split_manifest(world_to_manifest(world), "train");
  const SceneStore store(world);
  const PromptLibrary library(ctx.prompts_dir);

  PolicyInit init;
  init.seed = config.seed;
  const ToyPolicy policy(ToyPolicy::default_arch(config.embed_dim), init);
  save_checkpoint(p.baseline_checkpoint(), policy,
                  json{{"inputs", json{{"world.json", wfp}}},
                       {"captioner", captioner_config_to_json(config)},
                       {"checkpoint_tag", "baseline"},
                       {"tool_version", kToolVersion}});

  std::vector<json> rows;
  rows.push_back(json{
      {"kind", "candidates"},
      {"inputs", json{{"world.json", wfp}}},
      {"captioner", captioner_config_to_json(config)},
      {"template_fingerprints",
       json{{"diverse_prompts.txt", fp_of(ctx.prompts_dir / "diverse_prompts.txt")}}},
      {"tool_version", kToolVersion}});
  for (const auto& sample : train.samples) {
    const CandidateSet set =
        generate_candidates(sample, config, library.diverse_prompts(), policy, store, "baseline");
    json descs = json::array();
    for (const auto& d : set.descriptions) descs.push_back(description_to_json(d));
    rows.push_back(json{{"sample_id", set.sample_id}, {"descriptions", descs}});
  }
  util::write_jsonl(p.candidates(), rows);

  append_run_manifest(ctx, "generate", {{"world.json", wfp}},
                      {p.baseline_checkpoint(), p.candidates()});
}

void judge_impl(const StageContext& ctx, Condition condition) {
  const PipelinePaths p{ctx.out_dir};
  require_artifact(p.candidates(), "judge", "generate");
  const SynthWorld world = load_world(p, "judge");
  const auto candidate_rows = util::read_jsonl(p.candidates());
  if (candidate_rows.empty()) throw SchemaError(p.candidates().string() + ": empty file");
  verify_declared_inputs(candidate_rows.front(), p.candidates());

  const Manifest train = split_manifest(world_to_manifest(world), "train");
  std::map<std::string, const Sample*> by_id;
  for (const auto& s : train.samples) by_id[s.id] = &s;

  const PromptLibrary library(ctx.prompts_dir);
  const auto agent = make_agent(ctx);
  std::unique_ptr<ReplyCache> cache;
  if (!ctx.cache_dir.empty()) cache = std::make_unique<ReplyCache>(ctx.cache_dir);

  std::vector<json> rows;
  rows.push_back(json{{"kind", "scores"},
                      {"condition", to_string(condition)},
                      {"agent_id", agent->id()},
                      {"inputs",
                       json{{"world.json", fp_of(p.world())},
                            {"candidates.jsonl", fp_of(p.candidates())}}},
                      {"tool_version", kToolVersion}});
  for (std::size_t i = 1; i < candidate_rows.size(); ++i) {
    const json& row = candidate_rows[i];
    CandidateSet set;
    set.sample_id = row.at("sample_id").get<std::string>();
    for (const auto& dj : row.at("descriptions")) set.descriptions.push_back(description_from_json(dj));
    const auto found = by_id.find(set.sample_id);
    if (found == by_id.end()) {
      throw SchemaError("candidates name sample " + set.sample_id + " outside the train split");
    }
    const Sample& sample = *found->second;

    json out{{"sample_id", set.sample_id}, {"judge_error", ""}};
    json scores = json::array();
    try {
      std::vector<ScoredDescription> scored;
      if (condition == Condition::with_gt) {
        scored = rank_with_gt(set, sample, *agent, library, cache.get());
      } else {
        for (const auto& d : set.descriptions) {
          scored.push_back(score_description(d, sample, condition, *agent, library, cache.get()));
        }
      }
      for (std::size_t k = 0; k < scored.size(); ++k) {
        scores.push_back(json{{"prompt_index", k},
                              {"score", scored[k].score},
                              {"raw_reply", scored[k].raw_reply}});
      }
    } catch (const JudgeParseError& e) {
      out["judge_error"] = e.what();
      scores = json::array();
    }
    out["scores"] = scores;
    rows.push_back(std::move(out));
  }
  util::write_jsonl(p.scores(), rows);

  append_run_manifest(ctx, "judge",
                      {{"world.json", fp_of(p.world())}, {"candidates.jsonl", fp_of(p.candidates())}},
                      {p.scores()});
}

void build_prefs_impl(const StageContext& ctx, const std::string& training_prompt) {
  const PipelinePaths p{ctx.out_dir};
  require_artifact(p.candidates(), "build-prefs", "generate");
  require_artifact(p.scores(), "build-prefs", "judge");
  const auto candidate_rows = util::read_jsonl(p.candidates());
  const auto score_rows = util::read_jsonl(p.scores());
  if (candidate_rows.empty() || score_rows.empty()) {
    throw SchemaError("candidates or scores file is empty");
  }
  verify_declared_inputs(score_rows.front(), p.scores());
  const Condition condition =
      condition_from_string(score_rows.front().at("condition").get<std::string>());

  if (candidate_rows.size() != score_rows.size()) {
    throw SchemaError("candidates and scores disagree on sample count");
  }
  std::vector<ScoredCandidates> scored_sets;
  for (std::size_t i = 1; i < candidate_rows.size(); ++i) {
    const json& crow = candidate_rows[i];
    const json& srow = score_rows[i];
    ScoredCandidates set;
    set.candidates.sample_id = crow.at("sample_id").get<std::string>();
    if (srow.at("sample_id").get<std::string>() != set.candidates.sample_id) {
      throw SchemaError("candidates and scores disagree on sample order at record " +
                        std::to_string(i));
    }
    for (const auto& dj : crow.at("descriptions")) {
      set.candidates.descriptions.push_back(description_from_json(dj));
    }
    set.judge_error = srow.at("judge_error").get<std::string>();
    if (set.judge_error.empty()) {
      for (const auto& sj : srow.at("scores")) {
        ScoredDescription sd;
        const auto k = sj.at("prompt_index").get<std::size_t>();
        if (k >= set.candidates.descriptions.size()) {
          throw SchemaError("score row for " + set.candidates.sample_id +
                            " names prompt index " + std::to_string(k));
        }
        sd.description = set.candidates.descriptions[k];
        sd.score = sj.at("score").get<int>();
        sd.condition = condition;
        sd.raw_reply = sj.at("raw_reply").get<std::string>();
        set.scores.push_back(std::move(sd));
      }
    }
    scored_sets.push_back(std::move(set));
  }

  const SynthWorld world = load_world(p, "build-prefs");
  const Manifest train = split_manifest(world_to_manifest(world), "train");

  BuildConfig config;
  config.condition = condition;
  config.training_prompt = training_prompt;
  config.source_manifest = "manifest.jsonl@" + fp_of(p.manifest());
  const BuildResult built = build_dataset(scored_sets, train, config);

  save_dataset(p.prefs(), built.dataset,
               json{{"candidates.jsonl", fp_of(p.candidates())},
                    {"scores.jsonl", fp_of(p.scores())},
                    {"world.json", fp_of(p.world())}});
  save_skip_report(p.skip_report(), built.report);

  append_run_manifest(ctx, "build-prefs",
                      {{"candidates.jsonl", fp_of(p.candidates())},
                       {"scores.jsonl", fp_of(p.scores())}},
                      {p.prefs(), p.skip_report()});
}

void train_impl(const StageContext& ctx, const DpoConfig& config,
                const std::filesystem::path& prefs_path) {
  const PipelinePaths p{ctx.out_dir};
  const std::filesystem::path prefs = prefs_path.empty() ? p.prefs() : prefs_path;
  require_artifact(prefs, "train", "build-prefs");
  require_artifact(p.baseline_checkpoint(), "train", "generate");
  const auto pref_rows = util::read_jsonl(prefs);
  if (!pref_rows.empty()) verify_declared_inputs(pref_rows.front(), prefs);

  const SynthWorld world = load_world(p, "train");
  const PreferenceDataset dataset = load_dataset(prefs);

  json base_meta;
  ToyPolicy policy = load_verified_checkpoint(p.baseline_checkpoint(), &base_meta);
  ToyPolicy reference = policy;
  reference.set_role("reference");
  reference.freeze();

  const TrainingReport report = train(policy, reference, dataset, config, make_scene_lookup(world));

  // A dataset pulled from outside the run directory is fingerprinted under a
  // separate key: verified inputs must resolve next to the artifact.
  const std::string prefs_name = prefs.filename().string();
  json inputs{{"baseline_checkpoint.json", fp_of(p.baseline_checkpoint())},
              {"world.json", fp_of(p.world())}};
  json external = json::object();
  if (prefs_path.empty()) {
    inputs[prefs_name] = fp_of(prefs);
  } else {
    external[prefs.string()] = fp_of(prefs);
  }
  save_checkpoint(p.checkpoint(), policy,
                  json{{"inputs", inputs},
                       {"external_inputs", external},
                       {"dpo", dpo_config_to_json(config)},
                       {"checkpoint_tag", "tuned"},
                       {"training", training_report_to_json(report)},
                       {"tool_version", kToolVersion}});
  json report_doc = training_report_to_json(report);
  report_doc["inputs"] = inputs;
  write_json_atomic(p.training_report(), report_doc);

  append_run_manifest(ctx, "train",
                      {{prefs_name, fp_of(prefs)},
                       {"baseline_checkpoint.json", fp_of(p.baseline_checkpoint())}},
                      {p.checkpoint(), p.training_report()});
}

void eval_impl(const StageContext& ctx, EvalMode mode, const std::string& prompt_tag,
               const std::string& checkpoint_tag) {
  const PipelinePaths p{ctx.out_dir};
  std::filesystem::path ckpt_path;
  if (checkpoint_tag == "baseline") {
    ckpt_path = p.baseline_checkpoint();
    require_artifact(ckpt_path, "eval", "generate");
  } else if (checkpoint_tag == "tuned") {
    ckpt_path = p.checkpoint();
    require_artifact(ckpt_path, "eval", "train");
  } else {
    throw ConfigError("checkpoint tag must be baseline or tuned, got \"" + checkpoint_tag + "\"");
  }
  const SynthWorld world = load_world(p, "eval");
  const ToyPolicy policy = load_verified_checkpoint(ckpt_path);
  const SceneStore store(world);
  const Manifest test = split_manifest(world_to_manifest(world), "test");
  const PromptLibrary library(ctx.prompts_dir);
  const auto agent = make_agent(ctx);
  std::unique_ptr<ReplyCache> cache;
  if (!ctx.cache_dir.empty()) cache = std::make_unique<ReplyCache>(ctx.cache_dir);

  const EvalResult result = run_eval(test, mode, prompt_tag, checkpoint_tag, &policy, store,
                                     *agent, library, cache.get());

  std::vector<json> rows;
  rows.push_back(json{{"kind", "eval"},
                      {"mode", to_string(mode)},
                      {"inference_prompt", result.inference_prompt},
                      {"checkpoint", checkpoint_tag},
                      {"metrics", metrics_to_json(result.metrics)},
                      {"excluded", result.excluded},
                      {"inputs",
                       json{{"world.json", fp_of(p.world())},
                            {ckpt_path.filename().string(), fp_of(ckpt_path)}}},
                      {"tool_version", kToolVersion}});
  for (const auto& r : result.records) rows.push_back(eval_record_to_json(r));
  const auto out_path = p.eval_file(to_string(mode), result.inference_prompt, checkpoint_tag);
  util::write_jsonl(out_path, rows);

  append_run_manifest(ctx, "eval:" + to_string(mode) + ":" + checkpoint_tag,
                      {{ckpt_path.filename().string(), fp_of(ckpt_path)}}, {out_path});
}

void analyze_impl(const StageContext& ctx, const std::string& prompt_tag) {
  const PipelinePaths p{ctx.out_dir};
  require_artifact(p.baseline_checkpoint(), "analyze", "generate");
  require_artifact(p.checkpoint(), "analyze", "train");
  const SynthWorld world = load_world(p, "analyze");

  json base_meta;
  const ToyPolicy base = load_verified_checkpoint(p.baseline_checkpoint(), &base_meta);
  const ToyPolicy tuned = load_verified_checkpoint(p.checkpoint());
  const SceneStore store(world);
  const Manifest test = split_manifest(world_to_manifest(world), "test");
  int frame_count = 8;
  if (base_meta.contains("captioner")) {
    frame_count = base_meta.at("captioner").at("frame_count").get<int>();
  }
  const FeatureOverlapBackend backend(store, frame_count);

  const std::string& prompt_text = inference_prompt_text(prompt_tag);
  const int base_pid = base.prompt_id(prompt_text);
  const int tuned_pid = tuned.prompt_id(prompt_text);

  std::vector<SimPair> sims;
  std::vector<std::string> base_descs, tuned_descs;
  json sim_rows = json::array();
  for (const auto& sample : test.samples) {
    const SceneFeatures f = store.features(sample.scene_ref);
    const std::string base_text = base.vocab().decode(base.greedy_decode(base_pid, f));
    const std::string tuned_text = tuned.vocab().decode(tuned.greedy_decode(tuned_pid, f));
    SimPair pair;
    pair.sample_id = sample.id;
    pair.sim_base = embed_similarity(sample.scene_ref, base_text, backend);
    pair.sim_tuned = embed_similarity(sample.scene_ref, tuned_text, backend);
    sim_rows.push_back(json{{"sample_id", pair.sample_id},
                            {"sim_base", pair.sim_base},
                            {"sim_tuned", pair.sim_tuned}});
    sims.push_back(pair);
    base_descs.push_back(base_text);
    tuned_descs.push_back(tuned_text);
  }
  const ToneLexicon lexicon(ctx.prompts_dir.parent_path() / "lexicon" / "tone_lexicon.txt");

  json doc{{"kind", "analysis"},
           {"prompt_tag", prompt_tag},
           {"sims", winrate_to_json(winrate(sims))},
           {"sim_pairs", sim_rows},
           {"baseline_stats", text_stats_to_json(text_stats(base_descs, lexicon))},
           {"tuned_stats", text_stats_to_json(text_stats(tuned_descs, lexicon))},
           {"baseline_cue_mentions",
            keyword_count(base_descs, kToneCue) + keyword_count(base_descs, kCongruenceCue)},
           {"tuned_cue_mentions",
            keyword_count(tuned_descs, kToneCue) + keyword_count(tuned_descs, kCongruenceCue)},
           {"inputs",
            json{{"world.json", fp_of(p.world())},
                 {"baseline_checkpoint.json", fp_of(p.baseline_checkpoint())},
                 {"checkpoint.json", fp_of(p.checkpoint())}}},
           {"tool_version", kToolVersion}};
  write_json_atomic(p.analysis(), doc);

  append_run_manifest(ctx, "analyze",
                      {{"baseline_checkpoint.json", fp_of(p.baseline_checkpoint())},
                       {"checkpoint.json", fp_of(p.checkpoint())}},
                      {p.analysis()});
}

}  // namespace

// ---------------------------------------------------------------------------
// Public stage entry points

void stage_world(const StageContext& ctx, int n, std::uint64_t seed) {
  StageLock lock(ctx.out_dir);
  world_impl(ctx, n, seed);
}

void stage_generate(const StageContext& ctx, const CaptionerConfig& config) {
  StageLock lock(ctx.out_dir);
  generate_impl(ctx, config);
}

void stage_judge(const StageContext& ctx, Condition condition) {
  StageLock lock(ctx.out_dir);
  judge_impl(ctx, condition);
}

void stage_build_prefs(const StageContext& ctx, const std::string& training_prompt) {
  StageLock lock(ctx.out_dir);
  build_prefs_impl(ctx, training_prompt);
}

void stage_train(const StageContext& ctx, const DpoConfig& config,
                 const std::filesystem::path& prefs_path) {
  StageLock lock(ctx.out_dir);
  train_impl(ctx, config, prefs_path);
}

void stage_eval(const StageContext& ctx, EvalMode mode, const std::string& prompt_tag,
                const std::string& checkpoint_tag) {
  StageLock lock(ctx.out_dir);
  eval_impl(ctx, mode, prompt_tag, checkpoint_tag);
}

void stage_analyze(const StageContext& ctx, const std::string& prompt_tag) {
  StageLock lock(ctx.out_dir);
  analyze_impl(ctx, prompt_tag);
}

ExperimentReport stage_synth_run(const StageContext& ctx, int n, std::uint64_t seed,
                                 Condition condition, const CaptionerConfig& captioner_config,
                                 const DpoConfig& dpo_config, EvalMode eval_mode,
                                 const std::string& prompt_tag) {
  StageLock lock(ctx.out_dir);
  const PipelinePaths p{ctx.out_dir};

  world_impl(ctx, n, seed);
  generate_impl(ctx, captioner_config);
  judge_impl(ctx, condition);
  build_prefs_impl(ctx, dpo_config.training_prompt);
  train_impl(ctx, dpo_config, {});
  eval_impl(ctx, eval_mode, prompt_tag, "baseline");
  eval_impl(ctx, eval_mode, prompt_tag, "tuned");
  analyze_impl(ctx, prompt_tag);

  // The report re-reads the stage artifacts, so anything missing from the
  // file contracts would show up here as a hole.
  const SynthWorld world = load_world(p, "report");
  ExperimentReport report;
  report.world_size = static_cast<int>(world.scenes.size());
  const Manifest manifest = world_to_manifest(world);
  report.train_size = static_cast<int>(filter_split(manifest, "train").size());
  report.test_size = static_cast<int>(filter_split(manifest, "test").size());
  report.condition = condition;
  report.eval_mode = to_string(eval_mode);
  report.inference_prompt = prompt_tag;

  const auto pref_rows = util::read_jsonl(p.prefs());
  report.pair_count = pref_rows.front().at("pair_count").get<int>();
  const json skips = read_json_file(p.skip_report());
  report.skips.kept = skips.at("kept").get<int>();
  report.skips.degenerate = skips.at("degenerate").get<int>();
  report.skips.judge_error = skips.at("judge_error").get<int>();
  for (const auto& row : skips.at("skipped")) {
    report.skips.skipped.emplace_back(row.at("sample_id").get<std::string>(),
                                      row.at("reason").get<std::string>());
  }
  report.training = training_report_from_json(read_json_file(p.training_report()));

  const auto mode_name = to_string(eval_mode);
  const auto base_rows = util::read_jsonl(p.eval_file(mode_name, prompt_tag, "baseline"));
  const auto tuned_rows = util::read_jsonl(p.eval_file(mode_name, prompt_tag, "tuned"));
  report.baseline = metrics_from_json(base_rows.front().at("metrics"));
  report.tuned = metrics_from_json(tuned_rows.front().at("metrics"));

  const json analysis = read_json_file(p.analysis());
  report.sims.tuned_win = analysis.at("sims").at("tuned_win").get<double>();
  report.sims.base_win = analysis.at("sims").at("base_win").get<double>();
  report.sims.tie = analysis.at("sims").at("tie").get<double>();
  report.baseline_stats.mean_length = analysis.at("baseline_stats").at("mean_length").get<double>();
  report.baseline_stats.mean_tone = analysis.at("baseline_stats").at("mean_tone").get<double>();
  report.tuned_stats.mean_length = analysis.at("tuned_stats").at("mean_length").get<double>();
  report.tuned_stats.mean_tone = analysis.at("tuned_stats").at("mean_tone").get<double>();
  report.baseline_cue_mentions = analysis.at("baseline_cue_mentions").get<int>();
  report.tuned_cue_mentions = analysis.at("tuned_cue_mentions").get<int>();
  report.complete = true;

  json report_doc = experiment_report_to_json(report);
  report_doc["inputs"] = json{{"training_report.json", fp_of(p.training_report())},
                              {"analysis.json", fp_of(p.analysis())}};
  report_doc["tool_version"] = kToolVersion;
  write_json_atomic(p.experiment_report(), report_doc);
  append_run_manifest(ctx, "report", {}, {p.experiment_report()});
  return report;
}

}  // namespace scenepref

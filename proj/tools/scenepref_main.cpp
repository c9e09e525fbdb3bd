// Command-line front end over the pipeline stages. Stages talk to each other
// only through files in the output directory; this binary parses flags,
// dispatches, and prints a short human-readable summary per stage.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "scenepref/analysis.hpp"
#include "scenepref/corpus.hpp"
#include "scenepref/errors.hpp"
#include "scenepref/pipeline.hpp"
#include "scenepref/util.hpp"

namespace {

using nlohmann::json;
using namespace scenepref;

std::vector<std::string> read_description_lines(const std::filesystem::path& path) {
  std::vector<std::string> lines;
  std::string text = util::read_file(path);
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    if (!line.empty()) lines.push_back(std::move(line));
    start = end + 1;
  }
  if (lines.empty()) throw EmptyInputError(path.string() + " has no descriptions");
  return lines;
}

// Flags of each invoked stage, merged into run_config.json for provenance.
void record_invocation(const std::filesystem::path& out_dir, const std::string& stage,
                       const json& flags) {
  std::filesystem::create_directories(out_dir);
  const auto path = out_dir / "run_config.json";
  json doc{{"kind", "run_config"}, {"tool_version", kToolVersion}, {"stages", json::object()}};
  if (std::filesystem::exists(path)) {
    try {
      doc = json::parse(util::read_file(path));
    } catch (const json::exception&) { /* rebuild from scratch */ }
  }
  doc["stages"][stage] = flags;
  util::write_file_atomic(path, doc.dump(2) + "\n");
}

// The output directory itself is deliberately not recorded: the file lives in
// it, and leaving the path out keeps identical runs byte-identical wherever
// they land.
json context_flags(const StageContext& ctx) {
  return json{{"prompts_dir", ctx.prompts_dir.string()},
              {"cache", ctx.cache_dir.string()},
              {"agent", ctx.agent}};
}

json merged(json base, const json& extra) {
  base.update(extra);
  return base;
}

void print_metrics_line(const char* label, const Metrics& m, int excluded) {
  std::printf("%s: accuracy %.4f  precision %.4f  recall %.4f  (tp %ld fp %ld fn %ld tn %ld",
              label, m.accuracy, m.precision, m.recall, m.tp, m.fp, m.fn, m.tn);
  if (excluded > 0) std::printf(", %d excluded", excluded);
  std::printf(")\n");
}

void print_experiment_report(const ExperimentReport& r) {
  std::printf("world: %d scenes (train %d / test %d), condition %s\n", r.world_size, r.train_size,
              r.test_size, to_string(r.condition).c_str());
  std::printf("pairs: %d kept, %d degenerate, %d judge errors\n", r.skips.kept,
              r.skips.degenerate, r.skips.judge_error);
  if (!r.training.epochs.empty()) {
    std::printf("training: %zu epochs, mean loss %.4f -> %.4f, %d steps%s\n",
                r.training.epochs.size(), r.training.epochs.front().mean_loss,
                r.training.epochs.back().mean_loss, r.training.steps,
                r.training.aborted ? " (ABORTED)" : "");
  }
  print_metrics_line(("baseline " + r.eval_mode).c_str(), r.baseline, 0);
  print_metrics_line(("tuned    " + r.eval_mode).c_str(), r.tuned, 0);
  std::printf("accuracy delta: %+.4f\n", r.tuned.accuracy - r.baseline.accuracy);
  std::printf("similarity win-rate: tuned %.2f%% / baseline %.2f%% / tie %.2f%%\n",
              100.0 * r.sims.tuned_win, 100.0 * r.sims.base_win, 100.0 * r.sims.tie);
  std::printf("mean length: %.2f -> %.2f   mean tone: %.2f -> %.2f\n",
              r.baseline_stats.mean_length, r.tuned_stats.mean_length,
              r.baseline_stats.mean_tone, r.tuned_stats.mean_tone);
  std::printf("cue mentions in test descriptions: %d -> %d\n", r.baseline_cue_mentions,
              r.tuned_cue_mentions);
}

int dispatch(int argc, char** argv) {
  CLI::App app{"Preference-tuning toolkit for scene descriptions"};
  app.require_subcommand(1);
  app.set_config("--config");

  StageContext ctx;
  ctx.out_dir = "out";
  std::uint64_t global_seed = 7;
  app.add_option("--out", ctx.out_dir, "Run output directory")->capture_default_str();
  app.add_option("--prompts-dir", ctx.prompts_dir, "Prompt template directory")
      ->capture_default_str();
  app.add_option("--cache", ctx.cache_dir, "Judge reply cache directory (empty = no cache)");
  app.add_option("--agent", ctx.agent, "Judge agent: oracle or remote")->capture_default_str();
  auto* seed_opt = app.add_option("--seed", global_seed, "Default seed for seeded stages")
                       ->capture_default_str();
  (void)seed_opt;

  // corpus: inspect a manifest
  auto* corpus_cmd = app.add_subcommand("corpus", "Print manifest summary")->fallthrough();
  std::filesystem::path manifest_path;
  corpus_cmd->add_option("--manifest", manifest_path, "Manifest file (JSONL)")->required();
  corpus_cmd->callback([&] {
    const Manifest m = load_manifest(manifest_path);
    std::printf("dataset: %s, %zu samples\n", m.dataset_name.c_str(), m.samples.size());
    for (const auto& [split, count] : m.split_counts) {
      std::printf("  %s: %d\n", split.c_str(), count);
    }
  });

  // synth world | synth run
  auto* synth_cmd = app.add_subcommand("synth", "Synthetic-world experiments")->fallthrough();
  synth_cmd->require_subcommand(1);

  auto* world_cmd = synth_cmd->add_subcommand("world", "Generate a scene world and manifest")->fallthrough();
  int world_n = 200;
  std::uint64_t world_seed = 0;
  world_cmd->add_option("--n", world_n, "Number of scenes")->capture_default_str();
  auto* world_seed_opt = world_cmd->add_option("--seed", world_seed, "World seed");
  world_cmd->callback([&] {
    if (world_seed_opt->count() == 0) world_seed = global_seed;
    record_invocation(ctx.out_dir, "world",
                      merged(context_flags(ctx), json{{"n", world_n}, {"seed", world_seed}}));
    stage_world(ctx, world_n, world_seed);
    std::printf("world: %d scenes -> %s\n", world_n, (ctx.out_dir / "world.json").string().c_str());
  });

  auto* run_cmd = synth_cmd->add_subcommand("run", "All stages end to end on one world")->fallthrough();
  int run_n = 200;
  std::uint64_t run_seed = 0;
  std::string run_condition = "without_gt";
  CaptionerConfig run_cap;
  DpoConfig run_dpo;
  run_dpo.learning_rate = kSynthLearningRate;
  std::string run_eval_mode = "multimodal";
  std::string run_prompt = "P2";
  run_cmd->add_option("--n", run_n, "Number of scenes")->capture_default_str();
  auto* run_seed_opt = run_cmd->add_option("--seed", run_seed, "World seed");
  run_cmd->add_option("--condition", run_condition, "without_gt, with_gt, or with_icl")
      ->capture_default_str();
  run_cmd->add_option("--beta", run_dpo.beta, "Preference loss temperature")
      ->capture_default_str();
  run_cmd->add_option("--epochs", run_dpo.epochs, "Training epochs")->capture_default_str();
  run_cmd->add_option("--lr", run_dpo.learning_rate, "Learning rate")->capture_default_str();
  run_cmd->add_option("--rank", run_dpo.adapter.rank, "Adapter rank")->capture_default_str();
  run_cmd->add_option("--alpha", run_dpo.adapter.scale, "Adapter scale numerator")
      ->capture_default_str();
  run_cmd->add_option("--dropout", run_dpo.adapter.dropout, "Adapter dropout rate")
      ->capture_default_str();
  run_cmd->add_option("--train-seed", run_dpo.seed, "Training shuffle/dropout seed")
      ->capture_default_str();
  run_cmd->add_option("--train-prompt", run_dpo.training_prompt, "Prompt the pairs train under")
      ->capture_default_str();
  run_cmd->add_option("--embed-dim", run_cap.embed_dim, "Policy embedding width")
      ->capture_default_str();
  run_cmd->add_option("--frames", run_cap.frame_count, "Frames sampled per scene")
      ->capture_default_str();
  run_cmd->add_option("--policy-seed", run_cap.seed, "Policy weight seed")->capture_default_str();
  run_cmd->add_option("--eval-mode", run_eval_mode,
                      "utterance_only, visual_only, multimodal, or zero_shot_vlm")
      ->capture_default_str();
  run_cmd->add_option("--prompt", run_prompt, "Inference prompt tag, P1 or P2")
      ->capture_default_str();
  run_cmd->callback([&] {
    if (run_seed_opt->count() == 0) run_seed = global_seed;
    record_invocation(ctx.out_dir, "synth",
                      merged(context_flags(ctx),
                             json{{"n", run_n},
                                  {"seed", run_seed},
                                  {"condition", run_condition},
                                  {"captioner", captioner_config_to_json(run_cap)},
                                  {"dpo", dpo_config_to_json(run_dpo)},
                                  {"eval_mode", run_eval_mode},
                                  {"prompt", run_prompt}}));
    const ExperimentReport report =
        stage_synth_run(ctx, run_n, run_seed, condition_from_string(run_condition), run_cap,
                        run_dpo, eval_mode_from_string(run_eval_mode), run_prompt);
    print_experiment_report(report);
  });

  // generate
  auto* gen_cmd = app.add_subcommand("generate", "Caption the train split under all prompts")->fallthrough();
  CaptionerConfig gen_cap;
  auto* gen_seed_opt = gen_cmd->add_option("--policy-seed", gen_cap.seed, "Policy weight seed");
  gen_cmd->add_option("--embed-dim", gen_cap.embed_dim, "Policy embedding width")
      ->capture_default_str();
  gen_cmd->add_option("--frames", gen_cap.frame_count, "Frames sampled per scene")
      ->capture_default_str();
  gen_cmd->add_option("--backend", gen_cap.backend, "Captioner backend")->capture_default_str();
  gen_cmd->add_option("--decode", gen_cap.decode, "Decoding strategy")->capture_default_str();
  gen_cmd->callback([&] {
    (void)gen_seed_opt;
    record_invocation(ctx.out_dir, "generate",
                      merged(context_flags(ctx),
                             json{{"captioner", captioner_config_to_json(gen_cap)}}));
    stage_generate(ctx, gen_cap);
    const auto rows = util::read_jsonl(PipelinePaths{ctx.out_dir}.candidates());
    std::printf("candidates: %zu samples captioned\n", rows.size() - 1);
  });

  // judge
  auto* judge_cmd = app.add_subcommand("judge", "Score the candidates under one condition")->fallthrough();
  std::string judge_condition = "without_gt";
  judge_cmd->add_option("--condition", judge_condition, "without_gt, with_gt, or with_icl")
      ->capture_default_str();
  judge_cmd->callback([&] {
    record_invocation(ctx.out_dir, "judge",
                      merged(context_flags(ctx), json{{"condition", judge_condition}}));
    stage_judge(ctx, condition_from_string(judge_condition));
    const auto rows = util::read_jsonl(PipelinePaths{ctx.out_dir}.scores());
    int errors = 0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      if (!rows[i].at("judge_error").get<std::string>().empty()) ++errors;
    }
    std::printf("scores: %zu samples judged, %d judge errors\n", rows.size() - 1, errors);
  });

  // build-prefs
  auto* prefs_cmd = app.add_subcommand("build-prefs", "Pair scored candidates into a dataset")->fallthrough();
  std::string training_prompt = "Describe the video in detail";
  prefs_cmd->add_option("--prompt", training_prompt, "Prompt recorded on every pair")
      ->capture_default_str();
  prefs_cmd->callback([&] {
    record_invocation(ctx.out_dir, "build-prefs",
                      merged(context_flags(ctx), json{{"prompt", training_prompt}}));
    stage_build_prefs(ctx, training_prompt);
    const PipelinePaths p{ctx.out_dir};
    const json skips = json::parse(util::read_file(p.skip_report()));
    std::printf("pairs: %d kept, %d degenerate, %d judge errors -> %s\n",
                skips.at("kept").get<int>(), skips.at("degenerate").get<int>(),
                skips.at("judge_error").get<int>(), p.prefs().string().c_str());
  });

  // train
  auto* train_cmd = app.add_subcommand("train", "Preference-tune the policy with adapters")->fallthrough();
  DpoConfig train_dpo;
  std::filesystem::path train_prefs;
  train_cmd->add_option("--prefs", train_prefs, "Preference dataset (default <out>/prefs.jsonl)");
  train_cmd->add_option("--beta", train_dpo.beta, "Preference loss temperature")
      ->capture_default_str();
  train_cmd->add_option("--epochs", train_dpo.epochs, "Training epochs")->capture_default_str();
  train_cmd->add_option("--lr", train_dpo.learning_rate, "Learning rate")->capture_default_str();
  train_cmd->add_option("--batch-size", train_dpo.batch_size, "Pairs per step")
      ->capture_default_str();
  train_cmd->add_option("--rank", train_dpo.adapter.rank, "Adapter rank")->capture_default_str();
  train_cmd->add_option("--alpha", train_dpo.adapter.scale, "Adapter scale numerator")
      ->capture_default_str();
  train_cmd->add_option("--dropout", train_dpo.adapter.dropout, "Adapter dropout rate")
      ->capture_default_str();
  auto* train_seed_opt = train_cmd->add_option("--seed", train_dpo.seed, "Shuffle/dropout seed");
  train_cmd->add_option("--adapter-seed", train_dpo.adapter.seed, "Adapter init seed")
      ->capture_default_str();
  train_cmd->add_option("--prompt", train_dpo.training_prompt, "Prompt the pairs train under")
      ->capture_default_str();
  train_cmd->callback([&] {
    if (train_seed_opt->count() == 0) train_dpo.seed = global_seed;
    record_invocation(ctx.out_dir, "train",
                      merged(context_flags(ctx), json{{"dpo", dpo_config_to_json(train_dpo)},
                                                      {"prefs", train_prefs.string()}}));
    stage_train(ctx, train_dpo, train_prefs);
    const PipelinePaths p{ctx.out_dir};
    const json report = json::parse(util::read_file(p.training_report()));
    const auto& epochs = report.at("epochs");
    if (epochs.empty()) {
      std::printf("training: zero epochs, policy unchanged\n");
    } else {
      std::printf("training: %zu epochs, mean loss %.4f -> %.4f, %d steps%s\n", epochs.size(),
                  epochs.front().at("mean_loss").get<double>(),
                  epochs.back().at("mean_loss").get<double>(), report.at("steps").get<int>(),
                  report.at("aborted").get<bool>() ? " (ABORTED)" : "");
    }
    if (report.at("aborted").get<bool>()) {
      std::printf("  abort reason: %s\n", report.at("abort_reason").get<std::string>().c_str());
    }
  });

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Classify the test split through the rating agent")->fallthrough();
  std::string eval_mode = "multimodal";
  std::string eval_prompt = "P2";
  std::string eval_ckpt = "tuned";
  eval_cmd->add_option("--mode", eval_mode,
                       "utterance_only, visual_only, multimodal, or zero_shot_vlm")
      ->capture_default_str();
  eval_cmd->add_option("--prompt", eval_prompt, "Inference prompt tag, P1 or P2")
      ->capture_default_str();
  eval_cmd->add_option("--checkpoint", eval_ckpt, "baseline or tuned")->capture_default_str();
  eval_cmd->callback([&] {
    const EvalMode mode = eval_mode_from_string(eval_mode);
    record_invocation(ctx.out_dir, "eval",
                      merged(context_flags(ctx), json{{"mode", eval_mode},
                                                      {"prompt", eval_prompt},
                                                      {"checkpoint", eval_ckpt}}));
    stage_eval(ctx, mode, eval_prompt, eval_ckpt);
    const bool uses_description = mode == EvalMode::visual_only || mode == EvalMode::multimodal;
    const auto path = PipelinePaths{ctx.out_dir}.eval_file(
        eval_mode, uses_description ? eval_prompt : std::string{}, eval_ckpt);
    const json header = util::read_jsonl(path).front();
    Metrics m;
    m.tp = header.at("metrics").at("tp").get<long>();
    m.fp = header.at("metrics").at("fp").get<long>();
    m.fn = header.at("metrics").at("fn").get<long>();
    m.tn = header.at("metrics").at("tn").get<long>();
    m.accuracy = header.at("metrics").at("accuracy").get<double>();
    m.precision = header.at("metrics").at("precision").get<double>();
    m.recall = header.at("metrics").at("recall").get<double>();
    const std::string label = eval_mode + " " + eval_prompt + " " + eval_ckpt;
    print_metrics_line(label.c_str(), m, header.at("excluded").get<int>());
  });

  // analyze run | simwin | stats | halluc | agreement
  auto* analyze_cmd = app.add_subcommand("analyze", "Similarity, style, and agreement reports")->fallthrough();
  analyze_cmd->require_subcommand(1);

  auto* arun_cmd = analyze_cmd->add_subcommand("run", "Alignment analysis of a finished run")->fallthrough();
  std::string arun_prompt = "P2";
  arun_cmd->add_option("--prompt", arun_prompt, "Inference prompt tag, P1 or P2")
      ->capture_default_str();
  arun_cmd->callback([&] {
    record_invocation(ctx.out_dir, "analyze",
                      merged(context_flags(ctx), json{{"prompt", arun_prompt}}));
    stage_analyze(ctx, arun_prompt);
    const json doc = json::parse(util::read_file(PipelinePaths{ctx.out_dir}.analysis()));
    std::printf("similarity win-rate: tuned %.2f%% / baseline %.2f%% / tie %.2f%%\n",
                100.0 * doc.at("sims").at("tuned_win").get<double>(),
                100.0 * doc.at("sims").at("base_win").get<double>(),
                100.0 * doc.at("sims").at("tie").get<double>());
    std::printf("cue mentions: baseline %d -> tuned %d\n",
                doc.at("baseline_cue_mentions").get<int>(),
                doc.at("tuned_cue_mentions").get<int>());
  });

  auto* simwin_cmd = analyze_cmd->add_subcommand("simwin", "Win-rate over a similarity file")->fallthrough();
  std::filesystem::path sims_path;
  simwin_cmd->add_option("--sims", sims_path, "JSONL of per-sample similarity pairs")->required();
  simwin_cmd->callback([&] {
    const WinRate w = winrate(load_sim_pairs(sims_path));
    std::printf("tuned wins %.2f%%, baseline wins %.2f%%, ties %.2f%%\n", 100.0 * w.tuned_win,
                100.0 * w.base_win, 100.0 * w.tie);
  });

  auto* stats_cmd = analyze_cmd->add_subcommand("stats", "Length and tone of a description file")->fallthrough();
  std::filesystem::path stats_file;
  std::filesystem::path lexicon_path = "data/lexicon/tone_lexicon.txt";
  stats_cmd->add_option("--file", stats_file, "Descriptions, one per line")->required();
  stats_cmd->add_option("--lexicon", lexicon_path, "Tone lexicon file")->capture_default_str();
  stats_cmd->callback([&] {
    const TextStats s = text_stats(read_description_lines(stats_file), ToneLexicon(lexicon_path));
    std::printf("mean length %.2f tokens, mean tone %.2f\n", s.mean_length, s.mean_tone);
  });

  auto* halluc_cmd = analyze_cmd->add_subcommand("halluc", "Keyword occurrences in descriptions")->fallthrough();
  std::filesystem::path halluc_file;
  std::string keyword = "voice";
  halluc_cmd->add_option("--file", halluc_file, "Descriptions, one per line")->required();
  halluc_cmd->add_option("--keyword", keyword, "Keyword counted at word starts")
      ->capture_default_str();
  halluc_cmd->callback([&] {
    const int count = keyword_count(read_description_lines(halluc_file), keyword);
    std::printf("\"%s\": %d occurrences\n", keyword.c_str(), count);
  });

  auto* agree_cmd = analyze_cmd->add_subcommand("agreement", "Human-judge agreement statistics")->fallthrough();
  std::filesystem::path agreement_file;
  agree_cmd->add_option("--file", agreement_file, "Per-sample rater table (JSON)")->required();
  agree_cmd->callback([&] {
    const AgreementStats s = agreement_stats(load_agreement_table(agreement_file));
    std::printf("match rate %.2f%%, Wald z %.3f, score z %.3f\n", 100.0 * s.match_rate, s.wald_z,
                s.score_z);
    std::printf("per-sample majorities: %d agree, %d disagree, %d tie\n", s.agree_count,
                s.disagree_count, s.tie_count);
  });

  CLI11_PARSE(app, argc, argv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const DependencyError& e) {
    std::fprintf(stderr, "dependency error: %s\n", e.what());
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "unexpected error: %s\n", e.what());
  }
  return 1;
}

// Command-line front end: synthesis, source training, adaptation, clustering
// diagnostics, evaluation, full runs and the variant table.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.

#include <CLI11.hpp>

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "mgrgcl/pipeline.hpp"

namespace fs = std::filesystem;
using namespace mgrgcl;

namespace {

struct Options {
  std::string config;
  std::vector<std::string> overrides;
  std::string out = "out";
  std::string source;
  std::string target;
  std::string truth;
  std::string checkpoint;
};

/// Configuration problems map to exit code 1, everything else to 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

RunConfig resolve(const Options& o) {
  try {
    return load_config(o.config, o.overrides);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

fs::path prepare_output(const Options& o, const RunConfig& cfg) {
  const fs::path dir = o.out;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(Errc::IoError, "cannot create " + dir.string() + ": " + ec.message());
  detail::write_all(dir / "config.json", to_json(cfg).dump(2) + "\n");
  return dir;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ConfigError(std::string("missing required option ") + flag);
}

/// Source/target/truth from files when given, otherwise synthesized from the config.
SyntheticPair inputs(const Options& o, const RunConfig& cfg) {
  if (o.source.empty() && o.target.empty() && o.truth.empty()) return synthesize(cfg);
  require(o.source, "--source");
  require(o.target, "--target");
  require(o.truth, "--truth");
  SyntheticPair pair;
  pair.source = load_dataset(o.source);
  pair.target = load_dataset(o.target);
  pair.target_truth = read_truth(pair.target.manifest, o.truth);
  return pair;
}

void write_lines(const fs::path& path, const std::string& text) { detail::write_all(path, text); }

// ---------------------------------------------------------------------------

void cmd_synth(const Options& o) {
  const RunConfig cfg = resolve(o);
  const fs::path dir = prepare_output(o, cfg);
  SyntheticPair pair = synthesize(cfg);
  save_dataset(pair.source, dir, "source");
  save_dataset(pair.target, dir, "target");
  write_truth(pair.target_truth, pair.target.manifest, dir / "target_truth.json");
  std::cout << nlohmann::json{{"source", (dir / "source.json").string()},
                              {"target", (dir / "target.json").string()},
                              {"truth", (dir / "target_truth.json").string()},
                              {"source_samples", pair.source.size()},
                              {"target_samples", pair.target.size()}}
                   .dump()
            << "\n";
}

void cmd_train_source(const Options& o) {
  const RunConfig cfg = resolve(o);
  require(o.source, "--source");
  const fs::path dir = prepare_output(o, cfg);
  const Dataset source = load_dataset(o.source);
  const Rng root(cfg.seed);
  Rng init_rng = root.derive(10);
  Rng source_rng = root.derive(11);
  int num_classes = 0;
  contiguous_classes(source.labels(), &num_classes);
  MGRParams params = make_params(cfg, source.manifest.map_shape.channels, static_cast<std::size_t>(num_classes),
                                 variant_layout(cfg.variant), init_rng);
  const SourceLog log = train_source(source, params, cfg, source_rng);
  std::string lines;
  for (std::size_t e = 0; e < log.epoch_loss.size(); ++e) {
    lines += nlohmann::json{{"type", "epoch"}, {"epoch", e}, {"mean_loss", log.epoch_loss[e]}}.dump() + "\n";
  }
  write_lines(dir / "source_log.jsonl", lines);
  write_checkpoint(params, dir / "source.ckpt");
  std::cout << nlohmann::json{{"checkpoint", (dir / "source.ckpt").string()},
                              {"epochs", log.epoch_loss.size()},
                              {"final_epoch_loss", log.epoch_loss.empty() ? 0.0 : log.epoch_loss.back()}}
                   .dump()
            << "\n";
}

void cmd_adapt(const Options& o) {
  const RunConfig cfg = resolve(o);
  require(o.target, "--target");
  require(o.checkpoint, "--checkpoint");
  const fs::path dir = prepare_output(o, cfg);
  const Dataset target = load_dataset(o.target);
  MGRParams params = read_checkpoint(o.checkpoint);
  Rng target_rng = Rng(cfg.seed).derive(12);
  const auto rounds = adapt(target, params, cfg, target_rng);
  std::string lines;
  for (const auto& r : rounds) lines += r.to_json(false).dump() + "\n";
  write_lines(dir / "rounds.jsonl", lines);
  write_checkpoint(params, dir / "adapted.ckpt");
  std::cout << lines;
}

void cmd_eval(const Options& o) {
  const RunConfig cfg = resolve(o);
  require(o.target, "--target");
  require(o.truth, "--truth");
  require(o.checkpoint, "--checkpoint");
  const fs::path dir = prepare_output(o, cfg);
  const Dataset target = load_dataset(o.target);
  const std::vector<int> truth = read_truth(target.manifest, o.truth);
  const MGRParams params = read_checkpoint(o.checkpoint);
  const std::string result = ranking_to_json(evaluate_dataset(target, truth, params, cfg)).dump();
  write_lines(dir / "eval.json", result + "\n");
  std::cout << result << "\n";
}

void cmd_cluster(const Options& o) {
  const RunConfig cfg = resolve(o);
  require(o.target, "--target");
  require(o.checkpoint, "--checkpoint");
  const fs::path dir = prepare_output(o, cfg);
  const Dataset target = load_dataset(o.target);
  const MGRParams params = read_checkpoint(o.checkpoint);
  const ClusterAssignment a = dbscan(embed(target, params, cfg).features, cfg.clustering);
  const std::string result =
      nlohmann::json{{"num_groups", a.num_groups}, {"noise", a.noise_count()}, {"group_sizes", a.group_sizes()}}.dump();
  write_lines(dir / "cluster.json", result + "\n");
  std::cout << result << "\n";
}

void cmd_run_all(const Options& o) {
  const RunConfig cfg = resolve(o);
  const fs::path dir = prepare_output(o, cfg);
  const VariantResult res = run_variant(cfg, inputs(o, cfg));
  const std::string report = res.report_jsonl();
  write_lines(dir / "report.jsonl", report);
  write_checkpoint(res.params, dir / "final.ckpt");
  std::cout << report.substr(report.rfind('\n', report.size() - 2) + 1);
}

void cmd_ablation(const Options& o) {
  const RunConfig base = resolve(o);
  const fs::path dir = prepare_output(o, base);
  const SyntheticPair data = inputs(o, base);
  nlohmann::json rows = nlohmann::json::array();
  std::ostringstream table;
  table << std::left << std::setw(12) << "variant" << std::right << std::setw(10) << "mAP" << std::setw(10) << "rank1" << "\n";
  for (Variant v : kAllVariants) {
    RunConfig cfg = base;
    cfg.variant = v;
    const RankingResult r = run_variant(cfg, data).final_result();
    const double rank1 = r.cmc.empty() ? 0.0 : r.cmc.begin()->second;
    rows.push_back({{"variant", variant_name(v)}, {"mAP", r.mAP}, {"rank1", rank1}});
    table << std::left << std::setw(12) << variant_name(v) << std::right << std::fixed << std::setprecision(4) << std::setw(10) << r.mAP
          << std::setw(10) << rank1 << "\n";
  }
  write_lines(dir / "ablation.json", nlohmann::json{{"columns", {"mAP", "rank1"}}, {"rows", rows}}.dump(2) + "\n");
  write_lines(dir / "ablation.txt", table.str());
  std::cout << table.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-granularity part features with group contrastive domain adaptation"};
  app.require_subcommand(1);
  Options o;

  auto common = [&o](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON run configuration (defaults apply to missing keys)");
    sub->add_option("--set", o.overrides, "Override a config key, e.g. --set clustering.eps=0.3")->allow_extra_args(false);
    sub->add_option("--out", o.out, "Output directory")->capture_default_str();
  };
  auto with_inputs = [&o](CLI::App* sub, bool source, bool target, bool truth, bool checkpoint) {
    if (source) sub->add_option("--source", o.source, "Source manifest (JSON)");
    if (target) sub->add_option("--target", o.target, "Target manifest (JSON)");
    if (truth) sub->add_option("--truth", o.truth, "Target ground-truth identities (JSON)");
    if (checkpoint) sub->add_option("--checkpoint", o.checkpoint, "Model checkpoint");
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic source/target pair");
  common(synth);
  auto* train = app.add_subcommand("train-source", "Supervised training on a labeled source set");
  common(train);
  with_inputs(train, true, false, false, false);
  auto* adapt_cmd = app.add_subcommand("adapt", "Unsupervised adaptation of a checkpoint to a target set");
  common(adapt_cmd);
  with_inputs(adapt_cmd, false, true, false, true);
  auto* eval = app.add_subcommand("eval", "Retrieval mAP/CMC of a checkpoint on a target set");
  common(eval);
  with_inputs(eval, false, true, true, true);
  auto* cluster = app.add_subcommand("cluster", "Cluster a target set's features and report group statistics");
  common(cluster);
  with_inputs(cluster, false, true, false, true);
  auto* run_all = app.add_subcommand("run-all", "Source training, direct-transfer evaluation and adaptation in one run");
  common(run_all);
  with_inputs(run_all, true, true, true, false);
  auto* ablation = app.add_subcommand("ablation", "Run every variant and tabulate mAP and rank-1");
  common(ablation);
  with_inputs(ablation, true, true, true, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    const bool unknown = argc > 1 && argv[1][0] != '-' && app.get_subcommand_no_throw(argv[1]) == nullptr;
    std::cerr << "error: " << (unknown ? "unknown subcommand '" + std::string(argv[1]) + "'" : std::string(e.what())) << "\n\n"
              << app.help();
    return 1;
  }

  try {
    if (synth->parsed()) cmd_synth(o);
    else if (train->parsed()) cmd_train_source(o);
    else if (adapt_cmd->parsed()) cmd_adapt(o);
    else if (eval->parsed()) cmd_eval(o);
    else if (cluster->parsed()) cmd_cluster(o);
    else if (run_all->parsed()) cmd_run_all(o);
    else if (ablation->parsed()) cmd_ablation(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error [" << errc_name(e.code()) << "]: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

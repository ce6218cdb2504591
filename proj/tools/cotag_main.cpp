#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cotag/pipeline.hpp"

// Command-line front end. Global flags may appear before or after the
// subcommand; --config supplies defaults that the flags override.

int main(int argc, char** argv) {
  CLI::App app{"weak-supervision co-training for slot tagging"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  int workers = 0;
  bool force = false;
  app.add_option("--config", config_path, "JSON run configuration file");
  app.add_option("--out", out_dir, "output directory");
  CLI::Option* seed_opt = app.add_option("--seed", seed, "root random seed");
  CLI::Option* workers_opt = app.add_option("--workers", workers, "worker thread count");
  app.add_flag("--force", force, "overwrite existing outputs");

  CLI::App* autolabel = app.add_subcommand(
      "autolabel", "label the corpus from the gazetteer and fluency scorer");
  int threshold = -1;
  std::size_t max_ngram = 0;
  autolabel->add_option("--threshold", threshold, "fuzzy match threshold (0-100)");
  autolabel->add_option("--max-ngram", max_ngram, "longest candidate span in tokens");

  CLI::App* import_labels =
      app.add_subcommand("import-labels", "validate and import an external label file");
  std::string labels_path;
  import_labels->add_option("--labels", labels_path, "label JSONL file to import");

  CLI::App* train_weak =
      app.add_subcommand("train-weak", "train peer ensembles on the weak label sources");

  CLI::App* cotrain = app.add_subcommand("cotrain", "run co-training between the peers");
  std::string mode;
  cotrain->add_option("--mode", mode, "soft_confidence, soft, or hard");

  CLI::App* eval = app.add_subcommand("eval", "score predictions against corpus gold tags");
  std::string pred_path;
  eval->add_option("--pred", pred_path, "prediction JSONL (default: final_labels.jsonl)");

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic benchmark");
  std::string spec_path;
  synth->add_option("--spec", spec_path, "benchmark spec JSON file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    cotag::RunConfig config;
    if (!config_path.empty()) config = cotag::RunConfig::from_file(config_path);
    if (!out_dir.empty()) config.out_dir = out_dir;
    if (seed_opt->count() > 0) config.seed = seed;
    if (workers_opt->count() > 0) config.workers = workers;
    if (force) config.force = true;
    if (threshold >= 0) config.autolabel.match_threshold = threshold;
    if (max_ngram > 0) config.autolabel.max_ngram_len = max_ngram;
    if (!labels_path.empty()) config.imported_labels_path = labels_path;
    if (!mode.empty()) config.cotrain.mode = cotag::cotrain_mode_from_string(mode);

    if (autolabel->parsed()) {
      cotag::cmd_autolabel(config);
    } else if (import_labels->parsed()) {
      cotag::cmd_import_labels(config);
    } else if (train_weak->parsed()) {
      cotag::cmd_train_weak(config);
    } else if (cotrain->parsed()) {
      cotag::cmd_cotrain(config);
    } else if (eval->parsed()) {
      cotag::cmd_eval(config, pred_path);
    } else if (synth->parsed()) {
      std::optional<std::uint64_t> seed_override;
      if (seed_opt->count() > 0) seed_override = seed;
      cotag::cmd_synth(spec_path, cotag::resolve_out_dir(config), seed_override,
                       config.force);
    }
  } catch (const cotag::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cotag/autolabel.hpp"
#include "cotag/cotrain.hpp"
#include "cotag/error.hpp"
#include "cotag/eval.hpp"
#include "cotag/io.hpp"
#include "cotag/scorer.hpp"
#include "cotag/synth.hpp"
#include "cotag/tagger.hpp"
#include "cotag/weaksup.hpp"

namespace cotag {

// Run orchestration behind the command-line tool. A RunConfig names the
// inputs, the output directory, and the per-phase settings; each command
// reads what it needs, refuses to overwrite existing artifacts unless
// forced, and writes byte-deterministic outputs for a fixed seed.

struct ScorerConfig {
  int order = 3;
  double alpha = 0.1;
  // Optional separate corpus for language-model training; defaults to the
  // main corpus when empty.
  std::string corpus_path;
  std::vector<std::string> external_command;
  bool fallback_native = true;
  int timeout_ms = 10000;
};

struct AblationFlags {
  bool disable_gazetteer_source = false;
  bool disable_imported_source = false;
  bool disable_cotraining = false;
  bool disable_soft_labels = false;
};

struct RunConfig {
  std::string corpus_path;
  std::string gazetteer_path;
  std::string schema_path;
  std::string imported_labels_path;
  std::string out_dir;
  std::uint64_t seed = 1;
  int workers = 1;
  bool force = false;
  AutolabelConfig autolabel;
  ScorerConfig scorer;
  TrainConfig train;
  CotrainConfig cotrain;
  AblationFlags ablations;

  static RunConfig from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw LoadError("run configuration must be a JSON object");
    RunConfig c;
    try {
      c.corpus_path = j.value("corpus", c.corpus_path);
      c.gazetteer_path = j.value("gazetteer", c.gazetteer_path);
      c.schema_path = j.value("schema", c.schema_path);
      c.imported_labels_path = j.value("imported_labels", c.imported_labels_path);
      c.out_dir = j.value("out", c.out_dir);
      c.seed = j.value("seed", c.seed);
      c.workers = j.value("workers", c.workers);
      if (j.contains("autolabel")) {
        const auto& a = j.at("autolabel");
        c.autolabel.match_threshold = a.value("match_threshold", c.autolabel.match_threshold);
        c.autolabel.max_ngram_len = a.value("max_ngram_len", c.autolabel.max_ngram_len);
        c.autolabel.keep_ratio = a.value("keep_ratio", c.autolabel.keep_ratio);
        c.autolabel.normalize_per_token =
            a.value("normalize_per_token", c.autolabel.normalize_per_token);
      }
      if (j.contains("scorer")) {
        const auto& s = j.at("scorer");
        c.scorer.order = s.value("order", c.scorer.order);
        c.scorer.alpha = s.value("alpha", c.scorer.alpha);
        c.scorer.corpus_path = s.value("corpus", c.scorer.corpus_path);
        if (s.contains("external_command")) {
          c.scorer.external_command = s.at("external_command").get<std::vector<std::string>>();
        }
        c.scorer.fallback_native = s.value("fallback_native", c.scorer.fallback_native);
        c.scorer.timeout_ms = s.value("timeout_ms", c.scorer.timeout_ms);
      }
      if (j.contains("train")) {
        const auto& t = j.at("train");
        c.train.batch_size = t.value("batch_size", c.train.batch_size);
        c.train.dropout = t.value("dropout", c.train.dropout);
        c.train.adam_beta1 = t.value("adam_beta1", c.train.adam_beta1);
        c.train.adam_beta2 = t.value("adam_beta2", c.train.adam_beta2);
        c.train.initial_lr = t.value("initial_lr", c.train.initial_lr);
        c.train.weight_decay = t.value("weight_decay", c.train.weight_decay);
        c.train.max_epochs = t.value("max_epochs", c.train.max_epochs);
        c.train.patience = t.value("patience", c.train.patience);
        c.train.ensemble_size = t.value("ensemble_size", c.train.ensemble_size);
        c.train.validation_fraction =
            t.value("validation_fraction", c.train.validation_fraction);
        c.train.init_scale = t.value("init_scale", c.train.init_scale);
      }
      if (j.contains("cotrain")) {
        const auto& ct = j.at("cotrain");
        c.cotrain.epsilon = ct.value("epsilon", c.cotrain.epsilon);
        c.cotrain.max_iterations = ct.value("max_iterations", c.cotrain.max_iterations);
        c.cotrain.convergence_threshold =
            ct.value("convergence_threshold", c.cotrain.convergence_threshold);
        c.cotrain.reinit_patience = ct.value("reinit_patience", c.cotrain.reinit_patience);
        if (ct.contains("mode")) {
          c.cotrain.mode = cotrain_mode_from_string(ct.at("mode").get<std::string>());
        }
      }
      if (j.contains("ablations")) {
        const auto& ab = j.at("ablations");
        c.ablations.disable_gazetteer_source =
            ab.value("disable_gazetteer_source", c.ablations.disable_gazetteer_source);
        c.ablations.disable_imported_source =
            ab.value("disable_imported_source", c.ablations.disable_imported_source);
        c.ablations.disable_cotraining =
            ab.value("disable_cotraining", c.ablations.disable_cotraining);
        c.ablations.disable_soft_labels =
            ab.value("disable_soft_labels", c.ablations.disable_soft_labels);
      }
    } catch (const nlohmann::json::exception& e) {
      throw LoadError(std::string("run configuration: ") + e.what());
    }
    return c;
  }

  static RunConfig from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open configuration file: " + path.string());
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw LoadError(path.string() + ": invalid JSON");
    return from_json(j);
  }
};

namespace pipeline_detail {

inline std::filesystem::path out_root(const RunConfig& config) {
  if (!config.out_dir.empty()) return config.out_dir;
  if (const char* env = std::getenv("COTAG_OUT"); env && *env) return env;
  throw Error("no output directory: pass --out or set COTAG_OUT");
}

inline void ensure_writable(const std::filesystem::path& path, bool force) {
  if (std::filesystem::exists(path) && !force) {
    throw Error("output '" + path.string() + "' already exists; pass --force to overwrite");
  }
}

inline void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw Error(std::string("no ") + what + " path configured");
  if (!std::filesystem::exists(path)) {
    throw Error(std::string(what) + " file does not exist: " + path);
  }
}

inline Corpus load_main_corpus(const RunConfig& config) {
  require_file(config.corpus_path, "corpus");
  return load_corpus(config.corpus_path);
}

inline SlotSchema load_run_schema(const RunConfig& config) {
  require_file(config.schema_path, "schema");
  return load_schema(config.schema_path);
}

inline std::vector<std::vector<std::string>> token_lists(const Corpus& corpus) {
  std::vector<std::vector<std::string>> out;
  out.reserve(corpus.sentences.size());
  for (const auto& s : corpus.sentences) out.push_back(s.tokens);
  return out;
}

}  // namespace pipeline_detail

// Output directory for a run: the configured one, or the COTAG_OUT
// environment variable as a fallback.
inline std::filesystem::path resolve_out_dir(const RunConfig& config) {
  return pipeline_detail::out_root(config);
}

// Scorer selection: the external command when configured and reachable,
// otherwise (or on failure, when fallback is allowed) an n-gram model
// trained on the scorer corpus or the main corpus.
inline std::unique_ptr<Scorer> build_scorer(const RunConfig& config, const Corpus& corpus) {
  if (!config.scorer.external_command.empty()) {
    try {
      return std::make_unique<ExternalScorer>(
          ExternalScorer::Options{config.scorer.external_command, config.scorer.timeout_ms});
    } catch (const ScorerUnavailableError& e) {
      if (!config.scorer.fallback_native) throw;
      std::cerr << "warning: " << e.what() << "; falling back to the native scorer\n";
    }
  }
  std::vector<std::vector<std::string>> lm_corpus;
  if (!config.scorer.corpus_path.empty()) {
    pipeline_detail::require_file(config.scorer.corpus_path, "scorer corpus");
    lm_corpus = pipeline_detail::token_lists(load_corpus(config.scorer.corpus_path));
  } else {
    lm_corpus = pipeline_detail::token_lists(corpus);
  }
  return std::make_unique<NgramScorer>(
      NgramLM::train(lm_corpus, config.scorer.order, config.scorer.alpha));
}

// Phase 1: gazetteer matching plus fluency filtering over the corpus;
// writes labels_gazetteer.jsonl.
inline void cmd_autolabel(const RunConfig& config) {
  Corpus corpus = pipeline_detail::load_main_corpus(config);
  SlotSchema schema = pipeline_detail::load_run_schema(config);
  pipeline_detail::require_file(config.gazetteer_path, "gazetteer");
  Gazetteer gazetteer = Gazetteer::load_tsv(config.gazetteer_path);

  std::filesystem::path out = pipeline_detail::out_root(config) / "labels_gazetteer.jsonl";
  pipeline_detail::ensure_writable(out, config.force);

  std::unique_ptr<Scorer> scorer = build_scorer(config, corpus);
  AutolabelConfig al = config.autolabel;
  al.workers = config.workers;
  LabelSource source = autolabel_corpus(corpus, gazetteer, schema, *scorer, al);
  save_labels(out, source, corpus);

  std::size_t labeled = 0, spans = 0;
  for (const auto& [id, tags] : source.labels) {
    std::size_t n = decode_tags(tags).size();
    spans += n;
    if (n > 0) ++labeled;
  }
  std::cout << "autolabel: " << source.labels.size() << " sentences, " << labeled
            << " with at least one span, " << spans << " spans -> " << out.string() << "\n";
}

// Imports externally produced labels (for example zero-shot predictions) as
// the second weak source; writes labels_imported.jsonl.
inline void cmd_import_labels(const RunConfig& config) {
  Corpus corpus = pipeline_detail::load_main_corpus(config);
  SlotSchema schema = pipeline_detail::load_run_schema(config);
  pipeline_detail::require_file(config.imported_labels_path, "imported labels");

  std::filesystem::path out = pipeline_detail::out_root(config) / "labels_imported.jsonl";
  pipeline_detail::ensure_writable(out, config.force);

  LabelSource source = import_label_source(config.imported_labels_path, corpus, schema);
  save_labels(out, source, corpus);
  std::cout << "import-labels: " << source.labels.size() << " sentences -> " << out.string()
            << "\n";
}

// Phase 2: trains one peer ensemble per enabled label source.
inline void cmd_train_weak(const RunConfig& config) {
  if (config.ablations.disable_gazetteer_source && config.ablations.disable_imported_source) {
    throw Error("both label sources are disabled; nothing to train");
  }
  Corpus corpus = pipeline_detail::load_main_corpus(config);
  SlotSchema schema = pipeline_detail::load_run_schema(config);
  std::filesystem::path root = pipeline_detail::out_root(config);

  struct PeerPlan {
    const char* peer_name;
    const char* label_file;
    const char* source_name;
  };
  std::vector<PeerPlan> plans;
  if (!config.ablations.disable_gazetteer_source) {
    plans.push_back({"p1", "labels_gazetteer.jsonl", "gazetteer"});
  }
  if (!config.ablations.disable_imported_source) {
    plans.push_back({"p2", "labels_imported.jsonl", "imported"});
  }
  for (const auto& plan : plans) {
    pipeline_detail::ensure_writable(root / "peers" / plan.peer_name, config.force);
  }
  for (const auto& plan : plans) {
    std::filesystem::path labels = root / plan.label_file;
    if (!std::filesystem::exists(labels)) {
      throw Error("label file '" + labels.string() + "' not found; run the " +
                  (std::string(plan.source_name) == "gazetteer" ? "autolabel"
                                                                : "import-labels") +
                  " command first");
    }
    LabelSource source = load_labels(labels, corpus, schema, plan.source_name);
    PeerState peer = train_weak_peer(corpus, source, schema, config.train, plan.peer_name,
                                     config.seed, config.workers);
    std::filesystem::path dir = root / "peers" / plan.peer_name;
    if (std::filesystem::exists(dir)) std::filesystem::remove_all(dir);
    save_peer(dir, peer);
    double mean_loss = 0.0;
    for (const auto& r : peer.initial_history) {
      if (!r.diverged) mean_loss += r.best_val_loss;
    }
    mean_loss /= static_cast<double>(peer.ensemble.size());
    std::cout << "train-weak: peer " << peer.name << " on source '" << source.name << "', "
              << peer.ensemble.size() << " members, mean validation loss " << mean_loss
              << " -> " << dir.string() << "\n";
  }
}

namespace pipeline_detail {

inline CorpusDistributions combined_distributions(const PeerState& p1, const PeerState& p2,
                                                  const Corpus& corpus, int workers) {
  CorpusDistributions d1 = predict_corpus(p1, corpus, workers);
  CorpusDistributions d2 = predict_corpus(p2, corpus, workers);
  for (auto& [id, rows] : d1) {
    const TokenDistributions& other = d2.at(id);
    for (std::size_t m = 0; m < rows.size(); ++m) {
      for (std::size_t c = 0; c < rows[m].size(); ++c) {
        rows[m][c] = 0.5 * (rows[m][c] + other[m][c]);
      }
    }
  }
  return d1;
}

inline void write_tag_map(const std::filesystem::path& path,
                          const std::map<std::string, TagSequence>& tags,
                          const Corpus& corpus) {
  LabelSource src;
  src.labels = tags;
  save_labels(path, src, corpus);
}

}  // namespace pipeline_detail

// Phase 3: alternating co-training between the two peers, then final labels
// from each peer and from their averaged distributions.
inline void cmd_cotrain(const RunConfig& config) {
  Corpus corpus = pipeline_detail::load_main_corpus(config);
  SlotSchema schema = pipeline_detail::load_run_schema(config);
  std::filesystem::path root = pipeline_detail::out_root(config);

  if (config.ablations.disable_gazetteer_source || config.ablations.disable_imported_source) {
    throw Error("co-training requires both peers; a label source is disabled");
  }
  for (const char* name : {"p1", "p2"}) {
    if (!std::filesystem::exists(root / "peers" / name / "manifest.json")) {
      throw Error("peer checkpoint '" + (root / "peers" / name).string() +
                  "' not found; run the train-weak command first");
    }
  }
  for (const char* out : {"cotrain", "final_labels.jsonl", "final_labels_p1.jsonl",
                          "final_labels_p2.jsonl"}) {
    pipeline_detail::ensure_writable(root / out, config.force);
  }
  if (std::filesystem::exists(root / "cotrain")) {
    std::filesystem::remove_all(root / "cotrain");
  }

  PeerState p1 = load_peer(root / "peers" / "p1");
  PeerState p2 = load_peer(root / "peers" / "p2");

  CotrainConfig ct = config.cotrain;
  if (config.ablations.disable_soft_labels) ct.mode = CotrainMode::Hard;

  nlohmann::json report_json;
  if (config.ablations.disable_cotraining) {
    report_json["skipped"] = true;
    report_json["reason"] = "co-training disabled by ablation flag";
    std::cout << "cotrain: skipped (disabled by ablation flag)\n";
  } else {
    CotrainReport report = run_cotraining(p1, p2, corpus, schema, config.train, ct,
                                          config.seed, root / "cotrain", config.workers);
    report_json = report_to_json(report);
    std::cout << "cotrain: " << report.iterations_run << " iteration(s), "
              << (report.converged ? "converged" : "stopped at the iteration budget")
              << ", final agreement " << report.final_agreement << "\n";
  }
  {
    std::ofstream out = io_detail::open_out(root / "cotrain" / "report.json");
    out << report_json.dump(2) << '\n';
  }

  save_peer(root / "peers_final" / "p1", p1);
  save_peer(root / "peers_final" / "p2", p2);

  auto y1 = pseudo_labels(predict_corpus(p1, corpus, config.workers), schema);
  auto y2 = pseudo_labels(predict_corpus(p2, corpus, config.workers), schema);
  auto combined = pseudo_labels(
      pipeline_detail::combined_distributions(p1, p2, corpus, config.workers), schema);
  pipeline_detail::write_tag_map(root / "final_labels_p1.jsonl", y1, corpus);
  pipeline_detail::write_tag_map(root / "final_labels_p2.jsonl", y2, corpus);
  pipeline_detail::write_tag_map(root / "final_labels.jsonl", combined, corpus);
  std::cout << "cotrain: wrote final labels for " << combined.size() << " sentences\n";
}

// Span F1 of a prediction file against the corpus gold tags.
inline F1Report cmd_eval(const RunConfig& config, const std::string& pred_path_arg) {
  Corpus corpus = pipeline_detail::load_main_corpus(config);
  SlotSchema schema = pipeline_detail::load_run_schema(config);
  std::filesystem::path root = pipeline_detail::out_root(config);
  std::filesystem::path pred_path =
      pred_path_arg.empty() ? root / "final_labels.jsonl" : std::filesystem::path(pred_path_arg);
  pipeline_detail::require_file(pred_path.string(), "predictions");
  if (corpus.gold.empty()) {
    throw Error("corpus '" + config.corpus_path + "' carries no gold tags");
  }

  LabelSource pred = import_label_source(pred_path, corpus, schema);
  std::map<std::string, TagSequence> restricted;
  for (const auto& [id, tags] : corpus.gold) {
    auto it = pred.labels.find(id);
    if (it == pred.labels.end()) {
      throw Error("predictions are missing sentence id '" + id + "'");
    }
    restricted.emplace(id, it->second);
  }
  F1Report report = slot_f1(corpus.gold, restricted);

  std::filesystem::path out = root / ("eval_" + pred_path.stem().string() + ".json");
  pipeline_detail::ensure_writable(out, config.force);
  {
    std::ofstream f = io_detail::open_out(out);
    f << report.to_json().dump(2) << '\n';
  }
  std::cout << "eval: " << pred_path.string() << "\n"
            << "  precision " << report.precision << ", recall " << report.recall << ", f1 "
            << report.f1 << " (" << report.gold_spans << " gold spans, "
            << report.predicted_spans << " predicted)\n";
  return report;
}

// Generates a benchmark directory from a spec file.
inline void cmd_synth(const std::filesystem::path& spec_path,
                      const std::filesystem::path& out_dir,
                      std::optional<std::uint64_t> seed_override, bool force) {
  std::ifstream in(spec_path);
  if (!in) throw LoadError("cannot open benchmark spec: " + spec_path.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw LoadError(spec_path.string() + ": invalid JSON");
  BenchmarkSpec spec = BenchmarkSpec::from_json(j);
  if (seed_override) spec.seed = *seed_override;

  pipeline_detail::ensure_writable(out_dir / "corpus.jsonl", force);
  SynthResult result = generate_synthetic(spec);
  write_benchmark(out_dir, result);
  std::cout << "synth: " << result.corpus.sentences.size() << " sentences, source F1 "
            << result.stats["source_a"]["f1_vs_gold"].get<double>() << " / "
            << result.stats["source_b"]["f1_vs_gold"].get<double>() << " -> "
            << out_dir.string() << "\n";
}

}  // namespace cotag

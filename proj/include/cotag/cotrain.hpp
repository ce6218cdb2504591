#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cotag/error.hpp"
#include "cotag/eval.hpp"
#include "cotag/io.hpp"
#include "cotag/iob.hpp"
#include "cotag/random.hpp"
#include "cotag/tagger.hpp"
#include "cotag/weaksup.hpp"

namespace cotag {

// Self-supervised co-training: two peers alternately teach each other from
// their own predictions. Teacher distributions are sharpened and
// class-debiased into soft labels; only high-confidence tokens supervise the
// student (in the default mode); rounds repeat until the peers' pseudo
// labels agree on enough tokens or the iteration budget runs out. A peer
// whose validation loss stops improving is reinitialized.

enum class CotrainMode {
  SoftConfidence,  // soft labels on high-confidence tokens (default)
  Soft,            // soft labels on every token
  Hard,            // argmax pseudo labels on every token
};

inline std::string_view to_string(CotrainMode m) {
  switch (m) {
    case CotrainMode::SoftConfidence: return "soft_confidence";
    case CotrainMode::Soft: return "soft";
    case CotrainMode::Hard: return "hard";
  }
  return "soft_confidence";
}

inline CotrainMode cotrain_mode_from_string(std::string_view s) {
  if (s == "soft_confidence") return CotrainMode::SoftConfidence;
  if (s == "soft") return CotrainMode::Soft;
  if (s == "hard") return CotrainMode::Hard;
  throw Error("unknown co-training mode '" + std::string(s) +
              "' (expected soft_confidence, soft, or hard)");
}

struct CotrainConfig {
  double epsilon = 0.9;              // confidence threshold, strict
  int max_iterations = 100;
  double convergence_threshold = 0.995;  // token agreement between peers
  int reinit_patience = 3;
  CotrainMode mode = CotrainMode::SoftConfidence;

  void validate() const {
    if (epsilon < 0.0 || epsilon >= 1.0) throw Error("epsilon must be in [0, 1)");
    if (max_iterations < 1) throw Error("max iterations must be positive");
    if (convergence_threshold <= 0.0 || convergence_threshold > 1.0) {
      throw Error("convergence threshold must be in (0, 1]");
    }
    if (reinit_patience < 1) throw Error("reinit patience must be positive");
  }
};

using CorpusDistributions = std::map<std::string, TokenDistributions>;

// Argmax pseudo labels, tie to the lowest class index, then structural
// repair so outputs are always well-formed.
inline std::map<std::string, TagSequence> pseudo_labels(const CorpusDistributions& dists,
                                                        const SlotSchema& schema) {
  const std::vector<std::string> vocab = schema.tag_vocabulary();
  std::map<std::string, TagSequence> out;
  for (const auto& [id, rows] : dists) {
    TagSequence tags;
    tags.reserve(rows.size());
    for (std::size_t cls : argmax_classes(rows)) {
      if (cls >= vocab.size()) throw Error("class index exceeds the tag vocabulary");
      tags.push_back(vocab[cls]);
    }
    out.emplace(id, repair_tags(std::move(tags)));
  }
  return out;
}

// Per-class mass summed over every token of every sentence, floored away
// from zero so the soft-label division is always defined.
inline std::vector<double> class_frequencies(const CorpusDistributions& dists,
                                             std::size_t num_classes) {
  std::vector<double> freq(num_classes, 0.0);
  for (const auto& [id, rows] : dists) {
    for (const auto& row : rows) {
      if (row.size() != num_classes) {
        throw Error("distribution width mismatch in sentence '" + id + "'");
      }
      for (std::size_t c = 0; c < num_classes; ++c) freq[c] += row[c];
    }
  }
  for (double& f : freq) f = std::max(f, kProbFloor);
  return freq;
}

// Sharpened, class-debiased soft labels: each probability is squared and
// divided by its class mass, then renormalized per token. Squaring pushes
// mass toward the argmax; dividing by class mass boosts rare classes.
inline CorpusDistributions soft_labels(const CorpusDistributions& dists,
                                       std::span<const double> class_freq) {
  CorpusDistributions out;
  for (const auto& [id, rows] : dists) {
    TokenDistributions soft_rows;
    soft_rows.reserve(rows.size());
    for (const auto& row : rows) {
      if (row.size() != class_freq.size()) {
        throw Error("distribution width mismatch in sentence '" + id + "'");
      }
      std::vector<double> s(row.size());
      double norm = 0.0;
      for (std::size_t c = 0; c < row.size(); ++c) {
        s[c] = row[c] * row[c] / class_freq[c];
        norm += s[c];
      }
      for (double& v : s) v /= norm;
      soft_rows.push_back(std::move(s));
    }
    out.emplace(id, std::move(soft_rows));
  }
  return out;
}

// Mean over tokens of the cross-entropy between soft targets and predicted
// distributions; the student's training objective in soft modes.
inline double kl_loss(const TokenDistributions& soft, const TokenDistributions& predicted) {
  if (soft.size() != predicted.size()) throw Error("row count mismatch in kl_loss");
  if (soft.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t m = 0; m < soft.size(); ++m) {
    if (soft[m].size() != predicted[m].size()) throw Error("width mismatch in kl_loss");
    for (std::size_t c = 0; c < soft[m].size(); ++c) {
      total -= soft[m][c] * std::log(std::max(predicted[m][c], kProbFloor));
    }
  }
  return total / static_cast<double>(soft.size());
}

// Token positions whose best soft probability strictly exceeds epsilon.
inline std::vector<std::size_t> select_high_confidence(const TokenDistributions& soft,
                                                       double epsilon) {
  std::vector<std::size_t> out;
  for (std::size_t m = 0; m < soft.size(); ++m) {
    double best = soft[m].empty() ? 0.0 : *std::max_element(soft[m].begin(), soft[m].end());
    if (best > epsilon) out.push_back(m);
  }
  return out;
}

// Everything derived from one teacher snapshot, reused across the student
// round and the run artifacts.
struct TeacherSignals {
  CorpusDistributions distributions;
  std::vector<double> class_freq;
  CorpusDistributions soft;
  std::map<std::string, std::vector<std::size_t>> selected;
  std::map<std::string, TagSequence> pseudo;
  std::uint64_t selected_tokens = 0;
  std::uint64_t total_tokens = 0;
};

inline TeacherSignals teacher_signals(const PeerState& teacher, const Corpus& corpus,
                                      const SlotSchema& schema, const CotrainConfig& config,
                                      int workers = 1) {
  TeacherSignals sig;
  sig.distributions = predict_corpus(teacher, corpus, workers);
  const std::size_t num_classes = schema.tag_vocabulary().size();
  sig.class_freq = class_frequencies(sig.distributions, num_classes);
  sig.soft = soft_labels(sig.distributions, sig.class_freq);
  sig.pseudo = pseudo_labels(sig.distributions, schema);
  for (const auto& [id, rows] : sig.soft) {
    auto sel = select_high_confidence(rows, config.epsilon);
    sig.selected_tokens += sel.size();
    sig.total_tokens += rows.size();
    sig.selected.emplace(id, std::move(sel));
  }
  return sig;
}

struct RoundResult {
  double mean_val_loss = 0.0;
  std::vector<double> member_val_loss;
  std::uint64_t selected_tokens = 0;  // corpus-wide supervised tokens this round
  std::size_t diverged_members = 0;
};

namespace cotrain_detail {

// Builds per-sentence targets for the student according to the mode.
inline weaksup_detail::ExampleSet round_examples(const TeacherSignals& sig,
                                                 const Corpus& corpus,
                                                 const SlotSchema& schema,
                                                 const CotrainConfig& config,
                                                 double validation_fraction) {
  weaksup_detail::ExampleSet set;
  set.targets.reserve(corpus.sentences.size());
  for (const auto& s : corpus.sentences) {
    auto soft_it = sig.soft.find(s.id);
    if (soft_it == sig.soft.end()) {
      throw Error("teacher produced no distributions for sentence '" + s.id + "'");
    }
    switch (config.mode) {
      case CotrainMode::Hard:
        set.targets.push_back(
            SentenceTarget::hard_target(tags_to_classes(sig.pseudo.at(s.id), schema)));
        break;
      case CotrainMode::Soft:
        set.targets.push_back(SentenceTarget::soft_target(soft_it->second));
        break;
      case CotrainMode::SoftConfidence: {
        TokenDistributions rows(soft_it->second.size());
        for (std::size_t m : sig.selected.at(s.id)) rows[m] = soft_it->second[m];
        set.targets.push_back(SentenceTarget::soft_target(std::move(rows)));
        break;
      }
    }
  }
  std::size_t k = 0;
  for (const auto& s : corpus.sentences) {
    Example ex{&s, &set.targets[k++]};
    (is_validation_id(s.id, validation_fraction) ? set.validation : set.train).push_back(ex);
  }
  return set;
}

}  // namespace cotrain_detail

// One teacher-to-student round: fine-tune every student member on the
// teacher's labels. In the confidence mode an empty selection aborts the
// round. A member whose fine-tune diverges keeps its previous parameters.
inline RoundResult cotrain_round(const TeacherSignals& sig, PeerState& student,
                                 const Corpus& corpus, const SlotSchema& schema,
                                 const TrainConfig& train_config,
                                 const CotrainConfig& config, int workers = 1) {
  train_config.validate();
  config.validate();
  weaksup_detail::ExampleSet set = cotrain_detail::round_examples(
      sig, corpus, schema, config, train_config.validation_fraction);

  RoundResult result;
  result.selected_tokens =
      config.mode == CotrainMode::SoftConfidence ? sig.selected_tokens : sig.total_tokens;
  if (config.mode == CotrainMode::SoftConfidence) {
    std::uint64_t train_selected = 0;
    for (const Example& ex : set.train) {
      for (std::size_t m = 0; m < ex.target->size(); ++m) {
        if (ex.target->included(m)) ++train_selected;
      }
    }
    if (train_selected == 0) {
      throw Error("co-training round aborted: no token cleared the confidence threshold " +
                  std::to_string(config.epsilon));
    }
  }

  const std::size_t num_classes = schema.tag_vocabulary().size();
  const int next_iteration = student.iteration + 1;
  std::vector<FitResult> fits(student.ensemble.size());
  std::vector<bool> diverged(student.ensemble.size(), false);
  parallel_for(student.ensemble.size(), workers, [&](std::size_t k) {
    const TaggerParams& warm = student.ensemble[k];
    std::uint64_t round_seed =
        derive_seed(warm.seed, "round", static_cast<std::uint64_t>(next_iteration));
    try {
      fits[k] = fit(set.train, set.validation, num_classes, train_config, round_seed, &warm);
    } catch (const TrainingError&) {
      diverged[k] = true;
    }
  });

  for (std::size_t k = 0; k < student.ensemble.size(); ++k) {
    double vloss;
    if (diverged[k]) {
      ++result.diverged_members;
      BatchLoss bl = batch_loss(student.ensemble[k], set.validation);
      vloss = bl.contributing ? bl.loss : 0.0;
    } else {
      student.ensemble[k] = fits[k].params;
      vloss = fits[k].best_val_loss;
    }
    result.member_val_loss.push_back(vloss);
    result.mean_val_loss += vloss;
  }
  result.mean_val_loss /= static_cast<double>(student.ensemble.size());
  student.iteration = next_iteration;
  return result;
}

struct IterationRecord {
  int iteration = 0;
  double agreement = 0.0;   // measured before this iteration's rounds
  bool converged = false;   // true when the agreement check ended the run
  bool p2_reinitialized = false;
  bool p1_reinitialized = false;
  std::optional<RoundResult> p1_to_p2;
  std::optional<RoundResult> p2_to_p1;
};

struct CotrainReport {
  std::vector<IterationRecord> iterations;
  bool converged = false;
  int iterations_run = 0;  // completed round pairs
  double final_agreement = 0.0;
};

inline nlohmann::json report_to_json(const CotrainReport& report) {
  nlohmann::json j;
  j["converged"] = report.converged;
  j["iterations_run"] = report.iterations_run;
  j["final_agreement"] = report.final_agreement;
  nlohmann::json items = nlohmann::json::array();
  for (const auto& it : report.iterations) {
    nlohmann::json r;
    r["iteration"] = it.iteration;
    r["agreement"] = it.agreement;
    r["converged"] = it.converged;
    r["p1_reinitialized"] = it.p1_reinitialized;
    r["p2_reinitialized"] = it.p2_reinitialized;
    auto round_json = [](const RoundResult& rr) {
      return nlohmann::json{{"mean_val_loss", rr.mean_val_loss},
                            {"member_val_loss", rr.member_val_loss},
                            {"selected_tokens", rr.selected_tokens},
                            {"diverged_members", rr.diverged_members}};
    };
    if (it.p1_to_p2) r["p1_to_p2"] = round_json(*it.p1_to_p2);
    if (it.p2_to_p1) r["p2_to_p1"] = round_json(*it.p2_to_p1);
    items.push_back(std::move(r));
  }
  j["iterations"] = std::move(items);
  return j;
}

namespace cotrain_detail {

struct Plateau {
  double best = std::numeric_limits<double>::infinity();
  int stale = 0;
};

inline void update_plateau(Plateau& p, double loss) {
  if (loss < p.best) {
    p.best = loss;
    p.stale = 0;
  } else {
    ++p.stale;
  }
}

// Replaces a stalled peer's ensemble with freshly seeded parameters; the
// next round retrains it from the other peer's current soft labels.
inline bool maybe_reinitialize(PeerState& peer, Plateau& plateau, int patience,
                               std::uint64_t root_seed, int& reinit_count,
                               std::size_t num_classes, double init_scale) {
  if (plateau.stale < patience) return false;
  std::size_t members = peer.ensemble.size();
  for (std::size_t k = 0; k < members; ++k) {
    std::uint64_t seed = derive_seed(root_seed, peer.name + "/reinit",
                                     static_cast<std::uint64_t>(reinit_count) * 64 + k);
    peer.ensemble[k] = make_tagger(seed, num_classes, init_scale);
  }
  ++reinit_count;
  plateau = Plateau{};
  return true;
}

}  // namespace cotrain_detail

// Full co-training loop. Each iteration first measures pseudo-label
// agreement between the peers and stops if it reaches the convergence
// threshold; otherwise p1 teaches p2, then the updated p2 teaches p1.
// When `artifact_dir` is set, per-iteration agreement, the soft labels
// each teacher produced, and peer checkpoints are written, and a run
// manifest lists every iteration directory.
inline CotrainReport run_cotraining(PeerState& p1, PeerState& p2, const Corpus& corpus,
                                    const SlotSchema& schema, const TrainConfig& train_config,
                                    const CotrainConfig& config, std::uint64_t root_seed,
                                    const std::optional<std::filesystem::path>& artifact_dir,
                                    int workers = 1) {
  train_config.validate();
  config.validate();
  schema.validate();
  const std::size_t num_classes = schema.tag_vocabulary().size();

  CotrainReport report;
  cotrain_detail::Plateau plateau1, plateau2;
  int reinits1 = 0, reinits2 = 0;
  std::vector<std::string> iteration_dirs;

  auto iteration_dir = [&](int t) {
    char name[32];
    std::snprintf(name, sizeof(name), "it_%03d", t);
    return std::string(name);
  };
  auto write_iteration_json = [&](int t, const nlohmann::json& j, const char* file) {
    if (!artifact_dir) return;
    std::filesystem::path dir = *artifact_dir / "iterations" / iteration_dir(t);
    std::ofstream out = io_detail::open_out(dir / file);
    out << j.dump(2) << '\n';
  };

  double agreement = 0.0;
  for (int t = 1; t <= config.max_iterations; ++t) {
    TeacherSignals sig1 = teacher_signals(p1, corpus, schema, config, workers);
    {
      TeacherSignals sig2 = teacher_signals(p2, corpus, schema, config, workers);
      agreement = token_agreement(sig1.pseudo, sig2.pseudo);
    }

    IterationRecord record;
    record.iteration = t;
    record.agreement = agreement;

    if (agreement >= config.convergence_threshold) {
      record.converged = true;
      report.converged = true;
      if (artifact_dir) iteration_dirs.push_back(iteration_dir(t));
      write_iteration_json(t, {{"iteration", t}, {"agreement", agreement}, {"converged", true}},
                           "agreement.json");
      report.iterations.push_back(std::move(record));
      break;
    }
    if (artifact_dir) iteration_dirs.push_back(iteration_dir(t));
    write_iteration_json(t, {{"iteration", t}, {"agreement", agreement}, {"converged", false}},
                         "agreement.json");

    // p1 teaches p2.
    record.p2_reinitialized = cotrain_detail::maybe_reinitialize(
        p2, plateau2, config.reinit_patience, root_seed, reinits2, num_classes,
        train_config.init_scale);
    if (artifact_dir) {
      save_soft_labels(*artifact_dir / "iterations" / iteration_dir(t) / "soft_from_p1.jsonl",
                       sig1.soft);
    }
    RoundResult r12 = cotrain_round(sig1, p2, corpus, schema, train_config, config, workers);
    p2.round_history.push_back({t, p1.name, r12.mean_val_loss, r12.member_val_loss,
                                r12.selected_tokens, record.p2_reinitialized});
    cotrain_detail::update_plateau(plateau2, r12.mean_val_loss);
    record.p1_to_p2 = r12;

    // The updated p2 teaches p1.
    TeacherSignals sig2 = teacher_signals(p2, corpus, schema, config, workers);
    record.p1_reinitialized = cotrain_detail::maybe_reinitialize(
        p1, plateau1, config.reinit_patience, root_seed, reinits1, num_classes,
        train_config.init_scale);
    if (artifact_dir) {
      save_soft_labels(*artifact_dir / "iterations" / iteration_dir(t) / "soft_from_p2.jsonl",
                       sig2.soft);
    }
    RoundResult r21 = cotrain_round(sig2, p1, corpus, schema, train_config, config, workers);
    p1.round_history.push_back({t, p2.name, r21.mean_val_loss, r21.member_val_loss,
                                r21.selected_tokens, record.p1_reinitialized});
    cotrain_detail::update_plateau(plateau1, r21.mean_val_loss);
    record.p2_to_p1 = r21;

    if (artifact_dir) {
      std::filesystem::path dir = *artifact_dir / "iterations" / iteration_dir(t);
      save_peer(dir / "p1", p1);
      save_peer(dir / "p2", p2);
    }
    report.iterations.push_back(std::move(record));
    report.iterations_run = t;
  }

  if (!report.converged) {
    auto y1 = pseudo_labels(predict_corpus(p1, corpus, workers), schema);
    auto y2 = pseudo_labels(predict_corpus(p2, corpus, workers), schema);
    agreement = token_agreement(y1, y2);
  }
  report.final_agreement = agreement;

  if (artifact_dir) {
    nlohmann::json manifest;
    manifest["format"] = "cotag-cotrain-run";
    manifest["version"] = 1;
    manifest["iterations"] = iteration_dirs;
    manifest["iterations_run"] = report.iterations_run;
    manifest["converged"] = report.converged;
    manifest["final_agreement"] = report.final_agreement;
    manifest["epsilon"] = config.epsilon;
    manifest["mode"] = std::string(to_string(config.mode));
    manifest["convergence_threshold"] = config.convergence_threshold;
    std::ofstream out = io_detail::open_out(*artifact_dir / "manifest.json");
    out << manifest.dump(2) << '\n';
  }
  return report;
}

}  // namespace cotag

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cotag/autolabel.hpp"
#include "cotag/error.hpp"
#include "cotag/io.hpp"
#include "cotag/iob.hpp"
#include "cotag/parallel.hpp"
#include "cotag/random.hpp"
#include "cotag/tagger.hpp"

namespace cotag {

// Weak-supervision phase: train one peer ensemble per label source on that
// source's tags, treating them as gold. Peers carry their training history
// and persist as a directory of member checkpoints plus a manifest.

struct SeedRecord {
  std::uint64_t seed = 0;
  bool diverged = false;
  double best_val_loss = 0.0;
  int best_epoch = 0;
  int epochs_run = 0;
};

// One co-training round as seen by the student peer.
struct RoundRecord {
  int iteration = 0;
  std::string teacher;
  double mean_val_loss = 0.0;
  std::vector<double> member_val_loss;
  std::uint64_t selected_tokens = 0;
  bool reinitialized = false;
};

struct PeerState {
  std::string name;
  std::string origin_source;  // label source the peer was first trained on
  int iteration = 0;          // co-training rounds absorbed so far
  std::vector<TaggerParams> ensemble;
  std::vector<SeedRecord> initial_history;
  std::vector<RoundRecord> round_history;
};

// Deterministic id-hash split: a sentence is validation iff its id hashes
// into the lowest `fraction` of the hash space. Independent of corpus order.
inline bool is_validation_id(std::string_view id, double fraction) {
  return static_cast<double>(fnv1a64(id) % 10000) < fraction * 10000.0;
}

inline void split_corpus(const Corpus& corpus, double fraction,
                         std::vector<const Sentence*>& train,
                         std::vector<const Sentence*>& validation) {
  train.clear();
  validation.clear();
  for (const auto& s : corpus.sentences) {
    (is_validation_id(s.id, fraction) ? validation : train).push_back(&s);
  }
}

// Tags -> class indices in the schema's tag vocabulary.
inline std::vector<int> tags_to_classes(const TagSequence& tags, const SlotSchema& schema) {
  std::vector<std::string> vocab = schema.tag_vocabulary();
  std::vector<int> out;
  out.reserve(tags.size());
  for (const auto& t : tags) {
    auto it = std::find(vocab.begin(), vocab.end(), t);
    if (it == vocab.end()) {
      throw SchemaError("tag '" + t + "' is not in the tag vocabulary");
    }
    out.push_back(static_cast<int>(it - vocab.begin()));
  }
  return out;
}

namespace weaksup_detail {

struct ExampleSet {
  // Owns targets; examples point into targets and the corpus.
  std::vector<SentenceTarget> targets;
  std::vector<Example> train;
  std::vector<Example> validation;
};

inline ExampleSet hard_examples(const Corpus& corpus, const LabelSource& source,
                                const SlotSchema& schema, double validation_fraction) {
  ExampleSet set;
  set.targets.reserve(corpus.sentences.size());
  std::vector<std::string> missing;
  for (const auto& s : corpus.sentences) {
    auto it = source.labels.find(s.id);
    if (it == source.labels.end()) {
      missing.push_back(s.id);
      continue;
    }
    if (it->second.size() != s.size()) {
      throw Error("label source '" + source.name + "' has " +
                  std::to_string(it->second.size()) + " tags for " +
                  std::to_string(s.size()) + " tokens in sentence '" + s.id + "'");
    }
    set.targets.push_back(SentenceTarget::hard_target(tags_to_classes(it->second, schema)));
  }
  if (!missing.empty()) {
    std::string msg = "label source '" + source.name + "' does not cover " +
                      std::to_string(missing.size()) + " sentence(s), first: '" +
                      missing.front() + "'";
    throw Error(msg);
  }
  std::size_t k = 0;
  for (const auto& s : corpus.sentences) {
    Example ex{&s, &set.targets[k++]};
    (is_validation_id(s.id, validation_fraction) ? set.validation : set.train).push_back(ex);
  }
  return set;
}

}  // namespace weaksup_detail

// Trains a peer ensemble on one label source. Divergent members are dropped
// (and recorded); if every member diverges the phase fails.
inline PeerState train_weak_peer(const Corpus& corpus, const LabelSource& source,
                                 const SlotSchema& schema, const TrainConfig& config,
                                 std::string peer_name, std::uint64_t root_seed,
                                 int workers = 1) {
  config.validate();
  schema.validate();
  weaksup_detail::ExampleSet set =
      weaksup_detail::hard_examples(corpus, source, schema, config.validation_fraction);
  const std::size_t num_classes = schema.tag_vocabulary().size();
  std::uint64_t base_seed = derive_seed(root_seed, peer_name);
  std::vector<FitResult> fits =
      fit_ensemble(set.train, set.validation, num_classes, config, base_seed, workers);

  PeerState peer;
  peer.name = std::move(peer_name);
  peer.origin_source = source.name;
  for (const FitResult& fr : fits) {
    peer.initial_history.push_back({fr.seed, fr.diverged, fr.best_val_loss, fr.best_epoch,
                                    static_cast<int>(fr.epochs.size())});
    if (!fr.diverged) peer.ensemble.push_back(fr.params);
  }
  if (peer.ensemble.empty()) {
    throw TrainingError("peer '" + peer.name + "': every ensemble member diverged");
  }
  return peer;
}

// Ensemble-averaged distributions for every sentence, keyed by id.
inline std::map<std::string, TokenDistributions> predict_corpus(const PeerState& peer,
                                                                const Corpus& corpus,
                                                                int workers = 1) {
  std::vector<TokenDistributions> rows(corpus.sentences.size());
  parallel_for(corpus.sentences.size(), workers, [&](std::size_t i) {
    rows[i] = ensemble_predict(peer.ensemble, corpus.sentences[i]);
  });
  std::map<std::string, TokenDistributions> out;
  for (std::size_t i = 0; i < corpus.sentences.size(); ++i) {
    out.emplace(corpus.sentences[i].id, std::move(rows[i]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Peer persistence: <dir>/manifest.json plus member_XX.json checkpoints.

inline void save_peer(const std::filesystem::path& dir, const PeerState& peer) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["format"] = "cotag-peer";
  j["version"] = 1;
  j["name"] = peer.name;
  j["origin_source"] = peer.origin_source;
  j["iteration"] = peer.iteration;
  j["members"] = peer.ensemble.size();
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& r : peer.initial_history) {
    hist.push_back({{"seed", r.seed},
                    {"diverged", r.diverged},
                    {"best_val_loss", r.best_val_loss},
                    {"best_epoch", r.best_epoch},
                    {"epochs_run", r.epochs_run}});
  }
  j["initial_history"] = std::move(hist);
  nlohmann::json rounds = nlohmann::json::array();
  for (const auto& r : peer.round_history) {
    rounds.push_back({{"iteration", r.iteration},
                      {"teacher", r.teacher},
                      {"mean_val_loss", r.mean_val_loss},
                      {"member_val_loss", r.member_val_loss},
                      {"selected_tokens", r.selected_tokens},
                      {"reinitialized", r.reinitialized}});
  }
  j["round_history"] = std::move(rounds);
  {
    std::ofstream out = io_detail::open_out(dir / "manifest.json");
    out << j.dump(2) << '\n';
  }
  for (std::size_t k = 0; k < peer.ensemble.size(); ++k) {
    char name[48];
    std::snprintf(name, sizeof(name), "member_%02zu.json", k);
    save_tagger(dir / name, peer.ensemble[k]);
  }
}

inline PeerState load_peer(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw LoadError("cannot open peer manifest: " + (dir / "manifest.json").string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || j.value("format", std::string{}) != "cotag-peer" ||
      j.value("version", 0) != 1) {
    throw LoadError(dir.string() + ": unrecognized peer manifest");
  }
  PeerState peer;
  try {
    peer.name = j.at("name").get<std::string>();
    peer.origin_source = j.at("origin_source").get<std::string>();
    peer.iteration = j.at("iteration").get<int>();
    for (const auto& r : j.value("initial_history", nlohmann::json::array())) {
      peer.initial_history.push_back({r.at("seed").get<std::uint64_t>(),
                                      r.at("diverged").get<bool>(),
                                      r.at("best_val_loss").get<double>(),
                                      r.at("best_epoch").get<int>(),
                                      r.at("epochs_run").get<int>()});
    }
    for (const auto& r : j.value("round_history", nlohmann::json::array())) {
      RoundRecord rr;
      rr.iteration = r.at("iteration").get<int>();
      rr.teacher = r.at("teacher").get<std::string>();
      rr.mean_val_loss = r.at("mean_val_loss").get<double>();
      rr.member_val_loss = r.at("member_val_loss").get<std::vector<double>>();
      rr.selected_tokens = r.at("selected_tokens").get<std::uint64_t>();
      rr.reinitialized = r.at("reinitialized").get<bool>();
      peer.round_history.push_back(std::move(rr));
    }
    std::size_t members = j.at("members").get<std::size_t>();
    for (std::size_t k = 0; k < members; ++k) {
      char name[48];
      std::snprintf(name, sizeof(name), "member_%02zu.json", k);
      peer.ensemble.push_back(load_tagger(dir / name));
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(dir.string() + ": " + e.what());
  }
  return peer;
}

}  // namespace cotag

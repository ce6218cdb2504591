#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cotag/error.hpp"
#include "cotag/fuzzy.hpp"
#include "cotag/io.hpp"
#include "cotag/iob.hpp"
#include "cotag/parallel.hpp"
#include "cotag/scorer.hpp"

namespace cotag {

// Automatic pseudo-label generation: propose slot spans by fuzzy gazetteer
// matching over sentence n-grams, validate each proposal by substituting the
// span with its entity type and checking sentence fluency, then keep a
// greedy non-overlapping set of survivors.

// A named set of tag sequences keyed by sentence id; one weak supervision
// source for training.
struct LabelSource {
  std::string name;
  std::map<std::string, TagSequence> labels;
};

struct Hypothesis {
  Span span;
  std::string kg_type;
  int ratio = 0;      // fuzzy match score against the gazetteer
  double score = 0.0;  // fluency metric of the type-substituted sentence
};

struct AutolabelConfig {
  int match_threshold = 80;
  std::size_t max_ngram_len = 6;
  // A hypothesis must keep at least this fraction of the unmodified
  // sentence's probability; 0.5 drops candidates below half.
  double keep_ratio = 0.5;
  // Compare per-token log-probabilities instead of totals, so substitutions
  // that change the token count are not penalized for length alone.
  bool normalize_per_token = true;
  int workers = 1;

  void validate() const {
    if (match_threshold < 0 || match_threshold > 100) {
      throw Error("match threshold must be in [0, 100]");
    }
    if (max_ngram_len == 0) throw Error("max n-gram length must be positive");
    if (!(keep_ratio > 0.0) || keep_ratio > 1.0) {
      throw Error("keep ratio must be in (0, 1]");
    }
  }
};

// All [start, end) windows up to max_len tokens, by start then length.
inline std::vector<std::pair<std::size_t, std::size_t>> generate_ngrams(
    std::size_t num_tokens, std::size_t max_len) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t start = 0; start < num_tokens; ++start) {
    for (std::size_t end = start + 1; end <= num_tokens && end - start <= max_len; ++end) {
      out.emplace_back(start, end);
    }
  }
  return out;
}

inline std::string join_tokens(const std::vector<std::string>& tokens, std::size_t start,
                               std::size_t end) {
  std::string out;
  for (std::size_t i = start; i < end; ++i) {
    if (i > start) out += ' ';
    out += tokens[i];
  }
  return out;
}

inline std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && (text[i] == ' ' || text[i] == '\t')) ++i;
    std::size_t start = i;
    while (i < text.size() && text[i] != ' ' && text[i] != '\t') ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

// Gazetteer pass: every n-gram window is matched against the gazetteer, and
// each (window, slot) pair keeps its best-scoring entry type. Types without
// a schema mapping are skipped. Output is ordered by (start, end, slot).
inline std::vector<Hypothesis> propose_hypotheses(const Sentence& sentence,
                                                  const Gazetteer& gazetteer,
                                                  const SlotSchema& schema,
                                                  const AutolabelConfig& config) {
  std::map<std::tuple<std::size_t, std::size_t, std::string>, Hypothesis> best;
  for (auto [start, end] : generate_ngrams(sentence.size(), config.max_ngram_len)) {
    std::string text = join_tokens(sentence.tokens, start, end);
    for (const MatchResult& m : lookup(text, gazetteer, config.match_threshold)) {
      auto slot_it = schema.type_to_slot.find(m.entry.kg_type);
      if (slot_it == schema.type_to_slot.end()) continue;
      Hypothesis h{{start, end, slot_it->second}, m.entry.kg_type, m.ratio, 0.0};
      auto key = std::make_tuple(start, end, slot_it->second);
      auto [it, inserted] = best.emplace(key, h);
      if (!inserted && (h.ratio > it->second.ratio ||
                        (h.ratio == it->second.ratio && h.kg_type < it->second.kg_type))) {
        it->second = h;
      }
    }
  }
  std::vector<Hypothesis> out;
  out.reserve(best.size());
  for (auto& [key, h] : best) out.push_back(std::move(h));
  return out;
}

inline std::vector<std::string> substitute_span(const std::vector<std::string>& tokens,
                                                const Span& span,
                                                const std::string& kg_type) {
  std::vector<std::string> out(tokens.begin(), tokens.begin() + span.start);
  for (auto& t : split_whitespace(kg_type)) out.push_back(std::move(t));
  out.insert(out.end(), tokens.begin() + span.end, tokens.end());
  return out;
}

// Fluency pass plus greedy selection. Each hypothesis is scored with its
// span replaced by the entity type; hypotheses that keep less than
// keep_ratio of the base probability are discarded. Survivors are taken
// greedily by score (ties: longer span, then leftmost, then slot and type
// order) subject to non-overlap, and encoded as tags.
inline TagSequence select_labels(const Sentence& sentence, std::vector<Hypothesis> hypotheses,
                                 Scorer& scorer, const FluencyScore& base,
                                 const AutolabelConfig& config) {
  const double log_keep = std::log(config.keep_ratio);
  const double base_metric =
      config.normalize_per_token ? base.per_token_logprob : base.total_logprob;
  std::vector<Hypothesis> kept;
  for (Hypothesis& h : hypotheses) {
    std::vector<std::string> candidate = substitute_span(sentence.tokens, h.span, h.kg_type);
    FluencyScore fs = scorer.score(candidate);
    h.score = config.normalize_per_token ? fs.per_token_logprob : fs.total_logprob;
    if (h.score >= base_metric + log_keep) kept.push_back(std::move(h));
  }
  std::sort(kept.begin(), kept.end(), [](const Hypothesis& x, const Hypothesis& y) {
    if (x.score != y.score) return x.score > y.score;
    std::size_t xlen = x.span.end - x.span.start;
    std::size_t ylen = y.span.end - y.span.start;
    if (xlen != ylen) return xlen > ylen;
    if (x.span.start != y.span.start) return x.span.start < y.span.start;
    if (x.span.slot != y.span.slot) return x.span.slot < y.span.slot;
    return x.kg_type < y.kg_type;
  });
  std::vector<bool> occupied(sentence.size(), false);
  std::vector<Span> chosen;
  for (const Hypothesis& h : kept) {
    bool free = true;
    for (std::size_t i = h.span.start; i < h.span.end && free; ++i) free = !occupied[i];
    if (!free) continue;
    for (std::size_t i = h.span.start; i < h.span.end; ++i) occupied[i] = true;
    chosen.push_back(h.span);
  }
  return encode_spans(sentence.size(), std::move(chosen));
}

// Full phase over a corpus. Falls back to the unmodified sentence (all "O")
// when nothing matches or survives. Sentences are processed in parallel
// only when the scorer allows concurrent use.
inline LabelSource autolabel_corpus(const Corpus& corpus, const Gazetteer& gazetteer,
                                    const SlotSchema& schema, Scorer& scorer,
                                    const AutolabelConfig& config) {
  config.validate();
  schema.validate();
  std::vector<TagSequence> results(corpus.sentences.size());
  int workers = scorer.thread_safe() ? config.workers : 1;
  parallel_for(corpus.sentences.size(), workers, [&](std::size_t i) {
    const Sentence& s = corpus.sentences[i];
    try {
      FluencyScore base = scorer.score(s.tokens);
      std::vector<Hypothesis> hyps = propose_hypotheses(s, gazetteer, schema, config);
      results[i] = select_labels(s, std::move(hyps), scorer, base, config);
    } catch (const Error& e) {
      throw Error("sentence '" + s.id + "': " + e.what());
    }
  });
  LabelSource source;
  source.name = "gazetteer";
  for (std::size_t i = 0; i < corpus.sentences.size(); ++i) {
    source.labels.emplace(corpus.sentences[i].id, std::move(results[i]));
  }
  return source;
}

// Reads a label file produced elsewhere (for example zero-shot predictions
// from another domain's model) and validates it against the corpus and
// schema. Ill-formed transitions are repaired; unknown tags are errors.
inline LabelSource import_label_source(const std::filesystem::path& path,
                                       const Corpus& corpus, const SlotSchema& schema) {
  LabelSource source;
  source.name = path.stem().string();
  for (const auto& [lineno, j] : load_jsonl(path)) {
    std::string at = io_detail::where(path, lineno);
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string() || !j.contains("tags")) {
      throw LoadError(at + ": expected {\"id\": ..., \"tags\": [...]}");
    }
    std::string id = j["id"].get<std::string>();
    const Sentence* sentence = corpus.find(id);
    if (!sentence) throw LoadError(at + ": unknown sentence id '" + id + "'");
    TagSequence tags = parse_string_array(j["tags"], at + ", field 'tags'");
    if (tags.size() != sentence->size()) {
      throw LoadError(at + ": " + std::to_string(tags.size()) + " tags for " +
                      std::to_string(sentence->size()) + " tokens in sentence '" + id + "'");
    }
    try {
      tags = validate_repair(std::move(tags), schema);
    } catch (const SchemaError& e) {
      throw LoadError(at + ": " + e.what());
    }
    if (!source.labels.emplace(std::move(id), std::move(tags)).second) {
      throw LoadError(at + ": duplicate sentence id");
    }
  }
  return source;
}

// Writes labels as JSONL in corpus order; sentences absent from the source
// are skipped.
inline void save_labels(const std::filesystem::path& path, const LabelSource& source,
                        const Corpus& corpus) {
  std::ofstream out = io_detail::open_out(path);
  for (const auto& s : corpus.sentences) {
    auto it = source.labels.find(s.id);
    if (it == source.labels.end()) continue;
    nlohmann::json j;
    j["id"] = s.id;
    j["tags"] = it->second;
    out << j.dump() << '\n';
  }
}

inline LabelSource load_labels(const std::filesystem::path& path, const Corpus& corpus,
                               const SlotSchema& schema, std::string name) {
  LabelSource source = import_label_source(path, corpus, schema);
  source.name = std::move(name);
  return source;
}

}  // namespace cotag

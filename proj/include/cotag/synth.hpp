#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cotag/autolabel.hpp"
#include "cotag/error.hpp"
#include "cotag/eval.hpp"
#include "cotag/fuzzy.hpp"
#include "cotag/io.hpp"
#include "cotag/iob.hpp"
#include "cotag/random.hpp"

namespace cotag {

// Synthetic benchmark generation: sentences are drawn from a template
// grammar with slot placeholders, gold spans are recorded exactly, and two
// weak label sources are derived from gold by dropping spans (globally and
// per slot, so the sources can be made weak on complementary slots) and by
// corrupting span boundaries. A separate fluency corpus can be generated in
// which slot fills are sometimes replaced by their entity-type phrase; a
// language model trained on it accepts type substitutions in slot contexts,
// standing in for the world knowledge of a pretrained scorer.

struct SourceNoise {
  double span_drop = 0.0;       // probability a gold span is removed
  double boundary_noise = 0.0;  // probability a kept span's boundary shifts
  std::map<std::string, double> slot_drop;  // per-slot drop, max-combined
};

struct BenchmarkSpec {
  std::string domain = "synthetic";
  std::vector<std::string> templates;  // tokens split on spaces; "{slot}" expands
  std::map<std::string, std::vector<std::string>> fillers;
  std::map<std::string, std::string> slot_types;  // slot -> entity type phrase
  std::size_t num_sentences = 500;
  std::size_t fluency_sentences = 0;
  double fluency_type_sub_prob = 0.3;
  std::uint64_t seed = 17;
  SourceNoise source_a;
  SourceNoise source_b;

  void validate() const {
    if (templates.empty()) throw Error("benchmark spec has no templates");
    if (fillers.empty()) throw Error("benchmark spec has no fillers");
    if (num_sentences == 0) throw Error("benchmark spec requests zero sentences");
    for (const auto& [slot, surfaces] : fillers) {
      if (surfaces.empty()) throw Error("slot '" + slot + "' has no fillers");
      for (const auto& s : surfaces) {
        if (s.empty()) throw Error("slot '" + slot + "' has an empty filler");
      }
      if (!slot_types.contains(slot)) {
        throw Error("slot '" + slot + "' has no entity type");
      }
    }
    std::map<std::string, std::string> seen;
    for (const auto& [slot, type] : slot_types) {
      if (!fillers.contains(slot)) {
        throw Error("entity type given for unknown slot '" + slot + "'");
      }
      if (type.empty()) throw Error("slot '" + slot + "' has an empty entity type");
      auto [it, inserted] = seen.emplace(type, slot);
      if (!inserted) {
        throw Error("entity type '" + type + "' is mapped to both slot '" + it->second +
                    "' and slot '" + slot + "'");
      }
    }
    for (const auto& t : templates) check_template(t);
  }

  void check_template(const std::string& tmpl) const {
    for (const auto& tok : split_whitespace(tmpl)) {
      if (tok.size() >= 2 && tok.front() == '{' && tok.back() == '}') {
        std::string slot = tok.substr(1, tok.size() - 2);
        if (!fillers.contains(slot)) {
          throw Error("template references unknown slot '" + slot + "' in: " + tmpl);
        }
      }
    }
  }

  static BenchmarkSpec from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw LoadError("benchmark spec must be a JSON object");
    BenchmarkSpec spec;
    try {
      spec.domain = j.value("domain", spec.domain);
      spec.templates = j.at("templates").get<std::vector<std::string>>();
      for (const auto& [slot, arr] : j.at("fillers").items()) {
        spec.fillers[slot] = arr.get<std::vector<std::string>>();
      }
      for (const auto& [slot, type] : j.at("slot_types").items()) {
        spec.slot_types[slot] = type.get<std::string>();
      }
      spec.num_sentences = j.value("num_sentences", spec.num_sentences);
      spec.fluency_sentences = j.value("fluency_sentences", spec.fluency_sentences);
      spec.fluency_type_sub_prob = j.value("fluency_type_sub_prob", spec.fluency_type_sub_prob);
      spec.seed = j.value("seed", spec.seed);
      auto read_noise = [&](const char* key, SourceNoise& n) {
        if (!j.contains(key)) return;
        const auto& s = j.at(key);
        n.span_drop = s.value("span_drop", 0.0);
        n.boundary_noise = s.value("boundary_noise", 0.0);
        if (s.contains("slot_drop")) {
          for (const auto& [slot, p] : s.at("slot_drop").items()) {
            n.slot_drop[slot] = p.get<double>();
          }
        }
      };
      read_noise("source_a", spec.source_a);
      read_noise("source_b", spec.source_b);
    } catch (const nlohmann::json::exception& e) {
      throw LoadError(std::string("benchmark spec: ") + e.what());
    }
    spec.validate();
    return spec;
  }

  nlohmann::json to_json() const {
    auto noise_json = [](const SourceNoise& n) {
      return nlohmann::json{{"span_drop", n.span_drop},
                            {"boundary_noise", n.boundary_noise},
                            {"slot_drop", n.slot_drop}};
    };
    return nlohmann::json{{"domain", domain},
                          {"templates", templates},
                          {"fillers", fillers},
                          {"slot_types", slot_types},
                          {"num_sentences", num_sentences},
                          {"fluency_sentences", fluency_sentences},
                          {"fluency_type_sub_prob", fluency_type_sub_prob},
                          {"seed", seed},
                          {"source_a", noise_json(source_a)},
                          {"source_b", noise_json(source_b)}};
  }
};

struct SynthResult {
  Corpus corpus;  // gold tags attached to every sentence
  SlotSchema schema;
  Gazetteer gazetteer;
  LabelSource source_a;
  LabelSource source_b;
  std::vector<Sentence> fluency_corpus;
  nlohmann::json stats;
};

namespace synth_detail {

struct Rendered {
  std::vector<std::string> tokens;
  std::vector<Span> spans;
};

// Expands one template; each placeholder draws an independent filler.
inline Rendered render(const BenchmarkSpec& spec, const std::string& tmpl, Rng& rng,
                       bool substitute_types, double sub_prob) {
  Rendered out;
  for (const auto& tok : split_whitespace(tmpl)) {
    if (tok.size() >= 2 && tok.front() == '{' && tok.back() == '}') {
      std::string slot = tok.substr(1, tok.size() - 2);
      const auto& surfaces = spec.fillers.at(slot);
      std::string text = surfaces[rng.below(surfaces.size())];
      if (substitute_types && rng.bernoulli(sub_prob)) {
        text = spec.slot_types.at(slot);
      }
      std::size_t start = out.tokens.size();
      for (auto& t : split_whitespace(text)) out.tokens.push_back(std::move(t));
      out.spans.push_back({start, out.tokens.size(), std::move(slot)});
    } else {
      out.tokens.push_back(tok);
    }
  }
  return out;
}

struct NoiseStats {
  std::uint64_t spans_total = 0;
  std::uint64_t spans_dropped = 0;
  std::uint64_t spans_shifted = 0;
};

// Drop decisions first, then boundary shifts on the kept spans. A shift
// picks one of four operations (extend or shrink either edge by one token)
// and leaves the span unchanged when the operation would collide with a
// neighboring kept span, leave the sentence, or empty the span.
inline std::vector<Span> corrupt(const std::vector<Span>& gold, std::size_t num_tokens,
                                 const SourceNoise& noise, Rng& rng, NoiseStats& stats) {
  std::vector<const Span*> kept;
  for (const Span& sp : gold) {
    ++stats.spans_total;
    double drop = noise.span_drop;
    auto it = noise.slot_drop.find(sp.slot);
    if (it != noise.slot_drop.end()) drop = std::max(drop, it->second);
    if (rng.uniform() < drop) {
      ++stats.spans_dropped;
    } else {
      kept.push_back(&sp);
    }
  }
  std::vector<Span> out;
  std::size_t prev_end = 0;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    Span sp = *kept[i];
    if (noise.boundary_noise > 0.0 && rng.uniform() < noise.boundary_noise) {
      std::size_t next_start = i + 1 < kept.size() ? kept[i + 1]->start : num_tokens;
      switch (rng.below(4)) {
        case 0:  // extend left
          if (sp.start > 0 && sp.start > prev_end) --sp.start;
          break;
        case 1:  // extend right
          if (sp.end < next_start) ++sp.end;
          break;
        case 2:  // shrink left
          if (sp.end - sp.start >= 2) ++sp.start;
          break;
        case 3:  // shrink right
          if (sp.end - sp.start >= 2) --sp.end;
          break;
      }
      if (sp.start != kept[i]->start || sp.end != kept[i]->end) ++stats.spans_shifted;
    }
    prev_end = sp.end;
    out.push_back(std::move(sp));
  }
  return out;
}

}  // namespace synth_detail

inline SynthResult generate_synthetic(const BenchmarkSpec& spec) {
  spec.validate();
  SynthResult result;

  result.schema.domain = spec.domain;
  for (const auto& [slot, surfaces] : spec.fillers) result.schema.slots.push_back(slot);
  std::sort(result.schema.slots.begin(), result.schema.slots.end());
  for (const auto& [slot, type] : spec.slot_types) {
    result.schema.type_to_slot.emplace(type, slot);
  }
  result.schema.validate();

  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& [slot, surfaces] : spec.fillers) {
    const std::string& type = spec.slot_types.at(slot);
    for (const auto& surface : surfaces) {
      if (seen.insert({surface, type}).second) {
        result.gazetteer.entries.push_back({surface, type});
      }
    }
  }

  Rng text_rng(derive_seed(spec.seed, "text"));
  std::vector<std::vector<Span>> gold_spans;
  gold_spans.reserve(spec.num_sentences);
  for (std::size_t i = 0; i < spec.num_sentences; ++i) {
    const std::string& tmpl = spec.templates[text_rng.below(spec.templates.size())];
    synth_detail::Rendered r = synth_detail::render(spec, tmpl, text_rng, false, 0.0);
    char id[16];
    std::snprintf(id, sizeof(id), "s%05zu", i);
    Sentence s{id, std::move(r.tokens)};
    result.corpus.gold.emplace(s.id, encode_spans(s.size(), r.spans));
    result.corpus.index.emplace(s.id, result.corpus.sentences.size());
    result.corpus.sentences.push_back(std::move(s));
    gold_spans.push_back(std::move(r.spans));
  }

  auto make_source = [&](const char* name, const SourceNoise& noise, const char* stream) {
    LabelSource src;
    src.name = name;
    Rng rng(derive_seed(spec.seed, stream));
    synth_detail::NoiseStats stats;
    for (std::size_t i = 0; i < result.corpus.sentences.size(); ++i) {
      const Sentence& s = result.corpus.sentences[i];
      std::vector<Span> noisy =
          synth_detail::corrupt(gold_spans[i], s.size(), noise, rng, stats);
      src.labels.emplace(s.id, encode_spans(s.size(), std::move(noisy)));
    }
    result.stats[name] = {
        {"spans_total", stats.spans_total},
        {"spans_dropped", stats.spans_dropped},
        {"spans_shifted", stats.spans_shifted},
        {"f1_vs_gold", slot_f1(result.corpus.gold, src.labels).f1},
    };
    return src;
  };
  result.source_a = make_source("source_a", spec.source_a, "noise_a");
  result.source_b = make_source("source_b", spec.source_b, "noise_b");

  if (spec.fluency_sentences > 0) {
    Rng flu_rng(derive_seed(spec.seed, "fluency"));
    for (std::size_t i = 0; i < spec.fluency_sentences; ++i) {
      const std::string& tmpl = spec.templates[flu_rng.below(spec.templates.size())];
      synth_detail::Rendered r =
          synth_detail::render(spec, tmpl, flu_rng, true, spec.fluency_type_sub_prob);
      char id[16];
      std::snprintf(id, sizeof(id), "f%05zu", i);
      result.fluency_corpus.push_back({id, std::move(r.tokens)});
    }
  }

  std::uint64_t tokens = 0;
  std::map<std::string, std::uint64_t> per_slot;
  for (const auto& s : result.corpus.sentences) tokens += s.size();
  for (const auto& spans : gold_spans) {
    for (const auto& sp : spans) ++per_slot[sp.slot];
  }
  result.stats["sentences"] = result.corpus.sentences.size();
  result.stats["tokens"] = tokens;
  result.stats["gold_spans_per_slot"] = per_slot;
  return result;
}

inline void write_benchmark(const std::filesystem::path& dir, const SynthResult& result) {
  std::filesystem::create_directories(dir);
  save_corpus(dir / "corpus.jsonl", result.corpus);
  result.gazetteer.save_tsv(dir / "gazetteer.tsv");
  save_schema(dir / "schema.json", result.schema);
  save_labels(dir / "source_a.jsonl", result.source_a, result.corpus);
  save_labels(dir / "source_b.jsonl", result.source_b, result.corpus);
  if (!result.fluency_corpus.empty()) {
    Corpus flu;
    flu.sentences = result.fluency_corpus;
    save_corpus(dir / "fluency.jsonl", flu);
  }
  std::ofstream out = io_detail::open_out(dir / "stats.json");
  out << result.stats.dump(2) << '\n';
}

}  // namespace cotag

#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cotag/error.hpp"
#include "cotag/iob.hpp"

namespace cotag {

// File formats: JSON Lines for corpora, label files, and soft labels; a
// single JSON object for schemas. All writers emit sorted object keys and
// shortest round-trip numbers, so equal data produces byte-equal files.

struct Corpus {
  std::vector<Sentence> sentences;
  std::map<std::string, TagSequence> gold;  // only ids that carry gold tags
  std::map<std::string, std::size_t> index;  // id -> position in sentences

  const Sentence* find(std::string_view id) const {
    auto it = index.find(std::string(id));
    return it == index.end() ? nullptr : &sentences[it->second];
  }
};

namespace io_detail {

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write file: " + path.string());
  return out;
}

inline std::string where(const std::filesystem::path& path, std::size_t lineno) {
  return path.string() + ":" + std::to_string(lineno);
}

}  // namespace io_detail

// Parses a JSON Lines file; blank lines are skipped. Returns (line number,
// parsed object) pairs in file order.
inline std::vector<std::pair<std::size_t, nlohmann::json>> load_jsonl(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open file: " + path.string());
  std::vector<std::pair<std::size_t, nlohmann::json>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw LoadError(io_detail::where(path, lineno) + ": invalid JSON");
    }
    out.emplace_back(lineno, std::move(j));
  }
  return out;
}

inline std::vector<std::string> parse_string_array(const nlohmann::json& j,
                                                   const std::string& context) {
  if (!j.is_array()) throw LoadError(context + ": expected an array of strings");
  std::vector<std::string> out;
  out.reserve(j.size());
  for (const auto& e : j) {
    if (!e.is_string()) throw LoadError(context + ": expected an array of strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

// Corpus JSONL: {"id": ..., "tokens": [...]} with an optional "gold" tag
// array of the same length. Ids must be unique and nonempty; tokens must be
// nonempty and free of whitespace.
inline Corpus load_corpus(const std::filesystem::path& path) {
  Corpus corpus;
  for (const auto& [lineno, j] : load_jsonl(path)) {
    std::string at = io_detail::where(path, lineno);
    if (!j.is_object()) throw LoadError(at + ": expected a JSON object");
    if (!j.contains("id") || !j["id"].is_string()) {
      throw LoadError(at + ": missing string field 'id'");
    }
    Sentence s;
    s.id = j["id"].get<std::string>();
    if (s.id.empty()) throw LoadError(at + ": empty sentence id");
    if (!j.contains("tokens")) throw LoadError(at + ": missing field 'tokens'");
    s.tokens = parse_string_array(j["tokens"], at + ", field 'tokens'");
    for (const auto& t : s.tokens) {
      if (t.empty() || t.find_first_of(" \t\n") != std::string::npos) {
        throw LoadError(at + ": tokens must be nonempty and contain no whitespace");
      }
    }
    if (!corpus.index.emplace(s.id, corpus.sentences.size()).second) {
      throw LoadError(at + ": duplicate sentence id '" + s.id + "'");
    }
    if (j.contains("gold")) {
      TagSequence gold = parse_string_array(j["gold"], at + ", field 'gold'");
      if (gold.size() != s.tokens.size()) {
        throw LoadError(at + ": 'gold' length " + std::to_string(gold.size()) +
                        " does not match " + std::to_string(s.tokens.size()) + " tokens");
      }
      corpus.gold.emplace(s.id, std::move(gold));
    }
    corpus.sentences.push_back(std::move(s));
  }
  return corpus;
}

inline void save_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  std::ofstream out = io_detail::open_out(path);
  for (const auto& s : corpus.sentences) {
    nlohmann::json j;
    j["id"] = s.id;
    j["tokens"] = s.tokens;
    auto g = corpus.gold.find(s.id);
    if (g != corpus.gold.end()) j["gold"] = g->second;
    out << j.dump() << '\n';
  }
}

// Schema JSON: {"domain": ..., "slots": [...], "type_to_slot": {...}}.
// Slots are sorted and deduplicated on load.
inline SlotSchema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open schema file: " + path.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw LoadError(path.string() + ": schema must be a JSON object");
  }
  SlotSchema schema;
  schema.domain = j.value("domain", std::string{});
  if (!j.contains("slots")) throw LoadError(path.string() + ": missing field 'slots'");
  schema.slots = parse_string_array(j["slots"], path.string() + ", field 'slots'");
  std::sort(schema.slots.begin(), schema.slots.end());
  schema.slots.erase(std::unique(schema.slots.begin(), schema.slots.end()),
                     schema.slots.end());
  if (j.contains("type_to_slot")) {
    if (!j["type_to_slot"].is_object()) {
      throw LoadError(path.string() + ": 'type_to_slot' must be an object");
    }
    for (const auto& [type, slot] : j["type_to_slot"].items()) {
      if (!slot.is_string()) {
        throw LoadError(path.string() + ": 'type_to_slot' values must be strings");
      }
      schema.type_to_slot.emplace(type, slot.get<std::string>());
    }
  }
  try {
    schema.validate();
  } catch (const SchemaError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
  return schema;
}

inline void save_schema(const std::filesystem::path& path, const SlotSchema& schema) {
  nlohmann::json j;
  j["domain"] = schema.domain;
  j["slots"] = schema.slots;
  j["type_to_slot"] = schema.type_to_slot;
  std::ofstream out = io_detail::open_out(path);
  out << j.dump(2) << '\n';
}

// Soft-label JSONL: {"id": ..., "probs": [[...], ...]}, one row per token.
inline void save_soft_labels(const std::filesystem::path& path,
                             const std::map<std::string, TokenDistributions>& soft) {
  std::ofstream out = io_detail::open_out(path);
  for (const auto& [id, rows] : soft) {
    nlohmann::json j;
    j["id"] = id;
    j["probs"] = rows;
    out << j.dump() << '\n';
  }
}

inline std::map<std::string, TokenDistributions> load_soft_labels(
    const std::filesystem::path& path) {
  std::map<std::string, TokenDistributions> out;
  for (const auto& [lineno, j] : load_jsonl(path)) {
    std::string at = io_detail::where(path, lineno);
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string() ||
        !j.contains("probs") || !j["probs"].is_array()) {
      throw LoadError(at + ": expected {\"id\": ..., \"probs\": [[...]]}");
    }
    TokenDistributions rows;
    for (const auto& row : j["probs"]) {
      if (!row.is_array()) throw LoadError(at + ": 'probs' rows must be arrays");
      rows.push_back(row.get<std::vector<double>>());
    }
    if (!out.emplace(j["id"].get<std::string>(), std::move(rows)).second) {
      throw LoadError(at + ": duplicate sentence id");
    }
  }
  return out;
}

}  // namespace cotag

#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cotag/error.hpp"

namespace cotag {

// IOB tagging core: sentences, tag sequences, span conversion, repair of
// ill-formed sequences, and alignment between word-level and subword-level
// tag sequences.

inline constexpr std::string_view kOutsideTag = "O";
// Marker for subword positions that carry no supervision (non-initial pieces).
inline constexpr std::string_view kIgnoreTag = "IGNORE";

struct Sentence {
  std::string id;
  std::vector<std::string> tokens;

  std::size_t size() const { return tokens.size(); }
};

using TagSequence = std::vector<std::string>;

// Per-token class distributions for one sentence; row m is a probability
// vector over the tag vocabulary at token m.
using TokenDistributions = std::vector<std::vector<double>>;

// Half-open token range [start, end) labeled with a slot name.
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string slot;

  friend bool operator==(const Span&, const Span&) = default;
  friend auto operator<=>(const Span&, const Span&) = default;
};

inline bool is_begin_tag(std::string_view t) {
  return t.size() > 2 && t[0] == 'B' && t[1] == '-';
}
inline bool is_inside_tag(std::string_view t) {
  return t.size() > 2 && t[0] == 'I' && t[1] == '-';
}
inline std::string_view tag_slot(std::string_view t) { return t.substr(2); }

// Slot inventory for one domain plus the mapping from knowledge-graph entity
// types to slot names. Slots are kept sorted so derived artifacts (tag
// vocabularies, class indices) are stable across runs.
struct SlotSchema {
  std::string domain;
  std::vector<std::string> slots;
  std::map<std::string, std::string> type_to_slot;

  void validate() const {
    if (slots.empty()) throw SchemaError("schema has no slots");
    for (const auto& s : slots) {
      if (s.empty()) throw SchemaError("schema contains an empty slot name");
    }
    if (!std::is_sorted(slots.begin(), slots.end())) {
      throw SchemaError("schema slots must be sorted");
    }
    if (std::adjacent_find(slots.begin(), slots.end()) != slots.end()) {
      throw SchemaError("schema slots must be unique");
    }
    for (const auto& [type, slot] : type_to_slot) {
      if (!has_slot(slot)) {
        throw SchemaError("schema maps type '" + type + "' to unknown slot '" + slot + "'");
      }
    }
  }

  bool has_slot(std::string_view name) const {
    return std::binary_search(slots.begin(), slots.end(), name);
  }

  // "O" first, then B-/I- per slot in schema order. Class indices used by
  // the tagger are positions in this vector, so "O" is always class 0.
  std::vector<std::string> tag_vocabulary() const {
    std::vector<std::string> vocab;
    vocab.reserve(1 + 2 * slots.size());
    vocab.emplace_back(kOutsideTag);
    for (const auto& s : slots) {
      vocab.push_back("B-" + s);
      vocab.push_back("I-" + s);
    }
    return vocab;
  }
};

// Spans -> tags. Spans may arrive in any order; they must be in range,
// nonempty, and pairwise disjoint.
inline TagSequence encode_spans(std::size_t num_tokens, std::vector<Span> spans) {
  std::sort(spans.begin(), spans.end());
  TagSequence tags(num_tokens, std::string(kOutsideTag));
  std::size_t prev_end = 0;
  const Span* prev = nullptr;
  for (const Span& sp : spans) {
    if (sp.start >= sp.end || sp.end > num_tokens) {
      throw SpanConflictError("span [" + std::to_string(sp.start) + ", " +
                              std::to_string(sp.end) + ") for slot '" + sp.slot +
                              "' is out of range for " + std::to_string(num_tokens) +
                              " tokens");
    }
    if (prev && sp.start < prev_end) {
      throw SpanConflictError("span [" + std::to_string(sp.start) + ", " +
                              std::to_string(sp.end) + ") for slot '" + sp.slot +
                              "' overlaps span [" + std::to_string(prev->start) + ", " +
                              std::to_string(prev->end) + ") for slot '" + prev->slot +
                              "'");
    }
    tags[sp.start] = "B-" + sp.slot;
    for (std::size_t i = sp.start + 1; i < sp.end; ++i) tags[i] = "I-" + sp.slot;
    prev_end = sp.end;
    prev = &sp;
  }
  return tags;
}

// Tags -> spans; exact inverse of encode_spans on well-formed input. Reads
// maximal B-x (I-x)* runs; a defensive fallback treats a stray I-x like B-x
// so the function is total, but callers should repair first.
inline std::vector<Span> decode_tags(const TagSequence& tags) {
  std::vector<Span> spans;
  Span current;
  bool open = false;
  auto close = [&](std::size_t end) {
    if (open) {
      current.end = end;
      spans.push_back(current);
      open = false;
    }
  };
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const std::string& t = tags[i];
    if (is_begin_tag(t)) {
      close(i);
      current = {i, i, std::string(tag_slot(t))};
      open = true;
    } else if (is_inside_tag(t)) {
      if (open && current.slot == tag_slot(t)) continue;
      close(i);
      current = {i, i, std::string(tag_slot(t))};
      open = true;
    } else {
      close(i);
    }
  }
  close(tags.size());
  return spans;
}

// Rewrites I-x tags that do not continue a same-slot span as B-x. Inputs are
// assumed to draw from a valid tag vocabulary; only transition structure is
// fixed here.
inline TagSequence repair_tags(TagSequence tags) {
  std::string_view prev_slot;
  bool prev_in_span = false;
  for (auto& t : tags) {
    if (is_inside_tag(t)) {
      if (!prev_in_span || prev_slot != tag_slot(t)) t[0] = 'B';
      prev_in_span = true;
      prev_slot = tag_slot(t);
    } else if (is_begin_tag(t)) {
      prev_in_span = true;
      prev_slot = tag_slot(t);
    } else {
      prev_in_span = false;
      prev_slot = {};
    }
  }
  return tags;
}

// Vocabulary check against the schema, then structural repair.
inline TagSequence validate_repair(TagSequence tags, const SlotSchema& schema) {
  for (const auto& t : tags) {
    bool ok = t == kOutsideTag ||
              ((is_begin_tag(t) || is_inside_tag(t)) && schema.has_slot(tag_slot(t)));
    if (!ok) throw SchemaError("tag '" + t + "' is not valid for domain '" + schema.domain + "'");
  }
  return repair_tags(std::move(tags));
}

// Word -> subword piece mapping. Pieces of word w are the contiguous run
// word_pieces[w]; together the runs partition [0, piece_count).
struct SubwordMap {
  std::vector<std::vector<std::size_t>> word_pieces;

  std::size_t word_count() const { return word_pieces.size(); }

  std::size_t piece_count() const {
    std::size_t n = 0;
    for (const auto& p : word_pieces) n += p.size();
    return n;
  }

  void validate() const {
    std::size_t expect = 0;
    for (std::size_t w = 0; w < word_pieces.size(); ++w) {
      if (word_pieces[w].empty()) {
        throw Error("word " + std::to_string(w) + " has no subword pieces");
      }
      for (std::size_t p : word_pieces[w]) {
        if (p != expect) {
          throw Error("subword pieces must be contiguous and ordered; word " +
                      std::to_string(w) + " lists piece " + std::to_string(p) +
                      " where " + std::to_string(expect) + " was expected");
        }
        ++expect;
      }
    }
  }

  static SubwordMap identity(std::size_t words) {
    SubwordMap m;
    m.word_pieces.resize(words);
    for (std::size_t w = 0; w < words; ++w) m.word_pieces[w] = {w};
    return m;
  }
};

// Word tags -> piece tags. The first piece of each word inherits the word
// tag; the rest get the IGNORE marker and carry no supervision.
inline std::vector<std::string> align_to_subwords(const TagSequence& tags,
                                                  const SubwordMap& map) {
  if (tags.size() != map.word_count()) {
    throw Error("tag/word count mismatch: " + std::to_string(tags.size()) + " tags vs " +
                std::to_string(map.word_count()) + " words");
  }
  map.validate();
  std::vector<std::string> out(map.piece_count(), std::string(kIgnoreTag));
  for (std::size_t w = 0; w < map.word_count(); ++w) {
    out[map.word_pieces[w].front()] = tags[w];
  }
  return out;
}

// Piece tags -> word tags; inverse of align_to_subwords. Only the first
// piece of each word is consulted.
inline TagSequence dealign_from_subwords(const std::vector<std::string>& piece_tags,
                                         const SubwordMap& map) {
  if (piece_tags.size() != map.piece_count()) {
    throw Error("piece tag count mismatch: " + std::to_string(piece_tags.size()) +
                " tags vs " + std::to_string(map.piece_count()) + " pieces");
  }
  map.validate();
  TagSequence out;
  out.reserve(map.word_count());
  for (const auto& pieces : map.word_pieces) {
    out.push_back(piece_tags[pieces.front()]);
  }
  return out;
}

}  // namespace cotag

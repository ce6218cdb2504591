#pragma once

#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "cotag/error.hpp"
#include "cotag/iob.hpp"

namespace cotag {

// Evaluation: span-exact micro-averaged slot F1 and token-level agreement.
// Both sides of a comparison are structurally repaired first, so metrics
// never depend on ill-formed transitions.

struct SlotStats {
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct F1Report {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
  std::size_t gold_spans = 0;
  std::size_t predicted_spans = 0;
  std::map<std::string, SlotStats> per_slot;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["precision"] = precision;
    j["recall"] = recall;
    j["f1"] = f1;
    j["true_positives"] = true_positives;
    j["false_positives"] = false_positives;
    j["false_negatives"] = false_negatives;
    j["gold_spans"] = gold_spans;
    j["predicted_spans"] = predicted_spans;
    nlohmann::json per;
    for (const auto& [slot, s] : per_slot) {
      per[slot] = {{"true_positives", s.true_positives},
                   {"false_positives", s.false_positives},
                   {"false_negatives", s.false_negatives},
                   {"precision", s.precision},
                   {"recall", s.recall},
                   {"f1", s.f1}};
    }
    j["per_slot"] = std::move(per);
    return j;
  }
};

namespace eval_detail {

inline void check_aligned(const std::map<std::string, TagSequence>& a,
                          const std::map<std::string, TagSequence>& b,
                          const char* a_name, const char* b_name) {
  for (const auto& [id, tags] : a) {
    auto it = b.find(id);
    if (it == b.end()) {
      throw Error(std::string(b_name) + " is missing sentence id '" + id + "'");
    }
    if (it->second.size() != tags.size()) {
      throw Error("sentence '" + id + "': " + a_name + " has " +
                  std::to_string(tags.size()) + " tags but " + b_name + " has " +
                  std::to_string(it->second.size()));
    }
  }
  for (const auto& [id, tags] : b) {
    if (!a.contains(id)) {
      throw Error(std::string(a_name) + " is missing sentence id '" + id + "'");
    }
  }
}

inline void fill_rates(SlotStats& s) {
  std::size_t pred = s.true_positives + s.false_positives;
  std::size_t gold = s.true_positives + s.false_negatives;
  s.precision = pred ? static_cast<double>(s.true_positives) / static_cast<double>(pred) : 0.0;
  s.recall = gold ? static_cast<double>(s.true_positives) / static_cast<double>(gold) : 0.0;
  s.f1 = (s.precision + s.recall) > 0.0
             ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
             : 0.0;
}

}  // namespace eval_detail

// Span-exact slot F1: a predicted span counts as correct only if a gold span
// with the same slot and the same [start, end) exists in the same sentence.
// Micro-averaged over all spans; per-slot breakdown included.
inline F1Report slot_f1(const std::map<std::string, TagSequence>& gold,
                        const std::map<std::string, TagSequence>& predicted) {
  eval_detail::check_aligned(gold, predicted, "gold", "predictions");
  F1Report report;
  for (const auto& [id, gold_tags] : gold) {
    std::vector<Span> gold_spans = decode_tags(repair_tags(gold_tags));
    std::vector<Span> pred_spans = decode_tags(repair_tags(predicted.at(id)));
    report.gold_spans += gold_spans.size();
    report.predicted_spans += pred_spans.size();
    std::set<Span> gold_set(gold_spans.begin(), gold_spans.end());
    for (const Span& sp : pred_spans) {
      if (gold_set.erase(sp)) {
        ++report.true_positives;
        ++report.per_slot[sp.slot].true_positives;
      } else {
        ++report.false_positives;
        ++report.per_slot[sp.slot].false_positives;
      }
    }
    for (const Span& sp : gold_set) {
      ++report.false_negatives;
      ++report.per_slot[sp.slot].false_negatives;
    }
  }
  SlotStats micro{report.true_positives, report.false_positives, report.false_negatives};
  eval_detail::fill_rates(micro);
  report.precision = micro.precision;
  report.recall = micro.recall;
  report.f1 = micro.f1;
  for (auto& [slot, s] : report.per_slot) eval_detail::fill_rates(s);
  return report;
}

// Fraction of tokens on which two tag maps agree exactly. Both maps must
// cover the same ids with the same lengths. An empty corpus agrees trivially.
inline double token_agreement(const std::map<std::string, TagSequence>& a,
                              const std::map<std::string, TagSequence>& b) {
  eval_detail::check_aligned(a, b, "first labeling", "second labeling");
  std::size_t total = 0;
  std::size_t same = 0;
  for (const auto& [id, tags_a] : a) {
    const TagSequence& tags_b = b.at(id);
    total += tags_a.size();
    for (std::size_t m = 0; m < tags_a.size(); ++m) {
      if (tags_a[m] == tags_b[m]) ++same;
    }
  }
  return total ? static_cast<double>(same) / static_cast<double>(total) : 1.0;
}

}  // namespace cotag

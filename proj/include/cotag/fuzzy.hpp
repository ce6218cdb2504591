#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "cotag/error.hpp"
#include "cotag/unicode.hpp"

namespace cotag {

// Fuzzy string scoring over case-folded code points: a Ratcliff/Obershelp
// similarity ratio plus a best-window partial ratio, and gazetteer lookup
// built on the partial ratio. Scores are integer percentages.

namespace fuzzy_detail {

// Matching triple: a[ai, ai+size) == b[bi, bi+size).
struct Block {
  std::size_t ai = 0;
  std::size_t bi = 0;
  std::size_t size = 0;
};

struct Segment {
  std::size_t alo, ahi, blo, bhi;
};

// Longest matching block within a segment; ties prefer the earliest start in
// a, then the earliest start in b. Dynamic program over match-run lengths
// ending at each (i, j).
inline Block longest_match(std::u32string_view a, std::u32string_view b,
                           const Segment& seg) {
  Block best{seg.alo, seg.blo, 0};
  const std::size_t width = seg.bhi - seg.blo;
  std::vector<std::size_t> prev(width, 0), cur(width, 0);
  for (std::size_t i = seg.alo; i < seg.ahi; ++i) {
    for (std::size_t j = seg.blo; j < seg.bhi; ++j) {
      std::size_t w = j - seg.blo;
      if (a[i] == b[j]) {
        std::size_t k = (w > 0 ? prev[w - 1] : 0) + 1;
        cur[w] = k;
        if (k > best.size) best = {i - k + 1, j - k + 1, k};
      } else {
        cur[w] = 0;
      }
    }
    std::swap(prev, cur);
  }
  return best;
}

// All matching blocks: recurse left and right of each longest match, sort by
// position, merge adjacent runs, and append the terminal zero-size sentinel.
inline std::vector<Block> matching_blocks(std::u32string_view a, std::u32string_view b) {
  std::vector<Block> raw;
  std::vector<Segment> queue{{0, a.size(), 0, b.size()}};
  while (!queue.empty()) {
    Segment seg = queue.back();
    queue.pop_back();
    if (seg.alo >= seg.ahi || seg.blo >= seg.bhi) continue;
    Block m = longest_match(a, b, seg);
    if (m.size == 0) continue;
    raw.push_back(m);
    if (seg.alo < m.ai && seg.blo < m.bi) {
      queue.push_back({seg.alo, m.ai, seg.blo, m.bi});
    }
    if (m.ai + m.size < seg.ahi && m.bi + m.size < seg.bhi) {
      queue.push_back({m.ai + m.size, seg.ahi, m.bi + m.size, seg.bhi});
    }
  }
  std::sort(raw.begin(), raw.end(), [](const Block& x, const Block& y) {
    return x.ai != y.ai ? x.ai < y.ai : x.bi < y.bi;
  });
  std::vector<Block> merged;
  for (const Block& blk : raw) {
    if (!merged.empty() && merged.back().ai + merged.back().size == blk.ai &&
        merged.back().bi + merged.back().size == blk.bi) {
      merged.back().size += blk.size;
    } else {
      merged.push_back(blk);
    }
  }
  merged.push_back({a.size(), b.size(), 0});
  return merged;
}

inline std::size_t matched_chars(std::u32string_view a, std::u32string_view b) {
  std::size_t total = 0;
  for (const Block& blk : matching_blocks(a, b)) total += blk.size;
  return total;
}

// Integer ratio on already-folded strings. 100 is reserved for exact
// equality; near-misses that would round up are reported as 99.
inline int ratio_folded(std::u32string_view a, std::u32string_view b) {
  if (a.empty() && b.empty()) return 100;
  std::size_t m = matched_chars(a, b);
  long r = std::lround(200.0 * static_cast<double>(m) /
                       static_cast<double>(a.size() + b.size()));
  if (r == 100 && a != b) r = 99;
  return static_cast<int>(r);
}

}  // namespace fuzzy_detail

// Whole-string similarity in [0, 100], case-insensitive. Returns 100 exactly
// when the case-folded strings are equal.
inline int similarity_ratio(std::string_view a, std::string_view b) {
  return fuzzy_detail::ratio_folded(fold_utf8(a), fold_utf8(b));
}

// Best similarity between the shorter string and same-length windows of the
// longer one. Candidate windows are anchored at the matching blocks of the
// pair, with window starts clamped to the valid range. Returns 100 exactly
// when the folded shorter string is a substring of the folded longer one.
inline int partial_ratio(std::string_view a, std::string_view b) {
  std::u32string fa = fold_utf8(a);
  std::u32string fb = fold_utf8(b);
  const std::u32string& s = fa.size() <= fb.size() ? fa : fb;
  const std::u32string& l = fa.size() <= fb.size() ? fb : fa;
  if (s.size() == l.size()) return fuzzy_detail::ratio_folded(s, l);
  if (s.empty()) return 100;

  std::set<std::size_t> starts;
  const std::size_t max_start = l.size() - s.size();
  for (const auto& blk : fuzzy_detail::matching_blocks(s, l)) {
    std::size_t anchored = blk.bi > blk.ai ? blk.bi - blk.ai : 0;
    starts.insert(std::min(anchored, max_start));
  }
  int best = 0;
  for (std::size_t start : starts) {
    int r = fuzzy_detail::ratio_folded(std::u32string_view(l).substr(start, s.size()), s);
    best = std::max(best, r);
    if (best == 100) break;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Gazetteer

struct GazetteerEntry {
  std::string surface;
  std::string kg_type;

  friend bool operator==(const GazetteerEntry&, const GazetteerEntry&) = default;
};

struct Gazetteer {
  std::vector<GazetteerEntry> entries;

  // Tab-separated "surface<TAB>kg_type"; blank lines and lines starting with
  // '#' are skipped. Duplicate (surface, kg_type) pairs collapse to the
  // first occurrence; file order is otherwise preserved.
  static Gazetteer load_tsv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open gazetteer file: " + path.string());
    Gazetteer g;
    std::set<std::pair<std::string, std::string>> seen;
    std::string line;
    std::size_t lineno = 0;
    auto trim = [](std::string_view v) {
      while (!v.empty() && (v.front() == ' ' || v.front() == '\t' || v.front() == '\r')) {
        v.remove_prefix(1);
      }
      while (!v.empty() && (v.back() == ' ' || v.back() == '\t' || v.back() == '\r')) {
        v.remove_suffix(1);
      }
      return std::string(v);
    };
    while (std::getline(in, line)) {
      ++lineno;
      std::string_view v = line;
      if (!v.empty() && v.back() == '\r') v.remove_suffix(1);
      if (v.empty() || v.find_first_not_of(" \t") == std::string_view::npos) continue;
      if (v[v.find_first_not_of(" \t")] == '#') continue;
      std::size_t tab = v.find('\t');
      if (tab == std::string_view::npos) {
        throw LoadError(path.string() + ":" + std::to_string(lineno) +
                        ": expected surface<TAB>kg_type");
      }
      GazetteerEntry e{trim(v.substr(0, tab)), trim(v.substr(tab + 1))};
      if (e.surface.empty()) {
        throw LoadError(path.string() + ":" + std::to_string(lineno) + ": empty surface form");
      }
      if (e.kg_type.empty()) {
        throw LoadError(path.string() + ":" + std::to_string(lineno) + ": empty entity type");
      }
      if (seen.insert({e.surface, e.kg_type}).second) g.entries.push_back(std::move(e));
    }
    return g;
  }

  void save_tsv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write gazetteer file: " + path.string());
    for (const auto& e : entries) out << e.surface << '\t' << e.kg_type << '\n';
  }
};

struct MatchResult {
  GazetteerEntry entry;
  int ratio = 0;
};

// Entries whose partial ratio against the query strictly exceeds the
// threshold, ordered by ratio (descending), then surface, then type.
inline std::vector<MatchResult> lookup(std::string_view ngram, const Gazetteer& gazetteer,
                                       int threshold = 80) {
  if (threshold < 0 || threshold > 100) {
    throw Error("match threshold must be in [0, 100], got " + std::to_string(threshold));
  }
  std::vector<MatchResult> out;
  for (const auto& e : gazetteer.entries) {
    int r = partial_ratio(ngram, e.surface);
    if (r > threshold) out.push_back({e, r});
  }
  std::sort(out.begin(), out.end(), [](const MatchResult& x, const MatchResult& y) {
    if (x.ratio != y.ratio) return x.ratio > y.ratio;
    if (x.entry.surface != y.entry.surface) return x.entry.surface < y.entry.surface;
    return x.entry.kg_type < y.entry.kg_type;
  });
  return out;
}

}  // namespace cotag

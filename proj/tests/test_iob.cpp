#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <string>
#include <vector>

#include "cotag/iob.hpp"
#include "cotag/random.hpp"

using namespace cotag;

namespace {

// Random disjoint spans over a sentence of n tokens.
std::vector<Span> random_spans(Rng& rng, std::size_t n,
                               const std::vector<std::string>& slots) {
  std::vector<Span> spans;
  std::size_t pos = 0;
  while (pos < n) {
    std::size_t gap = rng.below(3);
    pos += gap;
    if (pos >= n) break;
    std::size_t len = 1 + rng.below(3);
    len = std::min(len, n - pos);
    if (rng.bernoulli(0.6)) {
      spans.push_back({pos, pos + len, slots[rng.below(slots.size())]});
    }
    pos += len;
  }
  return spans;
}

}  // namespace

TEST_CASE("span encoding produces B/I runs", "[iob]") {
  TagSequence tags = encode_spans(6, {{1, 3, "artist"}, {4, 5, "city"}});
  REQUIRE(tags == TagSequence{"O", "B-artist", "I-artist", "O", "B-city", "O"});

  SECTION("span order does not matter") {
    TagSequence swapped = encode_spans(6, {{4, 5, "city"}, {1, 3, "artist"}});
    REQUIRE(swapped == tags);
  }
  SECTION("adjacent spans stay separate") {
    TagSequence adj = encode_spans(4, {{0, 2, "a"}, {2, 4, "a"}});
    REQUIRE(adj == TagSequence{"B-a", "I-a", "B-a", "I-a"});
  }
  SECTION("empty span list gives all outside") {
    REQUIRE(encode_spans(3, {}) == TagSequence{"O", "O", "O"});
  }
}

TEST_CASE("span encoding rejects bad input", "[iob]") {
  REQUIRE_THROWS_AS(encode_spans(4, {{2, 2, "x"}}), SpanConflictError);
  REQUIRE_THROWS_AS(encode_spans(4, {{3, 5, "x"}}), SpanConflictError);
  REQUIRE_THROWS_AS(encode_spans(6, {{0, 3, "x"}, {2, 4, "y"}}), SpanConflictError);
  REQUIRE_THROWS_WITH(encode_spans(6, {{0, 3, "x"}, {2, 4, "y"}}),
                      Catch::Matchers::ContainsSubstring("overlaps"));
}

TEST_CASE("decoding inverts encoding", "[iob]") {
  SECTION("hand-picked") {
    std::vector<Span> spans{{0, 1, "w"}, {2, 5, "z"}};
    REQUIRE(decode_tags(encode_spans(6, spans)) == spans);
  }
  SECTION("randomized round trip") {
    Rng rng(41);
    std::vector<std::string> slots{"artist", "city", "date"};
    for (int trial = 0; trial < 300; ++trial) {
      std::size_t n = 1 + rng.below(12);
      std::vector<Span> spans = random_spans(rng, n, slots);
      std::sort(spans.begin(), spans.end());
      REQUIRE(decode_tags(encode_spans(n, spans)) == spans);
    }
  }
}

TEST_CASE("repair rewrites orphan inside tags", "[iob]") {
  SECTION("I at sentence start") {
    REQUIRE(repair_tags({"I-a", "I-a"}) == TagSequence{"B-a", "I-a"});
  }
  SECTION("I after outside") {
    REQUIRE(repair_tags({"O", "I-a"}) == TagSequence{"O", "B-a"});
  }
  SECTION("I after a different slot") {
    REQUIRE(repair_tags({"B-a", "I-b"}) == TagSequence{"B-a", "B-b"});
    REQUIRE(repair_tags({"B-a", "I-a", "I-b", "I-b"}) ==
            TagSequence{"B-a", "I-a", "B-b", "I-b"});
  }
  SECTION("well-formed input is unchanged") {
    TagSequence good{"O", "B-a", "I-a", "O", "B-b"};
    REQUIRE(repair_tags(good) == good);
  }
  SECTION("repair is idempotent on random tag soup") {
    Rng rng(7);
    std::vector<std::string> pool{"O", "B-a", "I-a", "B-b", "I-b"};
    for (int trial = 0; trial < 300; ++trial) {
      TagSequence tags;
      std::size_t n = rng.below(10);
      for (std::size_t i = 0; i < n; ++i) tags.push_back(pool[rng.below(pool.size())]);
      TagSequence once = repair_tags(tags);
      REQUIRE(repair_tags(once) == once);
      // Every repaired sequence decodes and re-encodes to itself.
      REQUIRE(encode_spans(n, decode_tags(once)) == once);
    }
  }
}

TEST_CASE("schema validation and vocabulary", "[iob]") {
  SlotSchema schema{"music", {"artist", "city"}, {{"musician", "artist"}}};
  schema.validate();
  REQUIRE(schema.tag_vocabulary() ==
          std::vector<std::string>{"O", "B-artist", "I-artist", "B-city", "I-city"});
  REQUIRE(schema.has_slot("city"));
  REQUIRE_FALSE(schema.has_slot("venue"));

  SECTION("unknown mapped slot") {
    SlotSchema bad = schema;
    bad.type_to_slot["club"] = "venue";
    REQUIRE_THROWS_AS(bad.validate(), SchemaError);
  }
  SECTION("unsorted slots") {
    SlotSchema bad{"m", {"city", "artist"}, {}};
    REQUIRE_THROWS_AS(bad.validate(), SchemaError);
  }
  SECTION("duplicate slots") {
    SlotSchema bad{"m", {"artist", "artist"}, {}};
    REQUIRE_THROWS_AS(bad.validate(), SchemaError);
  }
  SECTION("no slots") {
    SlotSchema bad{"m", {}, {}};
    REQUIRE_THROWS_AS(bad.validate(), SchemaError);
  }
}

TEST_CASE("validate_repair enforces the tag vocabulary", "[iob]") {
  SlotSchema schema{"music", {"artist"}, {}};
  REQUIRE(validate_repair({"O", "I-artist"}, schema) == TagSequence{"O", "B-artist"});
  REQUIRE_THROWS_AS(validate_repair({"O", "B-venue"}, schema), SchemaError);
  REQUIRE_THROWS_AS(validate_repair({"B"}, schema), SchemaError);
  REQUIRE_THROWS_AS(validate_repair({"b-artist"}, schema), SchemaError);
}

TEST_CASE("subword alignment", "[iob]") {
  // "play tij uana brass" where pieces 1 and 2 form one word.
  SubwordMap map;
  map.word_pieces = {{0}, {1, 2}, {3}};
  map.validate();
  REQUIRE(map.word_count() == 3);
  REQUIRE(map.piece_count() == 4);

  TagSequence word_tags{"O", "B-artist", "I-artist"};
  std::vector<std::string> piece_tags = align_to_subwords(word_tags, map);
  REQUIRE(piece_tags == std::vector<std::string>{"O", "B-artist", "IGNORE", "I-artist"});
  REQUIRE(dealign_from_subwords(piece_tags, map) == word_tags);

  SECTION("identity map is a no-op") {
    SubwordMap id = SubwordMap::identity(3);
    REQUIRE(align_to_subwords(word_tags, id) == word_tags);
  }
  SECTION("length mismatches throw") {
    REQUIRE_THROWS_AS(align_to_subwords({"O"}, map), Error);
    REQUIRE_THROWS_AS(dealign_from_subwords({"O", "O"}, map), Error);
  }
  SECTION("non-partition maps are rejected") {
    SubwordMap bad;
    bad.word_pieces = {{0}, {2}};
    REQUIRE_THROWS_AS(bad.validate(), Error);
    SubwordMap empty_word;
    empty_word.word_pieces = {{0}, {}};
    REQUIRE_THROWS_AS(empty_word.validate(), Error);
    SubwordMap out_of_order;
    out_of_order.word_pieces = {{1}, {0}};
    REQUIRE_THROWS_AS(out_of_order.validate(), Error);
  }
  SECTION("random maps round trip") {
    Rng rng(99);
    for (int trial = 0; trial < 200; ++trial) {
      std::size_t words = 1 + rng.below(8);
      SubwordMap m;
      std::size_t piece = 0;
      for (std::size_t w = 0; w < words; ++w) {
        std::size_t k = 1 + rng.below(3);
        std::vector<std::size_t> owned;
        for (std::size_t i = 0; i < k; ++i) owned.push_back(piece++);
        m.word_pieces.push_back(owned);
      }
      TagSequence tags;
      std::vector<std::string> pool{"O", "B-x", "I-x"};
      for (std::size_t w = 0; w < words; ++w) tags.push_back(pool[rng.below(pool.size())]);
      REQUIRE(dealign_from_subwords(align_to_subwords(tags, m), m) == tags);
    }
  }
}

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <string>
#include <vector>

#include "cotag/ngram_lm.hpp"
#include "cotag/scorer.hpp"

using namespace cotag;

namespace {

std::string stub_path() {
  const char* p = std::getenv("COTAG_SCORER_STUB");
  return p ? p : "";
}

ExternalScorer::Options stub_options(const std::string& mode, int timeout_ms = 5000) {
  return {{stub_path(), mode}, timeout_ms};
}

const std::vector<std::string> kFour{"turn", "up", "the", "volume"};

}  // namespace

TEST_CASE("native scorer wraps the language model", "[scorer]") {
  NgramLM lm = NgramLM::train({{"a", "b"}, {"b", "c"}}, 2, 0.1);
  NgramScorer scorer(lm);
  REQUIRE(scorer.thread_safe());
  std::vector<std::string> probe{"a", "b", "c"};
  FluencyScore direct = lm.score(probe);
  FluencyScore via = scorer.score(probe);
  REQUIRE(via.total_logprob == direct.total_logprob);
  REQUIRE(via.per_token_logprob == direct.per_token_logprob);
}

TEST_CASE("external scorer round trips requests", "[scorer][external]") {
  if (stub_path().empty()) SKIP("COTAG_SCORER_STUB not set");
  ExternalScorer scorer(stub_options("linear"));
  REQUIRE_FALSE(scorer.thread_safe());

  FluencyScore s = scorer.score(kFour);
  REQUIRE_THAT(s.total_logprob, Catch::Matchers::WithinAbs(-3.0, 1e-12));
  REQUIRE_THAT(s.per_token_logprob, Catch::Matchers::WithinAbs(-0.75, 1e-12));

  SECTION("several sequential requests") {
    for (std::size_t n = 1; n <= 5; ++n) {
      std::vector<std::string> tokens(n, "x");
      FluencyScore r = scorer.score(tokens);
      REQUIRE_THAT(r.total_logprob, Catch::Matchers::WithinAbs(-0.75 * n, 1e-12));
    }
  }
  SECTION("empty token list scores zero per token") {
    FluencyScore r = scorer.score(std::vector<std::string>{});
    REQUIRE(r.total_logprob == 0.0);
    REQUIRE(r.per_token_logprob == 0.0);
  }
}

TEST_CASE("external scorer is deterministic per content", "[scorer][external]") {
  if (stub_path().empty()) SKIP("COTAG_SCORER_STUB not set");
  ExternalScorer scorer(stub_options("hash"));
  double first = scorer.score(kFour).total_logprob;
  double second = scorer.score(kFour).total_logprob;
  REQUIRE(first == second);
  REQUIRE(scorer.score(std::vector<std::string>{"other"}).total_logprob != first);
}

TEST_CASE("handshake failures are surfaced", "[scorer][external]") {
  if (stub_path().empty()) SKIP("COTAG_SCORER_STUB not set");
  SECTION("wrong first line") {
    REQUIRE_THROWS_AS(ExternalScorer(stub_options("no-handshake")), ScorerUnavailableError);
  }
  SECTION("child exits before the handshake") {
    REQUIRE_THROWS_AS(ExternalScorer(stub_options("crash-start")), ScorerUnavailableError);
  }
  SECTION("command does not exist") {
    REQUIRE_THROWS_AS(ExternalScorer(ExternalScorer::Options{{"/no/such/binary"}, 2000}),
                      ScorerUnavailableError);
  }
  SECTION("empty command") {
    REQUIRE_THROWS_AS(ExternalScorer(ExternalScorer::Options{{}, 2000}),
                      ScorerUnavailableError);
  }
}

TEST_CASE("protocol violations mark the scorer broken", "[scorer][external]") {
  if (stub_path().empty()) SKIP("COTAG_SCORER_STUB not set");
  SECTION("non-JSON response") {
    ExternalScorer scorer(stub_options("bad-json"));
    REQUIRE_THROWS_AS(scorer.score(kFour), ScorerUnavailableError);
    // Once broken, stays broken.
    REQUIRE_THROWS_AS(scorer.score(kFour), ScorerUnavailableError);
  }
  SECTION("missing logprob field") {
    ExternalScorer scorer(stub_options("missing-field"));
    REQUIRE_THROWS_WITH(scorer.score(kFour),
                        Catch::Matchers::ContainsSubstring("logprob"));
  }
  SECTION("child exits after the handshake") {
    ExternalScorer scorer(stub_options("die"));
    REQUIRE_THROWS_AS(scorer.score(kFour), ScorerUnavailableError);
  }
}

TEST_CASE("timeouts abort the request", "[scorer][external]") {
  if (stub_path().empty()) SKIP("COTAG_SCORER_STUB not set");
  ExternalScorer scorer(stub_options("sleep", 300));
  REQUIRE_THROWS_WITH(scorer.score(kFour), Catch::Matchers::ContainsSubstring("timed out"));
}

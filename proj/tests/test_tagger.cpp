#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cotag/tagger.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

using namespace cotag;

namespace {

Sentence sent(std::string id, std::vector<std::string> tokens) {
  return Sentence{std::move(id), std::move(tokens)};
}

// Owns sentences and targets so Example pointers stay valid.
struct Owned {
  std::vector<Sentence> sentences;
  std::vector<SentenceTarget> targets;

  void add(Sentence s, SentenceTarget t) {
    sentences.push_back(std::move(s));
    targets.push_back(std::move(t));
  }
  std::vector<Example> examples() const {
    std::vector<Example> out;
    for (std::size_t i = 0; i < sentences.size(); ++i) {
      out.push_back({&sentences[i], &targets[i]});
    }
    return out;
  }
};

}  // namespace

TEST_CASE("token shapes collapse runs of character classes", "[tagger]") {
  using feat_detail::token_shape;
  REQUIRE(token_shape("hello") == "x");
  REQUIRE(token_shape("HELLO") == "X");
  REQUIRE(token_shape("Abc123") == "Xxd");
  REQUIRE(token_shape("don't") == "xox");
  REQUIRE(token_shape("42") == "d");
  REQUIRE(token_shape("A1a") == "Xdx");
  REQUIRE(token_shape("\xce\x91\xce\x92") == "X");  // Greek capitals
  REQUIRE(token_shape("") == "");
}

TEST_CASE("feature extraction is deterministic and bounded", "[tagger]") {
  Sentence s = sent("s", {"Book", "Jason", "Aldean", "in", "Toronto"});
  for (std::size_t m = 0; m < s.size(); ++m) {
    auto ids = featurize(s, m);
    REQUIRE(!ids.empty());
    REQUIRE(ids.size() <= 14);
    REQUIRE(std::is_sorted(ids.begin(), ids.end()));
    REQUIRE(std::adjacent_find(ids.begin(), ids.end()) == ids.end());
    for (auto id : ids) REQUIRE(id < kFeatureDim);
    REQUIRE(featurize(s, m) == ids);
  }
  // Same word in a different context yields a different feature set.
  Sentence alone = sent("a", {"Jason"});
  REQUIRE(featurize(alone, 0) != featurize(s, 1));
  // Case differences are folded away in the identity features.
  Sentence upper = sent("u", {"BOOK", "JASON", "ALDEAN", "IN", "TORONTO"});
  auto lower_ids = featurize(s, 3);
  auto upper_ids = featurize(upper, 3);
  // "in" has no case or shape variation beyond the shape feature.
  REQUIRE(lower_ids.size() == upper_ids.size());
}

TEST_CASE("initial weights are pure seeded noise", "[tagger]") {
  const double scale = 0.01;
  for (std::uint64_t seed : {0ull, 1ull, 0x9e3779b97f4a7c15ull}) {
    for (std::uint32_t f : {0u, 1u, 77777u, 1048575u}) {
      for (std::size_t c = 0; c < 3; ++c) {
        double w = initial_weight(seed, f, c, scale);
        REQUIRE(w >= -scale);
        REQUIRE(w < scale);
        REQUIRE(w == initial_weight(seed, f, c, scale));
      }
    }
  }
  REQUIRE(initial_weight(1, 5, 0, scale) != initial_weight(2, 5, 0, scale));
  REQUIRE(initial_weight(1, 5, 0, scale) != initial_weight(1, 6, 0, scale));
  REQUIRE(initial_weight(1, 5, 0, scale) != initial_weight(1, 5, 1, scale));
  REQUIRE(initial_weight(1, 5, 0, 0.0) == 0.0);
}

TEST_CASE("predicted distributions are proper", "[tagger]") {
  TaggerParams p = make_tagger(42, 3);
  Sentence s = sent("s", {"play", "some", "jazz"});
  TokenDistributions d = predict_proba(p, s);
  REQUIRE(d.size() == 3);
  for (const auto& row : d) {
    REQUIRE(row.size() == 3);
    double sum = 0.0;
    for (double v : row) {
      REQUIRE(v > 0.0);
      sum += v;
    }
    REQUIRE_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-12));
  }
  REQUIRE(predict_proba(p, s) == d);
  REQUIRE_THROWS_AS(predict_proba(TaggerParams{}, s), Error);
}

TEST_CASE("argmax breaks ties toward the lowest class", "[tagger]") {
  TokenDistributions d{{0.25, 0.5, 0.25}, {0.4, 0.2, 0.4}, {1.0 / 3, 1.0 / 3, 1.0 / 3}};
  REQUIRE(argmax_classes(d) == std::vector<std::size_t>{1, 0, 0});
}

TEST_CASE("loss on a zero model is exactly computable", "[tagger]") {
  // Zero init scale and zero bias: every token is uniform over classes.
  TaggerParams p = make_tagger(9, 2, 0.0);
  Owned data;
  data.add(sent("a", {"x", "y"}), SentenceTarget::hard_target({0, 1}));
  auto ex = data.examples();
  BatchLoss bl = batch_loss(p, ex);
  REQUIRE(bl.contributing == 1);
  REQUIRE_THAT(bl.loss, Catch::Matchers::WithinAbs(std::log(2.0), 1e-12));

  SECTION("soft uniform targets give the same entropy") {
    Owned soft;
    soft.add(sent("a", {"x", "y"}),
             SentenceTarget::soft_target({{0.5, 0.5}, {0.5, 0.5}}));
    auto sx = soft.examples();
    REQUIRE_THAT(batch_loss(p, sx).loss,
                 Catch::Matchers::WithinAbs(std::log(2.0), 1e-12));
  }
}

TEST_CASE("loss averages tokens within sentences, then sentences", "[tagger]") {
  // Zero weights, bias (0, log 3): every token predicts (1/4, 3/4).
  TaggerParams p = make_tagger(9, 2, 0.0);
  p.bias = {0.0, std::log(3.0)};
  Owned data;
  data.add(sent("a", {"t", "t"}), SentenceTarget::hard_target({0, 1}));
  data.add(sent("b", {"t", "t"}), SentenceTarget::hard_target({1, -1}));
  data.add(sent("c", {"t"}), SentenceTarget::hard_target({-1}));
  auto ex = data.examples();
  BatchLoss bl = batch_loss(p, ex);
  REQUIRE(bl.contributing == 2);
  const double a_mean = (std::log(4.0) + std::log(4.0 / 3.0)) / 2.0;
  const double b_mean = std::log(4.0 / 3.0);
  REQUIRE_THAT(bl.loss, Catch::Matchers::WithinAbs((a_mean + b_mean) / 2.0, 1e-12));

  SECTION("a batch with no included tokens contributes nothing") {
    Owned empty;
    empty.add(sent("c", {"t"}), SentenceTarget::hard_target({-1}));
    auto ez = empty.examples();
    BatchLoss none = batch_loss(p, ez);
    REQUIRE(none.contributing == 0);
    REQUIRE(none.loss == 0.0);
  }
  SECTION("length and range errors are reported") {
    Owned bad;
    bad.add(sent("a", {"t", "t"}), SentenceTarget::hard_target({0}));
    auto bx = bad.examples();
    REQUIRE_THROWS_WITH(batch_loss(p, bx), Catch::Matchers::ContainsSubstring("'a'"));
    Owned range;
    range.add(sent("r", {"t"}), SentenceTarget::hard_target({5}));
    auto rx = range.examples();
    REQUIRE_THROWS_AS(batch_loss(p, rx), Error);
    Owned width;
    width.add(sent("w", {"t"}), SentenceTarget::soft_target({{0.5, 0.25, 0.25}}));
    auto wx = width.examples();
    REQUIRE_THROWS_AS(batch_loss(p, wx), Error);
  }
}

TEST_CASE("analytic gradients match finite differences", "[tagger]") {
  TaggerParams p = make_tagger(7, 3, 0.01);
  Owned data;
  data.add(sent("a", {"alpha", "beta", "gamma"}), SentenceTarget::hard_target({0, 2, -1}));
  data.add(sent("b", {"beta", "delta"}),
           SentenceTarget::soft_target({{0.2, 0.3, 0.5}, {1.0, 0.0, 0.0}}));
  auto ex = data.examples();

  SparseGrad grad;
  tagger_detail::forward_backward(p, ex, &grad, nullptr, 0.0);

  for (std::size_t c = 0; c < 3; ++c) {
    double fd = oracle::loss_fd(p, ex, -1, c);
    REQUIRE_THAT(grad.bias[c], Catch::Matchers::WithinAbs(fd, 1e-6));
  }
  REQUIRE(!grad.weights.empty());
  for (const auto& [f, row] : grad.weights) {
    for (std::size_t c = 0; c < 3; ++c) {
      double fd = oracle::loss_fd(p, ex, static_cast<long>(f), c);
      REQUIRE_THAT(row[c], Catch::Matchers::WithinAbs(fd, 1e-6));
    }
  }
  // A feature absent from the batch has zero gradient.
  std::uint32_t absent = 0;
  while (grad.weights.count(absent)) ++absent;
  REQUIRE_THAT(oracle::loss_fd(p, ex, static_cast<long>(absent), 0),
               Catch::Matchers::WithinAbs(0.0, 1e-9));
}

TEST_CASE("dropout draws are seed reproducible", "[tagger]") {
  TaggerParams p = make_tagger(11, 2, 0.01);
  Owned data;
  data.add(sent("a", {"one", "two", "three"}), SentenceTarget::hard_target({0, 1, 0}));
  auto ex = data.examples();
  Rng r1(99), r2(99), r3(100);
  double a = tagger_detail::forward_backward(p, ex, nullptr, &r1, 0.5).loss;
  double b = tagger_detail::forward_backward(p, ex, nullptr, &r2, 0.5).loss;
  REQUIRE(a == b);
  double base = batch_loss(p, ex).loss;
  double zero = tagger_detail::forward_backward(p, ex, nullptr, &r3, 0.0).loss;
  REQUIRE(zero == base);
}

TEST_CASE("training learns a separable token task", "[tagger][slow]") {
  // Class is determined by token identity; the identity feature separates it.
  Owned data;
  Rng rng(derive_seed(1234, "data"));
  const std::vector<std::string> vocab{"red", "blue", "green"};
  for (int i = 0; i < 60; ++i) {
    std::vector<std::string> toks;
    std::vector<int> classes;
    std::size_t len = 2 + rng.below(4);
    for (std::size_t m = 0; m < len; ++m) {
      std::size_t v = rng.below(vocab.size());
      toks.push_back(vocab[v]);
      classes.push_back(static_cast<int>(v));
    }
    data.add(sent("s" + std::to_string(i), std::move(toks)),
             SentenceTarget::hard_target(std::move(classes)));
  }
  auto all = data.examples();
  std::vector<Example> train(all.begin(), all.begin() + 50);
  std::vector<Example> val(all.begin() + 50, all.end());

  TrainConfig cfg;
  cfg.max_epochs = 8;
  FitResult fr = fit(train, val, 3, cfg, 555);
  REQUIRE(!fr.diverged);
  REQUIRE(fr.epochs.size() <= 8);
  REQUIRE(fr.best_epoch >= 1);
  // Learned: every training token classified correctly.
  for (std::size_t i = 0; i < 50; ++i) {
    auto pred = argmax_classes(predict_proba(fr.params, data.sentences[i]));
    for (std::size_t m = 0; m < pred.size(); ++m) {
      REQUIRE(static_cast<int>(pred[m]) == data.targets[i].hard[m]);
    }
  }
  // Loss dropped substantially from the near-uniform start.
  REQUIRE(fr.best_val_loss < 0.3);
  REQUIRE(fr.epochs.front().train_loss > fr.best_val_loss);

  SECTION("training is deterministic in the seed") {
    FitResult again = fit(train, val, 3, cfg, 555);
    REQUIRE(again.params.bias == fr.params.bias);
    REQUIRE(again.params.weights == fr.params.weights);
    REQUIRE(again.epochs.size() == fr.epochs.size());
    for (std::size_t e = 0; e < fr.epochs.size(); ++e) {
      REQUIRE(again.epochs[e].train_loss == fr.epochs[e].train_loss);
      REQUIRE(again.epochs[e].val_loss == fr.epochs[e].val_loss);
    }
    FitResult other = fit(train, val, 3, cfg, 556);
    REQUIRE(other.params.weights != fr.params.weights);
  }
  SECTION("warm starts keep the parameter seed") {
    FitResult warm = fit(train, val, 3, cfg, 999, &fr.params);
    REQUIRE(warm.params.seed == fr.params.seed);
    REQUIRE(warm.seed == 999);
  }
  SECTION("checkpoints reproduce predictions exactly") {
    TempDir tmp("ckpt");
    save_tagger(tmp.path / "m.json", fr.params);
    TaggerParams loaded = load_tagger(tmp.path / "m.json");
    REQUIRE(loaded.seed == fr.params.seed);
    REQUIRE(loaded.weights.size() == fr.params.weights.size());
    for (const auto& s : data.sentences) {
      REQUIRE(predict_proba(loaded, s) == predict_proba(fr.params, s));
    }
  }
}

TEST_CASE("the epoch budget is honored without early stopping", "[tagger]") {
  Owned data;
  data.add(sent("a", {"x", "y"}), SentenceTarget::hard_target({0, 1}));
  data.add(sent("b", {"y", "x"}), SentenceTarget::hard_target({1, 0}));
  auto ex = data.examples();
  TrainConfig cfg;
  cfg.max_epochs = 4;
  cfg.patience = 4;  // cannot trigger within the budget
  cfg.ensemble_size = 1;
  FitResult fr = fit(ex, {}, 2, cfg, 5);
  REQUIRE(fr.epochs.size() == 4);
  // No validation sentences: the monitored loss falls back to train loss.
  for (const auto& e : fr.epochs) REQUIRE(e.val_loss == e.train_loss);
}

TEST_CASE("invalid training setups are rejected", "[tagger]") {
  Owned data;
  data.add(sent("a", {"x"}), SentenceTarget::hard_target({0}));
  auto ex = data.examples();
  TrainConfig cfg;
  REQUIRE_THROWS_AS(fit({}, {}, 2, cfg, 1), TrainingError);
  REQUIRE_THROWS_AS(fit(ex, {}, 0, cfg, 1), TrainingError);
  TrainConfig bad = cfg;
  bad.initial_lr = 0.0;
  REQUIRE_THROWS_AS(fit(ex, {}, 2, bad, 1), Error);
  TrainConfig neg = cfg;
  neg.dropout = 1.0;
  REQUIRE_THROWS_AS(fit(ex, {}, 2, neg, 1), Error);
  TaggerParams wrong = make_tagger(1, 3);
  REQUIRE_THROWS_AS(fit(ex, {}, 2, cfg, 1, &wrong), TrainingError);
}

TEST_CASE("runaway learning rates raise a training error", "[tagger]") {
  Owned data;
  for (int i = 0; i < 24; ++i) {
    data.add(sent("s" + std::to_string(i), {"aa", "bb"}),
             SentenceTarget::hard_target({0, 1}));
  }
  auto ex = data.examples();
  TrainConfig cfg;
  cfg.batch_size = 1;
  cfg.initial_lr = 1e18;
  cfg.weight_decay = 1.0;
  cfg.dropout = 0.0;
  cfg.max_epochs = 10;
  cfg.patience = 10;
  REQUIRE_THROWS_AS(fit(ex, {}, 2, cfg, 3), TrainingError);
}

TEST_CASE("ensembles derive member seeds and average predictions", "[tagger]") {
  Owned data;
  data.add(sent("a", {"x", "y"}), SentenceTarget::hard_target({0, 1}));
  data.add(sent("b", {"y", "x"}), SentenceTarget::hard_target({1, 0}));
  auto ex = data.examples();
  TrainConfig cfg;
  cfg.max_epochs = 2;
  cfg.ensemble_size = 3;
  auto members = fit_ensemble(ex, {}, 2, cfg, 77, 2);
  REQUIRE(members.size() == 3);
  for (std::size_t k = 0; k < members.size(); ++k) {
    REQUIRE(!members[k].diverged);
    REQUIRE(members[k].seed == derive_seed(77, "member", k));
  }
  REQUIRE(members[0].params.weights != members[1].params.weights);

  // The ensemble mean is the elementwise average of member distributions.
  std::vector<TaggerParams> params;
  for (auto& m : members) params.push_back(m.params);
  Sentence probe = sent("p", {"x", "z"});
  TokenDistributions mean = ensemble_predict(params, probe);
  for (std::size_t m = 0; m < probe.size(); ++m) {
    for (std::size_t c = 0; c < 2; ++c) {
      double want = 0.0;
      for (const auto& p : params) want += predict_proba(p, probe)[m][c];
      want /= static_cast<double>(params.size());
      REQUIRE_THAT(mean[m][c], Catch::Matchers::WithinAbs(want, 1e-15));
    }
  }
  REQUIRE_THROWS_AS(ensemble_predict({}, probe), Error);
}

TEST_CASE("checkpoint files reject corruption", "[tagger]") {
  TempDir tmp("badckpt");
  REQUIRE_THROWS_AS(load_tagger(tmp.path / "missing.json"), LoadError);
  REQUIRE_THROWS_AS(load_tagger(tmp.file("junk.json", "not json")), LoadError);
  REQUIRE_THROWS_AS(load_tagger(tmp.file("fmt.json", R"({"format": "other"})")), LoadError);
  // Structurally valid JSON with an inconsistent weight row.
  TaggerParams p = make_tagger(3, 2);
  p.weights[10] = {0.5, -0.5};
  save_tagger(tmp.path / "ok.json", p);
  REQUIRE(load_tagger(tmp.path / "ok.json").weights.at(10) ==
          std::vector<double>{0.5, -0.5});
  std::string text;
  {
    std::ifstream in(tmp.path / "ok.json");
    std::getline(in, text);
  }
  auto pos = text.find("[10,[0.5,-0.5]]");
  REQUIRE(pos != std::string::npos);
  std::string bad = text.substr(0, pos) + "[10,[0.5]]" + text.substr(pos + 15);
  REQUIRE_THROWS_WITH(load_tagger(tmp.file("shape.json", bad + "\n")),
                      Catch::Matchers::ContainsSubstring("shape"));
}

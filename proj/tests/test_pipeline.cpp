#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <fstream>
#include <string>

#include "cotag/pipeline.hpp"
#include "temp_dir.hpp"

using namespace cotag;

namespace {

// Every slot is sentence final, so a candidate that swallows trailing
// context is the exact span itself, and extending a span backwards crosses
// an unattested bigram and loses the fluency comparison. That keeps the
// label generator honest without hand-tuning the scorer.
nlohmann::json bench_spec_json() {
  return nlohmann::json{
      {"domain", "kitchen"},
      {"templates",
       {"serve the {dish}", "i would like the {dish}", "please bring the {side}",
        "we ordered the {side}"}},
      {"fillers",
       {{"dish", {"tomato soup", "rice", "garlic noodles"}},
        {"side", {"bread", "green salad", "fries"}}}},
      {"slot_types", {{"dish", "dish name"}, {"side", "side order"}}},
      {"num_sentences", 120},
      {"fluency_sentences", 240},
      {"fluency_type_sub_prob", 0.5},
      {"seed", 21},
      {"source_a", {{"span_drop", 0.2}}},
      {"source_b", {{"span_drop", 0.1}, {"boundary_noise", 0.2}}},
  };
}

RunConfig small_run(const std::filesystem::path& bench, const std::filesystem::path& out) {
  RunConfig cfg;
  cfg.corpus_path = (bench / "corpus.jsonl").string();
  cfg.gazetteer_path = (bench / "gazetteer.tsv").string();
  cfg.schema_path = (bench / "schema.json").string();
  cfg.imported_labels_path = (bench / "source_b.jsonl").string();
  cfg.out_dir = out.string();
  cfg.seed = 5;
  cfg.workers = 2;
  cfg.scorer.corpus_path = (bench / "fluency.jsonl").string();
  cfg.scorer.order = 2;
  cfg.train.max_epochs = 10;
  cfg.train.ensemble_size = 2;
  cfg.cotrain.max_iterations = 2;
  cfg.cotrain.epsilon = 0.5;
  return cfg;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("run configurations read partial JSON over defaults", "[pipeline]") {
  RunConfig defaults = RunConfig::from_json(nlohmann::json::object());
  REQUIRE(defaults.seed == 1);
  REQUIRE(defaults.workers == 1);
  REQUIRE(defaults.train.ensemble_size == 5);
  REQUIRE(defaults.cotrain.epsilon == 0.9);
  REQUIRE(defaults.cotrain.max_iterations == 100);
  REQUIRE(defaults.cotrain.convergence_threshold == 0.995);
  REQUIRE(defaults.autolabel.match_threshold == 80);
  REQUIRE(defaults.autolabel.keep_ratio == 0.5);
  REQUIRE(defaults.scorer.fallback_native);
  REQUIRE(!defaults.ablations.disable_cotraining);

  RunConfig cfg = RunConfig::from_json(nlohmann::json{
      {"corpus", "/x/c.jsonl"},
      {"seed", 99},
      {"autolabel", {{"match_threshold", 70}}},
      {"train", {{"ensemble_size", 2}, {"initial_lr", 0.005}}},
      {"cotrain", {{"mode", "hard"}, {"epsilon", 0.8}}},
      {"ablations", {{"disable_soft_labels", true}}},
  });
  REQUIRE(cfg.corpus_path == "/x/c.jsonl");
  REQUIRE(cfg.seed == 99);
  REQUIRE(cfg.autolabel.match_threshold == 70);
  REQUIRE(cfg.autolabel.max_ngram_len == 6);  // untouched default
  REQUIRE(cfg.train.ensemble_size == 2);
  REQUIRE(cfg.train.initial_lr == 0.005);
  REQUIRE(cfg.train.batch_size == 16);
  REQUIRE(cfg.cotrain.mode == CotrainMode::Hard);
  REQUIRE(cfg.cotrain.epsilon == 0.8);
  REQUIRE(cfg.ablations.disable_soft_labels);

  REQUIRE_THROWS_AS(RunConfig::from_json(nlohmann::json::array()), LoadError);
  REQUIRE_THROWS_AS(RunConfig::from_json(nlohmann::json{{"seed", "not a number"}}), LoadError);
  REQUIRE_THROWS_AS(
      RunConfig::from_json(nlohmann::json{{"cotrain", {{"mode", "wrong"}}}}), Error);

  SECTION("configuration files are parsed and validated") {
    TempDir tmp("cfg");
    auto path = tmp.file("run.json", R"({"seed": 3, "workers": 2})");
    RunConfig from_file = RunConfig::from_file(path);
    REQUIRE(from_file.seed == 3);
    REQUIRE(from_file.workers == 2);
    REQUIRE_THROWS_AS(RunConfig::from_file(tmp.path / "absent.json"), LoadError);
    REQUIRE_THROWS_AS(RunConfig::from_file(tmp.file("bad.json", "{nope")), LoadError);
  }
}

TEST_CASE("the output directory comes from config or environment", "[pipeline]") {
  RunConfig cfg;
  cfg.out_dir = "/some/where";
  REQUIRE(resolve_out_dir(cfg) == std::filesystem::path("/some/where"));
  cfg.out_dir.clear();
  ::setenv("COTAG_OUT", "/env/dir", 1);
  REQUIRE(resolve_out_dir(cfg) == std::filesystem::path("/env/dir"));
  ::unsetenv("COTAG_OUT");
  REQUIRE_THROWS_WITH(resolve_out_dir(cfg), Catch::Matchers::ContainsSubstring("COTAG_OUT"));
}

TEST_CASE("scorer selection prefers external, falls back to native", "[pipeline]") {
  TempDir tmp("scorer");
  Corpus corpus;
  corpus.sentences = {{"s1", {"hello", "there"}}, {"s2", {"hello", "again"}}};
  corpus.index = {{"s1", 0}, {"s2", 1}};

  RunConfig cfg;
  SECTION("native by default, trained on the main corpus") {
    auto scorer = build_scorer(cfg, corpus);
    REQUIRE(scorer->thread_safe());
    FluencyScore fs = scorer->score(std::vector<std::string>{"hello"});
    REQUIRE(fs.total_logprob < 0.0);
  }
  SECTION("a separate scorer corpus changes the model") {
    Corpus other;
    other.sentences = {{"f1", {"completely", "different", "words"}}};
    other.index = {{"f1", 0}};
    save_corpus(tmp.path / "flu.jsonl", other);
    RunConfig with = cfg;
    with.scorer.corpus_path = (tmp.path / "flu.jsonl").string();
    auto a = build_scorer(cfg, corpus);
    auto b = build_scorer(with, corpus);
    std::vector<std::string> probe{"hello"};
    REQUIRE(a->score(probe).total_logprob != b->score(probe).total_logprob);
  }
  SECTION("a dead external command falls back with the flag set") {
    cfg.scorer.external_command = {"/nonexistent/scorer-binary"};
    auto scorer = build_scorer(cfg, corpus);  // warns on stderr, then native
    REQUIRE(scorer->thread_safe());
  }
  SECTION("fallback can be disabled") {
    cfg.scorer.external_command = {"/nonexistent/scorer-binary"};
    cfg.scorer.fallback_native = false;
    REQUIRE_THROWS_AS(build_scorer(cfg, corpus), ScorerUnavailableError);
  }
}

TEST_CASE("commands require their inputs and name the missing path", "[pipeline]") {
  TempDir tmp("missing");
  RunConfig cfg;
  cfg.out_dir = (tmp.path / "out").string();
  REQUIRE_THROWS_WITH(cmd_autolabel(cfg), Catch::Matchers::ContainsSubstring("corpus"));
  cfg.corpus_path = (tmp.path / "nope.jsonl").string();
  REQUIRE_THROWS_WITH(cmd_autolabel(cfg), Catch::Matchers::ContainsSubstring("nope.jsonl"));
}

TEST_CASE("the full pipeline runs end to end on a synthetic benchmark", "[pipeline][slow]") {
  TempDir tmp("e2e");
  std::filesystem::path bench = tmp.path / "bench";
  std::filesystem::path spec = tmp.file("spec.json", bench_spec_json().dump());
  cmd_synth(spec, bench, std::nullopt, false);
  REQUIRE(std::filesystem::exists(bench / "corpus.jsonl"));
  REQUIRE(std::filesystem::exists(bench / "fluency.jsonl"));

  SECTION("synth refuses to overwrite without force") {
    REQUIRE_THROWS_WITH(cmd_synth(spec, bench, std::nullopt, false),
                        Catch::Matchers::ContainsSubstring("--force"));
    REQUIRE_NOTHROW(cmd_synth(spec, bench, std::nullopt, true));
  }

  RunConfig cfg = small_run(bench, tmp.path / "run");

  // Phase 1: gazetteer autolabel and imported labels.
  cmd_autolabel(cfg);
  REQUIRE(std::filesystem::exists(tmp.path / "run" / "labels_gazetteer.jsonl"));
  REQUIRE_THROWS_WITH(cmd_autolabel(cfg), Catch::Matchers::ContainsSubstring("--force"));
  {
    RunConfig forced = cfg;
    forced.force = true;
    REQUIRE_NOTHROW(cmd_autolabel(forced));
  }
  cmd_import_labels(cfg);
  REQUIRE(std::filesystem::exists(tmp.path / "run" / "labels_imported.jsonl"));

  SECTION("a second identical run produces byte-identical labels") {
    RunConfig second = small_run(bench, tmp.path / "run2");
    cmd_autolabel(second);
    REQUIRE(slurp(tmp.path / "run" / "labels_gazetteer.jsonl") ==
            slurp(tmp.path / "run2" / "labels_gazetteer.jsonl"));
  }

  // Phase 2: weak peers, one per source.
  SECTION("train-weak needs its label files") {
    RunConfig elsewhere = small_run(bench, tmp.path / "empty");
    REQUIRE_THROWS_WITH(cmd_train_weak(elsewhere),
                        Catch::Matchers::ContainsSubstring("autolabel"));
  }
  cmd_train_weak(cfg);
  REQUIRE(std::filesystem::exists(tmp.path / "run" / "peers" / "p1" / "manifest.json"));
  REQUIRE(std::filesystem::exists(tmp.path / "run" / "peers" / "p2" / "manifest.json"));
  {
    PeerState p1 = load_peer(tmp.path / "run" / "peers" / "p1");
    REQUIRE(p1.origin_source == "gazetteer");
    REQUIRE(p1.ensemble.size() == 2);
    PeerState p2 = load_peer(tmp.path / "run" / "peers" / "p2");
    REQUIRE(p2.origin_source == "imported");
  }

  // Phase 3: co-training plus final labels.
  SECTION("cotrain requires both peers") {
    RunConfig oneshot = cfg;
    oneshot.ablations.disable_imported_source = true;
    REQUIRE_THROWS_WITH(cmd_cotrain(oneshot),
                        Catch::Matchers::ContainsSubstring("both peers"));
  }
  cmd_cotrain(cfg);
  for (const char* f : {"final_labels.jsonl", "final_labels_p1.jsonl",
                        "final_labels_p2.jsonl"}) {
    REQUIRE(std::filesystem::exists(tmp.path / "run" / f));
  }
  REQUIRE(std::filesystem::exists(tmp.path / "run" / "cotrain" / "report.json"));
  REQUIRE(std::filesystem::exists(tmp.path / "run" / "peers_final" / "p1" / "manifest.json"));
  {
    nlohmann::json report = nlohmann::json::parse(
        std::ifstream(tmp.path / "run" / "cotrain" / "report.json"));
    REQUIRE(report.contains("iterations_run"));
    REQUIRE(report.at("iterations_run").get<int>() <= 2);
  }

  // Evaluation of the default and an explicit prediction file.
  F1Report combined = cmd_eval(cfg, "");
  REQUIRE(std::filesystem::exists(tmp.path / "run" / "eval_final_labels.json"));
  REQUIRE(combined.f1 > 0.5);
  F1Report source_a = cmd_eval(cfg, (bench / "source_a.jsonl").string());
  REQUIRE(std::filesystem::exists(tmp.path / "run" / "eval_source_a.json"));
  REQUIRE(source_a.gold_spans == combined.gold_spans);
  // The trained system should at least roughly compete with a noisy source.
  REQUIRE(combined.f1 + 0.2 > source_a.f1);
}

TEST_CASE("ablation flags reshape the pipeline", "[pipeline][slow]") {
  TempDir tmp("ablate");
  std::filesystem::path bench = tmp.path / "bench";
  cmd_synth(tmp.file("spec.json", bench_spec_json().dump()), bench, std::nullopt, false);
  RunConfig cfg = small_run(bench, tmp.path / "run");
  cmd_autolabel(cfg);
  cmd_import_labels(cfg);

  SECTION("disabling both sources is an error") {
    RunConfig none = cfg;
    none.ablations.disable_gazetteer_source = true;
    none.ablations.disable_imported_source = true;
    REQUIRE_THROWS_WITH(cmd_train_weak(none),
                        Catch::Matchers::ContainsSubstring("nothing to train"));
  }
  SECTION("disabling one source trains a single peer") {
    RunConfig solo = cfg;
    solo.ablations.disable_imported_source = true;
    cmd_train_weak(solo);
    REQUIRE(std::filesystem::exists(tmp.path / "run" / "peers" / "p1" / "manifest.json"));
    REQUIRE(!std::filesystem::exists(tmp.path / "run" / "peers" / "p2"));
  }
  SECTION("disabling co-training still writes final labels") {
    cmd_train_weak(cfg);
    RunConfig skip = cfg;
    skip.ablations.disable_cotraining = true;
    cmd_cotrain(skip);
    nlohmann::json report = nlohmann::json::parse(
        std::ifstream(tmp.path / "run" / "cotrain" / "report.json"));
    REQUIRE(report.at("skipped") == true);
    REQUIRE(std::filesystem::exists(tmp.path / "run" / "final_labels.jsonl"));
    // Final peers equal the weak peers: no rounds ran.
    PeerState weak = load_peer(tmp.path / "run" / "peers" / "p1");
    PeerState fin = load_peer(tmp.path / "run" / "peers_final" / "p1");
    REQUIRE(fin.iteration == weak.iteration);
    REQUIRE(fin.ensemble.size() == weak.ensemble.size());
    REQUIRE(fin.ensemble[0].bias == weak.ensemble[0].bias);
  }
}

TEST_CASE("evaluation needs gold tags in the corpus", "[pipeline]") {
  TempDir tmp("nogold");
  Corpus corpus;
  corpus.sentences = {{"s1", {"a", "b"}}};
  corpus.index = {{"s1", 0}};
  save_corpus(tmp.path / "corpus.jsonl", corpus);
  SlotSchema schema;
  schema.domain = "d";
  schema.slots = {"x"};
  schema.type_to_slot = {{"x", "x"}};
  save_schema(tmp.path / "schema.json", schema);
  LabelSource src;
  src.name = "p";
  src.labels = {{"s1", {"O", "O"}}};
  save_labels(tmp.path / "pred.jsonl", src, corpus);

  RunConfig cfg;
  cfg.corpus_path = (tmp.path / "corpus.jsonl").string();
  cfg.schema_path = (tmp.path / "schema.json").string();
  cfg.out_dir = (tmp.path / "out").string();
  REQUIRE_THROWS_WITH(cmd_eval(cfg, (tmp.path / "pred.jsonl").string()),
                      Catch::Matchers::ContainsSubstring("gold"));
}

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "dposhift/histogram.hpp"
#include "dposhift/io.hpp"
#include "dposhift/rng.hpp"
#include "testutil.hpp"

using namespace dposhift;

namespace {

std::string temp_file(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("dataset files round-trip") {
  const std::vector<PreferenceTriple> records = {
      {0, TokenSeq{}, TokenSeq{3}, TokenSeq{4, 5}},  // empty prompt is legal
      {1, TokenSeq{1, 2}, TokenSeq{3, 3, 3}, TokenSeq{0}},
  };
  const std::string path = temp_file("dposhift_ds.jsonl");
  io::write_dataset(path, records);
  const auto loaded = io::read_dataset(path);

  REQUIRE(loaded.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(loaded[i].id == records[i].id);
    CHECK(loaded[i].prompt.ids == records[i].prompt.ids);
    CHECK(loaded[i].chosen.ids == records[i].chosen.ids);
    CHECK(loaded[i].rejected.ids == records[i].rejected.ids);
  }

  // writes are byte-deterministic
  const std::string path2 = temp_file("dposhift_ds2.jsonl");
  io::write_dataset(path2, records);
  CHECK(io::read_text_file(path) == io::read_text_file(path2));

  CHECK_THROWS_AS(io::read_dataset(temp_file("no_such_dataset.jsonl")), IoError);

  io::write_text_file(path2, "{broken\n");
  CHECK_THROWS_AS(io::read_dataset(path2), IoError);
}

TEST_CASE("config parses with defaults and round-trips") {
  const auto j = nlohmann::json::parse(R"({
    "seed": 7,
    "objective": {"objective_kind": "alpha_dpo", "beta": 0.3, "alpha": 0.1},
    "schedule": {"strategy": "linear_decrease", "lambda_min": 0.75},
    "optimizer": {"kind": "sgd"},
    "po": {"epochs": 4, "lr": 0.5}
  })");
  const RunConfig cfg = io::config_from_json(j);
  CHECK(cfg.seed == 7);
  CHECK(cfg.objective.kind == ObjectiveKind::alpha_dpo);
  CHECK(cfg.objective.beta == 0.3);
  CHECK(cfg.objective.alpha == 0.1);
  CHECK(cfg.schedule.strategy == ScheduleStrategy::linear_decrease);
  CHECK(cfg.schedule.lambda_min == 0.75);
  CHECK(cfg.schedule.lambda_max == 1.0);  // default
  CHECK(cfg.optimizer_kind == OptimizerKind::sgd);
  CHECK(cfg.po.epochs == 4);
  CHECK(cfg.po.lr == 0.5);
  CHECK(cfg.batch_size == 32);          // untouched default
  CHECK(cfg.corpus.seed == cfg.seed);   // corpus seed follows the top seed

  const RunConfig back = io::config_from_json(io::config_to_json(cfg));
  CHECK(back.objective.beta == cfg.objective.beta);
  CHECK(back.schedule.lambda_min == cfg.schedule.lambda_min);
  CHECK(back.po.lr == cfg.po.lr);
  CHECK(back.corpus.seed == cfg.corpus.seed);

  // schedule may also nest under objective
  const auto nested = nlohmann::json::parse(
      R"({"objective": {"schedule": {"strategy": "fixed", "lambda_min": 0.9}}})");
  CHECK(io::config_from_json(nested).schedule.lambda_min == 0.9);

  // per-stage optimizer override
  const auto staged = nlohmann::json::parse(
      R"({"optimizer": {"kind": "adam"}, "po": {"optimizer": "sgd"}})");
  const RunConfig staged_cfg = io::config_from_json(staged);
  CHECK(staged_cfg.kind_for(staged_cfg.sft) == OptimizerKind::adam);
  CHECK(staged_cfg.kind_for(staged_cfg.po) == OptimizerKind::sgd);
  CHECK(io::config_from_json(io::config_to_json(staged_cfg)).kind_for(staged_cfg.po) ==
        OptimizerKind::sgd);

  CHECK_THROWS_AS(
      io::config_from_json(nlohmann::json::parse(R"({"optimizer": {"kind": "lbfgs"}})")),
      std::domain_error);
  CHECK_THROWS_AS(
      io::config_from_json(nlohmann::json::parse(R"({"po": {"optimizer": "momentum"}})")),
      std::domain_error);
  CHECK_THROWS_AS(io::config_from_json(nlohmann::json::parse(
                      R"({"objective": {"objective_kind": "ppo"}})")),
                  std::domain_error);
}

TEST_CASE("csv and jsonl writers are deterministic") {
  const std::vector<MetricsRow> metrics = {{0, 0.6931, 1.0, 0.0}, {1, 0.51, 0.95, 0.02}};
  const std::string a = temp_file("m1.csv");
  const std::string b = temp_file("m2.csv");
  io::write_metrics_csv(a, metrics);
  io::write_metrics_csv(b, metrics);
  CHECK(io::read_text_file(a) == io::read_text_file(b));
  CHECK(io::read_text_file(a).rfind("step,loss,f_value,mean_margin\n", 0) == 0);

  DiagnosticsRecord rec;
  rec.id = 3;
  rec.c_theta = 0.5;
  rec.u1 = 1.25;
  const std::string line = io::diagnostics_line(rec);
  const auto parsed = nlohmann::json::parse(line);
  CHECK(parsed.at("id") == 3);
  CHECK(parsed.at("c_theta") == 0.5);
  CHECK(parsed.at("u1") == 1.25);
  CHECK(parsed.contains("eta1"));
  CHECK(parsed.contains("dot_wl"));
  CHECK(parsed.contains("norm_l_sq"));
  CHECK(parsed.contains("u2"));

  GapReport gap;
  gap.f = 0.95;
  gap.eta = 1e-3;
  gap.residual1 = 2.5e-7;
  const auto gap_json = nlohmann::json::parse(io::gap_report_line(gap));
  CHECK(gap_json.at("f") == 0.95);
  CHECK(gap_json.at("residual1") == 2.5e-7);
}

TEST_CASE("doubles survive the %.17g round trip") {
  Rng rng(71);
  for (int i = 0; i < 200; ++i) {
    const double v = (rng.uniform01() - 0.5) * std::pow(10.0, static_cast<double>(i % 20) - 10.0);
    CHECK(std::stod(io::fmt_double(v)) == v);
  }
}

TEST_CASE("histogram examples") {
  SECTION("ten identical values land in one bin") {
    const std::vector<double> values(10, 0.5);
    const Histogram h = emit_histogram(values, 4, 0.0, 1.0);
    CHECK(h.in_range_count() == 10);
    CHECK(h.bins[2].count == 10);
    CHECK(h.underflow == 0);
    CHECK(h.overflow == 0);
  }

  SECTION("empty input gives all-zero counts") {
    const Histogram h = emit_histogram({}, 5, 0.0, 1.0);
    CHECK(h.in_range_count() == 0);
    for (const auto& b : h.bins) CHECK(b.count == 0);
  }

  SECTION("uniform draws are binomial per bin") {
    Rng rng(72);
    std::vector<double> values(1000);
    for (double& v : values) v = rng.uniform01();
    const Histogram h = emit_histogram(values, 10, 0.0, 1.0);
    CHECK(h.in_range_count() == 1000);
    const double bound = 5.0 * std::sqrt(1000.0 * 0.1 * 0.9);
    for (const auto& b : h.bins)
      CHECK(std::fabs(static_cast<double>(b.count) - 100.0) <= bound);
  }

  SECTION("out-of-range values are tallied separately") {
    const std::vector<double> values = {-1.0, 0.5, 2.0, 1.0};  // 1.0 == hi stays in range
    const Histogram h = emit_histogram(values, 2, 0.0, 1.0);
    CHECK(h.underflow == 1);
    CHECK(h.overflow == 1);
    CHECK(h.in_range_count() == 2);
    CHECK(h.bins[1].count == 2);  // 0.5 is in [0.5, 1.0] along with the edge value
  }

  SECTION("inverted or degenerate ranges are rejected") {
    CHECK_THROWS_AS(emit_histogram({}, 4, 1.0, 0.0), std::domain_error);
    CHECK_THROWS_AS(emit_histogram({}, 4, 1.0, 1.0), std::domain_error);
    CHECK_THROWS_AS(emit_histogram({}, 0, 0.0, 1.0), std::domain_error);
  }
}

TEST_CASE("run directory writer emits the documented layout") {
  const auto dir = (std::filesystem::temp_directory_path() / "dposhift_run_dir").string();
  std::filesystem::remove_all(dir);

  RunConfig cfg;
  RunArtifacts art;
  art.metrics = {{0, 0.69, 1.0, 0.0}};
  art.final_eval.rows = {{0, -3.0, -3.5, 0.05}};
  art.final_eval.summary.omega1 = -3.0;
  TabularPolicy p(4, 1);
  art.final_policy = p.clone();

  io::write_run_dir(dir, cfg, art);
  for (const char* name : {"config.json", "metrics.csv", "eval_records.csv",
                           "summary.json", "diagnostics.jsonl", "eval_history.csv"})
    CHECK(std::filesystem::exists(std::filesystem::path(dir) / name));
  CHECK(std::filesystem::exists(std::filesystem::path(dir) / "checkpoints/final.ckpt"));
}

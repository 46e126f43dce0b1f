#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "dposhift/io.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kCli = DPOSHIFT_CLI_PATH;

struct CliSandbox {
  fs::path dir;

  CliSandbox() {
    dir = fs::temp_directory_path() / "dposhift_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    write_config();
  }

  void write_config() {
    std::ofstream os(dir / "config.json");
    os << R"({
      "seed": 5,
      "data": {"train": ")" << (dir / "data/train.jsonl").string() << R"(",
               "test": ")" << (dir / "data/test.jsonl").string() << R"("},
      "policy": {"backend": "loglinear", "vocab_size": 16, "context_order": 1, "feature_dim": 32},
      "objective": {"objective_kind": "dpo_shift", "beta": 0.5},
      "schedule": {"strategy": "fixed", "lambda_min": 0.95, "lambda_max": 1.0},
      "optimizer": {"kind": "sgd"},
      "sft": {"epochs": 4, "lr": 0.01},
      "po": {"epochs": 1, "lr": 0.2},
      "batch_size": 16,
      "eval_interval": 0,
      "ref_checkpoint": ")" << (dir / "sft/checkpoints/sft.ckpt").string() << R"(",
      "corpus": {"vocab_size": 16, "num_prompts": 60, "prompt_len": 4,
                 "pairs_per_prompt": 2, "response_len": 8,
                 "similarity": 0.9, "train_records": 100, "test_records": 20},
      "diagnostics": {"f_grid": [0.75], "eta_grid": [1e-2, 1e-3, 1e-4]}
    })";
  }

  int run(const std::string& args) const {
    const std::string cmd = kCli + " " + args + " >" + (dir / "stdout.txt").string() +
                            " 2>" + (dir / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
  }

  std::string out() const { return dposhift::io::read_text_file((dir / "stdout.txt").string()); }
  std::string config() const { return (dir / "config.json").string(); }
  std::string path(const std::string& rel) const { return (dir / rel).string(); }
};

}  // namespace

TEST_CASE("cli pipeline end to end") {
  CliSandbox box;

  SECTION("usage errors exit with 2") {
    CHECK(box.run("no-such-verb") == 2);
    CHECK(box.run("train-sft") == 2);  // --config is required
  }

  SECTION("missing files exit with 3") {
    CHECK(box.run("train-sft --config " + box.path("missing.json")) == 3);
    CHECK(box.run("report --dir " + box.path("nowhere")) == 3);
  }

  SECTION("gen-data, similarity report, and byte determinism") {
    REQUIRE(box.run("gen-data --config " + box.config() + " --out " + box.path("data")) == 0);
    REQUIRE(box.run("report --dir " + box.path("data")) == 0);
    CHECK(box.out().find("corpus_similarity") != std::string::npos);

    // s = 1 corpus reports similarity exactly 1
    REQUIRE(box.run("gen-data --config " + box.config() + " --out " + box.path("data_s1") +
                    " --set corpus.similarity=1.0") == 0);
    REQUIRE(box.run("report --dir " + box.path("data_s1")) == 0);
    CHECK(box.out().find("corpus_similarity: 1\n") != std::string::npos);

    REQUIRE(box.run("gen-data --config " + box.config() + " --out " + box.path("data_b")) == 0);
    CHECK(dposhift::io::read_text_file(box.path("data/train.jsonl")) ==
          dposhift::io::read_text_file(box.path("data_b/train.jsonl")));
    CHECK(dposhift::io::read_text_file(box.path("data/test.jsonl")) ==
          dposhift::io::read_text_file(box.path("data_b/test.jsonl")));
  }

  SECTION("train, reduction equality, diagnose, sweep, report") {
    REQUIRE(box.run("gen-data --config " + box.config() + " --out " + box.path("data")) == 0);
    REQUIRE(box.run("train-sft --config " + box.config() + " --out " + box.path("sft")) == 0);

    // dpo_shift with fixed f=1 and plain dpo produce identical metrics files
    REQUIRE(box.run("train-po --config " + box.config() + " --out " + box.path("po_f1") +
                    " --f 1.0") == 0);
    REQUIRE(box.run("train-po --config " + box.config() + " --out " + box.path("po_dpo") +
                    " --set objective.objective_kind=dpo") == 0);
    CHECK(dposhift::io::read_text_file(box.path("po_f1/metrics.csv")) ==
          dposhift::io::read_text_file(box.path("po_dpo/metrics.csv")));

    // re-running an identical config reproduces artifacts byte for byte
    REQUIRE(box.run("train-po --config " + box.config() + " --out " + box.path("po_f1b") +
                    " --f 1.0") == 0);
    CHECK(dposhift::io::read_text_file(box.path("po_f1/metrics.csv")) ==
          dposhift::io::read_text_file(box.path("po_f1b/metrics.csv")));
    CHECK(dposhift::io::read_text_file(box.path("po_f1/eval_records.csv")) ==
          dposhift::io::read_text_file(box.path("po_f1b/eval_records.csv")));

    // a run directory is reconstructible from its persisted config
    REQUIRE(box.run("train-po --config " + box.path("po_f1/config.json") + " --out " +
                    box.path("po_resume")) == 0);
    CHECK(dposhift::io::read_text_file(box.path("po_f1/metrics.csv")) ==
          dposhift::io::read_text_file(box.path("po_resume/metrics.csv")));

    // run report contains summary and histogram tables, and is read-only
    const auto before = dposhift::io::read_text_file(box.path("po_f1/metrics.csv"));
    REQUIRE(box.run("report --dir " + box.path("po_f1")) == 0);
    CHECK(box.out().find("omega1") != std::string::npos);
    CHECK(box.out().find("logp_w") != std::string::npos);
    CHECK(dposhift::io::read_text_file(box.path("po_f1/metrics.csv")) == before);

    // diagnose on an eta grid: residuals shrink faster than eta
    REQUIRE(box.run("diagnose --config " + box.config() + " --out " + box.path("diag") +
                    " --eta-grid 1e-2,1e-3,1e-4") == 0);
    const auto gaps = dposhift::io::read_text_file(box.path("diag/gap_reports.jsonl"));
    std::vector<double> ratio;
    std::size_t pos = 0;
    while ((pos = gaps.find("\"eta\": ", pos)) != std::string::npos) {
      const std::size_t r1 = gaps.find("\"residual1\": ", pos);
      const double eta = std::stod(gaps.substr(pos + 7));
      const double res = std::stod(gaps.substr(r1 + 13));
      ratio.push_back(res / eta);
      pos = r1;
    }
    REQUIRE(ratio.size() == 3);
    CHECK(ratio[1] < ratio[0]);
    CHECK(ratio[2] < ratio[1]);

    // a tiny sweep writes per-setting run directories plus the summary table
    REQUIRE(box.run("sweep --config " + box.config() + " --out " + box.path("sweep") +
                    " --set sweep.f_values=[0.75,1.0]") == 0);
    CHECK(fs::exists(fs::path(box.path("sweep/sweep_summary.csv"))));
    CHECK(fs::exists(fs::path(box.path("sweep/fixed_0.75/metrics.csv"))));
    CHECK(fs::exists(fs::path(box.path("sweep/fixed_1/metrics.csv"))));
    REQUIRE(box.run("report --dir " + box.path("sweep")) == 0);
    CHECK(box.out().find("f,omega1,reward_accuracy") != std::string::npos);
  }
}

#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dposhift/policy.hpp"
#include "dposhift/rng.hpp"
#include "testutil.hpp"

using namespace dposhift;

namespace {

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("uniform tabular logprob") {
  TabularPolicy p(4, 1);
  const TokenSeq x{0, 1};
  const TokenSeq y{2, 3, 0};
  // all logits zero: every step contributes ln(1/4)
  CHECK(p.logprob(x, y) == Catch::Approx(-3.0 * std::log(4.0)).margin(1e-12));
  CHECK(p.logprob(x, y) == Catch::Approx(-4.1588830833596715).margin(1e-12));
  CHECK(p.logprob(x, TokenSeq{}) == 0.0);
}

TEST_CASE("tabular logprob matches extended-precision softmax") {
  // V=2, k=1: the first step of an empty-prompt response conditions on BOS
  TabularPolicy p(2, 1);
  std::vector<double> theta(p.param_count(), 0.0);
  const std::size_t bos_row = p.context_row(0, std::array<Token, 1>{Token{2}});
  theta[bos_row * 2 + 0] = 1.0;
  theta[bos_row * 2 + 1] = -1.0;
  p.set_params(theta);

  const double got = p.logprob(TokenSeq{}, TokenSeq{0});
  const double want =
      static_cast<double>(1.0L - std::log(std::exp(1.0L) + std::exp(-1.0L)));
  CHECK(testutil::rel_err(got, want) <= 1e-14);
}

TEST_CASE("logprob rejects out-of-vocabulary tokens") {
  TabularPolicy p(4, 1);
  CHECK_THROWS_AS(p.logprob(TokenSeq{}, TokenSeq{4}), std::domain_error);
  CHECK_THROWS_AS(p.logprob(TokenSeq{7}, TokenSeq{0}), std::domain_error);
}

TEST_CASE("grad_logprob at the uniform point is onehot minus 1/V") {
  const std::size_t V = 4;
  TabularPolicy p(V, 1);
  const TokenSeq y{2};
  const SparseVec g = p.grad_logprob(TokenSeq{}, y);

  REQUIRE(g.nnz() == V);  // exactly one visited context row
  for (std::size_t j = 0; j < V; ++j) {
    const double want = (j == 2 ? 1.0 : 0.0) - 1.0 / static_cast<double>(V);
    CHECK(g.val[j] == Catch::Approx(want).margin(1e-15));
  }

  // locality: the visited row is the BOS context
  const std::size_t row =
      p.context_row(0, std::array<Token, 1>{static_cast<Token>(V)});
  CHECK(g.idx.front() == row * V);
}

TEST_CASE("grad_logprob of empty response is the zero vector") {
  LogLinearPolicy p(8, 16);
  const SparseVec g = p.grad_logprob(TokenSeq{1, 2}, TokenSeq{});
  CHECK(g.nnz() == 0);
}

TEST_CASE("analytic gradient matches central finite differences") {
  Rng rng(101);
  LogLinearPolicy p(8, 16);
  testutil::randomize_params(p, rng);
  const auto triple = testutil::random_triple(rng, 8);

  const SparseVec analytic = p.grad_logprob(triple.prompt, triple.chosen);
  const std::vector<double> dense = analytic.to_dense(p.param_count());
  const std::vector<double> fd = finite_diff_grad(p, triple.prompt, triple.chosen, 1e-5);

  double max_grad = 0.0, max_diff = 0.0;
  for (std::size_t j = 0; j < dense.size(); ++j) {
    max_grad = std::max(max_grad, std::fabs(dense[j]));
    max_diff = std::max(max_diff, std::fabs(dense[j] - fd[j]));
  }
  CHECK(max_diff / (1.0 + max_grad) <= 1e-6);
}

TEST_CASE("finite differences are second-order accurate") {
  Rng rng(102);
  LogLinearPolicy p(8, 16);
  testutil::randomize_params(p, rng);
  const auto triple = testutil::random_triple(rng, 8);
  const std::vector<double> dense =
      p.grad_logprob(triple.prompt, triple.chosen).to_dense(p.param_count());

  const auto disagreement = [&](double h) {
    const std::vector<double> fd = finite_diff_grad(p, triple.prompt, triple.chosen, h);
    double d = 0.0;
    for (std::size_t j = 0; j < dense.size(); ++j)
      d = std::max(d, std::fabs(dense[j] - fd[j]));
    return d;
  };
  const double coarse = disagreement(1e-4);
  const double fine = disagreement(1e-5);
  CHECK(fine < coarse);

  // untouched coordinates stay exactly flat
  const std::vector<double> fd = finite_diff_grad(p, triple.prompt, triple.chosen, 1e-4);
  for (std::size_t j = 0; j < dense.size(); ++j)
    if (dense[j] == 0.0) CHECK(std::fabs(fd[j]) <= 1e-9);

  CHECK_THROWS_AS(finite_diff_grad(p, triple.prompt, triple.chosen, 0.0),
                  std::domain_error);
}

TEST_CASE("per-context distributions are normalized") {
  Rng rng(103);

  TabularPolicy tab(5, 1);
  testutil::randomize_params(tab, rng, 1.0);
  LogLinearPolicy lin(5, 24);
  testutil::randomize_params(lin, rng, 1.0);

  std::vector<double> logp;
  for (const Policy* p :
       {static_cast<const Policy*>(&tab), static_cast<const Policy*>(&lin)}) {
    for (int trial = 0; trial < 20; ++trial) {
      const TokenSeq x = testutil::random_seq(rng, 3, 5);
      const TokenSeq prefix =
          testutil::random_seq(rng, static_cast<std::size_t>(rng.bounded(4)), 5);
      p->next_token_logprobs(x, prefix.ids, logp);
      double total = 0.0;
      for (double v : logp) total += std::exp(v);
      CHECK(std::fabs(total - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("sampling follows the policy") {
  SECTION("argmax-dominant logits produce a constant sequence") {
    LogLinearPolicy p(8, 16);
    std::vector<double> theta(p.param_count(), 0.0);
    for (std::size_t r = 0; r < 16; ++r) theta[r * 8 + 3] = 1000.0;
    p.set_params(theta);
    Rng rng(1);
    const TokenSeq y = p.sample(TokenSeq{0}, 5, rng);
    REQUIRE(y.size() == 5);
    for (Token t : y.ids) CHECK(t == 3);
  }

  SECTION("same seed gives identical sequences") {
    TabularPolicy p(6, 1);
    Rng r1(99);
    testutil::randomize_params(p, r1, 1.0);
    Rng s1(7), s2(7);
    CHECK(p.sample(TokenSeq{1}, 12, s1).ids == p.sample(TokenSeq{1}, 12, s2).ids);
  }

  SECTION("uniform policy single-token frequencies are binomial") {
    const std::size_t V = 8;
    TabularPolicy p(V, 1);
    Rng rng(5);
    std::vector<std::size_t> counts(V, 0);
    const std::size_t n = 100000;
    for (std::size_t i = 0; i < n; ++i)
      ++counts[static_cast<std::size_t>(p.sample(TokenSeq{}, 1, rng).ids[0])];
    const double mean = static_cast<double>(n) / V;
    const double bound = 5.0 * std::sqrt(mean * (1.0 - 1.0 / V));
    for (std::size_t j = 0; j < V; ++j)
      CHECK(std::fabs(static_cast<double>(counts[j]) - mean) <= bound);
  }

  SECTION("end token stops generation") {
    LogLinearPolicy p(4, 16);
    std::vector<double> theta(p.param_count(), 0.0);
    for (std::size_t r = 0; r < 16; ++r) theta[r * 4 + 2] = 1000.0;
    p.set_params(theta);
    Rng rng(1);
    const TokenSeq y = p.sample(TokenSeq{}, 10, rng, Token{2});
    CHECK(y.size() == 1);
  }
}

TEST_CASE("frozen policies are immutable snapshots") {
  Rng rng(104);
  LogLinearPolicy p(8, 16);
  testutil::randomize_params(p, rng);
  const auto triple = testutil::random_triple(rng, 8);

  const FrozenPolicy frozen(p);
  const double before = frozen.logprob(triple.prompt, triple.chosen);

  testutil::randomize_params(p, rng);  // mutate the source
  const double after = frozen.logprob(triple.prompt, triple.chosen);
  CHECK(before == after);  // bit-identical
}

TEST_CASE("checkpoints round-trip byte-exactly") {
  Rng rng(105);
  const std::string path = temp_path("dposhift_test.ckpt");

  const auto roundtrip = [&](const Policy& p) {
    save_checkpoint(p, path);
    const auto loaded = load_checkpoint(path);
    REQUIRE(loaded->param_count() == p.param_count());
    for (std::size_t i = 0; i < p.param_count(); ++i)
      CHECK(loaded->param(i) == p.param(i));

    const std::string path2 = temp_path("dposhift_test2.ckpt");
    save_checkpoint(*loaded, path2);
    std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
    const std::string bytes_a((std::istreambuf_iterator<char>(a)), {});
    const std::string bytes_b((std::istreambuf_iterator<char>(b)), {});
    CHECK(bytes_a == bytes_b);
  };

  TabularPolicy tab(6, 2, 3);
  testutil::randomize_params(tab, rng);
  roundtrip(tab);

  LogLinearPolicy lin(16, 32, 1);
  testutil::randomize_params(lin, rng);
  roundtrip(lin);

  CHECK_THROWS_AS(load_checkpoint(temp_path("missing_dir/nope.ckpt")), IoError);
}

TEST_CASE("sparse vector algebra") {
  SparseVec a{{1, 4, 7}, {1.0, 2.0, 3.0}};
  SparseVec b{{0, 4, 7, 9}, {5.0, 0.5, -1.0, 2.0}};
  CHECK(a.dot(b) == Catch::Approx(2.0 * 0.5 - 3.0).margin(1e-15));
  CHECK(a.squared_norm() == Catch::Approx(14.0).margin(1e-15));

  const SparseVec c = sparse_combine(2.0, a, -1.0, b);
  CHECK(c.to_dense(10)[4] == Catch::Approx(2.0 * 2.0 - 0.5).margin(1e-15));
  CHECK(c.to_dense(10)[0] == Catch::Approx(-5.0).margin(1e-15));

  std::vector<double> dense(10, 1.0);
  a.add_scaled_to(3.0, dense);
  CHECK(dense[1] == Catch::Approx(4.0).margin(1e-15));
  CHECK(dense[2] == Catch::Approx(1.0).margin(1e-15));
}

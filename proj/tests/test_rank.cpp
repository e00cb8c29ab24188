#include <doctest.h>

#include <Eigen/SVD>
#include <algorithm>

#include "detlab/archive.hpp"
#include "detlab/error.hpp"
#include "detlab/rank.hpp"
#include "detlab/synthetic.hpp"

using namespace detlab;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (double& v : m.data) v = rng.normal();
  return m;
}

std::vector<double> eigen_sigma(const Matrix& m) {
  Eigen::MatrixXd e(m.rows, m.cols);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) e(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m(i, j);
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(e);
  const auto& s = svd.singularValues();
  return {s.data(), s.data() + s.size()};
}

RankReport report(std::vector<std::pair<int, std::size_t>> ranks, std::size_t c_out = 16) {
  RankReport r;
  for (auto [id, rank] : ranks) r.stages.push_back({id, c_out, rank, static_cast<double>(rank) / c_out});
  return r;
}

struct CountingEvaluator {
  std::map<std::vector<int>, double> scores;
  int calls = 0;
  double operator()(std::span<const int> stages) {
    ++calls;
    std::vector<int> key(stages.begin(), stages.end());
    std::sort(key.begin(), key.end());
    return scores.at(key);
  }
};

}  // namespace

TEST_CASE("singular values agree with Eigen") {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix m = random_matrix(1 + rng.index(40), 1 + rng.index(40), rng);
    const auto ours = singular_values(m);
    const auto ref = eigen_sigma(m);
    REQUIRE(ours.size() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(ours[i] - ref[i]) <= 1e-10 * ref.front());
  }
}

TEST_CASE("numerical rank worked examples") {
  CHECK(numerical_rank(Matrix::identity(4)) == 4);
  Matrix outer(5, 3);
  const double u[] = {1, -2, 0.5, 3, 1}, v[] = {2, 1, -1};
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) outer(i, j) = u[i] * v[j];
  CHECK(numerical_rank(outer) == 1);
  Matrix diag(4, 4);
  diag(0, 0) = 10;
  diag(1, 1) = 6;
  diag(2, 2) = 4;
  diag(3, 3) = 1;
  CHECK(numerical_rank(diag) == 2);
}

TEST_CASE("singular values exactly at the threshold are excluded") {
  Matrix diag(3, 3);
  diag(0, 0) = 8;
  diag(1, 1) = 4;
  diag(2, 2) = 4.0000001;
  CHECK(numerical_rank(diag) == 2);
}

TEST_CASE("numerical rank errors") {
  try {
    numerical_rank(Matrix(3, 3));
    FAIL("expected ZeroMatrix");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ZeroMatrix);
  }
  CHECK_THROWS_AS(numerical_rank(Matrix::identity(2), 1.0), Error);
  CHECK_THROWS_AS(numerical_rank(Matrix::identity(2), 0.0), Error);
}

TEST_CASE("rank is invariant to scale and orthogonal rotation") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t rows = 2 + rng.index(30), cols = 2 + rng.index(30);
    const Matrix m = random_matrix(rows, cols, rng);
    const std::size_t base = numerical_rank(m);
    Matrix scaled = m;
    const double c = rng.uniform() < 0.5 ? -rng.uniform(1e-3, 1e3) : rng.uniform(1e-3, 1e3);
    for (double& v : scaled.data) v *= c;
    CHECK(numerical_rank(scaled) == base);
    CHECK(numerical_rank(multiply(random_orthogonal(rows, rng), m)) == base);
  }
}

TEST_CASE("conv weights reshape to c_out rows") {
  const double sigmas[] = {5, 4, 1};
  const Tensor w = planted_spectrum_weight(6, 4, 3, sigmas, 7);
  const Matrix m = weight_matrix(w);
  CHECK(m.rows == 6);
  CHECK(m.cols == 36);
  const auto s = singular_values(m);
  CHECK(s[0] == doctest::Approx(5).epsilon(1e-10));
  CHECK(s[2] == doctest::Approx(1).epsilon(1e-10));
  CHECK(s[3] < 1e-10);
  CHECK(numerical_rank(w) == 2);
}

TEST_CASE("stage ranks from an archive") {
  TensorArchive archive;
  std::vector<StageEntry> manifest;
  const std::size_t c_out = 8;
  for (int id = 1; id <= 3; ++id) {
    std::vector<double> sigmas(c_out, 0.1);
    for (int i = 0; i < id * 2; ++i) sigmas[i] = 1.0;
    archive.tensors["s" + std::to_string(id)] = planted_spectrum_weight(c_out, 4, 3, sigmas, id);
    manifest.push_back({id, "s" + std::to_string(id), c_out});
  }
  // identity-like full rank stage and a rank-1 stage
  Tensor eye({c_out, c_out, 1, 1});
  for (std::size_t i = 0; i < c_out; ++i) eye(i, i, 0, 0) = 1.0;
  archive.tensors["eye"] = eye;
  manifest.push_back({4, "eye", c_out});
  Tensor one({c_out, 2, 1, 1}, 1.0);
  archive.tensors["one"] = one;
  manifest.push_back({5, "one", c_out});
  std::reverse(manifest.begin(), manifest.end());

  const RankReport r1 = stage_ranks(archive, manifest, 0.5, 1);
  const RankReport r4 = stage_ranks(archive, manifest, 0.5, 4);
  CHECK(r1 == r4);
  REQUIRE(r1.stages.size() == 5);
  CHECK(r1.stages[0].stage_id == 1);
  CHECK(r1.stages[0].rank == 2);
  CHECK(r1.stages[2].rank == 6);
  CHECK(r1.stages[3].normalized_rank == 1.0);
  CHECK(r1.stages[4].normalized_rank == 1.0 / c_out);

  SUBCASE("missing weight") {
    manifest.push_back({9, "nope", c_out});
    try {
      stage_ranks(archive, manifest, 0.5, 1);
      FAIL("expected MissingWeight");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::MissingWeight);
    }
  }
  SUBCASE("c_out mismatch") {
    manifest[0].c_out = 3;
    CHECK_THROWS_AS(stage_ranks(archive, manifest, 0.5, 1), Error);
  }
}

TEST_CASE("visit order sorts by normalized rank then stage id") {
  RankReport r;
  r.stages = {{1, 4, 2, 0.5}, {2, 8, 4, 0.5}, {3, 3, 1, 1.0 / 3}, {4, 16, 2, 0.125}};
  CHECK(rank_visit_order(r) == std::vector<int>{4, 3, 1, 2});
}

TEST_CASE("allocation keeps 8 and 4 then stops at the first rejection") {
  const RankReport r = report({{1, 12}, {2, 16}, {3, 8}, {4, 4}, {5, 10}, {6, 14}, {7, 6}, {8, 2}});
  CHECK(rank_visit_order(r) == std::vector<int>{8, 4, 7, 3, 5, 1, 6, 2});
  CountingEvaluator eval{{{{8}, 44.5}, {{4, 8}, 44.5}, {{4, 7, 8}, 44.3}}};
  const AllocationTrace t = rank_guided_allocate(r, std::ref(eval), 44.4);
  CHECK(t.final_stages == std::vector<int>{8, 4});
  CHECK(eval.calls == 3);
  REQUIRE(t.steps.size() == 3);
  CHECK(t.steps[0].accepted);
  CHECK(t.steps[1].accepted);
  CHECK_FALSE(t.steps[2].accepted);
}

TEST_CASE("allocation edge cases") {
  const RankReport three = report({{1, 3}, {2, 5}, {3, 8}});
  const AllocationTrace all = rank_guided_allocate(three, [](std::span<const int>) { return 40.0; }, 40.0);
  CHECK(all.final_stages == std::vector<int>{1, 2, 3});
  const AllocationTrace none =
      rank_guided_allocate(report({{1, 3}}), [](std::span<const int>) { return 39.0; }, 40.0);
  CHECK(none.final_stages.empty());
  CHECK(none.steps.size() == 1);
}

TEST_CASE("monotone evaluators yield the longest passing prefix") {
  Rng rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.index(8);
    std::vector<std::pair<int, std::size_t>> ranks;
    for (std::size_t i = 0; i < n; ++i) ranks.push_back({static_cast<int>(i + 1), 1 + rng.index(16)});
    const RankReport r = report(ranks);
    // score depends only on set size and is non-increasing in it
    std::vector<double> by_size(n + 1);
    by_size[0] = 50;
    for (std::size_t k = 1; k <= n; ++k) by_size[k] = by_size[k - 1] - std::floor(rng.uniform(0, 3));
    const double baseline = 50 - std::floor(rng.uniform(0, 2 * n));
    int calls = 0;
    const AllocationTrace t = rank_guided_allocate(
        r, [&](std::span<const int> s) { ++calls; return by_size[s.size()]; }, baseline);
    std::size_t expect = 0;
    while (expect < n && by_size[expect + 1] >= baseline) ++expect;
    const auto order = rank_visit_order(r);
    CHECK(t.final_stages == std::vector<int>(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(expect)));
    CHECK(calls <= static_cast<int>(n));
  }
}

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "detlab/archive.hpp"
#include "detlab/tensor.hpp"

namespace detlab {

/// Dense row-major matrix used by the rank analysis.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  static Matrix identity(std::size_t n);
};

Matrix multiply(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);

/// Singular values in descending order, by one-sided Jacobi rotations.
std::vector<double> singular_values(const Matrix& m);

/// Reshapes a (C_o, C_i/g, K, K) weight to (C_o, K*K*C_i/g). A 2-d tensor is
/// taken as-is.
Matrix weight_matrix(const Tensor& weight);

inline constexpr double kDefaultRankThreshold = 0.5;

/// Number of singular values strictly above threshold_ratio * sigma_max.
/// Comparison is on sigma / sigma_max with an absolute slack of 1e-10, so a
/// value sitting on the threshold is not counted.
std::size_t numerical_rank(const Matrix& m, double threshold_ratio = kDefaultRankThreshold);
std::size_t numerical_rank(const Tensor& weight, double threshold_ratio = kDefaultRankThreshold);

struct StageEntry {
  int stage_id = 0;
  std::string weight_name;
  std::size_t c_out = 0;

  friend bool operator==(const StageEntry&, const StageEntry&) = default;
};

struct StageRank {
  int stage_id = 0;
  std::size_t c_out = 0;
  std::size_t rank = 0;
  double normalized_rank = 0.0;

  friend bool operator==(const StageRank&, const StageRank&) = default;
};

struct RankReport {
  double threshold_ratio = kDefaultRankThreshold;
  std::vector<StageRank> stages;  // ascending stage_id

  friend bool operator==(const RankReport&, const RankReport&) = default;
};

/// Ranks of the named stage weights. Stages are analysed independently on
/// up to `workers` threads.
RankReport stage_ranks(const TensorArchive& archive, std::span<const StageEntry> manifest,
                       double threshold_ratio = kDefaultRankThreshold, std::size_t workers = 1);

/// Scores a network whose listed stages use the compact block. Stage ids
/// arrive in replacement order.
using StageEvaluator = std::function<double(std::span<const int>)>;

struct AllocationStep {
  int stage_id = 0;
  double score = 0.0;
  bool accepted = false;

  friend bool operator==(const AllocationStep&, const AllocationStep&) = default;
};

struct AllocationTrace {
  double baseline_score = 0.0;
  std::vector<int> visit_order;
  std::vector<AllocationStep> steps;
  std::vector<int> final_stages;

  friend bool operator==(const AllocationTrace&, const AllocationTrace&) = default;
};

/// Stage visit order: ascending normalized rank, ties by lower stage id.
std::vector<int> rank_visit_order(const RankReport& ranks);

/// Rank-guided block allocation. Stages are replaced cumulatively in visit
/// order; each step is kept while evaluator(current set) >= baseline_score
/// and the search stops at the first step that falls below it.
AllocationTrace rank_guided_allocate(const RankReport& ranks, const StageEvaluator& evaluator,
                                     double baseline_score);

}  // namespace detlab

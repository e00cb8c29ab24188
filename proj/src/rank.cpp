#include "detlab/rank.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "detlab/error.hpp"
#include "detlab/parallel.hpp"

namespace detlab {

namespace {

constexpr int kMaxSweeps = 80;
constexpr double kRankSlack = 1e-10;

}  // namespace

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix multiply(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw Error(ErrorCode::ShapeMismatch, "matrix product dimension mismatch");
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double v = a(i, k);
      for (std::size_t j = 0; j < b.cols; ++j) out(i, j) += v * b(k, j);
    }
  }
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols, m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) out(j, i) = m(i, j);
  }
  return out;
}

std::vector<double> singular_values(const Matrix& m) {
  if (m.rows == 0 || m.cols == 0) return {};
  // Orthogonalise the columns of a tall matrix; a wide one is transposed first.
  const bool wide = m.cols > m.rows;
  const std::size_t rows = wide ? m.cols : m.rows;
  const std::size_t cols = wide ? m.rows : m.cols;

  // Column-major working copy: column j occupies [j*rows, (j+1)*rows).
  std::vector<double> a(rows * cols);
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) {
      if (wide) {
        a[i * rows + j] = m(i, j);
      } else {
        a[j * rows + i] = m(i, j);
      }
    }
  }

  const double eps = std::numeric_limits<double>::epsilon();
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < cols; ++p) {
      double* cp = a.data() + p * rows;
      for (std::size_t q = p + 1; q < cols; ++q) {
        double* cq = a.data() + q * rows;
        double alpha = 0.0;
        double beta = 0.0;
        double gamma = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
          alpha += cp[i] * cp[i];
          beta += cq[i] * cq[i];
          gamma += cp[i] * cq[i];
        }
        if (gamma == 0.0 || std::abs(gamma) <= eps * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < rows; ++i) {
          const double xp = cp[i];
          const double xq = cq[i];
          cp[i] = c * xp - s * xq;
          cq[i] = s * xp + c * xq;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> sigma(cols);
  for (std::size_t j = 0; j < cols; ++j) {
    const double* col = a.data() + j * rows;
    double norm2 = 0.0;
    for (std::size_t i = 0; i < rows; ++i) norm2 += col[i] * col[i];
    sigma[j] = std::sqrt(norm2);
  }
  std::sort(sigma.begin(), sigma.end(), std::greater<>());
  return sigma;
}

Matrix weight_matrix(const Tensor& weight) {
  if (weight.rank() < 2) {
    throw Error(ErrorCode::ShapeMismatch, "rank analysis needs a matrix or conv weight, got " +
                                              shape_string(weight.shape()));
  }
  const std::size_t rows = weight.dim(0);
  Matrix m(rows, weight.size() / rows);
  std::copy(weight.data().begin(), weight.data().end(), m.data.begin());
  return m;
}

std::size_t numerical_rank(const Matrix& m, double threshold_ratio) {
  if (!(threshold_ratio > 0.0 && threshold_ratio < 1.0)) {
    throw Error(ErrorCode::ConfigError, "rank threshold ratio must lie in (0, 1)");
  }
  const std::vector<double> sigma = singular_values(m);
  if (sigma.empty() || sigma.front() == 0.0) {
    throw Error(ErrorCode::ZeroMatrix, "numerical rank of a zero matrix is undefined");
  }
  const double sigma_max = sigma.front();
  return static_cast<std::size_t>(std::count_if(sigma.begin(), sigma.end(), [&](double s) {
    return s / sigma_max > threshold_ratio + kRankSlack;
  }));
}

std::size_t numerical_rank(const Tensor& weight, double threshold_ratio) {
  return numerical_rank(weight_matrix(weight), threshold_ratio);
}

RankReport stage_ranks(const TensorArchive& archive, std::span<const StageEntry> manifest,
                       double threshold_ratio, std::size_t workers) {
  for (const auto& entry : manifest) {
    if (!archive.contains(entry.weight_name)) {
      throw Error(ErrorCode::MissingWeight, "stage " + std::to_string(entry.stage_id) +
                                                ": weight '" + entry.weight_name +
                                                "' not in archive");
    }
    const Tensor& w = archive.get(entry.weight_name);
    if (entry.c_out == 0 || w.rank() < 2 || w.dim(0) != entry.c_out) {
      throw Error(ErrorCode::ShapeMismatch, "stage " + std::to_string(entry.stage_id) +
                                                ": c_out " + std::to_string(entry.c_out) +
                                                " does not match weight " + shape_string(w.shape()));
    }
  }

  RankReport report;
  report.threshold_ratio = threshold_ratio;
  report.stages.resize(manifest.size());
  parallel_for(manifest.size(), workers, [&](std::size_t i) {
    const StageEntry& entry = manifest[i];
    const std::size_t rank = numerical_rank(archive.get(entry.weight_name), threshold_ratio);
    report.stages[i] = {entry.stage_id, entry.c_out, rank,
                        static_cast<double>(rank) / static_cast<double>(entry.c_out)};
  });
  std::stable_sort(report.stages.begin(), report.stages.end(),
                   [](const StageRank& a, const StageRank& b) { return a.stage_id < b.stage_id; });
  return report;
}

std::vector<int> rank_visit_order(const RankReport& ranks) {
  std::vector<StageRank> stages = ranks.stages;
  // Compare rank_a / c_a with rank_b / c_b exactly by cross-multiplying.
  std::sort(stages.begin(), stages.end(), [](const StageRank& a, const StageRank& b) {
    const auto lhs = static_cast<unsigned long long>(a.rank) * b.c_out;
    const auto rhs = static_cast<unsigned long long>(b.rank) * a.c_out;
    if (lhs != rhs) return lhs < rhs;
    return a.stage_id < b.stage_id;
  });
  std::vector<int> order;
  order.reserve(stages.size());
  for (const auto& s : stages) order.push_back(s.stage_id);
  return order;
}

AllocationTrace rank_guided_allocate(const RankReport& ranks, const StageEvaluator& evaluator,
                                     double baseline_score) {
  AllocationTrace trace;
  trace.baseline_score = baseline_score;
  trace.visit_order = rank_visit_order(ranks);

  std::vector<int> candidate;
  for (const int stage : trace.visit_order) {
    candidate.push_back(stage);
    const double score = evaluator(candidate);
    const bool accepted = score >= baseline_score;
    trace.steps.push_back({stage, score, accepted});
    if (!accepted) break;
    trace.final_stages = candidate;
  }
  return trace;
}

}  // namespace detlab

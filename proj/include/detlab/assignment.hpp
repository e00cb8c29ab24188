#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "detlab/geometry.hpp"

namespace detlab {

/// Exponents of the matching metric s * p^alpha * IoU^beta. Both positive.
struct MetricParams {
  double alpha = 0.5;
  double beta = 6.0;

  void validate() const;

  friend bool operator==(const MetricParams&, const MetricParams&) = default;
};

struct Prediction {
  AnchorPoint anchor;
  BoundingBox box;
  std::vector<double> scores;  // one per class, each in [0, 1]

  friend bool operator==(const Prediction&, const Prediction&) = default;
};

struct GroundTruthInstance {
  BoundingBox box;
  std::size_t class_id = 0;

  friend bool operator==(const GroundTruthInstance&, const GroundTruthInstance&) = default;
};

struct Positive {
  std::size_t pred_index = 0;
  double metric = 0.0;
  double target = 0.0;

  friend bool operator==(const Positive&, const Positive&) = default;
};

/// Assignment for a single ground truth. `positives` is ordered by metric
/// descending, ties by lower prediction index.
struct GtAssignment {
  std::vector<Positive> positives;
  double u_star = 0.0;  // largest IoU with any prediction
  double m_star = 0.0;  // largest metric over all predictions

  const Positive* find(std::size_t pred_index) const;

  friend bool operator==(const GtAssignment&, const GtAssignment&) = default;
};

struct AssignmentResult {
  std::size_t num_predictions = 0;
  std::vector<GtAssignment> per_gt;

  friend bool operator==(const AssignmentResult&, const AssignmentResult&) = default;
};

/// Breakdown of the supervision gap for one ground truth.
struct GapReport {
  double gap = 0.0;
  std::size_t o2o_index = 0;
  double t_o2o = 0.0;        // target of the one-to-one pick (= u_star)
  bool in_omega = false;     // whether the pick is a one-to-many positive
  double t_o2m_pick = 0.0;   // its one-to-many target, 0 when not in Omega
  double rest_sum = 0.0;     // sum of one-to-many targets excluding the pick

  friend bool operator==(const GapReport&, const GapReport&) = default;
};

struct AlignmentFrequency {
  std::size_t k = 0;
  std::size_t hits = 0;
  std::size_t total = 0;
  double frequency = 0.0;

  friend bool operator==(const AlignmentFrequency&, const AlignmentFrequency&) = default;
};

inline constexpr std::size_t kDefaultTopK = 10;

double matching_metric(double p_class, double iou_val, bool s, const MetricParams& params);

/// Metric of prediction `pred` against `gt`, using the score of the GT's class.
double pair_metric(const Prediction& pred, const GroundTruthInstance& gt,
                   const MetricParams& params);

/// Task-aligned one-to-many assignment: per GT, the top-k candidates with a
/// positive metric whose anchor lies inside the GT. Targets are
/// u_star * m / m_star.
AssignmentResult assign_one_to_many(std::span<const Prediction> preds,
                                    std::span<const GroundTruthInstance> gts,
                                    const MetricParams& params,
                                    std::size_t topk = kDefaultTopK);

/// Top-one selection. GTs are processed in order and a prediction claimed by
/// an earlier GT is unavailable to later ones. The pick's target is u_star.
AssignmentResult assign_one_to_one(std::span<const Prediction> preds,
                                   std::span<const GroundTruthInstance> gts,
                                   const MetricParams& params);

/// Closed-form gap between the two heads' targets for one GT.
GapReport supervision_gap(const AssignmentResult& o2m, const AssignmentResult& o2o,
                          std::size_t gt_index);

/// Sum over predictions of |t_o2o - t_o2m|.
double gap_oracle(std::span<const double> o2m_targets, std::span<const double> o2o_targets);

/// Dense per-prediction target vector for one GT (zero outside Omega).
std::vector<double> target_vector(const AssignmentResult& result, std::size_t gt_index);

/// r when (alpha_o2o, beta_o2o) = r * (alpha_o2m, beta_o2m), else nullopt.
std::optional<double> consistency_ratio(const MetricParams& o2m, const MetricParams& o2o);

/// For each k, the fraction of GTs whose one-to-one pick is among the first
/// k one-to-many positives. GTs without a one-to-one pick count as misses.
std::vector<AlignmentFrequency> alignment_frequency(const AssignmentResult& o2m,
                                                    const AssignmentResult& o2o,
                                                    std::span<const std::size_t> ks);

}  // namespace detlab

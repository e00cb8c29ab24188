#include "detlab/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "detlab/error.hpp"

namespace detlab {

namespace {

void require_predictions(std::span<const Prediction> preds) {
  if (preds.empty()) {
    throw Error(ErrorCode::EmptyPredictions, "assignment requires at least one prediction");
  }
}

struct GtScan {
  std::vector<double> metrics;
  double u_star = 0.0;
  double m_star = 0.0;
};

GtScan scan_gt(std::span<const Prediction> preds, const GroundTruthInstance& gt,
               const MetricParams& params) {
  GtScan scan;
  scan.metrics.reserve(preds.size());
  for (const auto& pred : preds) {
    scan.u_star = std::max(scan.u_star, iou(pred.box, gt.box));
    const double m = pair_metric(pred, gt, params);
    scan.m_star = std::max(scan.m_star, m);
    scan.metrics.push_back(m);
  }
  return scan;
}

// Strict weak order: metric descending, then lower index first.
bool ranks_before(const std::vector<double>& metrics, std::size_t a, std::size_t b) {
  if (metrics[a] != metrics[b]) return metrics[a] > metrics[b];
  return a < b;
}

}  // namespace

void MetricParams::validate() const {
  if (!(alpha > 0.0) || !(beta > 0.0) || !std::isfinite(alpha) || !std::isfinite(beta)) {
    throw Error(ErrorCode::ConfigError, "metric exponents must be positive and finite (alpha=" +
                                            std::to_string(alpha) + ", beta=" +
                                            std::to_string(beta) + ")");
  }
}

const Positive* GtAssignment::find(std::size_t pred_index) const {
  for (const auto& p : positives) {
    if (p.pred_index == pred_index) return &p;
  }
  return nullptr;
}

double matching_metric(double p_class, double iou_val, bool s, const MetricParams& params) {
  if (!s) return 0.0;
  // std::pow(0, positive) is +0, which gives the required 0^a = 0.
  return std::pow(p_class, params.alpha) * std::pow(iou_val, params.beta);
}

double pair_metric(const Prediction& pred, const GroundTruthInstance& gt,
                   const MetricParams& params) {
  if (gt.class_id >= pred.scores.size()) {
    throw Error(ErrorCode::LengthMismatch,
                "class id " + std::to_string(gt.class_id) + " outside score vector of length " +
                    std::to_string(pred.scores.size()));
  }
  const bool s = spatial_prior(pred.anchor, gt.box);
  if (!s) return 0.0;
  return matching_metric(pred.scores[gt.class_id], iou(pred.box, gt.box), s, params);
}

AssignmentResult assign_one_to_many(std::span<const Prediction> preds,
                                    std::span<const GroundTruthInstance> gts,
                                    const MetricParams& params, std::size_t topk) {
  require_predictions(preds);
  params.validate();
  if (topk == 0) throw Error(ErrorCode::ConfigError, "topk must be at least 1");

  AssignmentResult result;
  result.num_predictions = preds.size();
  result.per_gt.reserve(gts.size());

  std::vector<std::size_t> candidates;
  for (const auto& gt : gts) {
    GtScan scan = scan_gt(preds, gt, params);
    GtAssignment assignment;
    assignment.u_star = scan.u_star;
    assignment.m_star = scan.m_star;

    if (scan.m_star > 0.0) {
      // metric > 0 already implies s = 1.
      candidates.clear();
      for (std::size_t j = 0; j < preds.size(); ++j) {
        if (scan.metrics[j] > 0.0) candidates.push_back(j);
      }
      const std::size_t keep = std::min(topk, candidates.size());
      std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                        candidates.end(), [&](std::size_t a, std::size_t b) {
                          return ranks_before(scan.metrics, a, b);
                        });
      for (std::size_t n = 0; n < keep; ++n) {
        const std::size_t j = candidates[n];
        const double m = scan.metrics[j];
        assignment.positives.push_back({j, m, scan.u_star * (m / scan.m_star)});
      }
    }
    result.per_gt.push_back(std::move(assignment));
  }
  return result;
}

AssignmentResult assign_one_to_one(std::span<const Prediction> preds,
                                   std::span<const GroundTruthInstance> gts,
                                   const MetricParams& params) {
  require_predictions(preds);
  params.validate();

  AssignmentResult result;
  result.num_predictions = preds.size();
  result.per_gt.reserve(gts.size());

  std::vector<bool> claimed(preds.size(), false);
  for (const auto& gt : gts) {
    GtScan scan = scan_gt(preds, gt, params);
    GtAssignment assignment;
    assignment.u_star = scan.u_star;
    assignment.m_star = scan.m_star;

    std::optional<std::size_t> best;
    for (std::size_t j = 0; j < preds.size(); ++j) {
      if (claimed[j] || !(scan.metrics[j] > 0.0)) continue;
      if (!best || scan.metrics[j] > scan.metrics[*best]) best = j;
    }
    if (best) {
      claimed[*best] = true;
      assignment.positives.push_back({*best, scan.metrics[*best], scan.u_star});
    }
    result.per_gt.push_back(std::move(assignment));
  }
  return result;
}

GapReport supervision_gap(const AssignmentResult& o2m, const AssignmentResult& o2o,
                          std::size_t gt_index) {
  if (gt_index >= o2m.per_gt.size() || gt_index >= o2o.per_gt.size()) {
    throw Error(ErrorCode::LengthMismatch, "gt index " + std::to_string(gt_index) +
                                               " out of range for assignment results");
  }
  if (o2m.num_predictions != o2o.num_predictions) {
    throw Error(ErrorCode::LengthMismatch,
                "assignment results were computed on different prediction sets");
  }
  const GtAssignment& many = o2m.per_gt[gt_index];
  const GtAssignment& one = o2o.per_gt[gt_index];
  if (one.positives.empty()) {
    throw Error(ErrorCode::MissingMatch,
                "one-to-one head assigned no prediction to gt " + std::to_string(gt_index));
  }

  GapReport report;
  report.o2o_index = one.positives.front().pred_index;
  report.t_o2o = one.positives.front().target;
  for (const auto& pos : many.positives) {
    if (pos.pred_index == report.o2o_index) {
      report.in_omega = true;
      report.t_o2m_pick = pos.target;
    } else {
      report.rest_sum += pos.target;
    }
  }
  report.gap = report.t_o2o - (report.in_omega ? report.t_o2m_pick : 0.0) + report.rest_sum;
  return report;
}

double gap_oracle(std::span<const double> o2m_targets, std::span<const double> o2o_targets) {
  if (o2m_targets.size() != o2o_targets.size()) {
    throw Error(ErrorCode::LengthMismatch,
                "target vectors differ in length (" + std::to_string(o2m_targets.size()) +
                    " vs " + std::to_string(o2o_targets.size()) + ")");
  }
  double total = 0.0;
  for (std::size_t j = 0; j < o2m_targets.size(); ++j) {
    total += std::abs(o2o_targets[j] - o2m_targets[j]);
  }
  return total;
}

std::vector<double> target_vector(const AssignmentResult& result, std::size_t gt_index) {
  if (gt_index >= result.per_gt.size()) {
    throw Error(ErrorCode::LengthMismatch, "gt index out of range");
  }
  std::vector<double> targets(result.num_predictions, 0.0);
  for (const auto& pos : result.per_gt[gt_index].positives) targets[pos.pred_index] = pos.target;
  return targets;
}

std::optional<double> consistency_ratio(const MetricParams& o2m, const MetricParams& o2o) {
  const double r_alpha = o2o.alpha / o2m.alpha;
  const double r_beta = o2o.beta / o2m.beta;
  if (std::abs(r_alpha - r_beta) <= 1e-9 * std::max(std::abs(r_alpha), std::abs(r_beta))) {
    return r_alpha;
  }
  return std::nullopt;
}

std::vector<AlignmentFrequency> alignment_frequency(const AssignmentResult& o2m,
                                                    const AssignmentResult& o2o,
                                                    std::span<const std::size_t> ks) {
  const std::size_t total = std::min(o2m.per_gt.size(), o2o.per_gt.size());
  std::vector<AlignmentFrequency> out;
  out.reserve(ks.size());
  for (const std::size_t k : ks) {
    AlignmentFrequency freq{k, 0, total, 0.0};
    for (std::size_t g = 0; g < total; ++g) {
      const auto& one = o2o.per_gt[g].positives;
      if (one.empty()) continue;
      const auto& many = o2m.per_gt[g].positives;
      const std::size_t limit = std::min(k, many.size());
      for (std::size_t n = 0; n < limit; ++n) {
        if (many[n].pred_index == one.front().pred_index) {
          ++freq.hits;
          break;
        }
      }
    }
    freq.frequency = total == 0 ? 0.0 : static_cast<double>(freq.hits) / static_cast<double>(total);
    out.push_back(freq);
  }
  return out;
}

}  // namespace detlab

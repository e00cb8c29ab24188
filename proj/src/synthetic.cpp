#include "detlab/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "detlab/error.hpp"

namespace detlab {

namespace {

constexpr double kCell = 128.0;

BoundingBox random_gt_box(Rng& rng, std::size_t cell) {
  const double w = rng.uniform(40.0, 100.0);
  const double h = rng.uniform(40.0, 100.0);
  const double x0 = static_cast<double>(cell) * kCell + rng.uniform(4.0, kCell - 4.0 - w);
  const double y0 = rng.uniform(4.0, kCell - 4.0 - h);
  return {x0, y0, x0 + w, y0 + h};
}

std::vector<double> background_scores(Rng& rng, std::size_t num_classes) {
  std::vector<double> scores(num_classes);
  for (double& s : scores) s = rng.uniform(0.0, 0.1);
  return scores;
}

AnchorPoint centre_anchor(const BoundingBox& box) {
  return {0.5 * (box.x_min + box.x_max), 0.5 * (box.y_min + box.y_max), 8.0};
}

Prediction make_pred(Rng& rng, const GroundTruthInstance& gt, const BoundingBox& box, double p,
                     std::size_t num_classes) {
  Prediction pred;
  pred.anchor = centre_anchor(gt.box);
  pred.box = box;
  pred.scores = background_scores(rng, num_classes);
  pred.scores[gt.class_id] = p;
  return pred;
}

// Same left/top/bottom edges, width scaled: IoU with the GT equals `ratio`.
BoundingBox shrunk(const BoundingBox& box, double ratio) {
  return {box.x_min, box.y_min, box.x_min + ratio * box.width(), box.y_max};
}

BoundingBox shifted(Rng& rng, const BoundingBox& box, double lo, double hi) {
  const double dx = rng.uniform(lo, hi) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
  const double dy = rng.uniform(lo, hi) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
  return box.translated(dx, dy);
}

BoundingBox jittered(Rng& rng, const BoundingBox& box) {
  const double w = box.width() * std::exp(0.1 * rng.normal());
  const double h = box.height() * std::exp(0.1 * rng.normal());
  const double cx = 0.5 * (box.x_min + box.x_max) + 0.1 * box.width() * rng.normal();
  const double cy = 0.5 * (box.y_min + box.y_max) + 0.1 * box.height() * rng.normal();
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

}  // namespace

std::string_view to_string(NoiseProfile profile) {
  switch (profile) {
    case NoiseProfile::Perfect: return "perfect";
    case NoiseProfile::Jitter: return "jitter";
    case NoiseProfile::AdversarialOrdering: return "adversarial-ordering";
  }
  return "unknown";
}

std::optional<NoiseProfile> parse_noise_profile(std::string_view name) {
  for (const auto p : {NoiseProfile::Perfect, NoiseProfile::Jitter, NoiseProfile::AdversarialOrdering}) {
    if (to_string(p) == name) return p;
  }
  return std::nullopt;
}

DatasetFile generate_synthetic(const SyntheticOptions& options) {
  if (options.num_images == 0 || options.gts_per_image == 0 || options.preds_per_gt == 0 ||
      options.num_classes == 0) {
    throw Error(ErrorCode::ConfigError, "synthetic counts must all be positive");
  }
  if (options.profile == NoiseProfile::AdversarialOrdering && options.preds_per_gt < 3) {
    throw Error(ErrorCode::ConfigError, "adversarial-ordering needs at least 3 predictions per gt");
  }

  Rng rng(options.seed);
  DatasetFile dataset;
  dataset.num_classes = options.num_classes;
  dataset.coordinate_frame = "pixels";
  for (std::size_t i = 0; i < options.num_images; ++i) {
    ImageRecord image;
    image.id = static_cast<std::int64_t>(i);
    for (std::size_t g = 0; g < options.gts_per_image; ++g) {
      GroundTruthInstance gt{random_gt_box(rng, g), rng.index(options.num_classes)};
      const std::size_t nc = options.num_classes;
      switch (options.profile) {
        case NoiseProfile::Perfect:
          image.preds.push_back(make_pred(rng, gt, gt.box, 1.0, nc));
          for (std::size_t p = 1; p < options.preds_per_gt; ++p) {
            image.preds.push_back(make_pred(rng, gt, shifted(rng, gt.box, 1.0, 4.0), rng.uniform(0.1, 0.9), nc));
          }
          break;
        case NoiseProfile::Jitter:
          for (std::size_t p = 0; p < options.preds_per_gt; ++p) {
            const BoundingBox box = jittered(rng, gt.box);
            const double score = std::clamp(0.2 + 0.7 * iou(box, gt.box) + 0.1 * rng.normal(), 0.01, 1.0);
            Prediction pred = make_pred(rng, gt, box, score, nc);
            pred.anchor.x += rng.uniform(-0.55, 0.55) * gt.box.width();
            pred.anchor.y += rng.uniform(-0.55, 0.55) * gt.box.height();
            image.preds.push_back(std::move(pred));
          }
          break;
        case NoiseProfile::AdversarialOrdering:
          image.preds.push_back(make_pred(rng, gt, shrunk(gt.box, 0.7), 0.9, nc));
          image.preds.push_back(make_pred(rng, gt, shrunk(gt.box, 0.95), 0.1, nc));
          image.preds.push_back(make_pred(rng, gt, shrunk(gt.box, 0.5), 0.2, nc));
          for (std::size_t p = 3; p < options.preds_per_gt; ++p) {
            image.preds.push_back(make_pred(rng, gt, jittered(rng, gt.box), rng.uniform(0.0, 0.05), nc));
          }
          break;
      }
      image.gts.push_back(gt);
    }
    dataset.images.push_back(std::move(image));
  }
  return dataset;
}

Matrix random_orthogonal(std::size_t n, Rng& rng) {
  Matrix q(n, n);
  for (double& v : q.data) v = rng.normal();
  // Modified Gram-Schmidt over columns, run twice for orthogonality to
  // working precision.
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < j; ++k) {
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += q(i, j) * q(i, k);
        for (std::size_t i = 0; i < n; ++i) q(i, j) -= dot * q(i, k);
      }
      double norm = 0.0;
      for (std::size_t i = 0; i < n; ++i) norm += q(i, j) * q(i, j);
      norm = std::sqrt(norm);
      for (std::size_t i = 0; i < n; ++i) q(i, j) /= norm;
    }
  }
  return q;
}

Tensor planted_spectrum_weight(std::size_t c_out, std::size_t c_in, std::size_t kernel,
                               std::span<const double> sigmas, std::uint64_t seed) {
  const std::size_t cols = c_in * kernel * kernel;
  if (sigmas.size() > std::min(c_out, cols)) {
    throw Error(ErrorCode::ShapeMismatch, "more planted singular values than the matrix rank allows");
  }
  Rng rng(seed);
  const Matrix u = random_orthogonal(c_out, rng);
  const Matrix v = random_orthogonal(cols, rng);
  std::vector<double> data(c_out * cols, 0.0);
  for (std::size_t r = 0; r < sigmas.size(); ++r) {
    for (std::size_t i = 0; i < c_out; ++i) {
      const double ui = u(i, r) * sigmas[r];
      for (std::size_t j = 0; j < cols; ++j) data[i * cols + j] += ui * v(j, r);
    }
  }
  return Tensor({c_out, c_in, kernel, kernel}, std::move(data));
}

}  // namespace detlab

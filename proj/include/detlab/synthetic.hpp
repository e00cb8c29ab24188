#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>

#include "detlab/dataset.hpp"
#include "detlab/rank.hpp"
#include "detlab/random.hpp"
#include "detlab/tensor.hpp"

namespace detlab {

/// How predictions are scattered around each ground truth.
///  - perfect: prediction 0 of every GT is the GT box with score 1 for its
///    class; the rest are jittered with lower scores.
///  - jitter: every prediction is a noisy copy with score loosely tracking
///    IoU; some anchors fall outside the GT.
///  - adversarial-ordering: each GT gets (p=0.9, IoU=0.7), (p=0.1, IoU=0.95)
///    and (p=0.2, IoU=0.5) predictions, which (0.5, 6) and (0.5, 2) rank
///    differently, plus low-score filler. Needs preds_per_gt >= 3.
enum class NoiseProfile { Perfect, Jitter, AdversarialOrdering };

std::string_view to_string(NoiseProfile profile);
std::optional<NoiseProfile> parse_noise_profile(std::string_view name);

struct SyntheticOptions {
  std::uint64_t seed = 0;
  std::size_t num_images = 1;
  std::size_t gts_per_image = 1;
  std::size_t preds_per_gt = 1;
  std::size_t num_classes = 4;
  NoiseProfile profile = NoiseProfile::Jitter;
};

/// Every GT occupies its own 128-pixel cell along the image's x axis and all
/// of its predictions anchor inside that cell, so no anchor can fall inside
/// two GTs. Identical options produce identical datasets.
DatasetFile generate_synthetic(const SyntheticOptions& options);

/// Haar-distributed orthogonal matrix via Gram-Schmidt on a Gaussian draw.
Matrix random_orthogonal(std::size_t n, Rng& rng);

/// (c_out, c_in, k, k) weight whose reshaped matrix is U diag(sigmas) V^T
/// for random orthogonal U, V. `sigmas` may be shorter than the matrix rank;
/// the remaining singular values are zero.
Tensor planted_spectrum_weight(std::size_t c_out, std::size_t c_in, std::size_t kernel,
                               std::span<const double> sigmas, std::uint64_t seed);

}  // namespace detlab

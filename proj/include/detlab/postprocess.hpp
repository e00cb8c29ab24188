#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "detlab/assignment.hpp"
#include "detlab/geometry.hpp"

namespace detlab {

struct Detection {
  BoundingBox box;
  double score = 0.0;
  std::size_t class_id = 0;
  std::size_t source_index = 0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

inline constexpr std::size_t kDefaultMaxDet = 300;

struct NmsParams {
  double iou_thresh = 0.7;
  double score_thresh = 0.001;
  std::size_t max_det = kDefaultMaxDet;
  bool class_agnostic = false;

  void validate() const;

  friend bool operator==(const NmsParams&, const NmsParams&) = default;
};

struct SelectParams {
  double score_thresh = 0.001;
  std::size_t max_det = kDefaultMaxDet;

  void validate() const;

  friend bool operator==(const SelectParams&, const SelectParams&) = default;
};

/// Greedy NMS. Returns indices into `dets` of the kept detections, highest
/// score first (ties: lower index first). Suppression uses IoU > iou_thresh,
/// restricted to the same class unless `class_agnostic` is set.
std::vector<std::size_t> nms(std::span<const Detection> dets, const NmsParams& params);

/// One detection per prediction: the highest class score and its class
/// (ties: lowest class id).
std::vector<Detection> decode_predictions(std::span<const Prediction> preds);

/// NMS-free selection: decode, threshold, keep the top max_det by score.
/// No suppression.
std::vector<Detection> nms_free_select(std::span<const Prediction> preds,
                                       const SelectParams& params);

struct TimingRow {
  std::string path;
  std::size_t images = 0;
  double mean_us = 0.0;
  double median_us = 0.0;
  double p99_us = 0.0;

  friend bool operator==(const TimingRow&, const TimingRow&) = default;
};

struct BenchReport {
  std::vector<TimingRow> rows;  // "nms" then "nms_free"
  bool outputs_identical = true;
  /// Kept source indices per image for each path, from the first repeat.
  std::vector<std::vector<std::size_t>> nms_kept;
  std::vector<std::vector<std::size_t>> select_kept;
};

/// Times both post-processing paths image by image. The NMS path covers
/// decoding plus suppression; the NMS-free path covers selection. Each sample
/// is one image in one repeat.
BenchReport bench_postprocess(std::span<const std::vector<Prediction>> images,
                              const NmsParams& nms_params, const SelectParams& select_params,
                              std::size_t repeats);

/// CSV with columns path,images,mean_us,median_us,p99_us.
std::string bench_csv(const BenchReport& report);

/// A scene of `count` near-identical detections of one object, used to
/// stress the suppression path.
std::vector<Prediction> duplicate_scene(std::size_t count, std::size_t num_classes,
                                        unsigned long long seed);

}  // namespace detlab

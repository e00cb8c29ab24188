#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "detlab/assignment.hpp"

namespace detlab {

struct ImageRecord {
  std::int64_t id = 0;
  std::vector<GroundTruthInstance> gts;
  std::vector<Prediction> preds;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

/// Detection dataset exchanged as JSON:
///   {"metadata": {"num_classes": N, "coordinate_frame": "pixels"},
///    "images": [{"id": 0,
///                "gts":   [{"box": [x1, y1, x2, y2], "class": c}],
///                "preds": [{"anchor": [x, y], "stride": s,
///                           "box": [x1, y1, x2, y2], "scores": [...]}]}]}
struct DatasetFile {
  std::size_t num_classes = 1;
  std::string coordinate_frame = "pixels";
  std::vector<ImageRecord> images;

  friend bool operator==(const DatasetFile&, const DatasetFile&) = default;
};

nlohmann::json dataset_to_json(const DatasetFile& dataset);

/// Validates every invariant (box ordering, class ids, score vector length
/// and range, positive strides); violations are ParseErrors naming the field.
DatasetFile dataset_from_json(const nlohmann::json& doc);

std::string serialize_dataset(const DatasetFile& dataset);
DatasetFile parse_dataset(std::string_view text, std::string_view source = "<dataset>");
DatasetFile read_dataset(const std::filesystem::path& path);

}  // namespace detlab

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "detlab/assignment.hpp"
#include "detlab/postprocess.hpp"

namespace detlab {

/// Run parameters. Defaults: one-to-many (alpha, beta) = (0.5, 6) with
/// top-10 candidates, and a consistent one-to-one head (r = 1). The
/// `inconsistent_o2o` pair (0.5, 2) is the comparison column of the
/// alignment report.
struct RunConfig {
  MetricParams o2m{0.5, 6.0};
  std::size_t topk = kDefaultTopK;
  MetricParams o2o{0.5, 6.0};
  MetricParams inconsistent_o2o{0.5, 2.0};
  NmsParams nms;
  SelectParams select;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  double rank_threshold = 0.5;  // singular values counted above this fraction of the largest
  std::string evaluator_cmd;    // shell template for `allocate`; "{stages}" is substituted

  /// Throws ConfigError naming the violated constraint.
  void validate() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

nlohmann::json config_to_json(const RunConfig& config);

/// Overlays the keys present in `doc` onto `base`. Unknown keys are
/// rejected as ConfigErrors.
RunConfig config_from_json(const nlohmann::json& doc, RunConfig base = {});

RunConfig read_config(const std::filesystem::path& path, RunConfig base = {});

}  // namespace detlab

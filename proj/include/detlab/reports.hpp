#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "detlab/assignment.hpp"
#include "detlab/blocks.hpp"
#include "detlab/config.hpp"
#include "detlab/dataset.hpp"
#include "detlab/postprocess.hpp"
#include "detlab/rank.hpp"

namespace detlab {

inline constexpr std::size_t kAlignmentKs[] = {1, 5, 10};

struct GapEntry {
  std::size_t gt = 0;
  std::optional<GapReport> gap;  // empty when the one-to-one head has no match
  double oracle = 0.0;

  friend bool operator==(const GapEntry&, const GapEntry&) = default;
};

struct ImageAssignment {
  std::int64_t id = 0;
  AssignmentResult o2m;
  AssignmentResult o2o;
  std::vector<GapEntry> gaps;

  friend bool operator==(const ImageAssignment&, const ImageAssignment&) = default;
};

/// Top-1/5/10 alignment of three one-to-one parameterisations against the
/// same one-to-many assignment.
struct AlignmentSummary {
  std::vector<AlignmentFrequency> configured;
  std::vector<AlignmentFrequency> consistent;    // o2o = o2m (r = 1)
  std::vector<AlignmentFrequency> inconsistent;  // config.inconsistent_o2o

  friend bool operator==(const AlignmentSummary&, const AlignmentSummary&) = default;
};

struct AssignReport {
  RunConfig config;
  std::vector<ImageAssignment> images;
  AlignmentSummary alignment;
  std::optional<double> consistency_ratio;
  std::size_t matched_gts = 0;
  std::optional<double> mean_gap;  // over matched GTs, configured params

  friend bool operator==(const AssignReport&, const AssignReport&) = default;
};

/// Per-image work fans out over `workers` threads; the report is identical
/// for any worker count. Images without predictions leave their GTs
/// unmatched.
AssignReport run_assign(const DatasetFile& dataset, const RunConfig& config, std::size_t workers);

nlohmann::json to_json(const AssignReport& report);
AssignReport assign_report_from_json(const nlohmann::json& doc);

/// Gap-only view of an assignment run: one row per GT with the closed form,
/// its brute-force oracle and the minimum over every possible one-to-one
/// pick among the one-to-many candidates.
struct GapRow {
  std::int64_t image_id = 0;
  std::size_t gt = 0;
  std::optional<GapReport> gap;
  double oracle = 0.0;
  std::optional<double> min_over_picks;

  friend bool operator==(const GapRow&, const GapRow&) = default;
};

struct GapSummary {
  std::vector<GapRow> rows;
  std::size_t matched_gts = 0;
  std::optional<double> mean_gap;
  double max_oracle_error = 0.0;

  friend bool operator==(const GapSummary&, const GapSummary&) = default;
};

GapSummary run_gap(const DatasetFile& dataset, const RunConfig& config, std::size_t workers);

/// Smallest gap over every choice of one-to-one pick among the one-to-many
/// positives of `gt_index`, evaluated with the brute-force oracle.
std::optional<double> min_gap_over_picks(const AssignmentResult& o2m, std::size_t gt_index);

nlohmann::json to_json(const GapSummary& summary);
GapSummary gap_summary_from_json(const nlohmann::json& doc);

/// Cost table rows, one per BlockSpec.
std::vector<BlockSpec> parse_cost_specs(const nlohmann::json& doc);
nlohmann::json cost_specs_to_json(const std::vector<BlockSpec>& specs);

struct CostRow {
  std::string kind;
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t c = 0;
  CostReport cost;
};

std::vector<CostRow> run_cost_table(const std::vector<BlockSpec>& specs);

/// Columns kind,H,W,C,macs,params,formula_macs,formula_params; formula
/// cells are empty where no closed form exists.
std::string cost_csv(const std::vector<CostRow>& rows);
std::vector<CostRow> parse_cost_csv(std::string_view csv);

std::vector<StageEntry> parse_stage_manifest(const nlohmann::json& doc);
nlohmann::json stage_manifest_to_json(const std::vector<StageEntry>& stages);

nlohmann::json to_json(const RankReport& report);
RankReport rank_report_from_json(const nlohmann::json& doc);
/// Columns stage_id,rank,normalized_rank.
std::string rank_csv(const RankReport& report);

nlohmann::json to_json(const AllocationTrace& trace);
AllocationTrace allocation_trace_from_json(const nlohmann::json& doc);

/// Scores keyed by stage set (order-insensitive), plus an optional baseline.
///   {"baseline": 44.4, "scores": [{"stages": [8], "score": 44.5}, ...]}
struct EvaluatorTable {
  std::optional<double> baseline;
  std::map<std::vector<int>, double> scores;  // keys sorted ascending
};

EvaluatorTable parse_evaluator_table(const nlohmann::json& doc);
StageEvaluator table_evaluator(EvaluatorTable table);

/// Runs `command_template` through the shell with "{stages}" replaced by the
/// comma-separated stage ids and reads the score from the last line of its
/// standard output.
StageEvaluator command_evaluator(std::string command_template);

std::vector<TimingRow> parse_bench_csv(std::string_view csv);

}  // namespace detlab

#include "detlab/reports.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <memory>
#include <sstream>

#include "detlab/error.hpp"
#include "detlab/format.hpp"
#include "detlab/json_io.hpp"
#include "detlab/parallel.hpp"

namespace detlab {

namespace {

using json_io::at;
using json_io::json;

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_double(const json& obj, std::string_view key, const std::string& where) {
  const json& v = json_io::field(obj, key, where);
  if (v.is_null()) return std::nullopt;
  return json_io::as_double(v, at(where, key));
}

std::size_t get_size(const json& obj, std::string_view key, const std::string& where) {
  return static_cast<std::size_t>(json_io::as_uint(json_io::field(obj, key, where), at(where, key)));
}

double get_double(const json& obj, std::string_view key, const std::string& where) {
  return json_io::as_double(json_io::field(obj, key, where), at(where, key));
}

json result_json(const AssignmentResult& r) {
  json per_gt = json::array();
  for (const auto& g : r.per_gt) {
    json positives = json::array();
    for (const auto& p : g.positives) {
      positives.push_back({{"pred", p.pred_index}, {"metric", p.metric}, {"target", p.target}});
    }
    per_gt.push_back({{"u_star", g.u_star}, {"m_star", g.m_star}, {"positives", std::move(positives)}});
  }
  return {{"num_predictions", r.num_predictions}, {"per_gt", std::move(per_gt)}};
}

AssignmentResult result_from_json(const json& doc, const std::string& where) {
  AssignmentResult r;
  r.num_predictions = get_size(doc, "num_predictions", where);
  const std::string gts_at = at(where, "per_gt");
  const json& gts = json_io::as_array(json_io::field(doc, "per_gt", where), gts_at);
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const std::string gw = at(gts_at, g);
    GtAssignment a;
    a.u_star = get_double(gts[g], "u_star", gw);
    a.m_star = get_double(gts[g], "m_star", gw);
    const std::string pos_at = at(gw, "positives");
    const json& pos = json_io::as_array(json_io::field(gts[g], "positives", gw), pos_at);
    for (std::size_t n = 0; n < pos.size(); ++n) {
      const std::string pw = at(pos_at, n);
      a.positives.push_back({get_size(pos[n], "pred", pw), get_double(pos[n], "metric", pw),
                             get_double(pos[n], "target", pw)});
    }
    r.per_gt.push_back(std::move(a));
  }
  return r;
}

json gap_json(const std::optional<GapReport>& gap) {
  if (!gap) return nullptr;
  return {{"gap", gap->gap},         {"o2o_index", gap->o2o_index},   {"t_o2o", gap->t_o2o},
          {"in_omega", gap->in_omega}, {"t_o2m_pick", gap->t_o2m_pick}, {"rest_sum", gap->rest_sum}};
}

std::optional<GapReport> gap_from_json(const json& v, const std::string& where) {
  if (v.is_null()) return std::nullopt;
  GapReport g;
  g.gap = get_double(v, "gap", where);
  g.o2o_index = get_size(v, "o2o_index", where);
  g.t_o2o = get_double(v, "t_o2o", where);
  g.in_omega = json_io::as_bool(json_io::field(v, "in_omega", where), at(where, "in_omega"));
  g.t_o2m_pick = get_double(v, "t_o2m_pick", where);
  g.rest_sum = get_double(v, "rest_sum", where);
  return g;
}

json freq_json(const std::vector<AlignmentFrequency>& freqs) {
  json out = json::array();
  for (const auto& f : freqs) {
    out.push_back({{"k", f.k}, {"hits", f.hits}, {"total", f.total}, {"frequency", f.frequency}});
  }
  return out;
}

std::vector<AlignmentFrequency> freq_from_json(const json& v, const std::string& where) {
  std::vector<AlignmentFrequency> out;
  json_io::as_array(v, where);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::string w = at(where, i);
    out.push_back({get_size(v[i], "k", w), get_size(v[i], "hits", w), get_size(v[i], "total", w),
                   get_double(v[i], "frequency", w)});
  }
  return out;
}

AssignmentResult assign_or_unmatched(const ImageRecord& image,
                                     AssignmentResult (*assign)(std::span<const Prediction>,
                                                                std::span<const GroundTruthInstance>,
                                                                const MetricParams&),
                                     const MetricParams& params) {
  if (image.preds.empty()) return {0, std::vector<GtAssignment>(image.gts.size())};
  return assign(image.preds, image.gts, params);
}

AssignmentResult o2m_or_unmatched(const ImageRecord& image, const RunConfig& config) {
  if (image.preds.empty()) return {0, std::vector<GtAssignment>(image.gts.size())};
  return assign_one_to_many(image.preds, image.gts, config.o2m, config.topk);
}

AssignmentResult o2o_assign(std::span<const Prediction> p, std::span<const GroundTruthInstance> g,
                            const MetricParams& m) {
  return assign_one_to_one(p, g, m);
}

void accumulate(std::vector<AlignmentFrequency>& total, const std::vector<AlignmentFrequency>& part) {
  if (total.empty()) {
    total = part;
    return;
  }
  for (std::size_t i = 0; i < total.size(); ++i) {
    total[i].hits += part[i].hits;
    total[i].total += part[i].total;
  }
}

void finalize(std::vector<AlignmentFrequency>& freqs) {
  for (auto& f : freqs) {
    f.frequency = f.total == 0 ? 0.0 : static_cast<double>(f.hits) / static_cast<double>(f.total);
  }
}

std::vector<AlignmentFrequency> empty_freqs() {
  std::vector<AlignmentFrequency> out;
  for (const auto k : kAlignmentKs) out.push_back({k, 0, 0, 0.0});
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::uint64_t parse_u64(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::ParseError, where + ": expected an integer, got '" + s + "'");
  }
}

double parse_f64(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::ParseError, where + ": expected a number, got '" + s + "'");
  }
}

std::vector<std::vector<std::string>> csv_rows(std::string_view csv, std::string_view header) {
  std::istringstream in{std::string(csv)};
  std::string line;
  if (!std::getline(in, line) || line != header) {
    throw Error(ErrorCode::ParseError, "csv line 1: expected header '" + std::string(header) + "'");
  }
  const std::size_t columns = split_csv_line(std::string(header)).size();
  std::vector<std::vector<std::string>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != columns) {
      throw Error(ErrorCode::ParseError, "csv line " + std::to_string(line_no) + ": expected " +
                                             std::to_string(columns) + " cells");
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace

AssignReport run_assign(const DatasetFile& dataset, const RunConfig& config, std::size_t workers) {
  config.validate();
  AssignReport report;
  report.config = config;
  report.config.workers = 1;  // the report does not depend on it
  report.consistency_ratio = consistency_ratio(config.o2m, config.o2o);
  report.images.resize(dataset.images.size());

  struct Partial {
    std::vector<AlignmentFrequency> configured, consistent, inconsistent;
  };
  std::vector<Partial> partials(dataset.images.size());

  parallel_for(dataset.images.size(), workers, [&](std::size_t i) {
    const ImageRecord& image = dataset.images[i];
    ImageAssignment& out = report.images[i];
    out.id = image.id;
    out.o2m = o2m_or_unmatched(image, config);
    out.o2o = assign_or_unmatched(image, o2o_assign, config.o2o);
    for (std::size_t g = 0; g < image.gts.size(); ++g) {
      GapEntry entry;
      entry.gt = g;
      if (!out.o2o.per_gt[g].positives.empty()) entry.gap = supervision_gap(out.o2m, out.o2o, g);
      entry.oracle = gap_oracle(target_vector(out.o2m, g), target_vector(out.o2o, g));
      out.gaps.push_back(entry);
    }
    const AssignmentResult consistent = assign_or_unmatched(image, o2o_assign, config.o2m);
    const AssignmentResult inconsistent = assign_or_unmatched(image, o2o_assign, config.inconsistent_o2o);
    partials[i].configured = alignment_frequency(out.o2m, out.o2o, kAlignmentKs);
    partials[i].consistent = alignment_frequency(out.o2m, consistent, kAlignmentKs);
    partials[i].inconsistent = alignment_frequency(out.o2m, inconsistent, kAlignmentKs);
  });

  report.alignment = {empty_freqs(), empty_freqs(), empty_freqs()};
  double gap_sum = 0.0;
  for (std::size_t i = 0; i < partials.size(); ++i) {
    accumulate(report.alignment.configured, partials[i].configured);
    accumulate(report.alignment.consistent, partials[i].consistent);
    accumulate(report.alignment.inconsistent, partials[i].inconsistent);
    for (const auto& entry : report.images[i].gaps) {
      if (!entry.gap) continue;
      ++report.matched_gts;
      gap_sum += entry.gap->gap;
    }
  }
  finalize(report.alignment.configured);
  finalize(report.alignment.consistent);
  finalize(report.alignment.inconsistent);
  if (report.matched_gts > 0) report.mean_gap = gap_sum / static_cast<double>(report.matched_gts);
  return report;
}

nlohmann::json to_json(const AssignReport& report) {
  json cfg = config_to_json(report.config);
  cfg.erase("workers");
  json images = json::array();
  for (const auto& img : report.images) {
    json gaps = json::array();
    for (const auto& g : img.gaps) {
      gaps.push_back({{"gt", g.gt}, {"gap", gap_json(g.gap)}, {"oracle", g.oracle}});
    }
    images.push_back({{"id", img.id},
                      {"o2m", result_json(img.o2m)},
                      {"o2o", result_json(img.o2o)},
                      {"gaps", std::move(gaps)}});
  }
  return {{"config", std::move(cfg)},
          {"consistency_ratio", opt_json(report.consistency_ratio)},
          {"alignment",
           {{"configured", freq_json(report.alignment.configured)},
            {"consistent", freq_json(report.alignment.consistent)},
            {"inconsistent", freq_json(report.alignment.inconsistent)}}},
          {"matched_gts", report.matched_gts},
          {"mean_gap", opt_json(report.mean_gap)},
          {"images", std::move(images)}};
}

AssignReport assign_report_from_json(const nlohmann::json& doc) {
  AssignReport report;
  report.config = config_from_json(json_io::field(doc, "config", ""));
  report.consistency_ratio = opt_double(doc, "consistency_ratio", "");
  const json& align = json_io::field(doc, "alignment", "");
  report.alignment.configured = freq_from_json(json_io::field(align, "configured", "/alignment"), "/alignment/configured");
  report.alignment.consistent = freq_from_json(json_io::field(align, "consistent", "/alignment"), "/alignment/consistent");
  report.alignment.inconsistent = freq_from_json(json_io::field(align, "inconsistent", "/alignment"), "/alignment/inconsistent");
  report.matched_gts = get_size(doc, "matched_gts", "");
  report.mean_gap = opt_double(doc, "mean_gap", "");
  const json& images = json_io::as_array(json_io::field(doc, "images", ""), "/images");
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string w = at("/images", i);
    ImageAssignment img;
    img.id = json_io::as_int(json_io::field(images[i], "id", w), at(w, "id"));
    img.o2m = result_from_json(json_io::field(images[i], "o2m", w), at(w, "o2m"));
    img.o2o = result_from_json(json_io::field(images[i], "o2o", w), at(w, "o2o"));
    const std::string gw = at(w, "gaps");
    const json& gaps = json_io::as_array(json_io::field(images[i], "gaps", w), gw);
    for (std::size_t g = 0; g < gaps.size(); ++g) {
      const std::string ew = at(gw, g);
      img.gaps.push_back({get_size(gaps[g], "gt", ew),
                          gap_from_json(json_io::field(gaps[g], "gap", ew), at(ew, "gap")),
                          get_double(gaps[g], "oracle", ew)});
    }
    report.images.push_back(std::move(img));
  }
  return report;
}

std::optional<double> min_gap_over_picks(const AssignmentResult& o2m, std::size_t gt_index) {
  if (o2m.num_predictions == 0) return std::nullopt;
  const std::vector<double> many = target_vector(o2m, gt_index);
  const double u_star = o2m.per_gt.at(gt_index).u_star;
  std::vector<double> one(many.size(), 0.0);
  std::optional<double> best;
  for (std::size_t pick = 0; pick < many.size(); ++pick) {
    one[pick] = u_star;
    const double a = gap_oracle(many, one);
    if (!best || a < *best) best = a;
    one[pick] = 0.0;
  }
  return best;
}

GapSummary run_gap(const DatasetFile& dataset, const RunConfig& config, std::size_t workers) {
  config.validate();
  std::vector<std::vector<GapRow>> per_image(dataset.images.size());
  parallel_for(dataset.images.size(), workers, [&](std::size_t i) {
    const ImageRecord& image = dataset.images[i];
    const AssignmentResult o2m = o2m_or_unmatched(image, config);
    const AssignmentResult o2o = assign_or_unmatched(image, o2o_assign, config.o2o);
    for (std::size_t g = 0; g < image.gts.size(); ++g) {
      GapRow row;
      row.image_id = image.id;
      row.gt = g;
      if (!o2o.per_gt[g].positives.empty()) row.gap = supervision_gap(o2m, o2o, g);
      row.oracle = gap_oracle(target_vector(o2m, g), target_vector(o2o, g));
      row.min_over_picks = min_gap_over_picks(o2m, g);
      per_image[i].push_back(row);
    }
  });

  GapSummary summary;
  double total = 0.0;
  for (auto& rows : per_image) {
    for (auto& row : rows) {
      if (row.gap) {
        ++summary.matched_gts;
        total += row.gap->gap;
        summary.max_oracle_error = std::max(summary.max_oracle_error, std::abs(row.gap->gap - row.oracle));
      }
      summary.rows.push_back(std::move(row));
    }
  }
  if (summary.matched_gts > 0) summary.mean_gap = total / static_cast<double>(summary.matched_gts);
  return summary;
}

nlohmann::json to_json(const GapSummary& summary) {
  json rows = json::array();
  for (const auto& r : summary.rows) {
    rows.push_back({{"image", r.image_id},
                    {"gt", r.gt},
                    {"gap", gap_json(r.gap)},
                    {"oracle", r.oracle},
                    {"min_over_picks", opt_json(r.min_over_picks)}});
  }
  return {{"matched_gts", summary.matched_gts},
          {"mean_gap", opt_json(summary.mean_gap)},
          {"max_oracle_error", summary.max_oracle_error},
          {"rows", std::move(rows)}};
}

GapSummary gap_summary_from_json(const nlohmann::json& doc) {
  GapSummary s;
  s.matched_gts = get_size(doc, "matched_gts", "");
  s.mean_gap = opt_double(doc, "mean_gap", "");
  s.max_oracle_error = get_double(doc, "max_oracle_error", "");
  const json& rows = json_io::as_array(json_io::field(doc, "rows", ""), "/rows");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::string w = at("/rows", i);
    GapRow r;
    r.image_id = json_io::as_int(json_io::field(rows[i], "image", w), at(w, "image"));
    r.gt = get_size(rows[i], "gt", w);
    r.gap = gap_from_json(json_io::field(rows[i], "gap", w), at(w, "gap"));
    r.oracle = get_double(rows[i], "oracle", w);
    r.min_over_picks = opt_double(rows[i], "min_over_picks", w);
    s.rows.push_back(r);
  }
  return s;
}

std::vector<BlockSpec> parse_cost_specs(const nlohmann::json& doc) {
  std::vector<BlockSpec> specs;
  try {
    const json& rows = json_io::as_array(json_io::field(doc, "specs", ""), "/specs");
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const std::string w = at("/specs", i);
      const json& row = rows[i];
      const std::string kind_name = json_io::as_string(json_io::field(row, "kind", w), at(w, "kind"));
      const auto kind = parse_block_kind(kind_name);
      if (!kind) throw Error(ErrorCode::ConfigError, "spec row " + std::to_string(i) + ": unknown kind '" + kind_name + "'");
      BlockSpec spec;
      spec.kind = *kind;
      spec.h = get_size(row, "H", w);
      spec.w = get_size(row, "W", w);
      spec.c = get_size(row, "C", w);
      if (const json* v = json_io::optional_field(row, "num_classes", w)) spec.num_classes = static_cast<std::size_t>(json_io::as_uint(*v, at(w, "num_classes")));
      if (const json* v = json_io::optional_field(row, "hidden", w)) spec.hidden = static_cast<std::size_t>(json_io::as_uint(*v, at(w, "hidden")));
      if (const json* v = json_io::optional_field(row, "n_psa", w)) spec.n_psa = static_cast<std::size_t>(json_io::as_uint(*v, at(w, "n_psa")));
      if (const json* v = json_io::optional_field(row, "large_kernel", w)) spec.large_kernel = static_cast<std::size_t>(json_io::as_uint(*v, at(w, "large_kernel")));
      if (const json* v = json_io::optional_field(row, "reparameterized", w)) spec.reparameterized = json_io::as_bool(*v, at(w, "reparameterized"));
      try {
        spec.validate();
      } catch (const Error& e) {
        throw Error(ErrorCode::ConfigError, "spec row " + std::to_string(i) + ": " + e.what());
      }
      specs.push_back(spec);
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ParseError) throw Error(ErrorCode::ConfigError, e.what());
    throw;
  }
  return specs;
}

nlohmann::json cost_specs_to_json(const std::vector<BlockSpec>& specs) {
  json rows = json::array();
  for (const auto& s : specs) {
    json row = {{"kind", std::string(to_string(s.kind))}, {"H", s.h}, {"W", s.w}, {"C", s.c},
                {"num_classes", s.num_classes}, {"n_psa", s.n_psa}, {"large_kernel", s.large_kernel},
                {"reparameterized", s.reparameterized}};
    if (s.hidden) row["hidden"] = *s.hidden;
    rows.push_back(std::move(row));
  }
  return {{"specs", std::move(rows)}};
}

std::vector<CostRow> run_cost_table(const std::vector<BlockSpec>& specs) {
  std::vector<CostRow> rows;
  rows.reserve(specs.size());
  for (const auto& s : specs) rows.push_back({std::string(to_string(s.kind)), s.h, s.w, s.c, count_cost(s)});
  return rows;
}

std::string cost_csv(const std::vector<CostRow>& rows) {
  std::ostringstream out;
  out << "kind,H,W,C,macs,params,formula_macs,formula_params\n";
  for (const auto& r : rows) {
    out << r.kind << ',' << r.h << ',' << r.w << ',' << r.c << ',' << r.cost.macs << ','
        << r.cost.params << ',';
    if (r.cost.formula_macs) out << *r.cost.formula_macs;
    out << ',';
    if (r.cost.formula_params) out << *r.cost.formula_params;
    out << '\n';
  }
  return out.str();
}

std::vector<CostRow> parse_cost_csv(std::string_view csv) {
  std::vector<CostRow> rows;
  std::size_t n = 0;
  for (const auto& cells : csv_rows(csv, "kind,H,W,C,macs,params,formula_macs,formula_params")) {
    const std::string where = "csv row " + std::to_string(++n);
    CostRow r;
    r.kind = cells[0];
    r.h = parse_u64(cells[1], where);
    r.w = parse_u64(cells[2], where);
    r.c = parse_u64(cells[3], where);
    r.cost.macs = parse_u64(cells[4], where);
    r.cost.params = parse_u64(cells[5], where);
    if (!cells[6].empty()) r.cost.formula_macs = parse_u64(cells[6], where);
    if (!cells[7].empty()) r.cost.formula_params = parse_u64(cells[7], where);
    rows.push_back(r);
  }
  return rows;
}

std::vector<StageEntry> parse_stage_manifest(const nlohmann::json& doc) {
  const json& stages = json_io::as_array(json_io::field(doc, "stages", ""), "/stages");
  std::vector<StageEntry> out;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const std::string w = at("/stages", i);
    StageEntry e;
    e.stage_id = static_cast<int>(json_io::as_int(json_io::field(stages[i], "stage_id", w), at(w, "stage_id")));
    e.weight_name = json_io::as_string(json_io::field(stages[i], "weight", w), at(w, "weight"));
    e.c_out = get_size(stages[i], "c_out", w);
    out.push_back(std::move(e));
  }
  return out;
}

nlohmann::json stage_manifest_to_json(const std::vector<StageEntry>& stages) {
  json rows = json::array();
  for (const auto& s : stages) rows.push_back({{"stage_id", s.stage_id}, {"weight", s.weight_name}, {"c_out", s.c_out}});
  return {{"stages", std::move(rows)}};
}

nlohmann::json to_json(const RankReport& report) {
  json stages = json::array();
  for (const auto& s : report.stages) {
    stages.push_back({{"stage_id", s.stage_id},
                      {"c_out", s.c_out},
                      {"numerical_rank", s.rank},
                      {"normalized_rank", s.normalized_rank}});
  }
  return {{"threshold_ratio", report.threshold_ratio}, {"stages", std::move(stages)}};
}

RankReport rank_report_from_json(const nlohmann::json& doc) {
  RankReport report;
  report.threshold_ratio = get_double(doc, "threshold_ratio", "");
  const json& stages = json_io::as_array(json_io::field(doc, "stages", ""), "/stages");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const std::string w = at("/stages", i);
    StageRank s;
    s.stage_id = static_cast<int>(json_io::as_int(json_io::field(stages[i], "stage_id", w), at(w, "stage_id")));
    s.c_out = get_size(stages[i], "c_out", w);
    s.rank = get_size(stages[i], "numerical_rank", w);
    s.normalized_rank = get_double(stages[i], "normalized_rank", w);
    if (s.c_out == 0) throw Error(ErrorCode::ParseError, "field " + at(w, "c_out") + ": must be positive");
    report.stages.push_back(s);
  }
  return report;
}

std::string rank_csv(const RankReport& report) {
  std::ostringstream out;
  out << "stage_id,rank,normalized_rank\n";
  for (const auto& s : report.stages) {
    out << s.stage_id << ',' << s.rank << ',' << format_double(s.normalized_rank) << '\n';
  }
  return out.str();
}

nlohmann::json to_json(const AllocationTrace& trace) {
  json steps = json::array();
  for (const auto& s : trace.steps) {
    steps.push_back({{"stage_id", s.stage_id}, {"score", s.score}, {"accepted", s.accepted}});
  }
  return {{"baseline_score", trace.baseline_score},
          {"visit_order", trace.visit_order},
          {"steps", std::move(steps)},
          {"final_stages", trace.final_stages}};
}

AllocationTrace allocation_trace_from_json(const nlohmann::json& doc) {
  AllocationTrace t;
  t.baseline_score = get_double(doc, "baseline_score", "");
  auto ints = [&](std::string_view key) {
    std::vector<int> out;
    const std::string w = at("", key);
    const json& arr = json_io::as_array(json_io::field(doc, key, ""), w);
    for (std::size_t i = 0; i < arr.size(); ++i) out.push_back(static_cast<int>(json_io::as_int(arr[i], at(w, i))));
    return out;
  };
  t.visit_order = ints("visit_order");
  t.final_stages = ints("final_stages");
  const json& steps = json_io::as_array(json_io::field(doc, "steps", ""), "/steps");
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const std::string w = at("/steps", i);
    t.steps.push_back({static_cast<int>(json_io::as_int(json_io::field(steps[i], "stage_id", w), at(w, "stage_id"))),
                       get_double(steps[i], "score", w),
                       json_io::as_bool(json_io::field(steps[i], "accepted", w), at(w, "accepted"))});
  }
  return t;
}

EvaluatorTable parse_evaluator_table(const nlohmann::json& doc) {
  EvaluatorTable table;
  if (const json* b = json_io::optional_field(doc, "baseline", "")) table.baseline = json_io::as_double(*b, "/baseline");
  const json& scores = json_io::as_array(json_io::field(doc, "scores", ""), "/scores");
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const std::string w = at("/scores", i);
    const json& stages = json_io::as_array(json_io::field(scores[i], "stages", w), at(w, "stages"));
    std::vector<int> key;
    for (std::size_t s = 0; s < stages.size(); ++s) {
      key.push_back(static_cast<int>(json_io::as_int(stages[s], at(at(w, "stages"), s))));
    }
    std::sort(key.begin(), key.end());
    table.scores[key] = get_double(scores[i], "score", w);
  }
  return table;
}

StageEvaluator table_evaluator(EvaluatorTable table) {
  return [table = std::move(table)](std::span<const int> stages) {
    std::vector<int> key(stages.begin(), stages.end());
    std::sort(key.begin(), key.end());
    const auto it = table.scores.find(key);
    if (it == table.scores.end()) {
      std::string listed;
      for (const int s : key) listed += (listed.empty() ? "" : ",") + std::to_string(s);
      throw Error(ErrorCode::ConfigError, "evaluator table has no score for stages {" + listed + "}");
    }
    return it->second;
  };
}

StageEvaluator command_evaluator(std::string command_template) {
  return [tmpl = std::move(command_template)](std::span<const int> stages) {
    std::string listed;
    for (const int s : stages) listed += (listed.empty() ? "" : ",") + std::to_string(s);
    std::string command = tmpl;
    for (std::size_t pos = command.find("{stages}"); pos != std::string::npos;
         pos = command.find("{stages}", pos + listed.size())) {
      command.replace(pos, 8, listed);
    }
    std::unique_ptr<FILE, int (*)(FILE*)> pipe(popen(command.c_str(), "r"), pclose);
    if (!pipe) throw Error(ErrorCode::ConfigError, "cannot run evaluator command: " + command);
    std::string output;
    std::array<char, 256> buf{};
    while (std::fgets(buf.data(), static_cast<int>(buf.size()), pipe.get())) output += buf.data();
    const int status = pclose(pipe.release());
    if (status != 0) {
      throw Error(ErrorCode::ConfigError, "evaluator command failed (status " + std::to_string(status) + "): " + command);
    }
    while (!output.empty() && (output.back() == '\n' || output.back() == '\r' || output.back() == ' ')) output.pop_back();
    const std::size_t nl = output.rfind('\n');
    const std::string last = nl == std::string::npos ? output : output.substr(nl + 1);
    return parse_f64(last, "evaluator output");
  };
}

std::vector<TimingRow> parse_bench_csv(std::string_view csv) {
  std::vector<TimingRow> rows;
  std::size_t n = 0;
  for (const auto& cells : csv_rows(csv, "path,images,mean_us,median_us,p99_us")) {
    const std::string where = "csv row " + std::to_string(++n);
    rows.push_back({cells[0], static_cast<std::size_t>(parse_u64(cells[1], where)),
                    parse_f64(cells[2], where), parse_f64(cells[3], where), parse_f64(cells[4], where)});
  }
  return rows;
}

}  // namespace detlab

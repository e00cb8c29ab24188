#include "detlab/config.hpp"

#include <initializer_list>
#include <string_view>

#include "detlab/error.hpp"
#include "detlab/json_io.hpp"

namespace detlab {

namespace {

using json_io::at;
using json_io::json;

void reject_unknown(const json& obj, const std::string& where,
                    std::initializer_list<std::string_view> known) {
  if (!obj.is_object()) throw Error(ErrorCode::ConfigError, "config " + where + ": expected an object");
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const auto k : known) ok = ok || key == k;
    if (!ok) throw Error(ErrorCode::ConfigError, "config " + at(where, key) + ": unknown key");
  }
}

json metric_json(const MetricParams& p) { return {{"alpha", p.alpha}, {"beta", p.beta}}; }

void read_metric(const json& obj, const std::string& where, MetricParams& p,
                 std::size_t* topk = nullptr) {
  if (topk) {
    reject_unknown(obj, where, {"alpha", "beta", "topk"});
  } else {
    reject_unknown(obj, where, {"alpha", "beta"});
  }
  if (const json* v = json_io::optional_field(obj, "alpha", where)) p.alpha = json_io::as_double(*v, at(where, "alpha"));
  if (const json* v = json_io::optional_field(obj, "beta", where)) p.beta = json_io::as_double(*v, at(where, "beta"));
  if (topk) {
    if (const json* v = json_io::optional_field(obj, "topk", where)) {
      *topk = static_cast<std::size_t>(json_io::as_uint(*v, at(where, "topk")));
    }
  }
}

}  // namespace

void RunConfig::validate() const {
  auto prefixed = [](const char* what, auto&& check) {
    try {
      check();
    } catch (const Error& e) {
      throw Error(ErrorCode::ConfigError, std::string(what) + ": " + e.what());
    }
  };
  prefixed("o2m", [&] { o2m.validate(); });
  prefixed("o2o", [&] { o2o.validate(); });
  prefixed("inconsistent_o2o", [&] { inconsistent_o2o.validate(); });
  prefixed("nms", [&] { nms.validate(); });
  prefixed("select", [&] { select.validate(); });
  if (topk == 0) throw Error(ErrorCode::ConfigError, "o2m: topk must be at least 1");
  if (workers == 0) throw Error(ErrorCode::ConfigError, "workers must be at least 1");
  if (!(rank_threshold > 0.0 && rank_threshold < 1.0)) {
    throw Error(ErrorCode::ConfigError, "rank: threshold_ratio must lie in (0, 1)");
  }
}

nlohmann::json config_to_json(const RunConfig& config) {
  json o2m = metric_json(config.o2m);
  o2m["topk"] = config.topk;
  return {{"o2m", std::move(o2m)},
          {"o2o", metric_json(config.o2o)},
          {"inconsistent_o2o", metric_json(config.inconsistent_o2o)},
          {"nms",
           {{"iou_thresh", config.nms.iou_thresh},
            {"score_thresh", config.nms.score_thresh},
            {"max_det", config.nms.max_det},
            {"class_agnostic", config.nms.class_agnostic}}},
          {"select", {{"score_thresh", config.select.score_thresh}, {"max_det", config.select.max_det}}},
          {"seed", config.seed},
          {"workers", config.workers},
          {"rank", {{"threshold_ratio", config.rank_threshold}}},
          {"allocate", {{"evaluator_cmd", config.evaluator_cmd}}}};
}

RunConfig config_from_json(const nlohmann::json& doc, RunConfig base) {
  try {
    reject_unknown(doc, "", {"o2m", "o2o", "inconsistent_o2o", "nms", "select", "seed", "workers", "rank", "allocate"});
    if (const json* v = json_io::optional_field(doc, "o2m", "")) read_metric(*v, "/o2m", base.o2m, &base.topk);
    if (const json* v = json_io::optional_field(doc, "o2o", "")) read_metric(*v, "/o2o", base.o2o);
    if (const json* v = json_io::optional_field(doc, "inconsistent_o2o", "")) {
      read_metric(*v, "/inconsistent_o2o", base.inconsistent_o2o);
    }
    if (const json* nms = json_io::optional_field(doc, "nms", "")) {
      reject_unknown(*nms, "/nms", {"iou_thresh", "score_thresh", "max_det", "class_agnostic"});
      if (const json* v = json_io::optional_field(*nms, "iou_thresh", "/nms")) base.nms.iou_thresh = json_io::as_double(*v, "/nms/iou_thresh");
      if (const json* v = json_io::optional_field(*nms, "score_thresh", "/nms")) base.nms.score_thresh = json_io::as_double(*v, "/nms/score_thresh");
      if (const json* v = json_io::optional_field(*nms, "max_det", "/nms")) base.nms.max_det = static_cast<std::size_t>(json_io::as_uint(*v, "/nms/max_det"));
      if (const json* v = json_io::optional_field(*nms, "class_agnostic", "/nms")) base.nms.class_agnostic = json_io::as_bool(*v, "/nms/class_agnostic");
    }
    if (const json* sel = json_io::optional_field(doc, "select", "")) {
      reject_unknown(*sel, "/select", {"score_thresh", "max_det"});
      if (const json* v = json_io::optional_field(*sel, "score_thresh", "/select")) base.select.score_thresh = json_io::as_double(*v, "/select/score_thresh");
      if (const json* v = json_io::optional_field(*sel, "max_det", "/select")) base.select.max_det = static_cast<std::size_t>(json_io::as_uint(*v, "/select/max_det"));
    }
    if (const json* v = json_io::optional_field(doc, "seed", "")) base.seed = json_io::as_uint(*v, "/seed");
    if (const json* v = json_io::optional_field(doc, "workers", "")) base.workers = static_cast<std::size_t>(json_io::as_uint(*v, "/workers"));
    if (const json* rank = json_io::optional_field(doc, "rank", "")) {
      reject_unknown(*rank, "/rank", {"threshold_ratio"});
      if (const json* v = json_io::optional_field(*rank, "threshold_ratio", "/rank")) base.rank_threshold = json_io::as_double(*v, "/rank/threshold_ratio");
    }
    if (const json* alloc = json_io::optional_field(doc, "allocate", "")) {
      reject_unknown(*alloc, "/allocate", {"evaluator_cmd"});
      if (const json* v = json_io::optional_field(*alloc, "evaluator_cmd", "/allocate")) base.evaluator_cmd = json_io::as_string(*v, "/allocate/evaluator_cmd");
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ParseError) throw Error(ErrorCode::ConfigError, e.what());
    throw;
  }
  return base;
}

RunConfig read_config(const std::filesystem::path& path, RunConfig base) {
  try {
    return config_from_json(json_io::parse_file(path), base);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ConfigError) throw Error(e.code(), path.string() + ": " + e.what());
    throw;
  }
}

}  // namespace detlab

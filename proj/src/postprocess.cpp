#include "detlab/postprocess.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <sstream>

#include "detlab/error.hpp"
#include "detlab/format.hpp"
#include "detlab/random.hpp"

namespace detlab {

namespace {

void check_thresholds(double score_thresh, std::size_t max_det) {
  if (!(score_thresh >= 0.0 && score_thresh <= 1.0)) {
    throw Error(ErrorCode::ConfigError, "score_thresh must lie in [0, 1]");
  }
  if (max_det == 0) throw Error(ErrorCode::ConfigError, "max_det must be at least 1");
}

template <typename ScoreOf>
void sort_by_score(std::vector<std::size_t>& order, ScoreOf score_of) {
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double sa = score_of(a);
    const double sb = score_of(b);
    if (sa != sb) return sa > sb;
    return a < b;
  });
}

struct Stats {
  double mean = 0.0;
  double median = 0.0;
  double p99 = 0.0;
};

// Nearest-rank percentiles over the sorted samples.
Stats summarize(std::vector<double> samples) {
  Stats stats;
  if (samples.empty()) return stats;
  std::sort(samples.begin(), samples.end());
  stats.mean = std::accumulate(samples.begin(), samples.end(), 0.0) /
               static_cast<double>(samples.size());
  const std::size_t n = samples.size();
  stats.median = n % 2 == 1 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
  const std::size_t rank = (99 * n + 99) / 100;  // ceil(0.99 n)
  stats.p99 = samples[std::max<std::size_t>(rank, 1) - 1];
  return stats;
}

}  // namespace

void NmsParams::validate() const {
  if (!(iou_thresh > 0.0 && iou_thresh < 1.0)) {
    throw Error(ErrorCode::ConfigError, "iou_thresh must lie in (0, 1)");
  }
  check_thresholds(score_thresh, max_det);
}

void SelectParams::validate() const { check_thresholds(score_thresh, max_det); }

std::vector<std::size_t> nms(std::span<const Detection> dets, const NmsParams& params) {
  params.validate();
  std::vector<std::size_t> order;
  order.reserve(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (dets[i].score >= params.score_thresh) order.push_back(i);
  }
  sort_by_score(order, [&](std::size_t i) { return dets[i].score; });

  std::vector<double> areas(order.size());
  for (std::size_t n = 0; n < order.size(); ++n) areas[n] = dets[order[n]].box.area();

  std::vector<bool> suppressed(order.size(), false);
  std::vector<std::size_t> kept;
  for (std::size_t n = 0; n < order.size() && kept.size() < params.max_det; ++n) {
    if (suppressed[n]) continue;
    const Detection& top = dets[order[n]];
    kept.push_back(order[n]);
    for (std::size_t m = n + 1; m < order.size(); ++m) {
      if (suppressed[m]) continue;
      const Detection& other = dets[order[m]];
      if (!params.class_agnostic && other.class_id != top.class_id) continue;
      const double iw = std::min(top.box.x_max, other.box.x_max) -
                        std::max(top.box.x_min, other.box.x_min);
      if (iw <= 0.0) continue;
      const double ih = std::min(top.box.y_max, other.box.y_max) -
                        std::max(top.box.y_min, other.box.y_min);
      if (ih <= 0.0) continue;
      const double inter = iw * ih;
      const double uni = areas[n] + areas[m] - inter;
      if (uni > 0.0 && inter / uni > params.iou_thresh) suppressed[m] = true;
    }
  }
  return kept;
}

std::vector<Detection> decode_predictions(std::span<const Prediction> preds) {
  std::vector<Detection> dets;
  dets.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& scores = preds[i].scores;
    if (scores.empty()) {
      throw Error(ErrorCode::LengthMismatch, "prediction " + std::to_string(i) + " has no scores");
    }
    const auto best = std::max_element(scores.begin(), scores.end());
    dets.push_back({preds[i].box, *best, static_cast<std::size_t>(best - scores.begin()), i});
  }
  return dets;
}

std::vector<Detection> nms_free_select(std::span<const Prediction> preds,
                                       const SelectParams& params) {
  params.validate();
  std::vector<Detection> decoded = decode_predictions(preds);
  std::vector<std::size_t> order;
  order.reserve(decoded.size());
  for (std::size_t i = 0; i < decoded.size(); ++i) {
    if (decoded[i].score >= params.score_thresh) order.push_back(i);
  }
  const std::size_t keep = std::min(params.max_det, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (decoded[a].score != decoded[b].score) {
                        return decoded[a].score > decoded[b].score;
                      }
                      return a < b;
                    });
  std::vector<Detection> out;
  out.reserve(keep);
  for (std::size_t n = 0; n < keep; ++n) out.push_back(decoded[order[n]]);
  return out;
}

BenchReport bench_postprocess(std::span<const std::vector<Prediction>> images,
                              const NmsParams& nms_params, const SelectParams& select_params,
                              std::size_t repeats) {
  if (repeats < 3) throw Error(ErrorCode::ConfigError, "bench requires at least 3 repeats");
  nms_params.validate();
  select_params.validate();

  using Clock = std::chrono::steady_clock;
  std::vector<double> nms_samples;
  std::vector<double> select_samples;
  nms_samples.reserve(images.size() * repeats);
  select_samples.reserve(images.size() * repeats);

  BenchReport report;
  for (std::size_t rep = 0; rep < repeats; ++rep) {
    std::vector<std::vector<std::size_t>> nms_kept;
    std::vector<std::vector<std::size_t>> select_kept;
    for (const auto& preds : images) {
      const auto t0 = Clock::now();
      const std::vector<Detection> dets = decode_predictions(preds);
      std::vector<std::size_t> kept = nms(dets, nms_params);
      const auto t1 = Clock::now();
      const std::vector<Detection> selected = nms_free_select(preds, select_params);
      const auto t2 = Clock::now();

      nms_samples.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
      select_samples.push_back(std::chrono::duration<double, std::micro>(t2 - t1).count());

      for (auto& k : kept) k = dets[k].source_index;
      nms_kept.push_back(std::move(kept));
      std::vector<std::size_t> sel;
      sel.reserve(selected.size());
      for (const auto& d : selected) sel.push_back(d.source_index);
      select_kept.push_back(std::move(sel));
    }
    if (rep == 0) {
      report.nms_kept = std::move(nms_kept);
      report.select_kept = std::move(select_kept);
    } else if (nms_kept != report.nms_kept || select_kept != report.select_kept) {
      report.outputs_identical = false;
    }
  }

  const Stats nms_stats = summarize(std::move(nms_samples));
  const Stats select_stats = summarize(std::move(select_samples));
  report.rows.push_back({"nms", images.size(), nms_stats.mean, nms_stats.median, nms_stats.p99});
  report.rows.push_back(
      {"nms_free", images.size(), select_stats.mean, select_stats.median, select_stats.p99});
  return report;
}

std::string bench_csv(const BenchReport& report) {
  std::ostringstream out;
  out << "path,images,mean_us,median_us,p99_us\n";
  for (const auto& row : report.rows) {
    out << row.path << ',' << row.images << ',' << format_double(row.mean_us) << ','
        << format_double(row.median_us) << ',' << format_double(row.p99_us) << '\n';
  }
  return out.str();
}

std::vector<Prediction> duplicate_scene(std::size_t count, std::size_t num_classes,
                                        unsigned long long seed) {
  if (num_classes == 0) throw Error(ErrorCode::ConfigError, "num_classes must be positive");
  Rng rng(seed);
  std::vector<Prediction> preds;
  preds.reserve(count);
  const BoundingBox object{100.0, 100.0, 200.0, 200.0};
  for (std::size_t i = 0; i < count; ++i) {
    Prediction p;
    const double dx = rng.uniform(-1.0, 1.0);
    const double dy = rng.uniform(-1.0, 1.0);
    p.box = object.translated(dx, dy);
    p.anchor = {150.0 + dx, 150.0 + dy, 8.0};
    p.scores.assign(num_classes, 0.0);
    p.scores[0] = rng.uniform(0.5, 1.0);
    preds.push_back(std::move(p));
  }
  return preds;
}

}  // namespace detlab

// Acceptance checks AC1..AC10. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails.

#include <Eigen/SVD>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "detlab/archive.hpp"
#include "detlab/blocks.hpp"
#include "detlab/cli.hpp"
#include "detlab/config.hpp"
#include "detlab/dataset.hpp"
#include "detlab/json_io.hpp"
#include "detlab/postprocess.hpp"
#include "detlab/rank.hpp"
#include "detlab/reports.hpp"
#include "detlab/synthetic.hpp"
#include "support/instances.hpp"
#include "support/oracles.hpp"

using namespace detlab;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// AC1 -----------------------------------------------------------------------
Outcome consistent_argmax() {
  const auto t0 = Clock::now();
  Rng rng(101);
  const MetricParams base{0.5, 6.0};
  long cases = 0, agree = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const auto inst = testing_support::random_instance(rng, 1, 1 + rng.index(40));
    const auto many = assign_one_to_many(inst.preds, inst.gts, base);
    const auto& omega = many.per_gt[0].positives;
    for (const double r : {0.5, 1.0, 2.0, 3.0}) {
      const auto one = assign_one_to_one(inst.preds, inst.gts, {r * base.alpha, r * base.beta});
      const auto& pick = one.per_gt[0].positives;
      ++cases;
      const bool same = omega.empty() ? pick.empty() : (!pick.empty() && pick[0].pred_index == omega[0].pred_index);
      agree += same;
    }
  }
  const double secs = seconds_since(t0);
  return {agree == cases && secs < 10.0,
          fmt("%ld/%ld argmax matches over 10000 instances x r in {0.5,1,2,3}, %.2fs", agree, cases, secs)};
}

// AC2 -----------------------------------------------------------------------
Outcome gap_checks() {
  Rng rng(202);
  double worst = 0.0;
  long instances = 0, minimal = 0, skipped = 0;
  while (instances < 10000) {
    const auto inst = testing_support::random_instance(rng, 1, 1 + rng.index(30));
    const auto many = assign_one_to_many(inst.preds, inst.gts, {});
    const auto one = assign_one_to_one(inst.preds, inst.gts, {});
    if (one.per_gt[0].positives.empty()) {
      ++skipped;
      continue;
    }
    ++instances;
    const auto t_many = target_vector(many, 0);
    const GapReport g = supervision_gap(many, one, 0);
    worst = std::max(worst, std::abs(g.gap - gap_oracle(t_many, target_vector(one, 0))));

    // every possible one-to-one pick, scored by the oracle
    const double u_star = many.per_gt[0].u_star;
    std::vector<double> gaps(t_many.size());
    std::vector<double> t_one(t_many.size(), 0.0);
    for (std::size_t pick = 0; pick < t_many.size(); ++pick) {
      t_one[pick] = u_star;
      gaps[pick] = gap_oracle(t_many, t_one);
      t_one[pick] = 0.0;
    }
    const double best = *std::min_element(gaps.begin(), gaps.end());
    const double t_top = *std::max_element(t_many.begin(), t_many.end());
    bool ok = true;
    for (std::size_t pick = 0; pick < gaps.size(); ++pick) {
      const bool minimizer = gaps[pick] <= best + 1e-12;
      const bool top = t_many[pick] == t_top && t_top > 0.0;
      ok = ok && (minimizer == top);
    }
    minimal += ok;
  }
  return {worst <= 1e-12 && minimal == instances,
          fmt("max |closed form - oracle| = %.3g over %ld instances; minimum-gap pick is the top-target "
              "member of the positive set in %ld/%ld (%ld draws without a one-to-one match skipped)",
              worst, instances, minimal, instances, skipped)};
}

// AC3 -----------------------------------------------------------------------
bool has_exclusions(const DatasetFile& d, const MetricParams& p) {
  for (const auto& img : d.images) {
    const auto one = assign_one_to_one(img.preds, img.gts, p);
    for (std::size_t g = 0; g < img.gts.size(); ++g) {
      const auto solo = assign_one_to_one(img.preds, std::span(img.gts).subspan(g, 1), p);
      if (one.per_gt[g].positives != solo.per_gt[0].positives) return true;
    }
  }
  return false;
}

Outcome alignment() {
  SyntheticOptions o;
  o.num_images = 200;
  o.gts_per_image = 4;
  o.preds_per_gt = 8;
  bool ok = true;
  std::string detail;
  for (const auto profile : {NoiseProfile::Perfect, NoiseProfile::Jitter}) {
    o.profile = profile;
    o.seed = 303;
    const DatasetFile d = generate_synthetic(o);
    const bool excl = has_exclusions(d, {});
    const AssignReport r = run_assign(d, {}, 1);
    const auto& c = r.alignment.consistent;
    const bool all_one = c[0].frequency == 1.0 && c[1].frequency == 1.0 && c[2].frequency == 1.0;
    ok = ok && !excl && all_one;
    detail += fmt("%s consistent top-1/5/10 = %g/%g/%g; ", std::string(to_string(profile)).c_str(), c[0].frequency,
                  c[1].frequency, c[2].frequency);
  }
  o.profile = NoiseProfile::AdversarialOrdering;
  o.preds_per_gt = 5;
  const AssignReport adv = run_assign(generate_synthetic(o), {}, 1);
  const auto& inc = adv.alignment.inconsistent;
  ok = ok && inc[0].frequency < 1.0;
  detail += fmt("adversarial inconsistent (0.5,2) top-1/5/10 = %.3f/%.3f/%.3f", inc[0].frequency, inc[1].frequency,
                inc[2].frequency);
  return {ok, detail};
}

// AC4 -----------------------------------------------------------------------
Outcome cost_formulas() {
  const auto t0 = Clock::now();
  long checked = 0, closed_ok = 0;
  for (std::size_t h = 8; h <= 128; h += 2) {
    for (std::size_t w = 8; w <= 128; w += 2) {
      for (std::size_t c = 8; c <= 64; ++c) {
        BlockSpec s;
        s.h = h;
        s.w = w;
        s.c = c;
        const std::uint64_t hw = h * w, cc = c;
        s.kind = BlockKind::StdDownsample;
        const CostReport a = count_cost(s);
        s.kind = BlockKind::ScdDownsample;
        const CostReport b = count_cost(s);
        checked += 2;
        closed_ok += (a.macs * 2 == 9 * hw * cc * cc && a.params == 18 * cc * cc);
        closed_ok += (b.macs * 2 == 4 * hw * cc * cc + 9 * hw * cc && b.params == 2 * cc * cc + 18 * cc);
      }
    }
  }

  long forwards = 0, forward_ok = 0;
  for (const std::size_t h : {8, 16, 64, 128}) {
    for (const std::size_t w : {8, 16, 64, 128}) {
      for (const std::size_t c : {8, 32, 64}) {
        for (const auto kind : {BlockKind::StdDownsample, BlockKind::ScdDownsample}) {
          BlockSpec s;
          s.kind = kind;
          s.h = h;
          s.w = w;
          s.c = c;
          Tensor x(s.input_shape(), 0.5);
          MacCounter counter;
          forward_block(x, s, make_block_weights(s, h * 1000 + w * 10 + c), &counter);
          ++forwards;
          forward_ok += counter.macs == count_cost(s).macs;
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  return {closed_ok == checked && forward_ok == forwards && secs < 60.0,
          fmt("closed forms exact for %ld/%ld rows (even H,W in [8,128], C in [8,64]); instrumented forward "
              "equal on %ld/%ld; %.1fs",
              closed_ok, checked, forward_ok, forwards, secs)};
}

// AC5 -----------------------------------------------------------------------
Outcome reparameterization() {
  Rng rng(505);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    BlockSpec s;
    s.kind = BlockKind::LkCib;
    s.c = 1 + rng.index(16);
    s.h = 1 + rng.index(16);
    s.w = 1 + rng.index(16);
    s.reparameterized = false;
    const BlockWeights w = make_block_weights(s, 5000 + trial);
    Tensor x(s.input_shape());
    for (double& v : x.data()) v = rng.uniform(-2, 2);
    const auto [fs_, fw] = reparameterize_lk_cib(s, w);
    worst = std::max(worst, max_abs_diff(forward_block(x, s, w), forward_block(x, fs_, fw)));
  }
  return {worst < 1e-9, fmt("max |fused - dual-branch| = %.3g over 1000 random blocks (C, H, W <= 16)", worst)};
}

// AC6 -----------------------------------------------------------------------
Outcome nms_oracle() {
  Rng rng(606);
  long nms_ok = 0, sel_ok = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = rng.index(201), classes = 1 + rng.index(3);
    std::vector<Prediction> preds;
    for (std::size_t i = 0; i < n; ++i) {
      const double x = rng.uniform(0, 80), y = rng.uniform(0, 80);
      Prediction p{{x, y}, {x, y, x + rng.uniform(1, 40), y + rng.uniform(1, 40)}, {}};
      for (std::size_t c = 0; c < classes; ++c) p.scores.push_back(std::round(rng.uniform() * 40) / 40);
      preds.push_back(p);
    }
    NmsParams np;
    np.iou_thresh = rng.uniform(0.05, 0.95);
    np.score_thresh = rng.uniform(0, 0.2);
    np.max_det = 1 + rng.index(250);
    np.class_agnostic = rng.uniform() < 0.3;
    const auto dets = decode_predictions(preds);
    std::vector<oracle::Det> od;
    std::vector<double> best;
    for (const auto& d : dets) {
      od.push_back({{d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max}, d.score, d.class_id});
      best.push_back(d.score);
    }
    nms_ok += nms(dets, np) == oracle::brute_nms(od, np.iou_thresh, np.score_thresh, np.max_det, np.class_agnostic);

    SelectParams sp;
    sp.score_thresh = np.score_thresh;
    sp.max_det = np.max_det;
    std::vector<std::size_t> expect;
    for (const auto i : oracle::order_desc(best)) {
      if (best[i] >= sp.score_thresh && expect.size() < sp.max_det) expect.push_back(i);
    }
    std::vector<std::size_t> got;
    for (const auto& d : nms_free_select(preds, sp)) got.push_back(d.source_index);
    sel_ok += got == expect;
  }
  return {nms_ok == 1000 && sel_ok == 1000,
          fmt("greedy NMS = brute force on %ld/1000 scenes; NMS-free = full sort on %ld/1000", nms_ok, sel_ok)};
}

// AC7 -----------------------------------------------------------------------
RankReport planted_ranks(std::uint64_t seed) {
  // stage id -> planted rank out of 16 output channels, giving the visit
  // order 8-4-7-3-5-1-6-2
  const std::size_t ranks[] = {12, 16, 8, 4, 10, 14, 6, 2};
  TensorArchive archive;
  std::vector<StageEntry> manifest;
  for (int id = 1; id <= 8; ++id) {
    std::vector<double> sigmas(16);
    for (std::size_t j = 0; j < 16; ++j) sigmas[j] = j < ranks[id - 1] ? 2.0 - 0.05 * j : 0.6 - 0.03 * j;
    const std::string name = "stage" + std::to_string(id);
    archive.tensors[name] = planted_spectrum_weight(16, 8, 3, sigmas, seed + id);
    manifest.push_back({id, name, 16});
  }
  return stage_ranks(archive, manifest, 0.5, 1);
}

Outcome allocation_replay() {
  const RankReport ranks = planted_ranks(707);
  const std::map<std::vector<int>, double> table{{{}, 44.4}, {{8}, 44.5}, {{4, 8}, 44.5}, {{4, 7, 8}, 44.3}};
  int calls = 0;
  const AllocationTrace t = rank_guided_allocate(
      ranks,
      [&](std::span<const int> stages) {
        ++calls;
        std::vector<int> key(stages.begin(), stages.end());
        std::sort(key.begin(), key.end());
        return table.at(key);
      },
      table.at({}));
  const auto order = rank_visit_order(ranks);
  std::string visit;
  for (const int s : order) visit += (visit.empty() ? "" : "-") + std::to_string(s);
  const bool ok = t.final_stages == std::vector<int>{8, 4} && calls == 3 &&
                  order == std::vector<int>{8, 4, 7, 3, 5, 1, 6, 2};
  return {ok, fmt("visit order %s, final set {%s}, %d evaluator calls", visit.c_str(),
                  t.final_stages.size() == 2 ? "8,4" : "other", calls)};
}

// AC8 -----------------------------------------------------------------------
std::size_t eigen_rank(const Matrix& m) {
  Eigen::MatrixXd e(m.rows, m.cols);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) e(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m(i, j);
  const Eigen::VectorXd s = Eigen::JacobiSVD<Eigen::MatrixXd>(e).singularValues();
  std::size_t r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) r += s(i) / s(0) > 0.5 + 1e-10;
  return r;
}

Outcome rank_properties() {
  Rng rng(808);
  long scale_ok = 0, orth_ok = 0, eigen_ok = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t rows = 1 + rng.index(64), cols = 1 + rng.index(64);
    // mix of full-rank noise and planted low-rank structure
    Matrix m(rows, cols);
    const std::size_t k = 1 + rng.index(std::min(rows, cols));
    for (std::size_t t = 0; t < k; ++t) {
      std::vector<double> u(rows), v(cols);
      for (double& x : u) x = rng.normal();
      for (double& x : v) x = rng.normal();
      const double weight = std::pow(rng.uniform(0.05, 1.0), 2);
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) m(i, j) += weight * u[i] * v[j];
    }
    const std::size_t base = numerical_rank(m);
    Matrix scaled = m;
    const double c = (rng.uniform() < 0.5 ? -1.0 : 1.0) * std::exp(rng.uniform(-10, 10));
    for (double& x : scaled.data) x *= c;
    scale_ok += numerical_rank(scaled) == base;
    orth_ok += numerical_rank(multiply(random_orthogonal(rows, rng), m)) == base;
    eigen_ok += eigen_rank(m) == base;
  }
  const RankReport planted = planted_ranks(809);
  const std::size_t expect[] = {12, 16, 8, 4, 10, 14, 6, 2};
  bool planted_ok = planted.stages.size() == 8;
  for (std::size_t i = 0; planted_ok && i < 8; ++i) planted_ok = planted.stages[i].rank == expect[i];
  return {scale_ok == 1000 && orth_ok == 1000 && eigen_ok == 1000 && planted_ok,
          fmt("scale-invariant %ld/1000, rotation-invariant %ld/1000, agrees with Eigen SVD %ld/1000, "
              "planted ranks %s",
              scale_ok, orth_ok, eigen_ok, planted_ok ? "reproduced" : "NOT reproduced")};
}

// AC9 -----------------------------------------------------------------------
Outcome bench_ordering() {
  const std::vector<std::vector<Prediction>> images{duplicate_scene(10000, 1, 909)};
  const BenchReport r = bench_postprocess(images, {}, {}, 5);
  const double nms_median = r.rows[0].median_us, free_median = r.rows[1].median_us;
  return {nms_median > free_median && r.outputs_identical,
          fmt("10000 duplicates: NMS median %.1fus > NMS-free median %.1fus; outputs %s across 5 repeats", nms_median,
              free_median, r.outputs_identical ? "identical" : "DIFFER")};
}

// AC10 ----------------------------------------------------------------------
struct CliRun {
  int code;
  std::string out;
};

CliRun cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str() + err.str()};
}

std::string slurp(const fs::path& p) { return json_io::read_text(p); }

Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / ("detlab_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const auto at = [&](const std::string& n) { return (dir / n).string(); };
  std::vector<std::string> failures;
  const auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };

  // archives name their data file, so each run writes them under the same
  // name in its own directory
  fs::create_directories(dir / "run0");
  fs::create_directories(dir / "run1");

  // every command twice (and at two worker counts where it has workers)
  for (int run = 0; run < 2; ++run) {
    const std::string s = std::to_string(run);
    expect(cli({"gen", "--seed", "5", "--images", "30", "--gts", "3", "--preds", "6", "-o", at("data" + s + ".json")}).code == 0, "gen");
    expect(cli({"gen", "--seed", "5", "--images", "30", "--gts", "3", "--preds", "6", "--profile", "adversarial-ordering",
                "-o", at("adv" + s + ".json")}).code == 0, "gen adversarial");
    expect(cli({"gen", "--planted-ranks", "12,16,8,4,10,14,6,2", "-o", at("run" + s + "/w.json"), "--stage-manifest",
                at("m" + s + ".json")}).code == 0, "gen planted");
    const std::string workers = run == 0 ? "1" : "4";
    expect(cli({"assign", at("data0.json"), "--workers", workers, "-o", at("assign" + s + ".json")}).code == 0, "assign");
    expect(cli({"gap", at("adv0.json"), "--workers", workers, "-o", at("gap" + s + ".json")}).code == 0, "gap");
    expect(cli({"rank", at("run0/w.json"), "--stages", at("m0.json"), "--workers", workers, "--csv", at("rank" + s + ".csv"),
                "-o", at("rank" + s + ".json")}).code == 0, "rank");
    json_io::write_file(at("table.json"), R"({"baseline": 44.4, "scores": [{"stages": [8], "score": 44.5},
      {"stages": [8, 4], "score": 44.5}, {"stages": [8, 4, 7], "score": 44.3}]})");
    expect(cli({"allocate", at("rank0.json"), "--table", at("table.json"), "-o", at("alloc" + s + ".json")}).code == 0, "allocate");
    json_io::write_file(at("specs.json"), R"({"specs": [{"kind": "std_downsample", "H": 64, "W": 64, "C": 32},
      {"kind": "scd_downsample", "H": 64, "W": 64, "C": 32}, {"kind": "psa", "H": 20, "W": 20, "C": 256}]})");
    expect(cli({"cost", at("specs.json"), "-o", at("cost" + s + ".csv")}).code == 0, "cost");
    TensorArchive branches;
    Rng rng(1);
    Tensor dw7({4, 1, 7, 7}), dw3({4, 1, 3, 3});
    for (double& v : dw7.data()) v = rng.uniform(-1, 1);
    for (double& v : dw3.data()) v = rng.uniform(-1, 1);
    branches.tensors["dw7"] = dw7;
    branches.tensors["dw3"] = dw3;
    write_archive(branches, at("branches.json"));
    expect(cli({"fuse", at("branches.json"), "-o", at("run" + s + "/fused.json")}).code == 0, "fuse");
    expect(cli({"nms-bench", at("data0.json"), "--kept-out", at("kept" + s + ".json"), "-o", at("bench" + s + ".csv")}).code == 0,
           "nms-bench");
  }
  for (const char* stem : {"data", "adv", "m", "assign", "gap", "rank", "alloc", "kept"}) {
    expect(slurp(at(std::string(stem) + "0.json")) == slurp(at(std::string(stem) + "1.json")),
           std::string(stem) + " output differs");
  }
  for (const char* file : {"w.json", "w.bin", "fused.json", "fused.bin"}) {
    expect(slurp(dir / "run0" / file) == slurp(dir / "run1" / file), std::string(file) + " differs");
  }
  for (const char* stem : {"rank", "cost"}) {
    expect(slurp(at(std::string(stem) + "0.csv")) == slurp(at(std::string(stem) + "1.csv")),
           std::string(stem) + " csv differs");
  }

  // serialize / parse round-trips
  const DatasetFile d = read_dataset(at("adv0.json"));
  expect(parse_dataset(serialize_dataset(d), "mem") == d, "dataset round-trip");
  const std::string adv_text = slurp(at("adv0.json"));
  expect(serialize_dataset(d) == adv_text, "dataset re-serialization");
  RunConfig c;
  c.o2o = {1.0 / 3.0, 0.1};
  c.nms.iou_thresh = 0.45;
  c.evaluator_cmd = "score {stages}";
  expect(config_from_json(config_to_json(c)) == c, "config round-trip");
  expect(read_archive(at("run0/w.json")) == read_archive(at("run1/w.json")), "archive read");
  const TensorArchive w = read_archive(at("run0/w.json"));
  write_archive(w, at("w_again.json"));
  expect(read_archive(at("w_again.json")) == w, "archive round-trip");
  const json_io::json assign_doc = json_io::parse_file(at("assign0.json"));
  expect(assign_report_from_json(assign_doc) == run_assign(read_dataset(at("data0.json")), {}, 1), "assign report round-trip");
  expect(to_json(assign_report_from_json(assign_doc)).dump(2) + "\n" == slurp(at("assign0.json")), "assign report bytes");
  const json_io::json gap_doc = json_io::parse_file(at("gap0.json"));
  expect(to_json(gap_summary_from_json(gap_doc)).dump(2) + "\n" == slurp(at("gap0.json")), "gap report round-trip");
  const json_io::json rank_doc = json_io::parse_file(at("rank0.json"));
  expect(to_json(rank_report_from_json(rank_doc)).dump(2) + "\n" == slurp(at("rank0.json")), "rank report round-trip");
  const AllocationTrace trace = allocation_trace_from_json(json_io::parse_file(at("alloc0.json")));
  expect(allocation_trace_from_json(to_json(trace)) == trace, "allocation trace round-trip");
  expect(cost_csv(parse_cost_csv(slurp(at("cost0.csv")))) == slurp(at("cost0.csv")), "cost csv round-trip");
  expect(bench_csv({parse_bench_csv(slurp(at("bench0.csv"))), true, {}, {}}) == slurp(at("bench0.csv")),
         "bench csv round-trip");

  fs::remove_all(dir);
  std::string detail = "8 commands run twice (1 vs 4 workers where applicable), outputs byte-identical; "
                       "dataset, config, archive, report and csv round-trips exact";
  if (!failures.empty()) {
    detail = "failed:";
    for (const auto& f : failures) detail += " [" + f + "]";
  }
  return {failures.empty(), detail};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"AC1 consistent-metric argmax agreement", consistent_argmax},
      {"AC2 supervision gap closed form and minimality", gap_checks},
      {"AC3 alignment frequencies", alignment},
      {"AC4 downsampling cost formulas", cost_formulas},
      {"AC5 large-kernel reparameterization", reparameterization},
      {"AC6 NMS and NMS-free oracles", nms_oracle},
      {"AC7 rank-guided allocation replay", allocation_replay},
      {"AC8 numerical rank properties", rank_properties},
      {"AC9 post-processing benchmark ordering", bench_ordering},
      {"AC10 determinism and round-trips", determinism},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}

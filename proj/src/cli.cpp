#include "detlab/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <sstream>

#include "detlab/archive.hpp"
#include "detlab/config.hpp"
#include "detlab/dataset.hpp"
#include "detlab/error.hpp"
#include "detlab/json_io.hpp"
#include "detlab/postprocess.hpp"
#include "detlab/rank.hpp"
#include "detlab/reports.hpp"
#include "detlab/synthetic.hpp"

namespace detlab {

namespace {

namespace fs = std::filesystem;
using json_io::json;

struct CommonOpts {
  std::string config_path;
  std::optional<std::size_t> workers;
  std::string out_path;
};

struct MetricOverrides {
  std::optional<double> alpha, beta, o2o_alpha, o2o_beta;
  std::optional<std::size_t> topk;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool with_workers) {
  cmd->add_option("--config", opts.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  if (with_workers) cmd->add_option("--workers", opts.workers, "worker threads (overrides DETLAB_WORKERS)");
  cmd->add_option("-o,--out", opts.out_path, "output file (default: stdout)");
}

void add_metric_overrides(CLI::App* cmd, MetricOverrides& m) {
  cmd->add_option("--alpha", m.alpha, "one-to-many alpha");
  cmd->add_option("--beta", m.beta, "one-to-many beta");
  cmd->add_option("--topk", m.topk, "one-to-many candidate count");
  cmd->add_option("--o2o-alpha", m.o2o_alpha, "one-to-one alpha");
  cmd->add_option("--o2o-beta", m.o2o_beta, "one-to-one beta");
}

std::optional<std::size_t> env_workers() {
  const char* raw = std::getenv("DETLAB_WORKERS");
  if (!raw || !*raw) return std::nullopt;
  const std::string text(raw);
  if (text.find_first_not_of("0123456789") != std::string::npos || text.size() > 6 || std::stoul(text) == 0) {
    throw Error(ErrorCode::ConfigError, "DETLAB_WORKERS must be a positive integer, got '" + text + "'");
  }
  return std::stoul(text);
}

/// Flags beat DETLAB_WORKERS, which beats the config file, which beats defaults.
RunConfig resolve_config(const CommonOpts& opts, const MetricOverrides* m = nullptr) {
  RunConfig config = opts.config_path.empty() ? RunConfig{} : read_config(opts.config_path);
  if (const auto w = env_workers()) config.workers = *w;
  if (opts.workers) config.workers = *opts.workers;
  if (m) {
    if (m->alpha) config.o2m.alpha = *m->alpha;
    if (m->beta) config.o2m.beta = *m->beta;
    if (m->topk) config.topk = *m->topk;
    if (m->o2o_alpha) config.o2o.alpha = *m->o2o_alpha;
    if (m->o2o_beta) config.o2o.beta = *m->o2o_beta;
  }
  config.validate();
  return config;
}

void emit(const std::string& text, const std::string& path, std::ostream& out) {
  if (path.empty()) {
    out << text;
  } else {
    json_io::write_file(path, text);
  }
}

std::string pretty(const json& doc) { return doc.dump(2) + "\n"; }

std::vector<double> bias_of(const TensorArchive& archive, const std::string& name) {
  const std::string key = name + ".bias";
  if (!archive.contains(key)) return {};
  return archive.get(key).values();
}

/// Loads `name` and folds "<name>.bn.{gamma,beta,mean,var}" into it when present.
std::pair<Tensor, std::vector<double>> load_branch(const TensorArchive& archive, const std::string& name,
                                                   double eps) {
  const Tensor& w = archive.get(name);
  std::vector<double> bias = bias_of(archive, name);
  const std::string bn = name + ".bn.";
  const bool has_bn = archive.contains(bn + "gamma");
  if (!has_bn) return {w, std::move(bias)};
  BatchNormStats stats;
  stats.gamma = archive.get(bn + "gamma").values();
  stats.beta = archive.get(bn + "beta").values();
  stats.mean = archive.get(bn + "mean").values();
  stats.var = archive.get(bn + "var").values();
  stats.eps = eps;
  return bn_fold(w, bias, stats);
}

std::string stage_list(std::span<const int> stages) {
  std::string s;
  for (const int id : stages) s += (s.empty() ? "" : ",") + std::to_string(id);
  return s;
}

int exit_code_for(ErrorCode code) { return code == ErrorCode::InvariantViolation ? 3 : 2; }

void diagnose(std::ostream& err, std::string_view code, std::string message) {
  for (char& c : message) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  err << "detlab: error[" << code << "]: " << message << '\n';
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dual-assignment detection analytics and block design toolkit", "detlab"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  // gen
  CommonOpts gen_opts;
  SyntheticOptions syn;
  std::string profile_name = "jitter";
  std::vector<std::size_t> planted_ranks;
  std::size_t planted_c_out = 16, planted_c_in = 16, planted_kernel = 3;
  std::string stage_manifest_out;
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset or a planted-spectrum weight archive");
  add_common(gen, gen_opts, false);
  gen->add_option("--seed", syn.seed, "random seed");
  gen->add_option("--images", syn.num_images, "number of images")->check(CLI::PositiveNumber);
  gen->add_option("--gts", syn.gts_per_image, "ground truths per image")->check(CLI::PositiveNumber);
  gen->add_option("--preds", syn.preds_per_gt, "predictions per ground truth")->check(CLI::PositiveNumber);
  gen->add_option("--classes", syn.num_classes, "number of classes")->check(CLI::PositiveNumber);
  gen->add_option("--profile", profile_name, "perfect | jitter | adversarial-ordering");
  gen->add_option("--planted-ranks", planted_ranks, "write a weight archive whose stages have these ranks")
      ->delimiter(',');
  gen->add_option("--c-out", planted_c_out, "planted weight output channels")->check(CLI::PositiveNumber);
  gen->add_option("--c-in", planted_c_in, "planted weight input channels")->check(CLI::PositiveNumber);
  gen->add_option("--kernel", planted_kernel, "planted weight kernel size")->check(CLI::PositiveNumber);
  gen->add_option("--stage-manifest", stage_manifest_out, "stage manifest to write alongside the archive");

  // assign / gap
  CommonOpts assign_opts, gap_opts;
  MetricOverrides assign_m, gap_m;
  std::string assign_in, gap_in;
  auto* assign = app.add_subcommand("assign", "dual label assignment report");
  assign->add_option("dataset", assign_in, "dataset JSON")->required()->check(CLI::ExistingFile);
  add_common(assign, assign_opts, true);
  add_metric_overrides(assign, assign_m);
  auto* gap = app.add_subcommand("gap", "per-GT supervision gap report");
  gap->add_option("dataset", gap_in, "dataset JSON")->required()->check(CLI::ExistingFile);
  add_common(gap, gap_opts, true);
  add_metric_overrides(gap, gap_m);

  // nms-bench
  CommonOpts bench_opts;
  std::string bench_in, kept_out;
  std::optional<std::size_t> duplicates;
  std::size_t repeats = 5, dup_classes = 1;
  std::optional<double> iou_thresh;
  auto* bench = app.add_subcommand("nms-bench", "time NMS against NMS-free selection");
  bench->add_option("dataset", bench_in, "dataset JSON")->check(CLI::ExistingFile);
  add_common(bench, bench_opts, false);
  bench->add_option("--duplicates", duplicates, "use one crafted scene of N near-identical boxes")
      ->check(CLI::PositiveNumber);
  bench->add_option("--dup-classes", dup_classes, "classes in the crafted scene")->check(CLI::PositiveNumber);
  bench->add_option("--repeats", repeats, "timed passes over the input (at least 3)");
  bench->add_option("--iou", iou_thresh, "NMS IoU threshold");
  bench->add_option("--kept-out", kept_out, "write kept indices per path as JSON");

  // cost
  CommonOpts cost_opts;
  std::string cost_in;
  auto* cost = app.add_subcommand("cost", "MAC and parameter table for block specs");
  cost->add_option("specs", cost_in, "block spec JSON")->required()->check(CLI::ExistingFile);
  add_common(cost, cost_opts, false);

  // fuse
  CommonOpts fuse_opts;
  std::string fuse_in, dw7_name = "dw7", dw3_name = "dw3";
  double bn_eps = 1e-5;
  auto* fuse = app.add_subcommand("fuse", "merge a 3x3 depthwise branch into a 7x7 kernel");
  fuse->add_option("archive", fuse_in, "tensor archive manifest")->required()->check(CLI::ExistingFile);
  add_common(fuse, fuse_opts, false);
  fuse->add_option("--dw7", dw7_name, "name of the 7x7 depthwise weight");
  fuse->add_option("--dw3", dw3_name, "name of the 3x3 depthwise weight");
  fuse->add_option("--eps", bn_eps, "batch-norm epsilon");

  // rank
  CommonOpts rank_opts;
  std::string rank_in, rank_stages, rank_csv_out;
  std::optional<double> ratio;
  auto* rank = app.add_subcommand("rank", "numerical rank of stage weights");
  rank->add_option("archive", rank_in, "tensor archive manifest")->required()->check(CLI::ExistingFile);
  add_common(rank, rank_opts, true);
  rank->add_option("--stages", rank_stages, "stage manifest JSON")->required()->check(CLI::ExistingFile);
  rank->add_option("--ratio", ratio, "singular value threshold relative to the largest");
  rank->add_option("--csv", rank_csv_out, "also write stage_id,rank,normalized_rank CSV");

  // allocate
  CommonOpts alloc_opts;
  std::string alloc_in, table_path, evaluator_cmd;
  std::optional<double> baseline;
  auto* allocate = app.add_subcommand("allocate", "rank-guided block replacement");
  allocate->add_option("ranks", alloc_in, "rank report JSON")->required()->check(CLI::ExistingFile);
  add_common(allocate, alloc_opts, false);
  auto* table_opt = allocate->add_option("--table", table_path, "score table JSON")->check(CLI::ExistingFile);
  allocate->add_option("--evaluator-cmd", evaluator_cmd, "shell command; {stages} becomes e.g. 8,4")
      ->excludes(table_opt);
  allocate->add_option("--baseline", baseline, "baseline score (default: table or evaluator on no stages)");

  std::vector<std::string> argv_store;
  argv_store.reserve(args.size() + 1);
  argv_store.emplace_back("detlab");
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    diagnose(err, "UsageError", e.what());
    return 2;
  }

  try {
    if (*gen) {
      const RunConfig config = resolve_config(gen_opts);
      if (!gen->count("--seed")) syn.seed = config.seed;
      if (!planted_ranks.empty()) {
        if (gen_opts.out_path.empty()) throw Error(ErrorCode::ConfigError, "gen --planted-ranks needs --out");
        const std::size_t full = std::min(planted_c_out, planted_c_in * planted_kernel * planted_kernel);
        TensorArchive archive;
        std::vector<StageEntry> stages;
        for (std::size_t i = 0; i < planted_ranks.size(); ++i) {
          const std::size_t r = planted_ranks[i];
          if (r == 0 || r > full) {
            throw Error(ErrorCode::ConfigError, "planted rank " + std::to_string(r) + " outside [1, " +
                                                    std::to_string(full) + "]");
          }
          // r values well above half the largest, the rest well below it.
          std::vector<double> sigmas(full);
          for (std::size_t j = 0; j < full; ++j) {
            sigmas[j] = j < r ? 1.0 - 0.3 * static_cast<double>(j) / static_cast<double>(full)
                              : 0.3 - 0.2 * static_cast<double>(j) / static_cast<double>(full);
          }
          const int id = static_cast<int>(i + 1);
          const std::string name = "stage" + std::to_string(id) + ".conv";
          archive.tensors[name] = planted_spectrum_weight(planted_c_out, planted_c_in, planted_kernel, sigmas,
                                                          syn.seed + i);
          stages.push_back({id, name, planted_c_out});
        }
        write_archive(archive, gen_opts.out_path);
        if (!stage_manifest_out.empty()) {
          json_io::write_file(stage_manifest_out, pretty(stage_manifest_to_json(stages)));
        }
        return 0;
      }
      const auto profile = parse_noise_profile(profile_name);
      if (!profile) throw Error(ErrorCode::ConfigError, "unknown noise profile '" + profile_name + "'");
      syn.profile = *profile;
      emit(serialize_dataset(generate_synthetic(syn)), gen_opts.out_path, out);
    } else if (*assign) {
      const RunConfig config = resolve_config(assign_opts, &assign_m);
      const AssignReport report = run_assign(read_dataset(assign_in), config, config.workers);
      emit(pretty(to_json(report)), assign_opts.out_path, out);
    } else if (*gap) {
      const RunConfig config = resolve_config(gap_opts, &gap_m);
      const GapSummary summary = run_gap(read_dataset(gap_in), config, config.workers);
      emit(pretty(to_json(summary)), gap_opts.out_path, out);
    } else if (*bench) {
      RunConfig config = resolve_config(bench_opts);
      if (iou_thresh) config.nms.iou_thresh = *iou_thresh;
      config.validate();
      if (repeats < 3) throw Error(ErrorCode::ConfigError, "--repeats must be at least 3");
      std::vector<std::vector<Prediction>> images;
      if (duplicates) {
        if (!bench_in.empty()) throw Error(ErrorCode::ConfigError, "give either a dataset or --duplicates");
        images.push_back(duplicate_scene(*duplicates, dup_classes, config.seed));
      } else {
        if (bench_in.empty()) throw Error(ErrorCode::ConfigError, "nms-bench needs a dataset or --duplicates");
        for (auto& image : read_dataset(bench_in).images) images.push_back(std::move(image.preds));
      }
      const BenchReport report = bench_postprocess(images, config.nms, config.select, repeats);
      if (!report.outputs_identical) {
        throw Error(ErrorCode::InvariantViolation, "post-processing output changed between repeats");
      }
      if (!kept_out.empty()) {
        json kept = {{"nms", report.nms_kept}, {"nms_free", report.select_kept}};
        json_io::write_file(kept_out, pretty(kept));
      }
      emit(bench_csv(report), bench_opts.out_path, out);
    } else if (*cost) {
      resolve_config(cost_opts);
      const auto specs = parse_cost_specs(json_io::parse_file(cost_in));
      emit(cost_csv(run_cost_table(specs)), cost_opts.out_path, out);
    } else if (*fuse) {
      resolve_config(fuse_opts);
      if (!(bn_eps >= 0.0)) throw Error(ErrorCode::ConfigError, "--eps must be non-negative");
      const TensorArchive input = read_archive(fuse_in);
      const auto [w7, b7] = load_branch(input, dw7_name, bn_eps);
      const auto [w3, b3] = load_branch(input, dw3_name, bn_eps);
      auto [fused, bias] = reparam_fuse_lk(w7, b7, w3, b3);
      TensorArchive result;
      result.tensors["fused"] = std::move(fused);
      if (!bias.empty()) result.tensors["fused.bias"] = Tensor({bias.size()}, std::move(bias));
      if (fuse_opts.out_path.empty()) {
        out << pretty(archive_to_inline_json(result));
      } else {
        write_archive(result, fuse_opts.out_path);
      }
    } else if (*rank) {
      const RunConfig config = resolve_config(rank_opts);
      const double threshold = ratio.value_or(config.rank_threshold);
      const auto manifest = parse_stage_manifest(json_io::parse_file(rank_stages));
      const RankReport report = stage_ranks(read_archive(rank_in), manifest, threshold, config.workers);
      if (!rank_csv_out.empty()) json_io::write_file(rank_csv_out, rank_csv(report));
      emit(pretty(to_json(report)), rank_opts.out_path, out);
    } else if (*allocate) {
      const RunConfig config = resolve_config(alloc_opts);
      const RankReport ranks = rank_report_from_json(json_io::parse_file(alloc_in));
      std::optional<double> table_baseline;
      StageEvaluator evaluator;
      if (!table_path.empty()) {
        EvaluatorTable table = parse_evaluator_table(json_io::parse_file(table_path));
        table_baseline = table.baseline;
        evaluator = table_evaluator(std::move(table));
      } else {
        const std::string cmd = evaluator_cmd.empty() ? config.evaluator_cmd : evaluator_cmd;
        if (cmd.empty()) throw Error(ErrorCode::ConfigError, "allocate needs --table, --evaluator-cmd or allocate.evaluator_cmd");
        evaluator = command_evaluator(cmd);
      }
      const double base = baseline ? *baseline : table_baseline ? *table_baseline : evaluator({});
      const AllocationTrace trace = rank_guided_allocate(ranks, evaluator, base);
      json doc = to_json(trace);
      doc["evaluator_calls"] = trace.steps.size();
      doc["final_stages_csv"] = stage_list(trace.final_stages);
      emit(pretty(doc), alloc_opts.out_path, out);
    }
  } catch (const Error& e) {
    diagnose(err, to_string(e.code()), e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    diagnose(err, "Internal", e.what());
    return 3;
  }
  return 0;
}

}  // namespace detlab

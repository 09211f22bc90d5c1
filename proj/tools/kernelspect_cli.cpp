// kernelspect command-line entry point.
//
// Exit codes: 0 success, 1 input or usage error, 2 internal invariant violation.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "kernelspect/history.hpp"
#include "kernelspect/infer.hpp"
#include "kernelspect/pruner.hpp"
#include "kernelspect/report.hpp"

namespace fs = std::filesystem;
using namespace kernelspect;

namespace {

struct CommonOptions {
  std::string thresholds_file;
  std::vector<std::string> threshold_overrides;
  std::string format = "json";
  std::string svg_path;
  std::string out_path;
  int jobs = 1;
};

int default_jobs() {
  if (const char* env = std::getenv("KERNELSPECT_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
    }
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

void add_common(CLI::App* cmd, CommonOptions& opts, bool with_out = true) {
  cmd->add_option("--thresholds", opts.thresholds_file,
                  "JSON file: {mode: value} or {mode: {\"1\": v, \"2\": v, \"3\": v}}");
  cmd->add_option("--threshold", opts.threshold_overrides, "Override, mode=value[:ksize]")
      ->take_all();
  cmd->add_option("--format", opts.format, "Document format")
      ->check(CLI::IsMember({"json", "csv"}));
  cmd->add_option("--svg", opts.svg_path, "Also write an SVG chart to this path");
  if (with_out) cmd->add_option("--out", opts.out_path, "Write the document here instead of stdout");
  cmd->add_option("--jobs", opts.jobs, "Worker threads (default: KERNELSPECT_THREADS)")
      ->check(CLI::PositiveNumber);
}

double json_threshold(const nlohmann::json& v, const std::string& where) {
  if (!v.is_number()) {
    throw Error(ErrorCode::InvalidArgument, "threshold for " + where + " is not a number");
  }
  const double d = v.get<double>();
  if (!(d >= 0.0) || !std::isfinite(d)) {
    throw Error(ErrorCode::InvalidArgument, "threshold for " + where + " must be finite and >= 0");
  }
  return d;
}

ThresholdTable load_threshold_file(const std::string& path, ThresholdTable table) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open thresholds file '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, "thresholds file '" + path + "': " + e.what());
  }
  if (!j.is_object()) {
    throw Error(ErrorCode::InvalidArgument, "thresholds file must hold a JSON object");
  }
  for (const auto& [name, value] : j.items()) {
    const CompressionMode mode = parse_mode(name);
    if (value.is_object()) {
      for (const auto& [size, v] : value.items()) {
        if (size != "1" && size != "2" && size != "3") {
          throw Error(ErrorCode::InvalidArgument,
                      "kernel size '" + size + "' for mode " + name + " is not 1, 2 or 3");
        }
        table = table.with(mode, std::stoi(size), json_threshold(v, name + ":" + size));
      }
    } else {
      table = table.with_all_sizes(mode, json_threshold(value, name));
    }
  }
  return table;
}

ThresholdTable resolve_thresholds(const CommonOptions& opts) {
  ThresholdTable table = default_thresholds();
  if (!opts.thresholds_file.empty()) table = load_threshold_file(opts.thresholds_file, table);
  for (const std::string& o : opts.threshold_overrides) table = apply_override(table, o);
  return table;
}

ReportMeta make_meta(const std::string& label, const ThresholdTable& table) {
  ReportMeta meta;
  meta.snapshot_label = label;
  meta.thresholds = table;
  meta.timestamp = reproducible_timestamp();
  return meta;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw Error(ErrorCode::IoFailure, "cannot write '" + path + "'");
}

void emit(const ReportDocument& doc, const CommonOptions& opts) {
  const std::string text = opts.format == "csv" ? to_csv(doc) : to_json(doc);
  if (opts.out_path.empty()) {
    std::cout << text << std::flush;
  } else {
    write_text(opts.out_path, text);
  }
  if (!opts.svg_path.empty()) write_text(opts.svg_path, render_svg(doc));
}

const PruneMask& mask_of(const std::vector<PruneMask>& masks, CompressionMode mode) {
  return masks[mode_index(mode)];
}

// Subset relations that must hold for the default threshold table.
void check_lattice(const std::vector<PruneMask>& masks, const std::string& where) {
  using M = CompressionMode;
  static constexpr std::pair<M, M> kChain[] = {
      {M::SpectralNorm, M::SpectralRadius}, {M::SpectralRadius, M::Det},
      {M::Det, M::MinEig},                  {M::SpectralNorm, M::Weight},
      {M::MinEig, M::MinEigReal},           {M::SpectralRadius, M::SpectralRadiusReal},
  };
  for (const auto& [sub, super] : kChain) {
    const PruneMask& a = mask_of(masks, sub);
    const PruneMask& b = mask_of(masks, super);
    for (std::size_t i = 0; i < a.universe_size(); ++i) {
      if (a.contains(i) && !b.contains(i)) {
        throw Error(ErrorCode::InvariantViolation,
                    where + ": kernel " + std::to_string(i) + " pruned by " +
                        std::string(mode_name(sub)) + " but not by " +
                        std::string(mode_name(super)));
      }
    }
  }
}

std::vector<PruneMask> masks_checked(const ScoredModel& scored, const ThresholdTable& table,
                                     const std::string& where) {
  std::vector<PruneMask> masks = build_masks(scored, table);
  if (table == default_thresholds()) check_lattice(masks, where);
  return masks;
}

std::optional<EvalDataset> maybe_dataset(const std::string& dir, std::int64_t limit) {
  if (dir.empty()) return std::nullopt;
  EvalDataset data = load_dataset(dir);
  if (limit > 0) data = take_samples(data, limit);
  return data;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spectral kernel pruning analysis for convolutional networks", "kernelspect"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  CommonOptions opts;
  opts.jobs = default_jobs();
  std::string target;
  std::string data_dir;
  std::int64_t limit = 0;
  std::int64_t batch_size = 256;
  std::vector<std::string> mode_names;
  std::string mask_dir;
  std::vector<double> grid;
  double grid_lo = 1e-6, grid_hi = 1e-1;
  int grid_count = 20;

  auto* inspect = app.add_subcommand("inspect", "Kernel census and complex-eigenvalue totals");
  inspect->add_option("manifest", target, "Snapshot manifest.json")->required();
  add_common(inspect, opts);

  auto* score = app.add_subcommand("score", "Per-mode pruning ratios and compression scores");
  score->add_option("manifest", target, "Snapshot manifest.json")->required();
  score->add_option("--data", data_dir, "Evaluation dataset directory");
  score->add_option("--limit", limit, "Evaluate only the first N samples");
  score->add_option("--batch-size", batch_size)->check(CLI::PositiveNumber);
  add_common(score, opts);

  auto* sets = app.add_subcommand("sets", "Partition of kernels by the set of pruning modes");
  sets->add_option("manifest", target, "Snapshot manifest.json")->required();
  add_common(sets, opts);

  auto* layers = app.add_subcommand("layers", "Active parameter ratio per layer");
  layers->add_option("manifest", target, "Snapshot manifest.json")->required();
  layers->add_option("--mode", mode_names, "Mode(s) to report; all when omitted");
  add_common(layers, opts);

  auto* history = app.add_subcommand("history", "Pruning ratios across a checkpoint series");
  history->add_option("series", target, "Directory of epoch_<N> snapshots")->required();
  history->add_option("--data", data_dir, "Evaluation dataset directory");
  history->add_option("--limit", limit, "Evaluate only the first N samples");
  history->add_option("--batch-size", batch_size)->check(CLI::PositiveNumber);
  add_common(history, opts);

  auto* mask = app.add_subcommand("mask", "Export one uint8 mask NPY per layer");
  mask->add_option("manifest", target, "Snapshot manifest.json")->required();
  mask->add_option("--mode", mode_names, "Compression mode")->required()->expected(1);
  mask->add_option("--out", mask_dir, "Output directory")->required();
  add_common(mask, opts, /*with_out=*/false);

  auto* eval = app.add_subcommand("eval", "Top-1 accuracy of the vanilla and pruned model");
  eval->add_option("manifest", target, "Snapshot manifest.json")->required();
  eval->add_option("--data", data_dir, "Evaluation dataset directory")->required();
  eval->add_option("--mode", mode_names, "Also evaluate the model pruned by this mode");
  eval->add_option("--limit", limit, "Evaluate only the first N samples");
  eval->add_option("--batch-size", batch_size)->check(CLI::PositiveNumber);
  add_common(eval, opts);

  auto* sweep = app.add_subcommand("sweep", "Pruning ratio against a threshold grid");
  sweep->add_option("manifest", target, "Snapshot manifest.json")->required();
  sweep->add_option("--mode", mode_names, "Mode(s) to sweep; all when omitted");
  sweep->add_option("--grid", grid, "Explicit thresholds, strictly increasing")->delimiter(',');
  sweep->add_option("--lo", grid_lo, "Lowest threshold of the log grid");
  sweep->add_option("--hi", grid_hi, "Highest threshold of the log grid");
  sweep->add_option("--count", grid_count, "Points in the log grid");
  add_common(sweep, opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    nlohmann::ordered_json err;
    err["error"] = "Usage";
    err["message"] = e.what();
    err["help"] = "kernelspect <subcommand> --help";
    std::cerr << err.dump() << "\n";
    return 1;
  }

  try {
    const ThresholdTable table = resolve_thresholds(opts);
    std::vector<CompressionMode> modes;
    for (const std::string& n : mode_names) modes.push_back(parse_mode(n));
    const int jobs = opts.jobs;

    if (app.got_subcommand(history)) {
      const CheckpointSeries series = load_checkpoint_series(target);
      const std::optional<EvalDataset> data = maybe_dataset(data_dir, limit);
      std::optional<EvalConfig> cfg;
      if (data) cfg = EvalConfig{&*data, batch_size};
      const std::vector<EpochRecord> records = epoch_history(series, table, jobs, cfg);
      if (table == default_thresholds()) {
        for (const Checkpoint& cp : series.snapshots) {
          check_lattice(build_masks(*cp.snapshot, table, jobs),
                        "epoch " + std::to_string(cp.epoch));
        }
      }
      const std::string label = fs::path(target).lexically_normal().filename().empty()
                                    ? fs::path(target).lexically_normal().parent_path().filename().string()
                                    : fs::path(target).lexically_normal().filename().string();
      emit(history_report(make_meta(label, table), records), opts);
      return 0;
    }

    const ModelSnapshot snapshot = load_snapshot(target);
    const ReportMeta meta = make_meta(snapshot.label, table);

    if (app.got_subcommand(score)) {
      const std::optional<EvalDataset> data = maybe_dataset(data_dir, limit);
      std::optional<EvalConfig> cfg;
      if (data) cfg = EvalConfig{&*data, batch_size};
      const ScoredModel scored = score_model(snapshot, jobs);
      masks_checked(scored, table, snapshot.label);
      emit(scores_report(meta, analyse_snapshot(snapshot, table, jobs, cfg)), opts);
    } else if (app.got_subcommand(inspect)) {
      const ScoredModel scored = score_model(snapshot, jobs);
      const auto masks = masks_checked(scored, table, snapshot.label);
      emit(complex_report(meta, scored.catalog, complex_stats(scored, masks)), opts);
    } else if (app.got_subcommand(sets)) {
      const ScoredModel scored = score_model(snapshot, jobs);
      emit(sets_report(meta, set_partition(masks_checked(scored, table, snapshot.label))), opts);
    } else if (app.got_subcommand(layers)) {
      const ScoredModel scored = score_model(snapshot, jobs);
      const auto masks = masks_checked(scored, table, snapshot.label);
      if (modes.empty()) modes.assign(kAllModes.begin(), kAllModes.end());
      std::vector<ActivityMap> maps;
      for (CompressionMode m : modes) maps.push_back(layer_activity(mask_of(masks, m), scored.catalog));
      emit(layers_report(meta, maps), opts);
    } else if (app.got_subcommand(mask)) {
      const ScoredModel scored = score_model(snapshot, jobs);
      const auto masks = masks_checked(scored, table, snapshot.label);
      const PruneMask& chosen = mask_of(masks, modes.at(0));
      fs::create_directories(mask_dir);
      export_masks(chosen, scored.catalog, mask_dir);
      std::vector<MaskFileRow> rows;
      for (const auto& layer : scored.catalog.layers()) {
        MaskFileRow row{layer.name, 0, layer.end - layer.begin, layer.name + ".npy"};
        for (std::size_t i = layer.begin; i < layer.end; ++i) row.pruned_kernels += chosen.contains(i);
        rows.push_back(row);
      }
      emit(masks_report(meta, chosen.mode, rows), opts);
    } else if (app.got_subcommand(eval)) {
      const EvalDataset data = *maybe_dataset(data_dir, limit);
      std::vector<EvalRow> rows;
      const EvalResult vanilla = evaluate(snapshot, data, nullptr, jobs, batch_size);
      rows.push_back({"none", vanilla, std::nullopt, std::nullopt});
      if (!modes.empty()) {
        const ScoredModel scored = score_model(snapshot, jobs);
        const auto masks = masks_checked(scored, table, snapshot.label);
        for (CompressionMode m : modes) {
          const PruneMask& pm = mask_of(masks, m);
          const EvalResult r = evaluate(snapshot, data, &pm, jobs, batch_size);
          const double wpr = weight_prune_ratio(pm, scored.catalog);
          rows.push_back({std::string(mode_name(m)), r, wpr,
                          compression_score(r.top1_accuracy, vanilla.top1_accuracy, wpr)});
        }
      }
      emit(eval_report(meta, rows), opts);
    } else if (app.got_subcommand(sweep)) {
      if (modes.empty()) modes.assign(kAllModes.begin(), kAllModes.end());
      if (grid.empty()) grid = log_grid(grid_lo, grid_hi, grid_count);
      emit(threshold_sweep(snapshot, modes, grid, meta, jobs), opts);
    }
    return 0;
  } catch (const Error& e) {
    nlohmann::ordered_json err;
    err["error"] = to_string(e.code());
    err["message"] = e.detail();
    std::cerr << err.dump() << "\n";
    return e.code() == ErrorCode::InvariantViolation ? 2 : 1;
  } catch (const fs::filesystem_error& e) {
    nlohmann::ordered_json err;
    err["error"] = "IoFailure";
    err["message"] = e.what();
    std::cerr << err.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    nlohmann::ordered_json err;
    err["error"] = "Internal";
    err["message"] = e.what();
    std::cerr << err.dump() << "\n";
    return 2;
  }
}

#pragma once

// Report documents and their CSV / JSON / SVG renderings.
//
// Every document is a flat table whose columns are fixed per kind (see
// report_columns). Numbers are written in shortest round-trip form, so the
// CSV and JSON renderings of one document carry identical values.

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "kernelspect/history.hpp"
#include "kernelspect/pruner.hpp"

namespace kernelspect {

inline constexpr std::string_view kToolName = "kernelspect";
inline constexpr std::string_view kToolVersion = "0.1.0";

enum class ReportKind {
  Scores,
  MasksSummary,
  Sets,
  Layers,
  History,
  ComplexStats,
  Eval,
  Sweep,
};

std::string_view report_kind_name(ReportKind kind);
const std::vector<std::string>& report_columns(ReportKind kind);

using ReportValue = std::variant<std::monostate, std::int64_t, double, std::string>;

struct ReportMeta {
  std::string tool = std::string(kToolName);
  std::string version = std::string(kToolVersion);
  std::string snapshot_label;
  ThresholdTable thresholds = default_thresholds();
  // ISO-8601; null unless SOURCE_DATE_EPOCH or an explicit stamp is given so
  // that repeated runs stay byte-identical.
  std::optional<std::string> timestamp;
};

struct ReportDocument {
  ReportKind kind = ReportKind::Scores;
  ReportMeta meta;
  std::vector<std::vector<ReportValue>> records;  // columns per report_columns(kind)
};

/// Timestamp from SOURCE_DATE_EPOCH, if set.
std::optional<std::string> reproducible_timestamp();

// Builders ------------------------------------------------------------------

ReportDocument scores_report(const ReportMeta& meta, const EpochRecord& record);
ReportDocument sets_report(const ReportMeta& meta,
                           const std::map<SetSignature, std::size_t>& partition);
ReportDocument layers_report(const ReportMeta& meta, const std::vector<ActivityMap>& maps);
ReportDocument history_report(const ReportMeta& meta, const std::vector<EpochRecord>& history);
ReportDocument complex_report(const ReportMeta& meta, const KernelCatalog& catalog,
                              const ComplexStats& stats);

struct EvalRow {
  std::string mode;  // "none" for the unpruned model
  EvalResult result;
  std::optional<double> weight_prune_ratio;
  std::optional<double> compression_score;
};
ReportDocument eval_report(const ReportMeta& meta, const std::vector<EvalRow>& rows);

struct MaskFileRow {
  std::string layer;
  std::size_t pruned_kernels = 0;
  std::size_t total_kernels = 0;
  std::string file;
};
ReportDocument masks_report(const ReportMeta& meta, CompressionMode mode,
                            const std::vector<MaskFileRow>& rows);

// Threshold sweep -----------------------------------------------------------

struct SweepPoint {
  double threshold = 0.0;
  std::size_t pruned_kernels = 0;
  double kernel_prune_ratio = 0.0;
};

/// Kernel pruning ratio of `mode` when every kernel size uses the same
/// threshold. `grid` must be non-empty, positive and strictly increasing.
std::vector<SweepPoint> sweep_ratios(const ScoredModel& scored, CompressionMode mode,
                                     const std::vector<double>& grid);

ReportDocument threshold_sweep(const ModelSnapshot& snapshot,
                               const std::vector<CompressionMode>& modes,
                               const std::vector<double>& grid, ReportMeta meta, int jobs = 1);

/// `count` thresholds evenly spaced in log10 between lo and hi inclusive.
std::vector<double> log_grid(double lo, double hi, int count);

// Rendering -----------------------------------------------------------------

/// Shortest representation that parses back to the same double.
std::string format_double(double value);

std::string to_json(const ReportDocument& doc);
std::string to_csv(const ReportDocument& doc);

/// Standalone SVG 1.1 chart. Supports scores, layers, history and sweep
/// documents; throws UnsupportedKind otherwise.
std::string render_svg(const ReportDocument& doc);

/// Fixed mode -> stroke colour table.
std::string_view mode_color(CompressionMode mode);

}  // namespace kernelspect

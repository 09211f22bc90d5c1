#include "kernelspect/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <json.hpp>

namespace kernelspect {

namespace {

using Row = std::vector<ReportValue>;

ReportValue opt(const std::optional<double>& v) {
  if (v) return *v;
  return std::monostate{};
}

ReportValue integer(std::size_t v) { return static_cast<std::int64_t>(v); }

ReportDocument make(ReportKind kind, const ReportMeta& meta) {
  ReportDocument doc;
  doc.kind = kind;
  doc.meta = meta;
  return doc;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string_view report_kind_name(ReportKind kind) {
  switch (kind) {
    case ReportKind::Scores: return "scores";
    case ReportKind::MasksSummary: return "masks_summary";
    case ReportKind::Sets: return "sets";
    case ReportKind::Layers: return "layers";
    case ReportKind::History: return "history";
    case ReportKind::ComplexStats: return "complex_stats";
    case ReportKind::Eval: return "eval";
    case ReportKind::Sweep: return "sweep";
  }
  return "unknown";
}

const std::vector<std::string>& report_columns(ReportKind kind) {
  static const std::vector<std::string> scores = {
      "mode", "pruned_kernels", "total_kernels", "kernel_prune_ratio", "weight_prune_ratio",
      "acc_vanilla", "acc_pruned", "compression_score"};
  static const std::vector<std::string> masks = {"mode", "layer", "pruned_kernels",
                                                 "total_kernels", "file"};
  static const std::vector<std::string> sets = {"signature", "mode_count", "count",
                                                "conformance"};
  static const std::vector<std::string> layers = {"mode",          "layer_index",  "layer",
                                                  "active_params", "total_params", "activity"};
  static const std::vector<std::string> history = {
      "epoch",       "mode",        "pruned_kernels", "total_kernels",    "kernel_prune_ratio",
      "weight_prune_ratio", "acc_vanilla", "accuracy", "compression_score"};
  static const std::vector<std::string> complex = {"metric", "scope", "value"};
  static const std::vector<std::string> eval = {"mode",     "num_samples",     "correct",
                                                "accuracy", "logits_checksum", "weight_prune_ratio",
                                                "compression_score"};
  static const std::vector<std::string> sweep = {"mode", "threshold", "pruned_kernels",
                                                 "kernel_prune_ratio"};
  switch (kind) {
    case ReportKind::Scores: return scores;
    case ReportKind::MasksSummary: return masks;
    case ReportKind::Sets: return sets;
    case ReportKind::Layers: return layers;
    case ReportKind::History: return history;
    case ReportKind::ComplexStats: return complex;
    case ReportKind::Eval: return eval;
    case ReportKind::Sweep: return sweep;
  }
  throw Error(ErrorCode::UnsupportedKind, "unknown report kind");
}

std::optional<std::string> reproducible_timestamp() {
  const char* env = std::getenv("SOURCE_DATE_EPOCH");
  if (env == nullptr || *env == '\0') return std::nullopt;
  char* end = nullptr;
  const long long secs = std::strtoll(env, &end, 10);
  if (end == env || *end != '\0' || secs < 0) return std::nullopt;
  const std::time_t t = static_cast<std::time_t>(secs);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return std::string(buf);
}

// ---------------------------------------------------------------------------
// Builders

ReportDocument scores_report(const ReportMeta& meta, const EpochRecord& record) {
  ReportDocument doc = make(ReportKind::Scores, meta);
  for (const ModeOutcome& m : record.modes) {
    doc.records.push_back({std::string(mode_name(m.mode)), integer(m.pruned_kernels),
                           integer(record.total_kernels), m.kernel_prune_ratio,
                           m.weight_prune_ratio, opt(record.vanilla_accuracy), opt(m.accuracy),
                           opt(m.compression_score)});
  }
  return doc;
}

ReportDocument sets_report(const ReportMeta& meta,
                           const std::map<SetSignature, std::size_t>& partition) {
  std::vector<std::pair<SetSignature, std::size_t>> rows(partition.begin(), partition.end());
  std::stable_sort(rows.begin(), rows.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  ReportDocument doc = make(ReportKind::Sets, meta);
  for (const auto& [sig, count] : rows) {
    doc.records.push_back({sig.to_string(), integer(sig.size()), integer(count),
                           std::string(conformance_name(classify_signature(sig)))});
  }
  return doc;
}

ReportDocument layers_report(const ReportMeta& meta, const std::vector<ActivityMap>& maps) {
  ReportDocument doc = make(ReportKind::Layers, meta);
  for (const ActivityMap& map : maps) {
    for (std::size_t i = 0; i < map.layers.size(); ++i) {
      const LayerActivity& l = map.layers[i];
      doc.records.push_back({std::string(mode_name(map.mode)), integer(i), l.layer_name,
                             l.active_params, l.total_params, l.activity});
    }
  }
  return doc;
}

ReportDocument history_report(const ReportMeta& meta, const std::vector<EpochRecord>& history) {
  ReportDocument doc = make(ReportKind::History, meta);
  for (const EpochRecord& rec : history) {
    for (const ModeOutcome& m : rec.modes) {
      doc.records.push_back({rec.epoch, std::string(mode_name(m.mode)), integer(m.pruned_kernels),
                             integer(rec.total_kernels), m.kernel_prune_ratio,
                             m.weight_prune_ratio, opt(rec.vanilla_accuracy), opt(m.accuracy),
                             opt(m.compression_score)});
    }
  }
  return doc;
}

ReportDocument complex_report(const ReportMeta& meta, const KernelCatalog& catalog,
                              const ComplexStats& stats) {
  ReportDocument doc = make(ReportKind::ComplexStats, meta);
  auto row = [&](std::string metric, std::string scope, ReportValue v) {
    doc.records.push_back({std::move(metric), std::move(scope), std::move(v)});
  };
  row("kernels", "all", integer(catalog.size()));
  row("weights", "all", catalog.total_weights());
  for (const auto& layer : catalog.layers()) {
    row("kernels", layer.name, integer(layer.end - layer.begin));
    row("kernel_size", layer.name, std::int64_t{layer.kernel_size});
  }
  row("eigenvalues", "all", integer(stats.total_eigenvalues));
  row("complex_eigenvalues", "all", integer(stats.complex_eigenvalues));
  row("total_complex_ratio", "all", stats.total_complex_ratio);
  for (const ComplexModeStats& m : stats.per_mode) {
    const std::string scope(mode_name(m.mode));
    row("targeted_complex_ratio", scope, m.targeted_complex_ratio);
    row("pruned_kernels", scope, integer(m.pruned_kernels));
    row("pruned_via_complex_ratio", scope, m.pruned_via_complex_ratio);
  }
  return doc;
}

ReportDocument eval_report(const ReportMeta& meta, const std::vector<EvalRow>& rows) {
  ReportDocument doc = make(ReportKind::Eval, meta);
  for (const EvalRow& r : rows) {
    doc.records.push_back({r.mode, r.result.num_samples, r.result.correct,
                           r.result.top1_accuracy, r.result.logits_checksum,
                           opt(r.weight_prune_ratio), opt(r.compression_score)});
  }
  return doc;
}

ReportDocument masks_report(const ReportMeta& meta, CompressionMode mode,
                            const std::vector<MaskFileRow>& rows) {
  ReportDocument doc = make(ReportKind::MasksSummary, meta);
  for (const MaskFileRow& r : rows) {
    doc.records.push_back({std::string(mode_name(mode)), r.layer, integer(r.pruned_kernels),
                           integer(r.total_kernels), r.file});
  }
  return doc;
}

// ---------------------------------------------------------------------------
// Sweep

std::vector<SweepPoint> sweep_ratios(const ScoredModel& scored, CompressionMode mode,
                                     const std::vector<double>& grid) {
  if (grid.empty()) {
    throw Error(ErrorCode::EmptyGrid, "threshold grid is empty");
  }
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] > 0.0) || (i > 0 && !(grid[i] > grid[i - 1]))) {
      throw Error(ErrorCode::InvalidArgument,
                  "threshold grid must be positive and strictly increasing");
    }
  }
  if (scored.records.empty()) {
    throw Error(ErrorCode::EmptyUniverse, "snapshot has no kernels");
  }
  std::vector<SweepPoint> out;
  for (double t : grid) {
    SweepPoint p;
    p.threshold = t;
    for (const KernelRecord& rec : scored.records) {
      p.pruned_kernels += is_pruned(rec.scores[mode_index(mode)], t);
    }
    p.kernel_prune_ratio =
        static_cast<double>(p.pruned_kernels) / static_cast<double>(scored.records.size());
    out.push_back(p);
  }
  return out;
}

ReportDocument threshold_sweep(const ModelSnapshot& snapshot,
                               const std::vector<CompressionMode>& modes,
                               const std::vector<double>& grid, ReportMeta meta, int jobs) {
  const ScoredModel scored = score_model(snapshot, jobs);
  ReportDocument doc = make(ReportKind::Sweep, meta);
  for (CompressionMode mode : modes) {
    for (const SweepPoint& p : sweep_ratios(scored, mode, grid)) {
      doc.records.push_back({std::string(mode_name(mode)), p.threshold, integer(p.pruned_kernels),
                             p.kernel_prune_ratio});
    }
  }
  return doc;
}

std::vector<double> log_grid(double lo, double hi, int count) {
  if (count < 1 || !(lo > 0.0) || !(hi >= lo)) {
    throw Error(ErrorCode::EmptyGrid, "log grid needs count >= 1 and 0 < lo <= hi");
  }
  if (count == 1) return {lo};
  std::vector<double> out;
  const double a = std::log10(lo);
  const double b = std::log10(hi);
  for (int i = 0; i < count; ++i) {
    out.push_back(std::pow(10.0, a + (b - a) * i / (count - 1)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialisation

std::string format_double(double value) {
  if (!std::isfinite(value)) {
    return std::isnan(value) ? "nan" : (value > 0 ? "inf" : "-inf");
  }
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

std::string to_json(const ReportDocument& doc) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["kind"] = report_kind_name(doc.kind);
  ordered_json meta;
  meta["tool"] = doc.meta.tool;
  meta["version"] = doc.meta.version;
  meta["snapshot"] = doc.meta.snapshot_label;
  meta["timestamp"] = doc.meta.timestamp ? ordered_json(*doc.meta.timestamp) : ordered_json();
  ordered_json thresholds;
  for (CompressionMode mode : kAllModes) {
    ordered_json per_size;
    for (int k = 1; k <= 3; ++k) {
      per_size[std::to_string(k)] = doc.meta.thresholds.get(mode, k);
    }
    thresholds[std::string(mode_name(mode))] = per_size;
  }
  meta["thresholds"] = thresholds;
  j["meta"] = meta;
  const auto& columns = report_columns(doc.kind);
  j["columns"] = columns;
  ordered_json records = ordered_json::array();
  for (const Row& row : doc.records) {
    ordered_json r;
    for (std::size_t c = 0; c < columns.size(); ++c) {
      std::visit(
          [&](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, std::monostate>) {
              r[columns[c]] = nullptr;
            } else {
              r[columns[c]] = v;
            }
          },
          row.at(c));
    }
    records.push_back(std::move(r));
  }
  j["records"] = std::move(records);
  return j.dump(2) + "\n";
}

std::string to_csv(const ReportDocument& doc) {
  const auto& columns = report_columns(doc.kind);
  std::string out;
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (c) out += ",";
    out += columns[c];
  }
  out += "\r\n";
  for (const Row& row : doc.records) {
    for (std::size_t c = 0; c < columns.size(); ++c) {
      if (c) out += ",";
      std::visit(
          [&](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, std::monostate>) {
            } else if constexpr (std::is_same_v<T, std::int64_t>) {
              out += std::to_string(v);
            } else if constexpr (std::is_same_v<T, double>) {
              out += format_double(v);
            } else {
              out += csv_escape(v);
            }
          },
          row.at(c));
    }
    out += "\r\n";
  }
  return out;
}

}  // namespace kernelspect

#pragma once

// Simulated pruning of every checkpoint in a training series.

#include <array>
#include <optional>
#include <vector>

#include "kernelspect/infer.hpp"
#include "kernelspect/pruner.hpp"

namespace kernelspect {

struct ModeOutcome {
  CompressionMode mode = CompressionMode::Det;
  std::size_t pruned_kernels = 0;
  double kernel_prune_ratio = 0.0;
  double weight_prune_ratio = 0.0;
  std::optional<double> accuracy;
  std::optional<double> compression_score;
};

struct EpochRecord {
  std::int64_t epoch = 0;
  std::size_t total_kernels = 0;
  std::optional<double> vanilla_accuracy;
  std::array<ModeOutcome, kModeCount> modes{};
};

struct EvalConfig {
  const EvalDataset* dataset = nullptr;
  std::int64_t batch_size = 256;
};

/// Ratios (and, with an eval config, accuracies and compression scores) for
/// one snapshot under every mode, in canonical mode order.
EpochRecord analyse_snapshot(const ModelSnapshot& snapshot, const ThresholdTable& thresholds,
                             int jobs, const std::optional<EvalConfig>& eval = std::nullopt);

/// One record per checkpoint. A failing checkpoint aborts with its epoch in
/// the error message.
std::vector<EpochRecord> epoch_history(const CheckpointSeries& series,
                                       const ThresholdTable& thresholds, int jobs = 1,
                                       const std::optional<EvalConfig>& eval = std::nullopt);

}  // namespace kernelspect

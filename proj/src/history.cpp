#include "kernelspect/history.hpp"

namespace kernelspect {

EpochRecord analyse_snapshot(const ModelSnapshot& snapshot, const ThresholdTable& thresholds,
                             int jobs, const std::optional<EvalConfig>& eval) {
  const ScoredModel scored = score_model(snapshot, jobs);
  const std::vector<PruneMask> masks = build_masks(scored, thresholds);
  EpochRecord rec;
  rec.total_kernels = scored.catalog.size();
  if (eval) {
    rec.vanilla_accuracy =
        evaluate(snapshot, *eval->dataset, nullptr, jobs, eval->batch_size).top1_accuracy;
  }
  for (std::size_t m = 0; m < kModeCount; ++m) {
    ModeOutcome& out = rec.modes[m];
    out.mode = masks[m].mode;
    out.pruned_kernels = masks[m].pruned_count();
    out.kernel_prune_ratio = kernel_prune_ratio(masks[m]);
    out.weight_prune_ratio = weight_prune_ratio(masks[m], scored.catalog);
    if (eval) {
      out.accuracy =
          evaluate(snapshot, *eval->dataset, &masks[m], jobs, eval->batch_size).top1_accuracy;
      out.compression_score =
          compression_score(*out.accuracy, *rec.vanilla_accuracy, out.weight_prune_ratio);
    }
  }
  return rec;
}

std::vector<EpochRecord> epoch_history(const CheckpointSeries& series,
                                       const ThresholdTable& thresholds, int jobs,
                                       const std::optional<EvalConfig>& eval) {
  if (series.snapshots.empty()) {
    throw Error(ErrorCode::EmptySeries, "checkpoint series is empty");
  }
  std::vector<EpochRecord> out;
  for (const Checkpoint& cp : series.snapshots) {
    try {
      EpochRecord rec = analyse_snapshot(*cp.snapshot, thresholds, jobs, eval);
      rec.epoch = cp.epoch;
      out.push_back(std::move(rec));
    } catch (const Error& e) {
      throw Error(e.code(), "epoch " + std::to_string(cp.epoch) + ": " + e.detail());
    }
  }
  return out;
}

}  // namespace kernelspect

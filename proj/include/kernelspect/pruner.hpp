#pragma once

// Whole-model application of the compression modes: kernel catalog, masks,
// pruning ratios, compression score, set partition, per-layer activity and
// complex-eigenvalue statistics.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kernelspect/modes.hpp"
#include "kernelspect/tensor_io.hpp"

namespace kernelspect {

struct KernelIndex {
  std::string layer_name;
  int out_channel = 0;
  int in_channel = 0;
  int size = 0;

  bool operator==(const KernelIndex&) const = default;
};

/// Enumerates every conv2d kernel of a snapshot in canonical order: layers in
/// manifest order, then out_channel, then in_channel.
class KernelCatalog {
 public:
  struct LayerRange {
    std::string name;
    std::size_t begin = 0;  // first kernel ordinal
    std::size_t end = 0;    // one past the last
    int out_channels = 0;
    int in_channels = 0;
    int kernel_size = 0;

    bool operator==(const LayerRange&) const = default;
  };

  KernelCatalog() = default;
  explicit KernelCatalog(const ModelSnapshot& snapshot);

  std::size_t size() const { return total_; }
  const std::vector<LayerRange>& layers() const { return layers_; }
  const LayerRange& layer_of(std::size_t ordinal) const;
  KernelIndex index(std::size_t ordinal) const;
  int kernel_size(std::size_t ordinal) const { return layer_of(ordinal).kernel_size; }
  std::int64_t total_weights() const { return total_weights_; }

  /// Kernel entries widened to float64.
  SmallMatrix kernel(const ModelSnapshot& snapshot, std::size_t ordinal) const;

  bool operator==(const KernelCatalog&) const = default;

 private:
  std::vector<LayerRange> layers_;
  std::size_t total_ = 0;
  std::int64_t total_weights_ = 0;
};

/// Per-kernel results needed by every downstream analysis.
struct KernelRecord {
  int size = 0;
  std::array<double, kModeCount> scores{};
  std::uint8_t eigenvalue_count = 0;
  std::uint8_t complex_eigenvalues = 0;
  // For min_eig, min_eig_real, spectral_radius, spectral_radius_real.
  std::array<bool, 4> deciding_is_complex{};
};

/// Modes whose decision rests on a single eigenvalue.
inline constexpr std::array<CompressionMode, 4> kEigenvalueModes = {
    CompressionMode::MinEig, CompressionMode::MinEigReal, CompressionMode::SpectralRadius,
    CompressionMode::SpectralRadiusReal};

/// Eigenvalues with |im| above this fraction of max|w_ij| count as complex.
inline constexpr double kComplexTolerance = 1e-12;

struct ScoredModel {
  KernelCatalog catalog;
  std::vector<KernelRecord> records;
};

/// Scores every kernel. Work fans out over `jobs` threads; the result is
/// identical for every job count. Errors carry the offending KernelIndex.
ScoredModel score_model(const ModelSnapshot& snapshot, int jobs = 1);

struct PruneMask {
  CompressionMode mode = CompressionMode::Det;
  std::vector<std::uint8_t> pruned;  // one flag per kernel ordinal

  std::size_t universe_size() const { return pruned.size(); }
  std::size_t pruned_count() const;
  bool contains(std::size_t ordinal) const { return pruned[ordinal] != 0; }
  std::vector<KernelIndex> pruned_kernels(const KernelCatalog& catalog) const;
};

/// One mask per mode, in canonical mode order.
std::vector<PruneMask> build_masks(const ScoredModel& scored, const ThresholdTable& thresholds);
std::vector<PruneMask> build_masks(const ModelSnapshot& snapshot,
                                   const ThresholdTable& thresholds, int jobs = 1);

double kernel_prune_ratio(const PruneMask& mask);
double weight_prune_ratio(const PruneMask& mask, const KernelCatalog& catalog);
double compression_score(double acc_pruned, double acc_vanilla, double weight_ratio);

/// Zeroes the weights of every pruned kernel.
ModelSnapshot apply_mask(const ModelSnapshot& snapshot, const KernelCatalog& catalog,
                         const PruneMask& mask);

/// Writes `<dir>/<layer>.npy` (uint8, [out, in], 1 = pruned) per conv layer.
void export_masks(const PruneMask& mask, const KernelCatalog& catalog,
                  const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Set analysis

class SetSignature {
 public:
  SetSignature() = default;
  explicit SetSignature(std::uint8_t bits) : bits_(bits) {}

  SetSignature with(CompressionMode mode) const {
    return SetSignature(static_cast<std::uint8_t>(bits_ | (1u << mode_index(mode))));
  }
  bool contains(CompressionMode mode) const { return (bits_ >> mode_index(mode)) & 1u; }
  bool empty() const { return bits_ == 0; }
  std::uint8_t bits() const { return bits_; }
  std::size_t size() const;
  /// Drops the two real-part variants.
  SetSignature vanilla_projection() const;
  /// Mode names joined with '+', canonical order.
  std::string to_string() const;

  auto operator<=>(const SetSignature&) const = default;

 private:
  std::uint8_t bits_ = 0;
};

enum class SignatureConformance {
  Listed,     // one of the ten sets observed on full-scale trainings
  Exception,  // (min_eig, det, spectral_radius) or det_gram alone
  Unlisted,
  RealOnly,   // pruned only by real-part variants; not covered by the list
};

std::string_view conformance_name(SignatureConformance c);
SignatureConformance classify_signature(SetSignature signature);

std::map<SetSignature, std::size_t> set_partition(const std::vector<PruneMask>& masks);

// ---------------------------------------------------------------------------
// Layer activity

struct LayerActivity {
  std::string layer_name;
  std::int64_t active_params = 0;
  std::int64_t total_params = 0;
  double activity = 1.0;
};

struct ActivityMap {
  CompressionMode mode = CompressionMode::Det;
  std::vector<LayerActivity> layers;
};

ActivityMap layer_activity(const PruneMask& mask, const KernelCatalog& catalog);

// ---------------------------------------------------------------------------
// Complex eigenvalue statistics

struct ComplexModeStats {
  CompressionMode mode = CompressionMode::MinEig;
  double targeted_complex_ratio = 0.0;
  double pruned_via_complex_ratio = 0.0;
  std::size_t pruned_kernels = 0;
};

struct ComplexStats {
  double total_complex_ratio = 0.0;
  std::size_t total_eigenvalues = 0;
  std::size_t complex_eigenvalues = 0;
  std::array<ComplexModeStats, 4> per_mode{};
};

ComplexStats complex_stats(const ScoredModel& scored, const std::vector<PruneMask>& masks);

}  // namespace kernelspect

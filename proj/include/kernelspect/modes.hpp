#pragma once

// The eight compression modes and their significance thresholds.
//
// With the default table the modes obey a dominance chain for every kernel
// of side 1 or 3:
//
//   pruned(spectral_norm) => pruned(spectral_radius) => pruned(det)
//                         => pruned(min_eig)
//
// because |lambda| <= sigma_max, |det| = prod |lambda_i| < t^n whenever
// max |lambda| < t, and min |lambda|^n <= |det|. Since sigma_max >= max|w| >=
// mean|w| the spectral_norm mask is also inside the weight mask, and
// |Re lambda| <= |lambda| puts each real-part variant above its vanilla
// counterpart.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "kernelspect/spectra.hpp"

namespace kernelspect {

enum class CompressionMode : std::uint8_t {
  Det,
  DetGram,
  MinEig,
  MinEigReal,
  SpectralRadius,
  SpectralRadiusReal,
  SpectralNorm,
  Weight,
};

inline constexpr std::size_t kModeCount = 8;

/// Canonical order; every report iterates modes like this.
inline constexpr std::array<CompressionMode, kModeCount> kAllModes = {
    CompressionMode::Det,
    CompressionMode::DetGram,
    CompressionMode::MinEig,
    CompressionMode::MinEigReal,
    CompressionMode::SpectralRadius,
    CompressionMode::SpectralRadiusReal,
    CompressionMode::SpectralNorm,
    CompressionMode::Weight,
};

constexpr std::size_t mode_index(CompressionMode mode) {
  return static_cast<std::size_t>(mode);
}

std::string_view mode_name(CompressionMode mode);
/// Throws InvalidArgument for unknown names.
CompressionMode parse_mode(std::string_view name);

/// Per (mode, kernel side) significance threshold. Immutable by value.
class ThresholdTable {
 public:
  double get(CompressionMode mode, int kernel_size) const;
  /// Throws InvalidArgument for non-positive or non-finite values.
  ThresholdTable with(CompressionMode mode, int kernel_size, double value) const;
  ThresholdTable with_all_sizes(CompressionMode mode, double value) const;

  bool operator==(const ThresholdTable&) const = default;

 private:
  friend ThresholdTable default_thresholds();
  // index [mode][size - 1]
  std::array<std::array<double, 3>, kModeCount> values_{};
};

ThresholdTable default_thresholds();

/// Applies an override of the form `mode=value` or `mode=value:ksize`.
ThresholdTable apply_override(const ThresholdTable& table, std::string_view spec);

double score(CompressionMode mode, const SpectralSummary& summary,
             const SmallMatrix& kernel);

/// All eight scores in canonical order.
std::array<double, kModeCount> score_all(const SpectralSummary& summary,
                                         const SmallMatrix& kernel);

/// Strict: a score equal to the threshold survives.
bool is_pruned(double score_value, double threshold);
bool is_pruned(CompressionMode mode, const SmallMatrix& kernel,
               const ThresholdTable& thresholds);

/// Index into summary.eigenvalues of the eigenvalue deciding an
/// eigenvalue-based mode (first in canonical order on ties), or nullopt for
/// the modes that do not pick a single eigenvalue.
std::optional<std::size_t> deciding_eigenvalue(CompressionMode mode,
                                               const SpectralSummary& summary);

}  // namespace kernelspect

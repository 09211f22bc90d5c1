#include "kernelspect/modes.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "kernelspect/error.hpp"

namespace kernelspect {

namespace {

constexpr std::array<std::string_view, kModeCount> kModeNames = {
    "det",           "det_gram",
    "min_eig",       "min_eig_real",
    "spectral_radius", "spectral_radius_real",
    "spectral_norm", "weight",
};

void check_size(int kernel_size) {
  if (kernel_size < 1 || kernel_size > 3) {
    throw Error(ErrorCode::UnsupportedOrder,
                "kernel size " + std::to_string(kernel_size) + " is outside 1..3");
  }
}

double parse_double(std::string_view text) {
  double value = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw Error(ErrorCode::InvalidArgument,
                "cannot parse number '" + std::string(text) + "'");
  }
  return value;
}

}  // namespace

std::string_view mode_name(CompressionMode mode) {
  return kModeNames[mode_index(mode)];
}

CompressionMode parse_mode(std::string_view name) {
  for (CompressionMode mode : kAllModes) {
    if (mode_name(mode) == name) {
      return mode;
    }
  }
  throw Error(ErrorCode::InvalidArgument,
              "unknown compression mode '" + std::string(name) + "'");
}

double ThresholdTable::get(CompressionMode mode, int kernel_size) const {
  check_size(kernel_size);
  return values_[mode_index(mode)][kernel_size - 1];
}

ThresholdTable ThresholdTable::with(CompressionMode mode, int kernel_size,
                                    double value) const {
  check_size(kernel_size);
  if (!(value > 0.0) || !std::isfinite(value)) {
    throw Error(ErrorCode::InvalidArgument,
                "threshold for " + std::string(mode_name(mode)) +
                    " must be positive and finite");
  }
  ThresholdTable out = *this;
  out.values_[mode_index(mode)][kernel_size - 1] = value;
  return out;
}

ThresholdTable ThresholdTable::with_all_sizes(CompressionMode mode,
                                              double value) const {
  ThresholdTable out = *this;
  for (int k = 1; k <= 3; ++k) {
    out = out.with(mode, k, value);
  }
  return out;
}

ThresholdTable default_thresholds() {
  // "others" use 1e-4 for every size. det scales as t^n and det_gram as
  // t^(2n), which reproduces 1e-12/1e-24 for 3x3 and 1e-4/1e-8 for 1x1 and
  // gives 1e-8/1e-16 for 2x2.
  ThresholdTable table;
  for (auto& row : table.values_) {
    row = {1e-4, 1e-4, 1e-4};
  }
  table.values_[mode_index(CompressionMode::Det)] = {1e-4, 1e-8, 1e-12};
  table.values_[mode_index(CompressionMode::DetGram)] = {1e-8, 1e-16, 1e-24};
  return table;
}

ThresholdTable apply_override(const ThresholdTable& table, std::string_view spec) {
  const auto eq = spec.find('=');
  if (eq == std::string_view::npos) {
    throw Error(ErrorCode::InvalidArgument,
                "threshold override '" + std::string(spec) +
                    "' is not of the form mode=value[:ksize]");
  }
  const CompressionMode mode = parse_mode(spec.substr(0, eq));
  std::string_view rest = spec.substr(eq + 1);
  const auto colon = rest.find(':');
  if (colon == std::string_view::npos) {
    return table.with_all_sizes(mode, parse_double(rest));
  }
  const double value = parse_double(rest.substr(0, colon));
  const double ksize = parse_double(rest.substr(colon + 1));
  if (ksize != std::floor(ksize)) {
    throw Error(ErrorCode::InvalidArgument, "kernel size must be an integer");
  }
  return table.with(mode, static_cast<int>(ksize), value);
}

double score(CompressionMode mode, const SpectralSummary& summary,
             const SmallMatrix& kernel) {
  const auto& eig = summary.eigenvalues;
  switch (mode) {
    case CompressionMode::Det:
      return std::abs(summary.determinant);
    case CompressionMode::DetGram:
      return std::abs(summary.gram_determinant);
    case CompressionMode::MinEig: {
      double best = std::abs(eig.front());
      for (const Complex& z : eig) best = std::min(best, std::abs(z));
      return best;
    }
    case CompressionMode::MinEigReal: {
      double best = std::abs(eig.front().real());
      for (const Complex& z : eig) best = std::min(best, std::abs(z.real()));
      return best;
    }
    case CompressionMode::SpectralRadius: {
      double best = 0.0;
      for (const Complex& z : eig) best = std::max(best, std::abs(z));
      return best;
    }
    case CompressionMode::SpectralRadiusReal: {
      double best = 0.0;
      for (const Complex& z : eig) best = std::max(best, std::abs(z.real()));
      return best;
    }
    case CompressionMode::SpectralNorm:
      return summary.spectral_norm;
    case CompressionMode::Weight:
      return kernel.mean_abs();
  }
  throw Error(ErrorCode::InvalidArgument, "unknown compression mode");
}

std::array<double, kModeCount> score_all(const SpectralSummary& summary,
                                         const SmallMatrix& kernel) {
  std::array<double, kModeCount> out{};
  for (CompressionMode mode : kAllModes) {
    out[mode_index(mode)] = score(mode, summary, kernel);
  }
  return out;
}

bool is_pruned(double score_value, double threshold) {
  return score_value < threshold;
}

bool is_pruned(CompressionMode mode, const SmallMatrix& kernel,
               const ThresholdTable& thresholds) {
  const SpectralSummary summary = summarize(kernel);
  return is_pruned(score(mode, summary, kernel),
                   thresholds.get(mode, kernel.order()));
}

std::optional<std::size_t> deciding_eigenvalue(CompressionMode mode,
                                               const SpectralSummary& summary) {
  const auto& eig = summary.eigenvalues;
  auto pick = [&](auto key, bool want_min) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < eig.size(); ++i) {
      const double v = key(eig[i]);
      const double b = key(eig[best]);
      if (want_min ? v < b : v > b) {
        best = i;
      }
    }
    return best;
  };
  auto modulus = [](const Complex& z) { return std::abs(z); };
  auto real_abs = [](const Complex& z) { return std::abs(z.real()); };
  switch (mode) {
    case CompressionMode::MinEig:
      return pick(modulus, true);
    case CompressionMode::MinEigReal:
      return pick(real_abs, true);
    case CompressionMode::SpectralRadius:
      return pick(modulus, false);
    case CompressionMode::SpectralRadiusReal:
      return pick(real_abs, false);
    default:
      return std::nullopt;
  }
}

}  // namespace kernelspect

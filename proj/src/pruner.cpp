#include "kernelspect/pruner.hpp"

#include <algorithm>
#include <cmath>

#include "kernelspect/parallel.hpp"

namespace kernelspect {

namespace {

std::string describe(const KernelIndex& k) {
  return "layer '" + k.layer_name + "' kernel (out " + std::to_string(k.out_channel) + ", in " +
         std::to_string(k.in_channel) + ")";
}

void check_universe(const std::vector<PruneMask>& masks) {
  if (masks.empty()) {
    throw Error(ErrorCode::UniverseMismatch, "no masks given");
  }
  for (const PruneMask& m : masks) {
    if (m.universe_size() != masks.front().universe_size()) {
      throw Error(ErrorCode::UniverseMismatch, "masks cover kernel universes of different size");
    }
  }
}

const PruneMask& mask_for(const std::vector<PruneMask>& masks, CompressionMode mode) {
  for (const PruneMask& m : masks) {
    if (m.mode == mode) return m;
  }
  throw Error(ErrorCode::UniverseMismatch,
              "no mask for mode " + std::string(mode_name(mode)));
}

}  // namespace

// ---------------------------------------------------------------------------
// KernelCatalog

KernelCatalog::KernelCatalog(const ModelSnapshot& snapshot) {
  for (const LayerSpec& layer : snapshot.manifest) {
    if (layer.op_kind != OpKind::Conv2d) continue;
    const Shape& s = snapshot.tensor(layer, "weights").shape();
    LayerRange range;
    range.name = layer.name;
    range.out_channels = static_cast<int>(s[0]);
    range.in_channels = static_cast<int>(s[1]);
    range.kernel_size = static_cast<int>(s[2]);
    range.begin = total_;
    total_ += static_cast<std::size_t>(s[0] * s[1]);
    range.end = total_;
    total_weights_ += s[0] * s[1] * s[2] * s[3];
    layers_.push_back(std::move(range));
  }
}

const KernelCatalog::LayerRange& KernelCatalog::layer_of(std::size_t ordinal) const {
  const auto it = std::upper_bound(layers_.begin(), layers_.end(), ordinal,
                                   [](std::size_t o, const LayerRange& r) { return o < r.end; });
  if (it == layers_.end()) {
    throw Error(ErrorCode::UniverseMismatch,
                "kernel ordinal " + std::to_string(ordinal) + " is out of range");
  }
  return *it;
}

KernelIndex KernelCatalog::index(std::size_t ordinal) const {
  const LayerRange& r = layer_of(ordinal);
  const std::size_t local = ordinal - r.begin;
  return {r.name, static_cast<int>(local / r.in_channels), static_cast<int>(local % r.in_channels),
          r.kernel_size};
}

SmallMatrix KernelCatalog::kernel(const ModelSnapshot& snapshot, std::size_t ordinal) const {
  const LayerRange& r = layer_of(ordinal);
  const Tensor& w = snapshot.tensor(snapshot.layer(r.name), "weights");
  const std::size_t n2 = static_cast<std::size_t>(r.kernel_size * r.kernel_size);
  const std::size_t offset = (ordinal - r.begin) * n2;
  std::array<double, 9> entries{};
  if (w.dtype() == DType::Float32) {
    const auto v = w.values<float>();
    std::copy_n(v.begin() + offset, n2, entries.begin());
  } else {
    const auto v = w.values<double>();
    std::copy_n(v.begin() + offset, n2, entries.begin());
  }
  return SmallMatrix(r.kernel_size, std::span<const double>(entries.data(), n2));
}

// ---------------------------------------------------------------------------
// Scoring and masks

ScoredModel score_model(const ModelSnapshot& snapshot, int jobs) {
  ScoredModel out;
  out.catalog = KernelCatalog(snapshot);
  out.records.resize(out.catalog.size());
  const KernelCatalog& catalog = out.catalog;

  parallel_for(catalog.size(), jobs, [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      try {
        const SmallMatrix kernel = catalog.kernel(snapshot, k);
        const SpectralSummary summary = summarize(kernel);
        KernelRecord& rec = out.records[k];
        rec.size = kernel.order();
        rec.scores = score_all(summary, kernel);
        rec.eigenvalue_count = static_cast<std::uint8_t>(summary.eigenvalues.size());
        const double tol = kComplexTolerance * summary.scale;
        for (const Complex& z : summary.eigenvalues) {
          if (std::abs(z.imag()) > tol) ++rec.complex_eigenvalues;
        }
        for (std::size_t m = 0; m < kEigenvalueModes.size(); ++m) {
          const auto idx = deciding_eigenvalue(kEigenvalueModes[m], summary);
          rec.deciding_is_complex[m] = std::abs(summary.eigenvalues[*idx].imag()) > tol;
        }
      } catch (const Error& e) {
        throw Error(e.code(), describe(catalog.index(k)) + ": " + e.detail());
      }
    }
  });
  return out;
}

std::size_t PruneMask::pruned_count() const {
  return static_cast<std::size_t>(std::count(pruned.begin(), pruned.end(), std::uint8_t{1}));
}

std::vector<KernelIndex> PruneMask::pruned_kernels(const KernelCatalog& catalog) const {
  std::vector<KernelIndex> out;
  for (std::size_t k = 0; k < pruned.size(); ++k) {
    if (pruned[k]) out.push_back(catalog.index(k));
  }
  return out;
}

std::vector<PruneMask> build_masks(const ScoredModel& scored, const ThresholdTable& thresholds) {
  std::vector<PruneMask> masks;
  for (CompressionMode mode : kAllModes) {
    PruneMask mask;
    mask.mode = mode;
    mask.pruned.resize(scored.records.size());
    for (std::size_t k = 0; k < scored.records.size(); ++k) {
      const KernelRecord& rec = scored.records[k];
      mask.pruned[k] = is_pruned(rec.scores[mode_index(mode)], thresholds.get(mode, rec.size));
    }
    masks.push_back(std::move(mask));
  }
  return masks;
}

std::vector<PruneMask> build_masks(const ModelSnapshot& snapshot,
                                   const ThresholdTable& thresholds, int jobs) {
  return build_masks(score_model(snapshot, jobs), thresholds);
}

double kernel_prune_ratio(const PruneMask& mask) {
  if (mask.universe_size() == 0) {
    throw Error(ErrorCode::EmptyUniverse, "mask covers no kernels");
  }
  return static_cast<double>(mask.pruned_count()) / static_cast<double>(mask.universe_size());
}

double weight_prune_ratio(const PruneMask& mask, const KernelCatalog& catalog) {
  if (mask.universe_size() == 0 || catalog.total_weights() == 0) {
    throw Error(ErrorCode::EmptyUniverse, "mask covers no kernels");
  }
  if (mask.universe_size() != catalog.size()) {
    throw Error(ErrorCode::UniverseMismatch, "mask and catalog disagree on kernel count");
  }
  std::int64_t pruned_weights = 0;
  for (const auto& layer : catalog.layers()) {
    const std::int64_t per_kernel = layer.kernel_size * layer.kernel_size;
    for (std::size_t k = layer.begin; k < layer.end; ++k) {
      if (mask.pruned[k]) pruned_weights += per_kernel;
    }
  }
  return static_cast<double>(pruned_weights) / static_cast<double>(catalog.total_weights());
}

double compression_score(double acc_pruned, double acc_vanilla, double weight_ratio) {
  if (!(acc_vanilla > 0.0)) {
    throw Error(ErrorCode::ZeroVanillaAccuracy, "vanilla accuracy must be positive");
  }
  return acc_pruned / acc_vanilla * weight_ratio;
}

ModelSnapshot apply_mask(const ModelSnapshot& snapshot, const KernelCatalog& catalog,
                         const PruneMask& mask) {
  if (mask.universe_size() != catalog.size()) {
    throw Error(ErrorCode::UniverseMismatch, "mask and catalog disagree on kernel count");
  }
  ModelSnapshot out = snapshot;
  for (const auto& layer : catalog.layers()) {
    const std::string& tensor_name = snapshot.layer(layer.name).weight_refs.at("weights");
    Tensor& w = out.tensors.at(tensor_name);
    const std::size_t n2 = static_cast<std::size_t>(layer.kernel_size * layer.kernel_size);
    const std::size_t elem = dtype_size(w.dtype());
    auto bytes = w.mutable_bytes();
    for (std::size_t k = layer.begin; k < layer.end; ++k) {
      if (!mask.pruned[k]) continue;
      const std::size_t offset = (k - layer.begin) * n2 * elem;
      std::fill_n(bytes.begin() + static_cast<std::ptrdiff_t>(offset), n2 * elem, std::byte{0});
    }
  }
  return out;
}

void export_masks(const PruneMask& mask, const KernelCatalog& catalog,
                  const std::filesystem::path& dir) {
  if (mask.universe_size() != catalog.size()) {
    throw Error(ErrorCode::UniverseMismatch, "mask and catalog disagree on kernel count");
  }
  std::filesystem::create_directories(dir);
  for (const auto& layer : catalog.layers()) {
    std::vector<std::uint8_t> flags(mask.pruned.begin() + static_cast<std::ptrdiff_t>(layer.begin),
                                    mask.pruned.begin() + static_cast<std::ptrdiff_t>(layer.end));
    save_npy(Tensor::from_values<std::uint8_t>({layer.out_channels, layer.in_channels}, flags),
             dir / (layer.name + ".npy"));
  }
}

// ---------------------------------------------------------------------------
// Set analysis

std::size_t SetSignature::size() const {
  return static_cast<std::size_t>(std::popcount(static_cast<unsigned>(bits_)));
}

SetSignature SetSignature::vanilla_projection() const {
  const unsigned real_bits = (1u << mode_index(CompressionMode::MinEigReal)) |
                             (1u << mode_index(CompressionMode::SpectralRadiusReal));
  return SetSignature(static_cast<std::uint8_t>(bits_ & ~real_bits));
}

std::string SetSignature::to_string() const {
  std::string out;
  for (CompressionMode mode : kAllModes) {
    if (!contains(mode)) continue;
    if (!out.empty()) out += "+";
    out += mode_name(mode);
  }
  return out;
}

std::string_view conformance_name(SignatureConformance c) {
  switch (c) {
    case SignatureConformance::Listed: return "listed";
    case SignatureConformance::Exception: return "exception";
    case SignatureConformance::Unlisted: return "unlisted";
    case SignatureConformance::RealOnly: return "real_only";
  }
  return "unknown";
}

SignatureConformance classify_signature(SetSignature signature) {
  using M = CompressionMode;
  auto sig = [](std::initializer_list<M> modes) {
    SetSignature s;
    for (M m : modes) s = s.with(m);
    return s;
  };
  static const std::array<SetSignature, 10> kListed = {
      sig({M::MinEig, M::Weight, M::Det, M::SpectralRadius, M::SpectralNorm, M::DetGram}),
      sig({M::MinEig, M::Weight, M::Det, M::SpectralRadius, M::DetGram}),
      sig({M::MinEig, M::Weight, M::Det, M::DetGram}),
      sig({M::MinEig, M::Det, M::SpectralRadius, M::DetGram}),
      sig({M::MinEig, M::Det, M::DetGram}),
      sig({M::MinEig, M::DetGram}),
      sig({M::MinEig, M::Weight}),
      sig({M::MinEig, M::Det}),
      sig({M::MinEig}),
      sig({M::Weight}),
  };
  static const std::array<SetSignature, 2> kExceptions = {
      sig({M::MinEig, M::Det, M::SpectralRadius}),
      sig({M::DetGram}),
  };
  const SetSignature projected = signature.vanilla_projection();
  if (projected.empty()) return SignatureConformance::RealOnly;
  if (std::find(kListed.begin(), kListed.end(), projected) != kListed.end()) {
    return SignatureConformance::Listed;
  }
  if (std::find(kExceptions.begin(), kExceptions.end(), projected) != kExceptions.end()) {
    return SignatureConformance::Exception;
  }
  return SignatureConformance::Unlisted;
}

std::map<SetSignature, std::size_t> set_partition(const std::vector<PruneMask>& masks) {
  check_universe(masks);
  std::map<SetSignature, std::size_t> out;
  for (std::size_t k = 0; k < masks.front().universe_size(); ++k) {
    SetSignature s;
    for (const PruneMask& m : masks) {
      if (m.pruned[k]) s = s.with(m.mode);
    }
    if (!s.empty()) ++out[s];
  }
  return out;
}

// ---------------------------------------------------------------------------

ActivityMap layer_activity(const PruneMask& mask, const KernelCatalog& catalog) {
  if (mask.universe_size() != catalog.size()) {
    throw Error(ErrorCode::UniverseMismatch, "mask and catalog disagree on kernel count");
  }
  ActivityMap out;
  out.mode = mask.mode;
  for (const auto& layer : catalog.layers()) {
    const std::int64_t per_kernel = layer.kernel_size * layer.kernel_size;
    LayerActivity a;
    a.layer_name = layer.name;
    a.total_params = static_cast<std::int64_t>(layer.end - layer.begin) * per_kernel;
    std::int64_t pruned = 0;
    for (std::size_t k = layer.begin; k < layer.end; ++k) {
      if (mask.pruned[k]) pruned += per_kernel;
    }
    a.active_params = a.total_params - pruned;
    a.activity = a.total_params == 0
                     ? 1.0
                     : static_cast<double>(a.active_params) / static_cast<double>(a.total_params);
    out.layers.push_back(std::move(a));
  }
  return out;
}

ComplexStats complex_stats(const ScoredModel& scored, const std::vector<PruneMask>& masks) {
  check_universe(masks);
  if (masks.front().universe_size() != scored.records.size()) {
    throw Error(ErrorCode::UniverseMismatch, "masks and scores disagree on kernel count");
  }
  ComplexStats out;
  for (const KernelRecord& rec : scored.records) {
    out.total_eigenvalues += rec.eigenvalue_count;
    out.complex_eigenvalues += rec.complex_eigenvalues;
  }
  if (out.total_eigenvalues > 0) {
    out.total_complex_ratio =
        static_cast<double>(out.complex_eigenvalues) / static_cast<double>(out.total_eigenvalues);
  }
  for (std::size_t m = 0; m < kEigenvalueModes.size(); ++m) {
    const PruneMask& mask = mask_for(masks, kEigenvalueModes[m]);
    ComplexModeStats stats;
    stats.mode = kEigenvalueModes[m];
    std::size_t targeted = 0;
    std::size_t pruned_complex = 0;
    for (std::size_t k = 0; k < scored.records.size(); ++k) {
      const bool complex = scored.records[k].deciding_is_complex[m];
      targeted += complex;
      if (mask.pruned[k]) {
        ++stats.pruned_kernels;
        pruned_complex += complex;
      }
    }
    if (!scored.records.empty()) {
      stats.targeted_complex_ratio =
          static_cast<double>(targeted) / static_cast<double>(scored.records.size());
    }
    if (stats.pruned_kernels > 0) {
      stats.pruned_via_complex_ratio =
          static_cast<double>(pruned_complex) / static_cast<double>(stats.pruned_kernels);
    }
    out.per_mode[m] = stats;
  }
  return out;
}

}  // namespace kernelspect

// Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <thread>

#include "kernelspect/history.hpp"
#include "kernelspect/parallel.hpp"
#include "kernelspect/report.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace kernelspect;
using M = CompressionMode;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int worker_count() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

template <class Body>
void for_each_index(std::size_t count, Body&& body) {
  parallel_for(count, worker_count(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) body(i);
  });
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Two fixed corpora of 3x3 matrices: Uniform(-1, 1) and Uniform(-1e-4, 1e-4).
const std::vector<SmallMatrix>& corpus() {
  static const std::vector<SmallMatrix> all = [] {
    std::vector<SmallMatrix> out;
    out.reserve(200000);
    std::mt19937_64 rng(20240611);
    for (double bound : {1.0, 1e-4})
      for (int i = 0; i < 100000; ++i) out.push_back(oracle::random_kernel(rng, 3, bound));
    return out;
  }();
  return all;
}

Outcome eigensolver() {
  const auto& mats = corpus();
  std::vector<double> residual(mats.size()), distance(mats.size());
  std::atomic<std::size_t> oracle_failures{0};
  for_each_index(mats.size(), [&](std::size_t i) {
    const SmallMatrix& k = mats[i];
    const double s = k.max_abs();
    const auto ev = eigenvalues(k);
    double worst = 0;
    for (const Complex& z : ev) worst = std::max(worst, oracle::charpoly_residual(k, z) / (s * s * s));
    residual[i] = worst;
    try {
      distance[i] = oracle::greedy_pair_distance(ev, oracle_roots(characteristic_polynomial(k))) / s;
    } catch (const Error&) {
      ++oracle_failures;
      distance[i] = INFINITY;
    }
  });
  const double r = *std::max_element(residual.begin(), residual.end());
  const double d = *std::max_element(distance.begin(), distance.end());
  const auto over_r = std::count_if(residual.begin(), residual.end(), [](double x) { return !(x < 1e-9); });
  const auto over_d = std::count_if(distance.begin(), distance.end(), [](double x) { return !(x <= 1e-8); });
  return {over_r == 0 && over_d == 0,
          "200000 matrices, max |charpoly|/s^3 " + fmt("%.3g", r) + ", max oracle distance/s " + fmt("%.3g", d) +
              ", failures " + std::to_string(over_r + over_d) + ", oracle non-convergence " +
              std::to_string(oracle_failures.load())};
}

Outcome inequalities() {
  const auto& mats = corpus();
  std::vector<std::uint32_t> bad(mats.size(), 0);
  for_each_index(mats.size(), [&](std::size_t i) {
    const SmallMatrix& k = mats[i];
    const SpectralSummary sm = summarize(k);
    const double s = sm.scale, tol = 1e-12 * s;
    double lo = INFINITY, hi = 0;
    std::uint32_t v = 0;
    for (const Complex& z : sm.eigenvalues) {
      lo = std::min(lo, std::abs(z));
      hi = std::max(hi, std::abs(z));
      v += std::abs(z.real()) > std::abs(z);
      double slack = -INFINITY;
      for (const GershgorinDisk& d : sm.disks) slack = std::max(slack, d.radius - std::abs(z - Complex(d.center, 0)));
      v += slack < -tol;
    }
    v += sm.spectral_norm < hi - tol;
    v += hi < lo;
    v += sm.spectral_norm < k.mean_abs();
    bad[i] = v;
  });
  std::size_t total = 0;
  for (auto b : bad) total += b;
  return {total == 0, "200000 matrices, " + std::to_string(total) + " violations"};
}

std::vector<std::filesystem::path> fixture_manifests() {
  std::vector<std::filesystem::path> out = {testutil::fixtures() / "tinynet" / "manifest.json",
                                            testutil::fixtures() / "tinynet-l1" / "manifest.json"};
  std::vector<std::filesystem::path> series;
  for (const auto& e : std::filesystem::directory_iterator(testutil::fixtures() / "tinynet-l1-series"))
    series.push_back(e.path() / "manifest.json");
  std::sort(series.begin(), series.end());
  out.insert(out.end(), series.begin(), series.end());
  return out;
}

// Violated subset relations between masks, summed over kernels.
std::size_t lattice_violations(const std::array<bool, kModeCount>& p) {
  auto implies = [&](M a, M b) { return p[mode_index(a)] && !p[mode_index(b)]; };
  return implies(M::SpectralNorm, M::SpectralRadius) + implies(M::SpectralRadius, M::Det) +
         implies(M::Det, M::MinEig) + implies(M::SpectralNorm, M::Weight) + implies(M::MinEig, M::MinEigReal) +
         implies(M::SpectralRadius, M::SpectralRadiusReal);
}

Outcome lattice() {
  const ThresholdTable t = default_thresholds();
  std::mt19937_64 rng(77);
  const double bounds[] = {1e-3, 3e-4, 1e-4, 3e-5, 1e-5};
  std::size_t violations = 0, kernels = 0;
  for (int i = 0; i < 20000; ++i) {
    const int n = i % 4 == 0 ? 1 : (i % 4 == 1 ? 2 : 3);
    const SmallMatrix k = oracle::random_kernel(rng, n, bounds[i % 5]);
    const auto s = score_all(summarize(k), k);
    std::array<bool, kModeCount> p{};
    for (M m : kAllModes) p[mode_index(m)] = is_pruned(s[mode_index(m)], t.get(m, n));
    violations += lattice_violations(p);
    ++kernels;
  }
  const std::size_t random_kernels = kernels;
  const auto manifests = fixture_manifests();
  for (const auto& path : manifests) {
    const auto masks = build_masks(load_snapshot(path), t, worker_count());
    for (std::size_t k = 0; k < masks[0].pruned.size(); ++k) {
      std::array<bool, kModeCount> p{};
      for (std::size_t m = 0; m < kModeCount; ++m) p[m] = masks[m].pruned[k];
      violations += lattice_violations(p);
      ++kernels;
    }
  }
  return {violations == 0, std::to_string(random_kernels) + " random + " + std::to_string(kernels - random_kernels) +
                               " kernels from " + std::to_string(manifests.size()) + " fixture snapshots, " +
                               std::to_string(violations) + " violations"};
}

Outcome det_gram() {
  const ThresholdTable t = default_thresholds();
  std::mt19937_64 rng(99);
  std::size_t checked = 0, bound_violations = 0;
  for (int i = 0; i < 50000; ++i) {
    const int n = 1 + i % 3;
    const SmallMatrix k = oracle::random_kernel(rng, n, i % 2 ? 1.0 : 3e-3);
    const SpectralSummary sm = summarize(k);
    if (sm.spectral_norm < 1e-3) continue;
    const auto s = score_all(sm, k);
    const double d2 = s[mode_index(M::Det)] * s[mode_index(M::Det)];
    bound_violations += std::abs(s[mode_index(M::DetGram)] - d2) > 1e-6 * std::max(d2, 1e-30);
    ++checked;
  }
  // The 100 fixture kernels whose |det| lies closest to the 3x3 threshold,
  // where rounding decides.
  const ModelSnapshot snap = load_snapshot(testutil::fixtures() / "tinynet-l1" / "manifest.json");
  const KernelCatalog cat(snap);
  std::vector<std::pair<double, std::size_t>> near;
  for (std::size_t i = 0; i < cat.size(); ++i) {
    if (cat.kernel_size(i) != 3) continue;
    const double d = std::abs(determinant(cat.kernel(snap, i)));
    near.emplace_back(d > 0 ? std::abs(std::log10(d / t.get(M::Det, 3))) : INFINITY, i);
  }
  std::sort(near.begin(), near.end());
  near.resize(std::min<std::size_t>(near.size(), 100));
  std::size_t exact_disagree = 0, float_disagree = 0;
  for (const auto& [dist, i] : near) {
    const SmallMatrix k = cat.kernel(snap, i);
    const auto m = oracle::exact(k);
    const oracle::Rational d = oracle::det(m), g = oracle::det(oracle::gram(m));
    const bool exact_det = oracle::abs(d) < oracle::Rational(t.get(M::Det, 3));
    const bool exact_gram = g < oracle::Rational(t.get(M::DetGram, 3));
    exact_disagree += exact_det != exact_gram;
    float_disagree += is_pruned(M::Det, k, t) != is_pruned(M::DetGram, k, t);
  }
  return {bound_violations == 0 && exact_disagree == 0,
          std::to_string(checked) + " kernels within 1e-6 relative (" + std::to_string(bound_violations) +
              " violations); rational decisions disagree on " + std::to_string(exact_disagree) +
              "/" + std::to_string(near.size()) +
              " near-threshold fixture kernels, float masks disagree on " + std::to_string(float_disagree)};
}

Outcome compression_arith() {
  const double c = compression_score(0.8908, 0.8908, 0.9012);
  return {std::abs(c - 0.9012) <= 1e-6, "c = " + format_double(c)};
}

Outcome inference() {
  const ModelSnapshot snap = load_snapshot(testutil::fixtures() / "tinynet" / "manifest.json");
  const EvalDataset ds = load_dataset(testutil::fixtures() / "data");
  const int jobs = worker_count();

  const Tensor ref = load_npy(testutil::fixtures() / "reference_logits.npy");
  const auto got = forward(snap, take_samples(ds, ref.shape()[0]).images, jobs).to_double();
  const auto want = ref.to_double();
  double logit_err = got.size() == want.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(got.size(), want.size()); ++i)
    logit_err = std::max(logit_err, std::abs(got[i] - want[i]));

  PruneMask empty;
  empty.pruned.assign(KernelCatalog(snap).size(), 0);
  const EvalResult vanilla = evaluate(snap, ds, nullptr, jobs, 256);
  const EvalResult masked = evaluate(snap, ds, &empty, jobs, 256);
  const bool bitwise = vanilla.correct == masked.correct &&
                       std::memcmp(&vanilla.logits_checksum, &masked.logits_checksum, sizeof(double)) == 0 &&
                       std::memcmp(&vanilla.top1_accuracy, &masked.top1_accuracy, sizeof(double)) == 0;
  double batch_diff = 0;
  for (std::int64_t bs : {1, 37, 2000}) {
    const EvalResult r = evaluate(snap, ds, nullptr, jobs, bs);
    batch_diff = std::max(batch_diff, std::abs(r.logits_checksum - vanilla.logits_checksum));
    batch_diff = std::max(batch_diff, std::abs(r.top1_accuracy - vanilla.top1_accuracy));
  }
  return {logit_err <= 1e-4 && bitwise && batch_diff < 1e-10,
          "max logit error " + fmt("%.3g", logit_err) + ", empty mask bitwise " + (bitwise ? "yes" : "no") +
              ", batch-size difference " + fmt("%.3g", batch_diff) + ", accuracy " +
              format_double(vanilla.top1_accuracy) + " on " + std::to_string(vanilla.num_samples) + " images"};
}

std::string q(const std::filesystem::path& p) { return "\"" + p.string() + "\""; }

Outcome determinism() {
  const std::string l1 = q(testutil::fixtures() / "tinynet-l1" / "manifest.json");
  const std::string base = q(testutil::fixtures() / "tinynet" / "manifest.json");
  const std::string series = q(testutil::fixtures() / "tinynet-l1-series");
  const std::vector<std::string> commands = {"score " + base, "score " + l1, "sets " + l1, "layers " + l1,
                                             "history " + series, "score " + l1 + " --format csv"};
  std::size_t mismatches = 0, failures = 0;
  for (const std::string& cmd : commands) {
    const auto a = testutil::run_cli(cmd + " --jobs 1");
    const auto b = testutil::run_cli(cmd + " --jobs 1");
    const auto c = testutil::run_cli(cmd + " --jobs 8");
    failures += (a.exit_code != 0) + (b.exit_code != 0) + (c.exit_code != 0);
    mismatches += (a.out != b.out) + (a.out != c.out) + a.out.empty();
  }
  return {mismatches == 0 && failures == 0, std::to_string(commands.size()) + " commands x 3 runs, " +
                                                std::to_string(mismatches) + " mismatches, " +
                                                std::to_string(failures) + " failed runs"};
}

Outcome sweep() {
  const auto grid = log_grid(1e-6, 1e-1, 20);
  std::size_t curves = 0, decreases = 0;
  for (const auto& path : fixture_manifests()) {
    const ScoredModel scored = score_model(load_snapshot(path), worker_count());
    for (M m : kAllModes) {
      const auto pts = sweep_ratios(scored, m, grid);
      for (std::size_t i = 1; i < pts.size(); ++i) decreases += pts[i].kernel_prune_ratio < pts[i - 1].kernel_prune_ratio;
      ++curves;
    }
  }
  return {decreases == 0, std::to_string(curves) + " curves of 20 points, " + std::to_string(decreases) + " decreases"};
}

Outcome history() {
  const CheckpointSeries series = load_checkpoint_series(testutil::fixtures() / "tinynet-l1-series");
  const auto records = epoch_history(series, default_thresholds(), worker_count());
  std::size_t violations = 0;
  const M chain[] = {M::MinEigReal, M::MinEig, M::Det, M::SpectralRadius, M::SpectralNorm};
  for (const EpochRecord& r : records)
    for (std::size_t i = 1; i < std::size(chain); ++i)
      violations += r.modes[mode_index(chain[i - 1])].kernel_prune_ratio <
                    r.modes[mode_index(chain[i])].kernel_prune_ratio;
  return {records.size() == 20 && violations == 0,
          std::to_string(records.size()) + " checkpoints, " + std::to_string(violations) + " violations"};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget_s;  // <= 0: no runtime bound
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "eigensolver correctness", 30, eigensolver},
      {2, "spectral inequalities", 0, inequalities},
      {3, "subset lattice", 10, lattice},
      {4, "det/det_gram relationship", 0, det_gram},
      {5, "compression score arithmetic", 0, compression_arith},
      {6, "inference regression", 120, inference},
      {7, "end-to-end determinism", 0, determinism},
      {8, "threshold sweep monotonicity", 0, sweep},
      {9, "epoch-history dominance", 60, history},
  };
  corpus();
  int failed = 0;
  for (const Criterion& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0 && secs >= c.budget_s) {
      o.pass = false;
      o.detail += "; over the " + fmt("%.0f", c.budget_s) + " s budget";
    }
    failed += !o.pass;
    std::printf("criterion %d %s: %s (%s; %.2f s)\n", c.id, c.name, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}

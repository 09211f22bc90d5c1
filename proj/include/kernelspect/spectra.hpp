#pragma once

// Closed-form spectral characteristics of 1x1, 2x2 and 3x3 real kernels.
//
// Eigenvalues are obtained from the characteristic polynomial by radicals
// (linear, quadratic, Cardano), which is only possible up to degree four in
// general; 4x4 is deliberately left out. Every function here is pure.

#include <array>
#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace kernelspect {

/// Square matrix of side 1..3, row-major, stored inline.
class SmallMatrix {
 public:
  static constexpr int kMaxOrder = 3;

  SmallMatrix() = default;
  /// `values` holds n*n row-major entries.
  SmallMatrix(int n, std::span<const double> values);
  static SmallMatrix diagonal(std::span<const double> diag);
  static SmallMatrix zero(int n);
  static SmallMatrix identity(int n);

  int order() const { return n_; }
  double operator()(int r, int c) const { return a_[r * kMaxOrder + c]; }
  double& operator()(int r, int c) { return a_[r * kMaxOrder + c]; }

  /// max |w_ij|
  double max_abs() const;
  double mean_abs() const;
  SmallMatrix scaled(double factor) const;
  SmallMatrix transposed() const;
  SmallMatrix gram() const;  // K^T K

 private:
  int n_ = 0;
  std::array<double, kMaxOrder * kMaxOrder> a_{};
};

using Complex = std::complex<double>;

struct GershgorinDisk {
  double center = 0.0;
  double radius = 0.0;
};

/// Coefficients of det(lambda*I - K) written as
///   n=3: lambda^3 - trace*lambda^2 + minor_sum*lambda - det
///   n=2: lambda^2 - trace*lambda + det            (minor_sum == det)
///   n=1: lambda - det                             (trace == det)
struct CharacteristicCoeffs {
  double trace = 0.0;
  double minor_sum = 0.0;
  double det = 0.0;
};

struct SpectralSummary {
  int n = 0;
  // Canonical order: modulus descending, then re descending, then im
  // descending.
  std::vector<Complex> eigenvalues;
  std::vector<double> gram_eigenvalues;  // descending, >= 0
  double determinant = 0.0;
  double gram_determinant = 0.0;  // cofactor expansion of K^T K
  double spectral_norm = 0.0;
  double scale = 0.0;  // max |w_ij|
  std::vector<GershgorinDisk> disks;
};

/// Throws UnsupportedOrder / NonFiniteEntry.
void check_kernel(const SmallMatrix& kernel);

CharacteristicCoeffs characteristic_coeffs(const SmallMatrix& kernel);
double determinant(const SmallMatrix& kernel);
std::vector<Complex> eigenvalues(const SmallMatrix& kernel);
std::vector<double> gram_eigenvalues(const SmallMatrix& kernel);
double spectral_norm(const SmallMatrix& kernel);
std::vector<GershgorinDisk> gershgorin_disks(const SmallMatrix& kernel);
SpectralSummary summarize(const SmallMatrix& kernel);

/// Sorts into the canonical eigenvalue order.
void sort_canonical(std::vector<Complex>& values);

/// Roots of the monic cubic x^3 + a x^2 + b x + c by the
/// Cardano/trigonometric formulas, unordered. Exposed for testing.
std::array<Complex, 3> solve_monic_cubic(double a, double b, double c);

/// Durand-Kerner simultaneous iteration. `coeffs` are ordered from the
/// leading coefficient down to the constant term; degree <= 8.
/// Throws NoConvergence after 500 sweeps.
std::vector<Complex> oracle_roots(std::span<const double> coeffs);

/// Coefficients (leading first) of det(lambda*I - K).
std::vector<double> characteristic_polynomial(const SmallMatrix& kernel);

/// Horner evaluation, coefficients leading first.
Complex evaluate_polynomial(std::span<const double> coeffs, Complex x);

}  // namespace kernelspect

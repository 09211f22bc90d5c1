#include "kernelspect/spectra.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "kernelspect/error.hpp"

namespace kernelspect {

namespace {

// Pre-scaling floor so an all-zero kernel does not divide by zero.
constexpr double kScaleFloor = 1e-300;
// |D| <= kDiscriminantTol * max(|Q|^3, R^2) is treated as a repeated root.
constexpr double kDiscriminantTol = 1e-14;

double cofactor_det(const SmallMatrix& m) {
  switch (m.order()) {
    case 1:
      return m(0, 0);
    case 2:
      return m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
    default:
      return m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) -
             m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0)) +
             m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
  }
}

double kernel_scale(const SmallMatrix& kernel) {
  return std::max(kScaleFloor, kernel.max_abs());
}

std::vector<Complex> eigenvalues_unsorted(const SmallMatrix& scaled) {
  switch (scaled.order()) {
    case 1:
      return {Complex(scaled(0, 0), 0.0)};
    case 2: {
      const double a = scaled(0, 0);
      const double b = scaled(0, 1);
      const double c = scaled(1, 0);
      const double d = scaled(1, 1);
      const double tr = a + d;
      const double det = a * d - b * c;
      // tr^2 - 4 det rewritten without the cancelling square
      const double disc = (a - d) * (a - d) + 4.0 * b * c;
      if (disc >= 0.0) {
        const double q = -0.5 * (-tr - std::copysign(std::sqrt(disc), tr));
        if (q == 0.0) {
          return {Complex(0.0, 0.0), Complex(0.0, 0.0)};
        }
        return {Complex(q, 0.0), Complex(det / q, 0.0)};
      }
      const double im = 0.5 * std::sqrt(-disc);
      return {Complex(0.5 * tr, im), Complex(0.5 * tr, -im)};
    }
    default: {
      const CharacteristicCoeffs k = characteristic_coeffs(scaled);
      const auto roots = solve_monic_cubic(-k.trace, k.minor_sum, -k.det);
      return {roots.begin(), roots.end()};
    }
  }
}

std::vector<double> symmetric_eigenvalues(const SmallMatrix& g) {
  std::vector<double> out;
  switch (g.order()) {
    case 1:
      out = {g(0, 0)};
      break;
    case 2: {
      const double mean = 0.5 * (g(0, 0) + g(1, 1));
      const double half_diff = 0.5 * (g(0, 0) - g(1, 1));
      const double rad = std::hypot(half_diff, g(0, 1));
      out = {mean + rad, mean - rad};
      break;
    }
    default: {
      const double off = g(0, 1) * g(0, 1) + g(0, 2) * g(0, 2) +
                         g(1, 2) * g(1, 2);
      const double q = (g(0, 0) + g(1, 1) + g(2, 2)) / 3.0;
      if (off == 0.0) {
        out = {g(0, 0), g(1, 1), g(2, 2)};
        break;
      }
      const double d0 = g(0, 0) - q;
      const double d1 = g(1, 1) - q;
      const double d2 = g(2, 2) - q;
      const double p = std::sqrt((d0 * d0 + d1 * d1 + d2 * d2 + 2.0 * off) / 6.0);
      SmallMatrix b = g;
      for (int i = 0; i < 3; ++i) {
        b(i, i) -= q;
      }
      b = b.scaled(1.0 / p);
      const double r = std::clamp(cofactor_det(b) / 2.0, -1.0, 1.0);
      const double phi = std::acos(r) / 3.0;
      const double e1 = q + 2.0 * p * std::cos(phi);
      const double e3 = q + 2.0 * p * std::cos(phi + 2.0 * std::numbers::pi / 3.0);
      const double e2 = 3.0 * q - e1 - e3;
      out = {e1, e2, e3};
      break;
    }
  }
  for (double& v : out) {
    v = std::max(v, 0.0);
  }
  std::sort(out.begin(), out.end(), std::greater<>());
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// SmallMatrix

SmallMatrix::SmallMatrix(int n, std::span<const double> values) : n_(n) {
  if (n < 1 || n > kMaxOrder) {
    throw Error(ErrorCode::UnsupportedOrder,
                "kernel order " + std::to_string(n) + " is outside 1..3");
  }
  if (values.size() != static_cast<std::size_t>(n * n)) {
    throw Error(ErrorCode::ShapeMismatch, "expected " + std::to_string(n * n) +
                                              " kernel entries, got " +
                                              std::to_string(values.size()));
  }
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      (*this)(r, c) = values[r * n + c];
    }
  }
}

SmallMatrix SmallMatrix::diagonal(std::span<const double> diag) {
  SmallMatrix m = zero(static_cast<int>(diag.size()));
  for (int i = 0; i < m.n_; ++i) {
    m(i, i) = diag[i];
  }
  return m;
}

SmallMatrix SmallMatrix::zero(int n) {
  std::array<double, kMaxOrder * kMaxOrder> z{};
  return SmallMatrix(n, std::span<const double>(z.data(), n * n));
}

SmallMatrix SmallMatrix::identity(int n) {
  SmallMatrix m = zero(n);
  for (int i = 0; i < n; ++i) {
    m(i, i) = 1.0;
  }
  return m;
}

double SmallMatrix::max_abs() const {
  double best = 0.0;
  for (int r = 0; r < n_; ++r) {
    for (int c = 0; c < n_; ++c) {
      best = std::max(best, std::abs((*this)(r, c)));
    }
  }
  return best;
}

double SmallMatrix::mean_abs() const {
  double sum = 0.0;
  for (int r = 0; r < n_; ++r) {
    for (int c = 0; c < n_; ++c) {
      sum += std::abs((*this)(r, c));
    }
  }
  return sum / static_cast<double>(n_ * n_);
}

SmallMatrix SmallMatrix::scaled(double factor) const {
  SmallMatrix m = *this;
  for (double& v : m.a_) {
    v *= factor;
  }
  return m;
}

SmallMatrix SmallMatrix::transposed() const {
  SmallMatrix m = *this;
  for (int r = 0; r < n_; ++r) {
    for (int c = 0; c < n_; ++c) {
      m(r, c) = (*this)(c, r);
    }
  }
  return m;
}

SmallMatrix SmallMatrix::gram() const {
  SmallMatrix g = zero(n_);
  for (int r = 0; r < n_; ++r) {
    for (int c = 0; c < n_; ++c) {
      double acc = 0.0;
      for (int k = 0; k < n_; ++k) {
        acc += (*this)(k, r) * (*this)(k, c);
      }
      g(r, c) = acc;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

void check_kernel(const SmallMatrix& kernel) {
  const int n = kernel.order();
  if (n < 1 || n > SmallMatrix::kMaxOrder) {
    throw Error(ErrorCode::UnsupportedOrder,
                "kernel order " + std::to_string(n) + " is outside 1..3");
  }
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      if (!std::isfinite(kernel(r, c))) {
        throw Error(ErrorCode::NonFiniteEntry,
                    "kernel entry (" + std::to_string(r) + "," +
                        std::to_string(c) + ") is not finite");
      }
    }
  }
}

CharacteristicCoeffs characteristic_coeffs(const SmallMatrix& kernel) {
  check_kernel(kernel);
  const SmallMatrix& m = kernel;
  CharacteristicCoeffs out;
  switch (m.order()) {
    case 1:
      out.trace = m(0, 0);
      out.minor_sum = m(0, 0);
      out.det = m(0, 0);
      break;
    case 2:
      out.trace = m(0, 0) + m(1, 1);
      out.det = cofactor_det(m);
      out.minor_sum = out.det;
      break;
    default:
      out.trace = m(0, 0) + m(1, 1) + m(2, 2);
      out.minor_sum = (m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0)) +
                      (m(0, 0) * m(2, 2) - m(0, 2) * m(2, 0)) +
                      (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1));
      out.det = cofactor_det(m);
      break;
  }
  return out;
}

std::vector<double> characteristic_polynomial(const SmallMatrix& kernel) {
  const CharacteristicCoeffs k = characteristic_coeffs(kernel);
  switch (kernel.order()) {
    case 1:
      return {1.0, -k.det};
    case 2:
      return {1.0, -k.trace, k.det};
    default:
      return {1.0, -k.trace, k.minor_sum, -k.det};
  }
}

double determinant(const SmallMatrix& kernel) {
  check_kernel(kernel);
  return cofactor_det(kernel);
}

std::array<Complex, 3> solve_monic_cubic(double a, double b, double c) {
  const double shift = a / 3.0;
  const double q = (a * a - 3.0 * b) / 9.0;
  const double r = (2.0 * a * a * a - 9.0 * a * b + 27.0 * c) / 54.0;
  const double q3 = q * q * q;
  const double r2 = r * r;
  const double disc = r2 - q3;
  const double tol = kDiscriminantTol * std::max(std::abs(q3), r2);

  if (std::abs(disc) <= tol) {
    // Double (or triple) root: real-root formulas only.
    const double big = -std::cbrt(r);
    return {Complex(2.0 * big - shift, 0.0), Complex(-big - shift, 0.0),
            Complex(-big - shift, 0.0)};
  }
  if (disc < 0.0) {
    // Three distinct real roots (q > 0 here).
    const double sq = std::sqrt(q);
    const double theta = std::acos(std::clamp(r / (sq * sq * sq), -1.0, 1.0));
    const double two_pi = 2.0 * std::numbers::pi;
    return {Complex(-2.0 * sq * std::cos(theta / 3.0) - shift, 0.0),
            Complex(-2.0 * sq * std::cos((theta + two_pi) / 3.0) - shift, 0.0),
            Complex(-2.0 * sq * std::cos((theta - two_pi) / 3.0) - shift, 0.0)};
  }
  // One real root and a conjugate pair.
  const double big = -std::copysign(std::cbrt(std::abs(r) + std::sqrt(disc)), r);
  const double small = big == 0.0 ? 0.0 : q / big;
  const double re = -0.5 * (big + small) - shift;
  const double im = 0.5 * std::sqrt(3.0) * std::abs(big - small);
  return {Complex(big + small - shift, 0.0), Complex(re, im), Complex(re, -im)};
}

void sort_canonical(std::vector<Complex>& values) {
  std::stable_sort(values.begin(), values.end(),
                   [](const Complex& x, const Complex& y) {
                     const double mx = std::abs(x);
                     const double my = std::abs(y);
                     if (mx != my) return mx > my;
                     if (x.real() != y.real()) return x.real() > y.real();
                     return x.imag() > y.imag();
                   });
}

std::vector<Complex> eigenvalues(const SmallMatrix& kernel) {
  check_kernel(kernel);
  if (kernel.order() == 1) {
    return {Complex(kernel(0, 0), 0.0)};
  }
  const double s = kernel_scale(kernel);
  std::vector<Complex> roots = eigenvalues_unsorted(kernel.scaled(1.0 / s));
  for (Complex& z : roots) {
    z *= s;
    if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) {
      throw Error(ErrorCode::NonFiniteEntry, "eigenvalue is not finite");
    }
  }
  sort_canonical(roots);
  return roots;
}

std::vector<double> gram_eigenvalues(const SmallMatrix& kernel) {
  check_kernel(kernel);
  if (kernel.order() == 1) {
    return {kernel(0, 0) * kernel(0, 0)};
  }
  const double s = kernel_scale(kernel);
  std::vector<double> values = symmetric_eigenvalues(kernel.scaled(1.0 / s).gram());
  for (double& v : values) {
    v *= s * s;
  }
  return values;
}

double spectral_norm(const SmallMatrix& kernel) {
  check_kernel(kernel);
  if (kernel.order() == 1) {
    return std::abs(kernel(0, 0));
  }
  return std::sqrt(gram_eigenvalues(kernel).front());
}

std::vector<GershgorinDisk> gershgorin_disks(const SmallMatrix& kernel) {
  check_kernel(kernel);
  std::vector<GershgorinDisk> disks;
  for (int i = 0; i < kernel.order(); ++i) {
    double radius = 0.0;
    for (int j = 0; j < kernel.order(); ++j) {
      if (j != i) {
        radius += std::abs(kernel(i, j));
      }
    }
    disks.push_back({kernel(i, i), radius});
  }
  return disks;
}

SpectralSummary summarize(const SmallMatrix& kernel) {
  check_kernel(kernel);
  SpectralSummary s;
  s.n = kernel.order();
  s.eigenvalues = eigenvalues(kernel);
  s.gram_eigenvalues = gram_eigenvalues(kernel);
  s.determinant = cofactor_det(kernel);
  s.gram_determinant = cofactor_det(kernel.gram());
  s.spectral_norm = s.n == 1 ? std::abs(kernel(0, 0))
                             : std::sqrt(s.gram_eigenvalues.front());
  s.scale = kernel.max_abs();
  s.disks = gershgorin_disks(kernel);
  return s;
}

// ---------------------------------------------------------------------------
// Durand-Kerner oracle

Complex evaluate_polynomial(std::span<const double> coeffs, Complex x) {
  Complex acc(0.0, 0.0);
  for (double c : coeffs) {
    acc = acc * x + c;
  }
  return acc;
}

std::vector<Complex> oracle_roots(std::span<const double> coeffs) {
  constexpr int kMaxDegree = 8;
  constexpr int kMaxIterations = 500;
  constexpr double kTolerance = 1e-14;

  if (coeffs.empty() || coeffs.front() == 0.0) {
    throw Error(ErrorCode::InvalidArgument, "leading coefficient must be nonzero");
  }
  const int degree = static_cast<int>(coeffs.size()) - 1;
  if (degree > kMaxDegree) {
    throw Error(ErrorCode::UnsupportedOrder,
                "polynomial degree " + std::to_string(degree) + " exceeds 8");
  }
  for (double c : coeffs) {
    if (!std::isfinite(c)) {
      throw Error(ErrorCode::NonFiniteEntry, "polynomial coefficient is not finite");
    }
  }
  if (degree == 0) {
    return {};
  }

  // Monic, then substitute x = rho*y so the roots are O(1).
  std::vector<double> monic(coeffs.begin(), coeffs.end());
  for (double& c : monic) {
    c /= coeffs.front();
  }
  double rho = 0.0;
  for (int k = 1; k <= degree; ++k) {
    rho = std::max(rho, std::pow(std::abs(monic[k]), 1.0 / k));
  }
  if (rho == 0.0) {
    return std::vector<Complex>(degree, Complex(0.0, 0.0));
  }
  for (int k = 1; k <= degree; ++k) {
    monic[k] /= std::pow(rho, k);
  }

  std::vector<Complex> z(degree);
  const Complex seed(0.4, 0.9);
  Complex power(1.0, 0.0);
  for (int i = 0; i < degree; ++i) {
    z[i] = power;
    power *= seed;
  }

  for (int iter = 0; iter < kMaxIterations; ++iter) {
    double max_step = 0.0;
    double max_mod = 0.0;
    for (int i = 0; i < degree; ++i) {
      Complex denom(1.0, 0.0);
      for (int j = 0; j < degree; ++j) {
        if (j != i) {
          denom *= z[i] - z[j];
        }
      }
      if (denom == Complex(0.0, 0.0)) {
        denom = Complex(1e-300, 0.0);
      }
      const Complex step = evaluate_polynomial(monic, z[i]) / denom;
      z[i] -= step;
      max_step = std::max(max_step, std::abs(step));
      max_mod = std::max(max_mod, std::abs(z[i]));
    }
    if (!std::isfinite(max_step)) {
      break;
    }
    if (max_step < kTolerance * (1.0 + max_mod)) {
      for (Complex& root : z) {
        root *= rho;
      }
      sort_canonical(z);
      return z;
    }
  }
  throw Error(ErrorCode::NoConvergence,
              "Durand-Kerner did not converge within 500 iterations");
}

}  // namespace kernelspect

#pragma once

// Real-basis SO(3) machinery: irreps layouts, Clebsch-Gordan tables,
// spherical harmonics, Wigner-D matrices and the path-wise tensor product and
// tensor expansion.
//
// Convention (fixed across the library and the dataset format):
//   * real basis, components ordered m = -l..l;
//   * m > 0 ~ cos(m phi), m < 0 ~ sin(|m| phi), no Condon-Shortley phase, so
//     the l = 1 components are proportional to (y, z, x);
//   * spherical harmonics use component normalization, |Y^l(r)|^2 = 2l + 1.

#include <boost/multiprecision/cpp_bin_float.hpp>

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qhnet/error.hpp"
#include "qhnet/linalg.hpp"
#include "qhnet/rng.hpp"

namespace qhnet {

/// Highest rotation order the Clebsch-Gordan generator accepts.
inline constexpr int kMaxCgOrder = 8;

inline constexpr int irrep_dim(int l) { return 2 * l + 1; }

/// Uniform-multiplicity irreps layout: `channels` copies of every order
/// 0..l_max. Storage is segment-major (all of order 0, then order 1, ...),
/// and within a segment channel-major: index = offset(l) + c*(2l+1) + (m+l).
class IrrepsLayout {
 public:
  IrrepsLayout() : IrrepsLayout(0, 1) {}
  IrrepsLayout(int l_max, int channels) : l_max_(l_max), channels_(channels) {
    if (l_max < 0) throw ConfigError("IrrepsLayout: l_max must be non-negative");
    if (channels < 1) throw ConfigError("IrrepsLayout: channels must be positive");
    offsets_.resize(static_cast<std::size_t>(l_max) + 2);
    offsets_[0] = 0;
    for (int l = 0; l <= l_max; ++l)
      offsets_[l + 1] = offsets_[l] + static_cast<std::size_t>(channels) * irrep_dim(l);
  }

  int l_max() const { return l_max_; }
  int channels() const { return channels_; }
  std::size_t size() const { return offsets_.back(); }
  std::size_t offset(int l) const { return offsets_[l]; }
  std::size_t segment_size(int l) const { return offsets_[l + 1] - offsets_[l]; }
  std::size_t index(int l, int c, int m) const {
    return offsets_[l] + static_cast<std::size_t>(c) * irrep_dim(l) + static_cast<std::size_t>(m + l);
  }

  bool operator==(const IrrepsLayout& o) const { return l_max_ == o.l_max_ && channels_ == o.channels_; }

 private:
  int l_max_;
  int channels_;
  std::vector<std::size_t> offsets_;
};

/// A feature vector laid out according to an IrrepsLayout.
struct IrrepsTensor {
  IrrepsLayout layout;
  std::vector<double> data;

  explicit IrrepsTensor(IrrepsLayout lay) : layout(std::move(lay)), data(layout.size(), 0.0) {}
  IrrepsTensor(IrrepsLayout lay, std::vector<double> values) : layout(std::move(lay)), data(std::move(values)) {
    require(data.size() == layout.size(), "IrrepsTensor: data length does not match layout");
    for (double x : data)
      if (!std::isfinite(x)) throw DomainError("IrrepsTensor: non-finite entry");
  }

  std::span<double> irrep(int l, int c) { return {data.data() + layout.index(l, c, -l), static_cast<std::size_t>(irrep_dim(l))}; }
  std::span<const double> irrep(int l, int c) const {
    return {data.data() + layout.index(l, c, -l), static_cast<std::size_t>(irrep_dim(l))};
  }
};

// ---------------------------------------------------------------------------
// Rotations

class Rotation {
 public:
  static Rotation identity() { return Rotation({1, 0, 0, 0, 1, 0, 0, 0, 1}); }

  /// Validates orthogonality and det = +1 to 1e-12.
  static Rotation from_matrix(const std::array<double, 9>& m) {
    Rotation r(m);
    double err = 0.0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += r(i, k) * r(j, k);
        err = std::max(err, std::abs(s - (i == j ? 1.0 : 0.0)));
      }
    if (err > 1e-12) throw DomainError("Rotation: matrix is not orthogonal");
    if (std::abs(r.determinant() - 1.0) > 1e-12) throw DomainError("Rotation: determinant is not +1");
    return r;
  }

  static Rotation from_axis_angle(Vec3 axis, double angle) {
    const double n = norm(axis);
    if (n == 0.0) throw DomainError("Rotation: zero axis");
    for (double& a : axis) a /= n;
    return from_quaternion(std::cos(angle / 2), std::sin(angle / 2) * axis[0], std::sin(angle / 2) * axis[1],
                           std::sin(angle / 2) * axis[2]);
  }

  /// Haar-uniform rotation from a normalized Gaussian quaternion.
  static Rotation random(Rng& rng) {
    double q[4];
    double n = 0.0;
    do {
      n = 0.0;
      for (double& x : q) {
        x = rng.normal();
        n += x * x;
      }
    } while (n < 1e-12);
    n = std::sqrt(n);
    return from_quaternion(q[0] / n, q[1] / n, q[2] / n, q[3] / n);
  }

  double operator()(int i, int j) const { return m_[3 * i + j]; }
  const std::array<double, 9>& elements() const { return m_; }

  Vec3 apply(const Vec3& v) const {
    return {m_[0] * v[0] + m_[1] * v[1] + m_[2] * v[2], m_[3] * v[0] + m_[4] * v[1] + m_[5] * v[2],
            m_[6] * v[0] + m_[7] * v[1] + m_[8] * v[2]};
  }

  Rotation operator*(const Rotation& o) const {
    std::array<double, 9> c{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) c[3 * i + j] += (*this)(i, k) * o(k, j);
    return Rotation(c);
  }

  Rotation transpose() const { return Rotation({m_[0], m_[3], m_[6], m_[1], m_[4], m_[7], m_[2], m_[5], m_[8]}); }

  double determinant() const {
    return m_[0] * (m_[4] * m_[8] - m_[5] * m_[7]) - m_[1] * (m_[3] * m_[8] - m_[5] * m_[6]) +
           m_[2] * (m_[3] * m_[7] - m_[4] * m_[6]);
  }

 private:
  explicit Rotation(const std::array<double, 9>& m) : m_(m) {}

  static Rotation from_quaternion(double w, double x, double y, double z) {
    return Rotation({1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w),  //
                     2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w),  //
                     2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)});
  }

  std::array<double, 9> m_;
};

// ---------------------------------------------------------------------------
// Clebsch-Gordan coefficients

struct CgEntry {
  int m1, m2, m3;  // zero-based component indices
  double value;
};

struct CgPath {
  int l1, l2, l3;
  bool operator==(const CgPath&) const = default;
};

inline bool triangle(int l1, int l2, int l3) { return std::abs(l1 - l2) <= l3 && l3 <= l1 + l2; }

namespace detail {

using Big = boost::multiprecision::cpp_bin_float_50;

inline const std::vector<Big>& factorials() {
  static const std::vector<Big> table = [] {
    std::vector<Big> f(4 * kMaxCgOrder + 4);
    f[0] = 1;
    for (std::size_t n = 1; n < f.size(); ++n) f[n] = f[n - 1] * Big(static_cast<int>(n));
    return f;
  }();
  return table;
}

/// <j1 m1 j2 m2 | J M> in the complex Condon-Shortley basis (Racah's formula).
inline Big complex_cg(int j1, int m1, int j2, int m2, int J, int M) {
  if (m1 + m2 != M) return 0;
  if (!triangle(j1, j2, J)) return 0;
  if (std::abs(m1) > j1 || std::abs(m2) > j2 || std::abs(M) > J) return 0;
  const auto& f = factorials();
  using boost::multiprecision::sqrt;
  Big prefactor = sqrt(Big(2 * J + 1) * f[J + j1 - j2] * f[J - j1 + j2] * f[j1 + j2 - J] / f[j1 + j2 + J + 1]);
  prefactor *= sqrt(f[J + M] * f[J - M] * f[j1 - m1] * f[j1 + m1] * f[j2 - m2] * f[j2 + m2]);
  Big sum = 0;
  for (int k = 0; k <= j1 + j2 - J; ++k) {
    const int a = j1 + j2 - J - k, b = j1 - m1 - k, c = j2 + m2 - k, d = J - j2 + m1 + k, e = J - j1 - m2 + k;
    if (a < 0 || b < 0 || c < 0 || d < 0 || e < 0) continue;
    Big term = 1 / (f[k] * f[a] * f[b] * f[c] * f[d] * f[e]);
    sum += (k % 2 == 0) ? term : Big(-term);
  }
  return prefactor * sum;
}

using Complex = std::complex<long double>;

/// Rows: real components m = -l..l. Columns: complex components m = -l..l.
inline std::vector<Complex> real_from_complex(int l) {
  const int n = irrep_dim(l);
  std::vector<Complex> u(static_cast<std::size_t>(n * n), Complex(0, 0));
  const long double h = 1.0L / std::sqrt(2.0L);
  auto at = [&](int mr, int mc) -> Complex& { return u[static_cast<std::size_t>((mr + l) * n + (mc + l))]; };
  at(0, 0) = 1;
  for (int m = 1; m <= l; ++m) {
    const long double sign = (m % 2 == 0) ? 1.0L : -1.0L;
    at(m, -m) = h;
    at(m, m) = sign * h;
    at(-m, -m) = Complex(0, h);
    at(-m, m) = Complex(0, -sign * h);
  }
  return u;
}

}  // namespace detail

/// Real-basis Clebsch-Gordan blocks for every path with orders <= l_max.
/// Immutable after construction and safe to share between threads.
class CGTable {
 public:
  explicit CGTable(int l_max) : l_max_(l_max) {
    if (l_max < 0 || l_max > kMaxCgOrder)
      throw ConfigError("CGTable: l_max must lie in [0, " + std::to_string(kMaxCgOrder) + "]");
    const std::size_t k = static_cast<std::size_t>(l_max) + 1;
    blocks_.resize(k * k * k);
    for (int l1 = 0; l1 <= l_max; ++l1)
      for (int l2 = 0; l2 <= l_max; ++l2)
        for (int l3 = std::abs(l1 - l2); l3 <= std::min(l1 + l2, l_max); ++l3) {
          blocks_[key(l1, l2, l3)] = build_block(l1, l2, l3);
          paths_.push_back({l1, l2, l3});
        }
  }

  int l_max() const { return l_max_; }
  const std::vector<CgPath>& paths() const { return paths_; }

  bool has_path(int l1, int l2, int l3) const {
    return l1 >= 0 && l2 >= 0 && l3 >= 0 && l1 <= l_max_ && l2 <= l_max_ && l3 <= l_max_ && triangle(l1, l2, l3);
  }

  /// Dense block indexed [m1][m2][m3] (zero-based components).
  std::span<const double> block(int l1, int l2, int l3) const { return get(l1, l2, l3).dense; }

  double at(int l1, int l2, int l3, int m1, int m2, int m3) const {
    const auto& b = get(l1, l2, l3);
    return b.dense[static_cast<std::size_t>(((m1 + l1) * irrep_dim(l2) + (m2 + l2)) * irrep_dim(l3) + (m3 + l3))];
  }

  const std::vector<CgEntry>& nonzeros(int l1, int l2, int l3) const { return get(l1, l2, l3).sparse; }

  /// Copy of this table with one coefficient shifted. Negative-control hook
  /// for the equivariance checker; never used by the model itself.
  CGTable with_perturbed_entry(CgPath path, int m1, int m2, int m3, double delta) const {
    CGTable copy = *this;
    auto& b = copy.blocks_[copy.key(path.l1, path.l2, path.l3)];
    require(b.has_value(), "CGTable: perturbed path does not exist");
    const std::size_t idx = static_cast<std::size_t>(
        ((m1 + path.l1) * irrep_dim(path.l2) + (m2 + path.l2)) * irrep_dim(path.l3) + (m3 + path.l3));
    b->dense[idx] += delta;
    b->sparse = sparsify(b->dense, path.l1, path.l2, path.l3);
    return copy;
  }

 private:
  struct Block {
    std::vector<double> dense;
    std::vector<CgEntry> sparse;
  };

  std::size_t key(int l1, int l2, int l3) const {
    const std::size_t k = static_cast<std::size_t>(l_max_) + 1;
    return (static_cast<std::size_t>(l1) * k + static_cast<std::size_t>(l2)) * k + static_cast<std::size_t>(l3);
  }

  const Block& get(int l1, int l2, int l3) const {
    if (!has_path(l1, l2, l3))
      throw ContractViolation("CGTable: no path (" + std::to_string(l1) + "," + std::to_string(l2) + "," +
                              std::to_string(l3) + ")");
    return *blocks_[key(l1, l2, l3)];
  }

  static std::vector<CgEntry> sparsify(const std::vector<double>& dense, int l1, int l2, int l3) {
    std::vector<CgEntry> out;
    const int n1 = irrep_dim(l1), n2 = irrep_dim(l2), n3 = irrep_dim(l3);
    for (int a = 0; a < n1; ++a)
      for (int b = 0; b < n2; ++b)
        for (int c = 0; c < n3; ++c) {
          const double v = dense[static_cast<std::size_t>((a * n2 + b) * n3 + c)];
          if (v != 0.0) out.push_back({a, b, c, v});
        }
    return out;
  }

  static Block build_block(int l1, int l2, int l3) {
    using detail::Complex;
    const int n1 = irrep_dim(l1), n2 = irrep_dim(l2), n3 = irrep_dim(l3);
    auto idx = [&](int a, int b, int c) { return static_cast<std::size_t>((a * n2 + b) * n3 + c); };

    std::vector<Complex> t(static_cast<std::size_t>(n1 * n2 * n3), Complex(0, 0));
    for (int m1 = -l1; m1 <= l1; ++m1)
      for (int m2 = -l2; m2 <= l2; ++m2) {
        const int m3 = m1 + m2;
        if (std::abs(m3) > l3) continue;
        t[idx(m1 + l1, m2 + l2, m3 + l3)] =
            Complex(static_cast<long double>(detail::complex_cg(l1, m1, l2, m2, l3, m3)), 0);
      }

    // C_real = conj(U1) (x) conj(U2) (x) U3 applied mode by mode.
    const auto u1 = detail::real_from_complex(l1), u2 = detail::real_from_complex(l2),
               u3 = detail::real_from_complex(l3);
    std::vector<Complex> s(t.size());
    for (int a = 0; a < n1; ++a)
      for (int b = 0; b < n2; ++b)
        for (int c = 0; c < n3; ++c) {
          Complex acc(0, 0);
          for (int k = 0; k < n1; ++k) acc += std::conj(u1[static_cast<std::size_t>(a * n1 + k)]) * t[idx(k, b, c)];
          s[idx(a, b, c)] = acc;
        }
    for (int a = 0; a < n1; ++a)
      for (int b = 0; b < n2; ++b)
        for (int c = 0; c < n3; ++c) {
          Complex acc(0, 0);
          for (int k = 0; k < n2; ++k) acc += std::conj(u2[static_cast<std::size_t>(b * n2 + k)]) * s[idx(a, k, c)];
          t[idx(a, b, c)] = acc;
        }
    for (int a = 0; a < n1; ++a)
      for (int b = 0; b < n2; ++b)
        for (int c = 0; c < n3; ++c) {
          Complex acc(0, 0);
          for (int k = 0; k < n3; ++k) acc += u3[static_cast<std::size_t>(c * n3 + k)] * t[idx(a, b, k)];
          s[idx(a, b, c)] = acc;
        }

    // The result is real or purely imaginary depending on the parity of
    // l1 + l2 + l3; strip the global phase and keep the real tensor.
    long double max_re = 0, max_im = 0;
    for (const auto& z : s) {
      max_re = std::max(max_re, std::abs(z.real()));
      max_im = std::max(max_im, std::abs(z.imag()));
    }
    const bool use_real = max_re >= max_im;
    const long double residue = use_real ? max_im : max_re;
    if (residue > 1e-12L) throw NumericalError("CGTable: real-basis transform left an imaginary residue");

    Block block;
    block.dense.resize(s.size());
    double sign = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      long double v = use_real ? s[i].real() : s[i].imag();
      if (std::abs(v) < 1e-15L) v = 0;
      // Fix the arbitrary global sign: first nonzero entry positive.
      if (sign == 0.0 && v != 0) sign = v > 0 ? 1.0 : -1.0;
      block.dense[i] = static_cast<double>(v);
    }
    for (double& v : block.dense) v *= sign;
    block.sparse = sparsify(block.dense, l1, l2, l3);
    return block;
  }

  int l_max_;
  std::vector<std::optional<Block>> blocks_;
  std::vector<CgPath> paths_;
};

inline CGTable build_cg_table(int l_max) { return CGTable(l_max); }

/// Process-wide cache of tables; construction at high orders is not free.
inline std::shared_ptr<const CGTable> shared_cg_table(int l_max) {
  static std::mutex mutex;
  static std::map<int, std::shared_ptr<const CGTable>> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find(l_max);
  if (it != cache.end()) return it->second;
  auto table = std::make_shared<const CGTable>(l_max);
  cache.emplace(l_max, table);
  return table;
}

// ---------------------------------------------------------------------------
// Spherical harmonics

namespace detail {

/// Y^l for l = 0..l_max concatenated, assuming |r| = 1.
inline void spherical_harmonics_unchecked(int l_max, const Vec3& r, std::span<double> out) {
  const double x = r[0], y = r[1], z = r[2];
  // cos_m + i sin_m = (x + i y)^m
  std::vector<double> cos_m(static_cast<std::size_t>(l_max) + 1), sin_m(static_cast<std::size_t>(l_max) + 1);
  cos_m[0] = 1.0;
  sin_m[0] = 0.0;
  for (int m = 1; m <= l_max; ++m) {
    cos_m[m] = cos_m[m - 1] * x - sin_m[m - 1] * y;
    sin_m[m] = cos_m[m - 1] * y + sin_m[m - 1] * x;
  }
  // p[l][m]: associated Legendre P_l^m(z) / sin^m(theta), no Condon-Shortley phase.
  const std::size_t k = static_cast<std::size_t>(l_max) + 1;
  std::vector<double> p(k * k, 0.0);
  auto P = [&](int l, int m) -> double& { return p[static_cast<std::size_t>(l) * k + static_cast<std::size_t>(m)]; };
  for (int m = 0; m <= l_max; ++m) {
    double dfact = 1.0;
    for (int j = 2 * m - 1; j > 1; j -= 2) dfact *= j;
    P(m, m) = dfact;
    if (m + 1 <= l_max) P(m + 1, m) = z * (2 * m + 1) * P(m, m);
    for (int l = m + 2; l <= l_max; ++l) P(l, m) = ((2 * l - 1) * z * P(l - 1, m) - (l + m - 1) * P(l - 2, m)) / (l - m);
  }
  std::size_t offset = 0;
  for (int l = 0; l <= l_max; ++l) {
    for (int m = -l; m <= l; ++m) {
      const int am = std::abs(m);
      double ratio = 1.0;  // (l-|m|)! / (l+|m|)!
      for (int j = l - am + 1; j <= l + am; ++j) ratio /= j;
      double norm = std::sqrt((2 * l + 1) * ratio);
      if (m != 0) norm *= std::sqrt(2.0);
      const double angular = m > 0 ? cos_m[am] : (m < 0 ? sin_m[am] : 1.0);
      out[offset + static_cast<std::size_t>(m + l)] = norm * P(l, am) * angular;
    }
    offset += static_cast<std::size_t>(irrep_dim(l));
  }
}

inline void check_unit(const Vec3& r) {
  if (!(std::abs(norm(r) - 1.0) <= 1e-9)) throw DomainError("spherical harmonics: direction is not a unit vector");
}

}  // namespace detail

inline std::vector<double> real_spherical_harmonics(int l, const Vec3& r_hat) {
  if (l < 0 || l > kMaxCgOrder) throw DomainError("spherical harmonics: order out of range");
  detail::check_unit(r_hat);
  std::vector<double> all(static_cast<std::size_t>((l + 1) * (l + 1)));
  detail::spherical_harmonics_unchecked(l, r_hat, all);
  return {all.end() - irrep_dim(l), all.end()};
}

/// Orders 0..l_max concatenated (length (l_max+1)^2).
inline std::vector<double> spherical_harmonics_upto(int l_max, const Vec3& r_hat) {
  if (l_max < 0 || l_max > kMaxCgOrder) throw DomainError("spherical harmonics: order out of range");
  detail::check_unit(r_hat);
  std::vector<double> all(static_cast<std::size_t>((l_max + 1) * (l_max + 1)));
  detail::spherical_harmonics_unchecked(l_max, r_hat, all);
  return all;
}

// ---------------------------------------------------------------------------
// Wigner-D matrices (Ivanic-Ruedenberg recursion)

namespace detail {

class BandRecursion {
 public:
  BandRecursion(const Matrix& r1, const Matrix& prev, int l) : r1_(r1), prev_(prev), l_(l) {}

  double element(int m, int n) const {
    const double d = (m == 0) ? 1.0 : 0.0;
    const double denom = (std::abs(n) == l_) ? 2.0 * l_ * (2 * l_ - 1) : static_cast<double>((l_ + n) * (l_ - n));
    const int am = std::abs(m);
    const double u = std::sqrt((l_ + m) * (l_ - m) / denom);
    const double v = 0.5 * std::sqrt((1 + d) * (l_ + am - 1.0) * (l_ + am) / denom) * (1 - 2 * d);
    const double w = -0.5 * std::sqrt((l_ - am - 1.0) * (l_ - am) / denom) * (1 - d);
    double out = 0.0;
    if (u != 0.0) out += u * U(m, n);
    if (v != 0.0) out += v * V(m, n);
    if (w != 0.0) out += w * W(m, n);
    return out;
  }

 private:
  double r1(int i, int j) const { return r1_(static_cast<std::size_t>(i + 1), static_cast<std::size_t>(j + 1)); }
  double prev(int i, int j) const {
    return prev_(static_cast<std::size_t>(i + l_ - 1), static_cast<std::size_t>(j + l_ - 1));
  }

  double P(int i, int a, int b) const {
    if (b == l_) return r1(i, 1) * prev(a, l_ - 1) - r1(i, -1) * prev(a, -l_ + 1);
    if (b == -l_) return r1(i, 1) * prev(a, -l_ + 1) + r1(i, -1) * prev(a, l_ - 1);
    return r1(i, 0) * prev(a, b);
  }
  double U(int m, int n) const { return P(0, m, n); }
  double V(int m, int n) const {
    if (m == 0) return P(1, 1, n) + P(-1, -1, n);
    if (m > 0) {
      const double d = (m == 1) ? 1.0 : 0.0;
      return P(1, m - 1, n) * std::sqrt(1 + d) - P(-1, -m + 1, n) * (1 - d);
    }
    const double d = (m == -1) ? 1.0 : 0.0;
    return P(1, m + 1, n) * (1 - d) + P(-1, -m - 1, n) * std::sqrt(1 + d);
  }
  double W(int m, int n) const {
    if (m == 0) return 0.0;
    if (m > 0) return P(1, m + 1, n) + P(-1, -m - 1, n);
    return P(1, m - 1, n) - P(-1, -m + 1, n);
  }

  const Matrix& r1_;
  const Matrix& prev_;
  int l_;
};

}  // namespace detail

/// D^0 .. D^l_max with Y^l(R r) = D^l(R) Y^l(r).
inline std::vector<Matrix> wigner_d_upto(int l_max, const Rotation& R) {
  if (l_max < 0 || l_max > kMaxCgOrder) throw DomainError("wigner_d: order out of range");
  std::vector<Matrix> d;
  d.push_back(Matrix::identity(1));
  if (l_max == 0) return d;
  // l = 1 components are (y, z, x).
  constexpr int perm[3] = {1, 2, 0};
  Matrix r1(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r1(i, j) = R(perm[i], perm[j]);
  d.push_back(r1);
  for (int l = 2; l <= l_max; ++l) {
    const int n = irrep_dim(l);
    Matrix band(n, n);
    detail::BandRecursion rec(d[1], d[l - 1], l);
    for (int m = -l; m <= l; ++m)
      for (int k = -l; k <= l; ++k) band(m + l, k + l) = rec.element(m, k);
    d.push_back(std::move(band));
  }
  return d;
}

inline Matrix wigner_d(int l, const Rotation& R) { return wigner_d_upto(l, R).back(); }

/// Rotates every (l, c) irrep of a layout-shaped row by D^l.
inline void rotate_irreps(const IrrepsLayout& layout, const std::vector<Matrix>& d, std::span<const double> in,
                          std::span<double> out) {
  require(static_cast<int>(d.size()) > layout.l_max(), "rotate_irreps: missing Wigner-D orders");
  for (int l = 0; l <= layout.l_max(); ++l) {
    const int n = irrep_dim(l);
    for (int c = 0; c < layout.channels(); ++c) {
      const std::size_t base = layout.index(l, c, -l);
      for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += d[l](i, j) * in[base + j];
        out[base + i] = s;
      }
    }
  }
}

inline IrrepsTensor rotate(const IrrepsTensor& x, const Rotation& R) {
  IrrepsTensor out(x.layout);
  rotate_irreps(x.layout, wigner_d_upto(x.layout.l_max(), R), x.data, out.data);
  return out;
}

// ---------------------------------------------------------------------------
// Path-wise products

/// w_{m3} = sum_{m1,m2} C^{(l3,m3)}_{(l1,m1),(l2,m2)} u_{m1} v_{m2}.
inline std::vector<double> tensor_product_path(std::span<const double> u, std::span<const double> v, CgPath path,
                                               const CGTable& cg) {
  require(u.size() == static_cast<std::size_t>(irrep_dim(path.l1)) &&
              v.size() == static_cast<std::size_t>(irrep_dim(path.l2)),
          "tensor_product_path: input lengths do not match the path orders");
  std::vector<double> w(static_cast<std::size_t>(irrep_dim(path.l3)), 0.0);
  for (const auto& e : cg.nonzeros(path.l1, path.l2, path.l3)) w[e.m3] += e.value * u[e.m1] * v[e.m2];
  return w;
}

/// (2l1+1) x (2l2+1) block sum_{m3} C^{(l1,m1),(l2,m2)}_{(l3,m3)} w_{m3}.
inline Matrix tensor_expansion_path(std::span<const double> w, CgPath path, const CGTable& cg) {
  require(w.size() == static_cast<std::size_t>(irrep_dim(path.l3)),
          "tensor_expansion_path: input length does not match l3");
  Matrix out(irrep_dim(path.l1), irrep_dim(path.l2));
  for (const auto& e : cg.nonzeros(path.l1, path.l2, path.l3)) out(e.m1, e.m2) += e.value * w[e.m3];
  return out;
}

}  // namespace qhnet

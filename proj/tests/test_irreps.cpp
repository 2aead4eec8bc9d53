#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "qhnet/irreps.hpp"

using namespace qhnet;
using Catch::Matchers::WithinAbs;

namespace {

std::vector<double> random_vector(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

Vec3 random_unit(Rng& rng) {
  Vec3 v{rng.normal(), rng.normal(), rng.normal()};
  const double n = norm(v);
  return {v[0] / n, v[1] / n, v[2] / n};
}

std::vector<double> matvec(const Matrix& m, const std::vector<double>& v) {
  std::vector<double> out(m.rows(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out[i] += m(i, j) * v[j];
  return out;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

// Gauss-Legendre nodes/weights on [-1, 1] by Newton iteration.
void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  x.assign(n, 0.0);
  w.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = z;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2 * k - 1) * z * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (z * p1 - p0) / (z * z - 1);
      const double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    x[i] = z;
    w[i] = 2.0 / ((1 - z * z) * dp * dp);
  }
}

}  // namespace

TEST_CASE("layout offsets and total length") {
  IrrepsLayout layout(4, 3);
  REQUIRE(layout.size() == 3u * (1 + 3 + 5 + 7 + 9));
  for (int l = 0; l <= 4; ++l) {
    REQUIRE(layout.segment_size(l) == static_cast<std::size_t>(3 * (2 * l + 1)));
    if (l > 0) REQUIRE(layout.offset(l) > layout.offset(l - 1));
  }
  REQUIRE(layout.index(2, 1, -2) == layout.offset(2) + 5);
  REQUIRE_THROWS_AS(IrrepsLayout(-1, 2), ConfigError);
  REQUIRE_THROWS_AS(IrrepsTensor(layout, std::vector<double>(3)), ContractViolation);
}

TEST_CASE("cg table: trivial and textbook blocks") {
  const auto& cg = *shared_cg_table(4);
  REQUIRE(cg.block(0, 0, 0).size() == 1);
  REQUIRE(cg.block(0, 0, 0)[0] == 1.0);

  // The only invariant pairing of two vectors is the dot product.
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      REQUIRE_THAT(cg.at(1, 1, 0, a - 1, b - 1, 0), WithinAbs(a == b ? 1.0 / std::sqrt(3.0) : 0.0, 1e-15));

  // Complex-basis Racah values against tabulated Condon-Shortley coefficients.
  auto c = [](int j1, int m1, int j2, int m2, int J, int M) {
    return static_cast<double>(detail::complex_cg(j1, m1, j2, m2, J, M));
  };
  REQUIRE_THAT(c(1, 1, 1, -1, 0, 0), WithinAbs(1 / std::sqrt(3.0), 1e-15));
  REQUIRE_THAT(c(1, 0, 1, 0, 0, 0), WithinAbs(-1 / std::sqrt(3.0), 1e-15));
  REQUIRE_THAT(c(1, 0, 1, 0, 2, 0), WithinAbs(std::sqrt(2.0 / 3.0), 1e-15));
  REQUIRE_THAT(c(1, 1, 1, 0, 1, 1), WithinAbs(1 / std::sqrt(2.0), 1e-15));
  REQUIRE_THAT(c(2, 0, 2, 0, 0, 0), WithinAbs(1 / std::sqrt(5.0), 1e-15));
  REQUIRE_THAT(c(2, 1, 1, -1, 1, 0), WithinAbs(std::sqrt(3.0 / 10.0), 1e-15));
}

TEST_CASE("cg table: orthogonality for every path up to order 8") {
  const CGTable cg = build_cg_table(kMaxCgOrder);
  double worst = 0.0;
  for (int l1 = 0; l1 <= kMaxCgOrder; ++l1)
    for (int l2 = 0; l2 <= kMaxCgOrder; ++l2) {
      const int lo = std::abs(l1 - l2), hi = std::min(l1 + l2, kMaxCgOrder);
      for (int l3 = lo; l3 <= hi; ++l3)
        for (int l3p = lo; l3p <= hi; ++l3p)
          for (int m3 = -l3; m3 <= l3; ++m3)
            for (int m3p = -l3p; m3p <= l3p; ++m3p) {
              double s = 0.0;
              for (int m1 = -l1; m1 <= l1; ++m1)
                for (int m2 = -l2; m2 <= l2; ++m2) s += cg.at(l1, l2, l3, m1, m2, m3) * cg.at(l1, l2, l3p, m1, m2, m3p);
              const double expected = (l3 == l3p && m3 == m3p) ? 1.0 : 0.0;
              worst = std::max(worst, std::abs(s - expected));
            }
    }
  REQUIRE(worst < 1e-12);
}

TEST_CASE("cg table: (2,2,*) contraction is the identity") {
  const auto& cg = *shared_cg_table(4);
  // Stack C^T C over l3 = 0..4: a 25 x 25 identity.
  Matrix gram(25, 25);
  int row = 0;
  for (int l3 = 0; l3 <= 4; ++l3)
    for (int m3 = -l3; m3 <= l3; ++m3, ++row) {
      int col = 0;
      for (int l3p = 0; l3p <= 4; ++l3p)
        for (int m3p = -l3p; m3p <= l3p; ++m3p, ++col) {
          double s = 0.0;
          for (int m1 = -2; m1 <= 2; ++m1)
            for (int m2 = -2; m2 <= 2; ++m2) s += cg.at(2, 2, l3, m1, m2, m3) * cg.at(2, 2, l3p, m1, m2, m3p);
          gram(row, col) = s;
        }
    }
  REQUIRE(max_abs(gram - Matrix::identity(25)) < 1e-12);
}

TEST_CASE("cg table: configuration and contract errors") {
  REQUIRE_THROWS_AS(build_cg_table(-1), ConfigError);
  REQUIRE_THROWS_AS(build_cg_table(kMaxCgOrder + 1), ConfigError);
  const auto& cg = *shared_cg_table(2);
  REQUIRE_FALSE(cg.has_path(2, 2, 3));
  REQUIRE_THROWS_AS(cg.block(0, 1, 2), ContractViolation);
  REQUIRE_THROWS_AS(cg.block(2, 2, 3), ContractViolation);
}

TEST_CASE("spherical harmonics: closed forms") {
  REQUIRE(real_spherical_harmonics(0, {0.6, 0.0, 0.8}) == std::vector<double>{1.0});
  const auto y1 = real_spherical_harmonics(1, {0.0, 0.0, 1.0});
  REQUIRE_THAT(y1[0], WithinAbs(0.0, 1e-15));
  REQUIRE_THAT(y1[1], WithinAbs(std::sqrt(3.0), 1e-15));
  REQUIRE_THAT(y1[2], WithinAbs(0.0, 1e-15));
  // l = 1 is sqrt(3) (y, z, x).
  const Vec3 r{0.48, 0.6, 0.64};
  const auto y = real_spherical_harmonics(1, r);
  REQUIRE_THAT(y[0], WithinAbs(std::sqrt(3.0) * r[1], 1e-15));
  REQUIRE_THAT(y[2], WithinAbs(std::sqrt(3.0) * r[0], 1e-15));
  REQUIRE_THROWS_AS(real_spherical_harmonics(1, {1.0, 1.0, 0.0}), DomainError);
}

TEST_CASE("spherical harmonics: component normalization by quadrature") {
  // Product Gauss-Legendre x trapezoid quadrature integrates these exactly.
  const int lmax = 6;
  std::vector<double> nodes, weights;
  gauss_legendre(16, nodes, weights);
  const int nphi = 32;
  const int n = (lmax + 1) * (lmax + 1);
  Matrix gram(n, n);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const double z = nodes[i], s = std::sqrt(1 - z * z);
    for (int k = 0; k < nphi; ++k) {
      const double phi = 2 * std::numbers::pi * k / nphi;
      const auto y = spherical_harmonics_upto(lmax, {s * std::cos(phi), s * std::sin(phi), z});
      const double w = weights[i] / (2.0 * nphi);  // mean over the sphere
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) gram(a, b) += w * y[a] * y[b];
    }
  }
  REQUIRE(max_abs(gram - Matrix::identity(n)) < 1e-12);
}

TEST_CASE("spherical harmonics: addition theorem") {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const auto y = spherical_harmonics_upto(8, random_unit(rng));
    std::size_t off = 0;
    for (int l = 0; l <= 8; ++l) {
      double s = 0.0;
      for (int m = 0; m < 2 * l + 1; ++m) s += y[off + m] * y[off + m];
      REQUIRE_THAT(s, WithinAbs(2 * l + 1, 1e-11));
      off += 2 * l + 1;
    }
  }
}

TEST_CASE("wigner d: identity, l = 1 permutation, orthogonality") {
  for (int l = 0; l <= 6; ++l) REQUIRE(max_abs(wigner_d(l, Rotation::identity()) - Matrix::identity(2 * l + 1)) < 1e-15);
  Rng rng(11);
  const Rotation R = Rotation::random(rng);
  const Matrix d1 = wigner_d(1, R);
  const int perm[3] = {1, 2, 0};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) REQUIRE(d1(i, j) == R(perm[i], perm[j]));
  for (int l = 0; l <= kMaxCgOrder; ++l) {
    const Matrix d = wigner_d(l, R);
    REQUIRE(max_abs(d * d.transpose() - Matrix::identity(2 * l + 1)) < 1e-11);
  }
}

TEST_CASE("wigner d: homomorphism and harmonic rotation rule") {
  Rng rng(5);
  double hom = 0.0, rule = 0.0;
  for (int t = 0; t < 50; ++t) {
    const Rotation a = Rotation::random(rng), b = Rotation::random(rng);
    const auto dab = wigner_d_upto(kMaxCgOrder, a * b), da = wigner_d_upto(kMaxCgOrder, a),
               db = wigner_d_upto(kMaxCgOrder, b);
    for (int l = 0; l <= kMaxCgOrder; ++l) hom = std::max(hom, max_abs(dab[l] - da[l] * db[l]));
    const Vec3 r = random_unit(rng);
    for (int l = 0; l <= kMaxCgOrder; ++l) {
      const auto lhs = real_spherical_harmonics(l, a.apply(r));
      const auto rhs = matvec(da[l], real_spherical_harmonics(l, r));
      rule = std::max(rule, max_diff(lhs, rhs));
    }
  }
  REQUIRE(hom < 1e-11);
  REQUIRE(rule < 1e-11);
}

TEST_CASE("rotation validation") {
  REQUIRE_THROWS_AS(Rotation::from_matrix({1, 0, 0, 0, 1, 0, 0, 0, -1}), DomainError);
  REQUIRE_THROWS_AS(Rotation::from_matrix({1, 0.1, 0, 0, 1, 0, 0, 0, 1}), DomainError);
  Rng rng(1);
  const Rotation r = Rotation::random(rng);
  REQUIRE_NOTHROW(Rotation::from_matrix(r.elements()));
}

TEST_CASE("tensor product: scalar and dot-product paths") {
  const auto& cg = *shared_cg_table(4);
  std::vector<double> a{2.0}, b{3.0};
  REQUIRE(tensor_product_path(a, b, {0, 0, 0}, cg) == std::vector<double>{6.0});
  std::vector<double> ez{0.0, 1.0, 0.0};
  const auto w = tensor_product_path(ez, ez, {1, 1, 0}, cg);
  REQUIRE_THAT(w[0], WithinAbs(1.0 / std::sqrt(3.0), 1e-15));
  REQUIRE_THROWS_AS(tensor_product_path(a, ez, {0, 0, 0}, cg), ContractViolation);
  REQUIRE_THROWS_AS(tensor_product_path(ez, ez, {1, 1, 3}, cg), ContractViolation);
}

TEST_CASE("tensor product: equivariance on every path") {
  const auto& cg = *shared_cg_table(4);
  Rng rng(7);
  double worst = 0.0;
  for (const CgPath& p : cg.paths()) {
    for (int t = 0; t < 100; ++t) {
      const Rotation R = Rotation::random(rng);
      const auto d = wigner_d_upto(4, R);
      const auto u = random_vector(rng, 2 * p.l1 + 1), v = random_vector(rng, 2 * p.l2 + 1);
      const auto lhs = tensor_product_path(matvec(d[p.l1], u), matvec(d[p.l2], v), p, cg);
      const auto rhs = matvec(d[p.l3], tensor_product_path(u, v, p, cg));
      worst = std::max(worst, max_diff(lhs, rhs));
    }
  }
  REQUIRE(worst < 1e-11);

  // The (2,1,2) path gets the tighter bound.
  double path212 = 0.0;
  for (int t = 0; t < 100; ++t) {
    const Rotation R = Rotation::random(rng);
    const auto d = wigner_d_upto(2, R);
    const auto u = random_vector(rng, 5), v = random_vector(rng, 3);
    path212 = std::max(path212, max_diff(tensor_product_path(matvec(d[2], u), matvec(d[1], v), {2, 1, 2}, cg),
                                         matvec(d[2], tensor_product_path(u, v, {2, 1, 2}, cg))));
  }
  REQUIRE(path212 < 1e-12);
}

TEST_CASE("tensor expansion inverts the tensor product") {
  const CGTable cg = build_cg_table(kMaxCgOrder);
  std::vector<double> five{5.0};
  REQUIRE(tensor_expansion_path(five, {0, 0, 0}, cg)(0, 0) == 5.0);

  Rng rng(9);
  double worst = 0.0;
  for (int l1 = 0; l1 <= 4; ++l1)
    for (int l2 = 0; l2 <= 4; ++l2)
      for (int t = 0; t < 10; ++t) {
        const auto u = random_vector(rng, 2 * l1 + 1), v = random_vector(rng, 2 * l2 + 1);
        Matrix sum(2 * l1 + 1, 2 * l2 + 1);
        for (int l3 = std::abs(l1 - l2); l3 <= l1 + l2; ++l3) {
          const CgPath p{l1, l2, l3};
          sum = sum + tensor_expansion_path(tensor_product_path(u, v, p, cg), p, cg);
        }
        Matrix outer(2 * l1 + 1, 2 * l2 + 1);
        for (int a = 0; a < 2 * l1 + 1; ++a)
          for (int b = 0; b < 2 * l2 + 1; ++b) outer(a, b) = u[a] * v[b];
        worst = std::max(worst, max_abs(sum - outer));
      }
  REQUIRE(worst < 1e-12);
}

TEST_CASE("perturbed table breaks equivariance") {
  const auto& cg = *shared_cg_table(2);
  const CGTable bad = cg.with_perturbed_entry({1, 1, 2}, 0, 0, 0, 0.3);
  Rng rng(2);
  const Rotation R = Rotation::random(rng);
  const auto d = wigner_d_upto(2, R);
  const auto u = random_vector(rng, 3), v = random_vector(rng, 3);
  const double err = max_diff(tensor_product_path(matvec(d[1], u), matvec(d[1], v), {1, 1, 2}, bad),
                              matvec(d[2], tensor_product_path(u, v, {1, 1, 2}, bad)));
  REQUIRE(err > 1e-3);
  // The source table is untouched.
  REQUIRE_THAT(cg.at(1, 1, 2, 0, 0, 0) - bad.at(1, 1, 2, 0, 0, 0), WithinAbs(-0.3, 1e-15));
}

#pragma once

// Dense symmetric eigensolvers and Hamiltonian evaluation metrics.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include "qhnet/error.hpp"
#include "qhnet/linalg.hpp"

namespace qhnet {

/// Lower-triangular L with L L^T = S.
inline Matrix cholesky(const Matrix& s) {
  require(s.square(), "cholesky: matrix must be square");
  const std::size_t n = s.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = s(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0)) throw NotPositiveDefinite("cholesky: non-positive pivot at index " + std::to_string(j));
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double v = s(i, j);
      for (std::size_t k = 0; k < j; ++k) v -= l(i, k) * l(j, k);
      l(i, j) = v / ljj;
    }
  }
  return l;
}

/// Solves L X = B for lower-triangular L.
inline Matrix forward_substitute(const Matrix& l, const Matrix& b) {
  const std::size_t n = l.rows();
  require(l.square() && b.rows() == n, "forward_substitute: shape mismatch");
  Matrix x = b;
  for (std::size_t c = 0; c < b.cols(); ++c)
    for (std::size_t i = 0; i < n; ++i) {
      double v = x(i, c);
      for (std::size_t k = 0; k < i; ++k) v -= l(i, k) * x(k, c);
      x(i, c) = v / l(i, i);
    }
  return x;
}

/// Solves L^T X = B for lower-triangular L.
inline Matrix backward_substitute_transpose(const Matrix& l, const Matrix& b) {
  const std::size_t n = l.rows();
  require(l.square() && b.rows() == n, "backward_substitute_transpose: shape mismatch");
  Matrix x = b;
  for (std::size_t c = 0; c < b.cols(); ++c)
    for (std::size_t i = n; i-- > 0;) {
      double v = x(i, c);
      for (std::size_t k = i + 1; k < n; ++k) v -= l(k, i) * x(k, c);
      x(i, c) = v / l(i, i);
    }
  return x;
}

struct EigenResult {
  std::vector<double> values;  // ascending
  Matrix vectors;              // columns
  int sweeps = 0;
};

/// Cyclic Jacobi rotations until off(A)_F < tol * ||A||_F.
inline EigenResult symmetric_eig(const Matrix& a_in, double tol = 1e-12, int max_sweeps = 100) {
  require(a_in.square(), "symmetric_eig: matrix must be square");
  const std::size_t n = a_in.rows();
  Matrix a = a_in;
  Matrix v = Matrix::identity(n);
  const double scale = norm_frobenius(a_in);
  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) s += a(i, j) * a(i, j);
    return std::sqrt(s);
  };

  int sweep = 0;
  while (off_norm() >= tol * scale && scale > 0.0) {
    if (sweep == max_sweeps) throw NumericalError("symmetric_eig: Jacobi iteration did not converge");
    ++sweep;
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a(x, x) < a(y, y); });
  EigenResult r{std::vector<double>(n), Matrix(n, n), sweep};
  for (std::size_t k = 0; k < n; ++k) {
    r.values[k] = a(order[k], order[k]);
    for (std::size_t i = 0; i < n; ++i) r.vectors(i, k) = v(i, order[k]);
  }
  return r;
}

struct Spectrum {
  std::vector<double> energies;  // ascending, Hartree
  Matrix coefficients;           // columns S-orthonormal
};

/// Solves H C = S C diag(eps) through the Cholesky reduction.
inline Spectrum generalized_eig(const Matrix& h, const Matrix& s) {
  require(h.square() && s.rows() == h.rows() && s.cols() == h.cols(), "generalized_eig: shape mismatch");
  const Matrix l = cholesky(s);
  // A = L^-1 H L^-T
  const Matrix y = forward_substitute(l, h);                       // L^-1 H
  const Matrix a = symmetrized(forward_substitute(l, y.transpose()));  // L^-1 (L^-1 H)^T
  auto eig = symmetric_eig(a);
  return {std::move(eig.values), backward_substitute_transpose(l, eig.vectors)};
}

inline Spectrum generalized_eig(const Matrix& h) { return generalized_eig(h, Matrix::identity(h.rows())); }

struct Metrics {
  double mae_h = 0.0;
  double mae_eps = 0.0;
  double cos_psi = 1.0;
};

/// Per-matrix evaluation against a label. Both spectra use symmetrized
/// matrices and the same overlap; orbital metrics cover the n_occ lowest
/// orbitals, or all orbitals when `occupied_only` is false.
inline Metrics evaluate_metrics(const Matrix& h_pred, const Matrix& h_label, const Matrix& overlap, std::size_t n_occ,
                                bool occupied_only = true) {
  require(h_pred.rows() == h_label.rows() && h_pred.cols() == h_label.cols(), "metrics: shape mismatch");
  require(n_occ <= h_label.rows(), "metrics: more occupied orbitals than basis functions");
  const Matrix hp = symmetrized(h_pred), hl = symmetrized(h_label);
  Metrics m;
  double s = 0.0;
  for (std::size_t k = 0; k < hp.data().size(); ++k) s += std::abs(hp.data()[k] - hl.data()[k]);
  m.mae_h = s / static_cast<double>(hp.data().size());

  const std::size_t count = occupied_only ? n_occ : h_label.rows();
  if (count == 0) return m;
  const Spectrum sp = generalized_eig(hp, overlap);
  const Spectrum sl = generalized_eig(hl, overlap);
  double de = 0.0, cs = 0.0;
  const std::size_t n = hp.rows();
  for (std::size_t k = 0; k < count; ++k) {
    de += std::abs(sp.energies[k] - sl.energies[k]);
    double dotp = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double a = sp.coefficients(i, k), b = sl.coefficients(i, k);
      dotp += a * b;
      na += a * a;
      nb += b * b;
    }
    cs += std::abs(dotp) / std::sqrt(na * nb);
  }
  m.mae_eps = de / static_cast<double>(count);
  m.cos_psi = cs / static_cast<double>(count);
  return m;
}

/// RMSE + MAE over entries.
inline double hamiltonian_loss(const Matrix& pred, const Matrix& label) {
  require(pred.rows() == label.rows() && pred.cols() == label.cols(), "loss: shape mismatch");
  double sq = 0.0, ab = 0.0;
  for (std::size_t k = 0; k < pred.data().size(); ++k) {
    const double d = pred.data()[k] - label.data()[k];
    sq += d * d;
    ab += std::abs(d);
  }
  const double n = static_cast<double>(pred.data().size());
  return std::sqrt(sq / n) + ab / n;
}

}  // namespace qhnet

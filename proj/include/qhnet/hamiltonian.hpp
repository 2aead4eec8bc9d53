#pragma once

// Orbital bookkeeping for the H/C/N/O minimal-plus basis.
//
// Every atom pair is first predicted as a 14x14 full-orbital block over the
// shells 1s 2s 3s 2p 3p 3d (in that order, m = -l..l inside each shell).
// Element-specific blocks are row/column selections of it.

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "qhnet/error.hpp"
#include "qhnet/irreps.hpp"
#include "qhnet/linalg.hpp"

namespace qhnet {

struct Shell {
  int l;
  std::size_t offset;  // first full-orbital index
};

inline constexpr std::size_t kFullOrbitals = 14;
inline constexpr int kMaxShellOrder = 2;

/// Full-orbital shell list: 1s, 2s, 3s, 2p, 3p, 3d.
inline const std::array<Shell, 6>& full_shells() {
  static const std::array<Shell, 6> shells = {{{0, 0}, {0, 1}, {0, 2}, {1, 3}, {1, 6}, {2, 9}}};
  return shells;
}

inline bool supported_element(int z) { return z == 1 || z == 6 || z == 7 || z == 8; }

inline std::string element_symbol(int z) {
  switch (z) {
    case 1: return "H";
    case 6: return "C";
    case 7: return "N";
    case 8: return "O";
    default: return "Z" + std::to_string(z);
  }
}

/// Indices into the full-orbital block used by element z (1s 2s 2p for H).
inline const std::vector<std::size_t>& orbital_indices(int z) {
  static const std::vector<std::size_t> hydrogen = {0, 1, 3, 4, 5};
  static const std::vector<std::size_t> heavy = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13};
  if (z == 1) return hydrogen;
  if (z == 6 || z == 7 || z == 8) return heavy;
  throw DataError("unsupported element Z=" + std::to_string(z));
}

/// Shells (order, offset within the element block) used by element z.
inline std::vector<Shell> element_shells(int z) {
  if (z == 1) return {{0, 0}, {0, 1}, {1, 2}};
  orbital_indices(z);
  return {full_shells().begin(), full_shells().end()};
}

inline std::size_t orbital_count(int z) { return orbital_indices(z).size(); }

inline std::size_t orbital_count(std::span<const int> atoms) {
  std::size_t n = 0;
  for (int z : atoms) n += orbital_count(z);
  return n;
}

/// Start of each atom's orbital range; the last entry is the total.
inline std::vector<std::size_t> orbital_offsets(std::span<const int> atoms) {
  std::vector<std::size_t> off{0};
  for (int z : atoms) off.push_back(off.back() + orbital_count(z));
  return off;
}

/// Closed-shell occupied orbital count: half the electron count.
inline std::size_t occupied_count(std::span<const int> atoms) {
  int electrons = 0;
  for (int z : atoms) electrons += z;
  if (electrons % 2 != 0) throw DomainError("odd electron count: open-shell systems are not supported");
  return static_cast<std::size_t>(electrons / 2);
}

// ---------------------------------------------------------------------------
// Channel decomposition of the full-orbital block

/// Order pair (lo1, lo2) with its shell-pair channels, enumerated row-major
/// over (shell of order lo1, shell of order lo2).
struct OrbitalChannelBlock {
  int l1, l2;
  std::vector<std::size_t> row_offset, col_offset;
  int channels() const { return static_cast<int>(row_offset.size()); }
};

inline std::vector<OrbitalChannelBlock> full_orbital_channels() {
  std::vector<OrbitalChannelBlock> out;
  for (int l1 = 0; l1 <= kMaxShellOrder; ++l1)
    for (int l2 = 0; l2 <= kMaxShellOrder; ++l2) {
      OrbitalChannelBlock b{l1, l2, {}, {}};
      for (const auto& s1 : full_shells())
        for (const auto& s2 : full_shells())
          if (s1.l == l1 && s2.l == l2) {
            b.row_offset.push_back(s1.offset);
            b.col_offset.push_back(s2.offset);
          }
      out.push_back(std::move(b));
    }
  return out;
}

/// Splits M into per-(lo1, lo2) channel blocks, each channel a
/// (2lo1+1) x (2lo2+1) row-major array.
inline std::vector<std::vector<double>> decompose_full_block(const Matrix& m) {
  require(m.rows() == kFullOrbitals && m.cols() == kFullOrbitals, "decompose_full_block: expected 14x14");
  std::vector<std::vector<double>> out;
  for (const auto& b : full_orbital_channels()) {
    std::vector<double> v;
    for (int c = 0; c < b.channels(); ++c)
      for (int i = 0; i < irrep_dim(b.l1); ++i)
        for (int j = 0; j < irrep_dim(b.l2); ++j) v.push_back(m(b.row_offset[c] + i, b.col_offset[c] + j));
    out.push_back(std::move(v));
  }
  return out;
}

inline Matrix compose_full_block(const std::vector<std::vector<double>>& parts) {
  const auto blocks = full_orbital_channels();
  require(parts.size() == blocks.size(), "compose_full_block: wrong number of channel blocks");
  Matrix m(kFullOrbitals, kFullOrbitals);
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const auto& b = blocks[k];
    const std::size_t n1 = irrep_dim(b.l1), n2 = irrep_dim(b.l2);
    require(parts[k].size() == n1 * n2 * static_cast<std::size_t>(b.channels()), "compose_full_block: wrong block size");
    std::size_t q = 0;
    for (int c = 0; c < b.channels(); ++c)
      for (std::size_t i = 0; i < n1; ++i)
        for (std::size_t j = 0; j < n2; ++j) m(b.row_offset[c] + i, b.col_offset[c] + j) = parts[k][q++];
  }
  return m;
}

// ---------------------------------------------------------------------------
// Blocks and assembly

inline Matrix extract_block(const Matrix& m, int zi, int zj) {
  require(m.rows() == kFullOrbitals && m.cols() == kFullOrbitals, "extract_block: expected a 14x14 block");
  const auto& ri = orbital_indices(zi);
  const auto& cj = orbital_indices(zj);
  Matrix out(ri.size(), cj.size());
  for (std::size_t a = 0; a < ri.size(); ++a)
    for (std::size_t b = 0; b < cj.size(); ++b) out(a, b) = m(ri[a], cj[b]);
  return out;
}

/// Per-pair blocks indexed [i][j], already reduced to element shapes.
using PairBlocks = std::vector<std::vector<Matrix>>;

inline Matrix assemble(const PairBlocks& blocks, std::span<const int> atoms, bool symmetrize = false) {
  const std::size_t n = atoms.size();
  require(blocks.size() == n, "assemble: block rows do not match atom count");
  const auto off = orbital_offsets(atoms);
  Matrix h(off.back(), off.back());
  for (std::size_t i = 0; i < n; ++i) {
    require(blocks[i].size() == n, "assemble: missing blocks for an atom");
    for (std::size_t j = 0; j < n; ++j) {
      const Matrix& b = blocks[i][j];
      require(b.rows() == off[i + 1] - off[i] && b.cols() == off[j + 1] - off[j], "assemble: block shape mismatch");
      for (std::size_t a = 0; a < b.rows(); ++a)
        for (std::size_t c = 0; c < b.cols(); ++c) h(off[i] + a, off[j] + c) = b(a, c);
    }
  }
  return symmetrize ? symmetrized(h) : h;
}

/// Inverse of assemble: the (i, j) element blocks of h.
inline PairBlocks split_blocks(const Matrix& h, std::span<const int> atoms) {
  const auto off = orbital_offsets(atoms);
  require(h.rows() == off.back() && h.cols() == off.back(), "split_blocks: matrix does not match atom list");
  PairBlocks out(atoms.size());
  for (std::size_t i = 0; i < atoms.size(); ++i)
    for (std::size_t j = 0; j < atoms.size(); ++j) {
      Matrix b(off[i + 1] - off[i], off[j + 1] - off[j]);
      for (std::size_t a = 0; a < b.rows(); ++a)
        for (std::size_t c = 0; c < b.cols(); ++c) b(a, c) = h(off[i] + a, off[j] + c);
      out[i].push_back(std::move(b));
    }
  return out;
}

/// Flat index map from an assembled N_orb x N_orb matrix into per-pair 14x14
/// blocks: entry k of the result is the position of H.data()[k] inside the
/// concatenation [diag blocks (atom order) ; off-diag blocks (pair order)].
/// `pair_slot(i, j)` gives the block slot of an ordered pair.
template <class SlotFn>
std::vector<std::uint32_t> assembly_index(std::span<const int> atoms, SlotFn pair_slot) {
  const auto off = orbital_offsets(atoms);
  const std::size_t n = off.back();
  std::vector<std::uint32_t> idx(n * n);
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    const auto& ri = orbital_indices(atoms[i]);
    for (std::size_t j = 0; j < atoms.size(); ++j) {
      const auto& cj = orbital_indices(atoms[j]);
      const std::size_t base = pair_slot(i, j) * kFullOrbitals * kFullOrbitals;
      for (std::size_t a = 0; a < ri.size(); ++a)
        for (std::size_t b = 0; b < cj.size(); ++b)
          idx[(off[i] + a) * n + off[j] + b] = static_cast<std::uint32_t>(base + ri[a] * kFullOrbitals + cj[b]);
    }
  }
  return idx;
}

/// Orbital permutation matrix P with (P H P^T) the Hamiltonian of the atom
/// list reordered so that new atom k is old atom perm[k].
inline Matrix orbital_permutation(std::span<const int> atoms, std::span<const std::size_t> perm) {
  require(perm.size() == atoms.size(), "orbital_permutation: size mismatch");
  const auto off = orbital_offsets(atoms);
  Matrix p(off.back(), off.back());
  std::size_t row = 0;
  for (std::size_t k = 0; k < perm.size(); ++k) {
    const std::size_t i = perm[k];
    require(i < atoms.size(), "orbital_permutation: index out of range");
    for (std::size_t a = off[i]; a < off[i + 1]; ++a) p(row++, a) = 1.0;
  }
  return p;
}

/// Block-diagonal representation of R on the orbitals of an atom list.
inline Matrix block_rotation(std::span<const int> atoms, const Rotation& R) {
  const auto d = wigner_d_upto(kMaxShellOrder, R);
  const auto off = orbital_offsets(atoms);
  Matrix out(off.back(), off.back());
  for (std::size_t i = 0; i < atoms.size(); ++i)
    for (const auto& s : element_shells(atoms[i])) {
      const std::size_t base = off[i] + s.offset;
      const Matrix& dl = d[static_cast<std::size_t>(s.l)];
      for (std::size_t a = 0; a < dl.rows(); ++a)
        for (std::size_t b = 0; b < dl.cols(); ++b) out(base + a, base + b) = dl(a, b);
    }
  return out;
}

/// Rotation acting on a single 14x14 full-orbital block.
inline Matrix full_block_rotation(const Rotation& R) {
  const std::array<int, 1> oxygen{8};
  return block_rotation(oxygen, R);
}

}  // namespace qhnet

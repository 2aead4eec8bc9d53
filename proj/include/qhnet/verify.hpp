#pragma once

// Model-level verification: symmetry residuals under rotation, translation
// and atom permutation, and a full-model gradient check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "qhnet/data.hpp"
#include "qhnet/nn.hpp"
#include "qhnet/train.hpp"

namespace qhnet {

struct EquivarianceReport {
  double rotation = 0.0;     // max |H(Rx) - D H(x) D^T|
  double translation = 0.0;  // max |H(x + t) - H(x)|
  double permutation = 0.0;  // max |H(Px) - P H(x) P^T|
  double combined = 0.0;     // all three at once
  double output_scale = 0.0; // max |H(x)|
  int trials = 0;

  double worst() const { return std::max({rotation, translation, permutation, combined}); }
};

/// Rounds every coordinate to a multiple of 2^-20 Bohr. Sums of such values
/// stay exact, so translated geometries reproduce the same pair vectors.
inline Molecule snap_to_grid(Molecule m) {
  const double grid = std::ldexp(1.0, -20);
  for (auto& p : m.positions)
    for (double& x : p) x = std::round(x / grid) * grid;
  return m;
}

inline Molecule transformed(const Molecule& m, const Rotation& r, const Vec3& shift,
                            const std::vector<std::size_t>& perm) {
  Molecule out;
  for (auto k : perm) {
    out.atoms.push_back(m.atoms[k]);
    out.positions.push_back(r.apply(m.positions[k]) + shift);
  }
  return out;
}

/// Residuals over `trials` random group elements applied to `base`.
inline EquivarianceReport check_equivariance(const QHNet& net, const Molecule& base_in, int trials,
                                             std::uint64_t seed) {
  const Molecule base = snap_to_grid(base_in);
  const std::size_t n = base.atoms.size();
  Rng rng(mix_seed(seed, 0xe9));
  const double grid = std::ldexp(1.0, -20);
  const Matrix h = net.predict(base);
  EquivarianceReport rep;
  rep.trials = trials;
  rep.output_scale = max_abs(h);
  std::vector<std::size_t> identity(n);
  std::iota(identity.begin(), identity.end(), 0);
  for (int trial = 0; trial < trials; ++trial) {
    const Rotation r = Rotation::random(rng);
    Vec3 shift;
    for (double& x : shift) x = std::round(rng.uniform(-4.0, 4.0) / grid) * grid;
    std::vector<std::size_t> perm = identity;
    rng.shuffle(perm);

    const Matrix d = block_rotation(base.atoms, r);
    const Matrix p = orbital_permutation(base.atoms, perm);
    const Matrix rotated = d * h * d.transpose();

    rep.rotation = std::max(rep.rotation, max_abs(net.predict(transformed(base, r, {}, identity)) - rotated));
    rep.translation =
        std::max(rep.translation, max_abs(net.predict(transformed(base, Rotation::identity(), shift, identity)) - h));
    rep.permutation = std::max(
        rep.permutation,
        max_abs(net.predict(transformed(base, Rotation::identity(), {}, perm)) - p * h * p.transpose()));
    rep.combined =
        std::max(rep.combined, max_abs(net.predict(transformed(base, r, shift, perm)) - p * rotated * p.transpose()));
  }
  return rep;
}

/// Gradient check of the training loss for one jittered conformation
/// labelled by an independent teacher.
inline ad::GradcheckReport model_gradcheck(QHNet& net, const std::string& template_name, std::size_t samples,
                                           double eps, std::uint64_t seed) {
  ModelConfig teacher_cfg = net.config();
  teacher_cfg.seed = mix_seed(seed, 0x7eac);
  const Dataset label = teacher_generate(teacher_cfg, seed, 1, template_name);
  const Conformation& c = label.records.front();
  return ad::gradcheck(
      net.params(),
      [&](ad::Tape& t) { return hamiltonian_loss(t, net.forward(t, c.molecule).hamiltonian, c.hamiltonian); }, eps,
      samples, seed);
}

}  // namespace qhnet

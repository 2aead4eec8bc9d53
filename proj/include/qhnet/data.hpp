#pragma once

// Conformation datasets: JSON-lines files, geometry templates, the synthetic
// teacher generator and deterministic splits.
//
// File layout: the first line is a manifest object
//   {"name":..., "convention":"qhnet-v1", "seed":..., "counts":{"all":N}}
// followed by one record per line with "atoms", "positions" (Bohr),
// "hamiltonian" (Hartree) and an optional "overlap". Numbers are written with
// 17 significant digits, so a save/load round trip is exact.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "qhnet/error.hpp"
#include "qhnet/hamiltonian.hpp"
#include "qhnet/nn.hpp"
#include "qhnet/spectra.hpp"

namespace qhnet {

inline constexpr const char* kConvention = "qhnet-v1";
inline constexpr double kBohrPerAngstrom = 1.8897261254578281;

struct Conformation {
  Molecule molecule;
  Matrix hamiltonian;
  std::optional<Matrix> overlap;

  Matrix overlap_or_identity() const { return overlap ? *overlap : Matrix::identity(hamiltonian.rows()); }
};

struct DatasetManifest {
  std::string name;
  std::string convention = kConvention;
  std::uint64_t seed = 0;
  std::map<std::string, std::size_t> counts;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Conformation> records;
};

/// Throws DataError naming the record when an invariant fails.
inline void validate_conformation(const Conformation& c, std::size_t index) {
  const std::string where = "record " + std::to_string(index) + ": ";
  const auto& m = c.molecule;
  if (m.atoms.empty()) throw DataError(where + "no atoms");
  if (m.positions.size() != m.atoms.size()) throw DataError(where + "positions do not match atoms");
  for (int z : m.atoms)
    if (!supported_element(z)) throw DataError(where + "unsupported element Z=" + std::to_string(z));
  for (const auto& p : m.positions)
    for (double x : p)
      if (!std::isfinite(x)) throw DataError(where + "non-finite position");
  const std::size_t n = orbital_count(m.atoms);
  if (c.hamiltonian.rows() != n || c.hamiltonian.cols() != n)
    throw DataError(where + "hamiltonian is " + std::to_string(c.hamiltonian.rows()) + "x" +
                    std::to_string(c.hamiltonian.cols()) + ", expected " + std::to_string(n) + "x" + std::to_string(n));
  for (double x : c.hamiltonian.data())
    if (!std::isfinite(x)) throw DataError(where + "non-finite hamiltonian entry");
  if (asymmetry(c.hamiltonian) > 1e-8) throw DataError(where + "hamiltonian is not symmetric within 1e-8");
  if (c.overlap) {
    if (c.overlap->rows() != n || c.overlap->cols() != n) throw DataError(where + "overlap shape mismatch");
    if (asymmetry(*c.overlap) > 1e-8) throw DataError(where + "overlap is not symmetric within 1e-8");
    try {
      cholesky(*c.overlap);
    } catch (const NotPositiveDefinite&) {
      throw DataError(where + "overlap is not positive definite");
    }
  }
}

namespace detail {

inline void write_number(std::string& out, double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  out += buf;
}

inline void write_matrix(std::string& out, const Matrix& m) {
  out += '[';
  for (std::size_t i = 0; i < m.rows(); ++i) {
    if (i) out += ',';
    out += '[';
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (j) out += ',';
      write_number(out, m(i, j));
    }
    out += ']';
  }
  out += ']';
}

inline Matrix read_matrix(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array()) throw DataError(what + " must be a nested array");
  const std::size_t rows = j.size();
  const std::size_t cols = rows ? j[0].size() : 0;
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    if (!j[i].is_array() || j[i].size() != cols) throw DataError(what + " has ragged rows");
    for (std::size_t k = 0; k < cols; ++k) {
      if (!j[i][k].is_number()) throw DataError(what + " holds a non-number");
      m(i, k) = j[i][k].get<double>();
    }
  }
  return m;
}

}  // namespace detail

inline std::string serialize_record(const Conformation& c) {
  std::string out = "{\"atoms\":[";
  for (std::size_t i = 0; i < c.molecule.atoms.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(c.molecule.atoms[i]);
  }
  out += "],\"positions\":[";
  for (std::size_t i = 0; i < c.molecule.positions.size(); ++i) {
    if (i) out += ',';
    out += '[';
    for (int k = 0; k < 3; ++k) {
      if (k) out += ',';
      detail::write_number(out, c.molecule.positions[i][static_cast<std::size_t>(k)]);
    }
    out += ']';
  }
  out += "],\"hamiltonian\":";
  detail::write_matrix(out, c.hamiltonian);
  if (c.overlap) {
    out += ",\"overlap\":";
    detail::write_matrix(out, *c.overlap);
  }
  out += '}';
  return out;
}

inline std::string serialize_manifest(const DatasetManifest& m) {
  nlohmann::ordered_json j;
  j["name"] = m.name;
  j["convention"] = m.convention;
  j["seed"] = m.seed;
  j["counts"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : m.counts) j["counts"][k] = v;
  return j.dump();
}

inline void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write dataset file " + path);
  out << serialize_manifest(ds.manifest) << '\n';
  for (const auto& r : ds.records) out << serialize_record(r) << '\n';
  if (!out) throw DataError("failed while writing " + path);
}

inline Dataset parse_dataset(std::istream& in, const std::string& source = "<stream>") {
  Dataset ds;
  std::string line;
  std::size_t line_no = 0;
  bool have_manifest = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(source + ":" + std::to_string(line_no) + ": parse error: " + e.what());
    }
    if (!have_manifest) {
      try {
        ds.manifest.name = j.at("name").get<std::string>();
        ds.manifest.convention = j.at("convention").get<std::string>();
        ds.manifest.seed = j.value("seed", std::uint64_t{0});
        for (const auto& [k, v] : j.at("counts").items()) ds.manifest.counts[k] = v.get<std::size_t>();
      } catch (const nlohmann::json::exception& e) {
        throw DataError(source + ": invalid manifest line: " + e.what());
      }
      if (ds.manifest.convention != kConvention)
        throw DataError(source + ": orbital ordering convention '" + ds.manifest.convention + "' is not '" +
                        kConvention + "'");
      have_manifest = true;
      continue;
    }
    const std::size_t index = ds.records.size();
    Conformation c;
    try {
      c.molecule.atoms = j.at("atoms").get<std::vector<int>>();
      for (const auto& p : j.at("positions")) {
        if (!p.is_array() || p.size() != 3) throw DataError("record " + std::to_string(index) + ": bad position");
        c.molecule.positions.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<double>()});
      }
      c.hamiltonian = detail::read_matrix(j.at("hamiltonian"), "record " + std::to_string(index) + " hamiltonian");
      if (j.contains("overlap"))
        c.overlap = detail::read_matrix(j.at("overlap"), "record " + std::to_string(index) + " overlap");
    } catch (const nlohmann::json::exception& e) {
      throw DataError(source + ": record " + std::to_string(index) + ": " + e.what());
    }
    validate_conformation(c, index);
    ds.records.push_back(std::move(c));
  }
  if (!have_manifest) throw DataError(source + ": missing manifest line");
  auto it = ds.manifest.counts.find("all");
  if (it != ds.manifest.counts.end() && it->second != ds.records.size())
    throw DataError(source + ": manifest announces " + std::to_string(it->second) + " records, found " +
                    std::to_string(ds.records.size()));
  return ds;
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset file " + path);
  return parse_dataset(in, path);
}

// ---------------------------------------------------------------------------
// Geometry templates (coordinates in Angstrom, converted to Bohr)

inline Molecule from_angstrom(std::vector<int> atoms, const std::vector<Vec3>& xyz) {
  Molecule m{std::move(atoms), {}};
  for (const auto& p : xyz) m.positions.push_back({p[0] * kBohrPerAngstrom, p[1] * kBohrPerAngstrom, p[2] * kBohrPerAngstrom});
  return m;
}

inline Molecule ring_molecule() {
  // Six-membered ring N1 C2 N3 C4 C5 C6 with carbonyl O on C2, C4 and H on
  // N1, N3, C5, C6. Atom order: C2 C4 C5 C6 N1 N3 O2 O4 H1 H3 H5 H6.
  const double ring = 1.39;
  auto at = [](double radius, int k) {
    const double a = std::numbers::pi / 2.0 + k * std::numbers::pi / 3.0;
    return Vec3{radius * std::cos(a), radius * std::sin(a), 0.0};
  };
  std::vector<Vec3> xyz = {at(ring, 1),        at(ring, 3),        at(ring, 4),        at(ring, 5),
                           at(ring, 0),        at(ring, 2),        at(ring + 1.22, 1), at(ring + 1.22, 3),
                           at(ring + 1.01, 0), at(ring + 1.01, 2), at(ring + 1.08, 4), at(ring + 1.08, 5)};
  return from_angstrom({6, 6, 6, 6, 7, 7, 8, 8, 1, 1, 1, 1}, xyz);
}

inline const std::vector<std::string>& template_names() {
  static const std::vector<std::string> names = {"water", "ethanol", "malondialdehyde", "uracil"};
  return names;
}

inline Molecule geometry_template(const std::string& name) {
  if (name == "water")
    return from_angstrom({8, 1, 1}, {{0.0, 0.0, 0.1173}, {0.0, 0.7572, -0.4692}, {0.0, -0.7572, -0.4692}});
  if (name == "ethanol")
    return from_angstrom({6, 6, 8, 1, 1, 1, 1, 1, 1}, {{1.1879, -0.3829, 0.0},
                                                       {0.0, 0.5526, 0.0},
                                                       {-1.1867, -0.2472, 0.0},
                                                       {-1.9237, 0.3850, 0.0},
                                                       {2.0985, 0.2306, 0.0},
                                                       {1.1184, -1.0093, 0.8869},
                                                       {1.1184, -1.0093, -0.8869},
                                                       {0.0227, 1.1812, 0.8852},
                                                       {0.0227, 1.1812, -0.8852}});
  if (name == "malondialdehyde")
    return from_angstrom({6, 6, 6, 8, 8, 1, 1, 1, 1}, {{0.0, 1.20, 0.0},
                                                       {1.23, 0.50, 0.0},
                                                       {-1.23, 0.50, 0.0},
                                                       {1.25, -0.75, 0.0},
                                                       {-1.25, -0.75, 0.0},
                                                       {0.0, 2.28, 0.0},
                                                       {2.15, 1.08, 0.0},
                                                       {-2.15, 1.08, 0.0},
                                                       {0.0, -1.20, 0.0}});
  if (name == "uracil") return ring_molecule();
  throw ConfigError("unknown template '" + name + "' (expected water, ethanol, malondialdehyde or uracil)");
}

inline double min_pair_distance(const Molecule& m) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < m.positions.size(); ++i)
    for (std::size_t j = i + 1; j < m.positions.size(); ++j) best = std::min(best, norm(m.positions[i] - m.positions[j]));
  return best;
}

/// Template geometry with Gaussian jitter; rejects draws with any pair
/// closer than 1 Bohr.
inline Molecule jitter(const Molecule& base, Rng& rng, double sigma = 0.1, int max_attempts = 1000) {
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    Molecule m = base;
    for (auto& p : m.positions)
      for (double& x : p) x += sigma * rng.normal();
    if (min_pair_distance(m) >= 1.0) return m;
  }
  throw DegenerateGeometry("jitter: no valid geometry after " + std::to_string(max_attempts) + " attempts");
}

/// Labels from a frozen randomly initialized network (symmetrized), overlap
/// left as identity.
inline Dataset teacher_generate(const ModelConfig& cfg, std::uint64_t seed, std::size_t n_samples,
                                const std::string& template_name) {
  const Molecule base = geometry_template(template_name);
  const QHNet teacher(cfg);
  Rng rng(mix_seed(seed, 0x6a77));
  Dataset ds;
  ds.manifest.name = template_name;
  ds.manifest.seed = seed;
  ds.manifest.counts["all"] = n_samples;
  for (std::size_t k = 0; k < n_samples; ++k) {
    Conformation c;
    c.molecule = jitter(base, rng);
    c.hamiltonian = symmetrized(teacher.predict(c.molecule));
    ds.records.push_back(std::move(c));
  }
  return ds;
}

struct Split {
  std::vector<std::size_t> train, val, test;
};

/// Disjoint subsets drawn by a seeded shuffle, each sorted ascending.
inline Split split(std::size_t total, std::size_t train_n, std::size_t val_n, std::size_t test_n, std::uint64_t seed) {
  if (train_n + val_n + test_n > total)
    throw ConfigError("split sizes " + std::to_string(train_n + val_n + test_n) + " exceed dataset size " +
                      std::to_string(total));
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  Split s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(train_n));
  s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(train_n),
               order.begin() + static_cast<std::ptrdiff_t>(train_n + val_n));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(train_n + val_n),
                order.begin() + static_cast<std::ptrdiff_t>(train_n + val_n + test_n));
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

/// Population standard deviation over every label entry.
inline double label_std(const std::vector<const Conformation*>& records) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto* r : records)
    for (double x : r->hamiltonian.data()) {
      sum += x;
      ++n;
    }
  if (n == 0) return 0.0;
  const double mean = sum / static_cast<double>(n);
  for (const auto* r : records)
    for (double x : r->hamiltonian.data()) sq += (x - mean) * (x - mean);
  return std::sqrt(sq / static_cast<double>(n));
}

}  // namespace qhnet

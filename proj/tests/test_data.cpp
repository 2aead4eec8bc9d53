#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "qhnet/data.hpp"

using namespace qhnet;

namespace {

ModelConfig small_teacher() {
  ModelConfig c;
  c.channels = 4;
  c.layers = 2;
  c.rbf_bins = 8;
  c.seed = 17;
  return c;
}

std::string to_text(const Dataset& ds) {
  std::string s = serialize_manifest(ds.manifest) + "\n";
  for (const auto& r : ds.records) s += serialize_record(r) + "\n";
  return s;
}

Dataset reparse(const std::string& text) {
  std::istringstream in(text);
  return parse_dataset(in);
}

}  // namespace

TEST_CASE("templates have the expected orbital sizes") {
  CHECK(orbital_count(geometry_template("water").atoms) == 24);
  CHECK(orbital_count(geometry_template("ethanol").atoms) == 72);
  CHECK(orbital_count(geometry_template("malondialdehyde").atoms) == 90);
  CHECK(orbital_count(geometry_template("uracil").atoms) == 132);
  for (const auto& name : template_names()) CHECK(min_pair_distance(geometry_template(name)) > 1.0);
  CHECK_THROWS_AS(geometry_template("benzene"), ConfigError);
}

TEST_CASE("dataset text round trip is exact") {
  const Dataset ds = teacher_generate(small_teacher(), 5, 3, "water");
  REQUIRE(ds.records.size() == 3);
  CHECK(ds.records[0].hamiltonian.rows() == 24);
  const Dataset back = reparse(to_text(ds));
  REQUIRE(back.records.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(back.records[k].hamiltonian == ds.records[k].hamiltonian);
    CHECK(back.records[k].molecule.atoms == ds.records[k].molecule.atoms);
    for (std::size_t a = 0; a < 3; ++a) CHECK(back.records[k].molecule.positions[a] == ds.records[k].molecule.positions[a]);
    CHECK_FALSE(back.records[k].overlap.has_value());
  }
  CHECK(back.manifest.seed == 5);
  CHECK(to_text(back) == to_text(ds));
}

TEST_CASE("file round trip") {
  const Dataset ds = teacher_generate(small_teacher(), 6, 2, "water");
  const auto path = (std::filesystem::temp_directory_path() / "qhnet_test_data.jsonl").string();
  save_dataset(path, ds);
  const Dataset back = load_dataset(path);
  CHECK(back.records[1].hamiltonian == ds.records[1].hamiltonian);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_dataset(path), DataError);
}

TEST_CASE("invalid records are rejected with their index") {
  Dataset ds = teacher_generate(small_teacher(), 7, 2, "water");

  Dataset wrong = ds;
  wrong.records[1].hamiltonian = Matrix(25, 25);
  try {
    reparse(to_text(wrong));
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("record 1") != std::string::npos);
  }

  Dataset asym = ds;
  asym.records[0].hamiltonian(0, 1) += 1e-3;
  CHECK_THROWS_AS(reparse(to_text(asym)), DataError);

  Dataset foreign = ds;
  foreign.manifest.convention = "pyscf-native";
  CHECK_THROWS_AS(reparse(to_text(foreign)), DataError);

  Dataset miscount = ds;
  miscount.manifest.counts["all"] = 5;
  CHECK_THROWS_AS(reparse(to_text(miscount)), DataError);

  Dataset element = ds;
  element.records[0].molecule.atoms[1] = 9;
  CHECK_THROWS_AS(reparse(to_text(element)), DataError);

  Dataset overlap = ds;
  Matrix s = Matrix::identity(24);
  s(3, 3) = -1.0;
  overlap.records[0].overlap = s;
  CHECK_THROWS_AS(reparse(to_text(overlap)), DataError);

  CHECK_THROWS_AS(reparse("{not json\n"), DataError);
}

TEST_CASE("teacher generation is deterministic and symmetric") {
  const Dataset a = teacher_generate(small_teacher(), 11, 2, "water");
  const Dataset b = teacher_generate(small_teacher(), 11, 2, "water");
  const Dataset c = teacher_generate(small_teacher(), 12, 2, "water");
  CHECK(to_text(a) == to_text(b));
  CHECK(to_text(a) != to_text(c));
  for (const auto& r : a.records) {
    CHECK(asymmetry(r.hamiltonian) == 0.0);
    CHECK(min_pair_distance(r.molecule) >= 1.0);
  }
}

TEST_CASE("teacher labels rotate with the geometry") {
  const QHNet teacher(small_teacher());
  Rng rng(19);
  const Molecule base = jitter(geometry_template("water"), rng);
  const Matrix h = symmetrized(teacher.predict(base));
  for (int trial = 0; trial < 3; ++trial) {
    const Rotation r = Rotation::random(rng);
    Molecule rotated = base;
    for (auto& p : rotated.positions) p = r.apply(p);
    const Matrix d = block_rotation(base.atoms, r);
    const Matrix expected = d * h * d.transpose();
    CHECK(max_abs(symmetrized(teacher.predict(rotated)) - expected) < 1e-10 * std::max(1.0, max_abs(h)));
  }
}

TEST_CASE("jitter gives up on impossible geometries") {
  Molecule collapsed;
  collapsed.atoms = {1, 1};
  collapsed.positions = {Vec3{0, 0, 0}, Vec3{0, 0, 0}};
  Rng rng(1);
  CHECK_THROWS_AS(jitter(collapsed, rng, 1e-3, 50), DegenerateGeometry);
}

TEST_CASE("splits are disjoint, sorted and reproducible") {
  const Split s = split(4900, 500, 500, 3900, 42);
  CHECK(s.train.size() == 500);
  CHECK(s.val.size() == 500);
  CHECK(s.test.size() == 3900);
  std::vector<int> seen(4900, 0);
  for (const auto* part : {&s.train, &s.val, &s.test}) {
    CHECK(std::is_sorted(part->begin(), part->end()));
    for (auto i : *part) ++seen[i];
  }
  for (int v : seen) CHECK(v == 1);

  const Split again = split(4900, 500, 500, 3900, 42);
  CHECK(again.train == s.train);
  CHECK(again.test == s.test);
  CHECK(split(4900, 500, 500, 3900, 43).train != s.train);

  const Split all = split(16, 16, 0, 0, 3);
  CHECK(all.train.size() == 16);
  CHECK(all.val.empty());
  CHECK_THROWS_AS(split(10, 6, 3, 2, 0), ConfigError);
}

TEST_CASE("label standard deviation") {
  Conformation a, b;
  a.hamiltonian = Matrix(1, 2, {1.0, 3.0});
  b.hamiltonian = Matrix(1, 2, {1.0, 3.0});
  CHECK(label_std({&a, &b}) == 1.0);
  CHECK(label_std({}) == 0.0);
}

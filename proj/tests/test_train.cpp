#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "qhnet/train.hpp"

using namespace qhnet;

namespace {

ModelConfig tiny(std::uint64_t seed) {
  ModelConfig c;
  c.channels = 2;
  c.layers = 2;
  c.rbf_bins = 4;
  c.seed = seed;
  return c;
}

TrainConfig short_run() {
  TrainConfig t;
  t.max_steps = 6;
  t.warmup_steps = 2;
  t.batch_size = 2;
  t.eval_every = 3;
  t.lr_max = 1e-3;
  t.lr_final = 1e-5;
  t.seed = 5;
  return t;
}

std::vector<const Conformation*> pointers(const Dataset& ds, std::size_t begin, std::size_t end) {
  std::vector<const Conformation*> out;
  for (std::size_t i = begin; i < end; ++i) out.push_back(&ds.records[i]);
  return out;
}

std::string temp_prefix(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("qhnet_test_" + name)).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("linear warmup and decay schedule") {
  TrainConfig c;
  c.max_steps = 2000;
  c.warmup_steps = 10;
  CHECK(lr_schedule(0, c) == 0.0);
  CHECK(lr_schedule(5, c) == Catch::Approx(2.5e-4).epsilon(1e-14));
  CHECK(lr_schedule(10, c) == 5e-4);
  CHECK(lr_schedule(2000, c) == Catch::Approx(1e-7).epsilon(1e-12));
  CHECK(lr_schedule(5000, c) == Catch::Approx(1e-7).epsilon(1e-12));
  for (std::uint64_t s = 11; s <= 2000; s += 97) CHECK(lr_schedule(s, c) < lr_schedule(s - 1, c));

  TrainConfig full_scale;
  CHECK(full_scale.max_steps == 200000);
  CHECK(full_scale.warmup_steps == 1000);
  CHECK(lr_schedule(1000, full_scale) == 5e-4);
}

TEST_CASE("reduce on plateau") {
  TrainConfig c;
  c.rlrop_patience = 2;
  c.rlrop_factor = 0.5;
  c.rlrop_min_lr = 1e-6;
  Plateau p{5e-4};
  p.observe(1.0, c);
  p.observe(1.0, c);
  p.observe(1.0, c);
  CHECK(p.lr == 5e-4);
  p.observe(1.0, c);
  CHECK(p.lr == 2.5e-4);
  p.observe(0.5, c);
  CHECK(p.bad_rounds == 0);
  Plateau floor{1.5e-6};
  for (int k = 0; k < 20; ++k) floor.observe(1.0, c);
  CHECK(floor.lr == 1e-6);
}

TEST_CASE("training configuration is validated") {
  TrainConfig c = short_run();
  c.warmup_steps = 6;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = short_run();
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = short_run();
  c.rlrop_factor = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(parse_scheduler("cosine"), ConfigError);
  CHECK(parse_scheduler("rlrop") == Scheduler::kReduceOnPlateau);
}

TEST_CASE("adam matches a hand-computed first step") {
  ad::ParamStore s;
  s.add("w", {2}, {1.0, -2.0});
  s[0].grad = {0.5, -0.25};
  AdamState st;
  adam_step(s, st, 0.1);
  // Bias-corrected first step moves each coordinate by lr * g / (|g| + eps').
  CHECK(s[0].value[0] == Catch::Approx(0.9).epsilon(1e-7));
  CHECK(s[0].value[1] == Catch::Approx(-1.9).epsilon(1e-7));
  CHECK(st.t == 1);

  s[0].grad = {std::nan(""), 0.0};
  try {
    adam_step(s, st, 0.1);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("w") != std::string::npos);
  }
}

TEST_CASE("batch gradients do not depend on the thread count") {
  const Dataset ds = teacher_generate(tiny(1), 2, 4, "water");
  const auto batch = pointers(ds, 0, 4);
  QHNet a(tiny(2)), b(tiny(2));
  a.params().zero_grad();
  b.params().zero_grad();
  const double la = batch_gradient(a, batch, 1);
  const double lb = batch_gradient(b, batch, 3);
  CHECK(la == lb);
  for (std::size_t p = 0; p < a.params().size(); ++p) CHECK(a.params()[p].grad == b.params()[p].grad);
}

TEST_CASE("batch gradient is the mean of per-sample gradients") {
  const Dataset ds = teacher_generate(tiny(1), 8, 3, "water");
  QHNet net(tiny(2));
  auto& store = net.params();
  store.zero_grad();
  batch_gradient(net, pointers(ds, 0, 3), 1);
  std::vector<std::vector<double>> batch;
  for (const auto& p : store) batch.push_back(p.grad);

  std::vector<std::vector<double>> mean(store.size());
  for (std::size_t p = 0; p < store.size(); ++p) mean[p].assign(store[p].grad.size(), 0.0);
  for (std::size_t b = 0; b < 3; ++b) {
    store.zero_grad();
    batch_gradient(net, pointers(ds, b, b + 1), 1);
    for (std::size_t p = 0; p < store.size(); ++p)
      for (std::size_t k = 0; k < mean[p].size(); ++k) mean[p][k] += store[p].grad[k] / 3.0;
  }
  double worst = 0.0;
  for (std::size_t p = 0; p < store.size(); ++p)
    for (std::size_t k = 0; k < mean[p].size(); ++k) worst = std::max(worst, std::abs(batch[p][k] - mean[p][k]));
  CHECK(worst < 1e-13);
}

TEST_CASE("epoch order is a pure function of seed and step") {
  const Dataset ds = teacher_generate(tiny(1), 3, 5, "water");
  QHNet net(tiny(2));
  const Trainer t(net, short_run(), pointers(ds, 0, 5), {});
  // Every epoch visits each sample once.
  std::vector<int> seen(5, 0);
  std::vector<std::size_t> flat;
  for (std::uint64_t step = 0; step < 5; ++step)
    for (auto i : t.batch_indices(step)) flat.push_back(i);
  for (std::size_t k = 0; k < 5; ++k) ++seen[flat[k]];
  for (int v : seen) CHECK(v == 1);
  CHECK(t.batch_indices(3) == t.batch_indices(3));
}

TEST_CASE("training reduces the loss and logs metrics") {
  const Dataset ds = teacher_generate(tiny(1), 4, 6, "water");
  QHNet net(tiny(2));
  TrainConfig cfg = short_run();
  cfg.max_steps = 30;
  cfg.eval_every = 10;
  cfg.lr_max = 1e-2;
  Trainer t(net, cfg, pointers(ds, 0, 4), pointers(ds, 4, 6));
  std::ostringstream log;
  t.set_log(&log);
  const double before = evaluate(net, pointers(ds, 0, 4), true).loss;
  t.run();
  const double after = evaluate(net, pointers(ds, 0, 4), true).loss;
  CHECK(after < before);
  CHECK(t.history().size() == 3);
  std::istringstream lines(log.str());
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"step", "lr", "train_loss", "val_mae_H", "val_mae_eps", "val_cos_psi"}) CHECK(j.contains(key));
    ++count;
  }
  CHECK(count == 3);
}

TEST_CASE("checkpoints round-trip and resume bit-identically") {
  const Dataset ds = teacher_generate(tiny(1), 5, 6, "water");
  const auto train = pointers(ds, 0, 4), val = pointers(ds, 4, 6);
  const std::string full = temp_prefix("full"), part = temp_prefix("part"), resumed = temp_prefix("resumed");

  QHNet a(tiny(2));
  TrainConfig ca = short_run();
  ca.checkpoint_path = full;
  Trainer ta(a, ca, train, val);
  ta.run();

  QHNet b(tiny(2));
  TrainConfig cb = short_run();
  cb.checkpoint_path = part;
  Trainer tb(b, cb, train, val);
  tb.run(4);

  const LoadedCheckpoint ck = load_checkpoint(part);
  CHECK(ck.state.step == 4);
  CHECK(ck.model.channels == 2);
  QHNet c(ck.model);
  TrainConfig cc = ck.train;
  cc.checkpoint_path = resumed;
  Trainer tc(c, cc, train, val);
  tc.resume(ck);
  tc.run();

  for (std::size_t p = 0; p < a.params().size(); ++p) CHECK(a.params()[p].value == c.params()[p].value);
  CHECK(slurp(full + ".bin") == slurp(resumed + ".bin"));

  const LoadedCheckpoint again = load_checkpoint(full);
  QHNet d(again.model);
  again.apply_to(d);
  CHECK(d.predict(ds.records[0].molecule) == a.predict(ds.records[0].molecule));

  std::filesystem::resize_file(full + ".bin", 100);
  CHECK_THROWS_AS(load_checkpoint(full), DataError);
  CHECK_THROWS_AS(load_checkpoint(temp_prefix("missing")), DataError);
  for (const auto& p : {full, part, resumed})
    for (const char* ext : {".json", ".bin", ".best.json", ".best.bin"}) std::filesystem::remove(p + ext);
}

TEST_CASE("non-finite loss aborts with the step and a checkpoint") {
  Dataset ds = teacher_generate(tiny(1), 6, 2, "water");
  ds.records[0].hamiltonian(0, 0) = std::numeric_limits<double>::infinity();
  QHNet net(tiny(2));
  TrainConfig cfg = short_run();
  cfg.batch_size = 1;
  cfg.checkpoint_path = temp_prefix("abort");
  Trainer t(net, cfg, pointers(ds, 0, 2), {});
  try {
    t.run();
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
  CHECK(std::filesystem::exists(cfg.checkpoint_path + ".json"));
  for (const char* ext : {".json", ".bin"}) std::filesystem::remove(cfg.checkpoint_path + ext);
}

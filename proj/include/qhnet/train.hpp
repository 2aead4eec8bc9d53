#pragma once

// Optimization: Adam, learning-rate schedules, batched per-sample gradients,
// evaluation, checkpoints and the JSON-lines metrics log.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "qhnet/data.hpp"
#include "qhnet/nn.hpp"
#include "qhnet/ops.hpp"
#include "qhnet/spectra.hpp"

namespace qhnet {

enum class Scheduler { kLinearWarmupDecay, kReduceOnPlateau };

inline std::string to_string(Scheduler s) { return s == Scheduler::kLinearWarmupDecay ? "linear" : "rlrop"; }

inline Scheduler parse_scheduler(const std::string& s) {
  if (s == "linear" || s == "linear_warmup_decay") return Scheduler::kLinearWarmupDecay;
  if (s == "rlrop" || s == "reduce_on_plateau") return Scheduler::kReduceOnPlateau;
  throw ConfigError("unknown scheduler '" + s + "' (expected linear or rlrop)");
}

struct TrainConfig {
  std::uint64_t max_steps = 200000;
  std::uint64_t warmup_steps = 1000;
  double lr_max = 5e-4;
  double lr_final = 1e-7;
  std::size_t batch_size = 8;
  Scheduler scheduler = Scheduler::kLinearWarmupDecay;
  double rlrop_factor = 0.5;
  int rlrop_patience = 10;
  double rlrop_min_lr = 1e-6;
  std::uint64_t eval_every = 100;
  std::string checkpoint_path;
  std::uint64_t seed = 0;
  double clip_grad = 0.0;  // global-norm clip, 0 disables
  int threads = 1;
  bool occupied_only = true;

  void validate() const {
    if (max_steps == 0) throw ConfigError("max_steps must be positive");
    if (warmup_steps >= max_steps) throw ConfigError("warmup_steps must be below max_steps");
    if (!(lr_final < lr_max)) throw ConfigError("lr_final must be below lr_max");
    if (lr_final < 0.0) throw ConfigError("lr_final must be non-negative");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (!(rlrop_factor > 0.0 && rlrop_factor < 1.0)) throw ConfigError("rlrop_factor must lie in (0, 1)");
    if (rlrop_patience < 0) throw ConfigError("rlrop_patience must be non-negative");
    if (eval_every == 0) throw ConfigError("eval_every must be positive");
    if (threads < 1) throw ConfigError("threads must be at least 1");
    if (clip_grad < 0.0) throw ConfigError("clip_grad must be non-negative");
  }
};

/// Linear warmup from 0 to lr_max, then linear decay to lr_final.
inline double lr_schedule(std::uint64_t step, const TrainConfig& cfg) {
  const auto s = static_cast<double>(std::min(step, cfg.max_steps));
  const auto w = static_cast<double>(cfg.warmup_steps);
  const auto total = static_cast<double>(cfg.max_steps);
  if (s < w) return cfg.lr_max * s / w;
  const double frac = (s - w) / (total - w);
  return cfg.lr_max + (cfg.lr_final - cfg.lr_max) * frac;
}

/// Reduce-on-plateau state, observed once per evaluation round.
struct Plateau {
  double lr = 0.0;
  double best = std::numeric_limits<double>::infinity();
  int bad_rounds = 0;

  void observe(double metric, const TrainConfig& cfg) {
    if (metric < best) {
      best = metric;
      bad_rounds = 0;
      return;
    }
    if (++bad_rounds > cfg.rlrop_patience) {
      lr = std::max(lr * cfg.rlrop_factor, cfg.rlrop_min_lr);
      bad_rounds = 0;
    }
  }
};

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::uint64_t t = 0;

  void resize(const ad::ParamStore& store) {
    m.resize(store.size());
    v.resize(store.size());
    for (std::size_t p = 0; p < store.size(); ++p) {
      m[p].resize(store[p].value.size(), 0.0);
      v[p].resize(store[p].value.size(), 0.0);
    }
  }
};

/// Adam (beta 0.9/0.999, eps 1e-8, bias corrected) on the store's gradients.
inline void adam_step(ad::ParamStore& store, AdamState& st, double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  st.resize(store);
  for (const auto& p : store)
    for (double g : p.grad)
      if (!std::isfinite(g)) throw NumericalError("non-finite gradient in parameter " + p.name);
  ++st.t;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.t));
  for (std::size_t p = 0; p < store.size(); ++p) {
    auto& prm = store[p];
    auto& m = st.m[p];
    auto& v = st.v[p];
    for (std::size_t k = 0; k < prm.value.size(); ++k) {
      const double g = prm.grad[k];
      m[k] = b1 * m[k] + (1.0 - b1) * g;
      v[k] = b2 * v[k] + (1.0 - b2) * g * g;
      prm.value[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
    }
  }
}

/// RMSE + MAE between a recorded prediction and a constant label.
inline ad::Var hamiltonian_loss(ad::Tape& t, ad::Var pred, const Matrix& label) {
  using namespace ad;
  const Var d = sub(t, pred, t.constant(label.data()));
  return add(t, ad::sqrt(t, mean(t, square(t, d))), mean(t, ad::abs(t, d)));
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Accumulates the batch-mean loss gradient into the model's store and
/// returns the batch-mean loss. Per-sample gradients are committed in batch
/// order, so the result does not depend on the thread count.
inline double batch_gradient(QHNet& model, const std::vector<const Conformation*>& batch, int threads) {
  auto& store = model.params();
  const double w = 1.0 / static_cast<double>(batch.size());
  std::vector<double> losses(batch.size());
  if (threads <= 1) {
    for (std::size_t b = 0; b < batch.size(); ++b) {
      ad::Tape t(&store);
      const auto out = model.forward(t, batch[b]->molecule);
      const ad::Var loss = hamiltonian_loss(t, out.hamiltonian, batch[b]->hamiltonian);
      losses[b] = t.scalar(loss);
      t.backward(loss);
      t.accumulate_into(store, w);
    }
  } else {
    std::vector<std::vector<std::vector<double>>> grads(batch.size());
    parallel_for(batch.size(), threads, [&](std::size_t b) {
      ad::Tape t(&store);
      const auto out = model.forward(t, batch[b]->molecule);
      const ad::Var loss = hamiltonian_loss(t, out.hamiltonian, batch[b]->hamiltonian);
      losses[b] = t.scalar(loss);
      t.backward(loss);
      t.accumulate_param_grads(grads[b]);
    });
    for (std::size_t b = 0; b < batch.size(); ++b)
      for (std::size_t p = 0; p < grads[b].size(); ++p) {
        const auto& g = grads[b][p];
        if (g.empty()) continue;
        auto& dst = store[p].grad;
        for (std::size_t k = 0; k < g.size(); ++k) dst[k] += w * g[k];
      }
  }
  double total = 0.0;
  for (double l : losses) total += l;
  return total * w;
}

inline void clip_gradients(ad::ParamStore& store, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (const auto& p : store)
    for (double g : p.grad) sq += g * g;
  const double nrm = std::sqrt(sq);
  if (nrm <= max_norm) return;
  const double s = max_norm / nrm;
  for (auto& p : store)
    for (double& g : p.grad) g *= s;
}

struct EvalResult {
  Metrics metrics;  // averaged over conformations
  double loss = 0.0;
  std::size_t count = 0;
};

inline EvalResult evaluate(const QHNet& model, const std::vector<const Conformation*>& records, bool occupied_only,
                           int threads = 1) {
  std::vector<Metrics> per(records.size());
  std::vector<double> losses(records.size());
  parallel_for(records.size(), threads, [&](std::size_t i) {
    const auto& c = *records[i];
    const Matrix pred = model.predict(c.molecule);
    per[i] = evaluate_metrics(pred, c.hamiltonian, c.overlap_or_identity(), occupied_count(c.molecule.atoms),
                              occupied_only);
    losses[i] = hamiltonian_loss(pred, c.hamiltonian);
  });
  EvalResult r;
  r.count = records.size();
  if (records.empty()) return r;
  r.metrics = {0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < records.size(); ++i) {
    r.metrics.mae_h += per[i].mae_h;
    r.metrics.mae_eps += per[i].mae_eps;
    r.metrics.cos_psi += per[i].cos_psi;
    r.loss += losses[i];
  }
  const double n = static_cast<double>(records.size());
  r.metrics.mae_h /= n;
  r.metrics.mae_eps /= n;
  r.metrics.cos_psi /= n;
  r.loss /= n;
  return r;
}

// ---------------------------------------------------------------------------
// Checkpoints: <prefix>.json manifest + <prefix>.bin little-endian doubles
// (parameters, then Adam first moments, then second moments).

inline constexpr const char* kCheckpointFormat = "qhnet-ckpt-1";

struct TrainState {
  std::uint64_t step = 0;
  AdamState adam;
  Plateau plateau;
  double best_val = std::numeric_limits<double>::infinity();
};

inline nlohmann::ordered_json model_config_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["l_max"] = c.l_max;
  j["channels"] = c.channels;
  j["layers"] = c.layers;
  j["rbf_bins"] = c.rbf_bins;
  j["rbf_r_max"] = c.rbf_r_max;
  j["use_attentive_scores"] = c.use_attentive_scores;
  j["use_norm_gate"] = c.use_norm_gate;
  j["seed"] = c.seed;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.l_max = j.at("l_max").get<int>();
  c.channels = j.at("channels").get<int>();
  c.layers = j.at("layers").get<int>();
  c.rbf_bins = j.at("rbf_bins").get<int>();
  c.rbf_r_max = j.at("rbf_r_max").get<double>();
  c.use_attentive_scores = j.at("use_attentive_scores").get<bool>();
  c.use_norm_gate = j.at("use_norm_gate").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

inline nlohmann::ordered_json train_config_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["max_steps"] = c.max_steps;
  j["warmup_steps"] = c.warmup_steps;
  j["lr_max"] = c.lr_max;
  j["lr_final"] = c.lr_final;
  j["batch_size"] = c.batch_size;
  j["scheduler"] = to_string(c.scheduler);
  j["rlrop_factor"] = c.rlrop_factor;
  j["rlrop_patience"] = c.rlrop_patience;
  j["rlrop_min_lr"] = c.rlrop_min_lr;
  j["eval_every"] = c.eval_every;
  j["seed"] = c.seed;
  j["clip_grad"] = c.clip_grad;
  j["occupied_only"] = c.occupied_only;
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.max_steps = j.at("max_steps").get<std::uint64_t>();
  c.warmup_steps = j.at("warmup_steps").get<std::uint64_t>();
  c.lr_max = j.at("lr_max").get<double>();
  c.lr_final = j.at("lr_final").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.scheduler = parse_scheduler(j.at("scheduler").get<std::string>());
  c.rlrop_factor = j.at("rlrop_factor").get<double>();
  c.rlrop_patience = j.at("rlrop_patience").get<int>();
  c.rlrop_min_lr = j.at("rlrop_min_lr").get<double>();
  c.eval_every = j.at("eval_every").get<std::uint64_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.clip_grad = j.at("clip_grad").get<double>();
  c.occupied_only = j.at("occupied_only").get<bool>();
  return c;
}

namespace detail {

inline void write_doubles(std::ofstream& out, const std::vector<double>& v) {
  unsigned char buf[8];
  for (double x : v) {
    const auto bits = std::bit_cast<std::uint64_t>(x);
    for (int b = 0; b < 8; ++b) buf[b] = static_cast<unsigned char>(bits >> (8 * b));
    out.write(reinterpret_cast<const char*>(buf), 8);
  }
}

inline void read_doubles(std::ifstream& in, std::vector<double>& v, const std::string& path) {
  unsigned char buf[8];
  for (double& x : v) {
    if (!in.read(reinterpret_cast<char*>(buf), 8)) throw DataError("checkpoint blob truncated: " + path);
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(buf[b]) << (8 * b);
    x = std::bit_cast<double>(bits);
  }
}

}  // namespace detail

inline void save_checkpoint(const std::string& prefix, const QHNet& model, const TrainConfig& tc,
                            const TrainState& st, const nlohmann::ordered_json& run = nullptr) {
  const auto& store = model.params();
  nlohmann::ordered_json j;
  j["format"] = kCheckpointFormat;
  j["model"] = model_config_json(model.config());
  j["train"] = train_config_json(tc);
  j["step"] = st.step;
  j["adam_t"] = st.adam.t;
  j["scheduler"] = {{"kind", to_string(tc.scheduler)},
                    {"lr", st.plateau.lr},
                    {"best", std::isfinite(st.plateau.best) ? nlohmann::ordered_json(st.plateau.best) : nullptr},
                    {"bad_rounds", st.plateau.bad_rounds}};
  j["best_val"] = std::isfinite(st.best_val) ? nlohmann::ordered_json(st.best_val) : nullptr;
  j["seed"] = tc.seed;
  if (!run.is_null()) j["run"] = run;
  const std::size_t total = store.scalar_count();
  j["blob"] = {{"file", std::filesystem::path(prefix + ".bin").filename().string()},
               {"dtype", "float64-le"},
               {"sections", {"params", "adam_m", "adam_v"}},
               {"count_per_section", total}};
  nlohmann::ordered_json params = nlohmann::ordered_json::array();
  std::size_t offset = 0;
  for (const auto& p : store) {
    params.push_back({{"name", p.name}, {"shape", p.shape}, {"offset", offset}});
    offset += p.value.size();
  }
  j["params"] = std::move(params);

  std::ofstream meta(prefix + ".json", std::ios::binary);
  if (!meta) throw DataError("cannot write checkpoint " + prefix + ".json");
  meta << j.dump(1) << '\n';
  std::ofstream blob(prefix + ".bin", std::ios::binary);
  if (!blob) throw DataError("cannot write checkpoint " + prefix + ".bin");
  for (const auto& p : store) detail::write_doubles(blob, p.value);
  for (std::size_t p = 0; p < store.size(); ++p)
    detail::write_doubles(blob, p < st.adam.m.size() ? st.adam.m[p] : std::vector<double>(store[p].value.size(), 0.0));
  for (std::size_t p = 0; p < store.size(); ++p)
    detail::write_doubles(blob, p < st.adam.v.size() ? st.adam.v[p] : std::vector<double>(store[p].value.size(), 0.0));
  if (!blob) throw DataError("failed while writing " + prefix + ".bin");
}

struct LoadedCheckpoint {
  ModelConfig model;
  TrainConfig train;
  TrainState state;
  std::vector<std::pair<std::string, std::vector<double>>> params;
  nlohmann::json run;  // free-form run metadata, null when absent

  /// Overwrites a freshly built model's parameters by name.
  void apply_to(QHNet& net) const {
    auto& store = net.params();
    if (store.size() != params.size()) throw DataError("checkpoint parameter count does not match the model");
    for (const auto& [name, value] : params) {
      if (!store.contains(name)) throw DataError("checkpoint parameter " + name + " is not in the model");
      auto& p = store.at(name);
      if (p.value.size() != value.size()) throw DataError("checkpoint parameter " + name + " has the wrong size");
      p.value = value;
    }
  }
};

inline LoadedCheckpoint load_checkpoint(const std::string& prefix) {
  std::ifstream meta(prefix + ".json", std::ios::binary);
  if (!meta) throw DataError("cannot open checkpoint " + prefix + ".json");
  nlohmann::json j;
  try {
    meta >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint manifest unreadable: " + std::string(e.what()));
  }
  LoadedCheckpoint ck;
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat)
      throw DataError("unsupported checkpoint format " + j.at("format").get<std::string>());
    ck.model = model_config_from_json(j.at("model"));
    ck.train = train_config_from_json(j.at("train"));
    ck.state.step = j.at("step").get<std::uint64_t>();
    ck.state.adam.t = j.at("adam_t").get<std::uint64_t>();
    const auto& sch = j.at("scheduler");
    ck.state.plateau.lr = sch.at("lr").get<double>();
    ck.state.plateau.best = sch.at("best").is_null() ? std::numeric_limits<double>::infinity() : sch.at("best").get<double>();
    ck.state.plateau.bad_rounds = sch.at("bad_rounds").get<int>();
    ck.state.best_val =
        j.at("best_val").is_null() ? std::numeric_limits<double>::infinity() : j.at("best_val").get<double>();
    if (j.contains("run")) ck.run = j.at("run");
    for (const auto& p : j.at("params")) {
      std::size_t n = 1;
      for (auto s : p.at("shape").get<std::vector<std::size_t>>()) n *= s;
      ck.params.emplace_back(p.at("name").get<std::string>(), std::vector<double>(n));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint manifest invalid: " + std::string(e.what()));
  }
  std::ifstream blob(prefix + ".bin", std::ios::binary);
  if (!blob) throw DataError("cannot open checkpoint " + prefix + ".bin");
  for (auto& [name, v] : ck.params) detail::read_doubles(blob, v, prefix + ".bin");
  ck.state.adam.m.resize(ck.params.size());
  ck.state.adam.v.resize(ck.params.size());
  for (std::size_t p = 0; p < ck.params.size(); ++p) {
    ck.state.adam.m[p].resize(ck.params[p].second.size());
    detail::read_doubles(blob, ck.state.adam.m[p], prefix + ".bin");
  }
  for (std::size_t p = 0; p < ck.params.size(); ++p) {
    ck.state.adam.v[p].resize(ck.params[p].second.size());
    detail::read_doubles(blob, ck.state.adam.v[p], prefix + ".bin");
  }
  return ck;
}

// ---------------------------------------------------------------------------
// Training loop

struct LogRow {
  std::uint64_t step = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<Metrics> val;
};

inline std::string format_log_row(const LogRow& r) {
  auto num = [](double x) {
    if (!std::isfinite(x)) return std::string("null");
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return std::string(buf);
  };
  std::string s = "{\"step\":" + std::to_string(r.step) + ",\"lr\":" + num(r.lr) + ",\"train_loss\":" + num(r.train_loss);
  if (r.val) {
    s += ",\"val_mae_H\":" + num(r.val->mae_h) + ",\"val_mae_eps\":" + num(r.val->mae_eps) +
         ",\"val_cos_psi\":" + num(r.val->cos_psi);
  } else {
    s += ",\"val_mae_H\":null,\"val_mae_eps\":null,\"val_cos_psi\":null";
  }
  return s + "}";
}

class Trainer {
 public:
  Trainer(QHNet& model, TrainConfig cfg, std::vector<const Conformation*> train, std::vector<const Conformation*> val)
      : model_(model), cfg_(std::move(cfg)), train_(std::move(train)), val_(std::move(val)) {
    cfg_.validate();
    if (train_.empty()) throw ConfigError("training split is empty");
    state_.plateau.lr = cfg_.lr_max;
    state_.adam.resize(model_.params());
  }

  void resume(const LoadedCheckpoint& ck) {
    ck.apply_to(model_);
    state_ = ck.state;
  }

  void set_log(std::ostream* log) { log_ = log; }
  /// Metadata stored with every checkpoint this trainer writes.
  void set_run_info(nlohmann::ordered_json info) { run_info_ = std::move(info); }
  const TrainState& state() const { return state_; }
  const std::vector<LogRow>& history() const { return history_; }

  double current_lr(std::uint64_t update) const {
    return cfg_.scheduler == Scheduler::kLinearWarmupDecay ? lr_schedule(update, cfg_) : state_.plateau.lr;
  }

  /// Sample indices for optimizer update `step` (0-based). The epoch order
  /// is a pure function of (seed, epoch), so resumed runs see the same data.
  std::vector<std::size_t> batch_indices(std::uint64_t step) const {
    const std::size_t n = train_.size();
    std::vector<std::size_t> out;
    std::uint64_t cached_epoch = std::numeric_limits<std::uint64_t>::max();
    std::vector<std::size_t> order;
    for (std::size_t b = 0; b < cfg_.batch_size; ++b) {
      const std::uint64_t s = step * cfg_.batch_size + b;
      const std::uint64_t epoch = s / n;
      if (epoch != cached_epoch) {
        order.resize(n);
        std::iota(order.begin(), order.end(), 0);
        Rng rng(mix_seed(cfg_.seed, epoch));
        rng.shuffle(order);
        cached_epoch = epoch;
      }
      out.push_back(order[s % n]);
    }
    return out;
  }

  /// Trains until `stop_step` updates have been applied in total (defaults
  /// to max_steps).
  void run(std::optional<std::uint64_t> stop_step = std::nullopt) {
    const std::uint64_t stop = std::min(stop_step.value_or(cfg_.max_steps), cfg_.max_steps);
    auto& store = model_.params();
    while (state_.step < stop) {
      const std::uint64_t update = state_.step + 1;
      const double lr = current_lr(update);
      std::vector<const Conformation*> batch;
      for (auto i : batch_indices(state_.step)) batch.push_back(train_[i]);
      store.zero_grad();
      const double loss = batch_gradient(model_, batch, cfg_.threads);
      if (!std::isfinite(loss)) {
        if (!cfg_.checkpoint_path.empty()) save_checkpoint(cfg_.checkpoint_path, model_, cfg_, state_, run_info_);
        throw NumericalError("non-finite loss at step " + std::to_string(update));
      }
      clip_gradients(store, cfg_.clip_grad);
      adam_step(store, state_.adam, lr);
      state_.step = update;

      LogRow row{update, lr, loss, std::nullopt};
      if (update % cfg_.eval_every == 0 || update == cfg_.max_steps) {
        const auto& pool = val_.empty() ? train_ : val_;
        const auto ev = evaluate(model_, pool, cfg_.occupied_only, cfg_.threads);
        row.val = ev.metrics;
        if (cfg_.scheduler == Scheduler::kReduceOnPlateau) state_.plateau.observe(ev.loss, cfg_);
        if (ev.loss < state_.best_val) {
          state_.best_val = ev.loss;
          if (!cfg_.checkpoint_path.empty()) save_checkpoint(cfg_.checkpoint_path + ".best", model_, cfg_, state_, run_info_);
        }
        emit(row);
      }
    }
    if (!cfg_.checkpoint_path.empty()) save_checkpoint(cfg_.checkpoint_path, model_, cfg_, state_, run_info_);
  }

 private:
  void emit(const LogRow& row) {
    history_.push_back(row);
    if (log_) *log_ << format_log_row(row) << '\n' << std::flush;
  }

  QHNet& model_;
  TrainConfig cfg_;
  std::vector<const Conformation*> train_, val_;
  TrainState state_;
  std::ostream* log_ = nullptr;
  std::vector<LogRow> history_;
  nlohmann::ordered_json run_info_;
};

}  // namespace qhnet

#pragma once

// Command-line front end. Exit codes: 0 success, 1 a verification check
// failed, 2 configuration or data error, 3 numerical failure.

#include <cmath>
#include <filesystem>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "qhnet/config.hpp"
#include "qhnet/data.hpp"
#include "qhnet/spectra.hpp"
#include "qhnet/train.hpp"
#include "qhnet/verify.hpp"

namespace qhnet {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

namespace cli {

struct ConfigFlags {
  std::string path;
  std::vector<std::string> sets;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", path, "key=value run configuration file");
    cmd->add_option("--set", sets, "override one key (key=value), repeatable");
  }

  RunConfig resolve() const {
    RunConfig c = path.empty() ? RunConfig::desk() : load_config(path);
    for (const auto& s : sets) apply_assignment(c, s);
    return c;
  }
};

inline void log_config(std::ostream& err, const std::string& command, const RunConfig& c) {
  err << "# " << command << " resolved config\n";
  std::istringstream lines(resolved_text(c));
  for (std::string line; std::getline(lines, line);) err << "#   " << line << '\n';
}

inline std::vector<const Conformation*> select(const Dataset& ds, const std::vector<std::size_t>& idx) {
  std::vector<const Conformation*> out;
  for (auto i : idx) out.push_back(&ds.records.at(i));
  return out;
}

/// Train/val/test indices from the configured sizes; train_n = 0 takes the rest.
inline Split make_split(std::size_t total, const RunConfig& c) {
  if (c.val_n + c.test_n > total)
    throw ConfigError("val_n + test_n exceeds the dataset size " + std::to_string(total));
  const std::size_t train_n = c.train_n == 0 ? total - c.val_n - c.test_n : c.train_n;
  return split(total, train_n, c.val_n, c.test_n, c.split_seed);
}

inline RunConfig from_checkpoint(const LoadedCheckpoint& ck) {
  RunConfig c;
  c.model = ck.model;
  c.train = ck.train;
  return c;
}

inline nlohmann::ordered_json metrics_json(const EvalResult& r) {
  constexpr double micro = 1e6;
  nlohmann::ordered_json j;
  j["count"] = r.count;
  j["mae_H"] = r.metrics.mae_h * micro;
  j["mae_eps"] = r.metrics.mae_eps * micro;
  j["cos_psi"] = r.metrics.cos_psi;
  j["units"] = "1e-6 Eh";
  return j;
}

inline int generate_data(const std::string& tmpl, std::size_t n, std::uint64_t seed, std::uint64_t teacher_seed,
                         const std::string& out_path, const std::string& teacher_ckpt, const ConfigFlags& flags,
                         std::ostream& out, std::ostream& err) {
  RunConfig c = flags.resolve();
  c.model.seed = teacher_seed;
  c.model.validate();
  log_config(err, "generate-data", c);
  const Dataset ds = teacher_generate(c.model, seed, n, tmpl);
  save_dataset(out_path, ds);
  if (!teacher_ckpt.empty()) {
    const QHNet teacher(c.model);
    TrainState st;
    st.plateau.lr = c.train.lr_max;
    save_checkpoint(teacher_ckpt, teacher, c.train, st, {{"role", "teacher"}, {"template", tmpl}});
  }
  std::vector<const Conformation*> all;
  for (const auto& r : ds.records) all.push_back(&r);
  nlohmann::ordered_json j;
  j["records"] = n;
  j["template"] = tmpl;
  j["n_orb"] = ds.records.empty() ? 0 : ds.records.front().hamiltonian.rows();
  j["label_std"] = label_std(all);
  j["out"] = out_path;
  out << j.dump() << '\n';
  return kExitOk;
}

inline int train(const ConfigFlags& flags, const std::string& data, const std::string& out_dir,
                 const std::string& scheduler, const std::string& resume, int threads, std::ostream& out,
                 std::ostream& err) {
  RunConfig c = flags.resolve();
  if (!data.empty()) c.data = data;
  if (!scheduler.empty()) c.train.scheduler = parse_scheduler(scheduler);
  c.train.threads = threads;
  if (c.data.empty()) throw ConfigError("no dataset given (--data or data=)");
  std::filesystem::create_directories(out_dir);
  c.train.checkpoint_path = (std::filesystem::path(out_dir) / "model").string();
  validate(c);
  log_config(err, "train", c);
  {
    std::ofstream f(std::filesystem::path(out_dir) / "resolved.conf");
    f << resolved_text(c);
  }

  const Dataset ds = load_dataset(c.data);
  const Split sp = make_split(ds.records.size(), c);
  QHNet net(c.model);
  Trainer trainer(net, c.train, select(ds, sp.train), select(ds, sp.val));
  trainer.set_run_info({{"data", c.data},
                        {"split", {{"seed", c.split_seed}, {"train_n", sp.train.size()},
                                   {"val_n", sp.val.size()}, {"test_n", sp.test.size()}}}});
  if (!resume.empty()) {
    const LoadedCheckpoint ck = load_checkpoint(resume);
    if (model_config_json(ck.model) != model_config_json(c.model))
      throw ConfigError("checkpoint " + resume + " was written for a different model configuration");
    trainer.resume(ck);
  }
  std::ofstream log(std::filesystem::path(out_dir) / "metrics.jsonl", resume.empty() ? std::ios::trunc : std::ios::app);
  trainer.set_log(&log);
  trainer.run();

  nlohmann::ordered_json j;
  j["steps"] = trainer.state().step;
  j["checkpoint"] = c.train.checkpoint_path;
  j["train"] = metrics_json(evaluate(net, select(ds, sp.train), c.train.occupied_only, threads));
  if (!sp.val.empty()) j["val"] = metrics_json(evaluate(net, select(ds, sp.val), c.train.occupied_only, threads));
  out << j.dump() << '\n';
  return kExitOk;
}

inline int eval(const std::string& ckpt, const std::string& data, const std::string& split_name, int threads,
                std::ostream& out, std::ostream& err) {
  const LoadedCheckpoint ck = load_checkpoint(ckpt);
  QHNet net(ck.model);
  ck.apply_to(net);
  const Dataset ds = load_dataset(data);
  std::vector<std::size_t> idx;
  if (split_name == "all") {
    idx.resize(ds.records.size());
    std::iota(idx.begin(), idx.end(), 0);
  } else {
    if (ck.run.is_null() || !ck.run.contains("split"))
      throw ConfigError("checkpoint carries no split; use --split all");
    const auto& s = ck.run.at("split");
    const Split sp = split(ds.records.size(), s.at("train_n").get<std::size_t>(), s.at("val_n").get<std::size_t>(),
                           s.at("test_n").get<std::size_t>(), s.at("seed").get<std::uint64_t>());
    idx = split_name == "train" ? sp.train : split_name == "val" ? sp.val : sp.test;
  }
  if (idx.empty()) throw ConfigError("split '" + split_name + "' is empty");
  err << "# eval checkpoint=" << ckpt << " data=" << data << " split=" << split_name << '\n';
  log_config(err, "eval", from_checkpoint(ck));
  const EvalResult r = evaluate(net, select(ds, idx), ck.train.occupied_only, threads);
  auto j = metrics_json(r);
  j["split"] = split_name;
  err << "# mae_H   " << j["mae_H"].get<double>() << " 1e-6 Eh\n"
      << "# mae_eps " << j["mae_eps"].get<double>() << " 1e-6 Eh\n"
      << "# cos_psi " << j["cos_psi"].get<double>() << '\n';
  out << j.dump() << '\n';
  return kExitOk;
}

inline int check_equivariance(const std::string& ckpt, const ConfigFlags& flags, const std::string& tmpl, int trials,
                              std::uint64_t seed, double tol, bool corrupt_cg, std::ostream& out,
                              std::ostream& err) {
  ModelConfig mc;
  std::optional<LoadedCheckpoint> ck;
  if (!ckpt.empty()) {
    ck = load_checkpoint(ckpt);
    mc = ck->model;
    log_config(err, "check-equivariance", from_checkpoint(*ck));
  } else {
    const RunConfig c = flags.resolve();
    log_config(err, "check-equivariance", c);
    mc = c.model;
  }
  std::shared_ptr<const CGTable> cg = shared_cg_table(mc.l_max);
  if (corrupt_cg) {
    // Test hook: one perturbed coefficient must break equivariance.
    cg = std::make_shared<CGTable>(cg->with_perturbed_entry(CgPath{1, 1, 2}, 0, 0, 0, 1e-3));
  }
  QHNet net(mc, cg);
  if (ck) ck->apply_to(net);
  Rng rng(seed);
  const Molecule base = jitter(geometry_template(tmpl), rng);
  const EquivarianceReport r = check_equivariance(net, base, trials, seed);
  const bool ok = r.worst() < tol;
  nlohmann::ordered_json j;
  j["template"] = tmpl;
  j["trials"] = trials;
  j["rotation"] = r.rotation;
  j["translation"] = r.translation;
  j["permutation"] = r.permutation;
  j["combined"] = r.combined;
  j["output_scale"] = r.output_scale;
  j["tolerance"] = tol;
  j["pass"] = ok;
  out << j.dump() << '\n';
  return ok ? kExitOk : kExitCheckFailed;
}

inline int count_tp(const ConfigFlags& flags, std::ostream& out, std::ostream& err) {
  const RunConfig c = flags.resolve();
  log_config(err, "count-tp", c);
  const QHNet net(c.model);
  const TpCounter tp = net.count_tensor_products(geometry_template("water"));
  out << nlohmann::ordered_json{{"total", tp.total}, {"max_sequential", tp.max_sequential}}.dump() << '\n';
  return kExitOk;
}

inline int gradcheck(const ConfigFlags& flags, const std::string& tmpl, std::size_t samples, double eps, double tol,
                     std::uint64_t seed, bool poison, std::ostream& out, std::ostream& err) {
  const RunConfig c = flags.resolve();
  log_config(err, "gradcheck", c);
  if (!(eps >= 1e-8 && eps <= 1e-4)) throw ConfigError("--eps must lie in [1e-8, 1e-4]");
  QHNet net(c.model);
  if (poison) net.params()[0].value[0] = std::numeric_limits<double>::quiet_NaN();
  const auto r = model_gradcheck(net, tmpl, samples, eps, seed);
  nlohmann::ordered_json j;
  j["samples"] = r.checked;
  j["eps"] = eps;
  j["max_rel_error"] = std::isfinite(r.max_rel_error) ? nlohmann::ordered_json(r.max_rel_error) : nullptr;
  j["max_abs_error"] = r.max_abs_error;
  j["worst_parameter"] = r.worst_parameter;
  j["tolerance"] = tol;
  j["pass"] = r.finite && r.max_rel_error < tol;
  out << j.dump() << '\n';
  if (!r.finite) {
    err << "non-finite value in parameter " << r.worst_parameter << '\n';
    return kExitNumerical;
  }
  return r.max_rel_error < tol ? kExitOk : kExitCheckFailed;
}

}  // namespace cli

/// Parses argv and runs one subcommand.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Equivariant Hamiltonian network: data generation, training and verification"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "worker threads for per-sample passes")->check(CLI::PositiveNumber);

  std::function<int()> action;

  auto* gen = app.add_subcommand("generate-data", "label jittered template geometries with a random teacher");
  cli::ConfigFlags gen_flags;
  std::string gen_template, gen_out, gen_teacher_ckpt;
  std::size_t gen_n = 0;
  std::uint64_t gen_seed = 0, gen_teacher_seed = 1000;
  gen->add_option("--template", gen_template, "water | ethanol | malondialdehyde | uracil")->required();
  gen->add_option("--n", gen_n, "number of conformations")->required();
  gen->add_option("--seed", gen_seed, "geometry seed");
  gen->add_option("--teacher-seed", gen_teacher_seed, "teacher weight seed");
  gen->add_option("--out", gen_out, "output JSON-lines file")->required();
  gen->add_option("--teacher-ckpt", gen_teacher_ckpt, "also write the teacher as a checkpoint prefix");
  gen_flags.add_to(gen);
  gen->callback([&] {
    action = [&] {
      return cli::generate_data(gen_template, gen_n, gen_seed, gen_teacher_seed, gen_out, gen_teacher_ckpt,
                                gen_flags, out, err);
    };
  });

  auto* tr = app.add_subcommand("train", "train a model on a dataset");
  cli::ConfigFlags tr_flags;
  std::string tr_data, tr_out, tr_sched, tr_resume;
  tr->add_option("--data", tr_data, "dataset file (overrides data=)");
  tr->add_option("--out", tr_out, "output directory")->required();
  tr->add_option("--scheduler", tr_sched, "linear | rlrop");
  tr->add_option("--resume", tr_resume, "checkpoint prefix to continue from");
  tr_flags.add_to(tr);
  tr->callback([&] {
    action = [&] { return cli::train(tr_flags, tr_data, tr_out, tr_sched, tr_resume, threads, out, err); };
  });

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_ckpt, ev_data, ev_split = "all";
  ev->add_option("--ckpt", ev_ckpt, "checkpoint prefix")->required();
  ev->add_option("--data", ev_data, "dataset file")->required();
  ev->add_option("--split", ev_split, "all | train | val | test")
      ->check(CLI::IsMember({"all", "train", "val", "test"}));
  ev->callback([&] { action = [&] { return cli::eval(ev_ckpt, ev_data, ev_split, threads, out, err); }; });

  auto* eq = app.add_subcommand("check-equivariance", "rotation/translation/permutation residuals");
  cli::ConfigFlags eq_flags;
  std::string eq_ckpt, eq_template = "water";
  bool eq_random = false, eq_corrupt = false;
  int eq_trials = 20;
  std::uint64_t eq_seed = 0;
  double eq_tol = 1e-10;
  auto* eq_ck = eq->add_option("--ckpt", eq_ckpt, "checkpoint prefix");
  auto* eq_rn = eq->add_flag("--random", eq_random, "use freshly initialized weights");
  eq_ck->excludes(eq_rn);
  eq->add_option("--template", eq_template, "geometry template");
  eq->add_option("--trials", eq_trials, "random group elements")->check(CLI::PositiveNumber);
  eq->add_option("--seed", eq_seed, "trial seed");
  eq->add_option("--tol", eq_tol, "pass threshold");
  eq->add_flag("--corrupt-cg", eq_corrupt, "test hook: perturb one coupling coefficient");
  eq_flags.add_to(eq);
  eq->callback([&] {
    action = [&] {
      if (eq_ckpt.empty() && !eq_random) throw ConfigError("check-equivariance needs --ckpt or --random");
      return cli::check_equivariance(eq_ckpt, eq_flags, eq_template, eq_trials, eq_seed, eq_tol, eq_corrupt, out,
                                     err);
    };
  });

  auto* tp = app.add_subcommand("count-tp", "tensor-product invocation counts");
  cli::ConfigFlags tp_flags;
  tp_flags.add_to(tp);
  tp->callback([&] { action = [&] { return cli::count_tp(tp_flags, out, err); }; });

  auto* gc = app.add_subcommand("gradcheck", "full-model gradient check against central differences");
  cli::ConfigFlags gc_flags;
  std::string gc_template = "water";
  std::size_t gc_samples = 50;
  double gc_eps = 1e-6, gc_tol = 1e-5;
  std::uint64_t gc_seed = 0;
  bool gc_poison = false;
  gc->add_option("--samples", gc_samples, "sampled parameter coordinates");
  gc->add_option("--eps", gc_eps, "finite-difference step");
  gc->add_option("--tol", gc_tol, "pass threshold on the relative error");
  gc->add_option("--seed", gc_seed, "sampling seed");
  gc->add_option("--template", gc_template, "geometry template");
  gc->add_flag("--poison", gc_poison, "test hook: set one weight to NaN");
  gc_flags.add_to(gc);
  gc->callback([&] {
    action = [&] { return cli::gradcheck(gc_flags, gc_template, gc_samples, gc_eps, gc_tol, gc_seed, gc_poison, out, err); };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    return action();
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const DomainError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
}

}  // namespace qhnet

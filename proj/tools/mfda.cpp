// Command-line front end: data generation, surrogate construction and the
// twin-experiment sweeps. Every CSV gets a <stem>.manifest.json next to it;
// passing that manifest back as --config reproduces the CSV.
#include <malloc.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mfda/autoencoder.hpp"
#include "mfda/dynamics.hpp"
#include "mfda/errors.hpp"
#include "mfda/harness.hpp"
#include "mfda/io.hpp"
#include "mfda/rom_pod.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace mfda;

namespace {

constexpr const char* kVersion = "0.1.0";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

fs::path manifest_path(const fs::path& csv) {
  fs::path p = csv;
  p.replace_extension(".manifest.json");
  return p;
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

// Values of every option of `sub`, keyed by long name with dashes turned
// into underscores. This is both the manifest "config" and the config-file
// schema for the subcommand.
json resolved_options(const CLI::App* sub) {
  json out = json::object();
  for (const CLI::Option* opt : sub->get_options()) {
    const std::string& name = opt->get_lnames().empty() ? std::string() : opt->get_lnames().front();
    if (name.empty() || name == "help" || name == "config") continue;
    std::string key = name;
    std::replace(key.begin(), key.end(), '-', '_');
    const auto results = opt->results();
    if (opt->get_expected_max() > 1) {
      out[key] = results;
    } else if (opt->get_type_size() == 0) {
      out[key] = opt->count() > 0;
    } else if (!results.empty()) {
      out[key] = results.back();
    } else {
      out[key] = opt->get_default_str();
    }
  }
  return out;
}

void write_manifest(const fs::path& csv, const std::string& subcommand, const json& config,
                    const json& extra) {
  json m;
  m["subcommand"] = subcommand;
  m["version"] = kVersion;
  m["config"] = config;
  for (const auto& [k, v] : extra.items()) m[k] = v;
  m["output"] = {{"path", csv.generic_string()}, {"hash", io::file_hash(csv)}};
  io::write_text(manifest_path(csv), m.dump(2) + "\n");
}

std::string token_for(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_float()) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v.get<double>());
    return buf;
  }
  return v.dump();
}

// Turns `--config file` into option tokens placed ahead of the real
// arguments, so explicit flags win. A manifest is accepted as a config.
std::vector<std::string> expand_config(std::vector<std::string> args, const CLI::App& app) {
  if (args.empty()) return args;
  const CLI::App* sub = nullptr;
  for (const CLI::App* s : app.get_subcommands({})) {
    if (s->get_name() == args.front()) sub = s;
  }
  if (sub == nullptr) return args;

  std::optional<std::string> config_file;
  std::vector<std::string> rest;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw UsageError("--config needs a file argument");
      config_file = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_file = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (!config_file) return args;

  json cfg;
  try {
    cfg = json::parse(io::read_text(*config_file));
  } catch (const json::parse_error& e) {
    throw UsageError("config " + *config_file + " is not valid JSON: " + e.what());
  }
  if (cfg.contains("subcommand") && cfg.contains("config")) {
    if (cfg["subcommand"] != args.front()) {
      throw UsageError("manifest " + *config_file + " belongs to '" + cfg["subcommand"].get<std::string>() + "'");
    }
    cfg = cfg["config"];
  }
  if (!cfg.is_object()) throw UsageError("config must be a JSON object");

  std::vector<std::string> out{args.front()};
  for (const auto& [key, value] : cfg.items()) {
    std::string flag = key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    const CLI::Option* opt = nullptr;
    for (const CLI::Option* o : sub->get_options()) {
      if (o->check_lname(flag)) opt = o;
    }
    if (opt == nullptr) throw UsageError("unknown config key '" + key + "' for " + args.front());
    if (opt->get_type_size() == 0) {
      if (value.get<bool>()) out.push_back("--" + flag);
    } else if (value.is_array()) {
      if (value.empty()) continue;
      out.push_back("--" + flag);
      for (const auto& v : value) out.push_back(token_for(v));
    } else {
      out.push_back("--" + flag);
      out.push_back(token_for(value));
    }
  }
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

// Experiment options shared by run / sweep-r / sweep-grid.
struct ExperimentFlags {
  std::string method = "enkf";
  harness::ExperimentConfig c;
  std::string mean_adjustment = "control-space-unbiased";

  void add(CLI::App* app, bool with_method) {
    if (with_method) {
      app->add_option("--method", method, "enkf | mfenkf-pod | nlmfenkf-nn | mfenkf-nn | free-run")
          ->capture_default_str();
    }
    app->add_option("--n", c.model.n, "state dimension")->capture_default_str();
    app->add_option("--forcing", c.model.forcing)->capture_default_str();
    app->add_option("--dt", c.integrator.dt)->capture_default_str();
    app->add_option("--r", c.r, "reduced dimension")->capture_default_str();
    app->add_option("--n-x", c.n_x, "principal ensemble size")->capture_default_str();
    app->add_option("--n-u", c.n_u, "ancillary ensemble size")->capture_default_str();
    app->add_option("--alpha-x", c.alpha_x)->capture_default_str();
    app->add_option("--alpha-u", c.alpha_u)->capture_default_str();
    app->add_option("--enkf-alpha", c.enkf_alpha)->capture_default_str();
    app->add_option("--s", c.s, "perturbed-observation scale")->capture_default_str();
    app->add_option("--mean-adjustment", mean_adjustment, "control-space-unbiased | kalman-approximate")
        ->capture_default_str();
    app->add_option("--obs-variance", c.obs_variance)->capture_default_str();
    app->add_option("--observed", c.observed, "observed components (default: all)");
    app->add_option("--initial-spread", c.initial_spread)->capture_default_str();
    app->add_option("--truth-burn-in", c.truth_burn_in)->capture_default_str();
    app->add_option("--n-steps", c.n_steps)->capture_default_str();
    app->add_option("--spinup", c.spinup)->capture_default_str();
    app->add_option("--realizations", c.realizations)->capture_default_str();
    app->add_option("--seed", c.seed)->capture_default_str();
    app->add_option("--climatological-std", c.climatological_std)->capture_default_str();
    app->add_option("--divergence-factor", c.divergence_factor)->capture_default_str();
    app->add_option("--pod-path", c.pod_path)->capture_default_str();
    app->add_option("--ae-path", c.ae_path)->capture_default_str();
  }

  harness::ExperimentConfig resolve() {
    harness::ExperimentConfig out = c;
    out.method = harness::parse_method(method);
    if (mean_adjustment == "control-space-unbiased") {
      out.mean_adjustment = filters::MeanAdjustment::kControlSpaceUnbiased;
    } else if (mean_adjustment == "kalman-approximate") {
      out.mean_adjustment = filters::MeanAdjustment::kKalmanApproximate;
    } else {
      throw InvalidArgument("unknown mean adjustment '" + mean_adjustment + "'");
    }
    out.validate();
    return out;
  }
};

json artifact_hashes(const harness::Artifacts& a) { return a.hashes; }

void print_row(const harness::SweepRow& row) {
  std::cerr << harness::method_name(row.method) << " r=" << row.r << " n_x=" << row.n_x
            << " alpha_x=" << row.alpha_x << " rmse=" << row.mean_rmse << " diverged=" << row.divergence_fraction
            << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  // Training churns through many same-sized temporaries; keep them off mmap.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);

  CLI::App app{"Multifidelity ensemble Kalman filter lab for Lorenz '96"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  // snapshots
  auto* snap = app.add_subcommand("snapshots", "generate the training snapshot set");
  dynamics::Lorenz96Params snap_model;
  dynamics::IntegratorConfig snap_integ;
  std::size_t snap_count = 5000;
  double snap_spacing = 36.0;
  double snap_burn_in = 100.0;
  std::uint64_t snap_seed = 0;
  std::string snap_out = "artifacts/snapshots.csv";
  snap->add_option("--n", snap_model.n)->capture_default_str();
  snap->add_option("--forcing", snap_model.forcing)->capture_default_str();
  snap->add_option("--dt", snap_integ.dt)->capture_default_str();
  snap->add_option("--count", snap_count)->capture_default_str();
  snap->add_option("--spacing", snap_spacing, "time units between snapshots")->capture_default_str();
  snap->add_option("--burn-in", snap_burn_in)->capture_default_str();
  snap->add_option("--seed", snap_seed)->capture_default_str();
  snap->add_option("--out", snap_out, "CSV (or .bin) output")->capture_default_str();

  // build-pod
  auto* pod = app.add_subcommand("build-pod", "POD basis from snapshots");
  std::string pod_snapshots = "artifacts/snapshots.csv";
  std::vector<int> pod_rs{7, 14, 21, 28, 35};
  std::string pod_out = "artifacts/pod_r{r}.csv";
  pod->add_option("--snapshots", pod_snapshots)->capture_default_str();
  pod->add_option("--r", pod_rs, "one or more reduced dimensions")->capture_default_str()->expected(1, -1);
  pod->add_option("--out", pod_out, "output path pattern, {r} is substituted")->capture_default_str();

  // train-ae
  auto* tae = app.add_subcommand("train-ae", "train an autoencoder surrogate");
  std::string tae_snapshots = "artifacts/snapshots.csv";
  ae::AEConfig ae_cfg;
  ae::TrainConfig tr_cfg;
  std::string tae_out = "artifacts/ae_r{r}.bin";
  std::string tae_log = "artifacts/ae_r{r}_log.csv";
  tae->add_option("--snapshots", tae_snapshots)->capture_default_str();
  tae->add_option("--r", ae_cfg.r)->capture_default_str();
  tae->add_option("--hidden", ae_cfg.h)->capture_default_str();
  tae->add_option("--lambda1", ae_cfg.lambda1)->capture_default_str();
  tae->add_option("--lambda2", ae_cfg.lambda2)->capture_default_str();
  tae->add_option("--rollout", ae_cfg.K, "trajectory loss horizon K")->capture_default_str();
  tae->add_option("--dt-loss", ae_cfg.dt_loss)->capture_default_str();
  tae->add_option("--clip-norm", ae_cfg.clip_norm)->capture_default_str();
  tae->add_option("--epochs", tr_cfg.epochs)->capture_default_str();
  tae->add_option("--batch-size", tr_cfg.batch_size)->capture_default_str();
  tae->add_option("--learning-rate", tr_cfg.learning_rate)->capture_default_str();
  tae->add_option("--holdout-fraction", tr_cfg.holdout_fraction)->capture_default_str();
  tae->add_option("--seed", tr_cfg.seed)->capture_default_str();
  tae->add_option("--out", tae_out)->capture_default_str();
  tae->add_option("--log", tae_log, "per-epoch loss CSV")->capture_default_str();

  // rom-eval
  auto* reval = app.add_subcommand("rom-eval", "kinetic energy captured by the surrogates");
  std::string reval_snapshots = "artifacts/snapshots.csv";
  std::vector<int> reval_rs{7, 14, 21, 28, 35};
  std::string reval_pod = "artifacts/pod_r{r}.csv";
  std::string reval_ae = "artifacts/ae_r{r}.bin";
  std::string reval_out = "results/energy.csv";
  reval->add_option("--snapshots", reval_snapshots)->capture_default_str();
  reval->add_option("--r", reval_rs)->capture_default_str()->expected(1, -1);
  reval->add_option("--pod-path", reval_pod)->capture_default_str();
  reval->add_option("--ae-path", reval_ae, "missing files leave the NN column empty")->capture_default_str();
  reval->add_option("--out", reval_out)->capture_default_str();

  // run
  auto* run = app.add_subcommand("run", "one twin experiment over several realizations");
  ExperimentFlags run_flags;
  std::string run_out = "results/run.csv";
  run_flags.add(run, true);
  run->add_option("--out", run_out)->capture_default_str();

  // sweep-r
  auto* swr = app.add_subcommand("sweep-r", "RMSE against reduced dimension");
  ExperimentFlags swr_flags;
  std::vector<int> swr_rs{7, 14, 21, 28, 35};
  std::string swr_out = "results/sweep_r.csv";
  swr_flags.add(swr, false);
  swr->add_option("--rs", swr_rs)->capture_default_str()->expected(1, -1);
  swr->add_option("--out", swr_out)->capture_default_str();

  // sweep-grid
  auto* swg = app.add_subcommand("sweep-grid", "RMSE and divergence over ensemble size and inflation");
  ExperimentFlags swg_flags;
  std::vector<int> swg_nx{16, 32, 48};
  std::vector<double> swg_alpha{1.02, 1.05, 1.10};
  std::string swg_out = "results/sweep_grid.csv";
  swg_flags.add(swg, false);
  swg->add_option("--n-xs", swg_nx)->capture_default_str()->expected(1, -1);
  swg->add_option("--alphas", swg_alpha)->capture_default_str()->expected(1, -1);
  swg->add_option("--out", swg_out)->capture_default_str();

  for (CLI::App* sub : app.get_subcommands({})) {
    sub->add_option("--config", "JSON config or a previous run manifest");
  }

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    args = expand_config(args, app);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  const CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  const json config = resolved_options(sub);

  try {
    if (name == "snapshots") {
      const auto traj = dynamics::generate_snapshots(snap_model, snap_integ, snap_count, snap_spacing, snap_seed,
                                                     snap_burn_in);
      ensure_parent(snap_out);
      dynamics::save_snapshots(snap_out, traj,
                               {snap_model.n, snap_model.forcing, snap_integ.dt, snap_spacing, snap_seed,
                                snap_count, snap_burn_in});
      write_manifest(snap_out, name, config, {{"seeds", {snap_seed}}});
    } else if (name == "build-pod") {
      const auto traj = dynamics::load_snapshots(pod_snapshots);
      const std::string snap_hash = io::file_hash(pod_snapshots);
      const int r_max = *std::max_element(pod_rs.begin(), pod_rs.end());
      const auto full = rom::build_pod(traj, r_max);
      for (const int r : pod_rs) {
        const fs::path out = harness::replace_r(pod_out, r);
        ensure_parent(out);
        rom::save_coupling(out, rom::truncate(full, r), snap_hash);
        json c = config;
        c["r"] = {std::to_string(r)};
        write_manifest(out, name, c, {{"inputs", {{pod_snapshots, snap_hash}}}});
        std::cerr << "wrote " << out.string() << "\n";
      }
    } else if (name == "train-ae") {
      ae_cfg.n = 0;
      const auto traj = dynamics::load_snapshots(tae_snapshots);
      ae_cfg.n = static_cast<int>(traj.dim());
      dynamics::Lorenz96Params model;
      model.n = ae_cfg.n;
      const auto result = ae::train(traj, ae_cfg, tr_cfg, dynamics::lorenz96_model(model),
                                    [&](const ae::TrainLogEntry& e) {
                                      std::cerr << "epoch " << e.epoch << " train " << e.train_loss << " holdout "
                                                << e.holdout_loss << "\n";
                                    });
      const fs::path out = harness::replace_r(tae_out, ae_cfg.r);
      const fs::path log = harness::replace_r(tae_log, ae_cfg.r);
      ensure_parent(out);
      ensure_parent(log);
      ae::save_params(out, result.params, {ae_cfg, tr_cfg, result.final_loss, result.best_epoch});
      ae::write_train_log(log, result.log);
      write_manifest(log, name, config,
                     {{"seeds", {tr_cfg.seed}},
                      {"inputs", {{tae_snapshots, io::file_hash(tae_snapshots)}}},
                      {"artifacts", {{out.generic_string(), io::file_hash(out)}}},
                      {"best_epoch", result.best_epoch},
                      {"clipped_batches", result.clipped_batches}});
    } else if (name == "rom-eval") {
      const auto traj = dynamics::load_snapshots(reval_snapshots);
      std::vector<harness::EnergyRow> rows;
      json hashes = json::array();
      for (const int r : reval_rs) {
        const fs::path pod_path = harness::replace_r(reval_pod, r);
        const fs::path ae_path = harness::replace_r(reval_ae, r);
        const auto coupling = rom::load_coupling(pod_path);
        hashes.push_back(pod_path.generic_string() + ":" + io::file_hash(pod_path));
        std::optional<ae::AutoencoderParams> params;
        if (fs::exists(ae_path)) {
          params = ae::load_params(ae_path);
          hashes.push_back(ae_path.generic_string() + ":" + io::file_hash(ae_path));
        }
        rows.push_back(harness::rom_energy(traj.states, coupling, params ? &*params : nullptr));
      }
      ensure_parent(reval_out);
      io::write_text(reval_out, harness::energy_csv(rows));
      write_manifest(reval_out, name, config,
                     {{"inputs", {{reval_snapshots, io::file_hash(reval_snapshots)}}}, {"artifact_hashes", hashes}});
    } else if (name == "run") {
      const auto cfg = run_flags.resolve();
      const auto artifacts = harness::load_artifacts(cfg);
      const auto runs = harness::run_realizations(cfg, artifacts);
      const auto row = harness::summarize(cfg, runs);
      print_row(row);
      ensure_parent(run_out);
      io::write_text(run_out, harness::runs_csv(cfg, runs));
      write_manifest(run_out, name, config,
                     {{"seeds", {cfg.seed}},
                      {"experiment", json::parse(harness::experiment_config_to_json(cfg))},
                      {"artifact_hashes", artifact_hashes(artifacts)}});
    } else if (name == "sweep-r") {
      const auto cfg = swr_flags.resolve();
      const auto sweep = harness::sweep_rom_dimension(cfg, swr_rs, print_row);
      json hashes = json::array();
      for (const int r : swr_rs) {
        for (const auto& p : {harness::replace_r(cfg.pod_path, r), harness::replace_r(cfg.ae_path, r)}) {
          hashes.push_back(p + ":" + io::file_hash(p));
        }
      }
      ensure_parent(swr_out);
      io::write_text(swr_out, harness::sweep_csv(sweep));
      write_manifest(swr_out, name, config,
                     {{"seeds", {cfg.seed}},
                      {"experiment", json::parse(harness::experiment_config_to_json(cfg))},
                      {"artifact_hashes", hashes}});
    } else if (name == "sweep-grid") {
      const auto cfg = swg_flags.resolve();
      const auto sweep = harness::sweep_ensemble_inflation(cfg, swg_nx, swg_alpha, print_row);
      json hashes = json::array();
      for (const auto& p : {cfg.resolved_pod_path(), cfg.resolved_ae_path()}) {
        hashes.push_back(p + ":" + io::file_hash(p));
      }
      ensure_parent(swg_out);
      io::write_text(swg_out, harness::sweep_csv(sweep));
      write_manifest(swg_out, name, config,
                     {{"seeds", {cfg.seed}},
                      {"experiment", json::parse(harness::experiment_config_to_json(cfg))},
                      {"artifact_hashes", hashes}});
    }
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

#include "tgpssm/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>

#include "tgpssm/config.hpp"
#include "tgpssm/metrics.hpp"

namespace tgpssm {

namespace {

namespace fs = std::filesystem;

std::string resolve_out(const std::string& out_dir) {
  fs::path p(out_dir);
  if (p.is_relative()) {
    if (const char* root = std::getenv("TGPSSM_OUT_ROOT")) {
      p = fs::path(root) / p;
    }
  }
  return p.string();
}

void persist_config(const RunConfig& cfg, const std::string& dir) {
  fs::create_directories(dir);
  std::ofstream os(dir + "/config.json");
  if (!os) throw ConfigError("cannot write '" + dir + "/config.json'");
  os << cfg.to_json().dump(2) << "\n";
}

struct TrainOverrides {
  int epochs = -1;
  double lr = -1.0;
  std::string mode;
  std::string out;
  long long seed = -1;
  std::string seeds;  // comma-separated fan-out
};

void apply_overrides(RunConfig& cfg, const TrainOverrides& ov) {
  if (ov.epochs >= 0) cfg.train.epochs = ov.epochs;
  if (ov.lr > 0.0) cfg.train.lr = ov.lr;
  if (!ov.mode.empty()) {
    if (ov.mode != "jo" && ov.mode != "co")
      throw ConfigError("--mode must be jo or co");
    cfg.train.constrained = ov.mode == "co";
  }
  if (!ov.out.empty()) cfg.out_dir = ov.out;
  if (ov.seed >= 0) cfg.seed = static_cast<std::uint64_t>(ov.seed);
}

void run_one_training(RunConfig cfg, const std::string& dir) {
  persist_config(cfg, dir);
  Dataset ds = load_dataset(cfg.dataset);
  auto [model, vs] = instantiate(cfg, ds);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  tc.train_z = cfg.model.train_z;
  tc.log_path = dir + "/train_log.jsonl";
  std::vector<Trajectory> train_data =
      training_view(ds, cfg.dataset.holdout);
  TrainResult result = tc.constrained
                           ? train_constrained(model, vs, train_data, tc)
                           : train_joint(model, vs, train_data, tc);
  Json resolved = cfg.to_json();
  Rng rng(cfg.seed);
  save_checkpoint(dir + "/checkpoint.json", model, vs, rng.serialize(),
                  &resolved);
  std::cout << dir << ": trained " << result.log.size()
            << " epochs, final elbo " << result.final_elbo << "\n";
}

int cmd_train(const RunConfig& base, const TrainOverrides& ov) {
  RunConfig cfg = base;
  apply_overrides(cfg, ov);
  std::string out = resolve_out(cfg.out_dir);
  if (ov.seeds.empty()) {
    run_one_training(cfg, out);
    return 0;
  }
  // Fan out one independent run per seed.
  std::vector<std::future<void>> jobs;
  std::stringstream ss(ov.seeds);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    RunConfig sub = cfg;
    sub.seed = std::stoull(tok);
    std::string dir = out + "/seed_" + tok;
    jobs.push_back(std::async(std::launch::async, run_one_training, sub, dir));
  }
  for (auto& job : jobs) job.get();
  return 0;
}

int cmd_generate(const RunConfig& base, const std::string& out_flag) {
  RunConfig cfg = base;
  std::string out = resolve_out(out_flag.empty() ? cfg.out_dir : out_flag);
  Dataset ds = load_dataset(cfg.dataset);
  fs::create_directories(out);
  write_dataset(out, ds);
  std::cout << "wrote " << ds.sequences.size() << " sequences to " << out
            << "\n";
  return 0;
}

int cmd_sample_prior(const RunConfig& base, const std::string& checkpoint,
                     int samples, int steps, bool sparse,
                     const std::string& out_flag) {
  RunConfig cfg = base;
  std::string out = resolve_out(out_flag.empty() ? cfg.out_dir : out_flag);
  fs::create_directories(out);
  Dataset ds = load_dataset(cfg.dataset);
  auto [model, vs] = instantiate(cfg, ds);
  if (!checkpoint.empty()) load_checkpoint(checkpoint, model, vs);
  for (int k = 0; k < samples; ++k) {
    Trajectory traj = sparse
                          ? sample_prior_sparse(model, steps, cfg.seed + k)
                          : sample_prior_exact(model, steps, cfg.seed + k);
    write_trajectory_csv(out + "/prior_" + std::to_string(k) + ".csv", traj);
  }
  std::cout << "wrote " << samples << " prior trajectories to " << out
            << "\n";
  return 0;
}

int cmd_evaluate(const RunConfig& base, const std::string& checkpoint,
                 const std::string& out_flag) {
  RunConfig cfg = base;
  std::string out = resolve_out(out_flag.empty() ? cfg.out_dir : out_flag);
  fs::create_directories(out);
  std::string ckpt =
      checkpoint.empty() ? out + "/checkpoint.json" : checkpoint;

  Dataset ds = load_dataset(cfg.dataset);
  auto [model, vs] = instantiate(cfg, ds);
  load_checkpoint(ckpt, model, vs);
  std::string fp = cfg.fingerprint();

  if (cfg.dataset.name == "kink" || cfg.dataset.name == "kink-step") {
    auto fn = cfg.dataset.name == "kink" ? kink_fn : kink_step_fn;
    Vector grid = evaluation_grid(cfg.dataset.name, cfg.eval.grid_points);
    double mse = transition_mse(model, fn, grid, ds.stats);
    MetricReport report = MetricReport::from_values("transition_mse", {mse},
                                                    fp);
    write_metric_report(out + "/metrics.json", report);
    write_plot_csv(out + "/transition_curve.csv",
                   transition_curve(model, fn, grid, ds.stats),
                   {"x", "f_true", "f_mean", "band_lo", "band_hi"});
    std::cout << "transition_mse " << mse << "\n";
  } else if (cfg.dataset.name == "lorenz") {
    const Trajectory& traj = ds.sequences[0];
    double state_mse = state_estimation_mse(vs, traj.observations,
                                            traj.states, ds.stats);
    Matrix y_raw = destandardize(traj.observations, ds.stats);
    double obs_mse =
        (y_raw - traj.states.bottomRows(traj.steps())).squaredNorm() /
        static_cast<double>(traj.steps() * traj.states.cols());
    Json j = {{"state_mse", state_mse},
              {"observation_mse", obs_mse},
              {"config_fingerprint", fp}};
    std::ofstream os(out + "/metrics.json");
    os << j.dump(2) << "\n";
    Matrix est = q_mean_states(vs, traj.observations);
    write_plot_csv(out + "/state_estimates.csv", est,
                   {"x_1", "x_2", "x_3"});
    std::cout << "state_mse " << state_mse << " observation_mse " << obs_mse
              << "\n";
  } else {
    // Forecast the held-out tail of each series.
    check_arg(cfg.dataset.holdout >= cfg.eval.horizon,
              "evaluate: holdout shorter than the forecast horizon");
    std::vector<double> rmses;
    for (const auto& traj : ds.sequences) {
      int split = traj.steps() - cfg.dataset.holdout;
      Matrix y_train = traj.observations.topRows(split);
      Matrix y_test = traj.observations.bottomRows(cfg.dataset.holdout);
      Matrix controls_future;
      if (traj.has_controls())
        controls_future = traj.controls.bottomRows(cfg.dataset.holdout);
      rmses.push_back(forecast_rmse(model, vs, y_train, y_test,
                                    cfg.eval.horizon, controls_future));
    }
    MetricReport report =
        MetricReport::from_values("forecast_rmse", rmses, fp);
    write_metric_report(out + "/metrics.json", report);
    std::cout << "forecast_rmse " << report.mean << "\n";
  }
  return 0;
}

int cmd_filter_ekf(const RunConfig& base, const std::string& out_flag) {
  RunConfig cfg = base;
  check_arg(cfg.dataset.name == "lorenz",
            "filter-ekf expects the lorenz dataset");
  std::string out = resolve_out(out_flag.empty() ? cfg.out_dir : out_flag);
  fs::create_directories(out);
  DatasetConfig dcfg = cfg.dataset;
  dcfg.standardize = false;
  Dataset ds = load_dataset(dcfg);
  const Trajectory& traj = ds.sequences[0];
  double dt = cfg.dataset.dt;
  auto dyn = [dt](const Vector& x) { return lorenz_transition(x, dt); };
  auto jac = [dt](const Vector& x) { return lorenz_jacobian(x, dt); };
  Matrix q = 0.0015 * Matrix::Identity(3, 3);
  Matrix r = 0.1 * Matrix::Identity(3, 3);
  EkfResult res = ekf(dyn, jac, q, r, Matrix::Identity(3, 3),
                      traj.observations, traj.states.row(0).transpose(),
                      Matrix::Identity(3, 3), traj.states);
  double obs_mse =
      (traj.observations - traj.states.bottomRows(traj.steps()))
          .squaredNorm() /
      static_cast<double>(traj.steps() * 3);
  write_plot_csv(out + "/ekf_states.csv", res.filtered,
                 {"x_1", "x_2", "x_3"});
  Json j = {{"state_mse", res.state_mse}, {"observation_mse", obs_mse}};
  std::ofstream os(out + "/metrics.json");
  os << j.dump(2) << "\n";
  std::cout << "ekf state_mse " << res.state_mse << " observation_mse "
            << obs_mse << "\n";
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Flow-warped Gaussian process state-space models"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "Run configuration (JSON)")
      ->check(CLI::ExistingFile);

  TrainOverrides ov;
  std::string out_flag, checkpoint, dataset_flag;
  int samples = 5, steps = -1;
  bool sparse = true;
  bool kink = false, kink_step = false, lorenz = false;
  long long data_seed = -1;
  int num_seq = -1;

  CLI::App* train = app.add_subcommand("train", "Fit a model");
  train->add_option("--epochs", ov.epochs, "Override epoch count");
  train->add_option("--lr", ov.lr, "Override learning rate");
  train->add_option("--mode", ov.mode, "jo or co");
  train->add_option("--out", ov.out, "Output directory");
  train->add_option("--seed", ov.seed, "Run seed");
  train->add_option("--seeds", ov.seeds,
                    "Comma-separated seeds; fans out one run per seed");

  CLI::App* gen = app.add_subcommand("generate-data", "Write a dataset");
  gen->add_flag("--kink", kink, "Kink benchmark");
  gen->add_flag("--kink-step", kink_step, "Kink-step benchmark");
  gen->add_flag("--lorenz", lorenz, "Chaotic 3-d benchmark");
  gen->add_option("--dataset", dataset_flag, "Dataset name");
  gen->add_option("--num-seq", num_seq, "Number of sequences");
  gen->add_option("--steps", steps, "Steps per sequence");
  gen->add_option("--seed", data_seed, "Generator seed");
  gen->add_option("--out", out_flag, "Output directory");

  CLI::App* sample = app.add_subcommand("sample-prior",
                                        "Draw prior trajectories");
  sample->add_option("--samples", samples, "Number of trajectories");
  sample->add_option("--steps", steps, "Trajectory length");
  sample->add_flag("!--exact", sparse,
                   "Exact GP sampling instead of inducing-point sampling");
  sample->add_option("--checkpoint", checkpoint, "Model checkpoint");
  sample->add_option("--out", out_flag, "Output directory");
  sample->add_option("--seed", ov.seed, "Run seed");

  CLI::App* eval = app.add_subcommand("evaluate", "Metrics for a checkpoint");
  eval->add_option("--checkpoint", checkpoint, "Model checkpoint");
  eval->add_option("--out", out_flag, "Output directory");

  CLI::App* ekf_cmd = app.add_subcommand("filter-ekf",
                                         "Extended Kalman filter baseline");
  ekf_cmd->add_option("--steps", steps, "Sequence length");
  ekf_cmd->add_option("--seed", data_seed, "Generator seed");
  ekf_cmd->add_option("--out", out_flag, "Output directory");

  try {
    app.parse(argc, argv);

    RunConfig cfg;
    if (!config_path.empty()) cfg = RunConfig::load(config_path);

    if (gen->parsed()) {
      int picked = (kink ? 1 : 0) + (kink_step ? 1 : 0) + (lorenz ? 1 : 0);
      if (picked > 1)
        throw ConfigError("generate-data: pick one dataset flag");
      if (kink) cfg.dataset.name = "kink";
      if (kink_step) cfg.dataset.name = "kink-step";
      if (lorenz) cfg.dataset.name = "lorenz";
      if (!dataset_flag.empty()) cfg.dataset.name = dataset_flag;
      if (num_seq > 0) cfg.dataset.num_seq = num_seq;
      if (steps > 0) cfg.dataset.steps = steps;
      if (data_seed >= 0)
        cfg.dataset.seed = static_cast<std::uint64_t>(data_seed);
      return cmd_generate(cfg, out_flag);
    }
    if (train->parsed()) return cmd_train(cfg, ov);
    if (sample->parsed()) {
      if (ov.seed >= 0) cfg.seed = static_cast<std::uint64_t>(ov.seed);
      int t = steps > 0 ? steps : cfg.dataset.steps;
      return cmd_sample_prior(cfg, checkpoint, samples, t, sparse, out_flag);
    }
    if (eval->parsed()) return cmd_evaluate(cfg, checkpoint, out_flag);
    if (ekf_cmd->parsed()) {
      cfg.dataset.name = "lorenz";
      if (steps > 0) cfg.dataset.steps = steps;
      if (data_seed >= 0)
        cfg.dataset.seed = static_cast<std::uint64_t>(data_seed);
      return cmd_filter_ekf(cfg, out_flag);
    }
    return 2;
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what()
              << " (any partial training log was kept)\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace tgpssm

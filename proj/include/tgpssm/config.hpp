#pragma once

#include <string>
#include <vector>

#include "tgpssm/datagen.hpp"
#include "tgpssm/training.hpp"

namespace tgpssm {

struct DatasetConfig {
  std::string name = "kink";  // kink | kink-step | lorenz | csv
  int num_seq = 30;
  int steps = 20;
  double dt = 0.02;
  std::uint64_t seed = 0;
  bool standardize = false;
  int holdout = 0;  // steps per sequence withheld from training
  std::vector<std::string> csv_paths;
  std::string csv_schema = "time,u,y";
};

struct ModelConfig {
  int dx = 1;
  int num_inducing = 15;
  double kernel_ell = 1.0;
  double kernel_sf2 = 1.0;
  double q_init = 0.1;
  double r_init = 0.1;
  double s_init = 0.01;          // initial q(U) covariance scale
  std::string m_init = "zero";   // zero | identity
  bool train_z = true;
  int hidden = 32;
  std::vector<FlowLayerSpec> flows;
};

struct EvalConfig {
  int horizon = 20;
  int grid_points = 200;
};

// A full run description; fully serializable so a run can be reproduced
// from its persisted copy.
struct RunConfig {
  DatasetConfig dataset;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  std::uint64_t seed = 0;
  std::string out_dir = "runs/out";

  static RunConfig from_json(const Json& j);
  static RunConfig load(const std::string& path);
  Json to_json() const;
  std::string fingerprint() const;
};

// Full dataset; when standardization is on and a holdout is configured, the
// stats are fitted on the training portion only and applied everywhere.
Dataset load_dataset(const DatasetConfig& cfg);

// Sequences with the trailing holdout steps removed.
std::vector<Trajectory> training_view(const Dataset& ds, int holdout);

// Evaluation grid for the 1-d synthetic systems: the visited range expanded
// by ten percent.
Vector evaluation_grid(const std::string& dataset_name, int points);

std::pair<TgpssmModel, VariationalState> instantiate(const RunConfig& cfg,
                                                     const Dataset& data);

}  // namespace tgpssm

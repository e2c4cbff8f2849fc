#pragma once

#include <string>
#include <vector>

#include "tgpssm/model.hpp"
#include "tgpssm/serde.hpp"

namespace tgpssm {

// Per-channel affine normalization fitted on training observations.
struct StandardizeStats {
  Vector mean;
  Vector std;

  bool empty() const { return mean.size() == 0; }
};

struct Dataset {
  std::vector<Trajectory> sequences;
  StandardizeStats stats;   // set once standardize() ran
  std::string name;
  std::uint64_t seed = 0;
  Json generator_params = Json::object();

  int dy() const {
    return sequences.empty()
               ? 0
               : static_cast<int>(sequences[0].observations.cols());
  }
  int dc() const {
    return sequences.empty() || !sequences[0].has_controls()
               ? 0
               : static_cast<int>(sequences[0].controls.cols());
  }
};

// x_{t+1} = 0.8 + (x + 0.2)(1 - 5 / (1 + e^{-2x}))
double kink_fn(double x);
// x+1 below the plateau and in [4,5); 0 on [3,4); 16-2x from 5 up
double kink_step_fn(double x);

Dataset gen_kink(int num_seq, int steps, std::uint64_t seed);
Dataset gen_kink_step(int num_seq, int steps, std::uint64_t seed);

// One discretized step of the three-dimensional chaotic system:
// F(x) x with F(x) = sum_{j<=5} (A(x) dt)^j / j!.
Vector lorenz_transition(const Vector& x, double dt);
// Jacobian of the step map, by reverse mode through the same expression.
Matrix lorenz_jacobian(const Vector& x, double dt);

Dataset gen_lorenz(int steps, double dt, std::uint64_t seed);

// Fits per-channel stats on the observations (and controls, independently)
// and rescales in place; ground-truth states are left in raw units.
StandardizeStats standardize(Dataset& ds);
// Applies existing stats (test splits are scaled with training stats).
void standardize_with(Dataset& ds, const StandardizeStats& stats);

Matrix destandardize(const Matrix& values, const StandardizeStats& stats);
Vector destandardize(const Vector& value, const StandardizeStats& stats);

// Column roles for CSV ingestion, aligned with the header: each entry is one
// of "time", "u", "y", "x", "ignore".
struct CsvSchema {
  std::vector<std::string> roles;

  static CsvSchema parse(const std::string& comma_separated);
};

// Reads one sequence per file. Throws ConfigError with the offending line
// number on malformed input.
Dataset ingest_csv(const std::vector<std::string>& paths,
                   const CsvSchema& schema);

void write_dataset(const std::string& dir, const Dataset& ds);

}  // namespace tgpssm

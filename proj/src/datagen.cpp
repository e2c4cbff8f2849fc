#include "tgpssm/datagen.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tgpssm/autodiff.hpp"

namespace tgpssm {

double kink_fn(double x) {
  return 0.8 + (x + 0.2) * (1.0 - 5.0 / (1.0 + std::exp(-2.0 * x)));
}

double kink_step_fn(double x) {
  if (x < 3.0 || (x >= 4.0 && x < 5.0)) return x + 1.0;
  if (x >= 3.0 && x < 4.0) return 0.0;
  return 16.0 - 2.0 * x;
}

namespace {

Dataset gen_scalar_system(int num_seq, int steps, std::uint64_t seed,
                          double (*fn)(double), double x0_lo, double x0_hi,
                          const std::string& name) {
  check_arg(num_seq >= 1 && steps >= 1, "generator: bad sizes");
  Dataset ds;
  ds.name = name;
  ds.seed = seed;
  ds.generator_params = {{"num_seq", num_seq},
                         {"steps", steps},
                         {"process_var", 0.01},
                         {"obs_var", 0.1}};
  Rng rng(seed);
  const double q_sd = std::sqrt(0.01), r_sd = std::sqrt(0.1);
  for (int s = 0; s < num_seq; ++s) {
    Trajectory traj;
    traj.states = Matrix(steps + 1, 1);
    traj.observations = Matrix(steps, 1);
    double x = rng.uniform(x0_lo, x0_hi);
    traj.states(0, 0) = x;
    for (int t = 0; t < steps; ++t) {
      x = fn(x) + q_sd * rng.normal();
      traj.states(t + 1, 0) = x;
      traj.observations(t, 0) = x + r_sd * rng.normal();
    }
    ds.sequences.push_back(std::move(traj));
  }
  return ds;
}

// Bilinear form of the chaotic flow: xdot = A(x) x.
Matrix lorenz_a(const Vector& x) {
  Matrix a(3, 3);
  a << -10.0, 10.0, 0.0,
       28.0, -1.0, -x[0],
       0.0, x[0], -8.0 / 3.0;
  return a;
}

}  // namespace

Dataset gen_kink(int num_seq, int steps, std::uint64_t seed) {
  return gen_scalar_system(num_seq, steps, seed, kink_fn, -0.5, 1.0, "kink");
}

Dataset gen_kink_step(int num_seq, int steps, std::uint64_t seed) {
  // Initial states spread over [0, 6] so every branch is visited.
  return gen_scalar_system(num_seq, steps, seed, kink_step_fn, 0.0, 6.0,
                           "kink-step");
}

Vector lorenz_transition(const Vector& x, double dt) {
  Matrix ad = lorenz_a(x) * dt;
  Matrix f = Matrix::Identity(3, 3);
  Matrix p = Matrix::Identity(3, 3);
  for (int j = 1; j <= 5; ++j) {
    p = (p * ad) / static_cast<double>(j);
    f += p;
  }
  return f * x;
}

Matrix lorenz_jacobian(const Vector& x, double dt) {
  ad::Tape tape;
  ad::Var xv = tape.leaf(Matrix(x));
  Matrix e1 = Matrix::Zero(3, 3), base = Matrix::Zero(3, 3);
  base << -10.0, 10.0, 0.0, 28.0, -1.0, 0.0, 0.0, 0.0, -8.0 / 3.0;
  e1(1, 2) = -1.0;
  e1(2, 1) = 1.0;
  ad::Var a = ad::add(tape.constant(base * dt),
                      ad::smul(ad::block(xv, 0, 0, 1, 1),
                               tape.constant(e1 * dt)));
  ad::Var f = tape.constant(Matrix::Identity(3, 3));
  ad::Var p = tape.constant(Matrix::Identity(3, 3));
  for (int j = 1; j <= 5; ++j) {
    p = ad::cmul(ad::matmul(p, a), 1.0 / j);
    f = ad::add(f, p);
  }
  ad::Var out = ad::matmul(f, xv);
  Matrix jac(3, 3);
  for (int i = 0; i < 3; ++i) {
    tape.backward(ad::block(out, i, 0, 1, 1));
    jac.row(i) = tape.grad(xv).transpose();
  }
  return jac;
}

Dataset gen_lorenz(int steps, double dt, std::uint64_t seed) {
  check_arg(steps >= 1 && dt > 0.0, "gen_lorenz: bad sizes");
  Dataset ds;
  ds.name = "lorenz";
  ds.seed = seed;
  ds.generator_params = {{"steps", steps},
                         {"dt", dt},
                         {"process_var", 0.0015},
                         {"obs_var", 0.1}};
  Rng rng(seed);
  const double q_sd = std::sqrt(0.0015), r_sd = std::sqrt(0.1);
  Trajectory traj;
  traj.states = Matrix(steps + 1, 3);
  traj.observations = Matrix(steps, 3);
  Vector x = Vector::Ones(3);
  traj.states.row(0) = x.transpose();
  for (int t = 0; t < steps; ++t) {
    x = lorenz_transition(x, dt) + q_sd * rng.normal_vec(3);
    traj.states.row(t + 1) = x.transpose();
    traj.observations.row(t) = (x + r_sd * rng.normal_vec(3)).transpose();
  }
  ds.sequences.push_back(std::move(traj));
  return ds;
}

// ---- standardization ----------------------------------------------------------

namespace {

StandardizeStats fit_stats(const std::vector<Trajectory>& seqs,
                           bool controls) {
  int dim = controls ? static_cast<int>(seqs[0].controls.cols())
                     : static_cast<int>(seqs[0].observations.cols());
  Vector mean = Vector::Zero(dim), sq = Vector::Zero(dim);
  long n = 0;
  for (const auto& traj : seqs) {
    const Matrix& m = controls ? traj.controls : traj.observations;
    for (int t = 0; t < m.rows(); ++t) {
      mean += m.row(t).transpose();
      sq += m.row(t).transpose().cwiseAbs2();
      ++n;
    }
  }
  mean /= static_cast<double>(n);
  Vector var = sq / static_cast<double>(n) - mean.cwiseAbs2();
  StandardizeStats stats;
  stats.mean = mean;
  stats.std = var.cwiseMax(0.0).cwiseSqrt();
  for (int d = 0; d < dim; ++d) {
    if (stats.std[d] <= 0.0)
      throw std::invalid_argument(
          "standardize: constant channel (zero standard deviation)");
  }
  return stats;
}

void apply_stats(Matrix& m, const StandardizeStats& stats) {
  for (int t = 0; t < m.rows(); ++t)
    m.row(t) = ((m.row(t).transpose() - stats.mean).cwiseQuotient(stats.std))
                   .transpose();
}

}  // namespace

StandardizeStats standardize(Dataset& ds) {
  check_arg(!ds.sequences.empty(), "standardize: empty dataset");
  StandardizeStats stats = fit_stats(ds.sequences, false);
  standardize_with(ds, stats);
  return stats;
}

void standardize_with(Dataset& ds, const StandardizeStats& stats) {
  for (auto& traj : ds.sequences) apply_stats(traj.observations, stats);
  if (ds.dc() > 0) {
    StandardizeStats cstats = fit_stats(ds.sequences, true);
    for (auto& traj : ds.sequences) apply_stats(traj.controls, cstats);
  }
  ds.stats = stats;
}

Matrix destandardize(const Matrix& values, const StandardizeStats& stats) {
  if (stats.empty()) return values;
  Matrix out = values;
  for (int t = 0; t < out.rows(); ++t) {
    out.row(t) = (out.row(t).transpose().cwiseProduct(stats.std) + stats.mean)
                     .transpose();
  }
  return out;
}

Vector destandardize(const Vector& value, const StandardizeStats& stats) {
  if (stats.empty()) return value;
  return value.cwiseProduct(stats.std) + stats.mean;
}

// ---- CSV ingestion --------------------------------------------------------------

CsvSchema CsvSchema::parse(const std::string& comma_separated) {
  CsvSchema schema;
  std::stringstream ss(comma_separated);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok != "time" && tok != "u" && tok != "y" && tok != "x" &&
        tok != "ignore")
      throw ConfigError("csv schema: unknown role '" + tok + "'");
    schema.roles.push_back(tok);
  }
  if (schema.roles.empty()) throw ConfigError("csv schema: empty");
  return schema;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

Dataset ingest_csv(const std::vector<std::string>& paths,
                   const CsvSchema& schema) {
  check_arg(!paths.empty(), "ingest_csv: no files");
  int n_y = 0, n_u = 0, n_x = 0;
  for (const auto& r : schema.roles) {
    if (r == "y") ++n_y;
    if (r == "u") ++n_u;
    if (r == "x") ++n_x;
  }
  if (n_y == 0) throw ConfigError("csv schema: no observation column");

  Dataset ds;
  ds.name = "csv";
  for (const auto& path : paths) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(is, line))
      throw ConfigError(path + ": empty file");
    auto header = split_csv_line(line);
    if (header.size() != schema.roles.size())
      throw ConfigError(path + ": header has " +
                        std::to_string(header.size()) + " columns, schema " +
                        std::to_string(schema.roles.size()));

    std::vector<Vector> ys, us, xs;
    int line_no = 1;
    while (std::getline(is, line)) {
      ++line_no;
      if (line.empty()) continue;
      auto cells = split_csv_line(line);
      if (cells.size() != schema.roles.size())
        throw ConfigError(path + ":" + std::to_string(line_no) +
                          ": ragged row (" + std::to_string(cells.size()) +
                          " cells)");
      Vector y(n_y), u(n_u), x(n_x);
      int iy = 0, iu = 0, ix = 0;
      for (std::size_t c = 0; c < cells.size(); ++c) {
        const std::string& role = schema.roles[c];
        if (role == "ignore" || role == "time") continue;
        try {
          std::size_t used = 0;
          double v = std::stod(cells[c], &used);
          if (used != cells[c].size()) throw std::invalid_argument("trail");
          if (role == "y") y[iy++] = v;
          if (role == "u") u[iu++] = v;
          if (role == "x") x[ix++] = v;
        } catch (const std::exception&) {
          throw ConfigError(path + ":" + std::to_string(line_no) +
                            ": non-numeric cell '" + cells[c] + "'");
        }
      }
      ys.push_back(y);
      if (n_u > 0) us.push_back(u);
      if (n_x > 0) xs.push_back(x);
    }
    if (ys.empty())
      throw ConfigError(path + ": no data rows (header only)");

    Trajectory traj;
    const int steps = static_cast<int>(ys.size());
    traj.observations = Matrix(steps, n_y);
    for (int t = 0; t < steps; ++t) traj.observations.row(t) = ys[t];
    if (n_u > 0) {
      traj.controls = Matrix(steps, n_u);
      for (int t = 0; t < steps; ++t) traj.controls.row(t) = us[t];
    }
    if (n_x > 0) {
      traj.states = Matrix(steps + 1, n_x);
      traj.states.row(0).setZero();
      for (int t = 0; t < steps; ++t) traj.states.row(t + 1) = xs[t];
    }
    ds.sequences.push_back(std::move(traj));
  }
  return ds;
}

void write_dataset(const std::string& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  for (std::size_t s = 0; s < ds.sequences.size(); ++s) {
    write_trajectory_csv(dir + "/seq_" + std::to_string(s) + ".csv",
                         ds.sequences[s]);
  }
  Json meta;
  meta["name"] = ds.name;
  meta["seed"] = ds.seed;
  meta["num_sequences"] = ds.sequences.size();
  meta["params"] = ds.generator_params;
  if (!ds.stats.empty()) {
    meta["standardize_mean"] = vector_to_json(ds.stats.mean);
    meta["standardize_std"] = vector_to_json(ds.stats.std);
  }
  std::ofstream os(dir + "/dataset.json");
  if (!os) throw ConfigError("cannot write dataset metadata in '" + dir + "'");
  os << meta.dump(2) << "\n";
}

}  // namespace tgpssm

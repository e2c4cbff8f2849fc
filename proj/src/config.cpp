#include "tgpssm/config.hpp"

#include <fstream>

namespace tgpssm {

namespace {

// Keep unknown keys from silently configuring nothing.
void check_keys(const Json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) ok = true;
    if (!ok)
      throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
  }
}

}  // namespace

RunConfig RunConfig::from_json(const Json& j) {
  check_keys(j, {"dataset", "model", "train", "eval", "seed", "out_dir"},
             "top level");
  RunConfig cfg;
  if (j.contains("dataset")) {
    const Json& d = j.at("dataset");
    check_keys(d,
               {"name", "num_seq", "steps", "dt", "seed", "standardize",
                "holdout", "csv_paths", "csv_schema"},
               "dataset");
    cfg.dataset.name = d.value("name", cfg.dataset.name);
    cfg.dataset.num_seq = d.value("num_seq", cfg.dataset.num_seq);
    cfg.dataset.steps = d.value("steps", cfg.dataset.steps);
    cfg.dataset.dt = d.value("dt", cfg.dataset.dt);
    cfg.dataset.seed = d.value("seed", cfg.dataset.seed);
    cfg.dataset.standardize = d.value("standardize", cfg.dataset.standardize);
    cfg.dataset.holdout = d.value("holdout", cfg.dataset.holdout);
    if (d.contains("csv_paths"))
      cfg.dataset.csv_paths =
          d.at("csv_paths").get<std::vector<std::string>>();
    cfg.dataset.csv_schema = d.value("csv_schema", cfg.dataset.csv_schema);
  }
  if (j.contains("model")) {
    const Json& m = j.at("model");
    check_keys(m,
               {"dx", "num_inducing", "kernel_ell", "kernel_sf2", "q_init",
                "r_init", "s_init", "m_init", "train_z", "hidden", "flows"},
               "model");
    cfg.model.dx = m.value("dx", cfg.model.dx);
    cfg.model.num_inducing = m.value("num_inducing", cfg.model.num_inducing);
    cfg.model.kernel_ell = m.value("kernel_ell", cfg.model.kernel_ell);
    cfg.model.kernel_sf2 = m.value("kernel_sf2", cfg.model.kernel_sf2);
    cfg.model.q_init = m.value("q_init", cfg.model.q_init);
    cfg.model.r_init = m.value("r_init", cfg.model.r_init);
    cfg.model.s_init = m.value("s_init", cfg.model.s_init);
    cfg.model.m_init = m.value("m_init", cfg.model.m_init);
    cfg.model.train_z = m.value("train_z", cfg.model.train_z);
    cfg.model.hidden = m.value("hidden", cfg.model.hidden);
    if (m.contains("flows")) {
      for (const auto& fj : m.at("flows"))
        cfg.model.flows.push_back(flow_spec_from_json(fj));
    }
  }
  if (j.contains("train")) {
    const Json& t = j.at("train");
    check_keys(t,
               {"mode", "epochs", "lr", "beta", "r0", "alpha", "eta", "beta0",
                "n_samples", "batch_size"},
               "train");
    std::string mode = t.value("mode", "jo");
    if (mode != "jo" && mode != "co")
      throw ConfigError("train.mode must be 'jo' or 'co'");
    cfg.train.constrained = mode == "co";
    cfg.train.epochs = t.value("epochs", cfg.train.epochs);
    cfg.train.lr = t.value("lr", cfg.train.lr);
    cfg.train.beta_fixed = t.value("beta", cfg.train.beta_fixed);
    if (t.contains("r0") && !t.at("r0").is_null())
      cfg.train.r0 = t.at("r0").get<double>();
    cfg.train.alpha = t.value("alpha", cfg.train.alpha);
    cfg.train.eta = t.value("eta", cfg.train.eta);
    cfg.train.beta0 = t.value("beta0", cfg.train.beta0);
    cfg.train.n_samples = t.value("n_samples", cfg.train.n_samples);
    cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
  }
  if (j.contains("eval")) {
    const Json& e = j.at("eval");
    check_keys(e, {"horizon", "grid_points"}, "eval");
    cfg.eval.horizon = e.value("horizon", cfg.eval.horizon);
    cfg.eval.grid_points = e.value("grid_points", cfg.eval.grid_points);
  }
  cfg.seed = j.value("seed", cfg.seed);
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config '" + path + "'");
  Json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw ConfigError("malformed config '" + path + "': " + e.what());
  }
  return from_json(j);
}

Json RunConfig::to_json() const {
  Json flows = Json::array();
  for (const auto& spec : model.flows) flows.push_back(flow_spec_to_json(spec));
  Json train_j = {{"mode", train.constrained ? "co" : "jo"},
                  {"epochs", train.epochs},
                  {"lr", train.lr},
                  {"beta", train.beta_fixed},
                  {"alpha", train.alpha},
                  {"eta", train.eta},
                  {"beta0", train.beta0},
                  {"n_samples", train.n_samples},
                  {"batch_size", train.batch_size}};
  if (!std::isnan(train.r0)) train_j["r0"] = train.r0;
  return Json{
      {"dataset",
       {{"name", dataset.name},
        {"num_seq", dataset.num_seq},
        {"steps", dataset.steps},
        {"dt", dataset.dt},
        {"seed", dataset.seed},
        {"standardize", dataset.standardize},
        {"holdout", dataset.holdout},
        {"csv_paths", dataset.csv_paths},
        {"csv_schema", dataset.csv_schema}}},
      {"model",
       {{"dx", model.dx},
        {"num_inducing", model.num_inducing},
        {"kernel_ell", model.kernel_ell},
        {"kernel_sf2", model.kernel_sf2},
        {"q_init", model.q_init},
        {"r_init", model.r_init},
        {"s_init", model.s_init},
        {"m_init", model.m_init},
        {"train_z", model.train_z},
        {"hidden", model.hidden},
        {"flows", flows}}},
      {"train", train_j},
      {"eval", {{"horizon", eval.horizon}, {"grid_points", eval.grid_points}}},
      {"seed", seed},
      {"out_dir", out_dir}};
}

std::string RunConfig::fingerprint() const {
  // FNV-1a over the canonical serialization.
  std::string s = to_json().dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

std::vector<Trajectory> training_view(const Dataset& ds, int holdout) {
  std::vector<Trajectory> out;
  for (const auto& traj : ds.sequences) {
    if (holdout <= 0) {
      out.push_back(traj);
      continue;
    }
    int keep = traj.steps() - holdout;
    check_arg(keep >= 1, "holdout leaves no training data");
    Trajectory cut;
    cut.observations = traj.observations.topRows(keep);
    if (traj.has_states()) cut.states = traj.states.topRows(keep + 1);
    if (traj.has_controls()) cut.controls = traj.controls.topRows(keep);
    out.push_back(std::move(cut));
  }
  return out;
}

Dataset load_dataset(const DatasetConfig& cfg) {
  Dataset ds;
  if (cfg.name == "kink") {
    ds = gen_kink(cfg.num_seq, cfg.steps, cfg.seed);
  } else if (cfg.name == "kink-step") {
    ds = gen_kink_step(cfg.num_seq, cfg.steps, cfg.seed);
  } else if (cfg.name == "lorenz") {
    ds = gen_lorenz(cfg.steps, cfg.dt, cfg.seed);
  } else if (cfg.name == "csv") {
    ds = ingest_csv(cfg.csv_paths, CsvSchema::parse(cfg.csv_schema));
  } else {
    throw ConfigError("unknown dataset '" + cfg.name + "'");
  }
  if (cfg.standardize) {
    if (cfg.holdout > 0) {
      // Fit on the training portion, scale the held-out tail accordingly.
      Dataset head = ds;
      head.sequences = training_view(ds, cfg.holdout);
      StandardizeStats stats = standardize(head);
      standardize_with(ds, stats);
    } else {
      standardize(ds);
    }
  }
  return ds;
}

Vector evaluation_grid(const std::string& dataset_name, int points) {
  double lo, hi;
  if (dataset_name == "kink") {
    lo = -3.2;
    hi = 1.2;
  } else if (dataset_name == "kink-step") {
    lo = -0.5;
    hi = 6.5;
  } else {
    throw ConfigError("no evaluation grid for dataset '" + dataset_name + "'");
  }
  return Vector::LinSpaced(points, lo, hi);
}

std::pair<TgpssmModel, VariationalState> instantiate(const RunConfig& cfg,
                                                     const Dataset& data) {
  check_arg(!data.sequences.empty(), "instantiate: empty dataset");
  const int dx = cfg.model.dx;
  const int dy = data.dy();
  const int dc = data.dc();
  const int m_count = cfg.model.num_inducing;
  check_arg(dx >= dy, "instantiate: dx must be >= dy for the projection C");
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);

  // Observed span per channel, for inducing-point placement.
  Vector lo = Vector::Constant(dy, 1e300), hi = Vector::Constant(dy, -1e300);
  for (const auto& traj : data.sequences) {
    for (int t = 0; t < traj.steps(); ++t) {
      lo = lo.cwiseMin(traj.observations.row(t).transpose());
      hi = hi.cwiseMax(traj.observations.row(t).transpose());
    }
  }
  Vector clo = Vector::Constant(std::max(dc, 1), -2.0);
  Vector chi = Vector::Constant(std::max(dc, 1), 2.0);
  if (dc > 0) {
    clo = Vector::Constant(dc, 1e300);
    chi = Vector::Constant(dc, -1e300);
    for (const auto& traj : data.sequences) {
      for (int t = 0; t < traj.controls.rows(); ++t) {
        clo = clo.cwiseMin(traj.controls.row(t).transpose());
        chi = chi.cwiseMax(traj.controls.row(t).transpose());
      }
    }
  }

  TgpssmModel model;
  const int in_dim = dx + dc;
  Matrix z(m_count, in_dim);
  if (in_dim == 1) {
    z.col(0) = Vector::LinSpaced(m_count, lo[0], hi[0]);
  } else {
    for (int i = 0; i < m_count; ++i) {
      for (int j = 0; j < in_dim; ++j) {
        double a, b;
        if (j < dy) {
          a = lo[j];
          b = hi[j];
        } else if (j < dx) {
          a = -2.0;
          b = 2.0;
        } else {
          a = clo[j - dx];
          b = chi[j - dx];
        }
        z(i, j) = rng.uniform(a, b);
      }
    }
  }
  model.gp.z = z;
  for (int d = 0; d < dx; ++d) {
    model.gp.kernels.push_back(
        SeKernel::isotropic(in_dim, cfg.model.kernel_ell,
                            cfg.model.kernel_sf2));
    if (cfg.model.m_init == "identity") {
      model.gp.m.push_back(z.col(d));
    } else if (cfg.model.m_init == "zero") {
      model.gp.m.push_back(Vector::Zero(m_count));
    } else {
      throw ConfigError("model.m_init must be 'zero' or 'identity'");
    }
    Matrix l = std::sqrt(cfg.model.s_init) * Matrix::Identity(m_count, m_count);
    model.gp.l_raw.push_back(SparseGP::to_l_raw(l));
  }
  model.flow = FlowStack::create(dx, cfg.model.flows, rng);
  model.log_q = Vector::Constant(dx, std::log(cfg.model.q_init));
  model.log_r = Vector::Constant(dy, std::log(cfg.model.r_init));
  model.c = Matrix::Zero(dy, dx);
  model.c.leftCols(dy) = Matrix::Identity(dy, dy);

  VariationalState vs =
      VariationalState::init(dx, dy, cfg.model.hidden, rng);
  return {std::move(model), std::move(vs)};
}

}  // namespace tgpssm

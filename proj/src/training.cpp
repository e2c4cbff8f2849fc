#include "tgpssm/training.hpp"

#include <cmath>
#include <fstream>

namespace tgpssm {

LagrangeState update_beta(const LagrangeState& state, double r_hat_new,
                          double r0, double eta) {
  check_arg(eta > 0.0, "update_beta: eta must be positive");
  double arg = -eta * (r_hat_new - r0);
  arg = std::min(std::max(arg, -700.0), 700.0);
  LagrangeState out;
  out.beta = std::max(state.beta * std::exp(arg), 1e-300);
  out.r_hat = r_hat_new;
  out.iteration = state.iteration + 1;
  return out;
}

double default_r0(const std::vector<Trajectory>& data) {
  check_arg(!data.empty(), "default_r0: empty dataset");
  const int dy = static_cast<int>(data[0].observations.cols());
  Vector mean = Vector::Zero(dy), sq = Vector::Zero(dy);
  long n = 0;
  for (const auto& traj : data) {
    for (int t = 0; t < traj.steps(); ++t) {
      mean += traj.observations.row(t).transpose();
      sq += traj.observations.row(t).transpose().cwiseAbs2();
      ++n;
    }
  }
  mean /= static_cast<double>(n);
  Vector var = sq / static_cast<double>(n) - mean.cwiseAbs2();
  var = var.cwiseMax(1e-12);
  double total = 0.0;
  for (const auto& traj : data) {
    for (int t = 0; t < traj.steps(); ++t) {
      total += gaussian_log_pdf_diag(traj.observations.row(t).transpose(),
                                     mean, var);
    }
  }
  return total / static_cast<double>(data.size());
}

namespace {

void append_log_line(std::ofstream* os, const EpochLog& entry) {
  if (!os || !os->is_open()) return;
  Json j = {{"epoch", entry.epoch},
            {"total", entry.elbo.total},
            {"kl_x0", entry.elbo.kl_x0},
            {"kl_u", entry.elbo.kl_u},
            {"entropy", entry.elbo.entropy},
            {"state_recon", entry.elbo.state_recon},
            {"data_recon", entry.elbo.data_recon},
            {"beta", entry.beta}};
  *os << j.dump() << "\n";
  os->flush();
}

TrainResult train_impl(TgpssmModel& model, VariationalState& vs,
                       const std::vector<Trajectory>& data,
                       const TrainConfig& cfg, bool constrained) {
  check_arg(!data.empty(), "train: empty dataset");
  for (const auto& traj : data) {
    check_arg(traj.steps() >= 1, "train: empty sequence");
    check_arg(traj.observations.cols() == model.dy(),
              "train: observation dim mismatch");
  }

  ad::ParamStore store;
  model.register_params(store, cfg.train_z);
  vs.register_params(store);
  ad::AdamState adam(cfg.lr);
  Rng trainer_rng(cfg.seed);

  const int total_seq = static_cast<int>(data.size());
  const int batch = (cfg.batch_size <= 0 || cfg.batch_size > total_seq)
                        ? total_seq
                        : cfg.batch_size;

  LagrangeState lag;
  lag.beta = cfg.beta0;
  double r0 = cfg.r0;
  if (constrained && std::isnan(r0)) r0 = default_r0(data);

  std::ofstream log_stream;
  if (!cfg.log_path.empty()) {
    log_stream.open(cfg.log_path);
    if (!log_stream)
      throw ConfigError("train: cannot open log '" + cfg.log_path + "'");
  }

  TrainResult result;
  result.log.reserve(cfg.epochs);

  std::vector<int> order(total_seq);
  for (int i = 0; i < total_seq; ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (batch < total_seq) {
      // Fisher-Yates on the trainer stream keeps runs reproducible.
      for (int i = total_seq - 1; i > 0; --i) {
        int j = static_cast<int>(trainer_rng.uniform() * (i + 1));
        std::swap(order[i], order[j]);
      }
    }
    try {
      ad::Tape tape;
      tape.reserve(4096);
      ad::VarMap vars;
      vars.reserve(store.size());
      for (std::size_t i = 0; i < store.size(); ++i) {
        int id = static_cast<int>(i);
        vars.emplace(store.name(id),
                     tape.leaf(store.value(id), store.name(id)));
      }
      SparseGpVars gpv = build_sparse_gp_vars(tape, vars, model.dx());

      ad::Var data_term = tape.constant(0.0);
      ad::Var state_term = tape.constant(0.0);
      ad::Var entropy_term = tape.constant(0.0);
      ad::Var kl_x0_term = tape.constant(0.0);
      for (int b = 0; b < batch; ++b) {
        const Trajectory& traj = data[order[b]];
        Rng seq_rng(trainer_rng.child_seed());
        SequenceTerms terms =
            build_sequence_terms(tape, vars, model, vs, gpv,
                                 traj.observations, traj.controls,
                                 cfg.n_samples, seq_rng);
        data_term = ad::add(data_term, terms.data_recon);
        state_term = ad::add(state_term, terms.state_recon);
        entropy_term = ad::add(entropy_term, terms.entropy);
        kl_x0_term = ad::add(kl_x0_term, terms.kl_x0);
      }
      double scale = 1.0 / static_cast<double>(batch);
      data_term = ad::cmul(data_term, scale);
      state_term = ad::cmul(state_term, scale);
      entropy_term = ad::cmul(entropy_term, scale);
      kl_x0_term = ad::cmul(kl_x0_term, scale);
      // One shared q(U) regularizer for the whole dataset.
      ad::Var kl_u_term = ad::cmul(kl_q_u_tape(tape, gpv),
                                   1.0 / static_cast<double>(total_seq));

      EpochLog entry;
      entry.epoch = epoch;
      entry.elbo.kl_x0 = kl_x0_term.scalar();
      entry.elbo.kl_u = kl_u_term.scalar();
      entry.elbo.entropy = entropy_term.scalar();
      entry.elbo.state_recon = state_term.scalar();
      entry.elbo.data_recon = data_term.scalar();
      entry.elbo.total = -entry.elbo.kl_x0 - entry.elbo.kl_u +
                         entry.elbo.entropy + entry.elbo.state_recon +
                         entry.elbo.data_recon;

      ad::Var fit = ad::add(ad::add(data_term, state_term), entropy_term);
      ad::Var kl = ad::add(kl_x0_term, kl_u_term);
      ad::Var objective;
      if (!constrained) {
        objective = ad::add(ad::cmul(fit, -1.0), ad::cmul(kl, cfg.beta_fixed));
        entry.beta = cfg.beta_fixed;
      } else {
        double r_batch = entry.elbo.data_recon;
        double r_prev = epoch == 0 ? r_batch : lag.r_hat;
        double r_hat = moving_average(r_prev, r_batch, cfg.alpha);
        lag = update_beta(lag, r_hat, r0, cfg.eta);
        objective = ad::add(ad::add(ad::cmul(fit, -1.0), kl),
                            ad::cmul(data_term, -lag.beta));
        entry.beta = lag.beta;
      }

      tape.backward(objective);
      ad::GradMap grads;
      grads.reserve(store.size());
      for (std::size_t i = 0; i < store.size(); ++i) {
        int id = static_cast<int>(i);
        if (!store.trainable(id)) continue;
        grads.emplace(store.name(id), tape.grad(vars.at(store.name(id))));
      }
      adam.step(store, grads);

      append_log_line(cfg.log_path.empty() ? nullptr : &log_stream, entry);
      result.log.push_back(entry);
      result.final_elbo = entry.elbo.total;
    } catch (const NumericError& e) {
      throw NumericError("training aborted at epoch " +
                         std::to_string(epoch) + ": " + e.what());
    }
  }

  model.read_back(store);
  vs.read_back(store);
  return result;
}

}  // namespace

TrainResult train_joint(TgpssmModel& model, VariationalState& vs,
                        const std::vector<Trajectory>& data,
                        const TrainConfig& cfg) {
  return train_impl(model, vs, data, cfg, false);
}

TrainResult train_constrained(TgpssmModel& model, VariationalState& vs,
                              const std::vector<Trajectory>& data,
                              const TrainConfig& cfg) {
  return train_impl(model, vs, data, cfg, true);
}

// ---- checkpoints -------------------------------------------------------------

void save_checkpoint(const std::string& path, const TgpssmModel& model,
                     const VariationalState& vs, const std::string& rng_state,
                     const Json* resolved_config) {
  Json j;
  j["format"] = "tgpssm-checkpoint-v1";
  Json structure;
  structure["dx"] = model.dx();
  structure["dy"] = model.dy();
  structure["dc"] = model.dc();
  structure["num_inducing"] = model.gp.num_inducing();
  structure["hidden"] = vs.net.hidden;
  structure["c"] = matrix_to_json(model.c);
  Json flows = Json::array();
  for (const auto& spec : model.flow.specs())
    flows.push_back(flow_spec_to_json(spec));
  structure["flows"] = flows;
  j["structure"] = structure;

  ad::ParamStore store;
  model.register_params(store);
  vs.register_params(store);
  j["params"] = params_to_json(store);
  if (!rng_state.empty()) j["rng"] = rng_state;
  if (resolved_config) j["config"] = *resolved_config;

  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open '" + path + "' for writing");
  os << j.dump(2) << "\n";
}

void load_checkpoint(const std::string& path, TgpssmModel& model,
                     VariationalState& vs, std::string* rng_state) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open checkpoint '" + path + "'");
  Json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw ConfigError("malformed checkpoint: " + std::string(e.what()));
  }
  if (j.value("format", "") != "tgpssm-checkpoint-v1")
    throw ConfigError("unrecognized checkpoint format");

  const Json& s = j.at("structure");
  int dx = s.at("dx").get<int>();
  int dy = s.at("dy").get<int>();
  int dc = s.at("dc").get<int>();
  int m_count = s.at("num_inducing").get<int>();
  int hidden = s.at("hidden").get<int>();

  std::vector<FlowLayerSpec> specs;
  for (const auto& fj : s.at("flows")) specs.push_back(flow_spec_from_json(fj));

  Rng scratch(0);
  model.gp = SparseGP::random(dx, dx + dc, m_count, scratch);
  model.flow = FlowStack::create(dx, specs, scratch);
  model.log_q = Vector::Zero(dx);
  model.log_r = Vector::Zero(dy);
  model.c = matrix_from_json(s.at("c"));
  vs = VariationalState::init(dx, dy, hidden, scratch);

  ad::ParamStore store;
  model.register_params(store);
  vs.register_params(store);
  params_from_json(j.at("params"), store);
  model.read_back(store);
  vs.read_back(store);
  if (rng_state) *rng_state = j.value("rng", "");
}

}  // namespace tgpssm

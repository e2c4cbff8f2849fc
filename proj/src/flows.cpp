#include "tgpssm/flows.hpp"

#include <cmath>

namespace tgpssm {

namespace {

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double softplus_inv(double y) {
  check_arg(y > 0.0, "softplus_inv: value must be positive");
  return y > 30.0 ? y : std::log(std::expm1(y));
}
double sgn(double x) { return x < 0.0 ? -1.0 : 1.0; }

// Safeguarded Newton for a monotone scalar map g with derivative dg.
template <typename F, typename D>
double invert_monotone(F g, D dg, double y, const std::string& what) {
  // Bracket the root of g(f) - y.
  double lo = -1.0, hi = 1.0;
  double glo = g(lo) - y, ghi = g(hi) - y;
  bool increasing = ghi > glo;
  for (int k = 0; k < 200 && glo * ghi > 0.0; ++k) {
    double w = hi - lo;
    if ((glo > 0.0) == increasing) {
      lo -= w;
      glo = g(lo) - y;
    } else {
      hi += w;
      ghi = g(hi) - y;
    }
  }
  if (glo * ghi > 0.0) {
    throw FlowInversionError(what + ": failed to bracket, residual " +
                             std::to_string(std::min(std::abs(glo),
                                                     std::abs(ghi))));
  }
  double f = 0.5 * (lo + hi);
  double res = g(f) - y;
  for (int it = 0; it < 100; ++it) {
    if (std::abs(res) <= 1e-13 * (1.0 + std::abs(y))) return f;
    double d = dg(f);
    double step = d != 0.0 ? res / d : 0.0;
    double cand = f - step;
    if (d == 0.0 || cand <= lo || cand >= hi) cand = 0.5 * (lo + hi);
    double cres = g(cand) - y;
    if ((cres > 0.0) == (ghi > 0.0)) {
      hi = cand;
      ghi = cres;
    } else {
      lo = cand;
      glo = cres;
    }
    f = cand;
    res = cres;
    if (hi - lo <= 1e-15 * (1.0 + std::abs(f))) return f;
  }
  if (std::abs(res) <= 1e-10 * (1.0 + std::abs(y))) return f;
  throw FlowInversionError(what + ": no convergence, residual " +
                           std::to_string(res));
}

int theta_size(FlowKind kind, int terms) {
  switch (kind) {
    case FlowKind::kArcsinh:
    case FlowKind::kTanh:
    case FlowKind::kSal:
      return 4;
    case FlowKind::kLog:
    case FlowKind::kExp:
      return 0;
    case FlowKind::kLinear:
    case FlowKind::kSinhArcsinh:
      return 2;
    case FlowKind::kBoxCox:
      return 1;
    case FlowKind::kSumOfTanh:
    case FlowKind::kSumOfLogExp:
      return 3 * terms;
    case FlowKind::kCoupling:
      return 0;
  }
  return 0;
}

}  // namespace

FlowKind flow_kind_from_string(const std::string& s) {
  if (s == "arcsinh") return FlowKind::kArcsinh;
  if (s == "log") return FlowKind::kLog;
  if (s == "exp") return FlowKind::kExp;
  if (s == "linear") return FlowKind::kLinear;
  if (s == "sinh_arcsinh") return FlowKind::kSinhArcsinh;
  if (s == "box_cox") return FlowKind::kBoxCox;
  if (s == "tanh") return FlowKind::kTanh;
  if (s == "sal") return FlowKind::kSal;
  if (s == "sum_of_tanh") return FlowKind::kSumOfTanh;
  if (s == "sum_of_log_exp") return FlowKind::kSumOfLogExp;
  if (s == "coupling") return FlowKind::kCoupling;
  throw ConfigError("unknown flow kind '" + s + "'");
}

std::string to_string(FlowKind k) {
  switch (k) {
    case FlowKind::kArcsinh: return "arcsinh";
    case FlowKind::kLog: return "log";
    case FlowKind::kExp: return "exp";
    case FlowKind::kLinear: return "linear";
    case FlowKind::kSinhArcsinh: return "sinh_arcsinh";
    case FlowKind::kBoxCox: return "box_cox";
    case FlowKind::kTanh: return "tanh";
    case FlowKind::kSal: return "sal";
    case FlowKind::kSumOfTanh: return "sum_of_tanh";
    case FlowKind::kSumOfLogExp: return "sum_of_log_exp";
    case FlowKind::kCoupling: return "coupling";
  }
  return "?";
}

Vector effective_theta(FlowKind kind, const Vector& raw) {
  Vector eff = raw;
  switch (kind) {
    case FlowKind::kBoxCox:
      eff[0] = softplus(raw[0]);
      break;
    case FlowKind::kSumOfTanh:
    case FlowKind::kSumOfLogExp: {
      int j = static_cast<int>(raw.size()) / 3;
      for (int i = 0; i < 2 * j; ++i) eff[i] = softplus(raw[i]);
      break;
    }
    default:
      break;
  }
  return eff;
}

Vector raw_theta(FlowKind kind, const Vector& eff) {
  Vector raw = eff;
  switch (kind) {
    case FlowKind::kBoxCox:
      raw[0] = softplus_inv(eff[0]);
      break;
    case FlowKind::kSumOfTanh:
    case FlowKind::kSumOfLogExp: {
      int j = static_cast<int>(eff.size()) / 3;
      for (int i = 0; i < 2 * j; ++i) raw[i] = softplus_inv(eff[i]);
      break;
    }
    default:
      break;
  }
  return raw;
}

Vector default_theta(FlowKind kind, int terms) {
  switch (kind) {
    case FlowKind::kArcsinh:
      return (Vector(4) << 0.0, 1.0, 0.0, 1.0).finished();
    case FlowKind::kLinear:
      return (Vector(2) << 0.0, 1.0).finished();
    case FlowKind::kSinhArcsinh:
      return (Vector(2) << 0.0, 1.0).finished();
    case FlowKind::kBoxCox:
      return Vector::Constant(1, 1.0);
    case FlowKind::kTanh:
      // 3 tanh(f / 3): unit slope at the origin, range (-3, 3).
      return (Vector(4) << 3.0, 1.0 / 3.0, 0.0, 0.0).finished();
    case FlowKind::kSal:
      return (Vector(4) << 0.0, 1.0, 0.0, 1.0).finished();
    case FlowKind::kSumOfTanh:
    case FlowKind::kSumOfLogExp: {
      Vector t(3 * terms);
      for (int j = 0; j < terms; ++j) {
        t[j] = kind == FlowKind::kSumOfTanh ? 0.1 : 1.0 / terms;
        t[terms + j] = 1.0;
        t[2 * terms + j] =
            terms > 1 ? -1.0 + 2.0 * j / (terms - 1.0) : 0.0;
      }
      return t;
    }
    default:
      return Vector(0);
  }
}

double elementary_forward(FlowKind kind, const Vector& t, double f) {
  switch (kind) {
    case FlowKind::kArcsinh:
      return t[0] + t[1] * std::asinh(t[3] * (f - t[2]));
    case FlowKind::kLog:
      if (f <= 0.0) throw FlowDomainError("log flow: non-positive input");
      return std::log(f);
    case FlowKind::kExp:
      return std::exp(f);
    case FlowKind::kLinear:
      return t[0] + t[1] * f;
    case FlowKind::kSinhArcsinh:
      return std::sinh(t[1] * std::asinh(f) - t[0]);
    case FlowKind::kBoxCox:
      return (sgn(f) * std::pow(std::abs(f), t[0]) - 1.0) / t[0];
    case FlowKind::kTanh:
      return t[0] * std::tanh(t[1] * (f + t[2])) + t[3];
    case FlowKind::kSal:
      return t[3] * std::sinh(t[1] * std::asinh(f) - t[0]) + t[2];
    case FlowKind::kSumOfTanh: {
      int j = static_cast<int>(t.size()) / 3;
      double out = f;
      for (int i = 0; i < j; ++i)
        out += t[i] * std::tanh(t[j + i] * (f + t[2 * j + i]));
      return out;
    }
    case FlowKind::kSumOfLogExp: {
      int j = static_cast<int>(t.size()) / 3;
      double out = 0.0;
      for (int i = 0; i < j; ++i)
        out += t[i] * softplus(t[j + i] * (f + t[2 * j + i]));
      return out;
    }
    case FlowKind::kCoupling:
      break;
  }
  throw std::invalid_argument("elementary_forward: not an elementary flow");
}

double elementary_derivative(FlowKind kind, const Vector& t, double f) {
  switch (kind) {
    case FlowKind::kArcsinh: {
      double u = t[3] * (f - t[2]);
      return t[1] * t[3] / std::sqrt(1.0 + u * u);
    }
    case FlowKind::kLog:
      if (f <= 0.0) throw FlowDomainError("log flow: non-positive input");
      return 1.0 / f;
    case FlowKind::kExp:
      return std::exp(f);
    case FlowKind::kLinear:
      return t[1];
    case FlowKind::kSinhArcsinh: {
      double u = t[1] * std::asinh(f) - t[0];
      return t[1] * std::cosh(u) / std::sqrt(1.0 + f * f);
    }
    case FlowKind::kBoxCox:
      return std::pow(std::abs(f), t[0] - 1.0);
    case FlowKind::kTanh: {
      double c = std::cosh(t[1] * (f + t[2]));
      return t[0] * t[1] / (c * c);
    }
    case FlowKind::kSal: {
      double u = t[1] * std::asinh(f) - t[0];
      return t[3] * t[1] * std::cosh(u) / std::sqrt(1.0 + f * f);
    }
    case FlowKind::kSumOfTanh: {
      int j = static_cast<int>(t.size()) / 3;
      double out = 1.0;
      for (int i = 0; i < j; ++i) {
        double c = std::cosh(t[j + i] * (f + t[2 * j + i]));
        out += t[i] * t[j + i] / (c * c);
      }
      return out;
    }
    case FlowKind::kSumOfLogExp: {
      int j = static_cast<int>(t.size()) / 3;
      double out = 0.0;
      for (int i = 0; i < j; ++i) {
        double u = t[j + i] * (f + t[2 * j + i]);
        double sig = u >= 0.0 ? 1.0 / (1.0 + std::exp(-u))
                              : std::exp(u) / (1.0 + std::exp(u));
        out += t[i] * t[j + i] * sig;
      }
      return out;
    }
    case FlowKind::kCoupling:
      break;
  }
  throw std::invalid_argument("elementary_derivative: not an elementary flow");
}

double elementary_inverse(FlowKind kind, const Vector& t, double y) {
  switch (kind) {
    case FlowKind::kArcsinh:
      return t[2] + std::sinh((y - t[0]) / t[1]) / t[3];
    case FlowKind::kLog:
      return std::exp(y);
    case FlowKind::kExp:
      if (y <= 0.0)
        throw FlowDomainError("exp flow inverse: non-positive input");
      return std::log(y);
    case FlowKind::kLinear:
      return (y - t[0]) / t[1];
    case FlowKind::kSinhArcsinh:
      return std::sinh((std::asinh(y) + t[0]) / t[1]);
    case FlowKind::kBoxCox: {
      double u = t[0] * y + 1.0;
      return sgn(u) * std::pow(std::abs(u), 1.0 / t[0]);
    }
    case FlowKind::kTanh: {
      double u = (y - t[3]) / t[0];
      if (std::abs(u) >= 1.0)
        throw FlowDomainError("tanh flow inverse: value outside image");
      return std::atanh(u) / t[1] - t[2];
    }
    case FlowKind::kSal:
      return std::sinh((std::asinh((y - t[2]) / t[3]) + t[0]) / t[1]);
    case FlowKind::kSumOfTanh:
      return invert_monotone(
          [&](double f) { return elementary_forward(kind, t, f); },
          [&](double f) { return elementary_derivative(kind, t, f); }, y,
          "sum_of_tanh inverse");
    case FlowKind::kSumOfLogExp:
      if (y <= 0.0)
        throw FlowDomainError("sum_of_log_exp inverse: value outside image");
      return invert_monotone(
          [&](double f) { return elementary_forward(kind, t, f); },
          [&](double f) { return elementary_derivative(kind, t, f); }, y,
          "sum_of_log_exp inverse");
    case FlowKind::kCoupling:
      break;
  }
  throw std::invalid_argument("elementary_inverse: not an elementary flow");
}

// ---- coupling nets -----------------------------------------------------------

namespace {

Vector net_eval(const Matrix& w1, const Matrix& b1, const Matrix& w2,
                const Matrix& b2, const Matrix& w3, const Matrix& b3,
                const Vector& x, bool bounded) {
  Vector h1 = (w1 * x + b1.col(0)).array().tanh();
  Vector h2 = (w2 * h1 + b2.col(0)).array().tanh();
  Vector out = w3 * h2 + b3.col(0);
  if (bounded) out = 3.0 * (out / 3.0).array().tanh();
  return out;
}

CouplingNets init_coupling(int in_dim, int out_dim, int hidden, Rng& rng) {
  auto w = [&](int r, int c) {
    return (1.0 / std::sqrt(static_cast<double>(c))) * rng.normal_mat(r, c);
  };
  CouplingNets n;
  n.s_w1 = w(hidden, in_dim);
  n.s_b1 = Matrix::Zero(hidden, 1);
  n.s_w2 = w(hidden, hidden);
  n.s_b2 = Matrix::Zero(hidden, 1);
  n.s_w3 = Matrix::Zero(out_dim, hidden);
  n.s_b3 = Matrix::Zero(out_dim, 1);
  n.r_w1 = w(hidden, in_dim);
  n.r_b1 = Matrix::Zero(hidden, 1);
  n.r_w2 = w(hidden, hidden);
  n.r_b2 = Matrix::Zero(hidden, 1);
  n.r_w3 = Matrix::Zero(out_dim, hidden);
  n.r_b3 = Matrix::Zero(out_dim, 1);
  return n;
}

}  // namespace

// ---- FlowStack ----------------------------------------------------------------

FlowStack FlowStack::create(int dim, const std::vector<FlowLayerSpec>& specs,
                            Rng& rng) {
  check_arg(dim >= 1, "flow stack: dim must be >= 1");
  FlowStack fs;
  fs.dim_ = dim;
  fs.specs_ = specs;
  for (auto& spec : fs.specs_) {
    if (spec.kind == FlowKind::kCoupling) {
      if (dim < 2)
        throw ConfigError(
            "coupling layer undefined for 1-d state; use elementary flows");
      if (spec.split < 1 || spec.split >= dim)
        throw ConfigError("coupling layer: split must be in [1, dim)");
      int a = spec.split, b = dim - spec.split;
      int in_dim = spec.swap ? b : a;
      int out_dim = spec.swap ? a : b;
      fs.theta_raw_.emplace_back(0);
      fs.nets_.push_back(init_coupling(in_dim, out_dim, spec.hidden, rng));
    } else {
      Vector eff = spec.init.size() > 0 ? spec.init
                                        : default_theta(spec.kind, spec.terms);
      if (spec.kind == FlowKind::kSumOfTanh ||
          spec.kind == FlowKind::kSumOfLogExp) {
        if (eff.size() % 3 != 0)
          throw ConfigError("sum flow: init size must be 3J");
        spec.terms = static_cast<int>(eff.size()) / 3;
      } else if (eff.size() != theta_size(spec.kind, spec.terms)) {
        throw ConfigError("flow init: wrong parameter count for " +
                          to_string(spec.kind));
      }
      fs.theta_raw_.push_back(raw_theta(spec.kind, eff));
      fs.nets_.emplace_back();
    }
  }
  return fs;
}

Vector FlowStack::forward_layer(int layer, const Vector& f) const {
  const FlowLayerSpec& spec = specs_[layer];
  if (spec.kind == FlowKind::kCoupling) {
    const CouplingNets& n = nets_[layer];
    int a = spec.split, b = dim_ - spec.split;
    Vector pass = spec.swap ? f.tail(b) : f.head(a);
    Vector rest = spec.swap ? f.head(a) : f.tail(b);
    Vector s = net_eval(n.s_w1, n.s_b1, n.s_w2, n.s_b2, n.s_w3, n.s_b3, pass,
                        true);
    Vector r = net_eval(n.r_w1, n.r_b1, n.r_w2, n.r_b2, n.r_w3, n.r_b3, pass,
                        false);
    Vector tr = rest.cwiseProduct(s.array().exp().matrix()) + r;
    Vector out(dim_);
    if (spec.swap) {
      out << tr, pass;
    } else {
      out << pass, tr;
    }
    return out;
  }
  Vector t = effective_theta(spec.kind, theta_raw_[layer]);
  Vector out(f.size());
  for (int i = 0; i < f.size(); ++i) {
    try {
      out[i] = elementary_forward(spec.kind, t, f[i]);
    } catch (const FlowDomainError& e) {
      throw FlowDomainError("layer " + std::to_string(layer) + " (" +
                            to_string(spec.kind) + "): " + e.what());
    }
  }
  return out;
}

Vector FlowStack::inverse_layer(int layer, const Vector& y) const {
  const FlowLayerSpec& spec = specs_[layer];
  if (spec.kind == FlowKind::kCoupling) {
    const CouplingNets& n = nets_[layer];
    int a = spec.split, b = dim_ - spec.split;
    Vector pass = spec.swap ? y.tail(b) : y.head(a);
    Vector tr = spec.swap ? y.head(a) : y.tail(b);
    Vector s = net_eval(n.s_w1, n.s_b1, n.s_w2, n.s_b2, n.s_w3, n.s_b3, pass,
                        true);
    Vector r = net_eval(n.r_w1, n.r_b1, n.r_w2, n.r_b2, n.r_w3, n.r_b3, pass,
                        false);
    Vector rest = (tr - r).cwiseProduct((-s.array()).exp().matrix());
    Vector out(dim_);
    if (spec.swap) {
      out << rest, pass;
    } else {
      out << pass, rest;
    }
    return out;
  }
  Vector t = effective_theta(spec.kind, theta_raw_[layer]);
  Vector out(y.size());
  for (int i = 0; i < y.size(); ++i) {
    try {
      out[i] = elementary_inverse(spec.kind, t, y[i]);
    } catch (const NumericError& e) {
      throw FlowInversionError("layer " + std::to_string(layer) + " (" +
                               to_string(spec.kind) + "): " + e.what());
    }
  }
  return out;
}

double FlowStack::log_det_layer(int layer, const Vector& f) const {
  const FlowLayerSpec& spec = specs_[layer];
  if (spec.kind == FlowKind::kCoupling) {
    const CouplingNets& n = nets_[layer];
    int a = spec.split, b = dim_ - spec.split;
    Vector pass = spec.swap ? f.tail(b) : f.head(a);
    Vector s = net_eval(n.s_w1, n.s_b1, n.s_w2, n.s_b2, n.s_w3, n.s_b3, pass,
                        true);
    return s.sum();
  }
  Vector t = effective_theta(spec.kind, theta_raw_[layer]);
  double out = 0.0;
  for (int i = 0; i < f.size(); ++i)
    out += std::log(std::abs(elementary_derivative(spec.kind, t, f[i])));
  return out;
}

Vector FlowStack::forward(const Vector& f) const {
  check_arg(f.size() == dim_ || dim_ == 0, "flow forward: dim mismatch");
  Vector v = f;
  for (int l = 0; l < num_layers(); ++l) v = forward_layer(l, v);
  return v;
}

Vector FlowStack::inverse(const Vector& y) const {
  Vector v = y;
  for (int l = num_layers() - 1; l >= 0; --l) v = inverse_layer(l, v);
  return v;
}

double FlowStack::log_det_jacobian(const Vector& f) const {
  Vector v = f;
  double out = 0.0;
  for (int l = 0; l < num_layers(); ++l) {
    out += log_det_layer(l, v);
    v = forward_layer(l, v);
  }
  return out;
}

double FlowStack::log_det_jacobian_inverse(const Vector& y) const {
  Vector v = y;
  double out = 0.0;
  for (int l = num_layers() - 1; l >= 0; --l) {
    v = inverse_layer(l, v);
    out -= log_det_layer(l, v);
  }
  return out;
}

std::pair<Vector, double> FlowStack::forward_with_log_det(
    const Vector& f) const {
  Vector v = f;
  double out = 0.0;
  for (int l = 0; l < num_layers(); ++l) {
    out += log_det_layer(l, v);
    v = forward_layer(l, v);
  }
  return {v, out};
}

double FlowStack::layer_derivative(int layer, double f) const {
  const FlowLayerSpec& spec = specs_[layer];
  check_arg(spec.kind != FlowKind::kCoupling,
            "layer_derivative: elementary layers only");
  return elementary_derivative(spec.kind,
                               effective_theta(spec.kind, theta_raw_[layer]),
                               f);
}

// ---- parameter store integration ----------------------------------------------

namespace {
std::string lname(int layer, const std::string& field) {
  return "flow." + std::to_string(layer) + "." + field;
}
}  // namespace

void FlowStack::register_params(ad::ParamStore& store) const {
  for (int l = 0; l < num_layers(); ++l) {
    const FlowLayerSpec& spec = specs_[l];
    if (spec.kind == FlowKind::kCoupling) {
      const CouplingNets& n = nets_[l];
      store.add(lname(l, "s_w1"), n.s_w1, spec.trainable);
      store.add(lname(l, "s_b1"), n.s_b1, spec.trainable);
      store.add(lname(l, "s_w2"), n.s_w2, spec.trainable);
      store.add(lname(l, "s_b2"), n.s_b2, spec.trainable);
      store.add(lname(l, "s_w3"), n.s_w3, spec.trainable);
      store.add(lname(l, "s_b3"), n.s_b3, spec.trainable);
      store.add(lname(l, "r_w1"), n.r_w1, spec.trainable);
      store.add(lname(l, "r_b1"), n.r_b1, spec.trainable);
      store.add(lname(l, "r_w2"), n.r_w2, spec.trainable);
      store.add(lname(l, "r_b2"), n.r_b2, spec.trainable);
      store.add(lname(l, "r_w3"), n.r_w3, spec.trainable);
      store.add(lname(l, "r_b3"), n.r_b3, spec.trainable);
    } else if (theta_raw_[l].size() > 0) {
      store.add(lname(l, "theta"), theta_raw_[l], spec.trainable);
    }
  }
}

void FlowStack::read_back(const ad::ParamStore& store) {
  for (int l = 0; l < num_layers(); ++l) {
    const FlowLayerSpec& spec = specs_[l];
    if (spec.kind == FlowKind::kCoupling) {
      CouplingNets& n = nets_[l];
      n.s_w1 = store[lname(l, "s_w1")];
      n.s_b1 = store[lname(l, "s_b1")];
      n.s_w2 = store[lname(l, "s_w2")];
      n.s_b2 = store[lname(l, "s_b2")];
      n.s_w3 = store[lname(l, "s_w3")];
      n.s_b3 = store[lname(l, "s_b3")];
      n.r_w1 = store[lname(l, "r_w1")];
      n.r_b1 = store[lname(l, "r_b1")];
      n.r_w2 = store[lname(l, "r_w2")];
      n.r_b2 = store[lname(l, "r_b2")];
      n.r_w3 = store[lname(l, "r_w3")];
      n.r_b3 = store[lname(l, "r_b3")];
    } else if (theta_raw_[l].size() > 0) {
      theta_raw_[l] = store[lname(l, "theta")];
    }
  }
}

// ---- tape forward ---------------------------------------------------------------

namespace {

using ad::Var;

Var net_eval_tape(ad::Tape& tape, Var w1, Var b1, Var w2, Var b2, Var w3,
                  Var b3, Var x, bool bounded) {
  Var h1 = ad::tanh(ad::add(ad::matmul(w1, x), b1));
  Var h2 = ad::tanh(ad::add(ad::matmul(w2, h1), b2));
  Var out = ad::add(ad::matmul(w3, h2), b3);
  if (bounded) out = ad::cmul(ad::tanh(ad::cmul(out, 1.0 / 3.0)), 3.0);
  return out;
}

Var elem(ad::Tape& tape, Var theta, int i) {
  return ad::block(theta, i, 0, 1, 1);
}

}  // namespace

ad::Var FlowStack::forward_tape(ad::Tape& tape, const ad::VarMap& vars,
                                ad::Var f) const {
  Var v = f;
  for (int l = 0; l < num_layers(); ++l) {
    const FlowLayerSpec& spec = specs_[l];
    if (spec.kind == FlowKind::kCoupling) {
      int a = spec.split, b = dim_ - spec.split;
      int pr = spec.swap ? b : a;
      Var pass = spec.swap ? ad::block(v, a, 0, b, 1) : ad::block(v, 0, 0, a, 1);
      Var rest = spec.swap ? ad::block(v, 0, 0, a, 1) : ad::block(v, a, 0, b, 1);
      (void)pr;
      Var s = net_eval_tape(tape, vars.at(lname(l, "s_w1")),
                            vars.at(lname(l, "s_b1")), vars.at(lname(l, "s_w2")),
                            vars.at(lname(l, "s_b2")), vars.at(lname(l, "s_w3")),
                            vars.at(lname(l, "s_b3")), pass, true);
      Var r = net_eval_tape(tape, vars.at(lname(l, "r_w1")),
                            vars.at(lname(l, "r_b1")), vars.at(lname(l, "r_w2")),
                            vars.at(lname(l, "r_b2")), vars.at(lname(l, "r_w3")),
                            vars.at(lname(l, "r_b3")), pass, false);
      Var tr = ad::add(ad::mul(rest, ad::exp(s)), r);
      v = spec.swap ? ad::concat_v(tr, pass) : ad::concat_v(pass, tr);
      continue;
    }
    if (spec.kind == FlowKind::kLog) {
      v = ad::log(v);
      continue;
    }
    if (spec.kind == FlowKind::kExp) {
      v = ad::exp(v);
      continue;
    }
    Var theta = vars.at(lname(l, "theta"));
    switch (spec.kind) {
      case FlowKind::kArcsinh: {
        Var a = elem(tape, theta, 0), b = elem(tape, theta, 1),
            c = elem(tape, theta, 2), d = elem(tape, theta, 3);
        Var u = ad::smul(d, ad::sadd(ad::cmul(c, -1.0), v));
        v = ad::sadd(a, ad::smul(b, ad::asinh(u)));
        break;
      }
      case FlowKind::kLinear: {
        Var a = elem(tape, theta, 0), b = elem(tape, theta, 1);
        v = ad::sadd(a, ad::smul(b, v));
        break;
      }
      case FlowKind::kSinhArcsinh: {
        Var a = elem(tape, theta, 0), b = elem(tape, theta, 1);
        v = ad::sinh(ad::sadd(ad::cmul(a, -1.0), ad::smul(b, ad::asinh(v))));
        break;
      }
      case FlowKind::kBoxCox: {
        Var lam = ad::softplus(elem(tape, theta, 0));
        Var p = ad::exp(ad::smul(lam, ad::log(ad::abs(v))));
        Var num = ad::cadd(ad::mul(ad::sign(v), p), -1.0);
        Var lam_b =
            ad::smul(lam, tape.constant(Matrix::Ones(v.rows(), 1)));
        v = ad::div(num, lam_b);
        break;
      }
      case FlowKind::kTanh: {
        Var a = elem(tape, theta, 0), b = elem(tape, theta, 1),
            c = elem(tape, theta, 2), d = elem(tape, theta, 3);
        v = ad::sadd(d, ad::smul(a, ad::tanh(ad::smul(b, ad::sadd(c, v)))));
        break;
      }
      case FlowKind::kSal: {
        Var a = elem(tape, theta, 0), b = elem(tape, theta, 1),
            c = elem(tape, theta, 2), d = elem(tape, theta, 3);
        Var u = ad::sadd(ad::cmul(a, -1.0), ad::smul(b, ad::asinh(v)));
        v = ad::sadd(c, ad::smul(d, ad::sinh(u)));
        break;
      }
      case FlowKind::kSumOfTanh: {
        int j = spec.terms;
        Var out = v;
        for (int i = 0; i < j; ++i) {
          Var a = ad::softplus(elem(tape, theta, i));
          Var b = ad::softplus(elem(tape, theta, j + i));
          Var c = elem(tape, theta, 2 * j + i);
          out = ad::add(out,
                        ad::smul(a, ad::tanh(ad::smul(b, ad::sadd(c, v)))));
        }
        v = out;
        break;
      }
      case FlowKind::kSumOfLogExp: {
        int j = spec.terms;
        Var out = tape.constant(Matrix::Zero(v.rows(), 1));
        for (int i = 0; i < j; ++i) {
          Var a = ad::softplus(elem(tape, theta, i));
          Var b = ad::softplus(elem(tape, theta, j + i));
          Var c = elem(tape, theta, 2 * j + i);
          out = ad::add(
              out, ad::smul(a, ad::softplus(ad::smul(b, ad::sadd(c, v)))));
        }
        v = out;
        break;
      }
      default:
        throw std::invalid_argument("forward_tape: unexpected flow kind");
    }
  }
  return v;
}

}  // namespace tgpssm

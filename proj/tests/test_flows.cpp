#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tgpssm/flows.hpp"
#include "support/test_support.hpp"

using namespace tgpssm;
namespace tt = tgpssm::testing;

namespace {

FlowStack single(int dim, FlowKind kind, const Vector& theta) {
  Rng rng(1);
  FlowLayerSpec spec;
  spec.kind = kind;
  spec.init = theta;
  return FlowStack::create(dim, {spec}, rng);
}

// Random effective parameters guaranteeing a strictly monotone map.
Vector random_theta(FlowKind kind, Rng& rng) {
  switch (kind) {
    case FlowKind::kArcsinh:
      return (Vector(4) << rng.uniform(-1.0, 1.0), rng.uniform(0.5, 2.0),
              rng.uniform(-1.0, 1.0), rng.uniform(0.5, 2.0))
          .finished();
    case FlowKind::kLinear:
      return (Vector(2) << rng.uniform(-1.0, 1.0), rng.uniform(0.5, 2.0))
          .finished();
    case FlowKind::kSinhArcsinh:
      return (Vector(2) << rng.uniform(-1.0, 1.0), rng.uniform(0.5, 2.0))
          .finished();
    case FlowKind::kBoxCox:
      return Vector::Constant(1, rng.uniform(0.5, 2.5));
    case FlowKind::kTanh:
      return (Vector(4) << rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0),
              rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0))
          .finished();
    case FlowKind::kSal:
      return (Vector(4) << rng.uniform(-1.0, 1.0), rng.uniform(0.5, 2.0),
              rng.uniform(-1.0, 1.0), rng.uniform(0.5, 2.0))
          .finished();
    case FlowKind::kSumOfTanh:
    case FlowKind::kSumOfLogExp: {
      Vector t(6);
      for (int j = 0; j < 2; ++j) {
        t[j] = rng.uniform(0.1, 1.5);
        t[2 + j] = rng.uniform(0.2, 1.5);
        t[4 + j] = rng.uniform(-1.0, 1.0);
      }
      return t;
    }
    default:
      return Vector(0);
  }
}

const FlowKind kAllElementary[] = {
    FlowKind::kArcsinh,  FlowKind::kLog,       FlowKind::kExp,
    FlowKind::kLinear,   FlowKind::kSinhArcsinh, FlowKind::kBoxCox,
    FlowKind::kTanh,     FlowKind::kSal,       FlowKind::kSumOfTanh,
    FlowKind::kSumOfLogExp};

double sample_input(FlowKind kind, Rng& rng) {
  if (kind == FlowKind::kLog) return rng.uniform(0.05, 4.0);
  if (kind == FlowKind::kBoxCox) {
    double f = rng.uniform(-3.0, 3.0);
    return std::abs(f) < 0.05 ? 0.5 : f;  // keep off the |f|^(lambda-1) cusp
  }
  return rng.uniform(-3.0, 3.0);
}

// Central differences on the forward map lose all precision where the
// derivative underflows (saturated tanh); keep FD-oracle draws in the
// well-conditioned regime.
double fd_safe_input(FlowKind kind, const Vector& theta, Rng& rng) {
  if (kind == FlowKind::kTanh) {
    double b = theta[1], c = theta[2];
    return rng.uniform(-2.0 / b - c, 2.0 / b - c);
  }
  if (kind == FlowKind::kLog) return rng.uniform(0.1, 3.0);
  if (kind == FlowKind::kBoxCox) {
    double f = rng.uniform(-2.5, 2.5);
    return std::abs(f) < 0.3 ? 0.7 : f;
  }
  return rng.uniform(-2.0, 2.0);
}

}  // namespace

TEST_CASE("identity-parameter SAL is the identity") {
  FlowStack fs = single(1, FlowKind::kSal,
                        (Vector(4) << 0.0, 1.0, 0.0, 1.0).finished());
  Vector f = Vector::Constant(1, 0.7);
  CHECK(fs.forward(f)[0] == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(fs.inverse(f)[0] == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(fs.log_det_jacobian(f) == doctest::Approx(0.0));
}

TEST_CASE("linear flow evaluation and inverse") {
  FlowStack fs =
      single(1, FlowKind::kLinear, (Vector(2) << 1.0, 2.0).finished());
  CHECK(fs.forward(Vector::Constant(1, 3.0))[0] == doctest::Approx(7.0));
  CHECK(fs.inverse(Vector::Constant(1, 7.0))[0] == doctest::Approx(3.0));
}

TEST_CASE("sum-of-tanh fixes the origin when offsets vanish") {
  Vector t(6);
  t << 0.5, 0.5, 1.0, 1.0, 0.0, 0.0;
  FlowStack fs = single(1, FlowKind::kSumOfTanh, t);
  CHECK(fs.forward(Vector::Zero(1))[0] == doctest::Approx(0.0));
}

TEST_CASE("log-det: constant-diagonal linear layer") {
  FlowStack fs =
      single(3, FlowKind::kLinear, (Vector(2) << 0.0, 2.0).finished());
  Vector f = (Vector(3) << -1.0, 0.0, 2.5).finished();
  CHECK(fs.log_det_jacobian(f) ==
        doctest::Approx(3.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("log-det matches finite-difference Jacobian") {
  Rng rng(42);
  for (int rep = 0; rep < 20; ++rep) {
    Rng crng(100 + rep);
    std::vector<FlowLayerSpec> specs;
    Vector sal_theta = (Vector(4) << rng.uniform(-0.5, 0.5),
                        rng.uniform(0.7, 1.3), rng.uniform(-0.5, 0.5),
                        rng.uniform(0.7, 1.3))
                           .finished();
    Vector tanh_theta = (Vector(4) << rng.uniform(1.0, 2.5),
                         rng.uniform(0.3, 0.7), rng.uniform(-0.3, 0.3),
                         rng.uniform(-0.5, 0.5))
                            .finished();
    specs.push_back({FlowKind::kSal, sal_theta, true, 2, 1, false, 8});
    specs.push_back({FlowKind::kTanh, tanh_theta, true, 2, 1, false, 8});
    FlowStack fs = FlowStack::create(2, specs, crng);
    Vector f = (Vector(2) << rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5))
                   .finished();
    const double h = 1e-6;
    Matrix jac(2, 2);
    for (int j = 0; j < 2; ++j) {
      Vector up = f, dn = f;
      up[j] += h;
      dn[j] -= h;
      jac.col(j) = (fs.forward(up) - fs.forward(dn)) / (2.0 * h);
    }
    double want = std::log(std::abs(jac.determinant()));
    CHECK(std::abs(fs.log_det_jacobian(f) - want) < 1e-4);
  }
}

TEST_CASE("log-det matches finite differences for every elementary kind") {
  Rng rng(420);
  for (FlowKind kind : kAllElementary) {
    CAPTURE(to_string(kind));
    for (int rep = 0; rep < 50; ++rep) {
      Vector theta = random_theta(kind, rng);
      FlowStack fs = single(1, kind, theta);
      Vector eff = effective_theta(kind, fs.theta_raw(0));
      Vector f = Vector::Constant(1, fd_safe_input(kind, eff, rng));
      const double h = 1e-6;
      double d = (fs.forward((f.array() + h).matrix())[0] -
                  fs.forward((f.array() - h).matrix())[0]) /
                 (2.0 * h);
      CHECK(std::abs(fs.log_det_jacobian(f) - std::log(std::abs(d))) < 1e-4);
    }
  }
}

TEST_CASE("round trip: every elementary kind, random parameters") {
  Rng rng(7);
  for (FlowKind kind : kAllElementary) {
    CAPTURE(to_string(kind));
    for (int rep = 0; rep < 100; ++rep) {
      FlowStack fs = single(1, kind, rep == 0 && kind != FlowKind::kLog &&
                                             kind != FlowKind::kExp
                                         ? default_theta(kind, 2)
                                         : random_theta(kind, rng));
      for (int k = 0; k < 10; ++k) {
        Vector f = Vector::Constant(1, sample_input(kind, rng));
        Vector y = fs.forward(f);
        Vector back = fs.inverse(y);
        CHECK(std::abs(back[0] - f[0]) < 1e-8);
      }
    }
  }
}

TEST_CASE("round trip through the experiment stack (3 SAL + tanh)") {
  // atanh amplifies rounding near the tanh image boundary, so parameters and
  // inputs stay in the usable band and the composite tolerance is looser
  // than the per-kind 1e-8.
  Rng rng(8);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<FlowLayerSpec> specs;
    for (int i = 0; i < 3; ++i)
      specs.push_back({FlowKind::kSal,
                       (Vector(4) << rng.uniform(-0.4, 0.4),
                        rng.uniform(0.8, 1.2), rng.uniform(-0.4, 0.4),
                        rng.uniform(0.8, 1.2))
                           .finished(),
                       true, 2, 1, false, 8});
    specs.push_back({FlowKind::kTanh,
                     (Vector(4) << rng.uniform(2.5, 4.0),
                      rng.uniform(0.2, 0.4), rng.uniform(-0.3, 0.3),
                      rng.uniform(-0.5, 0.5))
                         .finished(),
                     true, 2, 1, false, 8});
    Rng crng(1);
    FlowStack fs = FlowStack::create(1, specs, crng);
    for (int k = 0; k < 20; ++k) {
      Vector f = Vector::Constant(1, rng.uniform(-2.0, 2.0));
      Vector back = fs.inverse(fs.forward(f));
      CHECK(std::abs(back[0] - f[0]) < 1e-6);
    }
  }
}

TEST_CASE("change-of-variables antisymmetry of the log-det") {
  Rng rng(9);
  for (FlowKind kind : kAllElementary) {
    CAPTURE(to_string(kind));
    for (int rep = 0; rep < 20; ++rep) {
      FlowStack fs = single(1, kind, random_theta(kind, rng));
      Vector f = Vector::Constant(1, sample_input(kind, rng));
      Vector y = fs.forward(f);
      CHECK(std::abs(fs.log_det_jacobian(f) +
                     fs.log_det_jacobian_inverse(y)) < 1e-8);
    }
  }
}

TEST_CASE("monotonicity probe for constrained parameters") {
  Rng rng(10);
  for (FlowKind kind : kAllElementary) {
    CAPTURE(to_string(kind));
    for (int rep = 0; rep < 10; ++rep) {
      FlowStack fs = single(1, kind, random_theta(kind, rng));
      for (int g = 0; g <= 40; ++g) {
        double f = -3.0 + 6.0 * g / 40.0;
        if (kind == FlowKind::kLog && f <= 0.0) continue;
        if (kind == FlowKind::kBoxCox && std::abs(f) < 0.08) continue;
        CHECK(fs.layer_derivative(0, f) > 0.0);
      }
    }
  }
}

TEST_CASE("coupling layer: zero networks give the identity") {
  Rng rng(11);
  FlowLayerSpec spec{FlowKind::kCoupling, Vector(0), true, 2, 1, false, 16};
  FlowStack fs = FlowStack::create(2, {spec}, rng);
  // Construction zero-initializes the output layers, so s == 0 and r == 0.
  Vector f = (Vector(2) << 0.37, -1.2).finished();
  Vector y = fs.forward(f);
  CHECK(y[0] == f[0]);  // pass-through block bit-identical
  CHECK(y[1] == doctest::Approx(f[1]).epsilon(1e-15));
  CHECK(fs.log_det_jacobian(f) == doctest::Approx(0.0));
}

TEST_CASE("coupling layer: pure shift") {
  Rng rng(12);
  FlowLayerSpec spec{FlowKind::kCoupling, Vector(0), true, 2, 1, false, 16};
  FlowStack fs = FlowStack::create(2, {spec}, rng);
  ad::ParamStore store;
  fs.register_params(store);
  store["flow.0.r_b3"] = Matrix::Constant(1, 1, 1.0);
  fs.read_back(store);
  Vector f = Vector::Ones(2);
  Vector y = fs.forward(f);
  CHECK(y[0] == doctest::Approx(1.0));
  CHECK(y[1] == doctest::Approx(2.0));
}

TEST_CASE("coupling stack: analytic inverse and alternation") {
  Rng rng(13);
  std::vector<FlowLayerSpec> specs;
  specs.push_back({FlowKind::kCoupling, Vector(0), true, 2, 1, false, 16});
  specs.push_back({FlowKind::kCoupling, Vector(0), true, 2, 1, true, 16});
  FlowStack fs = FlowStack::create(2, specs, rng);
  // Randomize the zero-initialized output layers so the maps act.
  ad::ParamStore store;
  fs.register_params(store);
  for (const auto& name : store.names()) {
    if (name.find("w3") != std::string::npos ||
        name.find("b3") != std::string::npos) {
      Matrix& m = store[name];
      m = 0.5 * rng.normal_mat(m.rows(), m.cols());
    }
  }
  fs.read_back(store);

  Vector f = (Vector(2) << 0.8, -0.4).finished();
  Vector y = fs.forward(f);
  CHECK(std::abs(y[0] - f[0]) > 1e-4);  // both coordinates updated
  CHECK(std::abs(y[1] - f[1]) > 1e-4);
  Vector back = fs.inverse(y);
  CHECK((back - f).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("coupling layer on a 1-d state is a configuration error") {
  Rng rng(14);
  FlowLayerSpec spec{FlowKind::kCoupling, Vector(0), true, 2, 1, false, 16};
  CHECK_THROWS_AS(FlowStack::create(1, {spec}, rng), ConfigError);
}

TEST_CASE("log flow raises a domain error identifying the layer") {
  Rng rng(15);
  std::vector<FlowLayerSpec> specs;
  specs.push_back({FlowKind::kLinear, (Vector(2) << 0.0, 1.0).finished(),
                   true, 2, 1, false, 8});
  specs.push_back({FlowKind::kLog, Vector(0), true, 2, 1, false, 8});
  FlowStack fs = FlowStack::create(1, specs, rng);
  CHECK_THROWS_WITH_AS(fs.forward(Vector::Constant(1, -0.5)),
                       doctest::Contains("layer 1"), FlowDomainError);
}

TEST_CASE("tape forward agrees with the plain forward") {
  Rng rng(16);
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<FlowLayerSpec> specs;
    specs.push_back({FlowKind::kSal, random_theta(FlowKind::kSal, rng), true,
                     2, 1, false, 8});
    specs.push_back({FlowKind::kSumOfTanh,
                     random_theta(FlowKind::kSumOfTanh, rng), true, 2, 1,
                     false, 8});
    specs.push_back({FlowKind::kCoupling, Vector(0), true, 2, 1, rep % 2 == 1,
                     8});
    Rng crng(1000 + rep);
    FlowStack fs = FlowStack::create(2, specs, crng);
    ad::ParamStore store;
    fs.register_params(store);
    for (const auto& name : store.names()) {
      if (name.find("w3") != std::string::npos) {
        Matrix& m = store[name];
        m = 0.3 * crng.normal_mat(m.rows(), m.cols());
      }
    }
    fs.read_back(store);

    Vector f = rng.normal_vec(2);
    Vector plain = fs.forward(f);

    ad::Tape tape;
    ad::VarMap vars;
    for (std::size_t i = 0; i < store.size(); ++i) {
      int id = static_cast<int>(i);
      vars.emplace(store.name(id), tape.leaf(store.value(id)));
    }
    ad::Var out = fs.forward_tape(tape, vars, tape.constant(Matrix(f)));
    CHECK((out.val().col(0) - plain).norm() < 1e-12);
  }
}

TEST_CASE("gradients flow through the tape forward") {
  Rng rng(17);
  std::vector<FlowLayerSpec> specs;
  for (int i = 0; i < 3; ++i)
    specs.push_back({FlowKind::kSal, random_theta(FlowKind::kSal, rng), true,
                     2, 1, false, 8});
  specs.push_back({FlowKind::kTanh, random_theta(FlowKind::kTanh, rng), true,
                   2, 1, false, 8});
  Rng crng(2);
  FlowStack fs = FlowStack::create(1, specs, crng);
  ad::ParamStore store;
  fs.register_params(store);
  Vector f0 = Vector::Constant(1, 0.6);

  auto build = [&](ad::Tape& tape, const ad::VarMap& vars) {
    return ad::squared_norm(fs.forward_tape(tape, vars, tape.constant(Matrix(f0))));
  };
  auto res = ad::evaluate_with_gradients(store, build);
  auto eval = [&]() {
    fs.read_back(store);
    Vector y = fs.forward(f0);
    return y.squaredNorm();
  };
  for (const auto& name : store.names()) {
    Matrix fd = tt::fd_gradient(store, name, eval, 1e-6);
    INFO("param ", name);
    CHECK(tt::rel_err(res.grads.at(name), fd) < 1e-5);
  }
}

#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "tgpssm/common.hpp"

namespace tgpssm {

// Seeded RNG with a portable normal sampler (Box-Muller on 53-bit uniforms),
// so sampled values do not depend on the standard library's distribution
// implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // Box-Muller; u1 in (0,1] so the log is finite.
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  Vector normal_vec(int n) {
    Vector v(n);
    for (int i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  Matrix normal_mat(int r, int c) {
    Matrix m(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = normal();
    return m;
  }

  // Derive a seed for an independent child stream.
  std::uint64_t child_seed() { return gen_(); }

  std::string serialize() const {
    std::ostringstream os;
    os << gen_ << " " << (have_spare_ ? 1 : 0) << " " << spare_;
    return os.str();
  }

  void deserialize(const std::string& s) {
    std::istringstream is(s);
    int spare_flag = 0;
    is >> gen_ >> spare_flag >> spare_;
    if (!is) throw ConfigError("rng: malformed serialized state");
    have_spare_ = spare_flag != 0;
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace tgpssm

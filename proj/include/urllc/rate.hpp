#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace urllc {

// Achievable-rate model for one resource block.
struct RateModel {
  enum class Kind { shannon, finite_blocklength };
  Kind kind = Kind::shannon;
  int blocklength_n = 0;    // finite_blocklength only
  double decode_error = 0;  // finite_blocklength only, in (0,1)

  static RateModel shannon() { return RateModel{}; }
  static RateModel finite_blocklength(int n, double eps) {
    if (n <= 0 || eps <= 0.0 || eps >= 1.0)
      throw std::invalid_argument("bad finite-blocklength parameters");
    return RateModel{Kind::finite_blocklength, n, eps};
  }
};

// Inverse of the Gaussian tail Q(x) = 0.5*erfc(x/sqrt(2)).
double inverse_q(double eps);

// Rate in bit/s on one RB of bandwidth B at power p, gain h, noise power
// sigma2. Shannon: B*log2(1 + p*h/sigma2). Finite blocklength: the normal
// approximation B*[log2(1+s) - sqrt(V(s)/n)*Qinv(eps)/ln2] with dispersion
// V(s) = 1 - (1+s)^-2, clamped at zero.
double rate_of(double p_w, double h, double bandwidth_hz, double sigma2_w,
               const RateModel& model);

// One-user-per-RB allocation over N users and K RBs. Exclusive ownership is
// structural: rb_user[j] is the owner of RB j (so every column of the implied
// binary matrix sums to exactly 1) and rb_power[j] is the power it spends.
struct Allocation {
  int n_users = 0;
  int n_rbs = 0;
  std::vector<int> rb_user;
  std::vector<double> rb_power;

  Allocation() = default;
  Allocation(int n, int k)
      : n_users(n), n_rbs(k), rb_user(k, 0), rb_power(k, 0.0) {}

  bool assigned(int user, int rb) const { return rb_user[rb] == user; }
  double power(int user, int rb) const {
    return rb_user[rb] == user ? rb_power[rb] : 0.0;
  }
  double total_power() const {
    double s = 0.0;
    for (double p : rb_power) s += p;
    return s;
  }
  bool valid() const {
    if (static_cast<int>(rb_user.size()) != n_rbs ||
        static_cast<int>(rb_power.size()) != n_rbs)
      return false;
    for (int j = 0; j < n_rbs; ++j) {
      if (rb_user[j] < 0 || rb_user[j] >= n_users) return false;
      if (!(rb_power[j] >= 0.0)) return false;
    }
    return true;
  }
};

}  // namespace urllc

#include "urllc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace urllc {

ReliabilityEstimate measure_reliability(const std::deque<SlotCounts>& window,
                                        std::size_t n_users) {
  ReliabilityEstimate est;
  est.window_slots = static_cast<int>(window.size());
  est.gamma.assign(n_users, 1.0);
  std::vector<std::int64_t> delivered(n_users, 0), late(n_users, 0);
  for (const auto& slot : window) {
    for (std::size_t i = 0; i < n_users; ++i) {
      delivered[i] += slot.delivered[i];
      late[i] += slot.late[i];
    }
  }
  for (std::size_t i = 0; i < n_users; ++i) {
    est.counted_packets += delivered[i];
    if (delivered[i] > 0) {
      est.gamma[i] = 1.0 - static_cast<double>(late[i]) /
                               static_cast<double>(delivered[i]);
    }
  }
  return est;
}

std::vector<double> update_weights(const std::vector<double>& w,
                                   const std::vector<double>& gamma,
                                   const std::vector<double>& target) {
  if (w.size() != gamma.size() || w.size() != target.size())
    throw std::invalid_argument("weight update size mismatch");
  std::vector<double> next(w.size());
  for (std::size_t i = 0; i < w.size(); ++i)
    next[i] = std::max(w[i] + target[i] - gamma[i], 0.0);
  return next;
}

double reward(const std::vector<double>& w, const std::vector<double>& gamma,
              double total_power_w, const RewardConfig& cfg) {
  if (w.size() != gamma.size())
    throw std::invalid_argument("reward size mismatch");
  double r = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) r -= w[i] * (1.0 - gamma[i]);
  r -= cfg.alpha * total_power_w / cfg.power_scale_w;
  return r;
}

FixedPointVerdict check_fixed_point(
    const std::vector<std::vector<double>>& w_history,
    const std::vector<std::vector<double>>& gamma_history,
    const std::vector<double>& target, double delta, std::size_t window) {
  if (w_history.size() < window + 1 || gamma_history.size() < window)
    throw std::invalid_argument("history shorter than window");
  const std::size_t n = target.size();
  const std::size_t wlen = w_history.size();

  double max_step = 0.0;
  for (std::size_t t = wlen - window; t < wlen; ++t) {
    for (std::size_t i = 0; i < n; ++i)
      max_step =
          std::max(max_step, std::abs(w_history[t][i] - w_history[t - 1][i]));
  }
  if (max_step >= delta) return FixedPointVerdict::not_converged;

  // Pool the reliability over the same trailing window.
  const std::size_t glen = gamma_history.size();
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t t = glen - window; t < glen; ++t)
      acc += gamma_history[t][i];
    const double pooled = acc / static_cast<double>(window);
    if (pooled < target[i] - delta)
      return FixedPointVerdict::converged_infeasible_violation;
  }
  return FixedPointVerdict::converged_and_feasible;
}

}  // namespace urllc

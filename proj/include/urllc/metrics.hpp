#pragma once

#include <cstdint>
#include <deque>
#include <vector>

namespace urllc {

// Per-slot delivery counts for every user: how many packets reached the user
// in the slot and how many of those missed their delay budget.
struct SlotCounts {
  std::vector<std::int64_t> delivered;
  std::vector<std::int64_t> late;
};

struct ReliabilityEstimate {
  std::vector<double> gamma;  // per-user, in [0, 1]
  int window_slots = 0;
  std::int64_t counted_packets = 0;
};

struct RewardConfig {
  double alpha = 0.1;           // weight on transmit power
  double power_scale_w = 1.0;   // power is expressed in units of this
};

enum class FixedPointVerdict {
  converged_and_feasible,
  converged_infeasible_violation,
  not_converged,
};

// Pooled empirical reliability over a window of slots:
// gamma_i = 1 - (sum late_i) / (sum delivered_i), and 1 when nothing was
// delivered (no observed violation).
ReliabilityEstimate measure_reliability(const std::deque<SlotCounts>& window,
                                        std::size_t n_users);

// w_i <- max{w_i + target_i - gamma_i, 0}
std::vector<double> update_weights(const std::vector<double>& w,
                                   const std::vector<double>& gamma,
                                   const std::vector<double>& target);

// R = -sum_i w_i (1 - gamma_i) - alpha * P / power_scale
double reward(const std::vector<double>& w, const std::vector<double>& gamma,
              double total_power_w, const RewardConfig& cfg);

// Fixed-point monitor: over the trailing `window` steps of the histories, if
// every weight moved by less than delta the dynamics have settled; the settled
// point must then satisfy pooled gamma_i >= target_i - delta, otherwise the
// controller (or the weight recursion) is broken.
FixedPointVerdict check_fixed_point(
    const std::vector<std::vector<double>>& w_history,
    const std::vector<std::vector<double>>& gamma_history,
    const std::vector<double>& target, double delta, std::size_t window);

// Rolling buffer feeding measure_reliability.
class ReliabilityWindow {
 public:
  ReliabilityWindow(std::size_t n_users, std::size_t capacity_slots)
      : n_users_(n_users), capacity_(capacity_slots) {}

  void push(SlotCounts counts) {
    slots_.push_back(std::move(counts));
    if (slots_.size() > capacity_) slots_.pop_front();
  }

  ReliabilityEstimate estimate() const {
    return measure_reliability(slots_, n_users_);
  }

  std::size_t size() const { return slots_.size(); }
  std::size_t capacity() const { return capacity_; }

 private:
  std::size_t n_users_;
  std::size_t capacity_;
  std::deque<SlotCounts> slots_;
};

}  // namespace urllc

#pragma once

#include <optional>
#include <vector>

#include "urllc/env.hpp"
#include "urllc/rate.hpp"

namespace urllc {

struct DualState {
  std::vector<double> lambda;  // per-user rate multipliers, >= 0
  int iterations = 0;          // dual coordinate passes performed
  double residual = 0.0;       // max relative rate shortfall of the output
};

struct ReducerTolerances {
  double rate_tol = 1e-2;          // max allowed relative shortfall
  int max_iterations = 500;        // cap on dual coordinate passes
  double rate_floor_bps = 1.0;     // epsilon in the shortfall denominator
  double waterfill_power_tol_w = 1e-9;
  std::optional<double> total_power_cap_w;  // if set, never exceed
  std::int64_t brute_force_cap = 1000000;   // max enumerated assignments
  // Final primal polish: repair starved users, then water-fill each user to
  // its exact demand on the solved assignment. Off, the result keeps the raw
  // dual-iterate powers (the granularity studies measure exactly those).
  bool exact_fill = true;
  // Candidate budget for the post-fill local reassignment search (single-RB
  // transfers and pairwise swaps). Zero disables; sweeps whose full pass
  // would blow the budget are skipped, so deployment-scale calls stay fast.
  int assignment_move_cap = 600;
};

struct ReduceResult {
  Allocation alloc;
  std::vector<double> achieved_bps;
  DualState dual;
  double total_power_w = 0.0;
  bool cap_exceeded = false;
};

struct BruteForceResult {
  Allocation alloc;
  std::vector<double> achieved_bps;
  double total_power_w = 0.0;
  bool feasible = false;
};

// Closed-form per-RB power at multiplier lambda_i (water-filling limb):
// p* = max{lambda_i * B / ln2 - sigma2 / h, 0}; 0 when h = 0. Under a
// finite-blocklength model the closed form no longer applies and p* comes
// from a bracketed golden-section minimization of p - lambda_i * rate(p).
double per_rb_power(double lambda_i, double h, double bandwidth_hz,
                    double sigma2_w);
double per_rb_power(double lambda_i, double h, double bandwidth_hz,
                    double sigma2_w, const RateModel& model);

// Owner of one RB at fixed multipliers: argmin_i of the per-RB Lagrangian
// p*_ij - lambda_i * rate(p*_ij), ties to the lowest user index.
// h_column holds the N gains of this RB.
int assign_rb(const std::vector<double>& lambda,
              const std::vector<double>& h_column, double bandwidth_hz,
              double sigma2_w, const RateModel& model = RateModel::shannon());

// Relative shortfall max_i max(rd_i - r_i, 0) / max(rd_i, floor).
double rate_residual(const std::vector<double>& achieved,
                     const std::vector<double>& desired, double floor_bps);

// Per-user error metric E = ||r - r_d|| / (N * ||r||); 0 when both are zero.
double reducer_error(const std::vector<double>& achieved,
                     const std::vector<double>& desired);

// Maps desired rates to a minimum-power exclusive RB/power allocation via
// dual decomposition. The dual phase settles per-user multipliers by
// coordinate bisection (escalating through contention stalls) and keeps the
// cheapest feasible iterate (closed-form powers, argmin assignment). With
// exact_fill set, a primal polish then repairs starved users, water-fills
// everyone to the exact demand on the solved assignment, and walks budgeted
// transfer/swap moves downhill in total power. With a total power cap, a
// polish that fits the cap is adopted as is; otherwise lambda is scaled back
// until the cap holds, overshooting users are refilled down, leftover
// headroom fills short users, and cap_exceeded is set whenever the cap
// sacrifices the shortfall contract. lambda_init warm-starts the multipliers
// (e.g. from the previous slot's solve); invalid or missing values fall back
// to the water-level guess.
ReduceResult reduce(const std::vector<double>& r_desired,
                    const ChannelState& channel, const EnvConfig& cfg,
                    const RateModel& model = RateModel::shannon(),
                    const ReducerTolerances& tol = ReducerTolerances{},
                    const std::vector<double>* lambda_init = nullptr);

// Exhaustive oracle: enumerates every RB-ownership assignment and
// water-fills each user exactly to its target. Rejects instances with more
// than tol.brute_force_cap assignments.
BruteForceResult brute_force_min_power(
    const std::vector<double>& r_desired, const ChannelState& channel,
    const EnvConfig& cfg, const RateModel& model = RateModel::shannon(),
    const ReducerTolerances& tol = ReducerTolerances{});

// Dual function value g(lambda) = sum_i lambda_i rd_i + sum_j min_i
// [p*_ij - lambda_i rate(p*_ij)]; weak duality makes it a lower bound on
// brute_force_min_power for every lambda >= 0.
double dual_value(const std::vector<double>& lambda,
                  const std::vector<double>& r_desired,
                  const ChannelState& channel, const EnvConfig& cfg,
                  const RateModel& model = RateModel::shannon());

}  // namespace urllc

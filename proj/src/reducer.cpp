#include "urllc/reducer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace urllc {

namespace {

constexpr double kLambdaGrowthCap = 1e24;
constexpr double kEscalationFactor = 1.15;
constexpr int kEscalationSweepCap = 200;

double golden_min_power(double lambda_i, double h, double B, double sigma2,
                        const RateModel& model) {
  // Bracket the fb minimizer: the shannon closed form bounds it from above
  // (the fb rate and its slope never exceed shannon's), padded generously.
  const double p_sh = std::max(lambda_i * B / std::numbers::ln2 - sigma2 / h, 0.0);
  const double hi = 2.0 * p_sh + 4.0 * sigma2 / h;
  if (hi <= 0.0) return 0.0;
  auto phi = [&](double p) {
    return p - lambda_i * rate_of(p, h, B, sigma2, model);
  };
  // Coarse scan to isolate the basin (phi can be flat near zero where the
  // clamped fb rate vanishes), then golden-section inside it.
  const int grid = 96;
  int best = 0;
  double best_val = phi(0.0);
  for (int g = 1; g <= grid; ++g) {
    const double p = hi * static_cast<double>(g) / grid;
    const double v = phi(p);
    if (v < best_val) {
      best_val = v;
      best = g;
    }
  }
  double a = hi * static_cast<double>(std::max(best - 1, 0)) / grid;
  double b = hi * static_cast<double>(std::min(best + 1, grid)) / grid;
  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = b - invphi * (b - a);
  double x2 = a + invphi * (b - a);
  double f1 = phi(x1), f2 = phi(x2);
  for (int it = 0; it < 80 && (b - a) > 1e-12 * (1.0 + b); ++it) {
    if (f1 < f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - invphi * (b - a);
      f1 = phi(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + invphi * (b - a);
      f2 = phi(x2);
    }
  }
  const double p = (a + b) / 2.0;
  return phi(p) < phi(0.0) ? p : 0.0;
}

struct Workspace {
  int N = 0, K = 0;
  double B = 0.0, sigma2 = 0.0;
  const ChannelState* ch = nullptr;
  const RateModel* model = nullptr;
  std::vector<double> obj;    // N x K per-RB Lagrangian values
  std::vector<double> power;  // N x K closed-form powers

  double& obj_at(int i, int j) { return obj[static_cast<std::size_t>(i) * K + j]; }
  double& pow_at(int i, int j) { return power[static_cast<std::size_t>(i) * K + j]; }

  void refresh_row(int i, double lambda_i) {
    for (int j = 0; j < K; ++j) {
      const double h = ch->at(i, j);
      const double p = per_rb_power(lambda_i, h, B, sigma2, *model);
      pow_at(i, j) = p;
      obj_at(i, j) = p - lambda_i * rate_of(p, h, B, sigma2, *model);
    }
  }
};

struct FullEval {
  Allocation alloc;
  std::vector<double> rates;
  double power = 0.0;
  double residual = 0.0;
};

FullEval full_evaluate(Workspace& ws, const std::vector<double>& r_desired,
                       double floor_bps) {
  FullEval ev;
  ev.alloc = Allocation(ws.N, ws.K);
  ev.rates.assign(ws.N, 0.0);
  for (int j = 0; j < ws.K; ++j) {
    int owner = 0;
    double best = ws.obj_at(0, j);
    for (int i = 1; i < ws.N; ++i) {
      if (ws.obj_at(i, j) < best) {
        best = ws.obj_at(i, j);
        owner = i;
      }
    }
    ev.alloc.rb_user[j] = owner;
    const double p = ws.pow_at(owner, j);
    ev.alloc.rb_power[j] = p;
    ev.rates[owner] +=
        rate_of(p, ws.ch->at(owner, j), ws.B, ws.sigma2, *ws.model);
    ev.power += p;
  }
  ev.residual = rate_residual(ev.rates, r_desired, floor_bps);
  return ev;
}

// Rate of user i alone at candidate lambda_i, against cached best objectives
// of the other users (tie-break: lowest index wins).
double user_rate_at(Workspace& ws, int i, double lambda_i,
                    const std::vector<double>& best_other,
                    const std::vector<int>& best_other_idx) {
  double rate = 0.0;
  for (int j = 0; j < ws.K; ++j) {
    const double h = ws.ch->at(i, j);
    const double p = per_rb_power(lambda_i, h, ws.B, ws.sigma2, *ws.model);
    const double r = rate_of(p, h, ws.B, ws.sigma2, *ws.model);
    const double o = p - lambda_i * r;
    if (o < best_other[j] || (o == best_other[j] && i < best_other_idx[j]))
      rate += r;
  }
  return rate;
}

// Minimum power for one user to reach rate_target on the RB set `rbs`
// (gain per owned RB), by bisection on the user's water level.
struct WaterfillResult {
  bool feasible = false;
  double power = 0.0;
  double rate = 0.0;
  std::vector<double> p;
};

WaterfillResult waterfill_user(const std::vector<double>& gains,
                               double rate_target, double B, double sigma2,
                               const RateModel& model, double power_tol) {
  WaterfillResult res;
  res.p.assign(gains.size(), 0.0);
  if (rate_target <= 0.0) {
    res.feasible = true;
    return res;
  }
  double hmax = 0.0;
  for (double h : gains) hmax = std::max(hmax, h);
  if (gains.empty() || hmax <= 0.0) return res;

  auto eval = [&](double lam, std::vector<double>& p, double& power) {
    double rate = 0.0;
    power = 0.0;
    for (std::size_t j = 0; j < gains.size(); ++j) {
      p[j] = per_rb_power(lam, gains[j], B, sigma2, model);
      power += p[j];
      rate += rate_of(p[j], gains[j], B, sigma2, model);
    }
    return rate;
  };

  double lo = 0.0;
  double hi = sigma2 * std::numbers::ln2 / (B * hmax);
  std::vector<double> p_hi(gains.size(), 0.0);
  double pw_hi = 0.0;
  int guard = 0;
  while (eval(hi, p_hi, pw_hi) < rate_target) {
    lo = hi;
    hi *= 2.0;
    if (++guard > 400) return res;  // absurd target, call it infeasible
  }
  std::vector<double> p_lo(gains.size(), 0.0);
  double pw_lo = 0.0;
  eval(lo, p_lo, pw_lo);
  for (int it = 0; it < 200 && (pw_hi - pw_lo) > power_tol; ++it) {
    const double mid = 0.5 * (lo + hi);
    std::vector<double> p_mid(gains.size(), 0.0);
    double pw_mid = 0.0;
    const double r_mid = eval(mid, p_mid, pw_mid);
    if (r_mid >= rate_target) {
      hi = mid;
      p_hi = std::move(p_mid);
      pw_hi = pw_mid;
    } else {
      lo = mid;
      pw_lo = pw_mid;
    }
  }
  res.feasible = true;
  res.p = std::move(p_hi);
  res.power = pw_hi;
  res.rate = eval(hi, res.p, res.power);
  return res;
}

struct PolishOutcome {
  bool ok = false;
  Allocation alloc;
  std::vector<double> rates;
  double power = 0.0;
};

// Primal polish of a fixed assignment: hand every starved demanding user an
// RB (cheapest donor refill first), water-fill each user to its exact demand
// on its owned set, then walk single-RB transfers and pairwise swaps downhill
// in total power until a sweep stops improving or the move budget is spent.
PolishOutcome polish_allocation(const Workspace& ws,
                                const std::vector<double>& rd,
                                const std::vector<int>& seed_owner,
                                const ReducerTolerances& tol) {
  const int N = ws.N, K = ws.K;
  PolishOutcome out;
  std::vector<int> owner = seed_owner;
  auto owned = [&](int i) {
    std::vector<int> s;
    for (int j = 0; j < K; ++j)
      if (owner[j] == i) s.push_back(j);
    return s;
  };
  auto fill = [&](const std::vector<int>& rbs, int i, WaterfillResult& wf) {
    std::vector<double> gains(rbs.size());
    for (std::size_t t = 0; t < rbs.size(); ++t)
      gains[t] = ws.ch->at(i, rbs[t]);
    wf = waterfill_user(gains, rd[i], ws.B, ws.sigma2, *ws.model,
                        tol.waterfill_power_tol_w);
    return wf.feasible;
  };

  for (int guard = 0; guard <= N; ++guard) {
    int starved = -1;
    for (int i = 0; i < N && starved < 0; ++i)
      if (rd[i] > 0.0 && owned(i).empty()) starved = i;
    if (starved < 0) break;
    if (guard == N) return out;
    int best_j = -1;
    double best_cost = std::numeric_limits<double>::infinity();
    for (int j = 0; j < K; ++j) {
      const int donor = owner[j];
      auto ds = owned(donor);
      if (rd[donor] > 0.0 && ds.size() <= 1) continue;
      ds.erase(std::find(ds.begin(), ds.end(), j));
      WaterfillResult dwf, swf;
      if (!fill(ds, donor, dwf) || !fill({j}, starved, swf)) continue;
      if (dwf.power + swf.power < best_cost) {
        best_cost = dwf.power + swf.power;
        best_j = j;
      }
    }
    if (best_j < 0) return out;
    owner[best_j] = starved;
  }

  std::vector<double> user_power(N, 0.0);
  for (int i = 0; i < N; ++i) {
    WaterfillResult wf;
    if (!fill(owned(i), i, wf)) return out;
    user_power[i] = wf.power;
  }

  int moves = 0;
  const int budget = std::max(tol.assignment_move_cap, 0);
  for (bool improving = true; improving;) {
    improving = false;
    if (moves + K * (N - 1) <= budget) {
      for (int j = 0; j < K && !improving; ++j) {
        const int donor = owner[j];
        auto ds = owned(donor);
        if (rd[donor] > 0.0 && ds.size() <= 1) continue;
        ds.erase(std::find(ds.begin(), ds.end(), j));
        WaterfillResult dwf;
        if (!fill(ds, donor, dwf)) continue;
        for (int u = 0; u < N && !improving; ++u) {
          if (u == donor) continue;
          ++moves;
          auto us = owned(u);
          us.push_back(j);
          WaterfillResult uwf;
          if (!fill(us, u, uwf)) continue;
          const double before = user_power[donor] + user_power[u];
          if (dwf.power + uwf.power < before - 1e-12 * (1.0 + before)) {
            owner[j] = u;
            user_power[donor] = dwf.power;
            user_power[u] = uwf.power;
            improving = true;
          }
        }
      }
    }
    if (!improving && moves + (K * (K - 1)) / 2 <= budget) {
      for (int j1 = 0; j1 < K && !improving; ++j1) {
        for (int j2 = j1 + 1; j2 < K && !improving; ++j2) {
          const int a = owner[j1], b = owner[j2];
          if (a == b) continue;
          ++moves;
          auto sa = owned(a), sb = owned(b);
          std::replace(sa.begin(), sa.end(), j1, j2);
          std::replace(sb.begin(), sb.end(), j2, j1);
          WaterfillResult awf, bwf;
          if (!fill(sa, a, awf) || !fill(sb, b, bwf)) continue;
          const double before = user_power[a] + user_power[b];
          if (awf.power + bwf.power < before - 1e-12 * (1.0 + before)) {
            owner[j1] = b;
            owner[j2] = a;
            user_power[a] = awf.power;
            user_power[b] = bwf.power;
            improving = true;
          }
        }
      }
    }
  }

  out.alloc = Allocation(N, K);
  out.alloc.rb_user = owner;
  out.rates.assign(N, 0.0);
  for (int i = 0; i < N; ++i) {
    auto rbs = owned(i);
    WaterfillResult wf;
    if (!fill(rbs, i, wf)) return out;
    out.rates[i] = wf.rate;
    for (std::size_t t = 0; t < rbs.size(); ++t)
      out.alloc.rb_power[rbs[t]] = wf.p[t];
    out.power += wf.power;
  }
  out.ok = true;
  return out;
}

// Cap-respecting fill: refill overshooting users down to their demand, then
// spend leftover headroom on short users, cheapest shortfall first.
void fill_within_cap(const Workspace& ws, const std::vector<double>& rd,
                     FullEval& out, double cap, const ReducerTolerances& tol) {
  const int N = ws.N, K = ws.K;
  std::vector<std::vector<int>> own(N);
  std::vector<double> user_power(N, 0.0);
  for (int j = 0; j < K; ++j) {
    own[out.alloc.rb_user[j]].push_back(j);
    user_power[out.alloc.rb_user[j]] += out.alloc.rb_power[j];
  }
  auto fill = [&](int i, WaterfillResult& wf) {
    std::vector<double> gains(own[i].size());
    for (std::size_t t = 0; t < own[i].size(); ++t)
      gains[t] = ws.ch->at(i, own[i][t]);
    wf = waterfill_user(gains, rd[i], ws.B, ws.sigma2, *ws.model,
                        tol.waterfill_power_tol_w);
    return wf.feasible;
  };
  auto apply = [&](int i, const WaterfillResult& wf) {
    for (std::size_t t = 0; t < own[i].size(); ++t)
      out.alloc.rb_power[own[i][t]] = wf.p[t];
    out.rates[i] = wf.rate;
    user_power[i] = wf.power;
  };
  for (int i = 0; i < N; ++i) {
    if (out.rates[i] <= rd[i]) continue;
    WaterfillResult wf;
    if (fill(i, wf) && wf.power <= user_power[i]) apply(i, wf);
  }
  double total = 0.0;
  for (double p : user_power) total += p;
  for (bool filled = true; filled;) {
    filled = false;
    int best_i = -1;
    double best_delta = std::numeric_limits<double>::infinity();
    WaterfillResult best_wf;
    for (int i = 0; i < N; ++i) {
      if (out.rates[i] >= rd[i]) continue;
      WaterfillResult wf;
      if (!fill(i, wf)) continue;
      const double delta = wf.power - user_power[i];
      if (delta < best_delta) {
        best_delta = delta;
        best_wf = wf;
        best_i = i;
      }
    }
    if (best_i >= 0 && total + best_delta <= cap) {
      total += best_delta;
      apply(best_i, best_wf);
      filled = true;
    }
  }
  out.power = total;
  out.residual = rate_residual(out.rates, rd, tol.rate_floor_bps);
}

}  // namespace

double per_rb_power(double lambda_i, double h, double bandwidth_hz,
                    double sigma2_w) {
  if (h <= 0.0 || lambda_i <= 0.0) return 0.0;
  const double p = lambda_i * bandwidth_hz / std::numbers::ln2 - sigma2_w / h;
  return p > 0.0 ? p : 0.0;
}

double per_rb_power(double lambda_i, double h, double bandwidth_hz,
                    double sigma2_w, const RateModel& model) {
  if (h <= 0.0 || lambda_i <= 0.0) return 0.0;
  if (model.kind == RateModel::Kind::shannon)
    return per_rb_power(lambda_i, h, bandwidth_hz, sigma2_w);
  return golden_min_power(lambda_i, h, bandwidth_hz, sigma2_w, model);
}

int assign_rb(const std::vector<double>& lambda,
              const std::vector<double>& h_column, double bandwidth_hz,
              double sigma2_w, const RateModel& model) {
  if (lambda.empty() || lambda.size() != h_column.size())
    throw std::invalid_argument("assign_rb needs matching non-empty inputs");
  int best_i = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < lambda.size(); ++i) {
    const double p =
        per_rb_power(lambda[i], h_column[i], bandwidth_hz, sigma2_w, model);
    const double obj =
        p - lambda[i] * rate_of(p, h_column[i], bandwidth_hz, sigma2_w, model);
    if (obj < best) {
      best = obj;
      best_i = static_cast<int>(i);
    }
  }
  return best_i;
}

double rate_residual(const std::vector<double>& achieved,
                     const std::vector<double>& desired, double floor_bps) {
  double worst = 0.0;
  for (std::size_t i = 0; i < desired.size(); ++i) {
    const double shortfall = std::max(desired[i] - achieved[i], 0.0);
    worst = std::max(worst, shortfall / std::max(desired[i], floor_bps));
  }
  return worst;
}

double reducer_error(const std::vector<double>& achieved,
                     const std::vector<double>& desired) {
  if (achieved.size() != desired.size())
    throw std::invalid_argument("reducer_error size mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < achieved.size(); ++i) {
    const double d = achieved[i] - desired[i];
    num += d * d;
    den += achieved[i] * achieved[i];
  }
  if (den == 0.0) {
    for (double rd : desired)
      if (rd != 0.0)
        throw std::invalid_argument("reducer_error undefined for zero rates");
    return 0.0;
  }
  return std::sqrt(num) /
         (static_cast<double>(achieved.size()) * std::sqrt(den));
}

ReduceResult reduce(const std::vector<double>& r_desired,
                    const ChannelState& channel, const EnvConfig& cfg,
                    const RateModel& model, const ReducerTolerances& tol,
                    const std::vector<double>* lambda_init) {
  const int N = cfg.n_users, K = cfg.n_rbs;
  if (static_cast<int>(r_desired.size()) != N)
    throw std::invalid_argument("desired-rate vector does not match n_users");
  if (channel.n_users != N || channel.n_rbs != K)
    throw std::invalid_argument("channel does not match config");
  for (double rd : r_desired)
    if (!(rd >= 0.0) || !std::isfinite(rd))
      throw std::invalid_argument("desired rates must be finite and >= 0");

  Workspace ws;
  ws.N = N;
  ws.K = K;
  ws.B = cfg.rb_bandwidth_hz;
  ws.sigma2 = cfg.sigma2_w();
  ws.ch = &channel;
  ws.model = &model;
  ws.obj.assign(static_cast<std::size_t>(N) * K, 0.0);
  ws.power.assign(static_cast<std::size_t>(N) * K, 0.0);

  // Water-level initial guess: each user pretends to own K/N average RBs.
  std::vector<double> lambda(N, 0.0);
  const double share = std::max(static_cast<double>(K) / N, 1.0);
  for (int i = 0; i < N; ++i) {
    if (r_desired[i] <= 0.0) continue;
    double mean_h = 0.0;
    for (int j = 0; j < K; ++j) mean_h += channel.at(i, j);
    mean_h /= K;
    if (mean_h <= 0.0) continue;
    const double per_rb_target = r_desired[i] / share;
    lambda[i] = ws.sigma2 * std::numbers::ln2 / (ws.B * mean_h) *
                std::exp2(per_rb_target / ws.B);
  }
  if (lambda_init && static_cast<int>(lambda_init->size()) == N) {
    bool sane = true;
    for (double l : *lambda_init)
      sane = sane && std::isfinite(l) && l >= 0.0 && l < kLambdaGrowthCap;
    if (sane) {
      for (int i = 0; i < N; ++i)
        if (r_desired[i] > 0.0 && (*lambda_init)[i] > 0.0)
          lambda[i] = (*lambda_init)[i];
    }
  }
  for (int i = 0; i < N; ++i) ws.refresh_row(i, lambda[i]);

  const double target_factor = 1.0 - 0.3 * tol.rate_tol;
  DualState dual;
  dual.lambda = lambda;

  bool have_best = false;
  FullEval best;            // min-power feasible iterate
  FullEval least_infeasible;  // fallback: smallest residual seen
  least_infeasible.residual = std::numeric_limits<double>::infinity();

  auto consider = [&](FullEval&& ev, const std::vector<double>& lam) {
    if (ev.residual <= tol.rate_tol &&
        (!have_best || ev.power < best.power)) {
      best = ev;
      dual.lambda = lam;
      have_best = true;
    }
    if (ev.residual < least_infeasible.residual) {
      least_infeasible = ev;
      if (!have_best) dual.lambda = lam;
    }
  };

  consider(full_evaluate(ws, r_desired, tol.rate_floor_bps), lambda);

  std::vector<double> best_other(K);
  std::vector<int> best_other_idx(K);
  int passes = 0;
  int unproductive = 0;
  // Coordinate rounds settle each user at the smallest water level meeting
  // its target against the others. When two users contend for a marginal RB,
  // those rounds can stall with one user short: each bisection stops at the
  // infinitesimal steal of the contested RB instead of the larger
  // self-sufficient level. An unproductive round with unmet targets therefore
  // escalates every short user's multiplier geometrically until the joint
  // allocation meets all targets, then the shrink rounds resume; the cheapest
  // feasible iterate seen anywhere is what gets returned.
  while (passes < tol.max_iterations) {
    const double round_power =
        have_best ? best.power : std::numeric_limits<double>::infinity();
    const double round_resid = least_infeasible.residual;
    double max_rel_move = 0.0;
    for (int i = 0; i < N && passes < tol.max_iterations; ++i, ++passes) {
      const double target = target_factor * r_desired[i];
      if (target <= 0.0) {
        if (lambda[i] != 0.0) {
          lambda[i] = 0.0;
          ws.refresh_row(i, 0.0);
          max_rel_move = 1.0;
        }
        continue;
      }
      for (int j = 0; j < K; ++j) {
        double bo = std::numeric_limits<double>::infinity();
        int bi = N;
        for (int u = 0; u < N; ++u) {
          if (u == i) continue;
          if (ws.obj_at(u, j) < bo) {
            bo = ws.obj_at(u, j);
            bi = u;
          }
        }
        best_other[j] = bo;
        best_other_idx[j] = bi;
      }
      auto rate_at = [&](double l) {
        return user_rate_at(ws, i, l, best_other, best_other_idx);
      };
      double hi = std::max(lambda[i], 1e-300);
      double lo = 0.0;
      if (rate_at(hi) >= target) {
        // Shrink toward zero to bracket the crossing from above.
        while (hi > 1e-300) {
          const double cand = hi / 4.0;
          if (rate_at(cand) >= target) {
            hi = cand;
          } else {
            lo = cand;
            break;
          }
        }
      } else {
        while (rate_at(hi) < target && hi < kLambdaGrowthCap) {
          lo = hi;
          hi *= 4.0;
        }
      }
      for (int it = 0; it < 100 && (hi - lo) > 1e-9 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (rate_at(mid) >= target)
          hi = mid;
        else
          lo = mid;
      }
      const double before = lambda[i];
      lambda[i] = hi;
      ws.refresh_row(i, hi);
      const double denom = std::max({before, hi, 1e-30});
      max_rel_move = std::max(max_rel_move, std::abs(hi - before) / denom);
      consider(full_evaluate(ws, r_desired, tol.rate_floor_bps), lambda);
    }
    if (passes >= tol.max_iterations) break;
    const bool round_improved =
        (have_best && best.power < round_power * (1.0 - 1e-6)) ||
        least_infeasible.residual < round_resid - 1e-9;
    if (round_improved && max_rel_move >= 1e-7) {
      unproductive = 0;
      continue;
    }
    if (++unproductive > 3) break;
    FullEval ev = full_evaluate(ws, r_desired, tol.rate_floor_bps);
    bool any_short = false;
    for (int i = 0; i < N; ++i)
      any_short = any_short || ev.rates[i] < target_factor * r_desired[i];
    if (!any_short) break;  // every target met and the power polish is done
    const double episode_power =
        have_best ? best.power : std::numeric_limits<double>::infinity();
    const double episode_resid = least_infeasible.residual;
    bool escalated = false;
    for (int sweep = 0;
         sweep < kEscalationSweepCap && passes < tol.max_iterations;
         ++sweep, ++passes) {
      bool sweep_short = false;
      for (int i = 0; i < N; ++i) {
        if (ev.rates[i] >= target_factor * r_desired[i]) continue;
        if (lambda[i] >= kLambdaGrowthCap) continue;
        lambda[i] = (lambda[i] > 0.0 ? lambda[i] : 1e-18) * kEscalationFactor;
        ws.refresh_row(i, lambda[i]);
        sweep_short = true;
      }
      if (!sweep_short) break;
      escalated = true;
      ev = full_evaluate(ws, r_desired, tol.rate_floor_bps);
      consider(FullEval(ev), lambda);
      if (tol.total_power_cap_w && ev.power > 50.0 * *tol.total_power_cap_w)
        break;  // the targets are unreachable under the power cap
    }
    if (!escalated) break;
    const bool episode_improved =
        (have_best && best.power < episode_power * (1.0 - 1e-6)) ||
        least_infeasible.residual < episode_resid - 1e-9;
    if (!episode_improved) break;
    unproductive = 0;
  }
  dual.iterations = passes;

  FullEval out = have_best ? best : least_infeasible;
  std::vector<double> out_lambda = dual.lambda;

  // The dual iterate pins down a good assignment but its powers overshoot
  // wherever a multiplier settled against an ownership threshold. Polish the
  // primal: exact per-user fills plus a budgeted reassignment search.
  bool polished = false;
  if (tol.exact_fill) {
    PolishOutcome pol =
        polish_allocation(ws, r_desired, out.alloc.rb_user, tol);
    if (pol.ok &&
        (!tol.total_power_cap_w || pol.power <= *tol.total_power_cap_w)) {
      out.alloc = std::move(pol.alloc);
      out.rates = std::move(pol.rates);
      out.power = pol.power;
      out.residual = rate_residual(out.rates, r_desired, tol.rate_floor_bps);
      polished = true;
    }
  }

  ReduceResult res;
  res.cap_exceeded = false;
  if (!polished && tol.total_power_cap_w &&
      out.power > *tol.total_power_cap_w) {
    // Scale the multipliers back until the cap holds (still a dual iterate).
    // They can sit many orders of magnitude above the cap level after an
    // escalation against unreachable targets, so walk the scale down
    // geometrically first, then bisect the bracketing interval.
    double s_lo = 0.0, s_hi = 1.0;
    FullEval capped;
    for (double probe = 0.25; probe > 0.0; probe *= 0.25) {
      for (int i = 0; i < N; ++i) ws.refresh_row(i, out_lambda[i] * probe);
      FullEval ev = full_evaluate(ws, r_desired, tol.rate_floor_bps);
      if (ev.power <= *tol.total_power_cap_w) {
        s_lo = probe;
        capped = std::move(ev);
        break;
      }
      s_hi = probe;
    }
    for (int it = 0; !capped.rates.empty() && it < 80; ++it) {
      const double s = 0.5 * (s_lo + s_hi);
      for (int i = 0; i < N; ++i) ws.refresh_row(i, out_lambda[i] * s);
      FullEval ev = full_evaluate(ws, r_desired, tol.rate_floor_bps);
      if (ev.power <= *tol.total_power_cap_w) {
        s_lo = s;
        capped = std::move(ev);
      } else {
        s_hi = s;
      }
    }
    if (capped.rates.empty()) {
      // Even lambda -> 0 exceeded the cap only transiently; use zero power.
      for (int i = 0; i < N; ++i) ws.refresh_row(i, 0.0);
      capped = full_evaluate(ws, r_desired, tol.rate_floor_bps);
    }
    for (int i = 0; i < N; ++i) out_lambda[i] *= s_lo;
    out = std::move(capped);
  }
  if (!polished && tol.exact_fill && tol.total_power_cap_w)
    fill_within_cap(ws, r_desired, out, *tol.total_power_cap_w, tol);
  if (tol.total_power_cap_w)
    res.cap_exceeded = out.residual > tol.rate_tol;

  res.alloc = std::move(out.alloc);
  res.achieved_bps = std::move(out.rates);
  res.total_power_w = out.power;
  dual.lambda = std::move(out_lambda);
  dual.residual = out.residual;
  res.dual = std::move(dual);
  return res;
}

BruteForceResult brute_force_min_power(const std::vector<double>& r_desired,
                                       const ChannelState& channel,
                                       const EnvConfig& cfg,
                                       const RateModel& model,
                                       const ReducerTolerances& tol) {
  const int N = cfg.n_users, K = cfg.n_rbs;
  if (static_cast<int>(r_desired.size()) != N)
    throw std::invalid_argument("desired-rate vector does not match n_users");
  double combos = std::pow(static_cast<double>(N), K);
  if (combos > static_cast<double>(tol.brute_force_cap))
    throw std::invalid_argument("instance too large for exhaustive search");

  BruteForceResult result;
  result.alloc = Allocation(N, K);
  result.achieved_bps.assign(N, 0.0);
  double best_power = std::numeric_limits<double>::infinity();

  std::vector<int> owner(K, 0);
  const double B = cfg.rb_bandwidth_hz;
  const double sigma2 = cfg.sigma2_w();
  while (true) {
    bool ok = true;
    double total = 0.0;
    Allocation alloc(N, K);
    std::vector<double> achieved(N, 0.0);
    for (int i = 0; i < N && ok; ++i) {
      std::vector<double> gains;
      std::vector<int> idx;
      for (int j = 0; j < K; ++j) {
        if (owner[j] == i) {
          gains.push_back(channel.at(i, j));
          idx.push_back(j);
        }
      }
      WaterfillResult wf = waterfill_user(gains, r_desired[i], B, sigma2,
                                          model, tol.waterfill_power_tol_w);
      if (!wf.feasible) {
        ok = false;
        break;
      }
      total += wf.power;
      achieved[i] = wf.rate;
      for (std::size_t t = 0; t < idx.size(); ++t) {
        alloc.rb_user[idx[t]] = i;
        alloc.rb_power[idx[t]] = wf.p[t];
      }
      if (total >= best_power) {
        ok = false;  // already worse than the incumbent; prune
        break;
      }
    }
    // Complete the assignment for unpruned columns (owners already set by
    // construction of the odometer).
    for (int j = 0; j < K; ++j) alloc.rb_user[j] = owner[j];
    if (ok && total < best_power) {
      best_power = total;
      result.alloc = std::move(alloc);
      result.achieved_bps = std::move(achieved);
      result.total_power_w = total;
      result.feasible = true;
    }
    int pos = K - 1;
    while (pos >= 0 && owner[pos] == N - 1) {
      owner[pos] = 0;
      --pos;
    }
    if (pos < 0) break;
    ++owner[pos];
  }
  return result;
}

double dual_value(const std::vector<double>& lambda,
                  const std::vector<double>& r_desired,
                  const ChannelState& channel, const EnvConfig& cfg,
                  const RateModel& model) {
  const int N = cfg.n_users, K = cfg.n_rbs;
  const double B = cfg.rb_bandwidth_hz;
  const double sigma2 = cfg.sigma2_w();
  double g = 0.0;
  for (int i = 0; i < N; ++i) g += lambda[i] * r_desired[i];
  for (int j = 0; j < K; ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < N; ++i) {
      const double h = channel.at(i, j);
      const double p = per_rb_power(lambda[i], h, B, sigma2, model);
      best = std::min(best, p - lambda[i] * rate_of(p, h, B, sigma2, model));
    }
    g += best;
  }
  return g;
}

}  // namespace urllc

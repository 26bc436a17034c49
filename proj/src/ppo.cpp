#include "urllc/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace urllc {

namespace {
constexpr double kLog2Pi = 1.8378770664093453;  // log(2*pi)
}

std::vector<double> Featurizer::operator()(const SlotState& s) {
  const int n = n_users_;
  for (int i = 0; i < n; ++i) {
    run_max_count_ =
        std::max(run_max_count_, static_cast<double>(s.arrival_counts[i]));
    run_max_bits_ = std::max(run_max_bits_, s.mean_packet_bits[i]);
  }
  std::vector<double> f;
  f.reserve(feature_count(n));
  for (int i = 0; i < n; ++i) {
    f.push_back(static_cast<double>(s.arrival_counts[i]) / run_max_count_);
    f.push_back(s.mean_packet_bits[i] / run_max_bits_);
    double mean_g = 0.0, max_g = 0.0;
    for (int j = 0; j < s.gains.n_rbs; ++j) {
      const double g = std::log1p(s.gains.at(i, j) * p_ref_w_ / sigma2_);
      mean_g += g;
      max_g = std::max(max_g, g);
    }
    f.push_back(mean_g / s.gains.n_rbs);
    f.push_back(max_g);
  }
  return f;
}

void PolicyNet::clamp_log_std() {
  for (double& v : log_std) v = std::clamp(v, kLogStdMin, kLogStdMax);
}

PolicyNet make_policy(int n_users, double r_max_bps, Rng& rng, int hidden) {
  PolicyNet p;
  const std::size_t in = Featurizer::feature_count(n_users);
  p.mean_net = DenseNetwork(
      {in, static_cast<std::size_t>(hidden), static_cast<std::size_t>(hidden),
       static_cast<std::size_t>(n_users)},
      {Activation::tanh, Activation::tanh, Activation::identity}, rng);
  p.log_std.assign(n_users, -0.5);
  p.r_max_bps = r_max_bps;
  return p;
}

DenseNetwork make_value_net(int n_users, Rng& rng, int hidden) {
  const std::size_t in = Featurizer::feature_count(n_users);
  return DenseNetwork(
      {in, static_cast<std::size_t>(hidden), static_cast<std::size_t>(hidden),
       1},
      {Activation::tanh, Activation::tanh, Activation::identity}, rng);
}

double squash_ceiling_bps(const EnvConfig& cfg,
                          const std::vector<Point2D>& positions) {
  const double half = cfg.cell_side_m / 2.0;
  double best = 0.0;
  for (const auto& p : positions) {
    const double dx = p.x - half, dy = p.y - half;
    best = std::max(best, pathloss(cfg, std::sqrt(dx * dx + dy * dy)));
  }
  const double snr_cap = cfg.max_bs_power_w * best / cfg.sigma2_w();
  return cfg.total_bandwidth_hz() * std::log2(1.0 + snr_cap);
}

double gaussian_log_prob(const std::vector<double>& raw,
                         const std::vector<double>& mean,
                         const std::vector<double>& log_std) {
  double lp = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double s = std::exp(log_std[i]);
    const double z = (raw[i] - mean[i]) / s;
    lp += -0.5 * z * z - log_std[i] - 0.5 * kLog2Pi;
  }
  return lp;
}

ActResult act(const PolicyNet& policy, const std::vector<double>& features,
              Rng& rng, bool deterministic) {
  ActResult out;
  const std::vector<double> mean = policy.mean_net.forward(features);
  out.raw.resize(mean.size());
  for (std::size_t i = 0; i < mean.size(); ++i) {
    out.raw[i] = deterministic
                     ? mean[i]
                     : mean[i] + std::exp(policy.log_std[i]) * rng.normal();
  }
  out.log_prob = gaussian_log_prob(out.raw, mean, policy.log_std);
  out.r_desired_bps.resize(mean.size());
  for (std::size_t i = 0; i < mean.size(); ++i) {
    out.r_desired_bps[i] =
        policy.r_max_bps / (1.0 + std::exp(-out.raw[i]));
  }
  return out;
}

GaeResult gae_advantages(const std::vector<double>& rewards,
                         const std::vector<double>& values,
                         double bootstrap_value, double discount,
                         double gae_lambda) {
  if (rewards.size() != values.size())
    throw std::invalid_argument("rewards/values length mismatch");
  const std::size_t n = rewards.size();
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double gae = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double next_v = (t + 1 < n) ? values[t + 1] : bootstrap_value;
    const double delta = rewards[t] + discount * next_v - values[t];
    gae = delta + discount * gae_lambda * gae;
    out.advantages[t] = gae;
    out.returns[t] = gae + values[t];
  }
  return out;
}

void normalize_advantages(std::vector<double>& adv) {
  if (adv.empty()) return;
  double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / adv.size();
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  var /= adv.size();
  const double stdev = std::sqrt(std::max(var, 1e-16));
  for (double& a : adv) a = (a - mean) / stdev;
}

double ppo_policy_loss(const PolicyNet& policy, const PPOBatch& batch,
                       const PPOConfig& cfg) {
  double loss = 0.0;
  for (std::size_t t = 0; t < batch.steps.size(); ++t) {
    const TrajectoryStep& st = *batch.steps[t];
    const std::vector<double> mean = policy.mean_net.forward(st.features);
    const double lp = gaussian_log_prob(st.raw, mean, policy.log_std);
    const double ratio = std::exp(lp - st.log_prob);
    const double a = batch.advantages[t];
    const double clipped =
        std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * a;
    loss -= std::min(ratio * a, clipped);
  }
  loss /= static_cast<double>(batch.steps.size());
  double entropy = 0.0;
  for (double ls : policy.log_std)
    entropy += ls + 0.5 * (1.0 + kLog2Pi);
  return loss - cfg.entropy_coef * entropy;
}

double ppo_policy_loss_grad(const PolicyNet& policy, const PPOBatch& batch,
                            const PPOConfig& cfg, Gradients& net_grads,
                            std::vector<double>& log_std_grads) {
  const std::size_t m = batch.steps.size();
  net_grads = policy.mean_net.zero_gradients();
  log_std_grads.assign(policy.log_std.size(), 0.0);
  double loss = 0.0;
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t t = 0; t < m; ++t) {
    const TrajectoryStep& st = *batch.steps[t];
    ForwardCache cache;
    const std::vector<double> mean = policy.mean_net.forward(st.features, &cache);
    const double lp = gaussian_log_prob(st.raw, mean, policy.log_std);
    const double ratio = std::exp(lp - st.log_prob);
    const double a = batch.advantages[t];
    const double lo = 1.0 - cfg.clip_eps, hi = 1.0 + cfg.clip_eps;
    const double clipped = std::clamp(ratio, lo, hi) * a;
    const double surr = ratio * a;
    loss -= inv_m * std::min(surr, clipped);
    // Gradient flows through the unclipped branch only when it is the active
    // minimum; exactly at a tie both branches agree locally.
    double dloss_dlp = 0.0;
    if (surr <= clipped) dloss_dlp = -inv_m * a * ratio;
    if (dloss_dlp != 0.0) {
      std::vector<double> dmean(mean.size());
      for (std::size_t i = 0; i < mean.size(); ++i) {
        const double s2 = std::exp(2.0 * policy.log_std[i]);
        const double diff = st.raw[i] - mean[i];
        dmean[i] = dloss_dlp * diff / s2;  // d lp / d mean_i = diff / s^2
        log_std_grads[i] += dloss_dlp * (diff * diff / s2 - 1.0);
      }
      const Gradients g = policy.mean_net.backward(cache, dmean);
      net_grads.add(g);
    }
  }
  for (std::size_t i = 0; i < policy.log_std.size(); ++i)
    log_std_grads[i] -= cfg.entropy_coef;
  double entropy = 0.0;
  for (double ls : policy.log_std) entropy += ls + 0.5 * (1.0 + kLog2Pi);
  return loss - cfg.entropy_coef * entropy;
}

double value_loss(const DenseNetwork& value_net, const PPOBatch& batch) {
  double loss = 0.0;
  for (std::size_t t = 0; t < batch.steps.size(); ++t) {
    const double v = value_net.forward(batch.steps[t]->features)[0];
    const double d = v - batch.returns[t];
    loss += d * d;
  }
  return loss / static_cast<double>(batch.steps.size());
}

double value_loss_grad(const DenseNetwork& value_net, const PPOBatch& batch,
                       Gradients& grads) {
  grads = value_net.zero_gradients();
  double loss = 0.0;
  const double inv_m = 1.0 / static_cast<double>(batch.steps.size());
  for (std::size_t t = 0; t < batch.steps.size(); ++t) {
    ForwardCache cache;
    const double v = value_net.forward(batch.steps[t]->features, &cache)[0];
    const double d = v - batch.returns[t];
    loss += inv_m * d * d;
    const Gradients g = value_net.backward(cache, {inv_m * 2.0 * d});
    grads.add(g);
  }
  return loss;
}

PPODiagnostics ppo_update(PolicyNet& policy, DenseNetwork& value_net,
                          PPOOptimizers& opts,
                          const std::vector<Trajectory>& trajectories,
                          const PPOConfig& cfg, Rng& rng) {
  PPODiagnostics diag;
  opts.policy.set_learning_rate(cfg.lr_policy);
  opts.log_std.set_learning_rate(cfg.lr_policy);
  opts.value.set_learning_rate(cfg.lr_value);
  std::vector<const TrajectoryStep*> all_steps;
  std::vector<double> all_adv, all_ret;
  for (const Trajectory& traj : trajectories) {
    std::vector<double> rewards, values;
    rewards.reserve(traj.steps.size());
    values.reserve(traj.steps.size());
    for (const auto& st : traj.steps) {
      rewards.push_back(st.reward);
      values.push_back(st.value);
    }
    GaeResult g = gae_advantages(rewards, values, traj.bootstrap_value,
                                 cfg.discount, cfg.gae_lambda);
    for (std::size_t t = 0; t < traj.steps.size(); ++t) {
      all_steps.push_back(&traj.steps[t]);
      all_adv.push_back(g.advantages[t]);
      all_ret.push_back(g.returns[t]);
    }
  }
  if (all_steps.empty()) throw std::invalid_argument("empty update batch");
  normalize_advantages(all_adv);

  // Pre-update diagnostics over the whole batch.
  {
    double sum_ratio = 0.0;
    int clipped_count = 0;
    PPOBatch whole{all_steps, all_adv, all_ret};
    for (std::size_t t = 0; t < all_steps.size(); ++t) {
      const std::vector<double> mean =
          policy.mean_net.forward(all_steps[t]->features);
      const double lp =
          gaussian_log_prob(all_steps[t]->raw, mean, policy.log_std);
      const double ratio = std::exp(lp - all_steps[t]->log_prob);
      sum_ratio += ratio;
      if (ratio < 1.0 - cfg.clip_eps || ratio > 1.0 + cfg.clip_eps)
        ++clipped_count;
    }
    diag.mean_ratio = sum_ratio / all_steps.size();
    diag.clip_fraction =
        static_cast<double>(clipped_count) / all_steps.size();
    diag.policy_loss = ppo_policy_loss(policy, whole, cfg);
    diag.value_loss = value_loss(value_net, whole);
    for (double ls : policy.log_std)
      diag.entropy += ls + 0.5 * (1.0 + kLog2Pi);
  }

  // Keep restore points in case a minibatch produces a non-finite loss.
  const DenseNetwork policy_backup = policy.mean_net;
  const std::vector<double> log_std_backup = policy.log_std;
  const DenseNetwork value_backup = value_net;

  const std::size_t n = all_steps.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t mb =
      std::min<std::size_t>(std::max(cfg.minibatch, 1), n);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t k = n; k > 1; --k)
      std::swap(order[k - 1], order[rng.below(k)]);
    for (std::size_t start = 0; start < n; start += mb) {
      const std::size_t end = std::min(start + mb, n);
      PPOBatch batch;
      for (std::size_t k = start; k < end; ++k) {
        batch.steps.push_back(all_steps[order[k]]);
        batch.advantages.push_back(all_adv[order[k]]);
        batch.returns.push_back(all_ret[order[k]]);
      }
      Gradients pg;
      std::vector<double> lsg;
      const double pl = ppo_policy_loss_grad(policy, batch, cfg, pg, lsg);
      Gradients vg;
      const double vl = value_loss_grad(value_net, batch, vg);
      bool finite = std::isfinite(pl) && std::isfinite(vl) && pg.finite();
      for (double g : lsg)
        if (!std::isfinite(g)) finite = false;
      if (!finite) {
        policy.mean_net = policy_backup;
        policy.log_std = log_std_backup;
        value_net = value_backup;
        diag.aborted_non_finite = true;
        return diag;
      }
      opts.policy.apply_update(policy.mean_net, pg);
      // log-std shares the policy learning rate but keeps its own moments;
      // a weightless bias-only layer adapts it to the optimizer interface.
      {
        DenseNetwork wrapper;
        wrapper.layers().push_back(DenseLayer{0, policy.log_std.size(),
                                              std::vector<double>(),
                                              policy.log_std,
                                              Activation::identity});
        Gradients g;
        g.layers.resize(1);
        g.layers[0].b = lsg;
        opts.log_std.apply_update(wrapper, g);
        policy.log_std = wrapper.layers()[0].b;
      }
      policy.clamp_log_std();
      opts.value.apply_update(value_net, vg);
    }
  }
  return diag;
}

Agent::Agent(const EnvConfig& cfg, double r_max_bps, std::uint64_t seed)
    : featurizer(cfg),
      weights(cfg.n_users, 0.0),
      window(cfg.n_users, 100),
      rng(seed) {
  Rng init = Rng(seed).fork(0x706f6c);
  policy = make_policy(cfg.n_users, r_max_bps, init);
  value_net = make_value_net(cfg.n_users, init);
}

namespace {

EpochStats run_epoch(Agent& agent, Environment& env, SlotState& state,
                     const TrainSetup& setup, bool learn, bool deterministic,
                     int epoch_index) {
  const EnvConfig& cfg = env.config();
  Trajectory traj;
  traj.steps.reserve(setup.ppo.rollout_slots);
  EpochStats stats;
  stats.epoch = epoch_index;
  double delay_sum = 0.0;
  std::int64_t delay_count = 0;

  ReducerTolerances rtol = setup.reducer;
  if (!rtol.total_power_cap_w) rtol.total_power_cap_w = cfg.max_bs_power_w;

  std::vector<double> warm_lambda;
  for (int s = 0; s < setup.ppo.rollout_slots; ++s) {
    TrajectoryStep st;
    st.features = agent.featurizer(state);
    ActResult a = act(agent.policy, st.features, agent.rng, deterministic);
    st.raw = std::move(a.raw);
    st.r_desired_bps = std::move(a.r_desired_bps);
    st.log_prob = a.log_prob;
    st.value = agent.value_net.forward(st.features)[0];

    ReduceResult red = reduce(st.r_desired_bps, state.gains, cfg,
                              cfg.rate_model, rtol, &warm_lambda);
    warm_lambda = red.dual.lambda;
    auto [fb, next_state] = env.step(red.alloc);

    agent.window.push(SlotCounts{fb.delivered, fb.late});
    ReliabilityEstimate rel = agent.window.estimate();
    agent.weights =
        update_weights(agent.weights, rel.gamma, cfg.target_reliability);
    const double raw_reward =
        reward(agent.weights, rel.gamma, fb.total_power_w, setup.reward_cfg);
    agent.reward_scale_ema =
        0.99 * agent.reward_scale_ema + 0.01 * std::abs(raw_reward);
    st.reward = raw_reward / std::max(agent.reward_scale_ema, 1e-6);

    stats.mean_reward += raw_reward;
    stats.mean_power_w += fb.total_power_w;
    for (const auto& d : fb.departures) {
      delay_sum += d.delay_s;
      ++delay_count;
    }
    stats.gamma = rel.gamma;

    traj.steps.push_back(std::move(st));
    state = std::move(next_state);
  }
  stats.mean_reward /= setup.ppo.rollout_slots;
  stats.mean_power_w /= setup.ppo.rollout_slots;
  stats.mean_delay_s = delay_count > 0 ? delay_sum / delay_count : 0.0;
  stats.departures = delay_count;

  if (learn) {
    traj.bootstrap_value = agent.value_net.forward(agent.featurizer(state))[0];
    std::vector<Trajectory> batch;
    batch.push_back(std::move(traj));
    ppo_update(agent.policy, agent.value_net, agent.opts, batch, setup.ppo,
               agent.rng);
  }
  return stats;
}

}  // namespace

std::vector<EpochStats> train(Agent& agent, Environment& env, SlotState& state,
                              const TrainSetup& setup) {
  std::vector<EpochStats> curve;
  curve.reserve(setup.epochs);
  for (int e = 0; e < setup.epochs; ++e)
    curve.push_back(run_epoch(agent, env, state, setup, true, false, e));
  return curve;
}

std::vector<EpochStats> evaluate(Agent& agent, Environment& env,
                                 SlotState& state, const TrainSetup& setup,
                                 int epochs, bool deterministic) {
  std::vector<EpochStats> curve;
  curve.reserve(epochs);
  for (int e = 0; e < epochs; ++e)
    curve.push_back(
        run_epoch(agent, env, state, setup, false, deterministic, e));
  return curve;
}

std::string policy_to_json(const PolicyNet& policy, const Featurizer& f) {
  nlohmann::json j = {
      {"format", "policy-v1"},
      {"mean_net", nlohmann::json::parse(network_to_json(policy.mean_net))},
      {"log_std", policy.log_std},
      {"r_max_bps", policy.r_max_bps},
      {"featurizer",
       {{"run_max_count", f.run_max_count()},
        {"run_max_bits", f.run_max_bits()}}}};
  return j.dump();
}

PolicyNet policy_from_json(const std::string& text, Featurizer* f) {
  nlohmann::json j = nlohmann::json::parse(text);
  if (j.at("format").get<std::string>() != "policy-v1")
    throw std::invalid_argument("unknown policy format");
  PolicyNet p;
  p.mean_net = network_from_json(j.at("mean_net").dump());
  p.log_std = j.at("log_std").get<std::vector<double>>();
  p.r_max_bps = j.at("r_max_bps").get<double>();
  if (f) {
    f->restore(j.at("featurizer").at("run_max_count").get<double>(),
               j.at("featurizer").at("run_max_bits").get<double>());
  }
  return p;
}

}  // namespace urllc

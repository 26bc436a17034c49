#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "urllc/env.hpp"
#include "urllc/metrics.hpp"
#include "urllc/nnet.hpp"
#include "urllc/reducer.hpp"

namespace urllc {

// Turns a SlotState into 4 features per user: arrival count and mean packet
// size (each normalized by a running maximum), and the mean and max over RBs
// of log(1 + h_ij * P_ref / sigma2). Stateful because of the running maxima.
class Featurizer {
 public:
  explicit Featurizer(const EnvConfig& cfg)
      : n_users_(cfg.n_users),
        p_ref_w_(cfg.max_bs_power_w / cfg.n_rbs),
        sigma2_(cfg.sigma2_w()) {}

  std::vector<double> operator()(const SlotState& s);

  static std::size_t feature_count(int n_users) {
    return static_cast<std::size_t>(n_users) * 4;
  }

  double run_max_count() const { return run_max_count_; }
  double run_max_bits() const { return run_max_bits_; }
  void restore(double rm_count, double rm_bits) {
    run_max_count_ = rm_count;
    run_max_bits_ = rm_bits;
  }

 private:
  int n_users_;
  double p_ref_w_;
  double sigma2_;
  double run_max_count_ = 1.0;
  double run_max_bits_ = 1.0;
};

// Diagonal-Gaussian policy in raw action space; desired rates are the
// sigmoid-squashed raw actions scaled by r_max.
struct PolicyNet {
  DenseNetwork mean_net;
  std::vector<double> log_std;
  double r_max_bps = 1.0;

  static constexpr double kLogStdMin = -5.0;
  static constexpr double kLogStdMax = 2.0;

  int action_dim() const { return static_cast<int>(log_std.size()); }
  void clamp_log_std();
};

PolicyNet make_policy(int n_users, double r_max_bps, Rng& rng,
                      int hidden = 64);
DenseNetwork make_value_net(int n_users, Rng& rng, int hidden = 64);

// Squash ceiling: the whole band granted to the best mean channel at full
// power. Keeps every desired rate the reducer sees feasible by construction.
double squash_ceiling_bps(const EnvConfig& cfg,
                          const std::vector<Point2D>& positions);

struct ActResult {
  std::vector<double> raw;
  std::vector<double> r_desired_bps;
  double log_prob = 0.0;
};

ActResult act(const PolicyNet& policy, const std::vector<double>& features,
              Rng& rng, bool deterministic = false);

double gaussian_log_prob(const std::vector<double>& raw,
                         const std::vector<double>& mean,
                         const std::vector<double>& log_std);

struct TrajectoryStep {
  std::vector<double> features;
  std::vector<double> raw;
  std::vector<double> r_desired_bps;
  double log_prob = 0.0;
  double reward = 0.0;
  double value = 0.0;
};

struct Trajectory {
  std::vector<TrajectoryStep> steps;
  double bootstrap_value = 0.0;
};

struct PPOConfig {
  double clip_eps = 0.2;
  double discount = 0.99;
  double gae_lambda = 0.95;
  int epochs = 4;
  int minibatch = 64;
  double lr_policy = 3e-4;
  double lr_value = 1e-3;
  int rollout_slots = 512;
  double entropy_coef = 0.01;
};

struct GaeResult {
  std::vector<double> advantages;  // raw (un-normalized)
  std::vector<double> returns;
};

GaeResult gae_advantages(const std::vector<double>& rewards,
                         const std::vector<double>& values,
                         double bootstrap_value, double discount,
                         double gae_lambda);

void normalize_advantages(std::vector<double>& adv);

// Batch view used by the update and by gradient tests.
struct PPOBatch {
  std::vector<const TrajectoryStep*> steps;
  std::vector<double> advantages;  // aligned, already normalized
  std::vector<double> returns;
};

// Mean clipped-surrogate policy loss (negated objective, entropy included)
// over the batch, and its exact gradient w.r.t. mean-net parameters and
// log-std entries.
double ppo_policy_loss(const PolicyNet& policy, const PPOBatch& batch,
                       const PPOConfig& cfg);
double ppo_policy_loss_grad(const PolicyNet& policy, const PPOBatch& batch,
                            const PPOConfig& cfg, Gradients& net_grads,
                            std::vector<double>& log_std_grads);
double value_loss(const DenseNetwork& value_net, const PPOBatch& batch);
double value_loss_grad(const DenseNetwork& value_net, const PPOBatch& batch,
                       Gradients& grads);

struct PPODiagnostics {
  double mean_ratio = 1.0;
  double clip_fraction = 0.0;
  double value_loss = 0.0;
  double policy_loss = 0.0;
  double entropy = 0.0;
  bool aborted_non_finite = false;
};

struct PPOOptimizers {
  Optimizer policy{OptimizerKind::adam, 3e-4};
  Optimizer log_std{OptimizerKind::adam, 3e-4};
  Optimizer value{OptimizerKind::adam, 1e-3};
};

PPODiagnostics ppo_update(PolicyNet& policy, DenseNetwork& value_net,
                          PPOOptimizers& opts,
                          const std::vector<Trajectory>& trajectories,
                          const PPOConfig& cfg, Rng& rng);

// Closed training loop: featurize -> act -> reduce -> step -> reward ->
// collect -> update, one update per epoch.
struct TrainSetup {
  PPOConfig ppo;
  ReducerTolerances reducer;
  RewardConfig reward_cfg;
  int reliability_window_slots = 100;
  int epochs = 100;
  std::uint64_t seed = 1;
};

struct EpochStats {
  int epoch = 0;
  double mean_reward = 0.0;        // raw (un-normalized) reward mean
  std::vector<double> gamma;       // end-of-epoch pooled reliability
  double mean_power_w = 0.0;
  double mean_delay_s = 0.0;
  std::int64_t departures = 0;
};

// Mutable loop state so callers can pretrain, swap environments, and resume.
struct Agent {
  PolicyNet policy;
  DenseNetwork value_net;
  PPOOptimizers opts;
  Featurizer featurizer;
  std::vector<double> weights;       // reliability weights w_i
  ReliabilityWindow window;
  double reward_scale_ema = 1.0;
  Rng rng;

  Agent(const EnvConfig& cfg, double r_max_bps, std::uint64_t seed);
};

// Runs `epochs` rollout+update cycles of `setup.ppo.rollout_slots` slots on
// env, continuing from the agent's current state.
std::vector<EpochStats> train(Agent& agent, Environment& env, SlotState& state,
                              const TrainSetup& setup);

// Same loop without learning (frozen policy; deterministic actions optional).
std::vector<EpochStats> evaluate(Agent& agent, Environment& env,
                                 SlotState& state, const TrainSetup& setup,
                                 int epochs, bool deterministic);

std::string policy_to_json(const PolicyNet& policy, const Featurizer& f);
PolicyNet policy_from_json(const std::string& text, Featurizer* f = nullptr);

}  // namespace urllc

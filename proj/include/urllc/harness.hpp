#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "urllc/env.hpp"
#include "urllc/ppo.hpp"
#include "urllc/refiner.hpp"

namespace urllc {

// ---------------------------------------------------------------- config

// Complete run description with every tunable at its default. Desk-scale
// environment (5 users, 12 RBs) so the default document runs in seconds.
nlohmann::json default_config();

// Parses the file and overlays it onto default_config(), so partial
// documents are valid and unknown keys are rejected.
nlohmann::json load_config(const std::string& path);

// Applies one "dotted.path=value" assignment. The value is parsed as JSON
// when possible (numbers, booleans, arrays), otherwise taken as a string.
// The path must already exist in the document.
void apply_override(nlohmann::json& cfg, const std::string& assignment);

// 64-bit FNV-1a of the canonical dump, as fixed-width hex.
std::string config_hash(const nlohmann::json& cfg);

EnvConfig env_config_from_json(const nlohmann::json& root);
PPOConfig ppo_config_from_json(const nlohmann::json& root);
RefinerConfig refiner_config_from_json(const nlohmann::json& root);
VirtualEnvSpec virtual_env_spec_from_json(const nlohmann::json& root);
ReducerTolerances reducer_tolerances_from_json(const nlohmann::json& root);
RewardConfig reward_config_from_json(const nlohmann::json& root);
std::vector<std::uint64_t> seeds_from_json(const nlohmann::json& root);

// ------------------------------------------------------------ small utils

// Shortest decimal string that round-trips the double exactly.
std::string format_double(double x);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// Linear-interpolation percentile, q in [0, 1]. Copies and sorts.
double percentile(std::vector<double> v, double q);
double median(std::vector<double> v);

// Worker cap: URLLC_LAB_THREADS when set (>= 1), else hardware concurrency.
int thread_budget();

// Runs fn(0..n-1) across up to thread_budget() workers. Rethrows the first
// worker exception. Callers own any ordering of the results; indices are
// handed out dynamically but each index runs exactly once.
void for_each_index_parallel(std::size_t n,
                             const std::function<void(std::size_t)>& fn);

// --------------------------------------------------------- trace ingestion

struct TraceSession {
  std::string session_id;
  std::int64_t packet_count = 0;
  double mean_size_bytes = 0.0;
  double mean_iat_us = 0.0;
};

// Strict CSV parse: exact header, 4 fields per row, counts >= 1, means > 0.
// Errors carry the 1-based line number. An empty file (no data rows) fails.
std::vector<TraceSession> parse_trace_csv(const std::string& path);

struct IngestResult {
  std::vector<std::vector<Packet>> per_user;  // ascending arrival times
  std::int64_t total_packets = 0;
  // Extremeness thresholds computed two ways: over expanded packets and over
  // session means (the session/packet ambiguity is reported, not resolved).
  double packet_iat_p20_s = 0.0;
  double packet_size_p78_bits = 0.0;
  double session_iat_p20_s = 0.0;
  double session_size_p78_bits = 0.0;
};

// Expands each session to packet_count packets (exponential IATs and sizes
// at the session means, seeded), concatenates sessions in file order, and
// assigns them to users round-robin by session index.
IngestResult ingest_trace(const std::string& path, int n_users,
                          std::uint64_t seed);
IngestResult ingest_sessions(const std::vector<TraceSession>& sessions,
                             int n_users, std::uint64_t seed);

// Looping replay sources over pre-expanded packets.
std::vector<TrafficStream> replay_sources(
    const std::vector<std::vector<Packet>>& per_user);

struct ExtremeStream {
  std::vector<std::vector<Packet>> per_user;
  double offered_bps = 0.0;   // after scaling
  double iat_scale = 1.0;     // applied to hit the target load
  int session_count = 0;
};

// Sessions that are jointly extreme (mean IAT below the 20th percentile,
// mean size above the 78th percentile of session means), expanded and
// IAT-scaled so the offered rate is load_fraction * capacity_bps.
ExtremeStream extreme_slice(const std::vector<TraceSession>& sessions,
                            int n_users, double load_fraction,
                            double capacity_bps, std::uint64_t seed);

// Deterministic capacity estimate: all RBs at equal power split, mean
// pathloss taken at a quarter of the cell side.
double estimate_capacity_bps(const EnvConfig& cfg);

// ------------------------------------------------------ baseline controller

// Policy-free rate rule: request enough to drain the backlog within half the
// delay budget, plus a smoothed estimate of the arrival rate.
class BaselineController {
 public:
  explicit BaselineController(const EnvConfig& cfg);

  std::vector<double> desired_rates(const Environment& env,
                                    const SlotState& state);

 private:
  double slot_s_;
  double cap_bps_;
  std::vector<double> horizon_s_;
  std::vector<double> ema_bps_;
};

struct RunSummary {
  std::vector<double> gamma;  // pooled over post-warmup slots
  double mean_delay_s = 0.0;
  double mean_power_w = 0.0;
  double mean_reward = 0.0;
  std::int64_t departures = 0;
  std::int64_t late = 0;
};

struct BaselineRun {
  std::vector<EpochStats> epochs;  // blocks of epoch_len slots
  RunSummary summary;
};

BaselineRun run_baseline(Environment& env, SlotState& state,
                         BaselineController& ctrl, int total_slots,
                         int warmup_slots, int epoch_len,
                         const ReducerTolerances& rtol,
                         const RewardConfig& rcfg);

// --------------------------------------------------------- agent checkpoint

// Policy + value net + optimizer state + reliability weights. The RNG resumes
// from the stored seed (a fresh stream, not the interrupted one).
std::string agent_to_json(const Agent& agent);
void agent_from_json(const std::string& text, Agent& agent);

// -------------------------------------------------------------- scenarios

enum class AgentVariant { vanilla, synthetic, real_only, experienced };
std::string variant_name(AgentVariant v);

struct RecoveryOutcome {
  AgentVariant variant = AgentVariant::vanilla;
  std::uint64_t seed = 0;
  std::vector<EpochStats> pre;
  std::vector<EpochStats> post;
  int recovery_epochs = -1;  // post-switch epochs until back in band
  bool recovered = false;
};

// First post epoch whose reward reaches the trailing pre-switch mean minus
// band * |mean| (one-sided: doing better than before counts as recovered).
// Returns post.size() + 1 when the band is never reached.
int epochs_to_recovery(const std::vector<EpochStats>& pre,
                       const std::vector<EpochStats>& post,
                       int trailing_epochs, double band);

// One arm of the four-agent comparison: variant-specific pretraining, a
// common deployment phase, the traffic switch, and the recovery phase.
RecoveryOutcome run_recovery_arm(const nlohmann::json& cfg,
                                 AgentVariant variant, std::uint64_t seed);

// Mean per-call allocation error over random demanding instances at the
// given environment scale.
double mean_reducer_error(const EnvConfig& cfg, int draws, std::uint64_t seed);

struct SweepRow {
  std::vector<std::pair<std::string, double>> factors;
  std::uint64_t seed = 0;
  RunSummary summary;
};

// All grid points of one sweep scenario under a single seed.
std::vector<SweepRow> run_sweep_rows(const nlohmann::json& cfg,
                                     const std::string& scenario,
                                     std::uint64_t seed);

// Executes a scenario end to end and writes config.json, the per-run CSV
// artifacts, and summary.json into out_dir.
void run_scenario(const nlohmann::json& cfg, const std::string& scenario,
                  const std::string& out_dir);

// Aggregates a finished run directory into per-figure CSV tables under
// <run_dir>/plots. Deterministic: re-running emits byte-identical files.
void emit_plot_data(const std::string& run_dir);

// One-shot solver on an explicit problem document (gains + desired rates).
nlohmann::json reduce_problem_json(const nlohmann::json& problem);

// Feature rows for refiner training: [log IAT, log size, log gain] per
// packet, gains drawn from the configured channel model at the user's
// position. Capped at max_rows rows.
Matrix real_feature_matrix(const IngestResult& ingest, const EnvConfig& cfg,
                           const std::vector<Point2D>& positions,
                           std::uint64_t seed, std::size_t max_rows = 20000);

// Row-wise standardization of a feature matrix.
Matrix standardize_rows(const Matrix& m, const StandardizeStats& stats);

// Standardized-log-space sampler of the synthetic base distribution.
SynthSampler synth_base_sampler(const VirtualEnvSpec& spec,
                                const StandardizeStats& stats);

}  // namespace urllc

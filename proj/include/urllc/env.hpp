#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <vector>

#include "urllc/rate.hpp"
#include "urllc/rng.hpp"

namespace urllc {

struct Packet {
  int user_id = 0;
  double arrival_time_s = 0.0;
  std::int64_t size_bits = 1;
  std::optional<double> departure_time_s;
};

struct Point2D {
  double x = 0.0;
  double y = 0.0;
};

struct ChannelState {
  int n_users = 0;
  int n_rbs = 0;
  std::vector<double> gains;  // row-major N x K
  std::int64_t slot_index = 0;

  ChannelState() = default;
  ChannelState(int n, int k)
      : n_users(n), n_rbs(k), gains(static_cast<std::size_t>(n) * k, 0.0) {}

  double& at(int i, int j) { return gains[static_cast<std::size_t>(i) * n_rbs + j]; }
  double at(int i, int j) const {
    return gains[static_cast<std::size_t>(i) * n_rbs + j];
  }
};

struct EnvConfig {
  int n_users = 20;
  int n_rbs = 250;
  double rb_bandwidth_hz = 180e3;
  double noise_psd_w_per_hz = 4.0738027780411273e-21;  // -173.9 dBm/Hz
  double slot_duration_s = 1e-3;
  double max_bs_power_w = 4.0;
  double cell_side_m = 500.0;
  double pathloss_exponent = 3.0;
  double carrier_hz = 2e9;
  std::vector<double> d_max_s;              // per-user delay budget
  std::vector<double> target_reliability;   // per-user gamma*
  RateModel rate_model = RateModel::shannon();

  double sigma2_w() const { return rb_bandwidth_hz * noise_psd_w_per_hz; }
  double total_bandwidth_hz() const { return rb_bandwidth_hz * n_rbs; }
  // Broadcast helpers: scalars fill the per-user vectors.
  void set_uniform_delay_budget(double d) { d_max_s.assign(n_users, d); }
  void set_uniform_target(double g) { target_reliability.assign(n_users, g); }
};

// Mean received power gain at distance d: free-space anchor at d_ref = 1 m,
// then d^-eta decay. Distances below d_ref clamp to d_ref.
double pathloss(const EnvConfig& cfg, double distance_m);

ChannelState generate_channel(const EnvConfig& cfg,
                              const std::vector<Point2D>& positions,
                              std::int64_t slot, Rng& rng);

// One user's packet generator. All modes produce arrivals strictly ordered in
// time; identical seeds reproduce identical streams.
class TrafficStream {
 public:
  using CustomDraw = std::function<void(Rng&, double& iat_s, std::int64_t& size_bits)>;

  static TrafficStream poisson(int user, double mean_iat_s,
                               double mean_size_bits, std::uint64_t seed);
  static TrafficStream deterministic(int user, double iat_s,
                                     std::int64_t size_bits);
  // Replays pre-expanded packets (absolute arrival times, ascending). When
  // loop is set the stream restarts after the last packet, shifted in time.
  static TrafficStream trace(int user, std::vector<Packet> packets,
                             bool loop = true);
  // Draws (IAT, size) pairs from an arbitrary sampler.
  static TrafficStream custom(int user, CustomDraw draw, std::uint64_t seed);

  // Arrivals with t0 <= arrival_time < t1.
  std::vector<Packet> generate(double t0, double t1);

  int user() const { return user_; }

 private:
  enum class Mode { poisson, deterministic, trace, custom };
  TrafficStream(Mode mode, int user, std::uint64_t seed)
      : mode_(mode), user_(user), rng_(seed) {}

  double next_arrival_time();

  Mode mode_;
  int user_;
  Rng rng_;
  double mean_iat_s_ = 0.0;
  double mean_size_bits_ = 0.0;
  std::int64_t fixed_size_bits_ = 0;
  CustomDraw draw_;
  std::vector<Packet> trace_;
  std::size_t trace_pos_ = 0;
  double trace_offset_s_ = 0.0;
  bool loop_ = true;
  bool primed_ = false;
  double next_time_ = 0.0;
  std::int64_t next_size_ = 0;
};

// FIFO queue with integer-bit accounting. Fractional slot capacity carries
// over as credit while the queue is busy and resets when it drains, so no
// user banks service it never used.
class UserQueue {
 public:
  void push(const Packet& p);

  // Serves up to capacity_bits (plus carried credit) in FIFO order. Packets
  // whose last bit is served depart at slot_end_time_s. Returns departures.
  std::vector<Packet> serve(double capacity_bits, double slot_end_time_s);

  std::int64_t backlog_bits() const { return backlog_bits_; }
  std::size_t packet_count() const { return q_.size(); }
  bool empty() const { return q_.empty(); }
  double oldest_arrival_s() const;

 private:
  struct Entry {
    Packet packet;
    std::int64_t served_bits = 0;
  };
  std::deque<Entry> q_;
  std::int64_t backlog_bits_ = 0;
  double credit_bits_ = 0.0;
};

struct SlotState {
  std::vector<std::int64_t> arrival_counts;
  std::vector<double> mean_packet_bits;
  ChannelState gains;
};

struct Departure {
  int user = 0;
  double delay_s = 0.0;
};

struct SlotFeedback {
  std::vector<std::int64_t> delivered;  // mu_i(t)
  std::vector<std::int64_t> late;       // mu'_i(t)
  std::vector<double> achieved_rate_bps;
  double total_power_w = 0.0;
  std::vector<Departure> departures;
};

// Pure service step: computes per-user rates from the allocation and channel,
// drains queues for one slot ending at slot_end_time_s, and accounts
// departures against the per-user delay budgets.
SlotFeedback serve_slot(std::vector<UserQueue>& queues, const Allocation& alloc,
                        const ChannelState& channel, const EnvConfig& cfg,
                        double slot_end_time_s);

// Full discrete-slot environment: owns queues, traffic streams, channel
// generation, and the slot clock. Deterministic under (config, seed).
class Environment {
 public:
  using GainSampler =
      std::function<double(int user, int rb, std::int64_t slot, Rng&)>;

  Environment(EnvConfig cfg, std::vector<TrafficStream> sources,
              std::uint64_t seed);

  // Replaces the default pathloss+fading channel draw (virtual environments).
  void set_gain_sampler(GainSampler sampler) { gain_sampler_ = std::move(sampler); }

  const EnvConfig& config() const { return cfg_; }
  const std::vector<Point2D>& positions() const { return positions_; }
  std::int64_t slot() const { return slot_; }
  double now_s() const { return static_cast<double>(slot_) * cfg_.slot_duration_s; }

  // Draws the slot-0 channel and returns the initial state (no arrivals yet).
  SlotState reset();

  // Serves the current slot under alloc, admits this slot's arrivals, then
  // advances the clock and draws the next channel.
  std::pair<SlotFeedback, SlotState> step(const Allocation& alloc);

  std::int64_t total_arrived_bits() const { return arrived_bits_; }
  std::int64_t total_served_bits() const { return served_bits_; }
  std::int64_t total_backlog_bits() const;
  const std::vector<UserQueue>& queues() const { return queues_; }

 private:
  ChannelState draw_channel(std::int64_t slot);

  EnvConfig cfg_;
  std::vector<TrafficStream> sources_;
  std::vector<UserQueue> queues_;
  std::vector<Point2D> positions_;
  Rng rng_;
  Rng channel_rng_;
  GainSampler gain_sampler_;
  ChannelState current_channel_;
  std::int64_t slot_ = 0;
  std::int64_t arrived_bits_ = 0;
  std::int64_t served_bits_ = 0;
};

// Uniform positions in the cell square (BS at the center).
std::vector<Point2D> draw_positions(const EnvConfig& cfg, Rng& rng);

// Poisson sources with common parameters for every user.
std::vector<TrafficStream> make_poisson_sources(const EnvConfig& cfg,
                                                double mean_iat_s,
                                                double mean_size_bits,
                                                std::uint64_t seed);

}  // namespace urllc

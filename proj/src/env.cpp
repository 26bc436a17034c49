#include "urllc/env.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace urllc {

namespace {
constexpr double kSpeedOfLight = 299792458.0;
}

double pathloss(const EnvConfig& cfg, double distance_m) {
  const double d_ref = 1.0;
  const double d = std::max(distance_m, d_ref);
  const double anchor =
      kSpeedOfLight / (4.0 * std::numbers::pi * cfg.carrier_hz * d_ref);
  return anchor * anchor * std::pow(d_ref / d, cfg.pathloss_exponent);
}

ChannelState generate_channel(const EnvConfig& cfg,
                              const std::vector<Point2D>& positions,
                              std::int64_t slot, Rng& rng) {
  if (static_cast<int>(positions.size()) != cfg.n_users)
    throw std::invalid_argument("positions do not match n_users");
  ChannelState ch(cfg.n_users, cfg.n_rbs);
  ch.slot_index = slot;
  const double half = cfg.cell_side_m / 2.0;
  for (int i = 0; i < cfg.n_users; ++i) {
    const double dx = positions[i].x - half;
    const double dy = positions[i].y - half;
    const double pl = pathloss(cfg, std::sqrt(dx * dx + dy * dy));
    for (int j = 0; j < cfg.n_rbs; ++j) {
      ch.at(i, j) = pl * rng.exponential(1.0);  // unit-mean fading power
    }
  }
  return ch;
}

TrafficStream TrafficStream::poisson(int user, double mean_iat_s,
                                     double mean_size_bits,
                                     std::uint64_t seed) {
  if (mean_iat_s <= 0.0 || mean_size_bits <= 0.0)
    throw std::invalid_argument("poisson source needs positive means");
  TrafficStream s(Mode::poisson, user, seed);
  s.mean_iat_s_ = mean_iat_s;
  s.mean_size_bits_ = mean_size_bits;
  return s;
}

TrafficStream TrafficStream::deterministic(int user, double iat_s,
                                           std::int64_t size_bits) {
  if (iat_s <= 0.0 || size_bits <= 0)
    throw std::invalid_argument("deterministic source needs positive IAT/size");
  TrafficStream s(Mode::deterministic, user, 0);
  s.mean_iat_s_ = iat_s;
  s.fixed_size_bits_ = size_bits;
  return s;
}

TrafficStream TrafficStream::trace(int user, std::vector<Packet> packets,
                                   bool loop) {
  TrafficStream s(Mode::trace, user, 0);
  s.trace_ = std::move(packets);
  s.loop_ = loop;
  for (std::size_t k = 1; k < s.trace_.size(); ++k) {
    if (s.trace_[k].arrival_time_s < s.trace_[k - 1].arrival_time_s)
      throw std::invalid_argument("trace arrival times must be ascending");
  }
  return s;
}

TrafficStream TrafficStream::custom(int user, CustomDraw draw,
                                    std::uint64_t seed) {
  TrafficStream s(Mode::custom, user, seed);
  s.draw_ = std::move(draw);
  return s;
}

double TrafficStream::next_arrival_time() {
  switch (mode_) {
    case Mode::poisson: {
      const double iat = rng_.exponential(mean_iat_s_);
      next_size_ = std::max<std::int64_t>(
          1, static_cast<std::int64_t>(std::ceil(rng_.exponential(mean_size_bits_))));
      return next_time_ + iat;
    }
    case Mode::deterministic:
      next_size_ = fixed_size_bits_;
      return next_time_ + mean_iat_s_;
    case Mode::custom: {
      double iat = 0.0;
      std::int64_t size = 0;
      draw_(rng_, iat, size);
      if (!(iat > 0.0) || size <= 0)
        throw std::runtime_error("custom traffic draw produced non-positive IAT/size");
      next_size_ = size;
      return next_time_ + iat;
    }
    case Mode::trace: {
      if (trace_.empty()) return std::numeric_limits<double>::infinity();
      if (trace_pos_ >= trace_.size()) {
        if (!loop_) return std::numeric_limits<double>::infinity();
        // Restart the trace after the last packet; the first replayed packet
        // lands one mean-gap after the previous one.
        const double span = trace_.back().arrival_time_s;
        const double gap =
            trace_.size() > 1 ? span / static_cast<double>(trace_.size() - 1)
                              : std::max(span, 1e-3);
        trace_offset_s_ += span + gap - trace_.front().arrival_time_s;
        trace_pos_ = 0;
      }
      const Packet& p = trace_[trace_pos_++];
      next_size_ = p.size_bits;
      return p.arrival_time_s + trace_offset_s_;
    }
  }
  return std::numeric_limits<double>::infinity();
}

std::vector<Packet> TrafficStream::generate(double t0, double t1) {
  std::vector<Packet> out;
  if (!(t1 > t0)) return out;
  if (!primed_) {
    next_time_ = next_arrival_time();
    primed_ = true;
  }
  while (next_time_ < t1) {
    if (next_time_ >= t0) {
      Packet p;
      p.user_id = user_;
      p.arrival_time_s = next_time_;
      p.size_bits = next_size_;
      out.push_back(p);
    }
    next_time_ = next_arrival_time();
  }
  return out;
}

void UserQueue::push(const Packet& p) {
  if (p.size_bits <= 0) throw std::invalid_argument("packet must carry bits");
  q_.push_back(Entry{p, 0});
  backlog_bits_ += p.size_bits;
}

std::vector<Packet> UserQueue::serve(double capacity_bits,
                                     double slot_end_time_s) {
  std::vector<Packet> departed;
  if (q_.empty()) {
    credit_bits_ = 0.0;
    return departed;
  }
  credit_bits_ += std::max(capacity_bits, 0.0);
  std::int64_t budget = static_cast<std::int64_t>(std::floor(credit_bits_ + 1e-9));
  if (budget <= 0) return departed;
  credit_bits_ -= static_cast<double>(budget);

  while (budget > 0 && !q_.empty()) {
    Entry& e = q_.front();
    const std::int64_t need = e.packet.size_bits - e.served_bits;
    const std::int64_t take = std::min(need, budget);
    e.served_bits += take;
    backlog_bits_ -= take;
    budget -= take;
    if (e.served_bits == e.packet.size_bits) {
      e.packet.departure_time_s = slot_end_time_s;
      departed.push_back(e.packet);
      q_.pop_front();
    }
  }
  if (q_.empty()) credit_bits_ = 0.0;  // unused capacity is not banked
  return departed;
}

double UserQueue::oldest_arrival_s() const {
  if (q_.empty()) return std::numeric_limits<double>::infinity();
  return q_.front().packet.arrival_time_s;
}

SlotFeedback serve_slot(std::vector<UserQueue>& queues, const Allocation& alloc,
                        const ChannelState& channel, const EnvConfig& cfg,
                        double slot_end_time_s) {
  if (alloc.n_users != cfg.n_users || alloc.n_rbs != cfg.n_rbs ||
      channel.n_users != cfg.n_users || channel.n_rbs != cfg.n_rbs ||
      static_cast<int>(queues.size()) != cfg.n_users)
    throw std::invalid_argument("slot inputs disagree on dimensions");

  SlotFeedback fb;
  fb.delivered.assign(cfg.n_users, 0);
  fb.late.assign(cfg.n_users, 0);
  fb.achieved_rate_bps.assign(cfg.n_users, 0.0);
  const double sigma2 = cfg.sigma2_w();
  for (int j = 0; j < cfg.n_rbs; ++j) {
    const int i = alloc.rb_user[j];
    const double p = alloc.rb_power[j];
    fb.achieved_rate_bps[i] +=
        rate_of(p, channel.at(i, j), cfg.rb_bandwidth_hz, sigma2, cfg.rate_model);
    fb.total_power_w += p;
  }
  for (int i = 0; i < cfg.n_users; ++i) {
    const double capacity = fb.achieved_rate_bps[i] * cfg.slot_duration_s;
    for (const Packet& p : queues[i].serve(capacity, slot_end_time_s)) {
      const double delay = *p.departure_time_s - p.arrival_time_s;
      ++fb.delivered[i];
      if (delay > cfg.d_max_s[i]) ++fb.late[i];
      fb.departures.push_back(Departure{i, delay});
    }
  }
  return fb;
}

Environment::Environment(EnvConfig cfg, std::vector<TrafficStream> sources,
                         std::uint64_t seed)
    : cfg_(std::move(cfg)),
      sources_(std::move(sources)),
      rng_(seed),
      channel_rng_(Rng(seed).fork(0x636861)) {
  if (static_cast<int>(sources_.size()) != cfg_.n_users)
    throw std::invalid_argument("one traffic stream per user required");
  if (static_cast<int>(cfg_.d_max_s.size()) != cfg_.n_users ||
      static_cast<int>(cfg_.target_reliability.size()) != cfg_.n_users)
    throw std::invalid_argument("per-user delay budgets and targets required");
  queues_.resize(cfg_.n_users);
  positions_ = draw_positions(cfg_, rng_);
}

ChannelState Environment::draw_channel(std::int64_t slot) {
  if (!gain_sampler_) return generate_channel(cfg_, positions_, slot, channel_rng_);
  ChannelState ch(cfg_.n_users, cfg_.n_rbs);
  ch.slot_index = slot;
  for (int i = 0; i < cfg_.n_users; ++i)
    for (int j = 0; j < cfg_.n_rbs; ++j)
      ch.at(i, j) = gain_sampler_(i, j, slot, channel_rng_);
  return ch;
}

SlotState Environment::reset() {
  queues_.assign(cfg_.n_users, UserQueue{});
  slot_ = 0;
  arrived_bits_ = 0;
  served_bits_ = 0;
  current_channel_ = draw_channel(0);
  SlotState s;
  s.arrival_counts.assign(cfg_.n_users, 0);
  s.mean_packet_bits.assign(cfg_.n_users, 0.0);
  s.gains = current_channel_;
  return s;
}

std::pair<SlotFeedback, SlotState> Environment::step(const Allocation& alloc) {
  const double t0 = now_s();
  const double t1 = t0 + cfg_.slot_duration_s;
  const std::int64_t backlog_before = total_backlog_bits();
  SlotFeedback fb = serve_slot(queues_, alloc, current_channel_, cfg_, t1);
  served_bits_ += backlog_before - total_backlog_bits();

  SlotState next;
  next.arrival_counts.assign(cfg_.n_users, 0);
  next.mean_packet_bits.assign(cfg_.n_users, 0.0);
  for (auto& src : sources_) {
    for (const Packet& p : src.generate(t0, t1)) {
      queues_[p.user_id].push(p);
      arrived_bits_ += p.size_bits;
      ++next.arrival_counts[p.user_id];
      next.mean_packet_bits[p.user_id] += static_cast<double>(p.size_bits);
    }
  }
  for (int i = 0; i < cfg_.n_users; ++i) {
    if (next.arrival_counts[i] > 0)
      next.mean_packet_bits[i] /= static_cast<double>(next.arrival_counts[i]);
  }

  ++slot_;
  current_channel_ = draw_channel(slot_);
  next.gains = current_channel_;
  return {std::move(fb), std::move(next)};
}

std::int64_t Environment::total_backlog_bits() const {
  std::int64_t b = 0;
  for (const auto& q : queues_) b += q.backlog_bits();
  return b;
}

std::vector<Point2D> draw_positions(const EnvConfig& cfg, Rng& rng) {
  std::vector<Point2D> pos(cfg.n_users);
  for (auto& p : pos) {
    p.x = rng.uniform(0.0, cfg.cell_side_m);
    p.y = rng.uniform(0.0, cfg.cell_side_m);
  }
  return pos;
}

std::vector<TrafficStream> make_poisson_sources(const EnvConfig& cfg,
                                                double mean_iat_s,
                                                double mean_size_bits,
                                                std::uint64_t seed) {
  std::vector<TrafficStream> out;
  out.reserve(cfg.n_users);
  Rng base(seed);
  for (int i = 0; i < cfg.n_users; ++i)
    out.push_back(TrafficStream::poisson(i, mean_iat_s, mean_size_bits,
                                         base.fork(i).seed()));
  return out;
}

}  // namespace urllc

#include "urllc/harness.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "urllc/metrics.hpp"
#include "urllc/reducer.hpp"

namespace urllc {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t p = s.find(sep, start);
    if (p == std::string::npos) {
      out.push_back(s.substr(start));
      break;
    }
    out.push_back(s.substr(start, p - start));
    start = p + 1;
  }
  return out;
}

bool parse_double_strict(const std::string& raw, double& out) {
  const std::string s = trim(raw);
  if (s.empty()) return false;
  errno = 0;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && errno != ERANGE;
}

bool parse_int_strict(const std::string& raw, std::int64_t& out) {
  const std::string s = trim(raw);
  if (s.empty()) return false;
  errno = 0;
  char* end = nullptr;
  out = std::strtoll(s.c_str(), &end, 10);
  return end == s.c_str() + s.size() && errno != ERANGE;
}

// Overlay user JSON onto the defaults; unknown keys anywhere are an error.
void overlay(nlohmann::json& base, const nlohmann::json& user,
             const std::string& prefix) {
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key()))
      throw std::invalid_argument("unknown config key: " + path);
    if (base[it.key()].is_object() && it.value().is_object())
      overlay(base[it.key()], it.value(), path);
    else
      base[it.key()] = it.value();
  }
}

std::vector<double> as_per_user(const nlohmann::json& v, int n,
                                const std::string& key) {
  std::vector<double> out;
  if (v.is_array()) {
    out = v.get<std::vector<double>>();
    if (static_cast<int>(out.size()) != n)
      throw std::invalid_argument(key + " length does not match n_users");
  } else {
    out.assign(n, v.get<double>());
  }
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv_table(const std::string& path) {
  CsvTable t;
  const std::string text = read_text_file(path);
  std::vector<std::string> lines = split(text, '\n');
  bool first = true;
  for (std::string& line : lines) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first) {
      t.header = split(line, ',');
      first = false;
    } else {
      t.rows.push_back(split(line, ','));
    }
  }
  return t;
}

std::size_t column_index(const CsvTable& t, const std::string& name) {
  for (std::size_t i = 0; i < t.header.size(); ++i)
    if (t.header[i] == name) return i;
  throw std::runtime_error("missing CSV column " + name);
}

double cell_double(const std::vector<std::string>& row, std::size_t col) {
  double v = 0.0;
  if (!parse_double_strict(row[col], v))
    throw std::runtime_error("bad numeric CSV cell: " + row[col]);
  return v;
}

std::string epochs_csv(const std::vector<EpochStats>& stats, int n_users) {
  std::string out = "epoch,mean_reward";
  for (int i = 0; i < n_users; ++i) out += ",gamma_" + std::to_string(i);
  out += ",mean_delay_s,mean_power_w\n";
  for (const EpochStats& e : stats) {
    out += std::to_string(e.epoch) + "," + format_double(e.mean_reward);
    for (int i = 0; i < n_users; ++i)
      out += "," + format_double(i < static_cast<int>(e.gamma.size())
                                     ? e.gamma[i]
                                     : 1.0);
    out += "," + format_double(e.mean_delay_s) + "," +
           format_double(e.mean_power_w) + "\n";
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

nlohmann::json optimizer_to_json(const Optimizer& opt) {
  return {{"kind", opt.kind() == OptimizerKind::adam ? "adam" : "sgd"},
          {"learning_rate", opt.learning_rate()},
          {"step", opt.step_count()},
          {"m", opt.first_moment()},
          {"v", opt.second_moment()}};
}

Optimizer optimizer_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  Optimizer opt(kind == "adam" ? OptimizerKind::adam : OptimizerKind::sgd,
                j.at("learning_rate").get<double>());
  opt.restore_state(j.at("step").get<std::int64_t>(),
                    j.at("m").get<std::vector<double>>(),
                    j.at("v").get<std::vector<double>>());
  return opt;
}

}  // namespace

// ---------------------------------------------------------------- config

nlohmann::json default_config() {
  return nlohmann::json{
      {"env",
       {{"n_users", 5},
        {"n_rbs", 12},
        {"rb_bandwidth_hz", 180e3},
        {"noise_psd_w_per_hz", 4.0738027780411273e-21},
        {"slot_duration_s", 1e-3},
        {"max_bs_power_w", 4.0},
        {"cell_side_m", 500.0},
        {"pathloss_exponent", 3.0},
        {"carrier_hz", 2e9},
        {"d_max_s", 3e-3},
        {"target_reliability", 0.99},
        {"rate_model",
         {{"kind", "shannon"}, {"blocklength_n", 200}, {"decode_error", 1e-5}}}}},
      {"traffic",
       {{"mean_iat_s", 1e-3}, {"mean_size_bits", 2800.0}, {"trace_path", ""}}},
      {"ppo",
       {{"clip_eps", 0.2},
        {"discount", 0.99},
        {"gae_lambda", 0.95},
        {"epochs", 4},
        {"minibatch", 64},
        {"lr_policy", 3e-4},
        {"lr_value", 1e-3},
        {"rollout_slots", 512},
        {"entropy_coef", 0.01}}},
      {"reducer", {{"rate_tol", 1e-2}, {"max_iterations", 500}}},
      {"reward", {{"alpha", 0.1}}},
      {"refiner",
       {{"lambda_r", 1.0},
        {"epsilon_r", 0.1},
        {"batch_size", 128},
        {"lr_refiner", 1e-4},
        {"lr_disc", 1e-4},
        {"steps", 2000},
        {"hidden", 32},
        {"holdout_fraction", 0.2}}},
      {"virtual_env",
       {{"real_weight", 0.5},
        {"refined_weight", 0.5},
        {"synth_mean_iat_s", 0.4e-3},
        {"synth_mean_size_bits", 4800.0},
        {"synth_gain_mean", 1e-12}}},
      {"paths", {{"refiner_checkpoint", ""}, {"agent_checkpoint", ""}}},
      {"scenario_params",
       {{"epochs", 20},
        {"pretrain_epochs", 30},
        {"pre_switch_epochs", 100},
        {"post_switch_epochs", 150},
        {"recovery_band", 0.1},
        {"recovery_trailing_epochs", 20},
        {"extreme_load_fraction", 0.6},
        {"sweep_slots", 3000},
        {"sweep_warmup_slots", 500},
        {"bandwidth_grid_hz", {60e3, 120e3, 180e3, 240e3, 300e3}},
        {"rate_grid_bps", {1e6, 2e6, 3e6, 4e6}},
        {"dmax_grid_s", {2e-3, 3e-3, 5e-3, 8e-3}},
        {"size_grid_bits", {1400.0, 2800.0, 5600.0, 11200.0}},
        {"reducer_rb_grid", {16, 32, 64, 128, 256}},
        {"reducer_extra_rbs", {250}},
        {"reducer_total_bw_hz", 45e6},
        {"reducer_users", 20},
        {"reducer_draws", 20},
        {"power_grid_w", {0.5, 1.0, 2.0, 4.0}},
        {"power_delay_train_epochs", 30},
        {"power_delay_eval_epochs", 10}}},
      {"seeds", {1, 2, 3, 4, 5}},
      {"out_dir", "runs/out"}};
}

nlohmann::json load_config(const std::string& path) {
  nlohmann::json user = nlohmann::json::parse(read_text_file(path));
  if (!user.is_object())
    throw std::invalid_argument(path + ": config must be a JSON object");
  nlohmann::json cfg = default_config();
  overlay(cfg, user, "");
  return cfg;
}

void apply_override(nlohmann::json& cfg, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw std::invalid_argument("override must look like key.path=value: " +
                                assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);

  nlohmann::json* node = &cfg;
  const std::vector<std::string> parts = split(path, '.');
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (node->is_array()) {
      std::int64_t idx = 0;
      if (!parse_int_strict(parts[i], idx) || idx < 0 ||
          idx >= static_cast<std::int64_t>(node->size()))
        throw std::invalid_argument("bad array index in override: " + path);
      node = &(*node)[static_cast<std::size_t>(idx)];
    } else if (node->is_object() && node->contains(parts[i])) {
      node = &(*node)[parts[i]];
    } else {
      throw std::invalid_argument("unknown config key: " + path);
    }
  }
  const std::string& leaf = parts.back();
  nlohmann::json parsed;
  try {
    parsed = nlohmann::json::parse(value);
  } catch (const nlohmann::json::parse_error&) {
    parsed = value;  // plain string
  }
  if (node->is_array()) {
    std::int64_t idx = 0;
    if (!parse_int_strict(leaf, idx) || idx < 0 ||
        idx >= static_cast<std::int64_t>(node->size()))
      throw std::invalid_argument("bad array index in override: " + path);
    (*node)[static_cast<std::size_t>(idx)] = parsed;
  } else {
    if (!node->is_object() || !node->contains(leaf))
      throw std::invalid_argument("unknown config key: " + path);
    (*node)[leaf] = parsed;
  }
}

std::string config_hash(const nlohmann::json& cfg) {
  // hash the experiment parameters only: runs that differ just in output
  // location or seed list must group under the same hash
  nlohmann::json keyed = cfg;
  keyed.erase("out_dir");
  keyed.erase("seeds");
  const std::string dump = keyed.dump();
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

EnvConfig env_config_from_json(const nlohmann::json& root) {
  const nlohmann::json& j = root.at("env");
  EnvConfig cfg;
  cfg.n_users = j.at("n_users").get<int>();
  cfg.n_rbs = j.at("n_rbs").get<int>();
  cfg.rb_bandwidth_hz = j.at("rb_bandwidth_hz").get<double>();
  cfg.noise_psd_w_per_hz = j.at("noise_psd_w_per_hz").get<double>();
  cfg.slot_duration_s = j.at("slot_duration_s").get<double>();
  cfg.max_bs_power_w = j.at("max_bs_power_w").get<double>();
  cfg.cell_side_m = j.at("cell_side_m").get<double>();
  cfg.pathloss_exponent = j.at("pathloss_exponent").get<double>();
  cfg.carrier_hz = j.at("carrier_hz").get<double>();
  if (cfg.n_users < 1 || cfg.n_rbs < 1)
    throw std::invalid_argument("env.n_users and env.n_rbs must be >= 1");
  cfg.d_max_s = as_per_user(j.at("d_max_s"), cfg.n_users, "env.d_max_s");
  cfg.target_reliability = as_per_user(j.at("target_reliability"), cfg.n_users,
                                       "env.target_reliability");
  const nlohmann::json& rm = j.at("rate_model");
  const std::string kind = rm.at("kind").get<std::string>();
  if (kind == "shannon")
    cfg.rate_model = RateModel::shannon();
  else if (kind == "finite_blocklength")
    cfg.rate_model = RateModel::finite_blocklength(
        rm.at("blocklength_n").get<int>(), rm.at("decode_error").get<double>());
  else
    throw std::invalid_argument("unknown rate model kind: " + kind);
  return cfg;
}

PPOConfig ppo_config_from_json(const nlohmann::json& root) {
  const nlohmann::json& j = root.at("ppo");
  PPOConfig cfg;
  cfg.clip_eps = j.at("clip_eps").get<double>();
  cfg.discount = j.at("discount").get<double>();
  cfg.gae_lambda = j.at("gae_lambda").get<double>();
  cfg.epochs = j.at("epochs").get<int>();
  cfg.minibatch = j.at("minibatch").get<int>();
  cfg.lr_policy = j.at("lr_policy").get<double>();
  cfg.lr_value = j.at("lr_value").get<double>();
  cfg.rollout_slots = j.at("rollout_slots").get<int>();
  cfg.entropy_coef = j.at("entropy_coef").get<double>();
  return cfg;
}

RefinerConfig refiner_config_from_json(const nlohmann::json& root) {
  const nlohmann::json& j = root.at("refiner");
  RefinerConfig cfg;
  cfg.lambda_r = j.at("lambda_r").get<double>();
  cfg.epsilon_r = j.at("epsilon_r").get<double>();
  cfg.batch_size = j.at("batch_size").get<int>();
  cfg.lr_refiner = j.at("lr_refiner").get<double>();
  cfg.lr_disc = j.at("lr_disc").get<double>();
  cfg.steps = j.at("steps").get<int>();
  cfg.hidden = j.at("hidden").get<int>();
  cfg.holdout_fraction = j.at("holdout_fraction").get<double>();
  return cfg;
}

VirtualEnvSpec virtual_env_spec_from_json(const nlohmann::json& root) {
  const nlohmann::json& j = root.at("virtual_env");
  VirtualEnvSpec spec;
  spec.real_weight = j.at("real_weight").get<double>();
  spec.refined_weight = j.at("refined_weight").get<double>();
  spec.synth_mean_iat_s = j.at("synth_mean_iat_s").get<double>();
  spec.synth_mean_size_bits = j.at("synth_mean_size_bits").get<double>();
  spec.synth_gain_mean = j.at("synth_gain_mean").get<double>();
  return spec;
}

ReducerTolerances reducer_tolerances_from_json(const nlohmann::json& root) {
  const nlohmann::json& j = root.at("reducer");
  ReducerTolerances tol;
  tol.rate_tol = j.at("rate_tol").get<double>();
  tol.max_iterations = j.at("max_iterations").get<int>();
  return tol;
}

RewardConfig reward_config_from_json(const nlohmann::json& root) {
  RewardConfig cfg;
  cfg.alpha = root.at("reward").at("alpha").get<double>();
  cfg.power_scale_w = root.at("env").at("max_bs_power_w").get<double>();
  return cfg;
}

std::vector<std::uint64_t> seeds_from_json(const nlohmann::json& root) {
  std::vector<std::uint64_t> seeds =
      root.at("seeds").get<std::vector<std::uint64_t>>();
  if (seeds.empty()) throw std::invalid_argument("seeds must be non-empty");
  return seeds;
}

// ------------------------------------------------------------ small utils

std::string format_double(double x) { return nlohmann::json(x).dump(); }

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed for " + path);
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("percentile of empty set");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = static_cast<std::size_t>(std::ceil(pos));
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + (v[hi] - v[lo]) * frac;
}

double median(std::vector<double> v) { return percentile(std::move(v), 0.5); }

int thread_budget() {
  if (const char* env = std::getenv("URLLC_LAB_THREADS")) {
    std::int64_t n = 0;
    if (parse_int_strict(env, n) && n >= 1)
      return static_cast<int>(std::min<std::int64_t>(n, 256));
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

void for_each_index_parallel(std::size_t n,
                             const std::function<void(std::size_t)>& fn) {
  const int workers =
      static_cast<int>(std::min<std::size_t>(n, thread_budget()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex error_mu;
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n || failed.load()) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) first_error = std::current_exception();
        failed.store(true);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

// --------------------------------------------------------- trace ingestion

std::vector<TraceSession> parse_trace_csv(const std::string& path) {
  const std::string text = read_text_file(path);
  std::vector<std::string> lines = split(text, '\n');
  std::vector<TraceSession> sessions;
  bool saw_header = false;
  for (std::size_t li = 0; li < lines.size(); ++li) {
    std::string line = lines[li];
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const std::string where = path + ":" + std::to_string(li + 1);
    if (!saw_header) {
      std::vector<std::string> h = split(line, ',');
      for (std::string& f : h) f = trim(f);
      const std::vector<std::string> want = {"session_id", "packet_count",
                                             "mean_size_bytes", "mean_iat_us"};
      if (std::vector<std::string>(h.begin(), h.end()) != want)
        throw std::invalid_argument(
            where + ": expected header session_id,packet_count,"
                    "mean_size_bytes,mean_iat_us");
      saw_header = true;
      continue;
    }
    const std::vector<std::string> f = split(line, ',');
    if (f.size() != 4)
      throw std::invalid_argument(where + ": expected 4 fields, got " +
                                  std::to_string(f.size()));
    TraceSession s;
    s.session_id = trim(f[0]);
    if (s.session_id.empty())
      throw std::invalid_argument(where + ": empty session_id");
    if (!parse_int_strict(f[1], s.packet_count) || s.packet_count < 1)
      throw std::invalid_argument(where + ": packet_count must be an integer >= 1");
    if (!parse_double_strict(f[2], s.mean_size_bytes) || s.mean_size_bytes <= 0)
      throw std::invalid_argument(where + ": mean_size_bytes must be > 0");
    if (!parse_double_strict(f[3], s.mean_iat_us) || s.mean_iat_us <= 0)
      throw std::invalid_argument(where + ": mean_iat_us must be > 0");
    sessions.push_back(std::move(s));
  }
  if (!saw_header) throw std::invalid_argument(path + ": empty trace file");
  if (sessions.empty()) throw std::invalid_argument(path + ": no sessions");
  return sessions;
}

IngestResult ingest_sessions(const std::vector<TraceSession>& sessions,
                             int n_users, std::uint64_t seed) {
  if (n_users < 1) throw std::invalid_argument("n_users must be >= 1");
  IngestResult out;
  out.per_user.resize(n_users);
  std::vector<double> user_clock(n_users, 0.0);
  std::vector<double> all_iats_s, all_sizes_bits;
  std::vector<double> session_iats_s, session_sizes_bits;
  Rng base(seed);

  for (std::size_t k = 0; k < sessions.size(); ++k) {
    const TraceSession& s = sessions[k];
    const int user = static_cast<int>(k % n_users);
    Rng rng = base.fork(k);
    const double mean_iat_s = s.mean_iat_us * 1e-6;
    const double mean_size_bits = s.mean_size_bytes * 8.0;
    session_iats_s.push_back(mean_iat_s);
    session_sizes_bits.push_back(mean_size_bits);
    for (std::int64_t p = 0; p < s.packet_count; ++p) {
      const double iat = rng.exponential(mean_iat_s);
      const std::int64_t bits = std::max<std::int64_t>(
          1, static_cast<std::int64_t>(std::ceil(rng.exponential(mean_size_bits))));
      user_clock[user] += iat;
      Packet pkt;
      pkt.user_id = user;
      pkt.arrival_time_s = user_clock[user];
      pkt.size_bits = bits;
      out.per_user[user].push_back(pkt);
      all_iats_s.push_back(iat);
      all_sizes_bits.push_back(static_cast<double>(bits));
      ++out.total_packets;
    }
  }
  out.packet_iat_p20_s = percentile(all_iats_s, 0.20);
  out.packet_size_p78_bits = percentile(all_sizes_bits, 0.78);
  out.session_iat_p20_s = percentile(session_iats_s, 0.20);
  out.session_size_p78_bits = percentile(session_sizes_bits, 0.78);
  return out;
}

IngestResult ingest_trace(const std::string& path, int n_users,
                          std::uint64_t seed) {
  return ingest_sessions(parse_trace_csv(path), n_users, seed);
}

std::vector<TrafficStream> replay_sources(
    const std::vector<std::vector<Packet>>& per_user) {
  std::vector<TrafficStream> out;
  out.reserve(per_user.size());
  for (std::size_t i = 0; i < per_user.size(); ++i)
    out.push_back(TrafficStream::trace(static_cast<int>(i), per_user[i]));
  return out;
}

ExtremeStream extreme_slice(const std::vector<TraceSession>& sessions,
                            int n_users, double load_fraction,
                            double capacity_bps, std::uint64_t seed) {
  if (sessions.empty()) throw std::invalid_argument("no sessions");
  if (load_fraction <= 0.0 || capacity_bps <= 0.0)
    throw std::invalid_argument("extreme_slice needs positive load target");
  std::vector<double> iats, sizes;
  for (const TraceSession& s : sessions) {
    iats.push_back(s.mean_iat_us);
    sizes.push_back(s.mean_size_bytes);
  }
  const double iat_p20 = percentile(iats, 0.20);
  const double size_p78 = percentile(sizes, 0.78);
  std::vector<TraceSession> picked;
  for (const TraceSession& s : sessions)
    if (s.mean_iat_us < iat_p20 && s.mean_size_bytes > size_p78)
      picked.push_back(s);
  if (picked.empty())
    throw std::runtime_error(
        "no jointly extreme sessions (IAT < p20 and size > p78)");

  double offered = 0.0;
  for (const TraceSession& s : picked)
    offered += (s.mean_size_bytes * 8.0) / (s.mean_iat_us * 1e-6);
  const double target = load_fraction * capacity_bps;
  const double scale = offered / target;  // applied to IATs

  std::vector<TraceSession> scaled = picked;
  for (TraceSession& s : scaled) s.mean_iat_us *= scale;

  ExtremeStream out;
  IngestResult ing = ingest_sessions(scaled, n_users, seed);
  out.per_user = std::move(ing.per_user);
  out.offered_bps = target;
  out.iat_scale = scale;
  out.session_count = static_cast<int>(picked.size());
  return out;
}

double estimate_capacity_bps(const EnvConfig& cfg) {
  const double pl = pathloss(cfg, cfg.cell_side_m / 4.0);
  const double p_rb = cfg.max_bs_power_w / cfg.n_rbs;
  const double snr = p_rb * pl / cfg.sigma2_w();
  return cfg.n_rbs * cfg.rb_bandwidth_hz * std::log2(1.0 + snr);
}

// ------------------------------------------------------ baseline controller

BaselineController::BaselineController(const EnvConfig& cfg)
    : slot_s_(cfg.slot_duration_s),
      cap_bps_(estimate_capacity_bps(cfg)),
      ema_bps_(cfg.n_users, 0.0) {
  horizon_s_.reserve(cfg.n_users);
  for (int i = 0; i < cfg.n_users; ++i)
    horizon_s_.push_back(std::max(cfg.d_max_s[i] / 2.0, cfg.slot_duration_s));
}

std::vector<double> BaselineController::desired_rates(const Environment& env,
                                                      const SlotState& state) {
  const int n = static_cast<int>(ema_bps_.size());
  std::vector<double> out(n, 0.0);
  for (int i = 0; i < n; ++i) {
    const double arrived_bits = static_cast<double>(state.arrival_counts[i]) *
                                state.mean_packet_bits[i];
    ema_bps_[i] = 0.99 * ema_bps_[i] + 0.01 * arrived_bits / slot_s_;
    const double backlog =
        static_cast<double>(env.queues()[i].backlog_bits());
    out[i] = std::clamp(backlog / horizon_s_[i] + ema_bps_[i], 0.0, cap_bps_);
  }
  return out;
}

BaselineRun run_baseline(Environment& env, SlotState& state,
                         BaselineController& ctrl, int total_slots,
                         int warmup_slots, int epoch_len,
                         const ReducerTolerances& rtol,
                         const RewardConfig& rcfg) {
  const EnvConfig& cfg = env.config();
  const int n = cfg.n_users;
  ReducerTolerances tol = rtol;
  if (!tol.total_power_cap_w) tol.total_power_cap_w = cfg.max_bs_power_w;

  ReliabilityWindow window(n, 100);
  std::vector<double> weights(n, 0.0);

  BaselineRun run;
  std::vector<std::int64_t> delivered(n, 0), late(n, 0);
  double delay_sum = 0.0, power_sum = 0.0, reward_sum = 0.0;
  std::int64_t delay_count = 0, measured_slots = 0;

  EpochStats epoch;
  double ep_delay_sum = 0.0;
  std::int64_t ep_delay_count = 0;
  int ep_slots = 0;

  std::vector<double> warm_lambda;
  for (int s = 0; s < total_slots; ++s) {
    const std::vector<double> rd = ctrl.desired_rates(env, state);
    ReduceResult red =
        reduce(rd, state.gains, cfg, cfg.rate_model, tol, &warm_lambda);
    warm_lambda = red.dual.lambda;
    auto [fb, next_state] = env.step(red.alloc);
    window.push(SlotCounts{fb.delivered, fb.late});
    const ReliabilityEstimate rel = window.estimate();
    weights = update_weights(weights, rel.gamma, cfg.target_reliability);
    const double r = reward(weights, rel.gamma, fb.total_power_w, rcfg);

    epoch.mean_reward += r;
    epoch.mean_power_w += fb.total_power_w;
    epoch.gamma = rel.gamma;
    for (const Departure& d : fb.departures) {
      ep_delay_sum += d.delay_s;
      ++ep_delay_count;
    }
    ++ep_slots;
    if (ep_slots == epoch_len) {
      epoch.epoch = static_cast<int>(run.epochs.size());
      epoch.mean_reward /= epoch_len;
      epoch.mean_power_w /= epoch_len;
      epoch.mean_delay_s = ep_delay_count ? ep_delay_sum / ep_delay_count : 0.0;
      epoch.departures = ep_delay_count;
      run.epochs.push_back(epoch);
      epoch = EpochStats{};
      ep_delay_sum = 0.0;
      ep_delay_count = 0;
      ep_slots = 0;
    }

    if (s >= warmup_slots) {
      ++measured_slots;
      power_sum += fb.total_power_w;
      reward_sum += r;
      for (int i = 0; i < n; ++i) {
        delivered[i] += fb.delivered[i];
        late[i] += fb.late[i];
      }
      for (const Departure& d : fb.departures) {
        delay_sum += d.delay_s;
        ++delay_count;
      }
    }
    state = std::move(next_state);
  }

  run.summary.gamma.resize(n);
  for (int i = 0; i < n; ++i) {
    run.summary.gamma[i] =
        delivered[i] > 0
            ? 1.0 - static_cast<double>(late[i]) / static_cast<double>(delivered[i])
            : 1.0;
    run.summary.late += late[i];
    run.summary.departures += delivered[i];
  }
  run.summary.mean_delay_s = delay_count ? delay_sum / delay_count : 0.0;
  run.summary.mean_power_w =
      measured_slots ? power_sum / measured_slots : 0.0;
  run.summary.mean_reward =
      measured_slots ? reward_sum / measured_slots : 0.0;
  return run;
}

// --------------------------------------------------------- agent checkpoint

std::string agent_to_json(const Agent& agent) {
  nlohmann::json j = {
      {"format", "agent-v1"},
      {"policy",
       nlohmann::json::parse(policy_to_json(agent.policy, agent.featurizer))},
      {"value_net",
       nlohmann::json::parse(network_to_json(agent.value_net))},
      {"optimizers",
       {{"policy", optimizer_to_json(agent.opts.policy)},
        {"log_std", optimizer_to_json(agent.opts.log_std)},
        {"value", optimizer_to_json(agent.opts.value)}}},
      {"weights", agent.weights},
      {"reward_scale_ema", agent.reward_scale_ema},
      {"rng_seed", agent.rng.seed()}};
  return j.dump();
}

void agent_from_json(const std::string& text, Agent& agent) {
  nlohmann::json j = nlohmann::json::parse(text);
  if (j.at("format").get<std::string>() != "agent-v1")
    throw std::invalid_argument("unknown agent checkpoint format");
  agent.policy = policy_from_json(j.at("policy").dump(), &agent.featurizer);
  agent.value_net = network_from_json(j.at("value_net").dump());
  agent.opts.policy = optimizer_from_json(j.at("optimizers").at("policy"));
  agent.opts.log_std = optimizer_from_json(j.at("optimizers").at("log_std"));
  agent.opts.value = optimizer_from_json(j.at("optimizers").at("value"));
  agent.weights = j.at("weights").get<std::vector<double>>();
  agent.reward_scale_ema = j.at("reward_scale_ema").get<double>();
  agent.rng = Rng(j.at("rng_seed").get<std::uint64_t>());
}

// -------------------------------------------------------------- features

Matrix real_feature_matrix(const IngestResult& ingest, const EnvConfig& cfg,
                           const std::vector<Point2D>& positions,
                           std::uint64_t seed, std::size_t max_rows) {
  std::vector<std::array<double, 3>> rows;
  Rng rng(seed);
  const double half = cfg.cell_side_m / 2.0;
  for (std::size_t u = 0; u < ingest.per_user.size(); ++u) {
    const double dx = positions[u].x - half, dy = positions[u].y - half;
    const double pl = pathloss(cfg, std::sqrt(dx * dx + dy * dy));
    double prev = 0.0;
    for (const Packet& p : ingest.per_user[u]) {
      const double iat = std::max(p.arrival_time_s - prev, 1e-9);
      prev = p.arrival_time_s;
      const double gain = pl * rng.exponential(1.0);
      rows.push_back({std::log(iat),
                      std::log(static_cast<double>(p.size_bits)),
                      std::log(gain)});
    }
  }
  if (rows.empty()) throw std::invalid_argument("empty trace");
  std::size_t count = rows.size();
  std::size_t stride = 1;
  if (count > max_rows) {
    stride = (count + max_rows - 1) / max_rows;
    count = (rows.size() + stride - 1) / stride;
  }
  Matrix m(count, 3);
  std::size_t r = 0;
  for (std::size_t k = 0; k < rows.size(); k += stride, ++r)
    for (std::size_t c = 0; c < 3; ++c) m.at(r, c) = rows[k][c];
  return m;
}

Matrix standardize_rows(const Matrix& m, const StandardizeStats& stats) {
  Matrix out(m.rows, m.cols);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const std::vector<double> row(m.row(r), m.row(r) + m.cols);
    const std::vector<double> s = standardize(row, stats);
    for (std::size_t c = 0; c < m.cols; ++c) out.at(r, c) = s[c];
  }
  return out;
}

SynthSampler synth_base_sampler(const VirtualEnvSpec& spec,
                                const StandardizeStats& stats) {
  return [spec, stats](Rng& rng) {
    const std::vector<double> raw = {
        std::log(rng.exponential(spec.synth_mean_iat_s)),
        std::log(rng.exponential(spec.synth_mean_size_bits)),
        std::log(rng.exponential(spec.synth_gain_mean))};
    return standardize(raw, stats);
  };
}

// -------------------------------------------------------------- scenarios

std::string variant_name(AgentVariant v) {
  switch (v) {
    case AgentVariant::vanilla: return "vanilla";
    case AgentVariant::synthetic: return "synthetic";
    case AgentVariant::real_only: return "real_only";
    case AgentVariant::experienced: return "experienced";
  }
  return "unknown";
}

int epochs_to_recovery(const std::vector<EpochStats>& pre,
                       const std::vector<EpochStats>& post,
                       int trailing_epochs, double band) {
  if (pre.empty()) throw std::invalid_argument("empty pre-switch phase");
  const std::size_t n =
      std::min<std::size_t>(pre.size(), std::max(trailing_epochs, 1));
  double pre_mean = 0.0;
  for (std::size_t k = pre.size() - n; k < pre.size(); ++k)
    pre_mean += pre[k].mean_reward;
  pre_mean /= static_cast<double>(n);
  const double threshold = pre_mean - band * std::abs(pre_mean);
  for (std::size_t k = 0; k < post.size(); ++k)
    if (post[k].mean_reward >= threshold) return static_cast<int>(k) + 1;
  return static_cast<int>(post.size()) + 1;
}

namespace {

struct ScenarioContext {
  EnvConfig ecfg;
  PPOConfig ppo;
  ReducerTolerances rtol;
  RewardConfig rcfg;
  RefinerConfig refiner;
  VirtualEnvSpec vspec;
  nlohmann::json params;
  std::string trace_path;
  double traffic_mean_iat_s = 1e-3;
  double traffic_mean_size_bits = 2800.0;
};

ScenarioContext make_context(const nlohmann::json& cfg) {
  ScenarioContext ctx;
  ctx.ecfg = env_config_from_json(cfg);
  ctx.ppo = ppo_config_from_json(cfg);
  ctx.rtol = reducer_tolerances_from_json(cfg);
  ctx.rcfg = reward_config_from_json(cfg);
  ctx.refiner = refiner_config_from_json(cfg);
  ctx.vspec = virtual_env_spec_from_json(cfg);
  ctx.params = cfg.at("scenario_params");
  ctx.trace_path = cfg.at("traffic").at("trace_path").get<std::string>();
  ctx.traffic_mean_iat_s = cfg.at("traffic").at("mean_iat_s").get<double>();
  ctx.traffic_mean_size_bits =
      cfg.at("traffic").at("mean_size_bits").get<double>();
  return ctx;
}

Environment make_real_env(const ScenarioContext& ctx, std::uint64_t env_seed,
                          std::uint64_t traffic_seed) {
  if (!ctx.trace_path.empty()) {
    IngestResult ing =
        ingest_trace(ctx.trace_path, ctx.ecfg.n_users, traffic_seed);
    return Environment(ctx.ecfg, replay_sources(ing.per_user), env_seed);
  }
  return Environment(
      ctx.ecfg,
      make_poisson_sources(ctx.ecfg, ctx.traffic_mean_iat_s,
                           ctx.traffic_mean_size_bits, traffic_seed),
      env_seed);
}

TrainSetup make_setup(const ScenarioContext& ctx, int epochs,
                      std::uint64_t seed) {
  TrainSetup setup;
  setup.ppo = ctx.ppo;
  setup.reducer = ctx.rtol;
  setup.reward_cfg = ctx.rcfg;
  setup.epochs = epochs;
  setup.seed = seed;
  return setup;
}

}  // namespace

RecoveryOutcome run_recovery_arm(const nlohmann::json& cfg,
                                 AgentVariant variant, std::uint64_t seed) {
  ScenarioContext ctx = make_context(cfg);
  if (ctx.trace_path.empty())
    throw std::invalid_argument("extreme_switch requires traffic.trace_path");
  Rng master(seed);
  const std::uint64_t env_seed = master.fork(1).seed();
  const std::uint64_t agent_seed = master.fork(2).seed();
  const std::uint64_t refiner_seed = master.fork(3).seed();
  const std::uint64_t ingest_seed = master.fork(4).seed();
  const std::uint64_t extreme_seed = master.fork(5).seed();
  const std::uint64_t pretrain_env_seed = master.fork(6).seed();

  const std::vector<TraceSession> sessions = parse_trace_csv(ctx.trace_path);
  IngestResult ingest =
      ingest_sessions(sessions, ctx.ecfg.n_users, ingest_seed);

  Environment real_env(ctx.ecfg, replay_sources(ingest.per_user), env_seed);
  const double r_max = squash_ceiling_bps(ctx.ecfg, real_env.positions());
  Agent agent(ctx.ecfg, r_max, agent_seed);

  const int pretrain_epochs = ctx.params.at("pretrain_epochs").get<int>();
  if (variant != AgentVariant::vanilla && pretrain_epochs > 0) {
    TrainSetup setup = make_setup(ctx, pretrain_epochs, seed);
    if (variant == AgentVariant::synthetic) {
      Environment env(ctx.ecfg,
                      make_poisson_sources(ctx.ecfg, ctx.vspec.synth_mean_iat_s,
                                           ctx.vspec.synth_mean_size_bits,
                                           master.fork(7).seed()),
                      pretrain_env_seed);
      SlotState st = env.reset();
      train(agent, env, st, setup);
    } else if (variant == AgentVariant::real_only) {
      Environment env(ctx.ecfg, replay_sources(ingest.per_user),
                      pretrain_env_seed);
      SlotState st = env.reset();
      train(agent, env, st, setup);
    } else {  // experienced
      Matrix raw = real_feature_matrix(ingest, ctx.ecfg, real_env.positions(),
                                       master.fork(8).seed());
      StandardizeStats stats = compute_stats(raw);
      Matrix real_std = standardize_rows(raw, stats);
      RefinerResult rr =
          train_refiner(real_std, synth_base_sampler(ctx.vspec, stats),
                        ctx.refiner, refiner_seed);
      VirtualEnv ve = build_virtual_env(ctx.vspec, rr.refiner, stats,
                                        ingest.per_user, ctx.ecfg,
                                        real_env.positions(),
                                        master.fork(9).seed());
      Environment env(ctx.ecfg, std::move(ve.sources), pretrain_env_seed);
      if (ve.gain_sampler) env.set_gain_sampler(ve.gain_sampler);
      SlotState st = env.reset();
      train(agent, env, st, setup);
    }
  }

  RecoveryOutcome out;
  out.variant = variant;
  out.seed = seed;

  SlotState st = real_env.reset();
  TrainSetup setup =
      make_setup(ctx, ctx.params.at("pre_switch_epochs").get<int>(), seed);
  out.pre = train(agent, real_env, st, setup);

  ExtremeStream extreme =
      extreme_slice(sessions, ctx.ecfg.n_users,
                    ctx.params.at("extreme_load_fraction").get<double>(),
                    estimate_capacity_bps(ctx.ecfg), extreme_seed);
  Environment ext_env(ctx.ecfg, replay_sources(extreme.per_user),
                      master.fork(10).seed());
  SlotState st2 = ext_env.reset();
  setup.epochs = ctx.params.at("post_switch_epochs").get<int>();
  out.post = train(agent, ext_env, st2, setup);

  out.recovery_epochs = epochs_to_recovery(
      out.pre, out.post, ctx.params.at("recovery_trailing_epochs").get<int>(),
      ctx.params.at("recovery_band").get<double>());
  out.recovered = out.recovery_epochs <= static_cast<int>(out.post.size());
  return out;
}

double mean_reducer_error(const EnvConfig& cfg, int draws, std::uint64_t seed) {
  if (draws < 1) throw std::invalid_argument("draws must be >= 1");
  Rng rng(seed);
  ReducerTolerances tol;  // no total power cap: isolate granularity error
  double sum = 0.0;
  for (int d = 0; d < draws; ++d) {
    Rng pos_rng = rng.fork(2 * d);
    Rng ch_rng = rng.fork(2 * d + 1);
    const std::vector<Point2D> positions = draw_positions(cfg, pos_rng);
    const ChannelState ch = generate_channel(cfg, positions, d, ch_rng);
    const double share =
        static_cast<double>(cfg.n_rbs) / static_cast<double>(cfg.n_users);
    std::vector<double> rd(cfg.n_users, 0.0);
    for (int i = 0; i < cfg.n_users; ++i) {
      double mean_h = 0.0;
      for (int j = 0; j < cfg.n_rbs; ++j) mean_h += ch.at(i, j);
      mean_h /= cfg.n_rbs;
      const double p_rb = cfg.max_bs_power_w / cfg.n_rbs;
      const double cap = share * cfg.rb_bandwidth_hz *
                         std::log2(1.0 + p_rb * mean_h / cfg.sigma2_w());
      rd[i] = rng.uniform(0.25, 0.9) * cap;
    }
    const ReduceResult res = reduce(rd, ch, cfg, cfg.rate_model, tol);
    sum += reducer_error(res.achieved_bps, rd);
  }
  return sum / draws;
}

std::vector<SweepRow> run_sweep_rows(const nlohmann::json& cfg,
                                     const std::string& scenario,
                                     std::uint64_t seed) {
  ScenarioContext ctx = make_context(cfg);
  const int slots = ctx.params.at("sweep_slots").get<int>();
  const int warmup = ctx.params.at("sweep_warmup_slots").get<int>();
  Rng master(seed);
  const std::uint64_t traffic_seed = master.fork(1).seed();
  const std::uint64_t env_seed = master.fork(2).seed();

  auto run_point = [&](const EnvConfig& pc, double mean_iat,
                       double mean_size) {
    Environment env(pc, make_poisson_sources(pc, mean_iat, mean_size,
                                             traffic_seed),
                    env_seed);
    SlotState st = env.reset();
    BaselineController ctrl(pc);
    RewardConfig rcfg = ctx.rcfg;
    rcfg.power_scale_w = pc.max_bs_power_w;
    return run_baseline(env, st, ctrl, slots, warmup, 512, ctx.rtol, rcfg)
        .summary;
  };

  std::vector<SweepRow> rows;
  if (scenario == "sweep_bandwidth") {
    for (double b : ctx.params.at("bandwidth_grid_hz").get<std::vector<double>>()) {
      EnvConfig pc = ctx.ecfg;
      pc.rb_bandwidth_hz = b;
      SweepRow row;
      row.factors = {{"rb_bandwidth_hz", b}};
      row.seed = seed;
      row.summary =
          run_point(pc, ctx.traffic_mean_iat_s, ctx.traffic_mean_size_bits);
      rows.push_back(std::move(row));
    }
  } else if (scenario == "sweep_rate") {
    for (double rate : ctx.params.at("rate_grid_bps").get<std::vector<double>>()) {
      for (double dmax : ctx.params.at("dmax_grid_s").get<std::vector<double>>()) {
        EnvConfig pc = ctx.ecfg;
        pc.set_uniform_delay_budget(dmax);
        const double mean_iat = ctx.traffic_mean_size_bits / rate;
        SweepRow row;
        row.factors = {{"offered_rate_bps", rate}, {"d_max_s", dmax}};
        row.seed = seed;
        row.summary = run_point(pc, mean_iat, ctx.traffic_mean_size_bits);
        rows.push_back(std::move(row));
      }
    }
  } else if (scenario == "sweep_packet_size") {
    for (double size : ctx.params.at("size_grid_bits").get<std::vector<double>>()) {
      SweepRow row;
      row.factors = {{"mean_packet_bits", size}};
      row.seed = seed;
      row.summary = run_point(ctx.ecfg, ctx.traffic_mean_iat_s, size);
      rows.push_back(std::move(row));
    }
  } else {
    throw std::invalid_argument("unknown sweep scenario: " + scenario);
  }
  return rows;
}

namespace {

void write_summary(const std::string& out_dir, nlohmann::json summary) {
  write_text_file(out_dir + "/summary.json", summary.dump(2) + "\n");
}

void scenario_training_runs(const nlohmann::json& cfg,
                            const std::string& scenario,
                            const std::string& out_dir) {
  const ScenarioContext ctx = make_context(cfg);
  const std::vector<std::uint64_t> seeds = seeds_from_json(cfg);
  const int epochs = ctx.params.at(scenario == "pretrain" ? "pretrain_epochs"
                                                          : "epochs")
                         .get<int>();
  if (epochs < 1) throw std::invalid_argument("epoch count must be >= 1");
  const std::string refiner_ckpt =
      cfg.at("paths").at("refiner_checkpoint").get<std::string>();
  const std::string agent_ckpt =
      cfg.at("paths").at("agent_checkpoint").get<std::string>();

  struct SeedOut {
    std::vector<EpochStats> curve;
    std::string agent_json;
    std::string refiner_json;
  };
  std::vector<SeedOut> results(seeds.size());

  for_each_index_parallel(seeds.size(), [&](std::size_t k) {
    const std::uint64_t seed = seeds[k];
    Rng master(seed);
    const std::uint64_t env_seed = master.fork(1).seed();
    const std::uint64_t agent_seed = master.fork(2).seed();
    const std::uint64_t traffic_seed = master.fork(3).seed();

    Environment probe = make_real_env(ctx, env_seed, traffic_seed);
    const double r_max = squash_ceiling_bps(ctx.ecfg, probe.positions());
    Agent agent(ctx.ecfg, r_max, agent_seed);
    if (!agent_ckpt.empty())
      agent_from_json(read_text_file(agent_ckpt), agent);

    TrainSetup setup = make_setup(ctx, epochs, seed);
    SeedOut out;

    if (scenario == "simulate") {
      SlotState st = probe.reset();
      BaselineController ctrl(ctx.ecfg);
      out.curve = run_baseline(probe, st, ctrl, epochs * ctx.ppo.rollout_slots,
                               0, ctx.ppo.rollout_slots, ctx.rtol, ctx.rcfg)
                      .epochs;
    } else if (scenario == "deploy") {
      SlotState st = probe.reset();
      out.curve = train(agent, probe, st, setup);
      out.agent_json = agent_to_json(agent);
    } else {  // pretrain: refine, build the virtual environment, train there
      if (ctx.trace_path.empty())
        throw std::invalid_argument("pretrain requires traffic.trace_path");
      IngestResult ingest =
          ingest_trace(ctx.trace_path, ctx.ecfg.n_users, traffic_seed);
      Matrix raw = real_feature_matrix(ingest, ctx.ecfg, probe.positions(),
                                       master.fork(4).seed());
      StandardizeStats stats = compute_stats(raw);
      RefinerResult rr;
      if (!refiner_ckpt.empty()) {
        refiner_from_json(read_text_file(refiner_ckpt), rr, stats);
      } else {
        rr = train_refiner(standardize_rows(raw, stats),
                           synth_base_sampler(ctx.vspec, stats), ctx.refiner,
                           master.fork(5).seed());
      }
      out.refiner_json = refiner_to_json(rr, stats);
      VirtualEnv ve =
          build_virtual_env(ctx.vspec, rr.refiner, stats, ingest.per_user,
                            ctx.ecfg, probe.positions(), master.fork(6).seed());
      Environment env(ctx.ecfg, std::move(ve.sources), env_seed);
      if (ve.gain_sampler) env.set_gain_sampler(ve.gain_sampler);
      SlotState st = env.reset();
      out.curve = train(agent, env, st, setup);
      out.agent_json = agent_to_json(agent);
    }
    results[k] = std::move(out);
  });

  nlohmann::json per_seed = nlohmann::json::array();
  for (std::size_t k = 0; k < seeds.size(); ++k) {
    const std::string tag = std::to_string(seeds[k]);
    write_text_file(out_dir + "/epochs_seed" + tag + ".csv",
                    epochs_csv(results[k].curve, ctx.ecfg.n_users));
    if (!results[k].agent_json.empty())
      write_text_file(out_dir + "/agent_seed" + tag + ".json",
                      results[k].agent_json + "\n");
    if (!results[k].refiner_json.empty())
      write_text_file(out_dir + "/refiner_seed" + tag + ".json",
                      results[k].refiner_json + "\n");
    const EpochStats& last = results[k].curve.back();
    per_seed.push_back({{"seed", seeds[k]},
                        {"final_mean_reward", last.mean_reward},
                        {"final_mean_reliability", mean_of(last.gamma)}});
  }
  nlohmann::json summary = {{"schema_version", 1},
                            {"scenario", scenario},
                            {"config_hash", config_hash(cfg)},
                            {"seeds", seeds},
                            {"per_seed", per_seed}};
  write_summary(out_dir, summary);
}

void scenario_extreme_switch(const nlohmann::json& cfg,
                             const std::string& out_dir) {
  const ScenarioContext ctx = make_context(cfg);
  const std::vector<std::uint64_t> seeds = seeds_from_json(cfg);
  const std::vector<AgentVariant> variants = {
      AgentVariant::experienced, AgentVariant::real_only,
      AgentVariant::synthetic, AgentVariant::vanilla};

  std::vector<std::vector<RecoveryOutcome>> outcomes(seeds.size());
  for_each_index_parallel(seeds.size(), [&](std::size_t k) {
    for (AgentVariant v : variants)
      outcomes[k].push_back(run_recovery_arm(cfg, v, seeds[k]));
  });

  std::string recovery_csv = "variant,seed,recovery_epochs,recovered\n";
  std::map<std::string, std::vector<double>> per_variant;
  for (std::size_t k = 0; k < seeds.size(); ++k) {
    for (const RecoveryOutcome& o : outcomes[k]) {
      const std::string name = variant_name(o.variant);
      const std::string tag = std::to_string(seeds[k]);
      write_text_file(out_dir + "/epochs_" + name + "_pre_seed" + tag + ".csv",
                      epochs_csv(o.pre, ctx.ecfg.n_users));
      write_text_file(out_dir + "/epochs_" + name + "_post_seed" + tag + ".csv",
                      epochs_csv(o.post, ctx.ecfg.n_users));
      recovery_csv += name + "," + tag + "," +
                      std::to_string(o.recovery_epochs) + "," +
                      (o.recovered ? "1" : "0") + "\n";
      per_variant[name].push_back(o.recovery_epochs);
    }
  }
  write_text_file(out_dir + "/recovery.csv", recovery_csv);

  nlohmann::json medians;
  for (const auto& [name, vals] : per_variant) medians[name] = median(vals);
  const bool ordering_ok =
      medians.at("experienced").get<double>() <
          medians.at("real_only").get<double>() &&
      medians.at("real_only").get<double>() <=
          medians.at("synthetic").get<double>() &&
      medians.at("synthetic").get<double>() <
          medians.at("vanilla").get<double>();
  nlohmann::json summary = {{"schema_version", 1},
                            {"scenario", "extreme_switch"},
                            {"config_hash", config_hash(cfg)},
                            {"seeds", seeds},
                            {"median_recovery_epochs", medians},
                            {"ordering_ok", ordering_ok}};
  write_summary(out_dir, summary);
}

void scenario_sweep(const nlohmann::json& cfg, const std::string& scenario,
                    const std::string& out_dir) {
  const std::vector<std::uint64_t> seeds = seeds_from_json(cfg);
  std::vector<std::vector<SweepRow>> per_seed(seeds.size());
  for_each_index_parallel(seeds.size(), [&](std::size_t k) {
    per_seed[k] = run_sweep_rows(cfg, scenario, seeds[k]);
  });
  if (per_seed[0].empty())
    throw std::invalid_argument(scenario + ": empty sweep grid");

  std::string csv;
  for (const auto& [name, value] : per_seed[0][0].factors) csv += name + ",";
  csv += "seed,mean_reliability,mean_delay_s,mean_power_w,mean_reward\n";
  for (std::size_t k = 0; k < seeds.size(); ++k) {
    for (const SweepRow& row : per_seed[k]) {
      for (const auto& [name, value] : row.factors)
        csv += format_double(value) + ",";
      csv += std::to_string(row.seed) + "," +
             format_double(mean_of(row.summary.gamma)) + "," +
             format_double(row.summary.mean_delay_s) + "," +
             format_double(row.summary.mean_power_w) + "," +
             format_double(row.summary.mean_reward) + "\n";
    }
  }
  write_text_file(out_dir + "/" + scenario + ".csv", csv);

  nlohmann::json summary = {{"schema_version", 1},
                            {"scenario", scenario},
                            {"config_hash", config_hash(cfg)},
                            {"seeds", seeds}};
  write_summary(out_dir, summary);
}

void scenario_reducer_error(const nlohmann::json& cfg,
                            const std::string& out_dir) {
  const ScenarioContext ctx = make_context(cfg);
  const std::vector<std::uint64_t> seeds = seeds_from_json(cfg);
  std::vector<int> rb_grid = ctx.params.at("reducer_rb_grid").get<std::vector<int>>();
  for (int k : ctx.params.at("reducer_extra_rbs").get<std::vector<int>>())
    rb_grid.push_back(k);
  const double total_bw = ctx.params.at("reducer_total_bw_hz").get<double>();
  const int n_users = ctx.params.at("reducer_users").get<int>();
  const int draws = ctx.params.at("reducer_draws").get<int>();

  struct Cell {
    int n_rbs;
    std::uint64_t seed;
    double mean_e;
  };
  std::vector<Cell> cells;
  for (int k : rb_grid)
    for (std::uint64_t s : seeds) cells.push_back({k, s, 0.0});

  for_each_index_parallel(cells.size(), [&](std::size_t i) {
    EnvConfig pc = ctx.ecfg;
    pc.n_users = n_users;
    pc.n_rbs = cells[i].n_rbs;
    pc.rb_bandwidth_hz = total_bw / cells[i].n_rbs;
    pc.set_uniform_delay_budget(pc.d_max_s.empty() ? 3e-3 : pc.d_max_s[0]);
    pc.set_uniform_target(pc.target_reliability.empty()
                              ? 0.99
                              : pc.target_reliability[0]);
    cells[i].mean_e = mean_reducer_error(pc, draws, cells[i].seed);
  });

  std::string csv = "n_rbs,rb_bandwidth_hz,seed,mean_E\n";
  for (const Cell& c : cells)
    csv += std::to_string(c.n_rbs) + "," + format_double(total_bw / c.n_rbs) +
           "," + std::to_string(c.seed) + "," + format_double(c.mean_e) + "\n";
  write_text_file(out_dir + "/reducer_error.csv", csv);

  nlohmann::json by_k = nlohmann::json::array();
  for (int k : rb_grid) {
    std::vector<double> es;
    for (const Cell& c : cells)
      if (c.n_rbs == k) es.push_back(c.mean_e);
    by_k.push_back({{"n_rbs", k},
                    {"rb_bandwidth_hz", total_bw / k},
                    {"mean_E", mean_of(es)},
                    {"std_E", sample_std(es)}});
  }
  nlohmann::json summary = {{"schema_version", 1},
                            {"scenario", "reducer_error"},
                            {"config_hash", config_hash(cfg)},
                            {"seeds", seeds},
                            {"by_rb_count", by_k}};
  write_summary(out_dir, summary);
}

void scenario_power_delay(const nlohmann::json& cfg,
                          const std::string& out_dir) {
  const ScenarioContext ctx = make_context(cfg);
  const std::vector<std::uint64_t> seeds = seeds_from_json(cfg);
  const std::vector<double> grid =
      ctx.params.at("power_grid_w").get<std::vector<double>>();
  const int train_epochs = ctx.params.at("power_delay_train_epochs").get<int>();
  const int eval_epochs = ctx.params.at("power_delay_eval_epochs").get<int>();

  struct Row {
    double cap;
    std::string controller;
    std::uint64_t seed;
    double mean_delay_s;
    double mean_power_w;
    double mean_reliability;
  };
  std::vector<std::vector<Row>> per_seed(seeds.size());

  for_each_index_parallel(seeds.size(), [&](std::size_t k) {
    const std::uint64_t seed = seeds[k];
    Rng master(seed);
    for (double cap : grid) {
      EnvConfig pc = ctx.ecfg;
      pc.max_bs_power_w = cap;
      RewardConfig rcfg = ctx.rcfg;
      rcfg.power_scale_w = cap;

      Environment base_env(
          pc,
          make_poisson_sources(pc, ctx.traffic_mean_iat_s,
                               ctx.traffic_mean_size_bits,
                               master.fork(1).seed()),
          master.fork(2).seed());
      SlotState st = base_env.reset();
      BaselineController ctrl(pc);
      const RunSummary bs =
          run_baseline(base_env, st, ctrl,
                       eval_epochs * ctx.ppo.rollout_slots, 0,
                       ctx.ppo.rollout_slots, ctx.rtol, rcfg)
              .summary;
      per_seed[k].push_back({cap, "baseline", seed, bs.mean_delay_s,
                             bs.mean_power_w, mean_of(bs.gamma)});

      Environment rl_env(
          pc,
          make_poisson_sources(pc, ctx.traffic_mean_iat_s,
                               ctx.traffic_mean_size_bits,
                               master.fork(3).seed()),
          master.fork(2).seed());
      SlotState st2 = rl_env.reset();
      Agent agent(pc, squash_ceiling_bps(pc, rl_env.positions()),
                  master.fork(4).seed());
      TrainSetup setup = make_setup(ctx, train_epochs, seed);
      setup.reward_cfg = rcfg;
      train(agent, rl_env, st2, setup);
      const std::vector<EpochStats> ev =
          evaluate(agent, rl_env, st2, setup, eval_epochs, true);
      double delay_sum = 0.0, power_sum = 0.0, gamma_sum = 0.0;
      std::int64_t dep = 0;
      for (const EpochStats& e : ev) {
        delay_sum += e.mean_delay_s * e.departures;
        dep += e.departures;
        power_sum += e.mean_power_w;
        gamma_sum += mean_of(e.gamma);
      }
      per_seed[k].push_back({cap, "rl", seed,
                             dep ? delay_sum / dep : 0.0,
                             power_sum / eval_epochs, gamma_sum / eval_epochs});
    }
  });

  std::string csv =
      "power_cap_w,controller,seed,mean_delay_s,mean_power_w,mean_reliability\n";
  for (std::size_t k = 0; k < seeds.size(); ++k)
    for (const Row& r : per_seed[k])
      csv += format_double(r.cap) + "," + r.controller + "," +
             std::to_string(r.seed) + "," + format_double(r.mean_delay_s) +
             "," + format_double(r.mean_power_w) + "," +
             format_double(r.mean_reliability) + "\n";
  write_text_file(out_dir + "/power_delay.csv", csv);

  nlohmann::json summary = {{"schema_version", 1},
                            {"scenario", "power_delay"},
                            {"config_hash", config_hash(cfg)},
                            {"seeds", seeds}};
  write_summary(out_dir, summary);
}

}  // namespace

void run_scenario(const nlohmann::json& cfg, const std::string& scenario,
                  const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  write_text_file(out_dir + "/config.json", cfg.dump(2) + "\n");

  if (scenario == "simulate" || scenario == "pretrain" || scenario == "deploy")
    scenario_training_runs(cfg, scenario, out_dir);
  else if (scenario == "extreme_switch")
    scenario_extreme_switch(cfg, out_dir);
  else if (scenario == "sweep_bandwidth" || scenario == "sweep_rate" ||
           scenario == "sweep_packet_size")
    scenario_sweep(cfg, scenario, out_dir);
  else if (scenario == "reducer_error")
    scenario_reducer_error(cfg, out_dir);
  else if (scenario == "power_delay")
    scenario_power_delay(cfg, out_dir);
  else
    throw std::invalid_argument("unknown scenario: " + scenario);
}

// ------------------------------------------------------------- plot tables

namespace {

// Group rows by one or two key columns (kept as strings for stable output),
// aggregate a value column, and emit sorted by numeric key order.
struct KeyedValues {
  std::vector<std::string> key;
  std::vector<double> values;
  std::vector<double> extra;
};

std::vector<KeyedValues> group_rows(const CsvTable& t,
                                    const std::vector<std::string>& key_cols,
                                    const std::string& value_col,
                                    const std::string& extra_col = "") {
  std::vector<std::size_t> kidx;
  for (const std::string& k : key_cols) kidx.push_back(column_index(t, k));
  const std::size_t vidx = column_index(t, value_col);
  const std::size_t eidx = extra_col.empty() ? 0 : column_index(t, extra_col);

  std::vector<KeyedValues> groups;
  for (const auto& row : t.rows) {
    std::vector<std::string> key;
    for (std::size_t c : kidx) key.push_back(row[c]);
    auto it = std::find_if(groups.begin(), groups.end(),
                           [&](const KeyedValues& g) { return g.key == key; });
    if (it == groups.end()) {
      groups.push_back({key, {}, {}});
      it = groups.end() - 1;
    }
    it->values.push_back(cell_double(row, vidx));
    if (!extra_col.empty()) it->extra.push_back(cell_double(row, eidx));
  }
  std::sort(groups.begin(), groups.end(),
            [](const KeyedValues& a, const KeyedValues& b) {
              for (std::size_t i = 0; i < a.key.size(); ++i) {
                double x = 0.0, y = 0.0;
                parse_double_strict(a.key[i], x);
                parse_double_strict(b.key[i], y);
                if (x != y) return x < y;
              }
              return false;
            });
  return groups;
}

}  // namespace

void emit_plot_data(const std::string& run_dir) {
  namespace fs = std::filesystem;
  const std::string plots = run_dir + "/plots";
  bool emitted = false;

  if (fs::exists(run_dir + "/recovery.csv")) {
    fs::create_directories(plots);
    const CsvTable t = read_csv_table(run_dir + "/recovery.csv");
    std::string csv = "agent,median_recovery_epochs,seeds\n";
    const std::size_t vcol = column_index(t, "variant");
    const std::size_t rcol = column_index(t, "recovery_epochs");
    for (const std::string name :
         {"experienced", "real_only", "synthetic", "vanilla"}) {
      std::vector<double> vals;
      for (const auto& row : t.rows)
        if (row[vcol] == name) vals.push_back(cell_double(row, rcol));
      if (vals.empty()) continue;
      csv += std::string(name) + "," + format_double(median(vals)) + "," +
             std::to_string(vals.size()) + "\n";
    }
    write_text_file(plots + "/fig6_recovery.csv", csv);
    emitted = true;
  }

  if (fs::exists(run_dir + "/sweep_bandwidth.csv")) {
    fs::create_directories(plots);
    const CsvTable t = read_csv_table(run_dir + "/sweep_bandwidth.csv");
    std::string csv = "rb_bandwidth_hz,median_reliability,median_delay_s,seeds\n";
    for (const KeyedValues& g : group_rows(t, {"rb_bandwidth_hz"},
                                           "mean_reliability", "mean_delay_s"))
      csv += g.key[0] + "," + format_double(median(g.values)) + "," +
             format_double(median(g.extra)) + "," +
             std::to_string(g.values.size()) + "\n";
    write_text_file(plots + "/fig7_bandwidth.csv", csv);
    emitted = true;
  }

  if (fs::exists(run_dir + "/sweep_rate.csv")) {
    fs::create_directories(plots);
    const CsvTable t = read_csv_table(run_dir + "/sweep_rate.csv");
    std::string csv = "offered_rate_bps,d_max_s,median_reliability,seeds\n";
    for (const KeyedValues& g :
         group_rows(t, {"offered_rate_bps", "d_max_s"}, "mean_reliability"))
      csv += g.key[0] + "," + g.key[1] + "," + format_double(median(g.values)) +
             "," + std::to_string(g.values.size()) + "\n";
    write_text_file(plots + "/fig9_surface.csv", csv);
    emitted = true;
  }

  if (fs::exists(run_dir + "/sweep_packet_size.csv")) {
    fs::create_directories(plots);
    const CsvTable t = read_csv_table(run_dir + "/sweep_packet_size.csv");
    std::string csv = "mean_packet_bits,median_reliability,median_delay_s,seeds\n";
    for (const KeyedValues& g : group_rows(t, {"mean_packet_bits"},
                                           "mean_reliability", "mean_delay_s"))
      csv += g.key[0] + "," + format_double(median(g.values)) + "," +
             format_double(median(g.extra)) + "," +
             std::to_string(g.values.size()) + "\n";
    write_text_file(plots + "/fig10_packetsize.csv", csv);
    emitted = true;
  }

  if (fs::exists(run_dir + "/reducer_error.csv")) {
    fs::create_directories(plots);
    const CsvTable t = read_csv_table(run_dir + "/reducer_error.csv");
    std::string csv = "rb_bandwidth_hz,mean_E,std_E,seeds\n";
    for (const KeyedValues& g :
         group_rows(t, {"rb_bandwidth_hz"}, "mean_E"))
      csv += g.key[0] + "," + format_double(mean_of(g.values)) + "," +
             format_double(sample_std(g.values)) + "," +
             std::to_string(g.values.size()) + "\n";
    write_text_file(plots + "/fig11_reducer_error.csv", csv);
    emitted = true;
  }

  if (!emitted)
    throw std::runtime_error(run_dir + ": no run artifacts to aggregate");
}

// ------------------------------------------------------------ one-shot solve

nlohmann::json reduce_problem_json(const nlohmann::json& problem) {
  const auto gains = problem.at("gains").get<std::vector<std::vector<double>>>();
  if (gains.empty() || gains[0].empty())
    throw std::invalid_argument("gains must be a non-empty N x K matrix");
  EnvConfig cfg;
  cfg.n_users = static_cast<int>(gains.size());
  cfg.n_rbs = static_cast<int>(gains[0].size());
  cfg.rb_bandwidth_hz = problem.at("rb_bandwidth_hz").get<double>();
  if (problem.contains("noise_psd_w_per_hz"))
    cfg.noise_psd_w_per_hz = problem.at("noise_psd_w_per_hz").get<double>();
  cfg.set_uniform_delay_budget(1e-3);
  cfg.set_uniform_target(0.99);

  ChannelState ch(cfg.n_users, cfg.n_rbs);
  for (int i = 0; i < cfg.n_users; ++i) {
    if (static_cast<int>(gains[i].size()) != cfg.n_rbs)
      throw std::invalid_argument("gains rows must have equal length");
    for (int j = 0; j < cfg.n_rbs; ++j) ch.at(i, j) = gains[i][j];
  }
  const auto rd = problem.at("r_desired_bps").get<std::vector<double>>();
  if (static_cast<int>(rd.size()) != cfg.n_users)
    throw std::invalid_argument("r_desired_bps length must match gains rows");

  RateModel model = RateModel::shannon();
  if (problem.contains("rate_model")) {
    const nlohmann::json& rm = problem.at("rate_model");
    const std::string kind = rm.at("kind").get<std::string>();
    if (kind == "finite_blocklength")
      model = RateModel::finite_blocklength(rm.at("blocklength_n").get<int>(),
                                            rm.at("decode_error").get<double>());
    else if (kind != "shannon")
      throw std::invalid_argument("unknown rate model kind: " + kind);
  }
  ReducerTolerances tol;
  if (problem.contains("rate_tol"))
    tol.rate_tol = problem.at("rate_tol").get<double>();
  if (problem.contains("total_power_cap_w"))
    tol.total_power_cap_w = problem.at("total_power_cap_w").get<double>();

  const ReduceResult res = reduce(rd, ch, cfg, model, tol);
  return {{"rb_user", res.alloc.rb_user},
          {"rb_power_w", res.alloc.rb_power},
          {"achieved_bps", res.achieved_bps},
          {"total_power_w", res.total_power_w},
          {"residual", res.dual.residual},
          {"iterations", res.dual.iterations},
          {"lambda", res.dual.lambda},
          {"cap_exceeded", res.cap_exceeded}};
}

}  // namespace urllc

#include "urllc/refiner.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace urllc {

namespace {

constexpr double kClampLo = 1e-7;
constexpr double kClampHi = 1.0 - 1e-7;

double clamped(double d) { return std::clamp(d, kClampLo, kClampHi); }
bool clamp_active(double d) { return d < kClampLo || d > kClampHi; }

}  // namespace

StandardizeStats compute_stats(const Matrix& data) {
  if (data.rows == 0) throw std::invalid_argument("empty dataset");
  StandardizeStats s;
  s.mean.assign(data.cols, 0.0);
  s.stdev.assign(data.cols, 0.0);
  for (std::size_t r = 0; r < data.rows; ++r)
    for (std::size_t c = 0; c < data.cols; ++c) s.mean[c] += data.at(r, c);
  for (double& m : s.mean) m /= static_cast<double>(data.rows);
  for (std::size_t r = 0; r < data.rows; ++r)
    for (std::size_t c = 0; c < data.cols; ++c) {
      const double d = data.at(r, c) - s.mean[c];
      s.stdev[c] += d * d;
    }
  for (double& v : s.stdev) {
    v = std::sqrt(v / static_cast<double>(data.rows));
    if (v < 1e-12) v = 1.0;  // degenerate dimension: pass through
  }
  return s;
}

std::vector<double> standardize(const std::vector<double>& raw,
                                const StandardizeStats& s) {
  std::vector<double> out(raw.size());
  for (std::size_t c = 0; c < raw.size(); ++c)
    out[c] = (raw[c] - s.mean[c]) / s.stdev[c];
  return out;
}

std::vector<double> destandardize(const std::vector<double>& f,
                                  const StandardizeStats& s) {
  std::vector<double> out(f.size());
  for (std::size_t c = 0; c < f.size(); ++c)
    out[c] = f[c] * s.stdev[c] + s.mean[c];
  return out;
}

GanLosses gan_losses(const DenseNetwork& refiner, const DenseNetwork& disc,
                     const Matrix& real_batch, const Matrix& z_batch,
                     double lambda_r) {
  if (real_batch.rows == 0 || z_batch.rows == 0)
    throw std::invalid_argument("gan_losses needs non-empty batches");
  GanLosses out;
  for (std::size_t r = 0; r < real_batch.rows; ++r) {
    std::vector<double> x(real_batch.row(r), real_batch.row(r) + real_batch.cols);
    out.d_objective += std::log(clamped(disc.forward(x)[0]));
  }
  out.d_objective /= static_cast<double>(real_batch.rows);
  double fake_term = 0.0;
  for (std::size_t r = 0; r < z_batch.rows; ++r) {
    std::vector<double> z(z_batch.row(r), z_batch.row(r) + z_batch.cols);
    const std::vector<double> fz = refiner.forward(z);
    fake_term += std::log(1.0 - clamped(disc.forward(fz)[0]));
    double n2 = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c)
      n2 += (fz[c] - z[c]) * (fz[c] - z[c]);
    out.similarity += std::sqrt(n2);
  }
  fake_term /= static_cast<double>(z_batch.rows);
  out.similarity /= static_cast<double>(z_batch.rows);
  out.d_objective += fake_term;
  out.r_loss = fake_term + lambda_r * out.similarity;
  return out;
}

double disc_objective_grad(const DenseNetwork& refiner,
                           const DenseNetwork& disc, const Matrix& real_batch,
                           const Matrix& z_batch, Gradients& d_grads) {
  d_grads = disc.zero_gradients();
  double objective = 0.0;
  const double inv_real = 1.0 / static_cast<double>(real_batch.rows);
  for (std::size_t r = 0; r < real_batch.rows; ++r) {
    std::vector<double> x(real_batch.row(r), real_batch.row(r) + real_batch.cols);
    ForwardCache cache;
    const double d = disc.forward(x, &cache)[0];
    objective += inv_real * std::log(clamped(d));
    if (!clamp_active(d)) {
      // d objective / d D = 1/D; descent direction for -objective.
      const Gradients g = disc.backward(cache, {-inv_real / d});
      d_grads.add(g);
    }
  }
  const double inv_fake = 1.0 / static_cast<double>(z_batch.rows);
  for (std::size_t r = 0; r < z_batch.rows; ++r) {
    std::vector<double> z(z_batch.row(r), z_batch.row(r) + z_batch.cols);
    const std::vector<double> fz = refiner.forward(z);
    ForwardCache cache;
    const double d = disc.forward(fz, &cache)[0];
    objective += inv_fake * std::log(1.0 - clamped(d));
    if (!clamp_active(d)) {
      const Gradients g = disc.backward(cache, {inv_fake / (1.0 - d)});
      d_grads.add(g);
    }
  }
  return objective;
}

double refiner_loss_grad(const DenseNetwork& refiner, const DenseNetwork& disc,
                         const Matrix& z_batch, double lambda_r,
                         Gradients& r_grads, double* similarity_out) {
  r_grads = refiner.zero_gradients();
  double loss = 0.0;
  double similarity = 0.0;
  const double inv_m = 1.0 / static_cast<double>(z_batch.rows);
  for (std::size_t r = 0; r < z_batch.rows; ++r) {
    std::vector<double> z(z_batch.row(r), z_batch.row(r) + z_batch.cols);
    ForwardCache r_cache;
    const std::vector<double> fz = refiner.forward(z, &r_cache);
    ForwardCache d_cache;
    const double d = disc.forward(fz, &d_cache)[0];
    loss += inv_m * std::log(1.0 - clamped(d));

    std::vector<double> dloss_dfz(fz.size(), 0.0);
    if (!clamp_active(d)) {
      std::vector<double> input_grad;
      disc.backward(d_cache, {-inv_m / (1.0 - d)}, &input_grad);
      dloss_dfz = input_grad;
    }
    double n2 = 0.0;
    for (std::size_t c = 0; c < fz.size(); ++c)
      n2 += (fz[c] - z[c]) * (fz[c] - z[c]);
    const double norm = std::sqrt(n2);
    similarity += inv_m * norm;
    loss += inv_m * lambda_r * norm;
    if (norm > 1e-12) {
      for (std::size_t c = 0; c < fz.size(); ++c)
        dloss_dfz[c] += inv_m * lambda_r * (fz[c] - z[c]) / norm;
    }
    const Gradients g = refiner.backward(r_cache, dloss_dfz);
    r_grads.add(g);
  }
  if (similarity_out) *similarity_out = similarity;
  return loss;
}

double epsilon_floor(const Matrix& refined, const Matrix& z) {
  if (refined.rows == 0 || refined.rows != z.rows || refined.cols != z.cols)
    throw std::invalid_argument("epsilon_floor batch mismatch");
  double floor2 = 0.0;
  for (std::size_t c = 0; c < refined.cols; ++c) {
    double mr = 0.0, mz = 0.0;
    for (std::size_t r = 0; r < refined.rows; ++r) {
      mr += refined.at(r, c);
      mz += z.at(r, c);
    }
    mr /= static_cast<double>(refined.rows);
    mz /= static_cast<double>(z.rows);
    floor2 += (mr - mz) * (mr - mz);
  }
  return std::sqrt(floor2);
}

RefinerResult train_refiner(const Matrix& real_data, const SynthSampler& synth,
                            const RefinerConfig& cfg, std::uint64_t seed) {
  if (real_data.rows < 4)
    throw std::invalid_argument("real dataset too small");
  const std::size_t dim = real_data.cols;
  {
    StandardizeStats check = compute_stats(real_data);
    for (std::size_t c = 0; c < dim; ++c) {
      double var = 0.0;
      for (std::size_t r = 0; r < real_data.rows; ++r) {
        const double d = real_data.at(r, c) - check.mean[c];
        var += d * d;
      }
      if (var / static_cast<double>(real_data.rows) <= 0.0)
        throw std::invalid_argument("degenerate real dataset dimension");
    }
  }

  Rng rng(seed);
  RefinerResult out;
  {
    Rng init = rng.fork(0x726566);
    out.refiner = DenseNetwork(
        {dim, static_cast<std::size_t>(cfg.hidden),
         static_cast<std::size_t>(cfg.hidden), dim},
        {Activation::tanh, Activation::tanh, Activation::identity}, init);
    out.discriminator = DenseNetwork(
        {dim, static_cast<std::size_t>(cfg.hidden),
         static_cast<std::size_t>(cfg.hidden), 1},
        {Activation::tanh, Activation::tanh, Activation::sigmoid}, init);
  }

  // Deterministic shuffle, then split off the holdout slice.
  std::vector<std::size_t> perm(real_data.rows);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t k = perm.size(); k > 1; --k)
    std::swap(perm[k - 1], perm[rng.below(k)]);
  const std::size_t holdout_n = std::max<std::size_t>(
      1, static_cast<std::size_t>(cfg.holdout_fraction * real_data.rows));
  const std::size_t train_n = real_data.rows - holdout_n;
  if (train_n == 0) throw std::invalid_argument("holdout consumed all data");

  Optimizer d_opt(OptimizerKind::adam, cfg.lr_disc);
  Optimizer r_opt(OptimizerKind::adam, cfg.lr_refiner);

  auto draw_real = [&](std::size_t m) {
    Matrix batch(m, dim);
    for (std::size_t r = 0; r < m; ++r) {
      const std::size_t pick = perm[rng.below(train_n)];
      for (std::size_t c = 0; c < dim; ++c)
        batch.at(r, c) = real_data.at(pick, c);
    }
    return batch;
  };
  auto draw_z = [&](std::size_t m) {
    Matrix batch(m, dim);
    for (std::size_t r = 0; r < m; ++r) {
      const std::vector<double> z = synth(rng);
      if (z.size() != dim)
        throw std::invalid_argument("synthetic sample dimension mismatch");
      for (std::size_t c = 0; c < dim; ++c) batch.at(r, c) = z[c];
    }
    return batch;
  };

  std::deque<double> recent_similarity;
  int collapse_run = 0;
  const std::size_t m = static_cast<std::size_t>(std::max(cfg.batch_size, 2));
  for (int step = 0; step < cfg.steps; ++step) {
    const Matrix real_batch = draw_real(m);
    const Matrix z_batch = draw_z(m);

    Gradients dg;
    disc_objective_grad(out.refiner, out.discriminator, real_batch, z_batch, dg);
    d_opt.apply_update(out.discriminator, dg);

    const Matrix z_batch2 = draw_z(m);
    Gradients rg;
    double sim = 0.0;
    refiner_loss_grad(out.refiner, out.discriminator, z_batch2, cfg.lambda_r,
                      rg, &sim);
    r_opt.apply_update(out.refiner, rg);

    recent_similarity.push_back(sim);
    if (recent_similarity.size() > 100) recent_similarity.pop_front();
    out.diag.steps_run = step + 1;

    // Mode-collapse guard on the refined batch's per-dimension variance.
    Matrix refined(m, dim);
    for (std::size_t r = 0; r < m; ++r) {
      std::vector<double> z(z_batch2.row(r), z_batch2.row(r) + dim);
      const std::vector<double> fz = out.refiner.forward(z);
      for (std::size_t c = 0; c < dim; ++c) refined.at(r, c) = fz[c];
    }
    bool collapsed = true;
    for (std::size_t c = 0; c < dim && collapsed; ++c) {
      double mean = 0.0, var = 0.0;
      for (std::size_t r = 0; r < m; ++r) mean += refined.at(r, c);
      mean /= static_cast<double>(m);
      for (std::size_t r = 0; r < m; ++r) {
        const double d = refined.at(r, c) - mean;
        var += d * d;
      }
      var /= static_cast<double>(m);
      if (var >= cfg.collapse_var_floor) collapsed = false;
    }
    collapse_run = collapsed ? collapse_run + 1 : 0;
    if (collapse_run >= cfg.collapse_patience) {
      out.diag.aborted_mode_collapse = true;
      break;
    }
  }

  out.diag.mean_similarity =
      recent_similarity.empty()
          ? 0.0
          : std::accumulate(recent_similarity.begin(), recent_similarity.end(),
                            0.0) /
                static_cast<double>(recent_similarity.size());

  // Held-out discriminator accuracy: real holdout vs fresh refined fakes.
  std::size_t correct = 0, total = 0;
  for (std::size_t k = 0; k < holdout_n; ++k) {
    std::vector<double> x(dim);
    for (std::size_t c = 0; c < dim; ++c)
      x[c] = real_data.at(perm[train_n + k], c);
    if (out.discriminator.forward(x)[0] > 0.5) ++correct;
    ++total;
  }
  Matrix zf = draw_z(std::max<std::size_t>(holdout_n, 1));
  Matrix fakes(zf.rows, dim);
  for (std::size_t r = 0; r < zf.rows; ++r) {
    std::vector<double> z(zf.row(r), zf.row(r) + dim);
    const std::vector<double> fz = out.refiner.forward(z);
    for (std::size_t c = 0; c < dim; ++c) fakes.at(r, c) = fz[c];
    if (out.discriminator.forward(fz)[0] <= 0.5) ++correct;
    ++total;
  }
  out.diag.holdout_accuracy =
      static_cast<double>(correct) / static_cast<double>(total);
  out.diag.final_floor = epsilon_floor(fakes, zf);
  return out;
}

VirtualEnv build_virtual_env(const VirtualEnvSpec& spec,
                             const DenseNetwork& refiner,
                             const StandardizeStats& stats,
                             const std::vector<std::vector<Packet>>& real_trace,
                             const EnvConfig& cfg,
                             const std::vector<Point2D>& positions,
                             std::uint64_t seed) {
  if (spec.real_weight < 0.0 || spec.refined_weight < 0.0 ||
      std::abs(spec.real_weight + spec.refined_weight - 1.0) > 1e-9)
    throw std::invalid_argument("mixture weights must be >= 0 and sum to 1");
  if (static_cast<int>(real_trace.size()) != cfg.n_users)
    throw std::invalid_argument("trace does not match n_users");

  VirtualEnv out;
  out.resamples = std::make_shared<std::pair<std::int64_t, std::int64_t>>(0, 0);
  Rng base(seed);

  // Refined draw in raw space: sample the synthetic base, map through the
  // refiner in standardized log-space, invert. Non-finite results resample.
  auto refined_draw = [refiner, stats, spec, counters = out.resamples](
                          Rng& rng) -> std::vector<double> {
    for (int attempt = 0; attempt < 100; ++attempt) {
      ++counters->second;
      const std::vector<double> raw = {rng.exponential(spec.synth_mean_iat_s),
                                       rng.exponential(spec.synth_mean_size_bits),
                                       rng.exponential(spec.synth_gain_mean)};
      std::vector<double> logf(3);
      for (int c = 0; c < 3; ++c) logf[c] = std::log(raw[c]);
      const std::vector<double> fz = refiner.forward(standardize(logf, stats));
      const std::vector<double> back = destandardize(fz, stats);
      std::vector<double> res(3);
      bool ok = true;
      for (int c = 0; c < 3; ++c) {
        res[c] = std::exp(back[c]);
        if (!std::isfinite(res[c]) || res[c] <= 0.0) ok = false;
      }
      if (ok) return res;
      ++counters->first;
    }
    throw std::runtime_error("refined sampler kept producing invalid draws");
  };

  const bool pure_real = spec.refined_weight == 0.0;
  const bool pure_refined = spec.real_weight == 0.0;

  for (int i = 0; i < cfg.n_users; ++i) {
    if (pure_real) {
      out.sources.push_back(TrafficStream::trace(i, real_trace[i]));
      continue;
    }
    // Real replay reduced to an IAT/size tape; mixed per-draw with refined
    // samples so the stream stays a single ordered arrival process.
    std::vector<double> iats;
    std::vector<std::int64_t> sizes;
    double prev = 0.0;
    for (const Packet& p : real_trace[i]) {
      const double iat = p.arrival_time_s - prev;
      prev = p.arrival_time_s;
      iats.push_back(std::max(iat, 1e-9));
      sizes.push_back(p.size_bits);
    }
    auto cursor = std::make_shared<std::size_t>(0);
    const double real_w = spec.real_weight;
    auto mixed = [refined_draw, iats, sizes, cursor, real_w](
                     Rng& rng, double& iat_s, std::int64_t& size_bits) {
      if (!iats.empty() && rng.uniform() < real_w) {
        const std::size_t k = *cursor % iats.size();
        *cursor += 1;
        iat_s = iats[k];
        size_bits = sizes[k];
      } else {
        const std::vector<double> r = refined_draw(rng);
        iat_s = r[0];
        size_bits = std::max<std::int64_t>(
            1, static_cast<std::int64_t>(std::ceil(r[1])));
      }
    };
    out.sources.push_back(
        TrafficStream::custom(i, mixed, base.fork(1000 + i).seed()));
  }

  if (!pure_real) {
    const double half = cfg.cell_side_m / 2.0;
    std::vector<double> pl(cfg.n_users);
    for (int i = 0; i < cfg.n_users; ++i) {
      const double dx = positions[i].x - half, dy = positions[i].y - half;
      pl[i] = pathloss(cfg, std::sqrt(dx * dx + dy * dy));
    }
    const double real_w = spec.real_weight;
    const bool always_refined = pure_refined;
    out.gain_sampler = [refined_draw, pl, real_w, always_refined](
                           int user, int rb, std::int64_t slot,
                           Rng& rng) -> double {
      (void)rb;
      (void)slot;
      if (!always_refined && rng.uniform() < real_w)
        return pl[user] * rng.exponential(1.0);
      return refined_draw(rng)[2];
    };
  }
  return out;
}

std::string refiner_to_json(const RefinerResult& r,
                            const StandardizeStats& stats) {
  nlohmann::json j = {
      {"format", "refiner-v1"},
      {"refiner", nlohmann::json::parse(network_to_json(r.refiner))},
      {"discriminator",
       nlohmann::json::parse(network_to_json(r.discriminator))},
      {"stats", {{"mean", stats.mean}, {"stdev", stats.stdev}}},
      {"diagnostics",
       {{"holdout_accuracy", r.diag.holdout_accuracy},
        {"mean_similarity", r.diag.mean_similarity},
        {"final_floor", r.diag.final_floor},
        {"aborted_mode_collapse", r.diag.aborted_mode_collapse},
        {"steps_run", r.diag.steps_run}}}};
  return j.dump();
}

void refiner_from_json(const std::string& text, RefinerResult& r,
                       StandardizeStats& stats) {
  nlohmann::json j = nlohmann::json::parse(text);
  if (j.at("format").get<std::string>() != "refiner-v1")
    throw std::invalid_argument("unknown refiner checkpoint format");
  r.refiner = network_from_json(j.at("refiner").dump());
  r.discriminator = network_from_json(j.at("discriminator").dump());
  stats.mean = j.at("stats").at("mean").get<std::vector<double>>();
  stats.stdev = j.at("stats").at("stdev").get<std::vector<double>>();
  const auto& d = j.at("diagnostics");
  r.diag.holdout_accuracy = d.at("holdout_accuracy").get<double>();
  r.diag.mean_similarity = d.at("mean_similarity").get<double>();
  r.diag.final_floor = d.at("final_floor").get<double>();
  r.diag.aborted_mode_collapse = d.at("aborted_mode_collapse").get<bool>();
  r.diag.steps_run = d.at("steps_run").get<int>();
}

}  // namespace urllc

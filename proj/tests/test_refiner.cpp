#include <cmath>
#include <cstdint>
#include <vector>

#include "doctest.h"
#include "urllc/refiner.hpp"
#include "urllc/rng.hpp"

using namespace urllc;

namespace {

Matrix matrix_from(const std::vector<std::vector<double>>& rows) {
  Matrix m(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) m.at(r, c) = rows[r][c];
  return m;
}

// Single identity-activation layer wired as the identity map.
DenseNetwork identity_net(std::size_t dim) {
  Rng rng(1);
  DenseNetwork net({dim, dim}, {Activation::identity}, rng);
  std::vector<double> flat = net.flat_parameters();
  std::fill(flat.begin(), flat.end(), 0.0);
  for (std::size_t i = 0; i < dim; ++i) flat[i * dim + i] = 1.0;
  net.set_flat_parameters(flat);
  return net;
}

// Identity map plus a constant output shift.
DenseNetwork shift_net(const std::vector<double>& shift) {
  DenseNetwork net = identity_net(shift.size());
  std::vector<double> flat = net.flat_parameters();
  const std::size_t d = shift.size();
  for (std::size_t i = 0; i < d; ++i) flat[d * d + i] = shift[i];
  net.set_flat_parameters(flat);
  return net;
}

// All-zero parameters: a sigmoid head answers 0.5 for any input.
DenseNetwork coin_flip_disc(std::size_t dim) {
  Rng rng(2);
  DenseNetwork net({dim, 1}, {Activation::sigmoid}, rng);
  std::vector<double> flat = net.flat_parameters();
  std::fill(flat.begin(), flat.end(), 0.0);
  net.set_flat_parameters(flat);
  return net;
}

std::vector<double> flatten(const Gradients& g) {
  std::vector<double> out;
  for (const auto& layer : g.layers) {
    out.insert(out.end(), layer.w.begin(), layer.w.end());
    out.insert(out.end(), layer.b.begin(), layer.b.end());
  }
  return out;
}

double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::fabs(a[i]), std::fabs(b[i]), 1e-8});
    worst = std::max(worst, std::fabs(a[i] - b[i]) / scale);
  }
  return worst;
}

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng,
                       double mean = 0.0, double stdev = 1.0) {
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      m.at(r, c) = rng.normal(mean, stdev);
  return m;
}

}  // namespace

TEST_CASE("compute_stats: population moments per dimension") {
  const Matrix m = matrix_from({{1.0, 10.0}, {3.0, 10.0}, {5.0, 10.0}});
  const StandardizeStats s = compute_stats(m);
  CHECK(s.mean[0] == doctest::Approx(3.0));
  CHECK(s.stdev[0] == doctest::Approx(std::sqrt(8.0 / 3.0)).epsilon(1e-12));
  CHECK(s.mean[1] == doctest::Approx(10.0));
  CHECK(s.stdev[1] == 1.0);  // degenerate column passes through

  CHECK_THROWS_AS(compute_stats(Matrix()), std::invalid_argument);
}

TEST_CASE("standardize and destandardize invert each other") {
  StandardizeStats s;
  s.mean = {2.0, -1.0};
  s.stdev = {0.5, 4.0};
  const std::vector<double> raw = {3.7, 11.0};
  const std::vector<double> f = standardize(raw, s);
  CHECK(f[0] == doctest::Approx((3.7 - 2.0) / 0.5).epsilon(1e-12));
  CHECK(f[1] == doctest::Approx((11.0 + 1.0) / 4.0).epsilon(1e-12));
  const std::vector<double> back = destandardize(f, s);
  CHECK(back[0] == doctest::Approx(raw[0]).epsilon(1e-12));
  CHECK(back[1] == doctest::Approx(raw[1]).epsilon(1e-12));
}

TEST_CASE("gan_losses: an uninformed discriminator scores 2 log(1/2)") {
  const DenseNetwork refiner = identity_net(2);
  const DenseNetwork disc = coin_flip_disc(2);
  const Matrix real = matrix_from({{0.3, -0.2}, {1.1, 0.4}});
  const Matrix z = matrix_from({{-0.5, 0.9}, {0.2, 0.2}});
  const GanLosses g = gan_losses(refiner, disc, real, z, 0.0);
  CHECK(g.d_objective == doctest::Approx(2.0 * std::log(0.5)).epsilon(1e-12));
  CHECK(g.similarity == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(g.r_loss == doctest::Approx(std::log(0.5)).epsilon(1e-12));
}

TEST_CASE("gan_losses: constant shift shows up as exact similarity") {
  const std::vector<double> shift = {0.3, -0.4};
  const DenseNetwork refiner = shift_net(shift);
  const DenseNetwork disc = coin_flip_disc(2);
  const Matrix real = matrix_from({{0.0, 0.0}});
  const Matrix z = matrix_from({{1.0, 2.0}, {-0.7, 0.1}, {4.0, -3.0}});
  const double lambda_r = 2.0;
  const GanLosses g = gan_losses(refiner, disc, real, z, lambda_r);
  const double norm = std::sqrt(0.3 * 0.3 + 0.4 * 0.4);  // 0.5
  CHECK(g.similarity == doctest::Approx(norm).epsilon(1e-12));
  CHECK(g.r_loss ==
        doctest::Approx(std::log(0.5) + lambda_r * norm).epsilon(1e-12));
}

TEST_CASE("gan_losses: clamp keeps saturated discriminators finite") {
  const DenseNetwork refiner = identity_net(1);
  Rng rng(3);
  DenseNetwork disc({1, 1}, {Activation::sigmoid}, rng);
  std::vector<double> flat = disc.flat_parameters();
  flat[0] = 0.0;
  flat[1] = 100.0;  // sigmoid(100) rounds to 1.0
  disc.set_flat_parameters(flat);
  const Matrix batch = matrix_from({{0.0}});
  const GanLosses g = gan_losses(refiner, disc, batch, batch, 0.0);
  CHECK(std::isfinite(g.d_objective));
  CHECK(std::isfinite(g.r_loss));
  // log D(x) -> log(1 - 1e-7), log(1 - D(F(z))) -> log(1e-7)
  CHECK(g.d_objective ==
        doctest::Approx(std::log(1.0 - 1e-7) + std::log(1e-7)).epsilon(1e-9));
}

TEST_CASE("gan_losses: empty batches throw") {
  const DenseNetwork refiner = identity_net(1);
  const DenseNetwork disc = coin_flip_disc(1);
  const Matrix some = matrix_from({{0.0}});
  CHECK_THROWS_AS(gan_losses(refiner, disc, Matrix(), some, 0.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(gan_losses(refiner, disc, some, Matrix(), 0.0),
                  std::invalid_argument);
}

TEST_CASE("disc_objective_grad matches finite differences of the objective") {
  Rng rng(41);
  for (int trial = 0; trial < 5; ++trial) {
    DenseNetwork refiner({2, 6, 2}, {Activation::tanh, Activation::identity},
                         rng);
    DenseNetwork disc({2, 6, 1}, {Activation::tanh, Activation::sigmoid}, rng);
    const Matrix real = gaussian_matrix(5, 2, rng, 0.4, 0.8);
    const Matrix z = gaussian_matrix(5, 2, rng);

    Gradients dg;
    const double obj = disc_objective_grad(refiner, disc, real, z, dg);
    CHECK(obj ==
          doctest::Approx(gan_losses(refiner, disc, real, z, 0.0).d_objective)
              .epsilon(1e-12));

    const std::vector<double> analytic = flatten(dg);
    std::vector<double> theta = disc.flat_parameters();
    std::vector<double> numeric(theta.size());
    const double h = 1e-6;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      std::vector<double> tp = theta, tm = theta;
      tp[i] += h;
      tm[i] -= h;
      disc.set_flat_parameters(tp);
      const double op = gan_losses(refiner, disc, real, z, 0.0).d_objective;
      disc.set_flat_parameters(tm);
      const double om = gan_losses(refiner, disc, real, z, 0.0).d_objective;
      // grads descend the negated objective
      numeric[i] = -(op - om) / (2.0 * h);
    }
    disc.set_flat_parameters(theta);
    CHECK(max_rel_err(analytic, numeric) < 1e-4);
  }
}

TEST_CASE("refiner_loss_grad matches finite differences of the loss") {
  Rng rng(42);
  for (int trial = 0; trial < 5; ++trial) {
    DenseNetwork refiner({2, 6, 2}, {Activation::tanh, Activation::identity},
                         rng);
    DenseNetwork disc({2, 6, 1}, {Activation::tanh, Activation::sigmoid}, rng);
    const Matrix z = gaussian_matrix(5, 2, rng);
    const double lambda_r = (trial % 2 == 0) ? 0.0 : 1.5;

    Gradients rg;
    double sim = -1.0;
    const double loss = refiner_loss_grad(refiner, disc, z, lambda_r, rg, &sim);
    const Matrix dummy_real = matrix_from({{0.0, 0.0}});
    const GanLosses g = gan_losses(refiner, disc, dummy_real, z, lambda_r);
    CHECK(loss == doctest::Approx(g.r_loss).epsilon(1e-12));
    CHECK(sim == doctest::Approx(g.similarity).epsilon(1e-12));

    const std::vector<double> analytic = flatten(rg);
    std::vector<double> theta = refiner.flat_parameters();
    std::vector<double> numeric(theta.size());
    const double h = 1e-6;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      std::vector<double> tp = theta, tm = theta;
      tp[i] += h;
      tm[i] -= h;
      refiner.set_flat_parameters(tp);
      const double lp =
          gan_losses(refiner, disc, dummy_real, z, lambda_r).r_loss;
      refiner.set_flat_parameters(tm);
      const double lm =
          gan_losses(refiner, disc, dummy_real, z, lambda_r).r_loss;
      numeric[i] = (lp - lm) / (2.0 * h);
    }
    refiner.set_flat_parameters(theta);
    CHECK(max_rel_err(analytic, numeric) < 1e-4);
  }
}

TEST_CASE("epsilon_floor: mean-shift distance, exact on constant shifts") {
  const Matrix z = matrix_from({{0.0, 0.0}, {2.0, 1.0}});
  const Matrix refined = matrix_from({{1.0, 0.0}, {3.0, 2.0}});
  // mean diff (1, 0.5)
  CHECK(epsilon_floor(refined, z) ==
        doctest::Approx(std::sqrt(1.25)).epsilon(1e-12));

  const Matrix same = matrix_from({{0.4, -0.1}, {0.2, 0.8}});
  CHECK(epsilon_floor(same, same) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("mean similarity never falls below the floor") {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    DenseNetwork refiner({3, 8, 3}, {Activation::tanh, Activation::identity},
                         rng);
    const Matrix z = gaussian_matrix(32, 3, rng);
    Matrix refined(32, 3);
    double mean_sim = 0.0;
    for (std::size_t r = 0; r < z.rows; ++r) {
      std::vector<double> zi(z.row(r), z.row(r) + 3);
      const std::vector<double> fz = refiner.forward(zi);
      double n2 = 0.0;
      for (int c = 0; c < 3; ++c) {
        refined.at(r, c) = fz[c];
        n2 += (fz[c] - zi[c]) * (fz[c] - zi[c]);
      }
      mean_sim += std::sqrt(n2);
    }
    mean_sim /= static_cast<double>(z.rows);
    CHECK(mean_sim >= epsilon_floor(refined, z) - 1e-9);
  }
}

TEST_CASE("train_refiner: input validation") {
  RefinerConfig cfg;
  cfg.steps = 1;
  auto synth = [](Rng& r) { return std::vector<double>{r.normal()}; };
  CHECK_THROWS_AS(
      train_refiner(matrix_from({{1.0}, {2.0}}), synth, cfg, 1),
      std::invalid_argument);
  // constant column: nothing to learn, reject early
  CHECK_THROWS_AS(
      train_refiner(matrix_from({{3.0}, {3.0}, {3.0}, {3.0}, {3.0}}), synth,
                    cfg, 1),
      std::invalid_argument);
  // synthetic dimension mismatch surfaces on the first draw
  Rng rng(5);
  const Matrix data = gaussian_matrix(16, 2, rng);
  CHECK_THROWS_AS(train_refiner(data, synth, cfg, 1), std::invalid_argument);
}

TEST_CASE("train_refiner: deterministic in the seed") {
  Rng rng(9);
  const Matrix data = gaussian_matrix(64, 1, rng, 1.0, 0.5);
  auto synth = [](Rng& r) { return std::vector<double>{r.normal()}; };
  RefinerConfig cfg;
  cfg.steps = 40;
  cfg.batch_size = 16;
  cfg.hidden = 8;
  const RefinerResult a = train_refiner(data, synth, cfg, 123);
  const RefinerResult b = train_refiner(data, synth, cfg, 123);
  const RefinerResult c = train_refiner(data, synth, cfg, 124);
  CHECK(a.refiner.flat_parameters() == b.refiner.flat_parameters());
  CHECK(a.discriminator.flat_parameters() ==
        b.discriminator.flat_parameters());
  CHECK(a.diag.mean_similarity == b.diag.mean_similarity);
  CHECK(a.diag.holdout_accuracy == b.diag.holdout_accuracy);
  CHECK(a.refiner.flat_parameters() != c.refiner.flat_parameters());
  CHECK(a.diag.steps_run == 40);
  CHECK(!a.diag.aborted_mode_collapse);
  CHECK(a.diag.holdout_accuracy >= 0.0);
  CHECK(a.diag.holdout_accuracy <= 1.0);
  CHECK(a.diag.mean_similarity >= 0.0);
  CHECK(a.diag.final_floor >= 0.0);
}

TEST_CASE("train_refiner: heavy similarity penalty pins the refiner down") {
  Rng rng(10);
  const Matrix data = gaussian_matrix(128, 1, rng, 2.0, 1.0);
  auto synth = [](Rng& r) { return std::vector<double>{r.normal()}; };
  RefinerConfig cfg;
  cfg.lambda_r = 1e3;
  cfg.steps = 400;
  cfg.batch_size = 32;
  cfg.hidden = 8;
  cfg.lr_refiner = 1e-3;
  const RefinerResult res = train_refiner(data, synth, cfg, 7);
  RefinerConfig free_cfg = cfg;
  free_cfg.lambda_r = 0.0;
  const RefinerResult free_res = train_refiner(data, synth, free_cfg, 7);
  // the penalty run ends far closer to the identity than the free run
  CHECK(res.diag.mean_similarity < 0.1);
  CHECK(res.diag.mean_similarity < free_res.diag.mean_similarity);
}

TEST_CASE("train_refiner: constant synthetic input trips the collapse guard") {
  Rng rng(11);
  const Matrix data = gaussian_matrix(64, 1, rng);
  auto synth = [](Rng&) { return std::vector<double>{0.7}; };
  RefinerConfig cfg;
  cfg.steps = 500;
  cfg.batch_size = 8;
  cfg.hidden = 4;
  cfg.collapse_patience = 50;
  const RefinerResult res = train_refiner(data, synth, cfg, 3);
  CHECK(res.diag.aborted_mode_collapse);
  CHECK(res.diag.steps_run == 50);
}

TEST_CASE("refiner checkpoint json round trip") {
  Rng rng(12);
  const Matrix data = gaussian_matrix(32, 2, rng, 0.5, 2.0);
  auto synth = [](Rng& r) {
    return std::vector<double>{r.normal(), r.normal()};
  };
  RefinerConfig cfg;
  cfg.steps = 10;
  cfg.batch_size = 8;
  cfg.hidden = 6;
  const RefinerResult res = train_refiner(data, synth, cfg, 21);
  const StandardizeStats stats = compute_stats(data);

  const std::string text = refiner_to_json(res, stats);
  RefinerResult back;
  StandardizeStats back_stats;
  refiner_from_json(text, back, back_stats);

  CHECK(back_stats.mean == stats.mean);
  CHECK(back_stats.stdev == stats.stdev);
  const std::vector<double> probe = {0.3, -1.2};
  CHECK(back.refiner.forward(probe) == res.refiner.forward(probe));
  CHECK(back.discriminator.forward(probe) ==
        res.discriminator.forward(probe));
}

TEST_CASE("build_virtual_env: mixture weights and trace shape are validated") {
  const DenseNetwork refiner = identity_net(3);
  StandardizeStats stats;
  stats.mean = {0.0, 0.0, 0.0};
  stats.stdev = {1.0, 1.0, 1.0};
  EnvConfig cfg;
  cfg.n_users = 2;
  cfg.n_rbs = 2;
  std::vector<std::vector<Packet>> trace(2);
  trace[0].push_back({0, 0.001, 100, {}});
  trace[1].push_back({1, 0.002, 200, {}});
  const std::vector<Point2D> pos = {{100.0, 100.0}, {300.0, 200.0}};

  VirtualEnvSpec bad;
  bad.real_weight = 0.7;
  bad.refined_weight = 0.2;
  CHECK_THROWS_AS(build_virtual_env(bad, refiner, stats, trace, cfg, pos, 1),
                  std::invalid_argument);
  bad.real_weight = -0.1;
  bad.refined_weight = 1.1;
  CHECK_THROWS_AS(build_virtual_env(bad, refiner, stats, trace, cfg, pos, 1),
                  std::invalid_argument);

  VirtualEnvSpec ok;
  ok.real_weight = 1.0;
  ok.refined_weight = 0.0;
  std::vector<std::vector<Packet>> short_trace(1);
  CHECK_THROWS_AS(
      build_virtual_env(ok, refiner, stats, short_trace, cfg, pos, 1),
      std::invalid_argument);
}

TEST_CASE("build_virtual_env: pure real mixture replays the trace verbatim") {
  const DenseNetwork refiner = identity_net(3);
  StandardizeStats stats;
  stats.mean = {0.0, 0.0, 0.0};
  stats.stdev = {1.0, 1.0, 1.0};
  EnvConfig cfg;
  cfg.n_users = 2;
  cfg.n_rbs = 2;
  std::vector<std::vector<Packet>> trace(2);
  trace[0] = {{0, 0.001, 100, {}}, {0, 0.004, 300, {}}};
  trace[1] = {{1, 0.002, 200, {}}};
  const std::vector<Point2D> pos = {{100.0, 100.0}, {300.0, 200.0}};

  VirtualEnvSpec spec;
  spec.real_weight = 1.0;
  spec.refined_weight = 0.0;
  VirtualEnv env = build_virtual_env(spec, refiner, stats, trace, cfg, pos, 5);
  CHECK(env.sources.size() == 2);
  CHECK(!env.gain_sampler);

  const std::vector<Packet> got = env.sources[0].generate(0.0, 0.005);
  REQUIRE(got.size() == 2);
  CHECK(got[0].arrival_time_s == doctest::Approx(0.001));
  CHECK(got[0].size_bits == 100);
  CHECK(got[1].arrival_time_s == doctest::Approx(0.004));
  CHECK(got[1].size_bits == 300);
}

TEST_CASE("build_virtual_env: pure refined identity mixture keeps base moments") {
  // identity refiner + unit stats: refined draws are the raw synthetic base,
  // so arrival and gain statistics must match the spec'd means
  const DenseNetwork refiner = identity_net(3);
  StandardizeStats stats;
  stats.mean = {0.0, 0.0, 0.0};
  stats.stdev = {1.0, 1.0, 1.0};
  EnvConfig cfg;
  cfg.n_users = 1;
  cfg.n_rbs = 1;
  std::vector<std::vector<Packet>> trace(1);
  trace[0] = {{0, 0.001, 100, {}}};
  const std::vector<Point2D> pos = {{250.0, 250.0}};

  VirtualEnvSpec spec;
  spec.real_weight = 0.0;
  spec.refined_weight = 1.0;
  spec.synth_mean_iat_s = 2e-3;
  spec.synth_mean_size_bits = 500.0;
  spec.synth_gain_mean = 3e-12;
  VirtualEnv env = build_virtual_env(spec, refiner, stats, trace, cfg, pos, 17);
  REQUIRE(env.sources.size() == 1);
  REQUIRE(static_cast<bool>(env.gain_sampler));

  const std::vector<Packet> got = env.sources[0].generate(0.0, 4.0);
  REQUIRE(got.size() > 500);
  double prev = 0.0, sum_iat = 0.0, sum_bits = 0.0;
  for (const Packet& p : got) {
    CHECK(p.arrival_time_s > prev);
    CHECK(p.size_bits >= 1);
    sum_iat += p.arrival_time_s - prev;
    sum_bits += static_cast<double>(p.size_bits);
    prev = p.arrival_time_s;
  }
  CHECK(sum_iat / got.size() == doctest::Approx(2e-3).epsilon(0.15));
  CHECK(sum_bits / got.size() == doctest::Approx(500.0).epsilon(0.15));

  Rng grng(23);
  double sum_gain = 0.0;
  const int draws = 4000;
  for (int i = 0; i < draws; ++i) {
    const double g = env.gain_sampler(0, 0, i, grng);
    CHECK(g > 0.0);
    sum_gain += g;
  }
  CHECK(sum_gain / draws == doctest::Approx(3e-12).epsilon(0.1));
  CHECK(env.resamples->second > 0);
}

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "urllc/env.hpp"
#include "urllc/nnet.hpp"
#include "urllc/tensor.hpp"

namespace urllc {

// Per-dimension standardization of a feature dataset.
struct StandardizeStats {
  std::vector<double> mean;
  std::vector<double> stdev;
};

StandardizeStats compute_stats(const Matrix& data);
std::vector<double> standardize(const std::vector<double>& raw,
                                const StandardizeStats& s);
std::vector<double> destandardize(const std::vector<double>& f,
                                  const StandardizeStats& s);

struct RefinerConfig {
  double lambda_r = 0.0;     // similarity penalty weight
  double epsilon_r = 0.1;    // similarity budget (reporting threshold)
  int batch_size = 128;
  double lr_refiner = 1e-4;
  double lr_disc = 1e-4;
  int steps = 20000;
  int hidden = 32;
  double holdout_fraction = 0.2;
  int collapse_patience = 100;
  double collapse_var_floor = 1e-6;
};

struct GanLosses {
  double d_objective = 0.0;  // E[log D(x)] + E[log(1 - D(F(z)))], maximized
  double r_loss = 0.0;       // E[log(1 - D(F(z)))] + lambda_r E||F(z) - z||
  double similarity = 0.0;   // E||F(z) - z||
};

// Values of both objectives on the given batches. Discriminator outputs are
// clamped to [1e-7, 1 - 1e-7] before the logs.
GanLosses gan_losses(const DenseNetwork& refiner, const DenseNetwork& disc,
                     const Matrix& real_batch, const Matrix& z_batch,
                     double lambda_r);

// Gradient of the discriminator's negated objective (a descent direction for
// maximizing it) with the refiner frozen. Returns the objective value.
double disc_objective_grad(const DenseNetwork& refiner,
                           const DenseNetwork& disc, const Matrix& real_batch,
                           const Matrix& z_batch, Gradients& d_grads);

// Gradient of the refiner loss with the discriminator frozen. Returns the
// loss value; similarity_out receives the batch-mean similarity term.
double refiner_loss_grad(const DenseNetwork& refiner, const DenseNetwork& disc,
                         const Matrix& z_batch, double lambda_r,
                         Gradients& r_grads, double* similarity_out = nullptr);

// Theorem floor: the norm of the difference between the refined-batch and
// input-batch sample means. Mean per-sample ||F(z) - z|| can never fall
// below it.
double epsilon_floor(const Matrix& refined, const Matrix& z);

struct RefinerDiagnostics {
  double holdout_accuracy = 0.0;
  double mean_similarity = 0.0;  // over the final 100 steps
  double final_floor = 0.0;      // epsilon_floor on a fresh batch
  bool aborted_mode_collapse = false;
  int steps_run = 0;
};

struct RefinerResult {
  DenseNetwork refiner;
  DenseNetwork discriminator;
  RefinerDiagnostics diag;
};

using SynthSampler = std::function<std::vector<double>(Rng&)>;

// Alternating 1:1 adversarial training of refiner vs discriminator on
// feature-space data. A held-out slice of the real data scores the final
// discriminator.
RefinerResult train_refiner(const Matrix& real_data, const SynthSampler& synth,
                            const RefinerConfig& cfg, std::uint64_t seed);

// Mixture description for the virtual training environment.
struct VirtualEnvSpec {
  double real_weight = 0.5;
  double refined_weight = 0.5;
  // Raw-space synthetic base (memoryless arrivals), refined before use.
  double synth_mean_iat_s = 1e-3;
  double synth_mean_size_bits = 2800.0;
  double synth_gain_mean = 1e-12;
};

struct VirtualEnv {
  std::vector<TrafficStream> sources;
  Environment::GainSampler gain_sampler;  // empty when real_weight == 1
  std::shared_ptr<std::pair<std::int64_t, std::int64_t>> resamples;  // (resampled, drawn)
};

// Assembles per-user traffic streams (and a gain sampler) that interleave
// real-trace replay with refined synthetic draws per the mixture weights.
// Features are [log IAT, log size, log gain], standardized with `stats`.
VirtualEnv build_virtual_env(const VirtualEnvSpec& spec,
                             const DenseNetwork& refiner,
                             const StandardizeStats& stats,
                             const std::vector<std::vector<Packet>>& real_trace,
                             const EnvConfig& cfg,
                             const std::vector<Point2D>& positions,
                             std::uint64_t seed);

// Checkpoint: refiner + discriminator + standardization statistics.
std::string refiner_to_json(const RefinerResult& r,
                            const StandardizeStats& stats);
void refiner_from_json(const std::string& text, RefinerResult& r,
                       StandardizeStats& stats);

}  // namespace urllc

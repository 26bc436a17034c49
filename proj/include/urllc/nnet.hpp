#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "urllc/rng.hpp"

namespace urllc {

enum class Activation { identity, relu, tanh, sigmoid };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

// Per-layer parameter block. Weights are row-major (out x in).
struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> w;
  std::vector<double> b;
  Activation act = Activation::identity;
};

// Intermediate values of one forward pass, kept so backward() can replay it.
struct ForwardCache {
  std::vector<double> input;
  std::vector<std::vector<double>> pre;   // z = W x + b per layer
  std::vector<std::vector<double>> post;  // activation(z) per layer
};

// Gradient of a scalar loss with respect to every parameter, mirroring the
// layer layout of the network it was computed for.
struct Gradients {
  struct LayerGrad {
    std::vector<double> w;
    std::vector<double> b;
  };
  std::vector<LayerGrad> layers;

  void scale(double s);
  void add(const Gradients& other, double s = 1.0);
  void zero();
  bool finite() const;
};

// Fully connected network, float64 throughout. Widths give layer sizes from
// input to output; activations has one entry per weight layer.
class DenseNetwork {
 public:
  DenseNetwork() = default;
  DenseNetwork(const std::vector<std::size_t>& widths,
               const std::vector<Activation>& activations, Rng& rng);

  std::size_t input_size() const;
  std::size_t output_size() const;
  std::size_t layer_count() const { return layers_.size(); }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  std::vector<double> forward(const std::vector<double>& input,
                              ForwardCache* cache = nullptr) const;

  // Reverse-mode pass for one sample. out_grad is dLoss/dOutput. Returns
  // parameter gradients; if input_grad is non-null it also receives
  // dLoss/dInput (needed when this network feeds another one).
  Gradients backward(const ForwardCache& cache,
                     const std::vector<double>& out_grad,
                     std::vector<double>* input_grad = nullptr) const;

  Gradients zero_gradients() const;

  std::size_t parameter_count() const;
  std::vector<double> flat_parameters() const;
  void set_flat_parameters(const std::vector<double>& params);

 private:
  std::vector<DenseLayer> layers_;
};

enum class OptimizerKind { sgd, adam };

// First-order optimizer with state. Adam keeps bias-corrected first/second
// moments (beta1 0.9, beta2 0.999, eps 1e-8).
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(OptimizerKind kind, double learning_rate);

  OptimizerKind kind() const { return kind_; }
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }
  std::int64_t step_count() const { return step_; }

  // Applies one update in place. Returns false (and changes nothing) when the
  // gradient contains a non-finite value.
  bool apply_update(DenseNetwork& net, const Gradients& grads);

  // Checkpoint access.
  const std::vector<double>& first_moment() const { return m_; }
  const std::vector<double>& second_moment() const { return v_; }
  void restore_state(std::int64_t step, std::vector<double> m,
                     std::vector<double> v);

 private:
  OptimizerKind kind_ = OptimizerKind::sgd;
  double lr_ = 1e-3;
  std::int64_t step_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

// JSON checkpoints. Doubles survive the round trip bit-exactly.
std::string network_to_json(const DenseNetwork& net);
DenseNetwork network_from_json(const std::string& text);
std::string checkpoint_to_json(const DenseNetwork& net, const Optimizer& opt);
void checkpoint_from_json(const std::string& text, DenseNetwork& net,
                          Optimizer& opt);
void save_checkpoint(const std::string& path, const DenseNetwork& net,
                     const Optimizer& opt);
void load_checkpoint(const std::string& path, DenseNetwork& net,
                     Optimizer& opt);

}  // namespace urllc

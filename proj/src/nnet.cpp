#include "urllc/nnet.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace urllc {

namespace {

double activate(Activation a, double z) {
  switch (a) {
    case Activation::identity: return z;
    case Activation::relu: return z > 0.0 ? z : 0.0;
    case Activation::tanh: return std::tanh(z);
    case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-z));
  }
  return z;
}

// Derivative in terms of pre-activation z and post-activation y.
double activate_grad(Activation a, double z, double y) {
  switch (a) {
    case Activation::identity: return 1.0;
    case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: return 1.0 - y * y;
    case Activation::sigmoid: return y * (1.0 - y);
  }
  return 1.0;
}

}  // namespace

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
  }
  return "identity";
}

Activation activation_from_name(const std::string& name) {
  if (name == "identity") return Activation::identity;
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "sigmoid") return Activation::sigmoid;
  throw std::invalid_argument("unknown activation: " + name);
}

void Gradients::scale(double s) {
  for (auto& l : layers) {
    for (auto& g : l.w) g *= s;
    for (auto& g : l.b) g *= s;
  }
}

void Gradients::add(const Gradients& other, double s) {
  for (std::size_t k = 0; k < layers.size(); ++k) {
    for (std::size_t i = 0; i < layers[k].w.size(); ++i)
      layers[k].w[i] += s * other.layers[k].w[i];
    for (std::size_t i = 0; i < layers[k].b.size(); ++i)
      layers[k].b[i] += s * other.layers[k].b[i];
  }
}

void Gradients::zero() {
  for (auto& l : layers) {
    std::fill(l.w.begin(), l.w.end(), 0.0);
    std::fill(l.b.begin(), l.b.end(), 0.0);
  }
}

bool Gradients::finite() const {
  for (const auto& l : layers) {
    for (double g : l.w)
      if (!std::isfinite(g)) return false;
    for (double g : l.b)
      if (!std::isfinite(g)) return false;
  }
  return true;
}

DenseNetwork::DenseNetwork(const std::vector<std::size_t>& widths,
                           const std::vector<Activation>& activations,
                           Rng& rng) {
  if (widths.size() < 2)
    throw std::invalid_argument("network needs at least one layer");
  if (activations.size() != widths.size() - 1)
    throw std::invalid_argument("one activation per weight layer required");
  layers_.resize(widths.size() - 1);
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    DenseLayer& l = layers_[k];
    l.in = widths[k];
    l.out = widths[k + 1];
    l.act = activations[k];
    l.w.resize(l.in * l.out);
    l.b.assign(l.out, 0.0);
    const double bound =
        std::sqrt(6.0 / static_cast<double>(l.in + l.out));
    for (auto& w : l.w) w = rng.uniform(-bound, bound);
  }
}

std::size_t DenseNetwork::input_size() const {
  return layers_.empty() ? 0 : layers_.front().in;
}

std::size_t DenseNetwork::output_size() const {
  return layers_.empty() ? 0 : layers_.back().out;
}

std::vector<double> DenseNetwork::forward(const std::vector<double>& input,
                                          ForwardCache* cache) const {
  if (input.size() != input_size())
    throw std::invalid_argument("input size mismatch");
  if (cache) {
    cache->input = input;
    cache->pre.assign(layers_.size(), {});
    cache->post.assign(layers_.size(), {});
  }
  std::vector<double> x = input;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const DenseLayer& l = layers_[k];
    std::vector<double> z(l.out);
    for (std::size_t o = 0; o < l.out; ++o) {
      double acc = l.b[o];
      const double* wrow = l.w.data() + o * l.in;
      for (std::size_t i = 0; i < l.in; ++i) acc += wrow[i] * x[i];
      z[o] = acc;
    }
    std::vector<double> y(l.out);
    for (std::size_t o = 0; o < l.out; ++o) y[o] = activate(l.act, z[o]);
    if (cache) {
      cache->pre[k] = z;
      cache->post[k] = y;
    }
    x = std::move(y);
  }
  return x;
}

Gradients DenseNetwork::backward(const ForwardCache& cache,
                                 const std::vector<double>& out_grad,
                                 std::vector<double>* input_grad) const {
  if (cache.pre.size() != layers_.size())
    throw std::invalid_argument("cache does not match network");
  if (out_grad.size() != output_size())
    throw std::invalid_argument("output gradient size mismatch");

  Gradients grads = zero_gradients();
  std::vector<double> delta = out_grad;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    const DenseLayer& l = layers_[k];
    // delta currently holds dL/dy for this layer; fold in the activation.
    for (std::size_t o = 0; o < l.out; ++o)
      delta[o] *= activate_grad(l.act, cache.pre[k][o], cache.post[k][o]);
    const std::vector<double>& x =
        (k == 0) ? cache.input : cache.post[k - 1];
    auto& lg = grads.layers[k];
    for (std::size_t o = 0; o < l.out; ++o) {
      lg.b[o] += delta[o];
      double* gw = lg.w.data() + o * l.in;
      for (std::size_t i = 0; i < l.in; ++i) gw[i] += delta[o] * x[i];
    }
    std::vector<double> next(l.in, 0.0);
    for (std::size_t o = 0; o < l.out; ++o) {
      const double* wrow = l.w.data() + o * l.in;
      for (std::size_t i = 0; i < l.in; ++i) next[i] += wrow[i] * delta[o];
    }
    delta = std::move(next);
  }
  if (input_grad) *input_grad = delta;
  return grads;
}

Gradients DenseNetwork::zero_gradients() const {
  Gradients g;
  g.layers.resize(layers_.size());
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    g.layers[k].w.assign(layers_[k].w.size(), 0.0);
    g.layers[k].b.assign(layers_[k].b.size(), 0.0);
  }
  return g;
}

std::size_t DenseNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.w.size() + l.b.size();
  return n;
}

std::vector<double> DenseNetwork::flat_parameters() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& l : layers_) {
    out.insert(out.end(), l.w.begin(), l.w.end());
    out.insert(out.end(), l.b.begin(), l.b.end());
  }
  return out;
}

void DenseNetwork::set_flat_parameters(const std::vector<double>& params) {
  if (params.size() != parameter_count())
    throw std::invalid_argument("parameter count mismatch");
  std::size_t pos = 0;
  for (auto& l : layers_) {
    std::copy(params.begin() + pos, params.begin() + pos + l.w.size(),
              l.w.begin());
    pos += l.w.size();
    std::copy(params.begin() + pos, params.begin() + pos + l.b.size(),
              l.b.begin());
    pos += l.b.size();
  }
}

Optimizer::Optimizer(OptimizerKind kind, double learning_rate)
    : kind_(kind), lr_(learning_rate) {}

bool Optimizer::apply_update(DenseNetwork& net, const Gradients& grads) {
  if (!grads.finite()) return false;
  const std::size_t n = net.parameter_count();
  if (kind_ == OptimizerKind::adam && m_.size() != n) {
    m_.assign(n, 0.0);
    v_.assign(n, 0.0);
  }
  std::vector<double> flat_g;
  flat_g.reserve(n);
  for (const auto& lg : grads.layers) {
    flat_g.insert(flat_g.end(), lg.w.begin(), lg.w.end());
    flat_g.insert(flat_g.end(), lg.b.begin(), lg.b.end());
  }
  if (flat_g.size() != n)
    throw std::invalid_argument("gradient does not match network");

  std::vector<double> params = net.flat_parameters();
  ++step_;
  if (kind_ == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < n; ++i) params[i] -= lr_ * flat_g[i];
  } else {
    constexpr double beta1 = 0.9;
    constexpr double beta2 = 0.999;
    constexpr double eps = 1e-8;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < n; ++i) {
      m_[i] = beta1 * m_[i] + (1.0 - beta1) * flat_g[i];
      v_[i] = beta2 * v_[i] + (1.0 - beta2) * flat_g[i] * flat_g[i];
      const double mhat = m_[i] / bc1;
      const double vhat = v_[i] / bc2;
      params[i] -= lr_ * mhat / (std::sqrt(vhat) + eps);
    }
  }
  net.set_flat_parameters(params);
  return true;
}

void Optimizer::restore_state(std::int64_t step, std::vector<double> m,
                              std::vector<double> v) {
  step_ = step;
  m_ = std::move(m);
  v_ = std::move(v);
}

namespace {

nlohmann::json network_json(const DenseNetwork& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net.layers()) {
    layers.push_back({{"in", l.in},
                      {"out", l.out},
                      {"activation", activation_name(l.act)},
                      {"w", l.w},
                      {"b", l.b}});
  }
  return {{"format", "dense-v1"}, {"layers", layers}};
}

DenseNetwork network_from(const nlohmann::json& j) {
  if (j.at("format").get<std::string>() != "dense-v1")
    throw std::invalid_argument("unknown network format");
  DenseNetwork net;
  for (const auto& lj : j.at("layers")) {
    DenseLayer l;
    l.in = lj.at("in").get<std::size_t>();
    l.out = lj.at("out").get<std::size_t>();
    l.act = activation_from_name(lj.at("activation").get<std::string>());
    l.w = lj.at("w").get<std::vector<double>>();
    l.b = lj.at("b").get<std::vector<double>>();
    if (l.w.size() != l.in * l.out || l.b.size() != l.out)
      throw std::invalid_argument("layer shape mismatch in checkpoint");
    net.layers().push_back(std::move(l));
  }
  return net;
}

}  // namespace

std::string network_to_json(const DenseNetwork& net) {
  return network_json(net).dump();
}

DenseNetwork network_from_json(const std::string& text) {
  return network_from(nlohmann::json::parse(text));
}

std::string checkpoint_to_json(const DenseNetwork& net, const Optimizer& opt) {
  nlohmann::json j = {
      {"format", "checkpoint-v1"},
      {"network", network_json(net)},
      {"optimizer",
       {{"kind", opt.kind() == OptimizerKind::adam ? "adam" : "sgd"},
        {"learning_rate", opt.learning_rate()},
        {"step", opt.step_count()},
        {"m", opt.first_moment()},
        {"v", opt.second_moment()}}}};
  return j.dump();
}

void checkpoint_from_json(const std::string& text, DenseNetwork& net,
                          Optimizer& opt) {
  nlohmann::json j = nlohmann::json::parse(text);
  if (j.at("format").get<std::string>() != "checkpoint-v1")
    throw std::invalid_argument("unknown checkpoint format");
  net = network_from(j.at("network"));
  const auto& oj = j.at("optimizer");
  const std::string kind = oj.at("kind").get<std::string>();
  opt = Optimizer(kind == "adam" ? OptimizerKind::adam : OptimizerKind::sgd,
                  oj.at("learning_rate").get<double>());
  opt.restore_state(oj.at("step").get<std::int64_t>(),
                    oj.at("m").get<std::vector<double>>(),
                    oj.at("v").get<std::vector<double>>());
}

void save_checkpoint(const std::string& path, const DenseNetwork& net,
                     const Optimizer& opt) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << checkpoint_to_json(net, opt);
}

void load_checkpoint(const std::string& path, DenseNetwork& net,
                     Optimizer& opt) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  checkpoint_from_json(ss.str(), net, opt);
}

}  // namespace urllc

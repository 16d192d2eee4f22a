#pragma once

// Small multilayer perceptrons with reverse-mode gradients for parameters and
// inputs, first-order optimizers and a binary checkpoint format.
//
// Batches are stored column-wise: an input batch is (input_dim x batch).

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "magps/numerics.hpp"

namespace magps {

class StaleCache : public Error {
 public:
  using Error::Error;
};

enum class Activation { Tanh, Identity };

inline std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "identity"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "identity") return Activation::Identity;
  throw Error("unknown activation '" + s + "'");
}

struct Layer {
  Matrix W;  // out x in
  Vector b;  // out
  Activation activation = Activation::Tanh;
};

struct ForwardCache {
  std::vector<Matrix> inputs;   // [l] input to layer l
  std::vector<Matrix> outputs;  // [l] post-activation output of layer l
};

struct GradientRecord {
  std::vector<Matrix> dW;
  std::vector<Vector> db;
  Matrix dx;  // input gradients, one column per batch element

  /// Parameter gradients flattened in checkpoint order.
  Vector flatten() const {
    Eigen::Index size = 0;
    for (std::size_t l = 0; l < dW.size(); ++l) size += dW[l].size() + db[l].size();
    Vector out(size);
    Eigen::Index o = 0;
    for (std::size_t l = 0; l < dW.size(); ++l) {
      for (Eigen::Index r = 0; r < dW[l].rows(); ++r)
        for (Eigen::Index c = 0; c < dW[l].cols(); ++c) out(o++) = dW[l](r, c);
      out.segment(o, db[l].size()) = db[l];
      o += db[l].size();
    }
    return out;
  }
};

class Network {
 public:
  Network() = default;
  explicit Network(std::vector<Layer> layers) : layers_(std::move(layers)) { check(); }

  /// Fully connected net with tanh hidden layers and an identity output.
  /// Weights and biases are uniform in +-1/sqrt(fan_in).
  static Network make(int input_dim, const std::vector<int>& hidden, int output_dim,
                      std::mt19937_64& rng) {
    std::vector<int> sizes{input_dim};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(output_dim);
    std::vector<Layer> layers;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      const int in = sizes[l], out = sizes[l + 1];
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      std::uniform_real_distribution<double> u(-bound, bound);
      Layer layer;
      layer.W.resize(out, in);
      layer.b.resize(out);
      for (int r = 0; r < out; ++r)
        for (int c = 0; c < in; ++c) layer.W(r, c) = u(rng);
      for (int r = 0; r < out; ++r) layer.b(r) = u(rng);
      layer.activation = l + 2 == sizes.size() ? Activation::Identity : Activation::Tanh;
      layers.push_back(std::move(layer));
    }
    return Network(std::move(layers));
  }

  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }
  int input_dim() const { return static_cast<int>(layers_.front().W.cols()); }
  int output_dim() const { return static_cast<int>(layers_.back().W.rows()); }
  std::vector<int> sizes() const {
    std::vector<int> s{input_dim()};
    for (const auto& l : layers_) s.push_back(static_cast<int>(l.W.rows()));
    return s;
  }

  Eigen::Index parameter_count() const {
    Eigen::Index n = 0;
    for (const auto& l : layers_) n += l.W.size() + l.b.size();
    return n;
  }

  Matrix forward(const Matrix& X) const {
    require(!layers_.empty(), "network: no layers");
    require(X.rows() == input_dim(), "network: input dimension mismatch");
    Matrix h = X;
    for (const auto& l : layers_) h = activate(l, (l.W * h).colwise() + l.b);
    return h;
  }

  Vector forward(const Vector& x) const { return forward(Matrix(x)).col(0); }

  Matrix forward(const Matrix& X, ForwardCache& cache) const {
    require(!layers_.empty(), "network: no layers");
    require(X.rows() == input_dim(), "network: input dimension mismatch");
    cache.inputs.clear();
    cache.outputs.clear();
    Matrix h = X;
    for (const auto& l : layers_) {
      cache.inputs.push_back(h);
      h = activate(l, (l.W * h).colwise() + l.b);
      cache.outputs.push_back(h);
    }
    return h;
  }

  /// Reverse pass: parameter gradients summed over the batch and per-column
  /// input gradients, for upstream dL/d(output).
  GradientRecord backward(const ForwardCache& cache, const Matrix& upstream) const {
    if (cache.inputs.size() != layers_.size() || cache.outputs.size() != layers_.size())
      throw StaleCache("network: cache does not match the layer count");
    const Eigen::Index batch = cache.inputs.front().cols();
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (cache.inputs[l].rows() != layers_[l].W.cols() ||
          cache.outputs[l].rows() != layers_[l].W.rows() || cache.inputs[l].cols() != batch ||
          cache.outputs[l].cols() != batch)
        throw StaleCache("network: cache shapes do not match the parameters");
    }
    if (upstream.rows() != output_dim() || upstream.cols() != batch)
      throw StaleCache("network: upstream gradient shape mismatch");

    GradientRecord g;
    g.dW.resize(layers_.size());
    g.db.resize(layers_.size());
    Matrix delta = upstream;
    for (std::size_t k = layers_.size(); k-- > 0;) {
      const Layer& l = layers_[k];
      if (l.activation == Activation::Tanh)
        delta.array() *= 1.0 - cache.outputs[k].array().square();
      g.dW[k] = delta * cache.inputs[k].transpose();
      g.db[k] = delta.rowwise().sum();
      delta = l.W.transpose() * delta;
    }
    g.dx = std::move(delta);
    return g;
  }

  Vector flatten() const {
    Vector out(parameter_count());
    Eigen::Index o = 0;
    for (const auto& l : layers_) {
      for (Eigen::Index r = 0; r < l.W.rows(); ++r)
        for (Eigen::Index c = 0; c < l.W.cols(); ++c) out(o++) = l.W(r, c);
      out.segment(o, l.b.size()) = l.b;
      o += l.b.size();
    }
    return out;
  }

  void unflatten(const Vector& p) {
    require(p.size() == parameter_count(), "network: parameter vector size mismatch");
    Eigen::Index o = 0;
    for (auto& l : layers_) {
      for (Eigen::Index r = 0; r < l.W.rows(); ++r)
        for (Eigen::Index c = 0; c < l.W.cols(); ++c) l.W(r, c) = p(o++);
      l.b = p.segment(o, l.b.size());
      o += l.b.size();
    }
  }

 private:
  static Matrix activate(const Layer& l, Matrix z) {
    if (l.activation == Activation::Tanh) z = z.array().tanh().matrix();
    return z;
  }

  void check() const {
    require(!layers_.empty(), "network: no layers");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      require(layers_[l].b.size() == layers_[l].W.rows(), "network: bias size mismatch");
      if (l > 0)
        require(layers_[l].W.cols() == layers_[l - 1].W.rows(),
                "network: consecutive layer dimensions do not compose");
    }
  }

  std::vector<Layer> layers_;
};

enum class OptimizerKind { Sgd, Adam };

inline OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adam") return OptimizerKind::Adam;
  throw Error("unknown optimizer '" + s + "'");
}

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::Sgd;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  Vector m;
  Vector v;
  long steps = 0;
};

/// One optimizer step on `net` with flattened gradient `grad`.
inline void apply_update(Network& net, const Vector& grad, OptimizerState& state, double eta) {
  require(grad.size() == net.parameter_count(), "apply_update: gradient size mismatch");
  Vector p = net.flatten();
  if (state.kind == OptimizerKind::Sgd) {
    p -= eta * grad;
  } else {
    if (state.m.size() == 0) {
      state.m = Vector::Zero(p.size());
      state.v = Vector::Zero(p.size());
    }
    require(state.m.size() == p.size(), "apply_update: optimizer state size mismatch");
    ++state.steps;
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad;
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.steps));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.steps));
    p.array() -= eta * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + state.epsilon);
  }
  net.unflatten(p);
}

inline void apply_update(Network& net, const GradientRecord& g, OptimizerState& state,
                         double eta) {
  apply_update(net, g.flatten(), state, eta);
}

// Checkpoints: a JSON manifest next to a flat little-endian float64 array of
// every network's parameters (network order, then layer order, row-major W
// followed by b).

struct NamedNetwork {
  std::string name;
  Network net;
};

inline void write_float64_le(std::ostream& os, const Vector& v) {
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    auto bits = std::bit_cast<std::uint64_t>(v(k));
    unsigned char bytes[8];
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>(bits >> (8 * b));
    os.write(reinterpret_cast<const char*>(bytes), 8);
  }
}

inline Vector read_float64_le(std::istream& is, Eigen::Index count) {
  Vector v(count);
  for (Eigen::Index k = 0; k < count; ++k) {
    unsigned char bytes[8];
    is.read(reinterpret_cast<char*>(bytes), 8);
    if (!is) throw Error("checkpoint: parameter file is truncated");
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
    v(k) = std::bit_cast<double>(bits);
  }
  return v;
}

/// Writes `<stem>.json` and `<stem>.bin`.
inline void save_checkpoint(const std::string& stem, const std::vector<NamedNetwork>& nets,
                            const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json manifest;
  manifest["format"] = "magps-checkpoint-1";
  manifest["dtype"] = "float64-le";
  manifest["extra"] = extra;
  nlohmann::json list = nlohmann::json::array();
  std::ofstream bin(stem + ".bin", std::ios::binary);
  if (!bin) throw Error("checkpoint: cannot write " + stem + ".bin");
  for (const auto& nn : nets) {
    nlohmann::json entry;
    entry["name"] = nn.name;
    entry["sizes"] = nn.net.sizes();
    std::vector<std::string> acts;
    for (const auto& l : nn.net.layers()) acts.push_back(to_string(l.activation));
    entry["activations"] = acts;
    entry["parameters"] = nn.net.parameter_count();
    list.push_back(entry);
    write_float64_le(bin, nn.net.flatten());
  }
  manifest["networks"] = list;
  std::ofstream js(stem + ".json");
  if (!js) throw Error("checkpoint: cannot write " + stem + ".json");
  js << manifest.dump(2) << "\n";
}

inline std::vector<NamedNetwork> load_checkpoint(const std::string& stem,
                                                 nlohmann::json* extra = nullptr) {
  std::ifstream js(stem + ".json");
  if (!js) throw Error("checkpoint: cannot read " + stem + ".json");
  const nlohmann::json manifest = nlohmann::json::parse(js);
  if (extra) *extra = manifest.value("extra", nlohmann::json::object());
  std::ifstream bin(stem + ".bin", std::ios::binary);
  if (!bin) throw Error("checkpoint: cannot read " + stem + ".bin");
  std::vector<NamedNetwork> out;
  for (const auto& entry : manifest.at("networks")) {
    const auto sizes = entry.at("sizes").get<std::vector<int>>();
    const auto acts = entry.at("activations").get<std::vector<std::string>>();
    if (sizes.size() != acts.size() + 1) throw Error("checkpoint: inconsistent layer list");
    std::vector<Layer> layers;
    for (std::size_t l = 0; l < acts.size(); ++l) {
      Layer layer;
      layer.W = Matrix::Zero(sizes[l + 1], sizes[l]);
      layer.b = Vector::Zero(sizes[l + 1]);
      layer.activation = activation_from_string(acts[l]);
      layers.push_back(std::move(layer));
    }
    Network net(std::move(layers));
    net.unflatten(read_float64_le(bin, net.parameter_count()));
    out.push_back({entry.at("name").get<std::string>(), std::move(net)});
  }
  return out;
}

}  // namespace magps

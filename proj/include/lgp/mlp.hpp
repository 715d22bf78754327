// Fully-connected feedforward network: ReLU hidden layers, linear output.
// Forward evaluation with a backprop cache, reverse-mode gradients for both
// parameters and inputs, parameter flattening, and an Adam optimizer step.
//
// Rows of X are samples.  Layer l maps width[l] -> width[l+1] via
// A_{l+1} = act(A_l * W_l^T + 1 b_l^T); the ReLU subgradient at 0 is 0.
#pragma once

#include "lgp/common.hpp"

#include <cmath>
#include <vector>

namespace lgp {

struct MlpArch {
  std::vector<Index> layer_sizes;  // [D, h_1, ..., h_L, d_out]

  Index depth() const { return static_cast<Index>(layer_sizes.size()) - 1; }
  Index in_dim() const { return layer_sizes.front(); }
  Index out_dim() const { return layer_sizes.back(); }

  void validate() const {
    require(layer_sizes.size() >= 3, "MlpArch: need at least one hidden layer");
    for (Index w : layer_sizes) require(w >= 1, "MlpArch: zero-width layer");
    // The inducing lattice is exponential in the output width.
    require(out_dim() <= 5, "MlpArch: output dimension must be <= 5");
  }
};

struct MlpParams {
  std::vector<Mat> weights;  // weights[l] is layer_sizes[l+1] x layer_sizes[l]
  std::vector<Vec> biases;   // biases[l] has layer_sizes[l+1] entries

  Index param_count() const {
    Index n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l)
      n += weights[l].size() + biases[l].size();
    return n;
  }

  void validate_shapes(const MlpArch& arch) const {
    arch.validate();
    require(static_cast<Index>(weights.size()) == arch.depth() &&
                weights.size() == biases.size(),
            "MlpParams: layer count mismatch");
    for (Index l = 0; l < arch.depth(); ++l) {
      const auto lu = static_cast<std::size_t>(l);
      require(weights[lu].rows() == arch.layer_sizes[lu + 1] &&
                  weights[lu].cols() == arch.layer_sizes[lu] &&
                  biases[lu].size() == arch.layer_sizes[lu + 1],
              "MlpParams: shape mismatch at layer " + std::to_string(l));
      require(weights[lu].allFinite() && biases[lu].allFinite(),
              "MlpParams: non-finite parameters");
    }
  }
};

// He-normal weights (std = sqrt(2 / fan_in)), zero biases.
inline MlpParams mlp_init(const MlpArch& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  MlpParams p;
  for (Index l = 0; l < arch.depth(); ++l) {
    const Index fan_in = arch.layer_sizes[static_cast<std::size_t>(l)];
    const Index fan_out = arch.layer_sizes[static_cast<std::size_t>(l + 1)];
    const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
    Mat w(fan_out, fan_in);
    for (Index i = 0; i < fan_out; ++i)
      for (Index j = 0; j < fan_in; ++j) w(i, j) = std_dev * gauss(rng);
    p.weights.push_back(std::move(w));
    p.biases.push_back(Vec::Zero(fan_out));
  }
  return p;
}

struct MlpCache {
  std::vector<Mat> activations;  // activations[0] = X; depth+1 entries
  std::vector<Mat> preacts;      // pre-activation of each layer
};

inline Mat mlp_forward(const MlpParams& p, const MlpArch& arch, const Mat& x,
                       MlpCache* cache = nullptr) {
  p.validate_shapes(arch);
  require(x.cols() == arch.in_dim(), "mlp_forward: input width mismatch");
  if (cache) {
    cache->activations.clear();
    cache->preacts.clear();
    cache->activations.push_back(x);
  }
  Mat a = x;
  for (Index l = 0; l < arch.depth(); ++l) {
    const auto lu = static_cast<std::size_t>(l);
    Mat z = (a * p.weights[lu].transpose()).rowwise() + p.biases[lu].transpose();
    if (cache) cache->preacts.push_back(z);
    if (l + 1 < arch.depth()) z = z.cwiseMax(0.0);  // ReLU on hidden layers
    if (cache) cache->activations.push_back(z);
    a = std::move(z);
  }
  if (!a.allFinite()) throw NumericError("mlp_forward: non-finite output");
  return a;
}

struct MlpGrads {
  MlpParams d_params;
  Mat d_x;
};

// Reverse-mode gradients of sum_i <dl_dz.row(i), g(x_i)> for both the
// parameters and the inputs.  `cache` must come from a forward pass over the
// same (p, x).
inline MlpGrads mlp_backward(const MlpParams& p, const MlpArch& arch,
                             const MlpCache& cache, const Mat& dl_dz) {
  p.validate_shapes(arch);
  require(static_cast<Index>(cache.activations.size()) == arch.depth() + 1 &&
              static_cast<Index>(cache.preacts.size()) == arch.depth(),
          "mlp_backward: cache does not match the architecture");
  require(dl_dz.rows() == cache.activations.front().rows() &&
              dl_dz.cols() == arch.out_dim(),
          "mlp_backward: dl_dz shape mismatch");

  MlpGrads g;
  g.d_params.weights.resize(static_cast<std::size_t>(arch.depth()));
  g.d_params.biases.resize(static_cast<std::size_t>(arch.depth()));

  Mat delta = dl_dz;  // gradient at the current layer's pre-activation
  for (Index l = arch.depth() - 1; l >= 0; --l) {
    const auto lu = static_cast<std::size_t>(l);
    if (l < arch.depth() - 1) {
      // Pass through the ReLU: zero where the pre-activation was <= 0.
      delta = ((cache.preacts[lu].array() > 0.0).cast<double>() * delta.array()).matrix();
    }
    g.d_params.weights[lu] = delta.transpose() * cache.activations[lu];
    g.d_params.biases[lu] = delta.colwise().sum().transpose();
    delta = delta * p.weights[lu];
  }
  g.d_x = std::move(delta);
  return g;
}

// ---------------------------------------------------------------------------
// Flattening (layer order, row-major weights then bias per layer)

inline Vec mlp_pack(const MlpParams& p) {
  Vec v(p.param_count());
  Index at = 0;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    const Mat& w = p.weights[l];
    for (Index i = 0; i < w.rows(); ++i)
      for (Index j = 0; j < w.cols(); ++j) v(at++) = w(i, j);
    for (Index i = 0; i < p.biases[l].size(); ++i) v(at++) = p.biases[l](i);
  }
  return v;
}

inline void mlp_unpack(const Vec& v, MlpParams& p) {
  require(v.size() == p.param_count(), "mlp_unpack: length mismatch");
  Index at = 0;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    Mat& w = p.weights[l];
    for (Index i = 0; i < w.rows(); ++i)
      for (Index j = 0; j < w.cols(); ++j) w(i, j) = v(at++);
    for (Index i = 0; i < p.biases[l].size(); ++i) p.biases[l](i) = v(at++);
  }
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig cfg;
  Vec m;  // first moment
  Vec v;  // second moment
  long step = 0;

  explicit AdamState(Index n, const AdamConfig& c = {})
      : cfg(c), m(Vec::Zero(n)), v(Vec::Zero(n)) {}
};

// One bias-corrected Adam descent step in place.  Callers maximizing an
// objective pass the negated gradient.
inline void adam_step(Vec& params, const Vec& grad, AdamState& state) {
  require(params.size() == state.m.size() && grad.size() == state.m.size(),
          "adam_step: size mismatch");
  require(grad.allFinite(), "adam_step: non-finite gradient");
  state.step += 1;
  state.m = state.cfg.beta1 * state.m + (1.0 - state.cfg.beta1) * grad;
  state.v = state.cfg.beta2 * state.v + (1.0 - state.cfg.beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(state.cfg.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(state.cfg.beta2, double(state.step));
  const Vec mhat = state.m / bc1;
  const Vec vhat = state.v / bc2;
  params -= state.cfg.lr * mhat.cwiseQuotient(vhat.cwiseSqrt() + Vec::Constant(params.size(), state.cfg.eps));
}

}  // namespace lgp

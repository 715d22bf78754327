// Two-phase training: network pre-training under squared loss, then joint
// marginal-likelihood ascent over {w, theta, log sigma} on the lattice model.
#pragma once

#include "lgp/common.hpp"
#include "lgp/data.hpp"
#include "lgp/gp.hpp"
#include "lgp/mlp.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace lgp {

struct PretrainConfig {
  Index epochs = 100;
  Index batch_size = 256;
  double learning_rate = 1e-2;  // halved every 20 epochs
  std::uint64_t seed = 0;
};

struct JointConfig {
  Index iterations = 100;
  double learning_rate = 1e-3;
  Index probe_count = 10;
  std::uint64_t seed = 0;
  Index theta_warmup = 30;          // kernel-only steps before unfreezing w
  double rebuild_threshold = 0.01;  // escaped fraction forcing a full rebuild
  double grid_padding = 0.25;       // padding for rebuilds
  bool freeze_interp = false;
};

struct TrainConfig {
  PretrainConfig pretrain;
  JointConfig joint;
  std::string base_kernel = "sm";  // "rbf" or "sm"
  Index q = 4;
  std::vector<Index> grid_nodes;  // empty: auto-sized from n and d
  double grid_padding = 0.25;
  bool standardize = true;
  std::vector<Index> arch;  // full layer sizes; empty: identity transform

  void validate() const {
    require(pretrain.epochs >= 0 && pretrain.batch_size >= 1 &&
                pretrain.learning_rate > 0.0,
            "TrainConfig: pretrain counts must be >= 1 and rates > 0");
    require(joint.iterations >= 0 && joint.learning_rate > 0.0 &&
                joint.probe_count >= 1 && joint.theta_warmup >= 0,
            "TrainConfig: joint counts must be >= 1 and rates > 0");
    require(base_kernel == "rbf" || base_kernel == "sm",
            "TrainConfig: base_kernel must be 'rbf' or 'sm'");
    require(q >= 1, "TrainConfig: q must be >= 1");
    require(grid_padding >= 0.0, "TrainConfig: negative grid padding");
  }
};

struct FitReport {
  std::vector<double> pretrain_loss;  // per epoch
  std::vector<double> warmup_mll;     // kernel-only phase, one entry per step
  std::vector<double> joint_mll;      // entry i: MLL before step i; last: final
  double pretrain_seconds = 0.0;
  double joint_seconds = 0.0;
  Index grid_rebuilds = 0;
  Index grid_extensions = 0;
  Index cg_iterations = 0;  // total across training solves
  double final_mll = 0.0;
  double initial_joint_mll = 0.0;  // frozen-w initialization, after warmup
};

// ---------------------------------------------------------------------------
// Standardization

inline std::pair<Dataset, StandardizeStats> standardize(const Dataset& data) {
  const Index n = data.n(), d = data.dim();
  require(n >= 2, "standardize: need at least 2 rows");
  StandardizeStats s;
  s.x_mean = data.x.colwise().mean();
  s.x_std.resize(d);
  for (Index c = 0; c < d; ++c) {
    const double var =
        (data.x.col(c).array() - s.x_mean(c)).square().sum() / static_cast<double>(n);
    s.x_std(c) = var > 0.0 ? std::sqrt(var) : 1.0;  // constant feature: center only
  }
  s.y_mean = data.y.mean();
  const double yvar =
      (data.y.array() - s.y_mean).square().sum() / static_cast<double>(n);
  if (yvar <= 0.0)
    throw ContractError("standardize: target has zero variance; nothing to regress");
  s.y_std = std::sqrt(yvar);

  Dataset out = data;
  for (Index c = 0; c < d; ++c)
    out.x.col(c) = ((data.x.col(c).array() - s.x_mean(c)) / s.x_std(c)).matrix();
  out.y = ((data.y.array() - s.y_mean) / s.y_std).matrix();
  out.stats = s;
  return {std::move(out), s};
}

inline Mat apply_standardize_x(const StandardizeStats& s, const Mat& x) {
  Mat out = x;
  for (Index c = 0; c < x.cols(); ++c)
    out.col(c) = ((x.col(c).array() - s.x_mean(c)) / s.x_std(c)).matrix();
  return out;
}

inline Vec destandardize_y(const StandardizeStats& s, const Vec& y) {
  return ((s.y_std * y.array()) + s.y_mean).matrix();
}

inline Vec destandardize_var(const StandardizeStats& s, const Vec& v) {
  return (s.y_std * s.y_std) * v;
}

// ---------------------------------------------------------------------------
// Phase 1: network pre-training under squared loss

struct PretrainResult {
  MlpParams params;
  std::vector<double> loss_trace;  // mean batch MSE per epoch
};

// Mini-batch Adam on a temporary linear head; the trunk weights are returned
// and the head is discarded.
inline PretrainResult pretrain_dnn(const MlpArch& arch, const Mat& x, const Vec& y,
                                   const PretrainConfig& cfg) {
  arch.validate();
  require(x.cols() == arch.in_dim(), "pretrain_dnn: input width mismatch");
  require(x.rows() == y.size(), "pretrain_dnn: data size mismatch");
  require(cfg.batch_size >= 1 && cfg.learning_rate > 0.0, "pretrain_dnn: bad config");

  PretrainResult res;
  res.params = mlp_init(arch, cfg.seed);
  const Index n = x.rows(), dz = arch.out_dim();

  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  std::normal_distribution<double> gauss(0.0, std::sqrt(2.0 / static_cast<double>(dz)));
  Vec head_w(dz);
  for (Index i = 0; i < dz; ++i) head_w(i) = gauss(rng);
  double head_b = 0.0;

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});

  // Trunk and head share one optimizer state: [trunk..., head_w..., head_b].
  const Index nw = mlp_pack(res.params).size();
  AdamState adam(nw + dz + 1, AdamConfig{cfg.learning_rate});
  // Halve the step a few times over the run regardless of its length.
  const Index decay_every = std::max<Index>(20, cfg.epochs / 6);

  const auto params_finite = [&] {
    if (!head_w.allFinite() || !std::isfinite(head_b)) return false;
    for (std::size_t l = 0; l < res.params.weights.size(); ++l)
      if (!res.params.weights[l].allFinite() || !res.params.biases[l].allFinite())
        return false;
    return true;
  };

  // Divergence baseline: the loss of the untrained parameters. Anchoring on
  // the first post-update epoch would hide a blow-up that happens on the very
  // first step.
  const double initial_loss = [&] {
    const Mat z = mlp_forward(res.params, arch, x);
    return (((z * head_w).array() + head_b) - y.array()).square().mean();
  }();
  Index bad_epochs = 0;
  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    adam.cfg.lr = cfg.learning_rate *
                  std::pow(0.5, static_cast<double>(epoch / decay_every));
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    Index batches = 0;
    for (Index start = 0; start < n; start += cfg.batch_size) {
      const Index b = std::min(cfg.batch_size, n - start);
      Mat xb(b, x.cols());
      Vec yb(b);
      for (Index i = 0; i < b; ++i) {
        xb.row(i) = x.row(order[static_cast<std::size_t>(start + i)]);
        yb(i) = y(order[static_cast<std::size_t>(start + i)]);
      }
      MlpCache cache;
      const Mat z = mlp_forward(res.params, arch, xb, &cache);
      const Vec pred = ((z * head_w).array() + head_b).matrix();
      const Vec err = pred - yb;
      epoch_loss += err.squaredNorm() / static_cast<double>(b);
      ++batches;

      // d(mean squared error): 2 err / b through the head, then the trunk.
      const Vec dpred = 2.0 * err / static_cast<double>(b);
      const Vec dhead_w = z.transpose() * dpred;
      const double dhead_b = dpred.sum();
      const Mat dz_grad = dpred * head_w.transpose();
      const MlpGrads grads = mlp_backward(res.params, arch, cache, dz_grad);

      Vec packed(nw + dz + 1), grad(nw + dz + 1);
      packed << mlp_pack(res.params), head_w, head_b;
      grad << mlp_pack(grads.d_params), dhead_w, dhead_b;
      adam_step(packed, grad, adam);
      mlp_unpack(packed.head(nw), res.params);
      head_w = packed.segment(nw, dz);
      head_b = packed(nw + dz);
      // A step that overflows the parameters is divergence, not a contract
      // violation inside the next forward pass.
      if (!std::isfinite(epoch_loss) || !params_finite())
        throw NumericError(
            "pretrain_dnn: loss diverged (non-finite parameters); lower the "
            "learning rate");
    }
    epoch_loss /= static_cast<double>(batches);
    res.loss_trace.push_back(epoch_loss);
    bad_epochs = (epoch_loss > 10.0 * initial_loss) ? bad_epochs + 1 : 0;
    if (bad_epochs >= 3)
      throw NumericError(
          "pretrain_dnn: loss diverged (over 10x the initial loss for 3 "
          "consecutive epochs); lower the learning rate");
  }
  return res;
}

// ---------------------------------------------------------------------------
// Kernel initialization

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  return v[mid];
}

// Data-driven spectral-mixture start: k(0) matches var(y), length-scales are
// random multiples of the feature spread, frequencies stay below both the
// data's resolvable limit and the lattice Nyquist frequency.
inline SmParams init_sm_params(const Mat& features, const Vec& y, Index q,
                               const GridSpec* grid, Rng& rng) {
  const Index n = features.rows(), d = features.cols();
  require(n >= 2 && q >= 1, "init_sm_params: need n >= 2 and q >= 1");
  SmParams p;
  p.log_weights.resize(q);
  p.log_bandwidths.resize(q, d);
  p.frequencies.resize(q, d);

  std::uniform_real_distribution<double> uscale(0.1, 2.0);
  std::uniform_real_distribution<double> ufrac(0.0, 1.0);

  const double yvar =
      (y.array() - y.mean()).square().sum() / static_cast<double>(y.size());

  for (Index c = 0; c < d; ++c) {
    const double mean = features.col(c).mean();
    double sd = std::sqrt(
        (features.col(c).array() - mean).square().sum() / static_cast<double>(n));
    if (sd <= 0.0) sd = 1.0;

    // Median nearest-neighbor spacing along this axis bounds the highest
    // frequency the data can resolve.
    std::vector<double> sorted(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) sorted[static_cast<std::size_t>(i)] = features(i, c);
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> gaps;
    for (std::size_t i = 1; i < sorted.size(); ++i) {
      const double g = sorted[i] - sorted[i - 1];
      if (g > 0.0) gaps.push_back(g);
    }
    double fmax = gaps.empty() ? 0.5 / sd : 0.5 / median_of(std::move(gaps));
    if (grid) {
      const double h = grid->axes[static_cast<std::size_t>(c)].spacing();
      fmax = std::min(fmax, 0.5 / h);
    }

    // Empirical periodogram over [0, fmax]; frequencies start where the
    // data has spectral mass instead of uniformly at random, so restarts
    // mostly differ in which peaks they pick.
    const Index nf = 256;
    Vec power(nf);
    const double ym = y.mean();
    for (Index k = 0; k < nf; ++k) {
      const double f = (static_cast<double>(k) + 0.5) / static_cast<double>(nf) * fmax;
      double sr = 0.0, si = 0.0;
      for (Index i = 0; i < n; ++i) {
        const double ph = 2.0 * M_PI * f * features(i, c);
        sr += (y(i) - ym) * std::cos(ph);
        si += (y(i) - ym) * std::sin(ph);
      }
      power(k) = sr * sr + si * si;
    }
    const double total = power.sum();

    for (Index j = 0; j < q; ++j) {
      const double ell = uscale(rng) * sd;
      p.log_bandwidths(j, c) = -2.0 * std::log(ell);  // v = 1 / ell^2
      if (total > 0.0) {
        double u = ufrac(rng) * total;
        Index k = 0;
        while (k + 1 < nf && u > power(k)) u -= power(k), ++k;
        p.frequencies(j, c) =
            (static_cast<double>(k) + ufrac(rng)) / static_cast<double>(nf) * fmax;
      } else {
        p.frequencies(j, c) = ufrac(rng) * fmax;
      }
    }
  }

  // Zero-lag value of component q is a_q (prod_d v_qd)^{1/2} (2 pi)^{-d/2};
  // share var(y) equally across components.
  for (Index j = 0; j < q; ++j) {
    const double log_det = p.log_bandwidths.row(j).sum();
    p.log_weights(j) = std::log(yvar / static_cast<double>(q)) - 0.5 * log_det +
                       0.5 * static_cast<double>(d) * std::log(2.0 * M_PI);
  }
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------
// Phase 2: joint marginal-likelihood ascent

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Fraction of rows whose interpolation coordinate leaves [1, m-2] on any axis.
inline double escaped_fraction(const Mat& z, const GridSpec& grid) {
  Index out = 0;
  for (Index i = 0; i < z.rows(); ++i) {
    for (Index a = 0; a < grid.dim(); ++a) {
      const auto& ax = grid.axes[static_cast<std::size_t>(a)];
      const double u = (z(i, a) - ax.lo) / ax.spacing();
      if (u < 1.0 - 1e-9 || u > static_cast<double>(ax.count - 2) + 1e-9) {
        ++out;
        break;
      }
    }
  }
  return static_cast<double>(out) / static_cast<double>(z.rows());
}

// Extend only the violated axis bounds, keeping node counts; used for small
// escape fractions where a full rebuild would churn the optimizer state.
// Each violated axis is rebuilt over the union of its old span and the data
// span, so the interpolation-margin guarantee holds for the merged interval.
inline void extend_grid_bounds(GridSpec& grid, const Mat& z, double padding) {
  for (Index a = 0; a < grid.dim(); ++a) {
    auto& ax = grid.axes[static_cast<std::size_t>(a)];
    const double lo = z.col(a).minCoeff(), hi = z.col(a).maxCoeff();
    const double in_lo = ax.lo + ax.spacing();
    const double in_hi = ax.hi - 2.0 * ax.spacing();
    if (lo >= in_lo && hi <= in_hi) continue;
    Mat span(2, 1);
    span << std::min(ax.lo, lo), std::max(ax.hi, hi);
    ax = build_grid(span, {ax.count}, padding).axes[0];
  }
  grid.validate();
}

}  // namespace detail

// One Adam ascent run over {theta, log sigma} and, after the warmup, w.
// `model` must hold pre-trained weights and a grid built from its current
// features; the probe seed is pinned for the whole run.
inline FitReport fit_joint(KissGpModel& model, const Vec& y, const JointConfig& cfg) {
  require(y.size() == model.n(), "fit_joint: target length mismatch");
  const auto t0 = std::chrono::steady_clock::now();
  FitReport report;

  model.opts.probe_count = cfg.probe_count;
  model.opts.probe_seed = cfg.seed;
  model.opts.freeze_interp = cfg.freeze_interp;
  kiss_refresh(model);

  const Index np = kernel_param_count(model.base);
  Index consecutive_cg_failures = 0;

  // A truncated solve still yields a usable ascent direction; only a solve
  // whose residual stayed far from the target poisons the gradient. Residuals
  // a few times 1e-3 still ascend reliably on ill-conditioned mid-size
  // systems, so the cutoff sits above that band.
  const auto track_cg = [&](const KissGrads& g) {
    report.cg_iterations += g.alpha_stats.iters;
    const bool poisoned =
        !g.all_converged && g.alpha_stats.final_rel_residual > 3e-3;
    if (poisoned) {
      if (++consecutive_cg_failures > 5)
        throw NumericError(
            "fit_joint: CG failed to converge in more than 5 consecutive "
            "iterations; loosen cg tolerance or enlarge the grid");
    } else {
      consecutive_cg_failures = 0;
    }
  };

  // Kernel-only warmup: w frozen, so the interpolation rows are constant and
  // their derivative path is skipped.
  if (cfg.theta_warmup > 0) {
    const bool had_freeze = model.opts.freeze_interp;
    model.opts.freeze_interp = true;
    kiss_refresh(model);
    AdamState state(np + 1, AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8});
    for (Index it = 0; it < cfg.theta_warmup; ++it) {
      report.warmup_mll.push_back(kiss_mll(model, y).value);
      const KissGrads g = kiss_mll_grads(model, y);
      track_cg(g);
      Vec packed(np + 1);
      packed.head(np) = kernel_pack(model.base);
      packed(np) = model.log_noise;
      Vec grad(np + 1);
      grad.head(np) = -g.d_theta;  // Adam minimizes; negate for ascent
      grad(np) = -g.d_log_noise;
      adam_step(packed, grad, state);
      kernel_unpack(packed.head(np), model.base);
      model.log_noise = packed(np);
      kiss_refresh(model);
    }
    model.opts.freeze_interp = had_freeze;
    kiss_refresh(model);
  }

  report.initial_joint_mll = kiss_mll(model, y).value;

  const bool train_w = model.net.has_value() && !cfg.freeze_interp;
  const Index nw = train_w ? mlp_pack(*model.net).size() : 0;
  AdamState state(nw + np + 1, AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8});

  // Stochastic trace estimates make the ascent noisy, so the loop keeps the
  // best iterate it visits rather than trusting the last one.
  struct Snapshot {
    std::optional<MlpParams> net;
    BaseKernel base;
    double log_noise;
    GridSpec grid;
  };
  Snapshot best{model.net, model.base, model.log_noise, model.grid};
  double best_mll = report.initial_joint_mll;

  for (Index it = 0; it < cfg.iterations; ++it) {
    const double current = kiss_mll(model, y).value;
    report.joint_mll.push_back(current);
    if (current > best_mll) {
      best_mll = current;
      best = Snapshot{model.net, model.base, model.log_noise, model.grid};
    }
    const KissGrads g = kiss_mll_grads(model, y);
    track_cg(g);

    Vec packed(nw + np + 1), grad(nw + np + 1);
    if (train_w) {
      packed.head(nw) = mlp_pack(*model.net);
      grad.head(nw) = -mlp_pack(*g.d_w);
    }
    packed.segment(nw, np) = kernel_pack(model.base);
    grad.segment(nw, np) = -g.d_theta;
    packed(nw + np) = model.log_noise;
    grad(nw + np) = -g.d_log_noise;
    adam_step(packed, grad, state);
    if (train_w) mlp_unpack(packed.head(nw), *model.net);
    kernel_unpack(packed.segment(nw, np), model.base);
    model.log_noise = packed(nw + np);

    // The transform moved; deal with points that left the lattice interior.
    const Mat z = kiss_features(model);
    const double frac = detail::escaped_fraction(z, model.grid);
    if (frac > cfg.rebuild_threshold) {
      std::vector<Index> counts;
      for (const auto& ax : model.grid.axes) counts.push_back(ax.count);
      model.grid = build_grid(z, counts, cfg.grid_padding);
      ++report.grid_rebuilds;
    } else if (frac > 0.0) {
      detail::extend_grid_bounds(model.grid, z, cfg.grid_padding);
      ++report.grid_extensions;
    }
    kiss_refresh(model);
  }

  if (cfg.iterations > 0) {
    // The state after the last step was never scored inside the loop.
    const double last = kiss_mll(model, y).value;
    if (last > best_mll) {
      best_mll = last;
    } else if (last < best_mll) {
      model.net = best.net;
      model.base = best.base;
      model.log_noise = best.log_noise;
      model.grid = best.grid;
      kiss_refresh(model);
    }
    report.final_mll = best_mll;
  } else {
    report.final_mll = kiss_mll(model, y).value;
  }
  report.joint_mll.push_back(report.final_mll);
  report.joint_seconds = detail::seconds_since(t0);
  return report;
}

// ---------------------------------------------------------------------------
// Full pipeline: standardize, pre-train, build the lattice, fit.

struct TrainedModel {
  KissGpModel gp;
  Vec y;  // standardized training targets; prediction state derives from them
  StandardizeStats stats;
  FitReport report;
};

// Auto grid sizing: ceil(4 n^(1/d)) nodes per axis, clamped so the per-
// iteration dense eigendecomposition in the log-det stays affordable (KRON
// decomposes per axis; BTTB pays for the whole lattice at once).
inline std::vector<Index> auto_grid_nodes(Index n, Index d, KuuStrategy strategy,
                                          Index eig_cap) {
  const double per_axis = std::ceil(4.0 * std::pow(static_cast<double>(n),
                                                   1.0 / static_cast<double>(d)));
  double cap;
  if (strategy == KuuStrategy::kron)
    cap = static_cast<double>(std::min<Index>(eig_cap, 512));
  else
    cap = std::floor(std::pow(static_cast<double>(std::min<Index>(eig_cap, 1024)),
                              1.0 / static_cast<double>(d)));
  const Index count = static_cast<Index>(std::max(4.0, std::min(per_axis, cap)));
  return std::vector<Index>(static_cast<std::size_t>(d), count);
}

inline TrainedModel train_pipeline(const Dataset& raw, const TrainConfig& cfg) {
  cfg.validate();
  require(raw.n() >= 2, "train_pipeline: need at least 2 rows");

  Dataset data = raw;
  StandardizeStats stats;
  stats.x_mean = Vec::Zero(raw.dim());
  stats.x_std = Vec::Ones(raw.dim());
  if (cfg.standardize) {
    auto [std_data, s] = standardize(raw);
    data = std::move(std_data);
    stats = s;
  }

  TrainedModel out;
  out.stats = stats;
  KissGpModel& model = out.gp;
  model.x = data.x;
  model.strategy = cfg.base_kernel == "rbf" ? KuuStrategy::kron : KuuStrategy::bttb;
  // Training solves are allowed to be loose: Adam tolerates gradient noise,
  // and large-n systems late in a run can be too ill-conditioned for a tight
  // tolerance inside the iteration cap.
  model.opts.cg.tol = 1e-6;
  model.opts.cg.max_iters = 600;

  // Phase 1: features.
  const auto t0 = std::chrono::steady_clock::now();
  Mat features;
  if (!cfg.arch.empty()) {
    MlpArch arch{cfg.arch};
    arch.validate();
    require(arch.in_dim() == data.dim(),
            "train_pipeline: network input width must match the feature count");
    auto pre = pretrain_dnn(arch, data.x, data.y, cfg.pretrain);
    out.report.pretrain_loss = std::move(pre.loss_trace);
    model.arch = arch;
    model.net = std::move(pre.params);
    features = mlp_forward(*model.net, *model.arch, data.x);
  } else {
    features = data.x;
  }
  out.report.pretrain_seconds = detail::seconds_since(t0);

  // Lattice over the feature space.
  const Index fdim = features.cols();
  std::vector<Index> nodes = cfg.grid_nodes;
  if (nodes.empty())
    nodes = auto_grid_nodes(data.n(), fdim, model.strategy, model.opts.eig_cap);
  require(static_cast<Index>(nodes.size()) == fdim,
          "train_pipeline: grid_nodes length must match the feature dimension");
  model.grid = build_grid(features, nodes, cfg.grid_padding);

  // Kernel start values.
  Rng rng(cfg.joint.seed ^ 0xda3e39cb94b95bdbull);
  if (cfg.base_kernel == "rbf") {
    double extent = 0.0;
    for (const auto& ax : model.grid.axes) extent += (ax.hi - ax.lo);
    extent /= static_cast<double>(model.grid.dim());
    const double yvar =
        (data.y.array() - data.y.mean()).square().sum() / static_cast<double>(data.n());
    model.base = RbfParams{std::log(0.2 * extent), 0.5 * std::log(yvar)};
  } else {
    model.base = init_sm_params(features, data.y, cfg.q, &model.grid, rng);
  }
  const double ysd = std::sqrt(
      (data.y.array() - data.y.mean()).square().sum() / static_cast<double>(data.n()));
  model.log_noise = std::log(0.1 * ysd);

  // Phase 2.
  JointConfig jc = cfg.joint;
  jc.grid_padding = cfg.grid_padding;
  FitReport fit = fit_joint(model, data.y, jc);
  fit.pretrain_loss = std::move(out.report.pretrain_loss);
  fit.pretrain_seconds = out.report.pretrain_seconds;
  out.report = std::move(fit);

  // The predictor state is computed once and reused for every query, so it
  // gets a tight solve even when training ran loose.
  model.opts.cg.tol = 1e-8;
  model.opts.cg.max_iters = 1000;
  precompute_predictor(model, data.y);
  out.y = data.y;
  return out;
}

// Standardization-aware prediction on raw inputs; returns observation-space
// mean and latent variance in the original units.
inline Prediction predict_raw(const TrainedModel& tm, const Mat& xraw,
                              bool want_variance = false) {
  const Mat xs = apply_standardize_x(tm.stats, xraw);
  Prediction p = predict(tm.gp, xs, want_variance);
  p.mean = destandardize_y(tm.stats, p.mean);
  if (want_variance) p.variance = destandardize_var(tm.stats, p.variance);
  return p;
}

}  // namespace lgp

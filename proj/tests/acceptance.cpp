// Acceptance gate: runs every headline requirement end to end and prints one
// PASS/FAIL line per criterion. Exits with the number of failures, so the
// test runner treats any failed criterion as a failed test.
//
//  1. analytic gradients of the lattice marginal likelihood match finite
//     differences through the network, kernel, and noise parameters
//  2. the lattice approximation reproduces the exact GP likelihood and mean
//  3. per-iteration joint training time scales linearly in n at fixed m
//  4. per-point mean prediction latency is flat in n after precompute
//  5. the deep spectral-mixture model recovers a step function better than
//     exact GP baselines, with calibrated intervals
//  6. the full pipeline completes on a mid-sized CSV and improves the
//     likelihood over its frozen-network initialization
//  7. core structural invariants hold across seeds

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <cstdlib>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lgp/train.hpp"

using namespace lgp;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::string fmt(double v, int prec = 3) {
  std::ostringstream ss;
  ss.precision(prec);
  ss << v;
  return ss.str();
}

Mat random_mat(Rng& rng, Index r, Index c, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Mat m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = u(rng);
  return m;
}

Vec random_vec(Rng& rng, Index n, double lo, double hi) {
  return Vec(random_mat(rng, n, 1, lo, hi));
}

double rmse_of(const Vec& pred, const Vec& truth) {
  return std::sqrt((pred - truth).squaredNorm() / static_cast<double>(truth.size()));
}

// Richardson-extrapolated central difference: two central differences at h
// and h/2 combined to cancel the leading truncation term. Only valid where
// the objective is smooth across the whole stencil.
template <class F>
double central_diff(F&& f, double h) {
  const double d1 = (f(h) - f(-h)) / (2.0 * h);
  const double d2 = (f(h / 2.0) - f(-h / 2.0)) / h;
  return (4.0 * d2 - d1) / 3.0;
}

// Plain central difference. Network parameters get this at a small step:
// the likelihood is only piecewise smooth in w (ReLU and interpolation
// knots), so a wide stencil straddles kinks while a narrow one stays inside
// one smooth piece.
template <class F>
double plain_central(F&& f, double h) {
  return (f(h) - f(-h)) / (2.0 * h);
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness through the full chain

Outcome criterion1() {
  Rng rng(17);
  const Index n = 60;
  const Mat x = random_mat(rng, n, 2, -1.0, 1.0);
  Vec y(n);
  for (Index i = 0; i < n; ++i)
    y(i) = std::sin(2.0 * x(i, 0)) * std::cos(x(i, 1)) + 0.1 * x(i, 1);

  KissGpModel model;
  model.arch = MlpArch{{2, 16, 8, 2}};
  model.net = mlp_init(*model.arch, 29);
  SmParams sm;
  sm.log_weights = random_vec(rng, 2, -1.0, 0.0);
  sm.log_bandwidths = random_mat(rng, 2, 2, -0.5, 0.5);
  sm.frequencies = random_mat(rng, 2, 2, 0.05, 0.6);
  model.base = sm;
  model.log_noise = std::log(0.3);
  model.strategy = KuuStrategy::bttb;
  model.opts.trace = TraceMode::exact_basis;
  model.opts.logdet = LogDetMode::exact_dense;
  // FD resolution is limited by the accuracy of each likelihood value, so
  // the solves run far tighter than the training default.
  model.opts.cg.tol = 1e-13;
  model.opts.cg.max_iters = 4000;
  model.x = x;
  model.grid = build_grid(mlp_forward(*model.net, *model.arch, x), {16, 16}, 0.5);
  kiss_refresh(model);

  const KissGrads g = kiss_mll_grads(model, y);
  const Vec gw = mlp_pack(*g.d_w);
  const Vec gt = g.d_theta;

  const auto check_group = [&](const Vec& analytic,
                               const std::function<double(Index, double)>& value_at,
                               double tol, double h, bool smooth) {
    double worst = 0.0;
    for (Index t = 0; t < analytic.size(); ++t) {
      const auto f = [&](double d) { return value_at(t, d); };
      const double fd = smooth ? central_diff(f, h) : plain_central(f, h);
      const double mag = std::max(std::abs(analytic(t)), std::abs(fd));
      if (mag <= 1e-7) continue;
      worst = std::max(worst, std::abs(analytic(t) - fd) / mag);
    }
    return std::pair<bool, double>{worst < tol, worst};
  };

  const Vec w0 = mlp_pack(*model.net);
  const auto w_at = [&](Index t, double d) {
    KissGpModel probe = model;
    Vec w = w0;
    w(t) += d;
    mlp_unpack(w, *probe.net);
    kiss_refresh(probe);
    return kiss_mll(probe, y).value;
  };
  const Vec t0 = kernel_pack(model.base);
  const auto theta_at = [&](Index t, double d) {
    KissGpModel probe = model;
    Vec th = t0;
    th(t) += d;
    kernel_unpack(th, probe.base);
    kiss_refresh(probe);
    return kiss_mll(probe, y).value;
  };
  const auto noise_at = [&](Index, double d) {
    KissGpModel probe = model;
    probe.log_noise += d;
    kiss_refresh(probe);
    return kiss_mll(probe, y).value;
  };

  const auto [ok_w, worst_w] = check_group(gw, w_at, 1e-3, 1e-5, false);
  const auto [ok_t, worst_t] = check_group(gt, theta_at, 1e-4, 1e-3, true);
  Vec gn(1);
  gn << g.d_log_noise;
  const auto [ok_n, worst_n] = check_group(gn, noise_at, 1e-4, 1e-3, true);

  Outcome o;
  o.pass = ok_w && ok_t && ok_n;
  o.detail = "max rel err: w " + fmt(worst_w) + " (tol 1e-3), theta " +
             fmt(worst_t) + ", noise " + fmt(worst_n) + " (tol 1e-4); " +
             std::to_string(gw.size()) + "+" + std::to_string(gt.size()) +
             "+1 components";
  return o;
}

// ---------------------------------------------------------------------------
// 2. Oracle equivalence at m = 400

Outcome criterion2() {
  Rng rng(23);
  const Index n = 150;
  const Mat x = random_mat(rng, n, 1, 0.0, 3.0);
  std::normal_distribution<double> eps(0.0, 0.25);
  Vec y(n);
  for (Index i = 0; i < n; ++i) y(i) = std::sin(2.2 * x(i, 0)) + eps(rng);

  const RbfParams kernel{std::log(0.5), 0.0};
  const double log_noise = std::log(0.25);

  ExactGpModel exact;
  exact.base = kernel;
  exact.log_noise = log_noise;
  exact.x = x;
  const double exact_value = exact_mll(exact, y).value;

  KissGpModel kiss;
  kiss.base = kernel;
  kiss.log_noise = log_noise;
  kiss.strategy = KuuStrategy::kron;
  kiss.x = x;
  // Narrow padding: lattice nodes outside the data range dilute the n/m
  // eigenvalue scaling and bias the log-determinant upward.
  kiss.grid = build_grid(x, {400}, 0.005);
  kiss_refresh(kiss);
  const double kiss_value = kiss_mll(kiss, y).value;

  const double mll_rel = std::abs(kiss_value - exact_value) / std::abs(exact_value);

  Mat xstar(200, 1);
  for (Index i = 0; i < 200; ++i)
    xstar(i, 0) = 0.05 + 2.9 * static_cast<double>(i) / 199.0;
  precompute_predictor(kiss, y);
  const Vec mean_kiss = predict(kiss, xstar).mean;
  const Vec mean_exact = exact_predict(exact, y, xstar, false).mean;
  const double ysd =
      std::sqrt((y.array() - y.mean()).square().sum() / static_cast<double>(n));
  const double mean_err = (mean_kiss - mean_exact).cwiseAbs().maxCoeff();

  Outcome o;
  o.pass = mll_rel < 1e-2 && mean_err < 0.02 * ysd;
  o.detail = "mll rel err " + fmt(mll_rel) + " (tol 1e-2), max mean err " +
             fmt(mean_err) + " vs bound " + fmt(0.02 * ysd);
  return o;
}

// ---------------------------------------------------------------------------
// 3. Linear scaling of joint-training iterations in n

double median_iteration_seconds(Index n, Rng& rng) {
  const Mat x = random_mat(rng, n, 1, 0.0, 10.0);
  std::normal_distribution<double> eps(0.0, 0.1);
  Vec y(n);
  for (Index i = 0; i < n; ++i) y(i) = std::sin(x(i, 0)) + eps(rng);

  KissGpModel model;
  model.arch = MlpArch{{1, 64, 32, 1}};
  model.net = mlp_init(*model.arch, 7);
  model.base = RbfParams{std::log(0.5), 0.0};
  model.log_noise = std::log(0.2);
  model.strategy = KuuStrategy::kron;
  // Fixed solver budget: how many CG iterations a tolerance needs is a
  // conditioning property of the random draw that shifts with n, not part of
  // the per-iteration cost structure under test. Pinning the budget makes
  // every size do identical solver work, so the timing isolates how one
  // iteration's cost grows with the data.
  model.opts.cg.tol = 1e-16;
  model.opts.cg.max_iters = 100;
  model.opts.probe_count = 10;
  model.opts.probe_seed = 3;
  model.x = x;
  model.grid = build_grid(mlp_forward(*model.net, *model.arch, x), {256}, 0.5);
  kiss_refresh(model);

  const Index np = kernel_param_count(model.base);
  Vec packed(mlp_pack(*model.net).size() + np + 1);
  packed << mlp_pack(*model.net), kernel_pack(model.base), model.log_noise;
  AdamState adam(packed.size(), AdamConfig{1e-4});

  std::vector<double> times;
  for (int it = 0; it < 6; ++it) {
    const double t0 = now_seconds();
    const KissGrads g = kiss_mll_grads(model, y);
    Vec grad(packed.size());
    grad << mlp_pack(*g.d_w), g.d_theta, g.d_log_noise;
    adam_step(packed, Vec(-grad), adam);
    mlp_unpack(packed.head(packed.size() - np - 1), *model.net);
    kernel_unpack(packed.segment(packed.size() - np - 1, np), model.base);
    model.log_noise = packed(packed.size() - 1);
    // Same lattice maintenance the production loop performs: points that
    // drift off the grid force an extension or rebuild, and that cost is
    // part of an iteration.
    const Mat z = mlp_forward(*model.net, *model.arch, x);
    const double frac = detail::escaped_fraction(z, model.grid);
    if (frac > 0.01) {
      model.grid = build_grid(z, {256}, 0.5);
    } else if (frac > 0.0) {
      detail::extend_grid_bounds(model.grid, z, 0.5);
    }
    kiss_refresh(model);
    if (it > 0) times.push_back(now_seconds() - t0);  // first iteration warms caches
  }
  std::sort(times.begin(), times.end());
  return times[times.size() / 2];
}

Outcome criterion3() {
  Rng rng(31);
  const double t1 = median_iteration_seconds(10000, rng);
  const double t2 = median_iteration_seconds(20000, rng);
  const double t3 = median_iteration_seconds(40000, rng);

  const double r1 = t2 / t1, r2 = t3 / t2;
  const double slope = std::log(t3 / t1) / std::log(4.0);

  Outcome o;
  o.pass = r1 <= 2.6 && r2 <= 2.6 && slope >= 0.7 && slope <= 1.3;
  o.detail = "per-iteration seconds " + fmt(t1) + " / " + fmt(t2) + " / " +
             fmt(t3) + "; doubling ratios " + fmt(r1) + ", " + fmt(r2) +
             " (<= 2.6); log-log slope " + fmt(slope) + " (in [0.7, 1.3])";
  return o;
}

// ---------------------------------------------------------------------------
// 4. Constant-time mean prediction after precompute

Outcome criterion4() {
  Rng rng(41);
  const Index points = 5000;
  const Mat xstar = random_mat(rng, points, 1, 0.1, 0.9);

  std::vector<double> per_point;
  for (Index n : {Index(1000), Index(10000), Index(100000)}) {
    const Mat x = random_mat(rng, n, 1, 0.0, 1.0);
    std::normal_distribution<double> eps(0.0, 0.1);
    Vec y(n);
    for (Index i = 0; i < n; ++i) y(i) = std::sin(8.0 * x(i, 0)) + eps(rng);

    KissGpModel model;
    model.base = RbfParams{std::log(0.1), 0.0};
    model.log_noise = std::log(0.3);
    model.strategy = KuuStrategy::kron;
    model.opts.cg.tol = 1e-8;
    model.opts.cg.max_iters = 400;
    model.x = x;
    model.grid = build_grid(x, {400}, 0.1);
    kiss_refresh(model);
    precompute_predictor(model, y);

    double best = 1e30;
    for (int rep = 0; rep < 3; ++rep) {
      const double t0 = now_seconds();
      const Prediction p = predict(model, xstar);
      best = std::min(best, now_seconds() - t0);
      if (!p.mean.allFinite()) return {false, "non-finite prediction"};
    }
    per_point.push_back(best / static_cast<double>(points));
  }

  const double lo = *std::min_element(per_point.begin(), per_point.end());
  const double hi = *std::max_element(per_point.begin(), per_point.end());
  const double spread = hi / lo - 1.0;

  Outcome o;
  o.pass = spread < 0.30;
  o.detail = "per-point microseconds " + fmt(per_point[0] * 1e6) + " / " +
             fmt(per_point[1] * 1e6) + " / " + fmt(per_point[2] * 1e6) +
             " across n = 1e3/1e4/1e5; spread " + fmt(spread * 100.0, 2) +
             "% (< 30%)";
  return o;
}

// ---------------------------------------------------------------------------
// 5. Step-function recovery ordering and calibration

struct Split {
  Mat xtr, xte;
  Vec ytr, yte;
};

Split split_80_20(const Dataset& d, unsigned seed) {
  std::vector<Index> idx(static_cast<std::size_t>(d.n()));
  std::iota(idx.begin(), idx.end(), Index{0});
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const Index ntr = d.n() * 4 / 5;
  Split s;
  s.xtr.resize(ntr, d.dim());
  s.ytr.resize(ntr);
  s.xte.resize(d.n() - ntr, d.dim());
  s.yte.resize(d.n() - ntr);
  for (Index i = 0; i < d.n(); ++i) {
    if (i < ntr) {
      s.xtr.row(i) = d.x.row(idx[static_cast<std::size_t>(i)]);
      s.ytr(i) = d.y(idx[static_cast<std::size_t>(i)]);
    } else {
      s.xte.row(i - ntr) = d.x.row(idx[static_cast<std::size_t>(i)]);
      s.yte(i - ntr) = d.y(idx[static_cast<std::size_t>(i)]);
    }
  }
  return s;
}

// Maximizes the exact marginal likelihood over [theta, log_noise] with Adam.
void fit_exact(ExactGpModel& gp, const Vec& y, Index iters, double lr) {
  const Index np = kernel_param_count(gp.base);
  Vec packed(np + 1);
  packed << kernel_pack(gp.base), gp.log_noise;
  AdamState adam(packed.size(), AdamConfig{lr});
  for (Index it = 0; it < iters; ++it) {
    kernel_unpack(packed.head(np), gp.base);
    gp.log_noise = packed(np);
    const Vec g = exact_mll_grads(gp, y);
    adam_step(packed, Vec(-g), adam);
  }
  kernel_unpack(packed.head(np), gp.base);
  gp.log_noise = packed(np);
}

Outcome criterion5() {
  const Dataset data = gen_step(100, 0.05, 7);

  int ordering_wins = 0;
  Index covered = 0, total = 0;
  std::string per_seed;
  for (unsigned seed = 1; seed <= 5; ++seed) {
    const Split s = split_80_20(data, seed);

    // Deep spectral-mixture model on the lattice.
    TrainConfig cfg;
    cfg.base_kernel = "sm";
    cfg.q = 4;
    cfg.arch = {1, 32, 16, 2};
    cfg.grid_nodes = {24, 24};
    // Light pretraining: enough to straighten the features without
    // collapsing them onto one arbitrary step reconstruction, which would
    // erase the harmonic structure the spectral mixture feeds on.
    cfg.pretrain.epochs = 80;
    cfg.pretrain.learning_rate = 1e-2;
    cfg.pretrain.seed = seed;
    cfg.joint.iterations = 150;
    cfg.joint.learning_rate = 5e-3;
    cfg.joint.theta_warmup = 40;
    cfg.joint.seed = seed;
    Dataset train;
    train.x = s.xtr;
    train.y = s.ytr;
    train.feature_names = {"x"};
    train.target_name = "y";
    const TrainedModel dkl = train_pipeline(train, cfg);
    const Prediction p = predict_raw(dkl, s.xte, true);
    const double rmse_dkl = rmse_of(p.mean, s.yte);

    const double noise_raw =
        dkl.stats.y_std * dkl.stats.y_std * dkl.gp.noise_var();
    for (Index i = 0; i < s.yte.size(); ++i) {
      const double half = 1.96 * std::sqrt(p.variance(i) + noise_raw);
      covered += std::abs(s.yte(i) - p.mean(i)) <= half ? 1 : 0;
      ++total;
    }

    // Exact GP baselines on standardized targets.
    auto [sd, stats] = standardize(train);

    ExactGpModel sm_gp;
    Rng krng(seed);
    sm_gp.base = init_sm_params(sd.x, sd.y, 4, nullptr, krng);
    sm_gp.log_noise = std::log(0.1);
    sm_gp.x = sd.x;
    fit_exact(sm_gp, sd.y, 300, 0.02);
    const Mat xte_std = apply_standardize_x(stats, s.xte);
    const Vec mean_sm =
        destandardize_y(stats, exact_predict(sm_gp, sd.y, xte_std, false).mean);
    const double rmse_sm = rmse_of(mean_sm, s.yte);

    ExactGpModel rbf_gp;
    rbf_gp.base = RbfParams{std::log(0.5), 0.0};
    rbf_gp.log_noise = std::log(0.1);
    rbf_gp.x = sd.x;
    fit_exact(rbf_gp, sd.y, 300, 0.02);
    const Vec mean_rbf =
        destandardize_y(stats, exact_predict(rbf_gp, sd.y, xte_std, false).mean);
    const double rmse_rbf = rmse_of(mean_rbf, s.yte);

    if (rmse_dkl < rmse_sm && rmse_sm < rmse_rbf) ++ordering_wins;
    per_seed += (per_seed.empty() ? "" : ", ") + std::string("s") +
                std::to_string(seed) + ":" + fmt(rmse_dkl) + "/" + fmt(rmse_sm) +
                "/" + fmt(rmse_rbf);
  }

  const double coverage = static_cast<double>(covered) / static_cast<double>(total);
  Outcome o;
  o.pass = ordering_wins >= 4 && coverage >= 0.85;
  o.detail = "ordering held " + std::to_string(ordering_wins) +
             "/5 seeds (need 4); coverage " + fmt(coverage) +
             " (need 0.85); rmse dkl/sm/rbf per seed: " + per_seed;
  return o;
}

// ---------------------------------------------------------------------------
// 6. Pipeline completion and likelihood ascent on a mid-sized CSV

Outcome criterion6() {
  const Index n = 20000;
  Rng rng(61);
  std::normal_distribution<double> eps(0.0, 0.1);
  const std::string path = "/tmp/lgp_acceptance_c6.csv";
  {
    std::ofstream out(path);
    out.precision(17);
    out << "u,v,y\n";
    std::uniform_real_distribution<double> ux(-2.0, 2.0);
    for (Index i = 0; i < n; ++i) {
      const double u = ux(rng), v = ux(rng);
      out << u << ',' << v << ','
          << std::sin(2.0 * u) * std::cos(v) + 0.5 * u + eps(rng) << '\n';
    }
  }

  const auto [data, skipped] = load_csv(path, "y");
  std::filesystem::remove(path);
  if (data.n() != n || skipped != 0)
    return {false, "csv round trip lost rows"};

  // Sized to the wall budget: at n = 20000 one gradient evaluation costs
  // roughly 6 seconds per right-hand side at the training tolerances, so the
  // probe count and iteration counts are the levers that matter.
  TrainConfig cfg;
  cfg.base_kernel = "sm";
  cfg.q = 3;
  cfg.arch = {2, 16, 8, 2};
  cfg.grid_nodes = {32, 32};
  cfg.pretrain.epochs = 30;
  cfg.pretrain.seed = 3;
  cfg.joint.iterations = 8;
  cfg.joint.theta_warmup = 4;
  cfg.joint.probe_count = 4;
  cfg.joint.learning_rate = 2e-3;
  cfg.joint.seed = 3;
  const TrainedModel tm = train_pipeline(data, cfg);

  const bool ascent = tm.report.final_mll >= tm.report.initial_joint_mll - 1e-6;
  Outcome o;
  o.pass = ascent;
  o.detail = "n = " + std::to_string(n) + ", grid " +
             std::to_string(tm.gp.grid.axes[0].count) + "x" +
             std::to_string(tm.gp.grid.axes[1].count) + "; frozen-init mll " +
             fmt(tm.report.initial_joint_mll, 6) + " -> final " +
             fmt(tm.report.final_mll, 6) +
             (ascent ? " (ascent held)" : " (likelihood regressed)");
  return o;
}

// ---------------------------------------------------------------------------
// 7. Structural invariants across seeds

bool mvms_match_dense(Rng& rng) {
  // Toeplitz on a 1-D lattice.
  const Index m = 12;
  SymToeplitz t;
  t.first_column.resize(m);
  const double ell = 0.4 + 0.2 * random_vec(rng, 1, 0.0, 1.0)(0);
  for (Index i = 0; i < m; ++i)
    t.first_column(i) = std::exp(-0.5 * std::pow(0.2 * double(i) / ell, 2));
  const Vec v = random_vec(rng, m, -1.0, 1.0);
  if ((toeplitz_mvm(t, v) - t.dense() * v).cwiseAbs().maxCoeff() > 1e-10)
    return false;

  // Kronecker product of two axes.
  SymToeplitz t2;
  t2.first_column = random_vec(rng, 5, 0.0, 1.0);
  t2.first_column(0) = 2.0;  // keep it diagonally dominant
  const Mat da = t.dense(), db = t2.dense();
  Mat dense_kron(m * 5, m * 5);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < m; ++j)
      dense_kron.block(i * 5, j * 5, 5, 5) = da(i, j) * db;
  const Vec vk = random_vec(rng, m * 5, -1.0, 1.0);
  if ((kron_mvm({t, t2}, vk) - dense_kron * vk).cwiseAbs().maxCoeff() > 1e-10)
    return false;

  // BTTB stencil over a 2-D lattice against pairwise kernel evaluation.
  const RbfParams kern{std::log(0.5), 0.0};
  BttbSpec b;
  b.dims = {5, 4};
  b.gen.resize(static_cast<std::size_t>(b.gen_size()));
  const double h0 = 0.3, h1 = 0.25;
  for (Index o0 = -4; o0 <= 4; ++o0)
    for (Index o1 = -3; o1 <= 3; ++o1) {
      Vec tau(2);
      tau << h0 * double(o0), h1 * double(o1);
      b.gen[static_cast<std::size_t>((o0 + 4) * 7 + (o1 + 3))] = kernel_eval(tau, kern);
    }
  Mat nodes(20, 2);
  for (Index i = 0; i < 5; ++i)
    for (Index j = 0; j < 4; ++j) {
      nodes(i * 4 + j, 0) = h0 * double(i);
      nodes(i * 4 + j, 1) = h1 * double(j);
    }
  Mat dense(20, 20);
  for (Index i = 0; i < 20; ++i)
    for (Index j = 0; j < 20; ++j)
      dense(i, j) = kernel_eval(Vec(nodes.row(i) - nodes.row(j)), kern);
  const Vec vb = random_vec(rng, 20, -1.0, 1.0);
  return (bttb_mvm(b, vb) - dense * vb).cwiseAbs().maxCoeff() <= 1e-10;
}

bool interpolation_is_sound(Rng& rng) {
  GridSpec grid;
  grid.axes = {GridAxis{12, 0.0, 1.0}};
  const double h = grid.axes[0].spacing();
  const Mat z = random_mat(rng, 40, 1, h, 1.0 - 2.0 * h);
  const SparseInterp rows = interp_rows(z, grid, false);

  // Partition of unity.
  const Vec ones = spmv(rows, Vec::Ones(12));
  if ((ones.array() - 1.0).abs().maxCoeff() > 1e-12) return false;

  // Cubic convolution reproduces quadratics exactly.
  const Vec coef = random_vec(rng, 3, -1.0, 1.0);
  Vec nodes(12), want(40);
  for (Index i = 0; i < 12; ++i) {
    const double u = grid.axes[0].node(i);
    nodes(i) = coef(0) + coef(1) * u + coef(2) * u * u;
  }
  for (Index i = 0; i < 40; ++i) {
    const double u = z(i, 0);
    want(i) = coef(0) + coef(1) * u + coef(2) * u * u;
  }
  return (spmv(rows, nodes) - want).cwiseAbs().maxCoeff() <= 1e-10;
}

bool cg_honors_contract(Rng& rng) {
  const Index n = 40;
  const Mat q = random_mat(rng, n, n, -1.0, 1.0);
  const Mat a = q * q.transpose() + 0.5 * Mat::Identity(n, n) * double(n);
  const Vec b = random_vec(rng, n, -1.0, 1.0);
  CgConfig cfg;
  cfg.tol = 1e-10;
  const auto [x, stats] = cg_solve([&](const Vec& v) { return Vec(a * v); }, b, cfg);
  if (!stats.converged) return false;
  return (a * x - b).norm() / b.norm() <= 1e-9;
}

bool backprop_matches_fd(Rng& rng) {
  const MlpArch arch{{2, 6, 3, 2}};
  const MlpParams params = mlp_init(arch, rng());
  const Mat x = random_mat(rng, 7, 2, -1.0, 1.0);
  const Mat sens = random_mat(rng, 7, 2, -1.0, 1.0);

  MlpCache cache;
  mlp_forward(params, arch, x, &cache);
  const MlpGrads g = mlp_backward(params, arch, cache, sens);
  const Vec analytic = mlp_pack(g.d_params);

  const Vec packed = mlp_pack(params);
  const double h = 1e-6;
  for (Index t = 0; t < packed.size(); ++t) {
    Vec lo = packed, hi = packed;
    lo(t) -= h;
    hi(t) += h;
    MlpParams pl = params, ph = params;
    mlp_unpack(lo, pl);
    mlp_unpack(hi, ph);
    const double fl = (mlp_forward(pl, arch, x).array() * sens.array()).sum();
    const double fh = (mlp_forward(ph, arch, x).array() * sens.array()).sum();
    const double fd = (fh - fl) / (2.0 * h);
    if (std::abs(analytic(t) - fd) > 1e-5 * std::max(1.0, std::abs(fd)))
      return false;
  }
  return true;
}

Outcome criterion7() {
  int failures = 0;
  std::string detail;
  for (unsigned seed = 1; seed <= 3; ++seed) {
    Rng rng(seed);
    const bool mvm = mvms_match_dense(rng);
    const bool interp = interpolation_is_sound(rng);
    const bool cg = cg_honors_contract(rng);
    const bool bp = backprop_matches_fd(rng);
    if (!(mvm && interp && cg && bp)) {
      ++failures;
      detail += " seed " + std::to_string(seed) + ":" + (mvm ? "" : " mvm") +
                (interp ? "" : " interp") + (cg ? "" : " cg") + (bp ? "" : " backprop");
    }
  }
  Outcome o;
  o.pass = failures == 0;
  o.detail = failures == 0
                 ? "mvm/interpolation/cg/backprop invariants held for seeds 1-3"
                 : "failed:" + detail;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  struct Entry {
    const char* name;
    double budget_seconds;
    Outcome (*fn)();
  };
  const Entry entries[] = {
      {"gradient correctness vs finite differences", 120.0, criterion1},
      {"lattice/exact oracle equivalence", 30.0, criterion2},
      {"linear per-iteration training scaling", 600.0, criterion3},
      {"constant-time mean prediction", 600.0, criterion4},
      {"step-function recovery ordering", 600.0, criterion5},
      {"mid-size csv pipeline with likelihood ascent", 600.0, criterion6},
      {"structural invariants across seeds", 600.0, criterion7},
  };

  // Optional criterion numbers on the command line restrict the run.
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failures = 0;
  int k = 0;
  for (const auto& e : entries) {
    ++k;
    if (!only.empty() && !only.count(k)) continue;
    std::cout << "running criterion " << k << " (" << e.name << ")..."
              << std::endl;
    const double t0 = now_seconds();
    Outcome o;
    try {
      o = e.fn();
    } catch (const std::exception& ex) {
      o.pass = false;
      o.detail = std::string("exception: ") + ex.what();
    }
    const double elapsed = now_seconds() - t0;
    if (elapsed > e.budget_seconds) {
      o.pass = false;
      o.detail += " [exceeded " + fmt(e.budget_seconds, 4) + "s budget]";
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << k << " ("
              << e.name << ", " << fmt(elapsed, 3) << "s): " << o.detail
              << std::endl;
    if (!o.pass) ++failures;
  }
  std::cout << (failures == 0 ? "ALL CRITERIA PASSED" :
                std::to_string(failures) + " CRITERIA FAILED")
            << std::endl;
  return failures;
}

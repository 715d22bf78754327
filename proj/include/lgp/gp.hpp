// Gaussian-process core: a dense exact oracle for small n, and the
// lattice-interpolated model whose covariance is M K_UU M^T + sigma^2 I.
//
// Marginal likelihood gradients follow the implicit-derivative form
// dL/dK = 0.5 (K^-1 y y^T K^-1 - K^-1): the fit part uses alpha = K^-1 y
// exactly; the trace part is estimated with Hutchinson probes (or computed
// exactly from the full basis in validation mode).  The kernel-parameter
// path applies gradient stencils on the lattice; the network path
// backpropagates through the interpolation weights via their derivative rows.
#pragma once

#include "lgp/common.hpp"
#include "lgp/grid.hpp"
#include "lgp/kernels.hpp"
#include "lgp/mlp.hpp"
#include "lgp/structured.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <utility>
#include <vector>

namespace lgp {

struct MllReport {
  double value = 0.0;
  double fit_term = 0.0;         // -0.5 y' (K + s2 I)^-1 y
  double complexity_term = 0.0;  // -0.5 log|K + s2 I|
  double constant = 0.0;         // -(n/2) log 2 pi
  CgStats cg;                    // iters 0 when a dense factorization was used
};

struct Prediction {
  Vec mean;
  Vec variance;          // latent f* variance; add sigma^2 for observations
  long clamp_count = 0;  // negative-variance clamps
};

// ---------------------------------------------------------------------------
// Exact dense oracle

struct ExactGpModel {
  BaseKernel base;
  double log_noise = std::log(0.1);
  Mat x;  // training inputs
  std::optional<MlpArch> arch;
  std::optional<MlpParams> net;
  Index cap = 2000;  // this path is O(n^3) by design

  double noise_var() const { return std::exp(2.0 * log_noise); }

  Mat features(const Mat& raw) const {
    if (!net) return raw;
    return mlp_forward(*net, *arch, raw);
  }
};

namespace detail {

inline Mat dense_kernel_matrix(const Mat& za, const Mat& zb, const BaseKernel& k) {
  Mat out(za.rows(), zb.rows());
  for (Index i = 0; i < za.rows(); ++i)
    for (Index j = 0; j < zb.rows(); ++j)
      out(i, j) = kernel_eval((za.row(i) - zb.row(j)).transpose(), k);
  return out;
}

// Cholesky with an escalating diagonal jitter, relative to mean(diag).
inline std::pair<Eigen::LLT<Mat>, double> chol_with_jitter(const Mat& a) {
  const double scale = a.trace() / static_cast<double>(a.rows());
  for (double f : {0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4}) {
    Mat shifted = a;
    if (f > 0.0) shifted.diagonal().array() += f * scale;
    Eigen::LLT<Mat> llt(shifted);
    if (llt.info() == Eigen::Success) return {std::move(llt), f * scale};
  }
  throw NumericError("chol_with_jitter: matrix not positive definite at max jitter");
}

}  // namespace detail

inline MllReport exact_mll(const ExactGpModel& model, const Vec& y) {
  const Index n = model.x.rows();
  require(n >= 1 && y.size() == n, "exact_mll: data size mismatch");
  require(n <= model.cap, "exact_mll: n exceeds the exact-path cap");

  const Mat z = model.features(model.x);
  Mat cov = detail::dense_kernel_matrix(z, z, model.base);
  cov.diagonal().array() += model.noise_var();
  const auto [llt, jitter] = detail::chol_with_jitter(cov);

  const Vec alpha = llt.solve(y);
  MllReport r;
  r.fit_term = -0.5 * y.dot(alpha);
  double logdet = 0.0;
  for (Index i = 0; i < n; ++i) logdet += 2.0 * std::log(llt.matrixLLT()(i, i));
  r.complexity_term = -0.5 * logdet;
  r.constant = -0.5 * static_cast<double>(n) * std::log(2.0 * M_PI);
  r.value = r.fit_term + r.complexity_term + r.constant;
  return r;
}

inline Prediction exact_predict(const ExactGpModel& model, const Vec& y,
                                const Mat& xstar, bool want_variance = true) {
  const Index n = model.x.rows();
  require(n >= 1 && y.size() == n, "exact_predict: data size mismatch");
  require(n <= model.cap, "exact_predict: n exceeds the exact-path cap");
  require(xstar.cols() == model.x.cols(), "exact_predict: input width mismatch");

  const Mat z = model.features(model.x);
  const Mat zs = model.features(xstar);
  Mat cov = detail::dense_kernel_matrix(z, z, model.base);
  cov.diagonal().array() += model.noise_var();
  const auto [llt, jitter] = detail::chol_with_jitter(cov);

  const Mat cross = detail::dense_kernel_matrix(zs, z, model.base);  // n* x n
  Prediction p;
  p.mean = cross * llt.solve(y);
  if (want_variance) {
    const double k0 = kernel_eval(Vec::Zero(zs.cols()), model.base);
    p.variance.resize(zs.rows());
    const Mat solved = llt.solve(cross.transpose());  // n x n*
    for (Index i = 0; i < zs.rows(); ++i) {
      double v = k0 - cross.row(i).dot(solved.col(i));
      if (v < 0.0) {
        v = 0.0;
        ++p.clamp_count;
      }
      p.variance(i) = v;
    }
  }
  return p;
}

// Analytic gradients of exact_mll for [theta..., log_noise]; the dense
// counterpart of the lattice gradient path, used to fit small exact models.
inline Vec exact_mll_grads(const ExactGpModel& model, const Vec& y) {
  const Index n = model.x.rows();
  require(n >= 1 && y.size() == n, "exact_mll_grads: data size mismatch");
  require(n <= model.cap, "exact_mll_grads: n exceeds the exact-path cap");

  const Mat z = model.features(model.x);
  Mat cov = detail::dense_kernel_matrix(z, z, model.base);
  cov.diagonal().array() += model.noise_var();
  const auto [llt, jitter] = detail::chol_with_jitter(cov);
  const Vec alpha = llt.solve(y);
  const Mat kinv = llt.solve(Mat::Identity(n, n));

  const Index np = kernel_param_count(model.base);
  Vec grads = Vec::Zero(np + 1);
  std::vector<Mat> dk(static_cast<std::size_t>(np), Mat(n, n));
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      const KernelGrad kg = kernel_grad((z.row(i) - z.row(j)).transpose(), model.base);
      for (Index t = 0; t < np; ++t) dk[static_cast<std::size_t>(t)](i, j) = kg.d_theta(t);
    }
  for (Index t = 0; t < np; ++t) {
    const Mat& d = dk[static_cast<std::size_t>(t)];
    grads(t) = 0.5 * alpha.dot(d * alpha) - 0.5 * (kinv.cwiseProduct(d)).sum();
  }
  // d(sigma^2)/d(log sigma) = 2 sigma^2 on the diagonal.
  const double s2 = model.noise_var();
  grads(np) = s2 * alpha.squaredNorm() - s2 * kinv.trace();
  return grads;
}

// ---------------------------------------------------------------------------
// KISS model

enum class KuuStrategy { kron, bttb };
enum class LogDetMode { scaled_eig, exact_dense };
enum class TraceMode { hutchinson, exact_basis };

struct KissOptions {
  CgConfig cg;
  Index probe_count = 10;
  std::uint64_t probe_seed = 1;
  TraceMode trace = TraceMode::hutchinson;
  LogDetMode logdet = LogDetMode::scaled_eig;
  Index eig_cap = 4096;    // largest matrix we will eigendecompose densely
  Index dense_cap = 2000;  // largest n for the exact_dense validation path
  bool freeze_interp = false;
};

struct KissGpModel {
  std::optional<MlpArch> arch;  // absent: identity transform
  std::optional<MlpParams> net;
  BaseKernel base;
  double log_noise = std::log(0.1);
  GridSpec grid;
  KuuStrategy strategy = KuuStrategy::bttb;
  KissOptions opts;
  Mat x;  // training inputs

  // Caches, consistent with (net, base, grid) only while `fresh` is true.
  bool fresh = false;
  Mat z;                  // transformed features
  MlpCache fwd_cache;     // populated when a net is present
  SparseInterp rows;      // derivative rows present iff the w-path is live
  std::vector<SymToeplitz> kron_factors;
  std::optional<KronOperator> kron_op;
  std::optional<BttbSpec> bttb_stencil;
  std::optional<BttbOperator> bttb_op;
  mutable std::optional<Vec> eig_cache;  // descending, clamped at zero
  std::optional<Vec> v_pred;             // K_UU M^T alpha
  double k0 = 0.0;

  Index n() const { return x.rows(); }
  Index m() const { return grid.total(); }
  double noise_var() const { return std::exp(2.0 * log_noise); }
  bool w_path_live() const { return net.has_value() && !opts.freeze_interp; }
};

// Transformed features for the current parameters (no caches touched).
inline Mat kiss_features(const KissGpModel& model) {
  if (!model.net) return model.x;
  return mlp_forward(*model.net, *model.arch, model.x);
}

// Rebuild every derived quantity after a parameter or grid change.  Throws
// GridRangeError if a transformed point leaves the interpolable interior, in
// which case the model stays stale.
inline void kiss_refresh(KissGpModel& model) {
  model.fresh = false;
  model.grid.validate();
  require(model.x.rows() >= 1, "kiss_refresh: no training data");
  if (model.net) {
    model.net->validate_shapes(*model.arch);
    require(model.arch->out_dim() == model.grid.dim(),
            "kiss_refresh: network output width must match the grid dimension");
    model.z = mlp_forward(*model.net, *model.arch, model.x, &model.fwd_cache);
  } else {
    require(model.x.cols() == model.grid.dim(),
            "kiss_refresh: input width must match the grid dimension");
    model.z = model.x;
  }

  model.rows = interp_rows(model.z, model.grid, model.w_path_live());

  model.kron_factors.clear();
  model.kron_op.reset();
  model.bttb_stencil.reset();
  model.bttb_op.reset();
  if (model.strategy == KuuStrategy::kron) {
    // Only the RBF base factors across axes.
    require(std::holds_alternative<RbfParams>(model.base),
            "kiss_refresh: KRON strategy requires the RBF base kernel");
    model.kron_factors = rbf_factors(std::get<RbfParams>(model.base), model.grid);
    model.kron_op.emplace(model.kron_factors);
  } else {
    model.bttb_stencil = kernel_bttb_stencil(model.base, model.grid);
    model.bttb_op.emplace(*model.bttb_stencil);
  }

  model.k0 = kernel_eval(Vec::Zero(model.grid.dim()), model.base);
  model.eig_cache.reset();
  model.v_pred.reset();
  model.fresh = true;
}

namespace detail {

inline void require_fresh(const KissGpModel& model, const char* op) {
  require(model.fresh, std::string(op) + ": model caches are stale; call kiss_refresh");
}

inline Vec kuu_apply(const KissGpModel& model, const Vec& v) {
  if (model.strategy == KuuStrategy::kron) return model.kron_op->apply(v);
  return model.bttb_op->apply(v);
}

inline Mat kuu_dense(const KissGpModel& model) {
  if (model.strategy == KuuStrategy::bttb) return model.bttb_stencil->dense();
  Mat out = model.kron_factors.front().dense();
  for (std::size_t i = 1; i < model.kron_factors.size(); ++i) {
    const Mat b = model.kron_factors[i].dense();
    Mat next(out.rows() * b.rows(), out.cols() * b.cols());
    for (Index r = 0; r < out.rows(); ++r)
      for (Index c = 0; c < out.cols(); ++c)
        next.block(r * b.rows(), c * b.cols(), b.rows(), b.cols()) = out(r, c) * b;
    out = std::move(next);
  }
  return out;
}

// Descending eigenvalues of K_UU, clamped at zero, cached per refresh.
inline const Vec& kuu_eigvals(const KissGpModel& model) {
  if (model.eig_cache) return *model.eig_cache;
  Vec eig;
  if (model.strategy == KuuStrategy::kron) {
    std::vector<Vec> factor_eigs;
    for (const auto& f : model.kron_factors) {
      if (f.size() > model.opts.eig_cap)
        throw CapacityError(
            "kiss_logdet: lattice axis too large for dense eigendecomposition; "
            "reduce the per-axis grid size or raise eig_cap");
      factor_eigs.push_back(sym_eigvals(f.dense()));
    }
    eig = kron_eigvals(factor_eigs);
  } else {
    if (model.m() > model.opts.eig_cap)
      throw CapacityError(
          "kiss_logdet: lattice too large for dense eigendecomposition under the "
          "general stationary strategy; reduce the grid or raise eig_cap");
    eig = sym_eigvals(kuu_dense(model));
  }
  std::sort(eig.data(), eig.data() + eig.size(), std::greater<double>());
  eig = eig.cwiseMax(0.0);
  model.eig_cache = std::move(eig);
  return *model.eig_cache;
}

}  // namespace detail

// (M K_UU M^T + sigma^2 I) v.
inline Vec kiss_mvm(const KissGpModel& model, const Vec& v) {
  detail::require_fresh(model, "kiss_mvm");
  require(v.size() == model.n(), "kiss_mvm: vector length mismatch");
  const Vec lattice = detail::kuu_apply(model, spmv_t(model.rows, v));
  return spmv(model.rows, lattice) + model.noise_var() * v;
}

// Dense materialization of the full covariance; validation only.
inline Mat kiss_dense_cov(const KissGpModel& model) {
  detail::require_fresh(model, "kiss_dense_cov");
  require(model.n() <= model.opts.dense_cap && model.m() <= model.opts.eig_cap,
          "kiss_dense_cov: problem too large for dense materialization");
  const Mat md = interp_dense(model.rows);
  Mat cov = md * detail::kuu_dense(model) * md.transpose();
  cov.diagonal().array() += model.noise_var();
  return cov;
}

inline double kiss_logdet(const KissGpModel& model) {
  detail::require_fresh(model, "kiss_logdet");
  const double s2 = model.noise_var();
  if (model.opts.logdet == LogDetMode::exact_dense) {
    const auto [llt, jitter] = detail::chol_with_jitter(kiss_dense_cov(model));
    double logdet = 0.0;
    for (Index i = 0; i < model.n(); ++i)
      logdet += 2.0 * std::log(llt.matrixLLT()(i, i));
    return logdet;
  }
  // Scaled-eigenvalue approximation: the top min(n, m) eigenvalues of K_UU,
  // scaled by n/m, stand in for the eigenvalues of M K_UU M^T.
  const Vec& eig = detail::kuu_eigvals(model);
  const Index n = model.n(), m = model.m();
  const double scale = static_cast<double>(n) / static_cast<double>(m);
  const Index k = std::min(n, m);
  double logdet = 0.0;
  for (Index i = 0; i < k; ++i) logdet += std::log(scale * eig(i) + s2);
  if (n > m) logdet += static_cast<double>(n - m) * std::log(s2);
  return logdet;
}

inline MllReport kiss_mll(const KissGpModel& model, const Vec& y) {
  detail::require_fresh(model, "kiss_mll");
  require(y.size() == model.n(), "kiss_mll: target length mismatch");
  auto [alpha, stats] =
      cg_solve([&](const Vec& v) { return kiss_mvm(model, v); }, y, model.opts.cg);
  MllReport r;
  r.cg = stats;
  r.fit_term = -0.5 * y.dot(alpha);
  r.complexity_term = -0.5 * kiss_logdet(model);
  r.constant = -0.5 * static_cast<double>(model.n()) * std::log(2.0 * M_PI);
  r.value = r.fit_term + r.complexity_term + r.constant;
  return r;
}

struct KissGrads {
  Vec d_theta;
  double d_log_noise = 0.0;
  std::optional<MlpParams> d_w;  // present iff a network is attached
  CgStats alpha_stats;
  bool all_converged = true;
};

// Gradients of the (probe-seeded) marginal likelihood for theta, log sigma,
// and the network weights.
inline KissGrads kiss_mll_grads(const KissGpModel& model, const Vec& y) {
  detail::require_fresh(model, "kiss_mll_grads");
  require(y.size() == model.n(), "kiss_mll_grads: target length mismatch");
  const Index n = model.n(), m = model.m();
  const double s2 = model.noise_var();

  auto solve = [&](const Vec& b) {
    return cg_solve([&](const Vec& v) { return kiss_mvm(model, v); }, b, model.opts.cg);
  };

  KissGrads out;
  auto [alpha, alpha_stats] = solve(y);
  out.alpha_stats = alpha_stats;
  out.all_converged = alpha_stats.converged;

  const bool exact = model.opts.trace == TraceMode::exact_basis;
  const Index r = exact ? n : model.opts.probe_count;
  require(r >= 1, "kiss_mll_grads: need at least one probe");
  const double trace_w = exact ? 0.5 : 0.5 / static_cast<double>(r);

  // Lattice images of alpha and of every probe pair.
  const Vec a_alpha = spmv_t(model.rows, alpha);
  Mat a_z(m, r), a_u(m, r);
  Vec uz_dots(r);
  Rng probe_rng(model.opts.probe_seed);

  // The w-path needs per-probe contractions; accumulate dL/dZ on the fly.
  const bool w_live = model.w_path_live();
  Mat dl_dz;
  if (w_live) {
    const Vec p_alpha = detail::kuu_apply(model, a_alpha);
    dl_dz = Mat(deriv_dot(model.rows, p_alpha).array().colwise() * alpha.array());
  }

  for (Index j = 0; j < r; ++j) {
    Vec zj;
    if (exact) {
      zj = Vec::Zero(n);
      zj(j) = 1.0;
    } else {
      zj.resize(n);
      // Rademacher signs straight off the generator, reproducible by seed.
      for (Index i = 0; i < n; ++i) zj(i) = (probe_rng() & 1ull) ? 1.0 : -1.0;
    }
    auto [uj, stats] = solve(zj);
    out.all_converged = out.all_converged && stats.converged;
    a_z.col(j) = spmv_t(model.rows, zj);
    a_u.col(j) = spmv_t(model.rows, uj);
    uz_dots(j) = uj.dot(zj);

    if (w_live) {
      const Vec p_z = detail::kuu_apply(model, a_z.col(j));
      const Vec p_u = detail::kuu_apply(model, a_u.col(j));
      dl_dz -= trace_w * Mat(deriv_dot(model.rows, p_z).array().colwise() * uj.array());
      dl_dz -= trace_w * Mat(deriv_dot(model.rows, p_u).array().colwise() * zj.array());
    }
  }

  // Kernel-parameter path: gradient stencils applied on the lattice.
  const auto grad_stencils = kernel_grad_stencils(model.base, model.grid);
  const Index np = static_cast<Index>(grad_stencils.size());
  out.d_theta = Vec::Zero(np);
  for (Index t = 0; t < np; ++t) {
    const BttbOperator g(grad_stencils[static_cast<std::size_t>(t)]);
    double val = 0.5 * a_alpha.dot(g.apply(a_alpha));
    for (Index j = 0; j < r; ++j) val -= trace_w * a_u.col(j).dot(g.apply(a_z.col(j)));
    out.d_theta(t) = val;
  }

  // Noise path: dK/d log sigma = 2 sigma^2 I.
  double trace_est = 0.0;
  for (Index j = 0; j < r; ++j) trace_est += uz_dots(j);
  out.d_log_noise = s2 * alpha.squaredNorm() - 2.0 * s2 * trace_w * trace_est;

  if (model.net) {
    if (w_live) {
      const MlpGrads g = mlp_backward(*model.net, *model.arch, model.fwd_cache, dl_dz);
      out.d_w = g.d_params;
    } else {
      // Frozen interpolation cuts the only w-dependence of the covariance.
      MlpParams zeros = *model.net;
      for (auto& w : zeros.weights) w.setZero();
      for (auto& b : zeros.biases) b.setZero();
      out.d_w = std::move(zeros);
    }
  }
  return out;
}

// Cache alpha and v_pred = K_UU M^T alpha so a mean costs 4^d weights.
inline void precompute_predictor(KissGpModel& model, const Vec& y) {
  detail::require_fresh(model, "precompute_predictor");
  require(y.size() == model.n(), "precompute_predictor: target length mismatch");
  auto [alpha, stats] = cg_solve([&](const Vec& v) { return kiss_mvm(model, v); },
                                 y, model.opts.cg);
  if (!stats.converged && stats.final_rel_residual > 1e-4)
    throw NumericError("precompute_predictor: CG failed to reduce the residual");
  model.v_pred = detail::kuu_apply(model, spmv_t(model.rows, alpha));
}

inline Prediction predict(const KissGpModel& model, const Mat& xstar,
                          bool want_variance = false) {
  detail::require_fresh(model, "predict");
  require(model.v_pred.has_value(), "predict: call precompute_predictor first");
  require(xstar.cols() == model.x.cols(), "predict: input width mismatch");

  const Mat zs = model.net ? mlp_forward(*model.net, *model.arch, xstar) : xstar;
  const SparseInterp srows = interp_rows(zs, model.grid, false);

  Prediction p;
  p.mean = spmv(srows, *model.v_pred);
  if (!want_variance) return p;

  p.variance.resize(zs.rows());
  Vec unit(model.m());
  for (Index i = 0; i < zs.rows(); ++i) {
    // b = M K_UU m_*, one sparse column of the cross covariance.
    unit.setZero();
    for (Index k = 0; k < srows.row_nnz; ++k) {
      const std::size_t pos = static_cast<std::size_t>(i * srows.row_nnz + k);
      unit(srows.idx[pos]) += srows.w[pos];
    }
    const Vec b = spmv(model.rows, detail::kuu_apply(model, unit));
    auto [s, stats] =
        cg_solve([&](const Vec& v) { return kiss_mvm(model, v); }, b, model.opts.cg);
    double v = model.k0 - b.dot(s);
    if (v < 0.0) {
      v = 0.0;
      ++p.clamp_count;
    }
    p.variance(i) = v;
  }
  return p;
}

}  // namespace lgp

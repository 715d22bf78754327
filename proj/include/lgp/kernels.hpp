// Stationary base kernels (RBF and spectral mixture), their analytic
// gradients with respect to unconstrained parameters and to the input
// difference, and lattice stencils for the structured operators.
//
// Positivity-constrained parameters live in log space.  Flattened parameter
// order: RBF = [log_lengthscale, log_outputscale];
// SM = [log_weights, log_bandwidths row-major, frequencies row-major].
#pragma once

#include "lgp/common.hpp"
#include "lgp/grid.hpp"
#include "lgp/structured.hpp"

#include <cmath>
#include <string>
#include <variant>
#include <vector>

namespace lgp {

struct RbfParams {
  double log_lengthscale = 0.0;
  double log_outputscale = 0.0;
};

// Spectral mixture with diagonal bandwidth matrices: component q contributes
// a_q * |S_q|^{1/2} (2*pi)^{-D/2} * exp(-0.5 * tau' S_q tau) * cos<tau, 2*pi*mu_q>
// where S_q = diag(exp(log_bandwidths(q, :))) and a_q = exp(log_weights(q)).
struct SmParams {
  Vec log_weights;      // Q
  Mat log_bandwidths;   // Q x D
  Mat frequencies;      // Q x D, unconstrained (kernel is even in mu)

  Index q() const { return log_weights.size(); }
  Index dim() const { return log_bandwidths.cols(); }

  void validate() const {
    require(q() >= 1, "SmParams: need at least one component");
    require(log_bandwidths.rows() == q() && frequencies.rows() == q() &&
                frequencies.cols() == dim(),
            "SmParams: array shapes disagree");
    require(log_weights.allFinite() && log_bandwidths.allFinite() &&
                frequencies.allFinite(),
            "SmParams: non-finite parameters");
  }
};

using BaseKernel = std::variant<RbfParams, SmParams>;

struct KernelGrad {
  Vec d_theta;  // one entry per unconstrained parameter, flattened order
  Vec d_tau;    // D entries
};

// ---------------------------------------------------------------------------
// RBF

inline double rbf_eval(const Vec& tau, const RbfParams& p) {
  require(tau.allFinite(), "rbf_eval: non-finite tau");
  const double ell2 = std::exp(2.0 * p.log_lengthscale);
  const double s2 = std::exp(2.0 * p.log_outputscale);
  return s2 * std::exp(-tau.squaredNorm() / (2.0 * ell2));
}

inline KernelGrad rbf_grad(const Vec& tau, const RbfParams& p) {
  require(tau.allFinite(), "rbf_grad: non-finite tau");
  const double ell2 = std::exp(2.0 * p.log_lengthscale);
  const double k = rbf_eval(tau, p);
  KernelGrad g;
  g.d_theta.resize(2);
  g.d_theta(0) = k * tau.squaredNorm() / ell2;  // d/d log_lengthscale
  g.d_theta(1) = 2.0 * k;                       // d/d log_outputscale
  g.d_tau = -(k / ell2) * tau;
  return g;
}

// ---------------------------------------------------------------------------
// Spectral mixture

inline double sm_eval(const Vec& tau, const SmParams& p) {
  p.validate();
  require(tau.size() == p.dim(), "sm_eval: tau dimension mismatch");
  require(tau.allFinite(), "sm_eval: non-finite tau");
  const Index qn = p.q(), dn = p.dim();
  const double norm = std::pow(2.0 * M_PI, -0.5 * static_cast<double>(dn));
  double k = 0.0;
  for (Index q = 0; q < qn; ++q) {
    double half_log_det = 0.0, quad = 0.0, phase = 0.0;
    for (Index d = 0; d < dn; ++d) {
      const double v = std::exp(p.log_bandwidths(q, d));
      half_log_det += 0.5 * p.log_bandwidths(q, d);
      quad += v * tau(d) * tau(d);
      phase += tau(d) * p.frequencies(q, d);
    }
    k += std::exp(p.log_weights(q)) * std::exp(half_log_det) * norm *
         std::exp(-0.5 * quad) * std::cos(2.0 * M_PI * phase);
  }
  return k;
}

inline KernelGrad sm_grad(const Vec& tau, const SmParams& p) {
  p.validate();
  require(tau.size() == p.dim(), "sm_grad: tau dimension mismatch");
  require(tau.allFinite(), "sm_grad: non-finite tau");
  const Index qn = p.q(), dn = p.dim();
  const double norm = std::pow(2.0 * M_PI, -0.5 * static_cast<double>(dn));

  KernelGrad g;
  g.d_theta = Vec::Zero(qn + 2 * qn * dn);
  g.d_tau = Vec::Zero(dn);
  for (Index q = 0; q < qn; ++q) {
    double half_log_det = 0.0, quad = 0.0, phase = 0.0;
    for (Index d = 0; d < dn; ++d) {
      const double v = std::exp(p.log_bandwidths(q, d));
      half_log_det += 0.5 * p.log_bandwidths(q, d);
      quad += v * tau(d) * tau(d);
      phase += tau(d) * p.frequencies(q, d);
    }
    const double envelope = std::exp(p.log_weights(q)) * std::exp(half_log_det) *
                            norm * std::exp(-0.5 * quad);
    const double c = std::cos(2.0 * M_PI * phase);
    const double s = std::sin(2.0 * M_PI * phase);
    const double term = envelope * c;

    g.d_theta(q) += term;  // d/d log a_q: the term itself
    for (Index d = 0; d < dn; ++d) {
      const double v = std::exp(p.log_bandwidths(q, d));
      // d/d log v_qd: 0.5 from |S_q|^{1/2}, -0.5 v tau^2 from the envelope.
      g.d_theta(qn + q * dn + d) += term * 0.5 * (1.0 - v * tau(d) * tau(d));
      // d/d mu_qd.
      g.d_theta(qn + qn * dn + q * dn + d) +=
          -envelope * s * 2.0 * M_PI * tau(d);
      // d/d tau_d.
      g.d_tau(d) += -envelope * v * tau(d) * c -
                    envelope * s * 2.0 * M_PI * p.frequencies(q, d);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Variant dispatch

inline double kernel_eval(const Vec& tau, const BaseKernel& k) {
  return std::visit(
      [&](const auto& p) -> double {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, RbfParams>) return rbf_eval(tau, p);
        else return sm_eval(tau, p);
      },
      k);
}

inline KernelGrad kernel_grad(const Vec& tau, const BaseKernel& k) {
  return std::visit(
      [&](const auto& p) -> KernelGrad {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, RbfParams>) return rbf_grad(tau, p);
        else return sm_grad(tau, p);
      },
      k);
}

inline Index kernel_param_count(const BaseKernel& k) {
  if (const auto* sm = std::get_if<SmParams>(&k))
    return sm->q() * (1 + 2 * sm->dim());
  return 2;
}

inline Vec kernel_pack(const BaseKernel& k) {
  if (const auto* rbf = std::get_if<RbfParams>(&k)) {
    Vec v(2);
    v << rbf->log_lengthscale, rbf->log_outputscale;
    return v;
  }
  const auto& sm = std::get<SmParams>(k);
  const Index qn = sm.q(), dn = sm.dim();
  Vec v(qn + 2 * qn * dn);
  for (Index q = 0; q < qn; ++q) v(q) = sm.log_weights(q);
  for (Index q = 0; q < qn; ++q)
    for (Index d = 0; d < dn; ++d) {
      v(qn + q * dn + d) = sm.log_bandwidths(q, d);
      v(qn + qn * dn + q * dn + d) = sm.frequencies(q, d);
    }
  return v;
}

inline void kernel_unpack(const Vec& v, BaseKernel& k) {
  require(v.size() == kernel_param_count(k), "kernel_unpack: length mismatch");
  require(v.allFinite(), "kernel_unpack: non-finite parameters");
  if (auto* rbf = std::get_if<RbfParams>(&k)) {
    rbf->log_lengthscale = v(0);
    rbf->log_outputscale = v(1);
    return;
  }
  auto& sm = std::get<SmParams>(k);
  const Index qn = sm.q(), dn = sm.dim();
  for (Index q = 0; q < qn; ++q) sm.log_weights(q) = v(q);
  for (Index q = 0; q < qn; ++q)
    for (Index d = 0; d < dn; ++d) {
      sm.log_bandwidths(q, d) = v(qn + q * dn + d);
      sm.frequencies(q, d) = v(qn + qn * dn + q * dn + d);
    }
}

inline std::vector<std::string> kernel_param_names(const BaseKernel& k) {
  if (std::holds_alternative<RbfParams>(k))
    return {"log_lengthscale", "log_outputscale"};
  const auto& sm = std::get<SmParams>(k);
  std::vector<std::string> names;
  for (Index q = 0; q < sm.q(); ++q)
    names.push_back("log_weight[" + std::to_string(q) + "]");
  for (Index q = 0; q < sm.q(); ++q)
    for (Index d = 0; d < sm.dim(); ++d)
      names.push_back("log_bandwidth[" + std::to_string(q) + "][" + std::to_string(d) + "]");
  for (Index q = 0; q < sm.q(); ++q)
    for (Index d = 0; d < sm.dim(); ++d)
      names.push_back("frequency[" + std::to_string(q) + "][" + std::to_string(d) + "]");
  return names;
}

// ---------------------------------------------------------------------------
// Lattice stencils

// Per-axis Toeplitz factors of the RBF lattice matrix (the RBF kernel is a
// product over axes); the amplitude is folded into the first factor.
inline std::vector<SymToeplitz> rbf_factors(const RbfParams& p, const GridSpec& grid) {
  grid.validate();
  const double ell2 = std::exp(2.0 * p.log_lengthscale);
  const double s2 = std::exp(2.0 * p.log_outputscale);
  std::vector<SymToeplitz> factors;
  for (Index d = 0; d < grid.dim(); ++d) {
    const auto& axis = grid.axes[static_cast<std::size_t>(d)];
    const double h = axis.spacing();
    SymToeplitz t{Vec(axis.count)};
    for (Index j = 0; j < axis.count; ++j) {
      const double dz = h * static_cast<double>(j);
      t.first_column(j) = std::exp(-dz * dz / (2.0 * ell2));
    }
    if (d == 0) t.first_column *= s2;
    factors.push_back(std::move(t));
  }
  return factors;
}

// Full stencil of kernel values over all signed lattice offsets; valid for
// any stationary base kernel.
inline BttbSpec kernel_bttb_stencil(const BaseKernel& k, const GridSpec& grid) {
  grid.validate();
  const Index dn = grid.dim();
  BttbSpec b;
  for (Index d = 0; d < dn; ++d)
    b.dims.push_back(grid.axes[static_cast<std::size_t>(d)].count);
  b.gen.resize(static_cast<std::size_t>(b.gen_size()));

  Vec tau(dn);
  std::vector<Index> coord(static_cast<std::size_t>(dn), 0);
  const Index gsize = b.gen_size();
  for (Index g = 0; g < gsize; ++g) {
    for (Index d = 0; d < dn; ++d) {
      const auto& axis = grid.axes[static_cast<std::size_t>(d)];
      tau(d) = axis.spacing() *
               static_cast<double>(coord[static_cast<std::size_t>(d)] - (axis.count - 1));
    }
    b.gen[static_cast<std::size_t>(g)] = kernel_eval(tau, k);
    for (Index d = dn; d-- > 0;) {
      auto& c = coord[static_cast<std::size_t>(d)];
      if (++c < 2 * b.dims[static_cast<std::size_t>(d)] - 1) break;
      c = 0;
    }
  }
  return b;
}

using KernelStencil = std::variant<std::vector<SymToeplitz>, BttbSpec>;

// RBF factors across axes (product kernel); SM gets the full stencil.
inline KernelStencil stencil(const BaseKernel& k, const GridSpec& grid) {
  if (const auto* rbf = std::get_if<RbfParams>(&k))
    return rbf_factors(*rbf, grid);
  return kernel_bttb_stencil(k, grid);
}

// Stencils of d k / d theta_j over all lattice offsets, one per parameter.
// Parameter derivatives of a product kernel do not factor across axes, so
// these are always full stencils.
inline std::vector<BttbSpec> kernel_grad_stencils(const BaseKernel& k,
                                                  const GridSpec& grid) {
  grid.validate();
  const Index dn = grid.dim();
  const Index np = kernel_param_count(k);

  BttbSpec proto;
  for (Index d = 0; d < dn; ++d)
    proto.dims.push_back(grid.axes[static_cast<std::size_t>(d)].count);
  std::vector<BttbSpec> out(static_cast<std::size_t>(np), proto);
  for (auto& b : out) b.gen.resize(static_cast<std::size_t>(b.gen_size()));

  Vec tau(dn);
  std::vector<Index> coord(static_cast<std::size_t>(dn), 0);
  const Index gsize = proto.gen_size();
  for (Index g = 0; g < gsize; ++g) {
    for (Index d = 0; d < dn; ++d) {
      const auto& axis = grid.axes[static_cast<std::size_t>(d)];
      tau(d) = axis.spacing() *
               static_cast<double>(coord[static_cast<std::size_t>(d)] - (axis.count - 1));
    }
    const KernelGrad kg = kernel_grad(tau, k);
    for (Index j = 0; j < np; ++j)
      out[static_cast<std::size_t>(j)].gen[static_cast<std::size_t>(g)] = kg.d_theta(j);
    for (Index d = dn; d-- > 0;) {
      auto& c = coord[static_cast<std::size_t>(d)];
      if (++c < 2 * proto.dims[static_cast<std::size_t>(d)] - 1) break;
      c = 0;
    }
  }
  return out;
}

}  // namespace lgp

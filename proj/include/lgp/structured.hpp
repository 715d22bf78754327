// Structured covariance linear algebra: symmetric-Toeplitz and
// block-Toeplitz-with-Toeplitz-blocks (BTTB) matrix-vector products via
// circulant embedding, Kronecker-product MVMs, conjugate gradients, and
// dense symmetric eigenvalues.
//
// Flat vector layout for multi-axis lattices is row-major: the first axis is
// slowest, the last axis fastest.  kron_mvm, BttbSpec, and the grid module
// all share this convention.
#pragma once

#include "lgp/common.hpp"
#include "lgp/fft.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

namespace lgp {

// ---------------------------------------------------------------------------
// Generators

// Symmetric Toeplitz matrix, fully determined by its first column.
struct SymToeplitz {
  Vec first_column;

  Index size() const { return first_column.size(); }

  Mat dense() const {
    const Index m = size();
    Mat t(m, m);
    for (Index i = 0; i < m; ++i)
      for (Index j = 0; j < m; ++j) t(i, j) = first_column(std::abs(i - j));
    return t;
  }
};

// Stationary-kernel matrix on a D-dimensional lattice, stored as the full
// stencil of kernel values over signed offsets.  gen is row-major over
// (2*dims[0]-1, ..., 2*dims[D-1]-1) with axis d offset o_d stored at
// coordinate o_d + dims[d] - 1.
struct BttbSpec {
  std::vector<Index> dims;
  std::vector<double> gen;

  Index order() const {
    Index m = 1;
    for (Index d : dims) m *= d;
    return m;
  }

  Index gen_size() const {
    Index g = 1;
    for (Index d : dims) g *= 2 * d - 1;
    return g;
  }

  // Flat gen index for a signed offset tuple.
  Index gen_index(const std::vector<Index>& offset) const {
    require(offset.size() == dims.size(), "BttbSpec: offset rank mismatch");
    Index idx = 0;
    for (std::size_t d = 0; d < dims.size(); ++d) {
      const Index c = offset[d] + dims[d] - 1;
      require(c >= 0 && c < 2 * dims[d] - 1, "BttbSpec: offset out of range");
      idx = idx * (2 * dims[d] - 1) + c;
    }
    return idx;
  }

  Mat dense() const {
    const Index m = order();
    const std::size_t nd = dims.size();
    Mat k(m, m);
    std::vector<Index> ci(nd), cj(nd), off(nd);
    for (Index i = 0; i < m; ++i) {
      Index rem = i;
      for (std::size_t d = nd; d-- > 0;) {
        ci[d] = rem % dims[d];
        rem /= dims[d];
      }
      for (Index j = 0; j < m; ++j) {
        rem = j;
        for (std::size_t d = nd; d-- > 0;) {
          cj[d] = rem % dims[d];
          rem /= dims[d];
        }
        for (std::size_t d = 0; d < nd; ++d) off[d] = ci[d] - cj[d];
        k(i, j) = gen[gen_index(off)];
      }
    }
    return k;
  }
};

// ---------------------------------------------------------------------------
// Fast operators (cache the circulant spectrum across applies)

class ToeplitzOperator {
 public:
  explicit ToeplitzOperator(const SymToeplitz& t) : m_(t.size()) {
    require(m_ >= 1, "ToeplitzOperator: empty generator");
    require(t.first_column.allFinite(), "ToeplitzOperator: non-finite generator");
    embed_ = next_pow2(static_cast<std::size_t>(2 * m_ - 1));
    spectrum_.assign(embed_, Cplx(0.0, 0.0));
    for (Index k = 0; k < m_; ++k) spectrum_[static_cast<std::size_t>(k)] = t.first_column(k);
    for (Index k = 1; k < m_; ++k)
      spectrum_[embed_ - static_cast<std::size_t>(k)] = t.first_column(k);
    fft_pow2(spectrum_, false);
  }

  Index size() const { return m_; }

  void apply_into(const double* in, double* out, std::vector<Cplx>& scratch) const {
    scratch.assign(embed_, Cplx(0.0, 0.0));
    for (Index k = 0; k < m_; ++k) scratch[static_cast<std::size_t>(k)] = in[k];
    fft_pow2(scratch, false);
    for (std::size_t k = 0; k < embed_; ++k) scratch[k] *= spectrum_[k];
    fft_pow2(scratch, true);
    for (Index k = 0; k < m_; ++k) out[k] = scratch[static_cast<std::size_t>(k)].real();
  }

  Vec apply(const Vec& v) const {
    require(v.size() == m_, "ToeplitzOperator: vector length mismatch");
    Vec out(m_);
    std::vector<Cplx> scratch;
    apply_into(v.data(), out.data(), scratch);
    return out;
  }

 private:
  Index m_;
  std::size_t embed_;
  std::vector<Cplx> spectrum_;
};

class BttbOperator {
 public:
  explicit BttbOperator(const BttbSpec& b) : dims_(b.dims) {
    require(!dims_.empty(), "BttbOperator: no dimensions");
    require(static_cast<Index>(b.gen.size()) == b.gen_size(),
            "BttbOperator: generator size mismatch");
    embed_.resize(dims_.size());
    embed_total_ = 1;
    total_ = 1;
    for (std::size_t d = 0; d < dims_.size(); ++d) {
      require(dims_[d] >= 1, "BttbOperator: empty axis");
      embed_[d] = next_pow2(static_cast<std::size_t>(2 * dims_[d] - 1));
      embed_total_ *= embed_[d];
      total_ *= dims_[d];
    }

    // Scatter the stencil into the circulant embedding: offset o_d maps to
    // index o_d (o_d >= 0) or embed_[d] + o_d (o_d < 0).  Embedding lengths
    // >= 2*m_d - 1 guarantee the two ranges never collide.
    spectrum_.assign(embed_total_, Cplx(0.0, 0.0));
    const std::size_t nd = dims_.size();
    std::vector<Index> coord(nd, 0);
    const Index gsize = b.gen_size();
    for (Index g = 0; g < gsize; ++g) {
      std::size_t eidx = 0;
      for (std::size_t d = 0; d < nd; ++d) {
        const Index off = coord[d] - (dims_[d] - 1);
        eidx = eidx * embed_[d] + (off >= 0 ? static_cast<std::size_t>(off)
                                            : embed_[d] - static_cast<std::size_t>(-off));
      }
      const double val = b.gen[static_cast<std::size_t>(g)];
      require(std::isfinite(val), "BttbOperator: non-finite stencil value");
      spectrum_[eidx] = val;
      for (std::size_t d = nd; d-- > 0;) {
        if (++coord[d] < 2 * dims_[d] - 1) break;
        coord[d] = 0;
      }
    }
    ndfft(spectrum_, embed_, false);
  }

  Index size() const { return total_; }

  void apply_into(const double* in, double* out, std::vector<Cplx>& scratch) const {
    scratch.assign(embed_total_, Cplx(0.0, 0.0));
    const std::size_t nd = dims_.size();
    // Embedding strides (row-major, last axis fastest).
    std::vector<std::size_t> estride(nd);
    std::size_t s = 1;
    for (std::size_t d = nd; d-- > 0;) {
      estride[d] = s;
      s *= embed_[d];
    }
    std::vector<Index> coord(nd, 0);
    std::size_t eidx = 0;
    for (Index i = 0; i < total_; ++i) {
      scratch[eidx] = in[i];
      for (std::size_t d = nd; d-- > 0;) {
        if (++coord[d] < dims_[d]) {
          eidx += estride[d];
          break;
        }
        eidx -= estride[d] * static_cast<std::size_t>(dims_[d] - 1);
        coord[d] = 0;
      }
    }
    ndfft(scratch, embed_, false);
    for (std::size_t k = 0; k < embed_total_; ++k) scratch[k] *= spectrum_[k];
    ndfft(scratch, embed_, true);
    std::fill(coord.begin(), coord.end(), 0);
    eidx = 0;
    for (Index i = 0; i < total_; ++i) {
      out[i] = scratch[eidx].real();
      for (std::size_t d = nd; d-- > 0;) {
        if (++coord[d] < dims_[d]) {
          eidx += estride[d];
          break;
        }
        eidx -= estride[d] * static_cast<std::size_t>(dims_[d] - 1);
        coord[d] = 0;
      }
    }
  }

  Vec apply(const Vec& v) const {
    require(v.size() == total_, "BttbOperator: vector length mismatch");
    Vec out(total_);
    std::vector<Cplx> scratch;
    apply_into(v.data(), out.data(), scratch);
    return out;
  }

 private:
  std::vector<Index> dims_;
  std::vector<std::size_t> embed_;
  std::size_t embed_total_ = 0;
  Index total_ = 0;
  std::vector<Cplx> spectrum_;
};

// Kronecker product of per-axis symmetric Toeplitz factors, applied without
// materialization: for each axis, multiply every stride-spaced fiber by that
// axis factor.
class KronOperator {
 public:
  explicit KronOperator(const std::vector<SymToeplitz>& factors) {
    require(!factors.empty(), "KronOperator: no factors");
    total_ = 1;
    for (const auto& f : factors) {
      ops_.emplace_back(f);
      dims_.push_back(f.size());
      total_ *= f.size();
    }
  }

  Index size() const { return total_; }

  Vec apply(const Vec& v) const {
    require(v.size() == total_, "KronOperator: vector length mismatch");
    Vec x = v;
    Vec fiber_in, fiber_out;
    std::vector<Cplx> scratch;
    Index stride = 1;
    for (std::size_t d = dims_.size(); d-- > 0;) {
      const Index md = dims_[d];
      fiber_in.resize(md);
      fiber_out.resize(md);
      const Index block = md * stride;
      for (Index base = 0; base < total_; base += block) {
        for (Index off = 0; off < stride; ++off) {
          double* p = x.data() + base + off;
          for (Index k = 0; k < md; ++k) fiber_in(k) = p[k * stride];
          ops_[d].apply_into(fiber_in.data(), fiber_out.data(), scratch);
          for (Index k = 0; k < md; ++k) p[k * stride] = fiber_out(k);
        }
      }
      stride *= md;
    }
    return x;
  }

 private:
  std::vector<ToeplitzOperator> ops_;
  std::vector<Index> dims_;
  Index total_ = 0;
};

// ---------------------------------------------------------------------------
// One-shot wrappers

inline Vec toeplitz_mvm(const SymToeplitz& t, const Vec& v) {
  require(v.size() == t.size(), "toeplitz_mvm: vector length mismatch");
  return ToeplitzOperator(t).apply(v);
}

inline Vec kron_mvm(const std::vector<SymToeplitz>& factors, const Vec& v) {
  return KronOperator(factors).apply(v);
}

inline Vec bttb_mvm(const BttbSpec& b, const Vec& v) {
  return BttbOperator(b).apply(v);
}

// ---------------------------------------------------------------------------
// Conjugate gradients

enum class Precond { none, diagonal };

struct CgConfig {
  double tol = 1e-10;         // relative residual threshold
  Index max_iters = 1000;
  Precond preconditioner = Precond::none;
  Vec diag;                   // operator diagonal, used when preconditioner == diagonal
};

struct CgStats {
  Index iters = 0;
  double final_rel_residual = 0.0;
  bool converged = true;
};

// Solves A x = b for symmetric positive definite A given only the action
// v -> A v.  Returns the solution and honest statistics: the reported
// residual is recomputed from a final operator apply, not the recursion.
template <class ApplyA>
std::pair<Vec, CgStats> cg_solve(ApplyA&& apply_A, const Vec& b,
                                 const CgConfig& cfg = {}) {
  require(cfg.tol > 0.0, "cg_solve: tol must be positive");
  require(cfg.max_iters >= 1, "cg_solve: max_iters must be >= 1");
  require(b.allFinite(), "cg_solve: right-hand side not finite");
  if (cfg.preconditioner == Precond::diagonal) {
    require(cfg.diag.size() == b.size(), "cg_solve: preconditioner diagonal size mismatch");
    require((cfg.diag.array() > 0.0).all(), "cg_solve: preconditioner diagonal must be positive");
  }

  const Index n = b.size();
  Vec x = Vec::Zero(n);
  CgStats stats;
  const double bnorm = b.norm();
  if (bnorm == 0.0) return {x, stats};

  auto precond = [&](const Vec& r) -> Vec {
    if (cfg.preconditioner == Precond::diagonal) return r.cwiseQuotient(cfg.diag);
    return r;
  };

  Vec r = b;
  Vec z = precond(r);
  Vec p = z;
  double rz = r.dot(z);
  bool hit_tol = false;
  for (Index k = 1; k <= cfg.max_iters; ++k) {
    const Vec ap = apply_A(p);
    if (!ap.allFinite()) throw NumericError("cg_solve: operator produced non-finite values");
    const double pap = p.dot(ap);
    if (!(pap > 0.0)) throw NumericError("cg_solve: operator is not positive definite along a search direction");
    const double alpha = rz / pap;
    x += alpha * p;
    r -= alpha * ap;
    stats.iters = k;
    if (!r.allFinite()) throw NumericError("cg_solve: residual became non-finite");
    if (r.norm() / bnorm <= cfg.tol) {
      hit_tol = true;
      break;
    }
    z = precond(r);
    const double rz_new = r.dot(z);
    const double beta = rz_new / rz;
    rz = rz_new;
    p = z + beta * p;
  }

  const Vec true_res = b - apply_A(x);
  stats.final_rel_residual = true_res.norm() / bnorm;
  stats.converged = hit_tol && stats.final_rel_residual <= cfg.tol * 10.0;
  return {x, stats};
}

// ---------------------------------------------------------------------------
// Symmetric eigenvalues

inline Vec sym_eigvals(const Mat& a) {
  require(a.rows() == a.cols(), "sym_eigvals: matrix must be square");
  require(a.allFinite(), "sym_eigvals: matrix must be finite");
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  const double asym = (a - a.transpose()).cwiseAbs().maxCoeff();
  require(asym <= 1e-8 * scale, "sym_eigvals: matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> es(a, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericError("sym_eigvals: eigensolver failed");
  return es.eigenvalues();  // ascending
}

// All pairwise (over axes) products of per-factor eigenvalues; the
// eigenvalues of the Kronecker product, in lattice row-major order.
inline Vec kron_eigvals(const std::vector<Vec>& factor_eigs) {
  require(!factor_eigs.empty(), "kron_eigvals: no factors");
  Vec out = Vec::Ones(1);
  for (const Vec& e : factor_eigs) {
    Vec next(out.size() * e.size());
    Index k = 0;
    for (Index i = 0; i < out.size(); ++i)
      for (Index j = 0; j < e.size(); ++j) next(k++) = out(i) * e(j);
    out.swap(next);
  }
  return out;
}

}  // namespace lgp

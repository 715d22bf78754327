// Inducing lattice construction and sparse local cubic interpolation.
//
// Interpolation uses the Keys cubic convolution kernel (a = -0.5), which is
// C^1 and reproduces quadratics exactly; each input point touches 4 nodes per
// axis, 4^d in total.  Derivative rows (dweight/dz, including the 1/h factor)
// support backpropagation through the interpolation operator.
//
// Lattice vectors are flattened row-major: first axis slowest, last fastest,
// matching the structured-operator layout.
#pragma once

#include "lgp/common.hpp"

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

namespace lgp {

struct GridAxis {
  Index count = 0;
  double lo = 0.0;
  double hi = 0.0;

  double spacing() const { return (hi - lo) / static_cast<double>(count - 1); }
  double node(Index i) const { return lo + spacing() * static_cast<double>(i); }
};

struct GridSpec {
  std::vector<GridAxis> axes;

  Index dim() const { return static_cast<Index>(axes.size()); }

  Index total() const {
    Index m = 1;
    for (const auto& a : axes) m *= a.count;
    return m;
  }

  // Row-major strides over the lattice (last axis fastest).
  std::vector<Index> strides() const {
    std::vector<Index> s(axes.size());
    Index acc = 1;
    for (std::size_t d = axes.size(); d-- > 0;) {
      s[d] = acc;
      acc *= axes[d].count;
    }
    return s;
  }

  void validate() const {
    require(!axes.empty(), "GridSpec: no axes");
    for (const auto& a : axes) {
      require(a.count >= 4, "GridSpec: cubic interpolation needs >= 4 nodes per axis");
      require(std::isfinite(a.lo) && std::isfinite(a.hi) && a.hi > a.lo,
              "GridSpec: axis bounds must be finite with hi > lo");
    }
  }

  // The interpolable interior leaves one node of margin at each boundary.
  bool contains(const Vec& z) const {
    if (z.size() != dim()) return false;
    for (Index d = 0; d < dim(); ++d) {
      const auto& a = axes[static_cast<std::size_t>(d)];
      const double u = (z(d) - a.lo) / a.spacing();
      if (!(u >= 1.0 && u <= static_cast<double>(a.count - 2))) return false;
    }
    return true;
  }
};

// Axis ranges cover the data plus `padding` times the observed range on each
// side.  Padding is raised per axis when needed so every input keeps the one
// node interpolation margin; degenerate axes get unit width.
inline GridSpec build_grid(const Mat& z, const std::vector<Index>& nodes_per_axis,
                           double padding) {
  require(z.rows() >= 1, "build_grid: need at least one point");
  require(z.allFinite(), "build_grid: non-finite inputs");
  require(static_cast<Index>(nodes_per_axis.size()) == z.cols(),
          "build_grid: nodes_per_axis length must equal input dimension");
  require(padding >= 0.0, "build_grid: padding must be non-negative");

  GridSpec grid;
  grid.axes.resize(static_cast<std::size_t>(z.cols()));
  for (Index d = 0; d < z.cols(); ++d) {
    const Index count = nodes_per_axis[static_cast<std::size_t>(d)];
    require(count >= 4, "build_grid: need >= 4 nodes per axis");
    const double lo0 = z.col(d).minCoeff();
    const double hi0 = z.col(d).maxCoeff();
    const double range = hi0 - lo0;
    GridAxis axis;
    axis.count = count;
    if (range == 0.0) {
      axis.lo = lo0 - 0.5;
      axis.hi = hi0 + 0.5;
    } else {
      // A pad fraction p keeps the data one node inside the boundary iff
      // p*(count-1) >= 1 + 2p, i.e. p >= 1/(count-3); 1.02 adds float slack.
      const double pad = std::max(padding, 1.02 / static_cast<double>(count - 3));
      axis.lo = lo0 - pad * range;
      axis.hi = hi0 + pad * range;
    }
    grid.axes[static_cast<std::size_t>(d)] = axis;
  }
  grid.validate();
  return grid;
}

// ---------------------------------------------------------------------------
// Keys cubic convolution kernel, a = -0.5.

inline double keys_weight(double u) {
  u = std::abs(u);
  if (u <= 1.0) return ((1.5 * u - 2.5) * u) * u + 1.0;
  if (u < 2.0) return (((-0.5 * u + 2.5) * u) - 4.0) * u + 2.0;
  return 0.0;
}

// d keys_weight / du for u >= 0 (the kernel is even; callers apply the sign).
inline double keys_weight_deriv(double u) {
  if (u <= 1.0) return (4.5 * u - 5.0) * u;
  if (u < 2.0) return (-1.5 * u + 5.0) * u - 4.0;
  return 0.0;
}

// Weights on the four support nodes at offsets {-1, 0, 1, 2} from the cell
// base node, for fractional position t in [0, 1].
inline std::array<double, 4> keys_weights(double t) {
  return {keys_weight(1.0 + t), keys_weight(t), keys_weight(1.0 - t),
          keys_weight(2.0 - t)};
}

inline std::array<double, 4> keys_dweights(double t) {
  return {keys_weight_deriv(1.0 + t), keys_weight_deriv(t),
          -keys_weight_deriv(1.0 - t), -keys_weight_deriv(2.0 - t)};
}

// ---------------------------------------------------------------------------
// Sparse interpolation rows

struct SparseInterp {
  Index n = 0;         // number of rows (input points)
  Index dim = 0;       // lattice dimension
  Index row_nnz = 0;   // 4^dim
  Index m = 0;         // lattice size (column count)
  std::vector<Index> idx;   // n * row_nnz flat lattice indices
  std::vector<double> w;    // n * row_nnz weights
  std::vector<double> dw;   // n * dim * row_nnz, layout [(i*dim + a)*row_nnz + k]

  bool has_derivs() const { return !dw.empty(); }
};

inline SparseInterp interp_rows(const Mat& z, const GridSpec& grid,
                                bool with_derivs) {
  grid.validate();
  require(z.cols() == grid.dim(), "interp_rows: dimension mismatch");
  require(z.allFinite(), "interp_rows: non-finite inputs");

  const Index n = z.rows();
  const Index d = grid.dim();
  Index row_nnz = 1;
  for (Index a = 0; a < d; ++a) row_nnz *= 4;

  SparseInterp rows;
  rows.n = n;
  rows.dim = d;
  rows.row_nnz = row_nnz;
  rows.m = grid.total();
  rows.idx.resize(static_cast<std::size_t>(n * row_nnz));
  rows.w.resize(static_cast<std::size_t>(n * row_nnz));
  if (with_derivs) rows.dw.resize(static_cast<std::size_t>(n * d * row_nnz));

  const std::vector<Index> stride = grid.strides();
  std::vector<Index> base(static_cast<std::size_t>(d));
  std::vector<std::array<double, 4>> wts(static_cast<std::size_t>(d));
  std::vector<std::array<double, 4>> dwts(static_cast<std::size_t>(d));

  for (Index i = 0; i < n; ++i) {
    for (Index a = 0; a < d; ++a) {
      const auto& axis = grid.axes[static_cast<std::size_t>(a)];
      const double h = axis.spacing();
      const double u = (z(i, a) - axis.lo) / h;
      const double u_max = static_cast<double>(axis.count - 2);
      const double tol = 1e-9;
      if (!(u >= 1.0 - tol && u <= u_max + tol)) {
        throw GridRangeError(
            static_cast<int>(a),
            "interp_rows: point " + std::to_string(i) + " coordinate " +
                std::to_string(z(i, a)) + " leaves the interpolable interior of axis " +
                std::to_string(a) + " [" + std::to_string(axis.node(1)) + ", " +
                std::to_string(axis.node(axis.count - 2)) +
                "]; rebuild or extend the grid to cover it");
      }
      Index j0 = static_cast<Index>(std::floor(u));
      if (j0 < 1) j0 = 1;
      if (j0 > axis.count - 3) j0 = axis.count - 3;
      double t = u - static_cast<double>(j0);
      t = std::min(1.0, std::max(0.0, t));
      base[static_cast<std::size_t>(a)] = j0;
      wts[static_cast<std::size_t>(a)] = keys_weights(t);
      if (with_derivs) {
        auto dk = keys_dweights(t);
        for (double& x : dk) x /= h;  // d/dz = d/dt * 1/h
        dwts[static_cast<std::size_t>(a)] = dk;
      }
    }

    // Tensor product over the 4^d support combinations.
    std::vector<Index> digit(static_cast<std::size_t>(d), 0);
    for (Index k = 0; k < row_nnz; ++k) {
      Index flat = 0;
      double weight = 1.0;
      for (Index a = 0; a < d; ++a) {
        const Index c = digit[static_cast<std::size_t>(a)];
        flat += (base[static_cast<std::size_t>(a)] - 1 + c) * stride[static_cast<std::size_t>(a)];
        weight *= wts[static_cast<std::size_t>(a)][static_cast<std::size_t>(c)];
      }
      const std::size_t pos = static_cast<std::size_t>(i * row_nnz + k);
      rows.idx[pos] = flat;
      rows.w[pos] = weight;
      if (with_derivs) {
        for (Index a = 0; a < d; ++a) {
          double dweight = 1.0;
          for (Index b = 0; b < d; ++b) {
            const Index c = digit[static_cast<std::size_t>(b)];
            dweight *= (b == a) ? dwts[static_cast<std::size_t>(b)][static_cast<std::size_t>(c)]
                                : wts[static_cast<std::size_t>(b)][static_cast<std::size_t>(c)];
          }
          rows.dw[static_cast<std::size_t>((i * d + a) * row_nnz + k)] = dweight;
        }
      }
      for (Index a = d; a-- > 0;) {
        if (++digit[static_cast<std::size_t>(a)] < 4) break;
        digit[static_cast<std::size_t>(a)] = 0;
      }
    }
  }
  return rows;
}

inline SparseInterp interp_row(const Vec& z, const GridSpec& grid,
                               bool with_derivs) {
  Mat zrow(1, z.size());
  zrow.row(0) = z;
  return interp_rows(zrow, grid, with_derivs);
}

// M v: lattice values to input locations.
inline Vec spmv(const SparseInterp& rows, const Vec& v) {
  require(v.size() == rows.m, "spmv: lattice vector length mismatch");
  Vec out = Vec::Zero(rows.n);
  for (Index i = 0; i < rows.n; ++i) {
    double acc = 0.0;
    for (Index k = 0; k < rows.row_nnz; ++k) {
      const std::size_t pos = static_cast<std::size_t>(i * rows.row_nnz + k);
      const Index j = rows.idx[pos];
      require(j >= 0 && j < rows.m, "spmv: lattice index out of bounds");
      acc += rows.w[pos] * v(j);
    }
    out(i) = acc;
  }
  return out;
}

// M^T u: scatter input-space values back to the lattice.
inline Vec spmv_t(const SparseInterp& rows, const Vec& u) {
  require(u.size() == rows.n, "spmv_t: input vector length mismatch");
  Vec out = Vec::Zero(rows.m);
  for (Index i = 0; i < rows.n; ++i) {
    for (Index k = 0; k < rows.row_nnz; ++k) {
      const std::size_t pos = static_cast<std::size_t>(i * rows.row_nnz + k);
      const Index j = rows.idx[pos];
      require(j >= 0 && j < rows.m, "spmv_t: lattice index out of bounds");
      out(j) += rows.w[pos] * u(i);
    }
  }
  return out;
}

// Contraction of the derivative rows with a lattice vector:
// out(i, a) = sum_k dw[i, a, k] * p[idx[i, k]].  This is the building block
// for backpropagating through M.
inline Mat deriv_dot(const SparseInterp& rows, const Vec& p) {
  require(rows.has_derivs(), "deriv_dot: rows were built without derivatives");
  require(p.size() == rows.m, "deriv_dot: lattice vector length mismatch");
  Mat out = Mat::Zero(rows.n, rows.dim);
  for (Index i = 0; i < rows.n; ++i) {
    for (Index a = 0; a < rows.dim; ++a) {
      double acc = 0.0;
      for (Index k = 0; k < rows.row_nnz; ++k) {
        acc += rows.dw[static_cast<std::size_t>((i * rows.dim + a) * rows.row_nnz + k)] *
               p(rows.idx[static_cast<std::size_t>(i * rows.row_nnz + k)]);
      }
      out(i, a) = acc;
    }
  }
  return out;
}

// Dense materialization of M, for oracles and small-scale validation.
inline Mat interp_dense(const SparseInterp& rows) {
  Mat m = Mat::Zero(rows.n, rows.m);
  for (Index i = 0; i < rows.n; ++i)
    for (Index k = 0; k < rows.row_nnz; ++k) {
      const std::size_t pos = static_cast<std::size_t>(i * rows.row_nnz + k);
      m(i, rows.idx[pos]) += rows.w[pos];
    }
  return m;
}

}  // namespace lgp

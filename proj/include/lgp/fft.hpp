// Iterative radix-2 complex FFT for power-of-two lengths, plus a row-major
// multi-dimensional wrapper.  All circulant embeddings in this library are
// padded to powers of two, so no general-length transform is needed.
#pragma once

#include "lgp/common.hpp"

#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

namespace lgp {

using Cplx = std::complex<double>;

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// In-place transform of length n = 2^k.  inverse=true applies the conjugate
// transform and scales by 1/n, so fft(ifft(x)) == x.
inline void fft_pow2(Cplx* a, std::size_t n, bool inverse) {
  if (n <= 1) return;
  require(is_pow2(n), "fft_pow2: length must be a power of two");

  // Bit-reversal permutation.
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }

  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = sign * 2.0 * M_PI / static_cast<double>(len);
    const std::size_t half = len >> 1;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        // Direct twiddle evaluation keeps rounding error O(eps) per stage.
        const Cplx w = std::polar(1.0, ang * static_cast<double>(k));
        const Cplx u = a[i + k];
        const Cplx v = a[i + k + half] * w;
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }

  if (inverse) {
    const double scale = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) a[i] *= scale;
  }
}

inline void fft_pow2(std::vector<Cplx>& a, bool inverse) {
  fft_pow2(a.data(), a.size(), inverse);
}

// Transform of a row-major tensor with shape `dims` (last axis fastest).
// Every dims[d] must be a power of two.  Applies a 1-D transform along each
// axis in turn; per-axis 1/n scaling on the inverse composes to 1/N overall.
inline void ndfft(std::vector<Cplx>& data, const std::vector<std::size_t>& dims,
                  bool inverse) {
  std::size_t total = 1;
  for (std::size_t d : dims) {
    require(is_pow2(d), "ndfft: every axis length must be a power of two");
    total *= d;
  }
  require(data.size() == total, "ndfft: data size does not match dims");
  if (total == 0) return;

  std::vector<Cplx> fiber;
  std::size_t stride_after = 1;  // product of dims after axis d
  for (std::size_t d = dims.size(); d-- > 0;) {
    const std::size_t len = dims[d];
    const std::size_t stride = stride_after;
    if (len > 1) {
      fiber.resize(len);
      const std::size_t block = len * stride;
      for (std::size_t base = 0; base < total; base += block) {
        for (std::size_t off = 0; off < stride; ++off) {
          Cplx* p = data.data() + base + off;
          if (stride == 1) {
            fft_pow2(p, len, inverse);
          } else {
            for (std::size_t k = 0; k < len; ++k) fiber[k] = p[k * stride];
            fft_pow2(fiber.data(), len, inverse);
            for (std::size_t k = 0; k < len; ++k) p[k * stride] = fiber[k];
          }
        }
      }
    }
    stride_after *= len;
  }
}

}  // namespace lgp

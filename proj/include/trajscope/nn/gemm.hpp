#pragma once

#include <algorithm>
#include <cstddef>

// Row-major matrix products that accumulate into C. Every output element
// sums its k terms in ascending k order, so results do not depend on the
// vector width the compiler picks. Groups of four k terms whose multipliers
// are all zero are skipped (sparse images and relu outputs).

namespace trajscope::nn::gemm {

inline constexpr std::size_t kColumnBlock = 512;

namespace detail {

// crow[j] = (((crow[j] + a0 b0[j]) + a1 b1[j]) + a2 b2[j]) + a3 b3[j]
template <class T>
inline void axpy4(T* __restrict crow, std::size_t j0, std::size_t j1, T a0, T a1, T a2, T a3, const T* __restrict b0,
                  const T* __restrict b1, const T* __restrict b2, const T* __restrict b3) {
  for (std::size_t j = j0; j < j1; ++j) {
    T v = crow[j];
    v += a0 * b0[j];
    v += a1 * b1[j];
    v += a2 * b2[j];
    v += a3 * b3[j];
    crow[j] = v;
  }
}

template <class T>
inline void axpy1(T* __restrict crow, std::size_t j0, std::size_t j1, T a, const T* __restrict b) {
  for (std::size_t j = j0; j < j1; ++j) crow[j] += a * b[j];
}

}  // namespace detail

/// C[M,N] += A[M,K] * B[K,N]
template <class T>
void nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t j0 = 0; j0 < n; j0 += kColumnBlock) {
    const std::size_t j1 = std::min(n, j0 + kColumnBlock);
    std::size_t p = 0;
    for (; p + 4 <= k; p += 4) {
      const T* b0 = b + p * n;
      for (std::size_t i = 0; i < m; ++i) {
        const T* ar = a + i * k + p;
        if (ar[0] == T(0) && ar[1] == T(0) && ar[2] == T(0) && ar[3] == T(0)) continue;
        detail::axpy4(c + i * n, j0, j1, ar[0], ar[1], ar[2], ar[3], b0, b0 + n, b0 + 2 * n, b0 + 3 * n);
      }
    }
    for (; p < k; ++p)
      for (std::size_t i = 0; i < m; ++i) {
        const T av = a[i * k + p];
        if (av != T(0)) detail::axpy1(c + i * n, j0, j1, av, b + p * n);
      }
  }
}

/// C[M,N] += A^T * B with A stored [K,M] and B stored [K,N].
template <class T>
void tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t j0 = 0; j0 < n; j0 += kColumnBlock) {
    const std::size_t j1 = std::min(n, j0 + kColumnBlock);
    for (std::size_t i = 0; i < m; ++i) {
      T* crow = c + i * n;
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        const T a0 = a[p * m + i], a1 = a[(p + 1) * m + i], a2 = a[(p + 2) * m + i], a3 = a[(p + 3) * m + i];
        if (a0 == T(0) && a1 == T(0) && a2 == T(0) && a3 == T(0)) continue;
        const T* b0 = b + p * n;
        detail::axpy4(crow, j0, j1, a0, a1, a2, a3, b0, b0 + n, b0 + 2 * n, b0 + 3 * n);
      }
      for (; p < k; ++p) {
        const T av = a[p * m + i];
        if (av != T(0)) detail::axpy1(crow, j0, j1, av, b + p * n);
      }
    }
  }
}

/// Dot product with eight interleaved partial sums combined in a fixed order.
template <class T>
T dot(const T* x, const T* y, std::size_t len) {
  T s[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= len; i += 8)
    for (std::size_t l = 0; l < 8; ++l) s[l] += x[i + l] * y[i + l];
  for (std::size_t l = 0; i + l < len; ++l) s[l] += x[i + l] * y[i + l];
  return ((s[0] + s[1]) + (s[2] + s[3])) + ((s[4] + s[5]) + (s[6] + s[7]));
}

namespace detail {

// Four dots against one shared y, each with the same lane pattern as dot().
template <class T>
inline void dot4(const T* x0, const T* x1, const T* x2, const T* x3, const T* y, std::size_t len, T* out) {
  typedef T V __attribute__((vector_size(8 * sizeof(T))));
  V s0{}, s1{}, s2{}, s3{};
  std::size_t i = 0;
  V yv, xv;
  for (; i + 8 <= len; i += 8) {
    __builtin_memcpy(&yv, y + i, sizeof(V));
    __builtin_memcpy(&xv, x0 + i, sizeof(V));
    s0 += xv * yv;
    __builtin_memcpy(&xv, x1 + i, sizeof(V));
    s1 += xv * yv;
    __builtin_memcpy(&xv, x2 + i, sizeof(V));
    s2 += xv * yv;
    __builtin_memcpy(&xv, x3 + i, sizeof(V));
    s3 += xv * yv;
  }
  for (std::size_t l = 0; i + l < len; ++l) {
    const T yv = y[i + l];
    s0[l] += x0[i + l] * yv;
    s1[l] += x1[i + l] * yv;
    s2[l] += x2[i + l] * yv;
    s3[l] += x3[i + l] * yv;
  }
  auto fold = [](const V& s) { return ((s[0] + s[1]) + (s[2] + s[3])) + ((s[4] + s[5]) + (s[6] + s[7])); };
  out[0] = fold(s0);
  out[1] = fold(s1);
  out[2] = fold(s2);
  out[3] = fold(s3);
}

}  // namespace detail

/// C[M,N] += A * B^T with A stored [M,K] and B stored [N,K].
template <class T>
void nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t j = 0; j < n; ++j) {
    const T* brow = b + j * k;
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
      T r[4];
      detail::dot4(a + i * k, a + (i + 1) * k, a + (i + 2) * k, a + (i + 3) * k, brow, k, r);
      for (std::size_t q = 0; q < 4; ++q) c[(i + q) * n + j] += r[q];
    }
    for (; i < m; ++i) c[i * n + j] += dot(a + i * k, brow, k);
  }
}

}  // namespace trajscope::nn::gemm

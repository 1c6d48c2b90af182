#pragma once

#include <cstddef>

// Plain loop GEMM kernels. Every output element is accumulated over the
// inner index in ascending order regardless of the row count, so a row's
// result does not depend on which batch it was computed in.

namespace ssdrl::kernels {

// c[m×n] += a[m×k] · b[k×n]
template <typename T>
inline void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a,
                    const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t l = 0; l < k; ++l) {
      const T av = arow[l];
      const T* brow = b + l * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m×n] += a[m×k] · b[n×k]ᵀ
template <typename T>
inline void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a,
                    const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = 0;
      for (std::size_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
      crow[j] += acc;
    }
  }
}

// c[k×n] += a[m×k]ᵀ · b[m×n]
template <typename T>
inline void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a,
                    const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* brow = b + i * n;
    for (std::size_t l = 0; l < k; ++l) {
      const T av = arow[l];
      T* crow = c + l * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace ssdrl::kernels

#pragma once

#include <cstddef>

namespace robustaug::kernels {

// Row-major dense kernels. Each output element accumulates its inner
// products in ascending k, independent of how many rows the call covers,
// so results for one example never depend on its batch companions.

// C[M,N] (+)= A[M,K] * B[K,N]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
             bool accumulate);

// C[M,N] (+)= A[K,M]^T * B[K,N]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
             bool accumulate);

// out[cols,rows] = in[rows,cols]^T
void transpose(std::size_t rows, std::size_t cols, const double* in, double* out);

}  // namespace robustaug::kernels

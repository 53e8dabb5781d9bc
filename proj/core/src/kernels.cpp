#include "robustaug/kernels.hpp"

#include <algorithm>

namespace robustaug::kernels {

namespace {

// Column tile held in registers while the k loop runs. Every output element
// still sums its products in ascending k.
constexpr std::size_t kTile = 32;

template <std::size_t W>
inline void row_tile(std::size_t k, const double* arow, std::size_t a_stride, const double* b, std::size_t n,
                     double* crow) {
  double acc[W];
  for (std::size_t j = 0; j < W; ++j) acc[j] = crow[j];
  for (std::size_t p = 0; p < k; ++p) {
    const double av = arow[p * a_stride];
    const double* __restrict brow = b + p * n;
    for (std::size_t j = 0; j < W; ++j) acc[j] += av * brow[j];
  }
  for (std::size_t j = 0; j < W; ++j) crow[j] = acc[j];
}

inline void row_rest(std::size_t k, const double* arow, std::size_t a_stride, const double* b, std::size_t n,
                     double* crow, std::size_t width) {
  for (std::size_t p = 0; p < k; ++p) {
    const double av = arow[p * a_stride];
    const double* __restrict brow = b + p * n;
    for (std::size_t j = 0; j < width; ++j) crow[j] += av * brow[j];
  }
}

// C[i, :] += sum_p A(i, p) B[p, :], with A(i, p) = a[i * a_row + p * a_col].
void gemm_strided(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t a_row, std::size_t a_col,
                  const double* b, double* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * a_row;
    double* crow = c + i * n;
    std::size_t j = 0;
    for (; j + kTile <= n; j += kTile) row_tile<kTile>(k, arow, a_col, b + j, n, crow + j);
    if (j + 16 <= n) {
      row_tile<16>(k, arow, a_col, b + j, n, crow + j);
      j += 16;
    }
    if (j + 8 <= n) {
      row_tile<8>(k, arow, a_col, b + j, n, crow + j);
      j += 8;
    }
    if (j < n) row_rest(k, arow, a_col, b + j, n, crow + j, n - j);
  }
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
             bool accumulate) {
  gemm_strided(m, n, k, a, k, 1, b, c, accumulate);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
             bool accumulate) {
  gemm_strided(m, n, k, a, 1, m, b, c, accumulate);
}

void transpose(std::size_t rows, std::size_t cols, const double* in, double* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = in[r * cols + c];
  }
}

}  // namespace robustaug::kernels

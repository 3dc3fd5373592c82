#pragma once

#include <cstddef>
#include <span>

// Dense kernels behind every layer. The functions in vfm::kernels run with
// OpenMP over independent output rows; vfm::kernels::serial holds the plain
// loop reference used by the equivalence tests and the benchmark. Every
// output element is accumulated in a fixed order, so results do not depend
// on the thread count.
namespace vfm::kernels {

// c[m x n] (+)= a[m x k] * b[k x n]
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
// c[m x n] (+)= a[k x m]^T * b[k x n]
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
// c[m x n] (+)= a[m x k] * b[n x k]^T
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);

// out = softmax(scale * in) along each row.
void softmax_rows(std::span<const double> in, std::span<double> out, std::size_t rows,
                  std::size_t cols, double scale = 1.0);
// dx = scale * p * (dp - <dp, p>) along each row.
void softmax_rows_backward(std::span<const double> p, std::span<const double> dp,
                           std::span<double> dx, std::size_t rows, std::size_t cols,
                           double scale = 1.0);

// y = gamma * (x - mean) * rstd + beta per row; mean/rstd are written out per row.
void layernorm_rows(std::span<const double> x, std::span<const double> gamma,
                    std::span<const double> beta, std::span<double> y, std::span<double> mean,
                    std::span<double> rstd, std::size_t rows, std::size_t cols, double eps);

// Exact (erf) GELU and its derivative applied elementwise.
void gelu(std::span<const double> x, std::span<double> y);
void gelu_backward(std::span<const double> x, std::span<const double> dy, std::span<double> dx);

namespace serial {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void softmax_rows(std::span<const double> in, std::span<double> out, std::size_t rows,
                  std::size_t cols, double scale = 1.0);
void softmax_rows_backward(std::span<const double> p, std::span<const double> dp,
                           std::span<double> dx, std::size_t rows, std::size_t cols,
                           double scale = 1.0);
void layernorm_rows(std::span<const double> x, std::span<const double> gamma,
                    std::span<const double> beta, std::span<double> y, std::span<double> mean,
                    std::span<double> rstd, std::size_t rows, std::size_t cols, double eps);
void gelu(std::span<const double> x, std::span<double> y);
void gelu_backward(std::span<const double> x, std::span<const double> dy, std::span<double> dx);

}  // namespace serial
}  // namespace vfm::kernels

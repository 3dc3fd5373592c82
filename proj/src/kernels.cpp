#include "vfm/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace vfm::kernels {
namespace {

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelWork = 1 << 15;

}  // namespace

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const long long rows = static_cast<long long>(m);
#pragma omp parallel if (m * k * n > kParallelWork)
  {
    std::vector<double> acc(n);
#pragma omp for schedule(static)
    for (long long ii = 0; ii < rows; ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      std::fill(acc.begin(), acc.end(), 0.0);
      const double* ar = a.data() + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = ar[p];
        const double* br = b.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) acc[j] += av * br[j];
      }
      double* cr = c.data() + i * n;
      if (accumulate) {
        for (std::size_t j = 0; j < n; ++j) cr[j] += acc[j];
      } else {
        std::copy(acc.begin(), acc.end(), cr);
      }
    }
  }
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const long long rows = static_cast<long long>(m);
#pragma omp parallel if (m * k * n > kParallelWork)
  {
    std::vector<double> acc(n);
#pragma omp for schedule(static)
    for (long long ii = 0; ii < rows; ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t p = 0; p < k; ++p) {
        const double av = a[p * m + i];
        const double* br = b.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) acc[j] += av * br[j];
      }
      double* cr = c.data() + i * n;
      if (accumulate) {
        for (std::size_t j = 0; j < n; ++j) cr[j] += acc[j];
      } else {
        std::copy(acc.begin(), acc.end(), cr);
      }
    }
  }
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const long long rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (long long ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const double* ar = a.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* br = b.data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ar[p] * br[p];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

void softmax_rows(std::span<const double> in, std::span<double> out, std::size_t rows,
                  std::size_t cols, double scale) {
  const long long nrows = static_cast<long long>(rows);
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (long long rr = 0; rr < nrows; ++rr) {
    const auto r = static_cast<std::size_t>(rr);
    const double* x = in.data() + r * cols;
    double* y = out.data() + r * cols;
    double mx = -INFINITY;
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, scale * x[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      y[c] = std::exp(scale * x[c] - mx);
      z += y[c];
    }
    const double inv = 1.0 / z;
    for (std::size_t c = 0; c < cols; ++c) y[c] *= inv;
  }
}

void softmax_rows_backward(std::span<const double> p, std::span<const double> dp,
                           std::span<double> dx, std::size_t rows, std::size_t cols,
                           double scale) {
  const long long nrows = static_cast<long long>(rows);
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (long long rr = 0; rr < nrows; ++rr) {
    const auto r = static_cast<std::size_t>(rr);
    const double* pr = p.data() + r * cols;
    const double* gr = dp.data() + r * cols;
    double dot = 0.0;
    for (std::size_t c = 0; c < cols; ++c) dot += pr[c] * gr[c];
    double* out = dx.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) out[c] = scale * pr[c] * (gr[c] - dot);
  }
}

void layernorm_rows(std::span<const double> x, std::span<const double> gamma,
                    std::span<const double> beta, std::span<double> y, std::span<double> mean,
                    std::span<double> rstd, std::size_t rows, std::size_t cols, double eps) {
  const long long nrows = static_cast<long long>(rows);
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (long long rr = 0; rr < nrows; ++rr) {
    const auto r = static_cast<std::size_t>(rr);
    const double* xr = x.data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += xr[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(cols);
    const double rs = 1.0 / std::sqrt(var + eps);
    mean[r] = mu;
    rstd[r] = rs;
    double* yr = y.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) yr[c] = gamma[c] * (xr[c] - mu) * rs + beta[c];
  }
}

void gelu(std::span<const double> x, std::span<double> y) {
  const long long n = static_cast<long long>(x.size());
#pragma omp parallel for schedule(static) if (x.size() > kParallelWork)
  for (long long i = 0; i < n; ++i) {
    y[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * std::numbers::sqrt2 / 2.0));
  }
}

void gelu_backward(std::span<const double> x, std::span<const double> dy, std::span<double> dx) {
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  const long long n = static_cast<long long>(x.size());
#pragma omp parallel for schedule(static) if (x.size() > kParallelWork)
  for (long long i = 0; i < n; ++i) {
    const double cdf = 0.5 * (1.0 + std::erf(x[i] * std::numbers::sqrt2 / 2.0));
    const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x[i] * x[i]);
    dx[i] = dy[i] * (cdf + x[i] * pdf);
  }
}

}  // namespace vfm::kernels

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include <omp.h>

#include "vfm/kernels.hpp"
#include "vfm/rng.hpp"

using namespace vfm;
namespace k = vfm::kernels;

namespace {

std::vector<double> randv(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

// Naive triple loop, independent of both kernel implementations.
std::vector<double> oracle_matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                  std::size_t kk, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      long double s = 0;
      for (std::size_t p = 0; p < kk; ++p) s += static_cast<long double>(a[i * kk + p]) * b[p * n + j];
      c[i * n + j] = static_cast<double>(s);
    }
  return c;
}

std::vector<double> transpose(const std::vector<double>& a, std::size_t r, std::size_t c) {
  std::vector<double> t(a.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) t[j * r + i] = a[i * c + j];
  return t;
}

void check_close(const std::vector<double>& x, const std::vector<double>& y, double tol) {
  REQUIRE(x.size() == y.size());
  double worst = 0;
  for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(x[i] - y[i]));
  CHECK(worst <= tol);
}

struct Threads {
  explicit Threads(int n) : saved(omp_get_max_threads()) { omp_set_num_threads(n); }
  ~Threads() { omp_set_num_threads(saved); }
  int saved;
};

}  // namespace

TEST_CASE("matmul variants agree with the oracle and serial bitwise") {
  const std::size_t m = 37, kk = 23, n = 29;
  const auto a = randv(m * kk, 1), b = randv(kk * n, 2);
  const auto want = oracle_matmul(a, b, m, kk, n);
  std::vector<double> c(m * n), cs(m * n);
  k::matmul(a, b, c, m, kk, n);
  k::serial::matmul(a, b, cs, m, kk, n);
  check_close(c, want, 1e-12);
  CHECK(c == cs);

  const auto at = transpose(a, m, kk);
  k::matmul_tn(at, b, c, m, kk, n);
  k::serial::matmul_tn(at, b, cs, m, kk, n);
  check_close(c, want, 1e-12);
  CHECK(c == cs);

  const auto bt = transpose(b, kk, n);
  k::matmul_nt(a, bt, c, m, kk, n);
  k::serial::matmul_nt(a, bt, cs, m, kk, n);
  check_close(c, want, 1e-12);
  CHECK(c == cs);

  // accumulate adds onto the existing contents
  std::vector<double> acc(m * n, 1.0);
  k::matmul(a, b, acc, m, kk, n, true);
  for (std::size_t i = 0; i < acc.size(); ++i) CHECK(acc[i] == doctest::Approx(want[i] + 1.0).epsilon(1e-12));
}

TEST_CASE("row kernels agree with serial") {
  const std::size_t r = 31, c = 17;
  const auto x = randv(r * c, 3), dy = randv(r * c, 4), g = randv(c, 5), bta = randv(c, 6);
  std::vector<double> p(r * c), ps(r * c), dx(r * c), dxs(r * c);
  k::softmax_rows(x, p, r, c, 0.7);
  k::serial::softmax_rows(x, ps, r, c, 0.7);
  // the parallel kernel multiplies by 1/z instead of dividing
  check_close(p, ps, 1e-15);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < c; ++j) s += p[i * c + j];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  k::softmax_rows_backward(p, dy, dx, r, c, 0.7);
  k::serial::softmax_rows_backward(p, dy, dxs, r, c, 0.7);
  CHECK(dx == dxs);

  std::vector<double> y(r * c), ys(r * c), mu(r), mus(r), rs(r), rss(r);
  k::layernorm_rows(x, g, bta, y, mu, rs, r, c, 1e-6);
  k::serial::layernorm_rows(x, g, bta, ys, mus, rss, r, c, 1e-6);
  CHECK(y == ys);
  CHECK(mu == mus);
  CHECK(rs == rss);

  k::gelu(x, y);
  k::serial::gelu(x, ys);
  CHECK(y == ys);
  CHECK(y[0] == doctest::Approx(0.5 * x[0] * (1 + std::erf(x[0] / std::sqrt(2.0)))).epsilon(1e-14));
  k::gelu_backward(x, dy, dx);
  k::serial::gelu_backward(x, dy, dxs);
  CHECK(dx == dxs);
}

TEST_CASE("results do not depend on the thread count") {
  const std::size_t m = 64, kk = 48, n = 40;
  const auto a = randv(m * kk, 7), b = randv(kk * n, 8);
  std::vector<double> c1(m * n), c4(m * n);
  {
    Threads t(1);
    k::matmul(a, b, c1, m, kk, n);
  }
  {
    Threads t(4);
    k::matmul(a, b, c4, m, kk, n);
  }
  CHECK(c1 == c4);
}

#include "vfm/nn.hpp"

#include <cmath>

#include "vfm/digest.hpp"
#include "vfm/error.hpp"
#include "vfm/kernels.hpp"

namespace vfm::nn {

void zero_grads(const ParamRefs& params) {
  for (Param* p : params) p->zero_grad();
}

ConstParamRefs as_const(const ParamRefs& params) { return {params.begin(), params.end()}; }

std::string params_digest(const ConstParamRefs& params) {
  Sha256 h;
  for (const Param* p : params) {
    h.update(p->name).update(shape_string(p->value.shape())).update(p->value.values());
  }
  return h.hex();
}

Linear::Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng, double gain)
    : weight(name + ".weight", Tensor(in, out)), bias(name + ".bias", Tensor(1, out)) {
  const double std = gain / std::sqrt(static_cast<double>(in));
  for (double& w : weight.value.values()) w = rng.normal(0.0, std);
}

Tensor Linear::forward(const Tensor& x) const {
  if (x.cols() != in_dim()) {
    throw Error(Errc::DimMismatch, weight.name + " expects width " + std::to_string(in_dim()) +
                                       ", got " + std::to_string(x.cols()));
  }
  const std::size_t m = x.rows(), n = out_dim();
  Tensor y(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy(bias.value.data(), bias.value.data() + n, y.data() + i * n);
  }
  kernels::matmul(x.values(), weight.value.values(), y.values(), m, in_dim(), n, true);
  return y;
}

void Linear::backward_params(const Tensor& x, const Tensor& dy) {
  const std::size_t m = x.rows(), n = out_dim();
  kernels::matmul_tn(x.values(), dy.values(), weight.grad.values(), in_dim(), m, n, true);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) bias.grad[j] += dy(i, j);
  }
}

Tensor Linear::backward(const Tensor& x, const Tensor& dy) {
  backward_params(x, dy);
  Tensor dx(x.rows(), in_dim());
  kernels::matmul_nt(dy.values(), weight.value.values(), dx.values(), x.rows(), out_dim(),
                     in_dim());
  return dx;
}

LayerNorm::LayerNorm(const std::string& name, std::size_t dim)
    : gamma(name + ".gamma", Tensor(1, dim, 1.0)), beta(name + ".beta", Tensor(1, dim)) {}

Tensor LayerNorm::forward(const Tensor& x, LayerNormCache* cache) const {
  const std::size_t rows = x.rows(), cols = x.cols();
  if (cols != gamma.value.cols()) {
    throw Error(Errc::DimMismatch, gamma.name + " width mismatch");
  }
  Tensor y(rows, cols);
  std::vector<double> mean(rows), rstd(rows);
  kernels::layernorm_rows(x.values(), gamma.value.values(), beta.value.values(), y.values(), mean,
                          rstd, rows, cols, eps);
  if (cache) {
    cache->normalized = Tensor(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) cache->normalized(r, c) = (x(r, c) - mean[r]) * rstd[r];
    }
    cache->rstd = std::move(rstd);
  }
  return y;
}

Tensor LayerNorm::backward(const LayerNormCache& cache, const Tensor& dy) {
  const std::size_t rows = dy.rows(), cols = dy.cols();
  const Tensor& xh = cache.normalized;
  Tensor dx(rows, cols);
  std::vector<double> g(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      gamma.grad[c] += dy(r, c) * xh(r, c);
      beta.grad[c] += dy(r, c);
      g[c] = dy(r, c) * gamma.value[c];
      sum_g += g[c];
      sum_gx += g[c] * xh(r, c);
    }
    const double inv_n = 1.0 / static_cast<double>(cols);
    for (std::size_t c = 0; c < cols; ++c) {
      dx(r, c) = cache.rstd[r] * (g[c] - inv_n * sum_g - xh(r, c) * inv_n * sum_gx);
    }
  }
  return dx;
}

Tensor gelu(const Tensor& x) {
  Tensor y(x.shape());
  kernels::gelu(x.values(), y.values());
  return y;
}

Tensor gelu_backward(const Tensor& x, const Tensor& dy) {
  Tensor dx(x.shape());
  kernels::gelu_backward(x.values(), dy.values(), dx.values());
  return dx;
}

Tensor softmax_rows(const Tensor& logits, double scale) {
  Tensor p(logits.shape());
  kernels::softmax_rows(logits.values(), p.values(), logits.rows(), logits.cols(), scale);
  return p;
}

Tensor log_softmax_rows(const Tensor& logits, double scale) {
  Tensor out(logits.shape());
  const std::size_t rows = logits.rows(), cols = logits.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -INFINITY;
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, scale * logits(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(scale * logits(r, c) - mx);
    const double lz = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = scale * logits(r, c) - lz;
  }
  return out;
}

Adam::Adam(ParamRefs params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const Param* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void Adam::step() {
  ++t_;
  double clip_scale = 1.0;
  if (cfg_.clip_norm > 0.0) {
    double sq = 0.0;
    for (const Param* p : params_) {
      for (double g : p->grad.values()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > cfg_.clip_norm) clip_scale = cfg_.clip_norm / norm;
  }
  const double bc1 = cfg_.beta1 > 0.0 ? 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_)) : 1.0;
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Param& p = *params_[i];
    auto w = p.value.values();
    auto g = p.grad.values();
    auto m = m_[i].values();
    auto v = v_[i].values();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j] * clip_scale;
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
      const double update = (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
      w[j] -= cfg_.lr * (update + cfg_.weight_decay * w[j]);
    }
  }
}

}  // namespace vfm::nn

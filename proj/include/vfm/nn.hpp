#pragma once

#include <string>
#include <vector>

#include "vfm/rng.hpp"
#include "vfm/tensor.hpp"

namespace vfm::nn {

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  Param() = default;
  Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { grad.fill(0.0); }
};

using ParamRefs = std::vector<Param*>;
using ConstParamRefs = std::vector<const Param*>;

void zero_grads(const ParamRefs& params);
// SHA-256 over names, shapes and raw values in list order.
std::string params_digest(const ConstParamRefs& params);
ConstParamRefs as_const(const ParamRefs& params);

// y = x W + b with W stored [in x out].
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng, double gain = 1.0);

  Tensor forward(const Tensor& x) const;
  // Accumulates weight/bias grads and returns dL/dx.
  Tensor backward(const Tensor& x, const Tensor& dy);
  // Weight/bias grads only; skips the input gradient.
  void backward_params(const Tensor& x, const Tensor& dy);

  std::size_t in_dim() const { return weight.value.rows(); }
  std::size_t out_dim() const { return weight.value.cols(); }
  void collect(ParamRefs& out) { out.push_back(&weight), out.push_back(&bias); }
  void collect(ConstParamRefs& out) const { out.push_back(&weight), out.push_back(&bias); }

  Param weight;
  Param bias;
};

struct LayerNormCache {
  Tensor normalized;  // (x - mean) * rstd
  std::vector<double> rstd;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(const std::string& name, std::size_t dim);

  Tensor forward(const Tensor& x, LayerNormCache* cache = nullptr) const;
  Tensor backward(const LayerNormCache& cache, const Tensor& dy);

  void collect(ParamRefs& out) { out.push_back(&gamma), out.push_back(&beta); }
  void collect(ConstParamRefs& out) const { out.push_back(&gamma), out.push_back(&beta); }

  Param gamma;
  Param beta;
  double eps = 1e-6;
};

Tensor gelu(const Tensor& x);
Tensor gelu_backward(const Tensor& x, const Tensor& dy);
Tensor softmax_rows(const Tensor& logits, double scale = 1.0);
Tensor log_softmax_rows(const Tensor& logits, double scale = 1.0);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double clip_norm = 0.0;  // 0 disables global-norm clipping
};

// Adam with bias correction. beta1 = 0 gives the momentum-free variant.
class Adam {
 public:
  Adam(ParamRefs params, AdamConfig cfg);
  void step();
  void zero_grad() { zero_grads(params_); }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  ParamRefs params_;
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  long long t_ = 0;
};

}  // namespace vfm::nn

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

#include <unistd.h>

#include "vfm/encoder.hpp"
#include "vfm/nn.hpp"
#include "vfm/rng.hpp"
#include "vfm/train.hpp"

namespace vfm::testing {

// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("vfm_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t checked = 0;
};

// Central finite differences against the analytic gradient left in
// Param::grad by `analytic` (which must zero and then fill the grads).
// Entries whose analytic and numeric magnitudes are both <= min_magnitude
// are skipped.
inline GradCheckReport grad_check(const nn::ParamRefs& params, const std::function<double()>& loss,
                                  const std::function<void()>& analytic, double h = 1e-3,
                                  double min_magnitude = 1e-6, std::size_t max_per_param = 0) {
  analytic();
  std::vector<Tensor> grads;
  for (const nn::Param* p : params) grads.push_back(p->grad);
  GradCheckReport rep;
  Rng pick(1234);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    nn::Param& p = *params[pi];
    std::vector<std::size_t> idx(p.value.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (max_per_param && idx.size() > max_per_param) {
      pick.shuffle(idx);
      idx.resize(max_per_param);
    }
    for (std::size_t i : idx) {
      const double orig = p.value[i];
      p.value[i] = orig + h;
      const double up = loss();
      p.value[i] = orig - h;
      const double down = loss();
      p.value[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double a = grads[pi][i];
      if (std::max(std::abs(a), std::abs(numeric)) <= min_magnitude) continue;
      const double rel = std::abs(a - numeric) / std::max(std::abs(a), std::abs(numeric));
      ++rep.checked;
      if (rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst_param = p.name + "[" + std::to_string(i) + "] a=" + std::to_string(a) +
                          " n=" + std::to_string(numeric);
      }
    }
  }
  return rep;
}

// Checks head and encoder gradients of one sample's task loss end to end.
inline GradCheckReport sample_grad_check(Encoder& enc, const nn::ParamRefs& head_params,
                                         const SampleLoss& sample_loss, const Image& image,
                                         double h) {
  const Tensor tokens = patchify(image, enc.config().patch_size);
  nn::ParamRefs all = enc.params();
  all.insert(all.end(), head_params.begin(), head_params.end());
  auto loss = [&] { return sample_loss(0, enc.forward(tokens), 1.0, nullptr); };
  auto analytic = [&] {
    nn::zero_grads(all);
    EncoderCache cache;
    const Tensor out = enc.forward(tokens, &cache);
    Tensor dout(out.shape());
    sample_loss(0, out, 1.0, &dout);
    enc.backward(cache, dout);
  };
  return grad_check(all, loss, analytic, h);
}

inline EncoderConfig tiny_encoder_config() {
  EncoderConfig c;
  c.embed_dim = 16;
  c.depth = 1;
  c.n_heads = 2;
  c.image_size = 8;
  c.patch_size = 4;
  return c;
}

inline Image random_image(int size, int channels, std::uint64_t seed) {
  Rng rng(seed);
  Image img(size, size, channels);
  for (double& v : img.pixels) v = rng.uniform();
  return img;
}

}  // namespace vfm::testing

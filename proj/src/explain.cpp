#include "vfm/explain.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "vfm/error.hpp"

namespace vfm {

using nlohmann::json;

AttentionMapSet head_attention(const Encoder& encoder, const Image& image, int layer,
                               MergeMode merge, bool renormalize, const std::string& image_id) {
  const EncoderConfig& c = encoder.config();
  const int L = layer < 0 ? c.depth - 1 : layer;
  const Tensor attn = encoder.attention_maps(image, L);
  const std::size_t H = static_cast<std::size_t>(c.n_heads);
  const std::size_t g = static_cast<std::size_t>(c.image_size / c.patch_size);
  const std::size_t N = g * g;
  AttentionMapSet out;
  out.per_head = Tensor({H, g, g}, 0.0);
  out.merged = Tensor(g, g, 0.0);
  out.renormalized = renormalize;
  out.merge = merge;
  out.checkpoint_digest = encoder.digest();
  out.image_id = image_id;
  out.layer = L;
  out.train_step = encoder.train_step();
  for (std::size_t h = 0; h < H; ++h) {
    double total = 0.0;
    for (std::size_t p = 0; p < N; ++p) total += attn.at3(h, 0, p + 1);
    const double scale = renormalize && total > 0.0 ? 1.0 / total : 1.0;
    for (std::size_t p = 0; p < N; ++p) out.per_head[h * N + p] = attn.at3(h, 0, p + 1) * scale;
  }
  for (std::size_t p = 0; p < N; ++p) {
    double v = merge == MergeMode::MEAN ? 0.0 : out.per_head[p];
    for (std::size_t h = 0; h < H; ++h) {
      const double x = out.per_head[h * N + p];
      v = merge == MergeMode::MEAN ? v + x / static_cast<double>(H) : std::max(v, x);
    }
    out.merged[p] = v;
  }
  return out;
}

AttentionMapSet head_attention(const std::filesystem::path& checkpoint, const Image& image, int layer,
                               MergeMode merge, const std::string& image_id) {
  const Encoder enc = Encoder::load(checkpoint);
  return head_attention(enc, image, layer, merge, true, image_id);
}

std::vector<AttentionMapSet> attention_evolution(const std::vector<std::filesystem::path>& series,
                                                 const Image& image, int layer, MergeMode merge,
                                                 const std::string& image_id) {
  if (series.size() < 2) throw Error(Errc::ConfigError, "attention evolution needs >= 2 checkpoints");
  std::vector<AttentionMapSet> out;
  for (const auto& path : series) {
    const Encoder enc = Encoder::load(path);
    if (!out.empty() && enc.train_step() <= out.back().train_step) {
      throw Error(Errc::UnorderedCheckpoints,
                  path.string() + " has train_step " + std::to_string(enc.train_step()) +
                      " after " + std::to_string(out.back().train_step));
    }
    out.push_back(head_attention(enc, image, layer, merge, true, image_id));
  }
  return out;
}

std::vector<bool> foreground_patches(const Mask& mask, int patch_size) {
  if (patch_size < 1 || mask.height % patch_size || mask.width % patch_size) {
    throw Error(Errc::IndivisibleImage, "mask size is not a multiple of the patch size");
  }
  const int gh = mask.height / patch_size, gw = mask.width / patch_size;
  std::vector<bool> fg(static_cast<std::size_t>(gh) * gw);
  for (int gy = 0; gy < gh; ++gy) {
    for (int gx = 0; gx < gw; ++gx) {
      int count = 0;
      for (int y = 0; y < patch_size; ++y) {
        for (int x = 0; x < patch_size; ++x) count += mask.at(gy * patch_size + y, gx * patch_size + x) > 0;
      }
      fg[static_cast<std::size_t>(gy) * gw + gx] = 2 * count > patch_size * patch_size;
    }
  }
  return fg;
}

double foreground_mass(const AttentionMapSet& maps, const std::vector<bool>& foreground) {
  if (foreground.size() != maps.merged.size()) {
    throw Error(Errc::ShapeMismatch, "foreground grid does not match the attention grid");
  }
  double m = 0.0;
  for (std::size_t i = 0; i < foreground.size(); ++i) {
    if (foreground[i]) m += maps.merged[i];
  }
  return m;
}

void write_evolution_csv(const std::filesystem::path& path,
                         const std::vector<AttentionMapSet>& evolution,
                         const std::vector<double>& mass) {
  if (mass.size() != evolution.size()) throw Error(Errc::CountMismatch, "evolution vs mass");
  std::ofstream out(path);
  if (!out) throw Error(Errc::UnwritablePath, path.string());
  out << "checkpoint_step,foreground_mass\n";
  char buf[64];
  for (std::size_t i = 0; i < evolution.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%lld,%.17g\n", evolution[i].train_step, mass[i]);
    out << buf;
  }
  if (!out) throw Error(Errc::UnwritablePath, path.string());
}

Tensor upsample_bilinear(const Tensor& map, int out_h, int out_w) {
  const int h = static_cast<int>(map.rows()), w = static_cast<int>(map.cols());
  Tensor out(static_cast<std::size_t>(out_h), static_cast<std::size_t>(out_w));
  for (int y = 0; y < out_h; ++y) {
    const double sy = std::clamp((y + 0.5) * h / out_h - 0.5, 0.0, h - 1.0);
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double sx = std::clamp((x + 0.5) * w / out_w - 0.5, 0.0, w - 1.0);
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - x0;
      out(y, x) = (1 - fy) * ((1 - fx) * map(y0, x0) + fx * map(y0, x1)) +
                  fy * ((1 - fx) * map(y1, x0) + fx * map(y1, x1));
    }
  }
  return out;
}

std::array<double, 3> hot_color(double h) {
  return {std::clamp(3 * h, 0.0, 1.0), std::clamp(3 * h - 1, 0.0, 1.0), std::clamp(3 * h - 2, 0.0, 1.0)};
}

Image render_overlay(const Image& image, const Tensor& map) {
  if (map.shape().size() != 2 || map.empty()) throw Error(Errc::ShapeMismatch, "overlay map must be 2-D");
  const Image gray = to_grayscale(image);
  Tensor heat = upsample_bilinear(map, image.height, image.width);
  const auto vals = heat.values();
  const double mx = *std::max_element(vals.begin(), vals.end());
  if (mx > 0.0) heat *= 1.0 / mx;
  Image out(image.height, image.width, 3);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const double h = std::clamp(heat(y, x), 0.0, 1.0);
      const auto col = hot_color(h);
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = (1 - 0.5 * h) * gray.at(y, x) + 0.5 * h * col[static_cast<std::size_t>(c)];
    }
  }
  return out;
}

void export_overlay(const Image& image, const Tensor& map, const std::filesystem::path& out) {
  write_png(out, render_overlay(image, map));
}

json attention_source_json(const AttentionMapSet& m) {
  return {{"checkpoint_digest", m.checkpoint_digest},
          {"image_id", m.image_id},
          {"layer", m.layer},
          {"train_step", m.train_step},
          {"merge", m.merge == MergeMode::MEAN ? "mean" : "max"},
          {"renormalized", m.renormalized}};
}

void export_attention_arrays(const AttentionMapSet& m, const std::filesystem::path& stem) {
  const auto bin = std::filesystem::path(stem.string() + ".f64");
  const auto side = std::filesystem::path(stem.string() + ".json");
  std::ofstream out(bin, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::UnwritablePath, bin.string());
  const auto ph = m.per_head.values();
  const auto mg = m.merged.values();
  out.write(reinterpret_cast<const char*>(ph.data()), static_cast<std::streamsize>(ph.size() * sizeof(double)));
  out.write(reinterpret_cast<const char*>(mg.data()), static_cast<std::streamsize>(mg.size() * sizeof(double)));
  if (!out) throw Error(Errc::UnwritablePath, bin.string());
  json j = {{"data", bin.filename().string()},
            {"dtype", "float64"},
            {"byte_order", "little"},
            {"arrays",
             {{{"name", "per_head"}, {"shape", m.per_head.shape()}, {"offset", 0}},
              {{"name", "merged"}, {"shape", m.merged.shape()}, {"offset", ph.size() * sizeof(double)}}}},
            {"source", attention_source_json(m)}};
  std::ofstream js(side);
  if (!js) throw Error(Errc::UnwritablePath, side.string());
  js << j.dump(2) << "\n";
}

}  // namespace vfm

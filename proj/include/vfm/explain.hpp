#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "vfm/encoder.hpp"
#include "vfm/image.hpp"

namespace vfm {

enum class MergeMode { MEAN, MAX };

struct AttentionMapSet {
  Tensor per_head;  // [heads x grid x grid], cls -> patch attention
  Tensor merged;    // [grid x grid]
  bool renormalized = true;
  MergeMode merge = MergeMode::MEAN;
  std::string checkpoint_digest;
  std::string image_id;
  int layer = 0;
  long long train_step = 0;

  int heads() const { return static_cast<int>(per_head.shape()[0]); }
  int grid() const { return static_cast<int>(per_head.shape()[1]); }
};

// layer < 0 selects the final block. Each head's cls row is restricted to the
// patch columns and, when `renormalize` is set, rescaled to sum to 1.
AttentionMapSet head_attention(const Encoder& encoder, const Image& image, int layer = -1,
                               MergeMode merge = MergeMode::MEAN, bool renormalize = true,
                               const std::string& image_id = "");
AttentionMapSet head_attention(const std::filesystem::path& checkpoint, const Image& image,
                               int layer = -1, MergeMode merge = MergeMode::MEAN,
                               const std::string& image_id = "");

// One entry per checkpoint; throws UnorderedCheckpoints unless train_step is
// strictly increasing along the series.
std::vector<AttentionMapSet> attention_evolution(const std::vector<std::filesystem::path>& series,
                                                 const Image& image, int layer = -1,
                                                 MergeMode merge = MergeMode::MEAN,
                                                 const std::string& image_id = "");

// A patch counts as foreground when more than half of its pixels are.
std::vector<bool> foreground_patches(const Mask& mask, int patch_size);
double foreground_mass(const AttentionMapSet& maps, const std::vector<bool>& foreground);

// Columns checkpoint_step,foreground_mass.
void write_evolution_csv(const std::filesystem::path& path,
                         const std::vector<AttentionMapSet>& evolution,
                         const std::vector<double>& foreground_mass);

// Bilinear, pixel-centre aligned, edges clamped.
Tensor upsample_bilinear(const Tensor& map, int out_h, int out_w);

// Heat colormap: r = 3h, g = 3h - 1, b = 3h - 2, each clamped to [0, 1].
std::array<double, 3> hot_color(double h);

// RGB overlay: the map is upsampled to the image size, divided by its max
// (an all-zero map stays zero) and blended per pixel as
//   out = (1 - 0.5 h) * gray + 0.5 h * hot(h).
Image render_overlay(const Image& image, const Tensor& map);
void export_overlay(const Image& image, const Tensor& map, const std::filesystem::path& out);

// Raw little-endian float64 block (per_head then merged) plus a JSON sidecar
// `<stem>.json` describing shapes, offsets and provenance.
void export_attention_arrays(const AttentionMapSet& maps, const std::filesystem::path& stem);

nlohmann::json attention_source_json(const AttentionMapSet& maps);

}  // namespace vfm

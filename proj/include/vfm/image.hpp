#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "vfm/tensor.hpp"

namespace vfm {

// Interleaved HWC raster with intensities in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<double> pixels;

  Image() = default;
  Image(int h, int w, int c = 1, double fill = 0.0)
      : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

  double& at(int y, int x, int c = 0) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  double at(int y, int x, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

// Single-channel 8-bit label raster (pixel value = class index).
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> labels;

  Mask() = default;
  Mask(int h, int w) : height(h), width(w), labels(static_cast<std::size_t>(h) * w, 0) {}
  std::uint8_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }

  friend bool operator==(const Mask&, const Mask&) = default;
};

// 8-bit lossless PNG, gray or RGB. Values are quantised with round-to-nearest.
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const Mask& mask);
Mask read_mask_png(const std::filesystem::path& path);
// Reads only the PNG header.
void png_dimensions(const std::filesystem::path& path, int& height, int& width);

// Bilinear resampling of an (y0, x0, h, w) window to out_h x out_w, using
// pixel-centre alignment.
Image crop_resize(const Image& src, double y0, double x0, double h, double w, int out_h, int out_w);

Image to_grayscale(const Image& image);

}  // namespace vfm

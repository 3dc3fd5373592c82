#include "vfm/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "vfm/error.hpp"

namespace vfm {
namespace {

std::uint8_t quantise(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void write_raw(const std::filesystem::path& path, int h, int w, int channels,
               const std::uint8_t* bytes) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, bytes, 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw Error(Errc::UnwritablePath, path.string() + " (" + msg + ")");
  }
}

std::vector<std::uint8_t> read_raw(const std::filesystem::path& path, int& h, int& w,
                                   int& channels, bool force_gray) {
  if (!std::filesystem::exists(path)) throw Error(Errc::MissingFile, path.string());
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw Error(Errc::SchemaViolation, path.string() + " is not a readable PNG: " + img.message);
  }
  const bool gray = force_gray || (img.format & PNG_FORMAT_FLAG_COLOR) == 0;
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw Error(Errc::SchemaViolation, path.string() + ": " + msg);
  }
  h = static_cast<int>(img.height);
  w = static_cast<int>(img.width);
  channels = gray ? 1 : 3;
  return buf;
}

}  // namespace

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw Error(Errc::ShapeMismatch, "PNG export supports 1 or 3 channels");
  }
  std::vector<std::uint8_t> bytes(image.pixels.size());
  std::transform(image.pixels.begin(), image.pixels.end(), bytes.begin(), quantise);
  write_raw(path, image.height, image.width, image.channels, bytes.data());
}

Image read_png(const std::filesystem::path& path) {
  int h = 0, w = 0, c = 0;
  auto bytes = read_raw(path, h, w, c, false);
  Image out(h, w, c);
  for (std::size_t i = 0; i < bytes.size(); ++i) out.pixels[i] = bytes[i] / 255.0;
  return out;
}

void write_mask_png(const std::filesystem::path& path, const Mask& mask) {
  write_raw(path, mask.height, mask.width, 1, mask.labels.data());
}

Mask read_mask_png(const std::filesystem::path& path) {
  int h = 0, w = 0, c = 0;
  auto bytes = read_raw(path, h, w, c, true);
  Mask out(h, w);
  out.labels = std::move(bytes);
  return out;
}

void png_dimensions(const std::filesystem::path& path, int& height, int& width) {
  if (!std::filesystem::exists(path)) throw Error(Errc::MissingFile, path.string());
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw Error(Errc::SchemaViolation, path.string() + " is not a readable PNG: " + img.message);
  }
  height = static_cast<int>(img.height);
  width = static_cast<int>(img.width);
  png_image_free(&img);
}

Image crop_resize(const Image& src, double y0, double x0, double h, double w, int out_h,
                  int out_w) {
  Image out(out_h, out_w, src.channels);
  const double sy = h / out_h;
  const double sx = w / out_w;
  for (int oy = 0; oy < out_h; ++oy) {
    const double fy = std::clamp(y0 + (oy + 0.5) * sy - 0.5, 0.0, src.height - 1.0);
    const int y_lo = static_cast<int>(std::floor(fy));
    const int y_hi = std::min(y_lo + 1, src.height - 1);
    const double ty = fy - y_lo;
    for (int ox = 0; ox < out_w; ++ox) {
      const double fx = std::clamp(x0 + (ox + 0.5) * sx - 0.5, 0.0, src.width - 1.0);
      const int x_lo = static_cast<int>(std::floor(fx));
      const int x_hi = std::min(x_lo + 1, src.width - 1);
      const double tx = fx - x_lo;
      for (int c = 0; c < src.channels; ++c) {
        const double top = src.at(y_lo, x_lo, c) * (1 - tx) + src.at(y_lo, x_hi, c) * tx;
        const double bot = src.at(y_hi, x_lo, c) * (1 - tx) + src.at(y_hi, x_hi, c) * tx;
        out.at(oy, ox, c) = top * (1 - ty) + bot * ty;
      }
    }
  }
  return out;
}

Image to_grayscale(const Image& image) {
  if (image.channels == 1) return image;
  Image out(image.height, image.width, 1);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      double s = 0;
      for (int c = 0; c < image.channels; ++c) s += image.at(y, x, c);
      out.at(y, x) = s / image.channels;
    }
  }
  return out;
}

}  // namespace vfm

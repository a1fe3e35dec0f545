#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace nplps {

// Row-major image container: index = (y * width + x) * channels + c.
template <typename T>
struct Image {
  int width = 0, height = 0, channels = 1;
  std::vector<T> data;

  Image() = default;
  Image(int w, int h, int c = 1, T fill = T{})
      : width(w), height(h), channels(c), data(static_cast<size_t>(w) * h * c, fill) {}

  T& at(int x, int y, int c = 0) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  const T& at(int x, int y, int c = 0) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  bool inside(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
  size_t pixel_count() const { return static_cast<size_t>(width) * height; }
};

using ImageF = Image<float>;
using ImageU8 = Image<std::uint8_t>;

// Grayscale PNG in [0, 1]; values are clamped and quantized to 16 bits.
void write_png_gray16(const std::string& path, const ImageF& img);
// 8-bit PNG, 1 or 3 channels.
void write_png8(const std::string& path, const ImageU8& img);

// Decodes 8- or 16-bit PNG to float [0, 1]; RGB collapses to grayscale with
// the fixed luminance weights (0.2989, 0.5870, 0.1140).
ImageF read_png_gray(const std::string& path);
ImageU8 read_png8(const std::string& path);

// Float map file: text header "f32map v1 <w> <h> <c> <frame>\n" followed by
// raw little-endian float32, row-major. frame tags the coordinate convention
// of the stored vectors (camera | world | none).
void write_f32map(const std::string& path, const ImageF& img, const std::string& frame);
ImageF read_f32map(const std::string& path, std::string* frame = nullptr);

// Binary morphology on 0/255 masks, 3x3 square element, n iterations.
ImageU8 erode(const ImageU8& mask, int n);
ImageU8 dilate(const ImageU8& mask, int n);
// Closing (dilate then erode); fills small holes, never removes foreground.
ImageU8 close_holes(const ImageU8& mask, int n);

constexpr double kLumaR = 0.2989, kLumaG = 0.5870, kLumaB = 0.1140;

}  // namespace nplps

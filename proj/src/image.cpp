#include "nplps/image.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace nplps {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void fail(const std::string& what, const std::string& path) {
  throw std::runtime_error(what + ": " + path);
}

}  // namespace

void write_png_gray16(const std::string& path, const ImageF& img) {
  if (img.channels != 1) throw std::invalid_argument("write_png_gray16: expected 1 channel");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) fail("write_png_gray16: cannot open", path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail("write_png_gray16: encode error", path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width, img.height, 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<std::uint16_t> row(img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double v = std::clamp(static_cast<double>(img.at(x, y)), 0.0, 1.0);
      row[x] = static_cast<std::uint16_t>(std::lround(v * 65535.0));
    }
    if constexpr (std::endian::native == std::endian::little)
      for (auto& r : row) r = static_cast<std::uint16_t>((r >> 8) | (r << 8));  // PNG is BE
    png_write_row(png, reinterpret_cast<png_bytep>(row.data()));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_png8(const std::string& path, const ImageU8& img) {
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("write_png8: expected 1 or 3 channels");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) fail("write_png8: cannot open", path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail("write_png8: encode error", path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width, img.height, 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(&img.data[static_cast<size_t>(y) * img.width *
                                                       img.channels]));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

namespace {

// Decodes any supported PNG into rows of uint16 with the original bit depth
// and channel count reported back.
void read_png_raw(const std::string& path, std::vector<std::uint16_t>& out, int& w, int& h,
                  int& channels, int& bit_depth) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) fail("read_png: cannot open", path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("read_png: decode error", path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_set_expand(png);  // palettes / low bit depths -> 8 bit
  if (png_get_color_type(png, info) & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  w = static_cast<int>(png_get_image_width(png, info));
  h = static_cast<int>(png_get_image_height(png, info));
  bit_depth = png_get_bit_depth(png, info);
  channels = png_get_channels(png, info);

  std::vector<std::uint8_t> rowbuf(png_get_rowbytes(png, info));
  out.resize(static_cast<size_t>(w) * h * channels);
  for (int y = 0; y < h; ++y) {
    png_read_row(png, rowbuf.data(), nullptr);
    if (bit_depth == 16) {
      for (int i = 0; i < w * channels; ++i)
        out[(static_cast<size_t>(y) * w * channels) + i] =
            static_cast<std::uint16_t>((rowbuf[2 * i] << 8) | rowbuf[2 * i + 1]);
    } else {
      for (int i = 0; i < w * channels; ++i)
        out[(static_cast<size_t>(y) * w * channels) + i] = rowbuf[i];
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
}

}  // namespace

ImageF read_png_gray(const std::string& path) {
  std::vector<std::uint16_t> raw;
  int w, h, channels, bit_depth;
  read_png_raw(path, raw, w, h, channels, bit_depth);
  const double scale = (bit_depth == 16) ? 1.0 / 65535.0 : 1.0 / 255.0;
  ImageF img(w, h, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::uint16_t* px = &raw[(static_cast<size_t>(y) * w + x) * channels];
      double v;
      if (channels >= 3)
        v = (kLumaR * px[0] + kLumaG * px[1] + kLumaB * px[2]) * scale;
      else
        v = px[0] * scale;
      img.at(x, y) = static_cast<float>(v);
    }
  return img;
}

ImageU8 read_png8(const std::string& path) {
  std::vector<std::uint16_t> raw;
  int w, h, channels, bit_depth;
  read_png_raw(path, raw, w, h, channels, bit_depth);
  ImageU8 img(w, h, channels);
  const int shift = (bit_depth == 16) ? 8 : 0;
  for (size_t i = 0; i < raw.size(); ++i)
    img.data[i] = static_cast<std::uint8_t>(raw[i] >> shift);
  return img;
}

void write_f32map(const std::string& path, const ImageF& img, const std::string& frame) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("write_f32map: cannot open", path);
  out << "f32map v1 " << img.width << " " << img.height << " " << img.channels << " " << frame
      << "\n";
  out.write(reinterpret_cast<const char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size() * sizeof(float)));
  if (!out) fail("write_f32map: write failed", path);
}

ImageF read_f32map(const std::string& path, std::string* frame) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("read_f32map: cannot open", path);
  std::string line;
  if (!std::getline(in, line)) fail("read_f32map: missing header", path);
  std::istringstream hs(line);
  std::string magic, version, fr;
  int w, h, c;
  if (!(hs >> magic >> version >> w >> h >> c >> fr) || magic != "f32map" || version != "v1")
    fail("read_f32map: bad header", path);
  ImageF img(w, h, c);
  in.read(reinterpret_cast<char*>(img.data.data()),
          static_cast<std::streamsize>(img.data.size() * sizeof(float)));
  if (!in) fail("read_f32map: truncated data", path);
  if (frame) *frame = fr;
  return img;
}

namespace {

ImageU8 morph(const ImageU8& mask, int n, bool erode_op) {
  ImageU8 cur = mask;
  ImageU8 next(mask.width, mask.height, 1);
  for (int iter = 0; iter < n; ++iter) {
    for (int y = 0; y < cur.height; ++y)
      for (int x = 0; x < cur.width; ++x) {
        bool hit = erode_op;
        for (int dy = -1; dy <= 1 && hit == erode_op; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            int xx = x + dx, yy = y + dy;
            // Outside the frame counts as background.
            bool fg = cur.inside(xx, yy) && cur.at(xx, yy) > 0;
            if (erode_op && !fg) {
              hit = false;
              break;
            }
            if (!erode_op && fg) {
              hit = true;
              break;
            }
          }
        next.at(x, y) = hit ? 255 : 0;
      }
    std::swap(cur, next);
  }
  return cur;
}

}  // namespace

ImageU8 erode(const ImageU8& mask, int n) { return morph(mask, n, true); }
ImageU8 dilate(const ImageU8& mask, int n) { return morph(mask, n, false); }

ImageU8 close_holes(const ImageU8& mask, int n) { return erode(dilate(mask, n), n); }

}  // namespace nplps

#include "car/image_io.hpp"

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <vector>

namespace car {

namespace {

struct FileCloser {
  std::FILE* fp = nullptr;
  ~FileCloser() {
    if (fp) std::fclose(fp);
  }
};

unsigned char to_byte(double v) {
  if (v < 0.0) v = 0.0;
  if (v > 1.0) v = 1.0;
  long b = std::lround(v * 255.0);
  if (b < 0) b = 0;
  if (b > 255) b = 255;
  return static_cast<unsigned char>(b);
}

}  // namespace

Image load_png(const std::string& path, bool strip_alpha) {
  FileCloser file;
  file.fp = std::fopen(path.c_str(), "rb");
  if (!file.fp) fail("load_png: cannot open '" + path + "'");

  unsigned char sig[8];
  if (std::fread(sig, 1, 8, file.fp) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    fail("load_png: '" + path + "' is not a PNG file");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("load_png: out of memory");
  }

  std::vector<unsigned char> bytes;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("load_png: failed to decode '" + path + "'");
  }

  png_init_io(png, file.fp);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);

  if (depth != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("load_png: '" + path + "' has unsupported bit depth " + std::to_string(depth) +
         " (only 8-bit is supported)");
  }

  std::size_t channels = 0;
  switch (color) {
    case PNG_COLOR_TYPE_GRAY:
      channels = 1;
      break;
    case PNG_COLOR_TYPE_RGB:
      channels = 3;
      break;
    case PNG_COLOR_TYPE_GRAY_ALPHA:
    case PNG_COLOR_TYPE_RGB_ALPHA:
      if (!strip_alpha) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail("load_png: '" + path + "' has an alpha channel (pass strip_alpha to drop it)");
      }
      png_set_strip_alpha(png);
      channels = color == PNG_COLOR_TYPE_GRAY_ALPHA ? 1 : 3;
      break;
    default:
      png_destroy_read_struct(&png, &info, nullptr);
      fail("load_png: '" + path + "' has unsupported color type " + std::to_string(color) +
           " (only 8-bit grayscale and RGB are supported)");
  }

  png_set_interlace_handling(png);
  png_read_update_info(png, info);

  const std::size_t rowbytes = png_get_rowbytes(png, info);
  bytes.assign(rowbytes * h, 0);
  rows.resize(h);
  for (png_uint_32 r = 0; r < h; ++r) rows[r] = bytes.data() + r * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Tensor t({h, w, channels});
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      for (std::size_t ch = 0; ch < channels; ++ch)
        t.at(r, c, ch) = bytes[r * rowbytes + c * channels + ch] / 255.0;
  return Image(std::move(t), channels == 1 ? ColorSpace::Y : ColorSpace::RGB);
}

void save_png(const Image& img, const std::string& path) {
  const std::size_t h = img.height(), w = img.width(), channels = img.channels();
  const std::string tmp = path + ".tmp";

  std::vector<unsigned char> bytes(h * w * channels);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      for (std::size_t ch = 0; ch < channels; ++ch)
        bytes[(r * w + c) * channels + ch] = to_byte(img.at(r, c, ch));

  {
    FileCloser file;
    file.fp = std::fopen(tmp.c_str(), "wb");
    if (!file.fp) fail("save_png: cannot open '" + tmp + "' for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
      png_destroy_write_struct(&png, &info);
      fail("save_png: out of memory");
    }

    std::vector<png_bytep> rows(h);
    for (std::size_t r = 0; r < h; ++r) rows[r] = bytes.data() + r * w * channels;

    if (setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      std::filesystem::remove(tmp);
      fail("save_png: failed to encode '" + path + "'");
    }

    png_init_io(png, file.fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
  }

  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    fail("save_png: cannot rename temporary file onto '" + path + "': " + ec.message());
  }
}

}  // namespace car

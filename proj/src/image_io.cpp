#include "unicd/image_io.hpp"

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>

#include "unicd/error.hpp"

namespace unicd {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

// Reads into `img`; returns false on a libpng error. Kept free of objects
// with destructors between setjmp and the end of the function.
bool read_png_impl(FILE* fp, RawImage& img) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    return false;
  }
  std::vector<png_bytep>* rows = new std::vector<png_bytep>();
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    delete rows;
    return false;
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  img.palette = color == PNG_COLOR_TYPE_PALETTE;
  if (img.palette) {
    if (depth < 8) png_set_packing(png);
  } else {
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  }
  png_read_update_info(png, info);
  img.width = w;
  img.height = h;
  img.channels = png_get_channels(png, info);
  img.pixels.assign(static_cast<size_t>(w) * h * static_cast<size_t>(img.channels), 0);
  rows->resize(h);
  for (png_uint_32 y = 0; y < h; ++y) (*rows)[y] = img.pixels.data() + static_cast<size_t>(y) * w * img.channels;
  png_read_image(png, rows->data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  delete rows;
  return true;
}

bool write_png_impl(FILE* fp, const RawImage& img) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    return false;
  }
  std::vector<png_bytep>* rows = new std::vector<png_bytep>();
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    delete rows;
    return false;
  }
  png_init_io(png, fp);
  int color = PNG_COLOR_TYPE_GRAY;
  if (img.channels == 2) color = PNG_COLOR_TYPE_GRAY_ALPHA;
  if (img.channels == 3) color = PNG_COLOR_TYPE_RGB;
  if (img.channels == 4) color = PNG_COLOR_TYPE_RGB_ALPHA;
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8, color,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  rows->resize(static_cast<size_t>(img.height));
  for (int64_t y = 0; y < img.height; ++y)
    (*rows)[static_cast<size_t>(y)] =
        const_cast<png_bytep>(img.pixels.data() + static_cast<size_t>(y * img.width * img.channels));
  png_write_image(png, rows->data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  delete rows;
  return true;
}

uint8_t to_byte(double v) {
  const double c = std::min(1.0, std::max(0.0, v));
  return static_cast<uint8_t>(std::lround(c * 255.0));
}

}  // namespace

RawImage read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw Error(ErrorCode::kCorruptImage, path.string() + ": not a PNG");
  std::rewind(fp.get());
  RawImage img;
  if (!read_png_impl(fp.get(), img)) throw Error(ErrorCode::kCorruptImage, path.string() + ": decode failed");
  return img;
}

void write_png(const std::filesystem::path& path, const RawImage& img) {
  if (img.channels < 1 || img.channels > 4 ||
      img.pixels.size() != static_cast<size_t>(img.width * img.height * img.channels))
    throw Error(ErrorCode::kShapeMismatch, "write_png: inconsistent raster for " + path.string());
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  if (!write_png_impl(fp.get(), img)) throw Error(ErrorCode::kIoError, "encode failed for " + path.string());
}

Tensor png_to_tensor(const RawImage& img) {
  const int c = (img.channels == 2 || img.channels == 4) ? img.channels - 1 : img.channels;
  Tensor t({c, img.height, img.width});
  for (int k = 0; k < c; ++k)
    for (int64_t y = 0; y < img.height; ++y)
      for (int64_t x = 0; x < img.width; ++x) t[(k * img.height + y) * img.width + x] = img.at(y, x, k) / 255.0;
  return t;
}

Tensor png_to_plane(const RawImage& img) {
  Tensor t({img.height, img.width});
  for (int64_t y = 0; y < img.height; ++y)
    for (int64_t x = 0; x < img.width; ++x) t.at(y, x) = img.at(y, x, 0);
  return t;
}

RawImage tensor_to_png(const Tensor& chw) {
  RawImage img;
  img.channels = static_cast<int>(chw.dim(0));
  img.height = chw.dim(1);
  img.width = chw.dim(2);
  img.pixels.resize(static_cast<size_t>(chw.numel()));
  for (int k = 0; k < img.channels; ++k)
    for (int64_t y = 0; y < img.height; ++y)
      for (int64_t x = 0; x < img.width; ++x)
        img.pixels[static_cast<size_t>((y * img.width + x) * img.channels + k)] =
            to_byte(chw[(k * img.height + y) * img.width + x]);
  return img;
}

RawImage plane_to_png(const Tensor& hw) {
  RawImage img;
  img.channels = 1;
  img.height = hw.dim(0);
  img.width = hw.dim(1);
  img.pixels.resize(static_cast<size_t>(hw.numel()));
  for (int64_t i = 0; i < hw.numel(); ++i) img.pixels[static_cast<size_t>(i)] = to_byte(hw[i]);
  return img;
}

}  // namespace unicd

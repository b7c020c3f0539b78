#pragma once

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "ihn/common.hpp"
#include "ihn/tensor.hpp"

namespace ihn {

// 8-bit grayscale image, row-major.
struct ImageU8 {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> pixels;

  size_t size() const { return pixels.size(); }
};

// ------------------------------- PGM (P5) ---------------------------------

inline void write_pgm(const std::string& path, const ImageU8& img) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "P5\n" << img.width << " " << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw IoError("short write: " + path);
}

inline ImageU8 read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingFile("image not found: " + path);
  std::string magic;
  f >> magic;
  if (magic != "P5") throw IoError("not a P5 PGM: " + path);
  auto next_int = [&]() {
    // skip whitespace and '#' comments
    int c = f.get();
    while (c == '#' || std::isspace(c)) {
      if (c == '#')
        while (c != '\n' && c != EOF) c = f.get();
      c = f.get();
    }
    int v = 0;
    while (std::isdigit(c)) {
      v = v * 10 + (c - '0');
      c = f.get();
    }
    return v;
  };
  ImageU8 img;
  img.width = next_int();
  img.height = next_int();
  const int maxval = next_int();
  if (img.width <= 0 || img.height <= 0 || maxval != 255)
    throw IoError("unsupported PGM header: " + path);
  img.pixels.resize(static_cast<size_t>(img.width) * img.height);
  f.read(reinterpret_cast<char*>(img.pixels.data()),
         static_cast<std::streamsize>(img.pixels.size()));
  if (f.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw IoError("truncated PGM payload: " + path);
  return img;
}

// --------------------------------- PNG -------------------------------------

inline void write_png(const std::string& path, const ImageU8& img) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot open for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(fp);
    throw IoError("libpng write failure: " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y)
    rows[y] = const_cast<png_bytep>(img.pixels.data() + static_cast<size_t>(y) * img.width);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

// Reads any 8/16-bit gray/RGB/RGBA PNG and collapses it to 8-bit grayscale.
inline ImageU8 read_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw MissingFile("image not found: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    std::fclose(fp);
    throw IoError("libpng read failure: " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  if ((png_get_color_type(png, info) & PNG_COLOR_MASK_COLOR) != 0)
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  png_read_update_info(png, info);

  ImageU8 img;
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.pixels.resize(static_cast<size_t>(img.width) * img.height);
  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y)
    rows[y] = img.pixels.data() + static_cast<size_t>(y) * img.width;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

inline ImageU8 read_image(const std::string& path) {
  if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".png") == 0) return read_png(path);
  return read_pgm(path);
}

// ------------------------ tensor conversions --------------------------------

// Intensity convention: u8 byte b maps to b / 255 in [0, 1].
template <typename T>
TensorT<T> image_to_tensor(const ImageU8& img) {
  TensorT<T> t({1, img.height, img.width});
  for (size_t i = 0; i < img.pixels.size(); ++i)
    t.data()[i] = static_cast<T>(img.pixels[i]) / T(255);
  return t;
}

template <typename T>
ImageU8 tensor_to_image(const TensorT<T>& t) {
  if (t.ndim() != 3 || t.dim(0) != 1) throw ShapeMismatch("tensor_to_image: expects [1,H,W]");
  ImageU8 img;
  img.height = t.dim(1);
  img.width = t.dim(2);
  img.pixels.resize(t.numel());
  for (size_t i = 0; i < t.numel(); ++i) {
    double v = static_cast<double>(t.data()[i]);
    v = std::min(1.0, std::max(0.0, v));
    img.pixels[i] = static_cast<uint8_t>(std::lround(v * 255.0));
  }
  return img;
}

}  // namespace ihn

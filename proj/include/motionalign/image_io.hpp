#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include "motionalign/tensor.hpp"

// Binary PPM/PGM read/write. Values are float in [0,1] on the tensor side,
// 8-bit on disk.

namespace ma {

inline uint8_t to_byte(float x) {
  float v = x * 255.0f + 0.5f;
  if (v < 0.0f) v = 0.0f;
  if (v > 255.0f) v = 255.0f;
  return uint8_t(v);
}

// img [3,H,W] -> binary P6.
inline void write_ppm(const std::string& path, const Tensor<float>& img) {
  MA_CHECK(img.ndim() == 3 && img.dims[0] == 3, "write_ppm expects [3,H,W]");
  int h = img.dims[1], w = img.dims[2];
  std::ofstream f(path, std::ios::binary);
  MA_CHECK(f.good(), "cannot open for write: " << path);
  f << "P6\n" << w << " " << h << "\n255\n";
  std::vector<uint8_t> row(size_t(w) * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        row[size_t(x) * 3 + c] = to_byte(img[(int64_t(c) * h + y) * w + x]);
    f.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
  }
  MA_CHECK(f.good(), "write failed: " << path);
}

// img [H,W] -> binary P5.
inline void write_pgm(const std::string& path, const Tensor<float>& img) {
  MA_CHECK(img.ndim() == 2, "write_pgm expects [H,W]");
  int h = img.dims[0], w = img.dims[1];
  std::ofstream f(path, std::ios::binary);
  MA_CHECK(f.good(), "cannot open for write: " << path);
  f << "P5\n" << w << " " << h << "\n255\n";
  std::vector<uint8_t> row(size_t(w), 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) row[size_t(x)] = to_byte(img[int64_t(y) * w + x]);
    f.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
  }
  MA_CHECK(f.good(), "write failed: " << path);
}

namespace detail {
inline void skip_pnm_space(std::istream& f) {
  for (;;) {
    int c = f.peek();
    if (c == '#') {
      std::string line;
      std::getline(f, line);
    } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      f.get();
    } else {
      return;
    }
  }
}

inline int read_pnm_int(std::istream& f) {
  skip_pnm_space(f);
  int v = 0;
  f >> v;
  return v;
}
}  // namespace detail

// Reads P6 -> [3,H,W] in [0,1].
inline Tensor<float> read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  MA_CHECK(f.good(), "cannot open: " << path);
  std::string magic;
  f >> magic;
  MA_CHECK(magic == "P6", "not a binary PPM: " << path);
  int w = detail::read_pnm_int(f);
  int h = detail::read_pnm_int(f);
  int maxv = detail::read_pnm_int(f);
  MA_CHECK(w > 0 && h > 0 && maxv == 255, "unsupported PPM header: " << path);
  f.get();
  std::vector<uint8_t> raw(size_t(w) * h * 3);
  f.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
  MA_CHECK(f.gcount() == std::streamsize(raw.size()), "truncated PPM: " << path);
  Tensor<float> img = Tensor<float>::uninit({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img[(int64_t(c) * h + y) * w + x] = raw[(size_t(y) * w + x) * 3 + c] / 255.0f;
  return img;
}

// Reads P5 -> [H,W] in [0,1].
inline Tensor<float> read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  MA_CHECK(f.good(), "cannot open: " << path);
  std::string magic;
  f >> magic;
  MA_CHECK(magic == "P5", "not a binary PGM: " << path);
  int w = detail::read_pnm_int(f);
  int h = detail::read_pnm_int(f);
  int maxv = detail::read_pnm_int(f);
  MA_CHECK(w > 0 && h > 0 && maxv == 255, "unsupported PGM header: " << path);
  f.get();
  std::vector<uint8_t> raw(size_t(w) * h);
  f.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
  MA_CHECK(f.gcount() == std::streamsize(raw.size()), "truncated PGM: " << path);
  Tensor<float> img = Tensor<float>::uninit({h, w});
  for (int64_t i = 0; i < img.numel(); ++i) img[i] = raw[size_t(i)] / 255.0f;
  return img;
}

}  // namespace ma

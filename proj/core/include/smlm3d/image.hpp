#pragma once

#include <cstddef>
#include <vector>

#include "smlm3d/common.hpp"

namespace smlm3d {

// Row-major H x W buffer.
template <typename T>
struct Image {
  int h = 0;
  int w = 0;
  std::vector<T> data;

  Image() = default;
  Image(int h_, int w_, T fill = T{}) : h(h_), w(w_), data(static_cast<size_t>(h_) * w_, fill) {}

  T& at(int r, int c) { return data[static_cast<size_t>(r) * w + c]; }
  const T& at(int r, int c) const { return data[static_cast<size_t>(r) * w + c]; }
  size_t size() const { return data.size(); }
  bool same_shape(const Image& o) const { return h == o.h && w == o.w; }
};

// Row-major D x H x W buffer (depth-major).
template <typename T>
struct Volume {
  int d = 0;
  int h = 0;
  int w = 0;
  std::vector<T> data;

  Volume() = default;
  Volume(int d_, int h_, int w_, T fill = T{})
      : d(d_), h(h_), w(w_), data(static_cast<size_t>(d_) * h_ * w_, fill) {}

  T& at(int k, int r, int c) {
    return data[(static_cast<size_t>(k) * h + r) * w + c];
  }
  const T& at(int k, int r, int c) const {
    return data[(static_cast<size_t>(k) * h + r) * w + c];
  }
  size_t size() const { return data.size(); }
  size_t index(int k, int r, int c) const {
    return (static_cast<size_t>(k) * h + r) * w + c;
  }
  bool same_shape(const Volume& o) const { return d == o.d && h == o.h && w == o.w; }
};

// A camera frame: expected or sampled photon counts per pixel.
struct Frame {
  Image<double> pixels;
  double pixel_nm = 110.0;
  double background = 0.0;

  int h() const { return pixels.h; }
  int w() const { return pixels.w; }
};

}  // namespace smlm3d

#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "smlm3d/grid3d.hpp"
#include "smlm3d/image.hpp"

namespace smlm3d {

// Perceptually ordered 256-entry RGB table; the built-in ramp matches the
// fixture file shipped with the CLI byte for byte.
struct Colormap {
  std::array<std::array<uint8_t, 3>, 256> table{};

  static Colormap builtin();
  static Colormap from_csv(const std::string& path);
  void to_csv(const std::string& path) const;
};

struct AshConfig {
  double bin_nm = 20.0;
  int shifts = 4;
  double z_min_nm = -2000.0;  // colormap start
  double z_max_nm = 2000.0;   // colormap end
  double fov_x_nm = 0.0;      // 0: tight bounds from the data
  double fov_y_nm = 0.0;
};

struct RgbImage {
  int h = 0;
  int w = 0;
  std::vector<uint8_t> rgb;  // row-major, 3 bytes per pixel
};

// Average shifted histogram at bin/shifts pitch: the mean of shifts^2 offset
// 2D histograms, hue from the per-cell mean z through the colormap,
// intensity from counts. Refuses empty input.
RgbImage render_ash(const LocalizationList& locs, const AshConfig& cfg,
                    const Colormap& cmap);

// Binary PPM (P6); deterministic bytes.
void write_ppm(const std::string& path, const RgbImage& img);

// Grayscale preview of a camera frame through the same PPM path.
RgbImage frame_to_rgb(const Image<double>& pixels);

}  // namespace smlm3d

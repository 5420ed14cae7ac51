#include "smlm3d/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "smlm3d/io.hpp"

namespace smlm3d {

Colormap Colormap::builtin() {
  // Dark-violet to yellow ramp, monotone in lightness; piecewise linear
  // between five anchors.
  static constexpr int anchors[5][3] = {
      {68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}};
  Colormap cm;
  for (int i = 0; i < 256; ++i) {
    const double t = i / 255.0 * 4.0;
    const int seg = std::min(3, static_cast<int>(t));
    const double f = t - seg;
    for (int ch = 0; ch < 3; ++ch) {
      const double v =
          anchors[seg][ch] + f * (anchors[seg + 1][ch] - anchors[seg][ch]);
      cm.table[i][ch] = static_cast<uint8_t>(std::lround(v));
    }
  }
  return cm;
}

Colormap Colormap::from_csv(const std::string& path) {
  const std::string text = io::read_text(path);
  Colormap cm;
  size_t pos = 0;
  for (int i = 0; i < 256; ++i) {
    size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    const std::string line = text.substr(pos, nl - pos);
    int r, g, b;
    if (std::sscanf(line.c_str(), "%d,%d,%d", &r, &g, &b) != 3 || r < 0 ||
        r > 255 || g < 0 || g > 255 || b < 0 || b > 255) {
      throw DataError(path + ": colormap row " + std::to_string(i) +
                      " malformed (need 256 r,g,b rows)");
    }
    cm.table[i] = {static_cast<uint8_t>(r), static_cast<uint8_t>(g),
                   static_cast<uint8_t>(b)};
    pos = nl + 1;
  }
  return cm;
}

void Colormap::to_csv(const std::string& path) const {
  std::string s;
  for (const auto& row : table) {
    s += std::to_string(row[0]) + "," + std::to_string(row[1]) + "," +
         std::to_string(row[2]) + "\n";
  }
  io::write_text(path, s);
}

RgbImage render_ash(const LocalizationList& locs, const AshConfig& cfg,
                    const Colormap& cmap) {
  require(!locs.empty(), ErrorKind::Data, "render_ash: no localizations");
  require(cfg.bin_nm > 0.0 && cfg.shifts >= 1, ErrorKind::Data,
          "render_ash: bad bin/shifts");
  require(cfg.z_max_nm > cfg.z_min_nm, ErrorKind::Data,
          "render_ash: empty z range");

  const int m = cfg.shifts;
  const double fine = cfg.bin_nm / m;

  double x_max = cfg.fov_x_nm, y_max = cfg.fov_y_nm;
  if (x_max <= 0.0 || y_max <= 0.0) {
    for (const Localization& l : locs) {
      x_max = std::max(x_max, l.x + cfg.bin_nm);
      y_max = std::max(y_max, l.y + cfg.bin_nm);
    }
  }
  const int w = std::max(1, static_cast<int>(std::ceil(x_max / fine)));
  const int h = std::max(1, static_cast<int>(std::ceil(y_max / fine)));

  // Averaging the m^2 offset histograms puts a separable triangle of weights
  // (m-|d|)/m^2 per axis around each localization's fine cell.
  Image<double> weight(h, w, 0.0), wz(h, w, 0.0);
  for (const Localization& l : locs) {
    const int fx = static_cast<int>(std::floor(l.x / fine));
    const int fy = static_cast<int>(std::floor(l.y / fine));
    for (int dy = -(m - 1); dy <= m - 1; ++dy) {
      const int ry = fy + dy;
      if (ry < 0 || ry >= h) continue;
      const double wy = static_cast<double>(m - std::abs(dy)) / m;
      for (int dx = -(m - 1); dx <= m - 1; ++dx) {
        const int rx = fx + dx;
        if (rx < 0 || rx >= w) continue;
        const double wgt = wy * (static_cast<double>(m - std::abs(dx)) / m);
        weight.at(ry, rx) += wgt;
        wz.at(ry, rx) += wgt * l.z;
      }
    }
  }

  double w_peak = 0.0;
  for (double v : weight.data) w_peak = std::max(w_peak, v);
  require(w_peak > 0.0, ErrorKind::Data, "render_ash: all points out of frame");

  RgbImage img;
  img.h = h;
  img.w = w;
  img.rgb.assign(static_cast<size_t>(h) * w * 3, 0);
  const double z_span = cfg.z_max_nm - cfg.z_min_nm;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double wgt = weight.at(r, c);
      if (wgt <= 0.0) continue;
      const double zbar = wz.at(r, c) / wgt;
      const double t = std::clamp((zbar - cfg.z_min_nm) / z_span, 0.0, 1.0);
      const auto& rgb = cmap.table[static_cast<int>(std::lround(t * 255.0))];
      const double value = wgt / w_peak;
      const size_t base = (static_cast<size_t>(r) * w + c) * 3;
      for (int ch = 0; ch < 3; ++ch) {
        img.rgb[base + ch] =
            static_cast<uint8_t>(std::lround(rgb[ch] * value));
      }
    }
  }
  return img;
}

void write_ppm(const std::string& path, const RgbImage& img) {
  require(img.h > 0 && img.w > 0 &&
              img.rgb.size() == static_cast<size_t>(img.h) * img.w * 3,
          ErrorKind::Data, "write_ppm: malformed image");
  std::string header =
      "P6\n" + std::to_string(img.w) + " " + std::to_string(img.h) + "\n255\n";
  std::string bytes = header;
  bytes.append(reinterpret_cast<const char*>(img.rgb.data()), img.rgb.size());
  io::write_text(path, bytes);
}

RgbImage frame_to_rgb(const Image<double>& pixels) {
  RgbImage img;
  img.h = pixels.h;
  img.w = pixels.w;
  img.rgb.assign(static_cast<size_t>(pixels.h) * pixels.w * 3, 0);
  double peak = 0.0;
  for (double v : pixels.data) peak = std::max(peak, v);
  if (peak <= 0.0) return img;
  for (size_t i = 0; i < pixels.size(); ++i) {
    const double t = std::clamp(pixels.data[i] / peak, 0.0, 1.0);
    const uint8_t g = static_cast<uint8_t>(std::lround(t * 255.0));
    img.rgb[i * 3] = g;
    img.rgb[i * 3 + 1] = g;
    img.rgb[i * 3 + 2] = g;
  }
  return img;
}

}  // namespace smlm3d

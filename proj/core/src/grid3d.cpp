#include "smlm3d/grid3d.hpp"

#include <cmath>
#include <string>
#include <unordered_set>

namespace smlm3d {

GridSpec GridSpec::matched(const OpticalConfig& cfg, int cam_h, int cam_w,
                           double voxel_z_nm) {
  require(voxel_z_nm > 0.0, ErrorKind::Data, "grid: nonpositive voxel_z");
  GridSpec s;
  s.voxel_xy = cfg.hires_pitch_nm();
  s.voxel_z = voxel_z_nm;
  s.h = cam_h * cfg.upsample;
  s.w = cam_w * cfg.upsample;
  s.d = static_cast<int>(std::floor(cfg.axial_range_nm / voxel_z_nm));
  require(s.d >= 1, ErrorKind::Data, "grid: axial range below one voxel");
  s.origin_x = 0.0;
  s.origin_y = 0.0;
  s.origin_z = -0.5 * s.d * voxel_z_nm;
  return s;
}

bool GridSpec::contains(double x, double y, double z) const {
  return x >= origin_x && x < origin_x + w * voxel_xy && y >= origin_y &&
         y < origin_y + h * voxel_xy && z >= origin_z &&
         z < origin_z + d * voxel_z;
}

GridFromPositions positions_to_grid(std::span<const Emitter> emitters,
                                    const GridSpec& spec,
                                    double dilation_sigma_vox,
                                    bool unit_weights) {
  require(spec.d > 0 && spec.h > 0 && spec.w > 0, ErrorKind::Data,
          "positions_to_grid: empty grid spec");
  GridFromPositions out;
  out.grid.spec = spec;
  out.grid.values = Volume<double>(spec.d, spec.h, spec.w, 0.0);

  const int radius =
      dilation_sigma_vox > 0.0
          ? static_cast<int>(std::ceil(2.0 * dilation_sigma_vox))
          : 0;
  std::unordered_set<size_t> occupied;

  for (size_t i = 0; i < emitters.size(); ++i) {
    const Emitter& e = emitters[i];
    if (!spec.contains(e.x, e.y, e.z)) {
      throw DataError("positions_to_grid: emitter " + std::to_string(i) +
                      " outside grid extents");
    }
    const int ix = static_cast<int>(std::floor((e.x - spec.origin_x) / spec.voxel_xy));
    const int iy = static_cast<int>(std::floor((e.y - spec.origin_y) / spec.voxel_xy));
    const int iz = static_cast<int>(std::floor((e.z - spec.origin_z) / spec.voxel_z));
    const size_t center = out.grid.values.index(iz, iy, ix);
    if (!occupied.insert(center).second) ++out.collision_count;

    const double weight = unit_weights ? 1.0 : e.photons;
    if (radius == 0) {
      out.grid.values.data[center] += weight;
      continue;
    }
    const double inv_two_sigma2 =
        1.0 / (2.0 * dilation_sigma_vox * dilation_sigma_vox);
    for (int dz = -radius; dz <= radius; ++dz) {
      const int kz = iz + dz;
      if (kz < 0 || kz >= spec.d) continue;
      for (int dy = -radius; dy <= radius; ++dy) {
        const int ky = iy + dy;
        if (ky < 0 || ky >= spec.h) continue;
        for (int dx = -radius; dx <= radius; ++dx) {
          const int kx = ix + dx;
          if (kx < 0 || kx >= spec.w) continue;
          const double r2 =
              static_cast<double>(dx) * dx + static_cast<double>(dy) * dy +
              static_cast<double>(dz) * dz;
          out.grid.values.at(kz, ky, kx) +=
              weight * std::exp(-r2 * inv_two_sigma2);
        }
      }
    }
  }
  return out;
}

LocalizationList extract_peaks(const Grid3D& grid, double threshold,
                               int radius) {
  require(threshold > 0.0, ErrorKind::Data, "extract_peaks: threshold must be > 0");
  require(radius >= 1, ErrorKind::Data, "extract_peaks: radius must be >= 1");
  const GridSpec& s = grid.spec;
  LocalizationList out;
  for (int z = 0; z < s.d; ++z) {
    for (int y = 0; y < s.h; ++y) {
      for (int x = 0; x < s.w; ++x) {
        const double v = grid.values.at(z, y, x);
        if (!(v > threshold)) continue;
        const size_t self = grid.values.index(z, y, x);
        bool is_peak = true;
        for (int dz = -radius; dz <= radius && is_peak; ++dz) {
          const int kz = z + dz;
          if (kz < 0 || kz >= s.d) continue;
          for (int dy = -radius; dy <= radius && is_peak; ++dy) {
            const int ky = y + dy;
            if (ky < 0 || ky >= s.h) continue;
            for (int dx = -radius; dx <= radius; ++dx) {
              const int kx = x + dx;
              if (kx < 0 || kx >= s.w) continue;
              const size_t idx = grid.values.index(kz, ky, kx);
              if (idx == self) continue;
              const double nv = grid.values.data[idx];
              if (nv > v || (nv == v && idx < self)) {
                is_peak = false;
                break;
              }
            }
          }
        }
        if (!is_peak) continue;
        Localization loc;
        loc.x = s.origin_x + (x + 0.5) * s.voxel_xy;
        loc.y = s.origin_y + (y + 0.5) * s.voxel_xy;
        loc.z = s.origin_z + (z + 0.5) * s.voxel_z;
        loc.photons = v;
        out.push_back(loc);
      }
    }
  }
  return out;
}

}  // namespace smlm3d

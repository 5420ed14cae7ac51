#pragma once

#include <span>
#include <vector>

#include "smlm3d/common.hpp"
#include "smlm3d/image.hpp"
#include "smlm3d/optics.hpp"

namespace smlm3d {

// Geometry of the discretized occupancy ("vacancy") grid. Voxel (0,0,0) has
// its corner at `origin`; voxel centers sit half a pitch in.
struct GridSpec {
  double voxel_xy = 27.5;
  double voxel_z = 33.0;
  int d = 0;  // z slices
  int h = 0;
  int w = 0;
  double origin_x = 0.0;
  double origin_y = 0.0;
  double origin_z = 0.0;

  // Grid matched to a camera frame: lateral pitch camera_pixel/upsample and
  // as many z slices as fit the axial range (floor(range/voxel_z)).
  static GridSpec matched(const OpticalConfig& cfg, int cam_h, int cam_w,
                          double voxel_z_nm = 33.0);

  double axial_extent_nm() const { return d * voxel_z; }
  double z_min() const { return origin_z; }
  double z_max() const { return origin_z + axial_extent_nm(); }

  bool contains(double x, double y, double z) const;
};

struct Grid3D {
  Volume<double> values;
  GridSpec spec;
};

using LocalizationList = std::vector<Localization>;

struct GridFromPositions {
  Grid3D grid;
  int collision_count = 0;  // emitters sharing a center voxel
  bool collided() const { return collision_count > 0; }
};

// Nearest-voxel occupancy; each impulse optionally convolved with a truncated
// Gaussian (radius 2*sigma voxels) whose peak is renormalized to 1. Weights
// are 1 per emitter when unit_weights, else the photon count.
GridFromPositions positions_to_grid(std::span<const Emitter> emitters,
                                    const GridSpec& spec,
                                    double dilation_sigma_vox = 0.0,
                                    bool unit_weights = true);

// Strict local maxima above `threshold` within a (2*radius+1)^3 neighborhood;
// plateau ties go to the lowest linear voxel index. Returns voxel-center
// coordinates; `photons` carries the voxel value.
LocalizationList extract_peaks(const Grid3D& grid, double threshold,
                               int radius);

}  // namespace smlm3d

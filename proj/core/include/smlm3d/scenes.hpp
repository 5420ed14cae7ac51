#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "smlm3d/common.hpp"

namespace smlm3d {

enum class SceneKind { Uniform, Ellipsoid, Nucleus, DensitySweep };

struct SceneSpec {
  SceneKind kind = SceneKind::Uniform;
  double fov_x_nm = 13000.0;
  double fov_y_nm = 13000.0;
  double axial_range_nm = 4000.0;  // emitters span +-range/2 around focus
  int count = 1;
  double density_per_um2 = 0.0;  // checked against count when both given
  double photons_lo = 30000.0;   // log-uniform when lo < hi, fixed otherwise
  double photons_hi = 30000.0;
  double background = 150.0;
  double min_separation_nm = 0.0;
  uint64_t seed = 1;
  // Ellipsoid surface scenes, centered in the FOV at z = 0.
  double semi_x_nm = 0.0;
  double semi_y_nm = 0.0;
  double semi_z_nm = 0.0;

  double area_um2() const { return fov_x_nm * fov_y_nm * 1e-6; }
  void validate() const;
};

// Uniform positions over FOV x axial range with rejection resampling under
// the minimum separation.
std::vector<Emitter> gen_uniform(const SceneSpec& spec);

// Area-uniform samples on the ellipsoid surface (sphere directions with
// area-element rejection).
std::vector<Emitter> gen_ellipsoid(const SceneSpec& spec);

// Telomere-like scene: emitters uniform in a 20 um diameter disc laterally
// and a 3 um axial slab, 400 nm minimum separation, 62 emitters by default.
SceneSpec nucleus_defaults();
std::vector<Emitter> gen_nucleus(const SceneSpec& spec);

std::vector<Emitter> generate_scene(const SceneSpec& spec);

}  // namespace smlm3d

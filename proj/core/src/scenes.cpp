#include "smlm3d/scenes.hpp"

#include <algorithm>
#include <cmath>

#include "smlm3d/rng.hpp"

namespace smlm3d {

void SceneSpec::validate() const {
  require(fov_x_nm > 0.0 && fov_y_nm > 0.0 && axial_range_nm > 0.0,
          ErrorKind::Data, "scene: nonpositive extents");
  require(count >= 0, ErrorKind::Data, "scene: negative count");
  require(photons_lo > 0.0 && photons_hi >= photons_lo, ErrorKind::Data,
          "scene: invalid photon range");
  require(background >= 0.0, ErrorKind::Data, "scene: negative background");
  require(min_separation_nm >= 0.0, ErrorKind::Data,
          "scene: negative min separation");
  if (density_per_um2 > 0.0 && count > 0) {
    const double implied = density_per_um2 * area_um2();
    require(std::abs(implied - count) <= 0.5, ErrorKind::Data,
            "scene: density and count disagree");
  }
}

namespace {

double draw_photons(const SceneSpec& spec, Rng& rng) {
  if (spec.photons_hi > spec.photons_lo) {
    return rng.log_uniform(spec.photons_lo, spec.photons_hi);
  }
  return spec.photons_lo;
}

bool separated(const std::vector<Emitter>& placed, double x, double y, double z,
               double min_sep) {
  if (min_sep <= 0.0) return true;
  const double min2 = min_sep * min_sep;
  for (const Emitter& e : placed) {
    const double dx = e.x - x, dy = e.y - y, dz = e.z - z;
    if (dx * dx + dy * dy + dz * dz < min2) return false;
  }
  return true;
}

void check_invariants(const SceneSpec& spec, const std::vector<Emitter>& out) {
  for (const Emitter& e : out) {
    require(e.x >= 0.0 && e.x < spec.fov_x_nm && e.y >= 0.0 &&
                e.y < spec.fov_y_nm,
            ErrorKind::Numeric, "scene: generated emitter escaped the FOV");
    require(std::abs(e.z) <= 0.5 * spec.axial_range_nm, ErrorKind::Numeric,
            "scene: generated emitter escaped the axial range");
    require(e.photons >= spec.photons_lo && e.photons <= spec.photons_hi,
            ErrorKind::Numeric, "scene: photon draw out of range");
  }
  if (spec.min_separation_nm > 0.0) {
    for (size_t i = 0; i < out.size(); ++i) {
      for (size_t j = i + 1; j < out.size(); ++j) {
        const double dx = out[i].x - out[j].x;
        const double dy = out[i].y - out[j].y;
        const double dz = out[i].z - out[j].z;
        require(std::sqrt(dx * dx + dy * dy + dz * dz) >=
                    spec.min_separation_nm,
                ErrorKind::Numeric, "scene: min separation violated");
      }
    }
  }
}

constexpr int kMaxTriesPerEmitter = 20000;

}  // namespace

std::vector<Emitter> gen_uniform(const SceneSpec& spec) {
  spec.validate();
  int count = spec.count;
  if (count == 0 && spec.density_per_um2 > 0.0) {
    count = static_cast<int>(std::lround(spec.density_per_um2 * spec.area_um2()));
  }
  Rng rng(spec.seed);
  std::vector<Emitter> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxTriesPerEmitter; ++attempt) {
      const double x = rng.uniform(0.0, spec.fov_x_nm);
      const double y = rng.uniform(0.0, spec.fov_y_nm);
      const double z =
          rng.uniform(-0.5 * spec.axial_range_nm, 0.5 * spec.axial_range_nm);
      if (!separated(out, x, y, z, spec.min_separation_nm)) continue;
      out.push_back({x, y, z, draw_photons(spec, rng)});
      placed = true;
      break;
    }
    require(placed, ErrorKind::Data,
            "gen_uniform: min separation infeasible for requested count");
  }
  check_invariants(spec, out);
  return out;
}

std::vector<Emitter> gen_ellipsoid(const SceneSpec& spec) {
  spec.validate();
  const double a = spec.semi_x_nm, b = spec.semi_y_nm, c = spec.semi_z_nm;
  require(a > 0.0 && b > 0.0 && c > 0.0, ErrorKind::Data,
          "gen_ellipsoid: semi-axes must be positive");
  require(2.0 * a <= spec.fov_x_nm && 2.0 * b <= spec.fov_y_nm &&
              2.0 * c <= spec.axial_range_nm,
          ErrorKind::Data, "gen_ellipsoid: ellipsoid exceeds scene extents");
  const double cx = 0.5 * spec.fov_x_nm;
  const double cy = 0.5 * spec.fov_y_nm;
  const double w_max = std::max({b * c, a * c, a * b});

  Rng rng(spec.seed);
  std::vector<Emitter> out;
  out.reserve(spec.count);
  for (int i = 0; i < spec.count; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxTriesPerEmitter; ++attempt) {
      double px = rng.normal(), py = rng.normal(), pz = rng.normal();
      const double r = std::sqrt(px * px + py * py + pz * pz);
      if (r < 1e-12) continue;
      px /= r;
      py /= r;
      pz /= r;
      // Area element of the map from the sphere; rejection makes the surface
      // sampling uniform in area.
      const double w =
          std::sqrt(b * c * px * (b * c * px) + a * c * py * (a * c * py) +
                    a * b * pz * (a * b * pz));
      if (rng.uniform() * w_max > w) continue;
      const double x = cx + a * px;
      const double y = cy + b * py;
      const double z = c * pz;
      if (!separated(out, x, y, z, spec.min_separation_nm)) continue;
      out.push_back({x, y, z, draw_photons(spec, rng)});
      placed = true;
      break;
    }
    require(placed, ErrorKind::Data, "gen_ellipsoid: sampling failed");
  }
  check_invariants(spec, out);
  return out;
}

SceneSpec nucleus_defaults() {
  SceneSpec s;
  s.kind = SceneKind::Nucleus;
  s.fov_x_nm = 20130.0;  // 183 camera pixels at 110 nm
  s.fov_y_nm = 20130.0;
  s.axial_range_nm = 3000.0;
  s.count = 62;
  s.min_separation_nm = 400.0;
  s.photons_lo = 5000.0;
  s.photons_hi = 30000.0;
  s.background = 150.0;
  return s;
}

std::vector<Emitter> gen_nucleus(const SceneSpec& spec) {
  spec.validate();
  const double diameter = 20000.0;
  require(spec.fov_x_nm >= diameter && spec.fov_y_nm >= diameter,
          ErrorKind::Data, "gen_nucleus: FOV smaller than the nucleus disc");
  const double radius = 0.5 * diameter;
  const double cx = 0.5 * spec.fov_x_nm;
  const double cy = 0.5 * spec.fov_y_nm;

  Rng rng(spec.seed);
  std::vector<Emitter> out;
  out.reserve(spec.count);
  for (int i = 0; i < spec.count; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxTriesPerEmitter; ++attempt) {
      const double x = rng.uniform(cx - radius, cx + radius);
      const double y = rng.uniform(cy - radius, cy + radius);
      const double dx = x - cx, dy = y - cy;
      if (dx * dx + dy * dy > radius * radius) continue;
      const double z =
          rng.uniform(-0.5 * spec.axial_range_nm, 0.5 * spec.axial_range_nm);
      if (!separated(out, x, y, z, spec.min_separation_nm)) continue;
      out.push_back({x, y, z, draw_photons(spec, rng)});
      placed = true;
      break;
    }
    require(placed, ErrorKind::Data,
            "gen_nucleus: min separation infeasible for requested count");
  }
  check_invariants(spec, out);
  return out;
}

std::vector<Emitter> generate_scene(const SceneSpec& spec) {
  switch (spec.kind) {
    case SceneKind::Uniform:
      return gen_uniform(spec);
    case SceneKind::Ellipsoid:
      return gen_ellipsoid(spec);
    case SceneKind::Nucleus:
      return gen_nucleus(spec);
    case SceneKind::DensitySweep:
      throw DataError("generate_scene: density sweeps expand to per-level scenes");
  }
  throw DataError("generate_scene: unknown scene kind");
}

}  // namespace smlm3d

#include "config.hpp"

#include <cmath>
#include <filesystem>

namespace smlm3d::cli {

namespace fs = std::filesystem;

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  json j = json::parse(io::read_text(path), nullptr, false);
  require(!j.is_discarded(), ErrorKind::Data, "invalid JSON config: " + path);
  return j;
}

OpticalConfig parse_optics(const json& root) {
  OpticalConfig c;
  const json o = root.value("optics", json::object());
  c.numerical_aperture = o.value("numerical_aperture", c.numerical_aperture);
  c.immersion_index = o.value("immersion_index", c.immersion_index);
  c.wavelength_nm = o.value("wavelength_nm", c.wavelength_nm);
  c.camera_pixel_nm = o.value("camera_pixel_nm", c.camera_pixel_nm);
  c.pupil_samples = o.value("pupil_samples", c.pupil_samples);
  c.upsample = o.value("upsample", c.upsample);
  c.axial_range_nm = o.value("axial_range_nm", c.axial_range_nm);
  return c;
}

FrameGeometry parse_frame(const json& root) {
  FrameGeometry f;
  const json j = root.value("frame", json::object());
  f.width_px = j.value("width_px", f.width_px);
  f.height_px = j.value("height_px", f.height_px);
  f.count = j.value("count", f.count);
  require(f.width_px > 0 && f.height_px > 0 && f.count > 0, ErrorKind::Data,
          "config: frame geometry must be positive");
  return f;
}

SceneSpec parse_scene(const json& root, const OpticalConfig& optics,
                      const FrameGeometry& frame) {
  SceneSpec s;
  const json j = root.value("scene", json::object());
  const std::string kind = j.value("kind", "uniform");
  if (kind == "uniform") {
    s.kind = SceneKind::Uniform;
  } else if (kind == "ellipsoid") {
    s.kind = SceneKind::Ellipsoid;
  } else if (kind == "nucleus") {
    s = nucleus_defaults();
  } else if (kind == "density-sweep") {
    s.kind = SceneKind::DensitySweep;
  } else {
    throw DataError("config: unknown scene kind `" + kind + "`");
  }
  s.fov_x_nm = frame.width_px * optics.camera_pixel_nm;
  s.fov_y_nm = frame.height_px * optics.camera_pixel_nm;
  // Emitters live inside the voxelized axial extent so the occupancy grid
  // can always represent them.
  const GridSpec grid =
      GridSpec::matched(optics, frame.height_px, frame.width_px,
                        root.value("grid", json::object()).value("voxel_z_nm", 33.0));
  s.axial_range_nm = grid.axial_extent_nm();
  if (j.contains("axial_range_nm")) {
    s.axial_range_nm =
        std::min(j["axial_range_nm"].get<double>(), grid.axial_extent_nm());
  }
  s.count = j.value("count", s.count);
  s.density_per_um2 = j.value("density_per_um2", s.density_per_um2);
  if (j.contains("photons")) {
    const json& p = j["photons"];
    if (p.is_array()) {
      s.photons_lo = p.at(0).get<double>();
      s.photons_hi = p.at(1).get<double>();
    } else {
      s.photons_lo = s.photons_hi = p.get<double>();
    }
  }
  s.background = j.value("background", s.background);
  s.min_separation_nm = j.value("min_separation_nm", s.min_separation_nm);
  if (j.contains("semi_axes_nm")) {
    const json& a = j["semi_axes_nm"];
    s.semi_x_nm = a.at(0).get<double>();
    s.semi_y_nm = a.at(1).get<double>();
    s.semi_z_nm = a.at(2).get<double>();
  }
  return s;
}

SweepSpec parse_sweep(const json& root) {
  SweepSpec sweep;
  const json j = root.value("scene", json::object()).value("sweep", json::object());
  sweep.min_count = j.value("min_count", sweep.min_count);
  sweep.max_count = j.value("max_count", sweep.max_count);
  sweep.levels = j.value("levels", sweep.levels);
  require(sweep.min_count >= 1 && sweep.max_count >= sweep.min_count &&
              sweep.levels >= 2,
          ErrorKind::Data, "config: bad density sweep");
  return sweep;
}

std::vector<int> sweep_counts(const SweepSpec& sweep) {
  std::vector<int> counts;
  const double lo = std::log(static_cast<double>(sweep.min_count));
  const double hi = std::log(static_cast<double>(sweep.max_count));
  for (int i = 0; i < sweep.levels; ++i) {
    const double t = lo + (hi - lo) * i / (sweep.levels - 1);
    counts.push_back(static_cast<int>(std::lround(std::exp(t))));
  }
  return counts;
}

PhaseMask build_mask(const json& root, const PupilGrid& pupil) {
  const json j = root.value("mask", json::object());
  const std::string kind = j.value("kind", "flat");
  if (kind == "flat") {
    return flat_mask(pupil);
  }
  if (kind == "zernike") {
    std::vector<std::pair<int, double>> coeffs;
    for (const json& pair : j.value("zernike", json::array())) {
      coeffs.emplace_back(pair.at(0).get<int>(), pair.at(1).get<double>());
    }
    return zernike_mask(coeffs, pupil);
  }
  if (kind == "file") {
    const std::string path = j.value("path", "");
    require(!path.empty(), ErrorKind::Data, "config: mask.path required");
    const io::MaskFile mf = io::load_mask(path);
    require(io::optics_fingerprint(mf.optics) ==
                io::optics_fingerprint(pupil.cfg),
            ErrorKind::Data,
            "mask file optics do not match the configured optics");
    PhaseMask mask = flat_mask(pupil);
    mask.phase = mf.phase;
    return mask;
  }
  if (kind == "crlb-design") {
    CrlbDesignConfig d;
    const json dj = j.value("design", json::object());
    if (dj.contains("noll")) d.noll = dj["noll"].get<std::vector<int>>();
    if (dj.contains("init_coeffs")) {
      d.init_coeffs = dj["init_coeffs"].get<std::vector<double>>();
    }
    d.z_samples = dj.value("z_samples", d.z_samples);
    d.photons = dj.value("photons", d.photons);
    d.background = dj.value("background", d.background);
    d.iterations = dj.value("iterations", d.iterations);
    d.crlb_window_px = dj.value("crlb_window_px", d.crlb_window_px);
    return optimize_mask_crlb(pupil, d).mask;
  }
  throw DataError("config: unknown mask kind `" + kind + "`");
}

MpConfig parse_mp(const json& root) {
  MpConfig c;
  const json j = root.value("mp", json::object());
  c.max_emitters = j.value("max_emitters", c.max_emitters);
  c.photon_stop = j.value("photon_stop", c.photon_stop);
  c.corr_stop = j.value("corr_stop", c.corr_stop);
  c.refine_max_iters = j.value("refine_max_iters", c.refine_max_iters);
  c.refine_tol_nm = j.value("refine_tol_nm", c.refine_tol_nm);
  c.refine_window_px = j.value("refine_window_px", c.refine_window_px);
  c.fd_step_nm = j.value("fd_step_nm", c.fd_step_nm);
  return c;
}

DictionaryConfig parse_dictionary(const json& root) {
  DictionaryConfig c;
  const json j = root.value("mp", json::object());
  c.z_step_nm = j.value("z_step_nm", c.z_step_nm);
  c.template_radius_px = j.value("template_radius_px", c.template_radius_px);
  c.null_frames = j.value("null_frames", c.null_frames);
  c.null_quantile = j.value("null_quantile", c.null_quantile);
  c.min_energy_fraction = j.value("min_energy_fraction", c.min_energy_fraction);
  c.null_seed = j.value("null_seed", c.null_seed);
  return c;
}

TrainConfig parse_train(const json& root) {
  TrainConfig c;
  c.optics = parse_optics(root);
  const json j = root.value("train", json::object());
  c.frame_px = j.value("frame_px", c.frame_px);
  c.batch = j.value("batch", c.batch);
  c.min_emitters = j.value("min_emitters", c.min_emitters);
  c.max_emitters = j.value("max_emitters", c.max_emitters);
  c.photons_lo = j.value("photons_lo", c.photons_lo);
  c.photons_hi = j.value("photons_hi", c.photons_hi);
  c.background = j.value("background", c.background);
  c.lr_mask = j.value("lr_mask", c.lr_mask);
  c.lr_decoder = j.value("lr_decoder", c.lr_decoder);
  c.steps = j.value("steps", c.steps);
  c.voxel_z_nm = j.value("voxel_z_nm", c.voxel_z_nm);
  c.channels = j.value("channels", c.channels);
  c.dilation_sigma = j.value("dilation_sigma", c.dilation_sigma);
  c.w_pos = j.value("w_pos", c.w_pos);
  c.w_l1 = j.value("w_l1", c.w_l1);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.mask_init_amp_rad = j.value("mask_init_amp_rad", c.mask_init_amp_rad);
  c.mask_init_smooth_px = j.value("mask_init_smooth_px", c.mask_init_smooth_px);
  return c;
}

AshConfig parse_render(const json& root, const OpticalConfig& optics) {
  AshConfig c;
  const json j = root.value("render", json::object());
  c.bin_nm = j.value("bin_nm", 20.0);
  c.shifts = j.value("shifts", 4);
  c.z_min_nm = j.value("zmin_nm", -0.5 * optics.axial_range_nm);
  c.z_max_nm = j.value("zmax_nm", 0.5 * optics.axial_range_nm);
  c.fov_x_nm = j.value("fov_x_nm", 0.0);
  c.fov_y_nm = j.value("fov_y_nm", 0.0);
  return c;
}

std::string config_fingerprint(const json& resolved) {
  const std::string s = resolved.dump();
  return io::hex64(io::fnv1a64(s.data(), s.size()));
}

ManifestWriter::ManifestWriter(std::string command, std::string out_dir,
                               const json& resolved_config, uint64_t seed,
                               int threads)
    : out_dir_(std::move(out_dir)), start_(std::chrono::steady_clock::now()) {
  fs::create_directories(out_dir_);
  manifest_ = json{{"format", "smlm3d-run"},
                   {"version", 1},
                   {"tool_version", "0.1.0"},
                   {"command", command},
                   {"config", resolved_config},
                   {"config_fingerprint", config_fingerprint(resolved_config)},
                   {"seed", seed},
                   {"threads", threads},
                   {"inputs", json::array()},
                   {"outputs", json::array()}};
}

void ManifestWriter::add_input(const std::string& path) {
  manifest_["inputs"].push_back(
      json{{"path", path}, {"fnv1a64", io::hex64(io::fnv1a64_file(path))}});
}

void ManifestWriter::add_output(const std::string& path) {
  manifest_["outputs"].push_back(
      json{{"path", path}, {"fnv1a64", io::hex64(io::fnv1a64_file(path))}});
}

void ManifestWriter::write() {
  const double ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - start_)
                        .count();
  manifest_["wall_ms"] = ms;
  io::write_text(out_dir_ + "/run_manifest.json", manifest_.dump(2) + "\n");
}

}  // namespace smlm3d::cli

#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "config.hpp"
#include "smlm3d/metrics.hpp"
#include "smlm3d/rng.hpp"
#include "smlm3d/threadpool.hpp"

namespace smlm3d::cli {

namespace fs = std::filesystem;

namespace {

uint64_t resolve_seed(const GlobalOpts& g, const json& cfg) {
  if (g.seed_set) return g.seed;
  return cfg.value("seed", uint64_t{1});
}

json optics_json(const OpticalConfig& c) {
  return json::parse(io::canonical_optics_json(c));
}

// One simulated dataset: per-frame ground truth, noisy frames, the mask, and
// a dataset manifest tying them together with content hashes.
void write_dataset(const std::string& dir, const OpticalConfig& optics,
                   const PhaseMask& mask, const SceneSpec& scene,
                   const FrameGeometry& frame, uint64_t seed, int threads) {
  fs::create_directories(dir);
  const PupilGrid pupil = build_pupil(optics);

  std::vector<std::vector<Emitter>> per_frame(frame.count);
  std::vector<Frame> noisy(frame.count);
  parallel_for(frame.count, threads, [&](int f) {
    SceneSpec s = scene;
    s.seed = Rng::derive(seed, static_cast<uint64_t>(f));
    per_frame[f] = generate_scene(s);
    const Frame clean = render_noiseless(pupil, mask, per_frame[f],
                                         frame.height_px, frame.width_px);
    noisy[f] = apply_noise(clean, scene.background,
                           Rng::derive(seed, 0xA0150000ull + f));
  });

  LocalizationList gt;
  for (int f = 0; f < frame.count; ++f) {
    for (const Emitter& e : per_frame[f]) {
      gt.push_back({f, e.x, e.y, e.z, e.photons});
    }
  }
  io::save_localizations(dir + "/gt.csv", gt);
  io::save_frames(dir + "/frames.bin", noisy);
  io::save_mask(dir + "/mask.bin", mask, optics);

  json files = json::array();
  for (const char* name : {"gt.csv", "frames.bin", "frames.bin.json",
                           "mask.bin", "mask.bin.json"}) {
    files.push_back(json{
        {"path", name},
        {"fnv1a64", io::hex64(io::fnv1a64_file(dir + "/" + name))}});
  }
  const char* kind_name = "uniform";
  if (scene.kind == SceneKind::Ellipsoid) kind_name = "ellipsoid";
  if (scene.kind == SceneKind::Nucleus) kind_name = "nucleus";
  json scene_json{{"kind", kind_name},
                  {"count", scene.count},
                  {"photons", {scene.photons_lo, scene.photons_hi}},
                  {"background", scene.background},
                  {"min_separation_nm", scene.min_separation_nm},
                  {"axial_range_nm", scene.axial_range_nm},
                  {"fov_x_nm", scene.fov_x_nm},
                  {"fov_y_nm", scene.fov_y_nm}};
  json manifest{{"format", "smlm3d-dataset"},
                {"version", 1},
                {"optics", optics_json(optics)},
                {"optics_fingerprint", io::optics_fingerprint(optics)},
                {"frames", frame.count},
                {"width_px", frame.width_px},
                {"height_px", frame.height_px},
                {"background", scene.background},
                {"scene", scene_json},
                {"seed", seed},
                {"files", files}};
  io::write_text(dir + "/dataset.json", manifest.dump(2) + "\n");
}

struct Dataset {
  OpticalConfig optics;
  PhaseMask mask;
  std::vector<Frame> frames;
  double background = 0.0;
  int width_px = 0, height_px = 0;
  uint64_t seed = 0;
  std::string dir;
};

Dataset load_dataset(const std::string& dir) {
  const json j = json::parse(io::read_text(dir + "/dataset.json"));
  require(j.value("format", "") == "smlm3d-dataset" && j.value("version", 0) == 1,
          ErrorKind::Data, dir + "/dataset.json: wrong format or version");
  // Verify content hashes before trusting anything.
  for (const json& f : j.at("files")) {
    const std::string path = dir + "/" + f.at("path").get<std::string>();
    const std::string expect = f.at("fnv1a64").get<std::string>();
    const std::string got = io::hex64(io::fnv1a64_file(path));
    require(expect == got, ErrorKind::Data,
            path + ": checksum mismatch (" + got + " vs " + expect + ")");
  }
  Dataset d;
  d.dir = dir;
  const io::MaskFile mf = io::load_mask(dir + "/mask.bin");
  d.optics = mf.optics;
  const PupilGrid pupil = build_pupil(d.optics);
  d.mask = flat_mask(pupil);
  d.mask.phase = mf.phase;
  io::FramesMeta meta;
  d.frames = io::load_frames(dir + "/frames.bin", &meta);
  d.background = meta.background;
  d.width_px = meta.w;
  d.height_px = meta.h;
  d.seed = j.value("seed", uint64_t{0});
  return d;
}

LocalizationList localize_mp(const Dataset& d, const json& cfg, int threads) {
  const PupilGrid pupil = build_pupil(d.optics);
  const MpConfig mp_cfg = parse_mp(cfg);
  DictionaryConfig dict_cfg = parse_dictionary(cfg);
  dict_cfg.null_seed = Rng::derive(d.seed, 0xD1C7ull);
  const Dictionary dict(pupil, d.mask, d.height_px, d.width_px, d.background,
                        dict_cfg);
  std::vector<LocalizationList> per_frame(d.frames.size());
  parallel_for(static_cast<int>(d.frames.size()), threads, [&](int f) {
    per_frame[f] = mp_localize(d.frames[f], dict, mp_cfg, d.background);
    for (Localization& l : per_frame[f]) l.frame = f;
  });
  LocalizationList all;
  for (const auto& locs : per_frame) {
    all.insert(all.end(), locs.begin(), locs.end());
  }
  return all;
}

LocalizationList localize_decoder(const Dataset& d, const std::string& ckpt,
                                  double peak_threshold, int threads) {
  require(!ckpt.empty(), ErrorKind::Usage,
          "localize: --checkpoint is required for the decoder method");
  io::DecoderManifest man;
  const DecoderParams<float> params =
      io::load_decoder_checkpoint(ckpt + "/decoder.bin", ckpt + "/decoder.json",
                                  &man);
  require(man.optics_fingerprint == io::optics_fingerprint(d.optics),
          ErrorKind::Data,
          "localize: checkpoint optics do not match the dataset optics");
  const GridSpec grid =
      GridSpec::matched(d.optics, d.height_px, d.width_px, man.voxel_z_nm);
  const double threshold =
      peak_threshold > 0.0 ? peak_threshold : man.peak_threshold;
  std::vector<LocalizationList> per_frame(d.frames.size());
  parallel_for(static_cast<int>(d.frames.size()), threads, [&](int f) {
    per_frame[f] = decoder_localize(params, d.frames[f], man.norm_mean,
                                    man.norm_std, grid, threshold);
    for (Localization& l : per_frame[f]) l.frame = f;
  });
  LocalizationList all;
  for (const auto& locs : per_frame) {
    all.insert(all.end(), locs.begin(), locs.end());
  }
  return all;
}

void sort_localizations(LocalizationList& locs) {
  std::stable_sort(locs.begin(), locs.end(),
                   [](const Localization& a, const Localization& b) {
                     if (a.frame != b.frame) return a.frame < b.frame;
                     return a.x < b.x;
                   });
}

io::ReportRow evaluate_lists(const LocalizationList& gt,
                             const LocalizationList& pred, double threshold,
                             bool lateral_only, double density) {
  int max_frame = -1;
  for (const Localization& l : gt) max_frame = std::max(max_frame, l.frame);
  for (const Localization& l : pred) max_frame = std::max(max_frame, l.frame);

  io::ReportRow row;
  row.density = density;
  double lat2 = 0.0, ax2 = 0.0;
  long pairs = 0;
  for (int f = 0; f <= max_frame; ++f) {
    LocalizationList g, p;
    for (const Localization& l : gt) {
      if (l.frame == f) g.push_back(l);
    }
    for (const Localization& l : pred) {
      if (l.frame == f) p.push_back(l);
    }
    const MatchResult m = match_points(g, p, threshold, lateral_only);
    row.tp += m.tp;
    row.fp += m.fp;
    row.fn += m.fn;
    for (const MatchPair& pair : m.pairs) {
      const Localization& a = g[pair.gt_index];
      const Localization& b = p[pair.pred_index];
      lat2 += (a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y);
      ax2 += (a.z - b.z) * (a.z - b.z);
      ++pairs;
    }
  }
  const long denom = row.tp + row.fp + row.fn;
  row.jaccard = denom == 0 ? 1.0 : static_cast<double>(row.tp) / denom;
  if (pairs > 0) {
    row.rmse_lat_nm = std::sqrt(lat2 / pairs);
    row.rmse_ax_nm = std::sqrt(ax2 / pairs);
  }
  return row;
}

}  // namespace

int cmd_simulate(const GlobalOpts& g) {
  require(!g.config_path.empty(), ErrorKind::Usage, "simulate: --config required");
  require(!g.out_dir.empty(), ErrorKind::Usage, "simulate: --out required");
  const json cfg = load_config(g.config_path);
  const uint64_t seed = resolve_seed(g, cfg);

  const OpticalConfig optics = parse_optics(cfg);
  const FrameGeometry frame = parse_frame(cfg);
  const PupilGrid pupil = build_pupil(optics);
  const PhaseMask mask = build_mask(cfg, pupil);
  const SceneSpec scene = parse_scene(cfg, optics, frame);

  ManifestWriter manifest("simulate", g.out_dir, cfg, seed, g.threads);
  if (scene.kind == SceneKind::DensitySweep) {
    const SweepSpec sweep = parse_sweep(cfg);
    const std::vector<int> counts = sweep_counts(sweep);
    for (size_t i = 0; i < counts.size(); ++i) {
      SceneSpec level = scene;
      level.kind = SceneKind::Uniform;
      level.count = counts[i];
      char name[8];
      std::snprintf(name, sizeof name, "d%02zu", i);
      const std::string sub = g.out_dir + "/" + name;
      write_dataset(sub, optics, mask, level, frame,
                    Rng::derive(seed, 0x5EED0000ull + i), g.threads);
      manifest.add_output(sub + "/gt.csv");
      manifest.add_output(sub + "/frames.bin");
    }
  } else {
    write_dataset(g.out_dir, optics, mask, scene, frame, seed, g.threads);
    manifest.add_output(g.out_dir + "/gt.csv");
    manifest.add_output(g.out_dir + "/frames.bin");
    manifest.add_output(g.out_dir + "/mask.bin");
  }
  manifest.write();
  return 0;
}

int cmd_localize(const GlobalOpts& g, const std::string& dataset,
                 const std::string& method, const std::string& checkpoint,
                 double peak_threshold) {
  require(!dataset.empty(), ErrorKind::Usage, "localize: --dataset required");
  require(!g.out_dir.empty(), ErrorKind::Usage, "localize: --out required");
  const json cfg = load_config(g.config_path);
  const Dataset d = load_dataset(dataset);

  LocalizationList locs;
  if (method == "mp") {
    locs = localize_mp(d, cfg, g.threads);
  } else if (method == "decoder") {
    locs = localize_decoder(d, checkpoint, peak_threshold, g.threads);
  } else {
    throw UsageError("localize: unknown method `" + method + "`");
  }
  sort_localizations(locs);

  ManifestWriter manifest("localize", g.out_dir, cfg, d.seed, g.threads);
  manifest.add_input(dataset + "/frames.bin");
  manifest.add_input(dataset + "/mask.bin");
  const std::string out_csv = g.out_dir + "/localizations.csv";
  io::save_localizations(out_csv, locs);
  manifest.add_output(out_csv);
  manifest.write();
  return 0;
}

int cmd_evaluate(const GlobalOpts& g, const std::string& gt_csv,
                 const std::string& pred_csv, double threshold_nm,
                 bool lateral_only, double density) {
  require(!gt_csv.empty() && !pred_csv.empty(), ErrorKind::Usage,
          "evaluate: --gt and --pred required");
  require(!g.out_dir.empty(), ErrorKind::Usage, "evaluate: --out required");
  const json cfg = load_config(g.config_path);

  const LocalizationList gt = io::load_localizations(gt_csv);
  const LocalizationList pred = io::load_localizations(pred_csv);
  const io::ReportRow row =
      evaluate_lists(gt, pred, threshold_nm, lateral_only, density);

  json resolved = cfg;
  resolved["evaluate"] =
      json{{"threshold_nm", threshold_nm}, {"lateral_only", lateral_only}};
  ManifestWriter manifest("evaluate", g.out_dir, resolved, 0, g.threads);
  manifest.add_input(gt_csv);
  manifest.add_input(pred_csv);
  io::save_report_csv(g.out_dir + "/report.csv", {row});
  io::save_report_json(g.out_dir + "/report.json", {row},
                       config_fingerprint(resolved), threshold_nm);
  manifest.add_output(g.out_dir + "/report.csv");
  manifest.add_output(g.out_dir + "/report.json");
  manifest.write();
  return 0;
}

int cmd_learn_psf(const GlobalOpts& g) {
  require(!g.config_path.empty(), ErrorKind::Usage, "learn-psf: --config required");
  require(!g.out_dir.empty(), ErrorKind::Usage, "learn-psf: --out required");
  const json cfg = load_config(g.config_path);
  TrainConfig train = parse_train(cfg);
  if (g.seed_set) train.seed = g.seed;
  train.threads = g.threads;

  const PupilGrid pupil = build_pupil(train.optics);
  ManifestWriter manifest("learn-psf", g.out_dir, cfg, train.seed, g.threads);
  (void)learn_psf(train, pupil, g.out_dir);
  manifest.add_output(g.out_dir + "/mask.bin");
  manifest.add_output(g.out_dir + "/decoder.bin");
  manifest.add_output(g.out_dir + "/train_log.csv");
  manifest.write();
  return 0;
}

int cmd_gradcheck(const GlobalOpts& g) {
  const json cfg = load_config(g.config_path);
  const uint64_t seed = resolve_seed(g, cfg);
  const GradAuditReport rep = gradient_audit(seed);
  std::printf("gradient audit (seed %llu)\n",
              static_cast<unsigned long long>(seed));
  std::printf("  optics mask gradient      max rel err %.3e (tol 1e-4)\n",
              rep.optics_max_rel);
  std::printf("  decoder parameter grads   max rel err %.3e (tol 1e-4)\n",
              rep.decoder_param_max_rel);
  std::printf("  decoder input gradient    max rel err %.3e (tol 1e-4)\n",
              rep.decoder_input_max_rel);
  std::printf("  loss gradient             max rel err %.3e (tol 1e-4)\n",
              rep.loss_max_rel);
  std::printf("  end-to-end mask gradient  max rel err %.3e (tol 1e-3)\n",
              rep.end_to_end_max_rel);
  const bool ok = rep.optics_max_rel <= 1e-4 &&
                  rep.decoder_param_max_rel <= 1e-4 &&
                  rep.decoder_input_max_rel <= 1e-4 &&
                  rep.loss_max_rel <= 1e-4 && rep.end_to_end_max_rel <= 1e-3;
  std::printf("%s\n", ok ? "PASS" : "FAIL");
  if (!ok) throw NumericError("gradcheck: tolerance exceeded");
  return 0;
}

int cmd_crlb(const GlobalOpts& g) {
  require(!g.out_dir.empty(), ErrorKind::Usage, "crlb: --out required");
  const json cfg = load_config(g.config_path);
  const OpticalConfig optics = parse_optics(cfg);
  const PupilGrid pupil = build_pupil(optics);
  const PhaseMask mask = build_mask(cfg, pupil);

  const json j = cfg.value("crlb", json::object());
  const double photons = j.value("photons", 30000.0);
  const double background = j.value("background", 150.0);
  CrlbOptions opt;
  opt.window_px = j.value("window_px", 41);
  std::vector<double> zs;
  if (j.contains("z_list")) {
    zs = j["z_list"].get<std::vector<double>>();
  } else {
    const int n = j.value("z_count", 21);
    for (int i = 0; i < n; ++i) {
      zs.push_back(-0.5 * optics.axial_range_nm +
                   i * optics.axial_range_nm / (n - 1));
    }
  }

  ManifestWriter manifest("crlb", g.out_dir, cfg, 0, g.threads);
  std::string csv = "z_nm,sigma_x_nm,sigma_y_nm,sigma_z_nm,sigma_photons\n";
  int degenerate = 0;
  for (double z : zs) {
    char line[160];
    try {
      const CrlbReport r = crlb(pupil, mask, z, photons, background, opt);
      std::snprintf(line, sizeof line, "%.6g,%.6g,%.6g,%.6g,%.6g\n", z,
                    r.sigma_x_nm, r.sigma_y_nm, r.sigma_z_nm, r.sigma_photons);
    } catch (const NumericError& e) {
      ++degenerate;
      std::fprintf(stderr, "warning: z=%g nm: %s\n", z, e.what());
      std::snprintf(line, sizeof line, "%.6g,,,,\n", z);
    }
    csv += line;
  }
  if (degenerate > 0) {
    std::fprintf(stderr,
                 "warning: %d z sample(s) carry no axial information (flat "
                 "mask at focus is degenerate)\n",
                 degenerate);
  }
  io::write_text(g.out_dir + "/crlb.csv", csv);
  manifest.add_output(g.out_dir + "/crlb.csv");
  manifest.write();
  return 0;
}

int cmd_render(const GlobalOpts& g, const std::string& loc_csv,
               const std::string& dataset, bool regenerate,
               const std::string& colormap_path) {
  require(!loc_csv.empty(), ErrorKind::Usage, "render: --loc required");
  require(!g.out_dir.empty(), ErrorKind::Usage, "render: --out required");
  const json cfg = load_config(g.config_path);
  const LocalizationList locs = io::load_localizations(loc_csv);
  require(!locs.empty(), ErrorKind::Data, "render: no localizations");

  ManifestWriter manifest("render", g.out_dir, cfg, 0, g.threads);
  manifest.add_input(loc_csv);

  if (regenerate) {
    // Feed the localizations back through the image-formation model.
    require(!dataset.empty(), ErrorKind::Usage,
            "render --regenerate: --dataset required for optics and mask");
    const Dataset d = load_dataset(dataset);
    const PupilGrid pupil = build_pupil(d.optics);
    int max_frame = 0;
    for (const Localization& l : locs) max_frame = std::max(max_frame, l.frame);
    std::vector<Frame> regen(max_frame + 1);
    for (int f = 0; f <= max_frame; ++f) {
      std::vector<Emitter> ems;
      for (const Localization& l : locs) {
        if (l.frame == f) ems.push_back({l.x, l.y, l.z, std::max(l.photons, 1.0)});
      }
      regen[f] = render_noiseless(pupil, d.mask, ems, d.height_px, d.width_px);
    }
    io::save_frames(g.out_dir + "/regenerated.bin", regen);
    write_ppm(g.out_dir + "/regenerated.ppm", frame_to_rgb(regen[0].pixels));
    manifest.add_output(g.out_dir + "/regenerated.bin");
    manifest.add_output(g.out_dir + "/regenerated.ppm");
    manifest.write();
    return 0;
  }

  OpticalConfig optics = parse_optics(cfg);
  const AshConfig ash = parse_render(cfg, optics);
  const Colormap cmap = colormap_path.empty()
                            ? Colormap::builtin()
                            : Colormap::from_csv(colormap_path);
  const RgbImage img = render_ash(locs, ash, cmap);
  write_ppm(g.out_dir + "/ash.ppm", img);
  manifest.add_output(g.out_dir + "/ash.ppm");
  manifest.write();
  return 0;
}

int cmd_benchmark(const GlobalOpts& g, const std::string& method,
                  const std::string& checkpoint) {
  require(!g.config_path.empty(), ErrorKind::Usage, "benchmark: --config required");
  require(!g.out_dir.empty(), ErrorKind::Usage, "benchmark: --out required");
  const json cfg = load_config(g.config_path);
  const uint64_t seed = resolve_seed(g, cfg);

  const OpticalConfig optics = parse_optics(cfg);
  const FrameGeometry frame = parse_frame(cfg);
  const PupilGrid pupil = build_pupil(optics);
  const PhaseMask mask = build_mask(cfg, pupil);
  SceneSpec scene = parse_scene(cfg, optics, frame);
  const SweepSpec sweep = parse_sweep(cfg);
  const std::vector<int> counts = sweep_counts(sweep);
  const double threshold =
      cfg.value("evaluate", json::object()).value("threshold_nm", 150.0);
  const double area_um2 = scene.area_um2();

  ManifestWriter manifest("benchmark", g.out_dir, cfg, seed, g.threads);
  std::vector<io::ReportRow> rows;
  for (size_t i = 0; i < counts.size(); ++i) {
    SceneSpec level = scene;
    level.kind = SceneKind::Uniform;
    level.count = counts[i];
    char name[8];
    std::snprintf(name, sizeof name, "d%02zu", i);
    const std::string sub = g.out_dir + "/" + name;
    write_dataset(sub, optics, mask, level, frame,
                  Rng::derive(seed, 0x5EED0000ull + i), g.threads);

    const Dataset d = load_dataset(sub);
    LocalizationList locs = method == "decoder"
                                ? localize_decoder(d, checkpoint, 0.0, g.threads)
                                : localize_mp(d, cfg, g.threads);
    sort_localizations(locs);
    io::save_localizations(sub + "/localizations.csv", locs);

    const LocalizationList gt = io::load_localizations(sub + "/gt.csv");
    io::ReportRow row =
        evaluate_lists(gt, locs, threshold, false, counts[i] / area_um2);
    rows.push_back(row);
    std::printf("density %7.4f /um^2 (%3d emitters): jaccard %.4f tp %ld fp "
                "%ld fn %ld\n",
                row.density, counts[i], row.jaccard, row.tp, row.fp, row.fn);
    std::fflush(stdout);
  }
  io::save_report_csv(g.out_dir + "/report.csv", rows);
  io::save_report_json(g.out_dir + "/report.json", rows,
                       config_fingerprint(cfg), threshold);
  manifest.add_output(g.out_dir + "/report.csv");
  manifest.add_output(g.out_dir + "/report.json");
  manifest.write();
  return 0;
}

}  // namespace smlm3d::cli

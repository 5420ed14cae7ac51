// Acceptance suite: one pass/fail line per criterion. Run it with no
// arguments for the full gate, `--only K` for a single criterion, `--bin
// PATH` to include the CLI determinism checks, `--threads N` for the
// frame-parallel pieces (results are thread-count independent).
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdarg>
#include <cstring>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "smlm3d/codesign.hpp"
#include "smlm3d/io.hpp"
#include "smlm3d/metrics.hpp"
#include "smlm3d/mp.hpp"
#include "smlm3d/render.hpp"
#include "smlm3d/rng.hpp"
#include "smlm3d/scenes.hpp"
#include "smlm3d/threadpool.hpp"

#include "../oracles/oracles.hpp"

using namespace smlm3d;
namespace fs = std::filesystem;

namespace {

struct Ctx {
  int threads = 4;
  std::string bin;  // CLI binary, used by criterion 11 (and 3's exit check)
  fs::path work;

  // Shared large-footprint mask (criteria 6 and 10), built once.
  bool have_tetra = false;
  PhaseMask tetra_mask;
  double tetra_initial_objective = 0.0;
  double tetra_final_objective = 0.0;

  const PhaseMask& tetrapod_style_mask(const PupilGrid& pupil) {
    if (!have_tetra) {
      CrlbDesignConfig d;
      d.noll = {4, 5, 6, 7, 8, 11, 12, 13};
      d.init_coeffs = {0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0};
      d.z_samples = 16;
      d.photons = 30000.0;
      d.background = 150.0;
      d.iterations = 25;
      d.crlb_window_px = 41;
      const CrlbDesignResult res = optimize_mask_crlb(pupil, d);
      tetra_mask = res.mask;
      tetra_initial_objective = res.initial_objective;
      tetra_final_objective = res.final_objective;
      have_tetra = true;
    }
    return tetra_mask;
  }
};

struct Failure {
  std::string message;
};

void expect(bool ok, const std::string& msg) {
  if (!ok) throw Failure{msg};
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

int run_cli(const Ctx& ctx, const std::string& args) {
  const std::string cmd = ctx.bin + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// ---------------------------------------------------------------- criterion 1
std::string c1_grid_floor(Ctx&) {
  OpticalConfig cfg;
  cfg.pupil_samples = 32;  // grid geometry only; optics untouched
  const GridSpec grid = GridSpec::matched(cfg, 16, 16);
  expect(grid.d == 121, "expected 121 z slices for the 4 um range");

  Rng rng(0xF100);
  double max_dx = 0.0, max_dy = 0.0, max_dz = 0.0;
  for (int i = 0; i < 10000; ++i) {
    Emitter e;
    e.x = rng.uniform(0.0, grid.w * grid.voxel_xy);
    e.y = rng.uniform(0.0, grid.h * grid.voxel_xy);
    e.z = rng.uniform(grid.z_min(), grid.z_max());
    e.photons = 1000.0;
    const auto res = positions_to_grid({&e, 1}, grid, 0.0);
    const auto peaks = extract_peaks(res.grid, 0.5, 1);
    expect(peaks.size() == 1, "round trip lost the emitter");
    max_dx = std::max(max_dx, std::abs(peaks[0].x - e.x));
    max_dy = std::max(max_dy, std::abs(peaks[0].y - e.y));
    max_dz = std::max(max_dz, std::abs(peaks[0].z - e.z));
  }
  expect(max_dx <= 13.75 && max_dy <= 13.75, "lateral round trip above half a voxel");
  expect(max_dz <= 16.5, "axial round trip above half a voxel");
  return fmt("10^4 round trips, max |dx|=%.3f |dy|=%.3f nm (<=13.75), |dz|=%.3f nm (<=16.5)",
             max_dx, max_dy, max_dz);
}

// ---------------------------------------------------------------- criterion 2
std::string c2_jaccard(Ctx&) {
  MatchResult m;
  m.tp = 57;
  m.fp = 2;
  m.fn = 5;
  const double j = jaccard(m);
  expect(j == 0.890625, "57/(57+2+5) must equal 0.890625 exactly");
  char buf[8];
  std::snprintf(buf, sizeof buf, "%.2f", j);
  expect(std::string(buf) == "0.89", "two-decimal rendering must be 0.89");
  return "tp=57 fp=2 fn=5 -> 0.890625 exactly, prints as 0.89";
}

// ---------------------------------------------------------------- criterion 3
std::string c3_gradients(Ctx& ctx) {
  const GradAuditReport rep = gradient_audit(2026);
  expect(rep.optics_max_rel <= 1e-4,
         fmt("optics mask gradient rel err %.3e > 1e-4", rep.optics_max_rel));
  expect(rep.decoder_param_max_rel <= 1e-4,
         fmt("decoder param rel err %.3e > 1e-4", rep.decoder_param_max_rel));
  expect(rep.decoder_input_max_rel <= 1e-4,
         fmt("decoder input rel err %.3e > 1e-4", rep.decoder_input_max_rel));
  expect(rep.loss_max_rel <= 1e-4,
         fmt("loss rel err %.3e > 1e-4", rep.loss_max_rel));
  expect(rep.end_to_end_max_rel <= 1e-3,
         fmt("end-to-end rel err %.3e > 1e-3", rep.end_to_end_max_rel));
  std::string note = fmt("optics %.1e, decoder %.1e/%.1e, loss %.1e, e2e %.1e",
                         rep.optics_max_rel, rep.decoder_param_max_rel,
                         rep.decoder_input_max_rel, rep.loss_max_rel,
                         rep.end_to_end_max_rel);
  if (!ctx.bin.empty()) {
    expect(run_cli(ctx, "gradcheck --seed 2026") == 0, "gradcheck CLI exit != 0");
    note += "; gradcheck exit 0";
  }
  return note;
}

// ---------------------------------------------------------------- criterion 4
std::string c4_noise(Ctx&) {
  Rng rng(0xC4);
  std::vector<double> draws(1000000);
  for (double& d : draws) d = static_cast<double>(rng.poisson(100.0));
  const auto m = oracles::moments(draws);
  expect(std::abs(m.mean - 100.0) <= 2.0,
         fmt("mean %.3f deviates more than 2%%", m.mean));
  expect(std::abs(m.variance - 100.0) <= 2.0,
         fmt("variance %.3f deviates more than 2%%", m.variance));

  Frame base;
  base.pixels = Image<double>(64, 64, 123.0);
  const Frame a = apply_noise(base, 7.0, 987654321);
  const Frame b = apply_noise(base, 7.0, 987654321);
  expect(a.pixels.data == b.pixels.data, "same seed must be bit-identical");
  return fmt("1e6 draws at lambda=100: mean %.3f, var %.3f (2%% tol); seeded frames bit-identical",
             m.mean, m.variance);
}

// ---------------------------------------------------------------- criterion 5
std::string c5_mle_efficiency(Ctx& ctx) {
  OpticalConfig cfg;  // production pupil sampling, astigmatic axial regime
  cfg.pupil_samples = 128;
  cfg.axial_range_nm = 1000.0;
  const PupilGrid pupil = build_pupil(cfg);
  const PhaseMask astig = zernike_mask({{6, 1.2}}, pupil);

  const double cam = cfg.camera_pixel_nm;
  const int px = 24;
  const Emitter e{12.5 * cam, 12.5 * cam, 300.0, 30000.0};
  const double background = 150.0;

  CrlbOptions copt;
  copt.window_px = 21;
  const CrlbReport bound = crlb(pupil, astig, e.z, e.photons, background, copt);

  const Frame clean = render_noiseless(pupil, astig, {&e, 1}, px, px);
  MpConfig mp_cfg;
  mp_cfg.refine_window_px = 10;

  const int trials = 100;
  std::vector<double> err_x(trials, 0.0), err_y(trials, 0.0);
  parallel_for(trials, ctx.threads, [&](int t) {
    const Frame noisy = apply_noise(clean, background, Rng::derive(0xC5, t));
    Dictionary::Candidate init;
    init.x = e.x + 40.0;
    init.y = e.y - 35.0;
    init.z = e.z + 60.0;
    init.photons = 20000.0;
    WindowRect win{2, 2, 21, 21};
    const RefineResult fit = mle_refine(pupil, astig, noisy.pixels, win, init,
                                        background, mp_cfg);
    expect(fit.refined, "refinement did not converge");
    err_x[t] = fit.x - e.x;
    err_y[t] = fit.y - e.y;
  });
  double sx = 0.0, sy = 0.0;
  for (int t = 0; t < trials; ++t) {
    sx += err_x[t] * err_x[t];
    sy += err_y[t] * err_y[t];
  }
  const double rmse_x = std::sqrt(sx / trials);
  const double rmse_y = std::sqrt(sy / trials);
  expect(rmse_x <= 1.25 * bound.sigma_x_nm,
         fmt("lateral RMSE_x %.3f > 1.25 x CRLB %.3f", rmse_x, bound.sigma_x_nm));
  return fmt("100 trials at 30000/150, z=300 nm: RMSE_x %.3f nm vs CRLB sigma_x %.3f nm "
             "(ratio %.3f <= 1.25); RMSE_y %.3f vs %.3f",
             rmse_x, bound.sigma_x_nm, rmse_x / bound.sigma_x_nm, rmse_y,
             bound.sigma_y_nm);
}

// ---------------------------------------------------------------- criterion 6
std::string c6_density_sweep(Ctx& ctx) {
  OpticalConfig cfg;
  cfg.pupil_samples = 128;
  cfg.axial_range_nm = 4000.0;
  const PupilGrid pupil = build_pupil(cfg);
  const PhaseMask& mask = ctx.tetrapod_style_mask(pupil);

  const int px = 118;  // 12.98 x 12.98 um^2 at 110 nm pixels
  const double area_um2 = px * 0.110 * px * 0.110;
  const int frames = 20;

  DictionaryConfig dict_cfg;
  dict_cfg.template_radius_px = 20;
  dict_cfg.null_frames = 200;
  const Dictionary dict(pupil, mask, px, px, 150.0, dict_cfg);

  MpConfig mp_cfg;
  mp_cfg.max_emitters = 120;
  mp_cfg.refine_window_px = 14;

  std::vector<int> counts;
  for (int i = 0; i < 10; ++i) {
    const double t = std::log(1.0) + (std::log(75.0) - std::log(1.0)) * i / 9.0;
    counts.push_back(static_cast<int>(std::lround(std::exp(t))));
  }

  std::vector<double> densities, jaccards;
  std::string detail;
  for (size_t level = 0; level < counts.size(); ++level) {
    SceneSpec scene;
    scene.fov_x_nm = px * 110.0;
    scene.fov_y_nm = px * 110.0;
    scene.axial_range_nm = GridSpec::matched(cfg, px, px).axial_extent_nm();
    scene.count = counts[level];
    scene.photons_lo = scene.photons_hi = 30000.0;
    scene.background = 150.0;

    std::vector<LocalizationList> gts(frames), preds(frames);
    parallel_for(frames, ctx.threads, [&](int f) {
      SceneSpec s = scene;
      s.seed = Rng::derive(0xC6000 + level, f);
      const std::vector<Emitter> ems = gen_uniform(s);
      const Frame clean = render_noiseless(pupil, mask, ems, px, px);
      const Frame noisy =
          apply_noise(clean, 150.0, Rng::derive(0xC6900 + level, f));
      preds[f] = mp_localize(noisy, dict, mp_cfg, 150.0);
      for (const Emitter& e : ems) gts[f].push_back({f, e.x, e.y, e.z, e.photons});
    });
    long tp = 0, fp = 0, fn = 0;
    for (int f = 0; f < frames; ++f) {
      const MatchResult m = match_points(gts[f], preds[f], 150.0);
      tp += m.tp;
      fp += m.fp;
      fn += m.fn;
    }
    const double j = static_cast<double>(tp) / std::max<long>(tp + fp + fn, 1);
    densities.push_back(counts[level] / area_um2);
    jaccards.push_back(j);
    detail += fmt("%d:%.3f ", counts[level], j);
  }
  const double rho = oracles::spearman(densities, jaccards);
  expect(jaccards.front() >= 0.95,
         fmt("Jaccard at density 1 is %.3f < 0.95", jaccards.front()));
  expect(rho <= -0.9, fmt("Spearman(density, Jaccard) %.3f > -0.9", rho));
  return fmt("MP/large-footprint mask, 20 frames x 10 densities; J(1 emitter)=%.3f, "
             "spearman=%.3f; per-count J: %s",
             jaccards.front(), rho, detail.c_str());
}

// ---------------------------------------------------------------- criterion 7
std::string c7_codesign(Ctx& ctx) {
  TrainConfig cfg;  // 32 px pupil, 1 um axial range, 1..5 emitters per frame
  cfg.optics.pupil_samples = 32;
  cfg.optics.axial_range_nm = 1000.0;
  cfg.frame_px = 16;
  cfg.batch = 4;
  cfg.min_emitters = 1;
  cfg.max_emitters = 5;
  cfg.steps = 2000;
  cfg.seed = 20;
  cfg.threads = ctx.threads;
  cfg.checkpoint_every = 0;
  const PupilGrid pupil = build_pupil(cfg.optics);

  TrainConfig frozen = cfg;
  frozen.lr_mask = 0.0;
  frozen.mask_init_amp_rad = 0.0;  // exactly flat encoder

  const TrainState learned = learn_psf(cfg, pupil, "");
  const TrainState flat = learn_psf(frozen, pupil, "");

  auto window_mean = [](const std::vector<double>& h, size_t begin, size_t n) {
    double s = 0.0;
    for (size_t i = begin; i < begin + n; ++i) s += h[i];
    return s / n;
  };
  const double initial = window_mean(learned.loss_history, 0, 10);
  const double final_loss =
      window_mean(learned.loss_history, learned.loss_history.size() - 10, 10);
  expect(final_loss <= 0.2 * initial,
         fmt("final loss %.3e > 0.2 x initial %.3e", final_loss, initial));

  // Paired held-out evaluation: same emitter draws and noise seeds, each arm
  // imaging through its own mask.
  const GridSpec grid = cfg.grid();
  auto evaluate_arm = [&](const TrainState& arm) {
    long tp = 0, fp = 0, fn = 0;
    std::vector<std::array<long, 3>> per(50);
    parallel_for(50, ctx.threads, [&](int f) {
      const TrainBatch batch = sample_batch(
          [&] {
            TrainConfig c = cfg;
            c.batch = 1;
            return c;
          }(),
          pupil, arm.mask, Rng::derive(0xE7A1, f));
      LocalizationList gt;
      for (const Emitter& e : batch.emitters[0]) {
        gt.push_back({0, e.x, e.y, e.z, e.photons});
      }
      const LocalizationList locs =
          decoder_localize(arm.decoder, batch.frames[0], arm.norm_mean,
                           arm.norm_std, grid, 0.2);
      const MatchResult m = match_points(gt, locs, 150.0);
      per[f] = {m.tp, m.fp, m.fn};
    });
    for (const auto& p : per) {
      tp += p[0];
      fp += p[1];
      fn += p[2];
    }
    return static_cast<double>(tp) / std::max<long>(tp + fp + fn, 1);
  };
  const double j_learned = evaluate_arm(learned);
  const double j_flat = evaluate_arm(flat);
  expect(j_learned > j_flat,
         fmt("learned-mask Jaccard %.3f does not exceed flat-mask %.3f",
             j_learned, j_flat));
  return fmt("2000 steps: loss %.3e -> %.3e (%.3fx); held-out Jaccard learned %.3f > flat %.3f",
             initial, final_loss, final_loss / initial, j_learned, j_flat);
}

// ---------------------------------------------------------------- criterion 8
std::string c8_hungarian(Ctx&) {
  Rng rng(0xC8);
  for (int inst = 0; inst < 100; ++inst) {
    const int ng = 1 + static_cast<int>(rng.below(6));
    const int np = 1 + static_cast<int>(rng.below(6));
    LocalizationList gt, pred;
    for (int i = 0; i < ng; ++i) {
      gt.push_back({0, rng.uniform(0, 700), rng.uniform(0, 700),
                    rng.uniform(-250, 250), 1});
    }
    for (int j = 0; j < np; ++j) {
      pred.push_back({0, rng.uniform(0, 700), rng.uniform(0, 700),
                      rng.uniform(-250, 250), 1});
    }
    const MatchResult mine = match_points(gt, pred, 150.0);
    const auto ref = oracles::brute_force_match(gt, pred, 150.0);
    expect(mine.tp == ref.tp, fmt("instance %d: matched count differs", inst));
    double total = 0.0;
    for (const auto& p : mine.pairs) total += p.distance_nm;
    expect(std::abs(total - ref.total_distance) <= 1e-9,
           fmt("instance %d: matched cost %.12f != optimum %.12f", inst, total,
               ref.total_distance));
  }
  return "100 random instances (n<=6): matched cost equals the exhaustive optimum";
}

// ---------------------------------------------------------------- criterion 9
std::string c9_crlb_scaling(Ctx&) {
  OpticalConfig cfg;
  cfg.pupil_samples = 32;
  cfg.axial_range_nm = 1000.0;
  const PupilGrid pupil = build_pupil(cfg);
  const PhaseMask astig = zernike_mask({{6, 1.0}}, pupil);
  CrlbOptions opt;
  opt.window_px = 15;

  const CrlbReport r1 = crlb(pupil, astig, 250.0, 10000.0, 0.0, opt);
  const CrlbReport r2 = crlb(pupil, astig, 250.0, 20000.0, 0.0, opt);
  auto halves = [](double var2, double var1) {
    return std::abs(var2 / var1 - 0.5) <= 1e-9;
  };
  expect(halves(r2.sigma_x_nm * r2.sigma_x_nm, r1.sigma_x_nm * r1.sigma_x_nm),
         "Var(x) did not halve exactly");
  expect(halves(r2.sigma_y_nm * r2.sigma_y_nm, r1.sigma_y_nm * r1.sigma_y_nm),
         "Var(y) did not halve exactly");
  expect(halves(r2.sigma_z_nm * r2.sigma_z_nm, r1.sigma_z_nm * r1.sigma_z_nm),
         "Var(z) did not halve exactly");
  // Relative photon bound halves; the absolute bound provably doubles.
  const double rel1 = r1.sigma_photons / 10000.0;
  const double rel2 = r2.sigma_photons / 20000.0;
  expect(halves(rel2 * rel2, rel1 * rel1),
         "relative photon variance bound did not halve exactly");
  expect(std::abs(r2.sigma_photons * r2.sigma_photons /
                      (r1.sigma_photons * r1.sigma_photons) -
                  2.0) <= 1e-9,
         "absolute photon variance bound did not double");

  bool degenerate_detected = false;
  std::string message;
  try {
    (void)crlb(pupil, flat_mask(pupil), 0.0, 10000.0, 0.0, opt);
  } catch (const NumericError& e) {
    degenerate_detected = true;
    message = e.what();
  }
  expect(degenerate_detected && message.find("z") != std::string::npos,
         "flat-mask focal z degeneracy not detected / not named");
  return fmt("x/y/z variance bounds halve to 1e-9 rel; relative photon bound halves "
             "(absolute doubles, as the Fisher algebra requires); degeneracy: \"%s\"",
             message.c_str());
}

// --------------------------------------------------------------- criterion 10
std::string c10_compact_advantage(Ctx& ctx) {
  OpticalConfig cfg;
  cfg.pupil_samples = 128;
  cfg.axial_range_nm = 3000.0;  // telomere scene spans ~3 um
  const PupilGrid pupil = build_pupil(cfg);

  const PhaseMask compact = zernike_mask({{6, 2.0}}, pupil);
  OpticalConfig cfg4 = cfg;
  cfg4.axial_range_nm = 4000.0;
  const PupilGrid pupil4 = build_pupil(cfg4);
  PhaseMask large = flat_mask(pupil);
  large.phase = ctx.tetrapod_style_mask(pupil4).phase;  // same pupil sampling

  const int px = 183;  // covers the 20 um nucleus disc
  DictionaryConfig dict_cfg;
  dict_cfg.template_radius_px = 20;
  dict_cfg.null_frames = 150;
  const Dictionary dict_compact(pupil, compact, px, px, 150.0, dict_cfg);
  const Dictionary dict_large(pupil, large, px, px, 150.0, dict_cfg);

  MpConfig mp_cfg;
  mp_cfg.max_emitters = 90;
  mp_cfg.refine_window_px = 14;

  SceneSpec scene = nucleus_defaults();
  scene.fov_x_nm = px * 110.0;
  scene.fov_y_nm = px * 110.0;
  scene.photons_lo = scene.photons_hi = 30000.0;

  const int n_scenes = 10;
  std::vector<std::array<long, 6>> rows(n_scenes);
  parallel_for(n_scenes, ctx.threads, [&](int s) {
    SceneSpec sc = scene;
    sc.seed = Rng::derive(0xC10, s);
    const std::vector<Emitter> ems = gen_nucleus(sc);
    LocalizationList gt;
    for (const Emitter& e : ems) gt.push_back({0, e.x, e.y, e.z, e.photons});

    auto arm = [&](const PhaseMask& mask, const Dictionary& dict, int base) {
      const Frame clean = render_noiseless(pupil, mask, ems, px, px);
      const Frame noisy =
          apply_noise(clean, 150.0, Rng::derive(0xC10F00 + s, base));
      const LocalizationList locs = mp_localize(noisy, dict, mp_cfg, 150.0);
      const MatchResult m = match_points(gt, locs, 150.0);
      rows[s][base * 3 + 0] = m.tp;
      rows[s][base * 3 + 1] = m.fp;
      rows[s][base * 3 + 2] = m.fn;
    };
    arm(compact, dict_compact, 0);
    arm(large, dict_large, 1);
  });
  long ctp = 0, cfp = 0, cfn = 0, ltp = 0, lfp = 0, lfn = 0;
  for (const auto& r : rows) {
    ctp += r[0];
    cfp += r[1];
    cfn += r[2];
    ltp += r[3];
    lfp += r[4];
    lfn += r[5];
  }
  const double j_compact = static_cast<double>(ctp) / (ctp + cfp + cfn);
  const double j_large = static_cast<double>(ltp) / (ltp + lfp + lfn);
  expect(j_compact >= j_large,
         fmt("compact-mask Jaccard %.3f < large-footprint %.3f", j_compact,
             j_large));
  return fmt("62-emitter nucleus x 10 scenes at 30000/150: compact J=%.3f >= "
             "large-footprint J=%.3f",
             j_compact, j_large);
}

// --------------------------------------------------------------- criterion 11
std::string c11_determinism(Ctx& ctx) {
  expect(!ctx.bin.empty(), "needs --bin (CLI binary path)");
  const fs::path work = ctx.work / "c11";
  fs::remove_all(work);
  fs::create_directories(work);
  const std::string cfg_path = (work / "config.json").string();
  io::write_text(cfg_path, R"({
  "seed": 5,
  "optics": {"pupil_samples": 32, "axial_range_nm": 1000.0},
  "frame": {"width_px": 20, "height_px": 20, "count": 3},
  "scene": {"kind": "uniform", "count": 2, "photons": [25000, 25000], "background": 150},
  "mask": {"kind": "zernike", "zernike": [[6, 1.2]]},
  "mp": {"template_radius_px": 7, "null_frames": 100},
  "render": {"bin_nm": 20, "shifts": 4, "fov_x_nm": 2200, "fov_y_nm": 2200}
})");
  auto p = [&](const std::string& sub) { return (work / sub).string(); };

  expect(run_cli(ctx, "simulate --config " + cfg_path + " --out " + p("sim_a")) == 0,
         "simulate a failed");
  expect(run_cli(ctx, "simulate --config " + cfg_path + " --out " + p("sim_b")) == 0,
         "simulate b failed");
  for (const char* f : {"gt.csv", "frames.bin", "mask.bin"}) {
    expect(io::fnv1a64_file(p("sim_a/") + f) == io::fnv1a64_file(p("sim_b/") + f),
           fmt("dataset file %s differs between identical runs", f));
  }

  expect(run_cli(ctx, "localize --dataset " + p("sim_a") + " --method mp --config " +
                          cfg_path + " --threads 1 --out " + p("loc_a")) == 0,
         "localize a failed");
  expect(run_cli(ctx, "localize --dataset " + p("sim_a") + " --method mp --config " +
                          cfg_path + " --threads 4 --out " + p("loc_b")) == 0,
         "localize b failed");
  expect(io::read_text(p("loc_a/localizations.csv")) ==
             io::read_text(p("loc_b/localizations.csv")),
         "localizations differ across thread counts");

  expect(run_cli(ctx, "evaluate --gt " + p("sim_a/gt.csv") + " --pred " +
                          p("loc_a/localizations.csv") + " --out " + p("ev_a")) == 0,
         "evaluate a failed");
  expect(run_cli(ctx, "evaluate --gt " + p("sim_a/gt.csv") + " --pred " +
                          p("loc_a/localizations.csv") + " --out " + p("ev_b")) == 0,
         "evaluate b failed");
  expect(io::read_text(p("ev_a/report.csv")) == io::read_text(p("ev_b/report.csv")),
         "reports differ between identical runs");

  expect(run_cli(ctx, "render --loc " + p("loc_a/localizations.csv") + " --config " +
                          cfg_path + " --out " + p("r_a")) == 0,
         "render a failed");
  expect(run_cli(ctx, "render --loc " + p("loc_a/localizations.csv") + " --config " +
                          cfg_path + " --out " + p("r_b")) == 0,
         "render b failed");
  expect(io::read_text(p("r_a/ash.ppm")) == io::read_text(p("r_b/ash.ppm")),
         "rendered images differ between identical runs");

  // Round-trip loads are bit exact.
  const io::MaskFile mf = io::load_mask(p("sim_a/mask.bin"));
  PhaseMask mask = flat_mask(build_pupil(mf.optics));
  mask.phase = mf.phase;
  io::save_mask(p("mask_copy.bin"), mask, mf.optics);
  expect(io::fnv1a64_file(p("sim_a/mask.bin")) == io::fnv1a64_file(p("mask_copy.bin")),
         "mask round trip not bit exact");
  const auto frames = io::load_frames(p("sim_a/frames.bin"));
  io::save_frames(p("frames_copy.bin"), frames);
  expect(io::fnv1a64_file(p("sim_a/frames.bin")) == io::fnv1a64_file(p("frames_copy.bin")),
         "frames round trip not bit exact");
  const LocalizationList locs = io::load_localizations(p("loc_a/localizations.csv"));
  io::save_localizations(p("loc_copy.csv"), locs);
  expect(io::read_text(p("loc_a/localizations.csv")) == io::read_text(p("loc_copy.csv")),
         "localization CSV round trip not bit exact");
  return "datasets, localizations (1 vs 4 threads), reports and images byte-identical; "
         "mask/frames/CSV round trips bit-exact";
}

}  // namespace

int main(int argc, char** argv) {
  Ctx ctx;
  int only = 0;
  ctx.work = fs::temp_directory_path() / "smlm3d_acceptance";
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--only") && i + 1 < argc) only = std::atoi(argv[++i]);
    else if (!std::strcmp(argv[i], "--bin") && i + 1 < argc) ctx.bin = argv[++i];
    else if (!std::strcmp(argv[i], "--threads") && i + 1 < argc) ctx.threads = std::atoi(argv[++i]);
    else if (!std::strcmp(argv[i], "--work") && i + 1 < argc) ctx.work = argv[++i];
  }
  fs::create_directories(ctx.work);

  struct Criterion {
    const char* name;
    std::function<std::string(Ctx&)> fn;
  };
  const std::vector<Criterion> criteria = {
      {"grid round-trip floor (half voxel)", c1_grid_floor},
      {"Jaccard arithmetic (57,2,5 -> 0.89)", c2_jaccard},
      {"gradient audit (module 1e-4, end-to-end 1e-3)", c3_gradients},
      {"Poisson noise statistics and reproducibility", c4_noise},
      {"MLE efficiency vs CRLB (30000/150, z=300 nm)", c5_mle_efficiency},
      {"MP density degradation (1..75 emitters / 13x13 um^2)", c6_density_sweep},
      {"toy co-design (32 px pupil, 2000 steps)", c7_codesign},
      {"Hungarian vs exhaustive optimum (100 x n<=6)", c8_hungarian},
      {"CRLB photon scaling and focal degeneracy", c9_crlb_scaling},
      {"compact-PSF advantage on the nucleus scene", c10_compact_advantage},
      {"CLI determinism and bit-exact persistence", c11_determinism},
  };

  int failures = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    if (only != 0 && static_cast<int>(i + 1) != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    std::string verdict = "PASS";
    std::string detail;
    try {
      detail = criteria[i].fn(ctx);
    } catch (const Failure& f) {
      verdict = "FAIL";
      detail = f.message;
      ++failures;
    } catch (const std::exception& e) {
      verdict = "FAIL";
      detail = std::string("exception: ") + e.what();
      ++failures;
    }
    const double secs = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
    std::printf("[%2zu/11] %s  %s  (%.1f s)  %s\n", i + 1, verdict.c_str(),
                criteria[i].name, secs, detail.c_str());
    std::fflush(stdout);
  }
  if (failures > 0) {
    std::printf("%d criterion(s) FAILED\n", failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}

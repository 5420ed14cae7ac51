#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles/oracles.hpp"
#include "smlm3d/metrics.hpp"
#include "smlm3d/mp.hpp"
#include "smlm3d/rng.hpp"

using namespace smlm3d;

namespace {

struct DeskRig {
  OpticalConfig cfg;
  PupilGrid pupil;
  PhaseMask mask;
  Dictionary dict;

  static DeskRig make(int frame_px = 24, double background = 150.0) {
    OpticalConfig cfg;
    cfg.pupil_samples = 32;
    cfg.axial_range_nm = 1000.0;
    PupilGrid pupil = build_pupil(cfg);
    PhaseMask mask = zernike_mask({{6, 1.2}}, pupil);
    DictionaryConfig dcfg;
    dcfg.z_step_nm = 100.0;
    dcfg.template_radius_px = 8;
    dcfg.null_frames = 200;
    return DeskRig{cfg, pupil, mask,
                   Dictionary(pupil, mask, frame_px, frame_px, background, dcfg)};
  }
};

}  // namespace

TEST_CASE("dictionary: lattice, templates and calibrated threshold") {
  const DeskRig rig = DeskRig::make();
  CHECK(rig.dict.z_values().size() == 10);
  CHECK(rig.dict.z_values().front() == doctest::Approx(-450.0));
  CHECK(rig.dict.z_values().back() == doctest::Approx(450.0));
  CHECK(rig.dict.corr_threshold() > 0.0);
  for (size_t zi = 0; zi < rig.dict.z_values().size(); ++zi) {
    double sum = 0.0;
    for (double v : rig.dict.template_at(zi).data) sum += v;
    CHECK(sum > 0.5);  // unit-photon template, most energy inside the patch
    CHECK(sum <= 1.0 + 1e-9);
  }
}

TEST_CASE("detect_candidate: exact on a lattice point, nearest off-lattice") {
  const DeskRig rig = DeskRig::make();
  const double cam = 110.0;

  // Emitter exactly on the lattice: center of pixel (11, 13), z = -150.
  const Emitter on{13.5 * cam, 11.5 * cam, -150.0, 20000.0};
  const Frame f = render_noiseless(rig.pupil, rig.mask, {&on, 1}, 24, 24);
  Image<double> residual = f.pixels;
  const auto cand = detect_candidate(residual, rig.dict);
  CHECK(cand.col == 13);
  CHECK(cand.row == 11);
  CHECK(cand.z == doctest::Approx(-150.0));
  CHECK(cand.photons == doctest::Approx(20000.0).epsilon(0.05));

  // Off-lattice emitter: nearest lattice point within half a spacing.
  const Emitter off{13.5 * cam + 41.0, 11.5 * cam - 38.0, -178.0, 20000.0};
  const Frame g = render_noiseless(rig.pupil, rig.mask, {&off, 1}, 24, 24);
  Image<double> res2 = g.pixels;
  const auto cand2 = detect_candidate(res2, rig.dict);
  CHECK(std::abs(cand2.x - off.x) <= 0.5 * cam + 1e-9);
  CHECK(std::abs(cand2.y - off.y) <= 0.5 * cam + 1e-9);
  CHECK(std::abs(cand2.z - off.z) <= 50.0 + 1e-9);
}

TEST_CASE("detect_candidate: background-only frames score below threshold") {
  const DeskRig rig = DeskRig::make();
  int below = 0;
  const int trials = 50;
  for (int t = 0; t < trials; ++t) {
    Rng rng(Rng::derive(0xFEED, t));
    Image<double> residual(24, 24);
    for (double& v : residual.data) {
      v = static_cast<double>(rng.poisson(150.0)) - 150.0;
    }
    below += detect_candidate(residual, rig.dict).score < rig.dict.corr_threshold();
  }
  // The threshold is the 99.9th percentile of the null maxima.
  CHECK(below >= trials - 2);  // threshold is the 99.9th pct of 200 null maxima
}

TEST_CASE("mle_refine: noiseless truth is a fixed point") {
  const DeskRig rig = DeskRig::make();
  const Emitter e{12.3 * 110.0, 11.7 * 110.0, 204.0, 20000.0};
  const Frame f = render_noiseless(rig.pupil, rig.mask, {&e, 1}, 24, 24);
  MpConfig cfg;
  Dictionary::Candidate init;
  init.x = e.x;
  init.y = e.y;
  init.z = e.z;
  init.photons = e.photons;
  WindowRect win{2, 2, 20, 20};
  const RefineResult fit =
      mle_refine(rig.pupil, rig.mask, f.pixels, win, init, 0.0, cfg);
  CHECK(fit.refined);
  CHECK(std::abs(fit.x - e.x) < cfg.refine_tol_nm);
  CHECK(std::abs(fit.y - e.y) < cfg.refine_tol_nm);
  CHECK(std::abs(fit.z - e.z) < 5.0 * cfg.refine_tol_nm);
}

TEST_CASE("mle_refine: noisy trials approach the CRLB and unbiased photons") {
  const DeskRig rig = DeskRig::make();
  const double cam = 110.0;
  const Emitter e{12.5 * cam, 12.5 * cam, 150.0, 20000.0};
  const double background = 150.0;

  CrlbOptions copt;
  copt.window_px = 15;
  const CrlbReport bound =
      crlb(rig.pupil, rig.mask, e.z, e.photons, background, copt);

  MpConfig cfg;
  double sq_x = 0.0, sq_y = 0.0, photot = 0.0;
  const int trials = 30;
  for (int t = 0; t < trials; ++t) {
    const Frame clean = render_noiseless(rig.pupil, rig.mask, {&e, 1}, 24, 24);
    const Frame noisy = apply_noise(clean, background, Rng::derive(0xACE, t));
    Dictionary::Candidate init;
    init.x = e.x + 30.0;  // start off-truth
    init.y = e.y - 25.0;
    init.z = e.z + 40.0;
    init.photons = 15000.0;
    WindowRect win{4, 4, 17, 17};
    Image<double> window_counts = noisy.pixels;
    const RefineResult fit = mle_refine(rig.pupil, rig.mask, window_counts, win,
                                        init, background, cfg);
    CHECK(fit.refined);
    sq_x += (fit.x - e.x) * (fit.x - e.x);
    sq_y += (fit.y - e.y) * (fit.y - e.y);
    photot += fit.photons;
  }
  const double rmse_x = std::sqrt(sq_x / trials);
  const double rmse_y = std::sqrt(sq_y / trials);
  // Loose 1.5x guard at 30 trials; the acceptance suite runs the 1.25x
  // criterion at the paper's SNR with 100 trials.
  CHECK(rmse_x <= 1.5 * bound.sigma_x_nm);
  CHECK(rmse_y <= 1.5 * bound.sigma_y_nm);
  CHECK(photot / trials == doctest::Approx(e.photons).epsilon(0.02));
}

TEST_CASE("mp_localize: background-only gives an empty list") {
  const DeskRig rig = DeskRig::make();
  Frame f;
  f.pixels = Image<double>(24, 24, 0.0);
  f.pixel_nm = 110.0;
  Rng rng(0xB06);
  for (double& v : f.pixels.data) v = static_cast<double>(rng.poisson(150.0));
  MpConfig cfg;
  const LocalizationList locs = mp_localize(f, rig.dict, cfg, 150.0);
  CHECK(locs.empty());
}

TEST_CASE("mp_localize: single emitter equals detect+refine by construction") {
  const DeskRig rig = DeskRig::make();
  const Emitter e{12.1 * 110.0, 13.8 * 110.0, -230.0, 25000.0};
  const Frame clean = render_noiseless(rig.pupil, rig.mask, {&e, 1}, 24, 24);
  const Frame noisy = apply_noise(clean, 150.0, 77);

  MpConfig cfg;
  const LocalizationList locs = mp_localize(noisy, rig.dict, cfg, 150.0);
  REQUIRE(locs.size() == 1);

  // Reproduce the first iteration by hand: detect on the background-
  // subtracted residual, then a one-shot MLE against the raw counts.
  Image<double> residual = noisy.pixels;
  for (double& v : residual.data) v -= 150.0;
  Image<double> variance(24, 24, 150.0);
  const auto cand = detect_candidate(residual, rig.dict, &variance);
  WindowRect win;
  win.r0 = std::max(0, cand.row - cfg.refine_window_px);
  win.c0 = std::max(0, cand.col - cfg.refine_window_px);
  win.h = std::min(24, cand.row + cfg.refine_window_px + 1) - win.r0;
  win.w = std::min(24, cand.col + cfg.refine_window_px + 1) - win.c0;
  const RefineResult fit =
      mle_refine(rig.pupil, rig.mask, noisy.pixels, win, cand, 150.0, cfg);
  CHECK(locs[0].x == fit.x);
  CHECK(locs[0].y == fit.y);
  CHECK(locs[0].z == fit.z);
  CHECK(locs[0].photons == fit.photons);

  // And it recovers the truth within the gate.
  CHECK(std::abs(locs[0].x - e.x) < 20.0);
  CHECK(std::abs(locs[0].y - e.y) < 20.0);
  CHECK(std::abs(locs[0].z - e.z) < 50.0);
}

TEST_CASE("mp_localize: two separated emitters, residual monotonicity") {
  const DeskRig rig = DeskRig::make();
  const std::vector<Emitter> ems{{6.5 * 110.0, 6.5 * 110.0, -180.0, 25000.0},
                                 {17.5 * 110.0, 17.2 * 110.0, 240.0, 22000.0}};
  const Frame clean = render_noiseless(rig.pupil, rig.mask, ems, 24, 24);
  const Frame noisy = apply_noise(clean, 150.0, 99);

  MpConfig cfg;
  const LocalizationList locs = mp_localize(noisy, rig.dict, cfg, 150.0);
  REQUIRE(locs.size() == 2);

  LocalizationList gt;
  for (const Emitter& e : ems) gt.push_back({0, e.x, e.y, e.z, e.photons});
  const MatchResult m = match_points(gt, locs, 150.0);
  CHECK(m.tp == 2);
}

TEST_CASE("mp residual bookkeeping: subtract + re-add restores bit-exactly, "
          "clamped energy non-increasing") {
  const DeskRig rig = DeskRig::make();
  const std::vector<Emitter> ems{{7.0 * 110.0, 8.0 * 110.0, -120.0, 30000.0},
                                 {16.0 * 110.0, 15.0 * 110.0, 100.0, 25000.0}};
  const Frame clean = render_noiseless(rig.pupil, rig.mask, ems, 24, 24);
  const Frame noisy = apply_noise(clean, 150.0, 111);

  std::vector<Image<double>> models;
  auto clamped_energy = [](const Image<double>& r) {
    double s = 0.0;
    for (double v : r.data) s += std::max(v, 0.0);
    return s;
  };
  const Image<double> r0 =
      detail::residual_from(noisy.pixels, 150.0, models);
  double prev = clamped_energy(r0);
  for (const Emitter& e : ems) {
    const Frame model = render_noiseless(rig.pupil, rig.mask, {&e, 1}, 24, 24);
    models.push_back(model.pixels);
    const Image<double> r =
        detail::residual_from(noisy.pixels, 150.0, models);
    const double energy = clamped_energy(r);
    CHECK(energy <= prev + 1e-9);
    prev = energy;
  }
  // Pop the last model: the residual is restored bit-exactly.
  const Image<double> with_one = detail::residual_from(
      noisy.pixels, 150.0, std::span<const Image<double>>(models.data(), 1));
  models.pop_back();
  const Image<double> again = detail::residual_from(noisy.pixels, 150.0, models);
  CHECK(again.data == with_one.data);
}

#include "smlm3d/mp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "smlm3d/rng.hpp"

namespace smlm3d {

void MpConfig::validate() const {
  require(max_emitters > 0 && photon_stop > 0.0 && refine_max_iters > 0 &&
              refine_tol_nm > 0.0 && refine_window_px > 0 && fd_step_nm > 0.0,
          ErrorKind::Data, "mp: config fields must be positive");
}

namespace {

// Circular correlation via the padded FFT pair; corr[s] = sum_d r[s+d]*T[d].
void correlate(int pad, const std::vector<cplx>& frame_fft,
               const std::vector<cplx>& templ_fft_conj,
               std::vector<cplx>& scratch, std::vector<cplx>& out) {
  const size_t n = frame_fft.size();
  scratch.resize(n);
  for (size_t i = 0; i < n; ++i) scratch[i] = frame_fft[i] * templ_fft_conj[i];
  out.resize(n);
  fft::backward2(pad, pad, scratch.data(), out.data());
  const double scale = 1.0 / (static_cast<double>(pad) * pad);
  for (cplx& v : out) v *= scale;
}

}  // namespace

Dictionary::Dictionary(const PupilGrid& pupil, const PhaseMask& mask,
                       int frame_h, int frame_w, double background,
                       DictionaryConfig cfg)
    : pupil_(pupil),
      mask_(mask),
      frame_h_(frame_h),
      frame_w_(frame_w),
      background_(background),
      cfg_(cfg) {
  require(frame_h > 0 && frame_w > 0, ErrorKind::Data,
          "dictionary: empty frame geometry");
  require(background >= 0.0, ErrorKind::Data, "dictionary: negative background");
  require(cfg_.z_step_nm > 0.0 && cfg_.template_radius_px > 0, ErrorKind::Data,
          "dictionary: invalid lattice parameters");

  const double extent = pupil.cfg.axial_range_nm;
  const int nz = std::max(1, static_cast<int>(std::lround(extent / cfg_.z_step_nm)));
  const double dz = extent / nz;
  for (int i = 0; i < nz; ++i) {
    z_values_.push_back(-0.5 * extent + (i + 0.5) * dz);
  }

  const int rad = cfg_.template_radius_px;
  const int tpl = 2 * rad + 1;
  pad_ = fft::next_fast_size(std::max(frame_h, frame_w) + tpl);
  const size_t pn = static_cast<size_t>(pad_) * pad_;
  const double cam = pupil.cfg.camera_pixel_nm;

  // Unit-photon template patches, synthesized with the emitter at the center
  // pixel's center, one per axial lattice point.
  std::vector<cplx> buf(pn), fftbuf(pn);
  // FFT of the field-of-view indicator, for truncated-energy maps.
  std::vector<cplx> ones_fft(pn);
  {
    std::fill(buf.begin(), buf.end(), cplx(0.0, 0.0));
    for (int r = 0; r < frame_h; ++r)
      for (int c = 0; c < frame_w; ++c)
        buf[static_cast<size_t>(r) * pad_ + c] = cplx(1.0, 0.0);
    fft::forward2(pad_, pad_, buf.data(), ones_fft.data());
  }

  std::vector<cplx> scratch, corr;
  for (double z : z_values_) {
    const double center = (rad + 0.5) * cam;
    Image<double> patch =
        render_window(pupil_, mask_, center, center, z, 0, 0, tpl, tpl);
    double n2 = 0.0;
    for (double v : patch.data) n2 += v * v;
    require(n2 > 0.0, ErrorKind::Numeric, "dictionary: degenerate template");
    templates_.push_back(patch);
    template_norm2_.push_back(n2);

    // conj(FFT(T0)) with T0 holding T[d] at wrapped offsets d in [-rad, rad].
    std::fill(buf.begin(), buf.end(), cplx(0.0, 0.0));
    for (int dr = -rad; dr <= rad; ++dr) {
      for (int dc = -rad; dc <= rad; ++dc) {
        const int rr = (dr + pad_) % pad_;
        const int cc = (dc + pad_) % pad_;
        buf[static_cast<size_t>(rr) * pad_ + cc] =
            cplx(patch.at(dr + rad, dc + rad), 0.0);
      }
    }
    fft::forward2(pad_, pad_, buf.data(), fftbuf.data());
    std::vector<cplx> conj_fft(pn);
    for (size_t i = 0; i < pn; ++i) conj_fft[i] = std::conj(fftbuf[i]);

    // Truncated-energy map: same correlation with T^2 against the indicator.
    std::fill(buf.begin(), buf.end(), cplx(0.0, 0.0));
    for (int dr = -rad; dr <= rad; ++dr) {
      for (int dc = -rad; dc <= rad; ++dc) {
        const int rr = (dr + pad_) % pad_;
        const int cc = (dc + pad_) % pad_;
        const double t = patch.at(dr + rad, dc + rad);
        buf[static_cast<size_t>(rr) * pad_ + cc] = cplx(t * t, 0.0);
      }
    }
    fft::forward2(pad_, pad_, buf.data(), fftbuf.data());
    std::vector<cplx> sq_conj_fft(pn);
    for (size_t i = 0; i < pn; ++i) sq_conj_fft[i] = std::conj(fftbuf[i]);
    correlate(pad_, ones_fft, sq_conj_fft, scratch, corr);
    Image<double> norm2(frame_h, frame_w);
    for (int r = 0; r < frame_h; ++r)
      for (int c = 0; c < frame_w; ++c)
        norm2.at(r, c) =
            std::max(0.0, corr[static_cast<size_t>(r) * pad_ + c].real());
    norm2_maps_.push_back(std::move(norm2));
    template_fft_conj_.push_back(std::move(conj_fft));
    template_sq_fft_conj_.push_back(std::move(sq_conj_fft));
  }

  // Detection threshold from the background-only null distribution.
  std::vector<double> maxima;
  maxima.reserve(cfg_.null_frames);
  for (int t = 0; t < cfg_.null_frames; ++t) {
    Rng rng(Rng::derive(cfg_.null_seed, static_cast<uint64_t>(t)));
    Image<double> residual(frame_h, frame_w);
    for (double& v : residual.data) {
      v = static_cast<double>(rng.poisson(background_)) - background_;
    }
    maxima.push_back(detect(residual).score);
  }
  std::sort(maxima.begin(), maxima.end());
  const double pos = cfg_.null_quantile * (maxima.size() - 1);
  const size_t lo = static_cast<size_t>(pos);
  const size_t hi = std::min(lo + 1, maxima.size() - 1);
  corr_threshold_ = maxima[lo] + (pos - lo) * (maxima[hi] - maxima[lo]);
}

Dictionary::Candidate Dictionary::detect(const Image<double>& residual,
                                         const Image<double>* variance) const {
  require(residual.h == frame_h_ && residual.w == frame_w_, ErrorKind::Data,
          "detect: residual shape does not match the dictionary geometry");
  require(!variance || (variance->h == frame_h_ && variance->w == frame_w_),
          ErrorKind::Data, "detect: variance map shape mismatch");
  const size_t pn = static_cast<size_t>(pad_) * pad_;
  std::vector<cplx> buf(pn, cplx(0.0, 0.0));
  for (int r = 0; r < frame_h_; ++r) {
    for (int c = 0; c < frame_w_; ++c) {
      buf[static_cast<size_t>(r) * pad_ + c] =
          cplx(std::max(0.0, residual.at(r, c)), 0.0);
    }
  }
  std::vector<cplx> frame_fft(pn);
  fft::forward2(pad_, pad_, buf.data(), frame_fft.data());

  // Shot-noise scale per lattice shift: sum T^2 * variance. With a uniform
  // background this is background * (truncated template norm).
  std::vector<cplx> var_fft;
  if (variance) {
    std::fill(buf.begin(), buf.end(), cplx(0.0, 0.0));
    for (int r = 0; r < frame_h_; ++r) {
      for (int c = 0; c < frame_w_; ++c) {
        buf[static_cast<size_t>(r) * pad_ + c] =
            cplx(std::max(variance->at(r, c), 1e-6), 0.0);
      }
    }
    var_fft.resize(pn);
    fft::forward2(pad_, pad_, buf.data(), var_fft.data());
  }

  Candidate best;
  best.score = -std::numeric_limits<double>::infinity();
  std::vector<cplx> scratch, corr, noise;
  const double cam = pupil_.cfg.camera_pixel_nm;
  for (size_t zi = 0; zi < z_values_.size(); ++zi) {
    correlate(pad_, frame_fft, template_fft_conj_[zi], scratch, corr);
    if (variance) {
      correlate(pad_, var_fft, template_sq_fft_conj_[zi], scratch, noise);
    }
    const Image<double>& norm2 = norm2_maps_[zi];
    const double min_energy = cfg_.min_energy_fraction * template_norm2_[zi];
    for (int r = 0; r < frame_h_; ++r) {
      for (int c = 0; c < frame_w_; ++c) {
        const double n2 = norm2.at(r, c);
        if (n2 < min_energy) continue;
        const size_t idx = static_cast<size_t>(r) * pad_ + c;
        const double cv = corr[idx].real();
        const double noise2 =
            variance ? std::max(noise[idx].real(), 1e-12) : background_ * n2;
        const double score = cv / std::sqrt(noise2);
        if (score > best.score) {
          best.score = score;
          best.row = r;
          best.col = c;
          best.zi = static_cast<int>(zi);
          best.photons = std::max(cv / n2, 1.0);
        }
      }
    }
  }
  best.x = (best.col + 0.5) * cam;
  best.y = (best.row + 0.5) * cam;
  best.z = z_values_[best.zi];
  return best;
}

Dictionary::Candidate detect_candidate(const Image<double>& residual,
                                       const Dictionary& dict,
                                       const Image<double>* variance) {
  return dict.detect(residual, variance);
}

namespace {

struct NllEval {
  double value = 0.0;
  double grad[4] = {0, 0, 0, 0};
  double fisher[4][4] = {};
};

Image<double> model_window(const PupilGrid& pupil, const PhaseMask& mask,
                           const WindowRect& win, double x, double y,
                           double z) {
  return render_window(pupil, mask, x, y, z, win.r0, win.c0, win.h, win.w);
}

double window_nll(const Image<double>& counts, const WindowRect& win,
                  const Image<double>& psf, double photons, double background,
                  const Image<double>* extra) {
  double nll = 0.0;
  for (int r = 0; r < win.h; ++r) {
    for (int c = 0; c < win.w; ++c) {
      const double offset =
          extra ? extra->at(win.r0 + r, win.c0 + c) : 0.0;
      const double mu =
          std::max(photons * psf.at(r, c) + background + offset, 1e-12);
      const double k = counts.at(win.r0 + r, win.c0 + c);
      nll += mu;
      if (k > 0.0) nll -= k * std::log(mu);
    }
  }
  return nll;
}

}  // namespace

RefineResult mle_refine(const PupilGrid& pupil, const PhaseMask& mask,
                        const Image<double>& counts, const WindowRect& window,
                        const Dictionary::Candidate& init, double background,
                        const MpConfig& cfg,
                        const Image<double>* extra_background) {
  cfg.validate();
  require(window.h > 0 && window.w > 0, ErrorKind::Data,
          "mle_refine: empty window");
  require(init.x >= window.c0 * pupil.cfg.camera_pixel_nm &&
              init.x <= (window.c0 + window.w) * pupil.cfg.camera_pixel_nm &&
              init.y >= window.r0 * pupil.cfg.camera_pixel_nm &&
              init.y <= (window.r0 + window.h) * pupil.cfg.camera_pixel_nm,
          ErrorKind::Data, "mle_refine: init outside the window");

  const double cam = pupil.cfg.camera_pixel_nm;
  const double z_half = 0.5 * pupil.cfg.axial_range_nm;
  const double x_lo = window.c0 * cam, x_hi = (window.c0 + window.w) * cam;
  const double y_lo = window.r0 * cam, y_hi = (window.r0 + window.h) * cam;

  double theta[4] = {init.x, init.y, init.z, std::max(init.photons, 1.0)};
  RefineResult out{theta[0], theta[1], theta[2], theta[3], false, 0};

  const double h = cfg.fd_step_nm;
  const double inv2h = 1.0 / (2.0 * h);
  double damping = 1e-3;

  Image<double> base = model_window(pupil, mask, window, theta[0], theta[1], theta[2]);
  double nll = window_nll(counts, window, base, theta[3], background,
                          extra_background);

  for (int iter = 0; iter < cfg.refine_max_iters; ++iter) {
    out.iterations = iter + 1;
    const Image<double> px_p = model_window(pupil, mask, window, theta[0] + h, theta[1], theta[2]);
    const Image<double> px_m = model_window(pupil, mask, window, theta[0] - h, theta[1], theta[2]);
    const Image<double> py_p = model_window(pupil, mask, window, theta[0], theta[1] + h, theta[2]);
    const Image<double> py_m = model_window(pupil, mask, window, theta[0], theta[1] - h, theta[2]);
    const Image<double> pz_p = model_window(pupil, mask, window, theta[0], theta[1], theta[2] + h);
    const Image<double> pz_m = model_window(pupil, mask, window, theta[0], theta[1], theta[2] - h);

    NllEval ev;
    for (int r = 0; r < window.h; ++r) {
      for (int c = 0; c < window.w; ++c) {
        const double p = base.at(r, c);
        const double offset =
            extra_background ? extra_background->at(window.r0 + r, window.c0 + c)
                             : 0.0;
        const double mu = std::max(theta[3] * p + background + offset, 1e-12);
        const double k = counts.at(window.r0 + r, window.c0 + c);
        const double resid = 1.0 - k / mu;
        const double d[4] = {
            theta[3] * (px_p.at(r, c) - px_m.at(r, c)) * inv2h,
            theta[3] * (py_p.at(r, c) - py_m.at(r, c)) * inv2h,
            theta[3] * (pz_p.at(r, c) - pz_m.at(r, c)) * inv2h,
            p,
        };
        const double w = (k > 0.0 ? k : mu) / (mu * mu);
        for (int a = 0; a < 4; ++a) {
          ev.grad[a] += resid * d[a];
          for (int b = a; b < 4; ++b) ev.fisher[a][b] += w * d[a] * d[b];
        }
      }
    }
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < a; ++b) ev.fisher[a][b] = ev.fisher[b][a];

    // Damped Fisher-scoring step with backtracking on the damping.
    bool accepted = false;
    for (int aim = 0; aim < 12 && !accepted; ++aim) {
      double m[4][5];
      for (int a = 0; a < 4; ++a) {
        for (int b = 0; b < 4; ++b) m[a][b] = ev.fisher[a][b];
        m[a][a] *= 1.0 + damping;
        m[a][a] += 1e-12;
        m[a][4] = -ev.grad[a];
      }
      // Gaussian elimination with partial pivoting.
      bool singular = false;
      for (int col = 0; col < 4 && !singular; ++col) {
        int piv = col;
        for (int r = col + 1; r < 4; ++r)
          if (std::abs(m[r][col]) > std::abs(m[piv][col])) piv = r;
        if (std::abs(m[piv][col]) < 1e-300) {
          singular = true;
          break;
        }
        std::swap(m[piv], m[col]);
        for (int r = 0; r < 4; ++r) {
          if (r == col) continue;
          const double f = m[r][col] / m[col][col];
          for (int j = col; j <= 4; ++j) m[r][j] -= f * m[col][j];
        }
      }
      if (singular) {
        damping *= 10.0;
        continue;
      }
      double step[4];
      for (int a = 0; a < 4; ++a) step[a] = m[a][4] / m[a][a];

      double cand[4] = {
          std::clamp(theta[0] + step[0], x_lo, x_hi),
          std::clamp(theta[1] + step[1], y_lo, y_hi),
          std::clamp(theta[2] + step[2], -z_half, z_half),
          std::max(theta[3] + step[3], 1.0),
      };
      Image<double> cand_psf =
          model_window(pupil, mask, window, cand[0], cand[1], cand[2]);
      const double cand_nll = window_nll(counts, window, cand_psf, cand[3],
                                         background, extra_background);
      if (std::isfinite(cand_nll) && cand_nll <= nll) {
        const double move = std::sqrt(
            (cand[0] - theta[0]) * (cand[0] - theta[0]) +
            (cand[1] - theta[1]) * (cand[1] - theta[1]) +
            (cand[2] - theta[2]) * (cand[2] - theta[2]));
        for (int a = 0; a < 4; ++a) theta[a] = cand[a];
        base = std::move(cand_psf);
        nll = cand_nll;
        damping = std::max(damping / 3.0, 1e-9);
        accepted = true;
        if (move < cfg.refine_tol_nm) {
          out.x = theta[0];
          out.y = theta[1];
          out.z = theta[2];
          out.photons = theta[3];
          out.refined = true;
          return out;
        }
      } else {
        damping *= 10.0;
      }
    }
    if (!accepted) break;  // damping exhausted; treat as non-convergence
  }
  // Step cap reached: report the initialization, flagged unrefined.
  return out;
}

namespace detail {

Image<double> residual_from(const Image<double>& frame, double background,
                            std::span<const Image<double>> models) {
  Image<double> r = frame;
  for (double& v : r.data) v -= background;
  for (const Image<double>& m : models) {
    for (size_t i = 0; i < r.size(); ++i) r.data[i] -= m.data[i];
  }
  return r;
}

}  // namespace detail

double estimate_background(const Frame& frame) {
  std::vector<double> v = frame.pixels.data;
  require(!v.empty(), ErrorKind::Data, "estimate_background: empty frame");
  const size_t k = v.size() / 10;
  std::nth_element(v.begin(), v.begin() + k, v.end());
  return v[k];
}

LocalizationList mp_localize(const Frame& frame, const Dictionary& dict,
                             const MpConfig& cfg, double background) {
  cfg.validate();
  require(frame.h() == dict.frame_h() && frame.w() == dict.frame_w(),
          ErrorKind::Data, "mp_localize: frame does not match dictionary");
  const double bg = background >= 0.0 ? background : estimate_background(frame);
  const double corr_stop =
      cfg.corr_stop >= 0.0 ? cfg.corr_stop : dict.corr_threshold();

  const PupilGrid& pupil = dict.pupil();
  const PhaseMask& mask = dict.mask();
  const double cam = pupil.cfg.camera_pixel_nm;
  const int h = frame.h(), w = frame.w();

  LocalizationList out;
  std::vector<Image<double>> models;
  Image<double> model_sum(h, w, 0.0);
  for (int k = 0; k < cfg.max_emitters; ++k) {
    const Image<double> residual =
        detail::residual_from(frame.pixels, bg, models);
    Image<double> variance = model_sum;
    for (double& v : variance.data) v += bg;
    const Dictionary::Candidate cand = dict.detect(residual, &variance);
    if (!(cand.score >= corr_stop)) break;

    WindowRect win;
    win.r0 = std::max(0, cand.row - cfg.refine_window_px);
    win.c0 = std::max(0, cand.col - cfg.refine_window_px);
    win.h = std::min(h, cand.row + cfg.refine_window_px + 1) - win.r0;
    win.w = std::min(w, cand.col + cfg.refine_window_px + 1) - win.c0;

    // Fit against the raw counts; already-fitted emitters enter the expected
    // image as a known offset (no clamping bias).
    const RefineResult fit =
        mle_refine(pupil, mask, frame.pixels, win, cand, bg, cfg, &model_sum);
    if (fit.photons < cfg.photon_stop) break;

    // Model of the fitted emitter over the full frame (x, y clamped inside
    // the FOV open interval for the renderer).
    Emitter e{std::clamp(fit.x, 0.0, w * cam * (1.0 - 1e-12)),
              std::clamp(fit.y, 0.0, h * cam * (1.0 - 1e-12)), fit.z,
              fit.photons};
    Frame model = render_noiseless(pupil, mask, {&e, 1}, h, w);
    for (size_t i = 0; i < model_sum.size(); ++i) {
      model_sum.data[i] += model.pixels.data[i];
    }
    models.push_back(std::move(model.pixels));

    Localization loc;
    loc.x = fit.x;
    loc.y = fit.y;
    loc.z = fit.z;
    loc.photons = fit.photons;
    out.push_back(loc);
  }
  return out;
}

}  // namespace smlm3d

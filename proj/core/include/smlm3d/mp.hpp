#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "smlm3d/fft.hpp"
#include "smlm3d/grid3d.hpp"
#include "smlm3d/image.hpp"
#include "smlm3d/optics.hpp"

namespace smlm3d {

struct MpConfig {
  int max_emitters = 100;
  double photon_stop = 500.0;
  double corr_stop = -1.0;  // < 0: use the dictionary's calibrated threshold
  int refine_max_iters = 60;
  double refine_tol_nm = 0.2;   // converged when the position step is smaller
  int refine_window_px = 10;    // half width of the refinement window
  double fd_step_nm = 1.0;      // central-difference step for model gradients

  void validate() const;
};

struct DictionaryConfig {
  double z_step_nm = 100.0;
  int template_radius_px = 20;
  int null_frames = 200;        // Monte-Carlo background-only calibration
  double null_quantile = 0.999;
  double min_energy_fraction = 0.2;  // candidate gate near FOV edges
  uint64_t null_seed = 0xD1C7;
};

// PSF templates on a coarse lattice (every camera pixel laterally, ~100 nm
// axially), each unit-photon; carries the generating pupil/mask for
// continuous refinement plus the correlation machinery and the calibrated
// detection threshold for one frame geometry and background level.
class Dictionary {
 public:
  Dictionary(const PupilGrid& pupil, const PhaseMask& mask, int frame_h,
             int frame_w, double background, DictionaryConfig cfg = {});

  const PupilGrid& pupil() const { return pupil_; }
  const PhaseMask& mask() const { return mask_; }
  int frame_h() const { return frame_h_; }
  int frame_w() const { return frame_w_; }
  double background() const { return background_; }
  double corr_threshold() const { return corr_threshold_; }
  const std::vector<double>& z_values() const { return z_values_; }
  const Image<double>& template_at(size_t zi) const { return templates_[zi]; }
  int template_radius() const { return cfg_.template_radius_px; }
  const DictionaryConfig& config() const { return cfg_; }

  struct Candidate {
    double x = 0.0, y = 0.0, z = 0.0;
    double photons = 0.0;
    double score = 0.0;  // noise-normalized matched-filter response
    int row = 0, col = 0, zi = 0;
  };

  // Best lattice response over the clamped residual. The score divides the
  // matched filter by the shot-noise scale sqrt(sum T^2 * variance), so the
  // background-only calibration threshold also holds next to already-fitted
  // bright emitters. `variance` is the expected per-pixel intensity
  // (background + fitted models); null means uniform background.
  Candidate detect(const Image<double>& residual,
                   const Image<double>* variance = nullptr) const;

 private:
  PupilGrid pupil_;
  PhaseMask mask_;
  int frame_h_, frame_w_;
  double background_;
  DictionaryConfig cfg_;
  int pad_ = 0;
  std::vector<double> z_values_;
  std::vector<Image<double>> templates_;
  std::vector<double> template_norm2_;
  std::vector<Image<double>> norm2_maps_;
  std::vector<std::vector<cplx>> template_fft_conj_;
  std::vector<std::vector<cplx>> template_sq_fft_conj_;
  double corr_threshold_ = 0.0;
};

// Coarse lattice detection; `residual` is the background-subtracted frame
// (negative values are clamped for the correlation).
Dictionary::Candidate detect_candidate(const Image<double>& residual,
                                       const Dictionary& dict,
                                       const Image<double>* variance = nullptr);

struct RefineResult {
  double x = 0.0, y = 0.0, z = 0.0, photons = 0.0;
  bool refined = false;  // false: step cap or divergence, init returned
  int iterations = 0;
};

struct WindowRect {
  int r0 = 0, c0 = 0, h = 0, w = 0;
};

// Continuous Poisson maximum-likelihood refinement of one emitter against
// `counts` (photon counts over the frame) within `window`, damped
// Fisher-scoring with model derivatives by central differences. The expected
// image is photons*PSF + background (+ extra_background when other fitted
// emitters are treated as a known offset).
RefineResult mle_refine(const PupilGrid& pupil, const PhaseMask& mask,
                        const Image<double>& counts, const WindowRect& window,
                        const Dictionary::Candidate& init, double background,
                        const MpConfig& cfg,
                        const Image<double>* extra_background = nullptr);

// Fit-and-subtract loop: detect on the residual, refine, subtract the
// refined model, repeat until the correlation or photon estimate drops below
// threshold or max_emitters is reached. background < 0 estimates it as the
// frame's 10th-percentile pixel.
LocalizationList mp_localize(const Frame& frame, const Dictionary& dict,
                             const MpConfig& cfg, double background = -1.0);

double estimate_background(const Frame& frame);

namespace detail {
// Residual = frame - background - sum of models, accumulated in fitting
// order; recomputing after removing the last model restores the previous
// residual bit-exactly.
Image<double> residual_from(const Image<double>& frame, double background,
                            std::span<const Image<double>> models);
}  // namespace detail

}  // namespace smlm3d

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "smlm3d/decoder.hpp"
#include "smlm3d/grid3d.hpp"
#include "smlm3d/optics.hpp"

namespace smlm3d {

struct TrainConfig {
  OpticalConfig optics{.pupil_samples = 32, .axial_range_nm = 1000.0};
  int frame_px = 16;  // camera frame is frame_px x frame_px
  int batch = 4;
  int min_emitters = 1;
  int max_emitters = 5;
  double photons_lo = 20000.0;
  double photons_hi = 40000.0;
  double background = 150.0;
  double lr_mask = 0.02;
  double lr_decoder = 2e-3;
  int steps = 2000;
  double voxel_z_nm = 33.0;
  int channels = 32;
  double dilation_sigma = 1.0;
  double w_pos = 1.0;
  double w_l1 = 1e-5;
  uint64_t seed = 1;
  int checkpoint_every = 500;
  double mask_init_amp_rad = 0.1;   // RMS of the smooth random init phase
  double mask_init_smooth_px = 2.0; // Gaussian filter sigma, pupil samples
  int threads = 1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
  GridSpec grid() const {
    return GridSpec::matched(optics, frame_px, frame_px, voxel_z_nm);
  }
};

// Everything the optimizer touches: mask + decoder parameters, their Adam
// moment buffers, the step counter and the (append-only) loss history.
struct TrainState {
  PhaseMask mask;
  DecoderParams<float> decoder;
  std::vector<double> mask_m, mask_v;
  std::vector<float> dec_m, dec_v;
  int64_t step = 0;
  uint64_t seed = 0;
  std::vector<double> loss_history;
  double norm_mean = 0.0;
  double norm_std = 1.0;
  bool norm_frozen = false;
};

struct TrainBatch {
  std::vector<std::vector<Emitter>> emitters;
  std::vector<Frame> frames;   // Poisson-noisy camera images
  std::vector<Grid3D> targets; // dilated occupancy grids
};

// Continuous positions uniform over FOV x axial extent (resampled away from
// voxel collisions), log-uniform photons, frames rendered with the given
// mask plus Poisson noise. Fully determined by (cfg, seed).
TrainBatch sample_batch(const TrainConfig& cfg, const PupilGrid& pupil,
                        const PhaseMask& mask, uint64_t seed);

TrainState init_train_state(const TrainConfig& cfg, const PupilGrid& pupil);

// One Adam update of decoder and mask from the batch gradient (chained
// through the decoder reverse pass and the optics adjoint). Returns the
// batch loss. Aborts with a state dump on non-finite loss.
double train_step(TrainState& state, const TrainBatch& batch,
                  const TrainConfig& cfg, const PupilGrid& pupil);

// Full training loop with fresh batches per step; writes checkpoints under
// out_dir/{step}/, a training log CSV, and the final mask/decoder in their
// file formats. Empty out_dir disables all file output.
TrainState learn_psf(const TrainConfig& cfg, const PupilGrid& pupil,
                     const std::string& out_dir);

void save_train_state(const std::string& dir, const TrainState& state,
                      const TrainConfig& cfg);
TrainState load_train_state(const std::string& dir, TrainConfig* cfg_out);

// Decoder inference: normalize, forward, threshold + local maxima.
LocalizationList decoder_localize(const DecoderParams<float>& params,
                                  const Frame& frame, double norm_mean,
                                  double norm_std, const GridSpec& grid,
                                  double threshold, int radius = 2);

// Fisher-information mask design over a Zernike basis: gradient descent on
// sum_z trace(CRLB_xyz(z)) with coefficient central differences. Singular
// z samples (no axial information) are dropped with a warning.
struct CrlbDesignConfig {
  std::vector<int> noll = {4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15};
  std::vector<double> init_coeffs;  // empty -> zeros
  int z_samples = 16;
  double photons = 30000.0;
  double background = 150.0;
  int iterations = 50;
  double fd_step_rad = 0.01;
  double init_step_rad = 0.2;
  int crlb_window_px = 41;
};

struct CrlbDesignResult {
  PhaseMask mask;
  std::vector<double> coeffs;
  double initial_objective = 0.0;
  double final_objective = 0.0;
  std::vector<std::string> warnings;
};

CrlbDesignResult optimize_mask_crlb(const PupilGrid& pupil,
                                    const CrlbDesignConfig& cfg);

// Finite-difference audit of every gradient path (module-level and
// end-to-end through decoder + optics) at toy sizes, 64-bit.
struct GradAuditReport {
  double optics_max_rel = 0.0;
  double decoder_param_max_rel = 0.0;
  double decoder_input_max_rel = 0.0;
  double loss_max_rel = 0.0;
  double end_to_end_max_rel = 0.0;
};

GradAuditReport gradient_audit(uint64_t seed);

}  // namespace smlm3d

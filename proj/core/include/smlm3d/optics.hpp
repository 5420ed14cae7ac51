#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "smlm3d/common.hpp"
#include "smlm3d/fft.hpp"
#include "smlm3d/image.hpp"

namespace smlm3d {

struct OpticalConfig {
  double numerical_aperture = 1.45;
  double immersion_index = 1.518;
  double wavelength_nm = 670.0;
  double camera_pixel_nm = 110.0;
  int pupil_samples = 128;  // N per side, even
  int upsample = 4;
  double axial_range_nm = 4000.0;

  // Lateral pitch of the hi-res simulation grid (and of the recovery grid).
  double hires_pitch_nm() const { return camera_pixel_nm / upsample; }
};

// Pupil-plane phase pattern in radians on the N x N mask grid, plus the
// circular support. Values outside the aperture never reach the image.
struct PhaseMask {
  int n = 0;
  std::vector<double> phase;
  std::vector<uint8_t> aperture;

  double& at(int r, int c) { return phase[static_cast<size_t>(r) * n + c]; }
  double at(int r, int c) const { return phase[static_cast<size_t>(r) * n + c]; }
  bool in_aperture(int r, int c) const {
    return aperture[static_cast<size_t>(r) * n + c] != 0;
  }
};

// Spatial-frequency sampling of the pupil and the derived FFT geometry.
//
// The aperture disc (k <= NA/lambda) is inscribed in the N x N mask grid and
// the image-plane pitch of the full transform is exactly
// camera_pixel/upsample: the FFT plane size L is chosen as
// round(N*lambda/(2*NA*pitch)) and dk = 1/(L*pitch), which places the
// aperture radius within half a sample of N/2.
struct PupilGrid {
  OpticalConfig cfg;
  int n = 0;          // mask samples per side
  int fft_size = 0;   // L, full-plane transform size
  double dk = 0.0;    // pupil sampling, 1/nm
  double dx = 0.0;    // image-plane pitch, nm (camera_pixel/upsample)
  double k_max = 0.0; // aperture radius NA/lambda, 1/nm
  std::vector<double> kx;  // per column, 1/nm
  std::vector<double> ky;  // per row, 1/nm
  std::vector<double> kz;  // n*n defocus kernel, 0 outside aperture
  std::vector<uint8_t> aperture;
  int aperture_count = 0;
  double norm = 0.0;  // full-plane intensity sum of the flat in-focus pupil

  bool in_aperture(int r, int c) const {
    return aperture[static_cast<size_t>(r) * n + c] != 0;
  }
};

PupilGrid build_pupil(const OpticalConfig& cfg);

PhaseMask flat_mask(const PupilGrid& pupil);

// Noll-indexed Zernike sum on the unit-radius aperture; zero outside.
PhaseMask zernike_mask(const std::vector<std::pair<int, double>>& noll_coeffs,
                       const PupilGrid& pupil);

// Zernike polynomial Z_j (Noll index, Noll normalization) at polar (rho, theta).
double zernike_eval(int noll_index, double rho, double theta);

// Full hi-res intensity slice on the L x L plane, centered (peak of an
// unshifted flat PSF at (L/2, L/2)); sample pitch = pupil.dx. Normalized so
// the flat-mask in-focus slice sums to 1 over the plane; by Parseval the sum
// is mask- and z-invariant.
Image<double> psf_slice(const PupilGrid& pupil, const PhaseMask& mask,
                        double z_nm, double dx_nm = 0.0, double dy_nm = 0.0);

// Expected camera image of a set of emitters: per emitter, the hi-res PSF is
// rendered over the field of view, box-binned upsample x upsample into camera
// pixels, scaled by its photon count, and accumulated (bin-then-sum, so a
// multi-emitter frame equals the sum of single-emitter frames bit-exactly).
Frame render_noiseless(const PupilGrid& pupil, const PhaseMask& mask,
                       std::span<const Emitter> emitters, int h, int w);

// Poisson shot noise around frame + background, reproducible from the seed.
// Optional additive Gaussian read noise (std in photons), clamped at zero.
Frame apply_noise(const Frame& frame, double background, uint64_t seed,
                  double read_noise_std = 0.0);

// dL/dphase for the noiseless rendering path, given dL/dFrame. Pixels outside
// the aperture get exactly zero.
Image<double> mask_gradient(const PupilGrid& pupil, const PhaseMask& mask,
                            std::span<const Emitter> emitters,
                            const Image<double>& upstream);

// Unit-photon camera-binned PSF of an emitter at (x, y, z) over the camera
// pixel window [r0, r0+h_px) x [c0, c0+w_px), via a zoomed (chirp-z)
// transform. Evaluates the same sampled model as render_noiseless to
// transform roundoff.
Image<double> render_window(const PupilGrid& pupil, const PhaseMask& mask,
                            double x_nm, double y_nm, double z_nm, int r0,
                            int c0, int h_px, int w_px);

namespace detail {
// Pupil field with mask, defocus and lateral ramp applied, centered layout
// (k = 0 at sample (n/2, n/2)).
std::vector<cplx> pupil_field(const PupilGrid& pupil, const PhaseMask& mask,
                              double z_nm, double dx_nm, double dy_nm);
}  // namespace detail

}  // namespace smlm3d

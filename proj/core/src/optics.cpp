#include "smlm3d/optics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "smlm3d/rng.hpp"

namespace smlm3d {

namespace {

// Index maps between centered layout (k = 0 or image center at L/2) and the
// raw DFT layout (k = 0 at sample 0). Mutually inverse for any L.
inline int raw_from_centered(int c, int l) { return (c + l - l / 2) % l; }

inline int hi_size(const PupilGrid& p, int cam) { return cam * p.cfg.upsample; }

}  // namespace

PupilGrid build_pupil(const OpticalConfig& cfg) {
  require(cfg.numerical_aperture > 0.0 && cfg.wavelength_nm > 0.0 &&
              cfg.camera_pixel_nm > 0.0 && cfg.axial_range_nm > 0.0,
          ErrorKind::Data, "build_pupil: nonpositive optical parameter");
  require(cfg.numerical_aperture < cfg.immersion_index, ErrorKind::Data,
          "build_pupil: numerical aperture must be below the immersion index");
  require(cfg.pupil_samples >= 8 && cfg.pupil_samples % 2 == 0,
          ErrorKind::Data, "build_pupil: pupil_samples must be even and >= 8");
  require(cfg.upsample >= 1, ErrorKind::Data,
          "build_pupil: upsample_factor must be >= 1");

  PupilGrid p;
  p.cfg = cfg;
  p.n = cfg.pupil_samples;
  p.dx = cfg.hires_pitch_nm();
  p.k_max = cfg.numerical_aperture / cfg.wavelength_nm;
  // L such that the image pitch is exactly dx and the aperture diameter spans
  // ~N mask samples.
  p.fft_size = static_cast<int>(std::lround(
      p.n * cfg.wavelength_nm / (2.0 * cfg.numerical_aperture * p.dx)));
  require(p.fft_size >= p.n, ErrorKind::Data,
          "build_pupil: image pitch too coarse for this pupil sampling");
  p.dk = 1.0 / (p.fft_size * p.dx);

  const int n = p.n;
  p.kx.resize(n);
  p.ky.resize(n);
  for (int i = 0; i < n; ++i) {
    p.kx[i] = (i - n / 2) * p.dk;
    p.ky[i] = (i - n / 2) * p.dk;
  }
  p.kz.assign(static_cast<size_t>(n) * n, 0.0);
  p.aperture.assign(static_cast<size_t>(n) * n, 0);
  const double k_im = cfg.immersion_index / cfg.wavelength_nm;
  const double k_max2 = p.k_max * p.k_max;
  // Row/column 0 carries -N/2*dk, which has no +N/2*dk partner on an even
  // grid; excluding it keeps the sampled pupil point-symmetric (a flat pupil
  // then has exactly zero axial information at focus).
  for (int r = 1; r < n; ++r) {
    for (int c = 1; c < n; ++c) {
      const double kr2 = p.kx[c] * p.kx[c] + p.ky[r] * p.ky[r];
      if (kr2 <= k_max2) {
        const size_t idx = static_cast<size_t>(r) * n + c;
        p.aperture[idx] = 1;
        p.kz[idx] = std::sqrt(k_im * k_im - kr2);
        ++p.aperture_count;
      }
    }
  }
  require(p.aperture_count > 0, ErrorKind::Data, "build_pupil: empty aperture");

  // Photon normalization: full-plane intensity sum of the flat in-focus pupil.
  const int l = p.fft_size;
  std::vector<cplx> field(static_cast<size_t>(l) * l, cplx(0.0, 0.0));
  const int off = l / 2 - n / 2;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      if (!p.aperture[static_cast<size_t>(r) * n + c]) continue;
      const int rr = raw_from_centered(r + off, l);
      const int rc = raw_from_centered(c + off, l);
      field[static_cast<size_t>(rr) * l + rc] = cplx(1.0, 0.0);
    }
  }
  std::vector<cplx> out(field.size());
  fft::forward2(l, l, field.data(), out.data());
  double sum = 0.0;
  for (const cplx& v : out) sum += std::norm(v);
  p.norm = sum;
  return p;
}

PhaseMask flat_mask(const PupilGrid& pupil) {
  PhaseMask m;
  m.n = pupil.n;
  m.phase.assign(static_cast<size_t>(m.n) * m.n, 0.0);
  m.aperture = pupil.aperture;
  return m;
}

namespace detail {

std::vector<cplx> pupil_field(const PupilGrid& p, const PhaseMask& mask,
                              double z_nm, double dx_nm, double dy_nm) {
  require(mask.n == p.n, ErrorKind::Data,
          "pupil_field: mask size does not match pupil sampling");
  const int n = p.n;
  std::vector<cplx> u(static_cast<size_t>(n) * n, cplx(0.0, 0.0));
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const size_t idx = static_cast<size_t>(r) * n + c;
      if (!p.aperture[idx]) continue;
      const double ph = mask.phase[idx] + kTwoPi * z_nm * p.kz[idx] +
                        kTwoPi * (dx_nm * p.kx[c] + dy_nm * p.ky[r]);
      u[idx] = cplx(std::cos(ph), std::sin(ph));
    }
  }
  return u;
}

}  // namespace detail

namespace {

// Embed the centered n x n pupil field into the raw L x L DFT layout and
// transform; output left in raw layout.
void field_to_plane(const PupilGrid& p, const std::vector<cplx>& u,
                    std::vector<cplx>& plane, std::vector<cplx>& scratch) {
  const int n = p.n;
  const int l = p.fft_size;
  scratch.assign(static_cast<size_t>(l) * l, cplx(0.0, 0.0));
  const int off = l / 2 - n / 2;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const cplx v = u[static_cast<size_t>(r) * n + c];
      if (v == cplx(0.0, 0.0)) continue;
      const int rr = raw_from_centered(r + off, l);
      const int rc = raw_from_centered(c + off, l);
      scratch[static_cast<size_t>(rr) * l + rc] = v;
    }
  }
  plane.resize(scratch.size());
  fft::forward2(l, l, scratch.data(), plane.data());
}

}  // namespace

Image<double> psf_slice(const PupilGrid& pupil, const PhaseMask& mask,
                        double z_nm, double dx_nm, double dy_nm) {
  const auto u = detail::pupil_field(pupil, mask, z_nm, dx_nm, dy_nm);
  std::vector<cplx> plane, scratch;
  field_to_plane(pupil, u, plane, scratch);
  const int l = pupil.fft_size;
  Image<double> img(l, l);
  const double inv_norm = 1.0 / pupil.norm;
  for (int r = 0; r < l; ++r) {
    const int rr = raw_from_centered(r, l);
    for (int c = 0; c < l; ++c) {
      const int rc = raw_from_centered(c, l);
      img.at(r, c) = std::norm(plane[static_cast<size_t>(rr) * l + rc]) * inv_norm;
    }
  }
  return img;
}

namespace {

struct Placement {
  int row0 = 0;  // hi-res row of the patch's centered sample (L/2, L/2)
  int col0 = 0;
  double frac_x = 0.0;  // sub-sample remainder, nm
  double frac_y = 0.0;
};

Placement place_emitter(const PupilGrid& p, const Emitter& e) {
  Placement pl;
  const double gx = e.x / p.dx - 0.5;  // hi-res sample whose center is at e.x
  const double gy = e.y / p.dx - 0.5;
  pl.col0 = static_cast<int>(std::lround(gx));
  pl.row0 = static_cast<int>(std::lround(gy));
  pl.frac_x = (gx - pl.col0) * p.dx;
  pl.frac_y = (gy - pl.row0) * p.dx;
  return pl;
}

void check_emitters(std::span<const Emitter> emitters, double fov_x,
                    double fov_y) {
  for (size_t i = 0; i < emitters.size(); ++i) {
    const Emitter& e = emitters[i];
    if (!(e.x >= 0.0 && e.x < fov_x && e.y >= 0.0 && e.y < fov_y)) {
      throw DataError("emitter " + std::to_string(i) +
                      " outside the field of view");
    }
    require(e.photons > 0.0, ErrorKind::Data,
            "emitter " + std::to_string(i) + " has nonpositive photons");
  }
}

}  // namespace

Frame render_noiseless(const PupilGrid& pupil, const PhaseMask& mask,
                       std::span<const Emitter> emitters, int h, int w) {
  require(h > 0 && w > 0, ErrorKind::Data, "render_noiseless: empty frame");
  const double cam = pupil.cfg.camera_pixel_nm;
  check_emitters(emitters, w * cam, h * cam);

  Frame frame;
  frame.pixels = Image<double>(h, w, 0.0);
  frame.pixel_nm = cam;
  frame.background = 0.0;

  const int l = pupil.fft_size;
  const int u_f = pupil.cfg.upsample;
  const int hh = hi_size(pupil, h);
  const int hw = hi_size(pupil, w);
  const double inv_norm = 1.0 / pupil.norm;

  std::vector<cplx> plane, scratch;
  Image<double> cam_patch;
  for (const Emitter& e : emitters) {
    const Placement pl = place_emitter(pupil, e);
    const auto field =
        detail::pupil_field(pupil, mask, e.z, pl.frac_x, pl.frac_y);
    field_to_plane(pupil, field, plane, scratch);
    // Bin this emitter's hi-res intensity into its own camera patch, then
    // accumulate; multi-emitter frames are bit-exact sums of single frames.
    cam_patch = Image<double>(h, w, 0.0);
    for (int r = 0; r < l; ++r) {
      const int gr = pl.row0 + (r - l / 2);
      if (gr < 0 || gr >= hh) continue;
      const int rr = raw_from_centered(r, l);
      double* row = &cam_patch.at(gr / u_f, 0);
      for (int c = 0; c < l; ++c) {
        const int gc = pl.col0 + (c - l / 2);
        if (gc < 0 || gc >= hw) continue;
        const int rc = raw_from_centered(c, l);
        row[gc / u_f] +=
            std::norm(plane[static_cast<size_t>(rr) * l + rc]) * inv_norm;
      }
    }
    for (size_t i = 0; i < frame.pixels.size(); ++i) {
      frame.pixels.data[i] += e.photons * cam_patch.data[i];
    }
  }
  return frame;
}

Frame apply_noise(const Frame& frame, double background, uint64_t seed,
                  double read_noise_std) {
  require(background >= 0.0, ErrorKind::Data,
          "apply_noise: negative background");
  require(read_noise_std >= 0.0, ErrorKind::Data,
          "apply_noise: negative read noise");
  Frame out = frame;
  out.background = background;
  Rng rng(seed);
  for (double& v : out.pixels.data) {
    double s = static_cast<double>(rng.poisson(v + background));
    if (read_noise_std > 0.0) s += read_noise_std * rng.normal();
    v = std::max(0.0, s);
  }
  return out;
}

Image<double> mask_gradient(const PupilGrid& pupil, const PhaseMask& mask,
                            std::span<const Emitter> emitters,
                            const Image<double>& upstream) {
  const int h = upstream.h;
  const int w = upstream.w;
  require(h > 0 && w > 0, ErrorKind::Data, "mask_gradient: empty upstream");
  const double cam = pupil.cfg.camera_pixel_nm;
  check_emitters(emitters, w * cam, h * cam);

  const int n = pupil.n;
  const int l = pupil.fft_size;
  const int u_f = pupil.cfg.upsample;
  const int hh = hi_size(pupil, h);
  const int hw = hi_size(pupil, w);
  const double inv_norm = 1.0 / pupil.norm;
  const int off = l / 2 - n / 2;

  Image<double> grad(n, n, 0.0);
  std::vector<cplx> plane, scratch, cotangent, adjoint;
  for (const Emitter& e : emitters) {
    const Placement pl = place_emitter(pupil, e);
    const auto field =
        detail::pupil_field(pupil, mask, e.z, pl.frac_x, pl.frac_y);
    field_to_plane(pupil, field, plane, scratch);

    // dL/dU on the raw plane: un-bin the camera cotangent (replication) and
    // apply the modulus-square adjoint h = 2*g*U/norm.
    cotangent.assign(static_cast<size_t>(l) * l, cplx(0.0, 0.0));
    for (int r = 0; r < l; ++r) {
      const int gr = pl.row0 + (r - l / 2);
      if (gr < 0 || gr >= hh) continue;
      const int rr = raw_from_centered(r, l);
      for (int c = 0; c < l; ++c) {
        const int gc = pl.col0 + (c - l / 2);
        if (gc < 0 || gc >= hw) continue;
        const int rc = raw_from_centered(c, l);
        const double g =
            e.photons * upstream.at(gr / u_f, gc / u_f) * inv_norm;
        if (g == 0.0) continue;
        const size_t idx = static_cast<size_t>(rr) * l + rc;
        cotangent[idx] = 2.0 * g * plane[idx];
      }
    }
    adjoint.resize(cotangent.size());
    fft::backward2(l, l, cotangent.data(), adjoint.data());

    // dL/dphase = Im(w * conj(u)) on the mask support.
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < n; ++c) {
        const size_t midx = static_cast<size_t>(r) * n + c;
        if (!pupil.aperture[midx]) continue;
        const int rr = raw_from_centered(r + off, l);
        const int rc = raw_from_centered(c + off, l);
        const cplx wv = adjoint[static_cast<size_t>(rr) * l + rc];
        grad.at(r, c) += std::imag(wv * std::conj(field[midx]));
      }
    }
  }
  return grad;
}

Image<double> render_window(const PupilGrid& pupil, const PhaseMask& mask,
                            double x_nm, double y_nm, double z_nm, int r0,
                            int c0, int h_px, int w_px) {
  require(h_px > 0 && w_px > 0, ErrorKind::Data, "render_window: empty window");
  const int n = pupil.n;
  const int l = pupil.fft_size;
  const int u_f = pupil.cfg.upsample;
  const int mh = h_px * u_f;
  const int mw = w_px * u_f;
  const double theta = 1.0 / l;

  const auto field = detail::pupil_field(pupil, mask, z_nm, 0.0, 0.0);

  thread_local CztPlan plan_rows, plan_cols;
  if (plan_cols.n_in() != n || plan_cols.n_out() != mw ||
      plan_rows.n_out() != mh || plan_cols.theta() != theta) {
    plan_cols = CztPlan(n, mw, theta);
    plan_rows = CztPlan(n, mh, theta);
  }

  // Output sample m maps to hi-res cell (r0*u + m); its offset from the
  // emitter in hi-res samples is m + alpha.
  const double alpha_c = c0 * u_f + 0.5 - x_nm / pupil.dx;
  const double alpha_r = r0 * u_f + 0.5 - y_nm / pupil.dx;
  std::vector<cplx> pre_c, post_c, pre_r, post_r;
  plan_cols.phases(n / 2, alpha_c, pre_c, post_c);
  plan_rows.phases(n / 2, alpha_r, pre_r, post_r);

  // Separable zoomed transform: columns within each mask row, then rows.
  std::vector<cplx> mid(static_cast<size_t>(n) * mw);
  std::vector<cplx> row_out(mw);
  for (int r = 0; r < n; ++r) {
    plan_cols.execute(&field[static_cast<size_t>(r) * n], pre_c.data(),
                      post_c.data(), row_out.data());
    for (int m = 0; m < mw; ++m) mid[static_cast<size_t>(r) * mw + m] = row_out[m];
  }
  std::vector<cplx> col_in(n), col_out(mh);
  Image<double> hi(mh, mw);
  for (int m = 0; m < mw; ++m) {
    for (int r = 0; r < n; ++r) col_in[r] = mid[static_cast<size_t>(r) * mw + m];
    plan_rows.execute(col_in.data(), pre_r.data(), post_r.data(),
                      col_out.data());
    for (int q = 0; q < mh; ++q) hi.at(q, m) = std::norm(col_out[q]);
  }

  Image<double> out(h_px, w_px, 0.0);
  const double inv_norm = 1.0 / pupil.norm;
  for (int r = 0; r < mh; ++r) {
    for (int c = 0; c < mw; ++c) {
      out.at(r / u_f, c / u_f) += hi.at(r, c) * inv_norm;
    }
  }
  return out;
}

}  // namespace smlm3d

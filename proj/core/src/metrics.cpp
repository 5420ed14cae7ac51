#include "smlm3d/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace smlm3d {

namespace {

// Large enough that matching one in-gate pair always beats leaving it
// unmatched, far from overflowing double-exact integer arithmetic.
constexpr double kUnmatchable = 1e9;

double pair_distance(const Localization& a, const Localization& b,
                     bool lateral_only) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  const double dz = lateral_only ? 0.0 : a.z - b.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

}  // namespace

MatchResult match_points(const LocalizationList& gt,
                         const LocalizationList& pred, double threshold_nm,
                         bool lateral_only) {
  require(threshold_nm > 0.0, ErrorKind::Data,
          "match_points: threshold must be > 0");
  MatchResult res;
  res.threshold_nm = threshold_nm;
  res.lateral_only = lateral_only;
  const int ng = static_cast<int>(gt.size());
  const int np = static_cast<int>(pred.size());
  if (ng == 0 || np == 0) {
    res.fp = np;
    res.fn = ng;
    return res;
  }

  const int n = std::max(ng, np);
  std::vector<std::vector<double>> cost(n, std::vector<double>(n, kUnmatchable));
  for (int i = 0; i < ng; ++i) {
    for (int j = 0; j < np; ++j) {
      const double d = pair_distance(gt[i], pred[j], lateral_only);
      if (d <= threshold_nm) cost[i][j] = d;
    }
  }
  const auto col_of_row = detail::hungarian(cost);
  for (int i = 0; i < ng; ++i) {
    const int j = col_of_row[i];
    if (j < 0 || j >= np) continue;
    if (cost[i][j] >= kUnmatchable) continue;
    res.pairs.push_back({i, j, pair_distance(gt[i], pred[j], lateral_only)});
  }
  res.tp = static_cast<int>(res.pairs.size());
  res.fp = np - res.tp;
  res.fn = ng - res.tp;
  return res;
}

double jaccard(const MatchResult& m) {
  const int denom = m.tp + m.fp + m.fn;
  if (denom == 0) return 1.0;
  return static_cast<double>(m.tp) / denom;
}

std::optional<RmseResult> rmse(const MatchResult& m, const LocalizationList& gt,
                               const LocalizationList& pred) {
  if (m.pairs.empty()) return std::nullopt;
  double lat2 = 0.0, ax2 = 0.0;
  for (const MatchPair& p : m.pairs) {
    const Localization& a = gt[p.gt_index];
    const Localization& b = pred[p.pred_index];
    const double dx = a.x - b.x;
    const double dy = a.y - b.y;
    const double dz = a.z - b.z;
    lat2 += dx * dx + dy * dy;
    ax2 += dz * dz;
  }
  const double inv = 1.0 / static_cast<double>(m.pairs.size());
  return RmseResult{std::sqrt(lat2 * inv), std::sqrt(ax2 * inv)};
}

namespace {

// Gauss-Jordan inverse with partial pivoting; reports the parameter whose
// pivot collapses when the matrix is singular.
std::vector<std::vector<double>> invert(std::vector<std::vector<double>> a,
                                        const std::vector<std::string>& names) {
  const int n = static_cast<int>(a.size());
  double scale = 0.0;
  for (int i = 0; i < n; ++i) scale = std::max(scale, std::abs(a[i][i]));
  require(scale > 0.0, ErrorKind::Numeric, "crlb: zero Fisher matrix");

  std::vector<std::vector<double>> inv(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i) inv[i][i] = 1.0;

  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r) {
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    }
    if (std::abs(a[piv][col]) < 1e-12 * scale) {
      throw NumericError("crlb: Fisher matrix singular; no information about " +
                         names[col]);
    }
    std::swap(a[piv], a[col]);
    std::swap(inv[piv], inv[col]);
    const double d = a[col][col];
    for (int j = 0; j < n; ++j) {
      a[col][j] /= d;
      inv[col][j] /= d;
    }
    for (int r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a[r][col];
      if (f == 0.0) continue;
      for (int j = 0; j < n; ++j) {
        a[r][j] -= f * a[col][j];
        inv[r][j] -= f * inv[col][j];
      }
    }
  }
  return inv;
}

}  // namespace

CrlbReport crlb(const PupilGrid& pupil, const PhaseMask& mask, double z_nm,
                double photons, double background, const CrlbOptions& opt) {
  require(photons > 0.0, ErrorKind::Data, "crlb: photons must be > 0");
  require(background >= 0.0, ErrorKind::Data, "crlb: negative background");
  require(opt.window_px >= 5 && opt.window_px % 2 == 1, ErrorKind::Data,
          "crlb: window must be odd and >= 5");

  const int wpx = opt.window_px;
  const double cam = pupil.cfg.camera_pixel_nm;
  // Emitter at the center pixel's center, window in local coordinates.
  const double cx = (wpx / 2 + 0.5) * cam;
  const double cy = cx;

  auto psf = [&](double x, double y, double z) {
    return render_window(pupil, mask, x, y, z, 0, 0, wpx, wpx);
  };

  const Image<double> base = psf(cx, cy, z_nm);
  const double h = opt.step_nm;
  const Image<double> px_p = psf(cx + h, cy, z_nm);
  const Image<double> px_m = psf(cx - h, cy, z_nm);
  const Image<double> py_p = psf(cx, cy + h, z_nm);
  const Image<double> py_m = psf(cx, cy - h, z_nm);
  const Image<double> pz_p = psf(cx, cy, z_nm + h);
  const Image<double> pz_m = psf(cx, cy, z_nm - h);

  const int np = opt.background_nuisance ? 5 : 4;
  std::vector<std::string> names = {"x", "y", "z", "photons"};
  if (opt.background_nuisance) names.push_back("background");

  std::vector<std::vector<double>> fisher(np, std::vector<double>(np, 0.0));
  const double inv2h = 1.0 / (2.0 * h);
  std::vector<double> deriv(np, 0.0);
  for (size_t i = 0; i < base.size(); ++i) {
    const double mu = photons * base.data[i] + background;
    if (mu <= 0.0) continue;
    deriv[0] = photons * (px_p.data[i] - px_m.data[i]) * inv2h;
    deriv[1] = photons * (py_p.data[i] - py_m.data[i]) * inv2h;
    deriv[2] = photons * (pz_p.data[i] - pz_m.data[i]) * inv2h;
    // Central difference in N over step_photons reduces exactly to the PSF
    // because the model is linear in N.
    deriv[3] = base.data[i];
    if (np == 5) deriv[4] = 1.0;
    const double inv_mu = 1.0 / mu;
    for (int a = 0; a < np; ++a) {
      for (int b = a; b < np; ++b) {
        fisher[a][b] += deriv[a] * deriv[b] * inv_mu;
      }
    }
  }
  for (int a = 0; a < np; ++a)
    for (int b = 0; b < a; ++b) fisher[a][b] = fisher[b][a];

  const auto cov = invert(fisher, names);
  for (int a = 0; a < np; ++a) {
    require(cov[a][a] > 0.0 && std::isfinite(cov[a][a]), ErrorKind::Numeric,
            "crlb: non-positive variance bound for " + names[a]);
  }
  CrlbReport rep;
  rep.sigma_x_nm = std::sqrt(cov[0][0]);
  rep.sigma_y_nm = std::sqrt(cov[1][1]);
  rep.sigma_z_nm = std::sqrt(cov[2][2]);
  rep.sigma_photons = std::sqrt(cov[3][3]);
  return rep;
}

}  // namespace smlm3d

#include <cmath>
#include <string>

#include "smlm3d/optics.hpp"

namespace smlm3d {

namespace {

// Noll index -> (radial order n, signed azimuthal m). Even j carries the
// cosine term, odd j the sine term.
void noll_to_nm(int j, int& n, int& m_abs, bool& use_sin) {
  if (j < 1) throw DataError("zernike: unknown Noll index " + std::to_string(j));
  n = 0;
  int j1 = j - 1;
  while (j1 >= n + 1) {
    n += 1;
    j1 -= n;
  }
  m_abs = (n % 2) + 2 * ((j1 + ((n + 1) % 2)) / 2);
  use_sin = (j % 2) == 1 && m_abs != 0;
}

double radial(int n, int m, double rho) {
  double sum = 0.0;
  for (int k = 0; k <= (n - m) / 2; ++k) {
    double num = std::tgamma(n - k + 1.0);
    double den = std::tgamma(k + 1.0) * std::tgamma((n + m) / 2 - k + 1.0) *
                 std::tgamma((n - m) / 2 - k + 1.0);
    double term = num / den * std::pow(rho, n - 2 * k);
    sum += (k % 2 == 0) ? term : -term;
  }
  return sum;
}

}  // namespace

double zernike_eval(int noll_index, double rho, double theta) {
  int n, m_abs;
  bool use_sin;
  noll_to_nm(noll_index, n, m_abs, use_sin);
  const double norm =
      (m_abs == 0) ? std::sqrt(n + 1.0) : std::sqrt(2.0 * (n + 1.0));
  const double ang =
      (m_abs == 0) ? 1.0
                   : (use_sin ? std::sin(m_abs * theta) : std::cos(m_abs * theta));
  return norm * radial(n, m_abs, rho) * ang;
}

PhaseMask zernike_mask(const std::vector<std::pair<int, double>>& noll_coeffs,
                       const PupilGrid& pupil) {
  for (const auto& [j, c] : noll_coeffs) {
    int n, m;
    bool s;
    noll_to_nm(j, n, m, s);  // throws on unknown index
    require(std::isfinite(c), ErrorKind::Data,
            "zernike_mask: non-finite coefficient");
  }
  PhaseMask mask = flat_mask(pupil);
  const int n = pupil.n;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      if (!pupil.in_aperture(r, c)) continue;
      const double kx = pupil.kx[c];
      const double ky = pupil.ky[r];
      const double rho = std::sqrt(kx * kx + ky * ky) / pupil.k_max;
      const double theta = std::atan2(ky, kx);
      double ph = 0.0;
      for (const auto& [j, coeff] : noll_coeffs) {
        ph += coeff * zernike_eval(j, rho, theta);
      }
      mask.at(r, c) = ph;
    }
  }
  return mask;
}

}  // namespace smlm3d

#pragma once

#include <optional>
#include <vector>

#include "smlm3d/grid3d.hpp"
#include "smlm3d/optics.hpp"

namespace smlm3d {

struct MatchPair {
  int gt_index = 0;
  int pred_index = 0;
  double distance_nm = 0.0;
};

struct MatchResult {
  std::vector<MatchPair> pairs;
  int tp = 0;
  int fp = 0;
  int fn = 0;
  double threshold_nm = 150.0;
  bool lateral_only = false;
};

// Distance-gated optimal assignment: maximum cardinality among pairs within
// the threshold, minimum total distance among those. 3D Euclidean by default;
// lateral-only gating available by flag.
MatchResult match_points(const LocalizationList& gt,
                         const LocalizationList& pred,
                         double threshold_nm = 150.0,
                         bool lateral_only = false);

// TP/(TP+FP+FN); defined as 1 when all three are zero.
double jaccard(const MatchResult& m);

struct RmseResult {
  double lateral_nm = 0.0;
  double axial_nm = 0.0;
};

// RMSE over matched pairs only; absent when there are none.
std::optional<RmseResult> rmse(const MatchResult& m, const LocalizationList& gt,
                               const LocalizationList& pred);

struct CrlbOptions {
  int window_px = 41;          // camera window, odd
  double step_nm = 1.0;        // central-difference step for x, y, z
  double step_photons = 1.0;   // central-difference step for N (model linear)
  bool background_nuisance = false;  // add background as a 5th parameter
};

// Per-parameter standard-deviation lower bounds at (z, photons, background).
struct CrlbReport {
  double sigma_x_nm = 0.0;
  double sigma_y_nm = 0.0;
  double sigma_z_nm = 0.0;
  double sigma_photons = 0.0;
};

// Single-emitter Cramér-Rao bounds for the Poisson camera model
// mu_p = photons * PSF_p(x,y,z) + background, Fisher matrix by central
// differences; throws NumericError naming the degenerate parameter when the
// Fisher matrix is singular (flat mask at exact focus has no z information).
CrlbReport crlb(const PupilGrid& pupil, const PhaseMask& mask, double z_nm,
                double photons, double background,
                const CrlbOptions& opt = {});

namespace detail {
// Min-cost perfect matching on a square cost matrix (O(n^3) potentials /
// augmenting paths). Returns the matched column per row.
std::vector<int> hungarian(const std::vector<std::vector<double>>& cost);
}  // namespace detail

}  // namespace smlm3d

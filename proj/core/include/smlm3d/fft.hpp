#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace smlm3d {

using cplx = std::complex<double>;

namespace fft {

// Unnormalized complex DFTs (forward kernel exp(-2*pi*i*n*m/N)); the backward
// transform is the unnormalized adjoint, i.e. backward(forward(x)) = N*x.
// Plans are cached per shape with FFTW_ESTIMATE so results are reproducible
// run to run; execution is thread-safe, plan creation is serialized.
void forward2(int h, int w, const cplx* in, cplx* out);
void backward2(int h, int w, const cplx* in, cplx* out);
void forward1(int n, const cplx* in, cplx* out);
void backward1(int n, const cplx* in, cplx* out);

// Smallest size >= n that factors into {2,3,5,7}.
int next_fast_size(int n);

}  // namespace fft

// Zoomed DFT along one axis (Bluestein):
//   y[m] = sum_n x[n] * exp(-2*pi*i*theta*(n - n0)*(m + alpha)),  m in [0, n_out)
// with arbitrary real centering n0 and output offset alpha. Used to evaluate
// the image-plane field on a window of the hi-res grid without a full-plane
// transform. theta is the product of pupil spacing and image pitch (1/L).
class CztPlan {
 public:
  CztPlan() = default;
  CztPlan(int n_in, int n_out, double theta);

  int n_in() const { return n_in_; }
  int n_out() const { return n_out_; }
  double theta() const { return theta_; }

  // Per-transform phase vectors for a given (n0, alpha).
  void phases(double n0, double alpha, std::vector<cplx>& pre,
              std::vector<cplx>& post) const;

  // y[m] = post[m] * sum_n (x[n]*pre[n]) * exp(-2*pi*i*theta*n*m)
  void execute(const cplx* x, const cplx* pre, const cplx* post,
               cplx* y) const;

 private:
  int n_in_ = 0;
  int n_out_ = 0;
  int conv_ = 0;
  double theta_ = 0.0;
  std::vector<cplx> chirp_in_;   // exp(-i*pi*theta*n^2)
  std::vector<cplx> chirp_out_;  // exp(-i*pi*theta*m^2)
  std::vector<cplx> kernel_fft_;
};

}  // namespace smlm3d

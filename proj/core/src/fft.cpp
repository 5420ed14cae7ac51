#include "smlm3d/fft.hpp"

#include <fftw3.h>

#include <cmath>
#include <map>
#include <mutex>
#include <tuple>
#include <utility>
#include <vector>

#include "smlm3d/common.hpp"

namespace smlm3d {
namespace fft {

namespace {

std::mutex g_plan_mutex;

fftw_complex* fc(const cplx* p) {
  return reinterpret_cast<fftw_complex*>(const_cast<cplx*>(p));
}

// FFTW new-array execution requires the same alignment as the arrays the plan
// was created with. Planning with FFTW_UNALIGNED removes that constraint so
// plans work with std::vector storage.
fftw_plan plan2(int h, int w, int sign) {
  static std::map<std::tuple<int, int, int>, fftw_plan> cache;
  std::lock_guard<std::mutex> lock(g_plan_mutex);
  auto key = std::make_tuple(h, w, sign);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  std::vector<cplx> a(static_cast<size_t>(h) * w), b(a.size());
  fftw_plan p = fftw_plan_dft_2d(h, w, fc(a.data()), fc(b.data()), sign,
                                 FFTW_ESTIMATE | FFTW_UNALIGNED);
  if (!p) throw NumericError("fftw: 2d plan creation failed");
  cache.emplace(key, p);
  return p;
}

fftw_plan plan1(int n, int sign) {
  static std::map<std::pair<int, int>, fftw_plan> cache;
  std::lock_guard<std::mutex> lock(g_plan_mutex);
  auto key = std::make_pair(n, sign);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  std::vector<cplx> a(n), b(n);
  fftw_plan p = fftw_plan_dft_1d(n, fc(a.data()), fc(b.data()), sign,
                                 FFTW_ESTIMATE | FFTW_UNALIGNED);
  if (!p) throw NumericError("fftw: 1d plan creation failed");
  cache.emplace(key, p);
  return p;
}

}  // namespace

void forward2(int h, int w, const cplx* in, cplx* out) {
  fftw_execute_dft(plan2(h, w, FFTW_FORWARD), fc(in), fc(out));
}

void backward2(int h, int w, const cplx* in, cplx* out) {
  fftw_execute_dft(plan2(h, w, FFTW_BACKWARD), fc(in), fc(out));
}

void forward1(int n, const cplx* in, cplx* out) {
  fftw_execute_dft(plan1(n, FFTW_FORWARD), fc(in), fc(out));
}

void backward1(int n, const cplx* in, cplx* out) {
  fftw_execute_dft(plan1(n, FFTW_BACKWARD), fc(in), fc(out));
}

int next_fast_size(int n) {
  for (;; ++n) {
    int m = n;
    for (int f : {2, 3, 5, 7})
      while (m % f == 0) m /= f;
    if (m == 1) return n;
  }
}

}  // namespace fft

CztPlan::CztPlan(int n_in, int n_out, double theta)
    : n_in_(n_in), n_out_(n_out), theta_(theta) {
  conv_ = fft::next_fast_size(n_in + n_out - 1);
  chirp_in_.resize(n_in);
  chirp_out_.resize(n_out);
  for (int n = 0; n < n_in; ++n) {
    const double ph = -kPi * theta * static_cast<double>(n) * n;
    chirp_in_[n] = cplx(std::cos(ph), std::sin(ph));
  }
  for (int m = 0; m < n_out; ++m) {
    const double ph = -kPi * theta * static_cast<double>(m) * m;
    chirp_out_[m] = cplx(std::cos(ph), std::sin(ph));
  }
  // Wrapped linear-convolution kernel b[k] = exp(+i*pi*theta*k^2) for
  // k in (-n_in, n_out), laid out circularly over conv_ samples.
  std::vector<cplx> b(conv_, cplx(0.0, 0.0));
  for (int k = -(n_in - 1); k < n_out; ++k) {
    const double ph = kPi * theta * static_cast<double>(k) * k;
    const cplx v(std::cos(ph), std::sin(ph));
    b[(k + conv_) % conv_] = v;
  }
  kernel_fft_.resize(conv_);
  fft::forward1(conv_, b.data(), kernel_fft_.data());
}

void CztPlan::phases(double n0, double alpha, std::vector<cplx>& pre,
                     std::vector<cplx>& post) const {
  pre.resize(n_in_);
  post.resize(n_out_);
  for (int n = 0; n < n_in_; ++n) {
    const double ph = -kTwoPi * theta_ * n * alpha;
    pre[n] = cplx(std::cos(ph), std::sin(ph));
  }
  const double c0 = kTwoPi * theta_ * n0 * alpha;
  const cplx konst(std::cos(c0), std::sin(c0));
  for (int m = 0; m < n_out_; ++m) {
    const double ph = kTwoPi * theta_ * n0 * m;
    post[m] = konst * cplx(std::cos(ph), std::sin(ph));
  }
}

void CztPlan::execute(const cplx* x, const cplx* pre, const cplx* post,
                      cplx* y) const {
  thread_local std::vector<cplx> a, af;
  a.assign(conv_, cplx(0.0, 0.0));
  for (int n = 0; n < n_in_; ++n) a[n] = x[n] * pre[n] * chirp_in_[n];
  af.resize(conv_);
  fft::forward1(conv_, a.data(), af.data());
  for (int i = 0; i < conv_; ++i) af[i] *= kernel_fft_[i];
  fft::backward1(conv_, af.data(), a.data());
  const double scale = 1.0 / conv_;
  for (int m = 0; m < n_out_; ++m) {
    y[m] = a[m] * scale * chirp_out_[m] * post[m];
  }
}

}  // namespace smlm3d

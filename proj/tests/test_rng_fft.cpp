#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <vector>

#include "oracles/oracles.hpp"
#include "smlm3d/fft.hpp"
#include "smlm3d/rng.hpp"

using namespace smlm3d;

TEST_CASE("rng: deterministic streams") {
  Rng a(42), b(42), c(43);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 1000; ++i) {
    const uint64_t x = a.next_u64();
    all_equal &= (x == b.next_u64());
    any_diff |= (x != c.next_u64());
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("rng: uniform range and log-uniform support") {
  Rng rng(7);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.log_uniform(100.0, 10000.0);
    CHECK(v >= 100.0);
    CHECK(v <= 10000.0);
  }
}

TEST_CASE("rng: poisson moments at lambda=100 within 2% over 1e6 draws") {
  Rng rng(12345);
  std::vector<double> draws(1000000);
  for (double& d : draws) d = static_cast<double>(rng.poisson(100.0));
  const auto m = oracles::moments(draws);
  CHECK(std::abs(m.mean - 100.0) < 2.0);
  CHECK(std::abs(m.variance - 100.0) < 2.0);
}

TEST_CASE("rng: poisson small-mean regime (Knuth branch)") {
  Rng rng(99);
  std::vector<double> draws(400000);
  for (double& d : draws) d = static_cast<double>(rng.poisson(3.0));
  const auto m = oracles::moments(draws);
  CHECK(std::abs(m.mean - 3.0) < 0.02);
  CHECK(std::abs(m.variance - 3.0) < 0.05);
  CHECK(rng.poisson(0.0) == 0);
}

TEST_CASE("rng: normal moments") {
  Rng rng(5);
  std::vector<double> draws(500000);
  for (double& d : draws) d = rng.normal();
  const auto m = oracles::moments(draws);
  CHECK(std::abs(m.mean) < 0.01);
  CHECK(std::abs(m.variance - 1.0) < 0.01);
}

TEST_CASE("fft: matches the naive DFT on a small grid") {
  const int h = 6, w = 9;
  Rng rng(3);
  std::vector<cplx> x(h * w), out(h * w);
  for (cplx& v : x) v = cplx(rng.normal(), rng.normal());
  fft::forward2(h, w, x.data(), out.data());
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      cplx acc(0.0, 0.0);
      for (int rr = 0; rr < h; ++rr) {
        for (int cc = 0; cc < w; ++cc) {
          const double ph = -kTwoPi * (static_cast<double>(r) * rr / h +
                                       static_cast<double>(c) * cc / w);
          acc += x[rr * w + cc] * cplx(std::cos(ph), std::sin(ph));
        }
      }
      CHECK(std::abs(out[r * w + c] - acc) < 1e-10);
    }
  }
}

TEST_CASE("fft: backward is the unnormalized inverse") {
  const int h = 8, w = 8;
  Rng rng(4);
  std::vector<cplx> x(h * w), f(h * w), b(h * w);
  for (cplx& v : x) v = cplx(rng.normal(), rng.normal());
  fft::forward2(h, w, x.data(), f.data());
  fft::backward2(h, w, f.data(), b.data());
  for (int i = 0; i < h * w; ++i) {
    CHECK(std::abs(b[i] - 64.0 * x[i]) < 1e-10);
  }
}

TEST_CASE("czt: matches the naive zoomed DFT") {
  Rng rng(11);
  const int n = 16, m = 23;
  std::vector<cplx> x(n);
  for (cplx& v : x) v = cplx(rng.normal(), rng.normal());

  for (double theta : {1.0 / 269.0, 0.0137, 1.0 / 64.0}) {
    for (double alpha : {0.0, -17.25, 3.5}) {
      const double n0 = n / 2;
      CztPlan plan(n, m, theta);
      std::vector<cplx> pre, post, y(m);
      plan.phases(n0, alpha, pre, post);
      plan.execute(x.data(), pre.data(), post.data(), y.data());
      const auto ref = oracles::naive_zoom_dft(x, m, theta, n0, alpha);
      for (int i = 0; i < m; ++i) {
        CHECK(std::abs(y[i] - ref[i]) < 1e-9);
      }
    }
  }
}

TEST_CASE("fft: next_fast_size") {
  CHECK(fft::next_fast_size(1) == 1);
  CHECK(fft::next_fast_size(17) == 18);
  CHECK(fft::next_fast_size(121) == 125);
  CHECK(fft::next_fast_size(128) == 128);
}

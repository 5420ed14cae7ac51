#include <benchmark/benchmark.h>

#include "smlm3d/codesign.hpp"
#include "smlm3d/decoder.hpp"
#include "smlm3d/metrics.hpp"
#include "smlm3d/mp.hpp"
#include "smlm3d/optics.hpp"
#include "smlm3d/rng.hpp"

using namespace smlm3d;

namespace {

OpticalConfig desk(int pupil = 32) {
  OpticalConfig cfg;
  cfg.pupil_samples = pupil;
  cfg.axial_range_nm = 1000.0;
  return cfg;
}

void BM_psf_slice(benchmark::State& state) {
  const PupilGrid pupil = build_pupil(desk(static_cast<int>(state.range(0))));
  const PhaseMask mask = zernike_mask({{6, 1.2}}, pupil);
  double z = 0.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(psf_slice(pupil, mask, z));
    z += 1.0;
  }
}
BENCHMARK(BM_psf_slice)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_render_window(benchmark::State& state) {
  const PupilGrid pupil = build_pupil(desk(static_cast<int>(state.range(0))));
  const PhaseMask mask = zernike_mask({{6, 1.2}}, pupil);
  double x = 1000.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        render_window(pupil, mask, x, 1000.0, 200.0, 0, 0, 21, 21));
    x += 0.37;
  }
}
BENCHMARK(BM_render_window)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_render_frame(benchmark::State& state) {
  const PupilGrid pupil = build_pupil(desk(128));
  const PhaseMask mask = zernike_mask({{6, 1.2}}, pupil);
  SceneSpec scene;
  scene.fov_x_nm = scene.fov_y_nm = 24 * 110.0;
  scene.axial_range_nm = 990.0;
  scene.count = static_cast<int>(state.range(0));
  scene.seed = 9;
  const auto ems = gen_uniform(scene);
  for (auto _ : state) {
    benchmark::DoNotOptimize(render_noiseless(pupil, mask, ems, 24, 24));
  }
}
BENCHMARK(BM_render_frame)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_decoder_forward(benchmark::State& state) {
  const int px = static_cast<int>(state.range(0));
  DecoderArch arch = DecoderArch::toy(30, 32);
  DecoderParams<float> params = init_decoder<float>(arch, 3);
  Image<float> input(px, px);
  Rng rng(4);
  for (auto& v : input.data) v = static_cast<float>(rng.normal());
  for (auto _ : state) {
    benchmark::DoNotOptimize(decoder_forward(params, input, nullptr));
  }
}
BENCHMARK(BM_decoder_forward)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_decoder_backward(benchmark::State& state) {
  const int px = static_cast<int>(state.range(0));
  DecoderArch arch = DecoderArch::toy(30, 32);
  DecoderParams<float> params = init_decoder<float>(arch, 3);
  Image<float> input(px, px);
  Rng rng(4);
  for (auto& v : input.data) v = static_cast<float>(rng.normal());
  ForwardCache<float> cache;
  const auto out = decoder_forward(params, input, &cache);
  Volume<float> g(out.d, out.h, out.w, 1e-3f);
  for (auto _ : state) {
    benchmark::DoNotOptimize(decoder_backward(params, cache, g));
  }
}
BENCHMARK(BM_decoder_backward)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_mask_gradient(benchmark::State& state) {
  const PupilGrid pupil = build_pupil(desk(32));
  const PhaseMask mask = zernike_mask({{6, 1.2}}, pupil);
  std::vector<Emitter> ems{{800, 900, 100, 20000},
                           {1200, 500, -200, 25000},
                           {400, 1300, 300, 15000}};
  Image<double> upstream(16, 16, 0.01);
  for (auto _ : state) {
    benchmark::DoNotOptimize(mask_gradient(pupil, mask, ems, upstream));
  }
}
BENCHMARK(BM_mask_gradient)->Unit(benchmark::kMillisecond);

void BM_mp_localize(benchmark::State& state) {
  const PupilGrid pupil = build_pupil(desk(32));
  const PhaseMask mask = zernike_mask({{6, 1.2}}, pupil);
  DictionaryConfig dcfg;
  dcfg.template_radius_px = 8;
  dcfg.null_frames = 50;
  const Dictionary dict(pupil, mask, 24, 24, 150.0, dcfg);
  SceneSpec scene;
  scene.fov_x_nm = scene.fov_y_nm = 24 * 110.0;
  scene.axial_range_nm = 990.0;
  scene.count = static_cast<int>(state.range(0));
  scene.photons_lo = scene.photons_hi = 25000.0;
  scene.seed = 5;
  const auto ems = gen_uniform(scene);
  const Frame noisy =
      apply_noise(render_noiseless(pupil, mask, ems, 24, 24), 150.0, 6);
  MpConfig cfg;
  for (auto _ : state) {
    benchmark::DoNotOptimize(mp_localize(noisy, dict, cfg, 150.0));
  }
}
BENCHMARK(BM_mp_localize)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_crlb(benchmark::State& state) {
  const PupilGrid pupil = build_pupil(desk(128));
  const PhaseMask mask = zernike_mask({{6, 1.2}}, pupil);
  CrlbOptions opt;
  opt.window_px = 21;
  double z = 100.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(crlb(pupil, mask, z, 30000.0, 150.0, opt));
    z += 1.0;
  }
}
BENCHMARK(BM_crlb)->Unit(benchmark::kMillisecond);

void BM_hungarian(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(7);
  LocalizationList gt, pred;
  for (int i = 0; i < n; ++i) {
    gt.push_back({0, rng.uniform(0, 13000), rng.uniform(0, 13000),
                  rng.uniform(-2000, 2000), 1});
    pred.push_back({0, rng.uniform(0, 13000), rng.uniform(0, 13000),
                    rng.uniform(-2000, 2000), 1});
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(match_points(gt, pred, 150.0));
  }
}
BENCHMARK(BM_hungarian)->Arg(10)->Arg(100)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();

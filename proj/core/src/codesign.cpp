#include "smlm3d/codesign.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

#include "smlm3d/io.hpp"
#include "smlm3d/metrics.hpp"
#include "smlm3d/rng.hpp"
#include "smlm3d/threadpool.hpp"

namespace smlm3d {

using nlohmann::json;
namespace fs = std::filesystem;

void TrainConfig::validate() const {
  require(frame_px > 0 && batch > 0 && steps >= 0, ErrorKind::Data,
          "train: frame, batch and steps must be positive");
  require(min_emitters >= 1 && max_emitters >= min_emitters, ErrorKind::Data,
          "train: bad emitter count range");
  require(photons_lo > 0.0 && photons_hi >= photons_lo, ErrorKind::Data,
          "train: bad photon range");
  require(background >= 0.0, ErrorKind::Data, "train: negative background");
  require(lr_mask >= 0.0 && lr_decoder >= 0.0, ErrorKind::Data,
          "train: negative learning rate");
  require(voxel_z_nm > 0.0 && channels > 0, ErrorKind::Data,
          "train: bad grid/arch parameters");
  require(w_pos >= 0.0 && w_l1 >= 0.0, ErrorKind::Data,
          "train: negative loss weights");
}

namespace {

PhaseMask smooth_random_mask(const PupilGrid& pupil, double amp_rad,
                             double smooth_px, uint64_t seed) {
  const int n = pupil.n;
  PhaseMask mask = flat_mask(pupil);
  if (amp_rad <= 0.0) return mask;
  Rng rng(seed);
  std::vector<double> noise(static_cast<size_t>(n) * n);
  for (double& v : noise) v = rng.normal();

  // Separable Gaussian blur.
  const int rad = std::max(1, static_cast<int>(std::ceil(3.0 * smooth_px)));
  std::vector<double> kernel(2 * rad + 1);
  double ksum = 0.0;
  for (int i = -rad; i <= rad; ++i) {
    kernel[i + rad] = std::exp(-0.5 * i * i / (smooth_px * smooth_px));
    ksum += kernel[i + rad];
  }
  for (double& k : kernel) k /= ksum;
  std::vector<double> tmp(noise.size(), 0.0), smooth(noise.size(), 0.0);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      double acc = 0.0;
      for (int i = -rad; i <= rad; ++i) {
        const int cc = std::clamp(c + i, 0, n - 1);
        acc += kernel[i + rad] * noise[static_cast<size_t>(r) * n + cc];
      }
      tmp[static_cast<size_t>(r) * n + c] = acc;
    }
  }
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      double acc = 0.0;
      for (int i = -rad; i <= rad; ++i) {
        const int rr = std::clamp(r + i, 0, n - 1);
        acc += kernel[i + rad] * tmp[static_cast<size_t>(rr) * n + c];
      }
      smooth[static_cast<size_t>(r) * n + c] = acc;
    }
  }
  double ms = 0.0;
  int count = 0;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      if (!pupil.in_aperture(r, c)) continue;
      const double v = smooth[static_cast<size_t>(r) * n + c];
      ms += v * v;
      ++count;
    }
  }
  const double rms = std::sqrt(ms / std::max(1, count));
  const double scale = rms > 0.0 ? amp_rad / rms : 0.0;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      mask.at(r, c) = pupil.in_aperture(r, c)
                          ? smooth[static_cast<size_t>(r) * n + c] * scale
                          : 0.0;
    }
  }
  return mask;
}

}  // namespace

TrainBatch sample_batch(const TrainConfig& cfg, const PupilGrid& pupil,
                        const PhaseMask& mask, uint64_t seed) {
  cfg.validate();
  const GridSpec grid = cfg.grid();
  const double fov = cfg.frame_px * cfg.optics.camera_pixel_nm;

  TrainBatch batch;
  batch.emitters.resize(cfg.batch);
  batch.frames.resize(cfg.batch);
  batch.targets.resize(cfg.batch);

  parallel_for(cfg.batch, cfg.threads, [&](int f) {
    Rng rng(Rng::derive(seed, static_cast<uint64_t>(f)));
    const int count =
        cfg.min_emitters +
        static_cast<int>(rng.below(cfg.max_emitters - cfg.min_emitters + 1));
    std::vector<Emitter> ems;
    std::unordered_set<long> voxels;
    for (int i = 0; i < count; ++i) {
      for (int attempt = 0; attempt < 10000; ++attempt) {
        Emitter e;
        e.x = rng.uniform(0.0, fov);
        e.y = rng.uniform(0.0, fov);
        e.z = rng.uniform(grid.z_min(), grid.z_max());
        e.photons = cfg.photons_hi > cfg.photons_lo
                        ? rng.log_uniform(cfg.photons_lo, cfg.photons_hi)
                        : cfg.photons_lo;
        const long vx = static_cast<long>((e.x - grid.origin_x) / grid.voxel_xy);
        const long vy = static_cast<long>((e.y - grid.origin_y) / grid.voxel_xy);
        const long vz = static_cast<long>((e.z - grid.origin_z) / grid.voxel_z);
        const long id = (vz * grid.h + vy) * grid.w + vx;
        if (!voxels.insert(id).second) continue;  // avoid voxel collisions
        ems.push_back(e);
        break;
      }
    }
    const uint64_t noise_seed = rng.next_u64();
    Frame clean = render_noiseless(pupil, mask, ems, cfg.frame_px, cfg.frame_px);
    batch.frames[f] = apply_noise(clean, cfg.background, noise_seed);
    batch.targets[f] =
        positions_to_grid(ems, grid, cfg.dilation_sigma, true).grid;
    batch.emitters[f] = std::move(ems);
  });
  return batch;
}

TrainState init_train_state(const TrainConfig& cfg, const PupilGrid& pupil) {
  cfg.validate();
  TrainState s;
  s.seed = cfg.seed;
  s.mask = smooth_random_mask(pupil, cfg.mask_init_amp_rad,
                              cfg.mask_init_smooth_px,
                              Rng::derive(cfg.seed, 0x3A5Cull));
  const GridSpec grid = cfg.grid();
  s.decoder = init_decoder<float>(DecoderArch::toy(grid.d, cfg.channels),
                                  Rng::derive(cfg.seed, 0xDEC0ull));
  s.mask_m.assign(s.mask.phase.size(), 0.0);
  s.mask_v.assign(s.mask.phase.size(), 0.0);
  s.dec_m.assign(s.decoder.param_count(), 0.0f);
  s.dec_v.assign(s.decoder.param_count(), 0.0f);
  return s;
}

namespace {

struct FrameGrads {
  double loss = 0.0;
  DecoderGrads<float> dec;
  Image<double> mask;
};

}  // namespace

double train_step(TrainState& state, const TrainBatch& batch,
                  const TrainConfig& cfg, const PupilGrid& pupil) {
  cfg.validate();
  const int b = static_cast<int>(batch.frames.size());
  require(b > 0, ErrorKind::Data, "train_step: empty batch");
  require(state.mask.n == pupil.n, ErrorKind::Data,
          "train_step: mask/pupil mismatch");

  if (!state.norm_frozen) {
    double sum = 0.0, sum2 = 0.0;
    size_t n = 0;
    for (const Frame& f : batch.frames) {
      for (double v : f.pixels.data) {
        sum += v;
        sum2 += v * v;
      }
      n += f.pixels.size();
    }
    const double mean = sum / n;
    state.norm_mean = mean;
    state.norm_std = std::max(std::sqrt(std::max(sum2 / n - mean * mean, 0.0)),
                              1e-6);
    state.norm_frozen = true;
  }

  std::vector<FrameGrads> per_frame(b);
  parallel_for(b, cfg.threads, [&](int f) {
    const Frame& frame = batch.frames[f];
    Image<float> input(frame.h(), frame.w());
    for (size_t i = 0; i < input.size(); ++i) {
      input.data[i] = static_cast<float>(
          (frame.pixels.data[i] - state.norm_mean) / state.norm_std);
    }
    ForwardCache<float> cache;
    const Volume<float> pred = decoder_forward(state.decoder, input, &cache);

    const Grid3D& target = batch.targets[f];
    Volume<float> target_f(target.values.d, target.values.h, target.values.w);
    for (size_t i = 0; i < target_f.size(); ++i) {
      target_f.data[i] = static_cast<float>(target.values.data[i]);
    }
    const LossResult<float> loss =
        loss_eval(pred, target_f, cfg.w_pos, cfg.w_l1);
    per_frame[f].dec = decoder_backward(state.decoder, cache, loss.grad);
    per_frame[f].loss = loss.value;

    Image<double> upstream(frame.h(), frame.w());
    for (size_t i = 0; i < upstream.size(); ++i) {
      upstream.data[i] =
          static_cast<double>(per_frame[f].dec.input.data[i]) / state.norm_std;
    }
    per_frame[f].mask =
        mask_gradient(pupil, state.mask, batch.emitters[f], upstream);
  });

  // Ordered reduction keeps the update independent of the thread count.
  double loss_sum = 0.0;
  std::vector<float> dec_grad(state.decoder.param_count(), 0.0f);
  Image<double> mask_grad(pupil.n, pupil.n, 0.0);
  for (int f = 0; f < b; ++f) {
    loss_sum += per_frame[f].loss;
    size_t pos = 0;
    for (size_t li = 0; li < per_frame[f].dec.weights.size(); ++li) {
      for (float g : per_frame[f].dec.weights[li]) dec_grad[pos++] += g;
      for (float g : per_frame[f].dec.biases[li]) dec_grad[pos++] += g;
    }
    for (size_t i = 0; i < mask_grad.size(); ++i) {
      mask_grad.data[i] += per_frame[f].mask.data[i];
    }
  }
  const double loss = loss_sum / b;
  if (!std::isfinite(loss)) {
    std::string dump = "diverged_state_step" + std::to_string(state.step);
    try {
      save_train_state(dump, state, cfg);
    } catch (...) {
      dump = "(dump failed)";
    }
    throw NumericError("train_step: non-finite loss at step " +
                       std::to_string(state.step) + "; state dumped to " + dump);
  }
  const float inv_b = 1.0f / static_cast<float>(b);
  for (float& g : dec_grad) g *= inv_b;
  for (double& g : mask_grad.data) g /= b;

  const int64_t t = state.step + 1;
  if (cfg.lr_decoder > 0.0) {
    const float b1 = static_cast<float>(cfg.adam_beta1);
    const float b2 = static_cast<float>(cfg.adam_beta2);
    const float corr1 = 1.0f - std::pow(b1, static_cast<float>(t));
    const float corr2 = 1.0f - std::pow(b2, static_cast<float>(t));
    const float lr = static_cast<float>(cfg.lr_decoder);
    const float eps = static_cast<float>(cfg.adam_eps);
    std::vector<float> flat = state.decoder.flatten();
    for (size_t i = 0; i < flat.size(); ++i) {
      state.dec_m[i] = b1 * state.dec_m[i] + (1.0f - b1) * dec_grad[i];
      state.dec_v[i] = b2 * state.dec_v[i] + (1.0f - b2) * dec_grad[i] * dec_grad[i];
      const float mh = state.dec_m[i] / corr1;
      const float vh = state.dec_v[i] / corr2;
      flat[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
    state.decoder.unflatten(flat);
  }
  if (cfg.lr_mask > 0.0) {
    const double corr1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(t));
    const double corr2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(t));
    for (int r = 0; r < pupil.n; ++r) {
      for (int c = 0; c < pupil.n; ++c) {
        if (!pupil.in_aperture(r, c)) continue;  // pixels outside stay put
        const size_t i = static_cast<size_t>(r) * pupil.n + c;
        const double g = mask_grad.data[i];
        state.mask_m[i] = cfg.adam_beta1 * state.mask_m[i] + (1.0 - cfg.adam_beta1) * g;
        state.mask_v[i] = cfg.adam_beta2 * state.mask_v[i] + (1.0 - cfg.adam_beta2) * g * g;
        const double mh = state.mask_m[i] / corr1;
        const double vh = state.mask_v[i] / corr2;
        state.mask.phase[i] -= cfg.lr_mask * mh / (std::sqrt(vh) + cfg.adam_eps);
      }
    }
  }
  state.step = t;
  state.loss_history.push_back(loss);
  return loss;
}

namespace {

json train_config_to_json(const TrainConfig& c) {
  return json{{"optics", json::parse(io::canonical_optics_json(c.optics))},
              {"frame_px", c.frame_px},
              {"batch", c.batch},
              {"min_emitters", c.min_emitters},
              {"max_emitters", c.max_emitters},
              {"photons_lo", c.photons_lo},
              {"photons_hi", c.photons_hi},
              {"background", c.background},
              {"lr_mask", c.lr_mask},
              {"lr_decoder", c.lr_decoder},
              {"steps", c.steps},
              {"voxel_z_nm", c.voxel_z_nm},
              {"channels", c.channels},
              {"dilation_sigma", c.dilation_sigma},
              {"w_pos", c.w_pos},
              {"w_l1", c.w_l1},
              {"seed", c.seed},
              {"checkpoint_every", c.checkpoint_every},
              {"mask_init_amp_rad", c.mask_init_amp_rad},
              {"mask_init_smooth_px", c.mask_init_smooth_px},
              {"threads", c.threads}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  if (j.contains("optics")) {
    const json& o = j["optics"];
    c.optics.numerical_aperture = o.value("numerical_aperture", c.optics.numerical_aperture);
    c.optics.immersion_index = o.value("immersion_index", c.optics.immersion_index);
    c.optics.wavelength_nm = o.value("wavelength_nm", c.optics.wavelength_nm);
    c.optics.camera_pixel_nm = o.value("camera_pixel_nm", c.optics.camera_pixel_nm);
    c.optics.pupil_samples = o.value("pupil_samples", c.optics.pupil_samples);
    c.optics.upsample = o.value("upsample", c.optics.upsample);
    c.optics.axial_range_nm = o.value("axial_range_nm", c.optics.axial_range_nm);
  }
  c.frame_px = j.value("frame_px", c.frame_px);
  c.batch = j.value("batch", c.batch);
  c.min_emitters = j.value("min_emitters", c.min_emitters);
  c.max_emitters = j.value("max_emitters", c.max_emitters);
  c.photons_lo = j.value("photons_lo", c.photons_lo);
  c.photons_hi = j.value("photons_hi", c.photons_hi);
  c.background = j.value("background", c.background);
  c.lr_mask = j.value("lr_mask", c.lr_mask);
  c.lr_decoder = j.value("lr_decoder", c.lr_decoder);
  c.steps = j.value("steps", c.steps);
  c.voxel_z_nm = j.value("voxel_z_nm", c.voxel_z_nm);
  c.channels = j.value("channels", c.channels);
  c.dilation_sigma = j.value("dilation_sigma", c.dilation_sigma);
  c.w_pos = j.value("w_pos", c.w_pos);
  c.w_l1 = j.value("w_l1", c.w_l1);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.mask_init_amp_rad = j.value("mask_init_amp_rad", c.mask_init_amp_rad);
  c.mask_init_smooth_px = j.value("mask_init_smooth_px", c.mask_init_smooth_px);
  c.threads = j.value("threads", c.threads);
  return c;
}

}  // namespace

void save_train_state(const std::string& dir, const TrainState& state,
                      const TrainConfig& cfg) {
  fs::create_directories(dir);
  io::save_mask(dir + "/mask.bin", state.mask, cfg.optics);
  io::DecoderManifest man;
  man.arch = state.decoder.arch;
  man.init_seed = Rng::derive(cfg.seed, 0xDEC0ull);
  man.norm_mean = state.norm_mean;
  man.norm_std = state.norm_std;
  man.voxel_z_nm = cfg.voxel_z_nm;
  man.optics_fingerprint = io::optics_fingerprint(cfg.optics);
  io::save_decoder_checkpoint(dir + "/decoder.bin", dir + "/decoder.json",
                              state.decoder, man);

  std::vector<char> moments;
  auto push = [&moments](const void* p, size_t n) {
    const char* c = static_cast<const char*>(p);
    moments.insert(moments.end(), c, c + n);
  };
  const uint64_t nm = state.mask_m.size();
  const uint64_t nd = state.dec_m.size();
  push(&nm, 8);
  push(&nd, 8);
  push(state.mask_m.data(), nm * 8);
  push(state.mask_v.data(), nm * 8);
  push(state.dec_m.data(), nd * 4);
  push(state.dec_v.data(), nd * 4);
  io::write_bytes(dir + "/moments.bin", moments.data(), moments.size());

  json j{{"format", "smlm3d-train-state"},
         {"version", 1},
         {"step", state.step},
         {"seed", state.seed},
         {"norm_mean", state.norm_mean},
         {"norm_std", state.norm_std},
         {"norm_frozen", state.norm_frozen},
         {"loss_history", state.loss_history},
         {"config", train_config_to_json(cfg)},
         {"moments_checksum_fnv1a64",
          io::hex64(io::fnv1a64(moments.data(), moments.size()))}};
  io::write_text(dir + "/state.json", j.dump(2) + "\n");
}

TrainState load_train_state(const std::string& dir, TrainConfig* cfg_out) {
  const json j = json::parse(io::read_text(dir + "/state.json"));
  require(j.value("format", "") == "smlm3d-train-state" &&
              j.value("version", 0) == 1,
          ErrorKind::Data, dir + "/state.json: wrong format or version");
  TrainConfig cfg = train_config_from_json(j.at("config"));

  TrainState s;
  s.step = j.at("step").get<int64_t>();
  s.seed = j.at("seed").get<uint64_t>();
  s.norm_mean = j.at("norm_mean").get<double>();
  s.norm_std = j.at("norm_std").get<double>();
  s.norm_frozen = j.at("norm_frozen").get<bool>();
  s.loss_history = j.at("loss_history").get<std::vector<double>>();

  const io::MaskFile mf = io::load_mask(dir + "/mask.bin");
  const PupilGrid pupil = build_pupil(mf.optics);
  s.mask = flat_mask(pupil);
  s.mask.phase = mf.phase;

  io::DecoderManifest man;
  s.decoder =
      io::load_decoder_checkpoint(dir + "/decoder.bin", dir + "/decoder.json", &man);

  const auto moments = io::read_bytes(dir + "/moments.bin");
  const std::string expect = j.at("moments_checksum_fnv1a64").get<std::string>();
  const std::string got =
      io::hex64(io::fnv1a64(moments.data(), moments.size()));
  require(expect == got, ErrorKind::Data,
          dir + "/moments.bin: checksum mismatch (" + got + " vs " + expect + ")");
  size_t pos = 0;
  auto pull = [&](void* p, size_t n) {
    require(pos + n <= moments.size(), ErrorKind::Data,
            dir + "/moments.bin: truncated");
    std::memcpy(p, moments.data() + pos, n);
    pos += n;
  };
  uint64_t nm = 0, nd = 0;
  pull(&nm, 8);
  pull(&nd, 8);
  s.mask_m.resize(nm);
  s.mask_v.resize(nm);
  s.dec_m.resize(nd);
  s.dec_v.resize(nd);
  pull(s.mask_m.data(), nm * 8);
  pull(s.mask_v.data(), nm * 8);
  pull(s.dec_m.data(), nd * 4);
  pull(s.dec_v.data(), nd * 4);
  require(pos == moments.size(), ErrorKind::Data,
          dir + "/moments.bin: trailing bytes");
  if (cfg_out) *cfg_out = cfg;
  return s;
}

TrainState learn_psf(const TrainConfig& cfg, const PupilGrid& pupil,
                     const std::string& out_dir) {
  cfg.validate();
  TrainState state = init_train_state(cfg, pupil);

  std::ofstream log;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    log.open(out_dir + "/train_log.csv", std::ios::trunc);
    log << "step,loss,wall_ms\n";
  }
  using clock = std::chrono::steady_clock;
  for (int step = 0; step < cfg.steps; ++step) {
    const auto t0 = clock::now();
    const TrainBatch batch = sample_batch(
        cfg, pupil, state.mask, Rng::derive(cfg.seed, 0xBA7C000ull + step));
    const double loss = train_step(state, batch, cfg, pupil);
    const double ms =
        std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    if (log.is_open()) {
      char line[96];
      std::snprintf(line, sizeof line, "%d,%.17g,%.3f\n", step + 1, loss, ms);
      log << line;
      log.flush();
    }
    if (!out_dir.empty() && cfg.checkpoint_every > 0 &&
        (step + 1) % cfg.checkpoint_every == 0 && step + 1 != cfg.steps) {
      save_train_state(out_dir + "/" + std::to_string(step + 1), state, cfg);
    }
  }
  if (!out_dir.empty()) {
    save_train_state(out_dir + "/" + std::to_string(cfg.steps), state, cfg);
    // Final artifacts at the top level in their interchange formats.
    io::save_mask(out_dir + "/mask.bin", state.mask, cfg.optics);
    io::DecoderManifest man;
    man.arch = state.decoder.arch;
    man.init_seed = Rng::derive(cfg.seed, 0xDEC0ull);
    man.norm_mean = state.norm_mean;
    man.norm_std = state.norm_std;
    man.voxel_z_nm = cfg.voxel_z_nm;
    man.optics_fingerprint = io::optics_fingerprint(cfg.optics);
    io::save_decoder_checkpoint(out_dir + "/decoder.bin",
                                out_dir + "/decoder.json", state.decoder, man);
  }
  return state;
}

LocalizationList decoder_localize(const DecoderParams<float>& params,
                                  const Frame& frame, double norm_mean,
                                  double norm_std, const GridSpec& grid,
                                  double threshold, int radius) {
  Image<float> input(frame.h(), frame.w());
  for (size_t i = 0; i < input.size(); ++i) {
    input.data[i] =
        static_cast<float>((frame.pixels.data[i] - norm_mean) / norm_std);
  }
  const Volume<float> pred = decoder_forward<float>(params, input, nullptr);
  Grid3D g;
  g.spec = grid;
  require(pred.d == grid.d && pred.h == grid.h && pred.w == grid.w,
          ErrorKind::Data, "decoder_localize: grid spec mismatch");
  g.values = Volume<double>(pred.d, pred.h, pred.w);
  for (size_t i = 0; i < pred.size(); ++i) {
    g.values.data[i] = static_cast<double>(pred.data[i]);
  }
  return extract_peaks(g, threshold, radius);
}

CrlbDesignResult optimize_mask_crlb(const PupilGrid& pupil,
                                    const CrlbDesignConfig& cfg) {
  require(!cfg.noll.empty(), ErrorKind::Data, "crlb design: empty basis");
  require(cfg.z_samples >= 3, ErrorKind::Data,
          "crlb design: need at least 3 z samples spanning the axial range");
  require(cfg.photons > 0.0 && cfg.background >= 0.0, ErrorKind::Data,
          "crlb design: bad photon/background settings");

  const size_t k = cfg.noll.size();
  std::vector<double> coeffs = cfg.init_coeffs;
  if (coeffs.empty()) coeffs.assign(k, 0.0);
  require(coeffs.size() == k, ErrorKind::Data,
          "crlb design: init coefficient count mismatch");

  std::vector<double> zs(cfg.z_samples);
  const double range = pupil.cfg.axial_range_nm;
  for (int i = 0; i < cfg.z_samples; ++i) {
    zs[i] = -0.5 * range + (i + 0.5) * range / cfg.z_samples;
  }

  CrlbDesignResult res;
  CrlbOptions copt;
  copt.window_px = cfg.crlb_window_px;

  auto objective = [&](const std::vector<double>& c) {
    std::vector<std::pair<int, double>> pairs;
    for (size_t i = 0; i < k; ++i) pairs.emplace_back(cfg.noll[i], c[i]);
    const PhaseMask mask = zernike_mask(pairs, pupil);
    double total = 0.0;
    int valid = 0;
    for (double z : zs) {
      try {
        const CrlbReport rep =
            crlb(pupil, mask, z, cfg.photons, cfg.background, copt);
        total += rep.sigma_x_nm * rep.sigma_x_nm +
                 rep.sigma_y_nm * rep.sigma_y_nm +
                 rep.sigma_z_nm * rep.sigma_z_nm;
        ++valid;
      } catch (const NumericError& e) {
        res.warnings.push_back("z=" + std::to_string(z) + " nm dropped: " +
                               e.what());
      }
    }
    require(valid > 0, ErrorKind::Numeric,
            "crlb design: Fisher matrix singular at every z sample");
    // Dropped samples are penalized so the optimizer cannot profit from
    // collapsing its own information.
    return total * static_cast<double>(zs.size()) / valid;
  };

  double best = objective(coeffs);
  res.initial_objective = best;
  std::vector<double> best_coeffs = coeffs;
  double step = cfg.init_step_rad;

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    std::vector<double> grad(k, 0.0);
    for (size_t i = 0; i < k; ++i) {
      std::vector<double> cp = best_coeffs, cm = best_coeffs;
      cp[i] += cfg.fd_step_rad;
      cm[i] -= cfg.fd_step_rad;
      grad[i] = (objective(cp) - objective(cm)) / (2.0 * cfg.fd_step_rad);
    }
    double gnorm = 0.0;
    for (double g : grad) gnorm += g * g;
    gnorm = std::sqrt(gnorm);
    if (gnorm < 1e-14) break;

    bool accepted = false;
    for (int bt = 0; bt < 8 && !accepted; ++bt) {
      std::vector<double> cand = best_coeffs;
      for (size_t i = 0; i < k; ++i) cand[i] -= step * grad[i] / gnorm;
      const double obj = objective(cand);
      if (obj < best) {
        best = obj;
        best_coeffs = cand;
        step *= 1.3;
        accepted = true;
      } else {
        step *= 0.5;
      }
    }
    if (!accepted && step < 1e-6) break;
  }

  std::vector<std::pair<int, double>> pairs;
  for (size_t i = 0; i < k; ++i) pairs.emplace_back(cfg.noll[i], best_coeffs[i]);
  res.mask = zernike_mask(pairs, pupil);
  res.coeffs = best_coeffs;
  res.final_objective = best;
  return res;
}

namespace {

double rel_err(double fd, double an) {
  const double denom = std::max({std::abs(fd), std::abs(an), 1e-12});
  return std::abs(fd - an) / denom;
}

// Multi-scale derivative check; see gradient audit notes. Returns the
// smallest central-difference relative error over the scales, or 0 when the
// probe straddles a leaky-ReLU kink at every scale and the analytic value is
// a valid subgradient (between the one-sided derivatives).
template <typename F>
double cd_best_rel(F&& eval, double an, std::initializer_list<double> scales,
                   double denom_floor = 1e-12) {
  const double f0 = eval(0.0);
  double best = 1e300;
  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (double h : scales) {
    const double fp = (eval(h) - f0) / h;
    const double fm = (f0 - eval(-h)) / h;
    const double cd = 0.5 * (fp + fm);
    best = std::min(best, std::abs(cd - an) / std::max({std::abs(cd),
                                                        std::abs(an),
                                                        denom_floor}));
    if (first) {  // widest probe: least FP noise in the one-sided slopes
      lo = std::min(fp, fm);
      hi = std::max(fp, fm);
      first = false;
    }
  }
  const double slack = 1e-4 * (std::abs(lo) + std::abs(hi)) + 1e-9;
  if (best > 1e-4 && an >= lo - slack && an <= hi + slack) return 0.0;
  return best;
}

}  // namespace

GradAuditReport gradient_audit(uint64_t seed) {
  GradAuditReport rep;
  Rng rng(seed);

  // --- optics: mask_gradient vs central differences.
  {
    OpticalConfig cfg;
    cfg.pupil_samples = 32;
    cfg.axial_range_nm = 1000.0;
    const PupilGrid pupil = build_pupil(cfg);
    PhaseMask mask =
        smooth_random_mask(pupil, 0.6, 1.5, rng.next_u64());
    const int px = 12;
    const double fov = px * cfg.camera_pixel_nm;
    std::vector<Emitter> ems;
    for (int i = 0; i < 2; ++i) {
      ems.push_back({rng.uniform(0.2 * fov, 0.8 * fov),
                     rng.uniform(0.2 * fov, 0.8 * fov),
                     rng.uniform(-400.0, 400.0), 1000.0});
    }
    Image<double> upstream(px, px);
    for (double& v : upstream.data) v = rng.normal();

    const Image<double> grad = mask_gradient(pupil, mask, ems, upstream);
    auto loss = [&](const PhaseMask& m) {
      const Frame f = render_noiseless(pupil, m, ems, px, px);
      double s = 0.0;
      for (size_t i = 0; i < f.pixels.size(); ++i) {
        s += upstream.data[i] * f.pixels.data[i];
      }
      return s;
    };
    const double h = 1e-4;
    for (int t = 0; t < 20; ++t) {
      int r, c;
      do {
        r = static_cast<int>(rng.below(pupil.n));
        c = static_cast<int>(rng.below(pupil.n));
      } while (!pupil.in_aperture(r, c));
      PhaseMask mp = mask, mm = mask;
      mp.at(r, c) += h;
      mm.at(r, c) -= h;
      const double fd = (loss(mp) - loss(mm)) / (2.0 * h);
      rep.optics_max_rel = std::max(rep.optics_max_rel, rel_err(fd, grad.at(r, c)));
    }
  }

  // --- decoder: every parameter plus input pixels, tiny net in doubles.
  {
    DecoderArch arch = DecoderArch::toy(3, 4);
    const int hw = 16;
    Image<double> input(hw, hw);
    for (double& v : input.data) v = rng.normal();
    DecoderParams<double> params = init_decoder<double>(arch, rng.next_u64());

    ForwardCache<double> cache;
    Volume<double> out = decoder_forward(params, input, &cache);
    Volume<double> weight(out.d, out.h, out.w);
    for (double& v : weight.data) v = rng.normal();

    DecoderGrads<double> grads = decoder_backward(params, cache, weight);
    auto loss = [&](const DecoderParams<double>& p, const Image<double>& in) {
      const Volume<double> o = decoder_forward<double>(p, in, nullptr);
      double s = 0.0;
      for (size_t i = 0; i < o.size(); ++i) s += weight.data[i] * o.data[i];
      return s;
    };
    std::vector<double> flat = params.flatten();
    std::vector<double> flat_grad;
    for (size_t li = 0; li < grads.weights.size(); ++li) {
      flat_grad.insert(flat_grad.end(), grads.weights[li].begin(),
                       grads.weights[li].end());
      flat_grad.insert(flat_grad.end(), grads.biases[li].begin(),
                       grads.biases[li].end());
    }
    // Finite differences resolve ~1e-8 absolute at this loss scale; small
    // gradients are measured against that floor.
    double gmax = 0.0;
    for (double g : flat_grad) gmax = std::max(gmax, std::abs(g));
    const double floor = 1e-3 * gmax;
    for (size_t i = 0; i < flat.size(); ++i) {
      auto eval = [&](double h) {
        DecoderParams<double> p = params;
        std::vector<double> f = flat;
        f[i] += h;
        p.unflatten(f);
        return loss(p, input);
      };
      rep.decoder_param_max_rel =
          std::max(rep.decoder_param_max_rel,
                   cd_best_rel(eval, flat_grad[i],
                               {1e-6, 1.25e-7, 1.5e-8, 1e-9, 1e-10}, floor));
    }
    for (int t = 0; t < 10; ++t) {
      const size_t i = rng.below(input.size());
      auto eval = [&](double h) {
        Image<double> in = input;
        in.data[i] += h;
        return loss(params, in);
      };
      rep.decoder_input_max_rel =
          std::max(rep.decoder_input_max_rel,
                   cd_best_rel(eval, grads.input.data[i],
                               {1e-6, 1.25e-7, 1.5e-8, 1e-9, 1e-10}, 1e-5));
    }

    // loss_eval gradient.
    Volume<double> target(out.d, out.h, out.w, 0.0);
    for (size_t i = 0; i < target.size(); ++i) {
      target.data[i] = rng.uniform() < 0.01 ? 1.0 : 0.0;
    }
    const LossResult<double> l0 = loss_eval(out, target, 1.0, 1e-3);
    for (int t = 0; t < 10; ++t) {
      const size_t i = rng.below(out.size());
      auto eval = [&](double h) {
        Volume<double> o = out;
        o.data[i] += h;
        return loss_eval(o, target, 1.0, 1e-3).value;
      };
      rep.loss_max_rel = std::max(
          rep.loss_max_rel, cd_best_rel(eval, l0.grad.data[i], {1e-7}));
    }
  }

  // --- end to end: d loss / d mask through decoder + optics, 64-bit.
  {
    OpticalConfig cfg;
    cfg.pupil_samples = 16;
    cfg.axial_range_nm = 660.0;
    const PupilGrid pupil = build_pupil(cfg);
    const int px = 8;
    const GridSpec grid = GridSpec::matched(cfg, px, px, 66.0);
    PhaseMask mask = smooth_random_mask(pupil, 0.5, 1.5, rng.next_u64());
    const double fov = px * cfg.camera_pixel_nm;

    std::vector<Emitter> ems;
    for (int i = 0; i < 2; ++i) {
      ems.push_back({rng.uniform(0.25 * fov, 0.75 * fov),
                     rng.uniform(0.25 * fov, 0.75 * fov),
                     rng.uniform(grid.z_min() * 0.8, grid.z_max() * 0.8),
                     30000.0});
    }
    const Grid3D target = positions_to_grid(ems, grid, 1.0, true).grid;
    Volume<double> target_d = target.values;

    // Normalization constants frozen from the base frame.
    const Frame base = render_noiseless(pupil, mask, ems, px, px);
    double mean = 0.0, sq = 0.0;
    for (double v : base.pixels.data) {
      mean += v;
      sq += v * v;
    }
    mean /= base.pixels.size();
    const double stddev =
        std::max(std::sqrt(sq / base.pixels.size() - mean * mean), 1e-6);

    DecoderArch arch = DecoderArch::toy(grid.d, 6);
    DecoderParams<double> params = init_decoder<double>(arch, rng.next_u64());

    auto pipeline_loss = [&](const PhaseMask& m, Image<double>* upstream_out) {
      const Frame f = render_noiseless(pupil, m, ems, px, px);
      Image<double> input(px, px);
      for (size_t i = 0; i < input.size(); ++i) {
        input.data[i] = (f.pixels.data[i] - mean) / stddev;
      }
      ForwardCache<double> cache;
      const Volume<double> pred = decoder_forward(params, input, &cache);
      const LossResult<double> l = loss_eval(pred, target_d, 1.0, 1e-4);
      if (upstream_out) {
        DecoderGrads<double> g = decoder_backward(params, cache, l.grad);
        *upstream_out = Image<double>(px, px);
        for (size_t i = 0; i < g.input.size(); ++i) {
          upstream_out->data[i] = g.input.data[i] / stddev;
        }
      }
      return l.value;
    };

    Image<double> upstream;
    pipeline_loss(mask, &upstream);
    const Image<double> grad = mask_gradient(pupil, mask, ems, upstream);
    for (int t = 0; t < 10; ++t) {
      int r, c;
      do {
        r = static_cast<int>(rng.below(pupil.n));
        c = static_cast<int>(rng.below(pupil.n));
      } while (!pupil.in_aperture(r, c));
      auto eval = [&](double h) {
        PhaseMask m = mask;
        m.at(r, c) += h;
        return pipeline_loss(m, nullptr);
      };
      rep.end_to_end_max_rel =
          std::max(rep.end_to_end_max_rel,
                   cd_best_rel(eval, grad.at(r, c), {1e-4, 2e-5}));
    }
  }
  return rep;
}

}  // namespace smlm3d

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "oracles/oracles.hpp"
#include "smlm3d/io.hpp"
#include "smlm3d/rng.hpp"
#include "smlm3d/scenes.hpp"

using namespace smlm3d;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("smlm3d_test_" + std::to_string(Rng(::getpid()).next_u64()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("gen_uniform: counts, density arithmetic, determinism") {
  SceneSpec spec;
  spec.fov_x_nm = 13000.0;
  spec.fov_y_nm = 13000.0;
  spec.count = 75;
  spec.seed = 5;
  const auto ems = gen_uniform(spec);
  CHECK(ems.size() == 75);
  CHECK(75.0 / spec.area_um2() == doctest::Approx(0.4438).epsilon(0.01));
  CHECK(21.0 / spec.area_um2() == doctest::Approx(0.124).epsilon(0.01));

  const auto again = gen_uniform(spec);
  for (size_t i = 0; i < ems.size(); ++i) {
    CHECK(ems[i].x == again[i].x);
    CHECK(ems[i].z == again[i].z);
  }

  SceneSpec one = spec;
  one.count = 1;
  CHECK(gen_uniform(one).size() == 1);

  // Density-count consistency check.
  SceneSpec dens = spec;
  dens.count = 0;
  dens.density_per_um2 = 0.124;
  CHECK(gen_uniform(dens).size() == 21);
  dens.count = 50;  // disagrees with density * area = 21
  CHECK_THROWS_AS((void)gen_uniform(dens), DataError);
}

TEST_CASE("gen_uniform: min separation honored; infeasible rejected") {
  SceneSpec spec;
  spec.fov_x_nm = 2000.0;
  spec.fov_y_nm = 2000.0;
  spec.axial_range_nm = 1000.0;
  spec.count = 10;
  spec.min_separation_nm = 300.0;
  spec.seed = 9;
  const auto ems = gen_uniform(spec);
  for (size_t i = 0; i < ems.size(); ++i) {
    for (size_t j = i + 1; j < ems.size(); ++j) {
      const double dx = ems[i].x - ems[j].x;
      const double dy = ems[i].y - ems[j].y;
      const double dz = ems[i].z - ems[j].z;
      CHECK(std::sqrt(dx * dx + dy * dy + dz * dz) >= 300.0);
    }
  }
  SceneSpec impossible = spec;
  impossible.count = 2000;
  CHECK_THROWS_AS((void)gen_uniform(impossible), DataError);
}

TEST_CASE("gen_ellipsoid: sphere radii, octant uniformity, extents") {
  SceneSpec spec;
  spec.fov_x_nm = 8000.0;
  spec.fov_y_nm = 8000.0;
  spec.axial_range_nm = 4000.0;
  spec.count = 10000;
  spec.semi_x_nm = 1500.0;
  spec.semi_y_nm = 1500.0;
  spec.semi_z_nm = 1500.0;
  spec.seed = 4;
  const auto pts = gen_ellipsoid(spec);
  REQUIRE(pts.size() == 10000);
  const double cx = 4000.0, cy = 4000.0;
  long octants[8] = {0};
  for (const Emitter& e : pts) {
    const double dx = e.x - cx, dy = e.y - cy, dz = e.z;
    const double r = std::sqrt(dx * dx + dy * dy + dz * dz);
    CHECK(r == doctest::Approx(1500.0).epsilon(1e-9));
    octants[(dx > 0) * 4 + (dy > 0) * 2 + (dz > 0)]++;
  }
  // Chi-square against equal octants: 3-sigma bound for 7 dof is ~z=3
  // on each cell; use the aggregate statistic < 7 + 3*sqrt(14) = 18.2.
  double chi2 = 0.0;
  const double expect = 10000.0 / 8.0;
  for (long o : octants) chi2 += (o - expect) * (o - expect) / expect;
  CHECK(chi2 < 18.2);

  CHECK(gen_ellipsoid([&] {
          SceneSpec s = spec;
          s.count = 0;
          return s;
        }()).empty());

  SceneSpec big = spec;
  big.semi_z_nm = 2500.0;  // exceeds axial range / 2
  CHECK_THROWS_AS((void)gen_ellipsoid(big), DataError);
}

TEST_CASE("gen_nucleus: defaults match the telomere scene") {
  const SceneSpec spec = nucleus_defaults();
  const auto ems = gen_nucleus(spec);
  CHECK(ems.size() == 62);
  for (const Emitter& e : ems) {
    CHECK(std::abs(e.z) <= 1500.0);
    const double dx = e.x - 0.5 * spec.fov_x_nm;
    const double dy = e.y - 0.5 * spec.fov_y_nm;
    CHECK(std::sqrt(dx * dx + dy * dy) <= 10000.0);
  }
  for (size_t i = 0; i < ems.size(); ++i) {
    for (size_t j = i + 1; j < ems.size(); ++j) {
      const double dx = ems[i].x - ems[j].x;
      const double dy = ems[i].y - ems[j].y;
      const double dz = ems[i].z - ems[j].z;
      CHECK(std::sqrt(dx * dx + dy * dy + dz * dz) >= 400.0);
    }
  }
}

TEST_CASE("io: localization CSV round trip is bit exact") {
  TempDir tmp;
  Rng rng(6);
  LocalizationList locs;
  for (int i = 0; i < 10000; ++i) {
    locs.push_back({static_cast<int>(rng.below(100)), rng.uniform(0, 13000),
                    rng.uniform(0, 13000), rng.uniform(-2000, 2000),
                    rng.log_uniform(100, 60000)});
  }
  const std::string path = tmp.file("loc.csv");
  io::save_localizations(path, locs);
  const LocalizationList back = io::load_localizations(path);
  REQUIRE(back.size() == locs.size());
  for (size_t i = 0; i < locs.size(); ++i) {
    CHECK(back[i].frame == locs[i].frame);
    CHECK(back[i].x == locs[i].x);
    CHECK(back[i].y == locs[i].y);
    CHECK(back[i].z == locs[i].z);
    CHECK(back[i].photons == locs[i].photons);
  }

  // Column mismatch is refused.
  io::write_text(tmp.file("bad.csv"), "frame,x_nm,y_nm,z\n1,2,3,4\n");
  CHECK_THROWS_WITH_AS((void)io::load_localizations(tmp.file("bad.csv")),
                       doctest::Contains("column mismatch"), DataError);
}

TEST_CASE("io: mask round trip, truncation, checksum") {
  TempDir tmp;
  OpticalConfig cfg;
  cfg.pupil_samples = 32;
  const PupilGrid pupil = build_pupil(cfg);
  PhaseMask mask = zernike_mask({{6, 1.1}, {7, -0.3}}, pupil);

  const std::string path = tmp.file("mask.bin");
  io::save_mask(path, mask, cfg);
  const io::MaskFile back = io::load_mask(path);
  CHECK(back.n == 32);
  CHECK(back.optics.numerical_aperture == cfg.numerical_aperture);
  CHECK(back.phase == mask.phase);

  // Truncated payload refused with a diagnostic, not partial data.
  auto bytes = io::read_bytes(path);
  bytes.resize(bytes.size() - 17);
  io::write_bytes(path, bytes.data(), bytes.size());
  CHECK_THROWS_WITH_AS((void)io::load_mask(path), doctest::Contains("corrupt"),
                       DataError);

  // Flipped byte caught by the checksum.
  io::save_mask(path, mask, cfg);
  bytes = io::read_bytes(path);
  bytes[100] = static_cast<char>(bytes[100] ^ 0x40);
  io::write_bytes(path, bytes.data(), bytes.size());
  CHECK_THROWS_WITH_AS((void)io::load_mask(path), doctest::Contains("checksum"),
                       DataError);
}

TEST_CASE("io: frames round trip with f32 payload") {
  TempDir tmp;
  std::vector<Frame> frames(3);
  Rng rng(12);
  for (Frame& f : frames) {
    f.pixels = Image<double>(6, 7);
    for (double& v : f.pixels.data) {
      v = static_cast<double>(rng.poisson(130.0));
    }
    f.pixel_nm = 110.0;
    f.background = 130.0;
  }
  const std::string path = tmp.file("frames.bin");
  io::save_frames(path, frames);
  io::FramesMeta meta;
  const auto back = io::load_frames(path, &meta);
  CHECK(meta.count == 3);
  CHECK(meta.h == 6);
  CHECK(meta.w == 7);
  CHECK(meta.background == 130.0);
  for (int k = 0; k < 3; ++k) {
    CHECK(back[k].pixels.data == frames[k].pixels.data);
  }

  // Round trip through save again is byte-identical.
  const std::string path2 = tmp.file("frames2.bin");
  io::save_frames(path2, back);
  CHECK(io::fnv1a64_file(path) == io::fnv1a64_file(path2));
}

TEST_CASE("io: little-endian golden fixture decodes to known values") {
  TempDir tmp;
  // Two f32 values 1.5 and -2.25 in little-endian bytes.
  const unsigned char payload[8] = {0x00, 0x00, 0xC0, 0x3F,
                                    0x00, 0x00, 0x10, 0xC0};
  const std::string path = tmp.file("golden.bin");
  io::write_bytes(path, payload, sizeof payload);
  const std::string sidecar =
      std::string("{\"format\":\"smlm3d-frames\",\"version\":1,\"h\":1,") +
      "\"w\":2,\"frames\":1,\"pixel_nm\":110.0,\"background\":0.0}";
  io::write_text(path + ".json", sidecar);
  const auto frames = io::load_frames(path);
  REQUIRE(frames.size() == 1);
  CHECK(frames[0].pixels.at(0, 0) == 1.5);
  CHECK(frames[0].pixels.at(0, 1) == -2.25);
}

TEST_CASE("io: report CSV carries absent RMSE as empty fields") {
  TempDir tmp;
  std::vector<io::ReportRow> rows(2);
  rows[0] = {0.124, 0.89, 11.2, 24.5, 57, 2, 5};
  rows[1].density = 0.4;
  rows[1].jaccard = 0.0;
  rows[1].tp = 0;
  rows[1].fp = 3;
  rows[1].fn = 7;
  const std::string path = tmp.file("report.csv");
  io::save_report_csv(path, rows);
  const std::string text = io::read_text(path);
  CHECK(text.find("density,jaccard,rmse_lat_nm,rmse_ax_nm,tp,fp,fn\n") == 0);
  CHECK(text.find("0.40000000000000002,0,,,0,3,7\n") != std::string::npos);
}

TEST_CASE("io: decoder checkpoint round trip") {
  TempDir tmp;
  DecoderArch arch = DecoderArch::toy(9, 6);
  DecoderParams<float> params = init_decoder<float>(arch, 77);
  io::DecoderManifest man;
  man.arch = arch;
  man.init_seed = 77;
  man.norm_mean = 151.5;
  man.norm_std = 42.25;
  man.voxel_z_nm = 33.0;
  man.optics_fingerprint = "f00f";
  io::save_decoder_checkpoint(tmp.file("dec.bin"), tmp.file("dec.json"),
                              params, man);
  io::DecoderManifest back_man;
  const auto back = io::load_decoder_checkpoint(tmp.file("dec.bin"),
                                                tmp.file("dec.json"), &back_man);
  CHECK(back.flatten() == params.flatten());
  CHECK(back_man.norm_mean == 151.5);
  CHECK(back_man.optics_fingerprint == "f00f");
  CHECK(back_man.arch.layers.size() == arch.layers.size());
}

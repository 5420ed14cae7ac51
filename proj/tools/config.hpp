// Config-file parsing and run-manifest helpers shared by the subcommands.
#pragma once

#include <json.hpp>

#include <chrono>
#include <string>
#include <vector>

#include "smlm3d/codesign.hpp"
#include "smlm3d/io.hpp"
#include "smlm3d/mp.hpp"
#include "smlm3d/optics.hpp"
#include "smlm3d/render.hpp"
#include "smlm3d/scenes.hpp"

namespace smlm3d::cli {

using nlohmann::json;

struct FrameGeometry {
  int width_px = 118;
  int height_px = 118;
  int count = 20;
};

struct SweepSpec {
  int min_count = 1;
  int max_count = 75;
  int levels = 10;
};

json load_config(const std::string& path);

OpticalConfig parse_optics(const json& root);
FrameGeometry parse_frame(const json& root);
SceneSpec parse_scene(const json& root, const OpticalConfig& optics,
                      const FrameGeometry& frame);
SweepSpec parse_sweep(const json& root);
PhaseMask build_mask(const json& root, const PupilGrid& pupil);
MpConfig parse_mp(const json& root);
DictionaryConfig parse_dictionary(const json& root);
TrainConfig parse_train(const json& root);
AshConfig parse_render(const json& root, const OpticalConfig& optics);

// Log-spaced emitter counts for a density sweep.
std::vector<int> sweep_counts(const SweepSpec& sweep);

std::string config_fingerprint(const json& resolved);

// Run manifest: one per output directory, listing inputs/outputs with
// content hashes. Wall time is informational and excluded from hashing.
class ManifestWriter {
 public:
  ManifestWriter(std::string command, std::string out_dir,
                 const json& resolved_config, uint64_t seed, int threads);
  void add_input(const std::string& path);
  void add_output(const std::string& path);
  void write();

 private:
  json manifest_;
  std::string out_dir_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace smlm3d::cli

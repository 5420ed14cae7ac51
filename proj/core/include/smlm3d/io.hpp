#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "smlm3d/decoder.hpp"
#include "smlm3d/grid3d.hpp"
#include "smlm3d/image.hpp"
#include "smlm3d/optics.hpp"

namespace smlm3d::io {

uint64_t fnv1a64(const void* data, size_t n);
uint64_t fnv1a64_file(const std::string& path);
std::string hex64(uint64_t v);

std::string read_text(const std::string& path);
void write_text(const std::string& path, const std::string& content);
std::vector<char> read_bytes(const std::string& path);
void write_bytes(const std::string& path, const void* data, size_t n);

// Canonical serialization of the optical configuration; its FNV-1a hash ties
// masks, datasets and checkpoints together.
std::string canonical_optics_json(const OpticalConfig& cfg);
std::string optics_fingerprint(const OpticalConfig& cfg);

// --- Phase mask: raw little-endian f64, row-major N x N radians, with a JSON
// sidecar descriptor at <path>.json (N, NA, lambda, n, pixel pitch, checksum).
void save_mask(const std::string& path, const PhaseMask& mask,
               const OpticalConfig& cfg);
struct MaskFile {
  OpticalConfig optics;
  int n = 0;
  std::vector<double> phase;
};
MaskFile load_mask(const std::string& path);

// --- Frames: raw little-endian f32 (frame-major) with a JSON sidecar
// (H, W, frame count, pixel_nm, background, checksum) at <path>.json.
void save_frames(const std::string& path, const std::vector<Frame>& frames);
struct FramesMeta {
  int h = 0;
  int w = 0;
  int count = 0;
  double pixel_nm = 0.0;
  double background = 0.0;
};
std::vector<Frame> load_frames(const std::string& path,
                               FramesMeta* meta = nullptr);

// --- Localizations and ground-truth emitters share one CSV schema:
// `frame,x_nm,y_nm,z_nm,photons`, doubles at full round-trip precision.
void save_localizations(const std::string& path, const LocalizationList& locs);
LocalizationList load_localizations(const std::string& path);

// --- Evaluation report.
struct ReportRow {
  double density = 0.0;
  double jaccard = 0.0;
  std::optional<double> rmse_lat_nm;
  std::optional<double> rmse_ax_nm;
  long tp = 0;
  long fp = 0;
  long fn = 0;
};
void save_report_csv(const std::string& path,
                     const std::vector<ReportRow>& rows);
void save_report_json(const std::string& path,
                      const std::vector<ReportRow>& rows,
                      const std::string& config_fingerprint,
                      double threshold_nm);

// --- Decoder checkpoint: raw little-endian f32 in declaration order plus a
// JSON manifest (layer specs, init seed, normalization constants, optics
// fingerprint, checksum).
struct DecoderManifest {
  DecoderArch arch;
  uint64_t init_seed = 0;
  double norm_mean = 0.0;
  double norm_std = 1.0;
  double voxel_z_nm = 33.0;
  double peak_threshold = 0.1;
  std::string optics_fingerprint;
};
void save_decoder_checkpoint(const std::string& bin_path,
                             const std::string& json_path,
                             const DecoderParams<float>& params,
                             const DecoderManifest& manifest);
DecoderParams<float> load_decoder_checkpoint(const std::string& bin_path,
                                             const std::string& json_path,
                                             DecoderManifest* manifest);

}  // namespace smlm3d::io

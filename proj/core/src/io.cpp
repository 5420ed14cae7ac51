#include "smlm3d/io.hpp"

#include <bit>
#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace smlm3d::io {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian; byte swapping not implemented");

using nlohmann::json;

uint64_t fnv1a64(const void* data, size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t fnv1a64_file(const std::string& path) {
  const auto bytes = read_bytes(path);
  return fnv1a64(bytes.data(), bytes.size());
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

std::string read_text(const std::string& path) {
  const auto bytes = read_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_text(const std::string& path, const std::string& content) {
  write_bytes(path, content.data(), content.size());
}

std::vector<char> read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw DataError("cannot open file: " + path);
  const std::streamsize n = f.tellg();
  f.seekg(0);
  std::vector<char> bytes(static_cast<size_t>(n));
  if (n > 0 && !f.read(bytes.data(), n)) {
    throw DataError("short read: " + path);
  }
  return bytes;
}

void write_bytes(const std::string& path, const void* data, size_t n) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot create file: " + path);
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!f) throw DataError("short write: " + path);
}

namespace {

json parse_json(const std::string& path) {
  json j = json::parse(read_text(path), nullptr, false);
  if (j.is_discarded()) throw DataError("invalid JSON: " + path);
  return j;
}

void check_version(const json& j, const char* format, const std::string& path) {
  if (!j.contains("format") || j["format"] != format) {
    throw DataError(path + ": wrong format tag (expected " +
                    std::string(format) + ")");
  }
  if (!j.contains("version") || j["version"].get<int>() != 1) {
    throw DataError(path + ": unsupported format version");
  }
}

void check_payload(const std::string& bin_path, const json& sidecar,
                   size_t expected_bytes) {
  const auto bytes = read_bytes(bin_path);
  if (bytes.size() != expected_bytes) {
    throw DataError(bin_path + ": corrupt payload (" +
                    std::to_string(bytes.size()) + " bytes, expected " +
                    std::to_string(expected_bytes) + ")");
  }
  if (sidecar.contains("checksum_fnv1a64")) {
    const std::string expect = sidecar["checksum_fnv1a64"].get<std::string>();
    const std::string got = hex64(fnv1a64(bytes.data(), bytes.size()));
    if (expect != got) {
      throw DataError(bin_path + ": checksum mismatch (sidecar " + expect +
                      ", payload " + got + ")");
    }
  }
}

json optics_to_json(const OpticalConfig& c) {
  return json{{"numerical_aperture", c.numerical_aperture},
              {"immersion_index", c.immersion_index},
              {"wavelength_nm", c.wavelength_nm},
              {"camera_pixel_nm", c.camera_pixel_nm},
              {"pupil_samples", c.pupil_samples},
              {"upsample", c.upsample},
              {"axial_range_nm", c.axial_range_nm}};
}

OpticalConfig optics_from_json(const json& j) {
  OpticalConfig c;
  c.numerical_aperture = j.at("numerical_aperture").get<double>();
  c.immersion_index = j.at("immersion_index").get<double>();
  c.wavelength_nm = j.at("wavelength_nm").get<double>();
  c.camera_pixel_nm = j.at("camera_pixel_nm").get<double>();
  c.pupil_samples = j.at("pupil_samples").get<int>();
  c.upsample = j.at("upsample").get<int>();
  c.axial_range_nm = j.at("axial_range_nm").get<double>();
  return c;
}

}  // namespace

std::string canonical_optics_json(const OpticalConfig& cfg) {
  return optics_to_json(cfg).dump();
}

std::string optics_fingerprint(const OpticalConfig& cfg) {
  const std::string s = canonical_optics_json(cfg);
  return hex64(fnv1a64(s.data(), s.size()));
}

void save_mask(const std::string& path, const PhaseMask& mask,
               const OpticalConfig& cfg) {
  require(mask.n == cfg.pupil_samples, ErrorKind::Data,
          "save_mask: mask size does not match the optics descriptor");
  const size_t nbytes = mask.phase.size() * sizeof(double);
  write_bytes(path, mask.phase.data(), nbytes);
  json j = optics_to_json(cfg);
  j["format"] = "smlm3d-mask";
  j["version"] = 1;
  j["n"] = mask.n;
  j["checksum_fnv1a64"] = hex64(fnv1a64(mask.phase.data(), nbytes));
  write_text(path + ".json", j.dump(2) + "\n");
}

MaskFile load_mask(const std::string& path) {
  const json j = parse_json(path + ".json");
  check_version(j, "smlm3d-mask", path + ".json");
  MaskFile m;
  m.optics = optics_from_json(j);
  m.n = j.at("n").get<int>();
  require(m.n == m.optics.pupil_samples, ErrorKind::Data,
          path + ": sidecar n does not match pupil_samples");
  const size_t count = static_cast<size_t>(m.n) * m.n;
  check_payload(path, j, count * sizeof(double));
  const auto bytes = read_bytes(path);
  m.phase.resize(count);
  std::memcpy(m.phase.data(), bytes.data(), bytes.size());
  return m;
}

void save_frames(const std::string& path, const std::vector<Frame>& frames) {
  require(!frames.empty(), ErrorKind::Data, "save_frames: no frames");
  const int h = frames[0].h(), w = frames[0].w();
  std::vector<float> buf;
  buf.reserve(frames.size() * static_cast<size_t>(h) * w);
  for (const Frame& f : frames) {
    require(f.h() == h && f.w() == w, ErrorKind::Data,
            "save_frames: inhomogeneous frame shapes");
    for (double v : f.pixels.data) buf.push_back(static_cast<float>(v));
  }
  const size_t nbytes = buf.size() * sizeof(float);
  write_bytes(path, buf.data(), nbytes);
  json j{{"format", "smlm3d-frames"},
         {"version", 1},
         {"h", h},
         {"w", w},
         {"frames", static_cast<int>(frames.size())},
         {"pixel_nm", frames[0].pixel_nm},
         {"background", frames[0].background},
         {"checksum_fnv1a64", hex64(fnv1a64(buf.data(), nbytes))}};
  write_text(path + ".json", j.dump(2) + "\n");
}

std::vector<Frame> load_frames(const std::string& path, FramesMeta* meta) {
  const json j = parse_json(path + ".json");
  check_version(j, "smlm3d-frames", path + ".json");
  FramesMeta m;
  m.h = j.at("h").get<int>();
  m.w = j.at("w").get<int>();
  m.count = j.at("frames").get<int>();
  m.pixel_nm = j.at("pixel_nm").get<double>();
  m.background = j.at("background").get<double>();
  const size_t per = static_cast<size_t>(m.h) * m.w;
  check_payload(path, j, per * m.count * sizeof(float));
  const auto bytes = read_bytes(path);
  const float* p = reinterpret_cast<const float*>(bytes.data());
  std::vector<Frame> frames(m.count);
  for (int k = 0; k < m.count; ++k) {
    frames[k].pixels = Image<double>(m.h, m.w);
    for (size_t i = 0; i < per; ++i) {
      frames[k].pixels.data[i] = static_cast<double>(p[k * per + i]);
    }
    frames[k].pixel_nm = m.pixel_nm;
    frames[k].background = m.background;
  }
  if (meta) *meta = m;
  return frames;
}

namespace {

constexpr char kLocHeader[] = "frame,x_nm,y_nm,z_nm,photons";

void append_double(std::string& s, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  s += buf;
}

}  // namespace

void save_localizations(const std::string& path, const LocalizationList& locs) {
  std::string s = kLocHeader;
  s += '\n';
  for (const Localization& l : locs) {
    s += std::to_string(l.frame);
    s += ',';
    append_double(s, l.x);
    s += ',';
    append_double(s, l.y);
    s += ',';
    append_double(s, l.z);
    s += ',';
    append_double(s, l.photons);
    s += '\n';
  }
  write_text(path, s);
}

LocalizationList load_localizations(const std::string& path) {
  const std::string text = read_text(path);
  LocalizationList out;
  size_t pos = 0;
  auto next_line = [&](std::string& line) {
    if (pos >= text.size()) return false;
    size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    line = text.substr(pos, nl - pos);
    pos = nl + 1;
    return true;
  };
  std::string line;
  require(next_line(line), ErrorKind::Data, path + ": empty CSV");
  require(line == kLocHeader, ErrorKind::Data,
          path + ": column mismatch (expected `" + std::string(kLocHeader) +
              "`, got `" + line + "`)");
  int lineno = 1;
  while (next_line(line)) {
    ++lineno;
    if (line.empty()) continue;
    Localization l;
    int consumed = 0;
    const int n = std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf%n", &l.frame,
                              &l.x, &l.y, &l.z, &l.photons, &consumed);
    if (n != 5 || consumed != static_cast<int>(line.size())) {
      throw DataError(path + ":" + std::to_string(lineno) + ": malformed row");
    }
    out.push_back(l);
  }
  return out;
}

void save_report_csv(const std::string& path,
                     const std::vector<ReportRow>& rows) {
  std::string s = "density,jaccard,rmse_lat_nm,rmse_ax_nm,tp,fp,fn\n";
  for (const ReportRow& r : rows) {
    append_double(s, r.density);
    s += ',';
    append_double(s, r.jaccard);
    s += ',';
    if (r.rmse_lat_nm) append_double(s, *r.rmse_lat_nm);
    s += ',';
    if (r.rmse_ax_nm) append_double(s, *r.rmse_ax_nm);
    s += ',';
    s += std::to_string(r.tp);
    s += ',';
    s += std::to_string(r.fp);
    s += ',';
    s += std::to_string(r.fn);
    s += '\n';
  }
  write_text(path, s);
}

void save_report_json(const std::string& path,
                      const std::vector<ReportRow>& rows,
                      const std::string& config_fingerprint,
                      double threshold_nm) {
  json jrows = json::array();
  for (const ReportRow& r : rows) {
    json jr{{"density", r.density}, {"jaccard", r.jaccard},
            {"tp", r.tp},           {"fp", r.fp},
            {"fn", r.fn}};
    if (r.rmse_lat_nm) jr["rmse_lat_nm"] = *r.rmse_lat_nm;
    if (r.rmse_ax_nm) jr["rmse_ax_nm"] = *r.rmse_ax_nm;
    jrows.push_back(jr);
  }
  json j{{"format", "smlm3d-report"},
         {"version", 1},
         {"config_fingerprint", config_fingerprint},
         {"match_threshold_nm", threshold_nm},
         {"rows", jrows}};
  write_text(path, j.dump(2) + "\n");
}

namespace {

json arch_to_json(const DecoderArch& a) {
  json layers = json::array();
  for (const LayerSpec& l : a.layers) {
    layers.push_back(json{{"in_ch", l.in_ch},
                          {"out_ch", l.out_ch},
                          {"kernel", l.kernel},
                          {"dilation", l.dilation},
                          {"upsample_before", l.upsample_before},
                          {"act", l.act == Activation::Sigmoid ? "sigmoid"
                                                               : "leaky_relu"}});
  }
  return json{{"layers", layers},
              {"upsample", a.upsample},
              {"leaky_slope", a.leaky_slope}};
}

DecoderArch arch_from_json(const json& j) {
  DecoderArch a;
  a.upsample = j.at("upsample").get<int>();
  a.leaky_slope = j.at("leaky_slope").get<double>();
  for (const json& jl : j.at("layers")) {
    LayerSpec l;
    l.in_ch = jl.at("in_ch").get<int>();
    l.out_ch = jl.at("out_ch").get<int>();
    l.kernel = jl.at("kernel").get<int>();
    l.dilation = jl.at("dilation").get<int>();
    l.upsample_before = jl.at("upsample_before").get<bool>();
    l.act = jl.at("act").get<std::string>() == "sigmoid" ? Activation::Sigmoid
                                                         : Activation::LeakyRelu;
    a.layers.push_back(l);
  }
  a.validate();
  return a;
}

}  // namespace

void save_decoder_checkpoint(const std::string& bin_path,
                             const std::string& json_path,
                             const DecoderParams<float>& params,
                             const DecoderManifest& manifest) {
  const std::vector<float> flat = params.flatten();
  const size_t nbytes = flat.size() * sizeof(float);
  write_bytes(bin_path, flat.data(), nbytes);
  json j{{"format", "smlm3d-decoder"},
         {"version", 1},
         {"arch", arch_to_json(manifest.arch)},
         {"init_seed", manifest.init_seed},
         {"norm_mean", manifest.norm_mean},
         {"norm_std", manifest.norm_std},
         {"voxel_z_nm", manifest.voxel_z_nm},
         {"peak_threshold", manifest.peak_threshold},
         {"optics_fingerprint", manifest.optics_fingerprint},
         {"param_count", flat.size()},
         {"checksum_fnv1a64", hex64(fnv1a64(flat.data(), nbytes))}};
  write_text(json_path, j.dump(2) + "\n");
}

DecoderParams<float> load_decoder_checkpoint(const std::string& bin_path,
                                             const std::string& json_path,
                                             DecoderManifest* manifest) {
  const json j = parse_json(json_path);
  check_version(j, "smlm3d-decoder", json_path);
  DecoderManifest m;
  m.arch = arch_from_json(j.at("arch"));
  m.init_seed = j.at("init_seed").get<uint64_t>();
  m.norm_mean = j.at("norm_mean").get<double>();
  m.norm_std = j.at("norm_std").get<double>();
  m.voxel_z_nm = j.at("voxel_z_nm").get<double>();
  m.peak_threshold = j.at("peak_threshold").get<double>();
  m.optics_fingerprint = j.at("optics_fingerprint").get<std::string>();
  const size_t count = j.at("param_count").get<size_t>();
  require(count == m.arch.param_count(), ErrorKind::Data,
          json_path + ": param_count does not match architecture");
  check_payload(bin_path, j, count * sizeof(float));
  const auto bytes = read_bytes(bin_path);
  std::vector<float> flat(count);
  std::memcpy(flat.data(), bytes.data(), bytes.size());
  DecoderParams<float> params = init_decoder<float>(m.arch, m.init_seed);
  params.unflatten(flat);
  if (manifest) *manifest = m;
  return params;
}

}  // namespace smlm3d::io

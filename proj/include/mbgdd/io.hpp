#pragma once

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mbgdd/gdd.hpp"
#include "mbgdd/metrics.hpp"
#include "mbgdd/solvers.hpp"
#include "mbgdd/vae.hpp"

namespace mbgdd {

using Json = nlohmann::ordered_json;

namespace detail {

static_assert(std::endian::native == std::endian::little, "payload I/O assumes a little-endian host");

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  return out;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
  return in;
}

inline Json read_header_line(std::istream& in, const std::string& what) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError(what + ": missing header line");
  try {
    return Json::parse(line);
  } catch (const Json::parse_error& e) {
    throw FormatError(what + ": header is not valid JSON: " + e.what());
  }
}

template <class T>
T header_field(const Json& h, const char* key, const std::string& what) {
  if (!h.contains(key)) throw FormatError(what + ": header lacks '" + key + "'");
  try {
    return h.at(key).get<T>();
  } catch (const Json::exception&) {
    throw FormatError(what + ": header field '" + key + "' has the wrong type");
  }
}

}  // namespace detail

// ---------------------------------------------------------------- cubes

/// MBC1: one JSON header line, then float32 little-endian samples,
/// band-sequential, row-major within each band.
inline void write_cube(const std::string& path, const ImageCube& cube) {
  Json h;
  h["magic"] = "MBC1";
  h["height"] = cube.height();
  h["width"] = cube.width();
  h["bands"] = cube.bands();
  h["dtype"] = "f32";
  h["interleave"] = "bsq";
  if (!cube.wavelengths().empty()) h["wavelengths"] = cube.wavelengths();
  auto out = detail::open_out(path);
  out << h.dump() << '\n';
  std::vector<float> payload(cube.data().begin(), cube.data().end());
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!out) throw std::runtime_error("write_cube: write to '" + path + "' failed");
}

inline ImageCube read_cube(const std::string& path) {
  auto in = detail::open_in(path);
  const std::string what = "read_cube(" + path + ")";
  const Json h = detail::read_header_line(in, what);
  if (!h.is_object() || !h.contains("magic") || h["magic"] != "MBC1") throw FormatError(what + ": bad magic");
  if (detail::header_field<std::string>(h, "dtype", what) != "f32")
    throw FormatError(what + ": unsupported dtype");
  if (detail::header_field<std::string>(h, "interleave", what) != "bsq")
    throw FormatError(what + ": unsupported interleave");
  const auto height = detail::header_field<std::int64_t>(h, "height", what);
  const auto width = detail::header_field<std::int64_t>(h, "width", what);
  const auto bands = detail::header_field<std::int64_t>(h, "bands", what);
  constexpr std::int64_t kMax = std::numeric_limits<int>::max();
  if (height < 1 || width < 1 || bands < 1 || height > kMax || width > kMax || bands > kMax ||
      height > kMax / width || height * width > (std::int64_t{1} << 40) / bands)
    throw FormatError(what + ": dimension overflow");
  const auto count = static_cast<std::size_t>(height * width * bands);
  std::vector<float> payload(count);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(count * sizeof(float)));
  if (static_cast<std::size_t>(in.gcount()) != count * sizeof(float)) throw FormatError(what + ": truncated payload");
  std::vector<double> wl;
  if (h.contains("wavelengths")) wl = detail::header_field<std::vector<double>>(h, "wavelengths", what);
  std::vector<double> data(payload.begin(), payload.end());
  try {
    return ImageCube(static_cast<int>(height), static_cast<int>(width), static_cast<int>(bands), std::move(data),
                     std::move(wl));
  } catch (const DimensionError& e) {
    throw FormatError(what + ": " + e.what());
  }
}

/// Masks travel as 0/1 cubes.
inline void write_mask(const std::string& path, const EntryMask& mask) {
  std::vector<double> data(mask.kept.begin(), mask.kept.end());
  write_cube(path, ImageCube(mask.height, mask.width, mask.bands, std::move(data)));
}

inline EntryMask read_mask(const std::string& path) {
  const ImageCube c = read_cube(path);
  std::vector<std::uint8_t> kept(c.data().size());
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const double v = c.data()[i];
    if (v != 0.0 && v != 1.0) throw FormatError("read_mask(" + path + "): mask samples must be 0 or 1");
    kept[i] = v != 0.0;
  }
  return EntryMask(c.height(), c.width(), c.bands(), std::move(kept));
}

// ---------------------------------------------------------------- config

enum class Task { fusion, inpainting };
enum class DecoderKind { gdd, vae };

struct GddConfig {
  int epochs = 2000;
  double lr = 0.01;
  int levels = 0;
  int n_fru = 4;
  int width = 32;
  int latent_channels = 32;
  double leaky_slope = 0.2;
  double latent_std = 0.1;
};

struct VaeConfig {
  int epochs = 100;
  double lr = 1e-3;
  int patch = 25;
  int latent_dim = 16;
  int width = 8;
  int encoder_blocks = 2;
  int decoder_blocks = 2;
  double kl_weight = 1e-2;
  int patches = 500;
  int batch = 16;
  double latent_std = 0.1;
};

struct DegradationConfig {
  int blur_size = 5;
  double blur_sigma = 2.0;
  int factor = 4;
  std::string srf = "avg";  // avg | rgb | band-range a:b | path to a B_hr x B cube
  double snr_hs = 35.0;
  double snr_hr = 30.0;
  double mask_pixels = 0.05;
};

struct RunConfig {
  Task task = Task::fusion;
  int subspace_dim = 8;
  double mu = 1e-4;
  double lambda = 1e-5;
  int admm_iters = 50;
  int z_steps = 50;
  double z_lr = 0.01;
  double tol = 1e-4;
  DecoderKind decoder = DecoderKind::gdd;
  GddConfig gdd;
  VaeConfig vae;
  DegradationConfig degradation;
  std::uint64_t seed = 0;

  GddArchitecture gdd_architecture() const {
    GddArchitecture a;
    a.levels = gdd.levels;
    a.n_fru = gdd.n_fru;
    a.width = gdd.width;
    a.latent_channels = gdd.latent_channels;
    a.leaky_slope = gdd.leaky_slope;
    return a;
  }
  GddTrainSettings gdd_settings() const { return {gdd.epochs, gdd.lr, gdd.latent_std}; }
  VaeArchitecture vae_architecture() const {
    return {vae.patch, vae.latent_dim, vae.width, vae.encoder_blocks, vae.decoder_blocks, 0.2, vae.kl_weight};
  }
  VaeTrainSettings vae_settings() const { return {vae.epochs, vae.lr, vae.patches, vae.batch}; }
  AdmmSettings admm_settings() const { return {mu, lambda, admm_iters, z_steps, z_lr, tol, false}; }
};

inline std::string to_string(Task t) { return t == Task::fusion ? "fusion" : "inpainting"; }
inline std::string to_string(DecoderKind d) { return d == DecoderKind::gdd ? "gdd" : "vae"; }

inline Task parse_task(const std::string& s) {
  if (s == "fusion") return Task::fusion;
  if (s == "inpainting") return Task::inpainting;
  throw ConfigError("task must be 'fusion' or 'inpainting', got '" + s + "'");
}

inline DecoderKind parse_decoder(const std::string& s) {
  if (s == "gdd") return DecoderKind::gdd;
  if (s == "vae") return DecoderKind::vae;
  throw ConfigError("decoder must be 'gdd' or 'vae', got '" + s + "'");
}

/// Reads keys of one JSON object, rejecting any it was not asked about.
class ConfigReader {
 public:
  ConfigReader(const Json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(where() + "must be a JSON object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!obj_.contains(key)) return;
    const Json& v = obj_.at(key);
    if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(where() + "'" + key + "' must be a string");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(where() + "'" + key + "' must be an integer");
      if constexpr (std::is_unsigned_v<T>)
        if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)
          throw ConfigError(where() + "'" + key + "' must be nonnegative");
    } else {
      if (!v.is_number()) throw ConfigError(where() + "'" + key + "' must be a number");
    }
    out = v.get<T>();
  }

  bool has(const char* key) const { return obj_.contains(key); }

  const Json* child(const char* key) {
    seen_.insert(key);
    return obj_.contains(key) ? &obj_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& item : obj_.items())
      if (!seen_.count(item.key())) throw ConfigError(where() + "unknown key '" + item.key() + "'");
  }

  std::string where() const { return path_.empty() ? "config: " : "config." + path_ + ": "; }

 private:
  const Json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void validate(const RunConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
  if (!(c.mu > 0.0) || !std::isfinite(c.mu)) fail("mu must be > 0");
  if (!(c.lambda >= 0.0) || !std::isfinite(c.lambda)) fail("lambda must be >= 0");
  if (c.subspace_dim < 1) fail("subspace_dim must be >= 1");
  if (c.admm_iters < 1) fail("admm_iters must be >= 1");
  if (c.z_steps < 0) fail("z_steps must be >= 0");
  if (!(c.z_lr > 0.0)) fail("z_lr must be > 0");
  if (!(c.tol >= 0.0)) fail("tol must be >= 0");
  if (c.gdd.epochs < 0 || !(c.gdd.lr > 0.0) || c.gdd.levels < 0 || c.gdd.n_fru < 1 || c.gdd.width < 1 ||
      c.gdd.latent_channels < 1 || !(c.gdd.latent_std > 0.0))
    fail("invalid gdd settings");
  if (c.vae.epochs < 0 || !(c.vae.lr > 0.0) || c.vae.patch < 1 || c.vae.latent_dim < 1 || c.vae.width < 1 ||
      c.vae.encoder_blocks < 0 || c.vae.decoder_blocks < 0 || c.vae.kl_weight < 0.0 || c.vae.patches < 1 ||
      c.vae.batch < 1 || !(c.vae.latent_std > 0.0))
    fail("invalid vae settings");
  const auto& d = c.degradation;
  if (d.blur_size < 1 || d.blur_size % 2 == 0) fail("degradation.blur_size must be odd and >= 1");
  if (!(d.blur_sigma > 0.0)) fail("degradation.blur_sigma must be > 0");
  if (d.factor < 1) fail("degradation.factor must be >= 1");
  if (!(d.mask_pixels > 0.0 && d.mask_pixels <= 1.0)) fail("degradation.mask_pixels must lie in (0, 1]");
}

inline RunConfig parse_config(const Json& doc) {
  RunConfig c;
  ConfigReader r(doc, "");
  std::string task = "fusion", decoder = "gdd";
  r.get("task", task);
  c.task = parse_task(task);
  if (c.task == Task::inpainting) c.mu = 1e-3;
  r.get("subspace_dim", c.subspace_dim);
  r.get("mu", c.mu);
  r.get("lambda", c.lambda);
  r.get("admm_iters", c.admm_iters);
  r.get("z_steps", c.z_steps);
  r.get("z_lr", c.z_lr);
  r.get("tol", c.tol);
  r.get("decoder", decoder);
  c.decoder = parse_decoder(decoder);
  r.get("seed", c.seed);
  if (const Json* g = r.child("gdd")) {
    ConfigReader s(*g, "gdd");
    s.get("epochs", c.gdd.epochs);
    s.get("lr", c.gdd.lr);
    s.get("levels", c.gdd.levels);
    s.get("n_fru", c.gdd.n_fru);
    s.get("width", c.gdd.width);
    s.get("latent_channels", c.gdd.latent_channels);
    s.get("leaky_slope", c.gdd.leaky_slope);
    s.get("latent_std", c.gdd.latent_std);
    s.finish();
  }
  if (const Json* v = r.child("vae")) {
    ConfigReader s(*v, "vae");
    s.get("epochs", c.vae.epochs);
    s.get("lr", c.vae.lr);
    s.get("patch", c.vae.patch);
    s.get("latent_dim", c.vae.latent_dim);
    s.get("width", c.vae.width);
    s.get("encoder_blocks", c.vae.encoder_blocks);
    s.get("decoder_blocks", c.vae.decoder_blocks);
    s.get("kl_weight", c.vae.kl_weight);
    s.get("patches", c.vae.patches);
    s.get("batch", c.vae.batch);
    s.get("latent_std", c.vae.latent_std);
    s.finish();
  }
  if (const Json* d = r.child("degradation")) {
    ConfigReader s(*d, "degradation");
    s.get("blur_size", c.degradation.blur_size);
    s.get("blur_sigma", c.degradation.blur_sigma);
    s.get("factor", c.degradation.factor);
    s.get("srf", c.degradation.srf);
    s.get("snr_hs", c.degradation.snr_hs);
    s.get("snr_hr", c.degradation.snr_hr);
    s.get("mask_pixels", c.degradation.mask_pixels);
    s.finish();
  }
  r.finish();
  validate(c);
  return c;
}

inline RunConfig parse_config(const std::string& text) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("config: parse error: ") + e.what());
  }
  return parse_config(doc);
}

inline RunConfig read_config(const std::string& path) {
  auto in = detail::open_in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

inline Json config_to_json(const RunConfig& c) {
  Json j;
  j["task"] = to_string(c.task);
  j["subspace_dim"] = c.subspace_dim;
  j["mu"] = c.mu;
  j["lambda"] = c.lambda;
  j["admm_iters"] = c.admm_iters;
  j["z_steps"] = c.z_steps;
  j["z_lr"] = c.z_lr;
  j["tol"] = c.tol;
  j["decoder"] = to_string(c.decoder);
  j["gdd"] = {{"epochs", c.gdd.epochs},   {"lr", c.gdd.lr},
              {"levels", c.gdd.levels},   {"n_fru", c.gdd.n_fru},
              {"width", c.gdd.width},     {"latent_channels", c.gdd.latent_channels},
              {"leaky_slope", c.gdd.leaky_slope}, {"latent_std", c.gdd.latent_std}};
  j["vae"] = {{"epochs", c.vae.epochs},
              {"lr", c.vae.lr},
              {"patch", c.vae.patch},
              {"latent_dim", c.vae.latent_dim},
              {"width", c.vae.width},
              {"encoder_blocks", c.vae.encoder_blocks},
              {"decoder_blocks", c.vae.decoder_blocks},
              {"kl_weight", c.vae.kl_weight},
              {"patches", c.vae.patches},
              {"batch", c.vae.batch},
              {"latent_std", c.vae.latent_std}};
  j["degradation"] = {{"blur_size", c.degradation.blur_size}, {"blur_sigma", c.degradation.blur_sigma},
                      {"factor", c.degradation.factor},       {"srf", c.degradation.srf},
                      {"snr_hs", c.degradation.snr_hs},       {"snr_hr", c.degradation.snr_hr},
                      {"mask_pixels", c.degradation.mask_pixels}};
  j["seed"] = c.seed;
  return j;
}

// ---------------------------------------------------------------- reports

namespace detail {
// JSON has no infinity; psnr of identical cubes is written as the string "inf".
inline Json number_or_inf(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}
inline double read_number_or_inf(const Json& j) {
  if (j.is_string()) {
    if (j == "inf") return std::numeric_limits<double>::infinity();
    if (j == "-inf") return -std::numeric_limits<double>::infinity();
    throw FormatError("report: unexpected string value");
  }
  return j.get<double>();
}
}  // namespace detail

inline Json report_to_json(const MetricReport& m) {
  Json j;
  j["psnr"] = detail::number_or_inf(m.psnr);
  j["sam"] = m.sam;
  j["uiqi"] = m.uiqi;
  j["ergas"] = m.ergas;
  j["ssim"] = m.ssim;
  Json pb = Json::array();
  for (double v : m.psnr_bands) pb.push_back(detail::number_or_inf(v));
  j["psnr_bands"] = pb;
  j["uiqi_bands"] = m.uiqi_bands;
  j["ssim_bands"] = m.ssim_bands;
  return j;
}

inline void write_report(const std::string& path, const MetricReport& m) {
  auto out = detail::open_out(path);
  out << report_to_json(m).dump(2) << '\n';
  if (!out) throw std::runtime_error("write_report: write to '" + path + "' failed");
}

inline MetricReport read_report(const std::string& path) {
  auto in = detail::open_in(path);
  Json j;
  try {
    j = Json::parse(in);
    MetricReport m;
    m.psnr = detail::read_number_or_inf(j.at("psnr"));
    m.sam = j.at("sam").get<double>();
    m.uiqi = j.at("uiqi").get<double>();
    m.ergas = j.at("ergas").get<double>();
    m.ssim = j.at("ssim").get<double>();
    for (const auto& v : j.at("psnr_bands")) m.psnr_bands.push_back(detail::read_number_or_inf(v));
    m.uiqi_bands = j.at("uiqi_bands").get<std::vector<double>>();
    m.ssim_bands = j.at("ssim_bands").get<std::vector<double>>();
    return m;
  } catch (const Json::exception& e) {
    throw FormatError("read_report(" + path + "): " + e.what());
  }
}

// ---------------------------------------------------------------- traces

inline void write_loss_trace(const std::string& path, const std::vector<double>& loss) {
  auto out = detail::open_out(path);
  out << "epoch,loss\n";
  out.precision(17);
  for (std::size_t i = 0; i < loss.size(); ++i) out << i << ',' << loss[i] << '\n';
}

inline void write_admm_trace(const std::string& path, const std::vector<AdmmTraceRow>& rows) {
  auto out = detail::open_out(path);
  out << "iter,objective,primal_residual,a_change\n";
  out.precision(17);
  for (const auto& r : rows) out << r.iter << ',' << r.objective << ',' << r.primal_residual << ',' << r.a_change << '\n';
}

// ---------------------------------------------------------------- checkpoints

struct Checkpoint {
  DecoderKind kind = DecoderKind::gdd;
  GddArchitecture gdd;
  VaeArchitecture vae;
  std::uint64_t seed = 0;
  std::vector<double> params;
  FeatureMap latent;  // GDD only; empty for VAE
};

namespace detail {
inline void write_f64(std::ostream& out, std::span<const double> v) {
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}
}  // namespace detail

/// JSON header line (architecture, seed, sizes), then f64 parameters
/// followed by the f64 latent code.
inline void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  Json h;
  h["magic"] = "MBDC1";
  h["kind"] = to_string(ck.kind);
  if (ck.kind == DecoderKind::gdd) {
    const auto& a = ck.gdd;
    h["architecture"] = {{"levels", a.levels},
                         {"n_fru", a.n_fru},
                         {"width", a.width},
                         {"latent_channels", a.latent_channels},
                         {"out_channels", a.out_channels},
                         {"guidance_channels", a.guidance_channels},
                         {"leaky_slope", a.leaky_slope},
                         {"var_floor", a.var_floor}};
  } else {
    const auto& a = ck.vae;
    h["architecture"] = {{"patch", a.patch},
                         {"latent_dim", a.latent_dim},
                         {"width", a.width},
                         {"encoder_blocks", a.encoder_blocks},
                         {"decoder_blocks", a.decoder_blocks},
                         {"leaky_slope", a.leaky_slope},
                         {"kl_weight", a.kl_weight}};
  }
  h["seed"] = ck.seed;
  h["param_count"] = ck.params.size();
  h["latent"] = {ck.latent.channels, ck.latent.height, ck.latent.width};
  auto out = detail::open_out(path);
  out << h.dump() << '\n';
  detail::write_f64(out, ck.params);
  detail::write_f64(out, ck.latent.data);
  if (!out) throw std::runtime_error("write_checkpoint: write to '" + path + "' failed");
}

inline Checkpoint read_checkpoint(const std::string& path) {
  auto in = detail::open_in(path);
  const std::string what = "read_checkpoint(" + path + ")";
  const Json h = detail::read_header_line(in, what);
  if (!h.is_object() || !h.contains("magic") || h["magic"] != "MBDC1") throw FormatError(what + ": bad magic");
  Checkpoint ck;
  try {
    ck.kind = parse_decoder(h.at("kind").get<std::string>());
    const Json& a = h.at("architecture");
    if (ck.kind == DecoderKind::gdd) {
      ck.gdd.levels = a.at("levels").get<int>();
      ck.gdd.n_fru = a.at("n_fru").get<int>();
      ck.gdd.width = a.at("width").get<int>();
      ck.gdd.latent_channels = a.at("latent_channels").get<int>();
      ck.gdd.out_channels = a.at("out_channels").get<int>();
      ck.gdd.guidance_channels = a.at("guidance_channels").get<int>();
      ck.gdd.leaky_slope = a.at("leaky_slope").get<double>();
      ck.gdd.var_floor = a.at("var_floor").get<double>();
    } else {
      ck.vae.patch = a.at("patch").get<int>();
      ck.vae.latent_dim = a.at("latent_dim").get<int>();
      ck.vae.width = a.at("width").get<int>();
      ck.vae.encoder_blocks = a.at("encoder_blocks").get<int>();
      ck.vae.decoder_blocks = a.at("decoder_blocks").get<int>();
      ck.vae.leaky_slope = a.at("leaky_slope").get<double>();
      ck.vae.kl_weight = a.at("kl_weight").get<double>();
    }
    ck.seed = h.at("seed").get<std::uint64_t>();
    ck.params.resize(h.at("param_count").get<std::size_t>());
    const auto shape = h.at("latent").get<std::vector<int>>();
    if (shape.size() != 3 || shape[0] < 0 || shape[1] < 0 || shape[2] < 0)
      throw FormatError(what + ": bad latent shape");
    ck.latent = FeatureMap(shape[0], shape[1], shape[2]);
  } catch (const Json::exception& e) {
    throw FormatError(what + ": " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(what + ": " + e.what());
  }
  auto read = [&](std::span<double> v) {
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (static_cast<std::size_t>(in.gcount()) != v.size() * sizeof(double)) throw FormatError(what + ": truncated payload");
  };
  read(ck.params);
  read(ck.latent.data);
  return ck;
}

/// Rebuilds a guided decoder; the guidance image is not stored in the checkpoint.
inline GuidedDecoderModel load_gdd(const Checkpoint& ck, const ImageCube& guidance) {
  if (ck.kind != DecoderKind::gdd) throw FormatError("load_gdd: checkpoint holds a VAE");
  GuidedDecoderModel model(ck.gdd, guidance, ck.seed);
  model.set_params(ck.params);
  return model;
}

inline VaeModel load_vae(const Checkpoint& ck) {
  if (ck.kind != DecoderKind::vae) throw FormatError("load_vae: checkpoint holds a guided decoder");
  VaeModel model(ck.vae, ck.seed);
  model.set_params(ck.params);
  return model;
}

}  // namespace mbgdd

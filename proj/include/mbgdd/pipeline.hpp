#pragma once

#include <memory>
#include <optional>
#include <string>

#include "mbgdd/io.hpp"

namespace mbgdd {

/// "avg", "rgb", "band-range a:b" (also "a:b"), or a path to an MBC cube
/// holding R as a 1-band (B_hr x B) image.
inline SpectralResponse srf_from_string(const std::string& spec, int bands) {
  if (spec == "avg") return SpectralResponse::average(bands);
  if (spec == "rgb") return SpectralResponse::rgb_like(bands);
  std::string range = spec;
  if (range.rfind("band-range", 0) == 0) range = range.substr(10);
  while (!range.empty() && (range.front() == ' ' || range.front() == ':' || range.front() == '=')) range.erase(0, 1);
  const auto colon = range.find(':');
  if (colon != std::string::npos) {
    try {
      std::size_t p1 = 0, p2 = 0;
      const int a = std::stoi(range.substr(0, colon), &p1);
      const int b = std::stoi(range.substr(colon + 1), &p2);
      if (p1 == colon && colon + 1 + p2 == range.size()) return SpectralResponse::band_range(bands, a, b);
    } catch (const std::logic_error&) {
    }
    if (spec.rfind("band-range", 0) == 0) throw ConfigError("srf: malformed band range '" + spec + "'");
  }
  const ImageCube r = read_cube(spec);
  if (r.bands() != 1 || r.width() != bands)
    throw DimensionError("srf file must be a 1-band cube of size B_hr x " + std::to_string(bands));
  Matrix m(r.height(), r.width());
  for (int i = 0; i < r.height(); ++i)
    for (int j = 0; j < r.width(); ++j) m(i, j) = r.at(0, i, j);
  return SpectralResponse(std::move(m));
}

inline BlurOperator blur_from_config(const DegradationConfig& d, int height, int width) {
  return BlurOperator(gaussian_kernel(d.blur_size, d.blur_sigma), height, width);
}

/// Basis from the hs observation; with a mask only fully observed pixels count.
inline SpectralBasis basis_for(const ObservationSet& obs, int dim) {
  return obs.mask ? estimate_subspace(obs.hs, *obs.mask, dim) : estimate_subspace(obs.hs, dim);
}

inline std::unique_ptr<AdmmProblem> make_problem(const ObservationSet& obs, const RunConfig& cfg,
                                                 const SpectralBasis& basis) {
  obs.validate();
  if (cfg.task == Task::inpainting) {
    const EntryMask mask = obs.mask ? *obs.mask : EntryMask::all(obs.hs.height(), obs.hs.width(), obs.hs.bands());
    if (obs.hs.height() != obs.hr.height() || obs.hs.width() != obs.hr.width())
      throw DimensionError("inpainting: hs and hr must share the spatial size");
    return std::make_unique<InpaintProblem>(obs.hs, mask, basis);
  }
  const auto& d = cfg.degradation;
  return std::make_unique<FusionProblem>(obs.hs, obs.hr, basis, blur_from_config(d, obs.hr.height(), obs.hr.width()),
                                         Downsampler{d.factor}, srf_from_string(d.srf, obs.hs.bands()));
}

/// Per-coefficient mean and standard deviation of V^T y over the fully
/// observed hs pixels. Maps the VAE's standardized output to coefficient units.
struct CoefficientAffine {
  Vector scale;
  Vector offset;
};

inline CoefficientAffine coefficient_affine(const ObservationSet& obs, const SpectralBasis& basis) {
  const Matrix y = cube_to_matrix(obs.hs);
  std::vector<Eigen::Index> cols;
  for (Eigen::Index n = 0; n < y.cols(); ++n) {
    bool all = true;
    for (int b = 0; b < obs.hs.bands() && obs.mask && all; ++b) all = obs.mask->at(b, static_cast<int>(n));
    if (all) cols.push_back(n);
  }
  if (cols.empty()) throw DimensionError("coefficient_affine: no fully observed pixel");
  Matrix a(basis.dim(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) a.col(static_cast<Eigen::Index>(i)) = basis.v.transpose() * y.col(cols[i]);
  CoefficientAffine aff{Vector(basis.dim()), a.rowwise().mean()};
  for (int k = 0; k < basis.dim(); ++k) {
    const double var = (a.row(k).array() - aff.offset[k]).square().mean();
    aff.scale[k] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return aff;
}

/// A trained D(.) with its initial latent code, ready for ADMM.
struct DecoderBundle {
  std::optional<GuidedDecoderModel> gdd;
  std::optional<VaeModel> vae;
  std::unique_ptr<Generator> generator;
  FeatureMap z0;
  std::vector<double> loss_trace;
};

inline DecoderBundle bundle_gdd(GuidedDecoderModel model, FeatureMap z0, std::vector<double> loss = {}) {
  DecoderBundle b;
  b.gdd.emplace(std::move(model));
  b.generator = std::make_unique<GddGenerator>(*b.gdd);
  b.z0 = std::move(z0);
  b.loss_trace = std::move(loss);
  return b;
}

inline DecoderBundle bundle_vae(VaeModel model, const ObservationSet& obs, const SpectralBasis& basis, double latent_std,
                                std::uint64_t seed, std::vector<double> loss = {}) {
  DecoderBundle b;
  b.vae.emplace(std::move(model));
  const CoefficientAffine aff = coefficient_affine(obs, basis);
  auto gen = std::make_unique<VaeGenerator>(*b.vae, PatchGrid::covering(obs.hr.height(), obs.hr.width(),
                                                                        b.vae->architecture().patch),
                                            obs.hr.height(), obs.hr.width(), aff.scale, aff.offset);
  b.z0 = gen->initial_latent(latent_std, seed);
  b.generator = std::move(gen);
  b.loss_trace = std::move(loss);
  return b;
}

/// Algorithm step "train the decoder" for either decoder kind.
inline DecoderBundle train_decoder(const ObservationSet& obs, const AdmmProblem& problem, const SpectralBasis& basis,
                                   const RunConfig& cfg) {
  if (cfg.decoder == DecoderKind::gdd) {
    GddTrainResult r = train_gdd(obs.hr, basis, problem, cfg.gdd_architecture(), cfg.gdd_settings(), cfg.seed);
    return bundle_gdd(std::move(r.model), std::move(r.z), std::move(r.loss_trace));
  }
  const auto arch = cfg.vae_architecture();
  const auto patches = sample_guidance_patches(obs.hr, arch.patch, cfg.vae.patches, cfg.seed);
  VaeTrainResult r = train_vae(patches, arch, cfg.vae_settings(), cfg.seed);
  return bundle_vae(std::move(r.model), obs, basis, cfg.vae.latent_std, cfg.seed, std::move(r.loss_trace));
}

inline Checkpoint checkpoint_of(const DecoderBundle& b) {
  Checkpoint ck;
  if (b.gdd) {
    ck.kind = DecoderKind::gdd;
    ck.gdd = b.gdd->architecture();
    ck.seed = b.gdd->seed();
    ck.params.assign(b.gdd->params().begin(), b.gdd->params().end());
    ck.latent = b.z0;
  } else {
    ck.kind = DecoderKind::vae;
    ck.vae = b.vae->architecture();
    ck.seed = b.vae->seed();
    ck.params.assign(b.vae->params().begin(), b.vae->params().end());
  }
  return ck;
}

inline DecoderBundle bundle_from_checkpoint(const Checkpoint& ck, const ObservationSet& obs,
                                            const SpectralBasis& basis, const RunConfig& cfg) {
  if (ck.kind == DecoderKind::gdd) {
    if (ck.gdd.out_channels != basis.dim())
      throw DimensionError("checkpoint output channels do not match subspace_dim");
    return bundle_gdd(load_gdd(ck, obs.hr), ck.latent);
  }
  return bundle_vae(load_vae(ck), obs, basis, cfg.vae.latent_std, cfg.seed);
}

}  // namespace mbgdd

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "mbgdd/generator.hpp"
#include "mbgdd/nn.hpp"
#include "mbgdd/subspace.hpp"

namespace mbgdd {

/// Guided decoder: `levels` upsampling refinement units (URU) followed by
/// `n_fru` feature refinement units (FRU) and a 1x1 output convolution.
/// Each unit's normalization is modulated by gamma/beta maps predicted from
/// guidance features at the unit's resolution.
struct GddArchitecture {
  int levels = 0;
  int n_fru = 4;
  int width = 32;
  int latent_channels = 32;
  int out_channels = 8;
  int guidance_channels = 1;
  double leaky_slope = 0.2;
  double var_floor = 1e-5;

  int blocks() const { return levels + n_fru; }
  friend bool operator==(const GddArchitecture&, const GddArchitecture&) = default;
};

/// Standardizes each band of the guidance image to zero mean and unit
/// variance (constant bands map to zero).
inline FeatureMap guidance_input_from(const ImageCube& hr) {
  FeatureMap g(hr.bands(), hr.height(), hr.width());
  for (int b = 0; b < hr.bands(); ++b) {
    auto band = hr.band(b);
    double mean = 0.0;
    for (double v : band) mean += v;
    mean /= static_cast<double>(band.size());
    double var = 0.0;
    for (double v : band) var += (v - mean) * (v - mean);
    var /= static_cast<double>(band.size());
    const double scale = var > 0.0 ? 1.0 / std::sqrt(var) : 0.0;
    for (std::size_t n = 0; n < band.size(); ++n) g.at(b, static_cast<int>(n)) = (band[n] - mean) * scale;
  }
  return g;
}

class GuidedDecoderModel {
 public:
  GuidedDecoderModel(const GddArchitecture& arch, const ImageCube& guidance, std::uint64_t seed)
      : arch_(arch), height_(guidance.height()), width_(guidance.width()), seed_(seed) {
    if (arch.levels < 0 || arch.n_fru < 1 || arch.width < 1 || arch.latent_channels < 1 || arch.out_channels < 1)
      throw DimensionError("GuidedDecoderModel: invalid architecture");
    if (guidance.bands() != arch.guidance_channels)
      throw DimensionError("GuidedDecoderModel: guidance band count does not match architecture");
    const int scale = 1 << arch.levels;
    if (height_ % scale != 0 || width_ % scale != 0)
      throw DimensionError("GuidedDecoderModel: guidance size must be divisible by 2^levels");

    ParamLayout layout;
    guide_convs_.emplace_back(layout, arch.guidance_channels, arch.width, 3);
    for (int l = 1; l <= arch.levels; ++l) guide_convs_.emplace_back(layout, arch.width, arch.width, 3);
    for (int j = 0; j < arch.blocks(); ++j) {
      block_convs_.emplace_back(layout, j == 0 ? arch.latent_channels : arch.width, arch.width, 3);
      heads_.emplace_back(layout, arch.width, 2 * arch.width, 1);
    }
    output_ = Conv2d(layout, arch.width, arch.out_channels, 1);
    params_.assign(layout.total(), 0.0);

    CounterRng rng(seed, 100);
    for (const auto& c : guide_convs_) c.init(params_, rng);
    for (int j = 0; j < arch.blocks(); ++j) {
      block_convs_[j].init(params_, rng);
      heads_[j].init(params_, rng);
      // gamma starts at 1, beta at 0
      for (int c = 0; c < arch.width; ++c) {
        params_[heads_[j].bias_offset + c] = 1.0;
        params_[heads_[j].bias_offset + arch.width + c] = 0.0;
      }
    }
    output_.init(params_, rng);

    guidance_input_ = guidance_input_from(guidance);
    refresh_guidance();
  }

  const GddArchitecture& architecture() const { return arch_; }
  int height() const { return height_; }
  int width() const { return width_; }
  int latent_height() const { return height_ >> arch_.levels; }
  int latent_width() const { return width_ >> arch_.levels; }
  std::uint64_t seed() const { return seed_; }

  std::span<const double> params() const { return params_; }
  /// Mutable access invalidates outstanding caches and cached guidance features.
  std::span<double> mutable_params() {
    ++version_;
    return params_;
  }
  void set_params(std::vector<double> p) {
    if (p.size() != params_.size()) throw DimensionError("GuidedDecoderModel: parameter count mismatch");
    params_.assign(p.begin(), p.end());
    ++version_;
    refresh_guidance();
  }
  std::uint64_t version() const { return version_; }

  const std::vector<Conv2d>& guide_convs() const { return guide_convs_; }
  const std::vector<Conv2d>& block_convs() const { return block_convs_; }
  const std::vector<Conv2d>& heads() const { return heads_; }
  const Conv2d& output_conv() const { return output_; }

  const FeatureMap& guidance_input() const { return guidance_input_; }
  const std::vector<FeatureMap>& guidance_features() const { return guidance_features_; }
  std::uint64_t guidance_version() const { return guidance_version_; }

  /// Recomputes the cached per-level guidance features from the current parameters.
  void refresh_guidance();

  /// Guidance level used by decoder block j (URUs climb from coarse to fine).
  int block_level(int j) const { return j < arch_.levels ? arch_.levels - 1 - j : 0; }

 private:
  GddArchitecture arch_;
  int height_;
  int width_;
  std::uint64_t seed_;
  AlignedBuffer params_;
  std::uint64_t version_ = 0;
  std::vector<Conv2d> guide_convs_;
  std::vector<Conv2d> block_convs_;
  std::vector<Conv2d> heads_;
  Conv2d output_;
  FeatureMap guidance_input_;
  std::vector<FeatureMap> guidance_features_;
  std::uint64_t guidance_version_ = 0;
};

/// Guidance pyramid with the intermediates its backward pass needs.
struct GuidancePass {
  std::vector<FeatureMap> features;  // level 0 = full resolution
  std::vector<RowMatrix> cols;
  std::vector<FeatureMap> pre;  // conv outputs before LeakyReLU
};

inline GuidancePass guidance_forward(const GuidedDecoderModel& model, const FeatureMap& input) {
  const auto& arch = model.architecture();
  const int scale = 1 << arch.levels;
  if (input.height % scale != 0 || input.width % scale != 0)
    throw DimensionError("guidance_encode: size must be divisible by 2^levels");
  GuidancePass pass;
  const auto params = model.params();
  const auto& convs = model.guide_convs();
  for (int l = 0; l <= arch.levels; ++l) {
    const FeatureMap& src = l == 0 ? input : pass.features.back();
    RowMatrix cols;
    FeatureMap pre = convs[l].forward(params, src, &cols);
    FeatureMap act = leaky_relu(pre, arch.leaky_slope);
    pass.cols.push_back(std::move(cols));
    pass.pre.push_back(std::move(pre));
    pass.features.push_back(l == 0 ? std::move(act) : avg_pool2(act));
  }
  return pass;
}

/// Level 0 is LeakyReLU(conv3x3(guidance)); level l halves the resolution
/// of conv3x3 -> LeakyReLU of level l-1 by 2x2 average pooling.
inline std::vector<FeatureMap> guidance_encode(const GuidedDecoderModel& model, const ImageCube& hr) {
  if (hr.bands() != model.architecture().guidance_channels)
    throw DimensionError("guidance_encode: band count mismatch");
  return guidance_forward(model, guidance_input_from(hr)).features;
}

inline void GuidedDecoderModel::refresh_guidance() {
  guidance_features_ = guidance_forward(*this, guidance_input_).features;
  guidance_version_ = version_;
}

inline void guidance_backward(const GuidedDecoderModel& model, const GuidancePass& pass,
                              std::vector<FeatureMap> dfeatures, std::span<double> grads) {
  const auto& arch = model.architecture();
  const auto params = model.params();
  const auto& convs = model.guide_convs();
  for (int l = arch.levels; l >= 0; --l) {
    FeatureMap dact = l == 0 ? dfeatures[0]
                             : avg_pool2_backward(dfeatures[l], pass.pre[l].height, pass.pre[l].width);
    FeatureMap dpre = leaky_relu_backward(pass.pre[l], dact, arch.leaky_slope);
    const bool need_input = l > 0;
    FeatureMap dsrc = convs[l].backward(params, pass.cols[l], dpre, grads, need_input);
    if (need_input) {
      auto& target = dfeatures[l - 1];
      if (target.data.empty()) target = std::move(dsrc);
      else target.mat() += dsrc.mat();
    }
  }
}

struct DecoderBlockCache {
  bool upsampled = false;
  int in_height = 0;
  int in_width = 0;
  RowMatrix cols;
  ModulationCache modulation;
  FeatureMap pre;  // modulated features before LeakyReLU
};

struct DecoderCache {
  std::uint64_t model_version = 0;
  bool guidance_trainable = false;
  FeatureMap z;
  GuidancePass guidance;
  std::vector<DecoderBlockCache> blocks;
  FeatureMap last_hidden;
  FeatureMap output;
};

struct DecoderGradients {
  FeatureMap grad_z;
  AlignedBuffer grad_params;
};

/// A = D(Z). With trainable_guidance the guidance pyramid is recomputed from
/// the current parameters and becomes part of the differentiated graph;
/// otherwise the model's cached features are treated as constants.
inline FeatureMap decoder_forward(const GuidedDecoderModel& model, const FeatureMap& z,
                                  DecoderCache* cache = nullptr, bool trainable_guidance = false) {
  const auto& arch = model.architecture();
  if (z.channels != arch.latent_channels || z.height != model.latent_height() || z.width != model.latent_width())
    throw DimensionError("decoder_forward: latent shape does not match model");
  if (!trainable_guidance && model.guidance_version() != model.version())
    throw std::logic_error("decoder_forward: guidance features are stale; call refresh_guidance()");

  const auto params = model.params();
  GuidancePass local_guidance;
  if (trainable_guidance) local_guidance = guidance_forward(model, model.guidance_input());
  const std::vector<FeatureMap>& features =
      trainable_guidance ? local_guidance.features : model.guidance_features();

  std::vector<DecoderBlockCache> blocks;
  if (cache) blocks.reserve(arch.blocks());
  FeatureMap x = z;
  for (int j = 0; j < arch.blocks(); ++j) {
    DecoderBlockCache bc;
    bc.upsampled = j < arch.levels;
    bc.in_height = x.height;
    bc.in_width = x.width;
    FeatureMap u = bc.upsampled ? upsample2_bilinear(x) : std::move(x);
    FeatureMap h = model.block_convs()[j].forward(params, u, cache ? &bc.cols : nullptr);
    const FeatureMap gb = model.heads()[j].forward(params, features[model.block_level(j)]);
    FeatureMap m = modulate(h, gb, arch.var_floor, cache ? &bc.modulation : nullptr);
    x = leaky_relu(m, arch.leaky_slope);
    if (cache) {
      bc.pre = std::move(m);
      blocks.push_back(std::move(bc));
    }
  }
  FeatureMap out = model.output_conv().forward(params, x);
  if (cache) {
    cache->model_version = model.version();
    cache->guidance_trainable = trainable_guidance;
    cache->z = z;
    cache->guidance = std::move(local_guidance);
    cache->blocks = std::move(blocks);
    cache->last_hidden = std::move(x);
    cache->output = out;
  }
  return out;
}

/// Exact reverse-mode gradients of decoder_forward. grad_params covers every
/// model parameter (guidance encoder entries stay zero unless the cache was
/// built with trainable guidance); it is empty when want_params is false.
inline DecoderGradients decoder_backward(const GuidedDecoderModel& model, const DecoderCache& cache,
                                         const FeatureMap& grad_out, bool want_params = true) {
  if (cache.model_version != model.version() || cache.blocks.size() != static_cast<std::size_t>(model.architecture().blocks()))
    throw std::logic_error("decoder_backward: stale cache");
  if (!grad_out.same_shape(cache.output)) throw DimensionError("decoder_backward: gradient shape mismatch");

  const auto& arch = model.architecture();
  const auto params = model.params();
  DecoderGradients result;
  if (want_params) result.grad_params.assign(params.size(), 0.0);
  std::span<double> grads = result.grad_params;
  const std::vector<FeatureMap>& features =
      cache.guidance_trainable ? cache.guidance.features : model.guidance_features();
  const bool guidance_grads = want_params && cache.guidance_trainable;
  std::vector<FeatureMap> dfeatures(static_cast<std::size_t>(arch.levels) + 1);

  FeatureMap dx = model.output_conv().backward(params, cache.last_hidden.mat(), grad_out, grads);
  for (int j = arch.blocks() - 1; j >= 0; --j) {
    const auto& bc = cache.blocks[j];
    FeatureMap dm = leaky_relu_backward(bc.pre, dx, arch.leaky_slope);
    FeatureMap dh, dgb;
    modulate_backward(bc.modulation, dm, &dh, want_params ? &dgb : nullptr);
    if (want_params) {
      const int level = model.block_level(j);
      FeatureMap df = model.heads()[j].backward(params, features[level].mat(), dgb, grads, guidance_grads);
      if (guidance_grads) {
        if (dfeatures[level].data.empty()) dfeatures[level] = std::move(df);
        else dfeatures[level].mat() += df.mat();
      }
    }
    FeatureMap du = model.block_convs()[j].backward(params, bc.cols, dh, grads, true);
    dx = bc.upsampled ? upsample2_bilinear_backward(du, bc.in_height, bc.in_width) : std::move(du);
  }
  result.grad_z = std::move(dx);

  if (guidance_grads) {
    for (int l = 0; l <= arch.levels; ++l)
      if (dfeatures[l].data.empty()) dfeatures[l] = FeatureMap(arch.width, features[l].height, features[l].width);
    guidance_backward(model, cache.guidance, std::move(dfeatures), grads);
  }
  return result;
}

/// D(.) backed by a guided decoder with frozen parameters.
class GddGenerator final : public Generator {
 public:
  explicit GddGenerator(const GuidedDecoderModel& model) : model_(&model) {}

  std::unique_ptr<GeneratorPass> run(const FeatureMap& z) const override {
    return std::make_unique<Pass>(*model_, z);
  }

 private:
  class Pass final : public GeneratorPass {
   public:
    Pass(const GuidedDecoderModel& model, const FeatureMap& z) : model_(model) {
      out_ = to_matrix(decoder_forward(model, z, &cache_));
    }
    const Matrix& output() const override { return out_; }
    FeatureMap latent_gradient(const Matrix& grad_out) override {
      return decoder_backward(model_, cache_, feature_map_from(grad_out, model_.height(), model_.width()), false)
          .grad_z;
    }

   private:
    const GuidedDecoderModel& model_;
    DecoderCache cache_;
    Matrix out_;
  };

  const GuidedDecoderModel* model_;
};

struct GddTrainSettings {
  int epochs = 2000;
  double lr = 0.01;
  double latent_std = 0.1;
};

struct GddTrainResult {
  GuidedDecoderModel model;
  FeatureMap z;
  /// Loss before each epoch's update, followed by the final loss.
  std::vector<double> loss_trace;
};

/// Fits the decoder parameters (guidance encoder included) to the data term
/// with Adam while holding the random latent code fixed.
inline GddTrainResult train_gdd(const ImageCube& guidance, const SpectralBasis& basis, const DataFidelity& objective,
                                GddArchitecture arch, const GddTrainSettings& settings, std::uint64_t seed) {
  if (objective.coefficients() != basis.dim())
    throw DimensionError("train_gdd: objective and basis disagree on subspace dimension");
  if (objective.height() != guidance.height() || objective.width() != guidance.width())
    throw DimensionError("train_gdd: guidance size must equal target size");
  if (settings.epochs < 0) throw DimensionError("train_gdd: epochs must be >= 0");
  arch.out_channels = basis.dim();
  arch.guidance_channels = guidance.bands();

  GddTrainResult result{GuidedDecoderModel(arch, guidance, seed), FeatureMap{}, {}};
  auto& model = result.model;
  result.z = random_latent(arch.latent_channels, model.latent_height(), model.latent_width(), settings.latent_std,
                           seed, 101);
  AdamState adam(model.params().size(), settings.lr);
  Matrix grad_a;
  for (int epoch = 0; epoch <= settings.epochs; ++epoch) {
    const bool last = epoch == settings.epochs;
    DecoderCache cache;
    const FeatureMap out = decoder_forward(model, result.z, last ? nullptr : &cache, true);
    const double loss = objective.evaluate(to_matrix(out), last ? nullptr : &grad_a);
    if (!std::isfinite(loss)) throw DivergenceError("train_gdd: non-finite loss", epoch);
    result.loss_trace.push_back(loss);
    if (last) break;
    const auto grads = decoder_backward(model, cache, feature_map_from(grad_a, model.height(), model.width()), true);
    adam_step(adam, model.mutable_params(), grads.grad_params);
  }
  model.refresh_guidance();
  return result;
}

}  // namespace mbgdd

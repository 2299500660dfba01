#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "mbgdd/gdd.hpp"
#include "mbgdd/generator.hpp"
#include "mbgdd/nn.hpp"

namespace mbgdd {

/// Convolutional VAE over single-band square patches. Encoder: 3x3 input
/// conv, `encoder_blocks` 3x3 conv + LeakyReLU blocks, dense head to
/// (mean, log-variance). Decoder: dense expansion, `decoder_blocks` blocks,
/// 3x3 output conv.
struct VaeArchitecture {
  int patch = 25;
  int latent_dim = 16;
  int width = 8;
  int encoder_blocks = 2;
  int decoder_blocks = 2;
  double leaky_slope = 0.2;
  double kl_weight = 1e-2;

  friend bool operator==(const VaeArchitecture&, const VaeArchitecture&) = default;
};

class VaeModel {
 public:
  VaeModel(const VaeArchitecture& arch, std::uint64_t seed) : arch_(arch), seed_(seed) {
    if (arch.patch < 1 || arch.latent_dim < 1 || arch.width < 1 || arch.encoder_blocks < 0 || arch.decoder_blocks < 0)
      throw DimensionError("VaeModel: invalid architecture");
    ParamLayout layout;
    const int flat = arch.width * arch.patch * arch.patch;
    enc_in_ = Conv2d(layout, 1, arch.width, 3);
    for (int i = 0; i < arch.encoder_blocks; ++i) enc_blocks_.emplace_back(layout, arch.width, arch.width, 3);
    enc_head_ = Dense(layout, flat, 2 * arch.latent_dim);
    dec_in_ = Dense(layout, arch.latent_dim, flat);
    for (int i = 0; i < arch.decoder_blocks; ++i) dec_blocks_.emplace_back(layout, arch.width, arch.width, 3);
    dec_out_ = Conv2d(layout, arch.width, 1, 3);
    params_.assign(layout.total(), 0.0);

    CounterRng rng(seed, 200);
    enc_in_.init(params_, rng);
    for (const auto& c : enc_blocks_) c.init(params_, rng);
    enc_head_.init(params_, rng);
    dec_in_.init(params_, rng);
    for (const auto& c : dec_blocks_) c.init(params_, rng);
    dec_out_.init(params_, rng);
  }

  const VaeArchitecture& architecture() const { return arch_; }
  std::uint64_t seed() const { return seed_; }
  std::span<const double> params() const { return params_; }
  std::span<double> mutable_params() { return params_; }
  void set_params(std::vector<double> p) {
    if (p.size() != params_.size()) throw DimensionError("VaeModel: parameter count mismatch");
    params_.assign(p.begin(), p.end());
  }

  const Conv2d& enc_in() const { return enc_in_; }
  const std::vector<Conv2d>& enc_blocks() const { return enc_blocks_; }
  const Dense& enc_head() const { return enc_head_; }
  const Dense& dec_in() const { return dec_in_; }
  const std::vector<Conv2d>& dec_blocks() const { return dec_blocks_; }
  const Conv2d& dec_out() const { return dec_out_; }

 private:
  VaeArchitecture arch_;
  std::uint64_t seed_;
  AlignedBuffer params_;
  Conv2d enc_in_;
  std::vector<Conv2d> enc_blocks_;
  Dense enc_head_;
  Dense dec_in_;
  std::vector<Conv2d> dec_blocks_;
  Conv2d dec_out_;
};

struct VaeEncoderCache {
  std::vector<RowMatrix> cols;
  std::vector<FeatureMap> pre;
  Vector flat;
};

struct VaeDecoderCache {
  Vector z;
  Vector dense_pre;
  std::vector<RowMatrix> cols;  // inputs of the conv blocks and the output conv
  std::vector<FeatureMap> pre;  // conv block outputs before LeakyReLU
};

struct GaussianPosterior {
  Vector mean;
  Vector log_var;
};

inline GaussianPosterior vae_encode(const VaeModel& model, const FeatureMap& patch, VaeEncoderCache* cache = nullptr) {
  const auto& arch = model.architecture();
  if (patch.channels != 1 || patch.height != arch.patch || patch.width != arch.patch)
    throw DimensionError("vae_encode: patch shape mismatch");
  const auto params = model.params();
  VaeEncoderCache local;
  RowMatrix cols;
  FeatureMap pre = model.enc_in().forward(params, patch, &cols);
  local.cols.push_back(std::move(cols));
  FeatureMap h = leaky_relu(pre, arch.leaky_slope);
  local.pre.push_back(std::move(pre));
  for (const auto& conv : model.enc_blocks()) {
    pre = conv.forward(params, h, &cols);
    local.cols.push_back(std::move(cols));
    h = leaky_relu(pre, arch.leaky_slope);
    local.pre.push_back(std::move(pre));
  }
  local.flat = Eigen::Map<const Vector>(h.data.data(), static_cast<Eigen::Index>(h.data.size()));
  const Vector stats = model.enc_head().forward(params, local.flat);
  GaussianPosterior post{stats.head(arch.latent_dim), stats.tail(arch.latent_dim)};
  if (cache) *cache = std::move(local);
  return post;
}

inline void vae_encode_backward(const VaeModel& model, const VaeEncoderCache& cache, const Vector& dmean,
                                const Vector& dlog_var, std::span<double> grads) {
  const auto& arch = model.architecture();
  const auto params = model.params();
  Vector dstats(2 * arch.latent_dim);
  dstats << dmean, dlog_var;
  const Vector dflat = model.enc_head().backward(params, cache.flat, dstats, grads, true);
  FeatureMap dh(arch.width, arch.patch, arch.patch);
  Eigen::Map<Vector>(dh.data.data(), static_cast<Eigen::Index>(dh.data.size())) = dflat;
  for (int i = static_cast<int>(model.enc_blocks().size()); i >= 0; --i) {
    const FeatureMap dpre = leaky_relu_backward(cache.pre[i], dh, arch.leaky_slope);
    const Conv2d& conv = i == 0 ? model.enc_in() : model.enc_blocks()[i - 1];
    dh = conv.backward(params, cache.cols[i], dpre, grads, i > 0);
  }
}

inline FeatureMap vae_decode(const VaeModel& model, const Vector& z, VaeDecoderCache* cache = nullptr) {
  const auto& arch = model.architecture();
  if (z.size() != arch.latent_dim) throw DimensionError("vae_decode: latent size mismatch");
  const auto params = model.params();
  VaeDecoderCache local;
  local.z = z;
  local.dense_pre = model.dec_in().forward(params, z);
  FeatureMap h(arch.width, arch.patch, arch.patch);
  for (std::size_t i = 0; i < h.data.size(); ++i) {
    const double v = local.dense_pre[static_cast<Eigen::Index>(i)];
    h.data[i] = v < 0.0 ? arch.leaky_slope * v : v;
  }
  RowMatrix cols;
  for (const auto& conv : model.dec_blocks()) {
    FeatureMap pre = conv.forward(params, h, &cols);
    local.cols.push_back(std::move(cols));
    h = leaky_relu(pre, arch.leaky_slope);
    local.pre.push_back(std::move(pre));
  }
  FeatureMap out = model.dec_out().forward(params, h, &cols);
  local.cols.push_back(std::move(cols));
  if (cache) *cache = std::move(local);
  return out;
}

/// Returns d(loss)/dz; accumulates parameter gradients when grads is non-empty.
inline Vector vae_decode_backward(const VaeModel& model, const VaeDecoderCache& cache, const FeatureMap& dout,
                                  std::span<double> grads) {
  const auto& arch = model.architecture();
  const auto params = model.params();
  const int nblocks = static_cast<int>(model.dec_blocks().size());
  FeatureMap dh = model.dec_out().backward(params, cache.cols[nblocks], dout, grads, true);
  for (int i = nblocks - 1; i >= 0; --i) {
    const FeatureMap dpre = leaky_relu_backward(cache.pre[i], dh, arch.leaky_slope);
    dh = model.dec_blocks()[i].backward(params, cache.cols[i], dpre, grads, true);
  }
  Vector ddense(static_cast<Eigen::Index>(dh.data.size()));
  for (std::size_t i = 0; i < dh.data.size(); ++i) {
    const auto idx = static_cast<Eigen::Index>(i);
    ddense[idx] = cache.dense_pre[idx] < 0.0 ? arch.leaky_slope * dh.data[i] : dh.data[i];
  }
  return model.dec_in().backward(params, cache.z, ddense, grads, true);
}

/// KL(N(mean, diag(exp(log_var))) || N(0, I)).
inline double gaussian_kl(const Vector& mean, const Vector& log_var) {
  return -0.5 * (1.0 + log_var.array() - mean.array().square() - log_var.array().exp()).sum();
}

struct VaeTrainSettings {
  int epochs = 100;
  double lr = 1e-3;
  int patches = 500;
  int batch = 16;
};

struct VaeTrainResult {
  VaeModel model;
  std::vector<double> loss_trace;  // mean per-patch loss of each epoch
};

/// Random single-band patches of the standardized guidance image.
inline std::vector<FeatureMap> sample_guidance_patches(const ImageCube& guidance, int patch, int count,
                                                       std::uint64_t seed) {
  if (patch > guidance.height() || patch > guidance.width())
    throw DimensionError("sample_guidance_patches: patch larger than guidance image");
  const FeatureMap g = guidance_input_from(guidance);
  CounterRng rng(seed, 210);
  std::vector<FeatureMap> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int b = static_cast<int>(rng.below(static_cast<std::uint64_t>(g.channels)));
    const int r0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(g.height - patch + 1)));
    const int c0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(g.width - patch + 1)));
    FeatureMap p(1, patch, patch);
    for (int r = 0; r < patch; ++r)
      for (int c = 0; c < patch; ++c) p.at(0, r * patch + c) = g.at(b, (r0 + r) * g.width + c0 + c);
    out.push_back(std::move(p));
  }
  return out;
}

/// Minimizes mean reconstruction SSE + kl_weight * mean KL with Adam, one
/// reparameterized draw per patch per epoch.
inline VaeTrainResult train_vae(const std::vector<FeatureMap>& patches, const VaeArchitecture& arch,
                                const VaeTrainSettings& settings, std::uint64_t seed) {
  if (patches.empty()) throw DimensionError("train_vae: no training patches");
  if (settings.epochs < 0 || settings.batch < 1) throw DimensionError("train_vae: invalid settings");
  VaeTrainResult result{VaeModel(arch, seed), {}};
  VaeModel& model = result.model;
  AdamState adam(model.params().size(), settings.lr);
  CounterRng rng(seed, 220);
  std::vector<std::size_t> order(patches.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  AlignedBuffer grads(model.params().size());

  for (int epoch = 0; epoch < settings.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(settings.batch)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(settings.batch));
      std::fill(grads.begin(), grads.end(), 0.0);
      const double inv = 1.0 / static_cast<double>(stop - start);
      for (std::size_t s = start; s < stop; ++s) {
        const FeatureMap& x = patches[order[s]];
        VaeEncoderCache ec;
        const GaussianPosterior post = vae_encode(model, x, &ec);
        Vector eps(arch.latent_dim);
        for (int d = 0; d < arch.latent_dim; ++d) eps[d] = rng.normal();
        const Vector sigma = (0.5 * post.log_var.array()).exp();
        const Vector z = post.mean + sigma.cwiseProduct(eps);
        VaeDecoderCache dc;
        const FeatureMap xhat = vae_decode(model, z, &dc);
        FeatureMap dout(1, arch.patch, arch.patch);
        double recon = 0.0;
        for (std::size_t k = 0; k < x.data.size(); ++k) {
          const double r = xhat.data[k] - x.data[k];
          recon += r * r;
          dout.data[k] = 2.0 * r * inv;
        }
        const double kl = gaussian_kl(post.mean, post.log_var);
        const double loss = recon + arch.kl_weight * kl;
        if (!std::isfinite(loss)) throw DivergenceError("train_vae: non-finite loss", epoch);
        epoch_loss += loss;
        const Vector dz = vae_decode_backward(model, dc, dout, grads);
        const Vector dmean = dz + arch.kl_weight * inv * post.mean;
        const Vector dlog_var = (dz.cwiseProduct(eps).cwiseProduct(sigma) * 0.5).eval() +
                                arch.kl_weight * inv * 0.5 * (post.log_var.array().exp() - 1.0).matrix();
        vae_encode_backward(model, ec, dmean, dlog_var, grads);
      }
      adam_step(adam, model.mutable_params(), grads);
    }
    result.loss_trace.push_back(epoch_loss / static_cast<double>(patches.size()));
  }
  return result;
}

/// Overlapping patch placement: stride patch/2 along each axis, with a final
/// patch flush against the far border.
struct PatchGrid {
  int patch = 0;
  std::vector<int> rows;
  std::vector<int> cols;

  int count() const { return static_cast<int>(rows.size() * cols.size()); }

  static std::vector<int> axis(int size, int patch) {
    if (patch > size) throw DimensionError("PatchGrid: patch larger than image");
    const int stride = std::max(1, patch / 2);
    std::vector<int> pos;
    for (int p = 0; p + patch <= size; p += stride) pos.push_back(p);
    if (pos.back() + patch < size) pos.push_back(size - patch);
    return pos;
  }

  static PatchGrid covering(int height, int width, int patch) { return {patch, axis(height, patch), axis(width, patch)}; }

  /// Number of patches covering each pixel (row-major).
  std::vector<double> coverage(int height, int width) const {
    std::vector<double> w(static_cast<std::size_t>(height) * width, 0.0);
    for (int r0 : rows)
      for (int c0 : cols)
        for (int r = r0; r < r0 + patch; ++r)
          for (int c = c0; c < c0 + patch; ++c)
            if (r >= 0 && r < height && c >= 0 && c < width) w[static_cast<std::size_t>(r) * width + c] += 1.0;
    return w;
  }
};

/// D(.) backed by a trained VAE decoder: each of the B~ coefficient maps is
/// assembled from independently decoded patches averaged on overlaps, then
/// mapped through a per-map affine (scale, offset) into coefficient units.
/// The latent code has latent_dim channels, height B~ and one column per patch.
class VaeGenerator final : public Generator {
 public:
  VaeGenerator(const VaeModel& model, PatchGrid grid, int height, int width, Vector scale, Vector offset)
      : model_(&model), grid_(std::move(grid)), height_(height), width_(width), scale_(std::move(scale)),
        offset_(std::move(offset)) {
    if (grid_.patch != model.architecture().patch) throw DimensionError("VaeGenerator: patch size mismatch");
    if (scale_.size() != offset_.size() || scale_.size() < 1) throw DimensionError("VaeGenerator: bad affine");
    weight_ = grid_.coverage(height, width);
    for (double w : weight_)
      if (w == 0.0) throw DimensionError("VaeGenerator: patch grid leaves a coverage gap");
  }

  int bands() const { return static_cast<int>(scale_.size()); }
  const PatchGrid& grid() const { return grid_; }
  int latent_channels() const { return model_->architecture().latent_dim; }

  FeatureMap initial_latent(double stddev, std::uint64_t seed) const {
    return random_latent(latent_channels(), bands(), grid_.count(), stddev, seed, 230);
  }

  std::unique_ptr<GeneratorPass> run(const FeatureMap& z) const override {
    return std::make_unique<Pass>(*this, z);
  }

 private:
  class Pass final : public GeneratorPass {
   public:
    Pass(const VaeGenerator& g, const FeatureMap& z) : g_(g) {
      if (z.channels != g.latent_channels() || z.height != g.bands() || z.width != g.grid_.count())
        throw DimensionError("VaeGenerator: latent shape mismatch");
      const int p = g.grid_.patch, n = g.height_ * g.width_;
      out_ = Matrix::Zero(g.bands(), n);
      caches_.resize(static_cast<std::size_t>(g.bands()) * g.grid_.count());
      for (int b = 0; b < g.bands(); ++b)
        for (int k = 0; k < g.grid_.count(); ++k) {
          Vector zk(z.channels);
          for (int d = 0; d < z.channels; ++d) zk[d] = z.at(d, b * z.width + k);
          const FeatureMap patch = vae_decode(*g.model_, zk, &caches_[static_cast<std::size_t>(b) * g.grid_.count() + k]);
          const int r0 = g.grid_.rows[k / g.grid_.cols.size()], c0 = g.grid_.cols[k % g.grid_.cols.size()];
          for (int r = 0; r < p; ++r)
            for (int c = 0; c < p; ++c) out_(b, (r0 + r) * g.width_ + c0 + c) += patch.at(0, r * p + c);
        }
      for (int b = 0; b < g.bands(); ++b)
        for (int i = 0; i < n; ++i) out_(b, i) = g.scale_[b] * out_(b, i) / g.weight_[i] + g.offset_[b];
      z_shape_ = FeatureMap(z.channels, z.height, z.width);
    }

    const Matrix& output() const override { return out_; }

    FeatureMap latent_gradient(const Matrix& grad_out) override {
      const int p = g_.grid_.patch;
      FeatureMap dz = z_shape_;
      for (int b = 0; b < g_.bands(); ++b)
        for (int k = 0; k < g_.grid_.count(); ++k) {
          const int r0 = g_.grid_.rows[k / g_.grid_.cols.size()], c0 = g_.grid_.cols[k % g_.grid_.cols.size()];
          FeatureMap dpatch(1, p, p);
          for (int r = 0; r < p; ++r)
            for (int c = 0; c < p; ++c) {
              const int i = (r0 + r) * g_.width_ + c0 + c;
              dpatch.at(0, r * p + c) = g_.scale_[b] * grad_out(b, i) / g_.weight_[i];
            }
          const Vector dzk =
              vae_decode_backward(*g_.model_, caches_[static_cast<std::size_t>(b) * g_.grid_.count() + k], dpatch, {});
          for (int d = 0; d < dz.channels; ++d) dz.at(d, b * dz.width + k) = dzk[d];
        }
      return dz;
    }

   private:
    const VaeGenerator& g_;
    std::vector<VaeDecoderCache> caches_;
    Matrix out_;
    FeatureMap z_shape_;
  };

  const VaeModel* model_;
  PatchGrid grid_;
  int height_;
  int width_;
  Vector scale_;
  Vector offset_;
  std::vector<double> weight_;
};

/// Assembles decoded patches for every coefficient map (see VaeGenerator).
inline Matrix vae_generate(const VaeModel& model, const PatchGrid& grid, const FeatureMap& z, int height, int width) {
  const Vector ones = Vector::Ones(z.height), zeros = Vector::Zero(z.height);
  return VaeGenerator(model, grid, height, width, ones, zeros).generate(z);
}

}  // namespace mbgdd

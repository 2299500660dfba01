#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "mbgdd/data_model.hpp"
#include "mbgdd/rng.hpp"

namespace mbgdd {

/// channels x height x width activations, channel-major.
/// Buffers that Eigen maps are over-aligned so SIMD reductions split the same
/// way on every allocation; otherwise results differ in the last bits run to run.
using AlignedBuffer = std::vector<double, Eigen::aligned_allocator<double>>;

struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  AlignedBuffer data;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w) : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, 0.0) {}

  int pixels() const { return height * width; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const FeatureMap& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }

  double& at(int c, int p) { return data[static_cast<std::size_t>(c) * pixels() + p]; }
  double at(int c, int p) const { return data[static_cast<std::size_t>(c) * pixels() + p]; }

  Eigen::Map<RowMatrix> mat() { return {data.data(), channels, pixels()}; }
  Eigen::Map<const RowMatrix> mat() const { return {data.data(), channels, pixels()}; }

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;
};

inline FeatureMap feature_map_from(const Matrix& m, int height, int width) {
  detail::require(m.cols() == static_cast<Eigen::Index>(height) * width, "feature_map_from: size mismatch");
  FeatureMap f(static_cast<int>(m.rows()), height, width);
  f.mat() = m;
  return f;
}

inline Matrix to_matrix(const FeatureMap& f) { return f.mat(); }

/// Allocates contiguous slices of a flat parameter vector.
class ParamLayout {
 public:
  std::size_t allocate(std::size_t count) {
    const std::size_t offset = total_;
    total_ += count;
    return offset;
  }
  std::size_t total() const { return total_; }

 private:
  std::size_t total_ = 0;
};

/// Zero-padded, stride-1 k x k convolution with bias.
/// Weights are stored [out][in][ky][kx].
struct Conv2d {
  int in = 0;
  int out = 0;
  int k = 1;
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;

  Conv2d() = default;
  Conv2d(ParamLayout& layout, int in_channels, int out_channels, int kernel)
      : in(in_channels), out(out_channels), k(kernel) {
    detail::require(kernel % 2 == 1 && in >= 1 && out >= 1, "Conv2d: invalid configuration");
    weight_offset = layout.allocate(static_cast<std::size_t>(out) * in * k * k);
    bias_offset = layout.allocate(static_cast<std::size_t>(out));
  }

  int fan_in() const { return in * k * k; }

  /// Weights ~ U(-a, a) with a = sqrt(1 / fan_in); biases set to `bias`.
  void init(std::span<double> params, CounterRng& rng, double bias = 0.0) const {
    const double a = std::sqrt(1.0 / fan_in());
    for (std::size_t i = 0; i < static_cast<std::size_t>(out) * fan_in(); ++i)
      params[weight_offset + i] = rng.uniform(-a, a);
    for (int o = 0; o < out; ++o) params[bias_offset + o] = bias;
  }

  Eigen::Map<const RowMatrix> weights(std::span<const double> params) const {
    return {params.data() + weight_offset, out, fan_in()};
  }

  /// Unfolds x into a (in*k*k) x pixels patch matrix.
  RowMatrix im2col(const FeatureMap& x) const {
    detail::require(x.channels == in, "Conv2d: input channel mismatch");
    const int h = x.height, w = x.width, r = k / 2;
    RowMatrix cols = RowMatrix::Zero(fan_in(), x.pixels());
    for (int c = 0; c < in; ++c)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          double* dst = cols.row((c * k + ky) * k + kx).data();
          const double* src = x.data.data() + static_cast<std::size_t>(c) * x.pixels();
          const int dy = ky - r, dx = kx - r;
          for (int y = std::max(0, -dy); y < std::min(h, h - dy); ++y) {
            const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
            for (int xx = x0; xx < x1; ++xx) dst[y * w + xx] = src[(y + dy) * w + xx + dx];
          }
        }
    return cols;
  }

  FeatureMap col2im(const RowMatrix& cols, int h, int w) const {
    FeatureMap dx(in, h, w);
    const int r = k / 2;
    for (int c = 0; c < in; ++c)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const double* src = cols.row((c * k + ky) * k + kx).data();
          double* dst = dx.data.data() + static_cast<std::size_t>(c) * dx.pixels();
          const int dy = ky - r, dxo = kx - r;
          for (int y = std::max(0, -dy); y < std::min(h, h - dy); ++y) {
            const int x0 = std::max(0, -dxo), x1 = std::min(w, w - dxo);
            for (int xx = x0; xx < x1; ++xx) dst[(y + dy) * w + xx + dxo] += src[y * w + xx];
          }
        }
    return dx;
  }

  /// Forward pass from an already unfolded input.
  FeatureMap forward_cols(std::span<const double> params, const RowMatrix& cols, int h, int w) const {
    FeatureMap y(out, h, w);
    y.mat().noalias() = weights(params) * cols;
    for (int o = 0; o < out; ++o) y.mat().row(o).array() += params[bias_offset + o];
    return y;
  }

  FeatureMap forward(std::span<const double> params, const FeatureMap& x, RowMatrix* cols_cache = nullptr) const {
    if (k == 1) {
      detail::require(x.channels == in, "Conv2d: input channel mismatch");
      FeatureMap y(out, x.height, x.width);
      y.mat().noalias() = weights(params) * x.mat();
      for (int o = 0; o < out; ++o) y.mat().row(o).array() += params[bias_offset + o];
      if (cols_cache) *cols_cache = x.mat();
      return y;
    }
    RowMatrix cols = im2col(x);
    FeatureMap y = forward_cols(params, cols, x.height, x.width);
    if (cols_cache) *cols_cache = std::move(cols);
    return y;
  }

  /// Accumulates parameter gradients into `grads` (when non-empty) and
  /// returns the input gradient (empty map when need_input is false).
  FeatureMap backward(std::span<const double> params, const Eigen::Ref<const RowMatrix>& cols, const FeatureMap& dy,
                      std::span<double> grads, bool need_input = true) const {
    detail::require(dy.channels == out && cols.cols() == dy.pixels(), "Conv2d: gradient shape mismatch");
    if (!grads.empty()) {
      Eigen::Map<RowMatrix> gw(grads.data() + weight_offset, out, fan_in());
      gw.noalias() += dy.mat() * cols.transpose();
      for (int o = 0; o < out; ++o) grads[bias_offset + o] += dy.mat().row(o).sum();
    }
    if (!need_input) return {};
    RowMatrix dcols = weights(params).transpose() * dy.mat();
    if (k == 1) {
      FeatureMap dx(in, dy.height, dy.width);
      dx.mat() = dcols;
      return dx;
    }
    return col2im(dcols, dy.height, dy.width);
  }
};

/// Fully connected layer on a flattened vector; weights [out][in].
struct Dense {
  int in = 0;
  int out = 0;
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;

  Dense() = default;
  Dense(ParamLayout& layout, int in_features, int out_features) : in(in_features), out(out_features) {
    weight_offset = layout.allocate(static_cast<std::size_t>(in) * out);
    bias_offset = layout.allocate(static_cast<std::size_t>(out));
  }

  void init(std::span<double> params, CounterRng& rng, double bias = 0.0) const {
    const double a = std::sqrt(1.0 / in);
    for (std::size_t i = 0; i < static_cast<std::size_t>(in) * out; ++i) params[weight_offset + i] = rng.uniform(-a, a);
    for (int o = 0; o < out; ++o) params[bias_offset + o] = bias;
  }

  Eigen::Map<const RowMatrix> weights(std::span<const double> params) const {
    return {params.data() + weight_offset, out, in};
  }

  Vector forward(std::span<const double> params, const Vector& x) const {
    detail::require(x.size() == in, "Dense: input size mismatch");
    Eigen::Map<const Vector> b(params.data() + bias_offset, out);
    return weights(params) * x + b;
  }

  Vector backward(std::span<const double> params, const Vector& x, const Vector& dy, std::span<double> grads,
                  bool need_input = true) const {
    if (!grads.empty()) {
      Eigen::Map<RowMatrix> gw(grads.data() + weight_offset, out, in);
      gw.noalias() += dy * x.transpose();
      Eigen::Map<Vector> gb(grads.data() + bias_offset, out);
      gb += dy;
    }
    if (!need_input) return {};
    return weights(params).transpose() * dy;
  }
};

inline FeatureMap leaky_relu(const FeatureMap& x, double slope) {
  FeatureMap y = x;
  for (double& v : y.data)
    if (v < 0.0) v *= slope;
  return y;
}

/// Gradient through LeakyReLU given its pre-activation input.
inline FeatureMap leaky_relu_backward(const FeatureMap& pre, const FeatureMap& dy, double slope) {
  FeatureMap dx = dy;
  for (std::size_t i = 0; i < dx.data.size(); ++i)
    if (pre.data[i] < 0.0) dx.data[i] *= slope;
  return dx;
}

inline FeatureMap avg_pool2(const FeatureMap& x) {
  detail::require(x.height % 2 == 0 && x.width % 2 == 0, "avg_pool2: spatial size must be even");
  FeatureMap y(x.channels, x.height / 2, x.width / 2);
  for (int c = 0; c < x.channels; ++c)
    for (int i = 0; i < y.height; ++i)
      for (int j = 0; j < y.width; ++j) {
        const int p = 2 * i * x.width + 2 * j;
        y.at(c, i * y.width + j) =
            0.25 * (x.at(c, p) + x.at(c, p + 1) + x.at(c, p + x.width) + x.at(c, p + x.width + 1));
      }
  return y;
}

inline FeatureMap avg_pool2_backward(const FeatureMap& dy, int height, int width) {
  FeatureMap dx(dy.channels, height, width);
  for (int c = 0; c < dy.channels; ++c)
    for (int i = 0; i < dy.height; ++i)
      for (int j = 0; j < dy.width; ++j) {
        const double g = 0.25 * dy.at(c, i * dy.width + j);
        const int p = 2 * i * width + 2 * j;
        dx.at(c, p) += g;
        dx.at(c, p + 1) += g;
        dx.at(c, p + width) += g;
        dx.at(c, p + width + 1) += g;
      }
  return dx;
}

namespace detail {

/// Half-pixel-centered 2x linear interpolation taps along one axis, edge clamped.
struct UpsampleTap {
  int lo;
  int hi;
  double w_hi;
};

inline std::vector<UpsampleTap> upsample_taps(int in) {
  std::vector<UpsampleTap> taps(static_cast<std::size_t>(2 * in));
  for (int o = 0; o < 2 * in; ++o) {
    const double src = std::clamp((o + 0.5) / 2.0 - 0.5, 0.0, static_cast<double>(in - 1));
    const int lo = static_cast<int>(std::floor(src));
    const int hi = std::min(lo + 1, in - 1);
    taps[o] = {lo, hi, src - lo};
  }
  return taps;
}

}  // namespace detail

inline FeatureMap upsample2_bilinear(const FeatureMap& x) {
  FeatureMap y(x.channels, 2 * x.height, 2 * x.width);
  const auto ty = detail::upsample_taps(x.height);
  const auto tx = detail::upsample_taps(x.width);
  for (int c = 0; c < x.channels; ++c)
    for (int i = 0; i < y.height; ++i)
      for (int j = 0; j < y.width; ++j) {
        const auto& a = ty[i];
        const auto& b = tx[j];
        const double top = (1 - b.w_hi) * x.at(c, a.lo * x.width + b.lo) + b.w_hi * x.at(c, a.lo * x.width + b.hi);
        const double bot = (1 - b.w_hi) * x.at(c, a.hi * x.width + b.lo) + b.w_hi * x.at(c, a.hi * x.width + b.hi);
        y.at(c, i * y.width + j) = (1 - a.w_hi) * top + a.w_hi * bot;
      }
  return y;
}

inline FeatureMap upsample2_bilinear_backward(const FeatureMap& dy, int height, int width) {
  FeatureMap dx(dy.channels, height, width);
  const auto ty = detail::upsample_taps(height);
  const auto tx = detail::upsample_taps(width);
  for (int c = 0; c < dy.channels; ++c)
    for (int i = 0; i < dy.height; ++i)
      for (int j = 0; j < dy.width; ++j) {
        const auto& a = ty[i];
        const auto& b = tx[j];
        const double g = dy.at(c, i * dy.width + j);
        dx.at(c, a.lo * width + b.lo) += (1 - a.w_hi) * (1 - b.w_hi) * g;
        dx.at(c, a.lo * width + b.hi) += (1 - a.w_hi) * b.w_hi * g;
        dx.at(c, a.hi * width + b.lo) += a.w_hi * (1 - b.w_hi) * g;
        dx.at(c, a.hi * width + b.hi) += a.w_hi * b.w_hi * g;
      }
  return dx;
}

/// State kept by modulate() for its backward pass.
struct ModulationCache {
  FeatureMap normalized;
  Vector inv_std;
  FeatureMap gamma_beta;
};

/// Guided modulation: each channel of h is normalized to zero mean and unit
/// variance over pixels (variance floor eps), then scaled by gamma and
/// shifted by beta. gamma_beta stacks the 2C maps [gamma; beta].
inline FeatureMap modulate(const FeatureMap& h, const FeatureMap& gamma_beta, double eps,
                           ModulationCache* cache = nullptr) {
  const int c = h.channels, p = h.pixels();
  detail::require(gamma_beta.channels == 2 * c && gamma_beta.pixels() == p, "modulate: gamma/beta shape mismatch");
  FeatureMap n(c, h.height, h.width);
  Vector inv_std(c);
  for (int ch = 0; ch < c; ++ch) {
    const auto row = h.mat().row(ch);
    const double mean = row.mean();
    const double var = (row.array() - mean).square().mean();
    inv_std[ch] = 1.0 / std::sqrt(var + eps);
    n.mat().row(ch) = (row.array() - mean) * inv_std[ch];
  }
  FeatureMap out(c, h.height, h.width);
  out.mat() = gamma_beta.mat().topRows(c).cwiseProduct(n.mat()) + gamma_beta.mat().bottomRows(c);
  if (cache) *cache = ModulationCache{std::move(n), std::move(inv_std), gamma_beta};
  return out;
}

inline void modulate_backward(const ModulationCache& cache, const FeatureMap& dout, FeatureMap* dh,
                              FeatureMap* dgamma_beta) {
  const int c = dout.channels, p = dout.pixels();
  const auto n = cache.normalized.mat();
  const auto gamma = cache.gamma_beta.mat().topRows(c);
  if (dgamma_beta) {
    *dgamma_beta = FeatureMap(2 * c, dout.height, dout.width);
    dgamma_beta->mat().topRows(c) = dout.mat().cwiseProduct(n);
    dgamma_beta->mat().bottomRows(c) = dout.mat();
  }
  if (dh) {
    *dh = FeatureMap(c, dout.height, dout.width);
    for (int ch = 0; ch < c; ++ch) {
      const Eigen::RowVectorXd dn = dout.mat().row(ch).cwiseProduct(gamma.row(ch));
      const double mean_dn = dn.mean();
      const double mean_dn_n = dn.cwiseProduct(n.row(ch)).sum() / p;
      dh->mat().row(ch) = cache.inv_std[ch] * (dn.array() - mean_dn - n.row(ch).array() * mean_dn_n);
    }
  }
}

/// Bias-corrected Adam.
struct AdamState {
  std::int64_t t = 0;
  std::vector<double> m;
  std::vector<double> v;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  AdamState(std::size_t n, double learning_rate) : m(n, 0.0), v(n, 0.0), lr(learning_rate) {}
};

inline void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads) {
  if (params.size() != grads.size() || params.size() != state.m.size() || state.v.size() != state.m.size())
    throw DimensionError("adam_step: shape mismatch");
  ++state.t;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
  }
}

inline FeatureMap random_latent(int channels, int height, int width, double stddev, std::uint64_t seed,
                                std::uint64_t stream) {
  FeatureMap z(channels, height, width);
  CounterRng rng(seed, stream);
  for (double& v : z.data) v = stddev * rng.normal();
  return z;
}

}  // namespace mbgdd

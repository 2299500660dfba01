#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "mbgdd/data_model.hpp"
#include "mbgdd/fft.hpp"
#include "mbgdd/rng.hpp"

namespace mbgdd {

/// Square odd-sized stencil, taps row-major, centered at (size/2, size/2).
struct Kernel2d {
  int size = 1;
  std::vector<double> taps{1.0};

  double at(int dy, int dx) const {
    const int r = size / 2;
    return taps[static_cast<std::size_t>(dy + r) * size + (dx + r)];
  }
  double sum() const { return std::accumulate(taps.begin(), taps.end(), 0.0); }
};

inline Kernel2d delta_kernel() { return Kernel2d{}; }

inline Kernel2d gaussian_kernel(int size, double sigma) {
  if (size < 1 || size % 2 == 0) throw DimensionError("gaussian_kernel: size must be odd and >= 1");
  if (!(sigma > 0.0)) throw DimensionError("gaussian_kernel: sigma must be positive");
  Kernel2d k{size, std::vector<double>(static_cast<std::size_t>(size) * size)};
  const int r = size / 2;
  double total = 0.0;
  for (int y = -r; y <= r; ++y)
    for (int x = -r; x <= r; ++x) {
      const double v = std::exp(-(x * x + y * y) / (2.0 * sigma * sigma));
      k.taps[static_cast<std::size_t>(y + r) * size + (x + r)] = v;
      total += v;
    }
  for (double& v : k.taps) v /= total;
  return k;
}

/// Circular 2-D convolution on a fixed height x width grid, diagonalized by
/// the DFT. The kernel center sits at (0, 0), so a delta kernel is the
/// identity and symmetric kernels have real eigenvalues.
class BlurOperator {
 public:
  BlurOperator(Kernel2d kernel, int height, int width)
      : kernel_(std::move(kernel)), height_(height), width_(width),
        fft_(std::make_shared<Fft2d>(height, width)) {
    if (kernel_.size % 2 == 0 || kernel_.taps.size() != static_cast<std::size_t>(kernel_.size) * kernel_.size)
      throw DimensionError("BlurOperator: kernel must be square with odd size");
    if (kernel_.size > height || kernel_.size > width)
      throw DimensionError("BlurOperator: kernel larger than image");
    std::vector<Complex> grid(fft_->size(), Complex{});
    const int r = kernel_.size / 2;
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) {
        const int y = (dy % height + height) % height;
        const int x = (dx % width + width) % width;
        grid[static_cast<std::size_t>(y) * width + x] += kernel_.at(dy, dx);
      }
    fft_->forward(grid);
    eigenvalues_ = std::move(grid);
  }

  const Kernel2d& kernel() const { return kernel_; }
  int height() const { return height_; }
  int width() const { return width_; }
  int pixels() const { return height_ * width_; }
  const std::vector<Complex>& eigenvalues() const { return eigenvalues_; }
  const Fft2d& fft() const { return *fft_; }

  /// out = k (*) in, or the adjoint (correlation) when adjoint is set.
  void apply(std::span<const double> in, std::span<double> out, bool adjoint = false) const {
    detail::require(in.size() == static_cast<std::size_t>(pixels()) && out.size() == in.size(),
                    "BlurOperator: band size does not match operator grid");
    std::vector<Complex> spec = fft_->forward_real(in);
    for (std::size_t i = 0; i < spec.size(); ++i)
      spec[i] *= adjoint ? std::conj(eigenvalues_[i]) : eigenvalues_[i];
    fft_->inverse(spec);
    for (std::size_t i = 0; i < spec.size(); ++i) out[i] = spec[i].real();
  }

  /// Applies the blur to every row of a (bands x pixels) matrix.
  Matrix apply_rows(const Matrix& m, bool adjoint = false) const {
    detail::require(m.cols() == pixels(), "BlurOperator: column count does not match operator grid");
    Matrix out(m.rows(), m.cols());
    std::vector<double> row(static_cast<std::size_t>(pixels())), res(row.size());
    for (Eigen::Index b = 0; b < m.rows(); ++b) {
      for (int n = 0; n < pixels(); ++n) row[n] = m(b, n);
      apply(row, res, adjoint);
      for (int n = 0; n < pixels(); ++n) out(b, n) = res[n];
    }
    return out;
  }

 private:
  Kernel2d kernel_;
  int height_;
  int width_;
  std::shared_ptr<Fft2d> fft_;
  std::vector<Complex> eigenvalues_;
};

inline ImageCube cyclic_blur(const ImageCube& cube, const BlurOperator& blur, bool adjoint = false) {
  if (cube.height() != blur.height() || cube.width() != blur.width())
    throw DimensionError("cyclic_blur: cube size does not match blur operator");
  ImageCube out(cube.height(), cube.width(), cube.bands());
  for (int b = 0; b < cube.bands(); ++b) blur.apply(cube.band(b), out.band(b), adjoint);
  out.set_wavelengths(cube.wavelengths());
  return out;
}

/// Regular decimation keeping pixel (f*i, f*j).
struct Downsampler {
  int factor = 1;
};

inline void check_divisible(int height, int width, const Downsampler& d, const char* who) {
  if (d.factor < 1) throw DimensionError(std::string(who) + ": factor must be >= 1");
  if (height % d.factor != 0 || width % d.factor != 0)
    throw DimensionError(std::string(who) + ": factor must divide both spatial dimensions");
}

/// Row-wise decimation of a (rows x height*width) matrix.
inline Matrix downsample_rows(const Matrix& m, int height, int width, const Downsampler& d) {
  check_divisible(height, width, d, "downsample");
  detail::require(m.cols() == static_cast<Eigen::Index>(height) * width, "downsample: column count mismatch");
  const int f = d.factor, hc = height / f, wc = width / f;
  Matrix out(m.rows(), static_cast<Eigen::Index>(hc) * wc);
  for (int i = 0; i < hc; ++i)
    for (int j = 0; j < wc; ++j) out.col(i * wc + j) = m.col((f * i) * width + f * j);
  return out;
}

/// Adjoint of downsample_rows: zero-fill onto the fine grid.
inline Matrix upsample_rows(const Matrix& m, int height, int width, const Downsampler& d) {
  check_divisible(height, width, d, "upsample_adjoint");
  const int f = d.factor, hc = height / f, wc = width / f;
  detail::require(m.cols() == static_cast<Eigen::Index>(hc) * wc, "upsample_adjoint: column count mismatch");
  Matrix out = Matrix::Zero(m.rows(), static_cast<Eigen::Index>(height) * width);
  for (int i = 0; i < hc; ++i)
    for (int j = 0; j < wc; ++j) out.col((f * i) * width + f * j) = m.col(i * wc + j);
  return out;
}

inline ImageCube downsample(const ImageCube& cube, const Downsampler& d) {
  check_divisible(cube.height(), cube.width(), d, "downsample");
  ImageCube out = matrix_to_cube(downsample_rows(cube_to_matrix(cube), cube.height(), cube.width(), d),
                                 cube.height() / d.factor, cube.width() / d.factor);
  out.set_wavelengths(cube.wavelengths());
  return out;
}

inline ImageCube upsample_adjoint(const ImageCube& cube, const Downsampler& d, int height, int width) {
  check_divisible(height, width, d, "upsample_adjoint");
  if (cube.height() * d.factor != height || cube.width() * d.factor != width)
    throw DimensionError("upsample_adjoint: coarse size does not match target size");
  ImageCube out = matrix_to_cube(upsample_rows(cube_to_matrix(cube), height, width, d), height, width);
  out.set_wavelengths(cube.wavelengths());
  return out;
}

/// Row-stochastic spectral response R (output bands x input bands).
class SpectralResponse {
 public:
  explicit SpectralResponse(Matrix r) : r_(std::move(r)) {
    detail::require(r_.rows() >= 1 && r_.cols() >= 1, "SpectralResponse: empty matrix");
    for (Eigen::Index i = 0; i < r_.rows(); ++i) {
      if ((r_.row(i).array() < 0.0).any())
        throw DimensionError("SpectralResponse: entries must be nonnegative");
      if (std::abs(r_.row(i).sum() - 1.0) > 1e-12)
        throw DimensionError("SpectralResponse: each row must sum to 1");
    }
  }

  /// Single panchromatic band averaging all bands.
  static SpectralResponse average(int bands) { return band_range(bands, 1, bands); }

  /// Single band averaging the 1-based inclusive range [first, last].
  static SpectralResponse band_range(int bands, int first, int last) {
    if (first < 1 || last > bands || first > last)
      throw DimensionError("SpectralResponse: band range out of bounds");
    Matrix r = Matrix::Zero(1, bands);
    for (int b = first - 1; b < last; ++b) r(0, b) = 1.0 / (last - first + 1);
    return SpectralResponse(std::move(r));
  }

  /// Three contiguous band groups (blue, green, red order by index).
  static SpectralResponse rgb_like(int bands) {
    if (bands < 3) throw DimensionError("SpectralResponse: rgb needs at least 3 bands");
    Matrix r = Matrix::Zero(3, bands);
    for (int c = 0; c < 3; ++c) {
      const int lo = c * bands / 3, hi = (c + 1) * bands / 3;
      for (int b = lo; b < hi; ++b) r(c, b) = 1.0 / (hi - lo);
    }
    return SpectralResponse(std::move(r));
  }

  const Matrix& matrix() const { return r_; }
  int output_bands() const { return static_cast<int>(r_.rows()); }
  int input_bands() const { return static_cast<int>(r_.cols()); }

 private:
  Matrix r_;
};

inline ImageCube apply_srf(const ImageCube& cube, const SpectralResponse& srf) {
  if (srf.input_bands() != cube.bands()) throw DimensionError("apply_srf: band count mismatch");
  return matrix_to_cube(srf.matrix() * cube_to_matrix(cube), cube.height(), cube.width());
}

inline double frobenius_squared(const ImageCube& cube) {
  double s = 0.0;
  for (double v : cube.data()) s += v * v;
  return s;
}

/// Adds white Gaussian noise rescaled so that
/// 10 log10(||signal||^2 / ||noise||^2) equals snr_db for the drawn sample.
/// A snr_db of +infinity returns the input unchanged.
inline ImageCube add_noise_snr(const ImageCube& cube, double snr_db, std::uint64_t seed,
                               std::uint64_t stream = 0) {
  if (std::isinf(snr_db) && snr_db > 0) return cube;
  if (!std::isfinite(snr_db)) throw DimensionError("add_noise_snr: snr must be finite or +inf");
  const double signal = frobenius_squared(cube);
  if (signal == 0.0) throw DimensionError("add_noise_snr: all-zero cube");
  CounterRng rng(seed, stream);
  std::vector<double> noise(cube.data().size());
  double energy = 0.0;
  for (double& v : noise) {
    v = rng.normal();
    energy += v * v;
  }
  const double scale = std::sqrt(signal / std::pow(10.0, snr_db / 10.0) / energy);
  ImageCube out = cube;
  for (std::size_t i = 0; i < noise.size(); ++i) out.data()[i] += scale * noise[i];
  return out;
}

/// Keeps round(fraction * N) distinct random pixels (at least one).
inline PixelMask random_pixel_mask(int height, int width, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw DimensionError("random_pixel_mask: fraction must be in (0, 1]");
  const int n = height * width;
  const int keep = std::max(1, static_cast<int>(std::lround(fraction * n)));
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  CounterRng rng(seed, 7);
  for (int i = 0; i < keep; ++i) {
    const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - i)));
    std::swap(order[i], order[j]);
  }
  std::vector<std::uint8_t> kept(n, 0);
  for (int i = 0; i < keep; ++i) kept[order[i]] = 1;
  return PixelMask(height, width, std::move(kept));
}

/// Stripe defects: `stripe_bands` random bands lose a random subset of
/// columns (each column dead with probability column_fraction).
inline EntryMask stripe_mask(int height, int width, int bands, int stripe_bands, double column_fraction,
                             std::uint64_t seed) {
  if (stripe_bands < 0 || stripe_bands > bands) throw DimensionError("stripe_mask: invalid band count");
  std::vector<int> order(bands);
  std::iota(order.begin(), order.end(), 0);
  CounterRng rng(seed, 11);
  for (int i = 0; i < stripe_bands; ++i) {
    const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(bands - i)));
    std::swap(order[i], order[j]);
  }
  std::vector<std::uint8_t> kept(static_cast<std::size_t>(bands) * height * width, 1);
  for (int i = 0; i < stripe_bands; ++i) {
    const int b = order[i];
    for (int c = 0; c < width; ++c) {
      if (rng.uniform() >= column_fraction) continue;
      for (int r = 0; r < height; ++r) kept[(static_cast<std::size_t>(b) * height + r) * width + c] = 0;
    }
  }
  return EntryMask(height, width, bands, std::move(kept));
}

/// Everything needed to synthesize observations from a reference cube.
struct DegradationModel {
  BlurOperator blur;
  Downsampler down;
  SpectralResponse srf;
  double snr_hs = std::numeric_limits<double>::infinity();
  double snr_hr = std::numeric_limits<double>::infinity();
  std::optional<EntryMask> mask;
  std::uint64_t seed = 0;
};

/// hs = mask(noise(downsample(blur(X)))), hr = noise(R X).
inline ObservationSet degrade(const ImageCube& reference, const DegradationModel& model) {
  ObservationSet obs;
  ImageCube hs = downsample(cyclic_blur(reference, model.blur), model.down);
  obs.hs = add_noise_snr(hs, model.snr_hs, model.seed, 1);
  obs.hr = add_noise_snr(apply_srf(reference, model.srf), model.snr_hr, model.seed, 2);
  if (model.mask) {
    obs.hs = mask_cube(obs.hs, *model.mask);
    obs.mask = model.mask;
  }
  obs.validate();
  return obs;
}

/// Band-wise bicubic interpolation (Keys, a = -0.5) of a coarse cube whose
/// sample (i, j) sits at fine position (f*i, f*j); edges are clamped.
inline ImageCube bicubic_upsample(const ImageCube& coarse, int factor) {
  if (factor < 1) throw DimensionError("bicubic_upsample: factor must be >= 1");
  const int hc = coarse.height(), wc = coarse.width();
  const int h = hc * factor, w = wc * factor;
  auto weight = [](double t) {
    constexpr double a = -0.5;
    t = std::abs(t);
    if (t <= 1.0) return (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0;
    if (t < 2.0) return a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a;
    return 0.0;
  };
  auto clamp_idx = [](int i, int n) { return std::clamp(i, 0, n - 1); };
  ImageCube out(h, w, coarse.bands());
  for (int b = 0; b < coarse.bands(); ++b)
    for (int y = 0; y < h; ++y) {
      const double ty = static_cast<double>(y) / factor;
      const int iy = static_cast<int>(std::floor(ty));
      for (int x = 0; x < w; ++x) {
        const double tx = static_cast<double>(x) / factor;
        const int ix = static_cast<int>(std::floor(tx));
        double acc = 0.0;
        for (int m = -1; m <= 2; ++m) {
          const double wy = weight(ty - (iy + m));
          if (wy == 0.0) continue;
          for (int n = -1; n <= 2; ++n) {
            const double wx = weight(tx - (ix + n));
            acc += wy * wx * coarse.at(b, clamp_idx(iy + m, hc), clamp_idx(ix + n, wc));
          }
        }
        out.at(b, y, x) = acc;
      }
    }
  out.set_wavelengths(coarse.wavelengths());
  return out;
}

}  // namespace mbgdd

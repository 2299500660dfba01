#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mbgdd/error.hpp"

namespace mbgdd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// B x N multiband image. Samples are stored band-major; pixels within a
/// band are row-major over (row, column), so pixel n = row * width + col.
class ImageCube {
 public:
  ImageCube() = default;

  ImageCube(int height, int width, int bands)
      : height_(height), width_(width), bands_(bands) {
    check_shape();
    data_.assign(static_cast<std::size_t>(bands) * pixels(), 0.0);
  }

  ImageCube(int height, int width, int bands, std::vector<double> data,
            std::vector<double> wavelengths = {})
      : height_(height), width_(width), bands_(bands), data_(std::move(data)),
        wavelengths_(std::move(wavelengths)) {
    check_shape();
    detail::require(data_.size() == static_cast<std::size_t>(bands_) * pixels(),
                    "ImageCube: data length must equal bands*height*width");
    for (double v : data_) {
      if (!std::isfinite(v)) throw DimensionError("ImageCube: non-finite sample");
    }
    detail::require(wavelengths_.empty() || wavelengths_.size() == static_cast<std::size_t>(bands_),
                    "ImageCube: wavelength count must equal band count");
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int bands() const noexcept { return bands_; }
  int pixels() const noexcept { return height_ * width_; }
  bool empty() const noexcept { return data_.empty(); }

  double& at(int band, int pixel) { return data_[index(band, pixel)]; }
  double at(int band, int pixel) const { return data_[index(band, pixel)]; }
  double& at(int band, int row, int col) { return at(band, row * width_ + col); }
  double at(int band, int row, int col) const { return at(band, row * width_ + col); }

  std::span<double> band(int b) {
    return {data_.data() + static_cast<std::size_t>(b) * pixels(), static_cast<std::size_t>(pixels())};
  }
  std::span<const double> band(int b) const {
    return {data_.data() + static_cast<std::size_t>(b) * pixels(), static_cast<std::size_t>(pixels())};
  }

  const std::vector<double>& data() const noexcept { return data_; }
  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& wavelengths() const noexcept { return wavelengths_; }
  void set_wavelengths(std::vector<double> w) {
    detail::require(w.empty() || w.size() == static_cast<std::size_t>(bands_),
                    "ImageCube: wavelength count must equal band count");
    wavelengths_ = std::move(w);
  }

  bool same_shape(const ImageCube& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_ && bands_ == other.bands_;
  }

  friend bool operator==(const ImageCube& a, const ImageCube& b) {
    return a.same_shape(b) && a.data_ == b.data_ && a.wavelengths_ == b.wavelengths_;
  }

 private:
  void check_shape() const {
    detail::require(height_ >= 1 && width_ >= 1 && bands_ >= 1,
                    "ImageCube: height, width and bands must be >= 1");
  }
  std::size_t index(int band, int pixel) const {
    return static_cast<std::size_t>(band) * pixels() + static_cast<std::size_t>(pixel);
  }

  int height_ = 0;
  int width_ = 0;
  int bands_ = 0;
  std::vector<double> data_;
  std::vector<double> wavelengths_;
};

/// Column selector: which pixels of an image are observed.
struct PixelMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> kept;

  PixelMask() = default;
  PixelMask(int h, int w, std::vector<std::uint8_t> k) : height(h), width(w), kept(std::move(k)) {
    detail::require(h >= 1 && w >= 1 && kept.size() == static_cast<std::size_t>(h) * w,
                    "PixelMask: kept size must equal height*width");
    detail::require(std::any_of(kept.begin(), kept.end(), [](auto v) { return v != 0; }),
                    "PixelMask: at least one pixel must be kept");
  }
  int pixels() const { return height * width; }
};

/// Row selector: which bands are observed.
struct BandMask {
  int bands = 0;
  std::vector<std::uint8_t> kept;

  BandMask() = default;
  explicit BandMask(std::vector<std::uint8_t> k) : bands(static_cast<int>(k.size())), kept(std::move(k)) {
    detail::require(bands >= 1, "BandMask: empty");
    detail::require(std::any_of(kept.begin(), kept.end(), [](auto v) { return v != 0; }),
                    "BandMask: at least one band must be kept");
  }
};

/// Arbitrary per-(band, pixel) observation pattern, band-major like ImageCube.
struct EntryMask {
  int height = 0;
  int width = 0;
  int bands = 0;
  std::vector<std::uint8_t> kept;

  EntryMask() = default;
  EntryMask(int h, int w, int b, std::vector<std::uint8_t> k)
      : height(h), width(w), bands(b), kept(std::move(k)) {
    detail::require(h >= 1 && w >= 1 && b >= 1 &&
                        kept.size() == static_cast<std::size_t>(h) * w * b,
                    "EntryMask: kept size must equal bands*height*width");
    detail::require(std::any_of(kept.begin(), kept.end(), [](auto v) { return v != 0; }),
                    "EntryMask: at least one entry must be kept");
  }

  /// Entry (b, n) is kept iff band b and pixel n are both kept.
  static EntryMask from_separable(const BandMask& bm, const PixelMask& pm) {
    std::vector<std::uint8_t> k(static_cast<std::size_t>(bm.bands) * pm.pixels(), 0);
    for (int b = 0; b < bm.bands; ++b)
      for (int n = 0; n < pm.pixels(); ++n)
        k[static_cast<std::size_t>(b) * pm.pixels() + n] = (bm.kept[b] && pm.kept[n]) ? 1 : 0;
    return EntryMask(pm.height, pm.width, bm.bands, std::move(k));
  }

  static EntryMask all(int h, int w, int b) {
    return EntryMask(h, w, b, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w * b, 1));
  }

  int pixels() const { return height * width; }
  bool at(int band, int pixel) const { return kept[static_cast<std::size_t>(band) * pixels() + pixel] != 0; }
  std::size_t count() const {
    return static_cast<std::size_t>(std::count_if(kept.begin(), kept.end(), [](auto v) { return v != 0; }));
  }
  bool matches(const ImageCube& c) const {
    return c.height() == height && c.width() == width && c.bands() == bands;
  }
  friend bool operator==(const EntryMask&, const EntryMask&) = default;
};

/// The pair {Y_HS, Y_HR} plus the optional observation mask on Y_HS.
struct ObservationSet {
  ImageCube hs;
  ImageCube hr;
  std::optional<EntryMask> mask;

  void validate() const {
    detail::require(hs.bands() >= hr.bands(), "ObservationSet: hs must have at least as many bands as hr");
    detail::require(hs.pixels() <= hr.pixels(), "ObservationSet: hr must have the target (largest) spatial size");
    if (mask) detail::require(mask->matches(hs), "ObservationSet: mask shape must match hs");
  }
};

/// Column n holds the spectrum of pixel n.
inline Matrix cube_to_matrix(const ImageCube& cube) {
  Matrix m(cube.bands(), cube.pixels());
  for (int b = 0; b < cube.bands(); ++b) {
    auto band = cube.band(b);
    for (int n = 0; n < cube.pixels(); ++n) m(b, n) = band[n];
  }
  return m;
}

inline ImageCube matrix_to_cube(const Matrix& m, int height, int width) {
  if (height < 1 || width < 1 || m.cols() != static_cast<Eigen::Index>(height) * width || m.rows() < 1)
    throw DimensionError("matrix_to_cube: column count must equal height*width");
  ImageCube cube(height, width, static_cast<int>(m.rows()));
  for (int b = 0; b < cube.bands(); ++b) {
    auto band = cube.band(b);
    for (int n = 0; n < cube.pixels(); ++n) band[n] = m(b, n);
  }
  for (double v : cube.data())
    if (!std::isfinite(v)) throw DimensionError("matrix_to_cube: non-finite sample");
  return cube;
}

/// Kept entries of a cube in canonical band-major order, with their indices.
struct MaskedEntries {
  std::vector<double> values;
  std::vector<int> band;
  std::vector<int> pixel;
  std::size_t size() const { return values.size(); }
};

inline MaskedEntries apply_entry_mask(const ImageCube& cube, const EntryMask& mask) {
  if (!mask.matches(cube)) throw DimensionError("apply_entry_mask: mask shape does not match cube");
  MaskedEntries out;
  const std::size_t count = mask.count();
  if (count == 0) throw DimensionError("apply_entry_mask: empty mask");
  out.values.reserve(count);
  out.band.reserve(count);
  out.pixel.reserve(count);
  for (int b = 0; b < cube.bands(); ++b)
    for (int n = 0; n < cube.pixels(); ++n)
      if (mask.at(b, n)) {
        out.values.push_back(cube.at(b, n));
        out.band.push_back(b);
        out.pixel.push_back(n);
      }
  return out;
}

/// Inverse of apply_entry_mask on the kept support; unobserved entries are zero.
inline ImageCube scatter_entries(const MaskedEntries& entries, int height, int width, int bands) {
  ImageCube cube(height, width, bands);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    detail::require(entries.band[i] >= 0 && entries.band[i] < bands && entries.pixel[i] >= 0 &&
                        entries.pixel[i] < cube.pixels(),
                    "scatter_entries: index out of range");
    cube.at(entries.band[i], entries.pixel[i]) = entries.values[i];
  }
  return cube;
}

/// Zero every unobserved entry.
inline ImageCube mask_cube(const ImageCube& cube, const EntryMask& mask) {
  if (!mask.matches(cube)) throw DimensionError("mask_cube: mask shape does not match cube");
  ImageCube out = cube;
  for (std::size_t i = 0; i < out.data().size(); ++i)
    if (!mask.kept[i]) out.data()[i] = 0.0;
  return out;
}

}  // namespace mbgdd

#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "mbgdd/data_model.hpp"

namespace mbgdd {

struct MetricReport {
  double psnr = 0.0;   // dB
  double sam = 0.0;    // degrees
  double uiqi = 0.0;
  double ergas = 0.0;
  double ssim = 0.0;
  std::vector<double> psnr_bands;
  std::vector<double> uiqi_bands;
  std::vector<double> ssim_bands;
};

namespace detail {

inline void require_same_shape(const ImageCube& ref, const ImageCube& est, const char* who) {
  if (!ref.same_shape(est)) throw DimensionError(std::string(who) + ": shape mismatch");
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace detail

/// Per-band 10 log10(peak^2 / MSE), peak = max |ref_b|. Exact equality gives +inf.
inline std::vector<double> psnr_per_band(const ImageCube& ref, const ImageCube& est) {
  detail::require_same_shape(ref, est, "psnr");
  std::vector<double> out(ref.bands());
  for (int b = 0; b < ref.bands(); ++b) {
    auto r = ref.band(b);
    auto e = est.band(b);
    double peak = 0.0, sse = 0.0;
    for (std::size_t n = 0; n < r.size(); ++n) {
      peak = std::max(peak, std::abs(r[n]));
      sse += (r[n] - e[n]) * (r[n] - e[n]);
    }
    const double mse = sse / static_cast<double>(r.size());
    out[b] = mse == 0.0 ? std::numeric_limits<double>::infinity()
                        : 10.0 * std::log10(std::max(peak * peak, 1e-300) / mse);
  }
  return out;
}

inline double psnr(const ImageCube& ref, const ImageCube& est) {
  return detail::mean_of(psnr_per_band(ref, est));
}

/// Mean spectral angle in degrees; pixels where either spectrum is zero are skipped.
inline double sam(const ImageCube& ref, const ImageCube& est) {
  detail::require_same_shape(ref, est, "sam");
  double total = 0.0;
  int counted = 0;
  for (int n = 0; n < ref.pixels(); ++n) {
    double nr = 0.0, ne = 0.0;
    for (int b = 0; b < ref.bands(); ++b) {
      nr += ref.at(b, n) * ref.at(b, n);
      ne += est.at(b, n) * est.at(b, n);
    }
    if (nr == 0.0 || ne == 0.0) continue;
    // angle = 2 atan2(|x/|x| - y/|y||, |x/|x| + y/|y||); exact 0 for equal
    // directions, where acos of the cosine loses ~1e-8 rad to rounding
    const double ir = 1.0 / std::sqrt(nr), ie = 1.0 / std::sqrt(ne);
    double diff = 0.0, sum = 0.0;
    for (int b = 0; b < ref.bands(); ++b) {
      const double x = ref.at(b, n) * ir, y = est.at(b, n) * ie;
      diff += (x - y) * (x - y);
      sum += (x + y) * (x + y);
    }
    total += 2.0 * std::atan2(std::sqrt(diff), std::sqrt(sum));
    ++counted;
  }
  return counted == 0 ? 0.0 : total / counted * 180.0 / std::numbers::pi;
}

/// Wang-Bovik Q index over 8x8 windows (stride 1) per band. A window whose
/// denominator vanishes counts as 1 when both windows are identical and is
/// skipped otherwise; a band with no usable window scores 0.
inline std::vector<double> uiqi_per_band(const ImageCube& ref, const ImageCube& est, int window = 8) {
  detail::require_same_shape(ref, est, "uiqi");
  if (ref.height() < window || ref.width() < window) throw DimensionError("uiqi: image smaller than window");
  const int h = ref.height(), w = ref.width();
  const double count = static_cast<double>(window) * window;
  std::vector<double> out(ref.bands());
  for (int b = 0; b < ref.bands(); ++b) {
    auto x = ref.band(b);
    auto y = est.band(b);
    double acc = 0.0;
    int used = 0;
    for (int r0 = 0; r0 + window <= h; ++r0)
      for (int c0 = 0; c0 + window <= w; ++c0) {
        double mx = 0.0, my = 0.0;
        for (int r = r0; r < r0 + window; ++r)
          for (int c = c0; c < c0 + window; ++c) {
            mx += x[r * w + c];
            my += y[r * w + c];
          }
        mx /= count;
        my /= count;
        double vx = 0.0, vy = 0.0, cxy = 0.0;
        bool identical = true;
        for (int r = r0; r < r0 + window; ++r)
          for (int c = c0; c < c0 + window; ++c) {
            const double dx = x[r * w + c] - mx, dy = y[r * w + c] - my;
            vx += dx * dx;
            vy += dy * dy;
            cxy += dx * dy;
            identical = identical && x[r * w + c] == y[r * w + c];
          }
        vx /= count;
        vy /= count;
        cxy /= count;
        const double den = (vx + vy) * (mx * mx + my * my);
        if (den == 0.0) {
          if (identical) {
            acc += 1.0;
            ++used;
          }
          continue;
        }
        acc += 4.0 * cxy * mx * my / den;
        ++used;
      }
    out[b] = used == 0 ? 0.0 : acc / used;
  }
  return out;
}

inline double uiqi(const ImageCube& ref, const ImageCube& est) {
  return detail::mean_of(uiqi_per_band(ref, est));
}

/// 100/d * sqrt(mean_b (RMSE_b / mean_b)^2); bands with zero reference mean are skipped.
inline double ergas(const ImageCube& ref, const ImageCube& est, double ratio) {
  detail::require_same_shape(ref, est, "ergas");
  if (!(ratio > 0.0)) throw DimensionError("ergas: ratio must be positive");
  double acc = 0.0;
  int used = 0;
  for (int b = 0; b < ref.bands(); ++b) {
    auto r = ref.band(b);
    auto e = est.band(b);
    double mean = 0.0, sse = 0.0;
    for (std::size_t n = 0; n < r.size(); ++n) {
      mean += r[n];
      sse += (r[n] - e[n]) * (r[n] - e[n]);
    }
    mean /= static_cast<double>(r.size());
    if (mean == 0.0) continue;
    const double rmse = std::sqrt(sse / static_cast<double>(r.size()));
    acc += (rmse / mean) * (rmse / mean);
    ++used;
  }
  return used == 0 ? 0.0 : 100.0 / ratio * std::sqrt(acc / used);
}

/// Normalized 11x11 Gaussian window with standard deviation 1.5.
inline std::vector<double> ssim_window(int size = 11, double sigma = 1.5) {
  std::vector<double> w(static_cast<std::size_t>(size) * size);
  const int r = size / 2;
  double total = 0.0;
  for (int y = -r; y <= r; ++y)
    for (int x = -r; x <= r; ++x) {
      const double v = std::exp(-(x * x + y * y) / (2.0 * sigma * sigma));
      w[static_cast<std::size_t>(y + r) * size + (x + r)] = v;
      total += v;
    }
  for (double& v : w) v /= total;
  return w;
}

/// Band-wise SSIM with Gaussian-weighted statistics over every fully
/// contained 11x11 window, K1 = 0.01, K2 = 0.03 and dynamic range
/// max(ref_b) - min(ref_b) (floored at 1e-12).
inline std::vector<double> ssim_per_band(const ImageCube& ref, const ImageCube& est) {
  detail::require_same_shape(ref, est, "ssim");
  constexpr int size = 11;
  if (ref.height() < size || ref.width() < size) throw DimensionError("ssim: image smaller than window");
  const std::vector<double> win = ssim_window(size, 1.5);
  const int h = ref.height(), w = ref.width();
  std::vector<double> out(ref.bands());
  for (int b = 0; b < ref.bands(); ++b) {
    auto x = ref.band(b);
    auto y = est.band(b);
    const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    const double range = std::max(*hi - *lo, 1e-12);
    const double c1 = (0.01 * range) * (0.01 * range);
    const double c2 = (0.03 * range) * (0.03 * range);
    double acc = 0.0;
    int used = 0;
    for (int r0 = 0; r0 + size <= h; ++r0)
      for (int c0 = 0; c0 + size <= w; ++c0) {
        double mx = 0.0, my = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
        for (int r = 0; r < size; ++r)
          for (int c = 0; c < size; ++c) {
            const double wt = win[static_cast<std::size_t>(r) * size + c];
            const double xv = x[(r0 + r) * w + c0 + c], yv = y[(r0 + r) * w + c0 + c];
            mx += wt * xv;
            my += wt * yv;
            sxx += wt * xv * xv;
            syy += wt * yv * yv;
            sxy += wt * xv * yv;
          }
        const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
        acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++used;
      }
    out[b] = acc / used;
  }
  return out;
}

inline double ssim(const ImageCube& ref, const ImageCube& est) {
  return detail::mean_of(ssim_per_band(ref, est));
}

inline MetricReport compute_metrics(const ImageCube& ref, const ImageCube& est, double ergas_ratio) {
  MetricReport r;
  r.psnr_bands = psnr_per_band(ref, est);
  r.uiqi_bands = uiqi_per_band(ref, est);
  r.ssim_bands = ssim_per_band(ref, est);
  r.psnr = detail::mean_of(r.psnr_bands);
  r.uiqi = detail::mean_of(r.uiqi_bands);
  r.ssim = detail::mean_of(r.ssim_bands);
  r.sam = sam(ref, est);
  r.ergas = ergas(ref, est, ergas_ratio);
  return r;
}

}  // namespace mbgdd

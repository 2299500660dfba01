#pragma once

#include <fftw3.h>

#include <complex>
#include <memory>
#include <span>
#include <vector>

#include "mbgdd/error.hpp"

namespace mbgdd {

using Complex = std::complex<double>;

/// Planned 2-D complex DFT over a row-major height x width grid.
/// forward is unnormalized; inverse divides by height*width.
class Fft2d {
 public:
  Fft2d(int height, int width) : height_(height), width_(width) {
    detail::require(height >= 1 && width >= 1, "Fft2d: invalid size");
    const std::size_t n = size();
    buffer_.reset(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n)));
    forward_.reset(fftw_plan_dft_2d(height, width, buffer_.get(), buffer_.get(), FFTW_FORWARD, FFTW_ESTIMATE));
    inverse_.reset(fftw_plan_dft_2d(height, width, buffer_.get(), buffer_.get(), FFTW_BACKWARD, FFTW_ESTIMATE));
  }

  Fft2d(const Fft2d&) = delete;
  Fft2d& operator=(const Fft2d&) = delete;

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return static_cast<std::size_t>(height_) * width_; }

  void forward(std::span<Complex> data) const { run(forward_.get(), data, 1.0); }
  void inverse(std::span<Complex> data) const { run(inverse_.get(), data, 1.0 / static_cast<double>(size())); }

  std::vector<Complex> forward_real(std::span<const double> data) const {
    detail::require(data.size() == size(), "Fft2d: size mismatch");
    std::vector<Complex> out(data.begin(), data.end());
    forward(out);
    return out;
  }

 private:
  struct PlanDeleter {
    void operator()(fftw_plan_s* p) const { fftw_destroy_plan(p); }
  };
  struct BufferDeleter {
    void operator()(fftw_complex* p) const { fftw_free(p); }
  };

  void run(fftw_plan_s* plan, std::span<Complex> data, double scale) const {
    detail::require(data.size() == size(), "Fft2d: size mismatch");
    auto* buf = reinterpret_cast<Complex*>(buffer_.get());
    std::copy(data.begin(), data.end(), buf);
    fftw_execute(plan);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = buf[i] * scale;
  }

  int height_;
  int width_;
  std::unique_ptr<fftw_complex, BufferDeleter> buffer_;
  std::unique_ptr<fftw_plan_s, PlanDeleter> forward_;
  std::unique_ptr<fftw_plan_s, PlanDeleter> inverse_;
};

}  // namespace mbgdd

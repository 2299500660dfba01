#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "mbgdd/data_model.hpp"
#include "mbgdd/rng.hpp"

namespace mbgdd {

struct PhantomSpec {
  int height = 64;
  int width = 64;
  int bands = 31;
  int n_endmembers = 4;
  std::uint64_t seed = 0;
  int cells = 0;  // Voronoi cells; 0 picks max(12, 3 * n_endmembers)
};

/// Smooth positive spectra, one column per endmember (bands x m).
inline Matrix phantom_endmembers(int bands, int m, CounterRng& rng) {
  Matrix e(bands, m);
  for (int j = 0; j < m; ++j) {
    double walk = 0.0;
    for (int b = 0; b < bands; ++b) {
      walk += rng.normal();
      e(b, j) = walk;
    }
    const double lo = e.col(j).minCoeff(), hi = e.col(j).maxCoeff();
    const double span = std::max(hi - lo, 1e-6);
    const double albedo = rng.uniform(0.15, 1.0);  // materials differ in overall brightness
    e.col(j) = ((e.col(j).array() - lo) / span * 0.8 + 0.2).matrix() * albedo;
  }
  return e;
}

/// Abundance maps (m x N): Voronoi cells with Dirichlet(1) abundances,
/// followed by a 3x3 box average with edge-clamped support.
inline Matrix phantom_abundances(int height, int width, int m, int cells, CounterRng& rng) {
  std::vector<double> sy(cells), sx(cells);
  Matrix cell_ab(m, cells);
  for (int c = 0; c < cells; ++c) {
    sy[c] = rng.uniform(0.0, height);
    sx[c] = rng.uniform(0.0, width);
    double total = 0.0;
    for (int j = 0; j < m; ++j) {
      cell_ab(j, c) = -std::log(rng.uniform());
      total += cell_ab(j, c);
    }
    cell_ab.col(c) /= total;
  }
  // Every endmember dominates at least one cell so the cube has full rank m.
  for (int j = 0; j < std::min(m, cells); ++j) {
    cell_ab.col(j).setConstant(0.1 / std::max(1, m - 1));
    cell_ab(j, j) = m == 1 ? 1.0 : 0.9;
  }

  const int n = height * width;
  Matrix raw(m, n);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < cells; ++c) {
        const double d = (y + 0.5 - sy[c]) * (y + 0.5 - sy[c]) + (x + 0.5 - sx[c]) * (x + 0.5 - sx[c]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      raw.col(y * width + x) = cell_ab.col(best);
    }

  Matrix smooth(m, n);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      Vector acc = Vector::Zero(m);
      int count = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= height || xx < 0 || xx >= width) continue;
          acc += raw.col(yy * width + xx);
          ++count;
        }
      smooth.col(y * width + x) = acc / count;
    }
  return smooth;
}

/// X = E S: linear mixture of smooth spectra over piecewise abundances.
inline ImageCube make_phantom(const PhantomSpec& spec) {
  if (spec.height < 1 || spec.width < 1 || spec.bands < 1)
    throw DimensionError("make_phantom: invalid size");
  if (spec.n_endmembers < 1 || spec.n_endmembers > spec.bands)
    throw DimensionError("make_phantom: n_endmembers must lie in [1, bands]");
  CounterRng rng(spec.seed, 3);
  const int cells = spec.cells > 0 ? spec.cells : std::max(12, 3 * spec.n_endmembers);
  const Matrix e = phantom_endmembers(spec.bands, spec.n_endmembers, rng);
  const Matrix s = phantom_abundances(spec.height, spec.width, spec.n_endmembers, cells, rng);
  return matrix_to_cube(e * s, spec.height, spec.width);
}

}  // namespace mbgdd

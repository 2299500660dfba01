#pragma once

#include <Eigen/SVD>

#include "mbgdd/data_model.hpp"

namespace mbgdd {

/// Orthonormal B x B~ basis of the spectral subspace.
struct SpectralBasis {
  Matrix v;
  Vector singular_values;

  int bands() const { return static_cast<int>(v.rows()); }
  int dim() const { return static_cast<int>(v.cols()); }
};

/// Top-`dim` left singular vectors of the uncentered bands x pixels matrix.
/// Each column is signed so that its largest-magnitude entry is positive.
inline SpectralBasis estimate_subspace(const Matrix& pixels, int dim) {
  const int bands = static_cast<int>(pixels.rows());
  const int count = static_cast<int>(pixels.cols());
  if (dim < 1 || dim > bands || dim > count)
    throw DimensionError("estimate_subspace: dimension must lie in [1, min(bands, pixels)]");
  if (pixels.squaredNorm() == 0.0) throw DimensionError("estimate_subspace: degenerate (zero) input");

  Eigen::BDCSVD<Matrix> svd(pixels, Eigen::ComputeThinU);
  SpectralBasis basis{svd.matrixU().leftCols(dim), svd.singularValues().head(dim)};
  for (int j = 0; j < dim; ++j) {
    Eigen::Index idx = 0;
    basis.v.col(j).cwiseAbs().maxCoeff(&idx);
    if (basis.v(idx, j) < 0.0) basis.v.col(j) *= -1.0;
  }
  return basis;
}

inline SpectralBasis estimate_subspace(const ImageCube& hs, int dim) {
  return estimate_subspace(cube_to_matrix(hs), dim);
}

/// Subspace from the pixels whose every band is observed.
inline SpectralBasis estimate_subspace(const ImageCube& hs, const EntryMask& mask, int dim) {
  if (!mask.matches(hs)) throw DimensionError("estimate_subspace: mask shape mismatch");
  std::vector<int> complete;
  for (int n = 0; n < hs.pixels(); ++n) {
    bool all = true;
    for (int b = 0; b < hs.bands() && all; ++b) all = mask.at(b, n);
    if (all) complete.push_back(n);
  }
  if (complete.empty()) throw DimensionError("estimate_subspace: no fully observed pixel");
  Matrix m(hs.bands(), static_cast<Eigen::Index>(complete.size()));
  for (std::size_t i = 0; i < complete.size(); ++i)
    for (int b = 0; b < hs.bands(); ++b) m(b, static_cast<Eigen::Index>(i)) = hs.at(b, complete[i]);
  return estimate_subspace(m, dim);
}

/// A = V^T X.
inline Matrix project(const ImageCube& cube, const SpectralBasis& basis) {
  if (cube.bands() != basis.bands()) throw DimensionError("project: band count mismatch");
  return basis.v.transpose() * cube_to_matrix(cube);
}

/// X = V A.
inline ImageCube reconstruct(const Matrix& a, const SpectralBasis& basis, int height, int width) {
  if (a.rows() != basis.dim() || a.cols() != static_cast<Eigen::Index>(height) * width)
    throw DimensionError("reconstruct: coefficient shape mismatch");
  return matrix_to_cube(basis.v * a, height, width);
}

}  // namespace mbgdd

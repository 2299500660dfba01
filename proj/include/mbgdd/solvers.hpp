#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <optional>
#include <vector>

#include "mbgdd/generator.hpp"
#include "mbgdd/operators.hpp"
#include "mbgdd/subspace.hpp"

namespace mbgdd {

/// A task instance for the ADMM driver: its data term plus the closed-form
/// minimizer of   data(A) + mu ||D(Z) - A + U/(2 mu)||_F^2   over A.
class AdmmProblem : public DataFidelity {
 public:
  virtual const SpectralBasis& basis() const = 0;
  virtual Matrix a_update(const Matrix& dz, const Matrix& u, double mu) const = 0;

  int coefficients() const override { return basis().dim(); }

  double subproblem_objective(const Matrix& a, const Matrix& dz, const Matrix& u, double mu) const {
    return evaluate(a, nullptr) + mu * (dz - a + u / (2.0 * mu)).squaredNorm();
  }

 protected:
  void check_update_args(const Matrix& dz, const Matrix& u, double mu) const {
    if (!(mu > 0.0)) throw DimensionError("a_update: mu must be positive");
    const Eigen::Index n = static_cast<Eigen::Index>(height()) * width();
    if (dz.rows() != coefficients() || dz.cols() != n || u.rows() != dz.rows() || u.cols() != dz.cols())
      throw DimensionError("a_update: D(Z) / U shape mismatch");
  }
};

/// Fusion of a blurred, decimated Y_HS (B bands) with a spectrally degraded
/// Y_HR = R X. The A-update solves C1 A + A C2 = C3 in the Fourier domain.
class FusionProblem final : public AdmmProblem {
 public:
  FusionProblem(const ImageCube& hs, const ImageCube& hr, SpectralBasis basis, const BlurOperator& blur,
                Downsampler down, SpectralResponse srf)
      : basis_(std::move(basis)), blur_(blur), down_(down), srf_(std::move(srf)), height_(hr.height()),
        width_(hr.width()) {
    check_divisible(height_, width_, down_, "FusionProblem");
    if (blur_.height() != height_ || blur_.width() != width_)
      throw DimensionError("FusionProblem: blur grid does not match hr size");
    if (hs.height() * down_.factor != height_ || hs.width() * down_.factor != width_)
      throw DimensionError("FusionProblem: hs size must equal hr size / factor");
    if (hs.bands() != basis_.bands() || srf_.input_bands() != hs.bands() || srf_.output_bands() != hr.bands())
      throw DimensionError("FusionProblem: band counts of hs, hr, basis and srf disagree");
    y_hs_ = cube_to_matrix(hs);
    y_hr_ = cube_to_matrix(hr);
    rv_ = srf_.matrix() * basis_.v;
    data_rhs_ = basis_.v.transpose() * blur_.apply_rows(upsample_rows(y_hs_, height_, width_, down_), true) +
                rv_.transpose() * y_hr_;
  }

  const SpectralBasis& basis() const override { return basis_; }
  int height() const override { return height_; }
  int width() const override { return width_; }
  int factor() const { return down_.factor; }
  const BlurOperator& blur() const { return blur_; }
  const Matrix& rv() const { return rv_; }

  /// ||Y_HS - V A B S||^2 + ||Y_HR - R V A||^2.
  double evaluate(const Matrix& a, Matrix* grad) const override {
    detail::require(a.rows() == coefficients() && a.cols() == static_cast<Eigen::Index>(height_) * width_,
                    "FusionProblem::evaluate: coefficient shape mismatch");
    const Matrix r1 = basis_.v * downsample_rows(blur_.apply_rows(a), height_, width_, down_) - y_hs_;
    const Matrix r2 = rv_ * a - y_hr_;
    if (grad)
      *grad = 2.0 * blur_.apply_rows(upsample_rows(basis_.v.transpose() * r1, height_, width_, down_), true) +
              2.0 * rv_.transpose() * r2;
    return r1.squaredNorm() + r2.squaredNorm();
  }

  /// C1 = (RV)^T (RV) + mu I.
  Matrix c1(double mu) const {
    return rv_.transpose() * rv_ + mu * Matrix::Identity(coefficients(), coefficients());
  }

  /// A C2 = A (BS)(BS)^T.
  Matrix apply_c2(const Matrix& a) const {
    const Matrix coarse = downsample_rows(blur_.apply_rows(a), height_, width_, down_);
    return blur_.apply_rows(upsample_rows(coarse, height_, width_, down_), true);
  }

  /// C3 = V^T Y_HS (BS)^T + (RV)^T Y_HR + mu D(Z) + U/2.
  Matrix c3(const Matrix& dz, const Matrix& u, double mu) const { return data_rhs_ + mu * dz + 0.5 * u; }

  /// Solves C1 A + A C2 = C3 given C1 = Q diag(lambda) Q^{-1}.
  Matrix sylvester(const Matrix& c3m, const Vector& lambda, const Matrix& q, const Matrix& q_inv) const {
    const int bt = coefficients(), f = down_.factor;
    const int n = height_ * width_, hc = height_ / f, wc = width_ / f;
    detail::require(c3m.rows() == bt && c3m.cols() == n, "sylvester: C3 shape mismatch");
    detail::require(lambda.size() == bt && q.rows() == bt && q.cols() == bt && q_inv.rows() == bt && q_inv.cols() == bt,
                    "sylvester: eigendecomposition shape mismatch");
    const auto& k = blur_.eigenvalues();
    const Fft2d& fft = blur_.fft();
    const Matrix cbar = q_inv * c3m;
    const double f2 = static_cast<double>(f) * f;
    Matrix abar(bt, n);
    std::vector<Complex> spec(static_cast<std::size_t>(n));
    std::vector<std::size_t> group(static_cast<std::size_t>(f) * f);
    for (int i = 0; i < bt; ++i) {
      const double li = lambda[i];
      detail::require(li > 0.0, "sylvester: C1 eigenvalues must be positive");
      for (int p = 0; p < n; ++p) spec[p] = cbar(i, p);
      fft.forward(spec);
      for (int u0 = 0; u0 < hc; ++u0)
        for (int v0 = 0; v0 < wc; ++v0) {
          double energy = 0.0;
          Complex dot{};
          for (int a = 0; a < f; ++a)
            for (int b = 0; b < f; ++b) {
              const std::size_t idx = static_cast<std::size_t>(u0 + a * hc) * width_ + v0 + b * wc;
              group[static_cast<std::size_t>(a) * f + b] = idx;
              energy += std::norm(k[idx]);
              dot += k[idx] * spec[idx];
            }
          const Complex s = dot / (li * f2 + energy);
          for (std::size_t idx : group) spec[idx] = (spec[idx] - std::conj(k[idx]) * s) / li;
        }
      fft.inverse(spec);
      for (int p = 0; p < n; ++p) abar(i, p) = spec[p].real();
    }
    return q * abar;
  }

  Matrix a_update(const Matrix& dz, const Matrix& u, double mu) const override {
    check_update_args(dz, u, mu);
    factor(mu);
    return sylvester(c3(dz, u, mu), eig_->eigenvalues(), eig_->eigenvectors(), eig_->eigenvectors().transpose());
  }

 private:
  void factor(double mu) const {
    if (eig_ && eig_mu_ == mu) return;
    eig_.emplace(c1(mu));
    eig_mu_ = mu;
  }

  SpectralBasis basis_;
  BlurOperator blur_;
  Downsampler down_;
  SpectralResponse srf_;
  int height_;
  int width_;
  Matrix y_hs_;
  Matrix y_hr_;
  Matrix rv_;
  Matrix data_rhs_;
  mutable std::optional<Eigen::SelfAdjointEigenSolver<Matrix>> eig_;
  mutable double eig_mu_ = 0.0;
};

inline Matrix fusion_a_update(const FusionProblem& problem, const Matrix& dz, const Matrix& u, double mu) {
  return problem.a_update(dz, u, mu);
}

/// Recovery of Y_HS entries removed by an EntryMask. The A-update is
/// block-diagonal over pixels.
class InpaintProblem final : public AdmmProblem {
 public:
  InpaintProblem(const ImageCube& hs, const EntryMask& mask, SpectralBasis basis)
      : basis_(std::move(basis)), mask_(mask), height_(hs.height()), width_(hs.width()) {
    if (!mask.matches(hs)) throw DimensionError("InpaintProblem: mask shape mismatch");
    if (hs.bands() != basis_.bands()) throw DimensionError("InpaintProblem: basis band count mismatch");
    const int bt = basis_.dim(), n = hs.pixels();
    y_ = cube_to_matrix(hs);
    for (int b = 0; b < hs.bands(); ++b)
      for (int p = 0; p < n; ++p)
        if (!mask.at(b, p)) y_(b, p) = 0.0;
    gram_.resize(static_cast<std::size_t>(n));
    vty_ = Matrix::Zero(bt, n);
    for (int p = 0; p < n; ++p) {
      Matrix g = Matrix::Zero(bt, bt);
      for (int b = 0; b < hs.bands(); ++b) {
        if (!mask.at(b, p)) continue;
        const auto row = basis_.v.row(b);
        g.noalias() += row.transpose() * row;
        vty_.col(p) += row.transpose() * y_(b, p);
      }
      gram_[p] = std::move(g);
    }
  }

  const SpectralBasis& basis() const override { return basis_; }
  int height() const override { return height_; }
  int width() const override { return width_; }
  const EntryMask& mask() const { return mask_; }

  /// ||M(Y_HS) - M(V A)||^2.
  double evaluate(const Matrix& a, Matrix* grad) const override {
    detail::require(a.rows() == coefficients() && a.cols() == y_.cols(),
                    "InpaintProblem::evaluate: coefficient shape mismatch");
    Matrix r = basis_.v * a - y_;
    for (Eigen::Index b = 0; b < r.rows(); ++b)
      for (Eigen::Index p = 0; p < r.cols(); ++p)
        if (!mask_.at(static_cast<int>(b), static_cast<int>(p))) r(b, p) = 0.0;
    if (grad) *grad = 2.0 * basis_.v.transpose() * r;
    return r.squaredNorm();
  }

  /// A_n = (V_Sn^T V_Sn + mu I)^{-1} (V_Sn^T y_n + mu g_n), g = D(Z) + U/(2 mu).
  Matrix a_update(const Matrix& dz, const Matrix& u, double mu) const override {
    check_update_args(dz, u, mu);
    factor(mu);
    const Matrix g = dz + u / (2.0 * mu);
    Matrix a(dz.rows(), dz.cols());
    for (Eigen::Index p = 0; p < a.cols(); ++p) a.col(p) = chol_[p].solve(vty_.col(p) + mu * g.col(p));
    return a;
  }

 private:
  void factor(double mu) const {
    if (!chol_.empty() && chol_mu_ == mu) return;
    const int bt = basis_.dim();
    chol_.clear();
    chol_.reserve(gram_.size());
    for (const Matrix& g : gram_) chol_.emplace_back(g + mu * Matrix::Identity(bt, bt));
    chol_mu_ = mu;
  }

  SpectralBasis basis_;
  EntryMask mask_;
  int height_;
  int width_;
  Matrix y_;
  Matrix vty_;
  std::vector<Matrix> gram_;
  mutable std::vector<Eigen::LLT<Matrix>> chol_;
  mutable double chol_mu_ = 0.0;
};

inline Matrix inpaint_a_update(const InpaintProblem& problem, const Matrix& dz, const Matrix& u, double mu) {
  return problem.a_update(dz, u, mu);
}

struct ZUpdateResult {
  FeatureMap z;
  Matrix dz;  // D(z)
  double objective_init = 0.0;
  double objective_final = 0.0;
};

/// Adam on ||D(Z) - A + U/(2 mu)||^2 + (lambda/mu) ||Z||^2 from z_init.
/// The best iterate seen is returned, so the objective never increases.
inline ZUpdateResult z_update(const Generator& generator, const Matrix& a, const Matrix& u, double mu, double lambda,
                              const FeatureMap& z_init, int steps, double lr) {
  if (!(mu > 0.0) || lambda < 0.0 || steps < 0) throw DimensionError("z_update: invalid mu, lambda or steps");
  const Matrix target = a - u / (2.0 * mu);
  const double weight = lambda / mu;
  auto objective = [&](const Matrix& dz, const FeatureMap& z) {
    double zz = 0.0;
    for (double v : z.data) zz += v * v;
    return (dz - target).squaredNorm() + weight * zz;
  };

  ZUpdateResult best{z_init, {}, 0.0, 0.0};
  FeatureMap z = z_init;
  AdamState adam(z.data.size(), lr);
  AlignedBuffer grad(z.data.size());
  for (int step = 0;; ++step) {
    auto pass = generator.run(z);
    if (pass->output().rows() != target.rows() || pass->output().cols() != target.cols())
      throw DimensionError("z_update: generator output shape mismatch");
    const double obj = objective(pass->output(), z);
    if (!std::isfinite(obj)) throw DivergenceError("z_update: non-finite objective", step);
    if (step == 0) {
      best.objective_init = best.objective_final = obj;
      best.dz = pass->output();
    } else if (obj < best.objective_final) {
      best.objective_final = obj;
      best.z = z;
      best.dz = pass->output();
    }
    if (step == steps) break;
    const FeatureMap g = pass->latent_gradient(2.0 * (pass->output() - target));
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = g.data[i] + 2.0 * weight * z.data[i];
    adam_step(adam, z.data, grad);
  }
  return best;
}

/// U + 2 mu (D(Z) - A).
inline Matrix dual_update(const Matrix& u, const Matrix& dz_new, const Matrix& a_new, double mu) {
  if (u.rows() != dz_new.rows() || u.cols() != dz_new.cols() || a_new.rows() != u.rows() || a_new.cols() != u.cols())
    throw DimensionError("dual_update: shape mismatch");
  return u + 2.0 * mu * (dz_new - a_new);
}

struct AdmmSettings {
  double mu = 1e-4;
  double lambda = 1e-5;
  int max_iters = 50;
  int z_steps = 50;
  double z_lr = 0.01;
  double tol = 1e-4;
  bool record_iterates = false;
};

struct AdmmTraceRow {
  int iter = 0;
  double objective = 0.0;
  double primal_residual = 0.0;
  double a_change = 0.0;
};

struct AdmmIterate {
  Matrix a;       // A^(t+1)
  Matrix dz;      // D(Z^(t+1))
  Matrix u_prev;  // U^(t)
  Matrix u;       // U^(t+1)
};

struct AdmmState {
  Matrix a;
  FeatureMap z;
  Matrix u;
  double mu = 0.0;
  double lambda = 0.0;
  int iter = 0;
  std::vector<std::pair<double, double>> residual_history;  // (primal residual, objective)
};

struct AdmmResult {
  ImageCube estimate;
  AdmmState state;
  std::vector<AdmmTraceRow> trace;
  std::vector<AdmmIterate> iterates;
};

/// Alternates the A-update, the Z-update and the dual step until max_iters or
/// until the relative A-change drops below tol (checked from iteration 2).
/// The estimate is V D(Z).
inline AdmmResult admm_solve(const AdmmProblem& problem, const Generator& generator, const FeatureMap& z0,
                             const AdmmSettings& settings) {
  if (!(settings.mu > 0.0) || settings.lambda < 0.0 || settings.max_iters < 0)
    throw ConfigError("admm_solve: invalid settings");
  const int bt = problem.coefficients(), h = problem.height(), w = problem.width();
  AdmmResult result{ImageCube(1, 1, 1), {}, {}, {}};
  AdmmState& st = result.state;
  st.mu = settings.mu;
  st.lambda = settings.lambda;
  st.a = Matrix::Zero(bt, static_cast<Eigen::Index>(h) * w);
  st.u = st.a;
  st.z = z0;
  Matrix dz = generator.generate(z0);
  if (dz.rows() != bt || dz.cols() != st.a.cols()) throw DimensionError("admm_solve: generator output shape mismatch");

  for (int t = 1; t <= settings.max_iters; ++t) {
    Matrix a_new = problem.a_update(dz, st.u, st.mu);
    ZUpdateResult zr = z_update(generator, a_new, st.u, st.mu, st.lambda, st.z, settings.z_steps, settings.z_lr);
    Matrix u_new = dual_update(st.u, zr.dz, a_new, st.mu);

    double zz = 0.0;
    for (double v : zr.z.data) zz += v * v;
    AdmmTraceRow row;
    row.iter = t;
    row.objective = problem.evaluate(zr.dz, nullptr) + st.lambda * zz;
    row.primal_residual = (zr.dz - a_new).norm();
    const double an = a_new.norm();
    row.a_change = an > 0.0 ? (a_new - st.a).norm() / an : 0.0;
    if (!std::isfinite(row.objective) || !std::isfinite(row.primal_residual) || !u_new.allFinite() ||
        !a_new.allFinite())
      throw DivergenceError("admm_solve: non-finite state", t);

    if (settings.record_iterates) result.iterates.push_back({a_new, zr.dz, st.u, u_new});
    st.a = std::move(a_new);
    st.z = std::move(zr.z);
    st.u = std::move(u_new);
    dz = std::move(zr.dz);
    st.iter = t;
    st.residual_history.emplace_back(row.primal_residual, row.objective);
    result.trace.push_back(row);
    if (t >= 2 && row.a_change < settings.tol) break;
  }
  result.estimate = reconstruct(dz, problem.basis(), h, w);
  return result;
}

}  // namespace mbgdd

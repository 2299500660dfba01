#include <gtest/gtest.h>

#include <cmath>

#include "mbgdd/mbgdd.hpp"
#include "oracles.hpp"

using namespace mbgdd;

namespace {

// D(z) = s * z, the latent laid out as B~ channels over the image grid
class ScaleGenerator final : public Generator {
 public:
  ScaleGenerator(int h, int w, double s) : h_(h), w_(w), s_(s) {}
  std::unique_ptr<GeneratorPass> run(const FeatureMap& z) const override { return std::make_unique<Pass>(z, s_); }

 private:
  class Pass final : public GeneratorPass {
   public:
    Pass(const FeatureMap& z, double s) : z_(z), s_(s), out_(s * to_matrix(z)) {}
    const Matrix& output() const override { return out_; }
    FeatureMap latent_gradient(const Matrix& g) override { return feature_map_from(s_ * g, z_.height, z_.width); }

   private:
    FeatureMap z_;
    double s_;
    Matrix out_;
  };
  int h_, w_;
  double s_;
};

struct FusionCase {
  ImageCube hs, hr;
  SpectralBasis basis;
  Kernel2d kernel;
  int h, w, f;
  SpectralResponse srf;
};

FusionCase fusion_case(int h, int w, int f, int bands, int bt, Kernel2d k, std::uint64_t seed) {
  CounterRng rng(seed, 0);
  FusionCase c{oracle::random_cube(h / f, w / f, bands, rng), oracle::random_cube(h, w, 3, rng),
               SpectralBasis{oracle::random_orthonormal(bands, bt, rng), Vector::Ones(bt)}, k, h, w, f,
               SpectralResponse::rgb_like(bands)};
  return c;
}

FusionProblem problem_of(const FusionCase& c) {
  return FusionProblem(c.hs, c.hr, c.basis, BlurOperator(c.kernel, c.h, c.w), Downsampler{c.f}, c.srf);
}

}  // namespace

TEST(FusionUpdate, MatchesDenseOracle) {
  const FusionCase c = fusion_case(8, 8, 2, 6, 3, gaussian_kernel(3, 1.0), 1);
  const FusionProblem p = problem_of(c);
  CounterRng rng(2, 0);
  const Matrix dz = oracle::random_matrix(3, 64, rng), u = oracle::random_matrix(3, 64, rng);
  const double mu = 0.3;
  const auto d = oracle::fusion_dense(c.basis.v, c.srf.matrix(), c.kernel, 8, 8, 2, cube_to_matrix(c.hs),
                                      cube_to_matrix(c.hr), dz, u, mu);
  EXPECT_LT(oracle::rel_err(p.a_update(dz, u, mu), oracle::dense_sylvester(d.c1, d.c2, d.c3)), 1e-10);
  EXPECT_LT(oracle::rel_err(p.c1(mu), d.c1), 1e-12);
  EXPECT_LT(oracle::rel_err(p.c3(dz, u, mu), d.c3), 1e-12);
  EXPECT_LT(oracle::rel_err(p.apply_c2(dz), dz * d.c2), 1e-12);
}

TEST(FusionUpdate, NoBlurNoDecimationIsPointwise) {
  const FusionCase c = fusion_case(4, 6, 1, 5, 2, delta_kernel(), 3);
  const FusionProblem p = problem_of(c);
  CounterRng rng(4, 0);
  const Matrix dz = oracle::random_matrix(2, 24, rng), u = oracle::random_matrix(2, 24, rng);
  const Matrix expect =
      (p.c1(0.5) + Matrix::Identity(2, 2)).fullPivLu().solve(p.c3(dz, u, 0.5));
  EXPECT_LT(oracle::rel_err(p.a_update(dz, u, 0.5), expect), 1e-12);
}

TEST(FusionUpdate, SolvesTheSylvesterEquation) {
  const FusionCase c = fusion_case(8, 12, 4, 6, 3, gaussian_kernel(5, 1.5), 5);
  const FusionProblem p = problem_of(c);
  CounterRng rng(6, 0);
  const Matrix dz = oracle::random_matrix(3, 96, rng), u = oracle::random_matrix(3, 96, rng);
  const Matrix a = p.a_update(dz, u, 0.01);
  const Matrix c3 = p.c3(dz, u, 0.01);
  EXPECT_LT(oracle::rel_err(p.c1(0.01) * a + p.apply_c2(a), c3), 1e-10);
}

TEST(FusionUpdate, AnyDiagonalizationOfC1Works) {
  const FusionCase c = fusion_case(8, 8, 2, 6, 3, gaussian_kernel(3, 1.0), 7);
  const FusionProblem p = problem_of(c);
  CounterRng rng(8, 0);
  const Matrix c3 = oracle::random_matrix(3, 64, rng);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(p.c1(0.2));
  const Matrix q = eig.eigenvectors();
  const Matrix base = p.sylvester(c3, eig.eigenvalues(), q, q.transpose());
  // rescaled eigenvector columns: Q D and (Q D)^-1 describe the same C1
  Vector scale(3);
  scale << 2.0, -0.5, 7.0;
  const Matrix qs = q * scale.asDiagonal();
  const Matrix qs_inv = scale.cwiseInverse().asDiagonal() * q.transpose();
  EXPECT_LT(oracle::rel_err(p.sylvester(c3, eig.eigenvalues(), qs, qs_inv), base), 1e-12);
}

TEST(FusionUpdate, MinimizesTheSubproblem) {
  const FusionCase c = fusion_case(8, 8, 2, 6, 3, gaussian_kernel(3, 1.0), 9);
  const FusionProblem p = problem_of(c);
  CounterRng rng(10, 0);
  const Matrix dz = oracle::random_matrix(3, 64, rng), u = oracle::random_matrix(3, 64, rng);
  const double mu = 0.05;
  const Matrix a = p.a_update(dz, u, mu);
  const double best = p.subproblem_objective(a, dz, u, mu);
  for (int t = 0; t < 10; ++t) {
    const Matrix d = 1e-3 * oracle::random_matrix(3, 64, rng);
    EXPECT_GE(p.subproblem_objective(a + d, dz, u, mu), best);
  }
  Matrix grad;
  p.evaluate(a, &grad);
  // stationarity: grad f(A) - 2 mu (DZ - A + U/(2 mu)) = 0
  EXPECT_LT((grad - 2.0 * mu * (dz - a + u / (2.0 * mu))).norm(), 1e-9 * (1.0 + grad.norm()));
}

TEST(FusionUpdate, LargePenaltyPinsToTarget) {
  const FusionCase c = fusion_case(8, 8, 2, 6, 3, gaussian_kernel(3, 1.0), 11);
  const FusionProblem p = problem_of(c);
  CounterRng rng(12, 0);
  const Matrix dz = oracle::random_matrix(3, 64, rng), u = Matrix::Zero(3, 64);
  EXPECT_LT(oracle::rel_err(p.a_update(dz, u, 1e8), dz), 1e-6);
}

TEST(FusionUpdate, GradientMatchesFiniteDifference) {
  const FusionCase c = fusion_case(8, 8, 2, 6, 3, gaussian_kernel(3, 1.0), 13);
  const FusionProblem p = problem_of(c);
  CounterRng rng(14, 0);
  Matrix a = oracle::random_matrix(3, 64, rng);
  Matrix grad;
  p.evaluate(a, &grad);
  for (Eigen::Index i = 0; i < a.size(); i += 11) {
    const double keep = a(i);
    a(i) = keep + 1e-5;
    const double up = p.evaluate(a, nullptr);
    a(i) = keep - 1e-5;
    const double down = p.evaluate(a, nullptr);
    a(i) = keep;
    EXPECT_NEAR((up - down) / 2e-5, grad(i), 1e-6 * (1.0 + std::abs(grad(i))));
  }
}

TEST(FusionUpdate, RejectsBadInput) {
  const FusionCase c = fusion_case(8, 8, 2, 6, 3, gaussian_kernel(3, 1.0), 15);
  const FusionProblem p = problem_of(c);
  EXPECT_THROW(p.a_update(Matrix::Zero(3, 64), Matrix::Zero(3, 64), 0.0), DimensionError);
  EXPECT_THROW(p.a_update(Matrix::Zero(2, 64), Matrix::Zero(2, 64), 1.0), DimensionError);
  EXPECT_THROW(FusionProblem(c.hs, c.hr, c.basis, BlurOperator(c.kernel, 8, 8), Downsampler{4}, c.srf),
               DimensionError);
}

TEST(InpaintUpdate, MatchesDenseOracle) {
  CounterRng rng(20, 0);
  const int b = 5, bt = 2, h = 3, w = 4, n = h * w;
  const Matrix v = oracle::random_orthonormal(b, bt, rng);
  const ImageCube y = oracle::random_cube(h, w, b, rng);
  std::vector<std::uint8_t> kept(static_cast<std::size_t>(b) * n);
  for (auto& k : kept) k = rng.uniform(0.0, 1.0) < 0.5;
  kept[0] = 1;
  for (int band = 0; band < b; ++band) kept[static_cast<std::size_t>(band) * n + 5] = 0;  // pixel 5 unobserved
  const EntryMask mask(h, w, b, kept);
  const InpaintProblem p(y, mask, SpectralBasis{v, Vector::Ones(bt)});
  const Matrix dz = oracle::random_matrix(bt, n, rng), u = oracle::random_matrix(bt, n, rng);
  const Matrix a = p.a_update(dz, u, 0.7);
  EXPECT_LT(oracle::rel_err(a, oracle::dense_inpaint(v, cube_to_matrix(y), mask, dz, u, 0.7)), 1e-12);
  // unobserved pixel: A = D(Z) + U / (2 mu)
  EXPECT_LT((a.col(5) - (dz.col(5) + u.col(5) / 1.4)).norm(), 1e-13);
}

TEST(InpaintUpdate, FullyObservedClosedForm) {
  CounterRng rng(21, 0);
  const Matrix v = oracle::random_orthonormal(6, 3, rng);
  const ImageCube y = oracle::random_cube(2, 3, 6, rng);
  const InpaintProblem p(y, EntryMask::all(2, 3, 6), SpectralBasis{v, Vector::Ones(3)});
  const Matrix dz = oracle::random_matrix(3, 6, rng), u = Matrix::Zero(3, 6);
  const double mu = 0.25;
  const Matrix expect = (v.transpose() * cube_to_matrix(y) + mu * dz) / (1.0 + mu);
  EXPECT_LT(oracle::rel_err(p.a_update(dz, u, mu), expect), 1e-13);
}

TEST(ZUpdate, ZeroStepsReturnsStart) {
  const ScaleGenerator gen(2, 2, 1.0);
  const FeatureMap z0 = random_latent(1, 2, 2, 1.0, 1, 0);
  const ZUpdateResult r = z_update(gen, Matrix::Ones(1, 4), Matrix::Zero(1, 4), 1.0, 0.0, z0, 0, 0.1);
  EXPECT_EQ(r.z, z0);
  EXPECT_EQ(r.objective_init, r.objective_final);
  EXPECT_TRUE(r.dz.isApprox(to_matrix(z0)));
}

TEST(ZUpdate, ConvergesOnQuadratic) {
  // minimizer of ||2 z - t||^2 + (lambda/mu) ||z||^2 is z = 2 t / (4 + lambda/mu)
  const ScaleGenerator gen(3, 3, 2.0);
  CounterRng rng(22, 0);
  const Matrix a = oracle::random_matrix(2, 9, rng), u = oracle::random_matrix(2, 9, rng);
  const double mu = 0.5, lambda = 0.5;
  const ZUpdateResult r = z_update(gen, a, u, mu, lambda, FeatureMap(2, 3, 3), 3000, 0.01);
  const Matrix t = a - u / (2 * mu);
  EXPECT_LT((to_matrix(r.z) - 2.0 * t / 5.0).norm(), 1e-4);
  EXPECT_LT(r.objective_final, r.objective_init);
}

TEST(ZUpdate, NeverIncreasesObjective) {
  const ScaleGenerator gen(2, 2, 1.0);
  const FeatureMap z0 = random_latent(1, 2, 2, 1.0, 3, 0);
  const Matrix a = to_matrix(z0);  // already optimal for lambda = 0
  const ZUpdateResult r = z_update(gen, a, Matrix::Zero(1, 4), 1.0, 0.0, z0, 20, 5.0);
  EXPECT_LE(r.objective_final, r.objective_init);
  EXPECT_EQ(r.z, z0);
  EXPECT_THROW(z_update(gen, a, Matrix::Zero(1, 4), 0.0, 0.0, z0, 1, 0.1), DimensionError);
}

TEST(DualUpdate, AddsScaledResidual) {
  const Matrix u = Matrix::Constant(2, 3, 0.25);
  EXPECT_TRUE(dual_update(u, Matrix::Ones(2, 3), Matrix::Zero(2, 3), 0.5).isApprox(Matrix::Constant(2, 3, 1.25)));
  const Matrix a = Matrix::Random(2, 3);
  EXPECT_EQ(dual_update(u, a, a, 0.5), u);
  EXPECT_THROW(dual_update(u, Matrix::Zero(3, 3), a, 0.5), DimensionError);
}

TEST(Admm, ZeroIterationsReturnsGeneratorOutput) {
  CounterRng rng(30, 0);
  const Matrix v = oracle::random_orthonormal(4, 2, rng);
  const ImageCube y = oracle::random_cube(2, 2, 4, rng);
  const InpaintProblem p(y, EntryMask::all(2, 2, 4), SpectralBasis{v, Vector::Ones(2)});
  const ScaleGenerator gen(2, 2, 1.0);
  const FeatureMap z0 = random_latent(2, 2, 2, 1.0, 5, 0);
  AdmmSettings s;
  s.max_iters = 0;
  const AdmmResult r = admm_solve(p, gen, z0, s);
  EXPECT_TRUE(r.trace.empty());
  const ImageCube expect = reconstruct(to_matrix(z0), p.basis(), 2, 2);
  for (std::size_t i = 0; i < expect.data().size(); ++i) EXPECT_DOUBLE_EQ(r.estimate.data()[i], expect.data()[i]);
}

TEST(Admm, RecoversObservedCoefficientsAndIsDeterministic) {
  CounterRng rng(31, 0);
  const Matrix v = oracle::random_orthonormal(5, 2, rng);
  const Matrix a_true = oracle::random_matrix(2, 16, rng);
  const ImageCube y = matrix_to_cube(v * a_true, 4, 4);
  const InpaintProblem p(y, EntryMask::all(4, 4, 5), SpectralBasis{v, Vector::Ones(2)});
  const ScaleGenerator gen(4, 4, 1.0);
  AdmmSettings s;
  s.mu = 0.1;
  s.lambda = 0.0;
  s.max_iters = 200;
  s.z_steps = 50;
  s.z_lr = 0.05;
  s.tol = 1e-8;
  s.record_iterates = true;
  const AdmmResult r = admm_solve(p, gen, FeatureMap(2, 4, 4), s);
  EXPECT_LT((r.state.a - a_true).norm() / a_true.norm(), 1e-3);
  EXPECT_LT(r.trace.back().primal_residual, r.trace.front().primal_residual);
  ASSERT_EQ(r.iterates.size(), r.trace.size());
  for (const auto& it : r.iterates) EXPECT_EQ(it.u, dual_update(it.u_prev, it.dz, it.a, s.mu));
  const AdmmResult again = admm_solve(p, gen, FeatureMap(2, 4, 4), s);
  EXPECT_EQ(again.estimate.data(), r.estimate.data());
}

TEST(Admm, StopsOnSmallChange) {
  CounterRng rng(32, 0);
  const Matrix v = oracle::random_orthonormal(3, 1, rng);
  const ImageCube y = oracle::random_cube(2, 2, 3, rng);
  const InpaintProblem p(y, EntryMask::all(2, 2, 3), SpectralBasis{v, Vector::Ones(1)});
  const ScaleGenerator gen(2, 2, 1.0);
  AdmmSettings s;
  s.tol = 1e9;  // any change is small enough, but never before iteration 2
  const AdmmResult r = admm_solve(p, gen, FeatureMap(1, 2, 2), s);
  EXPECT_EQ(r.trace.size(), 2u);
  s.mu = 0.0;
  EXPECT_THROW(admm_solve(p, gen, FeatureMap(1, 2, 2), s), ConfigError);
}

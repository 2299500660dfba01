#include <gtest/gtest.h>

#include "mbgdd/mbgdd.hpp"
#include "oracles.hpp"

using namespace mbgdd;

TEST(GaussianKernel, SizeOneIsDelta) {
  const Kernel2d k = gaussian_kernel(1, 2.0);
  ASSERT_EQ(k.taps.size(), 1u);
  EXPECT_EQ(k.taps[0], 1.0);
}

TEST(GaussianKernel, FlatLimit) {
  for (double v : gaussian_kernel(3, 1e6).taps) EXPECT_NEAR(v, 1.0 / 9.0, 1e-12);
}

TEST(GaussianKernel, CenterValueFromNormalization) {
  double total = 0.0;
  for (int y = -2; y <= 2; ++y)
    for (int x = -2; x <= 2; ++x) total += std::exp(-(x * x + y * y) / 8.0);
  const Kernel2d k = gaussian_kernel(5, 2.0);
  EXPECT_NEAR(k.at(0, 0), 1.0 / total, 1e-15);
  EXPECT_NEAR(k.sum(), 1.0, 1e-14);
}

TEST(GaussianKernel, Symmetries) {
  const Kernel2d k = gaussian_kernel(7, 1.3);
  for (int y = -3; y <= 3; ++y)
    for (int x = -3; x <= 3; ++x) {
      EXPECT_DOUBLE_EQ(k.at(y, x), k.at(x, -y));
      EXPECT_DOUBLE_EQ(k.at(y, x), k.at(-y, x));
    }
}

TEST(GaussianKernel, Errors) {
  EXPECT_THROW(gaussian_kernel(4, 1.0), DimensionError);
  EXPECT_THROW(gaussian_kernel(3, 0.0), DimensionError);
}

TEST(CyclicBlur, DeltaIsIdentity) {
  CounterRng rng(1);
  const ImageCube c = oracle::random_cube(6, 5, 2, rng);
  const ImageCube out = cyclic_blur(c, BlurOperator(delta_kernel(), 6, 5));
  for (std::size_t i = 0; i < c.data().size(); ++i) EXPECT_NEAR(out.data()[i], c.data()[i], 1e-14);
}

TEST(CyclicBlur, PreservesConstant) {
  ImageCube c(8, 8, 1);
  for (double& v : c.data()) v = 2.5;
  const ImageCube out = cyclic_blur(c, BlurOperator(gaussian_kernel(5, 2.0), 8, 8));
  for (double v : out.data()) EXPECT_NEAR(v, 2.5, 1e-13);
}

TEST(CyclicBlur, ImpulseGivesWrappedKernel) {
  Kernel2d k{3, {1, 2, 3, 4, 5, 6, 7, 8, 9}};
  ImageCube c(5, 5, 1);
  c.at(0, 0, 0) = 1.0;
  const ImageCube out = cyclic_blur(c, BlurOperator(k, 5, 5));
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) EXPECT_NEAR(out.at(0, (dy + 5) % 5, (dx + 5) % 5), k.at(dy, dx), 1e-13);
  EXPECT_NEAR(out.at(0, 2, 2), 0.0, 1e-13);
}

TEST(CyclicBlur, MatchesDenseMatrixAndIsLinear) {
  CounterRng rng(2);
  const Kernel2d k = gaussian_kernel(3, 0.8);
  const BlurOperator blur(k, 8, 6);
  const ImageCube x = oracle::random_cube(8, 6, 4, rng), y = oracle::random_cube(8, 6, 4, rng);
  const Matrix dense = oracle::blur_matrix(k, 8, 6);
  const Matrix out = cube_to_matrix(cyclic_blur(x, blur));
  EXPECT_LT((out - cube_to_matrix(x) * dense.transpose()).norm(), 1e-12);
  const Matrix lin = cube_to_matrix(cyclic_blur(matrix_to_cube(2.0 * cube_to_matrix(x) - 3.0 * cube_to_matrix(y), 8, 6), blur));
  EXPECT_LT((lin - (2.0 * out - 3.0 * cube_to_matrix(cyclic_blur(y, blur)))).norm(), 1e-12);
}

TEST(CyclicBlur, AdjointIdentity) {
  CounterRng rng(3);
  Kernel2d k{3, {}};
  for (int i = 0; i < 9; ++i) k.taps.push_back(rng.uniform());  // asymmetric
  const BlurOperator blur(k, 7, 9);
  const ImageCube x = oracle::random_cube(7, 9, 1, rng), y = oracle::random_cube(7, 9, 1, rng);
  const ImageCube bx = cyclic_blur(x, blur), bty = cyclic_blur(y, blur, true);
  double l = 0, r = 0;
  for (std::size_t i = 0; i < x.data().size(); ++i) {
    l += bx.data()[i] * y.data()[i];
    r += x.data()[i] * bty.data()[i];
  }
  EXPECT_NEAR(l, r, 1e-12);
}

TEST(CyclicBlur, EigenvaluesRecompute) {
  const BlurOperator a(gaussian_kernel(5, 2.0), 16, 16), b(gaussian_kernel(5, 2.0), 16, 16);
  for (std::size_t i = 0; i < a.eigenvalues().size(); ++i) {
    EXPECT_LT(std::abs(a.eigenvalues()[i] - b.eigenvalues()[i]), 1e-12);
    EXPECT_LT(std::abs(a.eigenvalues()[i].imag()), 1e-12);  // symmetric kernel
  }
}

TEST(CyclicBlur, SizeMismatch) {
  EXPECT_THROW(cyclic_blur(ImageCube(4, 4, 1), BlurOperator(delta_kernel(), 5, 5)), DimensionError);
  EXPECT_THROW(BlurOperator(gaussian_kernel(5, 1.0), 4, 4), DimensionError);
}

TEST(Downsample, IdentityAndRamp) {
  ImageCube c(4, 4, 1);
  for (int i = 0; i < 16; ++i) c.at(0, i) = i;
  EXPECT_EQ(downsample(c, Downsampler{1}), c);
  const ImageCube d = downsample(c, Downsampler{2});
  ASSERT_EQ(d.pixels(), 4);
  EXPECT_EQ(d.at(0, 0), 0.0);
  EXPECT_EQ(d.at(0, 1), 2.0);
  EXPECT_EQ(d.at(0, 2), 8.0);
  EXPECT_EQ(d.at(0, 3), 10.0);
  EXPECT_THROW(downsample(ImageCube(5, 4, 1), Downsampler{2}), DimensionError);
}

TEST(Downsample, MatchesSelectionMatrixAndAdjoint) {
  CounterRng rng(4);
  const ImageCube x = oracle::random_cube(6, 6, 2, rng);
  const Matrix s = oracle::selection_matrix(6, 6, 3);
  EXPECT_LT((cube_to_matrix(downsample(x, Downsampler{3})) - cube_to_matrix(x) * s).norm(), 1e-15);
  // S S^T after the adjoint masks to the coarse grid
  const ImageCube round = upsample_adjoint(downsample(x, Downsampler{3}), Downsampler{3}, 6, 6);
  EXPECT_LT((cube_to_matrix(round) - cube_to_matrix(x) * s * s.transpose()).norm(), 1e-15);
  const ImageCube y = oracle::random_cube(2, 2, 2, rng);
  const ImageCube sx = downsample(x, Downsampler{3}), sty = upsample_adjoint(y, Downsampler{3}, 6, 6);
  double l = 0, r = 0;
  for (std::size_t i = 0; i < y.data().size(); ++i) l += sx.data()[i] * y.data()[i];
  for (std::size_t i = 0; i < x.data().size(); ++i) r += x.data()[i] * sty.data()[i];
  EXPECT_NEAR(l, r, 1e-12);
}

TEST(UpsampleAdjoint, SinglePixel) {
  const ImageCube c(1, 1, 1, {3.0});
  const ImageCube up = upsample_adjoint(c, Downsampler{2}, 2, 2);
  EXPECT_EQ(up.data(), (std::vector<double>{3.0, 0, 0, 0}));
  EXPECT_EQ(upsample_adjoint(c, Downsampler{1}, 1, 1), c);
}

TEST(Srf, AverageAndIdentity) {
  CounterRng rng(5);
  const ImageCube x = oracle::random_cube(3, 3, 4, rng);
  const ImageCube pan = apply_srf(x, SpectralResponse::average(4));
  for (int n = 0; n < 9; ++n) {
    double m = 0;
    for (int b = 0; b < 4; ++b) m += x.at(b, n) / 4;
    EXPECT_NEAR(pan.at(0, n), m, 1e-15);
  }
  EXPECT_EQ(apply_srf(x, SpectralResponse(Matrix::Identity(4, 4))), x);
  EXPECT_THROW(apply_srf(x, SpectralResponse::average(5)), DimensionError);
}

TEST(Srf, BandRangeAndValidation) {
  const SpectralResponse r = SpectralResponse::band_range(50, 1, 41);
  EXPECT_NEAR(r.matrix().row(0).head(41).sum(), 1.0, 1e-14);
  EXPECT_EQ(r.matrix()(0, 45), 0.0);
  Matrix bad(1, 2);
  bad << 0.7, 0.7;
  EXPECT_THROW(SpectralResponse{bad}, DimensionError);
  bad << 1.5, -0.5;
  EXPECT_THROW(SpectralResponse{bad}, DimensionError);
  const SpectralResponse rgb = SpectralResponse::rgb_like(31);
  EXPECT_EQ(rgb.output_bands(), 3);
}

TEST(Noise, RealizesSnrAndIsDeterministic) {
  CounterRng rng(6);
  const ImageCube x = oracle::random_cube(8, 8, 3, rng);
  for (double snr : {5.0, 30.0, 35.0, 60.0}) {
    const ImageCube y = add_noise_snr(x, snr, 9);
    double noise = 0;
    for (std::size_t i = 0; i < x.data().size(); ++i) noise += std::pow(y.data()[i] - x.data()[i], 2);
    EXPECT_NEAR(10 * std::log10(frobenius_squared(x) / noise), snr, 1e-9);
    EXPECT_EQ(add_noise_snr(x, snr, 9), y);
  }
  EXPECT_NE(add_noise_snr(x, 30, 1), add_noise_snr(x, 30, 2));
  EXPECT_EQ(add_noise_snr(x, INFINITY, 1), x);
  EXPECT_THROW(add_noise_snr(ImageCube(2, 2, 1), 30, 1), DimensionError);
}

TEST(Degrade, ShapesUnderPaviaRecipe) {
  const ImageCube x = make_phantom({40, 40, 12, 3, 1, 0});
  const DegradationModel dm{BlurOperator(gaussian_kernel(5, 2.0), 40, 40), Downsampler{5},
                            SpectralResponse::average(12), 35, 30, std::nullopt, 1};
  const ObservationSet o = degrade(x, dm);
  EXPECT_EQ(o.hs.pixels(), 40 * 40 / 25);
  EXPECT_EQ(o.hs.bands(), 12);
  EXPECT_EQ(o.hr.pixels(), 1600);
  EXPECT_EQ(o.hr.bands(), 1);
}

TEST(Degrade, IdentityModelNoNoise) {
  const ImageCube x = make_phantom({8, 8, 4, 2, 1, 0});
  const DegradationModel dm{BlurOperator(delta_kernel(), 8, 8), Downsampler{1},
                            SpectralResponse(Matrix::Identity(4, 4))};
  const ObservationSet o = degrade(x, dm);
  for (std::size_t i = 0; i < x.data().size(); ++i) {
    EXPECT_NEAR(o.hs.data()[i], x.data()[i], 1e-14);
    EXPECT_NEAR(o.hr.data()[i], x.data()[i], 1e-14);
  }
}

TEST(Degrade, FivePercentPixelMask) {
  const PixelMask pm = random_pixel_mask(20, 20, 0.05, 3);
  EXPECT_EQ(std::count(pm.kept.begin(), pm.kept.end(), 1), 20);
  EXPECT_EQ(random_pixel_mask(20, 20, 0.05, 3).kept, pm.kept);
  EXPECT_THROW(random_pixel_mask(4, 4, 0.0, 1), DimensionError);
  const ImageCube x = make_phantom({20, 20, 6, 2, 1, 0});
  DegradationModel dm{BlurOperator(delta_kernel(), 20, 20), Downsampler{1}, SpectralResponse::rgb_like(6)};
  dm.mask = EntryMask::from_separable(BandMask(std::vector<std::uint8_t>(6, 1)), pm);
  const ObservationSet o = degrade(x, dm);
  for (int n = 0; n < 400; ++n)
    if (!pm.kept[n]) EXPECT_EQ(o.hs.at(3, n), 0.0);
}

TEST(StripeMask, OnlySelectedBandsLoseWholeColumns) {
  const EntryMask m = stripe_mask(6, 10, 5, 2, 0.5, 7);
  int damaged = 0;
  for (int b = 0; b < 5; ++b) {
    bool any = false;
    for (int c = 0; c < 10; ++c) {
      const bool col = m.at(b, c);
      for (int r = 1; r < 6; ++r) EXPECT_EQ(m.at(b, r * 10 + c), col);
      any = any || !col;
    }
    damaged += any;
  }
  EXPECT_LE(damaged, 2);
}

TEST(Bicubic, ReproducesSamplesAndConstants) {
  CounterRng rng(8);
  const ImageCube c = oracle::random_cube(4, 4, 2, rng);
  const ImageCube up = bicubic_upsample(c, 3);
  for (int b = 0; b < 2; ++b)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) EXPECT_NEAR(up.at(b, 3 * i, 3 * j), c.at(b, i, j), 1e-14);
  ImageCube k(3, 3, 1);
  for (double& v : k.data()) v = 0.4;
  const ImageCube flat = bicubic_upsample(k, 4);
  for (double v : flat.data()) EXPECT_NEAR(v, 0.4, 1e-14);
}

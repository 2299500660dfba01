#include <gtest/gtest.h>

#include <cmath>

#include "mbgdd/mbgdd.hpp"

using namespace mbgdd;

namespace {

ImageCube guidance_image(int h, int w, int bands, std::uint64_t seed) {
  ImageCube g(h, w, bands);
  CounterRng rng(seed, 0);
  for (double& v : g.data()) v = rng.uniform(0.0, 1.0);
  return g;
}

GddArchitecture small_arch(int levels, int n_fru) {
  GddArchitecture a;
  a.levels = levels;
  a.n_fru = n_fru;
  a.width = 3;
  a.latent_channels = 2;
  a.out_channels = 2;
  return a;
}

double dot(const FeatureMap& a, const FeatureMap& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

// ||A - T||^2 against a fixed target
class Target final : public DataFidelity {
 public:
  Target(Matrix t, int h, int w) : t_(std::move(t)), h_(h), w_(w) {}
  int coefficients() const override { return static_cast<int>(t_.rows()); }
  int height() const override { return h_; }
  int width() const override { return w_; }
  double evaluate(const Matrix& a, Matrix* grad) const override {
    if (grad) *grad = 2.0 * (a - t_);
    return (a - t_).squaredNorm();
  }

 private:
  Matrix t_;
  int h_, w_;
};

}  // namespace

TEST(GddModel, OutputShape) {
  for (int levels : {0, 1, 2}) {
    const ImageCube g = guidance_image(8, 12, 1, 1);
    GuidedDecoderModel m(small_arch(levels, 2), g, 3);
    EXPECT_EQ(m.latent_height(), 8 >> levels);
    EXPECT_EQ(m.latent_width(), 12 >> levels);
    const FeatureMap z = random_latent(2, m.latent_height(), m.latent_width(), 0.1, 1, 0);
    const FeatureMap a = decoder_forward(m, z);
    EXPECT_EQ(a.channels, 2);
    EXPECT_EQ(a.height, 8);
    EXPECT_EQ(a.width, 12);
  }
}

TEST(GddModel, RejectsBadConfiguration) {
  const ImageCube g = guidance_image(6, 6, 1, 1);
  EXPECT_THROW(GuidedDecoderModel(small_arch(0, 0), g, 1), DimensionError);
  EXPECT_THROW(GuidedDecoderModel(small_arch(2, 1), g, 1), DimensionError);  // 6 not divisible by 4
  EXPECT_THROW(GuidedDecoderModel(small_arch(0, 1), guidance_image(6, 6, 3, 1), 1), DimensionError);
  GuidedDecoderModel m(small_arch(1, 1), g, 1);
  EXPECT_THROW(decoder_forward(m, FeatureMap(2, 6, 6)), DimensionError);
  EXPECT_THROW(decoder_forward(m, FeatureMap(3, 3, 3)), DimensionError);
}

TEST(GddModel, HeadsStartAtUnitGammaZeroBeta) {
  GuidedDecoderModel m(small_arch(1, 2), guidance_image(4, 4, 1, 2), 5);
  for (const auto& h : m.heads())
    for (int c = 0; c < 3; ++c) {
      EXPECT_EQ(m.params()[h.bias_offset + c], 1.0);
      EXPECT_EQ(m.params()[h.bias_offset + 3 + c], 0.0);
    }
}

TEST(GddModel, ZeroParametersGiveZeroOutput) {
  GuidedDecoderModel m(small_arch(1, 2), guidance_image(8, 8, 1, 3), 2);
  m.set_params(std::vector<double>(m.params().size(), 0.0));
  const FeatureMap a = decoder_forward(m, random_latent(2, 4, 4, 1.0, 1, 0));
  for (double v : a.data) EXPECT_EQ(v, 0.0);
}

TEST(GddModel, SinglePixelByHand) {
  // A 1x1 image: standardized guidance is 0, and per-channel normalization of
  // one pixel is 0, so the output depends on biases and head/output weights only.
  GddArchitecture a = small_arch(0, 1);
  a.width = 2;
  a.latent_channels = 1;
  a.out_channels = 1;
  ImageCube g(1, 1, 1);
  g.at(0, 0, 0) = 0.7;
  GuidedDecoderModel m(a, g, 1);
  std::vector<double> p(m.params().size());
  CounterRng rng(9, 0);
  for (double& v : p) v = rng.uniform(-1.0, 1.0);
  m.set_params(p);

  const Conv2d& gc = m.guide_convs()[0];
  const Conv2d& head = m.heads()[0];
  const Conv2d& out = m.output_conv();
  auto leaky = [](double v) { return v > 0 ? v : 0.2 * v; };
  double f[2];
  for (int c = 0; c < 2; ++c) f[c] = leaky(p[gc.bias_offset + c]);
  double expect = p[out.bias_offset];
  for (int c = 0; c < 2; ++c) {
    const int row = 2 + c;  // beta rows follow the gamma rows
    double beta = p[head.bias_offset + row];
    for (int k = 0; k < 2; ++k) beta += p[head.weight_offset + row * 2 + k] * f[k];
    expect += p[out.weight_offset + c] * leaky(beta);
  }
  FeatureMap z(1, 1, 1);
  z.data[0] = 0.37;
  EXPECT_NEAR(decoder_forward(m, z).data[0], expect, 1e-14);
}

TEST(GddModel, GradientsMatchFiniteDifferences) {
  for (bool trainable : {false, true}) {
    GddArchitecture a = small_arch(1, 1);
    GuidedDecoderModel m(a, guidance_image(4, 4, 1, 4), 7);
    FeatureMap z = random_latent(2, 2, 2, 0.5, 2, 0);
    const FeatureMap w = random_latent(2, 4, 4, 1.0, 3, 0);
    DecoderCache cache;
    decoder_forward(m, z, &cache, trainable);
    const DecoderGradients g = decoder_backward(m, cache, w, true);
    auto loss = [&] { return dot(w, decoder_forward(m, z, nullptr, trainable)); };
    const double h = 1e-6;
    double worst = 0.0;
    for (std::size_t i = 0; i < z.data.size(); ++i) {
      const double keep = z.data[i];
      z.data[i] = keep + h;
      const double up = loss();
      z.data[i] = keep - h;
      const double down = loss();
      z.data[i] = keep;
      const double fd = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(fd - g.grad_z.data[i]) / std::max({std::abs(fd), std::abs(g.grad_z.data[i]), 1e-3}));
    }
    std::vector<double> p(m.params().begin(), m.params().end());
    // with frozen guidance the encoder weights are constants of the graph
    const std::size_t first = trainable ? 0 : m.block_convs()[0].weight_offset;
    for (std::size_t i = first; i < p.size(); i += 5) {
      const double keep = p[i];
      p[i] = keep + h;
      m.set_params(p);
      const double up = loss();
      p[i] = keep - h;
      m.set_params(p);
      const double down = loss();
      p[i] = keep;
      m.set_params(p);
      const double fd = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(fd - g.grad_params[i]) / std::max({std::abs(fd), std::abs(g.grad_params[i]), 1e-3}));
    }
    EXPECT_LT(worst, 1e-5) << "trainable guidance " << trainable;
  }
}

TEST(GddModel, FrozenGuidanceLeavesEncoderGradientZero) {
  GuidedDecoderModel m(small_arch(1, 1), guidance_image(4, 4, 1, 4), 7);
  DecoderCache cache;
  decoder_forward(m, random_latent(2, 2, 2, 0.5, 2, 0), &cache);
  const auto g = decoder_backward(m, cache, random_latent(2, 4, 4, 1.0, 3, 0));
  for (const auto& c : m.guide_convs())
    for (std::size_t i = c.weight_offset; i < c.bias_offset + c.out; ++i) EXPECT_EQ(g.grad_params[i], 0.0);
}

TEST(GddModel, ZeroUpstreamGradient) {
  GuidedDecoderModel m(small_arch(1, 1), guidance_image(4, 4, 1, 4), 7);
  DecoderCache cache;
  decoder_forward(m, random_latent(2, 2, 2, 0.5, 2, 0), &cache, true);
  const auto g = decoder_backward(m, cache, FeatureMap(2, 4, 4));
  for (double v : g.grad_z.data) EXPECT_EQ(v, 0.0);
  for (double v : g.grad_params) EXPECT_EQ(v, 0.0);
}

TEST(GddModel, StaleStateIsRejected) {
  GuidedDecoderModel m(small_arch(0, 1), guidance_image(4, 4, 1, 4), 7);
  const FeatureMap z = random_latent(2, 4, 4, 0.5, 2, 0);
  DecoderCache cache;
  decoder_forward(m, z, &cache);
  m.mutable_params()[0] += 0.1;
  EXPECT_THROW(decoder_backward(m, cache, FeatureMap(2, 4, 4)), std::logic_error);
  EXPECT_THROW(decoder_forward(m, z), std::logic_error);
  EXPECT_NO_THROW(decoder_forward(m, z, nullptr, true));
  m.refresh_guidance();
  EXPECT_NO_THROW(decoder_forward(m, z));
}

TEST(GddModel, Deterministic) {
  const ImageCube g = guidance_image(8, 8, 1, 5);
  GuidedDecoderModel a(small_arch(1, 2), g, 11), b(small_arch(1, 2), g, 11), c(small_arch(1, 2), g, 12);
  EXPECT_TRUE(std::equal(a.params().begin(), a.params().end(), b.params().begin()));
  EXPECT_FALSE(std::equal(a.params().begin(), a.params().end(), c.params().begin()));
  const FeatureMap z = random_latent(2, 4, 4, 0.1, 1, 0);
  EXPECT_EQ(decoder_forward(a, z), decoder_forward(b, z));
}

TEST(Guidance, InputIsStandardized) {
  const ImageCube g = guidance_image(6, 5, 2, 6);
  const FeatureMap f = guidance_input_from(g);
  for (int c = 0; c < 2; ++c) {
    const auto row = f.mat().row(c);
    EXPECT_NEAR(row.mean(), 0.0, 1e-12);
    EXPECT_NEAR((row.array() - row.mean()).square().mean(), 1.0, 1e-12);
  }
  ImageCube flat(3, 3, 1);
  std::fill(flat.data().begin(), flat.data().end(), 4.0);
  for (double v : guidance_input_from(flat).data) EXPECT_EQ(v, 0.0);
}

TEST(Guidance, PyramidHalvesPerLevel) {
  GuidedDecoderModel m0(small_arch(0, 1), guidance_image(8, 8, 1, 7), 1);
  EXPECT_EQ(guidance_encode(m0, guidance_image(8, 8, 1, 7)).size(), 1u);
  const ImageCube g = guidance_image(16, 8, 1, 7);
  GuidedDecoderModel m(small_arch(2, 1), g, 1);
  const auto feats = guidance_encode(m, g);
  ASSERT_EQ(feats.size(), 3u);
  for (int l = 0; l < 3; ++l) {
    EXPECT_EQ(feats[l].channels, 3);
    EXPECT_EQ(feats[l].height, 16 >> l);
    EXPECT_EQ(feats[l].width, 8 >> l);
  }
  ASSERT_EQ(m.guidance_features().size(), 3u);
  EXPECT_EQ(m.guidance_features()[2], feats[2]);
}

TEST(Guidance, ConstantImageGivesZeroFeatures) {
  ImageCube flat(8, 8, 1);
  std::fill(flat.data().begin(), flat.data().end(), 0.5);
  GuidedDecoderModel m(small_arch(2, 1), flat, 1);  // biases start at 0
  for (const auto& f : guidance_encode(m, flat))
    for (double v : f.data) EXPECT_EQ(v, 0.0);
}

TEST(TrainGdd, ZeroEpochsKeepsInitialModel) {
  const ImageCube g = guidance_image(8, 8, 1, 8);
  SpectralBasis basis{Matrix::Identity(4, 2)};
  Target t(Matrix::Ones(2, 64), 8, 8);
  const GddTrainResult r = train_gdd(g, basis, t, small_arch(1, 1), {0, 0.01, 0.1}, 3);
  ASSERT_EQ(r.loss_trace.size(), 1u);
  GddArchitecture a = small_arch(1, 1);
  GuidedDecoderModel fresh(a, g, 3);
  EXPECT_TRUE(std::equal(fresh.params().begin(), fresh.params().end(), r.model.params().begin()));
}

TEST(TrainGdd, FitsTargetAndIsDeterministic) {
  const ImageCube g = guidance_image(16, 16, 2, 9);
  CounterRng rng(4, 0);
  Matrix target(2, 256);
  for (int p = 0; p < 256; ++p) {
    target(0, p) = 0.5 + 0.3 * g.data()[p];
    target(1, p) = 0.2 * g.data()[256 + p] - 0.1;
  }
  SpectralBasis basis{Matrix::Identity(8, 2)};
  Target t(target, 16, 16);
  GddArchitecture a = small_arch(1, 1);
  a.width = 8;
  const GddTrainResult r = train_gdd(g, basis, t, a, {500, 0.01, 0.1}, 5);
  ASSERT_EQ(r.loss_trace.size(), 501u);
  EXPECT_LT(r.loss_trace.back(), 0.5 * r.loss_trace.front());
  // the returned model reproduces the last loss with cached guidance
  GddGenerator gen(r.model);
  EXPECT_NEAR(t.evaluate(gen.generate(r.z), nullptr), r.loss_trace.back(), 1e-9 * (1 + r.loss_trace.back()));
  const GddTrainResult again = train_gdd(g, basis, t, a, {20, 0.01, 0.1}, 5);
  const GddTrainResult twice = train_gdd(g, basis, t, a, {20, 0.01, 0.1}, 5);
  EXPECT_EQ(again.loss_trace, twice.loss_trace);
}

TEST(TrainGdd, RejectsMismatchedObjective) {
  const ImageCube g = guidance_image(8, 8, 1, 8);
  SpectralBasis basis{Matrix::Identity(4, 3)};
  Target t(Matrix::Ones(2, 64), 8, 8);
  EXPECT_THROW(train_gdd(g, basis, t, small_arch(0, 1), {1, 0.01, 0.1}, 1), DimensionError);
}

TEST(GddGenerator, LatentGradientMatchesDecoder) {
  GuidedDecoderModel m(small_arch(1, 1), guidance_image(4, 4, 1, 4), 7);
  GddGenerator gen(m);
  const FeatureMap z = random_latent(2, 2, 2, 0.5, 2, 0);
  const FeatureMap w = random_latent(2, 4, 4, 1.0, 3, 0);
  auto pass = gen.run(z);
  DecoderCache cache;
  const FeatureMap out = decoder_forward(m, z, &cache);
  EXPECT_TRUE(pass->output().isApprox(to_matrix(out)));
  EXPECT_EQ(pass->latent_gradient(to_matrix(w)), decoder_backward(m, cache, w, false).grad_z);
}

#include <gtest/gtest.h>

#include <random>

#include "oltr/backbone.hpp"
#include "oltr/gradcheck.hpp"

using namespace oltr;

namespace {

BackboneSpec mlp_spec() {
  BackboneSpec s;
  s.embed_dim = 6;
  s.input_dim = 5;
  s.hidden = {7, 7};
  return s;
}

BackboneSpec conv_spec() {
  BackboneSpec s;
  s.kind = BackboneKind::TinyConv;
  s.embed_dim = 6;
  s.input_channels = 2;
  s.input_size = 8;
  s.conv_widths = {3, 4};
  return s;
}

}  // namespace

TEST(Backbone, AttentionDisabledIsPooledLastMap) {
  for (const BackboneSpec& spec : {mlp_spec(), conv_spec()}) {
    std::mt19937_64 rng(41);
    const BackboneParams bp = BackboneParams::random(spec, rng);
    const AttentionParams ap = AttentionParams::random(spec.embed_dim, rng);
    const Vec x = random_vector(spec.input_size_flat(), 1.0, rng);
    const FeatureMap f = feature_map(spec, bp, x);
    EXPECT_EQ(extract(spec, x, bp, ap, false), f.values.rowwise().mean());
  }
}

TEST(Backbone, MlpMapHasConfiguredShape) {
  const BackboneSpec spec = mlp_spec();
  std::mt19937_64 rng(42);
  const FeatureMap f = feature_map(spec, BackboneParams::random(spec, rng), random_vector(5, 1.0, rng));
  EXPECT_EQ(f.channels(), 6);
  EXPECT_EQ(f.height, 2);
  EXPECT_EQ(f.width, 2);
}

TEST(Backbone, ConvMapSideHalvesPerBlock) {
  const BackboneSpec spec = conv_spec();
  EXPECT_EQ(spec.final_side(), 1);  // 8 -> 4 -> 2 -> 1
  std::mt19937_64 rng(43);
  const FeatureMap f =
      feature_map(spec, BackboneParams::random(spec, rng), random_vector(spec.input_size_flat(), 1.0, rng));
  EXPECT_EQ(f.channels(), 6);
  EXPECT_EQ(f.positions(), 1);
}

TEST(Backbone, Col2ImIsAdjointOfIm2Col) {
  std::mt19937_64 rng(47);
  const Mat x = random_matrix(2, 25, 1.0, rng);
  const Mat cols = conv::im2col(x, 2, 5);
  const Mat y = random_matrix(cols.rows(), cols.cols(), 1.0, rng);
  EXPECT_NEAR((cols.array() * y.array()).sum(), (x.array() * conv::col2im(y, 2, 5).array()).sum(), 1e-12);
}

TEST(Backbone, WrongInputSizeThrows) {
  const BackboneSpec spec = mlp_spec();
  std::mt19937_64 rng(44);
  EXPECT_THROW(feature_map(spec, BackboneParams::random(spec, rng), Vec::Zero(4)), ShapeError);
}

TEST(Backbone, GradientsMatchFiniteDifferences) {
  EXPECT_LT(gradcheck::check_backbone(45, BackboneKind::Mlp).max_relative_error, 1e-4);
  EXPECT_LT(gradcheck::check_backbone(46, BackboneKind::TinyConv).max_relative_error, 1e-4);
}

#include <gtest/gtest.h>

#include "oltr/gradcheck.hpp"

using namespace oltr;

class GradcheckComponents : public ::testing::TestWithParam<std::string> {};

TEST_P(GradcheckComponents, TenSeedsBelowTolerance) {
  const auto c = gradcheck::parse_component(GetParam());
  ASSERT_TRUE(c.has_value());
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto r = gradcheck::run(*c, seed);
    EXPECT_GT(r.entries, 0u);
    EXPECT_LT(r.max_relative_error, 1e-4) << "seed " << seed << " worst " << r.worst;
  }
}

INSTANTIATE_TEST_SUITE_P(All, GradcheckComponents,
                         ::testing::Values("squash", "cosine_logits", "cross_entropy", "large_margin_loss",
                                           "large_margin_inactive", "meta_embed", "modulated_attention", "backbone",
                                           "total_loss"));

TEST(Gradcheck, UnknownComponentIsRejected) { EXPECT_FALSE(gradcheck::parse_component("nope").has_value()); }

TEST(Gradcheck, MetaEmbedAblationsAlsoCheck) {
  for (int mask = 0; mask < 8; ++mask) {
    auto opt = gradcheck::exact_gradient_options();
    opt.memory_feature = mask & 1;
    opt.concept_selector = mask & 2;
    opt.calibration = mask & 4;
    EXPECT_LT(gradcheck::check_meta_embed(3, opt).max_relative_error, 1e-4) << "mask " << mask;
  }
}

TEST(Gradcheck, TotalLossVariantsCheck) {
  auto o = gradcheck::small_model_options();
  o.margin_on_direct = true;
  EXPECT_LT(gradcheck::check_total_loss(5, o).max_relative_error, 1e-4);
  o.mean_reduction = true;
  o.margin_form = MarginForm::SumOfNegatives;
  EXPECT_LT(gradcheck::check_total_loss(6, o).max_relative_error, 1e-4);
  o.baseline = true;
  o.attention = false;
  EXPECT_LT(gradcheck::check_total_loss(7, o).max_relative_error, 1e-4);
}

TEST(Gradcheck, RelativeErrorFloorsSmallGradients) {
  EXPECT_DOUBLE_EQ(gradcheck::relative_error(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(gradcheck::relative_error(0.0, 1e-9), 1e-9 / gradcheck::kDenominatorFloor);
}

#include <gtest/gtest.h>

#include "gradcheck.hpp"

using namespace vadforge;

namespace {

class KernelGradient : public ::testing::TestWithParam<check::GradCase> {};

TEST_P(KernelGradient, MatchesCentralDifferences) {
  const auto r = GetParam().run();
  EXPECT_LT(r.max_rel_error, check::kKernelTolerance) << "worst input: " << r.worst;
}

INSTANTIATE_TEST_SUITE_P(GradCheck, KernelGradient, ::testing::ValuesIn(check::kernel_cases()),
                         [](const auto& info) { return info.param.name; });

TEST(GradCheck, FullModelTinyConfig) {
  const auto r = check::full_model_report();
  EXPECT_LT(r.max_rel_error, check::kModelTolerance) << "worst input: " << r.worst;
}

// The checker itself must notice a wrong gradient.
TEST(GradCheck, DetectsABrokenBackward) {
  auto x = check::random_tensor({4}, 1);
  const auto r = check::check_gradients(
      [&] {
        // Forward x*x, but the tape only sees the detached product's scale by x.
        Tensor<double> c = x.clone();
        c.set_requires_grad(false);
        return ops::mul(x, c);
      },
      {{"x", x}});
  EXPECT_GT(r.max_rel_error, 0.1);
}

}  // namespace

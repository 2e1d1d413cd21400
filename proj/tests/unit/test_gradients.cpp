#include <gtest/gtest.h>

#include "support.hpp"

namespace roiedit {
namespace {

using testing::random_tensor;
using testing::tiny_arch;
using testing::worst_gradient_error;

struct TinySetup {
  ArchSpec arch = tiny_arch();
  Autoencoder<double> ae{arch, 11};
  Discriminators<double> disc{arch, 12};
  ag::Var<double> x = ag::constant(random_tensor<double>({3, 4, 4, 3}, 5));
};

TEST(Gradients, TinyNetsStayUnderOneThousandParameters) {
  TinySetup s;
  EXPECT_LE(s.ae.params().count(), 1000u);
  EXPECT_LE(s.disc.params().count(), 1000u);
}

TEST(Gradients, SmnObjectiveMatchesFiniteDifferences) {
  TinySetup s;
  std::mt19937_64 rng(3);
  const CropPlan plan = CropPlan::draw(3, 4, s.arch.patch_size, 2, rng);
  auto loss = [&] { return smn_objective<double>(s.ae, s.disc, s.x, plan).total; };
  const auto w = worst_gradient_error(s.ae.params(), loss);
  EXPECT_LT(w.rel, 1e-3) << w.name << "[" << w.index << "] analytic " << w.analytic << " numeric " << w.numeric;
}

TEST(Gradients, SmnObjectiveDiscriminatorSide) {
  TinySetup s;
  std::mt19937_64 rng(4);
  const CropPlan plan = CropPlan::draw(3, 4, s.arch.patch_size, 2, rng);
  auto loss = [&] { return smn_objective<double>(s.ae, s.disc, s.x, plan).total; };
  const auto w = worst_gradient_error(s.disc.params(), loss);
  EXPECT_LT(w.rel, 1e-3) << w.name << "[" << w.index << "] analytic " << w.analytic << " numeric " << w.numeric;
}

TEST(Gradients, SmpnObjectiveMatchesFiniteDifferences) {
  TinySetup s;
  std::array<ag::Var<double>, kNumRois> y;
  for (int i = 0; i < kNumRois; ++i) y[i] = ag::constant(random_tensor<double>({3, 4, 4, 3}, 40 + i));
  std::mt19937_64 rng(5);
  const CropPlan plan = CropPlan::draw(kNumRois * 3, 4, s.arch.patch_size, 2, rng);
  const auto scheme = SliceScheme::default_scheme();
  auto loss = [&] { return smpn_objective<double>(s.ae, s.disc, s.x, y, scheme, plan).total; };
  const auto w = worst_gradient_error(s.ae.params(), loss);
  EXPECT_LT(w.rel, 1e-3) << w.name << "[" << w.index << "] analytic " << w.analytic << " numeric " << w.numeric;
}

TEST(Gradients, DiscriminatorLossMatchesFiniteDifferences) {
  TinySetup s;
  auto real = ag::constant(random_tensor<double>({3, 4, 4, 3}, 8));
  auto fake = ag::constant(random_tensor<double>({3, 4, 4, 3}, 9));
  auto loss = [&] {
    return discriminator_gan_loss<double>(s.disc.image_logits(real), s.disc.image_logits(fake));
  };
  const auto w = worst_gradient_error(s.disc.params(), loss);
  EXPECT_LT(w.rel, 1e-3) << w.name << "[" << w.index << "] analytic " << w.analytic << " numeric " << w.numeric;
}

}  // namespace
}  // namespace roiedit

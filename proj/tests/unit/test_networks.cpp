#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "roiedit/networks.hpp"
#include "support.hpp"

namespace roiedit {
namespace {

ArchSpec arch_for(int size) {
  ModelConfig c;
  c.image_size = size;
  return ArchSpec::from_config(c);
}

class ShapeContract : public ::testing::TestWithParam<int> {};

TEST_P(ShapeContract, EncodeDecodeShapes) {
  const int h = GetParam();
  const AutoencoderParams ae(arch_for(h), 1);
  const auto x = testing::random_tensor<float>({h, h, 3}, 2);
  auto [s, t] = encode(ae, x);
  EXPECT_EQ(s.tensor().shape(), (std::vector<int>{h / 16, h / 16, 8}));
  EXPECT_EQ(t.size(), 2048u);
  const auto y = decode(ae, s, t);
  EXPECT_EQ(y.shape(), (std::vector<int>{h, h, 3}));
  for (float v : y.values()) {
    ASSERT_GE(v, -1.0f);
    ASSERT_LE(v, 1.0f);
  }
}

INSTANTIATE_TEST_SUITE_P(Sizes, ShapeContract, ::testing::Values(32, 64, 128));

TEST(Networks, RejectsWrongShapes) {
  const AutoencoderParams ae(arch_for(64), 1);
  EXPECT_THROW(encode(ae, ImageTensor({32, 32, 3})), ShapeError);
  EXPECT_THROW(encode(ae, ImageTensor({64, 64, 1})), ShapeError);
  EXPECT_THROW(decode(ae, StructureTensor(2, 2), TextureVector()), ShapeError);
  const DiscriminatorParams d(arch_for(64), 1);
  EXPECT_THROW(discriminate(d, ImageTensor({32, 32, 3})), ShapeError);
}

TEST(Networks, ForwardPassesAreDeterministic) {
  const AutoencoderParams ae(arch_for(64), 3);
  const auto x = testing::random_tensor<float>({64, 64, 3}, 4);
  const auto a = encode(ae, x), b = encode(ae, x);
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  EXPECT_EQ(decode(ae, a.first, a.second), decode(ae, b.first, b.second));
  const DiscriminatorParams d(arch_for(64), 5);
  EXPECT_EQ(discriminate(d, x), discriminate(d, x));
}

TEST(Networks, SameSeedSameWeights) {
  const AutoencoderParams a(arch_for(32), 9), b(arch_for(32), 9), c(arch_for(32), 10);
  EXPECT_EQ(a.params().get("dec.out.weight")->value, b.params().get("dec.out.weight")->value);
  EXPECT_NE(a.params().get("dec.out.weight")->value, c.params().get("dec.out.weight")->value);
}

TEST(Networks, DecodeIsContinuousInTexture) {
  const AutoencoderParams ae(arch_for(64), 6);
  const auto x = testing::random_tensor<float>({64, 64, 3}, 7);
  auto [s, t] = encode(ae, x);
  const auto base = decode(ae, s, t);
  double prev = INFINITY;
  for (double eps : {1e-2, 1e-3, 1e-4}) {
    std::vector<float> moved = t.values();
    for (auto& v : moved) v += static_cast<float>(eps);
    const auto y = decode(ae, s, TextureVector(moved));
    double diff = 0;
    for (std::size_t i = 0; i < y.size(); ++i) diff = std::max(diff, double(std::abs(y[i] - base[i])));
    EXPECT_LE(diff, prev);
    prev = diff;
  }
  // first-order bound: output moves by at most ~eps times the largest input-output sensitivity
  EXPECT_LT(prev, 1e-2);
}

TEST(Networks, ExtremeInputsGiveFiniteLogits) {
  const DiscriminatorParams d(arch_for(64), 1);
  EXPECT_TRUE(std::isfinite(discriminate(d, ImageTensor({64, 64, 3}, 1.0f))));
  EXPECT_TRUE(std::isfinite(discriminate(d, ImageTensor({64, 64, 3}, -1.0f))));
}

TEST(Networks, CooccurrenceIgnoresReferenceOrder) {
  const DiscriminatorParams d(arch_for(64), 2);
  const auto patch = testing::random_tensor<float>({16, 16, 3}, 1);
  std::vector<ImageTensor> refs;
  for (int i = 0; i < 5; ++i) refs.push_back(testing::random_tensor<float>({16, 16, 3}, 10 + i));
  const float base = discriminate_cooccurrence(d, patch, refs);
  EXPECT_TRUE(std::isfinite(base));
  std::mt19937_64 rng(3);
  for (int i = 0; i < 10; ++i) {
    std::shuffle(refs.begin(), refs.end(), rng);
    EXPECT_NEAR(discriminate_cooccurrence(d, patch, refs), base, 1e-6);
  }
  EXPECT_THROW(discriminate_cooccurrence(d, patch, {}), std::invalid_argument);
  EXPECT_THROW(discriminate_cooccurrence(d, ImageTensor({8, 8, 3}), refs), ShapeError);
}

TEST(Networks, ParamsConstructorChecksShapes) {
  const ArchSpec arch = arch_for(32);
  const AutoencoderParams ae(arch, 1);
  EXPECT_NO_THROW(AutoencoderParams(arch, ae.params().clone()));
  ParamSet<float> missing;
  for (const auto& [k, v] : ae.params().entries())
    if (k != "dec.out.bias") missing.add(k, v->value);
  EXPECT_THROW(AutoencoderParams(arch, std::move(missing)), std::invalid_argument);
}

TEST(ModelConfig, Validation) {
  ModelConfig c;
  EXPECT_NO_THROW(c.validate());
  c.image_size = 48;
  EXPECT_NO_THROW(c.validate());
  c.image_size = 40;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.image_size = 16;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ModelConfig{};
  c.base_channels = 4;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_EQ(ModelConfig::from_json(ModelConfig{}.to_json()), ModelConfig{});
}

TEST(Networks, EditCostEstimateIsPositive) { EXPECT_GT(estimate_edit_macs(arch_for(64)), 0); }

}  // namespace
}  // namespace roiedit

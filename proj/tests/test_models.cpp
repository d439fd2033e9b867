#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support.hpp"

using namespace fetalbet;

namespace {

template <typename T>
nn::Tensor<T> random_input(std::size_t n, std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  nn::Tensor<T> x(n, 1, size, size);
  for (auto& v : x.values()) v = static_cast<T>(g(rng));
  return x;
}

template <typename T>
double max_softmax_deviation(const nn::Tensor<T>& p) {
  double worst = 0;
  for (std::size_t n = 0; n < p.n(); ++n)
    for (std::size_t i = 0; i < p.plane(n, 0).size(); ++i)
      worst = std::max(worst, std::abs(static_cast<double>(p.plane(n, 0)[i] + p.plane(n, 1)[i]) - 1.0));
  return worst;
}

}  // namespace

TEST(Planner, DepthRule) {
  EXPECT_EQ(plan_dynamic_unet(256, 256).downsamplings, 5);
  EXPECT_EQ(plan_dynamic_unet(64, 64).downsamplings, 3);
  EXPECT_EQ(plan_dynamic_unet(32, 32).downsamplings, 2);
  EXPECT_EQ(plan_dynamic_unet(1024, 1024).downsamplings, 5);
  EXPECT_EQ(plan_dynamic_unet(64, 300).downsamplings, 3);
  EXPECT_THROW(plan_dynamic_unet(16, 16), PlanningError);
  EXPECT_THROW(plan_dynamic_unet(31, 256), PlanningError);
}

TEST(Planner, ChannelsCapped) {
  const auto plan = plan_dynamic_unet(256, 256, 1.0, 1.0, 32, 320);
  ASSERT_EQ(plan.levels.size(), 6u);
  EXPECT_EQ(plan.levels[0].channels, 32);
  EXPECT_EQ(plan.levels[3].channels, 256);
  EXPECT_EQ(plan.levels[4].channels, 320);
  EXPECT_EQ(plan.levels[5].channels, 320);
  EXPECT_EQ(plan.levels[1].stride, 2);
}

TEST(Models, FamiliesProduceNormalizedMaps) {
  for (auto family : {ModelFamily::unet, ModelFamily::attention_unet, ModelFamily::dynamic_unet}) {
    auto model = build_model<float>(fbtest::small_spec(family), 3);
    const auto p = model.predict(random_input<float>(2, 64, 1));
    EXPECT_EQ(p.shape(), (nn::Shape{2, 2, 64, 64})) << to_string(family);
    EXPECT_LT(max_softmax_deviation(p), 1e-5) << to_string(family);
    for (float v : p.values()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  }
}

TEST(Models, BuildersCheckFamily) {
  EXPECT_THROW(build_unet<float>(fbtest::small_spec(ModelFamily::attention_unet)), ContractError);
  EXPECT_THROW(build_attention_unet<float>(fbtest::small_spec(ModelFamily::unet)), ContractError);
  EXPECT_THROW(build_dynamic_unet<float>(fbtest::small_spec(ModelFamily::unet)), ContractError);
}

TEST(Models, IndivisibleInputIsShapeError) {
  ModelSpec spec{ModelFamily::unet};
  spec.base_channels = 4;
  auto model = build_unet<float>(spec);
  try {
    model.predict(random_input<float>(1, 250, 2));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("level"), std::string::npos);
  }
}

TEST(Models, ParameterCountGrowsWithLevels) {
  ModelSpec four{ModelFamily::unet}, five{ModelFamily::unet};
  four.levels = 4;
  five.levels = 5;
  auto a = build_unet<float>(four), b = build_unet<float>(five);
  EXPECT_LT(a.parameter_count(), b.parameter_count());
}

TEST(Models, EvalModeIsDeterministicAndHealthy) {
  auto model = build_attention_unet<float>(fbtest::small_spec(), 5);
  const auto x = random_input<float>(1, 64, 9);
  EXPECT_EQ(model.predict(x).values(), model.predict(x).values());
  const auto z = model.predict(nn::Tensor<float>(1, 1, 64, 64));
  for (float v : z.values()) ASSERT_TRUE(std::isfinite(v));
  EXPECT_LT(max_softmax_deviation(z), 1e-5);
}

TEST(AttentionGate, CoefficientsInUnitInterval) {
  auto model = build_attention_unet<float>(fbtest::small_spec(), 6);
  AttentionProbe<float> probe;
  model.predict(random_input<float>(2, 64, 3), &probe);
  ASSERT_EQ(probe.alphas.size(), 3u);
  for (const auto& a : probe.alphas)
    for (float v : a.values()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
}

TEST(AttentionGate, OpenAndClosed) {
  nn::AttentionGate<double> gate("g", 4, 4);
  nn::InitRng rng(1);
  gate.init(rng);
  nn::Tensor<double> skip(1, 4, 6, 6), g(1, 4, 6, 6);
  std::mt19937_64 r(2);
  std::normal_distribution<double> n(0, 1);
  for (auto& v : skip.values()) v = n(r);
  for (auto& v : g.values()) v = n(r);
  gate.psi().bias().value.fill(1e30);
  EXPECT_EQ(gate.forward(skip, g).values(), skip.values());
  gate.psi().bias().value.fill(-1e30);
  const auto closed = gate.forward(skip, g);
  for (double v : closed.values()) EXPECT_EQ(v, 0.0);
}

TEST(AttentionGate, SpatialMismatchIsShapeError) {
  nn::AttentionGate<float> gate("g", 4, 4);
  EXPECT_THROW(gate.forward(nn::Tensor<float>(1, 4, 6, 6), nn::Tensor<float>(1, 4, 4, 4)), ShapeError);
}

TEST(AttentionUNet, GateOpenMatchesPlainUNet) {
  auto att = build_attention_unet<float>(fbtest::small_spec(ModelFamily::attention_unet), 7);
  auto plain = build_unet<float>(fbtest::small_spec(ModelFamily::unet), 99);
  copy_shared_weights(att, plain);
  att.set_gate_bias(1e30f);
  const auto x = random_input<float>(2, 64, 4);
  const auto a = att.predict(x), b = plain.predict(x);
  double worst = 0;
  for (std::size_t i = 0; i < a.values().size(); ++i)
    worst = std::max(worst, static_cast<double>(std::abs(a.values()[i] - b.values()[i])));
  EXPECT_LT(worst, 1e-6);
}

TEST(AttentionUNet, GradientReachesEveryParameter) {
  auto model = build_attention_unet<float>(fbtest::small_spec(), 8);
  const auto x = random_input<float>(2, 64, 5);
  nn::Tensor<float> v(2, 2, 64, 64);
  std::mt19937_64 rng(6);
  for (std::size_t n = 0; n < 2; ++n) {
    const Mask m = fbtest::random_mask(64, 64, rng);
    for (std::size_t i = 0; i < m.size(); ++i) {
      v.plane(n, 1)[i] = m.values()[i];
      v.plane(n, 0)[i] = 1.0f - m.values()[i];
    }
  }
  model.zero_grad();
  const auto u = model.forward_train(x);
  model.backward(total_loss_with_grad(u, v).grad);
  for (auto* p : model.params()) {
    if (!p->trainable) continue;
    double norm = 0;
    for (float g : p->grad.values()) norm += std::abs(g);
    EXPECT_GT(norm, 0.0) << p->name;
  }
}

TEST(Models, BackwardMatchesFiniteDifferences) {
  for (auto family : {ModelFamily::unet, ModelFamily::attention_unet, ModelFamily::dynamic_unet}) {
    ModelSpec spec{family};
    spec.levels = 3;
    spec.base_channels = 4;
    spec.patch_size = 32;
    spec.activation = nn::ActivationKind::leaky_relu;
    auto model = build_model<double>(spec, 21);
    const auto x = random_input<double>(2, 32, 22);
    nn::Tensor<double> v(2, 2, 32, 32);
    std::mt19937_64 rng(23);
    for (std::size_t n = 0; n < 2; ++n) {
      const Mask m = fbtest::random_mask(32, 32, rng, 0.4);
      for (std::size_t i = 0; i < m.size(); ++i) {
        v.plane(n, 1)[i] = m.values()[i];
        v.plane(n, 0)[i] = 1.0 - m.values()[i];
      }
    }
    model.zero_grad();
    model.backward(total_loss_with_grad(model.forward_train(x), v).grad);
    auto loss_at = [&] { return total_loss(model.forward_train(x), v); };

    std::uniform_int_distribution<std::size_t> pick(0, 1u << 30);
    int checked = 0, bad = 0;
    for (auto* p : model.params()) {
      if (!p->trainable) continue;
      for (int k = 0; k < 3; ++k) {
        const std::size_t i = pick(rng) % p->value.size();
        const double orig = p->value.values()[i];
        // Small step so the probe rarely crosses a pooling or activation kink.
        const double h = 1e-7;
        p->value.values()[i] = orig + h;
        const double lp = loss_at();
        p->value.values()[i] = orig - h;
        const double lm = loss_at();
        p->value.values()[i] = orig;
        const double fd = (lp - lm) / (2 * h);
        const double g = p->grad.values()[i];
        const double rel = std::abs(g - fd) / std::max({1e-5, std::abs(g), std::abs(fd)});
        ++checked;
        if (rel > 1e-3) {
          ++bad;
          ADD_FAILURE() << to_string(family) << " " << p->name << "[" << i << "] analytic " << g << " fd " << fd;
        }
      }
    }
    EXPECT_GT(checked, 20);
    EXPECT_EQ(bad, 0);
  }
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "eabn/model.hpp"
#include "gradcheck.hpp"

using namespace eabn;
using F = Tensor<float>;
using D = Tensor<double>;

TEST_CASE("scale_config: constraint arithmetic") {
  ScalingParams ok{0.2, 0.25, 2.0};
  CHECK(ok.product() == doctest::Approx(0.05));
  CHECK_NOTHROW(ok.validate());

  ScalingParams bad{0.6, 0.6, 2.0};
  CHECK(bad.product() == doctest::Approx(0.864));
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("0.864"), TensorError);

  // depth scaling: repeats 4 -> ceil(0.2*4) = 1
  BackboneConfig base = efficientnet_b0();
  auto a0 = scale_config(base, ok);
  for (const auto& st : a0.stages) CHECK(st.repeats == 1);
}

TEST_CASE("scale_config with identity multipliers is the identity transform") {
  // (1,1,1) violates the constraint, so the check is disabled to test the
  // transform alone
  BackboneConfig base = efficientnet_b0();
  auto same = scale_config(base, ScalingParams{1.0, 1.0, 1.0}, false);
  CHECK(same.stem_channels == base.stem_channels);
  CHECK(same.head_channels == base.head_channels);
  for (size_t i = 0; i < base.stages.size(); ++i) {
    CHECK(same.stages[i].out_channels == base.stages[i].out_channels);
    CHECK(same.stages[i].repeats == base.stages[i].repeats);
  }
}

TEST_CASE("apply_mask arithmetic") {
  auto x = F::from_data({1, 1, 1, 3}, {4, 4, 4});
  auto g0 = F::zeros({1, 1, 1, 3});
  auto m0 = apply_mask(x, g0);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(m0.data()[i] - 4.0f) <= 1e-6f);

  auto g1 = F::from_data({1, 1, 1, 3}, {1, 1, 1});
  CHECK(apply_mask(x, g1).data()[0] == doctest::Approx(8.0));

  auto gh = F::from_data({1, 1, 1, 3}, {0.5, 0.5, 0.5});
  CHECK(apply_mask(x, gh).data()[0] == doctest::Approx(6.0));

  CHECK_THROWS_AS(apply_mask(x, F::zeros({1, 1, 1, 4})), TensorError);
}

TEST_CASE("attention branch: contracts on the logPowSpec shape") {
  std::mt19937 rng(1);
  AttentionBranch<float> ab({2, 4, 8, 16}, rng);
  std::vector<float> xv(513 * 400);
  std::mt19937 vr(2);
  std::uniform_real_distribution<float> dist(-1.f, 1.f);
  for (auto& v : xv) v = dist(vr);
  auto x = F::from_data({1, 1, 513, 400}, xv);
  auto [mask, probs] = ab.forward(x, false);
  CHECK(mask.shape() == Shape{1, 1, 513, 400});
  for (auto v : mask.data()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  CHECK(probs.shape() == Shape{1, 2});
  CHECK(probs.data()[0] + probs.data()[1] == doctest::Approx(1.0));
  CHECK_THROWS_AS(ab.forward(F::zeros({1, 3, 8, 8}), false), TensorError);
}

TEST_CASE("attention branch reaches 16 channels before the heads") {
  CHECK(efficientnet_a0().ab_channels.back() == 16);
  // the classification head pools a 2-channel map into a length-2 vector
  std::mt19937 rng(1);
  AttentionBranch<float> ab({2, 4, 8, 16}, rng);
  auto [mask, probs] = ab.forward(F::zeros({3, 1, 16, 20}), false);
  CHECK(probs.shape() == Shape{3, 2});
  CHECK(mask.shape() == Shape{3, 1, 16, 20});
}

TEST_CASE("perception branch: embedding dim and determinism") {
  auto a0 = efficientnet_a0();
  EabnModel<float> model(a0, 60, 400, 5);
  std::mt19937 vr(3);
  std::uniform_real_distribution<float> dist(-1.f, 1.f);
  std::vector<float> xv(60 * 400);
  for (auto& v : xv) v = dist(vr);
  auto x = F::from_data({1, 1, 60, 400}, xv);
  auto out1 = model.forward(x, false);
  CHECK(out1.embedding.shape() == Shape{1, 256});
  CHECK(out1.pb_probs.data()[0] + out1.pb_probs.data()[1] == doctest::Approx(1.0));
  CHECK(out1.mask.shape() == Shape{1, 1, 60, 400});
  auto out2 = model.forward(x, false);
  for (int64_t i = 0; i < out1.embedding.numel(); ++i)
    CHECK(out1.embedding.data()[i] == out2.embedding.data()[i]);
}

TEST_CASE("perception branch rejects inputs too small for the strides") {
  auto a0 = efficientnet_a0();
  std::mt19937 rng(1);
  CHECK_THROWS_AS(PerceptionBranch<float>(a0, 0, 0, rng), TensorError);
}

TEST_CASE("se-res2net block: degenerate and identity cases") {
  std::mt19937 rng(4);
  std::uniform_real_distribution<float> dist(-1.f, 1.f);
  std::vector<float> xv(2 * 8 * 6 * 5);
  for (auto& v : xv) v = dist(rng);
  auto x = F::from_data({2, 8, 6, 5}, xv);

  // s=1 runs as a plain bottleneck
  std::mt19937 r1(9);
  Res2NetBlock<float> b1(8, 1, 4, r1);
  CHECK(b1.forward(x, false).shape() == x.shape());

  // indivisible channels rejected
  std::mt19937 r2(9);
  CHECK_THROWS_AS(Res2NetBlock<float>(8, 3, 4, r2), TensorError);

  // SE gate disabled equals plain res2net: gate path is skipped entirely
  std::mt19937 r3(9);
  Res2NetBlock<float> b3(8, 4, 4, r3);
  auto with_gate = b3.forward(x, false, false);
  auto no_gate = b3.forward(x, false, true);
  CHECK(with_gate.shape() == no_gate.shape());
  // gate in (0,1): gated magnitudes cannot exceed the ungated ones
  bool differs = false;
  for (int64_t i = 0; i < with_gate.numel(); ++i)
    differs = differs || with_gate.data()[i] != no_gate.data()[i];
  CHECK(differs);

  // zero-initialized expand conv makes the block the identity
  std::mt19937 r4(9);
  Res2NetBlock<float> b4(8, 4, 4, r4);
  b4.zero_expand_conv();
  auto y = b4.forward(x, false);
  for (int64_t i = 0; i < y.numel(); ++i)
    CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-6));
}

TEST_CASE("count_params: direct counts") {
  std::mt19937 rng(1);
  ConvSpec s;
  s.out_channels = 8;
  s.pad_h = s.pad_w = 1;
  Conv2dLayer<float> conv(s, rng);
  CHECK(conv.param_count() == 80);  // 1*8*9 + 8

  LinearLayer<float> fc(256, 2, rng);
  CHECK(fc.param_count() == 514);

  EabnModel<float> a0(efficientnet_a0(), 60, 400);
  CHECK(a0.count_params() >= 80000);
  CHECK(a0.count_params() <= 110000);
}

TEST_CASE("count_flops: analytic conv formula and the A0 budgets") {
  std::mt19937 rng(1);
  ConvSpec s;
  s.out_channels = 8;
  s.pad_h = s.pad_w = 1;
  s.bias = false;
  Conv2dLayer<float> conv(s, rng);
  int64_t h = 16, w = 16;
  CHECK(conv.flops(h, w) == 36864);  // 2*9*1*8*16*16

  EabnModel<float> lfcc(efficientnet_a0(), 60, 400);
  double f1 = static_cast<double>(lfcc.count_flops());
  CHECK(f1 >= 198e6 * 0.75);
  CHECK(f1 <= 198e6 * 1.25);

  EabnModel<float> lps(efficientnet_a0(), 513, 400);
  double f2 = static_cast<double>(lps.count_flops());
  CHECK(f2 >= 1.696e9 * 0.75);
  CHECK(f2 <= 1.696e9 * 1.25);
}

TEST_CASE("counters are invariant to parameter values") {
  EabnModel<float> m1(efficientnet_a0(), 60, 400, 1);
  EabnModel<float> m2(efficientnet_a0(), 60, 400, 999);
  CHECK(m1.count_params() == m2.count_params());
  CHECK(m1.count_flops() == m2.count_flops());
}

TEST_CASE("mask monotonicity: raising a mask cell weakly raises |m| for x >= 0") {
  auto x = F::from_data({1, 1, 1, 2}, {3, 0});
  auto g1 = F::from_data({1, 1, 1, 2}, {0.2f, 0.2f});
  auto g2 = F::from_data({1, 1, 1, 2}, {0.9f, 0.9f});
  auto m1 = apply_mask(x, g1), m2 = apply_mask(x, g2);
  for (int i = 0; i < 2; ++i) CHECK(std::abs(m2.data()[i]) >= std::abs(m1.data()[i]));
}

TEST_CASE("attention branch gradients match finite differences (tiny)") {
  std::mt19937 rng(8);
  AttentionBranch<double> ab({2, 2}, rng);
  auto xv = gradcheck::random_vec(1 * 1 * 5 * 6, rng);
  auto x = D::from_data({1, 1, 5, 6}, xv, true);
  std::vector<D> params = {x};
  ab.visit("ab", [&](const std::string&, D& t, bool trainable) {
    if (trainable) params.push_back(t);
  });
  auto f = [&]() {
    auto [mask, probs] = ab.forward(x, true);
    auto target = D::from_data({1, 2}, {0.9, 0.1});
    auto diff = sub(probs, target);
    return add(sum(mul(diff, diff)), mean(mul(mask, mask)));
  };
  CHECK(gradcheck::check(f, params) <= 1e-3);
}

TEST_CASE("describe lists structure and the parameter total") {
  auto text = describe(efficientnet_a0(), 60, 400);
  CHECK(text.find("efficientnet-a0") != std::string::npos);
  CHECK(text.find("parameters:") != std::string::npos);
  CHECK(text.find("stage 7") != std::string::npos);
}

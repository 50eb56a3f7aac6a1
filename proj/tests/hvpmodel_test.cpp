// Copyright 2026 The HVP Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "hvp/hvpmodel.hpp"

namespace {

using hvp::ConfigError;
using hvp::ShapeError;
using hvp::ad::Tensor;
using namespace hvp::model;
using TD = Tensor<double>;
using TF = Tensor<float>;

std::vector<float> random_pixels(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> dist(0.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

TD random_row(std::size_t d, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(d);
  for (auto& x : v) x = dist(rng);
  return TD::from({1, d}, std::move(v));
}

FeatureSequence<double> random_seq(std::size_t d, std::mt19937_64& rng) {
  FeatureSequence<double> s;
  for (auto& t : s) t = random_row(d, rng);
  return s;
}

// Mini params with trainable weights rescaled to the given std.
HvpParams<double> mini_params(std::uint64_t seed, double trainable_std = 0.3) {
  auto p = HvpParams<double>::init(HvpConfig::mini(), seed);
  for (auto& named : p.trainable()) {
    auto t = named.tensor;
    for (auto& v : t.mutable_data()) v *= trainable_std / 0.02;
  }
  return p;
}

PreparedPair<double> random_prepared(const HvpParams<double>& p, std::mt19937_64& rng) {
  const auto& c = p.config;
  const auto cur = random_pixels(c.view_size * c.view_size, rng);
  const auto opp = random_pixels(c.view_size * c.view_size, rng);
  return prepare_pair<double>({0, cur, opp}, p);
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool all_zero(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

// Per-channel value of conv+bias+relu applied to an input whose channels are
// constant, ignoring borders (valid convolution keeps the map constant).
std::vector<double> constant_conv(const std::vector<double>& in, const TD& kernel, const TD& bias) {
  const std::size_t co = kernel.dim(0), ci = kernel.dim(1), kk = kernel.dim(2) * kernel.dim(3);
  std::vector<double> out(co);
  for (std::size_t o = 0; o < co; ++o) {
    double s = bias[o];
    for (std::size_t c = 0; c < ci; ++c) {
      double ksum = 0;
      for (std::size_t k = 0; k < kk; ++k) ksum += kernel[(o * ci + c) * kk + k];
      s += in[c] * ksum;
    }
    out[o] = std::max(0.0, s);
  }
  return out;
}

std::vector<double> constant_fc(const std::vector<double>& channels, std::size_t spatial, const Linear<double>& fc) {
  const std::size_t out = fc.weight.dim(1);
  std::vector<double> y(out);
  for (std::size_t j = 0; j < out; ++j) {
    double s = fc.bias[j];
    for (std::size_t c = 0; c < channels.size(); ++c)
      for (std::size_t k = 0; k < spatial; ++k) s += channels[c] * fc.weight[(c * spatial + k) * out + j];
    y[j] = s;
  }
  return y;
}

void randomize_biases(hvp::ad::ParamGroup<double> group, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 0.5);
  for (auto& named : group) {
    if (!named.name.ends_with(".bias")) continue;
    auto t = named.tensor;
    for (auto& v : t.mutable_data()) v = dist(rng);
  }
}

// --- configuration ---------------------------------------------------------

TEST(HvpConfigTest, DefaultsAreValid) {
  HvpConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.generated_size(), 64u);
  EXPECT_EQ(c.seed_maps(), 16u);
  EXPECT_EQ(c.phi_output_side(), 4u);
  EXPECT_EQ(c.abs_output_side(), 3u);
  EXPECT_NO_THROW(HvpConfig::mini().validate());
}

TEST(HvpConfigTest, RejectsBadFeatureDim) {
  HvpConfig c;
  c.feature_dim = 250;
  EXPECT_THROW(c.validate(), ConfigError);
  c.feature_dim = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(HvpConfigTest, RejectsViewSmallerThanPatch) {
  HvpConfig c;
  c.view_size = 31;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(HvpConfigTest, RejectsGeneratorMismatch) {
  HvpConfig c;
  c.gen_stride = 3;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(HvpConfigTest, RejectsTinyPatchForExtractor) {
  HvpConfig c = HvpConfig::mini();
  c.phi_channels = {4, 8, 16, 32};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(HvpConfigTest, RejectsNegativeWeightsAndMismatchedBlocks) {
  HvpConfig c;
  c.alpha = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = HvpConfig{};
  c.abs_channels = {8, 16};
  EXPECT_THROW(c.validate(), ConfigError);
}

// --- parameters -------------------------------------------------------------

TEST(HvpParamsTest, TrainableInitIsNormal002) {
  const auto p = HvpParams<float>::init(HvpConfig{}, 0);
  double s = 0, s2 = 0;
  std::size_t n = 0;
  for (const auto& named : p.trainable()) {
    EXPECT_TRUE(named.tensor.requires_grad()) << named.name;
    for (float v : named.tensor.data()) {
      s += v;
      s2 += double(v) * v;
      ++n;
    }
  }
  const double mean = s / n, sd = std::sqrt(s2 / n - mean * mean);
  EXPECT_GT(n, 100000u);
  EXPECT_NEAR(mean, 0.0, 1e-3);
  EXPECT_NEAR(sd, 0.02, 5e-4);
}

TEST(HvpParamsTest, ExtractorIsFrozen) {
  const auto p = HvpParams<float>::init(HvpConfig{}, 0);
  for (const auto& named : p.frozen()) EXPECT_FALSE(named.tensor.requires_grad()) << named.name;
  EXPECT_EQ(p.all().size(), p.frozen().size() + p.trainable().size());
}

TEST(HvpParamsTest, SeededInitIsDeterministic) {
  const auto a = HvpParams<float>::init(HvpConfig{}, 7);
  const auto b = HvpParams<float>::init(HvpConfig{}, 7);
  const auto c = HvpParams<float>::init(HvpConfig{}, 8);
  EXPECT_EQ(hvp::ad::checksum(a.all()), hvp::ad::checksum(b.all()));
  EXPECT_NE(hvp::ad::checksum(a.all()), hvp::ad::checksum(c.all()));
}

TEST(HvpParamsTest, CastRoundTripIsBitwise) {
  const auto p = HvpParams<float>::init(HvpConfig::mini(), 3);
  const auto back = p.cast<double>().cast<float>();
  EXPECT_EQ(hvp::ad::checksum(p.all()), hvp::ad::checksum(back.all()));
  for (std::size_t i = 0; i < p.all().size(); ++i)
    EXPECT_EQ(p.all()[i].tensor.requires_grad(), back.all()[i].tensor.requires_grad());
}

TEST(HvpParamsTest, CloneIsIndependent) {
  const auto p = HvpParams<float>::init(HvpConfig::mini(), 3);
  auto q = p.clone();
  const auto before = hvp::ad::checksum(p.all());
  auto t = q.trainable()[0].tensor;
  t.mutable_data()[0] += 1.0f;
  EXPECT_EQ(hvp::ad::checksum(p.all()), before);
  EXPECT_NE(hvp::ad::checksum(q.all()), before);
}

TEST(HvpParamsTest, ParameterNamesAreUnique) {
  const auto p = HvpParams<float>::init(HvpConfig{}, 0);
  std::vector<std::string> names;
  for (const auto& named : p.all()) names.push_back(named.name);
  std::sort(names.begin(), names.end());
  EXPECT_EQ(std::adjacent_find(names.begin(), names.end()), names.end());
}

// --- extractor ----------------------------------------------------------------

TEST(ExtractorTest, IdenticalPatchesGiveIdenticalFeatures) {
  const auto p = HvpParams<float>::init(HvpConfig{}, 0);
  std::mt19937_64 rng(1);
  const auto patch = random_pixels(40 * 40, rng);
  const auto a = extract_patch_feature<float>(patch, p);
  const auto b = extract_patch_feature<float>(std::vector<float>(patch), p);
  ASSERT_EQ(a.shape(), (hvp::ad::Shape{1, 256}));
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST(ExtractorTest, ZeroPatchGivesBiasOnlyForward) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto p = HvpParams<double>::init(HvpConfig{}, seed);
    std::mt19937_64 rng(seed);
    randomize_biases(p.frozen(), rng);
    std::vector<double> ch(1, 0.0);
    for (const auto& layer : p.phi_convs) ch = constant_conv(ch, layer.kernel, layer.bias);
    const std::size_t side = p.config.phi_output_side();
    const auto expected = constant_fc(ch, side * side, p.phi_fc);
    const auto got = extract_patch_feature<double>(std::vector<float>(40 * 40, 0.0f), p);
    EXPECT_LT(max_abs_diff(got.data(), expected), 1e-12) << "seed " << seed;
  }
}

TEST(ExtractorTest, SinglePixelPerturbationChangesFeature) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto p = HvpParams<float>::init(HvpConfig{}, seed);
    std::mt19937_64 rng(seed + 100);
    auto patch = random_pixels(40 * 40, rng);
    const auto a = extract_patch_feature<float>(patch, p);
    std::uniform_int_distribution<std::size_t> pos(5, 34);
    patch[pos(rng) * 40 + pos(rng)] += 0.5f;
    const auto b = extract_patch_feature<float>(patch, p);
    EXPECT_FALSE(std::equal(a.data().begin(), a.data().end(), b.data().begin())) << "seed " << seed;
  }
}

TEST(ExtractorTest, WrongPatchSizeThrows) {
  const auto p = HvpParams<float>::init(HvpConfig{}, 0);
  EXPECT_THROW(extract_patch_feature<float>(std::vector<float>(39 * 39), p), ShapeError);
}

TEST(ExtractorTest, FeaturesAreDetached) {
  auto p = HvpParams<double>::init(HvpConfig::mini(), 0);
  std::mt19937_64 rng(0);
  const auto f = extract_patch_feature<double>(random_pixels(100, rng), p);
  EXPECT_FALSE(f.requires_grad());
  EXPECT_TRUE(f.node()->parents.empty());
}

// --- encoder / decoder ----------------------------------------------------------

TEST(EncoderTest, ZeroWeightsGiveZeroState) {
  auto p = HvpParams<double>::skeleton(HvpConfig::mini());
  std::mt19937_64 rng(0);
  const auto h = encode(random_row(16, rng), random_seq(16, rng), p);
  ASSERT_EQ(h.shape(), (hvp::ad::Shape{1, 16}));
  EXPECT_TRUE(all_zero(h.data()));
}

TEST(EncoderTest, OrderSensitive) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto p = mini_params(seed);
    std::mt19937_64 rng(seed);
    const auto f = random_row(16, rng);
    auto seq = random_seq(16, rng);
    const auto a = encode(f, seq, p);
    std::swap(seq[0], seq[5]);
    const auto b = encode(f, seq, p);
    EXPECT_GT(max_abs_diff(a.data(), b.data()), 1e-9) << "seed " << seed;
  }
}

TEST(EncoderTest, GlobalFeatureSensitive) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto p = mini_params(seed);
    std::mt19937_64 rng(seed);
    const auto seq = random_seq(16, rng);
    const auto a = encode(random_row(16, rng), seq, p);
    const auto b = encode(random_row(16, rng), seq, p);
    EXPECT_GT(max_abs_diff(a.data(), b.data()), 1e-9) << "seed " << seed;
  }
}

TEST(EncoderTest, WithoutGlobalFeatureRunsSixSteps) {
  const auto p = mini_params(0);
  std::mt19937_64 rng(0);
  const auto seq = random_seq(16, rng);
  TD h = TD::zeros({1, 16});
  for (const auto& f : seq) h = hvp::ad::gru_step(f, h, p.enc);
  EXPECT_EQ(max_abs_diff(encode(TD{}, seq, p).data(), h.data()), 0.0);
}

TEST(EncoderTest, DimensionMismatchThrows) {
  const auto p = mini_params(0);
  std::mt19937_64 rng(0);
  EXPECT_THROW(encode(random_row(15, rng), random_seq(16, rng), p), ShapeError);
}

TEST(DecoderTest, ZeroWeightsGiveZeroEmissions) {
  auto p = HvpParams<double>::skeleton(HvpConfig::mini());
  std::mt19937_64 rng(0);
  const auto out = decode_patches(random_row(16, rng), random_row(16, rng), p);
  for (const auto& e : out) EXPECT_TRUE(all_zero(e.data()));
}

TEST(DecoderTest, Deterministic) {
  const auto p = mini_params(2);
  std::mt19937_64 rng(0);
  const auto f = random_row(16, rng), h = random_row(16, rng);
  const auto a = decode_patches(f, h, p), b = decode_patches(f, h, p);
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(max_abs_diff(a[k].data(), b[k].data()), 0.0);
}

TEST(DecoderTest, FeedsBackItsEmission) {
  const auto p = mini_params(4);
  std::mt19937_64 rng(0);
  const auto f = random_row(16, rng), h = random_row(16, rng);
  const auto out = decode_patches(f, h, p);
  TD state = hvp::ad::gru_step(f, h, p.dec);
  EXPECT_EQ(max_abs_diff(out[0].data(), apply(p.dec_out, state).data()), 0.0);
  state = hvp::ad::gru_step(out[0], state, p.dec);
  EXPECT_EQ(max_abs_diff(out[1].data(), apply(p.dec_out, state).data()), 0.0);
}

TEST(DecoderTest, GradientReachesGlobalFeatureThroughBothPaths) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto p = mini_params(seed);
    std::mt19937_64 rng(seed);
    TD f = random_row(16, rng);
    const auto seq = random_seq(16, rng);
    const auto target = random_seq(16, rng);
    const TD h_fixed = encode(f, seq, p).detach();
    const TD f_fixed = f.detach();

    auto r = hvp::ad::grad_check([&] { return sq_l2_seq(decode_patches(f, encode(f, seq, p), p), target); }, {f});
    EXPECT_TRUE(r.passed) << "seed " << seed << " " << r.summary();

    f.clear_grad();
    hvp::ad::backward(sq_l2_seq(decode_patches(f, h_fixed, p), target));
    EXPECT_FALSE(all_zero(f.grad())) << "first-step path, seed " << seed;
    f.clear_grad();
    hvp::ad::backward(sq_l2_seq(decode_patches(f_fixed, encode(f, seq, p), p), target));
    EXPECT_FALSE(all_zero(f.grad())) << "hidden-state path, seed " << seed;
  }
}

// --- generator / abstractor ---------------------------------------------------------

TEST(GeneratorTest, DefaultOutputIs64x64InUnitRange) {
  const auto p = HvpParams<float>::init(HvpConfig{}, 0);
  std::mt19937_64 rng(0);
  std::normal_distribution<float> dist(0.0f, 50.0f);
  std::vector<float> h(256);
  for (auto& x : h) x = dist(rng);
  const auto v = generate_view(TF::from({1, 256}, h), p);
  ASSERT_EQ(v.shape(), (hvp::ad::Shape{1, 64, 64}));
  for (float x : v.data()) {
    EXPECT_GE(x, 0.0f);
    EXPECT_LE(x, 1.0f);
  }
}

TEST(GeneratorTest, ZeroWeightsGiveUniformHalf) {
  const auto p = HvpParams<float>::skeleton(HvpConfig{});
  std::mt19937_64 rng(0);
  const auto v = generate_view(random_row(256, rng).cast<float>(), p);
  for (float x : v.data()) EXPECT_EQ(x, 0.5f);
}

TEST(GeneratorTest, UnitRangeUnderLargeWeights) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto p = mini_params(seed, 5.0);
    std::mt19937_64 rng(seed);
    const auto v = generate_view(random_row(16, rng, 10.0), p);
    for (double x : v.data()) {
      ASSERT_GE(x, 0.0);
      ASSERT_LE(x, 1.0);
    }
  }
}

TEST(AbstractorTest, OutputDimension) {
  const auto p = HvpParams<float>::init(HvpConfig{}, 0);
  std::mt19937_64 rng(0);
  const auto y = abstract_view(TF::from({1, 64, 64}, random_pixels(4096, rng)), p);
  EXPECT_EQ(y.shape(), (hvp::ad::Shape{1, 256}));
}

TEST(AbstractorTest, ZeroImageGivesBiasOnlyForward) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto p = HvpParams<double>::init(HvpConfig{}, seed);
    std::mt19937_64 rng(seed);
    randomize_biases(p.trainable(), rng);
    std::vector<double> ch(1, 0.0);
    for (const auto& block : p.abs_blocks)
      for (const auto& layer : block) ch = constant_conv(ch, layer.kernel, layer.bias);
    const std::size_t side = p.config.abs_output_side();
    const auto expected = constant_fc(ch, side * side, p.abs_fc);
    const auto got = abstract_view(TD::zeros({1, 64, 64}), p);
    EXPECT_LT(max_abs_diff(got.data(), expected), 1e-12) << "seed " << seed;
  }
}

TEST(AbstractorTest, WrongSizeThrows) {
  const auto p = HvpParams<float>::init(HvpConfig{}, 0);
  EXPECT_THROW(abstract_view(TF::zeros({1, 63, 63}), p), ShapeError);
  EXPECT_THROW(abstract_view(TF::zeros({64, 64}), p), ShapeError);
}

TEST(AbstractorTest, GradCheckThroughGeneratorAndAbstractor) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto p = mini_params(seed);
    std::mt19937_64 rng(seed);
    TD h = random_row(16, rng);
    const TD target = random_row(16, rng);
    std::vector<TD> inputs{h, p.gen1.kernel, p.gen2.kernel, p.abs_blocks[0][0].kernel, p.abs_fc.weight};
    hvp::ad::GradCheckOptions opt;
    opt.max_coords = 48;
    opt.seed = seed;
    auto r = hvp::ad::grad_check([&] { return hvp::ad::sq_l2(abstract_view(generate_view(h, p), p), target); },
                                 inputs, opt);
    EXPECT_TRUE(r.passed) << "seed " << seed << " " << r.summary();
  }
}

// --- losses -------------------------------------------------------------------

TEST(LossTest, PatchLossPerfectPredictionIsZero) {
  std::mt19937_64 rng(0);
  const auto o = random_seq(16, rng), i = random_seq(16, rng);
  EXPECT_EQ(loss_patch(o, o, i, i).item(), 0.0);
}

TEST(LossTest, PatchLossSingleVectorCase) {
  FeatureSequence<double> pred, target;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    pred[k] = TD::from({1, 1}, {k == 2 ? 1.0 : 0.0});
    target[k] = TD::from({1, 1}, {k == 2 ? 3.0 : 0.0});
  }
  EXPECT_EQ(loss_patch(pred, target, pred, target).item(), 8.0);
}

TEST(LossTest, PatchLossSymmetricUnderRoleExchange) {
  std::mt19937_64 rng(1);
  const auto po = random_seq(8, rng), fo = random_seq(8, rng), pi = random_seq(8, rng), fi = random_seq(8, rng);
  EXPECT_EQ(loss_patch(po, fo, pi, fi).item(), loss_patch(pi, fi, po, fo).item());
}

TEST(LossTest, PatchLossShapeMismatchThrows) {
  std::mt19937_64 rng(1);
  const auto a = random_seq(8, rng), b = random_seq(9, rng);
  EXPECT_THROW(loss_patch(a, b, a, a), ShapeError);
}

TEST(LossTest, CurrentLossHalfVersusZero) {
  const auto half = TF::filled({1, 64, 64}, 0.5f);
  const auto zero = TF::zeros({1, 64, 64});
  EXPECT_EQ(loss_current(half, half, zero).item(), 2048.0f);
  EXPECT_EQ(loss_current(zero, zero, zero).item(), 0.0f);
  EXPECT_THROW(loss_current(half, half, TF::zeros({1, 32, 32})), ShapeError);
}

TEST(LossTest, OppositeLossReachesGeneratorTwiceAndAbstractorOnce) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto p = mini_params(seed);
    std::mt19937_64 rng(seed);
    const TD h = random_row(16, rng);
    const TD vp = TD::from({1, 16, 16}, std::vector<double>(256, 0.25));

    // Generator gradient from the outer use only (inner view detached).
    const TD v_detached = generate_view(h, p).detach();
    hvp::ad::zero_grads(p.trainable());
    hvp::ad::backward(loss_opposite(v_detached, p, vp));
    const std::vector<double> outer(p.gen1.kernel.grad().begin(), p.gen1.kernel.grad().end());
    EXPECT_FALSE(all_zero(p.abs_fc.weight.grad())) << "seed " << seed;

    hvp::ad::zero_grads(p.trainable());
    hvp::ad::backward(loss_opposite(generate_view(h, p), p, vp));
    EXPECT_FALSE(all_zero(p.abs_fc.weight.grad())) << "seed " << seed;
    EXPECT_GT(max_abs_diff(p.gen1.kernel.grad(), outer), 1e-12) << "inner generator use, seed " << seed;
  }
}

TEST(LossTest, DetachingPredictedViewCutsEncoderGradient) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto p = mini_params(seed);
    std::mt19937_64 rng(seed);
    const auto f = random_row(16, rng);
    const auto seq = random_seq(16, rng);
    const TD vp = TD::from({1, 16, 16}, std::vector<double>(256, 0.25));

    hvp::ad::zero_grads(p.trainable());
    hvp::ad::backward(loss_opposite(generate_view(encode(f, seq, p), p), p, vp));
    const std::vector<double> chained(p.enc.w_z.grad().begin(), p.enc.w_z.grad().end());
    EXPECT_FALSE(all_zero(chained)) << "seed " << seed;

    hvp::ad::zero_grads(p.trainable());
    hvp::ad::backward(loss_opposite(generate_view(encode(f, seq, p), p).detach(), p, vp));
    const bool has = p.enc.w_z.has_grad();
    EXPECT_TRUE(!has || all_zero(p.enc.w_z.grad())) << "seed " << seed;
  }
}

TEST(LossTest, CombineSubstitution) {
  const auto t = combine_losses(TD::scalar(2), TD::scalar(3), TD::scalar(4), 1.0, 1.0);
  EXPECT_EQ(t.item(), 9.0);
}

TEST(LossTest, CombineMatchesWeightedSumOnRandomTriples) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> comp(0.0, 1000.0), w(0.0, 2.0);
  for (int k = 0; k < 100; ++k) {
    const float a = float(comp(rng)), b = float(comp(rng)), c = float(comp(rng));
    const double al = w(rng), be = w(rng);
    const auto t = combine_losses(TF::scalar(a), TF::scalar(b), TF::scalar(c), al, be);
    const double expected = al * a + b + be * c;
    EXPECT_LE(std::abs(t.item() - expected) / std::max(1.0, expected), 1e-6);
  }
}

TEST(LossTest, ZeroWeightsLeaveCurrentViewLossExactly) {
  const auto t = combine_losses(TF::scalar(123.25f), TF::scalar(7.125f), TF::scalar(99.5f), 0.0, 0.0);
  EXPECT_EQ(t.item(), 7.125f);
}

// --- full pair ------------------------------------------------------------------------

TEST(ForwardPairTest, BundleIsConsistentAndNonnegative) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto p = mini_params(seed);
    p.config.alpha = 0.5 + 0.1 * seed;
    p.config.beta = 1.5 - 0.1 * seed;
    std::mt19937_64 rng(seed);
    const auto pair = random_prepared(p, rng);
    const auto b = forward_prepared(random_row(16, rng), pair, p);
    EXPECT_GE(b.l_r.item(), 0.0);
    EXPECT_GE(b.l_u.item(), 0.0);
    EXPECT_GE(b.l_u_prime.item(), 0.0);
    EXPECT_NEAR(b.total.item(), b.alpha * b.l_r.item() + b.l_u.item() + b.beta * b.l_u_prime.item(), 1e-9);
    EXPECT_EQ(b.hiddens.size(), 2u);
    EXPECT_TRUE(b.finite());
  }
}

TEST(ForwardPairTest, ComponentsMatchDirectComposition) {
  const auto p = mini_params(1);
  std::mt19937_64 rng(1);
  const auto pair = random_prepared(p, rng);
  const auto f = random_row(16, rng);
  const auto b = forward_prepared(f, pair, p);
  const auto h_i = encode(f, pair.f_i, p), h_o = encode(f, pair.f_o, p);
  const auto lr = loss_patch(decode_patches(f, h_i, p), pair.f_o, decode_patches(f, h_o, p), pair.f_i);
  const auto gi = generate_view(h_i, p), go = generate_view(h_o, p);
  const auto lu = loss_current(gi, go, pair.current);
  const double lup = loss_opposite(gi, p, pair.opposite).item() + loss_opposite(go, p, pair.opposite).item();
  EXPECT_NEAR(b.l_r.item(), lr.item(), 1e-9);
  EXPECT_NEAR(b.l_u.item(), lu.item(), 1e-9);
  EXPECT_NEAR(b.l_u_prime.item(), lup, 1e-9);
}

TEST(ForwardPairTest, ZeroAlphaBetaTotalEqualsCurrentViewLoss) {
  auto p = mini_params(2);
  p.config.alpha = 0;
  p.config.beta = 0;
  std::mt19937_64 rng(2);
  const auto b = forward_prepared(random_row(16, rng), random_prepared(p, rng), p);
  EXPECT_EQ(b.total.item(), b.l_u.item());
  EXPECT_GT(b.l_r.item(), 0.0);
}

TEST(ForwardPairTest, InvariantUnderSetRelabeling) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto p = HvpParams<float>::init(HvpConfig{}, seed);
    std::mt19937_64 rng(seed);
    const auto cur = random_pixels(64 * 64, rng), opp = random_pixels(64 * 64, rng);
    auto pair = prepare_pair<float>({0, cur, opp}, p);
    const auto f = random_row(256, rng, 0.02).cast<float>();
    const double a = forward_prepared(f, pair, p).total.item();
    std::swap(pair.f_o, pair.f_i);
    const double b = forward_prepared(f, pair, p).total.item();
    EXPECT_LE(std::abs(a - b), 1e-6 * std::max(1.0, std::abs(a))) << "seed " << seed;
  }
}

TEST(ForwardPairTest, DirectionsAndMask) {
  const auto p = mini_params(3);
  std::mt19937_64 rng(3);
  const auto pair = random_prepared(p, rng);
  const auto f = random_row(16, rng);
  const auto both = forward_prepared(f, pair, p);
  const auto i2o = forward_prepared(f, pair, p, {true, false});
  const auto o2i = forward_prepared(f, pair, p, {false, true});
  EXPECT_EQ(i2o.hiddens.size(), 1u);
  EXPECT_NEAR(i2o.l_r.item() + o2i.l_r.item(), both.l_r.item(), 1e-9);
  EXPECT_NEAR(i2o.l_u_prime.item() + o2i.l_u_prime.item(), both.l_u_prime.item(), 1e-9);
  EXPECT_THROW(forward_prepared(f, pair, p, {false, false}), ConfigError);

  const auto only_u = forward_prepared(f, pair, p, {}, {false, true, false});
  EXPECT_EQ(only_u.l_r.item(), 0.0);
  EXPECT_EQ(only_u.l_u_prime.item(), 0.0);
  EXPECT_EQ(only_u.total.item(), both.l_u.item());
}

TEST(ForwardPairTest, WithoutGlobalFeatureIgnoresF) {
  auto p = mini_params(4);
  p.config.use_global_feature = false;
  std::mt19937_64 rng(4);
  const auto pair = random_prepared(p, rng);
  const auto a = forward_prepared(random_row(16, rng), pair, p);
  const auto b = forward_prepared(random_row(16, rng), pair, p);
  EXPECT_EQ(a.total.item(), b.total.item());
}

TEST(ForwardPairTest, ExtractorReceivesNoGradient) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto p = mini_params(seed);
    hvp::ad::set_requires_grad(p.frozen(), true);
    std::mt19937_64 rng(seed);
    const auto cur = random_pixels(256, rng), opp = random_pixels(256, rng);
    TD f = random_row(16, rng);
    f.set_requires_grad(true);
    hvp::ad::backward(forward_pair<double>(f, {0, cur, opp}, p).total);
    for (const auto& named : p.frozen())
      EXPECT_TRUE(!named.tensor.has_grad() || all_zero(named.tensor.grad())) << named.name;
    EXPECT_FALSE(all_zero(f.grad()));
  }
}

TEST(ForwardPairTest, GlobalFeatureGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto p = mini_params(seed);
    std::mt19937_64 rng(seed);
    const auto pair = random_prepared(p, rng);
    TD f = random_row(16, rng);
    auto r = hvp::ad::grad_check([&] { return forward_prepared(f, pair, p).total; }, {f});
    EXPECT_TRUE(r.passed) << "seed " << seed << " " << r.summary();
    EXPECT_FALSE(all_zero(f.grad()));
  }
}

TEST(ForwardPairTest, EndToEndGradCheckMiniConfig) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto p = mini_params(seed);
    std::mt19937_64 rng(seed);
    const auto cur = random_pixels(256, rng), opp = random_pixels(256, rng);
    const hvp::synth::ViewPair view{0, cur, opp};
    TD f = random_row(16, rng);
    std::vector<TD> inputs{f};
    for (const auto& named : p.trainable()) inputs.push_back(named.tensor);
    hvp::ad::GradCheckOptions opt;
    opt.max_coords = 24;
    opt.seed = seed;
    auto r = hvp::ad::grad_check([&] { return forward_pair(f, view, p).total; }, inputs, opt);
    EXPECT_TRUE(r.passed) << "seed " << seed << " " << r.summary();
  }
}

TEST(ForwardPairTest, FloatAndDoubleAgree) {
  const auto pf = HvpParams<float>::init(HvpConfig::mini(), 9);
  const auto pd = pf.cast<double>();
  std::mt19937_64 rng(9);
  const auto cur = random_pixels(256, rng), opp = random_pixels(256, rng);
  const auto f = random_row(16, rng, 0.02);
  const double a = forward_pair<float>(f.cast<float>(), {0, cur, opp}, pf).total.item();
  const double b = forward_pair<double>(f.cast<float>().cast<double>(), {0, cur, opp}, pd).total.item();
  EXPECT_NEAR(a, b, 1e-4 * b);
}

}  // namespace

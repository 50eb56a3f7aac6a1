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

#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hvp/errors.hpp"
#include "hvp/gridding.hpp"
#include "hvp/synthviews.hpp"
#include "hvp/tensorcore.hpp"

namespace hvp::model {

using ad::Tensor;

/// Network sizes. Defaults are the desk-scale configuration; every spatial
/// size is derived from these fields and checked by validate().
struct HvpConfig {
  std::size_t feature_dim = 256;  // D: dim of F, of patch features and of the GRU state
  std::size_t view_size = 64;     // W
  std::size_t patch_size = 40;    // H
  std::size_t channels = 1;
  std::vector<std::size_t> phi_channels{8, 16, 32};  // 3x3 stride-2 convs of the frozen extractor
  std::size_t gen_channels = 8;                      // kernels of the first deconv layer
  std::size_t gen_stride = 4;                        // kernel size == stride for both deconv layers
  std::vector<std::size_t> abs_block_layers{1, 2, 3};
  std::vector<std::size_t> abs_channels{8, 16, 32};
  double alpha = 1.0;
  double beta = 1.0;
  bool use_global_feature = true;  // false: F is not fed to E/R (pooling ablation)

  static constexpr std::size_t kSeedSide = 4;  // h is reshaped into D/16 maps of 4x4

  /// 16x16 views, D=16: small enough for exhaustive finite-difference checks.
  static HvpConfig mini() {
    HvpConfig c;
    c.feature_dim = 16;
    c.view_size = 16;
    c.patch_size = 10;
    c.phi_channels = {4, 8};
    c.gen_channels = 4;
    c.gen_stride = 2;
    c.abs_block_layers = {1, 1};
    c.abs_channels = {8, 8};
    return c;
  }

  std::size_t seed_maps() const { return feature_dim / (kSeedSide * kSeedSide); }
  std::size_t generated_size() const { return kSeedSide * gen_stride * gen_stride; }

  std::size_t phi_output_side() const {
    std::size_t s = patch_size;
    for (std::size_t i = 0; i < phi_channels.size(); ++i) {
      if (s < 3) return 0;
      s = ad::conv_out_size(s, 3, 2);
    }
    return s;
  }

  std::size_t abs_output_side() const {
    std::size_t s = generated_size();
    for (std::size_t n : abs_block_layers) {
      for (std::size_t l = 0; l < n; ++l) {
        if (s < 3) return 0;
        s -= 2;
      }
      if (s < 2) return 0;
      s /= 2;
    }
    return s;
  }

  void validate() const {
    if (feature_dim == 0 || feature_dim % 16 != 0)
      throw ConfigError("feature_dim must be a positive multiple of 16, got " + std::to_string(feature_dim));
    if (channels == 0) throw ConfigError("channels must be positive");
    grid::make_gridspec(view_size, patch_size);
    if (phi_channels.empty() || phi_output_side() == 0)
      throw ConfigError("patch size " + std::to_string(patch_size) + " too small for the extractor's " +
                        std::to_string(phi_channels.size()) + " stride-2 convolutions");
    if (gen_stride == 0 || gen_channels == 0) throw ConfigError("gen_stride and gen_channels must be positive");
    if (generated_size() != view_size)
      throw ConfigError("generator emits " + std::to_string(generated_size()) + "x" +
                        std::to_string(generated_size()) + " views but view_size is " + std::to_string(view_size));
    if (abs_block_layers.empty() || abs_block_layers.size() != abs_channels.size())
      throw ConfigError("abs_block_layers and abs_channels must be nonempty and of equal length");
    if (abs_output_side() == 0)
      throw ConfigError("generated view too small for the abstractor's convolution blocks");
    if (alpha < 0 || beta < 0) throw ConfigError("alpha and beta must be nonnegative");
  }
};

template <class T>
struct ConvLayer {
  Tensor<T> kernel;  // [out x in x k x k]
  Tensor<T> bias;    // [out]
};

template <class T>
struct Linear {
  Tensor<T> weight;  // [in x out]
  Tensor<T> bias;    // [1 x out]
};

template <class T>
Tensor<T> apply(const Linear<T>& l, const Tensor<T>& x) {
  return ad::add(ad::matmul(x, l.weight), l.bias);
}

/// All network parameters. Φ (phi) is frozen; E, R, U and C are trainable.
template <class T>
struct HvpParams {
  HvpConfig config;
  std::vector<ConvLayer<T>> phi_convs;
  Linear<T> phi_fc;
  ad::GruWeights<T> enc;
  ad::GruWeights<T> dec;
  Linear<T> dec_out;
  ConvLayer<T> gen1;  // kernel [D/16 x gen_channels x s x s]
  ConvLayer<T> gen2;  // kernel [gen_channels x channels x s x s]
  std::vector<std::vector<ConvLayer<T>>> abs_blocks;
  Linear<T> abs_fc;

  /// Frozen extractor weights, in serialization order.
  ad::ParamGroup<T> frozen() const {
    ad::ParamGroup<T> g;
    for (std::size_t i = 0; i < phi_convs.size(); ++i) {
      g.push_back({"phi.conv" + std::to_string(i) + ".kernel", phi_convs[i].kernel});
      g.push_back({"phi.conv" + std::to_string(i) + ".bias", phi_convs[i].bias});
    }
    g.push_back({"phi.fc.weight", phi_fc.weight});
    g.push_back({"phi.fc.bias", phi_fc.bias});
    return g;
  }

  ad::ParamGroup<T> trainable() const {
    ad::ParamGroup<T> g;
    enc.append_to(g, "enc");
    dec.append_to(g, "dec");
    g.push_back({"dec.out.weight", dec_out.weight});
    g.push_back({"dec.out.bias", dec_out.bias});
    g.push_back({"gen.deconv0.kernel", gen1.kernel});
    g.push_back({"gen.deconv0.bias", gen1.bias});
    g.push_back({"gen.deconv1.kernel", gen2.kernel});
    g.push_back({"gen.deconv1.bias", gen2.bias});
    for (std::size_t b = 0; b < abs_blocks.size(); ++b) {
      for (std::size_t l = 0; l < abs_blocks[b].size(); ++l) {
        const std::string p = "abs.block" + std::to_string(b) + ".conv" + std::to_string(l);
        g.push_back({p + ".kernel", abs_blocks[b][l].kernel});
        g.push_back({p + ".bias", abs_blocks[b][l].bias});
      }
    }
    g.push_back({"abs.fc.weight", abs_fc.weight});
    g.push_back({"abs.fc.bias", abs_fc.bias});
    return g;
  }

  ad::ParamGroup<T> all() const {
    auto g = frozen();
    auto t = trainable();
    g.insert(g.end(), t.begin(), t.end());
    return g;
  }

  /// Deep copy; tensors in the copy are independent leaves.
  HvpParams clone() const { return cast<T>(); }

  template <class U>
  HvpParams<U> cast() const {
    HvpParams<U> out = HvpParams<U>::skeleton(config);
    auto src = all();
    auto dst = out.all();
    for (std::size_t i = 0; i < src.size(); ++i) {
      auto d = dst[i].tensor;
      auto values = src[i].tensor.data();
      auto target = d.mutable_data();
      for (std::size_t k = 0; k < values.size(); ++k) target[k] = static_cast<U>(values[k]);
      d.set_requires_grad(src[i].tensor.requires_grad());
    }
    return out;
  }

  /// Correctly shaped parameters filled with zeros; phi frozen, rest trainable.
  static HvpParams skeleton(const HvpConfig& cfg) {
    cfg.validate();
    HvpParams p;
    p.config = cfg;
    auto z = [](ad::Shape s) { return Tensor<T>::zeros(std::move(s)); };
    std::size_t in = cfg.channels;
    for (std::size_t out : cfg.phi_channels) {
      p.phi_convs.push_back({z({out, in, 3, 3}), z({out})});
      in = out;
    }
    const std::size_t side = cfg.phi_output_side();
    p.phi_fc = {z({in * side * side, cfg.feature_dim}), z({1, cfg.feature_dim})};
    const std::size_t d = cfg.feature_dim;
    p.enc = ad::GruWeights<T>::zeros(d, d);
    p.dec = ad::GruWeights<T>::zeros(d, d);
    p.dec_out = {z({d, d}), z({1, d})};
    const std::size_t s = cfg.gen_stride;
    p.gen1 = {z({cfg.seed_maps(), cfg.gen_channels, s, s}), z({cfg.gen_channels})};
    p.gen2 = {z({cfg.gen_channels, cfg.channels, s, s}), z({cfg.channels})};
    in = cfg.channels;
    for (std::size_t b = 0; b < cfg.abs_block_layers.size(); ++b) {
      std::vector<ConvLayer<T>> block;
      for (std::size_t l = 0; l < cfg.abs_block_layers[b]; ++l) {
        block.push_back({z({cfg.abs_channels[b], in, 3, 3}), z({cfg.abs_channels[b]})});
        in = cfg.abs_channels[b];
      }
      p.abs_blocks.push_back(std::move(block));
    }
    const std::size_t abs_side = cfg.abs_output_side();
    p.abs_fc = {z({in * abs_side * abs_side, d}), z({1, d})};
    ad::set_requires_grad(p.trainable(), true);
    return p;
  }

  /// Trainable weights ~ normal(0, 0.02). The frozen extractor uses He-normal
  /// kernels with zero bias from an independent stream of the same seed.
  static HvpParams init(const HvpConfig& cfg, std::uint64_t seed) {
    HvpParams p = skeleton(cfg);
    std::mt19937_64 phi_rng(synth::splitmix64(seed ^ 0x5048492d46524f5aULL));
    for (auto& named : p.frozen()) {
      const auto& shape = named.tensor.shape();
      if (named.name.ends_with(".bias")) continue;
      const std::size_t fan_in = named.tensor.rank() == 4 ? shape[1] * shape[2] * shape[3] : shape[0];
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
      auto t = named.tensor;
      for (auto& v : t.mutable_data()) v = static_cast<T>(dist(phi_rng));
    }
    std::mt19937_64 rng(synth::splitmix64(seed));
    std::normal_distribution<double> dist(0.0, 0.02);
    for (auto& named : p.trainable()) {
      auto t = named.tensor;
      for (auto& v : t.mutable_data()) v = static_cast<T>(dist(rng));
    }
    return p;
  }
};

// ---------------------------------------------------------------------------
// Feature extraction (frozen)

template <class T>
using FeatureSequence = std::array<Tensor<T>, grid::kSetSize>;  // each [1 x D]

template <class T>
Tensor<T> image_tensor(std::span<const float> pixels, std::size_t channels, std::size_t side) {
  if (pixels.size() != channels * side * side)
    throw ShapeError("image has " + std::to_string(pixels.size()) + " values, expected " +
                     std::to_string(channels * side * side));
  return Tensor<T>::from({channels, side, side}, std::vector<T>(pixels.begin(), pixels.end()));
}

/// Φ on one patch. The result is detached: nothing flows back into Φ.
template <class T>
Tensor<T> extract_patch_feature(std::span<const float> patch, const HvpParams<T>& p) {
  const auto& cfg = p.config;
  auto x = image_tensor<T>(patch, cfg.channels, cfg.patch_size);
  for (const auto& layer : p.phi_convs) x = ad::relu(ad::add_channel_bias(ad::conv2d(x, layer.kernel, 2), layer.bias));
  x = ad::reshape(x, {1, x.size()});
  return apply(p.phi_fc, x).detach();
}

template <class T>
FeatureSequence<T> extract_patch_features(const grid::PatchSequence& patches, const HvpParams<T>& p) {
  FeatureSequence<T> out;
  for (std::size_t k = 0; k < grid::kSetSize; ++k) out[k] = extract_patch_feature<T>(patches[k], p);
  return out;
}

// ---------------------------------------------------------------------------
// Patch prediction: encoder E and decoder R

/// Runs E over [F, f_1..f_6] from a zero state; returns the last hidden state.
/// An undefined F skips the first step.
template <class T>
Tensor<T> encode(const Tensor<T>& global, const FeatureSequence<T>& seq, const HvpParams<T>& p) {
  const std::size_t d = p.config.feature_dim;
  Tensor<T> h = Tensor<T>::zeros({1, d});
  if (global.defined()) h = ad::gru_step(global, h, p.enc);
  for (const auto& f : seq) h = ad::gru_step(f, h, p.enc);
  return h;
}

/// R starts from h, reads F at step 1 and its own previous emission after
/// that; emits 6 predicted patch features.
template <class T>
FeatureSequence<T> decode_patches(const Tensor<T>& global, const Tensor<T>& h, const HvpParams<T>& p) {
  FeatureSequence<T> out;
  Tensor<T> input = global.defined() ? global : Tensor<T>::zeros({1, p.config.feature_dim});
  Tensor<T> state = h;
  for (std::size_t t = 0; t < grid::kSetSize; ++t) {
    state = ad::gru_step(input, state, p.dec);
    out[t] = apply(p.dec_out, state);
    input = out[t];
  }
  return out;
}

// ---------------------------------------------------------------------------
// View generator U and view abstractor C

/// h[1 x D] -> D/16 maps of 4x4 -> deconv+relu -> deconv+tanh -> [0,1].
template <class T>
Tensor<T> generate_view(const Tensor<T>& h, const HvpParams<T>& p) {
  const auto& cfg = p.config;
  const std::size_t side = HvpConfig::kSeedSide;
  auto x = ad::reshape(h, {cfg.seed_maps(), side, side});
  x = ad::relu(ad::add_channel_bias(ad::deconv2d(x, p.gen1.kernel, cfg.gen_stride), p.gen1.bias));
  x = ad::tanh(ad::add_channel_bias(ad::deconv2d(x, p.gen2.kernel, cfg.gen_stride), p.gen2.bias));
  return ad::affine(x, T(0.5), T(0.5));
}

template <class T>
Tensor<T> abstract_view(const Tensor<T>& image, const HvpParams<T>& p) {
  const std::size_t g = p.config.generated_size();
  if (image.rank() != 3 || image.dim(0) != p.config.channels || image.dim(1) != g || image.dim(2) != g)
    throw ShapeError("abstract_view expects a " + std::to_string(g) + "x" + std::to_string(g) + " view, got " +
                     ad::to_string(image.shape()));
  Tensor<T> x = image;
  for (const auto& block : p.abs_blocks) {
    for (const auto& layer : block) x = ad::relu(ad::add_channel_bias(ad::conv2d(x, layer.kernel, 1), layer.bias));
    x = ad::maxpool2x2(x);
  }
  x = ad::reshape(x, {1, x.size()});
  return apply(p.abs_fc, x);
}

// ---------------------------------------------------------------------------
// Losses

template <class T>
Tensor<T> sq_l2_seq(const FeatureSequence<T>& pred, const FeatureSequence<T>& target) {
  Tensor<T> total = ad::sq_l2(pred[0], target[0]);
  for (std::size_t k = 1; k < pred.size(); ++k) total = ad::add(total, ad::sq_l2(pred[k], target[k]));
  return total;
}

/// Bidirectional patch loss: ||pred_O - f_O||^2 + ||pred_I - f_I||^2.
template <class T>
Tensor<T> loss_patch(const FeatureSequence<T>& pred_o, const FeatureSequence<T>& f_o,
                     const FeatureSequence<T>& pred_i, const FeatureSequence<T>& f_i) {
  return ad::add(sq_l2_seq(pred_o, f_o), sq_l2_seq(pred_i, f_i));
}

/// ||gen_from_I - v||^2 + ||gen_from_O - v||^2.
template <class T>
Tensor<T> loss_current(const Tensor<T>& gen_from_i, const Tensor<T>& gen_from_o, const Tensor<T>& view) {
  return ad::add(ad::sq_l2(gen_from_i, view), ad::sq_l2(gen_from_o, view));
}

/// ||U(C(predicted current view)) - v'||^2 for one predicted current view.
template <class T>
Tensor<T> loss_opposite(const Tensor<T>& gen_current, const HvpParams<T>& p, const Tensor<T>& opposite) {
  return ad::sq_l2(generate_view(abstract_view(gen_current, p), p), opposite);
}

template <class T>
Tensor<T> combine_losses(const Tensor<T>& l_r, const Tensor<T>& l_u, const Tensor<T>& l_u_prime, double alpha,
                         double beta) {
  return ad::add(ad::add(ad::affine(l_r, static_cast<T>(alpha)), l_u), ad::affine(l_u_prime, static_cast<T>(beta)));
}

template <class T>
struct LossBundle {
  Tensor<T> l_r, l_u, l_u_prime, total;
  double alpha = 1.0, beta = 1.0;
  std::vector<Tensor<T>> hiddens;  // encoder state per computed direction

  bool finite() const {
    for (const auto* t : {&l_r, &l_u, &l_u_prime, &total})
      if (!std::isfinite(static_cast<double>(t->item()))) return false;
    return true;
  }
};

// ---------------------------------------------------------------------------
// One view pair

/// Directions of patch prediction. i2o: encode I, predict O (and vice versa).
struct Directions {
  bool i2o = true;
  bool o2i = true;
};

/// Which loss terms are computed.
struct LossMask {
  bool patch = true;     // L_R
  bool current = true;   // L_U
  bool opposite = true;  // L_U'
};

/// Data side of a view pair: Φ features of both patch sets plus both images.
template <class T>
struct PreparedPair {
  FeatureSequence<T> f_o;
  FeatureSequence<T> f_i;
  Tensor<T> current;
  Tensor<T> opposite;
};

template <class T>
PreparedPair<T> prepare_pair(const synth::ViewPair& pair, const HvpParams<T>& p) {
  const auto& cfg = p.config;
  const auto spec = grid::make_gridspec(cfg.view_size, cfg.patch_size);
  const auto sets = grid::o_i_sequences(grid::extract_patches(pair.current, spec, cfg.channels));
  PreparedPair<T> out;
  out.f_o = extract_patch_features<T>(sets.o, p);
  out.f_i = extract_patch_features<T>(sets.i, p);
  out.current = image_tensor<T>(pair.current, cfg.channels, cfg.view_size);
  out.opposite = image_tensor<T>(pair.opposite, cfg.channels, cfg.view_size);
  return out;
}

/// Full objective for one pair from precomputed features.
template <class T>
LossBundle<T> forward_prepared(const Tensor<T>& global, const PreparedPair<T>& pair, const HvpParams<T>& p,
                               Directions dirs = {}, LossMask mask = {}) {
  if (!dirs.i2o && !dirs.o2i) throw ConfigError("at least one prediction direction is required");
  const auto& cfg = p.config;
  const Tensor<T> f_global = cfg.use_global_feature ? global : Tensor<T>{};
  auto zero = [] { return Tensor<T>::scalar(T(0)); };
  Tensor<T> l_r = zero(), l_u = zero(), l_up = zero();

  LossBundle<T> bundle;
  auto run = [&](const FeatureSequence<T>& source, const FeatureSequence<T>& target) {
    const Tensor<T> h = encode(f_global, source, p);
    bundle.hiddens.push_back(h);
    if (mask.patch) l_r = ad::add(l_r, sq_l2_seq(decode_patches(f_global, h, p), target));
    if (mask.current || mask.opposite) {
      const Tensor<T> predicted = generate_view(h, p);
      if (mask.current) l_u = ad::add(l_u, ad::sq_l2(predicted, pair.current));
      if (mask.opposite) l_up = ad::add(l_up, loss_opposite(predicted, p, pair.opposite));
    }
  };
  if (dirs.i2o) run(pair.f_i, pair.f_o);
  if (dirs.o2i) run(pair.f_o, pair.f_i);

  bundle.l_r = l_r;
  bundle.l_u = l_u;
  bundle.l_u_prime = l_up;
  bundle.alpha = cfg.alpha;
  bundle.beta = cfg.beta;
  bundle.total = combine_losses(l_r, l_u, l_up, cfg.alpha, cfg.beta);
  return bundle;
}

template <class T>
LossBundle<T> forward_pair(const Tensor<T>& global, const synth::ViewPair& pair, const HvpParams<T>& p,
                           Directions dirs = {}, LossMask mask = {}) {
  return forward_prepared(global, prepare_pair(pair, p), p, dirs, mask);
}

}  // namespace hvp::model

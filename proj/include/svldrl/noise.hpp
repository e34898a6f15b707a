/// @file noise.hpp
/// @brief Annotation-noise synthesis: morphological (MT) corruption with a
///        cubic structuring element, weak-model self-labeling (SFDA)
///        corruption, and ratio-controlled mixing into a dataset.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "svldrl/rng.hpp"
#include "svldrl/trainer.hpp"
#include "svldrl/volume.hpp"

namespace svl {

enum class NoiseKind { kMt, kSfda };

inline NoiseKind parse_noise_kind(const std::string& s) {
  if (s == "MT" || s == "mt") return NoiseKind::kMt;
  if (s == "SFDA" || s == "sfda") return NoiseKind::kSfda;
  throw ParamError("unknown noise kind '" + s + "'");
}

struct NoiseConfig {
  NoiseKind kind = NoiseKind::kMt;
  float ratio = 0.5f;
  int mt_radius_min = 1;
  int mt_radius_max = 2;
  float p_dilate = 0.5f;  // p_erode = 1 - p_dilate
  float sfda_subset_fraction = 0.25f;
  int sfda_epochs = 20;
  float sfda_lr = 0.003f;  // weak-model SGD step (momentum 0.95, grad cap 1)
  std::uint64_t seed = 0;

  void validate() const {
    if (ratio < 0.0f || ratio > 1.0f) throw ParamError("noise: ratio in [0,1]");
    if (mt_radius_min < 1 || mt_radius_min > mt_radius_max) {
      throw ParamError("noise: bad radius range");
    }
    if (p_dilate < 0.0f || p_dilate > 1.0f) {
      throw ParamError("noise: p_dilate in [0,1]");
    }
    if (sfda_subset_fraction <= 0.0f || sfda_subset_fraction >= 1.0f) {
      throw ParamError("noise: sfda_subset_fraction in (0,1)");
    }
    if (sfda_epochs < 0) throw ParamError("noise: sfda_epochs >= 0");
    if (sfda_lr <= 0.0f) throw ParamError("noise: sfda_lr must be positive");
  }
};

enum class MorphOp { kDilate, kErode };

namespace detail {

/// 1D sliding min/max over a Chebyshev window, in place per line. The cubic
/// structuring element is separable into three axis passes.
template <typename Cmp>
inline void morph_axis(std::vector<std::uint8_t>& grid, Dims dims, int radius,
                       int axis, Cmp pick, std::uint8_t pad) {
  const int d = dims.d, h = dims.h, w = dims.w;
  const int len = axis == 0 ? d : (axis == 1 ? h : w);
  std::vector<std::uint8_t> line(len);
  const int n_outer = axis == 0 ? h * w : (axis == 1 ? d * w : d * h);
  for (int o = 0; o < n_outer; ++o) {
    std::size_t base, stride;
    if (axis == 0) {
      base = o;  // o = y*w + x
      stride = static_cast<std::size_t>(h) * w;
    } else if (axis == 1) {
      const int z = o / w, x = o % w;
      base = static_cast<std::size_t>(z) * h * w + x;
      stride = w;
    } else {
      base = static_cast<std::size_t>(o) * w;  // o = z*h + y
      stride = 1;
    }
    for (int i = 0; i < len; ++i) line[i] = grid[base + i * stride];
    for (int i = 0; i < len; ++i) {
      const int lo = std::max(0, i - radius), hi = std::min(len - 1, i + radius);
      // a clipped window saw out-of-grid voxels, which count as background
      std::uint8_t v = (hi - lo == 2 * radius) ? line[lo] : pad;
      for (int j = lo; j <= hi; ++j) v = pick(v, line[j]);
      grid[base + i * stride] = v;
    }
  }
}

}  // namespace detail

/// Dilation/erosion with a cubic (Chebyshev) structuring element of side
/// 2*radius+1. Voxels outside the grid count as background.
inline LabelMask morph(const LabelMask& mask, MorphOp op, int radius) {
  if (radius < 1) throw ParamError("morph: radius must be >= 1");
  for (auto v : mask.labels) {
    if (v > 1) throw ParamError("morph: mask must be binary");
  }
  LabelMask out = mask;
  std::vector<std::uint8_t> grid = mask.labels;
  if (op == MorphOp::kDilate) {
    auto mx = [](std::uint8_t a, std::uint8_t b) { return std::max(a, b); };
    detail::morph_axis(grid, mask.dims, radius, 0, mx, std::uint8_t{0});
    detail::morph_axis(grid, mask.dims, radius, 1, mx, std::uint8_t{0});
    detail::morph_axis(grid, mask.dims, radius, 2, mx, std::uint8_t{0});
  } else {
    auto mn = [](std::uint8_t a, std::uint8_t b) { return std::min(a, b); };
    detail::morph_axis(grid, mask.dims, radius, 0, mn, std::uint8_t{0});
    detail::morph_axis(grid, mask.dims, radius, 1, mn, std::uint8_t{0});
    detail::morph_axis(grid, mask.dims, radius, 2, mn, std::uint8_t{0});
  }
  out.labels = std::move(grid);
  return out;
}

/// Random dilation or erosion of one label mask; op and radius are drawn
/// from the sample seed, so the corruption is reproducible per sample.
inline LabelMask mt_corrupt(const LabelMask& mask, const NoiseConfig& cfg,
                            std::uint64_t sample_seed) {
  cfg.validate();
  if (cfg.kind != NoiseKind::kMt) throw ParamError("mt_corrupt: kind != MT");
  Rng rng(mix_seed(cfg.seed, sample_seed));
  const MorphOp op =
      rng.uniform() < cfg.p_dilate ? MorphOp::kDilate : MorphOp::kErode;
  const int radius = rng.uniform_int(cfg.mt_radius_min, cfg.mt_radius_max);
  return morph(mask, op, radius);
}

namespace detail {

inline std::vector<std::size_t> shuffled_indices(std::size_t n,
                                                 std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const auto j =
        static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

/// Trains a half-width net with Dice loss on the source samples.
inline SegNet train_weak_model(const Dataset& train,
                               const std::vector<bool>& is_source,
                               const NoiseConfig& cfg,
                               const NetConfig& net_cfg) {
  NetConfig weak_cfg = net_cfg;
  // half-width: weak enough to mislabel, wide enough that no seed leaves it
  // stuck at its init (single-channel nets die on a sizeable share of inits)
  weak_cfg.base_channels = std::max(2, net_cfg.base_channels / 2);
  weak_cfg.seed = mix_seed(cfg.seed, 0x3eaf);
  SegNet weak(weak_cfg);
  // momentum and the unit gradient-norm cap mirror the main trainer; without
  // the cap the early Dice gradients saturate the net on many seeds and it
  // never leaves its all-foreground init
  Sgd sgd(cfg.sfda_lr, 0.95f);
  for (int epoch = 0; epoch < cfg.sfda_epochs; ++epoch) {
    for (std::size_t i = 0; i < train.samples.size(); ++i) {
      if (!is_source[i]) continue;
      Tape tape;
      warmup_loss(weak, train.samples[i], tape, 1.0f);
      double sq = 0.0;
      for (std::size_t idx : weak.seg_group()) {
        const Tensor& t = weak.params()[idx].tensor;
        if (!t.grad()) continue;
        for (std::size_t j = 0; j < t.size(); ++j) {
          sq += static_cast<double>(t.grad()[j]) * t.grad()[j];
        }
      }
      const double norm = std::sqrt(sq);
      if (norm > 1.0) {
        const float scale = 1.0f / static_cast<float>(norm);
        for (std::size_t idx : weak.seg_group()) {
          Tensor& t = weak.params()[idx].tensor;
          if (!t.grad()) continue;
          for (std::size_t j = 0; j < t.size(); ++j) t.grad()[j] *= scale;
        }
      }
      for (std::size_t idx : weak.seg_group()) {
        sgd.step_one(weak.params()[idx]);
      }
      for (auto& p : weak.params()) p.tensor.zero_grad();
    }
  }
  return weak;
}

inline LabelMask predicted_mask(const SegNet& net, const Volume& image) {
  NetOutputs pred = net.infer(image);
  const auto& sh = pred.seg_probs.shape();
  Tensor probs4 = Tensor::from(
      {sh[1], sh[2], sh[3], sh[4]},
      std::vector<float>(pred.seg_probs.data(),
                         pred.seg_probs.data() + pred.seg_probs.size()));
  return threshold_mask(probs4);
}

}  // namespace detail

/// Trains a weak (half-width) copy of the segmentation net with Dice loss
/// on a disjoint source subset, then replaces the remaining samples' labels
/// with its thresholded predictions. Returned dataset flags those samples as
/// corrupted; source-subset labels stay untouched.
inline Dataset sfda_corrupt(const Dataset& train, const NoiseConfig& cfg,
                            const NetConfig& net_cfg) {
  cfg.validate();
  if (cfg.kind != NoiseKind::kSfda) {
    throw ParamError("sfda_corrupt: kind != SFDA");
  }
  const std::size_t n = train.samples.size();
  if (n < 2) throw ParamError("sfda_corrupt: need at least 2 samples");
  const std::size_t n_src = static_cast<std::size_t>(
      std::lround(cfg.sfda_subset_fraction * static_cast<double>(n)));
  if (n_src == 0 || n_src == n) {
    throw ParamError("sfda_corrupt: degenerate source/target split");
  }
  const auto order = detail::shuffled_indices(n, mix_seed(cfg.seed, 0x5fda));
  std::vector<bool> is_source(n, false);
  for (std::size_t i = 0; i < n_src; ++i) is_source[order[i]] = true;

  SegNet weak = detail::train_weak_model(train, is_source, cfg, net_cfg);
  Dataset out = train;
  for (std::size_t i = 0; i < n; ++i) {
    if (is_source[i]) continue;
    out.samples[i].label = detail::predicted_mask(weak, train.samples[i].image);
    out.samples[i].corrupted = true;
  }
  return out;
}

/// Corrupts exactly round(ratio*N) samples chosen uniformly without
/// replacement; everything else (images included) is bit-identical. For
/// SFDA the weak model trains on the configured source fraction and relabels
/// only the chosen samples, all drawn from outside the source subset.
inline Dataset mix_noise(const Dataset& clean, const NoiseConfig& cfg,
                         const NetConfig& net_cfg) {
  cfg.validate();
  const std::size_t n = clean.samples.size();
  std::size_t n_noisy = static_cast<std::size_t>(
      std::lround(static_cast<double>(cfg.ratio) * static_cast<double>(n)));
  if (n_noisy == 0) {
    Dataset out = clean;
    for (auto& s : out.samples) s.corrupted = false;
    return out;
  }

  Dataset out = clean;
  if (cfg.kind == NoiseKind::kMt) {
    const auto order = detail::shuffled_indices(n, mix_seed(cfg.seed, 0x317));
    for (std::size_t i = 0; i < n_noisy; ++i) {
      SegSample& s = out.samples[order[i]];
      s.label = mt_corrupt(s.label, cfg, mix_seed(cfg.seed, order[i] + 77));
      s.corrupted = true;
    }
    return out;
  }

  // SFDA: source subset first, then the corrupted set from its complement.
  std::size_t n_src = static_cast<std::size_t>(
      std::lround(cfg.sfda_subset_fraction * static_cast<double>(n)));
  n_src = std::clamp<std::size_t>(n_src, 1, n - 1);
  if (n_noisy > n - n_src) n_src = n - n_noisy;  // ratio takes precedence
  if (n_src == 0) {
    throw ParamError("mix_noise: SFDA needs at least one source sample");
  }
  const auto order = detail::shuffled_indices(n, mix_seed(cfg.seed, 0x5fda));
  std::vector<bool> is_source(n, false);
  for (std::size_t i = 0; i < n_src; ++i) is_source[order[i]] = true;
  SegNet weak = detail::train_weak_model(clean, is_source, cfg, net_cfg);
  std::size_t flagged = 0;
  for (std::size_t i = n_src; i < n && flagged < n_noisy; ++i) {
    SegSample& s = out.samples[order[i]];
    s.label = detail::predicted_mask(weak, s.image);
    s.corrupted = true;
    ++flagged;
  }
  return out;
}

}  // namespace svl

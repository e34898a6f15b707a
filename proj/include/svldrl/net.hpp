/// @file net.hpp
/// @brief Shared-encoder network with three decoders: segmentation
///        probabilities, per-voxel value map and 3-way action policy.

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "svldrl/tensor.hpp"
#include "svldrl/volume.hpp"

namespace svl {

struct NetConfig {
  int base_channels = 8;
  int depth = 2;
  int num_classes = 2;
  int num_actions = 3;  // fixed action alphabet {keep, enhance, weaken}
  bool scalar_value = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (base_channels < 1) throw ParamError("net: base_channels must be >= 1");
    if (depth < 1) throw ParamError("net: depth must be >= 1");
    if (num_classes < 2) throw ParamError("net: num_classes must be >= 2");
    if (num_actions != 3) throw ParamError("net: num_actions is fixed at 3");
  }
};

struct NetOutputs {
  Tensor seg_probs;   // [1,C,D,H,W], channel-softmaxed
  Tensor value_map;   // [1,1,D,H,W]
  Tensor policy_map;  // [1,3,D,H,W], channel-softmaxed
};

/// Disjoint parameter groups for stage gating. The encoder belongs to the
/// segmentation group: warmup trains encoder + seg head.
struct ParamGroups {
  std::vector<std::size_t> encoder;
  std::vector<std::size_t> seg_decoder;
  std::vector<std::size_t> value_decoder;
  std::vector<std::size_t> policy_decoder;
};

class SegNet {
 public:
  explicit SegNet(const NetConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    Rng rng(mix_seed(cfg.seed, 0x5e47));
    build_encoder(rng);
    build_decoder("seg", cfg.num_classes, rng, groups_.seg_decoder);
    build_decoder("value", 1, rng, groups_.value_decoder);
    build_decoder("policy", cfg.num_actions, rng, groups_.policy_decoder);
  }

  const NetConfig& config() const { return cfg_; }
  std::vector<NamedParam>& params() { return params_; }
  const std::vector<NamedParam>& params() const { return params_; }
  const ParamGroups& groups() const { return groups_; }

  /// theta_s = encoder + seg decoder (the warmup-trainable set).
  std::vector<std::size_t> seg_group() const {
    std::vector<std::size_t> out = groups_.encoder;
    out.insert(out.end(), groups_.seg_decoder.begin(),
               groups_.seg_decoder.end());
    return out;
  }

  NetOutputs forward(Tape* tape, const Tensor& x) const {
    const auto& sh = x.shape();
    if (sh.size() != 5 || sh[0] != 1 || sh[1] != 1) {
      throw ShapeError("net: input must be [1,1,D,H,W]");
    }
    const int div = 1 << cfg_.depth;
    if (sh[2] % div || sh[3] % div || sh[4] % div) {
      throw ShapeError("net: spatial dims must be divisible by 2^depth");
    }
    Tensor h = x;
    int pi = 0;
    for (int i = 0; i < cfg_.depth; ++i) {
      h = relu(tape, conv3d(tape, h, params_[pi].tensor, params_[pi + 1].tensor,
                            1, 1));
      h = conv3d(tape, h, params_[pi + 2].tensor, params_[pi + 3].tensor, 2, 1);
      pi += 4;
    }
    NetOutputs out;
    out.seg_probs = softmax_channel(tape, run_decoder(tape, h, pi));
    pi += 2 * cfg_.depth + 2;
    Tensor v = run_decoder(tape, h, pi);
    pi += 2 * cfg_.depth + 2;
    if (cfg_.scalar_value) {
      v = broadcast_scalar(tape, mean(tape, v), v.shape());
    }
    out.value_map = v;
    out.policy_map = softmax_channel(tape, run_decoder(tape, h, pi));
    return out;
  }

  /// Forward on a Volume without gradient tracking.
  NetOutputs infer(const Volume& vol) const {
    Tensor x = Tensor::from({1, 1, vol.dims.d, vol.dims.h, vol.dims.w},
                            vol.voxels);
    return forward(nullptr, x);
  }

  // -- checkpoint format: "SVCK" | version u16 | base u16 | depth u16 |
  //    classes u16 | actions u16 | scalar_value u8 | seed u64 | blobs f32 le

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("checkpoint: cannot write " + path);
    os.write("SVCK", 4);
    detail::write_u16(os, 1);
    detail::write_u16(os, static_cast<std::uint16_t>(cfg_.base_channels));
    detail::write_u16(os, static_cast<std::uint16_t>(cfg_.depth));
    detail::write_u16(os, static_cast<std::uint16_t>(cfg_.num_classes));
    detail::write_u16(os, static_cast<std::uint16_t>(cfg_.num_actions));
    os.put(cfg_.scalar_value ? 1 : 0);
    for (int i = 0; i < 8; ++i) {
      os.put(static_cast<char>((cfg_.seed >> (8 * i)) & 0xff));
    }
    for (const auto& p : params_) {
      for (std::size_t i = 0; i < p.tensor.size(); ++i) {
        detail::write_f32(os, p.tensor.data()[i]);
      }
    }
    if (!os) throw IoError("checkpoint: write failed: " + path);
  }

  static SegNet load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "SVCK", 4) != 0) {
      throw IoError("checkpoint: bad magic in " + path);
    }
    if (detail::read_u16(is) != 1) {
      throw IoError("checkpoint: unsupported version");
    }
    NetConfig cfg;
    cfg.base_channels = detail::read_u16(is);
    cfg.depth = detail::read_u16(is);
    cfg.num_classes = detail::read_u16(is);
    cfg.num_actions = detail::read_u16(is);
    cfg.scalar_value = is.get() != 0;
    std::uint64_t seed = 0;
    for (int i = 0; i < 8; ++i) {
      seed |= static_cast<std::uint64_t>(
                  static_cast<unsigned char>(is.get()))
              << (8 * i);
    }
    cfg.seed = seed;
    SegNet net(cfg);
    for (auto& p : net.params_) {
      for (std::size_t i = 0; i < p.tensor.size(); ++i) {
        const std::uint32_t bits = detail::read_u32(is);
        float f;
        std::memcpy(&f, &bits, 4);
        p.tensor.data()[i] = f;
      }
    }
    if (!is) throw IoError("checkpoint: truncated parameter payload");
    return net;
  }

  std::size_t total_param_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.size();
    return n;
  }

 private:
  int enc_width(int level) const { return cfg_.base_channels << level; }

  std::size_t add_conv(const std::string& name, int co, int ci, int k,
                       Rng& rng) {
    Tensor w({co, ci, k, k, k}, true);
    init_he_uniform(w, ci * k * k * k, rng);
    Tensor b({co}, true);
    params_.push_back({name + ".w", std::move(w)});
    params_.push_back({name + ".b", std::move(b)});
    return params_.size() - 2;
  }

  void build_encoder(Rng& rng) {
    int cin = 1;
    for (int i = 0; i < cfg_.depth; ++i) {
      const std::string prefix = "enc" + std::to_string(i);
      std::size_t a = add_conv(prefix + ".a", enc_width(i), cin, 3, rng);
      std::size_t s =
          add_conv(prefix + ".s", enc_width(i + 1), enc_width(i), 3, rng);
      groups_.encoder.insert(groups_.encoder.end(), {a, a + 1, s, s + 1});
      cin = enc_width(i + 1);
    }
  }

  // decoder: depth x (upsample2x -> conv k3 p1 -> relu), then a 1x1x1 head;
  // narrow (base_channels wide) to keep the full-resolution convs cheap
  void build_decoder(const std::string& name, int out_ch, Rng& rng,
                     std::vector<std::size_t>& group) {
    int cin = enc_width(cfg_.depth);
    for (int i = 0; i < cfg_.depth; ++i) {
      std::size_t idx = add_conv(name + ".up" + std::to_string(i),
                                 cfg_.base_channels, cin, 3, rng);
      group.insert(group.end(), {idx, idx + 1});
      cin = cfg_.base_channels;
    }
    std::size_t head = add_conv(name + ".head", out_ch, cin, 1, rng);
    group.insert(group.end(), {head, head + 1});
  }

  Tensor run_decoder(Tape* tape, const Tensor& bottleneck,
                     int first_param) const {
    Tensor h = bottleneck;
    int pi = first_param;
    for (int i = 0; i < cfg_.depth; ++i) {
      h = upsample_nearest2x(tape, h);
      h = relu(tape, conv3d(tape, h, params_[pi].tensor, params_[pi + 1].tensor,
                            1, 1));
      pi += 2;
    }
    return conv3d(tape, h, params_[pi].tensor, params_[pi + 1].tensor, 1, 0);
  }

  NetConfig cfg_;
  std::vector<NamedParam> params_;
  ParamGroups groups_;
};

/// Snapshot of a parameter set, for freeze assertions and restore.
inline std::vector<std::vector<float>> snapshot_params(
    const SegNet& net, const std::vector<std::size_t>& idx) {
  std::vector<std::vector<float>> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) {
    const Tensor& t = net.params()[i].tensor;
    out.emplace_back(t.data(), t.data() + t.size());
  }
  return out;
}

inline float max_abs_delta(const SegNet& net,
                           const std::vector<std::size_t>& idx,
                           const std::vector<std::vector<float>>& snap) {
  float worst = 0.0f;
  for (std::size_t j = 0; j < idx.size(); ++j) {
    const Tensor& t = net.params()[idx[j]].tensor;
    for (std::size_t i = 0; i < t.size(); ++i) {
      worst = std::max(worst, std::abs(t.data()[i] - snap[j][i]));
    }
  }
  return worst;
}

}  // namespace svl

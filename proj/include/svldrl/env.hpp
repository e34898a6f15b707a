/// @file env.hpp
/// @brief Voxel-level MDP: per-voxel intensity actions, composite reward
///        (Dice improvement minus the anatomical penalty), rollouts and
///        discounted returns.

#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <vector>

#include "svldrl/metrics.hpp"
#include "svldrl/net.hpp"
#include "svldrl/rng.hpp"
#include "svldrl/volume.hpp"

namespace svl {

constexpr float kActionScale = 0.3f;  // intensity actions scale by 1 +- 0.3*eps

/// Action alphabet: 0 keep, 1 enhance, 2 weaken.
struct ActionGrid {
  Dims dims;
  std::vector<std::uint8_t> actions;
  std::vector<float> epsilons;
};

struct EnvState {
  Volume x;             // current input X^(t)
  Volume x0;            // original image
  LabelMask gt;         // (possibly noisy) training labels
  int step = 0;
  std::vector<float> prev_seg;  // foreground probabilities f^(t-1); empty at t=0
};

struct EnvTransition {
  std::vector<float> seg_probs;  // f^(t) foreground snapshot (detached)
  ActionGrid action;
  float reward = 0.0f;
  Volume next_x;
  Tensor log_policy;  // [1,1,D,H,W] log pi(a|s), tape-connected when training
  Tensor value_pred;  // [1,1,D,H,W] V(s^(t)), tape-connected when training
};

struct RolloutBuffer {
  std::vector<EnvTransition> transitions;
  float gamma = 0.9f;
  std::vector<float> bootstrap;  // detached V(s^(K)) per voxel
};

/// Per-voxel sampling from the policy. tau=1 samples pi as-is, tau=0 is
/// greedy argmax with ties to the lowest action, other tau temper the
/// distribution as softmax(log pi / tau).
inline ActionGrid sample_actions(const Tensor& policy_map, float tau,
                                 std::uint64_t seed) {
  const auto& sh = policy_map.shape();
  if (sh.size() != 5 || sh[0] != 1) {
    throw ShapeError("sample_actions: policy must be [1,A,D,H,W]");
  }
  if (tau < 0.0f) throw ParamError("sample_actions: tau must be >= 0");
  const int na = sh[1];
  const Dims dims{sh[2], sh[3], sh[4]};
  const std::size_t vox = dims.count();
  ActionGrid out;
  out.dims = dims;
  out.actions.resize(vox);
  out.epsilons.resize(vox);
  Rng rng(mix_seed(seed, 0xac7));
  const float* p = policy_map.data();
  std::vector<float> probs(na);
  for (std::size_t v = 0; v < vox; ++v) {
    out.epsilons[v] = rng.uniform();
    if (tau == 0.0f) {
      int best = 0;
      float bv = p[v];
      for (int a = 1; a < na; ++a) {
        if (p[a * vox + v] > bv) {
          bv = p[a * vox + v];
          best = a;
        }
      }
      out.actions[v] = static_cast<std::uint8_t>(best);
      continue;
    }
    if (tau == 1.0f) {
      for (int a = 0; a < na; ++a) probs[a] = p[a * vox + v];
    } else {
      float mx = -1e30f, norm = 0.0f;
      for (int a = 0; a < na; ++a) {
        probs[a] = std::log(std::max(p[a * vox + v], 1e-12f)) / tau;
        mx = std::max(mx, probs[a]);
      }
      for (int a = 0; a < na; ++a) {
        probs[a] = std::exp(probs[a] - mx);
        norm += probs[a];
      }
      for (int a = 0; a < na; ++a) probs[a] /= norm;
    }
    const float u = rng.uniform();
    float acc = 0.0f;
    int chosen = na - 1;
    for (int a = 0; a < na; ++a) {
      acc += probs[a];
      if (u < acc) {
        chosen = a;
        break;
      }
    }
    out.actions[v] = static_cast<std::uint8_t>(chosen);
  }
  return out;
}

/// Applies the per-voxel intensity actions to the current state.
inline Volume apply_actions(const EnvState& state, const ActionGrid& a) {
  if (!(state.x.dims == a.dims)) throw ShapeError("apply_actions: dims");
  Volume out = state.x;
  for (std::size_t i = 0; i < out.voxels.size(); ++i) {
    const float eps = a.epsilons[i];
    switch (a.actions[i]) {
      case 0:
        break;
      case 1:
        out.voxels[i] =
            std::clamp(out.voxels[i] * (1.0f + kActionScale * eps), 0.f, 1.f);
        break;
      case 2:
        out.voxels[i] =
            std::clamp(out.voxels[i] * (1.0f - kActionScale * eps), 0.f, 1.f);
        break;
      default:
        throw ParamError("apply_actions: action outside {0,1,2}");
    }
  }
  return out;
}

/// r = [Dice(f_t,G) - Dice(f_prev,G)] - C(f_t). The constraint enters as a
/// penalty; the scalar reward is shared by every voxel agent, so the mean
/// per-voxel reward equals r.
inline float compute_reward(const std::vector<float>& f_t,
                            const std::vector<float>& f_prev,
                            const LabelMask& gt, double w_cc, double w_tv) {
  const auto gtf = mask_to_float(gt);
  const double d_now = dice(f_t, gtf, gt.dims);
  const double d_prev = dice(f_prev, gtf, gt.dims);
  const double penalty = anatomical_constraint(f_t, gt.dims, w_cc, w_tv);
  return static_cast<float>(d_now - d_prev - penalty);
}

/// Extracts the foreground probability channel as a detached grid.
inline std::vector<float> foreground_probs(const Tensor& seg_probs) {
  const auto& sh = seg_probs.shape();
  const std::size_t vox = static_cast<std::size_t>(sh[2]) * sh[3] * sh[4];
  // channel 1 = foreground for the binary default; multi-class uses the
  // complement of background
  const std::size_t classes = static_cast<std::size_t>(sh[1]);
  std::vector<float> out(vox);
  if (classes == 2) {
    std::copy(seg_probs.data() + vox, seg_probs.data() + 2 * vox, out.begin());
  } else {
    for (std::size_t v = 0; v < vox; ++v) {
      out[v] = 1.0f - seg_probs.data()[v];
    }
  }
  return out;
}

struct RolloutOptions {
  int steps = 3;
  float tau = 1.0f;
  float gamma = 0.9f;
  double w_cc = 0.01;
  double w_tv = 0.001;
  std::uint64_t seed = 0;
  bool shared_epsilon = false;    // one scalar eps per step instead of per voxel
  bool uniform_actions = false;   // explore uniformly instead of querying pi
  Tape* tape = nullptr;         // when set, log pi and V stay differentiable
  NetOutputs* initial = nullptr;  // optional reuse of forward(x0)
};

/// K environment steps from state0. Each step: forward, sample actions,
/// apply, reward from the new segmentation vs the previous one. The
/// bootstrap is the (detached) value map of the final state.
inline RolloutBuffer rollout(const SegNet& net, const EnvState& state0,
                             const RolloutOptions& opt) {
  if (opt.steps < 1) throw ParamError("rollout: need K >= 1");
  RolloutBuffer buf;
  buf.gamma = opt.gamma;

  Volume x = state0.x;
  auto to_tensor = [](const Volume& v) {
    return Tensor::from({1, 1, v.dims.d, v.dims.h, v.dims.w}, v.voxels);
  };

  NetOutputs cur = opt.initial ? *opt.initial
                               : net.forward(opt.tape, to_tensor(x));
  std::vector<float> f_prev = state0.prev_seg.empty()
                                  ? foreground_probs(cur.seg_probs)
                                  : state0.prev_seg;

  for (int k = 0; k < opt.steps; ++k) {
    EnvTransition tr;
    tr.action = sample_actions(cur.policy_map, opt.tau,
                               mix_seed(opt.seed, 1000 + k));
    if (opt.uniform_actions) {
      Rng rng(mix_seed(opt.seed, 3000 + k));
      for (auto& a : tr.action.actions) {
        a = static_cast<std::uint8_t>(rng.uniform_int(0, 2));
      }
    }
    if (opt.shared_epsilon) {
      Rng rng(mix_seed(opt.seed, 2000 + k));
      const float eps = rng.uniform();
      std::fill(tr.action.epsilons.begin(), tr.action.epsilons.end(), eps);
    }
    tr.log_policy = log_select_channel(opt.tape, cur.policy_map,
                                       tr.action.actions);
    tr.value_pred = cur.value_map;

    EnvState st;
    st.x = x;
    tr.next_x = apply_actions(st, tr.action);
    x = tr.next_x;

    NetOutputs nxt = net.forward(opt.tape, to_tensor(x));
    tr.seg_probs = foreground_probs(nxt.seg_probs);
    tr.reward = compute_reward(tr.seg_probs, f_prev, state0.gt, opt.w_cc,
                               opt.w_tv);
    f_prev = tr.seg_probs;
    cur = std::move(nxt);
    buf.transitions.push_back(std::move(tr));
  }
  // Per-step rewards are Dice differences minus a penalty, so any true
  // discounted return satisfies |R| <= r_max / (1 - gamma) with r_max ~ 1.
  // Clamping the bootstrap to that bound keeps the value targets from
  // chasing a diverging value head (bounded targets break the R = r + g*V
  // feedback loop); it is exactly the target clipping used by deep value
  // learners.
  const float vcap = 1.0f / (1.0f - opt.gamma);
  buf.bootstrap.resize(cur.value_map.size());
  for (std::size_t v = 0; v < buf.bootstrap.size(); ++v) {
    buf.bootstrap[v] = std::clamp(cur.value_map.data()[v], -vcap, vcap);
  }
  return buf;
}

/// Backward recursion R_t = r_t + gamma * R_{t+1}, seeded by the per-voxel
/// bootstrap; scalar rewards broadcast over voxels.
inline std::vector<std::vector<float>> discounted_returns(
    const RolloutBuffer& buf) {
  if (buf.transitions.empty()) {
    throw ParamError("discounted_returns: empty buffer");
  }
  const std::size_t vox = buf.bootstrap.size();
  std::vector<std::vector<float>> returns(buf.transitions.size());
  std::vector<float> next = buf.bootstrap;
  for (std::size_t t = buf.transitions.size(); t-- > 0;) {
    returns[t].resize(vox);
    const float r = buf.transitions[t].reward;
    for (std::size_t v = 0; v < vox; ++v) {
      returns[t][v] = r + buf.gamma * next[v];
    }
    next = returns[t];
  }
  return returns;
}

/// JSON-lines trajectory dump: one record per transition.
inline void dump_trajectory(const RolloutBuffer& buf, const LabelMask& gt,
                            const std::string& path) {
  std::ofstream os(path, std::ios::app);
  if (!os) throw IoError("trajectory: cannot write " + path);
  const auto gtf = mask_to_float(gt);
  for (std::size_t t = 0; t < buf.transitions.size(); ++t) {
    const auto& tr = buf.transitions[t];
    std::size_t hist[3] = {0, 0, 0};
    for (auto a : tr.action.actions) ++hist[a];
    os << "{\"step\":" << t << ",\"reward\":" << tr.reward
       << ",\"actions\":[" << hist[0] << "," << hist[1] << "," << hist[2]
       << "],\"dice\":" << dice(tr.seg_probs, gtf, gt.dims) << "}\n";
  }
}

}  // namespace svl

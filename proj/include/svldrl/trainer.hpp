/// @file trainer.hpp
/// @brief Three-stage training loop: warmup (Dice only), transition
///        (Dice + value) and full RL (Dice + value + policy), with
///        stage-gated parameter updates and ablation dispatch.

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "svldrl/env.hpp"
#include "svldrl/metrics.hpp"
#include "svldrl/net.hpp"
#include "svldrl/tensor.hpp"
#include "svldrl/volume.hpp"

namespace svl {

enum class Stage { kWarmup, kTransition, kFullRl };

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::kWarmup: return "warmup";
    case Stage::kTransition: return "transition";
    default: return "fullrl";
  }
}

enum class Ablation { kFull, kNoWS, kNoTS, kNoWAT, kNoFRL, kBaseline };

inline Ablation parse_ablation(const std::string& s) {
  if (s == "full") return Ablation::kFull;
  if (s == "no_WS") return Ablation::kNoWS;
  if (s == "no_TS") return Ablation::kNoTS;
  if (s == "no_WAT") return Ablation::kNoWAT;
  if (s == "no_FRL") return Ablation::kNoFRL;
  if (s == "baseline") return Ablation::kBaseline;
  throw ParamError("unknown ablation '" + s + "'");
}

struct StageSchedule {
  int t_warmup = 80;
  int t_transition = 120;
  int total_epochs = 200;
  float lambda = 0.3f;
  float alpha = 0.2f;
  float beta = 0.2f;
  float gamma = 0.9f;
  int rollout_steps = 3;
  float tau = 1.0f;
  float lr = 1e-4f;
  float momentum = 0.0f;
  float grad_clip = 0.0f;  // global L2-norm cap per update; 0 disables
  float rl_lr_scale = 1.0f;  // lr multiplier for the transition/full-RL stages
  int batch_size = 1;
  double w_cc = 0.01;
  double w_tv = 0.001;
  bool shared_epsilon = false;
  bool uniform_exploration = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(0 < t_warmup && t_warmup < t_transition &&
          t_transition <= total_epochs)) {
      throw ParamError("schedule: need 0 < t_warmup < t_transition <= T");
    }
    if (!(lambda > 0.0f && lambda < 1.0f)) {
      throw ParamError("schedule: lambda must be in (0,1)");
    }
    if (!(alpha > 0.0f && alpha < 1.0f && beta > 0.0f && beta < 1.0f &&
          alpha + beta < 1.0f)) {
      throw ParamError("schedule: need alpha, beta in (0,1), alpha+beta < 1");
    }
    // full-RL weights must form a convex combination
    const float wsum = (1.0f - alpha - beta) + alpha + beta;
    if (std::abs(wsum - 1.0f) > 1e-6f) {
      throw ParamError("schedule: stage weights do not sum to 1");
    }
    if (rollout_steps < 1) throw ParamError("schedule: K must be >= 1");
    if (tau < 0.0f) throw ParamError("schedule: tau must be >= 0");
    if (lr <= 0.0f) throw ParamError("schedule: lr must be positive");
    if (batch_size < 1) throw ParamError("schedule: batch size must be >= 1");
    if (grad_clip < 0.0f) throw ParamError("schedule: grad_clip must be >= 0");
    if (rl_lr_scale <= 0.0f) {
      throw ParamError("schedule: rl_lr_scale must be positive");
    }
    if (gamma < 0.0f || gamma >= 1.0f) {
      throw ParamError("schedule: gamma must be in [0,1)");
    }
  }
};

/// Warmup iff epoch < t_warmup; Transition iff t_warmup <= epoch <
/// t_transition; FullRL otherwise. The boundary epochs (which the staged
/// algorithm leaves open) land in the later stage.
inline Stage stage_of(int epoch, const StageSchedule& sched) {
  if (epoch < sched.t_warmup) return Stage::kWarmup;
  if (epoch < sched.t_transition) return Stage::kTransition;
  return Stage::kFullRl;
}

inline Stage effective_stage(int epoch, const StageSchedule& sched,
                             Ablation ab) {
  const Stage s = stage_of(epoch, sched);
  switch (ab) {
    case Ablation::kFull: return s;
    case Ablation::kNoWS: return s == Stage::kWarmup ? Stage::kTransition : s;
    case Ablation::kNoTS: return s == Stage::kTransition ? Stage::kFullRl : s;
    case Ablation::kNoWAT: return Stage::kFullRl;
    case Ablation::kNoFRL: return s == Stage::kFullRl ? Stage::kTransition : s;
    case Ablation::kBaseline: return Stage::kWarmup;
  }
  return s;
}

struct TrainAbort : std::runtime_error {
  int epoch;
  explicit TrainAbort(int ep)
      : std::runtime_error("non-finite loss at epoch " + std::to_string(ep)),
        epoch(ep) {}
};

// ---------------------------------------------------------------------------
// Loss pieces
// ---------------------------------------------------------------------------

/// 1 - Dice(P, G) on the foreground channel, differentiable.
inline Tensor dice_loss(Tape* tape, const Tensor& seg_probs,
                        const LabelMask& gt) {
  const auto& sh = seg_probs.shape();
  if (sh.size() != 5 || sh[2] != gt.dims.d || sh[3] != gt.dims.h ||
      sh[4] != gt.dims.w) {
    throw ShapeError("dice_loss: prediction/label dim mismatch");
  }
  Tensor p = slice_channel(tape, seg_probs, sh[1] >= 2 ? 1 : 0);
  Tensor g({1, 1, gt.dims.d, gt.dims.h, gt.dims.w});
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    g.data()[i] = gt.labels[i] ? 1.0f : 0.0f;
  }
  Tensor inter = sum(tape, mul(tape, p, g));
  Tensor denom = add(tape, sum(tape, p), sum(tape, g));
  Tensor d = div(tape, affine(tape, inter, 2.0f, kDiceSmooth),
                 affine(tape, denom, 1.0f, kDiceSmooth));
  return affine(tape, d, -1.0f, 1.0f);
}

/// Mean squared error between a (constant) return grid and the value map.
inline Tensor value_loss(Tape* tape, const Tensor& value_map,
                         const std::vector<float>& returns) {
  if (value_map.size() != returns.size()) {
    throw ShapeError("value_loss: return/value dim mismatch");
  }
  Tensor r = Tensor::from(value_map.shape(),
                          std::vector<float>(returns.begin(), returns.end()));
  Tensor diff = sub(tape, r, value_map);
  return mean(tape, mul(tape, diff, diff));
}

/// A = R - V with V detached.
inline std::vector<float> advantage(const std::vector<float>& returns,
                                    const Tensor& value_map) {
  if (value_map.size() != returns.size()) {
    throw ShapeError("advantage: return/value dim mismatch");
  }
  std::vector<float> a(returns.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = returns[i] - value_map.data()[i];
  }
  return a;
}

/// Mean over voxels of -log pi(a|s) * A with A detached.
inline Tensor policy_loss(Tape* tape, const Tensor& log_pi_taken,
                          const std::vector<float>& adv) {
  if (log_pi_taken.size() != adv.size()) {
    throw ShapeError("policy_loss: advantage dim mismatch");
  }
  for (std::size_t i = 0; i < log_pi_taken.size(); ++i) {
    if (!std::isfinite(log_pi_taken.data()[i])) {
      throw GradError("policy_loss: non-finite log-probability (collapsed policy)");
    }
  }
  Tensor a = Tensor::from(log_pi_taken.shape(),
                          std::vector<float>(adv.begin(), adv.end()));
  return affine(tape, mean(tape, mul(tape, log_pi_taken, a)), -1.0f, 0.0f);
}

// ---------------------------------------------------------------------------
// Steps
// ---------------------------------------------------------------------------

struct StepStats {
  float loss_dice = 0.0f;
  float loss_value = 0.0f;
  float loss_policy = 0.0f;
  float mean_reward = 0.0f;
  int reward_terms = 0;
};

namespace detail {

inline Tensor input_tensor(const Volume& v) {
  return Tensor::from({1, 1, v.dims.d, v.dims.h, v.dims.w}, v.voxels);
}

/// Exact replay of the return recursion; any drift is a bug.
inline void assert_return_recursion(const RolloutBuffer& buf,
                                    const std::vector<std::vector<float>>& r) {
  const std::size_t vox = buf.bootstrap.size();
  for (std::size_t t = 0; t < buf.transitions.size(); ++t) {
    const std::vector<float>& next =
        t + 1 < r.size() ? r[t + 1] : buf.bootstrap;
    for (std::size_t v = 0; v < vox; ++v) {
      const float expect = buf.transitions[t].reward + buf.gamma * next[v];
      if (r[t][v] != expect) {
        throw GradError("return recursion violated at step " +
                        std::to_string(t));
      }
    }
  }
}

}  // namespace detail

/// Dice loss on the unmodified input; accumulates gradients (caller steps).
inline StepStats warmup_loss(SegNet& net, const SegSample& sample, Tape& tape,
                             float inv_batch) {
  Tensor x = detail::input_tensor(sample.image);
  NetOutputs out = net.forward(&tape, x);
  Tensor loss = affine(&tape, dice_loss(&tape, out.seg_probs, sample.label),
                       inv_batch, 0.0f);
  StepStats st;
  st.loss_dice = loss.item() / inv_batch;
  tape.backward(loss);
  return st;
}

struct RlLossWeights {
  float dice = 1.0f;
  float value = 0.0f;
  float policy = 0.0f;
};

/// Shared body of the transition and full-RL steps: rollout, returns, and
/// the weighted composite loss. The Dice term attaches to the forward pass
/// of the original input, so with value/policy weights at zero the gradients
/// coincide with the warmup step.
inline StepStats rl_loss(SegNet& net, const SegSample& sample,
                         const StageSchedule& sched, RlLossWeights w,
                         std::uint64_t rollout_seed, Tape& tape,
                         float inv_batch, RolloutBuffer* traj_out = nullptr) {
  Tensor x = detail::input_tensor(sample.image);
  NetOutputs first = net.forward(&tape, x);

  EnvState state0;
  state0.x = sample.image;
  state0.x0 = sample.image;
  state0.gt = sample.label;

  RolloutOptions opt;
  opt.steps = sched.rollout_steps;
  opt.tau = sched.tau;
  opt.gamma = sched.gamma;
  opt.w_cc = sched.w_cc;
  opt.w_tv = sched.w_tv;
  opt.seed = rollout_seed;
  opt.shared_epsilon = sched.shared_epsilon;
  opt.uniform_actions = sched.uniform_exploration;
  opt.tape = &tape;
  opt.initial = &first;
  RolloutBuffer buf = rollout(net, state0, opt);
  const auto returns = discounted_returns(buf);
  detail::assert_return_recursion(buf, returns);

  Tensor loss_d = dice_loss(&tape, first.seg_probs, sample.label);
  StepStats st;
  st.loss_dice = loss_d.item();
  Tensor total = affine(&tape, loss_d, w.dice, 0.0f);

  if (w.value > 0.0f) {
    Tensor lv = value_loss(&tape, buf.transitions[0].value_pred, returns[0]);
    for (std::size_t t = 1; t < buf.transitions.size(); ++t) {
      lv = add(&tape, lv,
               value_loss(&tape, buf.transitions[t].value_pred, returns[t]));
    }
    lv = affine(&tape, lv, 1.0f / static_cast<float>(buf.transitions.size()),
                0.0f);
    st.loss_value = lv.item();
    total = add(&tape, total, affine(&tape, lv, w.value, 0.0f));
  }
  if (w.policy > 0.0f) {
    Tensor lp;
    for (std::size_t t = 0; t < buf.transitions.size(); ++t) {
      const auto adv = advantage(returns[t], buf.transitions[t].value_pred);
      Tensor term = policy_loss(&tape, buf.transitions[t].log_policy, adv);
      lp = t == 0 ? term : add(&tape, lp, term);
    }
    lp = affine(&tape, lp, 1.0f / static_cast<float>(buf.transitions.size()),
                0.0f);
    st.loss_policy = lp.item();
    total = add(&tape, total, affine(&tape, lp, w.policy, 0.0f));
  }

  for (const auto& tr : buf.transitions) {
    st.mean_reward += tr.reward;
    ++st.reward_terms;
  }

  total = affine(&tape, total, inv_batch, 0.0f);
  tape.backward(total);
  if (traj_out) *traj_out = std::move(buf);
  return st;
}

// ---------------------------------------------------------------------------
// Train loop
// ---------------------------------------------------------------------------

struct TrainLogRow {
  int epoch = 0;
  std::string stage;
  float loss_dice = 0.0f, loss_value = 0.0f, loss_policy = 0.0f;
  float mean_reward = 0.0f;
  double val_dice = 0.0, val_iou = 0.0, val_hd95 = 0.0, val_asd = 0.0;
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
};

/// The wall-time column is informational; disable it (include_walltime =
/// false, writes 0) when byte-identical logs across reruns are required.
inline void write_train_log_csv(const TrainLog& log, const std::string& path,
                                bool include_walltime = true) {
  std::ofstream os(path);
  if (!os) throw IoError("trainlog: cannot write " + path);
  os << "epoch,stage,loss_dice,loss_value,loss_policy,mean_reward,"
        "val_dice,val_iou,val_hd95,val_asd,seconds\n";
  for (const auto& r : log.rows) {
    os << r.epoch << "," << r.stage << "," << format_sig6(r.loss_dice) << ","
       << format_sig6(r.loss_value) << "," << format_sig6(r.loss_policy) << ","
       << format_sig6(r.mean_reward) << "," << format_sig6(r.val_dice) << ","
       << format_sig6(r.val_iou) << "," << format_sig6(r.val_hd95) << ","
       << format_sig6(r.val_asd) << ","
       << format_sig6(include_walltime ? r.seconds : 0.0) << "\n";
  }
}

/// Validation against clean labels: full-volume inference + argmax.
inline MetricsReport evaluate(const SegNet& net, const Dataset& data) {
  MetricsReport report;
  for (const auto& s : data.samples) {
    NetOutputs out = net.infer(s.image);
    const auto& sh = out.seg_probs.shape();
    Tensor probs4 = Tensor::from({sh[1], sh[2], sh[3], sh[4]},
                                 std::vector<float>(out.seg_probs.data(),
                                                    out.seg_probs.data() +
                                                        out.seg_probs.size()));
    LabelMask pred = threshold_mask(probs4);
    MetricsRow row;
    row.sample_id = s.sample_id;
    row.dice = dice(pred, s.label);
    row.iou = iou(pred, s.label);
    row.hd95 = hd95(pred, s.label);
    row.asd = asd(pred, s.label);
    report.per_sample.push_back(std::move(row));
  }
  report.finalize();
  return report;
}

struct TrainOptions {
  Ablation ablation = Ablation::kFull;
  std::string trajectory_path;      // when set, dumps sample-0 rollouts
  int checkpoint_every = 0;         // 0 = no periodic checkpoints
  std::string checkpoint_prefix;    // "<prefix>_epNNN.svck"
};

/// Runs T epochs of the staged algorithm. Deterministic for a fixed
/// schedule seed; throws TrainAbort on a non-finite loss.
inline TrainLog train(SegNet& net, const Dataset& train_set,
                      const Dataset& val_set, const StageSchedule& sched,
                      const TrainOptions& opt = {}) {
  sched.validate();
  if (train_set.samples.empty() || val_set.samples.empty()) {
    throw ParamError("train: datasets must be nonempty");
  }
  Sgd sgd(sched.lr, sched.momentum);
  TrainLog log;

  for (int epoch = 0; epoch < sched.total_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const Stage stage = effective_stage(epoch, sched, opt.ablation);
    // the RL objectives (value MSE especially) need a gentler step size than
    // the warmup Dice fit; scale the lr whenever they are active
    sgd.set_lr(stage == Stage::kWarmup ? sched.lr
                                       : sched.lr * sched.rl_lr_scale);
    StepStats epoch_stats;
    int steps = 0;

    std::vector<std::size_t> active;
    switch (stage) {
      case Stage::kWarmup:
        active = net.seg_group();
        break;
      case Stage::kTransition: {
        active = net.seg_group();
        const auto& v = net.groups().value_decoder;
        active.insert(active.end(), v.begin(), v.end());
        break;
      }
      case Stage::kFullRl: {
        active = net.seg_group();
        const auto& v = net.groups().value_decoder;
        const auto& p = net.groups().policy_decoder;
        active.insert(active.end(), v.begin(), v.end());
        active.insert(active.end(), p.begin(), p.end());
        break;
      }
    }

    const std::size_t n = train_set.samples.size();
    for (std::size_t start = 0; start < n; start += sched.batch_size) {
      const std::size_t end =
          std::min(n, start + static_cast<std::size_t>(sched.batch_size));
      const float inv_batch = 1.0f / static_cast<float>(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const SegSample& sample = train_set.samples[i];
        Tape tape;
        StepStats st;
        const std::uint64_t rollout_seed =
            mix_seed(sched.seed, (static_cast<std::uint64_t>(epoch) << 20) + i);
        if (stage == Stage::kWarmup) {
          st = warmup_loss(net, sample, tape, inv_batch);
        } else {
          RlLossWeights w;
          if (stage == Stage::kTransition) {
            w.dice = 1.0f - sched.lambda;
            w.value = sched.lambda;
            w.policy = 0.0f;
          } else {
            w.dice = 1.0f - sched.alpha - sched.beta;
            w.value = sched.alpha;
            w.policy = sched.beta;
          }
          RolloutBuffer traj;
          const bool dump = !opt.trajectory_path.empty() && i == 0;
          st = rl_loss(net, sample, sched, w, rollout_seed, tape, inv_batch,
                       dump ? &traj : nullptr);
          if (dump) dump_trajectory(traj, sample.label, opt.trajectory_path);
        }
        if (!std::isfinite(st.loss_dice) || !std::isfinite(st.loss_value) ||
            !std::isfinite(st.loss_policy)) {
          throw TrainAbort(epoch);
        }
        epoch_stats.loss_dice += st.loss_dice;
        epoch_stats.loss_value += st.loss_value;
        epoch_stats.loss_policy += st.loss_policy;
        epoch_stats.mean_reward += st.mean_reward;
        epoch_stats.reward_terms += st.reward_terms;
        ++steps;
      }
      if (sched.grad_clip > 0.0f) {
        double sq = 0.0;
        for (std::size_t idx : active) {
          const Tensor& t = net.params()[idx].tensor;
          if (!t.grad()) continue;
          for (std::size_t j = 0; j < t.size(); ++j) {
            sq += static_cast<double>(t.grad()[j]) * t.grad()[j];
          }
        }
        const double norm = std::sqrt(sq);
        if (norm > sched.grad_clip) {
          const float scale = sched.grad_clip / static_cast<float>(norm);
          for (std::size_t idx : active) {
            Tensor& t = net.params()[idx].tensor;
            if (!t.grad()) continue;
            for (std::size_t j = 0; j < t.size(); ++j) t.grad()[j] *= scale;
          }
        }
      }
      for (std::size_t idx : active) sgd.step_one(net.params()[idx]);
      for (auto& p : net.params()) p.tensor.zero_grad();
    }

    MetricsReport val = evaluate(net, val_set);
    TrainLogRow row;
    row.epoch = epoch;
    row.stage = stage_name(stage);
    row.loss_dice = epoch_stats.loss_dice / static_cast<float>(steps);
    row.loss_value = epoch_stats.loss_value / static_cast<float>(steps);
    row.loss_policy = epoch_stats.loss_policy / static_cast<float>(steps);
    row.mean_reward =
        epoch_stats.reward_terms
            ? epoch_stats.mean_reward /
                  static_cast<float>(epoch_stats.reward_terms)
            : 0.0f;
    row.val_dice = val.dice.mean;
    row.val_iou = val.iou.mean;
    row.val_hd95 = val.hd95.mean;
    row.val_asd = val.asd.mean;
    row.seconds = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    log.rows.push_back(std::move(row));

    if (opt.checkpoint_every > 0 && !opt.checkpoint_prefix.empty() &&
        (epoch + 1) % opt.checkpoint_every == 0) {
      char suffix[32];
      std::snprintf(suffix, sizeof(suffix), "_ep%04d.svck", epoch);
      net.save(opt.checkpoint_prefix + suffix);
    }
  }
  return log;
}

}  // namespace svl

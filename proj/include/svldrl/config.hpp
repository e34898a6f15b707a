/// @file config.hpp
/// @brief Flat key=value experiment configuration ('#' comments, unknown
///        keys rejected) covering phantom, noise, net, schedule and reward
///        settings.

#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>

#include "svldrl/net.hpp"
#include "svldrl/noise.hpp"
#include "svldrl/phantom.hpp"
#include "svldrl/trainer.hpp"

namespace svl {

struct ExperimentConfig {
  PhantomSpec phantom;
  int n_train = 40;
  int n_val = 10;
  NoiseConfig noise;
  NetConfig net;
  StageSchedule sched;
  std::string out_dir = "out";
  int checkpoint_every = 0;  // 0 = final checkpoint only
  bool trajectory_dump = false;
  bool log_walltime = true;  // false zeroes the CSV seconds column
  int sweep_seeds = 3;
  std::uint64_t seed = 0;

  /// Re-validates every sub-config and propagates the global seed.
  void finalize() {
    phantom.seed = seed;
    noise.seed = mix_seed(seed, 0x1001);
    net.seed = mix_seed(seed, 0x1002);
    sched.seed = mix_seed(seed, 0x1003);
    phantom.validate();
    noise.validate();
    net.validate();
    sched.validate();
    if (n_train < 1 || n_val < 1) {
      throw ParamError("config: data.n_train and data.n_val must be >= 1");
    }
    if (checkpoint_every < 0) {
      throw ParamError("config: train.checkpoint_every must be >= 0");
    }
    if (sweep_seeds < 1) throw ParamError("config: sweep.seeds must be >= 1");
  }
};

namespace detail {

class KvParser {
 public:
  explicit KvParser(std::unordered_map<std::string, std::string> kv)
      : kv_(std::move(kv)) {}

  template <typename T>
  void get(const char* key, T& out) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return;
    used_.insert(key);
    std::istringstream is(it->second);
    if constexpr (std::is_same_v<T, bool>) {
      std::string v = it->second;
      if (v == "true" || v == "1") {
        out = true;
      } else if (v == "false" || v == "0") {
        out = false;
      } else {
        throw ParamError(std::string("config: bad boolean for ") + key);
      }
    } else if constexpr (std::is_same_v<T, std::string>) {
      out = it->second;
    } else {
      is >> out;
      if (is.fail()) {
        throw ParamError(std::string("config: bad value for ") + key);
      }
    }
  }

  void reject_unknown() const {
    for (const auto& [k, v] : kv_) {
      if (!used_.count(k)) throw ParamError("config: unknown key '" + k + "'");
    }
  }

 private:
  std::unordered_map<std::string, std::string> kv_;
  std::set<std::string> used_;
};

inline std::unordered_map<std::string, std::string> parse_kv_text(
    std::istream& is) {
  std::unordered_map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParamError("config: line " + std::to_string(lineno) +
                       " is not key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (kv.count(key)) throw ParamError("config: duplicate key '" + key + "'");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

}  // namespace detail

inline ExperimentConfig parse_config(std::istream& is) {
  detail::KvParser p(detail::parse_kv_text(is));
  ExperimentConfig c;
  p.get("seed", c.seed);
  p.get("out_dir", c.out_dir);
  p.get("phantom.d", c.phantom.dims.d);
  p.get("phantom.h", c.phantom.dims.h);
  p.get("phantom.w", c.phantom.dims.w);
  p.get("phantom.num_blobs", c.phantom.num_blobs);
  p.get("phantom.radius_min", c.phantom.radius_min);
  p.get("phantom.radius_max", c.phantom.radius_max);
  p.get("phantom.intensity_fg", c.phantom.intensity_fg);
  p.get("phantom.intensity_bg", c.phantom.intensity_bg);
  p.get("phantom.noise_sigma", c.phantom.noise_sigma);
  p.get("data.n_train", c.n_train);
  p.get("data.n_val", c.n_val);
  std::string kind;
  p.get("noise.kind", kind);
  if (!kind.empty()) c.noise.kind = parse_noise_kind(kind);
  p.get("noise.ratio", c.noise.ratio);
  p.get("noise.mt_radius_min", c.noise.mt_radius_min);
  p.get("noise.mt_radius_max", c.noise.mt_radius_max);
  p.get("noise.p_dilate", c.noise.p_dilate);
  p.get("noise.sfda_subset_fraction", c.noise.sfda_subset_fraction);
  p.get("noise.sfda_epochs", c.noise.sfda_epochs);
  p.get("noise.sfda_lr", c.noise.sfda_lr);
  p.get("net.base_channels", c.net.base_channels);
  p.get("net.depth", c.net.depth);
  p.get("net.num_classes", c.net.num_classes);
  p.get("net.scalar_value", c.net.scalar_value);
  p.get("sched.t_warmup", c.sched.t_warmup);
  p.get("sched.t_transition", c.sched.t_transition);
  p.get("sched.total_epochs", c.sched.total_epochs);
  p.get("sched.lambda", c.sched.lambda);
  p.get("sched.alpha", c.sched.alpha);
  p.get("sched.beta", c.sched.beta);
  p.get("sched.gamma", c.sched.gamma);
  p.get("sched.rollout_steps", c.sched.rollout_steps);
  p.get("sched.tau", c.sched.tau);
  p.get("sched.lr", c.sched.lr);
  p.get("sched.momentum", c.sched.momentum);
  p.get("sched.grad_clip", c.sched.grad_clip);
  p.get("sched.rl_lr_scale", c.sched.rl_lr_scale);
  p.get("sched.batch_size", c.sched.batch_size);
  p.get("sched.shared_epsilon", c.sched.shared_epsilon);
  p.get("sched.uniform_exploration", c.sched.uniform_exploration);
  p.get("reward.w_cc", c.sched.w_cc);
  p.get("reward.w_tv", c.sched.w_tv);
  p.get("train.checkpoint_every", c.checkpoint_every);
  p.get("train.trajectory_dump", c.trajectory_dump);
  p.get("train.log_walltime", c.log_walltime);
  p.get("sweep.seeds", c.sweep_seeds);
  p.reject_unknown();
  c.finalize();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("config: cannot open " + path);
  return parse_config(is);
}

}  // namespace svl

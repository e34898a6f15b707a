/// @file experiment.hpp
/// @brief Dataset manifests and the experiment commands behind the CLI:
///        gen, corrupt, train, eval, sweep and ablate.

#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "svldrl/config.hpp"
#include "svldrl/env.hpp"
#include "svldrl/metrics.hpp"
#include "svldrl/net.hpp"
#include "svldrl/noise.hpp"
#include "svldrl/phantom.hpp"
#include "svldrl/trainer.hpp"

namespace svl {

namespace fs = std::filesystem;

struct ManifestEntry {
  std::string sample_id;
  std::string image;        // paths relative to the manifest's root
  std::string label;        // training label (may be noisy)
  std::string clean_label;  // evaluation-side diagnostics only; may be empty
  bool corrupted = false;
  std::string noise_kind;  // "", "MT" or "SFDA"
};

struct Manifest {
  std::string root;
  std::vector<ManifestEntry> entries;
};

inline void save_manifest(const Manifest& m, const std::string& path) {
  nlohmann::json j;
  j["root"] = m.root;
  j["samples"] = nlohmann::json::array();
  for (const auto& e : m.entries) {
    j["samples"].push_back({{"sample_id", e.sample_id},
                            {"image", e.image},
                            {"label", e.label},
                            {"clean_label", e.clean_label},
                            {"corrupted", e.corrupted},
                            {"noise_kind", e.noise_kind}});
  }
  std::ofstream os(path);
  if (!os) throw IoError("manifest: cannot write " + path);
  os << j.dump(2) << "\n";
}

inline Manifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("manifest: cannot open " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("manifest: parse error in " + path + ": " + e.what());
  }
  Manifest m;
  m.root = j.at("root").get<std::string>();
  for (const auto& s : j.at("samples")) {
    ManifestEntry e;
    e.sample_id = s.at("sample_id").get<std::string>();
    e.image = s.at("image").get<std::string>();
    e.label = s.at("label").get<std::string>();
    e.clean_label = s.value("clean_label", "");
    e.corrupted = s.value("corrupted", false);
    e.noise_kind = s.value("noise_kind", "");
    if (!fs::exists(fs::path(m.root) / e.image)) {
      throw IoError("manifest: missing image file " + e.image);
    }
    if (!fs::exists(fs::path(m.root) / e.label)) {
      throw IoError("manifest: missing label file " + e.label);
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

/// role: training reads the (possibly noisy) label field; evaluation reads
/// the clean label and refuses to fall back onto a corrupted one.
enum class LabelRole { kTraining, kEvaluation };

inline Dataset load_dataset(const Manifest& m, LabelRole role,
                            Split split = Split::kTrain) {
  Dataset out;
  out.split = split;
  for (const auto& e : m.entries) {
    SegSample s;
    s.sample_id = e.sample_id;
    s.image = load_volume_scalar((fs::path(m.root) / e.image).string());
    std::string label_file = e.label;
    if (role == LabelRole::kEvaluation && e.corrupted) {
      if (e.clean_label.empty()) {
        throw IoError("manifest: no clean label for corrupted sample " +
                      e.sample_id);
      }
      label_file = e.clean_label;
    }
    s.label = load_volume_mask((fs::path(m.root) / label_file).string());
    if (!(s.label.dims == s.image.dims)) {
      throw IoError("manifest: image/label dims differ for " + e.sample_id);
    }
    s.corrupted = e.corrupted;
    out.samples.push_back(std::move(s));
  }
  return out;
}

inline void write_metrics_json(const MetricsReport& r,
                               const std::string& path) {
  nlohmann::json j;
  j["per_sample"] = nlohmann::json::array();
  for (const auto& row : r.per_sample) {
    j["per_sample"].push_back({{"sample_id", row.sample_id},
                               {"dice", row.dice},
                               {"iou", row.iou},
                               {"hd95", row.hd95},
                               {"asd", row.asd}});
  }
  auto agg = [](const MetricsAggregate& a) {
    return nlohmann::json{{"mean", a.mean}, {"stddev", a.stddev}};
  };
  j["aggregate"] = {{"dice", agg(r.dice)},
                    {"iou", agg(r.iou)},
                    {"hd95", agg(r.hd95)},
                    {"asd", agg(r.asd)}};
  std::ofstream os(path);
  if (!os) throw IoError("metrics: cannot write " + path);
  os << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

inline void cmd_gen(const ExperimentConfig& cfg) {
  auto [train, val] = generate_dataset(cfg.phantom, cfg.n_train, cfg.n_val,
                                       cfg.phantom.seed);
  for (const auto* set : {&train, &val}) {
    const bool is_train = set == &train;
    const fs::path dir = fs::path(cfg.out_dir) / (is_train ? "train" : "val");
    fs::create_directories(dir);
    Manifest m;
    m.root = dir.string();
    for (const auto& s : set->samples) {
      const std::string img = s.sample_id + "_image.svvol";
      const std::string lbl = s.sample_id + "_label.svvol";
      save_volume((dir / img).string(), s.image);
      save_volume((dir / lbl).string(), s.label);
      m.entries.push_back({s.sample_id, img, lbl, "", false, ""});
    }
    save_manifest(m, (fs::path(cfg.out_dir) /
                      (is_train ? "train_manifest.json" : "val_manifest.json"))
                         .string());
  }
}

// ---------------------------------------------------------------------------
// corrupt
// ---------------------------------------------------------------------------

inline void cmd_corrupt(const ExperimentConfig& cfg,
                        const std::string& manifest_path,
                        const std::string& out_manifest_path) {
  Manifest m = load_manifest(manifest_path);
  Dataset clean = load_dataset(m, LabelRole::kTraining);
  Dataset noisy = mix_noise(clean, cfg.noise, cfg.net);
  Manifest out = m;
  const char* kind = cfg.noise.kind == NoiseKind::kMt ? "MT" : "SFDA";
  for (std::size_t i = 0; i < noisy.samples.size(); ++i) {
    if (!noisy.samples[i].corrupted) continue;
    const std::string noisy_file =
        noisy.samples[i].sample_id + "_label_noisy.svvol";
    save_volume((fs::path(m.root) / noisy_file).string(),
                noisy.samples[i].label);
    out.entries[i].clean_label = out.entries[i].label;
    out.entries[i].label = noisy_file;
    out.entries[i].corrupted = true;
    out.entries[i].noise_kind = kind;
  }
  save_manifest(out, out_manifest_path);
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainRunResult {
  TrainLog log;
  MetricsReport final_val;
  std::string checkpoint_path;
  bool aborted = false;
  int abort_epoch = -1;
};

/// In-memory training run shared by train/sweep/ablate.
inline TrainRunResult run_training(const Dataset& train_set,
                                   const Dataset& val_set,
                                   const ExperimentConfig& cfg,
                                   Ablation ablation, SegNet* net_out = nullptr,
                                   const std::string& traj_path = "") {
  SegNet net(cfg.net);
  TrainOptions opt;
  opt.ablation = ablation;
  opt.trajectory_path = traj_path;
  TrainRunResult res;
  try {
    res.log = train(net, train_set, val_set, cfg.sched, opt);
  } catch (const TrainAbort& e) {
    res.aborted = true;
    res.abort_epoch = e.epoch;
  }
  res.final_val = evaluate(net, val_set);
  if (net_out) *net_out = std::move(net);
  return res;
}

inline void cmd_train(const ExperimentConfig& cfg,
                      const std::string& train_manifest,
                      const std::string& val_manifest,
                      const std::string& ablation_name) {
  const Ablation ablation = parse_ablation(ablation_name);
  Dataset train_set =
      load_dataset(load_manifest(train_manifest), LabelRole::kTraining);
  Dataset val_set = load_dataset(load_manifest(val_manifest),
                                 LabelRole::kEvaluation, Split::kVal);
  fs::create_directories(cfg.out_dir);

  SegNet net(cfg.net);
  TrainOptions opt;
  opt.ablation = ablation;
  opt.checkpoint_every = cfg.checkpoint_every;
  opt.checkpoint_prefix = (fs::path(cfg.out_dir) / "checkpoint").string();
  if (cfg.trajectory_dump) {
    opt.trajectory_path = (fs::path(cfg.out_dir) / "trajectory.jsonl").string();
  }
  TrainLog log = train(net, train_set, val_set, cfg.sched, opt);
  write_train_log_csv(log, (fs::path(cfg.out_dir) / "trainlog.csv").string(),
                      cfg.log_walltime);
  const std::string ckpt = (fs::path(cfg.out_dir) / "final.svck").string();
  net.save(ckpt);

  const TrainLogRow& last = log.rows.back();
  nlohmann::json summary;
  summary["ablation"] = ablation_name;
  summary["epochs"] = cfg.sched.total_epochs;
  summary["seed"] = cfg.seed;
  summary["run_id"] = std::to_string(mix_seed(cfg.seed, cfg.sched.total_epochs));
  summary["final"] = {{"val_dice", last.val_dice},
                      {"val_iou", last.val_iou},
                      {"val_hd95", last.val_hd95},
                      {"val_asd", last.val_asd}};
  summary["checkpoint"] = ckpt;
  std::ofstream os((fs::path(cfg.out_dir) / "summary.json").string());
  os << summary.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

inline MetricsReport cmd_eval(const std::string& checkpoint_path,
                              const std::string& manifest_path,
                              const std::string& out_prefix) {
  SegNet net = SegNet::load(checkpoint_path);
  Dataset data = load_dataset(load_manifest(manifest_path),
                              LabelRole::kEvaluation, Split::kVal);
  MetricsReport report = evaluate(net, data);
  if (!out_prefix.empty()) {
    fs::create_directories(fs::path(out_prefix).parent_path());
    write_metrics_csv(report, out_prefix + ".csv");
    write_metrics_json(report, out_prefix + ".json");
  }
  return report;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct SweepRow {
  double ratio = 0.0;
  std::string method;  // "baseline" or "svldrl"
  double val_dice = 0.0, val_iou = 0.0;
};

/// For each noise ratio, trains the warmup-only baseline and full SVL-DRL
/// on identically corrupted data and reports the median final val Dice/IoU
/// over cfg.sweep_seeds seeds.
inline std::vector<SweepRow> cmd_sweep(const ExperimentConfig& cfg,
                                       const std::vector<double>& ratios,
                                       const std::string& out_csv) {
  for (double r : ratios) {
    if (r < 0.0 || r > 1.0) throw ParamError("sweep: ratio outside [0,1]");
  }
  std::vector<SweepRow> rows;
  for (double ratio : ratios) {
    std::vector<double> dice_base, iou_base, dice_full, iou_full;
    for (int si = 0; si < cfg.sweep_seeds; ++si) {
      ExperimentConfig run = cfg;
      run.seed = mix_seed(cfg.seed, 40000 + si);
      run.finalize();
      auto [train_set, val_set] = generate_dataset(
          run.phantom, run.n_train, run.n_val, run.phantom.seed);
      NoiseConfig nc = run.noise;
      nc.ratio = static_cast<float>(ratio);
      Dataset noisy = mix_noise(train_set, nc, run.net);
      for (Ablation ab : {Ablation::kBaseline, Ablation::kFull}) {
        TrainRunResult res = run_training(noisy, val_set, run, ab);
        auto& dv = ab == Ablation::kBaseline ? dice_base : dice_full;
        auto& iv = ab == Ablation::kBaseline ? iou_base : iou_full;
        dv.push_back(res.final_val.dice.mean);
        iv.push_back(res.final_val.iou.mean);
      }
    }
    rows.push_back({ratio, "baseline", median(dice_base), median(iou_base)});
    rows.push_back({ratio, "svldrl", median(dice_full), median(iou_full)});
  }
  if (!out_csv.empty()) {
    std::ofstream os(out_csv);
    if (!os) throw IoError("sweep: cannot write " + out_csv);
    os << "ratio,method,val_dice,val_iou\n";
    for (const auto& r : rows) {
      os << format_sig6(r.ratio) << "," << r.method << ","
         << format_sig6(r.val_dice) << "," << format_sig6(r.val_iou) << "\n";
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct AblateRow {
  std::string variant;
  bool failed = false;
  double dice = 0.0, iou = 0.0, hd95 = 0.0, asd = 0.0;
};

/// Runs the five framework variants on shared data and seeds. A training
/// abort (non-finite loss) is recorded as a failed row, not a crash.
inline std::vector<AblateRow> cmd_ablate(const ExperimentConfig& cfg,
                                         const std::string& out_csv) {
  auto [train_set, val_set] =
      generate_dataset(cfg.phantom, cfg.n_train, cfg.n_val, cfg.phantom.seed);
  Dataset noisy = mix_noise(train_set, cfg.noise, cfg.net);

  const std::pair<const char*, Ablation> variants[] = {
      {"full", Ablation::kFull},     {"no_WS", Ablation::kNoWS},
      {"no_TS", Ablation::kNoTS},    {"no_WAT", Ablation::kNoWAT},
      {"no_FRL", Ablation::kNoFRL},
  };
  std::vector<AblateRow> rows;
  for (const auto& [name, ab] : variants) {
    TrainRunResult res = run_training(noisy, val_set, cfg, ab);
    AblateRow row;
    row.variant = name;
    row.failed = res.aborted;
    row.dice = res.final_val.dice.mean;
    row.iou = res.final_val.iou.mean;
    row.hd95 = res.final_val.hd95.mean;
    row.asd = res.final_val.asd.mean;
    rows.push_back(std::move(row));
  }
  if (!out_csv.empty()) {
    std::ofstream os(out_csv);
    if (!os) throw IoError("ablate: cannot write " + out_csv);
    os << "variant,failed,dice,iou,hd95,asd\n";
    for (const auto& r : rows) {
      os << r.variant << "," << (r.failed ? 1 : 0) << ","
         << format_sig6(r.dice) << "," << format_sig6(r.iou) << ","
         << format_sig6(r.hd95) << "," << format_sig6(r.asd) << "\n";
    }
  }
  return rows;
}

}  // namespace svl

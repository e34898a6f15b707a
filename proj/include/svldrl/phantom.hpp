/// @file phantom.hpp
/// @brief Deterministic synthetic organ phantoms: unions of randomly rotated
///        anisotropic ellipsoids with known clean ground truth.

#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

#include "svldrl/rng.hpp"
#include "svldrl/volume.hpp"

namespace svl {

struct GenerationError : std::runtime_error {
  explicit GenerationError(const std::string& what)
      : std::runtime_error(what) {}
};

struct PhantomSpec {
  Dims dims{32, 32, 32};
  int num_blobs = 3;
  float radius_min = 4.0f;
  float radius_max = 9.0f;
  float intensity_fg = 0.75f;
  float intensity_bg = 0.25f;
  float noise_sigma = 0.05f;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_blobs < 1) throw ParamError("phantom: num_blobs must be >= 1");
    if (radius_min < 1.0f || radius_min > radius_max) {
      throw ParamError("phantom: bad radius range");
    }
    const int mind = std::min({dims.d, dims.h, dims.w});
    if (radius_max >= static_cast<float>(mind) / 2.0f) {
      throw ParamError("phantom: radius_max must be < min(dims)/2");
    }
    if (!(intensity_fg > intensity_bg)) {
      throw ParamError("phantom: intensity_fg must exceed intensity_bg");
    }
    if (intensity_fg <= 0.0f || intensity_fg > 1.0f || intensity_bg < 0.0f ||
        intensity_bg >= 1.0f) {
      throw ParamError("phantom: intensities outside [0,1]");
    }
    if (noise_sigma < 0.0f) throw ParamError("phantom: negative noise sigma");
  }
};

namespace detail {

struct Ellipsoid {
  float cx, cy, cz;          // center (x,y,z order = W,H,D)
  float ax, ay, az;          // semi-axes in the rotated frame
  std::array<float, 9> rot;  // row-major rotation matrix
};

/// Rotation matrix from a random unit quaternion.
inline std::array<float, 9> random_rotation(Rng& rng) {
  float q[4];
  float norm = 0.0f;
  for (int i = 0; i < 4; ++i) {
    q[i] = rng.normal();
    norm += q[i] * q[i];
  }
  norm = std::sqrt(std::max(norm, 1e-8f));
  for (float& v : q) v /= norm;
  const float w = q[0], x = q[1], y = q[2], z = q[3];
  return {1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
          2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
          2 * (x * z - w * y),     2 * (y * z + w * x), 1 - 2 * (x * x + y * y)};
}

inline bool inside(const Ellipsoid& e, float x, float y, float z) {
  const float dx = x - e.cx, dy = y - e.cy, dz = z - e.cz;
  const float u = e.rot[0] * dx + e.rot[1] * dy + e.rot[2] * dz;
  const float v = e.rot[3] * dx + e.rot[4] * dy + e.rot[5] * dz;
  const float t = e.rot[6] * dx + e.rot[7] * dy + e.rot[8] * dz;
  const float s = (u / e.ax) * (u / e.ax) + (v / e.ay) * (v / e.ay) +
                  (t / e.az) * (t / e.az);
  return s <= 1.0f;
}

}  // namespace detail

/// Pure function of the spec: identical spec (incl. seed) gives a
/// bit-identical sample. Foreground keeps a one-voxel background margin so
/// morphological corruption never touches the grid boundary.
inline SegSample generate_phantom(const PhantomSpec& spec,
                                  const std::string& sample_id = "phantom") {
  spec.validate();
  Rng rng(mix_seed(spec.seed));

  const int d = spec.dims.d, h = spec.dims.h, w = spec.dims.w;
  LabelMask mask(spec.dims, 2);

  constexpr int kMaxRetries = 64;
  // keep a>=1 voxel margin: |center - boundary| > max semi-axis + 1
  for (int blob = 0; blob < spec.num_blobs; ++blob) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxRetries && !placed; ++attempt) {
      detail::Ellipsoid e;
      e.ax = rng.uniform(spec.radius_min, spec.radius_max);
      e.ay = rng.uniform(spec.radius_min, spec.radius_max);
      e.az = rng.uniform(spec.radius_min, spec.radius_max);
      // avoid degenerate slivers: keep the blob volume above ~2% of the grid
      // so dataset-level foreground fractions stay sane
      if (e.ax * e.ay * e.az < 0.005f * static_cast<float>(spec.dims.count())) {
        continue;
      }
      e.rot = detail::random_rotation(rng);
      const float rmax = std::max({e.ax, e.ay, e.az});
      const float margin = rmax + 2.0f;
      if (2.0f * margin >= static_cast<float>(std::min({d, h, w}))) continue;
      e.cx = rng.uniform(margin, static_cast<float>(w) - margin);
      e.cy = rng.uniform(margin, static_cast<float>(h) - margin);
      e.cz = rng.uniform(margin, static_cast<float>(d) - margin);

      const int z0 = std::max(1, static_cast<int>(e.cz - rmax) - 1);
      const int z1 = std::min(d - 2, static_cast<int>(e.cz + rmax) + 1);
      const int y0 = std::max(1, static_cast<int>(e.cy - rmax) - 1);
      const int y1 = std::min(h - 2, static_cast<int>(e.cy + rmax) + 1);
      const int x0 = std::max(1, static_cast<int>(e.cx - rmax) - 1);
      const int x1 = std::min(w - 2, static_cast<int>(e.cx + rmax) + 1);
      bool any = false;
      for (int z = z0; z <= z1; ++z) {
        for (int y = y0; y <= y1; ++y) {
          for (int x = x0; x <= x1; ++x) {
            if (detail::inside(e, static_cast<float>(x), static_cast<float>(y),
                               static_cast<float>(z))) {
              mask.at(z, y, x) = 1;
              any = true;
            }
          }
        }
      }
      placed = any;
    }
    if (!placed) {
      throw GenerationError("phantom: failed to place blob " +
                            std::to_string(blob) + " within bounds");
    }
  }

  Volume img(spec.dims);
  for (std::size_t i = 0; i < img.voxels.size(); ++i) {
    const float base = mask.labels[i] ? spec.intensity_fg : spec.intensity_bg;
    img.voxels[i] = base + spec.noise_sigma * rng.normal();
  }
  img.clamp01();

  SegSample s;
  s.image = std::move(img);
  s.label = std::move(mask);
  s.corrupted = false;
  s.sample_id = sample_id;
  return s;
}

/// Train/val datasets with per-sample seeds base_seed + index; disjoint by
/// construction, all labels clean.
inline std::pair<Dataset, Dataset> generate_dataset(const PhantomSpec& spec,
                                                    int n_train, int n_val,
                                                    std::uint64_t base_seed) {
  if (n_train < 1 || n_val < 1) {
    throw ParamError("generate_dataset: need n_train, n_val >= 1");
  }
  Dataset train, val;
  train.split = Split::kTrain;
  val.split = Split::kVal;
  for (int i = 0; i < n_train + n_val; ++i) {
    PhantomSpec s = spec;
    s.seed = base_seed + static_cast<std::uint64_t>(i);
    char id[32];
    std::snprintf(id, sizeof(id), "%s%04d", i < n_train ? "train" : "val", i);
    SegSample sample = generate_phantom(s, id);
    (i < n_train ? train : val).samples.push_back(std::move(sample));
  }
  return {std::move(train), std::move(val)};
}

}  // namespace svl

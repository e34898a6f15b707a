/// @file metrics.hpp
/// @brief Segmentation metrics: Dice, IoU, HD95, ASD (exact Euclidean
///        distance transform), connected components, total variation and the
///        anatomical plausibility constraint.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "svldrl/volume.hpp"

namespace svl {

constexpr float kDiceSmooth = 1e-5f;

namespace detail {

inline void require_dims(Dims a, Dims b, const char* op) {
  if (!(a == b)) throw ShapeError(std::string(op) + ": dim mismatch");
}

}  // namespace detail

/// Soft Dice (2*sum(p*g)+eps)/(sum(p)+sum(g)+eps); pred may be soft or
/// binary, gt is binary {0,1}.
inline double dice(const std::vector<float>& pred, const std::vector<float>& gt,
                   Dims dims, bool smooth = true) {
  if (pred.size() != dims.count() || gt.size() != dims.count()) {
    throw ShapeError("dice: dim mismatch");
  }
  double inter = 0.0, sp = 0.0, sg = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += static_cast<double>(pred[i]) * gt[i];
    sp += pred[i];
    sg += gt[i];
  }
  const double eps = smooth ? kDiceSmooth : 0.0;
  const double denom = sp + sg + eps;
  if (denom == 0.0) return 1.0;  // both empty, no smoothing
  return (2.0 * inter + eps) / denom;
}

inline double iou(const std::vector<float>& pred, const std::vector<float>& gt,
                  Dims dims, bool smooth = true) {
  if (pred.size() != dims.count() || gt.size() != dims.count()) {
    throw ShapeError("iou: dim mismatch");
  }
  double inter = 0.0, uni = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = pred[i] != 0.0f ? 1.0 : 0.0;
    const double g = gt[i] != 0.0f ? 1.0 : 0.0;
    inter += p * g;
    uni += p + g - p * g;
  }
  const double eps = smooth ? kDiceSmooth : 0.0;
  if (uni + eps == 0.0) return 1.0;
  return (inter + eps) / (uni + eps);
}

inline std::vector<float> mask_to_float(const LabelMask& m) {
  std::vector<float> out(m.labels.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = m.labels[i] ? 1.f : 0.f;
  return out;
}

inline double dice(const LabelMask& a, const LabelMask& b) {
  detail::require_dims(a.dims, b.dims, "dice");
  return dice(mask_to_float(a), mask_to_float(b), a.dims);
}

inline double iou(const LabelMask& a, const LabelMask& b) {
  detail::require_dims(a.dims, b.dims, "iou");
  return iou(mask_to_float(a), mask_to_float(b), a.dims);
}

// ---------------------------------------------------------------------------
// Connected components (6-connectivity, union-find)
// ---------------------------------------------------------------------------

inline int count_components(const std::vector<std::uint8_t>& fg, Dims dims) {
  if (fg.size() != dims.count()) throw ShapeError("count_components: size");
  const int d = dims.d, h = dims.h, w = dims.w;
  std::vector<std::int32_t> parent(fg.size(), -1);
  auto find = [&](std::int32_t i) {
    while (parent[i] != i) {
      parent[i] = parent[parent[i]];
      i = parent[i];
    }
    return i;
  };
  auto unite = [&](std::int32_t a, std::int32_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  };
  for (int z = 0; z < d; ++z) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::int32_t i =
            static_cast<std::int32_t>((static_cast<std::size_t>(z) * h + y) * w + x);
        if (!fg[i]) continue;
        parent[i] = i;
        if (x > 0 && fg[i - 1]) unite(i, i - 1);
        if (y > 0 && fg[i - w]) unite(i, i - w);
        if (z > 0 && fg[i - w * h]) unite(i, i - w * h);
      }
    }
  }
  int roots = 0;
  for (std::size_t i = 0; i < fg.size(); ++i) {
    if (fg[i] && parent[i] == static_cast<std::int32_t>(i)) ++roots;
  }
  return roots;
}

inline int count_components(const LabelMask& m) {
  std::vector<std::uint8_t> fg(m.labels.size());
  for (std::size_t i = 0; i < fg.size(); ++i) fg[i] = m.labels[i] ? 1 : 0;
  return count_components(fg, m.dims);
}

// ---------------------------------------------------------------------------
// Total variation (isotropic, forward differences, zero at far faces)
// ---------------------------------------------------------------------------

inline double total_variation(const std::vector<float>& f, Dims dims) {
  if (f.size() != dims.count()) throw ShapeError("total_variation: size");
  const int d = dims.d, h = dims.h, w = dims.w;
  double tv = 0.0;
  for (int z = 0; z < d; ++z) {
    for (int y = 0; y < h; ++y) {
      const std::size_t row = (static_cast<std::size_t>(z) * h + y) * w;
      for (int x = 0; x < w; ++x) {
        const std::size_t i = row + x;
        const double dx = (x + 1 < w) ? f[i + 1] - f[i] : 0.0;
        const double dy = (y + 1 < h) ? f[i + w] - f[i] : 0.0;
        const double dz = (z + 1 < d) ? f[i + static_cast<std::size_t>(h) * w] - f[i] : 0.0;
        tv += std::sqrt(dx * dx + dy * dy + dz * dz);
      }
    }
  }
  return tv;
}

/// Binarize a soft foreground grid at tau (>= keeps the voxel).
inline std::vector<std::uint8_t> binarize(const std::vector<float>& f,
                                          float tau = 0.5f) {
  std::vector<std::uint8_t> out(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) out[i] = f[i] >= tau ? 1 : 0;
  return out;
}

/// w_cc * max(N_cc - 1, 0) + w_tv * TV(f)/N. Used as a penalty by the reward.
inline double anatomical_constraint(const std::vector<float>& f, Dims dims,
                                    double w_cc, double w_tv) {
  if (w_cc < 0.0 || w_tv < 0.0) {
    throw ParamError("anatomical_constraint: negative weight");
  }
  const int ncc = count_components(binarize(f), dims);
  const double frag = std::max(ncc - 1, 0);
  const double tv = total_variation(f, dims) / static_cast<double>(dims.count());
  return w_cc * frag + w_tv * tv;
}

// ---------------------------------------------------------------------------
// Surface distances via exact squared Euclidean distance transform
// (Felzenszwalb & Huttenlocher lower-envelope scan per axis)
// ---------------------------------------------------------------------------

namespace detail {

inline void edt_1d(std::vector<double>& f, std::vector<double>& scratch,
                   std::vector<int>& v, std::vector<double>& z, int n) {
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    double s;
    while (true) {
      s = ((f[q] + q * static_cast<double>(q)) -
           (f[v[k]] + v[k] * static_cast<double>(v[k]))) /
          (2.0 * q - 2.0 * v[k]);
      if (s <= z[k]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    scratch[q] = dq * dq + f[v[k]];
  }
  std::copy(scratch.begin(), scratch.begin() + n, f.begin());
}

}  // namespace detail

/// Exact squared EDT of a seed set; seeds get 0, everything else the squared
/// Euclidean distance to the nearest seed. All-zero seed grids yield +inf.
inline std::vector<double> squared_edt(const std::vector<std::uint8_t>& seed,
                                       Dims dims) {
  const int d = dims.d, h = dims.h, w = dims.w;
  const double inf = 1e30;
  std::vector<double> dist(seed.size());
  for (std::size_t i = 0; i < seed.size(); ++i) dist[i] = seed[i] ? 0.0 : inf;

  const int nmax = std::max({d, h, w});
  std::vector<double> f(nmax), scratch(nmax), z(nmax + 1);
  std::vector<int> v(nmax);

  // along x
  for (int zz = 0; zz < d; ++zz) {
    for (int yy = 0; yy < h; ++yy) {
      double* row = dist.data() + (static_cast<std::size_t>(zz) * h + yy) * w;
      std::copy(row, row + w, f.begin());
      detail::edt_1d(f, scratch, v, z, w);
      std::copy(f.begin(), f.begin() + w, row);
    }
  }
  // along y
  for (int zz = 0; zz < d; ++zz) {
    for (int xx = 0; xx < w; ++xx) {
      for (int yy = 0; yy < h; ++yy) {
        f[yy] = dist[(static_cast<std::size_t>(zz) * h + yy) * w + xx];
      }
      detail::edt_1d(f, scratch, v, z, h);
      for (int yy = 0; yy < h; ++yy) {
        dist[(static_cast<std::size_t>(zz) * h + yy) * w + xx] = f[yy];
      }
    }
  }
  // along z
  for (int yy = 0; yy < h; ++yy) {
    for (int xx = 0; xx < w; ++xx) {
      for (int zz = 0; zz < d; ++zz) {
        f[zz] = dist[(static_cast<std::size_t>(zz) * h + yy) * w + xx];
      }
      detail::edt_1d(f, scratch, v, z, d);
      for (int zz = 0; zz < d; ++zz) {
        dist[(static_cast<std::size_t>(zz) * h + yy) * w + xx] = f[zz];
      }
    }
  }
  return dist;
}

/// Foreground voxels with at least one six-connected background neighbor;
/// the grid boundary counts as background.
inline std::vector<std::uint8_t> surface_voxels(
    const std::vector<std::uint8_t>& fg, Dims dims) {
  const int d = dims.d, h = dims.h, w = dims.w;
  std::vector<std::uint8_t> out(fg.size(), 0);
  for (int z = 0; z < d; ++z) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t i = (static_cast<std::size_t>(z) * h + y) * w + x;
        if (!fg[i]) continue;
        const bool border = z == 0 || z == d - 1 || y == 0 || y == h - 1 ||
                            x == 0 || x == w - 1;
        if (border || !fg[i - 1] || !fg[i + 1] || !fg[i - w] || !fg[i + w] ||
            !fg[i - static_cast<std::size_t>(h) * w] ||
            !fg[i + static_cast<std::size_t>(h) * w]) {
          out[i] = 1;
        }
      }
    }
  }
  return out;
}

struct EmptyMaskError : std::runtime_error {
  explicit EmptyMaskError(const std::string& what)
      : std::runtime_error(what) {}
};

struct SurfaceDistances {
  std::vector<double> a_to_b;  // sorted ascending
  std::vector<double> b_to_a;
};

/// Euclidean nearest-surface distances in both directions.
inline SurfaceDistances surface_distances(const std::vector<std::uint8_t>& a,
                                          const std::vector<std::uint8_t>& b,
                                          Dims dims) {
  const auto sa = surface_voxels(a, dims);
  const auto sb = surface_voxels(b, dims);
  const bool ea = std::find(sa.begin(), sa.end(), 1) == sa.end();
  const bool eb = std::find(sb.begin(), sb.end(), 1) == sb.end();
  if (ea || eb) throw EmptyMaskError("surface_distances: empty mask");

  SurfaceDistances out;
  const auto db = squared_edt(sb, dims);
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (sa[i]) out.a_to_b.push_back(std::sqrt(db[i]));
  }
  const auto da = squared_edt(sa, dims);
  for (std::size_t i = 0; i < sb.size(); ++i) {
    if (sb[i]) out.b_to_a.push_back(std::sqrt(da[i]));
  }
  std::sort(out.a_to_b.begin(), out.a_to_b.end());
  std::sort(out.b_to_a.begin(), out.b_to_a.end());
  return out;
}

inline double grid_diagonal(Dims dims) {
  return std::sqrt(static_cast<double>(dims.d) * dims.d +
                   static_cast<double>(dims.h) * dims.h +
                   static_cast<double>(dims.w) * dims.w);
}

namespace detail {

/// Nearest-rank percentile: value at index ceil(p*n)-1 of the sorted list.
inline double percentile_nearest_rank(const std::vector<double>& sorted,
                                      double p) {
  const std::size_t n = sorted.size();
  const std::size_t idx = static_cast<std::size_t>(
      std::ceil(p * static_cast<double>(n)));
  return sorted[idx == 0 ? 0 : idx - 1];
}

inline bool mask_empty(const std::vector<std::uint8_t>& m) {
  return std::find(m.begin(), m.end(), 1) == m.end();
}

}  // namespace detail

/// HD95: max over directions of the 95th-percentile directed distance.
/// One empty mask -> grid diagonal sentinel; both empty -> 0.
inline double hd95(const std::vector<std::uint8_t>& a,
                   const std::vector<std::uint8_t>& b, Dims dims) {
  const bool ea = detail::mask_empty(a), eb = detail::mask_empty(b);
  if (ea && eb) return 0.0;
  if (ea || eb) return grid_diagonal(dims);
  const auto sd = surface_distances(a, b, dims);
  return std::max(detail::percentile_nearest_rank(sd.a_to_b, 0.95),
                  detail::percentile_nearest_rank(sd.b_to_a, 0.95));
}

/// ASD: mean of the pooled bidirectional surface distances.
inline double asd(const std::vector<std::uint8_t>& a,
                  const std::vector<std::uint8_t>& b, Dims dims) {
  const bool ea = detail::mask_empty(a), eb = detail::mask_empty(b);
  if (ea && eb) return 0.0;
  if (ea || eb) return grid_diagonal(dims);
  const auto sd = surface_distances(a, b, dims);
  double acc = std::accumulate(sd.a_to_b.begin(), sd.a_to_b.end(), 0.0) +
               std::accumulate(sd.b_to_a.begin(), sd.b_to_a.end(), 0.0);
  return acc / static_cast<double>(sd.a_to_b.size() + sd.b_to_a.size());
}

inline std::vector<std::uint8_t> mask_bits(const LabelMask& m) {
  std::vector<std::uint8_t> out(m.labels.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = m.labels[i] ? 1 : 0;
  return out;
}

inline double hd95(const LabelMask& a, const LabelMask& b) {
  detail::require_dims(a.dims, b.dims, "hd95");
  return hd95(mask_bits(a), mask_bits(b), a.dims);
}

inline double asd(const LabelMask& a, const LabelMask& b) {
  detail::require_dims(a.dims, b.dims, "asd");
  return asd(mask_bits(a), mask_bits(b), a.dims);
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct MetricsRow {
  std::string sample_id;
  double dice = 0.0, iou = 0.0, hd95 = 0.0, asd = 0.0;
};

struct MetricsAggregate {
  double mean = 0.0, stddev = 0.0;
};

struct MetricsReport {
  std::vector<MetricsRow> per_sample;  // sorted by sample_id
  MetricsAggregate dice, iou, hd95, asd;

  void finalize() {
    std::sort(per_sample.begin(), per_sample.end(),
              [](const MetricsRow& a, const MetricsRow& b) {
                return a.sample_id < b.sample_id;
              });
    auto agg = [&](auto getter) {
      MetricsAggregate out;
      if (per_sample.empty()) return out;
      double s = 0.0;
      for (const auto& r : per_sample) s += getter(r);
      out.mean = s / static_cast<double>(per_sample.size());
      double ss = 0.0;
      for (const auto& r : per_sample) {
        const double d = getter(r) - out.mean;
        ss += d * d;
      }
      out.stddev = std::sqrt(ss / static_cast<double>(per_sample.size()));
      return out;
    };
    dice = agg([](const MetricsRow& r) { return r.dice; });
    iou = agg([](const MetricsRow& r) { return r.iou; });
    hd95 = agg([](const MetricsRow& r) { return r.hd95; });
    asd = agg([](const MetricsRow& r) { return r.asd; });
  }
};

inline std::string format_sig6(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

inline void write_metrics_csv(const MetricsReport& r, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("metrics: cannot write " + path);
  os << "sample_id,dice,iou,hd95,asd\n";
  for (const auto& row : r.per_sample) {
    os << row.sample_id << "," << format_sig6(row.dice) << ","
       << format_sig6(row.iou) << "," << format_sig6(row.hd95) << ","
       << format_sig6(row.asd) << "\n";
  }
}

}  // namespace svl

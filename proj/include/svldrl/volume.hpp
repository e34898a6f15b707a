/// @file volume.hpp
/// @brief Volumetric sample types, intensity normalization, one-hot encoding
///        and the .svvol on-disk format.

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "svldrl/tensor.hpp"

namespace svl {

struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

struct ParamError : std::invalid_argument {
  explicit ParamError(const std::string& what) : std::invalid_argument(what) {}
};

struct Dims {
  int d = 0, h = 0, w = 0;
  bool operator==(const Dims&) const = default;
  std::size_t count() const {
    return static_cast<std::size_t>(d) * h * w;
  }
};

/// Dense scalar grid with intensities in [0,1]; the RL state.
struct Volume {
  Dims dims;
  std::vector<float> voxels;

  Volume() = default;
  Volume(Dims dm, float fill = 0.0f) : dims(dm), voxels(dm.count(), fill) {}

  float& at(int z, int y, int x) {
    return voxels[(static_cast<std::size_t>(z) * dims.h + y) * dims.w + x];
  }
  float at(int z, int y, int x) const {
    return voxels[(static_cast<std::size_t>(z) * dims.h + y) * dims.w + x];
  }

  void clamp01() {
    for (float& v : voxels) v = std::clamp(v, 0.0f, 1.0f);
  }
};

/// Per-voxel class indices in {0..num_classes-1}.
struct LabelMask {
  Dims dims;
  int num_classes = 2;
  std::vector<std::uint8_t> labels;

  LabelMask() = default;
  LabelMask(Dims dm, int classes = 2)
      : dims(dm), num_classes(classes), labels(dm.count(), 0) {}

  std::uint8_t& at(int z, int y, int x) {
    return labels[(static_cast<std::size_t>(z) * dims.h + y) * dims.w + x];
  }
  std::uint8_t at(int z, int y, int x) const {
    return labels[(static_cast<std::size_t>(z) * dims.h + y) * dims.w + x];
  }

  std::size_t foreground_count() const {
    std::size_t n = 0;
    for (auto v : labels) n += (v != 0);
    return n;
  }
};

struct SegSample {
  Volume image;
  LabelMask label;
  bool corrupted = false;
  std::string sample_id;
};

enum class Split { kTrain, kVal };

struct Dataset {
  std::vector<SegSample> samples;
  Split split = Split::kTrain;
};

/// clamp((raw - lo)/(hi - lo), 0, 1) per voxel.
inline Volume normalize_intensity(const std::vector<float>& raw, Dims dims,
                                  float lo, float hi) {
  if (lo >= hi) throw ParamError("normalize_intensity: lo must be < hi");
  if (raw.size() != dims.count()) {
    throw ParamError("normalize_intensity: grid size does not match dims");
  }
  Volume v(dims);
  const float inv = 1.0f / (hi - lo);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    v.voxels[i] = std::clamp((raw[i] - lo) * inv, 0.0f, 1.0f);
  }
  return v;
}

/// One-hot [C,D,H,W] encoding.
inline Tensor one_hot(const LabelMask& mask) {
  const std::size_t vox = mask.dims.count();
  Tensor t({mask.num_classes, mask.dims.d, mask.dims.h, mask.dims.w});
  for (std::size_t i = 0; i < vox; ++i) {
    t.data()[static_cast<std::size_t>(mask.labels[i]) * vox + i] = 1.0f;
  }
  return t;
}

/// Per-voxel argmax over the class axis of a [C,D,H,W] probability tensor.
/// Ties break toward the lower class index; for C=2 this makes a voxel
/// foreground iff p_fg >= tau with tau = 0.5.
inline LabelMask threshold_mask(const Tensor& prob, float tau = 0.5f) {
  const auto& sh = prob.shape();
  if (sh.size() != 4) throw ShapeError("threshold_mask expects [C,D,H,W]");
  const int classes = sh[0];
  const Dims dims{sh[1], sh[2], sh[3]};
  const std::size_t vox = dims.count();
  LabelMask out(dims, classes);
  if (classes == 2) {
    const float* fg = prob.data() + vox;
    for (std::size_t i = 0; i < vox; ++i) out.labels[i] = fg[i] >= tau ? 1 : 0;
    return out;
  }
  for (std::size_t i = 0; i < vox; ++i) {
    int best = 0;
    float bv = prob.data()[i];
    for (int c = 1; c < classes; ++c) {
      const float v = prob.data()[c * vox + i];
      if (v > bv) {
        bv = v;
        best = c;
      }
    }
    out.labels[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// .svvol serialization
//
// magic "SVVL" | version u16 | kind u8 (0 volume, 1 label mask) |
// num_classes u16 | D,H,W u32 | payload (f32 le for kind 0, u8 for kind 1)
// ---------------------------------------------------------------------------

namespace detail {

constexpr char kSvvolMagic[4] = {'S', 'V', 'V', 'L'};
constexpr std::uint16_t kSvvolVersion = 1;

inline void write_u16(std::ostream& os, std::uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_f32(std::ostream& os, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  write_u32(os, v);
}

inline std::uint16_t read_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  if (!is) throw IoError("svvol: truncated header");
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("svvol: truncated header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

constexpr std::uint32_t kMaxExtent = 4096;

}  // namespace detail

inline void save_volume(const std::string& path, const Volume& v) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("svvol: cannot open for writing: " + path);
  os.write(detail::kSvvolMagic, 4);
  detail::write_u16(os, detail::kSvvolVersion);
  os.put(0);
  detail::write_u16(os, 0);
  detail::write_u32(os, static_cast<std::uint32_t>(v.dims.d));
  detail::write_u32(os, static_cast<std::uint32_t>(v.dims.h));
  detail::write_u32(os, static_cast<std::uint32_t>(v.dims.w));
  for (float f : v.voxels) detail::write_f32(os, f);
  if (!os) throw IoError("svvol: write failed: " + path);
}

inline void save_volume(const std::string& path, const LabelMask& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("svvol: cannot open for writing: " + path);
  os.write(detail::kSvvolMagic, 4);
  detail::write_u16(os, detail::kSvvolVersion);
  os.put(1);
  detail::write_u16(os, static_cast<std::uint16_t>(m.num_classes));
  detail::write_u32(os, static_cast<std::uint32_t>(m.dims.d));
  detail::write_u32(os, static_cast<std::uint32_t>(m.dims.h));
  detail::write_u32(os, static_cast<std::uint32_t>(m.dims.w));
  os.write(reinterpret_cast<const char*>(m.labels.data()),
           static_cast<std::streamsize>(m.labels.size()));
  if (!os) throw IoError("svvol: write failed: " + path);
}

struct LoadedVolume {
  int kind = 0;  // 0 volume, 1 label mask
  Volume volume;
  LabelMask mask;
};

inline LoadedVolume load_volume(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("svvol: cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, detail::kSvvolMagic, 4) != 0) {
    throw IoError("svvol: bad magic in " + path);
  }
  const std::uint16_t version = detail::read_u16(is);
  if (version != detail::kSvvolVersion) {
    throw IoError("svvol: unsupported version " + std::to_string(version));
  }
  const int kind = is.get();
  if (kind != 0 && kind != 1) throw IoError("svvol: unknown payload kind");
  const std::uint16_t num_classes = detail::read_u16(is);
  const std::uint32_t d = detail::read_u32(is);
  const std::uint32_t h = detail::read_u32(is);
  const std::uint32_t w = detail::read_u32(is);
  if (d == 0 || h == 0 || w == 0 || d > detail::kMaxExtent ||
      h > detail::kMaxExtent || w > detail::kMaxExtent) {
    throw IoError("svvol: dims out of range in " + path);
  }
  const std::size_t vox = static_cast<std::size_t>(d) * h * w;
  LoadedVolume out;
  out.kind = kind;
  const Dims dims{static_cast<int>(d), static_cast<int>(h),
                  static_cast<int>(w)};
  if (kind == 0) {
    out.volume = Volume(dims);
    for (std::size_t i = 0; i < vox; ++i) {
      const std::uint32_t bits = detail::read_u32(is);
      float f;
      std::memcpy(&f, &bits, 4);
      out.volume.voxels[i] = f;
    }
  } else {
    out.mask = LabelMask(dims, num_classes);
    is.read(reinterpret_cast<char*>(out.mask.labels.data()),
            static_cast<std::streamsize>(vox));
    if (is.gcount() != static_cast<std::streamsize>(vox)) {
      throw IoError("svvol: truncated payload in " + path);
    }
    for (auto v : out.mask.labels) {
      if (v >= num_classes) throw IoError("svvol: label out of range");
    }
  }
  if (!is) throw IoError("svvol: truncated payload in " + path);
  return out;
}

inline Volume load_volume_scalar(const std::string& path) {
  LoadedVolume lv = load_volume(path);
  if (lv.kind != 0) throw IoError("svvol: expected scalar volume: " + path);
  return std::move(lv.volume);
}

inline LabelMask load_volume_mask(const std::string& path) {
  LoadedVolume lv = load_volume(path);
  if (lv.kind != 1) throw IoError("svvol: expected label mask: " + path);
  return std::move(lv.mask);
}

}  // namespace svl

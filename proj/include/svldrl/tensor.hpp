/// @file tensor.hpp
/// @brief Dense float tensors with tape-based reverse-mode differentiation.
///
/// Only the primitives the segmentation network and its losses need are
/// implemented: 3D convolution, nearest-neighbor upsampling, channel softmax,
/// elementwise arithmetic, reductions, and a per-voxel log-prob gather.
/// No broadcasting engine.

#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "svldrl/rng.hpp"

namespace svl {

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

struct GradError : std::runtime_error {
  explicit GradError(const std::string& what) : std::runtime_error(what) {}
};

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape, bool requires_grad = false)
      : shape_(std::move(shape)), requires_grad_(requires_grad) {
    for (int e : shape_) {
      if (e <= 0) throw ShapeError("tensor extent must be positive");
    }
    data_ = std::make_shared<std::vector<float>>(count(shape_), 0.0f);
    if (requires_grad_) {
      grad_ = std::make_shared<std::vector<float>>(count(shape_), 0.0f);
    }
  }

  static Tensor from(std::vector<int> shape, std::vector<float> values,
                     bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    if (values.size() != t.size()) {
      throw ShapeError("value count does not match tensor shape");
    }
    *t.data_ = std::move(values);
    return t;
  }

  static Tensor full(std::vector<int> shape, float value,
                     bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    std::fill(t.data_->begin(), t.data_->end(), value);
    return t;
  }

  static Tensor scalar(float value, bool requires_grad = false) {
    return full({1}, value, requires_grad);
  }

  const std::vector<int>& shape() const { return shape_; }
  std::size_t size() const { return data_ ? data_->size() : 0; }
  bool requires_grad() const { return requires_grad_; }
  bool defined() const { return static_cast<bool>(data_); }

  // Tensors are shared handles onto reference-counted buffers, so the
  // pointers stay mutable through const handles (backward closures copy the
  // handle but write gradients into the shared storage).
  float* data() const { return data_->data(); }
  float* grad() const { return grad_ ? grad_->data() : nullptr; }
  const std::shared_ptr<std::vector<float>>& storage() const { return data_; }

  float item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar tensor");
    return (*data_)[0];
  }

  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0f);
  }

  /// Shares storage; grads stay tied to the same buffers.
  bool same_storage(const Tensor& other) const { return data_ == other.data_; }

  static std::size_t count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int e : shape) n *= static_cast<std::size_t>(e);
    return n;
  }

 private:
  std::vector<int> shape_;
  std::shared_ptr<std::vector<float>> data_;
  std::shared_ptr<std::vector<float>> grad_;
  bool requires_grad_ = false;
};

/// Ordered record of primitive ops. Appending preserves topological order,
/// so one reverse sweep visits each node exactly once.
class Tape {
 public:
  void record(std::function<void()> backward) {
    nodes_.push_back(std::move(backward));
  }

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse.
  void backward(Tensor& loss) {
    if (loss.size() != 1) throw ShapeError("backward needs a scalar loss");
    if (!loss.requires_grad()) {
      throw GradError("backward on a tensor without grad");
    }
    loss.grad()[0] += 1.0f;
    visited_ = 0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      (*it)();
      ++visited_;
    }
  }

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t visited_count() const { return visited_; }
  void clear() {
    nodes_.clear();
    visited_ = 0;
  }

 private:
  std::vector<std::function<void()>> nodes_;
  std::size_t visited_ = 0;
};

namespace detail {

inline bool track(const Tape* tape, std::initializer_list<const Tensor*> ins) {
  if (!tape) return false;
  for (const Tensor* t : ins) {
    if (t->requires_grad()) return true;
  }
  return false;
}

inline void require_same_shape(const Tensor& a, const Tensor& b,
                               const char* op) {
  if (a.shape() != b.shape()) {
    std::ostringstream os;
    os << op << ": shape mismatch (";
    for (int e : a.shape()) os << e << " ";
    os << "vs ";
    for (int e : b.shape()) os << e << " ";
    os << ")";
    throw ShapeError(os.str());
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

inline Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  const bool rg = detail::track(tape, {&a, &b});
  Tensor out(a.shape(), rg);
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (rg) {
    tape->record([a, b, out]() mutable {
      const float* go = out.grad();
      const std::size_t m = out.size();
      if (a.requires_grad()) {
        float* ga = a.grad();
        for (std::size_t i = 0; i < m; ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        float* gb = b.grad();
        for (std::size_t i = 0; i < m; ++i) gb[i] += go[i];
      }
    });
  }
  return out;
}

inline Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  const bool rg = detail::track(tape, {&a, &b});
  Tensor out(a.shape(), rg);
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  if (rg) {
    tape->record([a, b, out]() mutable {
      const float* go = out.grad();
      const std::size_t m = out.size();
      if (a.requires_grad()) {
        float* ga = a.grad();
        for (std::size_t i = 0; i < m; ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        float* gb = b.grad();
        for (std::size_t i = 0; i < m; ++i) gb[i] -= go[i];
      }
    });
  }
  return out;
}

inline Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  const bool rg = detail::track(tape, {&a, &b});
  Tensor out(a.shape(), rg);
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (rg) {
    tape->record([a, b, out]() mutable {
      const float* go = out.grad();
      const std::size_t m = out.size();
      if (a.requires_grad()) {
        float* ga = a.grad();
        for (std::size_t i = 0; i < m; ++i) ga[i] += go[i] * b.data()[i];
      }
      if (b.requires_grad()) {
        float* gb = b.grad();
        for (std::size_t i = 0; i < m; ++i) gb[i] += go[i] * a.data()[i];
      }
    });
  }
  return out;
}

inline Tensor div(Tape* tape, const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "div");
  const bool rg = detail::track(tape, {&a, &b});
  Tensor out(a.shape(), rg);
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] / b.data()[i];
  if (rg) {
    tape->record([a, b, out]() mutable {
      const float* go = out.grad();
      const std::size_t m = out.size();
      if (a.requires_grad()) {
        float* ga = a.grad();
        for (std::size_t i = 0; i < m; ++i) ga[i] += go[i] / b.data()[i];
      }
      if (b.requires_grad()) {
        float* gb = b.grad();
        for (std::size_t i = 0; i < m; ++i) {
          gb[i] -= go[i] * a.data()[i] / (b.data()[i] * b.data()[i]);
        }
      }
    });
  }
  return out;
}

/// out = k*x + c, elementwise.
inline Tensor affine(Tape* tape, const Tensor& x, float k, float c) {
  const bool rg = detail::track(tape, {&x});
  Tensor out(x.shape(), rg);
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = k * x.data()[i] + c;
  if (rg) {
    tape->record([x, out, k]() mutable {
      const float* go = out.grad();
      float* gx = x.grad();
      const std::size_t m = out.size();
      for (std::size_t i = 0; i < m; ++i) gx[i] += k * go[i];
    });
  }
  return out;
}

inline Tensor relu(Tape* tape, const Tensor& x) {
  const bool rg = detail::track(tape, {&x});
  Tensor out(x.shape(), rg);
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    out.data()[i] = x.data()[i] > 0.0f ? x.data()[i] : 0.0f;
  }
  if (rg) {
    tape->record([x, out]() mutable {
      const float* go = out.grad();
      float* gx = x.grad();
      const std::size_t m = out.size();
      for (std::size_t i = 0; i < m; ++i) {
        if (x.data()[i] > 0.0f) gx[i] += go[i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(Tape* tape, const Tensor& x) {
  const bool rg = detail::track(tape, {&x});
  double acc = 0.0;
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) acc += x.data()[i];
  Tensor out = Tensor::scalar(static_cast<float>(acc), rg);
  if (rg) {
    tape->record([x, out]() mutable {
      const float g = out.grad()[0];
      float* gx = x.grad();
      const std::size_t m = x.size();
      for (std::size_t i = 0; i < m; ++i) gx[i] += g;
    });
  }
  return out;
}

inline Tensor mean(Tape* tape, const Tensor& x) {
  Tensor s = sum(tape, x);
  return affine(tape, s, 1.0f / static_cast<float>(x.size()), 0.0f);
}

/// Scalar broadcast to an arbitrary shape; backward sums the incoming grad.
inline Tensor broadcast_scalar(Tape* tape, const Tensor& s,
                               std::vector<int> shape) {
  if (s.size() != 1) throw ShapeError("broadcast_scalar needs a scalar");
  const bool rg = detail::track(tape, {&s});
  Tensor out(std::move(shape), rg);
  std::fill(out.data(), out.data() + out.size(), s.item());
  if (rg) {
    tape->record([s, out]() mutable {
      const float* go = out.grad();
      double acc = 0.0;
      const std::size_t m = out.size();
      for (std::size_t i = 0; i < m; ++i) acc += go[i];
      s.grad()[0] += static_cast<float>(acc);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Channel softmax and log-prob gather (tensors are [B,C,D,H,W])
// ---------------------------------------------------------------------------

inline Tensor softmax_channel(Tape* tape, const Tensor& x) {
  const auto& sh = x.shape();
  if (sh.size() != 5) throw ShapeError("softmax_channel expects [B,C,D,H,W]");
  const int batch = sh[0], ch = sh[1];
  const std::size_t vox = static_cast<std::size_t>(sh[2]) * sh[3] * sh[4];
  const bool rg = detail::track(tape, {&x});
  Tensor out(sh, rg);
  for (int b = 0; b < batch; ++b) {
    const float* xin = x.data() + static_cast<std::size_t>(b) * ch * vox;
    float* xout = out.data() + static_cast<std::size_t>(b) * ch * vox;
    for (std::size_t v = 0; v < vox; ++v) {
      float mx = xin[v];
      for (int c = 1; c < ch; ++c) mx = std::max(mx, xin[c * vox + v]);
      float denom = 0.0f;
      for (int c = 0; c < ch; ++c) {
        const float e = std::exp(xin[c * vox + v] - mx);
        xout[c * vox + v] = e;
        denom += e;
      }
      const float inv = 1.0f / denom;
      for (int c = 0; c < ch; ++c) xout[c * vox + v] *= inv;
    }
  }
  if (rg) {
    tape->record([x, out, batch, ch, vox]() mutable {
      const float* go = out.grad();
      const float* y = out.data();
      float* gx = x.grad();
      for (int b = 0; b < batch; ++b) {
        const std::size_t base = static_cast<std::size_t>(b) * ch * vox;
        for (std::size_t v = 0; v < vox; ++v) {
          float dot = 0.0f;
          for (int c = 0; c < ch; ++c) {
            const std::size_t i = base + c * vox + v;
            dot += go[i] * y[i];
          }
          for (int c = 0; c < ch; ++c) {
            const std::size_t i = base + c * vox + v;
            gx[i] += y[i] * (go[i] - dot);
          }
        }
      }
    });
  }
  return out;
}

/// Per-voxel log(prob[action]); probs is [B,C,D,H,W] with B=1, actions holds
/// one channel index per voxel. Output is [1,1,D,H,W].
inline Tensor log_select_channel(Tape* tape, const Tensor& probs,
                                 const std::vector<std::uint8_t>& actions) {
  const auto& sh = probs.shape();
  if (sh.size() != 5 || sh[0] != 1) {
    throw ShapeError("log_select_channel expects [1,C,D,H,W]");
  }
  const int ch = sh[1];
  const std::size_t vox = static_cast<std::size_t>(sh[2]) * sh[3] * sh[4];
  if (actions.size() != vox) {
    throw ShapeError("log_select_channel: action grid size mismatch");
  }
  const bool rg = detail::track(tape, {&probs});
  Tensor out({1, 1, sh[2], sh[3], sh[4]}, rg);
  for (std::size_t v = 0; v < vox; ++v) {
    const int a = actions[v];
    if (a >= ch) throw ShapeError("log_select_channel: action out of range");
    out.data()[v] = std::log(std::max(probs.data()[a * vox + v], 1e-12f));
  }
  if (rg) {
    tape->record([probs, out, actions, vox]() mutable {
      const float* go = out.grad();
      float* gp = probs.grad();
      for (std::size_t v = 0; v < vox; ++v) {
        const std::size_t i = static_cast<std::size_t>(actions[v]) * vox + v;
        gp[i] += go[v] / std::max(probs.data()[i], 1e-12f);
      }
    });
  }
  return out;
}

/// Copies channel c of a [B,C,D,H,W] tensor into [B,1,D,H,W].
inline Tensor slice_channel(Tape* tape, const Tensor& x, int c) {
  const auto& sh = x.shape();
  if (sh.size() != 5) throw ShapeError("slice_channel expects [B,C,D,H,W]");
  if (c < 0 || c >= sh[1]) throw ShapeError("slice_channel: channel index");
  const int batch = sh[0], ch = sh[1];
  const std::size_t vox = static_cast<std::size_t>(sh[2]) * sh[3] * sh[4];
  const bool rg = detail::track(tape, {&x});
  Tensor out({batch, 1, sh[2], sh[3], sh[4]}, rg);
  for (int b = 0; b < batch; ++b) {
    const float* src = x.data() + (static_cast<std::size_t>(b) * ch + c) * vox;
    std::copy(src, src + vox, out.data() + static_cast<std::size_t>(b) * vox);
  }
  if (rg) {
    tape->record([x, out, c, batch, ch, vox]() mutable {
      float* gx = x.grad();
      const float* go = out.grad();
      for (int b = 0; b < batch; ++b) {
        float* dst = gx + (static_cast<std::size_t>(b) * ch + c) * vox;
        const float* src = go + static_cast<std::size_t>(b) * vox;
        for (std::size_t v = 0; v < vox; ++v) dst[v] += src[v];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv3d
// ---------------------------------------------------------------------------

namespace detail {

inline void conv3d_check(const std::vector<int>& xs, const std::vector<int>& ws,
                         const std::vector<int>& bs, int stride, int padding) {
  if (xs.size() != 5) throw ShapeError("conv3d: input must be [B,C,D,H,W]");
  if (ws.size() != 5) throw ShapeError("conv3d: kernel must be [Co,Ci,k,k,k]");
  if (bs.size() != 1) throw ShapeError("conv3d: bias must be [Co]");
  if (ws[2] != ws[3] || ws[3] != ws[4]) {
    throw ShapeError("conv3d: kernel must be cubic");
  }
  if (xs[1] != ws[1]) {
    throw ShapeError("conv3d: channel axis mismatch (input C=" +
                     std::to_string(xs[1]) +
                     ", kernel Ci=" + std::to_string(ws[1]) + ")");
  }
  if (bs[0] != ws[0]) {
    throw ShapeError("conv3d: bias axis mismatch (bias=" +
                     std::to_string(bs[0]) +
                     ", kernel Co=" + std::to_string(ws[0]) + ")");
  }
  if (stride < 1) throw ShapeError("conv3d: stride must be positive");
  if (padding < 0) throw ShapeError("conv3d: padding must be non-negative");
  const int k = ws[2];
  const char* axes[3] = {"D", "H", "W"};
  for (int i = 0; i < 3; ++i) {
    if (xs[2 + i] + 2 * padding < k) {
      throw ShapeError(std::string("conv3d: padded extent on axis ") +
                       axes[i] + " smaller than kernel");
    }
  }
}

}  // namespace detail

inline Tensor conv3d(Tape* tape, const Tensor& x, const Tensor& w,
                     const Tensor& b, int stride = 1, int padding = 0) {
  detail::conv3d_check(x.shape(), w.shape(), b.shape(), stride, padding);
  const int batch = x.shape()[0], ci = x.shape()[1];
  const int dd = x.shape()[2], hh = x.shape()[3], ww = x.shape()[4];
  const int co = w.shape()[0], k = w.shape()[2];
  const int od = (dd + 2 * padding - k) / stride + 1;
  const int oh = (hh + 2 * padding - k) / stride + 1;
  const int ow = (ww + 2 * padding - k) / stride + 1;
  const bool rg = detail::track(tape, {&x, &w, &b});
  Tensor out({batch, co, od, oh, ow}, rg);

  const std::size_t in_plane = static_cast<std::size_t>(hh) * ww;
  const std::size_t in_vol = static_cast<std::size_t>(dd) * in_plane;
  const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
  const std::size_t out_vol = static_cast<std::size_t>(od) * out_plane;
  const std::size_t ker_vol = static_cast<std::size_t>(k) * k * k;

  for (int n = 0; n < batch; ++n) {
    const float* xb = x.data() + static_cast<std::size_t>(n) * ci * in_vol;
    float* ob = out.data() + static_cast<std::size_t>(n) * co * out_vol;
    for (int oc = 0; oc < co; ++oc) {
      float* oplane = ob + oc * out_vol;
      std::fill(oplane, oplane + out_vol, b.data()[oc]);
      for (int icn = 0; icn < ci; ++icn) {
        const float* xc = xb + icn * in_vol;
        const float* wk = w.data() + (static_cast<std::size_t>(oc) * ci + icn) * ker_vol;
        for (int oz = 0; oz < od; ++oz) {
          const int z0 = oz * stride - padding;
          for (int kz = 0; kz < k; ++kz) {
            const int z = z0 + kz;
            if (z < 0 || z >= dd) continue;
            for (int oy = 0; oy < oh; ++oy) {
              const int y0 = oy * stride - padding;
              float* orow = oplane + oz * out_plane + oy * ow;
              for (int ky = 0; ky < k; ++ky) {
                const int y = y0 + ky;
                if (y < 0 || y >= hh) continue;
                const float* xrow = xc + z * in_plane + y * ww;
                const float* wrow = wk + (kz * k + ky) * k;
                for (int kx = 0; kx < k; ++kx) {
                  const float wv = wrow[kx];
                  if (wv == 0.0f) continue;
                  const int xoff = kx - padding;
                  // valid ox range so that x index stays in bounds
                  int lo = 0, hi = ow - 1;
                  if (stride == 1) {
                    lo = std::max(0, -xoff);
                    hi = std::min(ow - 1, ww - 1 - xoff);
                  } else {
                    while (lo <= hi && lo * stride + xoff < 0) ++lo;
                    while (hi >= lo && hi * stride + xoff >= ww) --hi;
                  }
                  if (stride == 1) {
                    const float* xp = xrow + xoff + lo;
                    float* op = orow + lo;
                    const int len = hi - lo + 1;
                    for (int i = 0; i < len; ++i) op[i] += wv * xp[i];
                  } else {
                    for (int ox = lo; ox <= hi; ++ox) {
                      orow[ox] += wv * xrow[ox * stride + xoff];
                    }
                  }
                }
              }
            }
          }
        }
      }
    }
  }

  if (rg) {
    tape->record([x, w, b, out, stride, padding]() mutable {
      const int batch = x.shape()[0], ci = x.shape()[1];
      const int dd = x.shape()[2], hh = x.shape()[3], ww = x.shape()[4];
      const int co = w.shape()[0], k = w.shape()[2];
      const int od = out.shape()[2], oh = out.shape()[3], ow = out.shape()[4];
      const std::size_t in_plane = static_cast<std::size_t>(hh) * ww;
      const std::size_t in_vol = static_cast<std::size_t>(dd) * in_plane;
      const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
      const std::size_t out_vol = static_cast<std::size_t>(od) * out_plane;
      const std::size_t ker_vol = static_cast<std::size_t>(k) * k * k;
      const float* go = out.grad();
      for (int n = 0; n < batch; ++n) {
        const std::size_t xbase = static_cast<std::size_t>(n) * ci * in_vol;
        const std::size_t obase = static_cast<std::size_t>(n) * co * out_vol;
        for (int oc = 0; oc < co; ++oc) {
          const float* gplane = go + obase + oc * out_vol;
          if (b.requires_grad()) {
            double acc = 0.0;
            for (std::size_t i = 0; i < out_vol; ++i) acc += gplane[i];
            b.grad()[oc] += static_cast<float>(acc);
          }
          for (int icn = 0; icn < ci; ++icn) {
            const float* xc = x.data() + xbase + icn * in_vol;
            float* gxc = x.requires_grad() ? x.grad() + xbase + icn * in_vol
                                           : nullptr;
            const std::size_t wk =
                (static_cast<std::size_t>(oc) * ci + icn) * ker_vol;
            const float* wdat = w.data() + wk;
            float* gw = w.requires_grad() ? w.grad() + wk : nullptr;
            for (int oz = 0; oz < od; ++oz) {
              const int z0 = oz * stride - padding;
              for (int kz = 0; kz < k; ++kz) {
                const int z = z0 + kz;
                if (z < 0 || z >= dd) continue;
                for (int oy = 0; oy < oh; ++oy) {
                  const int y0 = oy * stride - padding;
                  const float* grow = gplane + oz * out_plane + oy * ow;
                  for (int ky = 0; ky < k; ++ky) {
                    const int y = y0 + ky;
                    if (y < 0 || y >= hh) continue;
                    const std::size_t row = z * in_plane + y * ww;
                    for (int kx = 0; kx < k; ++kx) {
                      const int xoff = kx - padding;
                      int lo = 0, hi = ow - 1;
                      if (stride == 1) {
                        lo = std::max(0, -xoff);
                        hi = std::min(ow - 1, ww - 1 - xoff);
                      } else {
                        while (lo <= hi && lo * stride + xoff < 0) ++lo;
                        while (hi >= lo && hi * stride + xoff >= ww) --hi;
                      }
                      const float wv = wdat[(kz * k + ky) * k + kx];
                      if (gxc) {
                        if (stride == 1) {
                          float* xp = gxc + row + xoff + lo;
                          const float* gp = grow + lo;
                          const int len = hi - lo + 1;
                          for (int i = 0; i < len; ++i) xp[i] += wv * gp[i];
                        } else {
                          for (int ox = lo; ox <= hi; ++ox) {
                            gxc[row + ox * stride + xoff] += wv * grow[ox];
                          }
                        }
                      }
                      if (gw) {
                        double acc = 0.0;
                        if (stride == 1) {
                          const float* xp = xc + row + xoff + lo;
                          const float* gp = grow + lo;
                          const int len = hi - lo + 1;
                          for (int i = 0; i < len; ++i) acc += xp[i] * gp[i];
                        } else {
                          for (int ox = lo; ox <= hi; ++ox) {
                            acc += xc[row + ox * stride + xoff] * grow[ox];
                          }
                        }
                        gw[(kz * k + ky) * k + kx] += static_cast<float>(acc);
                      }
                    }
                  }
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// upsample_nearest2x
// ---------------------------------------------------------------------------

inline Tensor upsample_nearest2x(Tape* tape, const Tensor& x) {
  const auto& sh = x.shape();
  if (sh.size() != 5) throw ShapeError("upsample_nearest2x expects [B,C,D,H,W]");
  const int bc = sh[0] * sh[1], dd = sh[2], hh = sh[3], ww = sh[4];
  const bool rg = detail::track(tape, {&x});
  Tensor out({sh[0], sh[1], 2 * dd, 2 * hh, 2 * ww}, rg);
  const std::size_t in_vol = static_cast<std::size_t>(dd) * hh * ww;
  const std::size_t out_vol = in_vol * 8;
  for (int c = 0; c < bc; ++c) {
    const float* src = x.data() + c * in_vol;
    float* dst = out.data() + c * out_vol;
    for (int z = 0; z < 2 * dd; ++z) {
      for (int y = 0; y < 2 * hh; ++y) {
        const float* srow = src + (static_cast<std::size_t>(z / 2) * hh + y / 2) * ww;
        float* drow = dst + (static_cast<std::size_t>(z) * 2 * hh + y) * 2 * ww;
        for (int xw = 0; xw < ww; ++xw) {
          drow[2 * xw] = srow[xw];
          drow[2 * xw + 1] = srow[xw];
        }
      }
    }
  }
  if (rg) {
    tape->record([x, out, bc, dd, hh, ww]() mutable {
      const std::size_t in_vol = static_cast<std::size_t>(dd) * hh * ww;
      const std::size_t out_vol = in_vol * 8;
      const float* go = out.grad();
      float* gx = x.grad();
      for (int c = 0; c < bc; ++c) {
        const float* gsrc = go + c * out_vol;
        float* gdst = gx + c * in_vol;
        for (int z = 0; z < 2 * dd; ++z) {
          for (int y = 0; y < 2 * hh; ++y) {
            const float* grow =
                gsrc + (static_cast<std::size_t>(z) * 2 * hh + y) * 2 * ww;
            float* drow =
                gdst + (static_cast<std::size_t>(z / 2) * hh + y / 2) * ww;
            for (int xw = 0; xw < ww; ++xw) {
              drow[xw] += grow[2 * xw] + grow[2 * xw + 1];
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct NamedParam {
  std::string name;
  Tensor tensor;
};

/// SGD with optional momentum: v <- momentum*v + grad, theta <- theta - lr*v.
/// Gradients are cleared after the step. Velocity buffers are keyed by
/// parameter storage, so a param may join/leave the active set across stages.
class Sgd {
 public:
  Sgd(float lr, float momentum = 0.0f) : lr_(lr), momentum_(momentum) {}

  void step(std::vector<NamedParam>& params) {
    for (auto& p : params) step_one(p);
  }

  void step_one(NamedParam& p) {
    if (!p.tensor.requires_grad() || p.tensor.grad() == nullptr) {
      throw GradError("sgd_step: parameter '" + p.name + "' has no gradient");
    }
    const std::size_t n = p.tensor.size();
    float* g = p.tensor.grad();
    float* d = p.tensor.data();
    if (momentum_ != 0.0f) {
      auto& v = velocity_[p.tensor.storage().get()];
      if (v.size() != n) v.assign(n, 0.0f);
      for (std::size_t i = 0; i < n; ++i) {
        v[i] = momentum_ * v[i] + g[i];
        d[i] -= lr_ * v[i];
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) d[i] -= lr_ * g[i];
    }
    std::fill(g, g + n, 0.0f);
  }

  float lr() const { return lr_; }
  void set_lr(float lr) { lr_ = lr; }

 private:
  float lr_;
  float momentum_;
  std::unordered_map<const void*, std::vector<float>> velocity_;
};

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Central-difference check of the analytic gradient of f at x0.
/// f receives (tape, x) and returns the scalar loss recorded on that tape;
/// it is re-evaluated at perturbed copies of x0. Checks every coordinate
/// unless a probe list is given.
/// Returns max_i |analytic_i - numeric_i| / max(1, |numeric_i|).
inline float grad_check(
    const std::function<Tensor(Tape&, const Tensor&)>& f, const Tensor& x0,
    float h = 1e-3f, const std::vector<std::size_t>* probe = nullptr) {
  Tensor x = Tensor::from(
      x0.shape(), std::vector<float>(x0.data(), x0.data() + x0.size()), true);
  Tape tape;
  Tensor loss = f(tape, x);
  if (loss.size() != 1) throw ShapeError("grad_check: loss must be scalar");
  tape.backward(loss);
  std::vector<float> analytic(x.grad(), x.grad() + x.size());

  std::vector<std::size_t> all;
  if (!probe) {
    all.resize(x.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    probe = &all;
  }
  float worst = 0.0f;
  for (std::size_t i : *probe) {
    Tensor xp = Tensor::from(
        x.shape(), std::vector<float>(x.data(), x.data() + x.size()), false);
    xp.data()[i] = x.data()[i] + h;
    Tape tp;
    const float fp = f(tp, xp).item();
    xp.data()[i] = x.data()[i] - h;
    Tape tm;
    const float fm = f(tm, xp).item();
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw GradError("grad_check: non-finite value at coordinate " +
                      std::to_string(i));
    }
    const float numeric = (fp - fm) / (2.0f * h);
    const float err = std::abs(analytic[i] - numeric) /
                      std::max(1.0f, std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

/// He-style uniform init in (-sqrt(6/fan_in), +sqrt(6/fan_in)).
inline void init_he_uniform(Tensor& t, int fan_in, Rng& rng) {
  const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
  for (std::size_t i = 0; i < t.size(); ++i) {
    t.data()[i] = rng.uniform(-bound, bound);
  }
}

}  // namespace svl

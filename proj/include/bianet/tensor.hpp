#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "bianet/errors.hpp"

namespace bianet {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

// 2-D convolution geometry. Cross-correlation with zero padding.
struct ConvSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kh = 1, kw = 1;
  int sh = 1, sw = 1;
  int ph = 0, pw = 0;
  int dh = 1, dw = 1;
  bool has_bias = true;

  void validate() const {
    if (in_channels < 1 || out_channels < 1 || kh < 1 || kw < 1 || sh < 1 ||
        sw < 1 || ph < 0 || pw < 0 || dh < 1 || dw < 1) {
      throw ConfigError("conv spec: all extents must be >= 1");
    }
  }

  std::pair<int, int> out_size(int h, int w) const {
    const int oh = (h + 2 * ph - dh * (kh - 1) - 1) / sh + 1;
    const int ow = (w + 2 * pw - dw * (kw - 1) - 1) / sw + 1;
    if (oh < 1 || ow < 1) {
      throw ConfigError("conv spec: non-positive output size for input " +
                        std::to_string(h) + "x" + std::to_string(w));
    }
    return {oh, ow};
  }
};

namespace detail {
inline thread_local bool grad_enabled = true;
}

// Disables graph recording in scope (inference / finite differences).
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_mode() { return detail::grad_enabled; }

// Worker threads used inside heavy kernels (gemm). Default 1; output is
// bitwise independent of the setting (threads own disjoint output tiles).
inline int& compute_threads() {
  static int n = 1;
  return n;
}

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until backward touches this node
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode<T>>> inputs;
  std::function<void(TensorNode<T>&)> backward_fn;
};

template <typename T>
std::vector<T>& ensure_grad(TensorNode<T>& n) {
  if (n.grad.empty()) n.grad.assign(n.value.size(), T(0));
  return n.grad;
}

// Dense N-D array and autodiff node handle. Copies share the node.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) {
    return from(std::move(shape), {});
  }

  static Tensor full(Shape shape, T v) {
    Tensor t;
    t.node_ = std::make_shared<TensorNode<T>>();
    t.node_->shape = std::move(shape);
    t.node_->value.assign(shape_numel(t.node_->shape), v);
    return t;
  }

  static Tensor scalar(T v) { return full({1}, v); }

  static Tensor from(Shape shape, std::vector<T> value) {
    Tensor t;
    t.node_ = std::make_shared<TensorNode<T>>();
    const auto n = shape_numel(shape);
    if (value.empty()) value.assign(n, T(0));
    if (static_cast<std::int64_t>(value.size()) != n) {
      throw ConfigError("tensor: data size does not match shape " +
                        shape_str(shape));
    }
    for (T v : value) {
      if (!std::isfinite(static_cast<double>(v))) {
        throw NumericsError("tensor: non-finite input value");
      }
    }
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(value);
    return t;
  }

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[i]; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }

  std::vector<T>& values() { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }

  T& operator[](std::size_t i) { return node_->value[i]; }
  const T& operator[](std::size_t i) const { return node_->value[i]; }

  // NCHW accessor.
  T& at(int n, int c, int h, int w) {
    const Shape& s = node_->shape;
    return node_->value[((static_cast<std::size_t>(n) * s[1] + c) * s[2] + h) * s[3] + w];
  }
  const T& at(int n, int c, int h, int w) const {
    return const_cast<Tensor*>(this)->at(n, c, h, w);
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    node_->requires_grad = b;
    return *this;
  }

  const std::vector<T>& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }
  void drop_grad() { node_->grad.clear(); }

  // Value copy detached from the graph.
  Tensor detach() const {
    Tensor t;
    t.node_ = std::make_shared<TensorNode<T>>();
    t.node_->shape = node_->shape;
    t.node_->value = node_->value;
    return t;
  }

  std::shared_ptr<TensorNode<T>>& node() { return node_; }
  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

namespace detail {

template <typename T>
void check_finite(const std::vector<T>& v, const char* op) {
  for (const T x : v) {
    if (!std::isfinite(static_cast<double>(x))) {
      throw NumericsError(std::string(op) + ": produced non-finite value");
    }
  }
}

// Builds an op result node. Backward is recorded only when grad mode is on
// and some input requires grad.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(TensorNode<T>&)> backward) {
  check_finite(value, op);
  Tensor<T> out = Tensor<T>::from(std::move(shape), std::move(value));
  out.node()->op = op;
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (grad_enabled && needs) {
    out.node()->requires_grad = true;
    for (auto& in : inputs) out.node()->inputs.push_back(in.node());
    out.node()->backward_fn = std::move(backward);
  }
  return out;
}

// --- GEMM kernels. A, B, C row-major; all accumulate into C. ---

// C[MxN] += A[MxK] * B[KxN]. Tiled over N so the C tile stays cache-resident.
template <typename T>
void gemm_nn(int M, int N, int K, const T* A, const T* B, T* C) {
  constexpr int kTile = 512;
  const int tiles = (N + kTile - 1) / kTile;
#if defined(_OPENMP)
#pragma omp parallel for schedule(static) num_threads(compute_threads()) \
    if (compute_threads() > 1 && tiles > 1)
#endif
  for (int t = 0; t < tiles; ++t) {
    const int n0 = t * kTile;
    const int nw = std::min(kTile, N - n0);
    for (int k = 0; k < K; ++k) {
      const T* b = B + static_cast<std::size_t>(k) * N + n0;
      for (int i = 0; i < M; ++i) {
        const T a = A[static_cast<std::size_t>(i) * K + k];
        T* c = C + static_cast<std::size_t>(i) * N + n0;
        for (int j = 0; j < nw; ++j) c[j] += a * b[j];
      }
    }
  }
}

// C[MxN] += A[MxK] * B[NxK]^T (dot-product form).
template <typename T>
void gemm_nt(int M, int N, int K, const T* A, const T* B, T* C) {
  for (int i = 0; i < M; ++i) {
    const T* a = A + static_cast<std::size_t>(i) * K;
    for (int j = 0; j < N; ++j) {
      const T* b = B + static_cast<std::size_t>(j) * K;
      T acc = 0;
      for (int k = 0; k < K; ++k) acc += a[k] * b[k];
      C[static_cast<std::size_t>(i) * N + j] += acc;
    }
  }
}

// C[MxN] += A[KxM]^T * B[KxN].
template <typename T>
void gemm_tn(int M, int N, int K, const T* A, const T* B, T* C) {
  for (int k = 0; k < K; ++k) {
    const T* a = A + static_cast<std::size_t>(k) * M;
    const T* b = B + static_cast<std::size_t>(k) * N;
    for (int i = 0; i < M; ++i) {
      const T ai = a[i];
      T* c = C + static_cast<std::size_t>(i) * N;
      for (int j = 0; j < N; ++j) c[j] += ai * b[j];
    }
  }
}

// Unrolls conv patches of one image into cols[K x OHW], K = Ci*kh*kw.
template <typename T>
void im2col(const T* x, int C, int H, int W, const ConvSpec& s, int oh, int ow,
            T* cols) {
  const std::size_t ohw = static_cast<std::size_t>(oh) * ow;
  std::size_t row = 0;
  for (int c = 0; c < C; ++c) {
    const T* plane = x + static_cast<std::size_t>(c) * H * W;
    for (int ky = 0; ky < s.kh; ++ky) {
      for (int kx = 0; kx < s.kw; ++kx, ++row) {
        T* out = cols + row * ohw;
        for (int y = 0; y < oh; ++y) {
          const int iy = y * s.sh - s.ph + ky * s.dh;
          T* line = out + static_cast<std::size_t>(y) * ow;
          if (iy < 0 || iy >= H) {
            std::fill(line, line + ow, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * W;
          if (s.sw == 1) {
            const int ix0 = -s.pw + kx * s.dw;  // input x at output x=0
            int xs = std::max(0, -ix0);
            int xe = std::min(ow, W - ix0);
            if (xs >= xe) {
              std::fill(line, line + ow, T(0));
              continue;
            }
            std::fill(line, line + xs, T(0));
            std::copy(src + ix0 + xs, src + ix0 + xe, line + xs);
            std::fill(line + xe, line + ow, T(0));
          } else {
            for (int xo = 0; xo < ow; ++xo) {
              const int ix = xo * s.sw - s.pw + kx * s.dw;
              line[xo] = (ix < 0 || ix >= W) ? T(0) : src[ix];
            }
          }
        }
      }
    }
  }
}

// Scatter-add of col gradients back to the input image.
template <typename T>
void col2im_add(const T* cols, int C, int H, int W, const ConvSpec& s, int oh,
                int ow, T* dx) {
  const std::size_t ohw = static_cast<std::size_t>(oh) * ow;
  std::size_t row = 0;
  for (int c = 0; c < C; ++c) {
    T* plane = dx + static_cast<std::size_t>(c) * H * W;
    for (int ky = 0; ky < s.kh; ++ky) {
      for (int kx = 0; kx < s.kw; ++kx, ++row) {
        const T* in = cols + row * ohw;
        for (int y = 0; y < oh; ++y) {
          const int iy = y * s.sh - s.ph + ky * s.dh;
          if (iy < 0 || iy >= H) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * W;
          const T* line = in + static_cast<std::size_t>(y) * ow;
          for (int xo = 0; xo < ow; ++xo) {
            const int ix = xo * s.sw - s.pw + kx * s.dw;
            if (ix >= 0 && ix < W) dst[ix] += line[xo];
          }
        }
      }
    }
  }
}

// Per-axis bilinear resampling table, half-pixel centers, edge clamped.
template <typename T>
struct ResampleAxis {
  std::vector<int> i0, i1;
  std::vector<T> w1;  // weight of i1; i0 gets 1-w1
};

template <typename T>
ResampleAxis<T> resample_axis(int in, int out) {
  ResampleAxis<T> ax;
  ax.i0.resize(out);
  ax.i1.resize(out);
  ax.w1.resize(out);
  const double scale = static_cast<double>(in) / out;
  for (int d = 0; d < out; ++d) {
    double s = (d + 0.5) * scale - 0.5;
    s = std::min(std::max(s, 0.0), static_cast<double>(in - 1));
    const int i0 = static_cast<int>(s);
    ax.i0[d] = i0;
    ax.i1[d] = std::min(i0 + 1, in - 1);
    ax.w1[d] = static_cast<T>(s - i0);
  }
  return ax;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

// Cross-correlation with zero padding; differentiable w.r.t. input, weights
// and bias. weights: [Co, Ci, kh, kw], bias: [Co].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvSpec& spec, const Tensor<T>& w,
                 const std::optional<Tensor<T>>& bias = std::nullopt) {
  spec.validate();
  if (x.rank() != 4) throw ConfigError("conv2d: input must be NCHW");
  if (x.dim(1) != spec.in_channels) {
    throw ConfigError("conv2d: input channels " + std::to_string(x.dim(1)) +
                      " do not match spec " + std::to_string(spec.in_channels));
  }
  const Shape want = {spec.out_channels, spec.in_channels, spec.kh, spec.kw};
  if (w.shape() != want) {
    throw ConfigError("conv2d: weight shape " + shape_str(w.shape()) +
                      " does not match spec " + shape_str(want));
  }
  if (spec.has_bias != bias.has_value()) {
    throw ConfigError("conv2d: bias presence does not match spec");
  }
  if (bias && bias->shape() != Shape{spec.out_channels}) {
    throw ConfigError("conv2d: bias shape mismatch");
  }

  const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
  const auto [oh, ow] = spec.out_size(H, W);
  const int K = spec.in_channels * spec.kh * spec.kw;
  const std::size_t ohw = static_cast<std::size_t>(oh) * ow;
  const std::size_t in_plane = static_cast<std::size_t>(x.dim(1)) * H * W;

  std::vector<T> out(static_cast<std::size_t>(N) * spec.out_channels * ohw, T(0));
  std::vector<T> cols(static_cast<std::size_t>(K) * ohw);
  for (int n = 0; n < N; ++n) {
    detail::im2col(x.values().data() + n * in_plane, spec.in_channels, H, W,
                   spec, oh, ow, cols.data());
    T* y = out.data() + static_cast<std::size_t>(n) * spec.out_channels * ohw;
    detail::gemm_nn(spec.out_channels, static_cast<int>(ohw), K,
                    w.values().data(), cols.data(), y);
    if (bias) {
      for (int co = 0; co < spec.out_channels; ++co) {
        const T b = bias->values()[co];
        T* row = y + static_cast<std::size_t>(co) * ohw;
        for (std::size_t j = 0; j < ohw; ++j) row[j] += b;
      }
    }
  }

  std::vector<Tensor<T>> inputs = {x, w};
  if (bias) inputs.push_back(*bias);
  auto xs = x, ws = w;
  auto bs = bias;
  ConvSpec sp = spec;
  return detail::make_result<T>(
      "conv2d", {N, spec.out_channels, oh, ow}, std::move(out), inputs,
      [xs, ws, bs, sp, oh, ow, K](TensorNode<T>& o) mutable {
        const int N = xs.dim(0), H = xs.dim(2), W = xs.dim(3);
        const std::size_t ohw = static_cast<std::size_t>(oh) * ow;
        const std::size_t in_plane =
            static_cast<std::size_t>(xs.dim(1)) * H * W;
        std::vector<T> cols(static_cast<std::size_t>(K) * ohw);
        std::vector<T> dcols;
        const bool need_dx = xs.requires_grad();
        const bool need_dw = ws.requires_grad();
        if (need_dx) dcols.resize(cols.size());
        std::vector<T>* dw = need_dw ? &ensure_grad(*ws.node()) : nullptr;
        std::vector<T>* dx = need_dx ? &ensure_grad(*xs.node()) : nullptr;
        std::vector<T>* db =
            (bs && bs->requires_grad()) ? &ensure_grad(*bs->node()) : nullptr;
        for (int n = 0; n < N; ++n) {
          const T* dy = o.grad.data() +
                        static_cast<std::size_t>(n) * sp.out_channels * ohw;
          if (need_dw) {
            detail::im2col(xs.values().data() + n * in_plane, sp.in_channels,
                           H, W, sp, oh, ow, cols.data());
          }
          if (need_dw) {
            detail::gemm_nt(sp.out_channels, K, static_cast<int>(ohw), dy,
                            cols.data(), dw->data());
          }
          if (db) {
            for (int co = 0; co < sp.out_channels; ++co) {
              T acc = 0;
              const T* row = dy + static_cast<std::size_t>(co) * ohw;
              for (std::size_t j = 0; j < ohw; ++j) acc += row[j];
              (*db)[co] += acc;
            }
          }
          if (need_dx) {
            std::fill(dcols.begin(), dcols.end(), T(0));
            detail::gemm_tn(K, static_cast<int>(ohw), sp.out_channels,
                            ws.values().data(), dy, dcols.data());
            detail::col2im_add(dcols.data(), sp.in_channels, H, W, sp, oh, ow,
                               dx->data() + n * in_plane);
          }
        }
      });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvSpec& spec, const Tensor<T>& w,
                 const Tensor<T>& bias) {
  return conv2d(x, spec, w, std::optional<Tensor<T>>(bias));
}

// 2x2/2 max pooling; requires even spatial extents. Gradient goes to the
// first maximal element in row-major window order.
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x) {
  if (x.rank() != 4) throw ConfigError("max_pool2d: input must be NCHW");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 != 0 || W % 2 != 0) {
    throw ConfigError("max_pool2d: spatial extents must be even, got " +
                      std::to_string(H) + "x" + std::to_string(W));
  }
  const int oh = H / 2, ow = W / 2;
  std::vector<T> out(static_cast<std::size_t>(N) * C * oh * ow);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  const auto& v = x.values();
  std::size_t o = 0;
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const std::size_t base =
          (static_cast<std::size_t>(n) * C + c) * H * W;
      for (int y = 0; y < oh; ++y) {
        for (int xo = 0; xo < ow; ++xo, ++o) {
          const std::size_t p = base + static_cast<std::size_t>(2 * y) * W + 2 * xo;
          std::size_t best = p;
          T bv = v[p];
          const std::size_t cand[3] = {p + 1, p + W, p + W + 1};
          for (std::size_t q : cand) {
            if (v[q] > bv) {
              bv = v[q];
              best = q;
            }
          }
          out[o] = bv;
          (*argmax)[o] = best;
        }
      }
    }
  }
  auto xs = x;
  return detail::make_result<T>(
      "max_pool2d", {N, C, oh, ow}, std::move(out), {x},
      [xs, argmax](TensorNode<T>& node) mutable {
        auto& dx = ensure_grad(*xs.node());
        for (std::size_t i = 0; i < node.grad.size(); ++i) {
          dx[(*argmax)[i]] += node.grad[i];
        }
      });
}

// Bilinear resize with half-pixel centers and edge clamping.
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, int out_h, int out_w) {
  if (x.rank() != 4) throw ConfigError("upsample_bilinear: input must be NCHW");
  if (out_h < 1 || out_w < 1) {
    throw ConfigError("upsample_bilinear: output extents must be >= 1");
  }
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  auto xs = x;
  if (out_h == H && out_w == W) {  // identity resize is bit-exact
    std::vector<T> out = x.values();
    return detail::make_result<T>(
        "upsample_bilinear", {N, C, H, W}, std::move(out), {x},
        [xs](TensorNode<T>& node) mutable {
          auto& dx = ensure_grad(*xs.node());
          for (std::size_t i = 0; i < node.grad.size(); ++i) {
            dx[i] += node.grad[i];
          }
        });
  }
  const auto ay = detail::resample_axis<T>(H, out_h);
  const auto ax = detail::resample_axis<T>(W, out_w);
  std::vector<T> out(static_cast<std::size_t>(N) * C * out_h * out_w);
  const auto& v = x.values();
  std::size_t o = 0;
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * C + c) * H * W;
      for (int y = 0; y < out_h; ++y) {
        const std::size_t r0 = base + static_cast<std::size_t>(ay.i0[y]) * W;
        const std::size_t r1 = base + static_cast<std::size_t>(ay.i1[y]) * W;
        const T fy = ay.w1[y];
        for (int xo = 0; xo < out_w; ++xo, ++o) {
          const T fx = ax.w1[xo];
          const T top = v[r0 + ax.i0[xo]] * (T(1) - fx) + v[r0 + ax.i1[xo]] * fx;
          const T bot = v[r1 + ax.i0[xo]] * (T(1) - fx) + v[r1 + ax.i1[xo]] * fx;
          out[o] = top * (T(1) - fy) + bot * fy;
        }
      }
    }
  }
  return detail::make_result<T>(
      "upsample_bilinear", {N, C, out_h, out_w}, std::move(out), {x},
      [xs, ay, ax, out_h, out_w](TensorNode<T>& node) mutable {
        const int N = xs.dim(0), C = xs.dim(1), H = xs.dim(2), W = xs.dim(3);
        auto& dx = ensure_grad(*xs.node());
        std::size_t o = 0;
        for (int n = 0; n < N; ++n) {
          for (int c = 0; c < C; ++c) {
            const std::size_t base =
                (static_cast<std::size_t>(n) * C + c) * H * W;
            for (int y = 0; y < out_h; ++y) {
              const std::size_t r0 = base + static_cast<std::size_t>(ay.i0[y]) * W;
              const std::size_t r1 = base + static_cast<std::size_t>(ay.i1[y]) * W;
              const T fy = ay.w1[y];
              for (int xo = 0; xo < out_w; ++xo, ++o) {
                const T fx = ax.w1[xo];
                const T g = node.grad[o];
                dx[r0 + ax.i0[xo]] += g * (T(1) - fy) * (T(1) - fx);
                dx[r0 + ax.i1[xo]] += g * (T(1) - fy) * fx;
                dx[r1 + ax.i0[xo]] += g * fy * (T(1) - fx);
                dx[r1 + ax.i1[xo]] += g * fy * fx;
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x.values()[i] > T(0) ? x.values()[i] : T(0);
  }
  auto xs = x;
  return detail::make_result<T>(
      "relu", x.shape(), std::move(out), {x}, [xs](TensorNode<T>& node) mutable {
        auto& dx = ensure_grad(*xs.node());
        const auto& v = xs.values();
        for (std::size_t i = 0; i < node.grad.size(); ++i) {
          if (v[i] > T(0)) dx[i] += node.grad[i];
        }
      });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x.values()[i];
    if (v >= T(0)) {
      out[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T(1) + e);
    }
  }
  auto xs = x;
  return detail::make_result<T>(
      "sigmoid", x.shape(), std::move(out), {x},
      [xs](TensorNode<T>& node) mutable {
        auto& dx = ensure_grad(*xs.node());
        for (std::size_t i = 0; i < node.grad.size(); ++i) {
          const T y = node.value[i];
          dx[i] += node.grad[i] * y * (T(1) - y);
        }
      });
}

enum class Eltwise { add, sub, mul };

// Elementwise op; b may be a single-channel map broadcast over a's channels.
template <typename T>
Tensor<T> eltwise(const Tensor<T>& a, const Tensor<T>& b, Eltwise mode) {
  const bool same = a.shape() == b.shape();
  const bool bcast = !same && a.rank() == 4 && b.rank() == 4 &&
                     b.dim(1) == 1 && a.dim(0) == b.dim(0) &&
                     a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3);
  if (!same && !bcast) {
    throw ConfigError("eltwise: incompatible shapes " + shape_str(a.shape()) +
                      " vs " + shape_str(b.shape()));
  }
  const std::size_t plane = same ? 0
                                 : static_cast<std::size_t>(a.dim(2)) * a.dim(3);
  const std::size_t chans = same ? 0 : static_cast<std::size_t>(a.dim(1));
  std::vector<T> out(a.values().size());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto bidx = [&](std::size_t i) {
    if (same) return i;
    const std::size_t n = i / (chans * plane);
    return n * plane + i % plane;
  };
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = av[i], y = bv[bidx(i)];
    out[i] = mode == Eltwise::add ? x + y : mode == Eltwise::sub ? x - y : x * y;
  }
  auto as = a, bs = b;
  return detail::make_result<T>(
      "eltwise", a.shape(), std::move(out), {a, b},
      [as, bs, mode, same, chans, plane](TensorNode<T>& node) mutable {
        auto bidx = [&](std::size_t i) {
          if (same) return i;
          const std::size_t n = i / (chans * plane);
          return n * plane + i % plane;
        };
        if (as.requires_grad()) {
          auto& da = ensure_grad(*as.node());
          if (mode == Eltwise::mul) {
            const auto& bv = bs.values();
            for (std::size_t i = 0; i < node.grad.size(); ++i) {
              da[i] += node.grad[i] * bv[bidx(i)];
            }
          } else {
            for (std::size_t i = 0; i < node.grad.size(); ++i) {
              da[i] += node.grad[i];
            }
          }
        }
        if (bs.requires_grad()) {
          auto& db = ensure_grad(*bs.node());
          const T sign = mode == Eltwise::sub ? T(-1) : T(1);
          if (mode == Eltwise::mul) {
            const auto& av = as.values();
            for (std::size_t i = 0; i < node.grad.size(); ++i) {
              db[bidx(i)] += node.grad[i] * av[i];
            }
          } else {
            for (std::size_t i = 0; i < node.grad.size(); ++i) {
              db[bidx(i)] += sign * node.grad[i];
            }
          }
        }
      });
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ConfigError("concat_channels: no inputs");
  const int N = parts[0].dim(0), H = parts[0].dim(2), W = parts[0].dim(3);
  int C = 0;
  for (const auto& p : parts) {
    if (p.rank() != 4 || p.dim(0) != N || p.dim(2) != H || p.dim(3) != W) {
      throw ConfigError("concat_channels: spatial/batch mismatch");
    }
    C += p.dim(1);
  }
  std::vector<T> out(static_cast<std::size_t>(N) * C * H * W);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int n = 0; n < N; ++n) {
    std::size_t coff = 0;
    for (const auto& p : parts) {
      const std::size_t sz = static_cast<std::size_t>(p.dim(1)) * plane;
      std::copy(p.values().begin() + n * sz, p.values().begin() + (n + 1) * sz,
                out.begin() + (static_cast<std::size_t>(n) * C + coff) * plane);
      coff += p.dim(1);
    }
  }
  auto ps = parts;
  return detail::make_result<T>(
      "concat_channels", {N, C, H, W}, std::move(out), parts,
      [ps, N, C, plane](TensorNode<T>& node) mutable {
        for (int n = 0; n < N; ++n) {
          std::size_t coff = 0;
          for (auto& p : ps) {
            const std::size_t sz = static_cast<std::size_t>(p.dim(1)) * plane;
            if (p.requires_grad()) {
              auto& dp = ensure_grad(*p.node());
              const T* g = node.grad.data() +
                           (static_cast<std::size_t>(n) * C + coff) * plane;
              T* d = dp.data() + n * sz;
              for (std::size_t i = 0; i < sz; ++i) d[i] += g[i];
            }
            coff += p.dim(1);
          }
        }
      });
}

// Channel range [c0, c1) of x.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int c0, int c1) {
  if (x.rank() != 4 || c0 < 0 || c1 > x.dim(1) || c0 >= c1) {
    throw ConfigError("slice_channels: bad channel range");
  }
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int SC = c1 - c0;
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::vector<T> out(static_cast<std::size_t>(N) * SC * plane);
  for (int n = 0; n < N; ++n) {
    const std::size_t src = (static_cast<std::size_t>(n) * C + c0) * plane;
    std::copy(x.values().begin() + src, x.values().begin() + src + SC * plane,
              out.begin() + static_cast<std::size_t>(n) * SC * plane);
  }
  auto xs = x;
  return detail::make_result<T>(
      "slice_channels", {N, SC, H, W}, std::move(out), {x},
      [xs, c0, SC, plane](TensorNode<T>& node) mutable {
        auto& dx = ensure_grad(*xs.node());
        const int N = xs.dim(0), C = xs.dim(1);
        for (int n = 0; n < N; ++n) {
          const T* g = node.grad.data() + static_cast<std::size_t>(n) * SC * plane;
          T* d = dx.data() + (static_cast<std::size_t>(n) * C + c0) * plane;
          for (std::size_t i = 0; i < SC * plane; ++i) d[i] += g[i];
        }
      });
}

enum class Reduce { mean, sum };

template <typename T>
Tensor<T> reduce(const Tensor<T>& x, Reduce mode) {
  if (x.numel() == 0) throw ConfigError("reduce: empty tensor");
  T acc = 0;
  for (const T v : x.values()) acc += v;
  const T scale = mode == Reduce::mean ? T(1) / static_cast<T>(x.numel()) : T(1);
  auto xs = x;
  return detail::make_result<T>(
      "reduce", {1}, {acc * scale}, {x},
      [xs, scale](TensorNode<T>& node) mutable {
        auto& dx = ensure_grad(*xs.node());
        const T g = node.grad[0] * scale;
        for (auto& d : dx) d += g;
      });
}

template <typename T>
Tensor<T> scalar_mul(const Tensor<T>& x, T c) {
  std::vector<T> out(x.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * c;
  auto xs = x;
  return detail::make_result<T>(
      "scalar_mul", x.shape(), std::move(out), {x},
      [xs, c](TensorNode<T>& node) mutable {
        auto& dx = ensure_grad(*xs.node());
        for (std::size_t i = 0; i < node.grad.size(); ++i) {
          dx[i] += c * node.grad[i];
        }
      });
}

// Gradient passes only strictly inside the interval.
template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  std::vector<T> out(x.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::min(std::max(x.values()[i], lo), hi);
  }
  auto xs = x;
  return detail::make_result<T>(
      "clamp", x.shape(), std::move(out), {x},
      [xs, lo, hi](TensorNode<T>& node) mutable {
        auto& dx = ensure_grad(*xs.node());
        const auto& v = xs.values();
        for (std::size_t i = 0; i < node.grad.size(); ++i) {
          if (v[i] > lo && v[i] < hi) dx[i] += node.grad[i];
        }
      });
}

template <typename T>
Tensor<T> log_elem(const Tensor<T>& x) {
  std::vector<T> out(x.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(x.values()[i]);
  auto xs = x;
  return detail::make_result<T>(
      "log", x.shape(), std::move(out), {x},
      [xs](TensorNode<T>& node) mutable {
        auto& dx = ensure_grad(*xs.node());
        const auto& v = xs.values();
        for (std::size_t i = 0; i < node.grad.size(); ++i) {
          dx[i] += node.grad[i] / v[i];
        }
      });
}

// ---------------------------------------------------------------------------
// Reverse pass
// ---------------------------------------------------------------------------

// Topologically ordered op records reachable from a root (inputs first).
template <typename T>
struct Graph {
  std::vector<std::shared_ptr<TensorNode<T>>> order;

  static Graph trace(const Tensor<T>& root) {
    Graph g;
    std::unordered_set<TensorNode<T>*> done;
    std::vector<std::pair<std::shared_ptr<TensorNode<T>>, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    while (!stack.empty()) {
      auto& [node, child] = stack.back();
      if (done.count(node.get())) {
        stack.pop_back();
        continue;
      }
      if (child < node->inputs.size()) {
        auto next = node->inputs[child++];
        if (!done.count(next.get())) stack.emplace_back(next, 0);
        continue;
      }
      done.insert(node.get());
      g.order.push_back(node);
      stack.pop_back();
    }
    return g;
  }
};

// Populates gradients of every requires_grad tensor reachable from `loss`.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ConfigError("backward: seed must be a scalar tensor");
  }
  Graph<T> g = Graph<T>::trace(loss);
  ensure_grad(*loss.node());
  loss.node()->grad[0] += T(1);
  for (auto it = g.order.rbegin(); it != g.order.rend(); ++it) {
    TensorNode<T>& n = **it;
    if (n.backward_fn && !n.grad.empty()) n.backward_fn(n);
  }
  for (auto& n : g.order) {
    if (n->requires_grad && !n->backward_fn) ensure_grad(*n);
  }
}

}  // namespace bianet

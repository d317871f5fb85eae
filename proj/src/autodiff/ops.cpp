#include "rage/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>

namespace rage::ops {
namespace {

template <typename T>
using RowMat =
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
using NodeT = detail::Node<T>;

void require(bool ok, const std::string& message) {
  if (!ok) throw ShapeError(message);
}

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a,
                        const Tensor<T>& b) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                      shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
}

template <typename T>
void require_rank(const char* op, const Tensor<T>& x, std::size_t rank,
                  const char* what) {
  require(x.rank() == rank, std::string(op) + ": " + what + " must have rank " +
                                std::to_string(rank) + ", got shape " +
                                shape_str(x.shape()));
}

// Parent grad buffer, or nullptr when that parent does not need one.
template <typename T>
T* parent_grad(NodeT<T>& node, std::size_t i) {
  auto& p = *node.parents[i];
  return p.requires_grad ? p.grad_buffer().data() : nullptr;
}

template <typename T>
const T* parent_value(const NodeT<T>& node, std::size_t i) {
  return node.parents[i]->value.data();
}

// Unary elementwise op whose local derivative depends on input and output.
template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  const auto in = x.data();
  Buffer<T> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return make_result<T>(x.shape(), std::move(out), {&x},
                        [deriv](NodeT<T>& self) {
                          T* gx = parent_grad(self, 0);
                          if (!gx) return;
                          const T* xv = parent_value(self, 0);
                          for (std::size_t i = 0; i < self.value.size(); ++i) {
                            gx[i] += self.grad[i] * deriv(xv[i], self.value[i]);
                          }
                        });
}

struct ConvGeom {
  std::size_t channels, height, width;
  std::size_t kh, kw, stride, pad;
  std::size_t out_h, out_w;
  std::size_t rows() const { return channels * kh * kw; }
  std::size_t cols() const { return out_h * out_w; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

// Sum of f(0..n-1) in double with four interleaved partial sums: a fixed
// order (hence reproducible) that still pipelines.
template <typename F>
double blocked_sum(std::size_t n, F f) {
  double a0 = 0, a1 = 0, a2 = 0, a3 = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    a0 += f(i);
    a1 += f(i + 1);
    a2 += f(i + 2);
    a3 += f(i + 3);
  }
  for (; i < n; ++i) a0 += f(i);
  return (a0 + a1) + (a2 + a3);
}

// Per-thread reusable work areas, so large im2col buffers are neither
// reallocated nor zero-filled on every call. Slot contents are transient.
template <typename T>
T* scratch(std::size_t slot, std::size_t size) {
  thread_local std::array<Buffer<T>, 2> buffers;
  auto& b = buffers[slot];
  if (b.size() < size) b.resize(size);
  return b.data();
}

// Output columns [lo, hi) of kernel tap kj read inside the input row.
inline std::pair<std::size_t, std::size_t> valid_columns(const ConvGeom& g,
                                                         std::size_t kj) {
  const auto first = static_cast<std::ptrdiff_t>(g.pad) - static_cast<std::ptrdiff_t>(kj);
  const auto last = static_cast<std::ptrdiff_t>(g.width + g.pad) -
                    static_cast<std::ptrdiff_t>(kj);  // ix < width
  const auto s = static_cast<std::ptrdiff_t>(g.stride);
  const std::ptrdiff_t lo = first <= 0 ? 0 : (first + s - 1) / s;
  const std::ptrdiff_t hi = last <= 0 ? 0 : (last + s - 1) / s;
  const auto clamp = [&](std::ptrdiff_t v) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, g.out_w));
  };
  return {clamp(lo), std::max(clamp(lo), clamp(hi))};
}

template <typename T>
void im2col(const T* in, const ConvGeom& g, T* cols) {
  const std::size_t plane = g.cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* src = in + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* dst = cols + ((c * g.kh + ki) * g.kw + kj) * plane;
        const auto [lo, hi] = valid_columns(g, kj);
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                          static_cast<std::ptrdiff_t>(g.pad);
          T* row = dst + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(row, row + g.out_w, T(0));
            continue;
          }
          std::fill(row, row + lo, T(0));
          std::fill(row + hi, row + g.out_w, T(0));
          if (lo == hi) continue;
          // First in-range input column; ix = ox * stride + kj - pad.
          const T* src_row = src + iy * g.width + (lo * g.stride + kj - g.pad);
          if (g.stride == 1) {
            std::copy(src_row, src_row + (hi - lo), row + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) {
              row[ox] = src_row[(ox - lo) * g.stride];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeom& g, T* in_grad) {
  const std::size_t plane = g.cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* dst = in_grad + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* src = cols + ((c * g.kh + ki) * g.kw + kj) * plane;
        const auto [lo, hi] = valid_columns(g, kj);
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                          static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height) || lo == hi) continue;
          T* dst_row = dst + iy * g.width + (lo * g.stride + kj - g.pad);
          const T* row = src + oy * g.out_w;
          for (std::size_t ox = lo; ox < hi; ++ox) {
            dst_row[(ox - lo) * g.stride] += row[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding) {
  require_rank("conv2d", input, 4, "input");
  require_rank("conv2d", weight, 4, "weight");
  require(stride > 0, "conv2d: stride must be positive");
  const std::size_t batch = input.dim(0);
  const std::size_t out_ch = weight.dim(0);
  ConvGeom g{input.dim(1), input.dim(2), input.dim(3), weight.dim(2),
             weight.dim(3), stride, padding, 0, 0};
  require(weight.dim(1) == g.channels,
          "conv2d: input has " + std::to_string(g.channels) +
              " channels but weight " + shape_str(weight.shape()) +
              " expects " + std::to_string(weight.dim(1)));
  require(bias.shape() == Shape{out_ch},
          "conv2d: bias shape " + shape_str(bias.shape()) + " does not match " +
              std::to_string(out_ch) + " output channels");
  require(g.height + 2 * padding >= g.kh && g.width + 2 * padding >= g.kw,
          "conv2d: kernel " + shape_str(weight.shape()) +
              " larger than padded input " + shape_str(input.shape()));
  g.out_h = (g.height + 2 * padding - g.kh) / stride + 1;
  g.out_w = (g.width + 2 * padding - g.kw) / stride + 1;
  require(g.height > 0 && g.width > 0 && g.channels > 0 && out_ch > 0,
          "conv2d: zero-extent tensor " + shape_str(input.shape()) + " * " +
              shape_str(weight.shape()));

  const std::size_t in_plane = g.channels * g.height * g.width;
  const std::size_t out_plane = out_ch * g.cols();
  Buffer<T> out(batch * out_plane);
  T* cols = g.pointwise() ? nullptr : scratch<T>(0, g.rows() * g.cols());
  ConstMapMat<T> w(weight.data().data(), out_ch, g.rows());
  const auto b = bias.data();
  for (std::size_t n = 0; n < batch; ++n) {
    const T* src = input.data().data() + n * in_plane;
    if (!g.pointwise()) im2col(src, g, cols);
    ConstMapMat<T> c(g.pointwise() ? src : cols, g.rows(), g.cols());
    MapMat<T> o(out.data() + n * out_plane, out_ch, g.cols());
    o.noalias() = w * c;
    for (std::size_t oc = 0; oc < out_ch; ++oc) o.row(oc).array() += b[oc];
  }

  return make_result<T>(
      Shape{batch, out_ch, g.out_h, g.out_w}, std::move(out),
      {&input, &weight, &bias}, [g, batch, out_ch](NodeT<T>& self) {
        T* gin = parent_grad(self, 0);
        T* gw = parent_grad(self, 1);
        T* gb = parent_grad(self, 2);
        const T* in = parent_value(self, 0);
        ConstMapMat<T> w(parent_value(self, 1), out_ch, g.rows());
        const std::size_t in_plane = g.channels * g.height * g.width;
        const std::size_t out_plane = out_ch * g.cols();
        // Stride-1 input gradient as a correlation of the output gradient
        // with the flipped, transposed kernel; avoids col2im.
        const bool transposed = gin && !g.pointwise() && g.stride == 1 &&
                                g.kh == g.kw && g.pad < g.kh;
        const ConvGeom gt{out_ch, g.out_h, g.out_w, g.kh, g.kw, 1,
                          g.kh - 1 - std::min(g.pad, g.kh - 1), g.height, g.width};
        RowMat<T> flipped;
        if (transposed) {
          flipped.resize(g.channels, gt.rows());
          const T* wv = parent_value(self, 1);
          for (std::size_t o = 0; o < out_ch; ++o) {
            for (std::size_t c = 0; c < g.channels; ++c) {
              for (std::size_t i = 0; i < g.kh; ++i) {
                for (std::size_t j = 0; j < g.kw; ++j) {
                  flipped(c, (o * g.kh + (g.kh - 1 - i)) * g.kw + (g.kw - 1 - j)) =
                      wv[((o * g.channels + c) * g.kh + i) * g.kw + j];
                }
              }
            }
          }
        }
        T* cols = g.pointwise() ? nullptr : scratch<T>(0, g.rows() * g.cols());
        for (std::size_t n = 0; n < batch; ++n) {
          const T* go_ptr = self.grad.data() + n * out_plane;
          ConstMapMat<T> go(go_ptr, out_ch, g.cols());
          if (gb) {
            for (std::size_t oc = 0; oc < out_ch; ++oc) {
              const T* row = go_ptr + oc * g.cols();
              gb[oc] += static_cast<T>(
                  blocked_sum(g.cols(), [row](std::size_t i) { return double(row[i]); }));
            }
          }
          if (gw) {
            const T* c_ptr = in + n * in_plane;
            if (!g.pointwise()) {
              im2col(c_ptr, g, cols);
              c_ptr = cols;
            }
            ConstMapMat<T> c(c_ptr, g.rows(), g.cols());
            MapMat<T>(gw, out_ch, g.rows()).noalias() += go * c.transpose();
          }
          if (!gin) continue;
          MapMat<T> gi(gin + n * in_plane, g.channels, g.height * g.width);
          if (g.pointwise()) {
            gi.noalias() += w.transpose() * go;
          } else if (transposed) {
            T* gcols = scratch<T>(1, gt.rows() * gt.cols());
            im2col(go_ptr, gt, gcols);
            gi.noalias() += flipped * ConstMapMat<T>(gcols, gt.rows(), gt.cols());
          } else {
            MapMat<T> c(cols, g.rows(), g.cols());
            c.noalias() = w.transpose() * go;
            col2im_add(cols, g, gin + n * in_plane);
          }
        }
      });
}

template <typename T>
Tensor<T> upsample2x(const Tensor<T>& input) {
  require(input.rank() >= 2, "upsample2x: input needs at least 2 axes, got " +
                                 shape_str(input.shape()));
  const std::size_t h = input.dim(input.rank() - 2);
  const std::size_t w = input.dim(input.rank() - 1);
  require(h >= 1 && w >= 1, "upsample2x: empty spatial extent " +
                                shape_str(input.shape()));
  const std::size_t planes = input.numel() / (h * w);
  Shape out_shape = input.shape();
  out_shape[out_shape.size() - 2] = 2 * h;
  out_shape[out_shape.size() - 1] = 2 * w;
  Buffer<T> out(input.numel() * 4);
  const T* in = input.data().data();
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = in + p * h * w;
    T* dst = out.data() + p * 4 * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      T* r0 = dst + (2 * y) * (2 * w);
      T* r1 = r0 + 2 * w;
      for (std::size_t x = 0; x < w; ++x) {
        const T v = src[y * w + x];
        r0[2 * x] = r0[2 * x + 1] = r1[2 * x] = r1[2 * x + 1] = v;
      }
    }
  }
  return make_result<T>(std::move(out_shape), std::move(out), {&input},
                        [planes, h, w](NodeT<T>& self) {
                          T* gin = parent_grad(self, 0);
                          if (!gin) return;
                          for (std::size_t p = 0; p < planes; ++p) {
                            const T* go = self.grad.data() + p * 4 * h * w;
                            T* gi = gin + p * h * w;
                            for (std::size_t y = 0; y < h; ++y) {
                              const T* r0 = go + (2 * y) * (2 * w);
                              const T* r1 = r0 + 2 * w;
                              for (std::size_t x = 0; x < w; ++x) {
                                gi[y * w + x] += r0[2 * x] + r0[2 * x + 1] +
                                                 r1[2 * x] + r1[2 * x + 1];
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("add", a, b);
  Buffer<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b},
                        [](NodeT<T>& self) {
                          for (std::size_t p = 0; p < 2; ++p) {
                            if (T* g = parent_grad(self, p)) {
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                g[i] += self.grad[i];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("sub", a, b);
  Buffer<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b},
                        [](NodeT<T>& self) {
                          if (T* g = parent_grad(self, 0)) {
                            for (std::size_t i = 0; i < self.grad.size(); ++i)
                              g[i] += self.grad[i];
                          }
                          if (T* g = parent_grad(self, 1)) {
                            for (std::size_t i = 0; i < self.grad.size(); ++i)
                              g[i] -= self.grad[i];
                          }
                        });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("mul", a, b);
  Buffer<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b},
                        [](NodeT<T>& self) {
                          const T* av = parent_value(self, 0);
                          const T* bv = parent_value(self, 1);
                          if (T* g = parent_grad(self, 0)) {
                            for (std::size_t i = 0; i < self.grad.size(); ++i)
                              g[i] += self.grad[i] * bv[i];
                          }
                          if (T* g = parent_grad(self, 1)) {
                            for (std::size_t i = 0; i < self.grad.size(); ++i)
                              g[i] += self.grad[i] * av[i];
                          }
                        });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return mul_scalar(a, T(-1));
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T b) {
  return unary<T>(
      a, [b](T x) { return x + b; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T b) {
  return unary<T>(
      a, [b](T x) { return x * b; }, [b](T, T) { return b; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary<T>(
      x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T s) { return s * (T(1) - s); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary<T>(
      x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return unary<T>(
      x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  for (T v : x.data()) {
    require(v > T(0), "sqrt: input must be strictly positive");
  }
  return unary<T>(
      x, [](T v) { return std::sqrt(v); },
      [](T, T s) { return T(0.5) / s; });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  return make_result<T>(Shape{}, Buffer<T>{total}, {&x},
                        [](NodeT<T>& self) {
                          T* g = parent_grad(self, 0);
                          if (!g) return;
                          const std::size_t n = self.parents[0]->value.size();
                          for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
                        });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  require(x.numel() > 0, "mean: empty tensor");
  return mul_scalar(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k,
                               const Tensor<T>& v, std::vector<T>* weights_out) {
  require_rank("scaled_dot_attention", q, 3, "q");
  require_rank("scaled_dot_attention", k, 3, "k");
  require_rank("scaled_dot_attention", v, 3, "v");
  const std::size_t batch = q.dim(0), len = q.dim(1), dk = q.dim(2);
  const std::size_t dv = v.dim(2);
  require(dk > 0, "scaled_dot_attention: key dimension must be positive");
  require(k.dim(0) == batch && v.dim(0) == batch && k.dim(1) == len &&
              v.dim(1) == len && k.dim(2) == dk,
          "scaled_dot_attention: incompatible shapes q" + shape_str(q.shape()) +
              " k" + shape_str(k.shape()) + " v" + shape_str(v.shape()));
  const T scale = T(1) / std::sqrt(static_cast<T>(dk));

  Buffer<T> weights(batch * len * len);
  Buffer<T> out(batch * len * dv);
  for (std::size_t n = 0; n < batch; ++n) {
    ConstMapMat<T> qm(q.data().data() + n * len * dk, len, dk);
    ConstMapMat<T> km(k.data().data() + n * len * dk, len, dk);
    ConstMapMat<T> vm(v.data().data() + n * len * dv, len, dv);
    MapMat<T> a(weights.data() + n * len * len, len, len);
    a.noalias() = (qm * km.transpose()) * scale;
    for (std::size_t r = 0; r < len; ++r) {
      auto row = a.row(r).array();
      row -= row.maxCoeff();
      row = row.exp();
      row /= row.sum();
    }
    MapMat<T>(out.data() + n * len * dv, len, dv).noalias() = a * vm;
  }
  if (weights_out) weights_out->assign(weights.begin(), weights.end());

  return make_result<T>(
      Shape{batch, len, dv}, std::move(out), {&q, &k, &v},
      [batch, len, dk, dv, scale, weights = std::move(weights)](NodeT<T>& self) {
        T* gq = parent_grad(self, 0);
        T* gk = parent_grad(self, 1);
        T* gv = parent_grad(self, 2);
        RowMat<T> ds(len, len);
        for (std::size_t n = 0; n < batch; ++n) {
          ConstMapMat<T> qm(parent_value(self, 0) + n * len * dk, len, dk);
          ConstMapMat<T> km(parent_value(self, 1) + n * len * dk, len, dk);
          ConstMapMat<T> vm(parent_value(self, 2) + n * len * dv, len, dv);
          ConstMapMat<T> a(weights.data() + n * len * len, len, len);
          ConstMapMat<T> go(self.grad.data() + n * len * dv, len, dv);
          if (gv) MapMat<T>(gv + n * len * dv, len, dv).noalias() += a.transpose() * go;
          if (!gq && !gk) continue;
          ds.noalias() = go * vm.transpose();
          for (std::size_t r = 0; r < len; ++r) {
            const T dot = (ds.row(r).array() * a.row(r).array()).sum();
            ds.row(r).array() = a.row(r).array() * (ds.row(r).array() - dot);
          }
          if (gq) MapMat<T>(gq + n * len * dk, len, dk).noalias() += (ds * km) * scale;
          if (gk) {
            MapMat<T>(gk + n * len * dk, len, dk).noalias() +=
                (ds.transpose() * qm) * scale;
          }
        }
      });
}

template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, std::size_t groups, T eps) {
  require(x.rank() >= 2, "group_norm: input needs [N,C,...], got " +
                             shape_str(x.shape()));
  const std::size_t batch = x.dim(0), channels = x.dim(1);
  require(groups > 0 && channels % groups == 0,
          "group_norm: " + std::to_string(channels) +
              " channels not divisible into " + std::to_string(groups) +
              " groups");
  require(gamma.shape() == Shape{channels} && beta.shape() == Shape{channels},
          "group_norm: affine parameters must have shape [" +
              std::to_string(channels) + "]");
  const std::size_t spatial = x.numel() / (batch * channels);
  const std::size_t per_group = channels / groups;
  const std::size_t count = per_group * spatial;
  require(count > 0, "group_norm: empty group");

  Buffer<T> xhat(x.numel());
  Buffer<T> inv_std(batch * groups);
  Buffer<T> out(x.numel());
  const T* in = x.data().data();
  const T* ga = gamma.data().data();
  const T* be = beta.data().data();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t base = (n * channels + g * per_group) * spatial;
      const T* v = in + base;
      const double mu = blocked_sum(count, [v](std::size_t i) { return double(v[i]); }) /
                        double(count);
      const double var = blocked_sum(count, [v, mu](std::size_t i) {
                           const double d = double(v[i]) - mu;
                           return d * d;
                         }) / double(count);
      const T is = static_cast<T>(1.0 / std::sqrt(var + double(eps)));
      const T m = static_cast<T>(mu);
      inv_std[n * groups + g] = is;
      for (std::size_t c = 0; c < per_group; ++c) {
        const std::size_t ch = g * per_group + c;
        const std::size_t off = base + c * spatial;
        for (std::size_t s = 0; s < spatial; ++s) {
          const T h = (in[off + s] - m) * is;
          xhat[off + s] = h;
          out[off + s] = ga[ch] * h + be[ch];
        }
      }
    }
  }

  return make_result<T>(
      x.shape(), std::move(out), {&x, &gamma, &beta},
      [batch, channels, groups, spatial, per_group, count,
       xhat = std::move(xhat), inv_std = std::move(inv_std)](NodeT<T>& self) {
        T* gx = parent_grad(self, 0);
        T* gg = parent_grad(self, 1);
        T* gb = parent_grad(self, 2);
        const T* ga = parent_value(self, 1);
        const T* go = self.grad.data();
        for (std::size_t n = 0; n < batch; ++n) {
          for (std::size_t g = 0; g < groups; ++g) {
            const std::size_t base = (n * channels + g * per_group) * spatial;
            double mean_d = 0, mean_dx = 0;
            for (std::size_t c = 0; c < per_group; ++c) {
              const std::size_t ch = g * per_group + c;
              const T* gop = go + base + c * spatial;
              const T* h = xhat.data() + base + c * spatial;
              const double sg = blocked_sum(spatial, [gop](std::size_t i) { return double(gop[i]); });
              const double sgh = blocked_sum(
                  spatial, [gop, h](std::size_t i) { return double(gop[i]) * double(h[i]); });
              if (gg) gg[ch] += static_cast<T>(sgh);
              if (gb) gb[ch] += static_cast<T>(sg);
              mean_d += double(ga[ch]) * sg;
              mean_dx += double(ga[ch]) * sgh;
            }
            if (!gx) continue;
            const T md = static_cast<T>(mean_d / double(count));
            const T mdx = static_cast<T>(mean_dx / double(count));
            const T is = inv_std[n * groups + g];
            for (std::size_t c = 0; c < per_group; ++c) {
              const std::size_t ch = g * per_group + c;
              for (std::size_t s = 0; s < spatial; ++s) {
                const std::size_t i = base + c * spatial + s;
                gx[i] += is * (go[i] * ga[ch] - md - xhat[i] * mdx);
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin,
                         std::size_t count) {
  require(x.rank() >= 2, "slice_channels: input needs [N,C,...], got " +
                             shape_str(x.shape()));
  const std::size_t batch = x.dim(0), channels = x.dim(1);
  require(count > 0 && begin + count <= channels,
          "slice_channels: range [" + std::to_string(begin) + "," +
              std::to_string(begin + count) + ") outside " +
              std::to_string(channels) + " channels");
  const std::size_t spatial = x.numel() / (batch * channels);
  Shape shape = x.shape();
  shape[1] = count;
  Buffer<T> out(batch * count * spatial);
  for (std::size_t n = 0; n < batch; ++n) {
    const T* src = x.data().data() + (n * channels + begin) * spatial;
    std::copy(src, src + count * spatial, out.data() + n * count * spatial);
  }
  return make_result<T>(std::move(shape), std::move(out), {&x},
                        [batch, channels, begin, count, spatial](NodeT<T>& self) {
                          T* gx = parent_grad(self, 0);
                          if (!gx) return;
                          for (std::size_t n = 0; n < batch; ++n) {
                            T* dst = gx + (n * channels + begin) * spatial;
                            const T* src = self.grad.data() + n * count * spatial;
                            for (std::size_t i = 0; i < count * spatial; ++i)
                              dst[i] += src[i];
                          }
                        });
}

template <typename T>
Tensor<T> broadcast_channels(const Tensor<T>& x, std::size_t channels) {
  require(x.rank() >= 2 && x.dim(1) == 1,
          "broadcast_channels: input must be [N,1,...], got " +
              shape_str(x.shape()));
  require(channels > 0, "broadcast_channels: channel count must be positive");
  const std::size_t batch = x.dim(0);
  const std::size_t spatial = x.numel() / batch;
  Shape shape = x.shape();
  shape[1] = channels;
  Buffer<T> out(batch * channels * spatial);
  for (std::size_t n = 0; n < batch; ++n) {
    const T* src = x.data().data() + n * spatial;
    for (std::size_t c = 0; c < channels; ++c) {
      std::copy(src, src + spatial, out.data() + (n * channels + c) * spatial);
    }
  }
  return make_result<T>(std::move(shape), std::move(out), {&x},
                        [batch, channels, spatial](NodeT<T>& self) {
                          T* gx = parent_grad(self, 0);
                          if (!gx) return;
                          for (std::size_t n = 0; n < batch; ++n) {
                            for (std::size_t c = 0; c < channels; ++c) {
                              const T* src = self.grad.data() +
                                             (n * channels + c) * spatial;
                              for (std::size_t s = 0; s < spatial; ++s)
                                gx[n * spatial + s] += src[s];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> crop2d(const Tensor<T>& x, std::size_t height, std::size_t width) {
  require(x.rank() >= 2, "crop2d: input needs at least 2 axes");
  const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  require(height <= h && width <= w && height > 0 && width > 0,
          "crop2d: window " + std::to_string(height) + "x" +
              std::to_string(width) + " does not fit " + shape_str(x.shape()));
  const std::size_t planes = x.numel() / (h * w);
  Shape shape = x.shape();
  shape[shape.size() - 2] = height;
  shape[shape.size() - 1] = width;
  Buffer<T> out(planes * height * width);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < height; ++y) {
      const T* src = x.data().data() + (p * h + y) * w;
      std::copy(src, src + width, out.data() + (p * height + y) * width);
    }
  }
  return make_result<T>(std::move(shape), std::move(out), {&x},
                        [planes, h, w, height, width](NodeT<T>& self) {
                          T* gx = parent_grad(self, 0);
                          if (!gx) return;
                          for (std::size_t p = 0; p < planes; ++p) {
                            for (std::size_t y = 0; y < height; ++y) {
                              T* dst = gx + (p * h + y) * w;
                              const T* src =
                                  self.grad.data() + (p * height + y) * width;
                              for (std::size_t i = 0; i < width; ++i)
                                dst[i] += src[i];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> to_sequence(const Tensor<T>& x) {
  require_rank("to_sequence", x, 4, "input");
  const std::size_t batch = x.dim(0), channels = x.dim(1);
  const std::size_t len = x.dim(2) * x.dim(3);
  Buffer<T> out(x.numel());
  for (std::size_t n = 0; n < batch; ++n) {
    ConstMapMat<T> src(x.data().data() + n * channels * len, channels, len);
    MapMat<T>(out.data() + n * channels * len, len, channels) = src.transpose();
  }
  return make_result<T>(Shape{batch, len, channels}, std::move(out), {&x},
                        [batch, channels, len](NodeT<T>& self) {
                          T* gx = parent_grad(self, 0);
                          if (!gx) return;
                          for (std::size_t n = 0; n < batch; ++n) {
                            ConstMapMat<T> go(self.grad.data() + n * channels * len,
                                              len, channels);
                            MapMat<T>(gx + n * channels * len, channels, len) +=
                                go.transpose();
                          }
                        });
}

template <typename T>
Tensor<T> from_sequence(const Tensor<T>& x, std::size_t height,
                        std::size_t width) {
  require_rank("from_sequence", x, 3, "input");
  const std::size_t batch = x.dim(0), len = x.dim(1), channels = x.dim(2);
  require(len == height * width,
          "from_sequence: sequence length " + std::to_string(len) +
              " does not match " + std::to_string(height) + "x" +
              std::to_string(width));
  Buffer<T> out(x.numel());
  for (std::size_t n = 0; n < batch; ++n) {
    ConstMapMat<T> src(x.data().data() + n * channels * len, len, channels);
    MapMat<T>(out.data() + n * channels * len, channels, len) = src.transpose();
  }
  return make_result<T>(Shape{batch, channels, height, width}, std::move(out),
                        {&x}, [batch, channels, len](NodeT<T>& self) {
                          T* gx = parent_grad(self, 0);
                          if (!gx) return;
                          for (std::size_t n = 0; n < batch; ++n) {
                            ConstMapMat<T> go(self.grad.data() + n * channels * len,
                                              channels, len);
                            MapMat<T>(gx + n * channels * len, len, channels) +=
                                go.transpose();
                          }
                        });
}

#define RAGE_INSTANTIATE_OPS(T)                                                \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&,                \
                            const Tensor<T>&, std::size_t, std::size_t);       \
  template Tensor<T> upsample2x(const Tensor<T>&);                             \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> neg(const Tensor<T>&);                                    \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                          \
  template Tensor<T> mul_scalar(const Tensor<T>&, T);                          \
  template Tensor<T> sigmoid(const Tensor<T>&);                                \
  template Tensor<T> relu(const Tensor<T>&);                                   \
  template Tensor<T> square(const Tensor<T>&);                                 \
  template Tensor<T> sqrt(const Tensor<T>&);                                   \
  template Tensor<T> sum(const Tensor<T>&);                                    \
  template Tensor<T> mean(const Tensor<T>&);                                   \
  template Tensor<T> scaled_dot_attention(const Tensor<T>&, const Tensor<T>&,  \
                                          const Tensor<T>&, std::vector<T>*);  \
  template Tensor<T> group_norm(const Tensor<T>&, const Tensor<T>&,            \
                                const Tensor<T>&, std::size_t, T);             \
  template Tensor<T> slice_channels(const Tensor<T>&, std::size_t,             \
                                    std::size_t);                              \
  template Tensor<T> broadcast_channels(const Tensor<T>&, std::size_t);        \
  template Tensor<T> crop2d(const Tensor<T>&, std::size_t, std::size_t);       \
  template Tensor<T> to_sequence(const Tensor<T>&);                            \
  template Tensor<T> from_sequence(const Tensor<T>&, std::size_t, std::size_t);

RAGE_INSTANTIATE_OPS(float)
RAGE_INSTANTIATE_OPS(double)

#undef RAGE_INSTANTIATE_OPS

}  // namespace rage::ops

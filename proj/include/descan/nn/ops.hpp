#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include <Eigen/Core>

#include "descan/nn/tensor.hpp"

namespace descan::nn {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

namespace detail {

template <class T>
void accumulate(Node<T>& parent, const std::vector<T>& g) {
  if (!parent.requires_grad) return;
  auto& pg = parent.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
}

template <class T, class F>
Tensor<T> unary(const Tensor<T>& x, F&& f, std::function<void(Node<T>&)> back) {
  std::vector<T> v(x.size());
  const auto in = x.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(in[i]);
  return Tensor<T>::make_result(x.shape(), std::move(v), {x.node()}, std::move(back));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_error("add", a.shape(), b.shape());
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + b.data()[i];
  return Tensor<T>::make_result(a.shape(), std::move(v), {a.node(), b.node()}, [](Node<T>& self) {
    detail::accumulate(*self.parents[0], self.grad);
    detail::accumulate(*self.parents[1], self.grad);
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_error("sub", a.shape(), b.shape());
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] - b.data()[i];
  return Tensor<T>::make_result(a.shape(), std::move(v), {a.node(), b.node()}, [](Node<T>& self) {
    detail::accumulate(*self.parents[0], self.grad);
    auto& pb = *self.parents[1];
    if (!pb.requires_grad) return;
    auto& g = pb.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * b.data()[i];
  return Tensor<T>::make_result(a.shape(), std::move(v), {a.node(), b.node()}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return detail::unary<T>(x, [s](T v) { return v * s; }, [s](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

template <class T>
Tensor<T> silu(const Tensor<T>& x) {
  return detail::unary<T>(x, [](T v) { return v / (T(1) + std::exp(-v)); }, [](Node<T>& self) {
    auto& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = T(1) / (T(1) + std::exp(-p.value[i]));
      g[i] += self.grad[i] * (s * (T(1) + p.value[i] * (T(1) - s)));
    }
  });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary<T>(x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.value[i] * (T(1) - self.value[i]);
  });
}

template <class T>
Tensor<T> softplus(const Tensor<T>& x) {
  auto f = [](T v) { return v > T(20) ? v : std::log1p(std::exp(v)); };
  return detail::unary<T>(x, f, [](Node<T>& self) {
    auto& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / (T(1) + std::exp(-p.value[i]));
  });
}

// ---------------------------------------------------------------------------
// Reductions to a scalar

template <class T>
Tensor<T> sum_squares(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v * v;
  return Tensor<T>::make_result({1}, {acc}, {x.node()}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += T(2) * p.value[i] * self.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  const T n = static_cast<T>(x.size());
  return Tensor<T>::make_result({1}, {acc / n}, {x.node()}, [n](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0] / n;
  });
}

template <class T>
Tensor<T> mean_abs(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += std::abs(v);
  const T n = static_cast<T>(x.size());
  return Tensor<T>::make_result({1}, {acc / n}, {x.node()}, [n](Node<T>& self) {
    auto& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = p.value[i];
      g[i] += self.grad[0] * (v > 0 ? T(1) : v < 0 ? T(-1) : T(0)) / n;
    }
  });
}

template <class T>
Tensor<T> mean_square(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v * v;
  const T n = static_cast<T>(x.size());
  return Tensor<T>::make_result({1}, {acc / n}, {x.node()}, [n](Node<T>& self) {
    auto& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * T(2) * p.value[i] / n;
  });
}

// Euclidean norm of each row of an [N, D] tensor -> [N].
template <class T>
Tensor<T> row_norm(const Tensor<T>& x) {
  require(x.rank() == 2, "row_norm: expected [N,D], got " + shape_str(x.shape()));
  const int n = x.dim(0), d = x.dim(1);
  std::vector<T> v(n);
  for (int r = 0; r < n; ++r) {
    T acc = 0;
    for (int c = 0; c < d; ++c) acc += x.data()[r * d + c] * x.data()[r * d + c];
    v[r] = std::sqrt(acc);
  }
  return Tensor<T>::make_result({n}, std::move(v), {x.node()}, [n, d](Node<T>& self) {
    auto& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (int r = 0; r < n; ++r) {
      if (self.value[r] <= T(0)) continue;  // subgradient 0 at the origin
      for (int c = 0; c < d; ++c) g[r * d + c] += self.grad[r] * p.value[r * d + c] / self.value[r];
    }
  });
}

// ---------------------------------------------------------------------------
// Layout

// Channel concatenation of two [N, C, H, W] tensors.
template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    shape_error("concat_channels", a.shape(), b.shape());
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const std::size_t hw = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
  std::vector<T> v(a.size() + b.size());
  for (int i = 0; i < n; ++i) {
    std::copy_n(a.data().data() + i * ca * hw, ca * hw, v.data() + i * (ca + cb) * hw);
    std::copy_n(b.data().data() + i * cb * hw, cb * hw, v.data() + (i * (ca + cb) + ca) * hw);
  }
  return Tensor<T>::make_result({n, ca + cb, a.dim(2), a.dim(3)}, std::move(v), {a.node(), b.node()},
                                [n, ca, cb, hw](Node<T>& self) {
                                  auto& pa = *self.parents[0];
                                  auto& pb = *self.parents[1];
                                  for (int i = 0; i < n; ++i) {
                                    const T* src = self.grad.data() + i * (ca + cb) * hw;
                                    if (pa.requires_grad) {
                                      auto& g = pa.ensure_grad();
                                      for (std::size_t j = 0; j < ca * hw; ++j) g[i * ca * hw + j] += src[j];
                                    }
                                    if (pb.requires_grad) {
                                      auto& g = pb.ensure_grad();
                                      for (std::size_t j = 0; j < cb * hw; ++j) g[i * cb * hw + j] += src[ca * hw + j];
                                    }
                                  }
                                });
}

// Columns [start, start+len) of an [N, D] tensor.
template <class T>
Tensor<T> slice_cols(const Tensor<T>& x, int start, int len) {
  require(x.rank() == 2 && start >= 0 && len > 0 && start + len <= x.dim(1),
          "slice_cols: invalid range on " + shape_str(x.shape()));
  const int n = x.dim(0), d = x.dim(1);
  std::vector<T> v(static_cast<std::size_t>(n) * len);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < len; ++c) v[r * len + c] = x.data()[r * d + start + c];
  return Tensor<T>::make_result({n, len}, std::move(v), {x.node()}, [n, d, start, len](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < len; ++c) g[r * d + start + c] += self.grad[r * len + c];
  });
}

template <class T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) shape_error("concat_cols", a.shape(), b.shape());
  const int n = a.dim(0), da = a.dim(1), db = b.dim(1);
  std::vector<T> v(static_cast<std::size_t>(n) * (da + db));
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < da; ++c) v[r * (da + db) + c] = a.data()[r * da + c];
    for (int c = 0; c < db; ++c) v[r * (da + db) + da + c] = b.data()[r * db + c];
  }
  return Tensor<T>::make_result({n, da + db}, std::move(v), {a.node(), b.node()}, [n, da, db](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    for (int r = 0; r < n; ++r) {
      if (pa.requires_grad)
        for (int c = 0; c < da; ++c) pa.ensure_grad()[r * da + c] += self.grad[r * (da + db) + c];
      if (pb.requires_grad)
        for (int c = 0; c < db; ++c) pb.ensure_grad()[r * db + c] += self.grad[r * (da + db) + da + c];
    }
  });
}

// Nearest-neighbour x2 upsampling of [N, C, H, W].
template <class T>
Tensor<T> upsample2x(const Tensor<T>& x) {
  require(x.rank() == 4, "upsample2x: expected [N,C,H,W], got " + shape_str(x.shape()));
  const int nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<T> v(x.size() * 4);
  for (int p = 0; p < nc; ++p)
    for (int y = 0; y < 2 * h; ++y)
      for (int xx = 0; xx < 2 * w; ++xx)
        v[(static_cast<std::size_t>(p) * 2 * h + y) * 2 * w + xx] = x.data()[(static_cast<std::size_t>(p) * h + y / 2) * w + xx / 2];
  return Tensor<T>::make_result({x.dim(0), x.dim(1), 2 * h, 2 * w}, std::move(v), {x.node()},
                                [nc, h, w](Node<T>& self) {
                                  auto& g = self.parents[0]->ensure_grad();
                                  for (int p = 0; p < nc; ++p)
                                    for (int y = 0; y < 2 * h; ++y)
                                      for (int xx = 0; xx < 2 * w; ++xx)
                                        g[(static_cast<std::size_t>(p) * h + y / 2) * w + xx / 2] +=
                                            self.grad[(static_cast<std::size_t>(p) * 2 * h + y) * 2 * w + xx];
                                });
}

// [N, C, H, W] -> [N, C]
template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require(x.rank() == 4, "global_avg_pool: expected [N,C,H,W], got " + shape_str(x.shape()));
  const int nc = x.dim(0) * x.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  std::vector<T> v(nc);
  for (int p = 0; p < nc; ++p) {
    T acc = 0;
    for (std::size_t i = 0; i < hw; ++i) acc += x.data()[p * hw + i];
    v[p] = acc / static_cast<T>(hw);
  }
  return Tensor<T>::make_result({x.dim(0), x.dim(1)}, std::move(v), {x.node()}, [nc, hw](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (int p = 0; p < nc; ++p)
      for (std::size_t i = 0; i < hw; ++i) g[p * hw + i] += self.grad[p] / static_cast<T>(hw);
  });
}

// x [N, C, H, W] plus a per-sample, per-channel bias b [N, C].
template <class T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& b) {
  if (x.rank() != 4 || b.rank() != 2 || b.dim(0) != x.dim(0) || b.dim(1) != x.dim(1))
    shape_error("add_channel_bias", x.shape(), b.shape());
  const int nc = x.dim(0) * x.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  std::vector<T> v(x.size());
  for (int p = 0; p < nc; ++p)
    for (std::size_t i = 0; i < hw; ++i) v[p * hw + i] = x.data()[p * hw + i] + b.data()[p];
  return Tensor<T>::make_result(x.shape(), std::move(v), {x.node(), b.node()}, [nc, hw](Node<T>& self) {
    detail::accumulate(*self.parents[0], self.grad);
    auto& pb = *self.parents[1];
    if (!pb.requires_grad) return;
    auto& g = pb.ensure_grad();
    for (int p = 0; p < nc; ++p)
      for (std::size_t i = 0; i < hw; ++i) g[p] += self.grad[p * hw + i];
  });
}

// ---------------------------------------------------------------------------
// Dense layers

// x [N, in], weight [out, in], bias [out] -> [N, out]
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || weight.dim(1) != x.dim(1)) shape_error("linear", x.shape(), weight.shape());
  if (bias.rank() != 1 || bias.dim(0) != weight.dim(0)) shape_error("linear(bias)", weight.shape(), bias.shape());
  const int n = x.dim(0), in = x.dim(1), out = weight.dim(0);
  std::vector<T> v(static_cast<std::size_t>(n) * out);
  MatMap<T> y(v.data(), n, out);
  y.noalias() = ConstMatMap<T>(x.data().data(), n, in) * ConstMatMap<T>(weight.data().data(), out, in).transpose();
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < out; ++c) y(r, c) += bias.data()[c];
  return Tensor<T>::make_result({n, out}, std::move(v), {x.node(), weight.node(), bias.node()},
                                [n, in, out](Node<T>& self) {
                                  auto& px = *self.parents[0];
                                  auto& pw = *self.parents[1];
                                  auto& pb = *self.parents[2];
                                  ConstMatMap<T> gy(self.grad.data(), n, out);
                                  if (px.requires_grad)
                                    MatMap<T>(px.ensure_grad().data(), n, in).noalias() +=
                                        gy * ConstMatMap<T>(pw.value.data(), out, in);
                                  if (pw.requires_grad)
                                    MatMap<T>(pw.ensure_grad().data(), out, in).noalias() +=
                                        gy.transpose() * ConstMatMap<T>(px.value.data(), n, in);
                                  if (pb.requires_grad) {
                                    auto& g = pb.ensure_grad();
                                    for (int r = 0; r < n; ++r)
                                      for (int c = 0; c < out; ++c) g[c] += gy(r, c);
                                  }
                                });
}

namespace detail {

struct ConvGeometry {
  int cin, h, w, cout, stride, oh, ow;
  int k() const { return cin * 9; }
  int p() const { return oh * ow; }
};

template <class T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const int p = g.p();
  for (int c = 0; c < g.cin; ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        T* row = cols + static_cast<std::size_t>((c * 3 + ky) * 3 + kx) * p;
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * g.stride + ky - 1;
          T* dst = row + oy * g.ow;
          if (iy < 0 || iy >= g.h) {
            std::fill_n(dst, g.ow, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * g.stride + kx - 1;
            dst[ox] = (ix < 0 || ix >= g.w) ? T(0) : src[ix];
          }
        }
      }
}

template <class T>
void col2im(const T* cols, const ConvGeometry& g, T* dx) {
  const int p = g.p();
  for (int c = 0; c < g.cin; ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const T* row = cols + static_cast<std::size_t>((c * 3 + ky) * 3 + kx) * p;
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * g.stride + ky - 1;
          if (iy < 0 || iy >= g.h) continue;
          T* dst = dx + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * g.stride + kx - 1;
            if (ix >= 0 && ix < g.w) dst[ix] += row[oy * g.ow + ox];
          }
        }
      }
}

}  // namespace detail

// 3x3 convolution with zero padding 1. x [N, Cin, H, W], weight [Cout, Cin, 3, 3],
// bias [Cout]; stride 1 keeps H x W, stride 2 gives ceil(H/2) x ceil(W/2).
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride = 1) {
  if (x.rank() != 4 || weight.rank() != 4 || weight.dim(1) != x.dim(1) || weight.dim(2) != 3 || weight.dim(3) != 3)
    shape_error("conv2d", x.shape(), weight.shape());
  if (bias.rank() != 1 || bias.dim(0) != weight.dim(0)) shape_error("conv2d(bias)", weight.shape(), bias.shape());
  require(stride == 1 || stride == 2, "conv2d: stride must be 1 or 2");
  const int n = x.dim(0);
  detail::ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), weight.dim(0), stride, 0, 0};
  g.oh = (g.h - 1) / stride + 1;
  g.ow = (g.w - 1) / stride + 1;
  const int k = g.k(), p = g.p();
  const bool record = grad_mode() && (x.requires_grad() || weight.requires_grad() || bias.requires_grad());

  auto cols = std::make_shared<std::vector<T>>(static_cast<std::size_t>(record ? n : 1) * k * p);
  std::vector<T> v(static_cast<std::size_t>(n) * g.cout * p);
  ConstMatMap<T> wm(weight.data().data(), g.cout, k);
  const std::size_t in_stride = static_cast<std::size_t>(g.cin) * g.h * g.w;
  for (int i = 0; i < n; ++i) {
    T* col = cols->data() + (record ? static_cast<std::size_t>(i) * k * p : 0);
    detail::im2col(x.data().data() + i * in_stride, g, col);
    MatMap<T> y(v.data() + static_cast<std::size_t>(i) * g.cout * p, g.cout, p);
    y.noalias() = wm * ConstMatMap<T>(col, k, p);
    for (int c = 0; c < g.cout; ++c) y.row(c).array() += bias.data()[c];
  }
  return Tensor<T>::make_result(
      {n, g.cout, g.oh, g.ow}, std::move(v), {x.node(), weight.node(), bias.node()},
      [n, g, k, p, in_stride, cols](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        auto& pb = *self.parents[2];
        ConstMatMap<T> wm(pw.value.data(), g.cout, k);
        std::vector<T> dcol(px.requires_grad ? static_cast<std::size_t>(k) * p : 0);
        for (int i = 0; i < n; ++i) {
          ConstMatMap<T> gy(self.grad.data() + static_cast<std::size_t>(i) * g.cout * p, g.cout, p);
          ConstMatMap<T> col(cols->data() + static_cast<std::size_t>(i) * k * p, k, p);
          if (pw.requires_grad) MatMap<T>(pw.ensure_grad().data(), g.cout, k).noalias() += gy * col.transpose();
          if (pb.requires_grad) {
            auto& gb = pb.ensure_grad();
            // plain loop: Eigen's vectorized sum depends on pointer alignment
            for (int c = 0; c < g.cout; ++c) {
              T acc = 0;
              for (int j = 0; j < p; ++j) acc += gy(c, j);
              gb[c] += acc;
            }
          }
          if (px.requires_grad) {
            MatMap<T>(dcol.data(), k, p).noalias() = wm.transpose() * gy;
            detail::col2im(dcol.data(), g, px.ensure_grad().data() + i * in_stride);
          }
        }
      });
}

}  // namespace descan::nn

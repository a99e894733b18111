#include "ambiseg/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace ambiseg {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

struct ConvGeometry {
  std::size_t channels, height, width, kernel, stride, pad, out_height, out_width;
  std::size_t rows() const { return channels * kernel * kernel; }
  std::size_t cols() const { return out_height * out_width; }
  bool direct() const { return kernel == 1 && stride == 1; }
};

template <typename T>
void im2col(const T* in, const ConvGeometry& g, T* col) {
  const auto k = g.kernel;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* plane = in + c * g.height * g.width;
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        T* row = col + ((c * k + ki) * k + kj) * g.cols();
        for (std::size_t oy = 0; oy < g.out_height; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                          static_cast<std::ptrdiff_t>(g.pad);
          T* dst = row + oy * g.out_width;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(dst, dst + g.out_width, T{0});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * g.width;
          for (std::size_t ox = 0; ox < g.out_width; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                            static_cast<std::ptrdiff_t>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) ? T{0} : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* in) {
  const auto k = g.kernel;
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* plane = in + c * g.height * g.width;
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const T* row = col + ((c * k + ki) * k + kj) * g.cols();
        for (std::size_t oy = 0; oy < g.out_height; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                          static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * g.width;
          const T* src = row + oy * g.out_width;
          for (std::size_t ox = 0; ox < g.out_width; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                            static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
std::vector<std::shared_ptr<TensorNode<T>>> parents_of(
    std::initializer_list<const BasicTensor<T>*> ts) {
  std::vector<std::shared_ptr<TensorNode<T>>> out;
  for (const auto* t : ts) out.push_back(t->node());
  return out;
}

}  // namespace

int default_groups(std::size_t channels) {
  return static_cast<int>(std::min<std::size_t>(32, channels));
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                      const BasicTensor<T>& bias, int stride) {
  require(input.rank() == 4, "conv2d: input must be NCHW, got " + shape_to_string(input.shape()));
  require(kernel.rank() == 4, "conv2d: kernel must be [O,C,k,k]");
  require(kernel.dim(2) == kernel.dim(3) && kernel.dim(2) % 2 == 1,
          "conv2d: kernel must be square with odd size");
  require(kernel.dim(1) == input.dim(1),
          "conv2d: kernel expects " + std::to_string(kernel.dim(1)) + " input channels, got " +
              std::to_string(input.dim(1)));
  require(bias.numel() == kernel.dim(0), "conv2d: bias must have O elements");
  if (stride != 1 && stride != 2) throw ConfigError("conv2d: stride must be 1 or 2");

  ConvGeometry g{};
  g.channels = input.dim(1);
  g.height = input.dim(2);
  g.width = input.dim(3);
  g.kernel = kernel.dim(2);
  g.stride = static_cast<std::size_t>(stride);
  g.pad = g.kernel / 2;
  g.out_height = (g.height + 2 * g.pad - g.kernel) / g.stride + 1;
  g.out_width = (g.width + 2 * g.pad - g.kernel) / g.stride + 1;

  const std::size_t batch = input.dim(0);
  const std::size_t out_ch = kernel.dim(0);
  const std::size_t in_size = g.channels * g.height * g.width;
  const std::size_t out_size = out_ch * g.cols();

  Buffer<T> out(batch * out_size);
  Buffer<T> col(g.direct() ? 0 : g.rows() * g.cols());
  ConstMapMat<T> K(kernel.data().data(), static_cast<Eigen::Index>(out_ch),
                   static_cast<Eigen::Index>(g.rows()));
  const auto b = bias.data();
  for (std::size_t n = 0; n < batch; ++n) {
    const T* src = input.data().data() + n * in_size;
    if (!g.direct()) im2col(src, g, col.data());
    ConstMapMat<T> C(g.direct() ? src : col.data(), static_cast<Eigen::Index>(g.rows()),
                     static_cast<Eigen::Index>(g.cols()));
    MapMat<T> Y(out.data() + n * out_size, static_cast<Eigen::Index>(out_ch),
                static_cast<Eigen::Index>(g.cols()));
    Y.noalias() = K * C;
    for (std::size_t o = 0; o < out_ch; ++o) Y.row(static_cast<Eigen::Index>(o)).array() += b[o];
  }

  auto in_node = input.node();
  auto k_node = kernel.node();
  auto b_node = bias.node();
  return BasicTensor<T>::from_op(
      {batch, out_ch, g.out_height, g.out_width}, std::move(out), {in_node, k_node, b_node},
      [=](TensorNode<T>& self) {
        Buffer<T> col_buf(g.direct() ? 0 : g.rows() * g.cols());
        Buffer<T> dcol(g.rows() * g.cols());
        ConstMapMat<T> Kc(k_node->data.data(), static_cast<Eigen::Index>(out_ch),
                          static_cast<Eigen::Index>(g.rows()));
        for (std::size_t n = 0; n < batch; ++n) {
          ConstMapMat<T> dY(self.grad.data() + n * out_size, static_cast<Eigen::Index>(out_ch),
                            static_cast<Eigen::Index>(g.cols()));
          const T* src = in_node->data.data() + n * in_size;
          if (k_node->requires_grad) {
            if (!g.direct()) im2col(src, g, col_buf.data());
            ConstMapMat<T> C(g.direct() ? src : col_buf.data(),
                             static_cast<Eigen::Index>(g.rows()),
                             static_cast<Eigen::Index>(g.cols()));
            MapMat<T> dK(k_node->ensure_grad().data(), static_cast<Eigen::Index>(out_ch),
                         static_cast<Eigen::Index>(g.rows()));
            dK.noalias() += dY * C.transpose();
          }
          if (b_node->requires_grad) {
            auto& db = b_node->ensure_grad();
            for (std::size_t o = 0; o < out_ch; ++o) db[o] += dY.row(static_cast<Eigen::Index>(o)).sum();
          }
          if (in_node->requires_grad) {
            T* dst = in_node->ensure_grad().data() + n * in_size;
            if (g.direct()) {
              MapMat<T> dX(dst, static_cast<Eigen::Index>(g.rows()),
                           static_cast<Eigen::Index>(g.cols()));
              dX.noalias() += Kc.transpose() * dY;
            } else {
              MapMat<T> dC(dcol.data(), static_cast<Eigen::Index>(g.rows()),
                           static_cast<Eigen::Index>(g.cols()));
              dC.noalias() = Kc.transpose() * dY;
              col2im_add(dcol.data(), g, dst);
            }
          }
        }
      });
}

template <typename T>
BasicTensor<T> group_norm(const BasicTensor<T>& input, int groups, const BasicTensor<T>& scale,
                          const BasicTensor<T>& shift, double eps) {
  require(input.rank() == 4, "group_norm: input must be NCHW");
  const std::size_t batch = input.dim(0), channels = input.dim(1);
  const std::size_t spatial = input.dim(2) * input.dim(3);
  if (groups <= 0 || channels % static_cast<std::size_t>(groups) != 0) {
    throw ConfigError("group_norm: " + std::to_string(channels) +
                      " channels not divisible by " + std::to_string(groups) + " groups");
  }
  require(scale.numel() == channels && shift.numel() == channels,
          "group_norm: scale and shift must have C elements");
  const std::size_t per_group = channels / static_cast<std::size_t>(groups);
  const std::size_t group_size = per_group * spatial;
  const std::size_t slices = batch * static_cast<std::size_t>(groups);

  const auto x = input.data();
  const auto gamma = scale.data();
  const auto beta = shift.data();
  Buffer<T> xhat(x.size());
  std::vector<double> inv_std(slices);
  Buffer<T> out(x.size());
  for (std::size_t s = 0; s < slices; ++s) {
    const std::size_t base = s * group_size;
    double mean = 0.0;
    for (std::size_t i = 0; i < group_size; ++i) mean += static_cast<double>(x[base + i]);
    mean /= static_cast<double>(group_size);
    double var = 0.0;
    for (std::size_t i = 0; i < group_size; ++i) {
      const double d = static_cast<double>(x[base + i]) - mean;
      var += d * d;
    }
    var /= static_cast<double>(group_size);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[s] = inv;
    const std::size_t c0 = (s % static_cast<std::size_t>(groups)) * per_group;
    for (std::size_t i = 0; i < group_size; ++i) {
      const std::size_t c = c0 + i / spatial;
      const double h = (static_cast<double>(x[base + i]) - mean) * inv;
      xhat[base + i] = static_cast<T>(h);
      out[base + i] = static_cast<T>(static_cast<double>(gamma[c]) * h + static_cast<double>(beta[c]));
    }
  }

  auto in_node = input.node();
  auto g_node = scale.node();
  auto b_node = shift.node();
  return BasicTensor<T>::from_op(
      input.shape(), std::move(out), {in_node, g_node, b_node},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorNode<T>& self) {
        const auto& dy = self.grad;
        const auto& gam = g_node->data;
        if (g_node->requires_grad || b_node->requires_grad) {
          auto& dg = g_node->ensure_grad();
          auto& db = b_node->ensure_grad();
          for (std::size_t n = 0; n < batch; ++n) {
            for (std::size_t c = 0; c < channels; ++c) {
              const std::size_t base = (n * channels + c) * spatial;
              double sg = 0.0, sb = 0.0;
              for (std::size_t i = 0; i < spatial; ++i) {
                sg += static_cast<double>(dy[base + i]) * static_cast<double>(xhat[base + i]);
                sb += static_cast<double>(dy[base + i]);
              }
              dg[c] += static_cast<T>(sg);
              db[c] += static_cast<T>(sb);
            }
          }
        }
        if (!in_node->requires_grad) return;
        auto& dx = in_node->ensure_grad();
        const std::size_t grp = static_cast<std::size_t>(groups);
        for (std::size_t s = 0; s < slices; ++s) {
          const std::size_t base = s * group_size;
          const std::size_t c0 = (s % grp) * per_group;
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t i = 0; i < group_size; ++i) {
            const double d = static_cast<double>(dy[base + i]) *
                             static_cast<double>(gam[c0 + i / spatial]);
            mean_d += d;
            mean_dx += d * static_cast<double>(xhat[base + i]);
          }
          mean_d /= static_cast<double>(group_size);
          mean_dx /= static_cast<double>(group_size);
          for (std::size_t i = 0; i < group_size; ++i) {
            const double d = static_cast<double>(dy[base + i]) *
                             static_cast<double>(gam[c0 + i / spatial]);
            const double h = static_cast<double>(xhat[base + i]);
            dx[base + i] += static_cast<T>(inv_std[s] * (d - mean_d - h * mean_dx));
          }
        }
      });
}

template <typename T>
BasicTensor<T> silu(const BasicTensor<T>& input) {
  const auto x = input.data();
  Buffer<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = x[i] / (T{1} + std::exp(-x[i]));
  }
  auto in_node = input.node();
  return BasicTensor<T>::from_op(input.shape(), std::move(out), {in_node},
                                 [in_node](TensorNode<T>& self) {
                                   auto& dx = in_node->ensure_grad();
                                   const auto& xv = in_node->data;
                                   for (std::size_t i = 0; i < xv.size(); ++i) {
                                     const T s = T{1} / (T{1} + std::exp(-xv[i]));
                                     dx[i] += self.grad[i] * s * (T{1} + xv[i] * (T{1} - s));
                                   }
                                 });
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias) {
  require(input.rank() >= 1, "linear: input must have at least one dimension");
  require(weight.rank() == 2, "linear: weight must be [O,I]");
  const std::size_t in_dim = weight.dim(1), out_dim = weight.dim(0);
  require(input.shape().back() == in_dim,
          "linear: trailing dim " + std::to_string(input.shape().back()) + " != " +
              std::to_string(in_dim));
  require(bias.numel() == out_dim, "linear: bias must have O elements");
  const std::size_t rows = input.numel() / in_dim;
  const auto ei = [](std::size_t v) { return static_cast<Eigen::Index>(v); };

  Buffer<T> out(rows * out_dim);
  ConstMapMat<T> X(input.data().data(), ei(rows), ei(in_dim));
  ConstMapMat<T> Wm(weight.data().data(), ei(out_dim), ei(in_dim));
  MapMat<T> Y(out.data(), ei(rows), ei(out_dim));
  Y.noalias() = X * Wm.transpose();
  const auto b = bias.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < out_dim; ++o) out[r * out_dim + o] += b[o];

  Shape shape = input.shape();
  shape.back() = out_dim;
  auto x_node = input.node();
  auto w_node = weight.node();
  auto b_node = bias.node();
  return BasicTensor<T>::from_op(
      std::move(shape), std::move(out), {x_node, w_node, b_node}, [=](TensorNode<T>& self) {
        ConstMapMat<T> dY(self.grad.data(), ei(rows), ei(out_dim));
        if (x_node->requires_grad) {
          MapMat<T> dX(x_node->ensure_grad().data(), ei(rows), ei(in_dim));
          ConstMapMat<T> Wc(w_node->data.data(), ei(out_dim), ei(in_dim));
          dX.noalias() += dY * Wc;
        }
        if (w_node->requires_grad) {
          MapMat<T> dW(w_node->ensure_grad().data(), ei(out_dim), ei(in_dim));
          ConstMapMat<T> Xc(x_node->data.data(), ei(rows), ei(in_dim));
          dW.noalias() += dY.transpose() * Xc;
        }
        if (b_node->requires_grad) {
          auto& db = b_node->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t o = 0; o < out_dim; ++o) db[o] += self.grad[r * out_dim + o];
        }
      });
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require(a.shape() == b.shape(), "add: shapes " + shape_to_string(a.shape()) + " and " +
                                      shape_to_string(b.shape()) + " differ");
  Buffer<T> out(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  auto an = a.node();
  auto bn = b.node();
  return BasicTensor<T>::from_op(a.shape(), std::move(out), {an, bn}, [an, bn](TensorNode<T>& self) {
    for (auto* p : {an.get(), bn.get()}) {
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require(a.shape() == b.shape(), "mul: shapes " + shape_to_string(a.shape()) + " and " +
                                      shape_to_string(b.shape()) + " differ");
  Buffer<T> out(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  auto an = a.node();
  auto bn = b.node();
  return BasicTensor<T>::from_op(a.shape(), std::move(out), {an, bn}, [an, bn](TensorNode<T>& self) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->data[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->data[i];
    }
  });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& input) {
  double acc = 0.0;
  for (T v : input.data()) acc += static_cast<double>(v);
  auto in_node = input.node();
  return BasicTensor<T>::from_op(Shape{}, {static_cast<T>(acc)}, {in_node},
                                 [in_node](TensorNode<T>& self) {
                                   auto& g = in_node->ensure_grad();
                                   for (auto& v : g) v += self.grad[0];
                                 });
}

template <typename T>
BasicTensor<T> add_channel_bias(const BasicTensor<T>& x, const BasicTensor<T>& v) {
  require(x.rank() == 4, "add_channel_bias: x must be NCHW");
  require(v.rank() == 2 && v.dim(0) == x.dim(0) && v.dim(1) == x.dim(1),
          "add_channel_bias: v must be [N,C], got " + shape_to_string(v.shape()));
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t spatial = x.dim(2) * x.dim(3);
  Buffer<T> out(x.data().begin(), x.data().end());
  const auto vv = v.data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < spatial; ++i) out[p * spatial + i] += vv[p];
  auto xn = x.node();
  auto vn = v.node();
  return BasicTensor<T>::from_op(x.shape(), std::move(out), {xn, vn}, [=](TensorNode<T>& self) {
    if (xn->requires_grad) {
      auto& g = xn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (vn->requires_grad) {
      auto& g = vn->ensure_grad();
      for (std::size_t p = 0; p < planes; ++p) {
        T acc{0};
        for (std::size_t i = 0; i < spatial; ++i) acc += self.grad[p * spatial + i];
        g[p] += acc;
      }
    }
  });
}

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require(a.rank() == 4 && b.rank() == 4, "concat_channels: inputs must be NCHW");
  require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
          "concat_channels: batch/spatial dims differ: " + shape_to_string(a.shape()) + " vs " +
              shape_to_string(b.shape()));
  const std::size_t batch = a.dim(0);
  const std::size_t sa = a.numel() / batch, sb = b.numel() / batch;
  Buffer<T> out(a.numel() + b.numel());
  for (std::size_t n = 0; n < batch; ++n) {
    std::copy_n(a.data().data() + n * sa, sa, out.data() + n * (sa + sb));
    std::copy_n(b.data().data() + n * sb, sb, out.data() + n * (sa + sb) + sa);
  }
  auto an = a.node();
  auto bn = b.node();
  return BasicTensor<T>::from_op(
      {batch, a.dim(1) + b.dim(1), a.dim(2), a.dim(3)}, std::move(out), {an, bn},
      [=](TensorNode<T>& self) {
        for (std::size_t n = 0; n < batch; ++n) {
          const T* src = self.grad.data() + n * (sa + sb);
          if (an->requires_grad) {
            T* dst = an->ensure_grad().data() + n * sa;
            for (std::size_t i = 0; i < sa; ++i) dst[i] += src[i];
          }
          if (bn->requires_grad) {
            T* dst = bn->ensure_grad().data() + n * sb;
            for (std::size_t i = 0; i < sb; ++i) dst[i] += src[sa + i];
          }
        }
      });
}

template <typename T>
BasicTensor<T> upsample_nearest2x(const BasicTensor<T>& input) {
  require(input.rank() == 4, "upsample_nearest2x: input must be NCHW");
  const std::size_t planes = input.dim(0) * input.dim(1);
  const std::size_t h = input.dim(2), w = input.dim(3);
  Buffer<T> out(planes * 4 * h * w);
  const auto x = input.data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xx = 0; xx < 2 * w; ++xx)
        out[(p * 2 * h + y) * 2 * w + xx] = x[(p * h + y / 2) * w + xx / 2];
  auto in_node = input.node();
  return BasicTensor<T>::from_op(
      {input.dim(0), input.dim(1), 2 * h, 2 * w}, std::move(out), {in_node},
      [=](TensorNode<T>& self) {
        auto& g = in_node->ensure_grad();
        for (std::size_t p = 0; p < planes; ++p)
          for (std::size_t y = 0; y < 2 * h; ++y)
            for (std::size_t xx = 0; xx < 2 * w; ++xx)
              g[(p * h + y / 2) * w + xx / 2] += self.grad[(p * 2 * h + y) * 2 * w + xx];
      });
}

template <typename T>
BasicTensor<T> combine_per_sample(const BasicTensor<T>& x, std::span<const double> a,
                                  const BasicTensor<T>& y, std::span<const double> c) {
  require(x.shape() == y.shape(), "combine_per_sample: x and y shapes differ");
  require(x.rank() >= 1 && a.size() == x.dim(0) && c.size() == x.dim(0),
          "combine_per_sample: need one coefficient pair per leading index");
  const std::size_t batch = x.dim(0);
  const std::size_t chunk = x.numel() / std::max<std::size_t>(batch, 1);
  Buffer<T> out(x.numel());
  const auto xv = x.data();
  const auto yv = y.data();
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t i = n * chunk; i < (n + 1) * chunk; ++i)
      out[i] = static_cast<T>(a[n] * static_cast<double>(xv[i]) + c[n] * static_cast<double>(yv[i]));
  auto xn = x.node();
  auto yn = y.node();
  std::vector<double> av(a.begin(), a.end()), cv(c.begin(), c.end());
  return BasicTensor<T>::from_op(x.shape(), std::move(out), {xn, yn},
                                 [=](TensorNode<T>& self) {
                                   for (std::size_t n = 0; n < batch; ++n) {
                                     for (std::size_t i = n * chunk; i < (n + 1) * chunk; ++i) {
                                       const double g = static_cast<double>(self.grad[i]);
                                       if (xn->requires_grad) xn->ensure_grad()[i] += static_cast<T>(av[n] * g);
                                       if (yn->requires_grad) yn->ensure_grad()[i] += static_cast<T>(cv[n] * g);
                                     }
                                   }
                                 });
}

template <typename T>
BasicTensor<T> weighted_mse(const BasicTensor<T>& pred, const BasicTensor<T>& target,
                            std::span<const double> weights) {
  require(pred.shape() == target.shape(), "weighted_mse: pred and target shapes differ");
  require(pred.rank() >= 1 && weights.size() == pred.dim(0),
          "weighted_mse: need one weight per batch element");
  const std::size_t batch = pred.dim(0);
  const std::size_t chunk = pred.numel() / batch;
  const auto p = pred.data();
  const auto t = target.data();
  double total = 0.0;
  for (std::size_t n = 0; n < batch; ++n) {
    double acc = 0.0;
    for (std::size_t i = n * chunk; i < (n + 1) * chunk; ++i) {
      const double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
      acc += d * d;
    }
    total += weights[n] * acc / static_cast<double>(chunk);
  }
  total /= static_cast<double>(batch);

  auto pn = pred.node();
  auto tn = target.node();
  std::vector<double> w(weights.begin(), weights.end());
  return BasicTensor<T>::from_op(
      Shape{}, {static_cast<T>(total)}, {pn, tn}, [=](TensorNode<T>& self) {
        const double g = static_cast<double>(self.grad[0]);
        for (std::size_t n = 0; n < batch; ++n) {
          const double k = 2.0 * g * w[n] / static_cast<double>(chunk * batch);
          for (std::size_t i = n * chunk; i < (n + 1) * chunk; ++i) {
            const double d = k * (static_cast<double>(pn->data[i]) - static_cast<double>(tn->data[i]));
            if (pn->requires_grad) pn->ensure_grad()[i] += static_cast<T>(d);
            if (tn->requires_grad) tn->ensure_grad()[i] -= static_cast<T>(d);
          }
        }
      });
}

#define AMBISEG_INSTANTIATE_OPS(T)                                                              \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                  \
                                 const BasicTensor<T>&, int);                                   \
  template BasicTensor<T> group_norm(const BasicTensor<T>&, int, const BasicTensor<T>&,         \
                                     const BasicTensor<T>&, double);                            \
  template BasicTensor<T> silu(const BasicTensor<T>&);                                          \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&,                  \
                                 const BasicTensor<T>&);                                        \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                           \
  template BasicTensor<T> add_channel_bias(const BasicTensor<T>&, const BasicTensor<T>&);       \
  template BasicTensor<T> concat_channels(const BasicTensor<T>&, const BasicTensor<T>&);        \
  template BasicTensor<T> upsample_nearest2x(const BasicTensor<T>&);                            \
  template BasicTensor<T> combine_per_sample(const BasicTensor<T>&, std::span<const double>,    \
                                             const BasicTensor<T>&, std::span<const double>);   \
  template BasicTensor<T> weighted_mse(const BasicTensor<T>&, const BasicTensor<T>&,            \
                                       std::span<const double>);

AMBISEG_INSTANTIATE_OPS(float)
AMBISEG_INSTANTIATE_OPS(double)

#undef AMBISEG_INSTANTIATE_OPS

}  // namespace ambiseg

#include "megdec/layers.hpp"

#include <algorithm>
#include <cmath>

#include "megdec/attention.hpp"

namespace megdec {

namespace {

struct ConvGeometry {
  std::size_t batch, h, w, c;      // input
  std::size_t kh, kw;              // kernel
  std::size_t oh, ow;              // output
  std::size_t pad_top, pad_left;
};

ConvGeometry conv_geometry(const Tensor& x, std::size_t kh, std::size_t kw, Padding padding,
                           const char* op) {
  if (x.rank() != 4) {
    throw ShapeError(std::string(op) + ": input must be [batch,H,W,C], got " + shape_str(x.shape()));
  }
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), kh, kw, 0, 0, 0, 0};
  if (kh == 0 || kw == 0) throw ShapeError(std::string(op) + ": empty kernel");
  if (padding == Padding::same) {
    g.oh = g.h;
    g.ow = g.w;
    g.pad_top = (kh - 1) / 2;
    g.pad_left = (kw - 1) / 2;
  } else {
    if (kh > g.h || kw > g.w) {
      throw ShapeError(std::string(op) + ": kernel " + std::to_string(kh) + "x" +
                       std::to_string(kw) + " larger than input " + shape_str(x.shape()));
    }
    g.oh = g.h - kh + 1;
    g.ow = g.w - kw + 1;
  }
  return g;
}

// Input coordinate for output position o and kernel tap k, or -1 when it falls in padding.
inline long long tap(std::size_t o, std::size_t k, std::size_t pad, std::size_t extent) {
  const long long i = static_cast<long long>(o + k) - static_cast<long long>(pad);
  return (i < 0 || i >= static_cast<long long>(extent)) ? -1 : i;
}

// Kernel columns [first, last) whose taps land inside the input for output column o.
inline std::pair<std::size_t, std::size_t> tap_range(std::size_t o, std::size_t pad, std::size_t k,
                                                     std::size_t extent) {
  const std::size_t first = pad > o ? pad - o : 0;
  const std::size_t last = std::min(k, extent + pad - o);
  return {first, std::max(first, last)};
}

// y + bias, broadcast over every axis but the last.
Tensor add_channel_bias(const Tensor& y, const std::optional<Tensor>& bias) {
  if (!bias) return y;
  const std::size_t ch = y.shape().back();
  if (bias->rank() != 1 || bias->dim(0) != ch) {
    throw ShapeError("bias " + shape_str(bias->shape()) + " does not match " + std::to_string(ch) +
                     " output channels");
  }
  std::vector<double> out(y.data().begin(), y.data().end());
  auto bv = bias->data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % ch];
  Tensor b = *bias;
  Tensor src = y;
  return make_result(y.shape(), std::move(out), {y, b},
                     [src, b, ch](std::span<const double> g, std::span<const double>) mutable {
                       src.accumulate_grad(g);
                       std::vector<double> gb(ch, 0.0);
                       for (std::size_t i = 0; i < g.size(); ++i) gb[i % ch] += g[i];
                       b.accumulate_grad(gb);
                     });
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, const std::optional<Tensor>& bias,
              Padding padding) {
  if (kernel.rank() != 4) throw ShapeError("conv2d: kernel must be [kh,kw,in,out]");
  const ConvGeometry g = conv_geometry(x, kernel.dim(0), kernel.dim(1), padding, "conv2d");
  if (kernel.dim(2) != g.c) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(kernel.dim(2)) +
                     " input channels, input has " + std::to_string(g.c));
  }
  const std::size_t co = kernel.dim(3);
  std::vector<double> out(g.batch * g.oh * g.ow * co, 0.0);
  auto xv = x.data();
  auto kv = kernel.data();
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t oy = 0; oy < g.oh; ++oy) {
      for (std::size_t ox = 0; ox < g.ow; ++ox) {
        double* o = out.data() + ((b * g.oh + oy) * g.ow + ox) * co;
        const auto [kx0, kx1] = tap_range(ox, g.pad_left, g.kw, g.w);
        const std::size_t len = (kx1 - kx0) * g.c;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const long long iy = tap(oy, ky, g.pad_top, g.h);
          if (iy < 0 || len == 0) continue;
          // Taps kx0..kx1 of one kernel row read a contiguous run of the input row.
          const double* xi = xv.data() + ((b * g.h + iy) * g.w + (ox + kx0 - g.pad_left)) * g.c;
          const double* kk = kv.data() + (ky * g.kw + kx0) * g.c * co;
          if (co == 1) {
            double acc = 0.0;
            for (std::size_t t = 0; t < len; ++t) acc += xi[t] * kk[t];
            o[0] += acc;
            continue;
          }
          for (std::size_t t = 0; t < len; ++t) {
            const double a = xi[t];
            const double* kr = kk + t * co;
            for (std::size_t j = 0; j < co; ++j) o[j] += a * kr[j];
          }
        }
      }
    }
  }
  Tensor y = make_result(
      Shape{g.batch, g.oh, g.ow, co}, std::move(out), {x, kernel},
      [x, kernel, g, co](std::span<const double> gy, std::span<const double>) mutable {
        auto xv = x.data();
        auto kv = kernel.data();
        const bool want_x = x.requires_grad();
        const bool want_k = kernel.requires_grad();
        std::vector<double> gx(want_x ? x.numel() : 0, 0.0);
        std::vector<double> gk(want_k ? kernel.numel() : 0, 0.0);
        for (std::size_t b = 0; b < g.batch; ++b) {
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
              const double* go = gy.data() + ((b * g.oh + oy) * g.ow + ox) * co;
              const auto [kx0, kx1] = tap_range(ox, g.pad_left, g.kw, g.w);
              const std::size_t len = (kx1 - kx0) * g.c;
              for (std::size_t ky = 0; ky < g.kh; ++ky) {
                const long long iy = tap(oy, ky, g.pad_top, g.h);
                if (iy < 0 || len == 0) continue;
                const std::size_t xoff = ((b * g.h + iy) * g.w + (ox + kx0 - g.pad_left)) * g.c;
                const std::size_t koff = (ky * g.kw + kx0) * g.c * co;
                if (want_x) {
                  for (std::size_t t = 0; t < len; ++t) {
                    const double* kr = kv.data() + koff + t * co;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < co; ++j) acc += go[j] * kr[j];
                    gx[xoff + t] += acc;
                  }
                }
                if (want_k) {
                  for (std::size_t t = 0; t < len; ++t) {
                    const double a = xv[xoff + t];
                    double* gkr = gk.data() + koff + t * co;
                    for (std::size_t j = 0; j < co; ++j) gkr[j] += a * go[j];
                  }
                }
              }
            }
          }
        }
        if (want_x) x.accumulate_grad(gx);
        if (want_k) kernel.accumulate_grad(gk);
      });
  return add_channel_bias(y, bias);
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernel, const std::optional<Tensor>& bias,
                        Padding padding) {
  if (kernel.rank() != 4) throw ShapeError("depthwise_conv2d: kernel must be [kh,kw,C,mult]");
  const ConvGeometry g =
      conv_geometry(x, kernel.dim(0), kernel.dim(1), padding, "depthwise_conv2d");
  if (kernel.dim(2) != g.c) {
    throw ShapeError("depthwise_conv2d: kernel expects " + std::to_string(kernel.dim(2)) +
                     " channels, input has " + std::to_string(g.c));
  }
  const std::size_t m = kernel.dim(3);
  const std::size_t co = g.c * m;
  std::vector<double> out(g.batch * g.oh * g.ow * co, 0.0);
  auto xv = x.data();
  auto kv = kernel.data();
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t oy = 0; oy < g.oh; ++oy) {
      for (std::size_t ox = 0; ox < g.ow; ++ox) {
        double* o = out.data() + ((b * g.oh + oy) * g.ow + ox) * co;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const long long iy = tap(oy, ky, g.pad_top, g.h);
          if (iy < 0) continue;
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const long long ix = tap(ox, kx, g.pad_left, g.w);
            if (ix < 0) continue;
            const double* xi = xv.data() + ((b * g.h + iy) * g.w + ix) * g.c;
            const double* kk = kv.data() + (ky * g.kw + kx) * co;
            for (std::size_t ci = 0; ci < g.c; ++ci) {
              const double a = xi[ci];
              for (std::size_t mi = 0; mi < m; ++mi) o[ci * m + mi] += a * kk[ci * m + mi];
            }
          }
        }
      }
    }
  }
  Tensor y = make_result(
      Shape{g.batch, g.oh, g.ow, co}, std::move(out), {x, kernel},
      [x, kernel, g, m, co](std::span<const double> gy, std::span<const double>) mutable {
        auto xv = x.data();
        auto kv = kernel.data();
        const bool want_x = x.requires_grad();
        const bool want_k = kernel.requires_grad();
        std::vector<double> gx(want_x ? x.numel() : 0, 0.0);
        std::vector<double> gk(want_k ? kernel.numel() : 0, 0.0);
        for (std::size_t b = 0; b < g.batch; ++b) {
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
              const double* go = gy.data() + ((b * g.oh + oy) * g.ow + ox) * co;
              for (std::size_t ky = 0; ky < g.kh; ++ky) {
                const long long iy = tap(oy, ky, g.pad_top, g.h);
                if (iy < 0) continue;
                for (std::size_t kx = 0; kx < g.kw; ++kx) {
                  const long long ix = tap(ox, kx, g.pad_left, g.w);
                  if (ix < 0) continue;
                  const std::size_t xoff = ((b * g.h + iy) * g.w + ix) * g.c;
                  const std::size_t koff = (ky * g.kw + kx) * co;
                  for (std::size_t ci = 0; ci < g.c; ++ci) {
                    const std::size_t j0 = ci * m;
                    if (want_x) {
                      double acc = 0.0;
                      for (std::size_t mi = 0; mi < m; ++mi) acc += go[j0 + mi] * kv[koff + j0 + mi];
                      gx[xoff + ci] += acc;
                    }
                    if (want_k) {
                      const double a = xv[xoff + ci];
                      for (std::size_t mi = 0; mi < m; ++mi) gk[koff + j0 + mi] += go[j0 + mi] * a;
                    }
                  }
                }
              }
            }
          }
        }
        if (want_x) x.accumulate_grad(gx);
        if (want_k) kernel.accumulate_grad(gk);
      });
  return add_channel_bias(y, bias);
}

Tensor separable_conv2d(const Tensor& x, const Tensor& depth_kernel, const Tensor& point_kernel,
                        const std::optional<Tensor>& bias, Padding padding) {
  if (depth_kernel.rank() != 4 || depth_kernel.dim(3) != 1) {
    throw ShapeError("separable_conv2d: depth kernel must be [kh,kw,C,1], got " +
                     shape_str(depth_kernel.shape()));
  }
  if (point_kernel.rank() != 4 || point_kernel.dim(0) != 1 || point_kernel.dim(1) != 1) {
    throw ShapeError("separable_conv2d: point kernel must be [1,1,C,F], got " +
                     shape_str(point_kernel.shape()));
  }
  Tensor d = depthwise_conv2d(x, depth_kernel, std::nullopt, padding);
  return conv2d(d, point_kernel, bias, Padding::valid);
}

Tensor avgpool2d(const Tensor& x, std::size_t pool_h, std::size_t pool_w) {
  if (x.rank() != 4) throw ShapeError("avgpool2d: input must be [batch,H,W,C]");
  if (pool_h == 0 || pool_w == 0 || pool_h > x.dim(1) || pool_w > x.dim(2)) {
    throw ShapeError("avgpool2d: pool " + std::to_string(pool_h) + "x" + std::to_string(pool_w) +
                     " does not fit " + shape_str(x.shape()));
  }
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const std::size_t oh = h / pool_h, ow = w / pool_w;
  const double inv = 1.0 / static_cast<double>(pool_h * pool_w);
  std::vector<double> out(n * oh * ow * c, 0.0);
  auto xv = x.data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double* o = out.data() + ((b * oh + oy) * ow + ox) * c;
        for (std::size_t py = 0; py < pool_h; ++py)
          for (std::size_t px = 0; px < pool_w; ++px) {
            const double* xi = xv.data() + ((b * h + oy * pool_h + py) * w + ox * pool_w + px) * c;
            for (std::size_t ch = 0; ch < c; ++ch) o[ch] += xi[ch] * inv;
          }
      }
  return make_result(Shape{n, oh, ow, c}, std::move(out), {x},
                     [x, n, h, w, c, oh, ow, pool_h, pool_w, inv](std::span<const double> g,
                                                                  std::span<const double>) mutable {
                       std::vector<double> gx(x.numel(), 0.0);
                       for (std::size_t b = 0; b < n; ++b)
                         for (std::size_t oy = 0; oy < oh; ++oy)
                           for (std::size_t ox = 0; ox < ow; ++ox) {
                             const double* go = g.data() + ((b * oh + oy) * ow + ox) * c;
                             for (std::size_t py = 0; py < pool_h; ++py)
                               for (std::size_t px = 0; px < pool_w; ++px) {
                                 double* gi = gx.data() +
                                              ((b * h + oy * pool_h + py) * w + ox * pool_w + px) * c;
                                 for (std::size_t ch = 0; ch < c; ++ch) gi[ch] += go[ch] * inv;
                               }
                           }
                       x.accumulate_grad(gx);
                     });
}

Tensor dropout(const Tensor& x, double rate, bool training, std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must be in [0,1)");
  if (!training || rate == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  const double s = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.numel());
  for (auto& v : mask) v = keep(rng) ? s : 0.0;
  return mul(x, Tensor(x.shape(), std::move(mask)));
}

Tensor flatten(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("flatten: needs a batch axis");
  return reshape(x, Shape{x.dim(0), x.numel() / std::max<std::size_t>(1, x.dim(0))});
}

Tensor dense(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias) {
  if (x.rank() != 2) throw ShapeError("dense: input must be [batch,in], got " + shape_str(x.shape()));
  return bias ? linear(x, weight, *bias) : linear(x, weight);
}

Tensor lstm(const Tensor& seq, const LstmWeights& wts, bool return_sequences) {
  if (seq.rank() != 3) throw ShapeError("lstm: input must be [batch,T,in], got " + shape_str(seq.shape()));
  const std::size_t n = seq.dim(0), steps = seq.dim(1);
  if (steps == 0) throw ShapeError("lstm: empty sequence");
  const std::size_t h = wts.hidden();
  if (wts.kernel.rank() != 2 || wts.kernel.dim(0) != seq.dim(2) || wts.kernel.dim(1) != 4 * h ||
      wts.recurrent.dim(1) != 4 * h || wts.bias.rank() != 1 || wts.bias.dim(0) != 4 * h) {
    throw ShapeError("lstm: weights do not match input width " + std::to_string(seq.dim(2)) +
                     " and hidden " + std::to_string(h));
  }
  const Tensor xg = linear(seq, wts.kernel, wts.bias);  // [n, T, 4h]
  Tensor hs(Shape{n, h}, 0.0);
  Tensor cs(Shape{n, h}, 0.0);
  std::vector<Tensor> outputs;
  for (std::size_t t = 0; t < steps; ++t) {
    Tensor z = reshape(slice(xg, 1, t, 1), Shape{n, 4 * h});
    if (t > 0) z = add(z, linear(hs, wts.recurrent));
    const Tensor i = sigmoid(slice(z, 1, 0, h));
    const Tensor f = sigmoid(slice(z, 1, h, h));
    const Tensor g = tanh(slice(z, 1, 2 * h, h));
    const Tensor o = sigmoid(slice(z, 1, 3 * h, h));
    cs = t > 0 ? add(mul(f, cs), mul(i, g)) : mul(i, g);
    hs = mul(o, tanh(cs));
    if (return_sequences) outputs.push_back(reshape(hs, Shape{n, 1, h}));
  }
  return return_sequences ? concat(outputs, 1) : hs;
}

BatchNormState BatchNormState::create(std::size_t channels) {
  BatchNormState s;
  s.gamma = Tensor::parameter(Shape{channels}, std::vector<double>(channels, 1.0));
  s.beta = Tensor::parameter(Shape{channels}, std::vector<double>(channels, 0.0));
  s.running_mean.assign(channels, 0.0);
  s.running_var.assign(channels, 1.0);
  return s;
}

Tensor batchnorm(const Tensor& x, BatchNormState& st, bool training,
                 std::optional<std::size_t> axis) {
  if (x.rank() < 2) throw ShapeError("batchnorm: input needs a batch axis and a channel axis");
  const std::size_t ax = axis.value_or(x.rank() - 1);
  if (ax == 0 || ax >= x.rank()) throw ShapeError("batchnorm: bad channel axis");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= x.dim(i);
  for (std::size_t i = ax + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t c = x.dim(ax);
  if (st.gamma.numel() != c || st.beta.numel() != c || st.running_mean.size() != c ||
      st.running_var.size() != c) {
    throw ShapeError("batchnorm: state has " + std::to_string(st.gamma.numel()) +
                     " channels, input has " + std::to_string(c));
  }
  const std::size_t count = outer * inner;
  auto idx = [&](std::size_t o, std::size_t ch, std::size_t in) { return (o * c + ch) * inner + in; };
  auto xv = x.data();

  std::vector<double> mu(c, 0.0), var(c, 0.0);
  if (training) {
    if (x.dim(0) < 2) throw ContractError("batchnorm: training mode needs batch size >= 2");
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t in = 0; in < inner; ++in) mu[ch] += xv[idx(o, ch, in)];
    for (auto& v : mu) v /= static_cast<double>(count);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t in = 0; in < inner; ++in) {
          const double d = xv[idx(o, ch, in)] - mu[ch];
          var[ch] += d * d;
        }
    for (auto& v : var) v /= static_cast<double>(count);
    const double unbias = count > 1 ? static_cast<double>(count) / static_cast<double>(count - 1) : 1.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      st.running_mean[ch] = st.momentum * st.running_mean[ch] + (1.0 - st.momentum) * mu[ch];
      st.running_var[ch] = st.momentum * st.running_var[ch] + (1.0 - st.momentum) * var[ch] * unbias;
    }
  } else {
    mu = st.running_mean;
    var = st.running_var;
  }

  std::vector<double> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = 1.0 / std::sqrt(var[ch] + st.epsilon);
  std::vector<double> xhat(x.numel());
  std::vector<double> out(x.numel());
  auto gv = st.gamma.data();
  auto bv = st.beta.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t i = idx(o, ch, in);
        xhat[i] = (xv[i] - mu[ch]) * inv_std[ch];
        out[i] = gv[ch] * xhat[i] + bv[ch];
      }

  Tensor gamma = st.gamma, beta = st.beta;
  return make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std, training, outer, inner, c,
       count](std::span<const double> g, std::span<const double>) mutable {
        auto idx = [&](std::size_t o, std::size_t ch, std::size_t in) {
          return (o * c + ch) * inner + in;
        };
        auto gm = gamma.data();
        std::vector<double> ggamma(c, 0.0), gbeta(c, 0.0);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t in = 0; in < inner; ++in) {
              const std::size_t i = idx(o, ch, in);
              ggamma[ch] += g[i] * xhat[i];
              gbeta[ch] += g[i];
            }
        gamma.accumulate_grad(ggamma);
        beta.accumulate_grad(gbeta);
        if (!x.requires_grad()) return;
        std::vector<double> gx(x.numel());
        const double nn = static_cast<double>(count);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t in = 0; in < inner; ++in) {
              const std::size_t i = idx(o, ch, in);
              const double dxhat = g[i] * gm[ch];
              if (training) {
                // sum(dxhat) = gamma*gbeta, sum(dxhat*xhat) = gamma*ggamma
                gx[i] = inv_std[ch] / nn *
                        (nn * dxhat - gm[ch] * gbeta[ch] - xhat[i] * gm[ch] * ggamma[ch]);
              } else {
                gx[i] = dxhat * inv_std[ch];
              }
            }
        x.accumulate_grad(gx);
      });
}

// ---------------------------------------------------------------------------

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::input: return "Input";
    case LayerKind::conv2d: return "Conv2D";
    case LayerKind::depthwise_conv2d: return "DepthwiseConv2D";
    case LayerKind::separable_conv2d: return "SeparableConv2D";
    case LayerKind::lstm: return "LSTM";
    case LayerKind::dense: return "Dense";
    case LayerKind::batchnorm: return "BatchNormalization";
    case LayerKind::avgpool: return "AveragePooling2D";
    case LayerKind::dropout: return "Dropout";
    case LayerKind::flatten: return "Flatten";
    case LayerKind::concat: return "Concatenate";
    case LayerKind::add: return "Add";
    case LayerKind::aug_attention_conv: return "AttentionAugmentedConv2D";
    case LayerKind::global_attention: return "GlobalAttention";
  }
  return "?";
}

long long LayerDescriptor::get(const std::string& key) const {
  auto it = hyper.find(key);
  if (it == hyper.end()) {
    throw ConfigError("layer '" + name + "' (" + to_string(kind) + ") is missing hyperparameter '" +
                      key + "'");
  }
  return it->second;
}

long long LayerDescriptor::get_or(const std::string& key, long long fallback) const {
  auto it = hyper.find(key);
  return it == hyper.end() ? fallback : it->second;
}

namespace {

std::size_t positive(const LayerDescriptor& l, const std::string& key) {
  const long long v = l.get(key);
  if (v <= 0) throw ConfigError("layer '" + l.name + "': '" + key + "' must be positive");
  return static_cast<std::size_t>(v);
}

void expect_rank(const LayerDescriptor& l, const Shape& in, std::size_t rank) {
  if (in.size() != rank) {
    throw ShapeError("layer '" + l.name + "' (" + to_string(l.kind) + ") expects a rank-" +
                     std::to_string(rank) + " input, got " + shape_str(in));
  }
}

}  // namespace

ParamShapes param_shapes(const LayerDescriptor& l, const Shape& in) {
  switch (l.kind) {
    case LayerKind::conv2d: {
      expect_rank(l, in, 3);
      const std::size_t f = positive(l, "filters");
      ParamShapes p{{"kernel", {positive(l, "kernel_h"), positive(l, "kernel_w"), in[2], f}}};
      if (l.get_or("bias", 1)) p.push_back({"bias", {f}});
      return p;
    }
    case LayerKind::depthwise_conv2d: {
      expect_rank(l, in, 3);
      const std::size_t m = positive(l, "depth_multiplier");
      ParamShapes p{{"kernel", {positive(l, "kernel_h"), positive(l, "kernel_w"), in[2], m}}};
      if (l.get_or("bias", 0)) p.push_back({"bias", {in[2] * m}});
      return p;
    }
    case LayerKind::separable_conv2d: {
      expect_rank(l, in, 3);
      const std::size_t f = positive(l, "filters");
      ParamShapes p{{"depth_kernel", {positive(l, "kernel_h"), positive(l, "kernel_w"), in[2], 1}},
                    {"point_kernel", {1, 1, in[2], f}}};
      if (l.get_or("bias", 1)) p.push_back({"bias", {f}});
      return p;
    }
    case LayerKind::lstm: {
      expect_rank(l, in, 2);
      const std::size_t h = positive(l, "hidden");
      return {{"kernel", {in[1], 4 * h}}, {"recurrent", {h, 4 * h}}, {"bias", {4 * h}}};
    }
    case LayerKind::dense: {
      expect_rank(l, in, 1);
      const std::size_t u = positive(l, "units");
      ParamShapes p{{"kernel", {in[0], u}}};
      if (l.get_or("bias", 1)) p.push_back({"bias", {u}});
      return p;
    }
    case LayerKind::batchnorm:
      if (in.empty()) throw ShapeError("batchnorm needs a channel axis");
      return {{"gamma", {in.back()}}, {"beta", {in.back()}}};
    case LayerKind::aug_attention_conv:
    case LayerKind::global_attention:
      return attention_param_shapes(l, in);
    case LayerKind::input:
    case LayerKind::avgpool:
    case LayerKind::dropout:
    case LayerKind::flatten:
    case LayerKind::concat:
    case LayerKind::add:
      return {};
  }
  return {};
}

std::size_t param_count(const LayerDescriptor& l, const Shape& in) {
  std::size_t total = 0;
  for (const auto& [name, shape] : param_shapes(l, in)) total += shape_numel(shape);
  return total;
}

std::size_t state_count(const LayerDescriptor& l, const Shape& in) {
  if (l.kind != LayerKind::batchnorm || in.empty()) return 0;
  return 2 * in.back();
}

Shape output_shape(const LayerDescriptor& l, const Shape& in) {
  switch (l.kind) {
    case LayerKind::input:
    case LayerKind::batchnorm:
    case LayerKind::dropout:
    case LayerKind::add:
      return in;
    case LayerKind::conv2d:
    case LayerKind::depthwise_conv2d:
    case LayerKind::separable_conv2d: {
      expect_rank(l, in, 3);
      const std::size_t kh = positive(l, "kernel_h"), kw = positive(l, "kernel_w");
      const bool same = l.get_or("padding", 1) != 0;
      std::size_t oh = in[0], ow = in[1];
      if (!same) {
        if (kh > in[0] || kw > in[1]) {
          throw ShapeError("layer '" + l.name + "': kernel larger than input " + shape_str(in));
        }
        oh = in[0] - kh + 1;
        ow = in[1] - kw + 1;
      }
      const std::size_t ch = l.kind == LayerKind::depthwise_conv2d
                                 ? in[2] * positive(l, "depth_multiplier")
                                 : positive(l, "filters");
      return {oh, ow, ch};
    }
    case LayerKind::lstm: {
      expect_rank(l, in, 2);
      const std::size_t h = positive(l, "hidden");
      return l.get_or("return_sequences", 0) ? Shape{in[0], h} : Shape{h};
    }
    case LayerKind::dense:
      expect_rank(l, in, 1);
      return {positive(l, "units")};
    case LayerKind::avgpool: {
      expect_rank(l, in, 3);
      const std::size_t ph = positive(l, "pool_h"), pw = positive(l, "pool_w");
      if (ph > in[0] || pw > in[1]) throw ShapeError("layer '" + l.name + "': pool larger than input");
      return {in[0] / ph, in[1] / pw, in[2]};
    }
    case LayerKind::flatten:
      return {shape_numel(in)};
    case LayerKind::concat: {
      const std::size_t axis = static_cast<std::size_t>(l.get_or("axis", 0));
      if (axis >= in.size()) throw ShapeError("layer '" + l.name + "': concat axis out of range");
      Shape out = in;
      out[axis] += static_cast<std::size_t>(l.get_or("extra", 0));
      return out;
    }
    case LayerKind::aug_attention_conv:
    case LayerKind::global_attention:
      return attention_output_shape(l, in);
  }
  return in;
}

}  // namespace megdec

#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "megdec/tensor.hpp"

namespace testutil {

inline std::vector<double> randn(std::size_t n, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

inline megdec::Tensor rand_tensor(megdec::Shape shape, std::mt19937_64& rng, double sd = 1.0,
                                  bool grad = false) {
  const std::size_t n = megdec::shape_numel(shape);
  megdec::Tensor t(std::move(shape), randn(n, rng, sd));
  t.set_requires_grad(grad);
  return t;
}

inline megdec::Tensor param(megdec::Shape shape, std::mt19937_64& rng, double sd = 0.5) {
  return rand_tensor(std::move(shape), rng, sd, true);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Reference NHWC convolution with explicit padding offsets.
inline std::vector<double> naive_conv(const std::vector<double>& x, std::size_t n, std::size_t h,
                                      std::size_t w, std::size_t c, const std::vector<double>& k,
                                      std::size_t kh, std::size_t kw, std::size_t co, bool same,
                                      std::size_t& oh, std::size_t& ow) {
  const long pt = same ? (long)(kh - 1) / 2 : 0;
  const long pl = same ? (long)(kw - 1) / 2 : 0;
  oh = same ? h : h - kh + 1;
  ow = same ? w : w - kw + 1;
  std::vector<double> out(n * oh * ow * co, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx)
        for (std::size_t f = 0; f < co; ++f) {
          double acc = 0.0;
          for (std::size_t i = 0; i < kh; ++i)
            for (std::size_t j = 0; j < kw; ++j) {
              const long iy = (long)(y + i) - pt, ix = (long)(xx + j) - pl;
              if (iy < 0 || ix < 0 || iy >= (long)h || ix >= (long)w) continue;
              for (std::size_t ch = 0; ch < c; ++ch)
                acc += x[((b * h + iy) * w + ix) * c + ch] * k[((i * kw + j) * c + ch) * co + f];
            }
          out[((b * oh + y) * ow + xx) * co + f] = acc;
        }
  return out;
}

}  // namespace testutil

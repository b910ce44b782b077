#include "megdec/attention.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <memory>

namespace megdec {

void MultiHeadConfig::validate(std::size_t input_width) const {
  if (heads == 0 || key_depth == 0 || value_depth == 0) {
    throw ConfigError("multi-head attention needs heads, key_depth and value_depth >= 1");
  }
  auto check = [&](const Tensor& w, std::size_t rows, std::size_t cols, const char* name) {
    if (w.rank() != 2 || w.dim(0) != rows || (cols != 0 && w.dim(1) != cols)) {
      throw ShapeError(std::string("multi-head ") + name + " has shape " + shape_str(w.shape()) +
                       ", expected [" + std::to_string(rows) + "," +
                       (cols ? std::to_string(cols) : std::string("*")) + "]");
    }
  };
  check(w_q, input_width, heads * key_depth, "W_q");
  check(w_k, input_width, heads * key_depth, "W_k");
  check(w_v, input_width, heads * value_depth, "W_v");
  check(w_o, heads * value_depth, 0, "W_o");
}

namespace {

struct Projections {
  Tensor q, k, v;  // [.., n, heads*d]
};

Projections project(const Tensor& x, const MultiHeadConfig& cfg) {
  if (x.rank() != 2 && x.rank() != 3) {
    throw ShapeError("attention input must be [n,C] or [batch,n,C], got " + shape_str(x.shape()));
  }
  cfg.validate(x.shape().back());
  return {linear(x, cfg.w_q), linear(x, cfg.w_k), linear(x, cfg.w_v)};
}

// exp over [-708, 0], written so the compiler can vectorize it:
// 2^k * e^r with |r| <= ln2/2 and a degree-12 Taylor polynomial. Relative
// error is a few ulp.
__attribute__((target_clones("avx2", "default"))) void exp_nonpositive(double* a, std::size_t n) {
  constexpr double log2e = 1.4426950408889634, ln2_hi = 0.6931471805599453, ln2_lo = 2.3190468138462996e-17;
  constexpr double shifter = 6755399441055744.0;  // 1.5 * 2^52
  for (std::size_t i = 0; i < n; ++i) {
    const double x = a[i];
    const double t = x * log2e + shifter;
    const double k = t - shifter;
    const double r = (x - k * ln2_hi) - k * ln2_lo;
    double p = 1.0 / 479001600.0;
    p = p * r + 1.0 / 39916800.0;
    p = p * r + 1.0 / 3628800.0;
    p = p * r + 1.0 / 362880.0;
    p = p * r + 1.0 / 40320.0;
    p = p * r + 1.0 / 5040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    // The low mantissa bits of t hold k; move them into the exponent field.
    const std::int64_t bits = (std::bit_cast<std::int64_t>(t) - std::bit_cast<std::int64_t>(shifter) + 1023) << 52;
    a[i] = p * std::bit_cast<double>(bits);
  }
}

// Reductions over four interleaved lanes. Written with vector types so the
// summation order, and therefore the result, is the same on every target.
using v4d = double __attribute__((vector_size(32)));
#define MEGDEC_LOAD4(dst, p) __builtin_memcpy(&(dst), (p), sizeof(v4d))

__attribute__((target_clones("avx2", "default"))) double vdot(const double* a, const double* b, std::size_t n) {
  v4d acc = {0, 0, 0, 0}, x, y;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    MEGDEC_LOAD4(x, a + i);
    MEGDEC_LOAD4(y, b + i);
    acc += x * y;
  }
  double s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

// One row of softmax(q k^T): scores, stabilized exp, normalization.
__attribute__((target_clones("avx2", "default"))) void softmax_row(const double* qi, const double* kt,
                                                                  std::size_t dk, std::size_t n, double* a) {
  std::fill(a, a + n, 0.0);
  for (std::size_t d = 0; d < dk; ++d) {
    const double qd = qi[d];
    const double* kd = kt + d * n;
    for (std::size_t j = 0; j < n; ++j) a[j] += qd * kd[j];
  }
  double mx = -INFINITY;
  for (std::size_t j = 0; j < n; ++j) mx = a[j] > mx ? a[j] : mx;
  for (std::size_t j = 0; j < n; ++j) a[j] = std::max(a[j] - mx, -708.0);
  exp_nonpositive(a, n);
  v4d acc = {0, 0, 0, 0}, x;
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    MEGDEC_LOAD4(x, a + j);
    acc += x;
  }
  double total = (acc[0] + acc[1]) + (acc[2] + acc[3]);
  for (; j < n; ++j) total += a[j];
  const double inv = 1.0 / total;
  for (std::size_t t = 0; t < n; ++t) a[t] *= inv;
}

// Gradient contributions of one output row given its weights `a` and
// upstream gradient gi. gkt and gvt use the transposed [d, n] layout.
__attribute__((target_clones("avx2", "default"))) void attend_row_backward(
    const double* a, const double* gi, const double* qi, const double* kt, const double* vt, std::size_t n,
    std::size_t dk, std::size_t dv, double* ds, double* gqi, double* gkt, double* gvt) {
  // ds = dL/d(weights) first, then through the softmax.
  std::fill(ds, ds + n, 0.0);
  for (std::size_t d = 0; d < dv; ++d) {
    const double gd = gi[d];
    const double* vd = vt + d * n;
    double* gvd = gvt + d * n;
    for (std::size_t j = 0; j < n; ++j) {
      ds[j] += gd * vd[j];
      gvd[j] += gd * a[j];
    }
  }
  const double r = vdot(a, ds, n);
  for (std::size_t j = 0; j < n; ++j) ds[j] = a[j] * (ds[j] - r);
  for (std::size_t d = 0; d < dk; ++d) {
    gqi[d] += vdot(ds, kt + d * n, n);
    const double qd = qi[d];
    double* gkd = gkt + d * n;
    for (std::size_t j = 0; j < n; ++j) gkd[j] += ds[j] * qd;
  }
}

// [n, d] -> [d, n]
void transpose_into(const double* src, std::size_t n, std::size_t d, double* dst) {
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t c = 0; c < d; ++c) dst[c * n + j] = src[j * d + c];
}

// softmax(q k^T) v in one pass. The n x n weights are kept only inside the
// backward closure.
Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v) {
  const bool batched = q.rank() == 3;
  const std::size_t b = batched ? q.dim(0) : 1, n = q.dim(q.rank() - 2);
  const std::size_t dk = q.shape().back(), dv = v.shape().back();
  auto qv = q.data(), kv = k.data(), vv = v.data();
  std::shared_ptr<double[]> weights(new double[b * n * n]);
  std::vector<double> out(b * n * dv, 0.0);
  std::vector<double> kt(n * dk), vt(n * dv);
  for (std::size_t bi = 0; bi < b; ++bi) {
    const double* qb = qv.data() + bi * n * dk;
    transpose_into(kv.data() + bi * n * dk, n, dk, kt.data());
    transpose_into(vv.data() + bi * n * dv, n, dv, vt.data());
    for (std::size_t i = 0; i < n; ++i) {
      double* a = weights.get() + (bi * n + i) * n;
      softmax_row(qb + i * dk, kt.data(), dk, n, a);
      double* o = out.data() + (bi * n + i) * dv;
      for (std::size_t d = 0; d < dv; ++d) o[d] = vdot(a, vt.data() + d * n, n);
    }
  }
  Shape shape = v.shape();
  return make_result(
      std::move(shape), std::move(out), {q, k, v},
      [q, k, v, weights, b, n, dk, dv](std::span<const double> g, std::span<const double>) {
        auto qv = q.data(), kv = k.data(), vv = v.data();
        std::vector<double> gq(q.numel(), 0.0), gk(k.numel(), 0.0), gv(v.numel(), 0.0);
        std::vector<double> kt(n * dk), vt(n * dv), gkt(n * dk), gvt(n * dv), ds(n);
        for (std::size_t bi = 0; bi < b; ++bi) {
          const std::size_t qo = bi * n * dk, vo = bi * n * dv;
          transpose_into(kv.data() + qo, n, dk, kt.data());
          transpose_into(vv.data() + vo, n, dv, vt.data());
          std::fill(gkt.begin(), gkt.end(), 0.0);
          std::fill(gvt.begin(), gvt.end(), 0.0);
          for (std::size_t i = 0; i < n; ++i) {
            attend_row_backward(weights.get() + (bi * n + i) * n, g.data() + vo + i * dv, qv.data() + qo + i * dk,
                                kt.data(), vt.data(), n, dk, dv, ds.data(), gq.data() + qo + i * dk, gkt.data(),
                                gvt.data());
          }
          for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t d = 0; d < dk; ++d) gk[qo + j * dk + d] = gkt[d * n + j];
            for (std::size_t d = 0; d < dv; ++d) gv[vo + j * dv + d] = gvt[d * n + j];
          }
        }
        if (q.requires_grad()) q.accumulate_grad(gq);
        if (k.requires_grad()) k.accumulate_grad(gk);
        if (v.requires_grad()) v.accumulate_grad(gv);
      });
}

Tensor head_output(const Projections& p, const MultiHeadConfig& cfg, std::size_t head,
                   Tensor* weights) {
  if (head >= cfg.heads) {
    throw ConfigError("head index " + std::to_string(head) + " out of range for " +
                      std::to_string(cfg.heads) + " heads");
  }
  const std::size_t last = p.q.rank() - 1;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(cfg.key_depth));
  // Scaling Q before the product is the same as scaling the scores.
  Tensor q = scale(slice(p.q, last, head * cfg.key_depth, cfg.key_depth), inv_sqrt);
  Tensor k = slice(p.k, last, head * cfg.key_depth, cfg.key_depth);
  Tensor v = slice(p.v, last, head * cfg.value_depth, cfg.value_depth);
  if (weights == nullptr) return attend(q, k, v);
  Tensor a = softmax(matmul(q, transpose_last(k)), last);
  *weights = a;
  return matmul(a, v);
}

}  // namespace

Tensor attention_head(const Tensor& x, const MultiHeadConfig& cfg, std::size_t head,
                      Tensor* weights) {
  return head_output(project(x, cfg), cfg, head, weights);
}

Tensor multihead(const Tensor& x, const MultiHeadConfig& cfg) {
  const Projections p = project(x, cfg);
  std::vector<Tensor> outs;
  outs.reserve(cfg.heads);
  for (std::size_t h = 0; h < cfg.heads; ++h) outs.push_back(head_output(p, cfg, h, nullptr));
  Tensor joined = cfg.heads == 1 ? outs[0] : concat(outs, x.rank() - 1);
  return linear(joined, cfg.w_o);
}

Tensor aug_attention_conv(const Tensor& input, const Tensor& conv_kernel,
                          const std::optional<Tensor>& conv_bias, const MultiHeadConfig& cfg,
                          AttentionPositions positions) {
  if (input.rank() != 4) {
    throw ShapeError("aug_attention_conv: input must be [batch,H,W,C], got " +
                     shape_str(input.shape()));
  }
  const std::size_t b = input.dim(0), h = input.dim(1), w = input.dim(2), c = input.dim(3);
  Tensor conv = conv2d(input, conv_kernel, conv_bias, Padding::same);

  Tensor attn;
  if (positions == AttentionPositions::pixels) {
    Tensor y = multihead(reshape(input, Shape{b, h * w, c}), cfg);
    attn = reshape(y, Shape{b, h, w, cfg.out_width()});
  } else {
    if (cfg.out_width() % w != 0) {
      throw ShapeError("aug_attention_conv: row-mode output width " +
                       std::to_string(cfg.out_width()) + " is not a multiple of W=" +
                       std::to_string(w));
    }
    Tensor y = multihead(reshape(input, Shape{b, h, w * c}), cfg);
    attn = reshape(y, Shape{b, h, w, cfg.out_width() / w});
  }
  if (conv.dim(1) != attn.dim(1) || conv.dim(2) != attn.dim(2)) {
    throw ShapeError("aug_attention_conv: branch spatial shapes differ: " +
                     shape_str(conv.shape()) + " vs " + shape_str(attn.shape()));
  }
  return concat({conv, attn}, 3);
}

// ---------------------------------------------------------------------------

namespace {

struct Batched {
  Tensor source;  // [b, T, hs]
  Tensor target;  // [b, ht]
  bool batched;
};

Batched as_batched(const Tensor& source, const Tensor& target) {
  if (source.rank() == 2 && target.rank() == 1) {
    return {reshape(source, Shape{1, source.dim(0), source.dim(1)}),
            reshape(target, Shape{1, target.dim(0)}), false};
  }
  if (source.rank() == 3 && target.rank() == 2 && source.dim(0) == target.dim(0)) {
    return {source, target, true};
  }
  throw ShapeError("global attention: source " + shape_str(source.shape()) + " and target " +
                   shape_str(target.shape()) + " are not [T,h]/[h] or [b,T,h]/[b,h]");
}

Tensor score_batched(const Batched& in, const Tensor& w_a) {
  const std::size_t b = in.source.dim(0), hs = in.source.dim(2), ht = in.target.dim(1);
  if (w_a.rank() != 2 || w_a.dim(0) != ht || w_a.dim(1) != hs) {
    throw ShapeError("global attention: W_a " + shape_str(w_a.shape()) + " does not match target width " +
                     std::to_string(ht) + " and source width " + std::to_string(hs));
  }
  Tensor u = reshape(linear(in.target, w_a), Shape{b, hs, 1});  // h_t^T W_a
  return reshape(matmul(in.source, u), Shape{b, in.source.dim(1)});
}

}  // namespace

Tensor global_attention_score(const Tensor& source, const Tensor& target, const Tensor& w_a) {
  const Batched in = as_batched(source, target);
  Tensor s = score_batched(in, w_a);
  return in.batched ? s : reshape(s, Shape{source.dim(0)});
}

GlobalAttentionOutput global_attention_apply(const Tensor& source, const Tensor& target,
                                             const GlobalAttentionConfig& cfg) {
  const Batched in = as_batched(source, target);
  const std::size_t b = in.source.dim(0), steps = in.source.dim(1), hs = in.source.dim(2);
  const std::size_t ht = in.target.dim(1);
  if (steps == 0) throw ShapeError("global attention: empty source sequence");
  if (cfg.w_c.rank() != 2 || cfg.w_c.dim(0) != hs + ht) {
    throw ShapeError("global attention: W_c " + shape_str(cfg.w_c.shape()) + " needs " +
                     std::to_string(hs + ht) + " rows");
  }
  Tensor a = softmax(score_batched(in, cfg.w_a), 1);
  Tensor ctx = reshape(matmul(reshape(a, Shape{b, 1, steps}), in.source), Shape{b, hs});
  Tensor h = tanh(linear(concat({ctx, in.target}, 1), cfg.w_c));
  if (in.batched) return {h, a, ctx};
  return {reshape(h, Shape{h.dim(1)}), reshape(a, Shape{steps}), reshape(ctx, Shape{hs})};
}

// ---------------------------------------------------------------------------

namespace {

std::size_t pos(const LayerDescriptor& l, const std::string& key) {
  const long long v = l.get(key);
  if (v <= 0) throw ConfigError("layer '" + l.name + "': '" + key + "' must be positive");
  return static_cast<std::size_t>(v);
}

}  // namespace

ParamShapes attention_param_shapes(const LayerDescriptor& l, const Shape& in) {
  if (l.kind == LayerKind::aug_attention_conv) {
    if (in.size() != 3) throw ShapeError("layer '" + l.name + "' expects [H,W,C], got " + shape_str(in));
    const std::size_t f = pos(l, "filters");
    const std::size_t heads = pos(l, "heads"), dk = pos(l, "key_depth"), dv = pos(l, "value_depth");
    const std::size_t ac = pos(l, "attn_channels");
    const bool rows = l.get_or("positions", 0) != 0;
    const std::size_t feat = rows ? in[1] * in[2] : in[2];
    const std::size_t out = rows ? in[1] * ac : ac;
    ParamShapes p{{"conv_kernel", {pos(l, "kernel_h"), pos(l, "kernel_w"), in[2], f}}};
    if (l.get_or("bias", 1)) p.push_back({"conv_bias", {f}});
    p.push_back({"w_q", {feat, heads * dk}});
    p.push_back({"w_k", {feat, heads * dk}});
    p.push_back({"w_v", {feat, heads * dv}});
    p.push_back({"w_o", {heads * dv, out}});
    return p;
  }
  if (l.kind == LayerKind::global_attention) {
    if (in.size() != 2) throw ShapeError("layer '" + l.name + "' expects [T,h], got " + shape_str(in));
    const std::size_t hs = in[1];
    const std::size_t ht = static_cast<std::size_t>(l.get_or("target_width", static_cast<long long>(hs)));
    return {{"w_a", {ht, hs}}, {"w_c", {hs + ht, pos(l, "out")}}};
  }
  return {};
}

Shape attention_output_shape(const LayerDescriptor& l, const Shape& in) {
  if (l.kind == LayerKind::aug_attention_conv) {
    if (in.size() != 3) throw ShapeError("layer '" + l.name + "' expects [H,W,C], got " + shape_str(in));
    return {in[0], in[1], pos(l, "filters") + pos(l, "attn_channels")};
  }
  if (in.size() != 2) throw ShapeError("layer '" + l.name + "' expects [T,h], got " + shape_str(in));
  return {pos(l, "out")};
}

}  // namespace megdec

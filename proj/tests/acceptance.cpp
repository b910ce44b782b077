// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance            run all criteria
//   acceptance 1 4 5      run a subset

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "helpers.hpp"
#include "megdec/attention.hpp"
#include "megdec/dataio.hpp"
#include "megdec/layers.hpp"
#include "megdec/meshing.hpp"
#include "megdec/models.hpp"
#include "megdec/training.hpp"
#include "mesh_golden.hpp"
#include "model_helpers.hpp"

using namespace megdec;
namespace fs = std::filesystem;
using testutil::param;
using testutil::rand_tensor;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> failures;
  std::string detail;

  void expect(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (failures.size() < 8) failures.push_back(what);
    }
  }
};

std::string fmt(double v, int prec = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// 1. Parameter counts

Outcome criterion_params() {
  Outcome o;
  const ParamTable cas = count_params(ModelConfig::defaults(Architecture::cascade));
  const ParamTable mv = count_params(ModelConfig::defaults(Architecture::multiview));
  const ParamTable eeg = count_params(ModelConfig::defaults(Architecture::eegnet));

  auto pin = [&](const std::string& model, const ParamTable& t, const std::string& layer, std::size_t expected) {
    const std::size_t got = t.row(layer).per_copy;
    o.expect(got == expected, model + " " + layer + ": " + std::to_string(got) + " != " + std::to_string(expected));
  };
  pin("cascade", cas, "conv2", 296);
  pin("cascade", cas, "conv3", 396);
  pin("cascade", cas, "fc", 210125);
  pin("cascade", cas, "lstm1", 5440);
  pin("cascade", cas, "lstm2", 840);
  pin("cascade", cas, "classifier", 504);
  pin("multiview", mv, "temporal_fc", 31125);
  pin("multiview", mv, "lstm1", 5440);
  pin("multiview", mv, "temporal_out", 1375);
  pin("multiview", mv, "classifier", 1004);
  pin("eegnet", eeg, "classifier", 516);

  // EEGNet layer-level entries: explicit descriptors.
  LayerDescriptor sep;
  sep.kind = LayerKind::separable_conv2d;
  sep.name = "separable";
  sep.hyper = {{"filters", 16}, {"kernel_h", 1}, {"kernel_w", 14}, {"padding", 1}, {"bias", 1}};
  LayerDescriptor bn;
  bn.kind = LayerKind::batchnorm;
  bn.name = "bn";
  o.expect(param_count(sep, {1, 89, 16}) == 496, "eegnet separable != 496");
  o.expect(param_count(bn, {1, 1, 2}) == 4, "eegnet batchnorm(2) != 4");
  o.expect(param_count(bn, {1, 1, 4}) == 8, "eegnet batchnorm(4) != 8");

  // Attempted entries: each must match or carry a documented decided count.
  struct Attempt {
    Architecture a;
    std::size_t reference;
  };
  const Attempt attempts[] = {{Architecture::eegnet, 2211648}, {Architecture::eegnet, 2112},
                              {Architecture::cascade, 2660},   {Architecture::eegnet, 128},
                              {Architecture::multiview, 480},  {Architecture::cascade, 16125},
                              {Architecture::cascade, 2139869}};
  const auto refs = reference_counts();
  std::size_t matched = 0, documented = 0;
  for (const auto& at : attempts) {
    auto it = std::find_if(refs.begin(), refs.end(),
                           [&](const ReferenceCount& r) { return r.architecture == at.a && r.reference == at.reference; });
    if (it == refs.end()) {
      o.expect(false, "no report entry for " + std::to_string(at.reference));
      continue;
    }
    if (it->ours == it->reference) ++matched;
    else {
      ++documented;
      o.expect(!it->note.empty(), std::to_string(at.reference) + " differs without a note");
    }
  }
  for (const auto& r : refs) {
    if (r.pinned) o.expect(r.ours == r.reference, "report: pinned " + r.item + " differs");
  }

  const fs::path report = fs::current_path() / "parameter_report.md";
  std::ofstream(report) << reference_report();
  o.expect(fs::file_size(report) > 0, "report not written");
  o.detail = "14 pinned counts exact; attempted: " + std::to_string(matched) + " match, " + std::to_string(documented) +
             " documented; report " + report.filename().string();
  return o;
}

// ---------------------------------------------------------------------------
// 2. Gradient suite

Outcome criterion_gradients() {
  Outcome o;
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  std::size_t checks = 0;
  auto check = [&](const std::string& name, const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                   std::size_t coords = 64) {
    const double err = grad_check(f, std::move(inputs), 1e-6, coords);
    worst = std::max(worst, err);
    ++checks;
    o.expect(err < 1e-5, name + ": " + fmt(err));
  };
  auto probe = [&](const Shape& s) { return rand_tensor(s, rng); };

  // Tensor ops.
  Tensor a = param({3, 4}, rng), b = param({3, 4}, rng), m = param({4, 2}, rng), bias = param({2}, rng);
  Tensor pos = Tensor(Shape{3, 4}, testutil::randn(12, rng));
  for (double& v : pos.mutable_data()) v = std::abs(v) + 0.1;
  pos.set_requires_grad(true);
  check("add", [&] { return sum(tanh(add(a, b))); }, {a, b});
  check("sub", [&] { return sum(tanh(sub(a, b))); }, {a, b});
  check("mul", [&] { return sum(mul(a, b)); }, {a, b});
  check("scale", [&] { return sum(tanh(scale(a, -1.7))); }, {a});
  check("add_scalar", [&] { return sum(tanh(add_scalar(a, 0.3))); }, {a});
  check("tanh", [&] { return sum(tanh(a)); }, {a});
  check("sigmoid", [&] { return sum(sigmoid(a)); }, {a});
  check("relu", [&] { return sum(mul(relu(pos), pos)); }, {pos});
  check("elu", [&] { return sum(tanh(elu(a))); }, {a});
  check("exp", [&] { return sum(exp(scale(a, 0.5))); }, {a});
  check("mean", [&] { return mean(mul(a, a)); }, {a});
  check("matmul", [&] { return sum(tanh(matmul(a, m))); }, {a, m});
  Tensor ba = param({2, 3, 4}, rng), bm = param({2, 4, 2}, rng);
  check("batched matmul", [&] { return sum(tanh(matmul(ba, bm))); }, {ba, bm});
  check("linear", [&] { return sum(tanh(linear(ba, m, bias))); }, {ba, m, bias});
  const Tensor pt = probe({4, 3});
  check("transpose_last", [&] { return sum(mul(transpose_last(a), pt)); }, {a});
  const Tensor pr = probe({2, 6});
  check("reshape", [&] { return sum(mul(reshape(a, {2, 6}), pr)); }, {a});
  const Tensor pc = probe({3, 8});
  check("concat", [&] { return sum(mul(concat({a, b}, 1), pc)); }, {a, b});
  const Tensor ps = probe({3, 2});
  check("slice", [&] { return sum(mul(slice(a, 1, 1, 2), ps)); }, {a});
  const Tensor psm = probe({3, 4});
  check("softmax", [&] { return sum(mul(softmax(a, 1), psm)); }, {a});
  const std::vector<int> labels{0, 3, 1};
  check("softmax_cross_entropy", [&] { return softmax_cross_entropy(a, labels); }, {a});

  // Layers.
  Tensor x = param({2, 4, 5, 3}, rng);
  Tensor k = param({3, 3, 3, 2}, rng), kb = param({2}, rng);
  const Tensor p_same = probe({2, 4, 5, 2}), p_valid = probe({2, 2, 3, 2});
  check("conv2d same", [&] { return sum(mul(conv2d(x, k, kb, Padding::same), p_same)); }, {x, k, kb});
  check("conv2d valid", [&] { return sum(mul(conv2d(x, k, kb, Padding::valid), p_valid)); }, {x, k, kb});
  Tensor dk = param({2, 3, 3, 2}, rng), db = param({6}, rng);
  const Tensor p_dw = probe({2, 4, 5, 6});
  check("depthwise_conv2d", [&] { return sum(mul(depthwise_conv2d(x, dk, db, Padding::same), p_dw)); }, {x, dk, db});
  Tensor sk = param({1, 3, 3, 1}, rng), pk = param({1, 1, 3, 4}, rng), pb = param({4}, rng);
  check("separable_conv2d", [&] { return sum(tanh(separable_conv2d(x, sk, pk, pb, Padding::same))); },
        {x, sk, pk, pb});
  check("avgpool2d", [&] { return sum(tanh(avgpool2d(x, 2, 2))); }, {x});
  const Tensor pf = probe({2, 60});
  check("flatten", [&] { return sum(mul(flatten(x), pf)); }, {x});
  Tensor dx = param({3, 6}, rng), dw = param({6, 4}, rng), dbias = param({4}, rng);
  check("dense", [&] { return softmax_cross_entropy(dense(dx, dw, dbias), labels); }, {dx, dw, dbias});
  const Tensor p_drop = probe({2, 4, 5, 3});
  check("dropout",
        [&] {
          std::mt19937_64 r(5);  // same mask at every probe
          return sum(mul(dropout(x, 0.4, true, r), p_drop));
        },
        {x});
  Tensor seq = param({2, 4, 3}, rng);
  LstmWeights lw{param({3, 8}, rng), param({2, 8}, rng), param({8}, rng)};
  check("lstm sequence", [&] { return sum(tanh(lstm(seq, lw, true))); }, {seq, lw.kernel, lw.recurrent, lw.bias});
  check("lstm last", [&] { return sum(lstm(seq, lw, false)); }, {seq, lw.kernel, lw.recurrent, lw.bias});
  auto st = BatchNormState::create(3);
  st.gamma.mutable_data()[0] = 1.3;
  st.beta.mutable_data()[2] = -0.4;
  const Tensor p_bn = probe({2, 4, 5, 3});
  for (bool training : {true, false}) {
    check(std::string("batchnorm ") + (training ? "training" : "inference"),
          [&] {
            BatchNormState copy = st;
            return sum(mul(batchnorm(x, copy, training), p_bn));
          },
          {x, st.gamma, st.beta});
  }

  // Attention.
  auto heads = [&](std::size_t c, std::size_t h, std::size_t dkk, std::size_t dv, std::size_t out) {
    MultiHeadConfig cfg;
    cfg.heads = h;
    cfg.key_depth = dkk;
    cfg.value_depth = dv;
    cfg.w_q = param({c, h * dkk}, rng);
    cfg.w_k = param({c, h * dkk}, rng);
    cfg.w_v = param({c, h * dv}, rng);
    cfg.w_o = param({h * dv, out}, rng);
    return cfg;
  };
  auto mh = heads(3, 2, 2, 3, 2);
  Tensor xs = param({5, 3}, rng);
  const Tensor p_mh = probe({5, 2});
  check("multihead", [&] { return sum(mul(multihead(xs, mh), p_mh)); }, {xs, mh.w_q, mh.w_k, mh.w_v, mh.w_o});
  const Tensor p_head = probe({5, 3});
  check("attention_head", [&] { return sum(mul(attention_head(xs, mh, 1), p_head)); }, {xs, mh.w_q, mh.w_k, mh.w_v});
  Tensor ax = param({2, 3, 4, 3}, rng);
  check("aug_attention_conv pixels", [&] { return sum(tanh(aug_attention_conv(ax, k, kb, mh))); },
        {ax, k, kb, mh.w_q, mh.w_k, mh.w_v, mh.w_o});
  auto rows = heads(12, 2, 2, 2, 8);
  check("aug_attention_conv rows",
        [&] { return sum(tanh(aug_attention_conv(ax, k, kb, rows, AttentionPositions::rows))); },
        {ax, k, kb, rows.w_q, rows.w_k, rows.w_v, rows.w_o});
  GlobalAttentionConfig g{param({4, 3}, rng), param({7, 5}, rng)};
  Tensor src = param({2, 6, 3}, rng), tgt = param({2, 4}, rng);
  const Tensor p_ga = probe({2, 5}), p_gw = probe({2, 6});
  check("global attention output", [&] { return sum(mul(global_attention_apply(src, tgt, g).attentional, p_ga)); },
        {src, tgt, g.w_a, g.w_c});
  check("global attention weights", [&] { return sum(mul(global_attention_apply(src, tgt, g).weights, p_gw)); },
        {src, tgt, g.w_a});

  // Full model losses on tiny shapes. Biases are moved off zero so no ReLU
  // sits exactly on its kink.
  std::uniform_real_distribution<double> jitter(0.05, 0.2);
  for (auto arch : testutil::kArchitectures) {
    for (auto mode : testutil::kModes) {
      const ModelConfig c = testutil::tiny_config(arch, mode);
      ModelGraph model = build_model(c);
      for (auto& [n, p] : model.named_parameters()) {
        if (n.size() >= 5 && n.substr(n.size() - 5) == "/bias") {
          for (double& v : p.mutable_data()) v = jitter(rng);
        }
      }
      const ModelInput in = testutil::random_input(c, 2, rng);
      const std::vector<int> y{1, 3};
      std::vector<Tensor> inputs = model.parameters();
      for (const auto& t : in.spatial) inputs.push_back(t);
      if (in.segments.rank() > 0) inputs.push_back(in.segments);
      for (bool training : {false, true}) {
        ForwardOptions opts;
        opts.training = training;
        check("model " + to_string(arch) + "/" + to_string(mode) + (training ? " training" : " inference"),
              [&] { return softmax_cross_entropy(forward(model, in, opts).logits, y); }, inputs,
              c.self_attention() ? 4 : 24);
      }
    }
  }
  o.detail = std::to_string(checks) + " checks, max relative error " + fmt(worst);
  return o;
}

// ---------------------------------------------------------------------------
// 3. Attention properties

MultiHeadConfig random_heads(std::size_t c, std::size_t h, std::size_t dk, std::size_t dv, std::size_t out,
                             std::mt19937_64& rng) {
  MultiHeadConfig cfg;
  cfg.heads = h;
  cfg.key_depth = dk;
  cfg.value_depth = dv;
  cfg.w_q = rand_tensor({c, h * dk}, rng);
  cfg.w_k = rand_tensor({c, h * dk}, rng);
  cfg.w_v = rand_tensor({c, h * dv}, rng);
  cfg.w_o = rand_tensor({h * dv, out}, rng);
  return cfg;
}

Outcome criterion_attention() {
  Outcome o;
  constexpr int kTrials = 100;
  std::mt19937_64 rng(31);
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };

  // Row-stochasticity, self-attention and global attention.
  double worst_row = 0.0;
  for (int t = 0; t < kTrials; ++t) {
    const std::size_t n = pick(1, 9), c = pick(1, 5), h = pick(1, 3), b = pick(1, 3);
    const auto cfg = random_heads(c, h, pick(1, 3), pick(1, 3), pick(1, 4), rng);
    const Tensor x = rand_tensor({b, n, c}, rng, 2.0);
    for (std::size_t head = 0; head < h; ++head) {
      Tensor w;
      attention_head(x, cfg, head, &w);
      for (std::size_t r = 0; r < b * n; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          const double v = w[r * n + j];
          o.expect(v >= 0.0, "negative attention weight");
          s += v;
        }
        worst_row = std::max(worst_row, std::abs(s - 1.0));
      }
    }
    const std::size_t hs = pick(1, 5), ht = pick(1, 5);
    GlobalAttentionConfig g{rand_tensor({ht, hs}, rng), rand_tensor({hs + ht, pick(1, 4)}, rng)};
    const auto ga = global_attention_apply(rand_tensor({b, n, hs}, rng, 2.0), rand_tensor({b, ht}, rng, 2.0), g);
    for (std::size_t r = 0; r < b; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += ga.weights[r * n + j];
      worst_row = std::max(worst_row, std::abs(s - 1.0));
    }
  }
  o.expect(worst_row <= 1e-12, "row sums off by " + fmt(worst_row));

  // Equal keys give uniform weights.
  double worst_uniform = 0.0;
  for (int t = 0; t < kTrials; ++t) {
    const std::size_t n = pick(1, 9), c = pick(1, 5), h = pick(1, 3);
    const auto cfg = random_heads(c, h, pick(1, 3), pick(1, 3), pick(1, 4), rng);
    const auto row = testutil::randn(c, rng, 2.0);
    std::vector<double> xs;
    for (std::size_t i = 0; i < n; ++i) xs.insert(xs.end(), row.begin(), row.end());
    const Tensor x(Shape{n, c}, xs);
    for (std::size_t head = 0; head < h; ++head) {
      Tensor w;
      attention_head(x, cfg, head, &w);
      for (double v : w.data()) worst_uniform = std::max(worst_uniform, std::abs(v - 1.0 / static_cast<double>(n)));
    }
    const std::size_t hs = pick(1, 5), ht = pick(1, 5);
    GlobalAttentionConfig g{rand_tensor({ht, hs}, rng), rand_tensor({hs + ht, 2}, rng)};
    const auto srow = testutil::randn(hs, rng, 2.0);
    std::vector<double> ss;
    for (std::size_t i = 0; i < n; ++i) ss.insert(ss.end(), srow.begin(), srow.end());
    const auto ga = global_attention_apply(Tensor(Shape{n, hs}, ss), rand_tensor({ht}, rng), g);
    for (double v : ga.weights.data()) worst_uniform = std::max(worst_uniform, std::abs(v - 1.0 / static_cast<double>(n)));
  }
  o.expect(worst_uniform <= 1e-12, "equal keys: weights off uniform by " + fmt(worst_uniform));

  // Permutation equivariance of self-attention; the global context is invariant.
  double worst_perm = 0.0;
  for (int t = 0; t < kTrials; ++t) {
    const std::size_t n = pick(2, 9), c = pick(1, 5), h = pick(1, 3), out = pick(1, 4);
    const auto cfg = random_heads(c, h, pick(1, 3), pick(1, 3), out, rng);
    const Tensor x = rand_tensor({n, c}, rng);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> px(n * c);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) px[i * c + j] = x[perm[i] * c + j];
    const Tensor y = multihead(x, cfg), yp = multihead(Tensor(Shape{n, c}, px), cfg);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < out; ++j) {
        const double ref = y[perm[i] * out + j];
        worst_perm = std::max(worst_perm, std::abs(yp[i * out + j] - ref) / (1.0 + std::abs(ref)));
      }
    const std::size_t hs = c, ht = pick(1, 5);
    GlobalAttentionConfig g{rand_tensor({ht, hs}, rng), rand_tensor({hs + ht, 3}, rng)};
    const Tensor target = rand_tensor({ht}, rng);
    const auto ga = global_attention_apply(x, target, g);
    const auto gp = global_attention_apply(Tensor(Shape{n, c}, px), target, g);
    for (std::size_t i = 0; i < n; ++i)
      worst_perm = std::max(worst_perm, std::abs(gp.weights[i] - ga.weights[perm[i]]));
    for (std::size_t j = 0; j < hs; ++j)
      worst_perm = std::max(worst_perm, std::abs(gp.context[j] - ga.context[j]) / (1.0 + std::abs(ga.context[j])));
    for (std::size_t j = 0; j < 3; ++j)
      worst_perm = std::max(worst_perm, std::abs(gp.attentional[j] - ga.attentional[j]));
  }
  o.expect(worst_perm <= 1e-12, "permutation: deviation " + fmt(worst_perm));

  // A single position passes its value projection (and its own state) through.
  double worst_single = 0.0;
  for (int t = 0; t < kTrials; ++t) {
    const std::size_t c = pick(1, 5), h = pick(1, 3), dv = pick(1, 3);
    const auto cfg = random_heads(c, h, pick(1, 3), dv, pick(1, 4), rng);
    const Tensor x = rand_tensor({1, c}, rng);
    for (std::size_t head = 0; head < h; ++head) {
      Tensor w;
      const Tensor y = attention_head(x, cfg, head, &w);
      worst_single = std::max(worst_single, std::abs(w[0] - 1.0));
      for (std::size_t j = 0; j < dv; ++j) {
        double ref = 0.0;
        for (std::size_t i = 0; i < c; ++i) ref += x[i] * cfg.w_v[i * h * dv + head * dv + j];
        worst_single = std::max(worst_single, std::abs(y[j] - ref) / (1.0 + std::abs(ref)));
      }
    }
    const std::size_t ht = pick(1, 5);
    GlobalAttentionConfig g{rand_tensor({ht, c}, rng), rand_tensor({c + ht, 2}, rng)};
    const auto ga = global_attention_apply(x, rand_tensor({ht}, rng), g);
    worst_single = std::max(worst_single, std::abs(ga.weights[0] - 1.0));
    for (std::size_t j = 0; j < c; ++j) worst_single = std::max(worst_single, std::abs(ga.context[j] - x[j]));
  }
  o.expect(worst_single <= 1e-12, "T=1: deviation " + fmt(worst_single));

  // Augmented convolution output channels = conv filters + attention channels.
  std::size_t law_failures = 0;
  for (int t = 0; t < kTrials; ++t) {
    const std::size_t b = pick(1, 2), hh = pick(1, 5), ww = pick(1, 5), c = pick(1, 3), f = pick(1, 3);
    const std::size_t kh = 2 * pick(0, 1) + 1, kw = 2 * pick(0, 1) + 1, att = pick(1, 3);
    const Tensor in = rand_tensor({b, hh, ww, c}, rng);
    const Tensor kern = rand_tensor({kh, kw, c, f}, rng);
    const bool by_rows = t % 2 == 1;
    const auto cfg = by_rows ? random_heads(ww * c, pick(1, 2), pick(1, 2), pick(1, 2), ww * att, rng)
                             : random_heads(c, pick(1, 2), pick(1, 2), pick(1, 2), att, rng);
    const Tensor y = aug_attention_conv(in, kern, std::nullopt, cfg,
                                        by_rows ? AttentionPositions::rows : AttentionPositions::pixels);
    law_failures += y.shape() != Shape{b, hh, ww, f + att};
  }
  o.expect(law_failures == 0, std::to_string(law_failures) + " channel-law violations");

  o.detail = std::to_string(kTrials) + " trials per property; row-sum error " + fmt(worst_row) + ", uniform " +
             fmt(worst_uniform) + ", permutation " + fmt(worst_perm) + ", T=1 " + fmt(worst_single);
  return o;
}

// ---------------------------------------------------------------------------
// 4. Mesh golden test

Outcome criterion_mesh() {
  Outcome o;
  const SensorGrid& g = SensorGrid::standard();
  std::size_t cells = 0;
  for (std::size_t r = 0; r < kGridRows; ++r)
    for (std::size_t c = 0; c < kGridCols; ++c) {
      std::size_t expected = static_cast<std::size_t>(testutil::kPrinted[r][c]);
      if (r == 4 && c == 3) expected = 125;  // not printed; mirror of sensor 195
      o.expect(g.sensor_at(r, c) == expected,
               "cell (" + std::to_string(r) + "," + std::to_string(c) + ") holds " + std::to_string(g.sensor_at(r, c)));
      cells += expected != 0;
    }
  o.expect(cells == kSensors, "occupied cells " + std::to_string(cells));

  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (std::size_t j = 1; j <= kSensors; ++j) {
    const GridCell p = sensor_position(j);
    seen.insert({p.row, p.col});
    o.expect(g.sensor_at(p.row, p.col) == j, "inverse fails for sensor " + std::to_string(j));
  }
  o.expect(seen.size() == kSensors, "placement is not injective");

  std::mt19937_64 rng(4);
  for (int t = 0; t < 20; ++t) {
    const auto x = testutil::randn(kSensors, rng), y = testutil::randn(kSensors, rng);
    const double alpha = std::uniform_real_distribution<double>(-3, 3)(rng);
    const double beta = std::uniform_real_distribution<double>(-3, 3)(rng);
    std::vector<double> z(kSensors);
    for (std::size_t j = 0; j < kSensors; ++j) z[j] = alpha * x[j] + beta * y[j];
    const Tensor mx = build_mesh(x), my = build_mesh(y), mz = build_mesh(z);
    bool linear = true;
    for (std::size_t i = 0; i < mz.numel(); ++i) linear &= mz[i] == alpha * mx[i] + beta * my[i];
    o.expect(linear, "mesh is not linear");
    o.expect(read_mesh(mx) == x, "read_mesh(build_mesh(x)) != x");
  }
  const Tensor window = rand_tensor({kSensors, 5}, rng);
  const Tensor stack = build_mesh_tensor(window);
  for (std::size_t d = 0; d < 5; ++d) {
    const auto col = read_mesh(stack, d);
    for (std::size_t j = 0; j < kSensors; ++j) o.expect(col[j] == window[j * 5 + d], "depth slice round trip");
  }
  o.detail = "248 sensors cell-for-cell, bijection, linearity and round trip exact";
  return o;
}

// ---------------------------------------------------------------------------
// 5. Segmentation laws

Outcome criterion_segmentation() {
  Outcome o;
  o.expect(segment_stride(1425, 0.33) == 955, "stride(1425, 0.33) != 955");
  // (steps, window, overlap, stride, count), enumerated by hand.
  struct Case {
    std::size_t steps, window;
    double overlap;
    std::size_t stride, count;
  };
  const Case cases[] = {{2905, 1425, 0.33, 955, 2}, {2379, 1425, 0.33, 955, 1}, {2380, 1425, 0.33, 955, 2},
                        {10, 4, 0.5, 2, 4},         {7, 7, 0.0, 7, 1},          {6, 7, 0.0, 7, 0},
                        {1, 1, 0.9, 1, 1},          {12, 3, 0.0, 3, 4},         {11, 4, 0.75, 1, 8}};
  for (const auto& c : cases) {
    const std::string tag = std::to_string(c.steps) + "/" + std::to_string(c.window) + "/" + fmt(c.overlap);
    o.expect(segment_stride(c.window, c.overlap) == c.stride, "stride " + tag);
    o.expect(segment_count(c.steps, c.window, c.overlap) == c.count, "count " + tag);
  }

  // Windows start at multiples of the stride and copy the recording.
  std::mt19937_64 rng(5);
  Recording rec;
  rec.subject_id = "S01";
  rec.sampling_rate = 100.0;
  rec.samples = rand_tensor({kSensors, 23}, rng);
  const auto segs = segment_sliding(rec, 6, 0.5);
  o.expect(segs.size() == 6, "segment_sliding count " + std::to_string(segs.size()));
  for (std::size_t i = 0; i < segs.size(); ++i)
    for (std::size_t j : {0u, 131u, 247u})
      for (std::size_t t = 0; t < 6; ++t) o.expect(segs[i].at({j, t}) == rec.samples.at({j, 3 * i + t}), "window content");

  // Streams: W = 10, D = 10, 50% overlap. Sample k+1 starts 5 streams later and
  // its first half is literally sample k's second half.
  const Tensor long_rec = rand_tensor({kSensors, 260}, rng);
  o.expect(stream_advance(10, 0.5) == 5, "stream advance");
  o.expect(stream_sample_count(260, 10, 10, 0.5) == 4, "stream sample count");
  const auto samples = assemble_streams(long_rec, 10, 10, 0.5);
  o.expect(samples.size() == 4, "assembled sample count");
  for (std::size_t k = 0; k + 1 < samples.size(); ++k) {
    o.expect(samples[k + 1].first_step == samples[k].first_step + 50, "first step");
    for (std::size_t s = 0; s < 5; ++s) {
      o.expect(samples[k].spatial[5 + s].same_node(samples[k + 1].spatial[s]), "spatial stream not shared");
      o.expect(samples[k].temporal[5 + s].same_node(samples[k + 1].temporal[s]), "temporal stream not shared");
    }
    for (std::size_t s = 0; s < 5; ++s) {
      o.expect(!samples[k].spatial[s].same_node(samples[k + 1].spatial[s]), "unexpected sharing");
    }
  }
  for (const auto& s : samples)
    for (std::size_t w = 0; w < 10; ++w)
      for (std::size_t d = 0; d < 10; ++d)
        for (std::size_t j : {0u, 99u, 247u})
          o.expect(s.temporal[w][j * 10 + d] == long_rec[j * 260 + s.first_step + w * 10 + d], "stream content");
  o.detail = "stride(1425, 0.33) = 955, " + std::to_string(std::size(cases)) +
             " enumerated cases, second half of each sample's streams shared with the next";
  return o;
}

// ---------------------------------------------------------------------------
// 6 / 7. End-to-end synthetic training

struct E2EConfig {
  ModelConfig model;
  TrainConfig train;
};

// Desk scale: 256 Hz, 2 s recordings. EEGNet's segment and temporal kernel are
// scaled from the 2034.5 Hz settings (1425 -> 179, 128 -> 16).
E2EConfig e2e_config(Architecture a) {
  E2EConfig c{ModelConfig::defaults(a), TrainConfig::defaults(a)};
  c.model.attention = AttentionMode::self_global;
  c.model.seed = 7;
  c.train.seed = 7;
  if (a == Architecture::eegnet) {
    c.model.segment_length = 179;
    c.model.kernel_length = 16;
    c.train.adam.lr = 1e-3;
    c.train.epochs = 30;
  } else {
    c.train.epochs = 15;
  }
  return c;
}

SynthSpec e2e_synth() {
  SynthSpec s;
  s.subjects = 18;
  s.duration = 2.0;
  s.sampling_rate = 256.0;
  s.seed = 7;
  return s;
}

struct E2EData {
  SplitSpec split;
  std::vector<Recording> train, test;
  NormStats stats;
};

E2EData& e2e_data() {
  static E2EData d = [] {
    E2EData out;
    auto recs = synth_generate(e2e_synth());
    out.split = SplitSpec::for_setup(2, subject_ids(recs));
    const std::set<std::string> tr(out.split.train_subjects.begin(), out.split.train_subjects.end());
    for (auto& r : recs) (tr.count(r.subject_id) ? out.train : out.test).push_back(std::move(r));
    out.stats = compute_norm_stats(out.train);
    return out;
  }();
  return d;
}

// Class centroids of per-channel window means, fit on training subjects.
double nearest_centroid_accuracy(const E2EData& d, std::size_t window) {
  auto features = [&](const std::vector<Recording>& recs) {
    std::vector<std::pair<int, std::vector<double>>> out;
    for (const auto& r : recs) {
      for (const auto& seg : segment_sliding(normalize(r, d.stats), window, 0.0)) {
        std::vector<double> f(kSensors, 0.0);
        for (std::size_t j = 0; j < kSensors; ++j)
          for (std::size_t t = 0; t < window; ++t) f[j] += seg[j * window + t] / static_cast<double>(window);
        out.push_back({r.label, std::move(f)});
      }
    }
    return out;
  };
  const auto train = features(d.train), test = features(d.test);
  std::vector<std::vector<double>> centroid(kClasses, std::vector<double>(kSensors, 0.0));
  std::vector<double> n(kClasses, 0.0);
  for (const auto& [y, f] : train) {
    n[y] += 1;
    for (std::size_t j = 0; j < kSensors; ++j) centroid[y][j] += f[j];
  }
  for (int y = 0; y < kClasses; ++y)
    for (double& v : centroid[y]) v /= n[y];
  std::size_t correct = 0;
  for (const auto& [y, f] : test) {
    int best = 0;
    double best_d = INFINITY;
    for (int c = 0; c < kClasses; ++c) {
      double dist = 0.0;
      for (std::size_t j = 0; j < kSensors; ++j) dist += (f[j] - centroid[c][j]) * (f[j] - centroid[c][j]);
      if (dist < best_d) best_d = dist, best = c;
    }
    correct += best == y;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

struct E2ERun {
  Architecture arch;
  double seconds = 0.0;
  std::size_t epochs = 0;
  Metrics test;
  Metrics train;
  AttentionExport attention;
  double sample_ratio_median = 0.0;  // diagnostic: max/min of individual a_t
};

const E2ERun& e2e_run(Architecture a) {
  static std::map<Architecture, E2ERun> cache;
  auto it = cache.find(a);
  if (it != cache.end()) return it->second;
  const auto t0 = std::chrono::steady_clock::now();
  const E2EData& d = e2e_data();
  const E2EConfig c = e2e_config(a);
  const SampleSet train_set = prepare_samples(d.train, c.model, c.train.prep, &d.stats, true);
  const SampleSet test_set = prepare_samples(d.test, c.model, c.train.prep, &d.stats, false);
  ModelGraph model = build_model(c.model);
  E2ERun r;
  r.arch = a;
  const TrainResult tr = train(model, train_set, c.train, [&](const EpochRecord& e) {
    std::cout << "    " << to_string(a) << " epoch " << e.epoch << ": loss " << fmt(e.train_loss, 4) << ", accuracy "
              << fmt(e.train_accuracy) << ", val loss " << fmt(e.val_loss, 4) << " (" << fmt(seconds_since(t0), 4)
              << " s)" << std::endl;
  });
  r.epochs = tr.history.size();
  r.test = evaluate_cross_subject(model, test_set, d.split.test_subjects);
  r.train = evaluate_cross_subject(model, train_set, d.split.train_subjects);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < std::min<std::size_t>(500, test_set.size()); ++i) idx.push_back(i);
  r.attention = export_attention_weights(model, test_set, idx);
  std::vector<double> ratios;
  for (std::size_t i = 0; i < std::min<std::size_t>(100, test_set.size()); ++i) {
    const auto one = export_attention_weights(model, test_set, {i});
    const auto [lo, hi] = std::minmax_element(one.mean.begin(), one.mean.end());
    ratios.push_back(*hi / *lo);
  }
  std::sort(ratios.begin(), ratios.end());
  r.sample_ratio_median = ratios[ratios.size() / 2];
  r.seconds = seconds_since(t0);
  return cache.emplace(a, std::move(r)).first->second;
}

Outcome criterion_e2e() {
  Outcome o;
  const E2EData& d = e2e_data();
  o.expect(d.split.test_subjects.size() == 6, "expected 6 held-out subjects");
  const double oracle = std::min(nearest_centroid_accuracy(d, 179), nearest_centroid_accuracy(d, 100));
  o.expect(oracle >= 0.99, "nearest-centroid oracle " + fmt(oracle));
  std::cout << "    nearest-centroid oracle accuracy " << fmt(oracle, 4) << std::endl;
  std::string detail = "oracle " + fmt(oracle, 4);
  for (auto a : testutil::kArchitectures) {
    const E2ERun& r = e2e_run(a);
    const std::string name = to_string(a);
    o.expect(r.test.subjects.size() == 6, name + ": " + std::to_string(r.test.subjects.size()) + " test subjects");
    o.expect(r.test.mean >= 0.90, name + ": held-out accuracy " + r.test.summary());
    o.expect(r.train.mean >= 0.95, name + ": training accuracy " + r.train.summary());
    o.expect(r.seconds < 20 * 60, name + ": " + fmt(r.seconds, 4) + " s");
    detail += "; " + name + " test " + r.test.summary() + " train " + r.train.summary() + " in " +
              std::to_string(r.epochs) + " epochs, " + fmt(r.seconds, 3) + " s";
  }
  o.detail = detail;
  return o;
}

// The ratio is taken on the exported vector, i.e. the average over up to 500
// held-out samples.
Outcome criterion_attention_export() {
  Outcome o;
  std::string detail;
  for (auto a : testutil::kArchitectures) {
    const E2ERun& r = e2e_run(a);
    const auto& e = r.attention;
    const std::string name = to_string(a);
    const double total = std::accumulate(e.mean.begin(), e.mean.end(), 0.0);
    const auto [lo, hi] = std::minmax_element(e.mean.begin(), e.mean.end());
    const double ratio = *hi / *lo;
    o.expect(std::abs(e.min_sum - 1.0) <= 1e-9 && std::abs(e.max_sum - 1.0) <= 1e-9,
             name + ": row sums in [" + fmt(e.min_sum, 17) + ", " + fmt(e.max_sum, 17) + "]");
    o.expect(std::abs(total - 1.0) <= 1e-9, name + ": mean vector sums to " + fmt(total, 17));
    o.expect(ratio > 1.5, name + ": max/min weight ratio " + fmt(ratio));
    if (!detail.empty()) detail += "; ";
    detail += name + " " + std::to_string(e.mean.size()) + " positions, ratio " + fmt(ratio) +
              " (single samples: median " + fmt(r.sample_ratio_median) + ")";
  }
  o.detail = detail;
  return o;
}

// ---------------------------------------------------------------------------
// 8. Determinism

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Outcome criterion_determinism() {
  Outcome o;
  const fs::path root = fs::temp_directory_path() / "megdec_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  auto cli = [&](std::vector<std::string> args) {
    args.insert(args.begin(), "megdec");
    std::ostringstream captured;
    auto* old = std::cout.rdbuf(captured.rdbuf());
    const int code = cli::run(args);
    std::cout.rdbuf(old);
    o.expect(code == 0, "'" + args[1] + "' exited with " + std::to_string(code));
    return captured.str();
  };
  auto dir = [&](const std::string& name) { return (root / name).string(); };

  std::vector<std::string> sums;
  for (const char* name : {"ds_a", "ds_b"}) {
    cli({"synth", "--subjects", "18", "--seed", "7", "--duration", "1", "--rate", "128", "--out", dir(name)});
    sums.push_back(dataset_checksum(dir(name)));
  }
  o.expect(sums[0] == sums[1], "synth checksums differ: " + sums[0] + " vs " + sums[1]);

  const std::vector<std::vector<std::string>> models = {
      {"--arch", "cascade", "--epochs", "2", "--lr", "1e-3"},
      {"--arch", "eegnet", "--epochs", "3", "--lr", "1e-3", "--segment_length", "64", "--kernel_length", "8",
       "--eeg_filters", "4", "--depth_multiplier", "1", "--separable_filters", "4", "--separable_kernel", "4",
       "--pool1", "2", "--pool2", "4", "--global_state_width", "4", "--global_out", "16", "--dropout", "0.3"}};
  std::size_t runs = 0;
  for (const auto& flags : models) {
    std::vector<std::string> metrics, evals;
    for (const char* rep : {"1", "2"}) {
      const std::string out = dir(flags[1] + "_train_" + rep), ev = dir(flags[1] + "_eval_" + rep);
      std::vector<std::string> args{"train", "--data", dir("ds_a"), "--out", out, "--seed", "11", "--quiet"};
      args.insert(args.end(), flags.begin(), flags.end());
      cli(args);
      cli({"eval", "--data", dir("ds_a"), "--checkpoint", out + "/model.ckpt", "--out", ev});
      metrics.push_back(slurp(fs::path(out) / "metrics.json"));
      evals.push_back(slurp(fs::path(ev) / "metrics.json"));
      o.expect(slurp(fs::path(out) / "model.ckpt") == slurp(dir(flags[1] + "_train_1") + "/model.ckpt"),
               flags[1] + ": checkpoints differ");
      ++runs;
    }
    o.expect(!metrics[0].empty() && metrics[0] == metrics[1], flags[1] + ": train metrics differ");
    o.expect(!evals[0].empty() && evals[0] == evals[1], flags[1] + ": eval metrics differ");
    const Metrics m = Metrics::from_json(evals[0]);
    o.expect(m.subjects.size() == 6, flags[1] + ": eval reports " + std::to_string(m.subjects.size()) + " subjects");
  }
  fs::remove_all(root);
  o.detail = "synth checksum " + sums[0] + " twice; " + std::to_string(runs) +
             " train+eval runs, metrics and checkpoints byte-identical per seed";
  return o;
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  // Criterion 6 has a per-architecture budget, checked inside; the total here
  // covers three architectures. Criterion 7 reuses criterion 6's models.
  const std::vector<Criterion> criteria = {
      {1, "parameter counts", 1.0, criterion_params},
      {2, "gradient suite", 120.0, criterion_gradients},
      {3, "attention properties", 30.0, criterion_attention},
      {4, "mesh golden test", 1.0, criterion_mesh},
      {5, "segmentation laws", 5.0, criterion_segmentation},
      {6, "end-to-end synthetic training", 3 * 20 * 60.0, criterion_e2e},
      {7, "attention export after training", 3 * 20 * 60.0, criterion_attention_export},
      {8, "determinism", 300.0, criterion_determinism},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.expect(false, std::string("exception: ") + e.what());
    }
    const double secs = seconds_since(t0);
    o.expect(secs < c.budget_seconds, "runtime " + fmt(secs, 4) + " s over the " + fmt(c.budget_seconds, 4) + " s budget");
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << c.id << " " << c.name << ": " << o.detail << " ("
              << fmt(secs, 3) << " s)" << std::endl;
    for (const auto& f : o.failures) std::cout << "     - " << f << std::endl;
    failed += !o.pass;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
  return failed == 0 ? 0 : 1;
}

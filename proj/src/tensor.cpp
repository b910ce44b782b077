#include "megdec/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace megdec {

namespace {
thread_local Tape* g_active_tape = nullptr;

bool is_scalar_like(const Tensor& t) { return t.numel() == 1; }

void check_binary(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape() || is_scalar_like(a) || is_scalar_like(b)) return;
  throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()) + " are not broadcast-compatible");
}

// C[m,n] (+)= A[m,k] * B[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m,k] += G[m,n] * B[k,n]^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    double* ci = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += gi[j] * bp[j];
      ci[p] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T * G[m,n]
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * gi[j];
    }
  }
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  std::vector<double> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i]);
  return make_result(a.shape(), std::move(out), {a},
                     [a, deriv](std::span<const double> g, std::span<const double> y) mutable {
                       auto xv = a.data();
                       std::vector<double> ga(g.size());
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * deriv(xv[i], y[i]);
                       a.accumulate_grad(ga);
                     });
}

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------

Tensor::Tensor() : node_(std::make_shared<detail::Node>()) { node_->data.assign(1, 0.0); }

Tensor::Tensor(Shape shape, double fill) : node_(std::make_shared<detail::Node>()) {
  node_->data.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : node_(std::make_shared<detail::Node>()) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor of shape " + shape_str(shape) + " cannot hold " +
                     std::to_string(data.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> data) {
  Tensor t(std::move(shape), std::move(data));
  t.set_requires_grad(true);
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  }
  return node_->shape[axis];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw ShapeError("at(): index rank does not match " + shape_str(shape()));
  std::size_t flat = 0, axis = 0;
  for (std::size_t i : index) {
    if (i >= node_->shape[axis]) throw ShapeError("at(): index out of range for " + shape_str(shape()));
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->data[flat];
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.assign(numel(), 0.0); }

void Tensor::accumulate_grad(std::span<const double> g) const {
  if (!node_->requires_grad) return;
  if (g.size() != numel()) throw ContractError("gradient size mismatch in accumulate_grad");
  if (node_->grad.empty()) node_->grad.assign(numel(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) node_->grad[i] += g[i];
}

Tensor Tensor::clone() const { return Tensor(shape(), node_->data); }

// ---------------------------------------------------------------------------

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::shared_ptr<detail::Node> output,
                  BackwardFn fn) {
  entries_.push_back({std::move(output), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.rank() != 0) {
    throw ContractError("backward() needs a rank-0 loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  loss.node_->grad.assign(1, 1.0);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->fn(it->output->grad, it->output->data);
  }
}

NoGradGuard::NoGradGuard() : saved_(g_active_tape) { g_active_tape = nullptr; }

NoGradGuard::~NoGradGuard() { g_active_tape = saved_; }

void backward(const Tensor& loss) {
  Tape* tape = Tape::active();
  if (tape == nullptr) throw ContractError("backward() called without an active tape");
  tape->backward(loss);
}

Tensor make_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                   BackwardFn backward_fn) {
  Tensor out(std::move(shape), std::move(data));
  Tape* tape = Tape::active();
  if (tape == nullptr) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  out.set_requires_grad(true);
  tape->record(out.node_, std::move(backward_fn));
  return out;
}

Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
                   BackwardFn backward_fn) {
  return make_result(std::move(shape), std::move(data), std::vector<Tensor>(inputs),
                     std::move(backward_fn));
}

// ---------------------------------------------------------------------------

namespace {
enum class BinOp { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  check_binary(a, b, name);
  const bool a_small = is_scalar_like(a) && a.shape() != b.shape();
  const bool b_small = is_scalar_like(b) && a.shape() != b.shape() && !a_small;
  const Shape& out_shape = a_small ? b.shape() : a.shape();
  const std::size_t n = shape_numel(out_shape);
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = a_small ? av[0] : av[i];
    const double y = b_small ? bv[0] : bv[i];
    out[i] = op == BinOp::add ? x + y : op == BinOp::sub ? x - y : x * y;
  }
  return make_result(out_shape, std::move(out), {a, b},
                     [a, b, op, a_small, b_small, n](std::span<const double> g, std::span<const double>) mutable {
                       auto av = a.data();
                       auto bv = b.data();
                       if (a.requires_grad()) {
                         std::vector<double> ga(a_small ? 1 : n, 0.0);
                         for (std::size_t i = 0; i < n; ++i) {
                           double d = g[i];
                           if (op == BinOp::mul) d *= b_small ? bv[0] : bv[i];
                           ga[a_small ? 0 : i] += d;
                         }
                         a.accumulate_grad(ga);
                       }
                       if (b.requires_grad()) {
                         std::vector<double> gb(b_small ? 1 : n, 0.0);
                         for (std::size_t i = 0; i < n; ++i) {
                           double d = op == BinOp::sub ? -g[i] : g[i];
                           if (op == BinOp::mul) d *= a_small ? av[0] : av[i];
                           gb[b_small ? 0 : i] += d;
                         }
                         b.accumulate_grad(gb);
                       }
                     });
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::mul, "mul"); }

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(
      a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor elu(const Tensor& a, double alpha) {
  return unary(
      a, [alpha](double x) { return x > 0 ? x : alpha * std::expm1(x); },
      [alpha](double x, double y) { return x > 0 ? 1.0 : y + alpha; });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor sum(const Tensor& a) {
  auto v = a.data();
  const double s = std::accumulate(v.begin(), v.end(), 0.0);
  return make_result(Shape{}, {s}, {a}, [a](std::span<const double> g, std::span<const double>) mutable {
    std::vector<double> ga(a.numel(), g[0]);
    a.accumulate_grad(ga);
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2 || a.rank() != b.rank()) {
    throw ShapeError("matmul needs equal ranks >= 2, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t r = a.rank();
  for (std::size_t i = 0; i + 2 < r; ++i) {
    if (a.shape()[i] != b.shape()[i]) {
      throw ShapeError("matmul batch dimensions differ: " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
    }
  }
  const std::size_t m = a.shape()[r - 2], k = a.shape()[r - 1], n = b.shape()[r - 1];
  if (b.shape()[r - 2] != k) {
    throw ShapeError("matmul inner dimensions differ: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  std::size_t batch = 1;
  for (std::size_t i = 0; i + 2 < r; ++i) batch *= a.shape()[i];
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  std::vector<double> out(batch * m * n, 0.0);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    gemm_nn(a.data().data() + bi * m * k, b.data().data() + bi * k * n, out.data() + bi * m * n, m,
            k, n);
  }
  return make_result(out_shape, std::move(out), {a, b},
                     [a, b, batch, m, k, n](std::span<const double> g, std::span<const double>) mutable {
                       if (a.requires_grad()) {
                         std::vector<double> ga(batch * m * k, 0.0);
                         for (std::size_t bi = 0; bi < batch; ++bi)
                           gemm_nt(g.data() + bi * m * n, b.data().data() + bi * k * n,
                                   ga.data() + bi * m * k, m, k, n);
                         a.accumulate_grad(ga);
                       }
                       if (b.requires_grad()) {
                         std::vector<double> gb(batch * k * n, 0.0);
                         for (std::size_t bi = 0; bi < batch; ++bi)
                           gemm_tn(a.data().data() + bi * m * k, g.data() + bi * m * n,
                                   gb.data() + bi * k * n, m, k, n);
                         b.accumulate_grad(gb);
                       }
                     });
}

Tensor linear(const Tensor& x, const Tensor& weight) {
  if (weight.rank() != 2 || x.rank() < 1 || x.shape().back() != weight.shape()[0]) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                     shape_str(weight.shape()));
  }
  const std::size_t k = weight.shape()[0], n = weight.shape()[1];
  const std::size_t m = x.numel() / k;
  Shape out_shape = x.shape();
  out_shape.back() = n;
  std::vector<double> out(m * n, 0.0);
  gemm_nn(x.data().data(), weight.data().data(), out.data(), m, k, n);
  return make_result(out_shape, std::move(out), {x, weight},
                     [x, weight, m, k, n](std::span<const double> g, std::span<const double>) mutable {
                       if (x.requires_grad()) {
                         std::vector<double> gx(m * k, 0.0);
                         gemm_nt(g.data(), weight.data().data(), gx.data(), m, k, n);
                         x.accumulate_grad(gx);
                       }
                       if (weight.requires_grad()) {
                         std::vector<double> gw(k * n, 0.0);
                         gemm_tn(x.data().data(), g.data(), gw.data(), m, k, n);
                         weight.accumulate_grad(gw);
                       }
                     });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  Tensor y = linear(x, weight);
  const std::size_t n = weight.shape()[1];
  if (bias.numel() != n) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match " +
                     std::to_string(n) + " outputs");
  }
  std::vector<double> out(y.data().begin(), y.data().end());
  auto bv = bias.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % n];
  return make_result(y.shape(), std::move(out), {y, bias}, [y, bias, n](std::span<const double> g, std::span<const double>) mutable {
    y.accumulate_grad(g);
    if (bias.requires_grad()) {
      std::vector<double> gb(n, 0.0);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
      bias.accumulate_grad(gb);
    }
  });
}

Tensor transpose_last(const Tensor& a) {
  if (a.rank() < 2) throw ShapeError("transpose_last needs rank >= 2");
  const std::size_t r = a.rank();
  const std::size_t m = a.shape()[r - 2], n = a.shape()[r - 1];
  const std::size_t batch = a.numel() / (m * n);
  Shape out_shape = a.shape();
  std::swap(out_shape[r - 2], out_shape[r - 1]);
  std::vector<double> out(a.numel());
  auto v = a.data();
  for (std::size_t bi = 0; bi < batch; ++bi)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[bi * m * n + j * m + i] = v[bi * m * n + i * n + j];
  return make_result(out_shape, std::move(out), {a}, [a, batch, m, n](std::span<const double> g, std::span<const double>) mutable {
    std::vector<double> ga(g.size());
    for (std::size_t bi = 0; bi < batch; ++bi)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[bi * m * n + i * n + j] = g[bi * m * n + j * m + i];
    a.accumulate_grad(ga);
  });
}

// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), {a},
                     [a](std::span<const double> g, std::span<const double>) mutable { a.accumulate_grad(g); });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat axis out of range for " + shape_str(first));
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) {
      throw ShapeError("concat: " + shape_str(s) + " does not match " + shape_str(first) +
                       " off axis " + std::to_string(axis));
    }
    total += s[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total;
  const AxisSplit whole = split_at(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    const std::size_t ext = p.shape()[axis];
    auto v = p.data();
    for (std::size_t o = 0; o < whole.outer; ++o) {
      std::copy_n(v.data() + o * ext * whole.inner, ext * whole.inner,
                  out.data() + (o * total + offset) * whole.inner);
    }
    offsets.push_back(offset);
    offset += ext;
  }
  return make_result(out_shape, std::move(out), parts,
                     [parts, offsets, whole, total, axis](std::span<const double> g, std::span<const double>) mutable {
                       for (std::size_t pi = 0; pi < parts.size(); ++pi) {
                         const Tensor& p = parts[pi];
                         if (!p.requires_grad()) continue;
                         const std::size_t ext = p.shape()[axis];
                         std::vector<double> gp(p.numel());
                         for (std::size_t o = 0; o < whole.outer; ++o) {
                           std::copy_n(g.data() + (o * total + offsets[pi]) * whole.inner,
                                       ext * whole.inner, gp.data() + o * ext * whole.inner);
                         }
                         p.accumulate_grad(gp);
                       }
                     });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= a.rank() || start + length > a.shape()[axis]) {
    throw ShapeError("slice [" + std::to_string(start) + ", +" + std::to_string(length) +
                     ") out of range on axis " + std::to_string(axis) + " of " +
                     shape_str(a.shape()));
  }
  const AxisSplit s = split_at(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  std::vector<double> out(shape_numel(out_shape));
  auto v = a.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(v.data() + (o * s.extent + start) * s.inner, length * s.inner,
                out.data() + o * length * s.inner);
  }
  return make_result(out_shape, std::move(out), {a},
                     [a, s, start, length](std::span<const double> g, std::span<const double>) mutable {
                       std::vector<double> ga(a.numel(), 0.0);
                       for (std::size_t o = 0; o < s.outer; ++o) {
                         std::copy_n(g.data() + o * length * s.inner, length * s.inner,
                                     ga.data() + (o * s.extent + start) * s.inner);
                       }
                       a.accumulate_grad(ga);
                     });
}

// ---------------------------------------------------------------------------

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ShapeError("softmax axis " + std::to_string(axis) + " out of range for " +
                     shape_str(x.shape()));
  }
  const AxisSplit s = split_at(x.shape(), axis);
  auto v = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      double mx = v[base];
      for (std::size_t e = 1; e < s.extent; ++e) mx = std::max(mx, v[base + e * s.inner]);
      double z = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const double t = std::exp(v[base + e * s.inner] - mx);
        out[base + e * s.inner] = t;
        z += t;
      }
      for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] /= z;
    }
  }
  return make_result(x.shape(), std::move(out), {x}, [x, s](std::span<const double> g, std::span<const double> y) mutable {
    std::vector<double> gx(g.size());
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.extent * s.inner + in;
        double dot = 0.0;
        for (std::size_t e = 0; e < s.extent; ++e) dot += g[base + e * s.inner] * y[base + e * s.inner];
        for (std::size_t e = 0; e < s.extent; ++e) {
          const std::size_t i = base + e * s.inner;
          gx[i] = y[i] * (g[i] - dot);
        }
      }
    }
    x.accumulate_grad(gx);
  });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.shape()[0] != labels.size()) {
    throw ShapeError("softmax_cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t b = logits.shape()[0], k = logits.shape()[1];
  auto v = logits.data();
  std::vector<double> probs(b * k);
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw DomainError("label " + std::to_string(labels[i]) + " outside [0, " +
                        std::to_string(k) + ")");
    }
    const double* row = v.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const double log_z = std::log(z) + mx;
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(row[j] - log_z);
    loss += log_z - row[labels[i]];
  }
  loss /= static_cast<double>(b);
  std::vector<int> lab(labels.begin(), labels.end());
  return make_result(Shape{}, {loss}, {logits},
                     [logits, probs = std::move(probs), lab = std::move(lab), b, k](std::span<const double> g, std::span<const double>) mutable {
                       std::vector<double> gl(b * k);
                       const double s = g[0] / static_cast<double>(b);
                       for (std::size_t i = 0; i < b; ++i) {
                         for (std::size_t j = 0; j < k; ++j) {
                           const double target = static_cast<int>(j) == lab[i] ? 1.0 : 0.0;
                           gl[i * k + j] = s * (probs[i * k + j] - target);
                         }
                       }
                       logits.accumulate_grad(gl);
                     });
}

// ---------------------------------------------------------------------------

double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs, double eps,
                  std::size_t max_coords, unsigned seed) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw ContractError("grad_check eps must lie in [1e-7, 1e-3]");
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Tensor loss = f();
    if (loss.rank() != 0) throw ContractError("grad_check needs a scalar-valued function");
    if (!std::isfinite(loss.item())) throw NumericError("grad_check: f is non-finite at the base point");
    tape.backward(loss);
    for (const auto& t : inputs) analytic.push_back(t.grad());
  }
  auto evaluate = [&]() {
    NoGradGuard guard;
    const double v = f().item();
    if (!std::isfinite(v)) throw NumericError("grad_check: f is non-finite at a perturbed point");
    return v;
  };
  std::mt19937 rng(seed);
  double worst = 0.0;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor& t = inputs[ti];
    std::vector<std::size_t> coords(t.numel());
    std::iota(coords.begin(), coords.end(), 0);
    if (coords.size() > max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords);
    }
    for (std::size_t c : coords) {
      auto d = t.mutable_data();
      const double orig = d[c];
      d[c] = orig + eps;
      const double fp = evaluate();
      d[c] = orig - eps;
      const double fm = evaluate();
      d[c] = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double err = std::abs(analytic[ti][c] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace megdec

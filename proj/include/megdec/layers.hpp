#pragma once

// Non-attention building blocks. Spatial tensors are [batch, H, W, C];
// sequences are [batch, T, features]. Kernels follow the [kh, kw, in, out]
// layout.

#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "megdec/tensor.hpp"

namespace megdec {

enum class Padding { valid, same };

Tensor conv2d(const Tensor& x, const Tensor& kernel, const std::optional<Tensor>& bias,
              Padding padding);

/// kernel: [kh, kw, C, multiplier]; output channel c*multiplier + m reads only input channel c.
Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernel, const std::optional<Tensor>& bias,
                        Padding padding);

/// Depthwise pass with `depth_kernel` [kh, kw, C, 1] followed by a 1x1 convolution
/// with `point_kernel` [1, 1, C, filters].
Tensor separable_conv2d(const Tensor& x, const Tensor& depth_kernel, const Tensor& point_kernel,
                        const std::optional<Tensor>& bias, Padding padding);

Tensor avgpool2d(const Tensor& x, std::size_t pool_h, std::size_t pool_w);

/// Inverted dropout; identity when `training` is false or rate is 0.
Tensor dropout(const Tensor& x, double rate, bool training, std::mt19937_64& rng);

/// [batch, ...] -> [batch, prod(...)], row-major order preserved.
Tensor flatten(const Tensor& x);

Tensor dense(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias);

/// Gate order along the 4*hidden axis: input, forget, candidate, output.
struct LstmWeights {
  Tensor kernel;     // [in, 4*hidden]
  Tensor recurrent;  // [hidden, 4*hidden]
  Tensor bias;       // [4*hidden]
  std::size_t hidden() const { return recurrent.shape()[0]; }
};

/// seq: [batch, T, in]. Returns [batch, T, hidden] or the last state [batch, hidden].
Tensor lstm(const Tensor& seq, const LstmWeights& weights, bool return_sequences);

struct BatchNormState {
  Tensor gamma;  // trainable scale
  Tensor beta;   // trainable shift
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.9;
  double epsilon = 1e-5;

  static BatchNormState create(std::size_t channels);
};

/// Per-channel standardization along `axis` (the channel axis; defaults to the last).
/// Training mode uses batch statistics and updates the running estimates.
Tensor batchnorm(const Tensor& x, BatchNormState& state, bool training,
                 std::optional<std::size_t> axis = std::nullopt);

// ---------------------------------------------------------------------------
// Descriptors and parameter accounting.

enum class LayerKind {
  input,
  conv2d,
  depthwise_conv2d,
  separable_conv2d,
  lstm,
  dense,
  batchnorm,
  avgpool,
  dropout,
  flatten,
  concat,
  add,
  aug_attention_conv,
  global_attention,
};

std::string to_string(LayerKind kind);

/// Hyperparameters are integer-valued except for `rate`. Input shapes passed
/// to the accounting functions exclude the batch axis.
struct LayerDescriptor {
  LayerKind kind = LayerKind::input;
  std::string name;
  std::map<std::string, long long> hyper;
  double rate = 0.0;

  long long get(const std::string& key) const;
  long long get_or(const std::string& key, long long fallback) const;
};

using ParamShapes = std::vector<std::pair<std::string, Shape>>;

/// Trainable parameter shapes, in creation order.
ParamShapes param_shapes(const LayerDescriptor& layer, const Shape& input_shape);
std::size_t param_count(const LayerDescriptor& layer, const Shape& input_shape);
/// Non-trainable state size (batchnorm running statistics).
std::size_t state_count(const LayerDescriptor& layer, const Shape& input_shape);
Shape output_shape(const LayerDescriptor& layer, const Shape& input_shape);

}  // namespace megdec

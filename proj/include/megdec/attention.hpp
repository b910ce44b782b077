#pragma once

// Multi-head self-attention, the attention-augmented convolution, and
// Luong-style global (bilinear) attention.

#include <optional>

#include "megdec/layers.hpp"
#include "megdec/tensor.hpp"

namespace megdec {

/// Per-head widths are `key_depth` and `value_depth`; the projections hold all
/// heads side by side, head h occupying columns [h*d, (h+1)*d).
struct MultiHeadConfig {
  std::size_t heads = 2;
  std::size_t key_depth = 1;
  std::size_t value_depth = 1;
  Tensor w_q;  // [C, heads*key_depth]
  Tensor w_k;  // [C, heads*key_depth]
  Tensor w_v;  // [C, heads*value_depth]
  Tensor w_o;  // [heads*value_depth, out]

  /// Throws ConfigError for zero widths, ShapeError for inconsistent projections.
  void validate(std::size_t input_width) const;
  std::size_t out_width() const { return w_o.shape().at(1); }
};

/// X: [n, C] or [batch, n, C]. Returns [.., n, value_depth]. When `weights` is
/// given it receives the [.., n, n] attention matrix.
Tensor attention_head(const Tensor& x, const MultiHeadConfig& cfg, std::size_t head,
                      Tensor* weights = nullptr);

/// Concatenated heads times W_o: [.., n, out].
Tensor multihead(const Tensor& x, const MultiHeadConfig& cfg);

/// What the attention branch treats as a position.
///   pixels: every (h, w) cell, features = C      (n = H*W)
///   rows:   every row h, features = W*C          (n = H)
/// In row mode the W_o output width must be a multiple of W and is unfolded
/// back to [W, out/W].
enum class AttentionPositions { pixels, rows };

/// input: [batch, H, W, C]. Returns [batch, H, W, filters + attention channels].
Tensor aug_attention_conv(const Tensor& input, const Tensor& conv_kernel,
                          const std::optional<Tensor>& conv_bias, const MultiHeadConfig& cfg,
                          AttentionPositions positions = AttentionPositions::pixels);

struct GlobalAttentionConfig {
  Tensor w_a;  // [target width, source width]
  Tensor w_c;  // [source width + target width, out]
};

/// source: [T, hs] or [batch, T, hs]; target: [ht] or [batch, ht].
/// Returns one score per source position: [T] or [batch, T].
Tensor global_attention_score(const Tensor& source, const Tensor& target, const Tensor& w_a);

struct GlobalAttentionOutput {
  Tensor attentional;  // tanh([c; h_t] W_c): [out] or [batch, out]
  Tensor weights;      // a_t: [T] or [batch, T]
  Tensor context;      // c_t: [hs] or [batch, hs]
};

GlobalAttentionOutput global_attention_apply(const Tensor& source, const Tensor& target,
                                             const GlobalAttentionConfig& cfg);

// Accounting for the two attention layer kinds (called from param_shapes/output_shape).
ParamShapes attention_param_shapes(const LayerDescriptor& layer, const Shape& input_shape);
Shape attention_output_shape(const LayerDescriptor& layer, const Shape& input_shape);

}  // namespace megdec

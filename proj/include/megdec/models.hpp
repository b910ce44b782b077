#pragma once

// The three decoders (EEGNet, CascadeNet, MultiviewNet) with optional
// self-attention and global attention, plus parameter accounting and
// checkpoints.

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "megdec/attention.hpp"
#include "megdec/layers.hpp"
#include "megdec/tensor.hpp"

namespace megdec {

enum class Architecture { eegnet, cascade, multiview };
enum class AttentionMode { none, self, self_global };

std::string to_string(Architecture a);
std::string to_string(AttentionMode m);
Architecture parse_architecture(std::string_view s);
AttentionMode parse_attention_mode(std::string_view s);

struct ModelConfig {
  Architecture architecture = Architecture::cascade;
  AttentionMode attention = AttentionMode::self_global;

  // Stream layout (cascade, multiview).
  std::size_t streams = 10;  // W
  std::size_t depth = 10;    // D

  // EEGNet.
  std::size_t segment_length = 1425;
  std::size_t eeg_filters = 16;
  std::size_t depth_multiplier = 2;
  std::size_t separable_filters = 32;
  std::size_t kernel_length = 128;
  std::size_t separable_kernel = 16;
  std::size_t pool1 = 4;
  std::size_t pool2 = 8;
  double dropout = 0.25;

  // Cascade / multiview.
  std::vector<std::size_t> conv_filters{1, 2, 4};
  std::size_t kernel_h = 7;
  std::size_t kernel_w = 7;
  std::size_t fc_units = 125;
  std::size_t lstm_hidden = 10;

  // Attention sizing.
  std::size_t heads = 2;
  std::size_t key_depth = 2;
  std::size_t value_depth = 2;
  std::size_t attn_channels = 2;
  std::size_t global_out = 128;
  std::size_t global_state_width = 8;  // EEGNet: flattened features viewed as states of this width

  std::size_t classes = 4;
  std::uint64_t seed = 0;

  static ModelConfig defaults(Architecture a);

  /// Throws ConfigError for inconsistent settings.
  void validate() const;
  /// `key=value` lines, one per field, in a fixed order.
  std::string to_text() const;
  /// Unknown keys and malformed values throw ConfigError; missing keys keep defaults.
  static ModelConfig from_text(std::string_view text);

  bool self_attention() const { return attention != AttentionMode::none; }
  bool global_attention() const { return attention == AttentionMode::self_global; }
};

/// One layer of the graph. Layers inside a stream are instantiated once per
/// stream (`copies`), each copy with its own weights.
struct LayerEntry {
  LayerDescriptor desc;
  std::size_t copies = 1;
  Shape input_shape;   // per sample
  Shape output_shape;  // per sample
  std::vector<std::vector<std::pair<std::string, Tensor>>> params;  // [copy][i]
  std::vector<BatchNormState> bn;                                   // [copy], batchnorm only

  const Tensor& param(const std::string& name, std::size_t copy = 0) const;
};

class ModelGraph {
 public:
  explicit ModelGraph(ModelConfig cfg) : cfg_(std::move(cfg)) {}

  const ModelConfig& config() const { return cfg_; }
  const std::vector<LayerEntry>& layers() const { return layers_; }
  std::vector<LayerEntry>& layers() { return layers_; }

  /// Throws ConfigError for an unknown layer name.
  LayerEntry& layer(const std::string& name);
  const LayerEntry& layer(const std::string& name) const;
  bool has_layer(const std::string& name) const;

  /// "<layer>/<param>" or "<layer>#<copy>/<param>" for per-stream layers.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;

  /// Running statistics of every batchnorm copy, keyed like parameters.
  std::vector<std::pair<std::string, std::vector<double>*>> named_state();

  LayerEntry& append(LayerDescriptor desc, const Shape& input_shape, std::size_t copies = 1);

 private:
  ModelConfig cfg_;
  std::vector<LayerEntry> layers_;
};

/// Builds and initializes (seeded Glorot-uniform weights, zero biases,
/// LSTM forget-gate bias 1, batchnorm gamma 1 / beta 0).
ModelGraph build_model(const ModelConfig& cfg);
ModelGraph build_eegnet(const ModelConfig& cfg);
ModelGraph build_cascade(const ModelConfig& cfg);
ModelGraph build_multiview(const ModelConfig& cfg);

// ---------------------------------------------------------------------------
// Forward

/// EEGNet reads `segments` [b, 248, T, 1]; cascade reads `spatial`
/// (W tensors [b, 20, 21, D]); multiview reads both `spatial` and `temporal`
/// (W tensors [b, 248, D]).
struct ModelInput {
  Tensor segments;
  std::vector<Tensor> spatial;
  std::vector<Tensor> temporal;

  std::size_t batch() const;
};

/// Optional introspection. Activations are keyed "<layer>" or "<layer>#<copy>".
struct ForwardTrace {
  bool keep_activations = false;
  std::map<std::string, Tensor> activations;
  Tensor attention_weights;  // [b, T] when the model has global attention
};

struct ForwardOptions {
  bool training = false;
  std::mt19937_64* dropout_rng = nullptr;  // required when training with dropout
  ForwardTrace* trace = nullptr;
};

struct ForwardResult {
  Tensor logits;         // [b, classes]
  Tensor probabilities;  // softmax rows
};

/// Throws ShapeError naming the offending input when shapes do not match.
ForwardResult forward(ModelGraph& model, const ModelInput& input, const ForwardOptions& opts = {});

// ---------------------------------------------------------------------------
// Parameter accounting

struct ParamRow {
  std::string layer;
  std::string kind;
  Shape output_shape;
  std::size_t per_copy = 0;
  std::size_t copies = 1;
  std::size_t total = 0;
  std::size_t state = 0;  // non-trainable values (batchnorm running statistics)
};

struct ParamTable {
  std::vector<ParamRow> rows;
  std::size_t total = 0;
  std::size_t state_total = 0;

  const ParamRow& row(const std::string& layer) const;
  std::string to_text() const;
};

ParamTable count_params(const ModelGraph& model);
/// Accounting only; builds descriptors without allocating weights.
ParamTable count_params(const ModelConfig& cfg);

/// Published per-layer counts set against ours under the default configuration.
struct ReferenceCount {
  Architecture architecture;
  std::string item;
  std::size_t reference = 0;
  std::size_t ours = 0;
  bool pinned = false;  // must match exactly
  std::string note;
};

std::vector<ReferenceCount> reference_counts();
/// Markdown table of reference_counts().
std::string reference_report();

// ---------------------------------------------------------------------------
// Checkpoints: a text header with the config, then named float32 tensors.

void save_checkpoint(const ModelGraph& model, const std::filesystem::path& path);
ModelGraph load_checkpoint(const std::filesystem::path& path);

}  // namespace megdec

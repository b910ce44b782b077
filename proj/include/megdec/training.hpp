#pragma once

// Adam, sample preparation, the training loop with early stopping,
// cross-subject evaluation and the introspection exports.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "megdec/dataio.hpp"
#include "megdec/models.hpp"
#include "megdec/tensor.hpp"

namespace megdec {

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t step = 0;
};

/// One bias-corrected Adam update. Moments are created on the first call;
/// a gradient whose size differs from its parameter throws ContractError.
void adam_step(std::vector<Tensor>& params, const std::vector<std::vector<double>>& grads, AdamState& state,
               const AdamConfig& cfg);
/// Same, reading each parameter's accumulated gradient.
void adam_step(std::vector<Tensor>& params, AdamState& state, const AdamConfig& cfg);

// ---------------------------------------------------------------------------
// Samples

struct PrepConfig {
  double segment_overlap = 0.33;  // EEGNet sliding window
  double stream_overlap = 0.5;    // share of streams common to consecutive samples
  double eegnet_scale = kEegnetScale;
};

/// One model input without the batch axis. EEGNet fills `segment`
/// [248, T]; cascade fills `spatial`; multiview fills both stream lists.
struct Sample {
  std::string subject;
  int label = 0;
  Tensor segment;
  std::vector<Tensor> spatial;   // W x [20, 21, D]
  std::vector<Tensor> temporal;  // W x [248, D]
};

struct SampleSet {
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  std::vector<std::string> subjects() const;
  std::vector<std::size_t> indices_of(const std::string& subject) const;
};

/// EEGNet: scaled sliding-window segments. Cascade / multiview: z-scored
/// recordings cut into stream samples. `stats` is required for the latter and
/// must not have seen any of `recs`' subjects unless `allow_seen` (training data).
SampleSet prepare_samples(const std::vector<Recording>& recs, const ModelConfig& cfg, const PrepConfig& prep,
                          const NormStats* stats, bool allow_seen);

struct Batch {
  ModelInput input;
  std::vector<int> labels;
};

/// Stacks the chosen samples along a new batch axis.
Batch make_batch(const SampleSet& set, const std::vector<std::size_t>& indices, const ModelConfig& cfg);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  AdamConfig adam;
  std::size_t batch_size = 64;
  std::size_t micro_batch = 8;  // gradient accumulation chunk; memory only, same update
  std::size_t epochs = 100;
  std::size_t patience = 10;    // epochs without validation-loss improvement
  double validation_fraction = 0.2;
  std::uint64_t seed = 0;
  PrepConfig prep;

  /// 16 for EEGNet, 64 otherwise.
  static TrainConfig defaults(Architecture a);
  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct SubjectAccuracy {
  std::string subject;
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

struct Metrics {
  std::vector<SubjectAccuracy> subjects;
  double mean = 0.0;
  double std = 0.0;  // population
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::vector<EpochRecord> history;

  /// "0.94 ± 0.07"
  std::string summary() const;
  std::string to_json() const;
  static Metrics from_json(const std::string& text);
  std::string history_csv() const;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::size_t train_samples = 0;
  std::size_t val_samples = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Splits `train` into training and validation samples (20% of each
/// subject's samples by default), runs Adam on the cross-entropy, and leaves
/// the model holding the parameters of the best validation epoch. Shuffling
/// and dropout draw from separate streams seeded by cfg.seed. Throws
/// ConfigError for an empty training set, NumericError for a non-finite loss.
TrainResult train(ModelGraph& model, const SampleSet& train, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

/// Inference-mode predictions, in sample order.
std::vector<int> predict(ModelGraph& model, const SampleSet& set, std::size_t batch = 16);

/// Accuracy per listed subject plus a confusion matrix over their samples.
/// Throws ConfigError for a subject with no samples in `set`.
Metrics evaluate_cross_subject(ModelGraph& model, const SampleSet& set, const std::vector<std::string>& subjects,
                               std::size_t batch = 16);

/// Population mean and std of the per-subject accuracies.
void summarize(Metrics& m);

// ---------------------------------------------------------------------------
// Exports

struct AttentionExport {
  std::vector<double> mean;  // one weight per source position
  std::size_t samples = 0;
  double min_sum = 0.0;      // extremes of the individual row sums
  double max_sum = 0.0;
};

/// Averages the global-attention weights over `indices` (all samples when
/// empty). Throws CapabilityError when the model has no global attention.
AttentionExport export_attention_weights(ModelGraph& model, const SampleSet& set,
                                         const std::vector<std::size_t>& indices = {});

struct FeatureMap {
  std::string layer;
  std::size_t channel = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // raw, row-major
};

/// Post-activation channel maps of the named convolutional layers for one
/// sample (stream `stream` for per-stream layers). Throws CapabilityError for
/// a layer that is not convolutional, ConfigError for an unknown one.
std::vector<FeatureMap> export_feature_maps(ModelGraph& model, const Sample& sample,
                                            const std::vector<std::string>& layers, std::size_t stream = 0);

/// Scaled to [0, 1] (all zeros for a constant map).
std::vector<double> normalized(const FeatureMap& map);

void write_attention_csv(const AttentionExport& e, const std::filesystem::path& path);
void write_attention_svg(const AttentionExport& e, const std::filesystem::path& path);
void write_feature_maps_csv(const std::vector<FeatureMap>& maps, const std::filesystem::path& path);
/// One heatmap per map, stacked vertically.
void write_feature_maps_svg(const std::vector<FeatureMap>& maps, const std::filesystem::path& path);
/// Loss and accuracy curves from the epoch history.
void write_history_svg(const std::vector<EpochRecord>& history, const std::filesystem::path& path);

}  // namespace megdec

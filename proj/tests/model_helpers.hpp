#pragma once

#include <random>

#include "helpers.hpp"
#include "megdec/meshing.hpp"
#include "megdec/models.hpp"

namespace testutil {

// Small widths everywhere so full-model gradient checks stay cheap.
inline megdec::ModelConfig tiny_config(megdec::Architecture a, megdec::AttentionMode m) {
  megdec::ModelConfig c = megdec::ModelConfig::defaults(a);
  c.attention = m;
  c.streams = 2;
  c.depth = 2;
  c.conv_filters = {1, 2};
  c.kernel_h = c.kernel_w = 3;
  c.fc_units = 4;
  c.lstm_hidden = 3;
  c.global_out = 5;
  c.key_depth = c.value_depth = 1;
  c.attn_channels = 1;
  c.segment_length = 16;
  c.eeg_filters = 2;
  c.depth_multiplier = 1;
  c.separable_filters = 2;
  c.kernel_length = 4;
  c.separable_kernel = 3;
  c.pool1 = c.pool2 = 2;
  c.global_state_width = 4;
  c.dropout = 0.0;
  return c;
}

inline megdec::ModelInput random_input(const megdec::ModelConfig& c, std::size_t batch, std::mt19937_64& rng,
                                       double sd = 1.0) {
  using namespace megdec;
  ModelInput in;
  if (c.architecture == Architecture::eegnet) {
    in.segments = rand_tensor({batch, kSensors, c.segment_length, 1}, rng, sd);
    return in;
  }
  for (std::size_t s = 0; s < c.streams; ++s) {
    in.spatial.push_back(rand_tensor({batch, kGridRows, kGridCols, c.depth}, rng, sd));
    if (c.architecture == Architecture::multiview) {
      in.temporal.push_back(rand_tensor({batch, kSensors, c.depth}, rng, sd));
    }
  }
  return in;
}

// Row `i` of every input tensor as a batch of one.
inline megdec::ModelInput input_row(const megdec::ModelInput& in, std::size_t i) {
  using namespace megdec;
  auto row = [i](const Tensor& t) {
    Shape s = t.shape();
    s[0] = 1;
    return reshape(slice(t, 0, i, 1), s).clone();
  };
  ModelInput out;
  if (in.segments.rank() > 0) out.segments = row(in.segments);
  for (const auto& t : in.spatial) out.spatial.push_back(row(t));
  for (const auto& t : in.temporal) out.temporal.push_back(row(t));
  return out;
}

inline const megdec::Architecture kArchitectures[] = {megdec::Architecture::eegnet, megdec::Architecture::cascade,
                                                      megdec::Architecture::multiview};
inline const megdec::AttentionMode kModes[] = {megdec::AttentionMode::none, megdec::AttentionMode::self,
                                               megdec::AttentionMode::self_global};

}  // namespace testutil

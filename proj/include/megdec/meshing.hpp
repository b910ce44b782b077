#pragma once

// Scalp mesh encoding: 248 sensor values -> 20x21 grid, stacked meshes, and
// the stream assemblies consumed by the cascade and multiview models.

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "megdec/tensor.hpp"

namespace megdec {

inline constexpr std::size_t kSensors = 248;
inline constexpr std::size_t kGridRows = 20;
inline constexpr std::size_t kGridCols = 21;

struct GridCell {
  std::size_t row = 0;
  std::size_t col = 0;
  bool operator==(const GridCell&) const = default;
};

/// Bijection from sensor index 1..248 to grid cells (0-based).
class SensorGrid {
 public:
  /// The shipped placement table.
  static const SensorGrid& standard();

  /// Parses "sensor,row,col" lines. Throws FormatError on malformed lines and
  /// on tables that are not a bijection over 1..248.
  static SensorGrid from_csv(std::string_view text);

  GridCell position(std::size_t sensor) const;
  /// Sensor index at a cell, or 0 for a structural zero.
  std::size_t sensor_at(std::size_t row, std::size_t col) const;
  std::string to_csv() const;

 private:
  std::array<GridCell, kSensors> cells_{};
  std::array<std::size_t, kGridRows * kGridCols> inverse_{};
};

/// Throws DomainError unless 1 <= sensor <= 248.
GridCell sensor_position(std::size_t sensor);

/// values[j-1] is sensor j. Returns [20, 21].
Tensor build_mesh(std::span<const double> values);
Tensor build_mesh(const Tensor& values);

/// window: [248, D]. Returns [20, 21, D]; slice d is build_mesh of column d.
Tensor build_mesh_tensor(const Tensor& window);

/// Inverse of build_mesh for one [20, 21] mesh or one depth slice of a
/// [20, 21, D] tensor.
std::vector<double> read_mesh(const Tensor& mesh, std::size_t depth_index = 0);

/// One model input: W spatial tensors [20, 21, D] and the W temporal matrices
/// [248, D] built from the same time steps.
struct StreamSample {
  std::vector<Tensor> spatial;
  std::vector<Tensor> temporal;
  int label = 0;
  std::size_t first_step = 0;  // first time step of stream 0
};

/// Streams to advance between consecutive samples: max(1, floor(W * (1 - overlap))).
std::size_t stream_advance(std::size_t streams, double overlap);
std::size_t stream_sample_count(std::size_t steps, std::size_t streams, std::size_t depth,
                                double overlap);

/// recording: [248, T]. Consecutive non-overlapping depth-D windows form the
/// streams; each sample takes W consecutive streams. Samples that share a
/// stream share the same tensors. Throws InsufficientDataError when T < W*D.
std::vector<StreamSample> assemble_streams(const Tensor& recording, std::size_t streams,
                                           std::size_t depth, double overlap = 0.5,
                                           int label = 0);

}  // namespace megdec

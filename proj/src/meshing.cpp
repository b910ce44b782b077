#include "megdec/meshing.hpp"

#include <cmath>
#include <sstream>

#include "megdec/sensor_grid_data.hpp"

namespace megdec {

namespace {

std::size_t parse_field(std::string_view line, std::size_t& pos, std::uint64_t offset) {
  std::size_t v = 0;
  const std::size_t start = pos;
  while (pos < line.size() && line[pos] >= '0' && line[pos] <= '9') {
    v = v * 10 + static_cast<std::size_t>(line[pos] - '0');
    if (v > 1000000) break;
    ++pos;
  }
  if (pos == start) throw FormatError("sensor table: expected an integer", offset + start);
  return v;
}

}  // namespace

SensorGrid SensorGrid::from_csv(std::string_view text) {
  SensorGrid g;
  std::array<bool, kSensors> seen{};
  std::size_t count = 0;
  std::size_t line_start = 0;
  while (line_start < text.size()) {
    std::size_t line_end = text.find('\n', line_start);
    if (line_end == std::string_view::npos) line_end = text.size();
    std::string_view line = text.substr(line_start, line_end - line_start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) {
      std::size_t pos = 0;
      std::size_t f[3];
      for (int i = 0; i < 3; ++i) {
        f[i] = parse_field(line, pos, line_start);
        if (i < 2) {
          if (pos >= line.size() || line[pos] != ',') {
            throw FormatError("sensor table: expected ','", line_start + pos);
          }
          ++pos;
        }
      }
      if (pos != line.size()) throw FormatError("sensor table: trailing characters", line_start + pos);
      const std::size_t sensor = f[0], row = f[1], col = f[2];
      if (sensor < 1 || sensor > kSensors || row >= kGridRows || col >= kGridCols) {
        throw FormatError("sensor table: entry out of range", line_start);
      }
      if (seen[sensor - 1]) throw FormatError("sensor table: duplicate sensor", line_start);
      if (g.inverse_[row * kGridCols + col] != 0) {
        throw FormatError("sensor table: two sensors share a cell", line_start);
      }
      seen[sensor - 1] = true;
      g.cells_[sensor - 1] = {row, col};
      g.inverse_[row * kGridCols + col] = sensor;
      ++count;
    }
    line_start = line_end + 1;
  }
  if (count != kSensors) {
    throw FormatError("sensor table: " + std::to_string(count) + " sensors, expected 248", text.size());
  }
  return g;
}

const SensorGrid& SensorGrid::standard() {
  static const SensorGrid grid = from_csv(detail::kSensorGridCsv);
  return grid;
}

GridCell SensorGrid::position(std::size_t sensor) const {
  if (sensor < 1 || sensor > kSensors) {
    throw DomainError("sensor index " + std::to_string(sensor) + " outside 1..248");
  }
  return cells_[sensor - 1];
}

std::size_t SensorGrid::sensor_at(std::size_t row, std::size_t col) const {
  if (row >= kGridRows || col >= kGridCols) {
    throw DomainError("grid cell (" + std::to_string(row) + "," + std::to_string(col) + ") outside 20x21");
  }
  return inverse_[row * kGridCols + col];
}

std::string SensorGrid::to_csv() const {
  std::ostringstream os;
  for (std::size_t j = 0; j < kSensors; ++j) {
    os << j + 1 << ',' << cells_[j].row << ',' << cells_[j].col << '\n';
  }
  return os.str();
}

GridCell sensor_position(std::size_t sensor) { return SensorGrid::standard().position(sensor); }

Tensor build_mesh(std::span<const double> values) {
  if (values.size() != kSensors) {
    throw ShapeError("build_mesh: expected 248 sensor values, got " + std::to_string(values.size()));
  }
  const SensorGrid& g = SensorGrid::standard();
  std::vector<double> mesh(kGridRows * kGridCols, 0.0);
  for (std::size_t j = 0; j < kSensors; ++j) {
    const GridCell c = g.position(j + 1);
    mesh[c.row * kGridCols + c.col] = values[j];
  }
  return Tensor(Shape{kGridRows, kGridCols}, std::move(mesh));
}

Tensor build_mesh(const Tensor& values) {
  if (values.rank() != 1) throw ShapeError("build_mesh: expected a vector, got " + shape_str(values.shape()));
  return build_mesh(values.data());
}

Tensor build_mesh_tensor(const Tensor& window) {
  if (window.rank() != 2 || window.dim(0) != kSensors) {
    throw ShapeError("build_mesh_tensor: expected [248, D], got " + shape_str(window.shape()));
  }
  const std::size_t depth = window.dim(1);
  if (depth == 0) throw ShapeError("build_mesh_tensor: depth must be at least 1");
  const SensorGrid& g = SensorGrid::standard();
  auto v = window.data();
  std::vector<double> out(kGridRows * kGridCols * depth, 0.0);
  for (std::size_t j = 0; j < kSensors; ++j) {
    const GridCell c = g.position(j + 1);
    double* cell = out.data() + (c.row * kGridCols + c.col) * depth;
    for (std::size_t d = 0; d < depth; ++d) cell[d] = v[j * depth + d];
  }
  return Tensor(Shape{kGridRows, kGridCols, depth}, std::move(out));
}

std::vector<double> read_mesh(const Tensor& mesh, std::size_t depth_index) {
  std::size_t depth = 1;
  if (mesh.rank() == 3) {
    depth = mesh.dim(2);
  } else if (mesh.rank() != 2) {
    throw ShapeError("read_mesh: expected [20,21] or [20,21,D], got " + shape_str(mesh.shape()));
  }
  if (mesh.dim(0) != kGridRows || mesh.dim(1) != kGridCols || depth_index >= depth) {
    throw ShapeError("read_mesh: bad mesh shape " + shape_str(mesh.shape()));
  }
  const SensorGrid& g = SensorGrid::standard();
  std::vector<double> out(kSensors);
  for (std::size_t j = 0; j < kSensors; ++j) {
    const GridCell c = g.position(j + 1);
    out[j] = mesh[(c.row * kGridCols + c.col) * depth + depth_index];
  }
  return out;
}

std::size_t stream_advance(std::size_t streams, double overlap) {
  if (!(overlap >= 0.0 && overlap < 1.0)) throw ConfigError("stream overlap must be in [0,1)");
  const double step = std::floor(static_cast<double>(streams) * (1.0 - overlap) + 1e-9);
  return std::max<std::size_t>(1, static_cast<std::size_t>(step));
}

std::size_t stream_sample_count(std::size_t steps, std::size_t streams, std::size_t depth,
                                double overlap) {
  if (streams == 0 || depth == 0) throw ConfigError("streams and depth must be at least 1");
  const std::size_t available = steps / depth;
  if (available < streams) return 0;
  return (available - streams) / stream_advance(streams, overlap) + 1;
}

std::vector<StreamSample> assemble_streams(const Tensor& recording, std::size_t streams,
                                           std::size_t depth, double overlap, int label) {
  if (recording.rank() != 2 || recording.dim(0) != kSensors) {
    throw ShapeError("assemble_streams: expected [248, T], got " + shape_str(recording.shape()));
  }
  const std::size_t steps = recording.dim(1);
  const std::size_t count = stream_sample_count(steps, streams, depth, overlap);
  if (count == 0) {
    throw InsufficientDataError("assemble_streams: " + std::to_string(steps) + " time steps < W*D = " +
                                std::to_string(streams * depth));
  }
  const std::size_t advance = stream_advance(streams, overlap);
  const std::size_t used = (count - 1) * advance + streams;

  // Every stream window is built once and shared by all samples that use it.
  std::vector<Tensor> temporal(used), spatial(used);
  auto v = recording.data();
  for (std::size_t s = 0; s < used; ++s) {
    std::vector<double> win(kSensors * depth);
    for (std::size_t j = 0; j < kSensors; ++j)
      for (std::size_t d = 0; d < depth; ++d) win[j * depth + d] = v[j * steps + s * depth + d];
    temporal[s] = Tensor(Shape{kSensors, depth}, std::move(win));
    spatial[s] = build_mesh_tensor(temporal[s]);
  }
  std::vector<StreamSample> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t first = i * advance;
    out[i].spatial.assign(spatial.begin() + first, spatial.begin() + first + streams);
    out[i].temporal.assign(temporal.begin() + first, temporal.begin() + first + streams);
    out[i].label = label;
    out[i].first_step = first * depth;
  }
  return out;
}

}  // namespace megdec

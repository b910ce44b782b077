#include "megdec/dataio.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "megdec/meshing.hpp"

namespace megdec {

namespace fs = std::filesystem;

namespace {
const char* const kLabelNames[kClasses] = {"rest", "story_math", "working_memory", "motor"};
}

std::string label_name(int label) {
  if (label < 0 || label >= kClasses) throw ConfigError("label " + std::to_string(label) + " out of range");
  return kLabelNames[label];
}

int label_from_name(const std::string& name) {
  for (int i = 0; i < kClasses; ++i) {
    if (name == kLabelNames[i] || name == std::to_string(i)) return i;
  }
  throw ConfigError("unknown label '" + name + "'");
}

void Recording::validate() const {
  if (samples.rank() != 2 || samples.dim(0) != kSensors) {
    throw ShapeError("recording '" + subject_id + "' must be [248, T], got " + shape_str(samples.shape()));
  }
  if (samples.dim(1) == 0) throw ShapeError("recording '" + subject_id + "' has no samples");
  if (!(sampling_rate > 0.0) || !std::isfinite(sampling_rate)) {
    throw ConfigError("recording '" + subject_id + "' has a non-positive sampling rate");
  }
  if (label < 0 || label >= kClasses) throw ConfigError("recording '" + subject_id + "' has a bad label");
}

std::vector<std::string> subject_ids(const std::vector<Recording>& recs) {
  std::set<std::string> ids;
  for (const auto& r : recs) ids.insert(r.subject_id);
  return {ids.begin(), ids.end()};
}

SplitSpec SplitSpec::for_setup(int setup, std::vector<std::string> subjects) {
  if (setup != 1 && setup != 2) throw ConfigError("setup must be 1 or 2");
  std::sort(subjects.begin(), subjects.end());
  subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
  const std::size_t n_train = setup == 1 ? 3 : 12;
  if (subjects.size() < n_train + 6) {
    throw ConfigError("setup " + std::to_string(setup) + " needs " + std::to_string(n_train + 6) +
                      " subjects, dataset has " + std::to_string(subjects.size()));
  }
  SplitSpec s;
  s.setup = setup;
  s.test_subjects.assign(subjects.end() - 6, subjects.end());
  s.train_subjects.assign(subjects.begin(), subjects.begin() + static_cast<long>(n_train));
  return s;
}

void SplitSpec::validate() const {
  if (train_subjects.empty() || test_subjects.empty()) throw ConfigError("split has an empty side");
  const std::set<std::string> train(train_subjects.begin(), train_subjects.end());
  for (const auto& t : test_subjects) {
    if (train.count(t)) throw ConfigError("subject '" + t + "' is in both the train and test sets");
  }
}

// ---------------------------------------------------------------------------

std::size_t segment_stride(std::size_t window, double overlap) {
  if (!(overlap >= 0.0 && overlap < 1.0)) throw ConfigError("segment overlap must be in [0,1)");
  const double s = std::round(static_cast<double>(window) * (1.0 - overlap));
  return std::max<std::size_t>(1, static_cast<std::size_t>(s));
}

std::size_t segment_count(std::size_t steps, std::size_t window, double overlap) {
  if (window == 0) throw ConfigError("segment window must be at least 1");
  if (window > steps) return 0;
  return (steps - window) / segment_stride(window, overlap) + 1;
}

std::vector<Tensor> segment_sliding(const Recording& rec, std::size_t window, double overlap) {
  rec.validate();
  const std::size_t steps = rec.steps();
  const std::size_t count = segment_count(steps, window, overlap);
  if (count == 0) {
    throw InsufficientDataError("segment window " + std::to_string(window) + " exceeds the " +
                                std::to_string(steps) + " samples of '" + rec.subject_id + "'");
  }
  const std::size_t stride = segment_stride(window, overlap);
  const std::size_t channels = rec.samples.dim(0);
  auto v = rec.samples.data();
  std::vector<Tensor> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<double> seg(channels * window);
    for (std::size_t c = 0; c < channels; ++c) {
      std::copy_n(v.begin() + static_cast<long>(c * steps + i * stride), window,
                  seg.begin() + static_cast<long>(c * window));
    }
    out.emplace_back(Shape{channels, window}, std::move(seg));
  }
  return out;
}

Recording scale(const Recording& rec, double factor) {
  if (!std::isfinite(factor) || factor == 0.0) throw ConfigError("scale factor must be finite and non-zero");
  Recording out = rec;
  out.samples = scale(rec.samples, factor).clone();
  return out;
}

// ---------------------------------------------------------------------------

NormStats compute_norm_stats(const std::vector<Recording>& train) {
  if (train.empty()) throw ConfigError("normalization statistics need at least one recording");
  NormStats st;
  const std::size_t channels = train.front().samples.dim(0);
  std::vector<double> sum(channels, 0.0), sq(channels, 0.0);
  std::size_t n = 0;
  for (const auto& r : train) {
    r.validate();
    const std::size_t steps = r.steps();
    auto v = r.samples.data();
    for (std::size_t c = 0; c < channels; ++c) {
      double s = 0.0;
      for (std::size_t t = 0; t < steps; ++t) s += v[c * steps + t];
      sum[c] += s;
    }
    n += steps;
    st.subjects.insert(r.subject_id);
  }
  st.mean.resize(channels);
  for (std::size_t c = 0; c < channels; ++c) st.mean[c] = sum[c] / static_cast<double>(n);
  for (const auto& r : train) {
    const std::size_t steps = r.steps();
    auto v = r.samples.data();
    for (std::size_t c = 0; c < channels; ++c) {
      double s = 0.0;
      for (std::size_t t = 0; t < steps; ++t) {
        const double d = v[c * steps + t] - st.mean[c];
        s += d * d;
      }
      sq[c] += s;
    }
  }
  st.std.resize(channels);
  for (std::size_t c = 0; c < channels; ++c) st.std[c] = std::sqrt(sq[c] / static_cast<double>(n));
  return st;
}

Recording normalize(const Recording& rec, const NormStats& stats) {
  rec.validate();
  const std::size_t channels = rec.samples.dim(0), steps = rec.steps();
  if (stats.mean.size() != channels || stats.std.size() != channels) {
    throw ConfigError("normalization stats have " + std::to_string(stats.mean.size()) +
                      " channels, recording has " + std::to_string(channels));
  }
  auto v = rec.samples.data();
  std::vector<double> out(v.size());
  for (std::size_t c = 0; c < channels; ++c) {
    const double sd = stats.std[c];
    for (std::size_t t = 0; t < steps; ++t) {
      out[c * steps + t] = sd < 1e-12 ? 0.0 : (v[c * steps + t] - stats.mean[c]) / sd;
    }
  }
  Recording r = rec;
  r.samples = Tensor(rec.samples.shape(), std::move(out));
  return r;
}

void check_disjoint(const NormStats& stats, const std::vector<std::string>& eval_subjects) {
  for (const auto& s : eval_subjects) {
    if (stats.subjects.count(s)) {
      throw ContractError("normalization statistics were computed with evaluation subject '" + s + "'");
    }
  }
}

// ---------------------------------------------------------------------------

double synth_band(int label) {
  static const double bands[kClasses] = {6.0, 10.0, 14.0, 22.0};
  if (label < 0 || label >= kClasses) throw ConfigError("label out of range");
  return bands[label];
}

std::vector<Recording> synth_generate(const SynthSpec& spec) {
  if (!(spec.duration > 0.0)) throw ConfigError("synthetic duration must be positive");
  if (!(spec.sampling_rate > 0.0)) throw ConfigError("synthetic sampling rate must be positive");
  if (spec.classes < 1 || spec.classes > kClasses) throw ConfigError("synthetic classes must be 1..4");
  if (spec.subjects == 0) throw ConfigError("synthetic subjects must be at least 1");
  if (!(spec.snr > 0.0)) throw ConfigError("synthetic snr must be positive");
  if (spec.sampling_rate <= 2.0 * synth_band(spec.classes - 1)) {
    throw ConfigError("synthetic sampling rate is below the Nyquist rate of the class bands");
  }
  const auto steps = static_cast<std::size_t>(std::llround(spec.duration * spec.sampling_rate));
  if (steps == 0) throw ConfigError("synthetic duration yields no samples");

  // Quadrant of every sensor; the midline column belongs to no class.
  const SensorGrid& grid = SensorGrid::standard();
  std::vector<int> region(kSensors);
  for (std::size_t j = 0; j < kSensors; ++j) {
    const GridCell c = grid.position(j + 1);
    if (c.col == kGridCols / 2) {
      region[j] = -1;
    } else {
      region[j] = (c.row < kGridRows / 2 ? 0 : 2) + (c.col < kGridCols / 2 ? 0 : 1);
    }
  }

  const double signal_power = 1.0 + 0.5 * 0.5 / 2.0;
  const double noise_sd = std::isinf(spec.snr) ? 0.0 : std::sqrt(signal_power / spec.snr);
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> gain_dist(0.8, 1.2);
  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> unit(0.0, 1.0);

  std::vector<Recording> out;
  const int width = spec.subjects >= 100 ? 3 : 2;
  for (std::size_t s = 0; s < spec.subjects; ++s) {
    std::ostringstream id;
    id << "S" << std::string(width - std::min<int>(width, std::to_string(s + 1).size()), '0') << s + 1;
    const double gain = gain_dist(rng);
    const double phase = phase_dist(rng);
    std::vector<double> sensor_gain(kSensors), sensor_phase(kSensors);
    for (std::size_t j = 0; j < kSensors; ++j) {
      sensor_gain[j] = gain * (1.0 + 0.1 * unit(rng));
      sensor_phase[j] = phase + 0.3 * unit(rng);
    }
    for (int k = 0; k < spec.classes; ++k) {
      for (std::size_t rep = 0; rep < spec.recordings_per_class; ++rep) {
        const double w = 2.0 * std::numbers::pi * synth_band(k) / spec.sampling_rate;
        std::vector<double> x(kSensors * steps);
        for (std::size_t j = 0; j < kSensors; ++j) {
          const bool active = region[j] == k;
          for (std::size_t t = 0; t < steps; ++t) {
            double v = 0.0;
            if (active) {
              v = sensor_gain[j] * (1.0 + 0.5 * std::sin(w * static_cast<double>(t) + sensor_phase[j]));
            }
            if (noise_sd > 0.0) v += noise_sd * unit(rng);
            x[j * steps + t] = static_cast<double>(static_cast<float>(spec.amplitude * v));
          }
        }
        Recording r;
        r.subject_id = id.str();
        r.sampling_rate = spec.sampling_rate;
        r.label = k;
        r.samples = Tensor(Shape{kSensors, steps}, std::move(x));
        out.push_back(std::move(r));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::uint32_t crc32_bytes(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const std::size_t chunk = std::min<std::size_t>(bytes.size() - done, 1u << 30);
    crc = crc32(crc, bytes.data() + done, static_cast<uInt>(chunk));
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace {

constexpr std::uint8_t kMagic[4] = {'M', 'E', 'G', 'R'};
constexpr std::uint8_t kVersion = 1;

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::uint8_t b[sizeof(T)];
  std::memcpy(b, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  for (std::uint8_t x : b) out.push_back(x);
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    std::uint8_t b[sizeof(T)];
    std::memcpy(b, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    T v;
    std::memcpy(&v, b, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("MEGR: truncated ") + what, bytes_.size());
    }
  }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  std::size_t size() const { return bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_recording(const Recording& rec) {
  rec.validate();
  const std::size_t channels = rec.samples.dim(0), steps = rec.steps();
  if (rec.subject_id.size() > 0xFFFFFFFFu || steps > 0xFFFFFFFFu) {
    throw ConfigError("recording too large for the MEGR format");
  }
  std::vector<std::uint8_t> out;
  out.reserve(64 + rec.subject_id.size() + channels * steps * 4);
  for (std::uint8_t x : kMagic) out.push_back(x);
  out.push_back(kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(rec.subject_id.size()));
  for (char c : rec.subject_id) out.push_back(static_cast<std::uint8_t>(c));
  out.push_back(static_cast<std::uint8_t>(rec.label));
  put<double>(out, rec.sampling_rate);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(channels));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(steps));
  const std::size_t payload_start = out.size();
  for (double v : rec.samples.data()) put<float>(out, static_cast<float>(v));
  const std::uint32_t crc =
      crc32_bytes(std::span<const std::uint8_t>(out).subspan(payload_start));
  put<std::uint32_t>(out, crc);
  return out;
}

Recording decode_recording(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  auto magic = in.take(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), kMagic)) throw FormatError("MEGR: bad magic", 0);
  const std::size_t version_at = in.pos();
  const auto version = in.get<std::uint8_t>("version");
  if (version != kVersion) {
    throw FormatError("MEGR: unsupported version " + std::to_string(version), version_at);
  }
  const auto id_len = in.get<std::uint32_t>("subject id length");
  auto id = in.take(id_len, "subject id");
  Recording r;
  r.subject_id.assign(id.begin(), id.end());
  const std::size_t label_at = in.pos();
  r.label = in.get<std::uint8_t>("label");
  if (r.label >= kClasses) throw FormatError("MEGR: label out of range", label_at);
  const std::size_t rate_at = in.pos();
  r.sampling_rate = in.get<double>("sampling rate");
  if (!(r.sampling_rate > 0.0) || !std::isfinite(r.sampling_rate)) {
    throw FormatError("MEGR: sampling rate must be positive", rate_at);
  }
  const std::size_t channels_at = in.pos();
  const auto channels = in.get<std::uint32_t>("channel count");
  if (channels != kSensors) {
    throw FormatError("MEGR: expected 248 channels, found " + std::to_string(channels), channels_at);
  }
  const std::size_t steps_at = in.pos();
  const auto steps = in.get<std::uint32_t>("sample count");
  if (steps == 0) throw FormatError("MEGR: zero samples", steps_at);
  const std::size_t n = static_cast<std::size_t>(channels) * steps;
  in.need(n * 4, "sample payload");
  const std::size_t payload_at = in.pos();
  auto payload = in.take(n * 4, "sample payload");
  const std::size_t crc_at = in.pos();
  const auto stored = in.get<std::uint32_t>("checksum");
  if (stored != crc32_bytes(payload)) throw FormatError("MEGR: checksum mismatch", crc_at);
  if (in.pos() != in.size()) throw FormatError("MEGR: trailing bytes", in.pos());

  Reader values(bytes.subspan(payload_at, n * 4));
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = static_cast<double>(values.get<float>("sample"));
  r.samples = Tensor(Shape{channels, steps}, std::move(x));
  return r;
}

void write_recording(const Recording& rec, const fs::path& path) {
  const auto bytes = encode_recording(rec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("failed writing '" + path.string() + "'");
}

namespace {

std::vector<std::uint8_t> slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

std::vector<fs::path> megr_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("'" + dir.string() + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".megr") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

Recording read_recording(const fs::path& path) {
  const auto bytes = slurp(path);
  try {
    return decode_recording(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.filename().string() + ": " + e.what(), e.offset());
  }
}

void write_dataset(const std::vector<Recording>& recs, const fs::path& dir) {
  fs::create_directories(dir);
  std::map<std::string, int> used;
  for (const auto& r : recs) {
    std::string stem = r.subject_id + "_" + label_name(r.label);
    const int n = used[stem]++;
    if (n > 0) stem += "_" + std::to_string(n);
    write_recording(r, dir / (stem + ".megr"));
  }
}

std::vector<Recording> read_dataset(const fs::path& dir) {
  std::vector<Recording> out;
  for (const auto& f : megr_files(dir)) out.push_back(read_recording(f));
  return out;
}

std::string dataset_checksum(const fs::path& dir) {
  uLong crc = crc32(0L, Z_NULL, 0);
  for (const auto& f : megr_files(dir)) {
    const std::string name = f.filename().string();
    crc = crc32(crc, reinterpret_cast<const Bytef*>(name.data()), static_cast<uInt>(name.size()));
    const auto bytes = slurp(f);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  }
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", static_cast<unsigned>(crc));
  return buf;
}

Recording import_csv(const fs::path& path, const std::string& subject_id, int label,
                     double sampling_rate) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  std::uint64_t offset = 0;
  while (std::getline(in, line)) {
    const std::uint64_t line_at = offset;
    offset += line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    row.reserve(kSensors);
    const char* p = line.c_str();
    const char* end = p + line.size();
    while (p < end) {
      char* next = nullptr;
      const double v = std::strtod(p, &next);
      if (next == p) throw FormatError("CSV: expected a number", line_at + static_cast<std::uint64_t>(p - line.c_str()));
      row.push_back(v);
      p = next;
      while (p < end && (*p == ' ' || *p == '\t')) ++p;
      if (p < end) {
        if (*p != ',') throw FormatError("CSV: expected ','", line_at + static_cast<std::uint64_t>(p - line.c_str()));
        ++p;
      }
    }
    if (row.size() != kSensors) {
      throw FormatError("CSV: row has " + std::to_string(row.size()) + " columns, expected 248", line_at);
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw FormatError("CSV: no rows", 0);
  const std::size_t steps = rows.size();
  std::vector<double> x(kSensors * steps);
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t j = 0; j < kSensors; ++j) x[j * steps + t] = rows[t][j];
  Recording r;
  r.subject_id = subject_id;
  r.sampling_rate = sampling_rate;
  r.label = label;
  r.samples = Tensor(Shape{kSensors, steps}, std::move(x));
  r.validate();
  return r;
}

}  // namespace megdec

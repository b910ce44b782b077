#pragma once

// Recordings, the MEGR container, preprocessing and a synthetic generator.

#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "megdec/tensor.hpp"

namespace megdec {

inline constexpr int kClasses = 4;
inline constexpr double kReferenceRate = 2034.5101;

/// 0 rest, 1 story_math, 2 working_memory, 3 motor.
std::string label_name(int label);
/// Accepts the names above or a digit 0..3. Throws ConfigError otherwise.
int label_from_name(const std::string& name);

struct Recording {
  std::string subject_id;
  double sampling_rate = kReferenceRate;
  int label = 0;
  Tensor samples;  // [248, T]

  std::size_t steps() const { return samples.rank() == 2 ? samples.dim(1) : 0; }
  /// 248 channels, T >= 1, positive rate, label in range.
  void validate() const;
};

/// Sorted distinct subject ids.
std::vector<std::string> subject_ids(const std::vector<Recording>& recs);

struct SplitSpec {
  std::vector<std::string> train_subjects;
  std::vector<std::string> test_subjects;
  int setup = 2;

  /// The last six of the sorted ids are held out; setup 1 trains on the first
  /// 3, setup 2 on the first 12.
  static SplitSpec for_setup(int setup, std::vector<std::string> subjects);
  /// Throws ConfigError when a subject is on both sides or a side is empty.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Segmentation and scaling

/// max(1, round(window * (1 - overlap))).
std::size_t segment_stride(std::size_t window, double overlap);
/// floor((T - window) / stride) + 1, or 0 when window > T.
std::size_t segment_count(std::size_t steps, std::size_t window, double overlap);
/// Full windows only, as [248, window] tensors.
std::vector<Tensor> segment_sliding(const Recording& rec, std::size_t window, double overlap);

/// Multiplies every sample; factor must be finite and non-zero.
Recording scale(const Recording& rec, double factor);
inline constexpr double kEegnetScale = 1e5;

// ---------------------------------------------------------------------------
// Normalization. Statistics remember which subjects produced them so that
// evaluation can refuse stats that saw a test subject.

struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;  // population
  std::set<std::string> subjects;
};

NormStats compute_norm_stats(const std::vector<Recording>& train);
/// Per-channel z-score; channels with std < 1e-12 map to 0.
Recording normalize(const Recording& rec, const NormStats& stats);
/// Throws ContractError when any evaluation subject contributed to `stats`.
void check_disjoint(const NormStats& stats, const std::vector<std::string>& eval_subjects);

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthSpec {
  std::size_t subjects = 18;
  int classes = kClasses;
  double duration = 2.0;  // seconds per recording
  double sampling_rate = 256.0;
  std::uint64_t seed = 0;
  double snr = 10.0;  // signal power over noise power on active sensors; inf = no noise
  double amplitude = 1e-5;
  std::size_t recordings_per_class = 1;
};

/// One recording per (subject, class, repetition). Class k drives the sensors
/// of one scalp quadrant with a DC offset plus a class-specific oscillation;
/// subjects differ by gain, per-sensor gain and phase. Samples are rounded to
/// 32-bit float values so that the container round-trip is exact.
std::vector<Recording> synth_generate(const SynthSpec& spec);

/// Oscillation frequency (Hz) of each class.
double synth_band(int label);

// ---------------------------------------------------------------------------
// MEGR container

std::vector<std::uint8_t> encode_recording(const Recording& rec);
Recording decode_recording(std::span<const std::uint8_t> bytes);

void write_recording(const Recording& rec, const std::filesystem::path& path);
Recording read_recording(const std::filesystem::path& path);

/// One "<subject>_<label>[_n].megr" file per recording. Creates the directory.
void write_dataset(const std::vector<Recording>& recs, const std::filesystem::path& dir);
/// All *.megr files in name order; an empty directory yields an empty set.
std::vector<Recording> read_dataset(const std::filesystem::path& dir);

/// CRC32 over the names and bytes of every *.megr file in name order, as 8 hex digits.
std::string dataset_checksum(const std::filesystem::path& dir);

std::uint32_t crc32_bytes(std::span<const std::uint8_t> bytes);

/// Plain CSV, no header, one row per time step, 248 columns.
Recording import_csv(const std::filesystem::path& path, const std::string& subject_id, int label,
                     double sampling_rate);

}  // namespace megdec

#pragma once

#include "eeg2rep/types.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

namespace eeg2rep {

/// One C x L segment of multichannel signal (rows are channels).
struct EegWindow {
  Matrix samples;
  double sampling_rate = 128.0;
  std::optional<int> label;
  std::optional<std::string> subject_id;

  int channels() const { return static_cast<int>(samples.rows()); }
  int length() const { return static_cast<int>(samples.cols()); }
};

/// Throws DataError if the window violates its shape/finiteness invariants.
void validate(const EegWindow& window);

struct EegDataset {
  std::string name;
  std::vector<EegWindow> windows;

  std::size_t size() const { return windows.size(); }
  bool empty() const { return windows.empty(); }
  int channels() const { return windows.empty() ? 0 : windows.front().channels(); }
  int length() const { return windows.empty() ? 0 : windows.front().length(); }
  double sampling_rate() const { return windows.empty() ? 0.0 : windows.front().sampling_rate; }

  /// Labels of every window; throws DataError if any window is unlabeled.
  std::vector<int> labels() const;
  int num_classes() const;
};

/// Checks that all windows share C, L and sampling rate.
void validate(const EegDataset& dataset);

enum class DatasetFormat { csv_manifest };

/// Loads a manifest with header `path,label,subject`. Signal paths are
/// resolved relative to the manifest's directory. Empty label or subject
/// fields leave the corresponding optional unset.
EegDataset load_dataset(const std::filesystem::path& manifest,
                        DatasetFormat format = DatasetFormat::csv_manifest,
                        double sampling_rate = 128.0);

/// Parses a whitespace- or comma-separated numeric matrix (rows = channels).
Matrix read_signal_matrix(const std::filesystem::path& path);

/// Writes a dataset as manifest + one signal file per window into `dir`.
void write_dataset(const EegDataset& dataset, const std::filesystem::path& dir);

struct SynthConfig {
  int n = 512;
  int channels = 4;
  int length = 128;
  double sampling_rate = 128.0;
  int classes = 2;
  int subjects = 8;
  std::uint64_t seed = 0;

  double signal_amplitude = 1.0;
  double noise_std = 1.0;
  int components = 2;         // class-band sinusoids per window
  double band_low_hz = 4.0;   // lower edge of class 0's band
  double band_width_hz = 4.0;
  double band_spacing_hz = 8.0;
  double subject_scale_min = 0.5;
  double subject_scale_max = 2.0;
  int background_components = 0;  // class-independent sinusoids
  double background_amplitude = 0.0;
  // Class sinusoids are confined to one Hann-shaped burst covering this
  // fraction of the window, at a random position; 1 keeps them stationary.
  double burst_fraction = 1.0;

  /// Frequency band [lo, hi] in Hz carrying class k's energy.
  std::pair<double, double> band(int k) const {
    const double lo = band_low_hz + k * band_spacing_hz;
    return {lo, lo + band_width_hz};
  }
};

void validate(const SynthConfig& cfg);

/// Sum of class-band sinusoids scaled by a per-subject gain, plus white
/// noise. Labels are balanced (label = i mod classes); subjects cycle over
/// blocks of `classes` windows so each subject sees every class.
EegDataset synthesize_dataset(const SynthConfig& cfg);

enum class SplitMode { subject_wise, random };

struct SplitSpec {
  double train_fraction = 0.6;
  double val_fraction = 0.2;
  double test_fraction = 0.2;
  SplitMode mode = SplitMode::subject_wise;
};

struct DatasetSplit {
  EegDataset train;
  EegDataset val;
  EegDataset test;
};

/// Splits by subject or by window. Val and test counts are rounded to
/// nearest; train takes the remainder. Window order is preserved within
/// each split.
DatasetSplit split(const EegDataset& dataset, const SplitSpec& spec, std::uint64_t seed);

enum class NoiseKind { amplitude_scale, time_shift, dc_shift, gaussian };

std::string_view to_string(NoiseKind kind);
NoiseKind parse_noise_kind(std::string_view name);

struct NoiseSpec {
  NoiseKind kind = NoiseKind::gaussian;
  double min = 0.0;
  double max = 0.2;

  /// Default perturbation ranges for each kind.
  static NoiseSpec defaults(NoiseKind kind);
};

/// Perturbs a window. `magnitude` in [0, 1] scales the perturbation from
/// none (identity) to the full range of `spec`:
///   amplitude_scale: factor drawn from [1 + m(min-1), 1 + m(max-1)]
///   time_shift:      circular shift drawn from [-round(m*max), +round(m*max)]
///   dc_shift:        offset m*max added to every sample
///   gaussian:        i.i.d. N(0, s^2) with s = min + m(max-min)
EegWindow apply_noise(const EegWindow& window, const NoiseSpec& spec, double magnitude, std::uint64_t seed);

/// Applies apply_noise to every window with seed derive_seed(seed, {i}).
EegDataset apply_noise(const EegDataset& dataset, const NoiseSpec& spec, double magnitude, std::uint64_t seed);

}  // namespace eeg2rep

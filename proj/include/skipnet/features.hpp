#pragma once

// WAV ingestion, log-magnitude spectrograms, per-utterance normalization,
// and the on-disk feature cache and manifest formats.

#include <complex>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "skipnet/tensor.hpp"

namespace skipnet {

struct Waveform {
  std::uint32_t sample_rate = 16000;
  std::vector<double> samples;  // in [-1, 1]
};

// RIFF/WAVE, PCM 16-bit, mono. Samples are scaled by 1/32768. Throws
// FormatError naming the offending header field for anything else.
Waveform read_wav(const std::filesystem::path& path);
// Samples are clipped to [-1, 1] and rounded to the nearest PCM16 code.
void write_wav(const std::filesystem::path& path, const Waveform& wave);

struct FeatureParams {
  std::uint32_t sample_rate = 16000;
  double frame_length_ms = 20.0;
  double frame_shift_ms = 10.0;
  std::size_t fft_size = 512;
  bool normalize = true;

  // Throws ConfigError naming the field.
  void validate() const;
  std::size_t frame_samples() const;
  std::size_t shift_samples() const;
  std::size_t feature_count() const { return fft_size / 2 + 1; }

  nlohmann::json to_json() const;
  static FeatureParams from_json(const nlohmann::json& j);
};

struct FeatureMatrix {
  Tensor values;  // [F, T]
  FeatureParams params;
};

inline constexpr double kLogFloor = 1e-10;

// Periodic Hann window of length n.
std::vector<double> hann_window(std::size_t n);

// Reference O(n^2) transform.
std::vector<std::complex<double>> naive_dft(std::span<const double> x);
// Radix-2 transform of x zero-padded to n (a power of two, n >= x.size()).
std::vector<std::complex<double>> fft(std::span<const double> x, std::size_t n);

// Frame count 1 + floor((N - frame) / shift); throws ContractError when the
// waveform is shorter than one frame and ConfigError when its sample rate
// differs from params.sample_rate.
FeatureMatrix spectrogram(const Waveform& wave, const FeatureParams& params);

// Each feature row shifted and scaled to mean 0, variance 1.
FeatureMatrix normalize(const FeatureMatrix& features);

// spectrogram followed by normalize when params.normalize is set.
FeatureMatrix compute_features(const Waveform& wave, const FeatureParams& params);

// Cache file: one text header line
//   SKIPNET-FEATURES 1 <F> <T> <sample_rate> <frame_ms> <shift_ms> <fft_size> <normalized>
// followed by F*T little-endian IEEE doubles, row-major.
void write_features(const std::filesystem::path& path, const FeatureMatrix& features);
FeatureMatrix read_features(const std::filesystem::path& path);

struct ManifestEntry {
  std::string id;
  std::filesystem::path path;  // a .wav file or a feature cache
  std::string transcript;
};

// Lines `id<TAB>path<TAB>transcript`. Relative paths are resolved against the
// manifest's directory on read and written as given.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

// Features for a manifest entry: computed from WAV files, read from caches.
// A cache whose parameters differ from `params` is a ConfigError.
FeatureMatrix load_features(const ManifestEntry& entry, const FeatureParams& params);

}  // namespace skipnet

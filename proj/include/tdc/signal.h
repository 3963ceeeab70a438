// Copyright 2026 The TD-Conformer Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Mixture synthesis x[i] = sum_c g_c (s_c * h_c)[i] + g_n n[i], toy source
// generation, on-the-fly re-mixing and mono WAV I/O.

#ifndef TDC_SIGNAL_H_
#define TDC_SIGNAL_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tdc/autodiff.h"

namespace tdc {

using Waveform = std::vector<double>;

struct SourceSignal {
  Waveform samples;
  double sample_rate = 8000.0;
  std::string speaker_id;
};

struct MixtureSample {
  std::vector<SourceSignal> sources;  // dry sources as given
  std::vector<Waveform> rirs;         // empty or one per source
  Waveform noise;                     // cropped/padded to mixture length, unscaled
  std::vector<Waveform> reverberant;  // (s_c * h_c) truncated, unscaled
  std::vector<double> gains;          // per-source gains
  double noise_gain = 0.0;
  double ssr_db = 0.0;
  std::optional<double> snr_db;
  double sample_rate = 8000.0;
  std::uint64_t seed = 0;

  Waveform mixture;
  std::vector<Waveform> references;  // gains[c] * reverberant[c]

  std::size_t speakers() const { return sources.size(); }
  // Re-sums the stored components with the stored gains.
  Waveform reconstruct() const;
};

double signal_power(const Waveform& x);
// "Full" linear convolution truncated to the length of x.
Waveform convolve_truncated(const Waveform& x, const Waveform& h);

struct MixOptions {
  double ssr_db = 0.0;                // first source vs second source
  std::optional<double> snr_db;       // speech mixture vs noise
  // Rescales every gain so |mixture| <= peak_limit (0 disables).
  double peak_limit = 0.0;
};

// Sources 2..C are scaled to ssr_db relative to source 1. Noise longer than
// the mixture is cropped at an offset drawn from rng_seed; shorter noise is
// zero-padded.
MixtureSample synthesize_mixture(const std::vector<SourceSignal>& sources,
                                 const std::vector<Waveform>& rirs,
                                 const Waveform& noise, const MixOptions& options,
                                 std::uint64_t rng_seed);

// Draws C sources from distinct speakers of the pool and per-source gains
// uniform in gain_range_db (dB), returning a fresh mixture every call.
MixtureSample dynamic_mix(const std::vector<SourceSignal>& pool,
                          std::size_t speakers,
                          std::pair<double, double> gain_range_db, Rng& rng,
                          double peak_limit = 0.0);

enum class SourceKind { kBandLimitedNoise, kHarmonicTone };

struct SynthOptions {
  double sample_rate = 8000.0;
  // Band-limited noise: the usable band [low_hz, high_hz) is split into
  // `count` equal sub-bands separated by guard_hz.
  double low_hz = 100.0;
  double high_hz = 3900.0;
  double guard_hz = 200.0;
  // Harmonic tones: fundamental for each source (defaults to 200 Hz + 150 Hz k).
  std::vector<double> fundamentals;
  // Apply a random syllable-like amplitude envelope.
  bool modulate = false;
};

// Speaker labels are "spk<k>"; source k occupies spectral region k. Every
// returned waveform is normalized to unit peak.
std::vector<SourceSignal> generate_synthetic_sources(SourceKind kind,
                                                     std::size_t count,
                                                     double duration_s, Rng& rng,
                                                     const SynthOptions& options = {});

// Magnitude spectrum |X[k]| for k = 0..n/2 by direct DFT. Meant for short
// diagnostic signals.
std::vector<double> magnitude_spectrum(const Waveform& x);

// --------------------------------------------------------------------- WAV

enum class WavEncoding { kPcm16, kFloat32 };

void write_wav(const std::filesystem::path& path, const Waveform& samples,
               double sample_rate, WavEncoding encoding = WavEncoding::kFloat32);
SourceSignal read_wav(const std::filesystem::path& path);

}  // namespace tdc

#endif  // TDC_SIGNAL_H_

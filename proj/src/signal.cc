// Copyright 2026 The TD-Conformer Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tdc/signal.h"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <numbers>

#include "tdc/error.h"

namespace tdc {

double signal_power(const Waveform& x) {
  if (x.empty()) return 0.0;
  double s = 0.0;
  for (double v : x) s += v * v;
  return s / static_cast<double>(x.size());
}

Waveform convolve_truncated(const Waveform& x, const Waveform& h) {
  Waveform y(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] == 0.0) continue;
    const std::size_t taps = std::min(h.size(), x.size() - i);
    for (std::size_t k = 0; k < taps; ++k) y[i + k] += x[i] * h[k];
  }
  return y;
}

Waveform MixtureSample::reconstruct() const {
  const std::size_t len = mixture.size();
  Waveform x(len, 0.0);
  for (std::size_t c = 0; c < reverberant.size(); ++c) {
    for (std::size_t i = 0; i < len; ++i) x[i] += gains[c] * reverberant[c][i];
  }
  for (std::size_t i = 0; i < noise.size() && i < len; ++i) {
    x[i] += noise_gain * noise[i];
  }
  return x;
}

namespace {

double db_to_power(double db) { return std::pow(10.0, db / 10.0); }

Waveform padded(const Waveform& x, std::size_t len) {
  Waveform y(len, 0.0);
  std::copy_n(x.begin(), std::min(len, x.size()), y.begin());
  return y;
}

// Fills mixture and references from reverberant components and gains, after
// applying the optional peak limit to all gains jointly.
void assemble(MixtureSample& m, double peak_limit) {
  const std::size_t len = m.reverberant.front().size();
  auto sum = [&] {
    Waveform x(len, 0.0);
    for (std::size_t c = 0; c < m.reverberant.size(); ++c) {
      for (std::size_t i = 0; i < len; ++i) {
        x[i] += m.gains[c] * m.reverberant[c][i];
      }
    }
    for (std::size_t i = 0; i < m.noise.size(); ++i) x[i] += m.noise_gain * m.noise[i];
    return x;
  };
  m.mixture = sum();
  if (peak_limit > 0.0) {
    double peak = 0.0;
    for (double v : m.mixture) peak = std::max(peak, std::abs(v));
    if (peak > peak_limit) {
      const double scale = peak_limit / peak;
      for (double& g : m.gains) g *= scale;
      m.noise_gain *= scale;
      m.mixture = sum();
    }
  }
  m.references.clear();
  for (std::size_t c = 0; c < m.reverberant.size(); ++c) {
    Waveform r = m.reverberant[c];
    for (double& v : r) v *= m.gains[c];
    m.references.push_back(std::move(r));
  }
}

void check_sources(const std::vector<SourceSignal>& sources) {
  if (sources.size() < 2) {
    throw ConfigurationError("mixture: at least two sources are required");
  }
  for (const SourceSignal& s : sources) {
    if (s.samples.empty()) throw DegenerateInputError("mixture: empty source");
    if (s.sample_rate != sources.front().sample_rate) {
      throw ConfigurationError("mixture: sources differ in sample rate");
    }
  }
}

}  // namespace

MixtureSample synthesize_mixture(const std::vector<SourceSignal>& sources,
                                 const std::vector<Waveform>& rirs,
                                 const Waveform& noise, const MixOptions& options,
                                 std::uint64_t rng_seed) {
  check_sources(sources);
  if (!rirs.empty() && rirs.size() != sources.size()) {
    throw ConfigurationError("mixture: " + std::to_string(rirs.size()) +
                             " RIRs for " + std::to_string(sources.size()) +
                             " sources");
  }
  if (!noise.empty() && !options.snr_db) {
    throw ConfigurationError("mixture: noise given without a target SNR");
  }

  MixtureSample m;
  m.sources = sources;
  m.rirs = rirs;
  m.ssr_db = options.ssr_db;
  m.snr_db = noise.empty() ? std::nullopt : options.snr_db;
  m.sample_rate = sources.front().sample_rate;
  m.seed = rng_seed;

  std::size_t len = 0;
  for (const SourceSignal& s : sources) len = std::max(len, s.samples.size());
  for (std::size_t c = 0; c < sources.size(); ++c) {
    Waveform dry = padded(sources[c].samples, len);
    m.reverberant.push_back(rirs.empty() ? std::move(dry)
                                         : convolve_truncated(dry, rirs[c]));
  }

  const double ref_power = signal_power(m.reverberant.front());
  if (!(ref_power > 0.0)) throw DegenerateInputError("mixture: source 1 has zero power");
  m.gains.assign(sources.size(), 1.0);
  for (std::size_t c = 1; c < sources.size(); ++c) {
    const double p = signal_power(m.reverberant[c]);
    if (!(p > 0.0)) {
      throw DegenerateInputError("mixture: source " + std::to_string(c + 1) +
                                 " has zero power");
    }
    m.gains[c] = std::sqrt(ref_power / (p * db_to_power(options.ssr_db)));
  }

  if (!noise.empty()) {
    Rng rng(rng_seed);
    std::size_t offset = 0;
    if (noise.size() > len) {
      offset = std::uniform_int_distribution<std::size_t>(0, noise.size() - len)(rng);
    }
    m.noise.assign(len, 0.0);
    std::copy_n(noise.begin() + static_cast<std::ptrdiff_t>(offset),
                std::min(len, noise.size() - offset), m.noise.begin());
    const double noise_power = signal_power(m.noise);
    if (!(noise_power > 0.0)) throw DegenerateInputError("mixture: noise has zero power");
    Waveform speech(len, 0.0);
    for (std::size_t c = 0; c < sources.size(); ++c) {
      for (std::size_t i = 0; i < len; ++i) {
        speech[i] += m.gains[c] * m.reverberant[c][i];
      }
    }
    m.noise_gain = std::sqrt(signal_power(speech) /
                             (noise_power * db_to_power(*options.snr_db)));
  }
  assemble(m, options.peak_limit);
  return m;
}

MixtureSample dynamic_mix(const std::vector<SourceSignal>& pool,
                          std::size_t speakers,
                          std::pair<double, double> gain_range_db, Rng& rng,
                          double peak_limit) {
  std::map<std::string, std::vector<std::size_t>> by_speaker;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    by_speaker[pool[i].speaker_id].push_back(i);
  }
  if (speakers < 2 || by_speaker.size() < speakers) {
    throw ConfigurationError("dynamic_mix: pool has " +
                             std::to_string(by_speaker.size()) +
                             " distinct speakers, need " +
                             std::to_string(speakers));
  }
  std::vector<const std::vector<std::size_t>*> groups;
  for (const auto& [id, items] : by_speaker) groups.push_back(&items);
  std::shuffle(groups.begin(), groups.end(), rng);

  std::vector<SourceSignal> chosen;
  for (std::size_t c = 0; c < speakers; ++c) {
    const auto& items = *groups[c];
    const std::size_t pick =
        std::uniform_int_distribution<std::size_t>(0, items.size() - 1)(rng);
    chosen.push_back(pool[items[pick]]);
  }
  check_sources(chosen);

  MixtureSample m;
  m.sources = chosen;
  m.sample_rate = chosen.front().sample_rate;
  m.seed = rng();
  std::size_t len = 0;
  for (const SourceSignal& s : chosen) len = std::max(len, s.samples.size());
  std::uniform_real_distribution<double> gain_db(gain_range_db.first,
                                                 gain_range_db.second);
  for (const SourceSignal& s : chosen) {
    m.reverberant.push_back(padded(s.samples, len));
    if (!(signal_power(m.reverberant.back()) > 0.0)) {
      throw DegenerateInputError("dynamic_mix: zero-power source in pool");
    }
    m.gains.push_back(std::pow(10.0, gain_db(rng) / 20.0));
  }
  m.ssr_db = 10.0 * std::log10(
      (m.gains[0] * m.gains[0] * signal_power(m.reverberant[0])) /
      (m.gains[1] * m.gains[1] * signal_power(m.reverberant[1])));
  assemble(m, peak_limit);
  return m;
}

namespace {

void normalize_peak(Waveform& x) {
  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  if (peak > 0.0) {
    for (double& v : x) v /= peak;
  }
}

// Sum of integer-cycle sinusoids, accumulated with a rotating phasor.
void add_partial(Waveform& x, double cycles_per_sample, double amplitude,
                 double phase) {
  const double w = 2.0 * std::numbers::pi * cycles_per_sample;
  const std::complex<double> step(std::cos(w), std::sin(w));
  std::complex<double> z = std::polar(1.0, phase);
  for (double& v : x) {
    v += amplitude * z.real();
    z *= step;
  }
}

}  // namespace

std::vector<SourceSignal> generate_synthetic_sources(SourceKind kind,
                                                     std::size_t count,
                                                     double duration_s, Rng& rng,
                                                     const SynthOptions& options) {
  if (!(duration_s > 0.0)) {
    throw ConfigurationError("generate_synthetic_sources: duration must be positive");
  }
  if (count == 0) return {};
  const double fs = options.sample_rate;
  const auto len = static_cast<std::size_t>(std::llround(duration_s * fs));
  if (len == 0) throw ConfigurationError("generate_synthetic_sources: zero samples");
  // Partials sit on the DFT grid of the signal so supports are exactly disjoint.
  const double bin_hz = fs / static_cast<double>(len);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<SourceSignal> out;
  for (std::size_t k = 0; k < count; ++k) {
    SourceSignal s;
    s.sample_rate = fs;
    s.speaker_id = "spk" + std::to_string(k);
    s.samples.assign(len, 0.0);
    if (kind == SourceKind::kBandLimitedNoise) {
      const double width =
          (options.high_hz - options.low_hz -
           options.guard_hz * static_cast<double>(count - 1)) /
          static_cast<double>(count);
      if (!(width > bin_hz)) {
        throw ConfigurationError("generate_synthetic_sources: bands too narrow");
      }
      const double lo = options.low_hz + static_cast<double>(k) * (width + options.guard_hz);
      const auto first = static_cast<std::size_t>(std::ceil(lo / bin_hz));
      const auto last = static_cast<std::size_t>(std::ceil((lo + width) / bin_hz));
      for (std::size_t b = first; b < last; ++b) {
        add_partial(s.samples, static_cast<double>(b) / static_cast<double>(len),
                    gauss(rng), phase(rng));
      }
    } else {
      const double f0 = k < options.fundamentals.size()
                            ? options.fundamentals[k]
                            : 200.0 + 150.0 * static_cast<double>(k);
      for (std::size_t h = 1; static_cast<double>(h) * f0 < fs / 2.0; ++h) {
        const double bin = std::round(static_cast<double>(h) * f0 / bin_hz);
        add_partial(s.samples, bin / static_cast<double>(len),
                    1.0 / static_cast<double>(h), phase(rng));
      }
    }
    if (options.modulate) {
      const double rate = std::uniform_real_distribution<double>(2.0, 6.0)(rng);
      const double offset = phase(rng);
      for (std::size_t i = 0; i < len; ++i) {
        const double t = static_cast<double>(i) / fs;
        s.samples[i] *=
            0.3 + 0.7 * (0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * rate * t + offset));
      }
    }
    normalize_peak(s.samples);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<double> magnitude_spectrum(const Waveform& x) {
  const std::size_t n = x.size();
  std::vector<double> mag(n / 2 + 1, 0.0);
  for (std::size_t k = 0; k < mag.size(); ++k) {
    std::complex<double> acc = 0.0;
    const double w = -2.0 * std::numbers::pi * static_cast<double>(k) /
                     static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      acc += x[i] * std::polar(1.0, w * static_cast<double>(i));
    }
    mag[k] = std::abs(acc);
  }
  return mag;
}

// --------------------------------------------------------------------- WAV

namespace {

void put_u16(std::string& b, std::uint16_t v) {
  b.push_back(static_cast<char>(v & 0xff));
  b.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) {
    v = (v << 8) | static_cast<unsigned char>(b[at + static_cast<std::size_t>(i)]);
  }
  return v;
}

std::uint16_t get_u16(const std::string& b, std::size_t at) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(b[at]) |
                                    (static_cast<unsigned char>(b[at + 1]) << 8));
}

}  // namespace

void write_wav(const std::filesystem::path& path, const Waveform& samples,
               double sample_rate, WavEncoding encoding) {
  if (!(sample_rate > 0.0) || sample_rate != std::floor(sample_rate)) {
    throw ConfigurationError("write_wav: sample rate must be a positive integer");
  }
  const bool pcm = encoding == WavEncoding::kPcm16;
  const std::uint16_t bytes = pcm ? 2 : 4;
  const auto data_size = static_cast<std::uint32_t>(samples.size() * bytes);
  const auto rate = static_cast<std::uint32_t>(sample_rate);

  std::string b;
  b.reserve(44 + data_size);
  b += "RIFF";
  put_u32(b, 36 + data_size);
  b += "WAVEfmt ";
  put_u32(b, 16);
  put_u16(b, pcm ? 1 : 3);
  put_u16(b, 1);
  put_u32(b, rate);
  put_u32(b, rate * bytes);
  put_u16(b, bytes);
  put_u16(b, static_cast<std::uint16_t>(8 * bytes));
  b += "data";
  put_u32(b, data_size);
  for (double v : samples) {
    if (pcm) {
      const double q = std::round(std::clamp(v, -1.0, 1.0) * 32767.0);
      put_u16(b, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
    } else {
      const float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(b, bits);
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_wav: cannot open " + path.string());
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
  if (!out) throw IoError("write_wav: write failed for " + path.string());
}

SourceSignal read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_wav: cannot open " + path.string());
  const std::string b((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  const std::string where = "read_wav: " + path.string() + ": ";
  if (b.size() < 12 || b.compare(0, 4, "RIFF") != 0 || b.compare(8, 4, "WAVE") != 0) {
    throw IoError(where + "not a RIFF/WAVE file");
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= b.size()) {
    const std::string id = b.substr(pos, 4);
    const std::uint32_t size = get_u32(b, pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > b.size()) throw IoError(where + "truncated chunk '" + id + "'");
    if (id == "fmt ") {
      if (size < 16) throw IoError(where + "short fmt chunk");
      format = get_u16(b, body);
      channels = get_u16(b, body + 2);
      rate = get_u32(b, body + 4);
      bits = get_u16(b, body + 14);
      if (format == 0xFFFE && size >= 26) format = get_u16(b, body + 24);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw IoError(where + "data chunk before fmt chunk");
      if (channels != 1) {
        throw UnsupportedError(where + std::to_string(channels) +
                               " channels, only mono is supported");
      }
      SourceSignal s;
      s.sample_rate = rate;
      if (format == 1 && bits == 16) {
        s.samples.resize(size / 2);
        for (std::size_t i = 0; i < s.samples.size(); ++i) {
          s.samples[i] = static_cast<std::int16_t>(get_u16(b, body + 2 * i)) / 32767.0;
        }
      } else if (format == 3 && bits == 32) {
        s.samples.resize(size / 4);
        for (std::size_t i = 0; i < s.samples.size(); ++i) {
          const std::uint32_t u = get_u32(b, body + 4 * i);
          float f;
          std::memcpy(&f, &u, 4);
          s.samples[i] = f;
        }
      } else {
        throw UnsupportedError(where + "format tag " + std::to_string(format) +
                               " with " + std::to_string(bits) +
                               " bits, expected 16-bit PCM or 32-bit float");
      }
      return s;
    }
    pos = body + size + (size & 1);
  }
  throw IoError(where + "no data chunk");
}

}  // namespace tdc

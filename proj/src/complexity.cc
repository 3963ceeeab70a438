// Copyright 2026 The TD-Conformer Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tdc/complexity.h"

#include <cmath>
#include <iomanip>

#include "tdc/codec.h"
#include "tdc/error.h"

namespace tdc {

void ComplexityQuery::validate() const {
  if (!(frames >= 1.0)) throw ConfigurationError("complexity: frames must be >= 1");
  if (!(width > 0.0)) throw ConfigurationError("complexity: width must be positive");
  if (!(kernel > 0.0)) throw ConfigurationError("complexity: kernel must be positive");
  if (!(chunk > 0.0)) throw ConfigurationError("complexity: chunk must be positive");
}

std::size_t frames_for_seconds(double seconds, double sample_rate,
                               std::size_t block_len, std::size_t stride) {
  if (!(seconds > 0.0)) throw ConfigurationError("duration must be positive");
  const auto samples = static_cast<std::size_t>(std::llround(seconds * sample_rate));
  return frame_count(samples, block_len, stride);
}

double tc_conformer(const ComplexityQuery& q) {
  q.validate();
  const double l = std::ldexp(q.frames, -static_cast<int>(q.subsampling));
  const double b = q.width;
  return l * (q.kernel * b + b * b) + l * l * b + b * b * l;
}

double tc_dpt(const ComplexityQuery& q) {
  q.validate();
  const double l = q.frames, b = q.width, p = q.chunk;
  return (l / (2.0 * p) + p / 2.0) * (p * p * b + b * b * p) +
         l / (4.0 * p * p) * b + b * b * l / (2.0 * p);
}

double receptive_field(std::size_t subsampling, std::size_t kernel,
                       std::size_t block_len, double sample_rate) {
  if (!(sample_rate > 0.0)) throw ConfigurationError("sample_rate must be positive");
  // Numerator is exact in binary floating point; one rounding in the division.
  const double samples =
      std::ldexp(static_cast<double>(block_len) * static_cast<double>(kernel),
                 static_cast<int>(subsampling) - 1) +
      static_cast<double>(block_len) / 2.0;
  return samples / sample_rate;
}

std::size_t receptive_field_frames(std::size_t subsampling, std::size_t kernel) {
  return (std::size_t{1} << subsampling) * kernel;
}

std::uint64_t count_params(const ModelConfig& c) {
  c.validate();
  const std::uint64_t n = c.n_filters, b = c.bottleneck, l = c.block_len;
  const std::uint64_t h = b * c.ff_expansion, p = c.kernel;
  const std::uint64_t s = c.subsampling, r = c.layers, spk = c.speakers;
  const std::uint64_t rel = c.heads * (2 * c.resolved_max_rel_distance() + 1);

  const std::uint64_t codec = 2 * l * n;
  const std::uint64_t input = 2 * n + (n * b + b) + 1;
  const std::uint64_t down = 4 * b * b + b;
  const std::uint64_t up = (4 * b * b + b) + 1 + 2 * b;
  const std::uint64_t ff = 2 * b + (b * h + h) + (h * b + b);
  const std::uint64_t conv = 2 * b + (2 * b * b + 2 * b) + (p * b + b) + 2 * b +
                             (b * b + b);
  const std::uint64_t mhsa = 2 * b + 4 * (b * b + b) + rel;
  const std::uint64_t head = b * spk * n + spk * n;
  return codec + input + s * (down + up) + r * (2 * ff + conv + mhsa) + head;
}

std::uint64_t MacBreakdown::total() const {
  return encoder + input_projection + sampling + feed_forward + convolution +
         attention_projections + attention_scores + head + decoder;
}

MacBreakdown count_macs_samples(const ModelConfig& c, std::size_t samples) {
  c.validate();
  if (samples == 0) throw ConfigurationError("count_macs: empty signal");
  const std::uint64_t frames = frame_count(samples, c.block_len, c.stride);
  if (frames < (std::uint64_t{1} << c.subsampling)) {
    throw ConfigurationError("count_macs: signal too short for subsampling");
  }
  const std::uint64_t n = c.n_filters, b = c.bottleneck, l_bl = c.block_len;
  const std::uint64_t h = b * c.ff_expansion, p = c.kernel, r = c.layers;

  MacBreakdown m;
  m.encoder = frames * l_bl * n;
  m.input_projection = frames * n * b;
  std::uint64_t len = frames;
  for (std::size_t s = 0; s < c.subsampling; ++s) {
    len /= 2;
    m.sampling += 2 * len * 4 * b * b;  // strided conv out + transposed conv in
  }
  m.feed_forward = r * 2 * (2 * len * b * h);
  m.convolution = r * (3 * len * b * b + len * p * b);
  m.attention_projections = r * 4 * len * b * b;
  m.attention_scores = r * 2 * len * len * b;
  m.head = frames * b * c.speakers * n;
  m.decoder = c.speakers * frames * n * l_bl;
  return m;
}

MacBreakdown count_macs(const ModelConfig& c, double signal_seconds) {
  if (!(signal_seconds > 0.0)) {
    throw ConfigurationError("count_macs: duration must be positive");
  }
  return count_macs_samples(
      c, static_cast<std::size_t>(std::llround(signal_seconds * c.sample_rate)));
}

std::optional<std::uint64_t> crossover_length(const CrossoverQuery& q) {
  auto exceeds = [&q](std::uint64_t frames) {
    const ComplexityQuery cq{static_cast<double>(frames), q.width, q.subsampling,
                             q.kernel, q.chunk};
    return tc_conformer(cq) > tc_dpt(cq);
  };
  if (exceeds(1)) return 1;
  // conformer - dpt is a convex quadratic in L_x that is negative at 0, so the
  // predicate switches at most once.
  std::uint64_t lo = 1, hi = 2;
  while (!exceeds(hi)) {
    if (hi >= q.horizon) return std::nullopt;
    lo = hi;
    hi = std::min(hi * 2, q.horizon);
  }
  while (hi - lo > 1) {
    const std::uint64_t mid = lo + (hi - lo) / 2;
    (exceeds(mid) ? hi : lo) = mid;
  }
  return hi;
}

void emit_curves(const CurveGrid& grid, std::ostream& os) {
  const bool by_width = grid.sweep == CurveGrid::Sweep::kWidth;
  os << "seconds," << (by_width ? "B" : "S") << ",tc_conformer,tc_dpt\n";
  os << std::setprecision(17);
  const std::size_t sweeps =
      by_width ? grid.widths.size() : grid.subsamplings.size();
  for (std::size_t i = 0; i < sweeps; ++i) {
    const double width = by_width ? grid.widths[i] : grid.width;
    const std::size_t s = by_width ? grid.subsampling : grid.subsamplings[i];
    for (double seconds : grid.seconds) {
      const auto frames = static_cast<double>(frames_for_seconds(
          seconds, grid.sample_rate, grid.block_len, grid.stride));
      const ComplexityQuery q{frames, width, s, grid.kernel, grid.chunk};
      os << seconds << ',';
      if (by_width) {
        os << width;
      } else {
        os << s;
      }
      os << ',' << tc_conformer(q) << ',' << tc_dpt(q) << '\n';
    }
  }
}

}  // namespace tdc

// Copyright 2026 The TD-Conformer Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Locality probe for the mask network with attention and group-norm
// statistics switched off. A single input frame is perturbed and the set of
// changed output frames is compared with an interval-propagation oracle that
// walks the same stack of convolutions.

#ifndef TDC_TESTS_LOCALITY_H_
#define TDC_TESTS_LOCALITY_H_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "tdc/masknet.h"

namespace tdc::testing {

struct Span {
  long lo, hi;  // inclusive
  long width() const { return hi - lo + 1; }
};

inline Span clamp_span(Span s, long len) {
  return {std::max(s.lo, 0L), std::min(s.hi, len - 1)};
}

// K=4, stride 2, pad 1: output t reads inputs 2t-1 .. 2t+2.
inline Span down_span(Span s, long out_len) {
  const long lo = static_cast<long>(std::ceil((s.lo - 2) / 2.0));
  const long hi = static_cast<long>(std::floor((s.hi + 1) / 2.0));
  return clamp_span({lo, hi}, out_len);
}

// Same-padded depthwise kernel of width p with left pad (p-1)/2.
inline Span depthwise_span(Span s, long p, long len) {
  const long left = (p - 1) / 2;
  return clamp_span({s.lo + left - p + 1, s.hi + left}, len);
}

// Transposed K=4 stride 2 with the first frame dropped.
inline Span up_span(Span s, Span skip, long len) {
  const Span u{2 * s.lo - 1, 2 * s.hi + 2};
  return clamp_span({std::min(u.lo, skip.lo), std::max(u.hi, skip.hi)}, len);
}

inline Span oracle_span(long frame, long len, std::size_t s, std::size_t p,
                        std::size_t r) {
  std::vector<Span> skips;
  std::vector<long> lens;
  Span cur{frame, frame};
  long l = len;
  for (std::size_t k = 0; k < s; ++k) {
    skips.push_back(cur);
    lens.push_back(l);
    l /= 2;
    cur = down_span(cur, l);
  }
  for (std::size_t k = 0; k < r; ++k) cur = depthwise_span(cur, static_cast<long>(p), l);
  for (std::size_t k = s; k-- > 0;) cur = up_span(cur, skips[k], lens[k]);
  return cur;
}

// Width added by the sampling layers around one conv module, for an
// interior frame: S halvings grow a single frame to w_S, then each
// transposed conv maps width w to 2w + 2.
inline std::size_t sampling_overhead(std::size_t s) {
  std::size_t w = 1;
  for (std::size_t k = 0; k < s; ++k) w = w / 2 + 2;
  const std::size_t scale = std::size_t{1} << s;
  return scale * (w - 1) + 2 * (scale - 1);
}

struct LocalityReport {
  bool within_oracle = true;
  std::size_t max_changed_span = 0;
  std::size_t sampling_overhead = 0;
};

inline LocalityReport probe_locality(std::size_t s, std::size_t p, std::size_t r,
                                     std::size_t frames, std::uint64_t seed) {
  ModelConfig c;
  c.n_filters = 8;
  c.bottleneck = 8;
  c.layers = r;
  c.subsampling = s;
  c.kernel = p;
  c.heads = 2;
  c.ff_expansion = 2;
  c.max_rel_distance = 32;
  Rng rng(seed);
  MaskNet net(c, rng);
  RunMode mode;
  mode.attention_enabled = false;
  mode.group_norm_statistics = false;

  const Tensor base_in = random_uniform({frames, c.n_filters}, rng, 0.0, 1.0);
  const Tensor base_out = net.forward(base_in, mode);
  LocalityReport rep;
  rep.sampling_overhead = sampling_overhead(s);
  for (std::size_t f = 0; f < frames; ++f) {
    // Random, not constant: the per-frame input norm removes a uniform shift.
    Tensor in = base_in;
    std::normal_distribution<double> bump(0.0, 0.5);
    for (double& v : in.row(f)) v += bump(rng);
    const Tensor out = net.forward(in, mode);
    long first = -1, last = -1;
    for (std::size_t t = 0; t < frames; ++t) {
      double d = 0.0;
      for (std::size_t k = 0; k < out.cols(); ++k) {
        d = std::max(d, std::abs(out(t, k) - base_out(t, k)));
      }
      if (d > 1e-12) {
        if (first < 0) first = static_cast<long>(t);
        last = static_cast<long>(t);
      }
    }
    if (first < 0) continue;
    const Span want = oracle_span(static_cast<long>(f), static_cast<long>(frames), s, p, r);
    if (first < want.lo || last > want.hi) rep.within_oracle = false;
    rep.max_changed_span =
        std::max(rep.max_changed_span, static_cast<std::size_t>(last - first + 1));
  }
  return rep;
}

}  // namespace tdc::testing

#endif  // TDC_TESTS_LOCALITY_H_

// Copyright 2026 The TD-Conformer Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "tdc/codec.h"
#include "tdc/harness.h"
#include "tdc/signal.h"

using namespace tdc;

namespace {

// Window counting: number of starts s = 0, stride, 2 stride, ... such that a
// full block fits in the zero-padded signal.
std::size_t count_windows(std::size_t t, std::size_t block, std::size_t stride) {
  std::size_t padded = std::max(t, block);
  while ((padded - block) % stride != 0) ++padded;
  std::size_t n = 0;
  for (std::size_t s = 0; s + block <= padded; s += stride) ++n;
  return n;
}

EncoderParams random_encoder(std::size_t n, Rng& rng) {
  return {random_normal({16, n}, rng), 16, 8};
}

double correlation(const Waveform& a, const Waveform& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

}  // namespace

TEST_CASE("frame count examples") {
  CHECK(frame_count(16, 16, 8) == 1);
  CHECK(frame_count(46320, 16, 8) == 5789);
  CHECK(frame_count(1, 16, 8) == 1);
  CHECK(frame_count(17, 16, 8) == 2);
  CHECK(padded_length(17, 16, 8) == 24);
}

TEST_CASE("frame count matches window counting for random lengths") {
  Rng rng(1);
  std::uniform_int_distribution<std::size_t> len(16, 50000);
  for (int i = 0; i < 500; ++i) {
    const std::size_t t = len(rng);
    CHECK(frame_count(t, 16, 8) == count_windows(t, 16, 8));
    CHECK(frame_count(t, 16, 8) == (padded_length(t, 16, 8) - 16) / 8 + 1);
  }
}

TEST_CASE("encode is nonnegative with the expected shape") {
  Rng rng(2);
  const EncoderParams p = random_encoder(32, rng);
  for (std::size_t t : {1u, 15u, 16u, 100u, 1001u}) {
    const Tensor x = random_normal({t}, rng);
    const Tensor f = encode(x.values(), p);
    CHECK(f.rows() == frame_count(t, 16, 8));
    CHECK(f.cols() == 32);
    for (double v : f.values()) CHECK(v >= 0.0);
  }
}

TEST_CASE("identity basis frames a nonnegative signal exactly") {
  Tensor basis({16, 16});
  for (std::size_t i = 0; i < 16; ++i) basis[i * 16 + i] = 1.0;
  const EncoderParams p{basis, 16, 8};
  Rng rng(3);
  const Tensor x = random_uniform({40}, rng, 0.0, 1.0);
  const Tensor f = encode(x.values(), p);
  REQUIRE(f.rows() == 4);  // padded to 48
  for (std::size_t l = 0; l < 4; ++l) {
    for (std::size_t n = 0; n < 16; ++n) {
      const std::size_t i = l * 8 + n;
      CHECK(f.row(l)[n] == (i < 40 ? x[i] : 0.0));
    }
  }
}

TEST_CASE("decode restores the input length") {
  Rng rng(4);
  const DecoderParams d{random_normal({32, 16}, rng), 16, 8};
  const EncoderParams e = random_encoder(32, rng);
  std::uniform_int_distribution<std::size_t> len(1, 1000);
  for (int i = 0; i < 200; ++i) {
    const std::size_t t = len(rng);
    const Tensor x = random_normal({t}, rng);
    CHECK(decode(encode(x.values(), e), d, t).size() == t);
  }
}

TEST_CASE("zero features decode to silence") {
  Rng rng(5);
  const DecoderParams d{random_normal({32, 16}, rng), 16, 8};
  for (double v : decode(Tensor({10, 32}), d, 80)) CHECK(v == 0.0);
}

TEST_CASE("decode is linear in the features") {
  Rng rng(6);
  const DecoderParams d{random_normal({32, 16}, rng), 16, 8};
  const Tensor a = random_normal({20, 32}, rng), b = random_normal({20, 32}, rng);
  Tensor mix = a;
  mix *= 2.0;
  Tensor bb = b;
  bb *= -0.5;
  mix += bb;
  const auto ya = decode(a, d, 160), yb = decode(b, d, 160), ym = decode(mix, d, 160);
  for (std::size_t i = 0; i < ym.size(); ++i) {
    CHECK(std::abs(ym[i] - (2.0 * ya[i] - 0.5 * yb[i])) <= 1e-8);
  }
}

TEST_CASE("Encoder and Decoder modules agree with the free functions") {
  Rng rng(7);
  Encoder enc(24, 16, 8, rng);
  Decoder dec(24, 16, 8, rng);
  const Tensor x = random_normal({123, 1}, rng);
  const Tensor f = enc.forward(x, {});
  CHECK(f == encode(x.values(), enc.params()));
  const Tensor y = dec.forward(f, 123);
  const auto ref = decode(f, dec.params(), 123);
  REQUIRE(y.size() == ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("jointly trained encoder and decoder reconstruct the input") {
  // Autoencoder on band-limited noise: minimize the mean squared
  // reconstruction error with Adam, then check correlation on unseen signals.
  Rng rng(8);
  Encoder enc(64, 16, 8, rng);
  Decoder dec(64, 16, 8, rng);
  ParameterList params = enc.parameters("encoder");
  dec.collect_parameters("decoder", params);
  Adam adam(params);
  SynthOptions opts;
  opts.modulate = true;
  for (int step = 0; step < 300; ++step) {
    const auto src = generate_synthetic_sources(SourceKind::kBandLimitedNoise, 2, 0.1, rng, opts);
    Tensor x({800, 1});
    for (std::size_t i = 0; i < 800; ++i) x[i] = src[0].samples[i] + src[1].samples[i];
    enc.zero_grad();
    dec.basis().zero_grad();
    const Tensor f = enc.forward(x, {});
    const Tensor y = dec.forward(f, 800);
    Tensor g = y;
    g -= x;
    g *= 2.0 / 800.0;
    enc.backward(dec.backward(f, g));
    adam.step(1e-2);
  }
  for (int trial = 0; trial < 5; ++trial) {
    const auto src = generate_synthetic_sources(SourceKind::kBandLimitedNoise, 2, 0.25, rng, opts);
    Waveform x(2000);
    for (std::size_t i = 0; i < 2000; ++i) x[i] = src[0].samples[i] + src[1].samples[i];
    const Waveform y = decode(encode(x, enc.params()), dec.params(), x.size());
    CHECK(correlation(x, y) >= 0.9);
  }
}

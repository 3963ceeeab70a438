// Copyright 2026 The TD-Conformer Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <sstream>

#include "tdc/complexity.h"
#include "tdc/error.h"
#include "tdc/model.h"

using namespace tdc;

namespace {

// Direct transcriptions of the two per-layer cost models, kept separate from
// the library versions.
double naive_conformer(double l, double b, double s, double p) {
  const double d = std::pow(2.0, s);
  return (l / d) * (p * b + b * b) + (l * l / (d * d)) * b + b * b * (l / d);
}

double naive_dpt(double l, double b, double pc) {
  return (l / (2 * pc) + pc / 2) * (pc * pc * b + b * b * pc) + (l / (4 * pc * pc)) * b +
         b * b * l / (2 * pc);
}

std::uint64_t scan_crossover(double b, double p, double pc, double s, std::uint64_t limit) {
  for (std::uint64_t l = 1; l <= limit; ++l) {
    const double x = static_cast<double>(l);
    if (naive_conformer(x, b, s, p) > naive_dpt(x, b, pc)) return l;
  }
  return 0;
}

ComplexityQuery query(double l, double b, std::size_t s, double p, double pc = 250.0) {
  return {l, b, s, p, pc};
}

}  // namespace

TEST_CASE("conformer cost examples") {
  CHECK(tc_conformer(query(8, 2, 0, 3)) == 240.0);
  CHECK(tc_conformer(query(8, 2, 1, 3)) == 88.0);
  CHECK(tc_conformer(query(1, 1, 0, 1)) == 4.0);
}

TEST_CASE("dual-path cost examples") {
  CHECK(tc_dpt(query(8, 2, 0, 3, 2)) == 57.0);
}

TEST_CASE("cost models agree with direct transcription") {
  Rng rng(1);
  std::uniform_real_distribution<double> len(1, 1e5), width(8, 2048);
  for (int i = 0; i < 200; ++i) {
    const double l = std::floor(len(rng)), b = std::floor(width(rng));
    const std::size_t s = static_cast<std::size_t>(i % 4);
    CHECK(tc_conformer(query(l, b, s, 64)) ==
          doctest::Approx(naive_conformer(l, b, static_cast<double>(s), 64)).epsilon(1e-14));
    CHECK(tc_dpt(query(l, b, s, 64)) == doctest::Approx(naive_dpt(l, b, 250)).epsilon(1e-14));
  }
}

TEST_CASE("conformer cost is exactly quadratic in the length") {
  for (std::size_t s = 0; s <= 3; ++s) {
    for (double b : {64.0, 256.0}) {
      const double expected = 2.0 * b / std::ldexp(1.0, 2 * static_cast<int>(s));
      for (double l = 1000; l < 1010; ++l) {
        const double d2 = tc_conformer(query(l + 2, b, s, 32)) -
                          2 * tc_conformer(query(l + 1, b, s, 32)) +
                          tc_conformer(query(l, b, s, 32));
        CHECK(d2 == expected);
      }
    }
  }
}

TEST_CASE("dual-path cost is affine in the length") {
  for (double l = 4096; l < 4106; ++l) {
    const double d2 = tc_dpt(query(l + 2, 256, 0, 1, 256)) -
                      2 * tc_dpt(query(l + 1, 256, 0, 1, 256)) +
                      tc_dpt(query(l, 256, 0, 1, 256));
    CHECK(d2 == 0.0);
  }
}

TEST_CASE("each subsampling layer quarters attention and halves the rest") {
  // tc(L) = alpha L + beta L^2; recover the coefficients from L = 1, 2.
  auto coeffs = [](std::size_t s) {
    const double t1 = tc_conformer(query(1, 256, s, 64));
    const double t2 = tc_conformer(query(2, 256, s, 64));
    const double beta = (t2 - 2 * t1) / 2;
    return std::pair{t1 - beta, beta};
  };
  for (std::size_t s = 0; s < 3; ++s) {
    const auto [a0, b0] = coeffs(s);
    const auto [a1, b1] = coeffs(s + 1);
    CHECK(a1 == a0 / 2);
    CHECK(b1 == b0 / 4);
  }
}

TEST_CASE("receptive field") {
  CHECK(receptive_field(2, 32, 16, 8000) == 0.129);
  CHECK(receptive_field(1, 64, 16, 8000) == 0.129);
  CHECK(receptive_field(1, 1, 2, 1) == 3.0);
  CHECK(receptive_field_frames(2, 32) == 128);
  CHECK(receptive_field_frames(0, 5) == 5);
  CHECK_THROWS_AS(receptive_field(1, 1, 2, 0), ConfigurationError);
}

TEST_CASE("frame counts from seconds") {
  CHECK(frames_for_seconds(5.79, 8000, 16, 8) == 5789);
  CHECK(frames_for_seconds(4.0, 8000, 16, 8) == 3999);
  CHECK_THROWS_AS(frames_for_seconds(0.0, 8000, 16, 8), ConfigurationError);
}

TEST_CASE("crossover matches a linear scan") {
  for (double b : {128.0, 256.0, 512.0}) {
    const auto got = crossover_length({b, 250, 250, 0});
    REQUIRE(got.has_value());
    CHECK(*got == scan_crossover(b, 250, 250, 0, 100000));
  }
  for (std::size_t s = 1; s <= 2; ++s) {
    const auto got = crossover_length({128, 64, 250, s});
    REQUIRE(got.has_value());
    CHECK(*got == scan_crossover(128, 64, 250, static_cast<double>(s), 200000));
  }
}

TEST_CASE("crossover grows with width") {
  const auto a = crossover_length({128, 250, 250, 0});
  const auto b = crossover_length({256, 250, 250, 0});
  const auto c = crossover_length({512, 250, 250, 0});
  REQUIRE((a && b && c));
  CHECK(*a < *b);
  CHECK(*b < *c);
}

TEST_CASE("crossover reports none below the horizon") {
  CHECK_FALSE(crossover_length({128, 250, 250, 0, 1000}).has_value());
}

TEST_CASE("curve CSV layout") {
  CurveGrid g;
  g.seconds = {1.0, 2.0};
  g.widths = {128, 256};
  std::ostringstream a, b;
  emit_curves(g, a);
  emit_curves(g, b);
  CHECK(a.str() == b.str());
  std::istringstream in(a.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "seconds,B,tc_conformer,tc_dpt");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 4);

  g.sweep = CurveGrid::Sweep::kSubsampling;
  g.subsamplings = {0, 1, 2, 3};
  std::ostringstream c;
  emit_curves(g, c);
  CHECK(c.str().rfind("seconds,S,tc_conformer,tc_dpt\n", 0) == 0);
  CHECK(c.str().find("\n2,3,") != std::string::npos);
}

TEST_CASE("head-only parameter count by hand") {
  ModelConfig c;
  c.n_filters = 4;
  c.bottleneck = 3;
  c.layers = 0;
  c.subsampling = 0;
  c.heads = 1;
  c.speakers = 2;
  // codec 2*16*4, input norm 2*4, projection 4*3+3, PReLU 1, head 3*8+8
  CHECK(count_params(c) == 128 + 8 + 15 + 1 + 32);
  SeparationModel m(c, 1);
  CHECK(m.parameter_count() == count_params(c));
}

TEST_CASE("parameter count matches the constructed model") {
  for (const char* name : {"S", "M", "L", "XL"}) {
    INFO(name);
    SeparationModel m(ModelConfig::preset(name), 0);
    CHECK(m.parameter_count() == count_params(ModelConfig::preset(name)));
  }
  ModelConfig c;
  c.n_filters = 12;
  c.bottleneck = 8;
  c.layers = 3;
  c.subsampling = 2;
  c.kernel = 7;
  c.heads = 4;
  c.ff_expansion = 3;
  c.speakers = 3;
  c.max_rel_distance = 17;
  SeparationModel m(c, 5);
  CHECK(m.parameter_count() == count_params(c));
  CHECK(count_params(c) == count_params(c));
}

TEST_CASE("parameter count scales toward 4x per width doubling") {
  const double s = static_cast<double>(count_params(ModelConfig::preset("S")));
  const double m = static_cast<double>(count_params(ModelConfig::preset("M")));
  const double l = static_cast<double>(count_params(ModelConfig::preset("L")));
  const double xl = static_cast<double>(count_params(ModelConfig::preset("XL")));
  CHECK(m / s < l / m);
  CHECK(l / m < xl / l);
  CHECK(xl / l > 3.9);
  CHECK(xl / l < 4.0);
}

TEST_CASE("zero-layer MACs by hand") {
  ModelConfig c;
  c.n_filters = 4;
  c.bottleneck = 3;
  c.layers = 0;
  c.subsampling = 0;
  c.heads = 1;
  const MacBreakdown m = count_macs_samples(c, 16);  // one frame
  CHECK(m.encoder == 16 * 4);
  CHECK(m.input_projection == 4 * 3);
  CHECK(m.head == 3 * 8);
  CHECK(m.decoder == 2 * 4 * 16);
  CHECK(m.feed_forward + m.convolution + m.attention_projections + m.attention_scores +
            m.sampling ==
        0);
  CHECK(m.total() == 64 + 12 + 24 + 128);
}

TEST_CASE("attention MACs are quadratic in the subsampled length") {
  ModelConfig c = ModelConfig::preset("S");
  c.subsampling = 0;
  c.layers = 1;
  const MacBreakdown m = count_macs_samples(c, 16 + 8 * 99);  // 100 frames
  CHECK(m.attention_scores == 2 * 100 * 100 * c.bottleneck);
  c.subsampling = 1;
  CHECK(count_macs_samples(c, 16 + 8 * 99).attention_scores == 2 * 50 * 50 * c.bottleneck);
}

TEST_CASE("MACs are nonincreasing in S") {
  ModelConfig c = ModelConfig::preset("S");
  std::uint64_t prev = UINT64_MAX;
  for (std::size_t s = 0; s <= 3; ++s) {
    c.subsampling = s;
    const std::uint64_t now = count_macs(c, 5.79).total();
    CHECK(now <= prev);
    prev = now;
  }
}

TEST_CASE("MAC counting rejects short signals") {
  ModelConfig c = ModelConfig::preset("S");
  c.subsampling = 3;
  CHECK_THROWS_AS(count_macs_samples(c, 16), ConfigurationError);
  CHECK_THROWS_AS(count_macs(c, 0.0), ConfigurationError);
}

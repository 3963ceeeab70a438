// Copyright 2026 The TD-Conformer Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Acceptance run: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>

#include "locality.h"
#include "op_catalog.h"
#include "tdc/codec.h"
#include "tdc/complexity.h"
#include "tdc/harness.h"
#include "tdc/objective.h"

using namespace tdc;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      if (pass) detail << "failed: ";
      else detail << "; ";
      detail << what;
      pass = false;
    }
  }
};

// ------------------------------------------------------------ oracles

double naive_conformer(double l, double b, double s, double p) {
  const double d = std::pow(2.0, s);
  return (l / d) * (p * b + b * b) + (l * l / (d * d)) * b + b * b * (l / d);
}

double naive_dpt(double l, double b, double pc) {
  return (l / (2 * pc) + pc / 2) * (pc * pc * b + b * b * pc) + (l / (4 * pc * pc)) * b +
         b * b * l / (2 * pc);
}

std::uint64_t scan_crossover(double b, double p, double pc, double s) {
  for (std::uint64_t l = 1;; ++l) {
    const double x = static_cast<double>(l);
    if (naive_conformer(x, b, s, p) > naive_dpt(x, b, pc)) return l;
  }
}

double rel_err(double a, double b) {
  return a == b ? 0.0 : std::abs(a - b) / std::max(std::abs(a), std::abs(b));
}

std::vector<double> randn(std::size_t n, Rng& rng) {
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

Tensor random_rows(std::size_t c, std::size_t t, Rng& rng) {
  return random_normal({c, t}, rng);
}

// ------------------------------------------------------------ criteria

Outcome receptive_field_exactness() {
  Outcome o;
  const double a = receptive_field(2, 32, 16, 8000);
  const double b = receptive_field(1, 64, 16, 8000);
  o.require(a == 0.129, "S=2 P=32 gives " + std::to_string(a));
  o.require(b == 0.129, "S=1 P=64 gives " + std::to_string(b));
  o.detail << "rf(2,32)=" << a << " s, rf(1,64)=" << b << " s";
  return o;
}

Outcome tc_oracle_equivalence() {
  Outcome o;
  Rng rng(2026);
  std::uniform_int_distribution<int> len(1, 20000), width(1, 1024), sub(0, 3), ker(1, 256),
      chunk(1, 400);
  double worst = 0.0;
  std::size_t exact_cases = 0;
  for (int i = 0; i < 200; ++i) {
    const double l = len(rng), b = width(rng), p = ker(rng), pc = chunk(rng);
    const std::size_t s = static_cast<std::size_t>(sub(rng));
    const ComplexityQuery q{l, b, s, p, pc};
    const double c = tc_conformer(q), d = tc_dpt(q);
    const double c0 = naive_conformer(l, b, static_cast<double>(s), p);
    const double d0 = naive_dpt(l, b, pc);
    // Integer-valued conformer terms when L is a multiple of 2^S.
    if (static_cast<long>(l) % (1L << s) == 0) {
      ++exact_cases;
      o.require(c == c0, "conformer not exact at grid point " + std::to_string(i));
    }
    worst = std::max({worst, rel_err(c, c0), rel_err(d, d0)});

    // tc = alpha L + beta L^2 at this (B, S, P); one more S halves alpha and
    // quarters beta.
    auto coeffs = [&](std::size_t ss) {
      const double t1 = tc_conformer({1, b, ss, p, pc});
      const double t2 = tc_conformer({2, b, ss, p, pc});
      const double beta = (t2 - 2 * t1) / 2;
      return std::pair{t1 - beta, beta};
    };
    const auto [a0, b0] = coeffs(s);
    const auto [a1, b1] = coeffs(s + 1);
    o.require(a1 == a0 / 2 && b1 == b0 / 4, "subsampling identity at point " + std::to_string(i));
  }
  o.require(worst <= 1e-12, "relative error " + std::to_string(worst));
  o.detail << (o.pass ? "" : "; ") << "200 points, " << exact_cases
           << " integer-exact, max rel err " << worst;
  return o;
}

Outcome crossover_structure() {
  Outcome o;
  const double p = 250, pc = 250;
  std::vector<std::uint64_t> cross;
  for (double b : {128.0, 256.0, 512.0}) {
    for (double l = 100; l < 5000; l += 97) {
      const auto tc = [&](double x) { return tc_conformer({x, b, 0, p, pc}); };
      const auto td = [&](double x) { return tc_dpt({x, b, 0, p, pc}); };
      o.require(tc(l + 2) - 2 * tc(l + 1) + tc(l) == 2 * b, "conformer second difference");
      o.require(std::abs(td(l + 2) - 2 * td(l + 1) + td(l)) <= 1e-9 * td(l),
                "dual-path second difference");
    }
    const auto x = crossover_length({b, p, pc, 0});
    o.require(x.has_value(), "no crossover for B=" + std::to_string(b));
    if (!x) continue;
    o.require(*x == scan_crossover(b, p, pc, 0), "crossover disagrees with scan");
    cross.push_back(*x);
  }
  o.require(std::is_sorted(cross.begin(), cross.end()), "crossover decreases with B");
  o.detail << (o.pass ? "" : "; ") << "crossover frames B=128/256/512:";
  for (auto c : cross) o.detail << ' ' << c;
  return o;
}

Outcome parameter_scaling() {
  Outcome o;
  std::vector<double> counts;
  for (std::size_t b : {128u, 256u, 512u, 1024u}) {
    ModelConfig c;  // N=256, R=8, S=1, P=64, 8 heads, ff x4
    c.bottleneck = b;
    counts.push_back(static_cast<double>(count_params(c)));
  }
  o.detail << "params";
  for (double c : counts) o.detail << ' ' << c / 1e6 << 'M';
  o.detail << " (heads 8, ff x4, rel-pos tables for 4 s), ratios";
  for (std::size_t i = 1; i < counts.size(); ++i) {
    const double r = counts[i] / counts[i - 1];
    o.detail << ' ' << r;
    o.require(r >= 3.4 && r <= 4.3, "ratio out of [3.4, 4.3]");
  }
  return o;
}

Outcome mac_accounting() {
  Outcome o;
  ModelConfig c = ModelConfig::preset("S");
  const MacBreakdown m = count_macs(c, 5.79);
  const double g = static_cast<double>(m.total()) / 1e9;
  o.detail << "S preset on 5.79 s: " << g << "G (attention scores "
           << static_cast<double>(m.attention_scores) / 1e9 << "G) vs 3.7G +-30%";
  std::uint64_t prev = UINT64_MAX;
  bool monotone = true;
  o.detail << "; S=0..3:";
  for (std::size_t s = 0; s <= 3; ++s) {
    c.subsampling = s;
    const std::uint64_t now = count_macs(c, 5.79).total();
    o.detail << ' ' << static_cast<double>(now) / 1e9 << 'G';
    monotone = monotone && now <= prev;
    prev = now;
  }
  if (g < 3.7 * 0.7 || g > 3.7 * 1.3) {
    o.pass = false;
    o.detail << "; absolute count outside the band";
  }
  if (!monotone) {
    o.pass = false;
    o.detail << "; not monotone in S";
  }
  return o;
}

Outcome gradient_suite() {
  Outcome o;
  double worst = 0.0;
  std::string worst_name;
  std::size_t checks = 0;
  auto run = [&](const std::string& name, testing::OpInstance inst, std::uint64_t seed) {
    const GradCheckOptions opt{1e-6, seed + 1000, inst.max_probes};
    const double err = grad_check(inst.op, inst.inputs, opt).max_relative_error;
    ++checks;
    if (err > worst) {
      worst = err;
      worst_name = name;
    }
    o.require(err <= 1e-4, name + " seed " + std::to_string(seed));
  };
  const auto ops = testing::differentiable_ops();
  for (const auto& entry : ops) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) run(entry.name, entry.make(seed), seed);
  }
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    run("full model", testing::tiny_model_instance(seed), seed);
  }
  o.detail << (o.pass ? "" : "; ") << ops.size() << " ops + full model x 10 seeds ("
           << checks << " checks), max rel err " << worst << " (" << worst_name << ")";
  return o;
}

Outcome objective_oracles() {
  Outcome o;
  Rng rng(7);
  double drift = 0.0;
  for (int i = 0; i < 20; ++i) {
    const auto r = randn(512, rng), e = randn(512, rng);
    const double base = sisdr(e, r);
    for (int k = 0; k <= 40; ++k) {
      const double alpha = std::pow(10.0, -2.0 + 0.1 * k);
      std::vector<double> scaled(e);
      for (double& v : scaled) v *= alpha;
      drift = std::max(drift, std::abs(sisdr(scaled, r) - base));
    }
  }
  o.require(drift <= 1e-6, "scale drift " + std::to_string(drift));

  std::size_t mismatches = 0;
  for (std::size_t c = 2; c <= 4; ++c) {
    for (int i = 0; i < 100; ++i) {
      const Tensor est = random_rows(c, 200, rng), ref = random_rows(c, 200, rng);
      std::vector<std::size_t> perm(c);
      std::iota(perm.begin(), perm.end(), 0);
      double best = INFINITY;
      do {
        double sum = 0.0;
        for (std::size_t k = 0; k < c; ++k) sum -= sisdr(est.row(perm[k]), ref.row(k));
        best = std::min(best, sum / static_cast<double>(c));
      } while (std::next_permutation(perm.begin(), perm.end()));
      if (upit_loss(est, ref).loss != best) ++mismatches;
    }
  }
  o.require(mismatches == 0, std::to_string(mismatches) + " uPIT mismatches");
  o.detail << (o.pass ? "" : "; ") << "max scale drift " << drift
           << " dB over alpha in [1e-2, 1e2]; uPIT vs brute force: 300 instances, "
           << mismatches << " mismatches";
  return o;
}

Outcome shape_suite() {
  Outcome o;
  Rng rng(8);
  // Encoder frame count against window counting.
  std::uniform_int_distribution<std::size_t> samples(16, 50000);
  for (int i = 0; i < 300; ++i) {
    const std::size_t t = samples(rng);
    std::size_t padded = t;
    while ((padded - 16) % 8 != 0) ++padded;
    std::size_t windows = 0;
    for (std::size_t s = 0; s + 16 <= padded; s += 8) ++windows;
    o.require(frame_count(t, 16, 8) == windows, "frame count at T=" + std::to_string(t));
  }
  o.require(frame_count(46320, 16, 8) == 5789, "5.79 s frame count");

  // Encode nonnegativity; mask length round trip and nonnegativity.
  const EncoderParams enc{random_normal({16, 32}, rng), 16, 8};
  const Tensor f = encode(random_normal({4000}, rng).values(), enc);
  o.require(std::all_of(f.values().begin(), f.values().end(), [](double v) { return v >= 0; }),
            "negative encoder output");
  std::uniform_int_distribution<std::size_t> frames(8, 2000);
  for (std::size_t s = 0; s <= 3; ++s) {
    ModelConfig c = testing::tiny_config();
    c.subsampling = s;
    c.layers = 1;
    c.max_rel_distance = 64;
    MaskNet net(c, rng);
    for (int i = 0; i < 5; ++i) {
      const std::size_t l = frames(rng);
      const MaskSet m = estimate_masks(random_uniform({l, c.n_filters}, rng, 0, 2), net);
      for (const Tensor& t : m.masks) {
        o.require(t.rows() == l && t.cols() == c.n_filters, "mask shape");
        o.require(std::all_of(t.values().begin(), t.values().end(),
                              [](double v) { return v >= 0; }),
                  "negative mask");
      }
    }
  }

  // One convolution module spans P subsampled frames, which is the
  // receptive-field length once mapped back to samples.
  std::ostringstream spans;
  for (auto [s, p] : {std::pair<std::size_t, std::size_t>{0, 5}, {1, 8}, {2, 4}}) {
    ModelConfig c = testing::tiny_config();
    c.kernel = p;
    c.max_rel_distance = 64;
    ConformerLayer layer(c, rng);
    RunMode mode;
    mode.attention_enabled = false;
    mode.group_norm_statistics = false;
    const Tensor x = random_normal({64, c.bottleneck}, rng);
    const Tensor y = layer.forward(x, mode);
    std::size_t widest = 0;
    for (std::size_t at = 0; at < 64; ++at) {
      Tensor xp = x;
      for (double& v : xp.row(at)) v += 0.3 * std::normal_distribution<double>()(rng);
      const Tensor yp = layer.forward(xp, mode);
      long first = -1, last = -1;
      for (std::size_t t = 0; t < 64; ++t) {
        bool changed = false;
        for (std::size_t k = 0; k < y.cols(); ++k) changed |= yp(t, k) != y(t, k);
        if (changed) {
          if (first < 0) first = static_cast<long>(t);
          last = static_cast<long>(t);
        }
      }
      if (first >= 0) widest = std::max(widest, static_cast<std::size_t>(last - first + 1));
    }
    const std::size_t enc_frames = widest << s;
    const double span_samples = static_cast<double>((enc_frames - 1) * 8 + 16);
    const double rf_samples = receptive_field(s, p, 16, 8000) * 8000;
    o.require(widest == p, "conv module span " + std::to_string(widest) + " != P");
    o.require(std::abs(span_samples - rf_samples) < 1e-9, "span not equal to rf");
    spans << " S=" << s << ",P=" << p << ":" << span_samples << "/" << rf_samples;

    // Whole network: changes stay inside the interval oracle and within the
    // module span plus the sampling-layer margin.
    const auto rep = testing::probe_locality(s, p, 1, 64, 100 + s);
    o.require(rep.within_oracle, "masknet change outside oracle interval");
    o.require(rep.max_changed_span <= receptive_field_frames(s, p) + rep.sampling_overhead,
              "masknet span exceeds bound");
    spans << " (net " << rep.max_changed_span << "<=" << receptive_field_frames(s, p) << "+"
          << rep.sampling_overhead << ")";
  }
  o.detail << (o.pass ? "" : "; ") << "frame count, encode/mask nonnegativity, S=0..3 round trip; "
           << "module span/rf samples" << spans.str();
  return o;
}

Outcome toy_separation() {
  Outcome o;
  Rng pool_rng(1);
  const auto pool = make_toy_pool(4, 8, 1.0, 8000, pool_rng);
  Rng valid_rng(99);
  const auto valid_pool = make_toy_pool(4, 2, 1.0, 8000, valid_rng);
  std::vector<MixtureSample> valid;
  for (int i = 0; i < 8; ++i) valid.push_back(dynamic_mix(valid_pool, 2, {-2.5, 2.5}, valid_rng));

  ModelConfig mc;
  mc.n_filters = 64;
  mc.bottleneck = 32;
  mc.layers = 2;
  mc.subsampling = 1;
  mc.kernel = 8;
  mc.heads = 4;
  mc.ff_expansion = 4;
  mc.speakers = 2;
  TrainConfig tc;
  tc.initial_lr = 1e-3;
  tc.max_epochs = 8;
  tc.steps_per_epoch = 50;
  tc.lr_hold_epochs = 4;
  tc.plateau_patience = 2;
  tc.seed = 7;

  TrainResult a = train(mc, tc, dynamic_mix_source(pool, 2), valid);
  const double score = evaluate(a.model, valid).mean_delta_sisdr;
  TrainResult b = train(mc, tc, dynamic_mix_source(pool, 2), valid);
  o.require(score >= 5.0, "held-out improvement below 5 dB");
  o.require(a.final_loss == b.final_loss, "repeat run gave a different final loss");
  o.detail << (o.pass ? "" : "; ") << tc.max_epochs * tc.steps_per_epoch
           << " steps, held-out delta-SISDR " << score << " dB, final loss " << a.final_loss
           << " (repeat " << b.final_loss << ")";
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"receptive-field exactness", receptive_field_exactness},
      {"TC oracle equivalence", tc_oracle_equivalence},
      {"crossover structure", crossover_structure},
      {"parameter scaling", parameter_scaling},
      {"MAC accounting", mac_accounting},
      {"gradient suite", gradient_suite},
      {"objective oracles", objective_oracles},
      {"shape/invariant suite", shape_suite},
      {"toy separation learning", toy_separation},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %zu %s: %s [%.2fs] %s\n", i + 1, o.pass ? "PASS" : "FAIL",
                criteria[i].first.c_str(), secs, o.detail.str().c_str());
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  return failed;
}

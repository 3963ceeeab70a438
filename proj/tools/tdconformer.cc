// Copyright 2026 The TD-Conformer Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Command-line front end: synth, train, separate, eval, gradcheck, analyze.
// Failures print "error: <category>: <message>" to stderr and exit with the
// category code from tdc/error.h.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tdc/complexity.h"
#include "tdc/error.h"
#include "tdc/harness.h"
#include "tdc/model.h"

namespace fs = std::filesystem;
using namespace tdc;

namespace {

// Data keys shared by synth and train.
struct DataConfig {
  std::size_t pool_speakers = 4;
  std::size_t utterances_per_speaker = 8;
  double utterance_s = 1.0;
  std::size_t mixtures = 16;
  std::size_t validation_mixtures = 8;
  double gain_db = 2.5;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
};

// Every command reads the full schema so one file can drive a whole run, and
// unknown keys are rejected.
RunConfig load_run_config(const std::string& path, std::optional<std::uint64_t> seed,
                          const ModelConfig& model_base = {}) {
  ConfigFile file = path.empty() ? ConfigFile{} : ConfigFile::load(path);
  RunConfig rc;
  rc.model = model_config_from(file, model_base);
  rc.train = train_config_from(file);
  DataConfig& d = rc.data;
  if (auto v = file.get_uint("pool_speakers")) d.pool_speakers = *v;
  if (auto v = file.get_uint("utterances_per_speaker")) d.utterances_per_speaker = *v;
  if (auto v = file.get_double("utterance_s")) d.utterance_s = *v;
  if (auto v = file.get_uint("mixtures")) d.mixtures = *v;
  if (auto v = file.get_uint("validation_mixtures")) d.validation_mixtures = *v;
  if (auto v = file.get_double("gain_db")) d.gain_db = *v;
  file.require_all_used();
  if (seed) rc.train.seed = *seed;
  return rc;
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.n_filters = 16;
  c.bottleneck = 8;
  c.layers = 2;
  c.subsampling = 1;
  c.kernel = 3;
  c.heads = 2;
  c.ff_expansion = 2;
  c.max_rel_distance = 40;
  return c;
}

std::vector<SourceSignal> toy_pool(const RunConfig& rc, std::uint64_t seed) {
  Rng rng(seed);
  return make_toy_pool(rc.data.pool_speakers, rc.data.utterances_per_speaker,
                       rc.data.utterance_s, rc.model.sample_rate, rng);
}

std::vector<MixtureSample> draw_mixtures(const std::vector<SourceSignal>& pool,
                                         const RunConfig& rc, std::size_t count,
                                         std::uint64_t seed) {
  Rng rng(seed);
  std::vector<MixtureSample> out;
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(dynamic_mix(pool, rc.model.speakers, {-rc.data.gain_db, rc.data.gain_db}, rng));
  }
  return out;
}

// References of a loaded dataset become single-utterance speakers.
std::vector<SourceSignal> pool_from(const std::vector<MixtureSample>& data,
                                    const std::vector<std::string>& ids) {
  std::vector<SourceSignal> pool;
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t c = 0; c < data[i].references.size(); ++c) {
      pool.push_back({data[i].references[c], data[i].sample_rate,
                      ids[i] + "/" + std::to_string(c)});
    }
  }
  return pool;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigurationError("not a number in list: '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigurationError("empty list");
  return out;
}

// ---------------------------------------------------------------- commands

int cmd_synth(const std::string& config, std::optional<std::uint64_t> seed,
              const std::string& out_dir, std::optional<std::size_t> count) {
  const RunConfig rc = load_run_config(config, seed);
  const std::size_t n = count.value_or(rc.data.mixtures);
  const auto pool = toy_pool(rc, rc.train.seed);
  const auto data = draw_mixtures(pool, rc, n, rc.train.seed + 1);
  const fs::path manifest = write_dataset(out_dir, data);
  std::cout << manifest.string() << '\n';
  return 0;
}

int cmd_train(const std::string& config, std::optional<std::uint64_t> seed,
              const std::string& out, const std::string& train_manifest,
              const std::string& valid_manifest, std::string log_path) {
  const RunConfig rc = load_run_config(config, seed);
  DataSource source;
  std::vector<MixtureSample> validation;
  if (train_manifest.empty()) {
    source = dynamic_mix_source(toy_pool(rc, rc.train.seed), rc.model.speakers,
                                {-rc.data.gain_db, rc.data.gain_db});
    if (valid_manifest.empty() && rc.data.validation_mixtures > 0) {
      const auto held_out = toy_pool(rc, rc.train.seed + 99);
      validation = draw_mixtures(held_out, rc, rc.data.validation_mixtures, rc.train.seed + 100);
    }
  } else {
    std::vector<std::string> ids;
    auto data = load_dataset(train_manifest, &ids);
    source = rc.train.dm_enabled
                 ? dynamic_mix_source(pool_from(data, ids), rc.model.speakers,
                                      {-rc.data.gain_db, rc.data.gain_db})
                 : fixed_source(std::move(data));
  }
  if (!valid_manifest.empty()) validation = load_dataset(valid_manifest);

  TrainResult r = train(rc.model, rc.train, source, validation, [](const EpochRecord& e) {
    std::fprintf(stderr, "epoch %zu loss %.4f valid %.3f dB lr %.3g (%.1fs)\n", e.epoch,
                 e.train_loss, e.valid_delta_sisdr, e.learning_rate, e.wall_time_s);
  });
  save_checkpoint(out, r.model);
  if (log_path.empty()) log_path = out + ".log.json";
  r.log.save(log_path);
  std::cout << "checkpoint " << out << "\nlog " << log_path << "\nfinal_loss " << r.final_loss
            << '\n';
  return 0;
}

int cmd_separate(const std::string& checkpoint, const std::string& input,
                 const std::string& out_dir) {
  SeparationModel model = load_checkpoint(checkpoint);
  for (const fs::path& p : separate_file(model, input, out_dir)) std::cout << p.string() << '\n';
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest,
             const std::string& report_path) {
  SeparationModel model = load_checkpoint(checkpoint);
  std::vector<std::string> ids;
  const auto data = load_dataset(manifest, &ids);
  const EvalReport r = evaluate(model, data, ids);
  std::cout << "id,delta_sisdr_db\n";
  for (const EvalItem& it : r.items) std::cout << it.id << ',' << it.delta_sisdr << '\n';
  std::cout << "mean," << r.mean_delta_sisdr << '\n';
  if (!report_path.empty()) {
    nlohmann::json j;
    j["mean_delta_sisdr"] = r.mean_delta_sisdr;
    for (const EvalItem& it : r.items) j["items"].push_back({{"id", it.id}, {"delta_sisdr", it.delta_sisdr}});
    std::ofstream(report_path) << j.dump(2) << '\n';
  }
  return 0;
}

int cmd_gradcheck(const std::string& config, std::optional<std::uint64_t> seed, double eps,
                  std::size_t samples, std::size_t probes, double tol, std::size_t seeds) {
  const RunConfig rc = load_run_config(config, seed, tiny_model());
  double worst = 0.0;
  for (std::size_t k = 0; k < seeds; ++k) {
    const std::uint64_t s = rc.train.seed + k;
    SeparationModel model(rc.model, s);
    Rng rng(s + 1000);
    const Tensor mixture = random_normal({samples, 1}, rng, 0.3);
    const GradCheckResult g = grad_check(model_op(model), model_inputs(model, mixture.values()),
                                         {eps, s + 2000, probes});
    std::cout << "seed " << s << " max_relative_error " << g.max_relative_error << " probes "
              << g.probes << '\n';
    worst = std::max(worst, g.max_relative_error);
  }
  if (!(worst <= tol)) {
    throw NumericalError("gradient check: max relative error " + std::to_string(worst) +
                         " exceeds " + std::to_string(tol));
  }
  return 0;
}

struct AnalyzeOptions {
  std::string what;
  std::string seconds = "0.5,1,2,3,4,5,5.79,6,8,10";
  std::string widths;
  std::string subsamplings;
  std::string kernels;
  double chunk = 250.0;
  std::optional<double> kernel;
  double signal_seconds = 5.79;
};

int cmd_analyze(const std::string& config, std::optional<std::uint64_t> seed,
                const AnalyzeOptions& a) {
  const RunConfig rc = load_run_config(config, seed);
  const ModelConfig& m = rc.model;
  std::cout.precision(15);
  auto widths = [&] {
    return a.widths.empty() ? std::vector<double>{static_cast<double>(m.bottleneck)}
                            : parse_list(a.widths);
  };
  auto subs = [&] {
    std::vector<std::size_t> out;
    if (a.subsamplings.empty()) return std::vector<std::size_t>{m.subsampling};
    for (double v : parse_list(a.subsamplings)) out.push_back(static_cast<std::size_t>(v));
    return out;
  };
  const double kernel = a.kernel.value_or(static_cast<double>(m.kernel));

  if (a.what == "tc") {
    CurveGrid g;
    g.seconds = parse_list(a.seconds);
    g.kernel = kernel;
    g.chunk = a.chunk;
    g.sample_rate = m.sample_rate;
    g.block_len = m.block_len;
    g.stride = m.stride;
    if (!a.subsamplings.empty()) {
      g.sweep = CurveGrid::Sweep::kSubsampling;
      g.subsamplings = subs();
      g.width = widths().front();
    } else {
      g.widths = widths();
      g.subsampling = m.subsampling;
    }
    emit_curves(g, std::cout);
  } else if (a.what == "rf") {
    std::vector<double> kernels =
        a.kernels.empty() ? std::vector<double>{kernel} : parse_list(a.kernels);
    std::cout << "S,P,L_BL,sample_rate,rf_seconds,rf_frames\n";
    for (std::size_t s : subs()) {
      for (double p : kernels) {
        const auto pk = static_cast<std::size_t>(p);
        std::cout << s << ',' << pk << ',' << m.block_len << ',' << m.sample_rate << ','
                  << receptive_field(s, pk, m.block_len, m.sample_rate) << ','
                  << receptive_field_frames(s, pk) << '\n';
      }
    }
  } else if (a.what == "macs") {
    const MacBreakdown b = count_macs(m, a.signal_seconds);
    std::cout << "component,macs\n"
              << "encoder," << b.encoder << "\ninput_projection," << b.input_projection
              << "\nsampling," << b.sampling << "\nfeed_forward," << b.feed_forward
              << "\nconvolution," << b.convolution << "\nattention_projections,"
              << b.attention_projections << "\nattention_scores," << b.attention_scores
              << "\nhead," << b.head << "\ndecoder," << b.decoder << "\ntotal," << b.total()
              << '\n';
  } else if (a.what == "params") {
    std::cout << "B,params\n";
    for (double w : widths()) {
      ModelConfig c = m;
      c.bottleneck = static_cast<std::size_t>(w);
      std::cout << c.bottleneck << ',' << count_params(c) << '\n';
    }
  } else if (a.what == "crossover") {
    std::cout << "B,S,P,chunk,crossover_frames,crossover_seconds\n";
    for (double w : widths()) {
      for (std::size_t s : subs()) {
        const auto x = crossover_length({w, kernel, a.chunk, s});
        std::cout << w << ',' << s << ',' << kernel << ',' << a.chunk << ',';
        if (x) {
          // Frames back to seconds with the encoder hop.
          const double secs =
              static_cast<double>((*x - 1) * m.stride + m.block_len) / m.sample_rate;
          std::cout << *x << ',' << secs << '\n';
        } else {
          std::cout << ",\n";
        }
      }
    }
  } else {
    throw ConfigurationError("analyze: unknown target '" + a.what + "'");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TD-Conformer speech separation toolkit"};
  app.require_subcommand(1);

  std::string config;
  std::optional<std::uint64_t> seed;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "key = value run configuration file")
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "overrides the configured seed");
  };

  std::string out, out_dir, input, checkpoint, manifest, train_manifest, valid_manifest,
      log_path, report;
  std::optional<std::size_t> count;

  auto* synth = app.add_subcommand("synth", "write a synthetic toy dataset and manifest");
  common(synth);
  synth->add_option("--out", out_dir, "output directory")->required();
  synth->add_option("--count", count, "number of mixtures");

  auto* tr = app.add_subcommand("train", "train a model and write a checkpoint");
  common(tr);
  tr->add_option("--out", out, "checkpoint path")->required();
  tr->add_option("--train-manifest", train_manifest, "training manifest (default: toy data)");
  tr->add_option("--valid-manifest", valid_manifest, "validation manifest");
  tr->add_option("--log", log_path, "experiment log path (default <out>.log.json)");

  auto* sep = app.add_subcommand("separate", "separate a mono WAV mixture");
  common(sep);
  sep->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  sep->add_option("--input", input)->required()->check(CLI::ExistingFile);
  sep->add_option("--out-dir", out_dir)->required();

  auto* ev = app.add_subcommand("eval", "mean SISDR improvement over a manifest");
  common(ev);
  ev->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  ev->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  ev->add_option("--report", report, "JSON report path");

  double eps = 1e-6, tol = 1e-4;
  std::size_t samples = 520, probes = 12, gc_seeds = 1;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the full model");
  common(gc);
  gc->add_option("--eps", eps, "difference step")->capture_default_str();
  gc->add_option("--samples", samples, "mixture length")->capture_default_str();
  gc->add_option("--probes", probes, "probed coordinates per input, 0 = all")
      ->capture_default_str();
  gc->add_option("--tol", tol, "maximum relative error")->capture_default_str();
  gc->add_option("--seeds", gc_seeds, "number of consecutive seeds")->capture_default_str();

  AnalyzeOptions an;
  auto* ana = app.add_subcommand("analyze", "cost models as CSV");
  common(ana);
  ana->add_option("what", an.what, "tc | rf | macs | params | crossover")
      ->required()
      ->check(CLI::IsMember({"tc", "rf", "macs", "params", "crossover"}));
  ana->add_option("--seconds", an.seconds, "comma-separated durations (tc)");
  ana->add_option("--widths", an.widths, "comma-separated B values");
  ana->add_option("--subsamplings", an.subsamplings, "comma-separated S values");
  ana->add_option("--kernels", an.kernels, "comma-separated P values (rf)");
  ana->add_option("--kernel", an.kernel, "conformer kernel P");
  ana->add_option("--chunk", an.chunk, "dual-path chunk size")->capture_default_str();
  ana->add_option("--signal-seconds", an.signal_seconds, "signal length (macs)")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorCategory::kConfiguration);
  }

  try {
    if (*synth) return cmd_synth(config, seed, out_dir, count);
    if (*tr) return cmd_train(config, seed, out, train_manifest, valid_manifest, log_path);
    if (*sep) return cmd_separate(checkpoint, input, out_dir);
    if (*ev) return cmd_eval(checkpoint, manifest, report);
    if (*gc) return cmd_gradcheck(config, seed, eps, samples, probes, tol, gc_seeds);
    if (*ana) return cmd_analyze(config, seed, an);
  } catch (const Error& e) {
    std::cerr << "error: " << category_name(e.category()) << ": " << e.what() << '\n';
    return static_cast<int>(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

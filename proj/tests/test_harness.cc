// Copyright 2026 The TD-Conformer Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "op_catalog.h"
#include "tdc/error.h"
#include "tdc/harness.h"

using namespace tdc;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "tdc_test_harness" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<SourceSignal> pool(std::uint64_t seed) {
  Rng rng(seed);
  return make_toy_pool(3, 3, 0.1, 8000, rng);
}

TrainConfig quick_train() {
  TrainConfig t;
  t.initial_lr = 1e-3;
  t.max_epochs = 2;
  t.steps_per_epoch = 3;
  t.lr_hold_epochs = 1;
  t.plateau_patience = 1;
  t.seed = 7;
  return t;
}

std::vector<MixtureSample> mixtures(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  const DataSource src = dynamic_mix_source(pool(seed), 2);
  std::vector<MixtureSample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(src(rng));
  return out;
}

}  // namespace

TEST_CASE("zero epochs returns the initialized model and an empty log") {
  const ModelConfig c = testing::tiny_config();
  TrainConfig t = quick_train();
  t.max_epochs = 0;
  TrainResult r = train(c, t, dynamic_mix_source(pool(1), 2));
  CHECK(r.log.epochs().empty());
  SeparationModel fresh(c, t.seed);
  auto a = r.model.parameters(), b = fresh.parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i]->value == b[i]->value);
}

TEST_CASE("training is deterministic under a fixed seed") {
  const ModelConfig c = testing::tiny_config();
  const TrainConfig t = quick_train();
  TrainResult a = train(c, t, dynamic_mix_source(pool(2), 2));
  TrainResult b = train(c, t, dynamic_mix_source(pool(2), 2));
  CHECK(a.final_loss == b.final_loss);
  REQUIRE(a.log.epochs().size() == 2);
  for (std::size_t e = 0; e < 2; ++e) {
    CHECK(a.log.epochs()[e].train_loss == b.log.epochs()[e].train_loss);
  }
  TrainConfig other = t;
  other.seed = 8;
  CHECK(train(c, other, dynamic_mix_source(pool(2), 2)).final_loss != a.final_loss);
}

TEST_CASE("learning rate only halves and never increases") {
  const ModelConfig c = testing::tiny_config();
  TrainConfig t = quick_train();
  t.max_epochs = 10;
  t.steps_per_epoch = 2;
  TrainResult r = train(c, t, dynamic_mix_source(pool(3), 2));
  double prev = t.initial_lr;
  bool halved = false;
  for (const EpochRecord& e : r.log.epochs()) {
    CHECK(e.learning_rate <= prev);
    const double k = std::log2(t.initial_lr / e.learning_rate);
    CHECK(k == std::round(k));
    halved = halved || e.learning_rate < t.initial_lr;
    prev = e.learning_rate;
  }
  CHECK(halved);
  CHECK(std::isnan(r.log.epochs()[0].valid_delta_sisdr));
  CHECK(r.log.metadata()["plateau_metric"] == "-train_loss");
}

TEST_CASE("lr is held for the configured number of epochs") {
  const ModelConfig c = testing::tiny_config();
  TrainConfig t = quick_train();
  t.max_epochs = 5;
  t.lr_hold_epochs = 100;
  for (const EpochRecord& e : train(c, t, dynamic_mix_source(pool(4), 2)).log.epochs()) {
    CHECK(e.learning_rate == t.initial_lr);
  }
}

TEST_CASE("validation metric drives the log") {
  const ModelConfig c = testing::tiny_config();
  TrainConfig t = quick_train();
  t.max_epochs = 1;
  const TrainResult r = train(c, t, dynamic_mix_source(pool(5), 2), mixtures(2, 55));
  CHECK(std::isfinite(r.log.epochs()[0].valid_delta_sisdr));
  CHECK(r.log.metadata()["plateau_metric"] == "valid_delta_sisdr");
}

TEST_CASE("train configuration errors") {
  const ModelConfig c = testing::tiny_config();
  TrainConfig t = quick_train();
  t.tsl_limit_s = 0.001;  // 8 samples < one 16-sample block
  CHECK_THROWS_AS(train(c, t, dynamic_mix_source(pool(6), 2)), ConfigurationError);
  t = quick_train();
  t.batch_size = 0;
  CHECK_THROWS_AS(t.validate(c), ConfigurationError);
  t = quick_train();
  t.initial_lr = 0.0;
  CHECK_THROWS_AS(t.validate(c), ConfigurationError);
}

TEST_CASE("experiment log") {
  ExperimentLog log(42);
  log.append({0, 1.0, std::nan(""), 1e-3, 0.1});
  log.append({1, 0.5, 2.0, 5e-4, 0.2});
  CHECK_THROWS_AS(log.append({2, 0.4, 2.0, 1e-3, 0.3}), ConfigurationError);
  const nlohmann::json j = log.to_json();
  CHECK(j["seed"] == 42);
  CHECK(j["epochs"].size() == 2);
  CHECK(j["epochs"][0]["valid_delta_sisdr"].is_null());
  CHECK(j["epochs"][1]["learning_rate"] == 5e-4);
  const fs::path p = scratch("log") / "log.json";
  log.save(p);
  std::ifstream is(p);
  CHECK(nlohmann::json::parse(is) == j);
}

TEST_CASE("adam steps by lr on the first update and minimizes a quadratic") {
  Parameter p{"w", Tensor({3}, {1.0, -2.0, 0.5})};
  Adam adam({&p});
  p.grad = Tensor({3}, {4.0, -0.1, 0.0});
  adam.step(0.01);
  CHECK(p.value[0] == doctest::Approx(0.99).epsilon(1e-9));
  CHECK(p.value[1] == doctest::Approx(-1.99).epsilon(1e-9));
  CHECK(p.value[2] == 0.5);
  for (int i = 0; i < 2000; ++i) {
    p.grad = p.value;
    p.grad *= 2.0;
    adam.step(0.01);
  }
  CHECK(max_abs(p.value) < 1e-2);
  CHECK(adam.steps() == 2001);
}

TEST_CASE("gradient clipping") {
  Parameter a{"a", Tensor({2}, {0.0, 0.0})}, b{"b", Tensor({1}, {0.0})};
  a.grad = Tensor({2}, {3.0, 0.0});
  b.grad = Tensor({1}, {4.0});
  CHECK(clip_grad_norm({&a, &b}, 10.0) == 5.0);
  CHECK(a.grad[0] == 3.0);
  CHECK(clip_grad_norm({&a, &b}, 1.0) == 5.0);
  CHECK(a.grad[0] == doctest::Approx(0.6));
  CHECK(b.grad[0] == doctest::Approx(0.8));
  CHECK(clip_grad_norm({&a, &b}, 0.0) == doctest::Approx(1.0));
  CHECK(b.grad[0] == doctest::Approx(0.8));
}

TEST_CASE("random crop keeps mixture and references aligned") {
  MixtureSample s;
  s.mixture.resize(1000);
  s.references.assign(2, Waveform(1000));
  for (std::size_t i = 0; i < 1000; ++i) {
    s.mixture[i] = static_cast<double>(i);
    s.references[0][i] = i + 1e4;
    s.references[1][i] = i + 2e4;
  }
  Rng rng(1);
  for (int k = 0; k < 20; ++k) {
    const MixtureSample c = random_crop(s, 300, rng);
    REQUIRE(c.mixture.size() == 300);
    for (std::size_t i = 0; i < 300; ++i) {
      CHECK(c.references[0][i] - c.mixture[i] == 1e4);
      CHECK(c.references[1][i] - c.mixture[i] == 2e4);
    }
  }
  CHECK(random_crop(s, 5000, rng).mixture.size() == 1000);
}

TEST_CASE("toy pool and dynamic mixing") {
  Rng rng(2);
  const auto p = make_toy_pool(4, 3, 0.25, 8000, rng);
  CHECK(p.size() == 12);
  std::set<std::string> ids;
  for (const auto& s : p) {
    ids.insert(s.speaker_id);
    CHECK(s.samples.size() == 2000);
  }
  CHECK(ids.size() == 4);
  const DataSource src = dynamic_mix_source(p, 3);
  for (int i = 0; i < 10; ++i) {
    const MixtureSample m = src(rng);
    std::set<std::string> who;
    for (const auto& s : m.sources) who.insert(s.speaker_id);
    CHECK(who.size() == 3);
    CHECK(m.references.size() == 3);
  }
}

TEST_CASE("separate is deterministic and keeps the input length") {
  SeparationModel m(testing::tiny_config(), 3);
  Rng rng(3);
  for (std::size_t len : {17u, 400u, 1001u}) {
    const Tensor x = random_normal({len, 1}, rng);
    const Waveform w(x.values().begin(), x.values().end());
    const Tensor a = separate(m, w);
    CHECK(a.cols() == len);
    CHECK(a == separate(m, w));
  }
}

TEST_CASE("separate_file writes one WAV per speaker") {
  SeparationModel m(testing::tiny_config(), 4);
  const fs::path dir = scratch("separate");
  Rng rng(4);
  const Tensor x = random_normal({777, 1}, rng, 0.2);
  write_wav(dir / "in.wav", Waveform(x.values().begin(), x.values().end()), 8000,
            WavEncoding::kFloat32);
  const auto outs = separate_file(m, dir / "in.wav", dir / "out");
  REQUIRE(outs.size() == 2);
  CHECK(outs[0].filename() == "in_s1.wav");
  for (const auto& p : outs) CHECK(read_wav(p).samples.size() == 777);
  write_wav(dir / "fast.wav", Waveform(100, 0.1), 16000);
  CHECK_THROWS_AS(separate_file(m, dir / "fast.wav", dir / "out"), ConfigurationError);
}

TEST_CASE("evaluate reports per-item improvements") {
  SeparationModel m(testing::tiny_config(), 5);
  const auto data = mixtures(3, 9);
  const EvalReport r = evaluate(m, data, {"a", "b", "c"});
  REQUIRE(r.items.size() == 3);
  CHECK(r.items[2].id == "c");
  double sum = 0.0;
  for (const auto& it : r.items) sum += it.delta_sisdr;
  CHECK(r.mean_delta_sisdr == doctest::Approx(sum / 3));
  CHECK_THROWS_AS(evaluate(m, {}), ConfigurationError);
}

TEST_CASE("manifest round trip resolves relative paths") {
  const fs::path dir = scratch("manifest");
  std::vector<ManifestEntry> entries{
      {"m0", "a/mix.wav", {"a/s1.wav", "a/s2.wav"}, 8000, 1.5, 9},
      {"m1", dir / "abs.wav", {dir / "r.wav"}, 16000, -2.0, 10}};
  write_manifest(dir / "manifest.jsonl", entries);
  const auto back = read_manifest(dir / "manifest.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[0].id == "m0");
  CHECK(back[0].mixture == dir / "a/mix.wav");
  CHECK(back[0].references[1] == dir / "a/s2.wav");
  CHECK(back[0].ssr_db == 1.5);
  CHECK(back[0].seed == 9);
  CHECK(back[1].mixture == dir / "abs.wav");
  CHECK(back[1].sample_rate == 16000);

  std::ofstream(dir / "bad.jsonl") << "{\"id\": \"x\"}\n";
  CHECK_THROWS_AS(read_manifest(dir / "bad.jsonl"), IoError);
  CHECK_THROWS_AS(read_manifest(dir / "missing.jsonl"), IoError);
}

TEST_CASE("dataset round trip through float WAVs") {
  const fs::path dir = scratch("dataset");
  const auto data = mixtures(3, 11);
  const fs::path manifest = write_dataset(dir, data);
  std::vector<std::string> ids;
  const auto back = load_dataset(manifest, &ids);
  REQUIRE(back.size() == 3);
  CHECK(ids.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    REQUIRE(back[i].mixture.size() == data[i].mixture.size());
    for (std::size_t k = 0; k < data[i].mixture.size(); ++k) {
      CHECK(std::abs(back[i].mixture[k] - data[i].mixture[k]) <= 1e-6);
    }
    REQUIRE(back[i].references.size() == 2);
    CHECK(std::abs(back[i].references[1][5] - data[i].references[1][5]) <= 1e-6);
  }
}

TEST_CASE("config file parsing") {
  const ConfigFile f = ConfigFile::parse(
      "# model\n"
      "preset = M\n"
      "kernel = 32   # trailing comment\n"
      "\n"
      "dropout=0.2\n"
      "initial_lr = 1e-3\n"
      "dm_enabled = no\n"
      "max_epochs = 4\n");
  const ModelConfig m = model_config_from(f);
  CHECK(m.bottleneck == 256);
  CHECK(m.kernel == 32);
  CHECK(m.dropout == 0.2);
  const TrainConfig t = train_config_from(f);
  CHECK(t.initial_lr == 1e-3);
  CHECK_FALSE(t.dm_enabled);
  CHECK(t.max_epochs == 4);
  CHECK_NOTHROW(f.require_all_used());

  const ConfigFile extra = ConfigFile::parse("layers = 2\nbogus = 1\n");
  model_config_from(extra);
  CHECK_THROWS_AS(extra.require_all_used(), ConfigurationError);

  CHECK_THROWS_AS(ConfigFile::parse("a = 1\na = 2\n"), ConfigurationError);
  CHECK_THROWS_AS(ConfigFile::parse("no equals sign\n"), ConfigurationError);
  CHECK_THROWS_AS(model_config_from(ConfigFile::parse("kernel = -3\n")), ConfigurationError);
  CHECK_THROWS_AS(model_config_from(ConfigFile::parse("dropout = abc\n")), ConfigurationError);
  CHECK_THROWS_AS(train_config_from(ConfigFile::parse("dm_enabled = maybe\n")),
                  ConfigurationError);
  CHECK_THROWS_AS(model_config_from(ConfigFile::parse("preset = XXL\n")), ConfigurationError);
  CHECK_THROWS_AS(ConfigFile::load("/nonexistent/run.cfg"), IoError);
}

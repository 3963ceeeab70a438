// Copyright 2026 The TD-Conformer Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tdc/harness.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "tdc/error.h"
#include "tdc/objective.h"

namespace tdc {

namespace fs = std::filesystem;

void TrainConfig::validate(const ModelConfig& model) const {
  if (!(initial_lr > 0.0)) throw ConfigurationError("train: initial_lr must be positive");
  if (plateau_patience == 0) throw ConfigurationError("train: plateau_patience must be positive");
  if (steps_per_epoch == 0) throw ConfigurationError("train: steps_per_epoch must be positive");
  if (batch_size == 0) throw ConfigurationError("train: batch_size must be positive");
  if (!(clip_norm >= 0.0)) throw ConfigurationError("train: clip_norm must be nonnegative");
  if (!(tsl_limit_s > 0.0) ||
      tsl_limit_s * model.sample_rate < static_cast<double>(model.block_len)) {
    throw ConfigurationError("train: tsl_limit_s is shorter than one encoder block");
  }
}

// ------------------------------------------------------------------- log

ExperimentLog::ExperimentLog(std::uint64_t seed) : seed_(seed) {}

void ExperimentLog::append(const EpochRecord& record) {
  if (!epochs_.empty() && record.learning_rate > epochs_.back().learning_rate) {
    throw ConfigurationError("experiment log: learning rate increased");
  }
  epochs_.push_back(record);
}

nlohmann::json ExperimentLog::to_json() const {
  nlohmann::json j;
  j["seed"] = seed_;
  j["metadata"] = metadata_;
  j["epochs"] = nlohmann::json::array();
  for (const EpochRecord& e : epochs_) {
    nlohmann::json row = {{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"learning_rate", e.learning_rate},
                          {"wall_time_s", e.wall_time_s}};
    row["valid_delta_sisdr"] = std::isfinite(e.valid_delta_sisdr)
                                   ? nlohmann::json(e.valid_delta_sisdr)
                                   : nlohmann::json(nullptr);
    j["epochs"].push_back(row);
  }
  return j;
}

void ExperimentLog::save(const fs::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write log " + path.string());
  out << to_json().dump(2) << '\n';
}

// ------------------------------------------------------------- optimizer

Adam::Adam(ParameterList params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (Parameter* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    if (p.grad.empty()) continue;
    double* w = p.value.data();
    const double* g = p.grad.data();
    double* m = m_[i].data();
    double* v = v_[i].data();
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
  }
}

double clip_grad_norm(const ParameterList& params, double max_norm) {
  double sq = 0.0;
  for (const Parameter* p : params) {
    if (!p->grad.empty()) sq += squared_norm(p->grad.values());
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (Parameter* p : params) {
      if (!p->grad.empty()) p->grad *= scale;
    }
  }
  return norm;
}

// ----------------------------------------------------------------- data

DataSource dynamic_mix_source(std::vector<SourceSignal> pool, std::size_t speakers,
                              std::pair<double, double> gain_range_db) {
  return [pool = std::move(pool), speakers, gain_range_db](Rng& rng) {
    return dynamic_mix(pool, speakers, gain_range_db, rng);
  };
}

DataSource fixed_source(std::vector<MixtureSample> samples) {
  if (samples.empty()) throw ConfigurationError("fixed_source: no samples");
  return [samples = std::move(samples)](Rng& rng) {
    return samples[std::uniform_int_distribution<std::size_t>(0, samples.size() - 1)(rng)];
  };
}

MixtureSample random_crop(const MixtureSample& sample, std::size_t max_samples,
                          Rng& rng) {
  const std::size_t len = sample.mixture.size();
  if (len <= max_samples) return sample;
  const std::size_t offset =
      std::uniform_int_distribution<std::size_t>(0, len - max_samples)(rng);
  auto cut = [&](const Waveform& x) {
    return Waveform(x.begin() + static_cast<std::ptrdiff_t>(offset),
                    x.begin() + static_cast<std::ptrdiff_t>(offset + max_samples));
  };
  MixtureSample out;
  out.sample_rate = sample.sample_rate;
  out.ssr_db = sample.ssr_db;
  out.snr_db = sample.snr_db;
  out.seed = sample.seed;
  out.gains = sample.gains;
  out.noise_gain = sample.noise_gain;
  out.sources = sample.sources;
  out.mixture = cut(sample.mixture);
  for (const Waveform& r : sample.references) out.references.push_back(cut(r));
  for (const Waveform& r : sample.reverberant) out.reverberant.push_back(cut(r));
  if (!sample.noise.empty()) out.noise = cut(sample.noise);
  return out;
}

namespace {

Tensor stack(const std::vector<Waveform>& rows) {
  if (rows.empty()) throw DimensionError("no reference signals");
  Tensor t({rows.size(), rows.front().size()});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows.front().size()) {
      throw DimensionError("reference signals differ in length");
    }
    std::copy(rows[r].begin(), rows[r].end(), t.row(r).begin());
  }
  return t;
}

double mean_delta_sisdr(SeparationModel& model, const std::vector<MixtureSample>& data) {
  if (data.empty()) return std::numeric_limits<double>::quiet_NaN();
  return evaluate(model, data).mean_delta_sisdr;
}

}  // namespace

// ---------------------------------------------------------------- train

TrainResult train(const ModelConfig& model_config, const TrainConfig& tc,
                  const DataSource& data,
                  const std::vector<MixtureSample>& validation,
                  const EpochCallback& on_epoch) {
  model_config.validate();
  tc.validate(model_config);
  TrainResult result{SeparationModel(model_config, tc.seed), ExperimentLog(tc.seed), 0.0};
  SeparationModel& model = result.model;
  ExperimentLog& log = result.log;
  log.metadata() = {{"optimizer", "adam(0.9, 0.999, 1e-8)"},
                    {"clip_norm", tc.clip_norm},
                    {"initial_lr", tc.initial_lr},
                    {"plateau_patience", tc.plateau_patience},
                    {"lr_hold_epochs", tc.lr_hold_epochs},
                    {"steps_per_epoch", tc.steps_per_epoch},
                    {"batch_size", tc.batch_size},
                    {"tsl_limit_s", tc.tsl_limit_s},
                    {"dm_enabled", tc.dm_enabled},
                    {"plateau_metric", validation.empty() ? "-train_loss"
                                                          : "valid_delta_sisdr"},
                    {"model", config_to_json(model_config)}};

  Rng rng(tc.seed ^ 0x5eedf00dULL);
  Rng dropout_rng(tc.seed ^ 0xd40b07ULL);
  const auto crop = static_cast<std::size_t>(
      std::floor(tc.tsl_limit_s * model_config.sample_rate));
  ParameterList params = model.parameters();
  Adam adam(params);
  double lr = tc.initial_lr;
  double best_metric = -std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  const auto start = std::chrono::steady_clock::now();

  for (std::size_t epoch = 0; epoch < tc.max_epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (std::size_t step = 0; step < tc.steps_per_epoch; ++step) {
      model.zero_grad();
      double batch_loss = 0.0;
      for (std::size_t b = 0; b < tc.batch_size; ++b) {
        const MixtureSample sample = random_crop(data(rng), crop, rng);
        const Tensor refs = stack(sample.references);
        const Tensor est = model.forward(sample.mixture, {true, &dropout_rng});
        const PitResult pit = upit_loss(est, refs);
        if (!std::isfinite(pit.loss)) {
          throw NumericalError("train: non-finite loss at epoch " +
                               std::to_string(epoch) + ", step " +
                               std::to_string(step) + " (lr " + std::to_string(lr) + ")");
        }
        batch_loss += pit.loss;
        Tensor grad = upit_loss_grad(est, refs, pit);
        grad *= 1.0 / static_cast<double>(tc.batch_size);
        model.backward(grad);
      }
      clip_grad_norm(params, tc.clip_norm);
      adam.step(lr);
      epoch_loss += batch_loss / static_cast<double>(tc.batch_size);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(tc.steps_per_epoch);
    rec.valid_delta_sisdr = mean_delta_sisdr(model, validation);
    rec.learning_rate = lr;
    rec.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log.append(rec);
    result.final_loss = rec.train_loss;
    if (on_epoch) on_epoch(rec);

    const double metric =
        validation.empty() ? -rec.train_loss : rec.valid_delta_sisdr;
    if (metric > best_metric) {
      best_metric = metric;
      stale = 0;
    } else {
      ++stale;
    }
    if (epoch + 1 >= tc.lr_hold_epochs && stale >= tc.plateau_patience) {
      lr /= 2.0;
      stale = 0;
    }
  }
  return result;
}

// ------------------------------------------------------------- inference

Tensor separate(SeparationModel& model, const Waveform& mixture) {
  return model.forward(mixture, RunMode{});
}

std::vector<fs::path> separate_file(SeparationModel& model, const fs::path& wav,
                                    const fs::path& out_dir) {
  const SourceSignal input = read_wav(wav);
  if (input.sample_rate != model.config().sample_rate) {
    throw ConfigurationError("separate: " + wav.string() + " has sample rate " +
                             std::to_string(input.sample_rate) + ", model expects " +
                             std::to_string(model.config().sample_rate));
  }
  const Tensor est = separate(model, input.samples);
  fs::create_directories(out_dir);
  std::vector<fs::path> out;
  for (std::size_t c = 0; c < est.rows(); ++c) {
    const auto row = est.row(c);
    const fs::path p =
        out_dir / (wav.stem().string() + "_s" + std::to_string(c + 1) + ".wav");
    write_wav(p, Waveform(row.begin(), row.end()), input.sample_rate);
    out.push_back(p);
  }
  return out;
}

EvalReport evaluate(SeparationModel& model, const std::vector<MixtureSample>& data,
                    const std::vector<std::string>& ids) {
  if (data.empty()) throw ConfigurationError("evaluate: empty dataset");
  EvalReport report;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const MixtureSample& s = data[i];
    SeparationResult r{separate(model, s.mixture), stack(s.references), s.mixture};
    const double d = delta_sisdr(r);
    report.items.push_back({i < ids.size() ? ids[i] : std::to_string(i), d});
    report.mean_delta_sisdr += d;
  }
  report.mean_delta_sisdr /= static_cast<double>(data.size());
  return report;
}

// ------------------------------------------------------------- datasets

std::vector<SourceSignal> make_toy_pool(std::size_t speakers,
                                        std::size_t utterances_per_speaker,
                                        double duration_s, double sample_rate,
                                        Rng& rng) {
  SynthOptions opts;
  opts.sample_rate = sample_rate;
  opts.high_hz = std::min(opts.high_hz, sample_rate / 2.0 - 100.0);
  opts.modulate = true;
  std::vector<SourceSignal> pool;
  for (std::size_t u = 0; u < utterances_per_speaker; ++u) {
    for (SourceSignal& s : generate_synthetic_sources(SourceKind::kBandLimitedNoise,
                                                      speakers, duration_s, rng, opts)) {
      pool.push_back(std::move(s));
    }
  }
  return pool;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  for (const ManifestEntry& e : entries) {
    nlohmann::json j = {{"id", e.id},
                        {"mixture", e.mixture.generic_string()},
                        {"references", nlohmann::json::array()},
                        {"sample_rate", e.sample_rate},
                        {"ssr_db", e.ssr_db},
                        {"seed", e.seed}};
    for (const fs::path& r : e.references) j["references"].push_back(r.generic_string());
    out << j.dump() << '\n';
  }
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const fs::path base = path.parent_path();
  auto resolve = [&base](const std::string& p) {
    const fs::path q(p);
    return q.is_absolute() ? q : base / q;
  };
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.id = j.at("id").get<std::string>();
      e.mixture = resolve(j.at("mixture").get<std::string>());
      for (const auto& r : j.at("references")) e.references.push_back(resolve(r.get<std::string>()));
      e.sample_rate = j.value("sample_rate", 8000.0);
      e.ssr_db = j.value("ssr_db", 0.0);
      e.seed = j.value("seed", std::uint64_t{0});
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return out;
}

fs::path write_dataset(const fs::path& dir, const std::vector<MixtureSample>& samples) {
  fs::create_directories(dir);
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const MixtureSample& s = samples[i];
    std::ostringstream id;
    id << "mix" << std::setw(5) << std::setfill('0') << i;
    ManifestEntry e{id.str(), id.str() + "_mix.wav", {}, s.sample_rate, s.ssr_db, s.seed};
    write_wav(dir / e.mixture, s.mixture, s.sample_rate);
    for (std::size_t c = 0; c < s.references.size(); ++c) {
      const fs::path ref = id.str() + "_s" + std::to_string(c + 1) + ".wav";
      write_wav(dir / ref, s.references[c], s.sample_rate);
      e.references.push_back(ref);
    }
    entries.push_back(std::move(e));
  }
  const fs::path manifest = dir / "manifest.jsonl";
  write_manifest(manifest, entries);
  return manifest;
}

std::vector<MixtureSample> load_dataset(const fs::path& manifest,
                                        std::vector<std::string>* ids) {
  std::vector<MixtureSample> out;
  for (const ManifestEntry& e : read_manifest(manifest)) {
    MixtureSample s;
    const SourceSignal mix = read_wav(e.mixture);
    s.mixture = mix.samples;
    s.sample_rate = mix.sample_rate;
    s.ssr_db = e.ssr_db;
    s.seed = e.seed;
    for (const fs::path& r : e.references) {
      SourceSignal ref = read_wav(r);
      if (ref.samples.size() != s.mixture.size()) {
        throw DimensionError("dataset " + e.id + ": reference length differs from mixture");
      }
      s.references.push_back(std::move(ref.samples));
    }
    if (ids) ids->push_back(e.id);
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------- config files

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

ConfigFile ConfigFile::parse(const std::string& text, const std::string& origin) {
  ConfigFile cf;
  cf.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string key = eq == std::string::npos ? "" : trim(line.substr(0, eq));
    if (key.empty()) {
      throw ConfigurationError(origin + ":" + std::to_string(line_no) +
                               ": expected 'key = value'");
    }
    if (cf.values_.count(key)) {
      throw ConfigurationError(origin + ":" + std::to_string(line_no) +
                               ": duplicate key '" + key + "'");
    }
    cf.values_[key] = trim(line.substr(eq + 1));
  }
  return cf;
}

ConfigFile ConfigFile::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

bool ConfigFile::has(const std::string& key) const { return values_.count(key) > 0; }

void ConfigFile::set(const std::string& key, const std::string& value) {
  values_[key] = value;
}

std::optional<std::string> ConfigFile::get_string(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  used_.insert(key);
  return it->second;
}

std::optional<double> ConfigFile::get_double(const std::string& key) const {
  const auto s = get_string(key);
  if (!s) return std::nullopt;
  try {
    std::size_t pos = 0;
    const double v = std::stod(*s, &pos);
    if (pos == s->size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigurationError(origin_ + ": '" + key + "' is not a number: " + *s);
}

std::optional<std::uint64_t> ConfigFile::get_uint(const std::string& key) const {
  const auto s = get_string(key);
  if (!s) return std::nullopt;
  try {
    std::size_t pos = 0;
    if (!s->empty() && (*s)[0] != '-') {
      const auto v = std::stoull(*s, &pos);
      if (pos == s->size()) return v;
    }
  } catch (const std::exception&) {
  }
  throw ConfigurationError(origin_ + ": '" + key +
                           "' is not a nonnegative integer: " + *s);
}

std::optional<bool> ConfigFile::get_bool(const std::string& key) const {
  const auto s = get_string(key);
  if (!s) return std::nullopt;
  if (*s == "true" || *s == "1" || *s == "yes") return true;
  if (*s == "false" || *s == "0" || *s == "no") return false;
  throw ConfigurationError(origin_ + ": '" + key + "' is not a boolean: " + *s);
}

void ConfigFile::require_all_used() const {
  for (const auto& [key, value] : values_) {
    if (!used_.count(key)) {
      throw ConfigurationError(origin_ + ": unknown key '" + key + "'");
    }
  }
}

ModelConfig model_config_from(const ConfigFile& f, ModelConfig c) {
  if (const auto p = f.get_string("preset")) c = ModelConfig::preset(*p);
  auto u = [&f](const char* key, std::size_t& field) {
    if (const auto v = f.get_uint(key)) field = static_cast<std::size_t>(*v);
  };
  u("n_filters", c.n_filters);
  u("bottleneck", c.bottleneck);
  u("block_len", c.block_len);
  u("stride", c.stride);
  u("layers", c.layers);
  u("subsampling", c.subsampling);
  u("kernel", c.kernel);
  u("heads", c.heads);
  u("ff_expansion", c.ff_expansion);
  u("speakers", c.speakers);
  u("max_rel_distance", c.max_rel_distance);
  if (const auto v = f.get_double("dropout")) c.dropout = *v;
  if (const auto v = f.get_double("sample_rate")) c.sample_rate = *v;
  c.validate();
  return c;
}

TrainConfig train_config_from(const ConfigFile& f, TrainConfig c) {
  auto u = [&f](const char* key, std::size_t& field) {
    if (const auto v = f.get_uint(key)) field = static_cast<std::size_t>(*v);
  };
  if (const auto v = f.get_double("initial_lr")) c.initial_lr = *v;
  u("plateau_patience", c.plateau_patience);
  u("lr_hold_epochs", c.lr_hold_epochs);
  u("max_epochs", c.max_epochs);
  u("steps_per_epoch", c.steps_per_epoch);
  u("batch_size", c.batch_size);
  if (const auto v = f.get_double("tsl_limit_s")) c.tsl_limit_s = *v;
  if (const auto v = f.get_uint("seed")) c.seed = *v;
  if (const auto v = f.get_bool("dm_enabled")) c.dm_enabled = *v;
  if (const auto v = f.get_double("clip_norm")) c.clip_norm = *v;
  return c;
}

}  // namespace tdc

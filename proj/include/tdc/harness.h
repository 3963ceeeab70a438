// Copyright 2026 The TD-Conformer Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Training loop, inference, evaluation, datasets and run configuration.

#ifndef TDC_HARNESS_H_
#define TDC_HARNESS_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tdc/masknet.h"
#include "tdc/model.h"
#include "tdc/signal.h"

namespace tdc {

struct TrainConfig {
  double initial_lr = 5e-5;
  std::size_t plateau_patience = 3;   // epochs without improvement before halving
  std::size_t lr_hold_epochs = 90;    // no halving before this many epochs
  std::size_t max_epochs = 0;
  std::size_t steps_per_epoch = 100;
  double tsl_limit_s = 4.0;           // training crops are at most this long
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;
  bool dm_enabled = true;
  double clip_norm = 5.0;             // global gradient norm; 0 disables

  void validate(const ModelConfig& model) const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double valid_delta_sisdr = 0.0;  // NaN without a validation set
  double learning_rate = 0.0;
  double wall_time_s = 0.0;
};

class ExperimentLog {
 public:
  explicit ExperimentLog(std::uint64_t seed = 0);

  // Throws ConfigurationError if the learning rate would increase.
  void append(const EpochRecord& record);
  const std::vector<EpochRecord>& epochs() const { return epochs_; }
  std::uint64_t seed() const { return seed_; }
  nlohmann::json& metadata() { return metadata_; }
  const nlohmann::json& metadata() const { return metadata_; }

  nlohmann::json to_json() const;
  void save(const std::filesystem::path& path) const;

 private:
  std::uint64_t seed_;
  nlohmann::json metadata_ = nlohmann::json::object();
  std::vector<EpochRecord> epochs_;
};

// Adam with bias correction, decay constants (0.9, 0.999) and eps 1e-8.
class Adam {
 public:
  explicit Adam(ParameterList params, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  void step(double lr);
  std::size_t steps() const { return t_; }

 private:
  ParameterList params_;
  std::vector<Tensor> m_, v_;
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

// Rescales every gradient so the global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(const ParameterList& params, double max_norm);

// A stream of training mixtures; each call may consume randomness.
using DataSource = std::function<MixtureSample(Rng&)>;

// Fresh mixtures from distinct speakers of the pool on every call.
DataSource dynamic_mix_source(std::vector<SourceSignal> pool, std::size_t speakers,
                              std::pair<double, double> gain_range_db = {-2.5, 2.5});
// Uniform draws from a fixed list.
DataSource fixed_source(std::vector<MixtureSample> samples);

// Random crop of a mixture and its references to at most max_samples.
MixtureSample random_crop(const MixtureSample& sample, std::size_t max_samples,
                          Rng& rng);

struct TrainResult {
  SeparationModel model;
  ExperimentLog log;
  double final_loss = 0.0;  // mean training loss of the last epoch
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Optimizes the uPIT negative-SISDR loss. The learning rate is held for
// lr_hold_epochs, then halved whenever validation delta-SISDR has not improved
// for plateau_patience epochs. Without a validation set the negated training
// loss is the plateau metric. A non-finite loss aborts with NumericalError.
TrainResult train(const ModelConfig& model_config, const TrainConfig& train_config,
                  const DataSource& data,
                  const std::vector<MixtureSample>& validation = {},
                  const EpochCallback& on_epoch = {});

// Inference with dropout disabled: {C, T} estimates.
Tensor separate(SeparationModel& model, const Waveform& mixture);
// Reads a mono WAV, writes <stem>_s<k>.wav per speaker into out_dir.
std::vector<std::filesystem::path> separate_file(SeparationModel& model,
                                                 const std::filesystem::path& wav,
                                                 const std::filesystem::path& out_dir);

struct EvalItem {
  std::string id;
  double delta_sisdr = 0.0;
};

struct EvalReport {
  double mean_delta_sisdr = 0.0;
  std::vector<EvalItem> items;
};

EvalReport evaluate(SeparationModel& model, const std::vector<MixtureSample>& data,
                    const std::vector<std::string>& ids = {});

// ---------------------------------------------------------------- datasets

// Toy speakers: speaker k owns spectral band k of `speakers` disjoint bands;
// each of its utterances is a fresh random draw within that band.
std::vector<SourceSignal> make_toy_pool(std::size_t speakers,
                                        std::size_t utterances_per_speaker,
                                        double duration_s, double sample_rate,
                                        Rng& rng);

// Manifest: one JSON object per line,
//   {"id": str, "mixture": path, "references": [path, ...],
//    "sample_rate": number, "ssr_db": number, "seed": integer}
// Relative paths resolve against the manifest's directory.
struct ManifestEntry {
  std::string id;
  std::filesystem::path mixture;
  std::vector<std::filesystem::path> references;
  double sample_rate = 8000.0;
  double ssr_db = 0.0;
  std::uint64_t seed = 0;
};

void write_manifest(const std::filesystem::path& path,
                    const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
// Writes float32 WAVs for every mixture and reference plus manifest.jsonl.
std::filesystem::path write_dataset(const std::filesystem::path& dir,
                                    const std::vector<MixtureSample>& samples);
// Loads mixtures and references; sources, gains and noise are not restored.
std::vector<MixtureSample> load_dataset(const std::filesystem::path& manifest,
                                        std::vector<std::string>* ids = nullptr);

// ------------------------------------------------------------ config files

// `key = value` lines; `#` starts a comment; blank lines ignored. Keys not
// consumed by any get() are reported by require_all_used().
class ConfigFile {
 public:
  ConfigFile() = default;
  static ConfigFile parse(const std::string& text, const std::string& origin = "<string>");
  static ConfigFile load(const std::filesystem::path& path);

  bool has(const std::string& key) const;
  std::optional<std::string> get_string(const std::string& key) const;
  std::optional<double> get_double(const std::string& key) const;
  std::optional<std::uint64_t> get_uint(const std::string& key) const;
  std::optional<bool> get_bool(const std::string& key) const;
  void set(const std::string& key, const std::string& value);
  void require_all_used() const;

 private:
  std::string origin_;
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

// Keys: preset, n_filters, bottleneck, block_len, stride, layers,
// subsampling, kernel, heads, ff_expansion, dropout, speakers, sample_rate,
// max_rel_distance. A preset is applied first, then individual overrides.
ModelConfig model_config_from(const ConfigFile& file, ModelConfig base = {});
// Keys: initial_lr, plateau_patience, lr_hold_epochs, max_epochs,
// steps_per_epoch, tsl_limit_s, batch_size, seed, dm_enabled, clip_norm.
TrainConfig train_config_from(const ConfigFile& file, TrainConfig base = {});

}  // namespace tdc

#endif  // TDC_HARNESS_H_

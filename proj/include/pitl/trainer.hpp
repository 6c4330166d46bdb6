// Copyright 2026 The pitl Authors
// SPDX-License-Identifier: Apache-2.0

// Deterministic pre-training loop: batch sampling, the four objectives,
// AdamW with warmup + cosine decay, queues, checkpoints and the
// finite-difference gradient check.

#ifndef PITL_TRAINER_HPP_
#define PITL_TRAINER_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "pitl/corpus.hpp"
#include "pitl/model.hpp"
#include "pitl/objectives.hpp"
#include "pitl/random.hpp"
#include "pitl/tokenizer.hpp"

namespace pitl {

struct TrainConfig {
  int steps = 100;
  int batch_size = 8;
  double learning_rate = 1e-4;
  double weight_decay = 0.01;
  // Negative: 10% of steps.
  int warmup_steps = -1;
  std::uint64_t seed = 0;
  int queue_size = 256;
  double mask_rate = 0.15;
  // 0 writes only the final checkpoint.
  int checkpoint_interval = 0;
  std::optional<std::set<promptgen::PromptId>> prompt_filter;
  bool shuffled = false;
  TargetMode target = TargetMode::Uniform;
  SimilarityMode similarity = SimilarityMode::Projected;
  NegativeStrategy negatives = NegativeStrategy::Uniform;
  // 0 feeds the queues from the online encoders; otherwise the momentum of
  // an EMA copy that feeds them instead.
  double ema_momentum = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  int resolved_warmup() const { return warmup_steps >= 0 ? warmup_steps : steps / 10; }
  /// Learning rate for 0-based `step`: linear warmup, then cosine to zero.
  double learning_rate_at(long step) const;
  /// Throws ContractError on steps < 1, warmup > steps, mask_rate outside
  /// (0, 1), batch_size < 2 or queue_size < 1.
  void validate() const;
  LossOptions loss_options() const;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  /// Applies one flat `key = value` setting; returns false for unknown keys.
  bool set(const std::string& key, const std::string& value);
};

/// Decoupled weight decay Adam. Decay applies to `.weight` matrices only.
template <typename Scalar>
class AdamW {
 public:
  struct Moments {
    Matrix<Scalar> m;
    Matrix<Scalar> v;
  };

  AdamW(double beta1, double beta2, double epsilon, double weight_decay)
      : beta1_(beta1), beta2_(beta2), epsilon_(epsilon), weight_decay_(weight_decay) {}

  void step(ParameterStore<Scalar>& params, double lr);

  long steps_taken() const { return t_; }
  std::map<std::string, Moments>& moments() { return moments_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }
  void set_steps_taken(long t) { t_ = t; }

  static bool decays(const std::string& name);

 private:
  double beta1_, beta2_, epsilon_, weight_decay_;
  long t_ = 0;
  std::map<std::string, Moments> moments_;
};

struct StepMetrics {
  long step = 0;  // 1-based count of completed updates
  double itc = 0, itm = 0, mlm = 0, imc = 0, total = 0;
  double tau = 0;
  double learning_rate = 0;
  long image_queue = 0;
  long text_queue = 0;
  long itm_pairs = 0;
  long itm_skipped = 0;
  long masked_tokens = 0;

  nlohmann::json to_json() const;
};

/// The text-and-image view the trainer samples from.
struct TrainingData {
  corpus::CategoryIndex index;
  Tokenizer tokenizer;
  // Category codes used by the losses: position in this list.
  std::vector<std::string> categories;
  std::optional<std::uint64_t> shuffle_seed;
  double cross_category_fraction = 0.0;
};

/// Builds the pretrain-split view of `manifest`: a vocabulary over all
/// descriptions capped at the model vocabulary, then the optional shuffle
/// (seeded from the "shuffle" substream of config.seed).
TrainingData prepare_training_data(const corpus::Manifest& manifest, const TrainConfig& config,
                                   const ModelConfig& model_config);

/// Same, with a vocabulary fixed in advance (resume, evaluation).
TrainingData prepare_training_data(const corpus::Manifest& manifest, const TrainConfig& config, Tokenizer tokenizer);

class Trainer {
 public:
  Trainer(ModelConfig model_config, TrainConfig config, TrainingData data);

  /// Samples a batch from the sampler stream and takes one step.
  StepMetrics train_step();
  /// One optimizer update on the given batch. Throws NonFiniteLossError
  /// (parameters untouched) when the loss is NaN or infinite.
  StepMetrics train_step(const corpus::PairBatch& batch);

  /// Writes config.json, vocab.txt, parameters.bin, state.bin and rng.json.
  void save_checkpoint(const std::filesystem::path& dir) const;
  /// Restores parameters, optimizer, queues, RNG streams and step from a
  /// checkpoint of the same configuration.
  void load_state(const std::filesystem::path& dir);

  long step() const { return step_; }
  const TrainConfig& config() const { return config_; }
  Model<float>& model() { return model_; }
  const Model<float>& model() const { return model_; }
  const TrainingData& data() const { return data_; }
  const EmbeddingQueue<float>& image_queue() const { return image_queue_; }
  const EmbeddingQueue<float>& text_queue() const { return text_queue_; }
  const std::string& last_checkpoint() const { return last_checkpoint_; }
  void set_last_checkpoint(std::string path) { last_checkpoint_ = std::move(path); }

  StepInputs<float> inputs_for(const corpus::PairBatch& batch);

 private:
  const ImageTensor<float>& image(const std::string& image_id);
  const std::vector<int>& tokens(const std::string& description_id);
  void enqueue(const LossTerms<float>& terms, const StepInputs<float>& inputs);

  ModelConfig model_config_;
  TrainConfig config_;
  TrainingData data_;
  Model<float> model_;
  std::optional<Model<float>> ema_;
  AdamW<float> optimizer_;
  EmbeddingQueue<float> image_queue_;
  EmbeddingQueue<float> text_queue_;
  Rng sampler_rng_;
  Rng mask_rng_;
  Rng negative_rng_;
  long step_ = 0;
  std::string last_checkpoint_;
  std::map<std::string, int> category_code_;
  std::unordered_map<std::string, ImageTensor<float>> image_cache_;
  std::unordered_map<std::string, std::vector<int>> token_cache_;
};

struct PretrainResult {
  std::filesystem::path checkpoint;
  std::filesystem::path metrics;
  std::vector<StepMetrics> rows;
};

/// Runs trainer.config().steps updates (continuing from trainer.step()),
/// appending one JSON line per step to <out_dir>/metrics.jsonl and writing
/// checkpoints under <out_dir>/checkpoints/. When resuming, metric rows past
/// the restored step are dropped first. The final checkpoint is
/// <out_dir>/checkpoints/final.
PretrainResult run_pretraining(Trainer& trainer, const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// Checkpoint files

/// Named matrices in a little binary container: magic, version, count, then
/// per entry name length, name, rows, cols, scalar width and raw data.
template <typename Scalar>
void write_arrays(const std::filesystem::path& path, const std::vector<std::pair<std::string, Matrix<Scalar>>>& arrays);
template <typename Scalar>
std::vector<std::pair<std::string, Matrix<Scalar>>> read_arrays(const std::filesystem::path& path);

/// Everything evaluation needs from a checkpoint directory.
struct LoadedCheckpoint {
  ModelConfig model_config;
  TrainConfig train_config;
  Tokenizer tokenizer;
  long step = 0;
  Model<float> model;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Gradient check

struct GradientCoordinate {
  std::string parameter;
  Index row = 0;
  Index col = 0;
  double analytic = 0;
  double numeric = 0;
  double relative_error = 0;
};

struct GradientCheckOptions {
  int coordinates = 100;
  double tolerance = 1e-5;
  double step = 1e-3;
  // Denominator floor for gradients that are (numerically) zero.
  double floor = 1e-6;
};

struct GradientCheckReport {
  std::string label;
  double tolerance = 0;
  double max_relative_error = 0;
  std::vector<GradientCoordinate> checked;
  std::vector<GradientCoordinate> failures;

  bool passed() const { return failures.empty(); }
  std::string summary() const;
};

/// Compares the tape gradient of `loss` with a five-point central difference
/// on `options.coordinates` coordinates (tensor drawn uniformly, then a
/// coordinate uniformly within it). relative error = |a - n| /
/// max(|a|, |n|, floor).
GradientCheckReport gradient_check(ParameterStore<double>& params,
                                   const std::function<Var<double>(Tape<double>&)>& loss,
                                   const GradientCheckOptions& options, Rng& rng, std::string label = "loss");

/// Runs the check on itc, itm, mlm, imc and the total for one fixed batch,
/// queue snapshot and random plan.
std::vector<GradientCheckReport> check_pretraining_gradients(Model<double>& model, const StepInputs<double>& inputs,
                                                             const EmbeddingQueue<double>& image_queue,
                                                             const EmbeddingQueue<double>& text_queue,
                                                             const LossOptions& loss_options,
                                                             const GradientCheckOptions& options,
                                                             std::uint64_t seed);

}  // namespace pitl

#endif  // PITL_TRAINER_HPP_

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "autotraces/model.hpp"

namespace autotraces {

// Mean -log softmax(logits_i)[target_i] over rows with mask_i set; 0 when none.
double ce_loss(const Mat& logits, const std::vector<int>& targets, const std::vector<std::uint8_t>& mask);
// Mean per-point |dx| + |dy|. Throws on count mismatch or empty input.
double point_loss(const std::vector<Waypoint>& pred, const std::vector<Waypoint>& gt);
inline double total_loss(double ce, double point) { return ce + point; }

enum class Objective { kCot, kForecast, kSinglePass, kTextBaseline };

const char* to_string(Objective o);
Objective objective_from_string(const std::string& s);

TokenStream training_stream(const Sample& sample, const Vocabulary& vocab, Objective objective, int query_slots = 0);

struct LossParts {
  double ce = 0.0;
  double point = 0.0;
  double total = 0.0;
  int ce_count = 0;
  int point_count = 0;
};

// Forward pass and losses for one stream; with `grads`, also backpropagates
// `weight` * total into the trainable groups.
LossParts sample_loss(const ModelParams& params, const TokenStream& stream, const Sample& sample, bool use_lora,
                      const TrainableSet& trainable = {}, double weight = 1.0, ModelParams* grads = nullptr);

class NonFiniteGradient : public std::runtime_error {
 public:
  explicit NonFiniteGradient(const std::string& tensor)
      : std::runtime_error("non-finite gradient in tensor " + tensor), tensor_(tensor) {}
  const std::string& tensor() const { return tensor_; }

 private:
  std::string tensor_;
};

// Throws NonFiniteGradient for the first trainable tensor holding a NaN/inf.
void check_finite(const ModelParams& grads, const TrainableSet& trainable);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled
};

struct OptimizerState {
  std::map<std::string, Mat> m, v;
  std::int64_t step = 0;
};

void adam_step(ModelParams& params, const ModelParams& grads, const TrainableSet& trainable, OptimizerState& state,
               double lr, const AdamConfig& cfg);

// Linear warmup over ceil(warmup_frac * total) steps, then cosine decay to 0
// at step == total. `step` counts from 1.
double lr_at(std::int64_t step, std::int64_t total, double peak, double warmup_frac);

struct Checkpoint {
  ModelParams params;
  Vocabulary vocab;
  OptimizerState optimizer;
  int stage = 0;  // last completed stage, 0 = fresh
  std::uint64_t data_seed = 0;
  std::int64_t epoch = 0;
};

Checkpoint fresh_checkpoint(ModelConfig config, const Vocabulary& vocab);

// Returns a copy configured with `n` learned query rows (seeded N(0, 1)).
// Existing rows are kept when the count already matches.
Checkpoint with_query_slots(const Checkpoint& ckpt, int n, std::uint64_t seed);

// Samples whose future holds at least `T` points.
std::vector<Sample> with_min_future(const std::vector<Sample>& samples, int T);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct StepLog {
  std::int64_t step = 0;
  int stage = 0;
  double lr = 0.0;
  double ce = 0.0;
  double point = 0.0;
  double total = 0.0;
};

struct StageConfig {
  int stage = 2;
  Objective objective = Objective::kForecast;
  int epochs = 10;
  int batch_size = 4;
  double lr = 2e-4;
  double warmup_frac = 0.01;
  AdamConfig adam;
  std::uint64_t seed = 0;
  bool use_lora = true;
  bool from_scratch = false;  // allow stage 2 without a stage-1 checkpoint
  std::optional<TrainableSet> trainable;  // defaults follow the stage/objective
  std::filesystem::path log_csv;          // empty: no CSV
  std::function<void(const StepLog&)> on_step;

  static StageConfig stage1();
  static StageConfig stage2();
  TrainableSet trainable_set() const;
  void validate() const;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, Checkpoint last_good)
      : std::runtime_error(what), last_good_(std::move(last_good)) {}
  const Checkpoint& last_good() const { return last_good_; }

 private:
  Checkpoint last_good_;
};

// Runs one training stage and returns the final checkpoint. Stage 1 samples
// without CoT text get template annotations.
Checkpoint train_stage(const StageConfig& cfg, const std::vector<Sample>& dataset, const Checkpoint& init);

// Vocabulary over template CoT and prompt texts of a dataset.
Vocabulary vocab_for_dataset(const std::vector<Sample>& samples);

}  // namespace autotraces

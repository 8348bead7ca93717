#pragma once

#include <optional>
#include <vector>

#include "autotraces/model.hpp"

namespace autotraces {

enum class StopReason { kEos, kMaxTokens };
const char* to_string(StopReason r);

struct GenResult {
  std::vector<Waypoint> waypoints;  // ego frame
  std::vector<int> tokens;          // generated ids, prompt excluded
  int emitted_tokens = 0;
  int requested_T = 0;
  bool compliant = false;
  StopReason stop_reason = StopReason::kMaxTokens;
};

struct GenOptions {
  int max_tokens = 0;  // 0: requested_T + 16 (text baseline: 13 * requested_T + 16)
  bool use_lora = true;
  bool use_cache = true;                 // false: recompute the whole sequence every step
  std::vector<Row>* step_logits = nullptr;  // optional record of every step's logits
};

// Counts decoder invocations (one per DecodeSession::append or full forward).
struct DecodeStats {
  int forward_passes = 0;
};

// Greedy decoding from the forecast prompt. A generated PT token is decoded from
// the hidden state that produced it and fed back as encode_point of that waypoint.
GenResult generate(const ModelParams& params, const Vocabulary& vocab, const Sample& sample, int requested_T,
                   const GenOptions& opts = {}, DecodeStats* stats = nullptr);

// Exact output grammar: PTS, requested_T x PT, PTE, EOS.
bool is_compliant_forecast(const std::vector<int>& tokens, int requested_T);

struct BatchReport {
  std::vector<GenResult> results;
  double ieacc = 0.0;
  double tpr = 0.0;
  std::optional<double> l2;  // over compliant results only
  std::optional<double> l1;
  int n = 0;
};

// Aggregates IEAcc, TPR and the @S metrics of a set of results; ground truth is
// the first requested_T future points of each sample.
BatchReport summarize(std::vector<GenResult> results, const std::vector<Sample>& samples);

// Runs `generate` over every sample with up to `workers` threads (0: hardware
// concurrency). Results are in input order and independent of the worker count.
BatchReport generate_batch(const ModelParams& params, const Vocabulary& vocab, const std::vector<Sample>& samples,
                           int requested_T, const GenOptions& opts = {}, int workers = 1);

// Waypoints predicted under teacher forcing, with sample.future as the fed-back
// points. Row j-1 decodes the waypoint of PT target j, as in training.
std::vector<Waypoint> teacher_forced_decode(const ModelParams& params, const Vocabulary& vocab, const Sample& sample,
                                            int requested_T, bool use_lora = true, DecodeStats* stats = nullptr);

// One forward pass over the prefix plus the model's learned query rows.
// Throws std::invalid_argument unless T equals the configured query count.
std::vector<Waypoint> single_pass_decode(const ModelParams& params, const Vocabulary& vocab, const Sample& sample,
                                         int T, bool use_lora = true, DecodeStats* stats = nullptr);

// Greedy decoding of digit-serialized coordinates (text-coordinate baseline).
GenResult generate_text_baseline(const ModelParams& params, const Vocabulary& vocab, const Sample& sample,
                                 int requested_T, const GenOptions& opts = {}, DecodeStats* stats = nullptr);

}  // namespace autotraces

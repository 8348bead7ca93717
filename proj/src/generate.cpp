#include "autotraces/generate.hpp"

#include <algorithm>
#include <span>
#include <stdexcept>
#include <thread>

namespace autotraces {

const char* to_string(StopReason r) { return r == StopReason::kEos ? "eos" : "max_tokens"; }

namespace {

// Feeds embedding rows to the decoder and returns the hidden state of the last one.
class Stepper {
 public:
  Stepper(const ModelParams& params, bool use_lora, bool use_cache, DecodeStats* stats)
      : params_(params), use_lora_(use_lora), use_cache_(use_cache), stats_(stats) {
    if (use_cache_) session_.emplace(params, use_lora);
  }

  Row append(const Mat& rows) {
    if (stats_) ++stats_->forward_passes;
    if (use_cache_) {
      const Mat h = session_->append(rows);
      return h.row(h.rows() - 1);
    }
    const Eigen::Index n = all_.rows();
    all_.conservativeResize(n + rows.rows(), rows.cols());
    all_.bottomRows(rows.rows()) = rows;
    const Mat h = forward(params_, all_, use_lora_);
    return h.row(h.rows() - 1);
  }

 private:
  const ModelParams& params_;
  bool use_lora_;
  bool use_cache_;
  DecodeStats* stats_;
  std::optional<DecodeSession> session_;
  Mat all_;
};

int argmax(const Row& logits) {
  Eigen::Index best = 0;
  logits.maxCoeff(&best);
  return static_cast<int>(best);
}

// Shared greedy loop. With point_feedback, a generated PT token is decoded and
// its re-encoded waypoint replaces the token embedding.
GenResult greedy(const ModelParams& params, const TokenStream& prefix, const Sample& sample, int requested_T,
                 int max_tokens, bool point_feedback, const GenOptions& opts, DecodeStats* stats) {
  const int context = params.config.context;
  const CodecConfig codec = params.config.codec();
  GenResult res;
  res.requested_T = requested_T;

  Stepper stepper(params, opts.use_lora, opts.use_cache, stats);
  Row h = stepper.append(embed_stream(params, prefix, sample));
  int pos = static_cast<int>(prefix.size());
  while (true) {
    const Row logits = text_logits(params, h);
    if (opts.step_logits) opts.step_logits->push_back(logits);
    const int tok = argmax(logits);
    res.tokens.push_back(tok);
    ++res.emitted_tokens;
    if (tok == token::kEos) {
      res.stop_reason = StopReason::kEos;
      break;
    }
    Row x;
    if (point_feedback && tok == token::kPoint) {
      const Waypoint wp = decode_point(params.point_head, codec, h);
      res.waypoints.push_back(wp);
      x = encode_point(params.point_enc, codec, wp);
    } else {
      x = params.tok_emb.row(tok);
    }
    if (res.emitted_tokens >= max_tokens || pos >= context) {
      res.stop_reason = StopReason::kMaxTokens;
      break;
    }
    x += params.pos_emb.row(pos++);
    h = stepper.append(x);
  }
  return res;
}

}  // namespace

bool is_compliant_forecast(const std::vector<int>& tokens, int requested_T) {
  if (requested_T < 1 || tokens.size() != static_cast<std::size_t>(requested_T) + 3) return false;
  if (tokens.front() != token::kPointStart || tokens[tokens.size() - 2] != token::kPointEnd ||
      tokens.back() != token::kEos) {
    return false;
  }
  return std::all_of(tokens.begin() + 1, tokens.end() - 2, [](int t) { return t == token::kPoint; });
}

GenResult generate(const ModelParams& params, const Vocabulary& vocab, const Sample& sample, int requested_T,
                   const GenOptions& opts, DecodeStats* stats) {
  if (requested_T < 1) throw std::invalid_argument("requested_T must be >= 1");
  const int max_tokens = opts.max_tokens > 0 ? opts.max_tokens : requested_T + 16;
  if (max_tokens < requested_T + 3) throw std::invalid_argument("max_tokens must be >= requested_T + 3");
  const TokenStream prefix = assemble(sample, render_prompt(sample, requested_T, PromptMode::kForecast), vocab,
                                      PromptMode::kForecast, requested_T, false);
  GenResult res = greedy(params, prefix, sample, requested_T, max_tokens, true, opts, stats);
  res.compliant = is_compliant_forecast(res.tokens, requested_T);
  return res;
}

BatchReport summarize(std::vector<GenResult> results, const std::vector<Sample>& samples) {
  if (results.empty()) throw std::invalid_argument("summarize: no results");
  if (results.size() != samples.size()) throw std::invalid_argument("summarize: result/sample count mismatch");
  BatchReport rep;
  rep.n = static_cast<int>(results.size());
  int compliant = 0;
  double tokens = 0.0, l2 = 0.0, l1 = 0.0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const GenResult& r = results[i];
    tokens += r.emitted_tokens;
    if (!r.compliant) continue;
    ++compliant;
    const auto& fut = samples[i].future.points;
    if (fut.size() < static_cast<std::size_t>(r.requested_T)) {
      throw std::invalid_argument("sample " + samples[i].sample_id + " has fewer future points than requested");
    }
    const std::span<const Waypoint> gt(fut.data(), static_cast<std::size_t>(r.requested_T));
    l2 += l2_metric(r.waypoints, gt);
    l1 += l1_metric(r.waypoints, gt);
  }
  rep.ieacc = static_cast<double>(compliant) / rep.n;
  rep.tpr = tokens / rep.n;
  if (compliant > 0) {
    rep.l2 = l2 / compliant;
    rep.l1 = l1 / compliant;
  }
  rep.results = std::move(results);
  return rep;
}

BatchReport generate_batch(const ModelParams& params, const Vocabulary& vocab, const std::vector<Sample>& samples,
                           int requested_T, const GenOptions& opts, int workers) {
  if (samples.empty()) throw std::invalid_argument("generate_batch: no samples");
  if (opts.step_logits) throw std::invalid_argument("generate_batch does not record logits");
  if (workers <= 0) workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  workers = std::min<int>(workers, static_cast<int>(samples.size()));

  std::vector<GenResult> results(samples.size());
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  auto run = [&](int w) {
    try {
      for (std::size_t i = static_cast<std::size_t>(w); i < samples.size(); i += static_cast<std::size_t>(workers)) {
        results[i] = generate(params, vocab, samples[i], requested_T, opts);
      }
    } catch (...) {
      errors[static_cast<std::size_t>(w)] = std::current_exception();
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(run, w);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return summarize(std::move(results), samples);
}

std::vector<Waypoint> teacher_forced_decode(const ModelParams& params, const Vocabulary& vocab, const Sample& sample,
                                            int requested_T, bool use_lora, DecodeStats* stats) {
  const TokenStream stream = assemble(sample, render_prompt(sample, requested_T, PromptMode::kForecast), vocab,
                                      PromptMode::kForecast, requested_T);
  const Mat hidden = forward(params, embed_stream(params, stream, sample), use_lora);
  if (stats) ++stats->forward_passes;
  const HeadRouting routing = route_heads(stream);
  std::vector<Waypoint> out(routing.point_rows.size());
  const CodecConfig codec = params.config.codec();
  for (std::size_t k = 0; k < routing.point_rows.size(); ++k) {
    out[static_cast<std::size_t>(routing.point_index[k])] =
        decode_point(params.point_head, codec, hidden.row(routing.point_rows[k]));
  }
  return out;
}

std::vector<Waypoint> single_pass_decode(const ModelParams& params, const Vocabulary& vocab, const Sample& sample,
                                         int T, bool use_lora, DecodeStats* stats) {
  const int fixed = params.config.query_slots;
  if (fixed <= 0) throw std::invalid_argument("model has no query slots; not a single-pass variant");
  if (T != fixed) {
    throw std::invalid_argument("single-pass model decodes exactly " + std::to_string(fixed) + " waypoints, got T=" +
                                std::to_string(T));
  }
  const TokenStream stream = assemble_single_pass(sample, vocab, fixed);
  const Mat hidden = forward(params, embed_stream(params, stream, sample), use_lora);
  if (stats) ++stats->forward_passes;
  const HeadRouting routing = route_heads(stream);
  std::vector<Waypoint> out(static_cast<std::size_t>(fixed));
  const CodecConfig codec = params.config.codec();
  for (std::size_t k = 0; k < routing.point_rows.size(); ++k) {
    out[static_cast<std::size_t>(routing.point_index[k])] =
        decode_point(params.point_head, codec, hidden.row(routing.point_rows[k]));
  }
  return out;
}

GenResult generate_text_baseline(const ModelParams& params, const Vocabulary& vocab, const Sample& sample,
                                 int requested_T, const GenOptions& opts, DecodeStats* stats) {
  if (requested_T < 1) throw std::invalid_argument("requested_T must be >= 1");
  const int needed = kTextTokensPerWaypoint * requested_T + 1;
  const int max_tokens = opts.max_tokens > 0 ? opts.max_tokens : needed + 15;
  if (max_tokens < needed) throw std::invalid_argument("max_tokens too small for the requested horizon");
  const TokenStream prefix = assemble_text_baseline(sample, vocab, requested_T, false);
  GenResult res = greedy(params, prefix, sample, requested_T, max_tokens, false, opts, stats);
  if (res.stop_reason == StopReason::kEos) {
    const std::vector<int> body(res.tokens.begin(), res.tokens.end() - 1);
    std::vector<Waypoint> parsed;
    if (parse_waypoints(body, vocab, parsed)) {
      res.waypoints = std::move(parsed);
      res.compliant = static_cast<int>(res.waypoints.size()) == requested_T;
    }
  }
  return res;
}

}  // namespace autotraces

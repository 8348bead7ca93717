#include "autotraces/train.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "autotraces/cot.hpp"
#include "autotraces/rng.hpp"

namespace autotraces {

double ce_loss(const Mat& logits, const std::vector<int>& targets, const std::vector<std::uint8_t>& mask) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size() || targets.size() != mask.size()) {
    throw std::invalid_argument("ce_loss: shape mismatch");
  }
  double sum = 0.0;
  int count = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!mask[i]) continue;
    const Row row = logits.row(static_cast<Eigen::Index>(i));
    sum += log_sum_exp(row) - row(targets[i]);
    ++count;
  }
  return count ? sum / count : 0.0;
}

double point_loss(const std::vector<Waypoint>& pred, const std::vector<Waypoint>& gt) {
  if (pred.empty() || pred.size() != gt.size()) throw std::invalid_argument("point_loss: count mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) sum += std::abs(pred[i].x - gt[i].x) + std::abs(pred[i].y - gt[i].y);
  return sum / static_cast<double>(pred.size());
}

const char* to_string(Objective o) {
  switch (o) {
    case Objective::kCot:
      return "cot";
    case Objective::kForecast:
      return "forecast";
    case Objective::kSinglePass:
      return "single_pass";
    case Objective::kTextBaseline:
      return "text_baseline";
  }
  return "?";
}

Objective objective_from_string(const std::string& s) {
  if (s == "cot") return Objective::kCot;
  if (s == "forecast") return Objective::kForecast;
  if (s == "single_pass") return Objective::kSinglePass;
  if (s == "text_baseline") return Objective::kTextBaseline;
  throw std::invalid_argument("unknown objective: " + s);
}

TokenStream training_stream(const Sample& sample, const Vocabulary& vocab, Objective objective, int query_slots) {
  const int T = static_cast<int>(sample.future.size());
  switch (objective) {
    case Objective::kCot:
      return assemble(sample, render_prompt(sample, T, PromptMode::kCot), vocab, PromptMode::kCot, T);
    case Objective::kForecast:
      return assemble(sample, render_prompt(sample, T, PromptMode::kForecast), vocab, PromptMode::kForecast, T);
    case Objective::kSinglePass:
      if (T < query_slots) throw std::invalid_argument("single-pass sample needs " + std::to_string(query_slots) + " future points");
      return assemble_single_pass(sample, vocab, query_slots);
    case Objective::kTextBaseline:
      return assemble_text_baseline(sample, vocab, T);
  }
  throw std::logic_error("unknown objective");
}

LossParts sample_loss(const ModelParams& params, const TokenStream& stream, const Sample& sample, bool use_lora,
                      const TrainableSet& trainable, double weight, ModelParams* grads) {
  EmbedCache ecache;
  ForwardCache fcache;
  const Mat emb = embed_stream(params, stream, sample, grads ? &ecache : nullptr);
  const Mat hidden = forward(params, emb, use_lora, grads ? &fcache : nullptr);
  const HeadRouting routing = route_heads(stream);

  LossParts parts;
  parts.ce_count = static_cast<int>(routing.ce_rows.size());
  parts.point_count = static_cast<int>(routing.point_rows.size());
  Mat d_hidden;
  if (grads) d_hidden = Mat::Zero(hidden.rows(), hidden.cols());

  if (parts.ce_count > 0) {
    const double w = weight / parts.ce_count;
    for (int k = 0; k < parts.ce_count; ++k) {
      const int row = routing.ce_rows[static_cast<std::size_t>(k)];
      const int target = routing.ce_targets[static_cast<std::size_t>(k)];
      const Row logits = text_logits(params, hidden.row(row));
      const double lse = log_sum_exp(logits);
      parts.ce += lse - logits(target);
      if (grads) {
        Row d = (logits.array() - lse).exp().matrix() * w;
        d(target) -= w;
        if (trainable.has(ParamGroup::kTextHead)) {
          grads->head_w.noalias() += hidden.row(row).transpose() * d;
          grads->head_b += d;
        }
        d_hidden.row(row).noalias() += d * params.head_w.transpose();
      }
    }
    parts.ce /= parts.ce_count;
  }

  if (parts.point_count > 0) {
    const CodecConfig codec = params.config.codec();
    const double w = weight / parts.point_count;
    for (int k = 0; k < parts.point_count; ++k) {
      const int row = routing.point_rows[static_cast<std::size_t>(k)];
      const int idx = routing.point_index[static_cast<std::size_t>(k)];
      if (idx >= static_cast<int>(sample.future.size())) throw std::out_of_range("point target beyond future");
      DecodeCache dc;
      const Waypoint pred = decode_point(params.point_head, codec, hidden.row(row), grads ? &dc : nullptr);
      const Waypoint gt = sample.future[static_cast<std::size_t>(idx)];
      parts.point += std::abs(pred.x - gt.x) + std::abs(pred.y - gt.y);
      if (grads) {
        auto sgn = [](double v) { return static_cast<double>((v > 0) - (v < 0)); };
        const Waypoint d_xy{w * sgn(pred.x - gt.x), w * sgn(pred.y - gt.y)};
        d_hidden.row(row) += decode_point_backward(params.point_head, codec, dc, d_xy,
                                                   trainable.has(ParamGroup::kPointHead) ? &grads->point_head : nullptr);
      }
    }
    parts.point /= parts.point_count;
  }
  parts.total = total_loss(parts.ce, parts.point);

  if (grads && trainable.any_below_head()) {
    const Mat d_emb = forward_backward(params, fcache, d_hidden, use_lora, trainable, *grads);
    embed_backward(params, stream, sample, ecache, d_emb, trainable, *grads);
  }
  return parts;
}

void check_finite(const ModelParams& grads, const TrainableSet& trainable) {
  for_each_tensor(grads, [&](const std::string& name, ParamGroup g, const Mat& t) {
    if (trainable.has(g) && !t.allFinite()) throw NonFiniteGradient(name);
  });
}

void adam_step(ModelParams& params, const ModelParams& grads, const TrainableSet& trainable, OptimizerState& state,
               double lr, const AdamConfig& cfg) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  std::vector<const Mat*> grad_list;
  for_each_tensor(grads, [&](const std::string&, ParamGroup, const Mat& g) { grad_list.push_back(&g); });
  std::size_t i = 0;
  for_each_tensor(params, [&](const std::string& name, ParamGroup group, Mat& p) {
    const Mat& g = *grad_list[i++];
    if (!trainable.has(group) || p.size() == 0) return;
    auto [mit, m_new] = state.m.try_emplace(name, Mat::Zero(p.rows(), p.cols()));
    auto [vit, v_new] = state.v.try_emplace(name, Mat::Zero(p.rows(), p.cols()));
    Mat& m = mit->second;
    Mat& v = vit->second;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    const auto update = (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps);
    p.array() -= lr * (update + cfg.weight_decay * p.array());
  });
}

double lr_at(std::int64_t step, std::int64_t total, double peak, double warmup_frac) {
  if (total <= 0) return 0.0;
  const std::int64_t warm =
      warmup_frac > 0.0 ? std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(warmup_frac * total))) : 0;
  if (step <= warm) return peak * static_cast<double>(step) / static_cast<double>(warm);
  if (warm >= total) return peak;
  const double progress = static_cast<double>(step - warm) / static_cast<double>(total - warm);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

Checkpoint fresh_checkpoint(ModelConfig config, const Vocabulary& vocab) {
  config.vocab_size = vocab.size();
  Checkpoint c;
  c.params = init_params(config);
  c.vocab = vocab;
  return c;
}

Checkpoint with_query_slots(const Checkpoint& ckpt, int n, std::uint64_t seed) {
  if (n < 0) throw std::invalid_argument("query slot count must be >= 0");
  Checkpoint out = ckpt;
  if (out.params.config.query_slots == n) return out;
  out.params.config.query_slots = n;
  Rng rng(mix_seed(seed, 0x51));
  out.params.queries.resize(n, out.params.config.width);
  for (Eigen::Index i = 0; i < out.params.queries.size(); ++i) out.params.queries.data()[i] = rng.normal();
  out.optimizer.m.erase("queries");
  out.optimizer.v.erase("queries");
  return out;
}

std::vector<Sample> with_min_future(const std::vector<Sample>& samples, int T) {
  std::vector<Sample> out;
  for (const auto& s : samples) {
    if (static_cast<int>(s.future.size()) >= T) out.push_back(s);
  }
  return out;
}

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian hosts");

constexpr char kMagic[8] = {'A', 'T', 'R', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::string& out, T v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_tensor(std::string& out, const std::string& name, const Mat& t) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put<std::uint32_t>(out, 2);
  put<std::uint64_t>(out, static_cast<std::uint64_t>(t.rows()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(t.cols()));
  out.append(reinterpret_cast<const char*>(t.data()), static_cast<std::size_t>(t.size()) * sizeof(double));
}

class Reader {
 public:
  explicit Reader(const std::string& s) : s_(s) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, s_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string out = s_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  bool done() const { return pos_ == s_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > s_.size()) throw std::runtime_error("checkpoint truncated");
  }
  const std::string& s_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header;
  header["format"] = "autotraces-checkpoint";
  header["config"] = ckpt.params.config;
  header["stage"] = ckpt.stage;
  header["optimizer_step"] = ckpt.optimizer.step;
  header["data_seed"] = ckpt.data_seed;
  header["epoch"] = ckpt.epoch;
  header["vocab"] = ckpt.vocab.tokens();
  const std::string hj = header.dump();

  std::vector<std::pair<std::string, const Mat*>> tensors;
  for_each_tensor(ckpt.params, [&](const std::string& name, ParamGroup, const Mat& t) { tensors.emplace_back(name, &t); });
  for (const auto& [name, t] : ckpt.optimizer.m) tensors.emplace_back("adam.m/" + name, &t);
  for (const auto& [name, t] : ckpt.optimizer.v) tensors.emplace_back("adam.v/" + name, &t);

  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, hj.size());
  out += hj;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) put_tensor(out, name, *t);
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) throw std::runtime_error("not a checkpoint file");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  const auto header = nlohmann::json::parse(r.bytes(r.get<std::uint64_t>()));

  Checkpoint c;
  c.vocab = Vocabulary(header.at("vocab").get<std::vector<std::string>>());
  c.params = zeros_like(init_params(header.at("config").get<ModelConfig>()));
  c.stage = header.at("stage").get<int>();
  c.optimizer.step = header.at("optimizer_step").get<std::int64_t>();
  c.data_seed = header.at("data_seed").get<std::uint64_t>();
  c.epoch = header.at("epoch").get<std::int64_t>();

  std::map<std::string, Mat*> slots;
  for_each_tensor(c.params, [&](const std::string& name, ParamGroup, Mat& t) { slots[name] = &t; });
  std::size_t model_tensors = 0;
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::string name = r.bytes(r.get<std::uint32_t>());
    if (r.get<std::uint32_t>() != 2) throw std::runtime_error("tensor " + name + " is not 2-D");
    const auto rows = static_cast<Eigen::Index>(r.get<std::uint64_t>());
    const auto cols = static_cast<Eigen::Index>(r.get<std::uint64_t>());
    Mat t(rows, cols);
    const std::string raw = r.bytes(static_cast<std::size_t>(rows * cols) * sizeof(double));
    std::memcpy(t.data(), raw.data(), raw.size());
    if (name.rfind("adam.m/", 0) == 0) {
      c.optimizer.m[name.substr(7)] = std::move(t);
    } else if (name.rfind("adam.v/", 0) == 0) {
      c.optimizer.v[name.substr(7)] = std::move(t);
    } else {
      const auto it = slots.find(name);
      if (it == slots.end()) throw std::runtime_error("unknown tensor " + name);
      if (it->second->rows() != rows || it->second->cols() != cols) throw std::runtime_error("shape mismatch for " + name);
      *it->second = std::move(t);
      ++model_tensors;
    }
  }
  if (model_tensors != slots.size()) throw std::runtime_error("checkpoint is missing model tensors");
  if (!r.done()) throw std::runtime_error("trailing bytes in checkpoint");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const std::string bytes = serialize_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

StageConfig StageConfig::stage1() {
  StageConfig c;
  c.stage = 1;
  c.objective = Objective::kCot;
  c.epochs = 2;
  c.lr = 2e-5;
  return c;
}

StageConfig StageConfig::stage2() {
  StageConfig c;
  c.stage = 2;
  c.objective = Objective::kForecast;
  c.epochs = 10;
  c.lr = 2e-4;
  return c;
}

TrainableSet StageConfig::trainable_set() const {
  if (trainable) return *trainable;
  switch (objective) {
    case Objective::kCot:
      return TrainableSet::stage1();
    case Objective::kForecast:
      return TrainableSet::stage2();
    case Objective::kSinglePass:
      return TrainableSet::single_pass();
    case Objective::kTextBaseline:
      return TrainableSet::text_baseline();
  }
  return {};
}

void StageConfig::validate() const {
  if (stage != 1 && stage != 2) throw std::invalid_argument("stage must be 1 or 2");
  if (!(lr >= 0.0)) throw std::invalid_argument("lr must be non-negative");
  if (!(warmup_frac >= 0.0 && warmup_frac < 1.0)) throw std::invalid_argument("warmup_frac must be in [0, 1)");
  if (epochs < 0 || batch_size < 1) throw std::invalid_argument("invalid epochs/batch_size");
}

namespace {

std::string csv_row(const StepLog& s) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%lld,%d,%.17g,%.17g,%.17g,%.17g\n", static_cast<long long>(s.step), s.stage, s.lr,
                s.ce, s.point, s.total);
  return buf;
}

}  // namespace

Checkpoint train_stage(const StageConfig& cfg, const std::vector<Sample>& dataset, const Checkpoint& init) {
  cfg.validate();
  if (cfg.stage == 2 && init.stage < 1 && !cfg.from_scratch) {
    throw std::invalid_argument("stage 2 needs a stage-1 checkpoint (or from_scratch)");
  }
  if (dataset.empty()) throw std::invalid_argument("empty training set");

  std::vector<Sample> data = dataset;
  if (cfg.objective == Objective::kCot) annotate_samples(data);

  Checkpoint ckpt = init;
  if (ckpt.stage != cfg.stage) ckpt.optimizer = {};
  const TrainableSet trainable = cfg.trainable_set();
  const int query_slots = ckpt.params.config.query_slots;

  std::ofstream log;
  if (!cfg.log_csv.empty()) {
    log.open(cfg.log_csv, std::ios::binary | std::ios::trunc);
    if (!log) throw std::runtime_error("cannot write " + cfg.log_csv.string());
    log << "step,stage,lr,ce,point,total\n";
  }

  const std::int64_t per_epoch = (static_cast<std::int64_t>(data.size()) + cfg.batch_size - 1) / cfg.batch_size;
  const std::int64_t total_steps = per_epoch * cfg.epochs;
  std::int64_t step = 0;
  ModelParams grads = zeros_like(ckpt.params);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);

    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      const double weight = 1.0 / static_cast<double>(end - begin);
      for_each_tensor(grads, [](const std::string&, ParamGroup, Mat& t) { t.setZero(); });
      double ce = 0.0, point = 0.0;
      for (std::size_t k = begin; k < end; ++k) {
        const Sample& s = data[order[k]];
        const TokenStream stream = training_stream(s, ckpt.vocab, cfg.objective, query_slots);
        const LossParts parts = sample_loss(ckpt.params, stream, s, cfg.use_lora, trainable, weight, &grads);
        ce += weight * parts.ce;
        point += weight * parts.point;
      }
      const double total = total_loss(ce, point);
      if (!std::isfinite(total)) {
        throw TrainingDiverged("non-finite loss at step " + std::to_string(step + 1), ckpt);
      }
      if (total != ce + point) throw std::logic_error("loss identity violated");
      check_finite(grads, trainable);
      ++step;
      const double lr = lr_at(step, total_steps, cfg.lr, cfg.warmup_frac);
      adam_step(ckpt.params, grads, trainable, ckpt.optimizer, lr, cfg.adam);

      const StepLog entry{step, cfg.stage, lr, ce, point, total};
      if (log) log << csv_row(entry) << std::flush;
      if (cfg.on_step) cfg.on_step(entry);
    }
    ckpt.epoch = epoch + 1;
  }
  ckpt.stage = cfg.stage;
  ckpt.data_seed = cfg.seed;
  return ckpt;
}

Vocabulary vocab_for_dataset(const std::vector<Sample>& samples) {
  std::vector<std::string> corpus;
  corpus.reserve(samples.size() * 2);
  for (const auto& s : samples) {
    corpus.push_back(render_prompt(s, static_cast<int>(s.future.size()), PromptMode::kCot));
    corpus.push_back(render_prompt(s, static_cast<int>(s.future.size()), PromptMode::kForecast));
    if (s.cot_text) {
      corpus.push_back(*s.cot_text);
    } else {
      corpus.push_back(template_cot(s, decompose(cot_trajectory(s))).reasoning);
    }
  }
  return build_vocab(corpus);
}

}  // namespace autotraces

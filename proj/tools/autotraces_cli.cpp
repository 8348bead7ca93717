// Command-line front end: dataset, cot, train, generate, eval, ablate, params-count.
#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "autotraces/cot.hpp"
#include "autotraces/dataset.hpp"
#include "autotraces/eval.hpp"
#include "autotraces/generate.hpp"
#include "autotraces/sim.hpp"
#include "autotraces/train.hpp"

namespace fs = std::filesystem;
using namespace autotraces;
using nlohmann::json;

namespace {

struct DatasetArgs {
  std::string family = "indoor";
  int episodes = 100;
  int t_min = 5;
  int t_max = 10;
  std::uint64_t seed = 0;
  std::string out = ".";
  std::string name;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DatasetArgs, family, episodes, t_min, t_max, seed, out, name)

struct CotArgs {
  std::string in;
  std::string out = ".";
  std::string name;
  std::string provider = "template";
  std::string endpoint;
  int timeout_ms = 10000;
  int max_in_flight = 4;
  int window = 3;
  double theta_s_deg = 5.0;
  std::uint64_t seed = 0;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CotArgs, in, out, name, provider, endpoint, timeout_ms, max_in_flight,
                                                window, theta_s_deg, seed)

struct ModelArgs {
  int width = 128;
  int layers = 4;
  int heads = 4;
  int lora_rank = 4;
  double lora_alpha = 4.0;
  bool alibi = true;
  bool codec_include_input = true;
  int vocab_size = 0;

  ModelConfig config(std::uint64_t seed) const {
    ModelConfig c;
    c.width = width;
    c.n_layers = layers;
    c.n_heads = heads;
    c.lora_rank = lora_rank;
    c.lora_alpha = lora_alpha;
    c.alibi = alibi;
    c.codec_include_input = codec_include_input;
    c.vocab_size = vocab_size;
    c.seed = seed;
    return c;
  }
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelArgs, width, layers, heads, lora_rank, lora_alpha, alibi,
                                                codec_include_input, vocab_size)

struct TrainArgs {
  std::string data;
  int stage = 2;
  std::string objective;  // default: cot for stage 1, forecast for stage 2
  std::string init;
  bool from_scratch = false;
  int epochs = -1;
  int batch_size = 4;
  double lr = -1.0;
  double warmup = 0.01;
  double weight_decay = 0.0;
  int query_slots = 10;
  bool no_lora = false;
  std::uint64_t seed = 0;
  std::string out = ".";
  std::string name;
  ModelArgs model;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainArgs, data, stage, objective, init, from_scratch, epochs,
                                                batch_size, lr, warmup, weight_decay, query_slots, no_lora, seed, out,
                                                name, model)

struct GenerateArgs {
  std::string checkpoint;
  std::string data;
  int horizon = 10;
  int max_tokens = 0;
  std::string mode = "autoregressive";  // | single-pass | text-baseline
  int workers = 1;
  std::uint64_t seed = 0;
  std::string out = ".";
  std::string name = "generations.jsonl";
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GenerateArgs, checkpoint, data, horizon, max_tokens, mode, workers,
                                                seed, out, name)

struct CountArgs {
  std::string checkpoint;
  std::uint64_t seed = 0;
  ModelArgs model;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CountArgs, checkpoint, seed, model)

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path);
  return json::parse(in, nullptr, true, true);
}

// `--config FILE` is resolved before flag parsing so that flags override it.
std::string find_config(int argc, char** argv) {
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--config") return argv[i + 1];
  }
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a.rfind("--config=", 0) == 0) return a.substr(9);
  }
  return {};
}

void add_model_options(CLI::App* app, ModelArgs& m) {
  app->add_option("--width", m.width, "model width D");
  app->add_option("--layers", m.layers, "decoder layers");
  app->add_option("--heads", m.heads, "attention heads");
  app->add_option("--lora-rank", m.lora_rank, "LoRA rank r (0 disables)");
  app->add_option("--lora-alpha", m.lora_alpha, "LoRA alpha");
  app->add_option("--alibi", m.alibi, "linear recency bias on attention (true/false)");
  app->add_option("--codec-include-input", m.codec_include_input, "append raw coordinates to Fourier features");
}

fs::path prepare_out(const std::string& out) {
  fs::path dir(out);
  fs::create_directories(dir);
  return dir;
}

int run_dataset(const DatasetArgs& a) {
  const auto samples = generate_samples(a.family, a.seed, a.episodes, a.t_min, a.t_max);
  const fs::path path = prepare_out(a.out) / (a.name.empty() ? a.family + ".jsonl" : a.name);
  write_dataset(samples, path);
  std::printf("wrote %zu samples to %s\n", samples.size(), path.string().c_str());
  return 0;
}

int run_cot(const CotArgs& a) {
  if (a.in.empty()) throw std::invalid_argument("cot needs --in");
  AnnotateOptions opts;
  if (a.provider == "template") {
    opts.provider = CotProvider::kTemplate;
  } else if (a.provider == "remote") {
    opts.provider = CotProvider::kRemote;
  } else {
    throw std::invalid_argument("unknown provider: " + a.provider);
  }
  opts.remote.endpoint = a.endpoint;
  opts.remote.timeout = std::chrono::milliseconds(a.timeout_ms);
  opts.max_in_flight = a.max_in_flight;
  opts.curvature.window = a.window;
  opts.curvature.theta_s = a.theta_s_deg * std::numbers::pi / 180.0;
  const fs::path path = prepare_out(a.out) / (a.name.empty() ? fs::path(a.in).stem().string() + "_cot.jsonl" : a.name);
  const std::size_t n = annotate_dataset(a.in, path, opts);
  std::printf("annotated %zu samples into %s\n", n, path.string().c_str());
  return 0;
}

int run_train(const TrainArgs& a) {
  if (a.data.empty()) throw std::invalid_argument("train needs --data");
  StageConfig sc = a.stage == 1 ? StageConfig::stage1() : StageConfig::stage2();
  sc.stage = a.stage;
  if (!a.objective.empty()) sc.objective = objective_from_string(a.objective);
  if (a.epochs >= 0) sc.epochs = a.epochs;
  if (a.lr >= 0) sc.lr = a.lr;
  sc.batch_size = a.batch_size;
  sc.warmup_frac = a.warmup;
  sc.adam.weight_decay = a.weight_decay;
  sc.seed = a.seed;
  sc.use_lora = !a.no_lora;
  sc.from_scratch = a.from_scratch;

  std::vector<Sample> data = read_dataset(a.data);
  Checkpoint init;
  if (!a.init.empty()) {
    init = load_checkpoint(a.init);
  } else {
    init = fresh_checkpoint(a.model.config(a.seed), vocab_for_dataset(data));
  }
  if (sc.objective == Objective::kSinglePass) {
    init = with_query_slots(init, a.query_slots, a.seed);
    const std::size_t before = data.size();
    data = with_min_future(data, a.query_slots);
    if (data.size() != before) {
      spdlog::warn("single-pass training keeps {} of {} samples (future >= {})", data.size(), before, a.query_slots);
    }
  }
  const fs::path dir = prepare_out(a.out);
  const std::string name =
      a.name.empty() ? "stage" + std::to_string(a.stage) + "_" + to_string(sc.objective) + ".ckpt" : a.name;
  sc.log_csv = dir / (fs::path(name).stem().string() + "_loss.csv");
  const Checkpoint out = train_stage(sc, data, init);
  save_checkpoint(out, dir / name);
  std::printf("saved %s (loss log %s)\n", (dir / name).string().c_str(), sc.log_csv.string().c_str());
  return 0;
}

int run_generate(const GenerateArgs& a) {
  if (a.checkpoint.empty() || a.data.empty()) throw std::invalid_argument("generate needs --checkpoint and --data");
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const std::vector<Sample> samples = read_dataset(a.data);
  std::vector<GenResult> results;
  if (a.mode == "autoregressive") {
    GenOptions opts;
    opts.max_tokens = a.max_tokens;
    results = generate_batch(ck.params, ck.vocab, samples, a.horizon, opts, a.workers).results;
  } else if (a.mode == "text-baseline") {
    GenOptions opts;
    opts.max_tokens = a.max_tokens;
    for (const auto& s : samples) results.push_back(generate_text_baseline(ck.params, ck.vocab, s, a.horizon, opts));
  } else if (a.mode == "single-pass") {
    for (const auto& s : samples) {
      GenResult r;
      r.waypoints = single_pass_decode(ck.params, ck.vocab, s, a.horizon);
      r.requested_T = a.horizon;
      r.compliant = true;
      r.stop_reason = StopReason::kEos;
      results.push_back(std::move(r));
    }
  } else {
    throw std::invalid_argument("unknown generation mode: " + a.mode);
  }
  const fs::path path = prepare_out(a.out) / a.name;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  int compliant = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    json w = json::array();
    for (const auto& p : r.waypoints) w.push_back({p.x, p.y});
    nlohmann::ordered_json line{{"sample_id", samples[i].sample_id}, {"requested_T", r.requested_T},
                                {"emitted_tokens", r.emitted_tokens}, {"compliant", r.compliant},
                                {"stop_reason", to_string(r.stop_reason)}, {"waypoints", w}};
    out << line.dump() << "\n";
    compliant += r.compliant;
  }
  std::printf("wrote %zu generations to %s (%d compliant)\n", results.size(), path.string().c_str(), compliant);
  return 0;
}

void add_experiment_options(CLI::App* app, ExperimentConfig& c, std::vector<std::string>& benches, std::string& out,
                            std::string& ckpt, std::string& no_cot, std::string& sp, std::string& text) {
  app->add_option("--benchmark", benches, "NAME=PATH test set (repeatable; replaces the config list)");
  app->add_option("--horizons", c.horizons, "horizons, ascending");
  app->add_option("--checkpoint", ckpt, "full model checkpoint");
  app->add_option("--no-cot-checkpoint", no_cot, "stage-2-only checkpoint");
  app->add_option("--single-pass-checkpoint", sp, "single-pass variant checkpoint");
  app->add_option("--text-baseline-checkpoint", text, "text-coordinate baseline checkpoint");
  app->add_flag("--no-cot", c.no_cot, "also evaluate the no-CoT variant");
  app->add_flag("--single-pass", c.single_pass, "also evaluate the single-pass variant");
  app->add_flag("--text-baseline", c.text_baseline, "also evaluate the text-coordinate baseline");
  app->add_option("--trunc-from", c.trunc_from, "truncate-from-T protocol (0 disables)");
  app->add_option("--max-samples", c.max_samples, "per-benchmark subset size (0 = all)");
  app->add_option("--workers", c.workers, "generation threads (1 = deterministic single-threaded)");
  app->add_option("--seed", c.seed, "subset seed");
  app->add_option("--out", out, "output directory");
}

void apply_experiment_overrides(ExperimentConfig& c, const std::vector<std::string>& benches, const std::string& out,
                                const std::string& ckpt, const std::string& no_cot, const std::string& sp,
                                const std::string& text) {
  if (!benches.empty()) {
    c.benchmarks.clear();
    for (const auto& b : benches) {
      const auto eq = b.find('=');
      if (eq == std::string::npos || eq == 0) throw std::invalid_argument("--benchmark expects NAME=PATH, got " + b);
      c.benchmarks.emplace_back(b.substr(0, eq), b.substr(eq + 1));
    }
  }
  if (!out.empty()) c.out_dir = out;
  if (!ckpt.empty()) c.checkpoint = ckpt;
  if (!no_cot.empty()) c.no_cot_checkpoint = no_cot;
  if (!sp.empty()) c.single_pass_checkpoint = sp;
  if (!text.empty()) c.text_baseline_checkpoint = text;
}

int run(int argc, char** argv) {
  CLI::App app{"Trajectory forecasting with point tokens: data, training and evaluation"};
  app.require_subcommand(1);
  std::string config_path;

  DatasetArgs dataset;
  CotArgs cot;
  TrainArgs train;
  GenerateArgs gen;
  ExperimentConfig exp;
  CountArgs count;

  // Config defaults first; flags bound below override them.
  const std::string config_file = find_config(argc, argv);
  const std::string sub = argc > 1 ? argv[1] : "";
  if (!config_file.empty()) {
    const json j = read_json_file(config_file);
    if (sub == "dataset") dataset = j.get<DatasetArgs>();
    if (sub == "cot") cot = j.get<CotArgs>();
    if (sub == "train") train = j.get<TrainArgs>();
    if (sub == "generate") gen = j.get<GenerateArgs>();
    if (sub == "eval" || sub == "ablate") exp = j.get<ExperimentConfig>();
    if (sub == "params-count") count = j.get<CountArgs>();
  }

  auto* d = app.add_subcommand("dataset", "simulate episodes and write a JSONL dataset");
  d->add_option("--config", config_path, "JSON config");
  d->add_option("--family", dataset.family, "indoor | outdoor");
  d->add_option("--episodes", dataset.episodes, "number of episodes");
  d->add_option("--t-min", dataset.t_min, "minimum future length");
  d->add_option("--t-max", dataset.t_max, "maximum future length");
  d->add_option("--seed", dataset.seed, "base seed");
  d->add_option("--out", dataset.out, "output directory");
  d->add_option("--name", dataset.name, "file name (default <family>.jsonl)");

  auto* c = app.add_subcommand("cot", "annotate a dataset with chain-of-thought text");
  c->add_option("--config", config_path, "JSON config");
  c->add_option("--in", cot.in, "input JSONL");
  c->add_option("--out", cot.out, "output directory");
  c->add_option("--name", cot.name, "output file name");
  c->add_option("--provider", cot.provider, "template | remote");
  c->add_option("--endpoint", cot.endpoint, "remote provider URL (http://host:port/path)");
  c->add_option("--timeout-ms", cot.timeout_ms, "remote timeout");
  c->add_option("--max-in-flight", cot.max_in_flight, "concurrent remote requests");
  c->add_option("--window", cot.window, "turning-angle window");
  c->add_option("--theta-s-deg", cot.theta_s_deg, "straight threshold in degrees");
  c->add_option("--seed", cot.seed, "unused; accepted for uniformity");

  auto* t = app.add_subcommand("train", "run one training stage");
  t->add_option("--config", config_path, "JSON config");
  t->add_option("--data", train.data, "training JSONL");
  t->add_option("--stage", train.stage, "1 | 2");
  t->add_option("--objective", train.objective, "cot | forecast | single_pass | text_baseline");
  t->add_option("--init", train.init, "checkpoint to start from");
  t->add_flag("--from-scratch", train.from_scratch, "allow stage 2 without a stage-1 checkpoint");
  t->add_option("--epochs", train.epochs, "epochs (default per stage)");
  t->add_option("--batch-size", train.batch_size, "batch size");
  t->add_option("--lr", train.lr, "peak learning rate (default per stage)");
  t->add_option("--warmup", train.warmup, "warmup fraction");
  t->add_option("--weight-decay", train.weight_decay, "decoupled weight decay");
  t->add_option("--query-slots", train.query_slots, "query rows for the single-pass objective");
  t->add_flag("--no-lora", train.no_lora, "disable LoRA adapters");
  t->add_option("--seed", train.seed, "model and shuffle seed");
  t->add_option("--out", train.out, "output directory");
  t->add_option("--name", train.name, "checkpoint file name");
  add_model_options(t, train.model);

  auto* g = app.add_subcommand("generate", "greedy generation over a dataset");
  g->add_option("--config", config_path, "JSON config");
  g->add_option("--checkpoint", gen.checkpoint, "checkpoint");
  g->add_option("--data", gen.data, "JSONL samples");
  g->add_option("--horizon", gen.horizon, "requested waypoint count");
  g->add_option("--max-tokens", gen.max_tokens, "token budget (default horizon + 16)");
  g->add_option("--mode", gen.mode, "autoregressive | single-pass | text-baseline");
  g->add_option("--workers", gen.workers, "threads");
  g->add_option("--seed", gen.seed, "unused; decoding is greedy");
  g->add_option("--out", gen.out, "output directory");
  g->add_option("--name", gen.name, "output file name");

  std::vector<std::string> benches;
  std::string out_dir, ckpt, no_cot, sp, text;
  auto* e = app.add_subcommand("eval", "evaluate checkpoints and baselines");
  e->add_option("--config", config_path, "JSON experiment config");
  add_experiment_options(e, exp, benches, out_dir, ckpt, no_cot, sp, text);
  auto* ab = app.add_subcommand("ablate", "tokenization/CoT and decoding ablations");
  ab->add_option("--config", config_path, "JSON experiment config");
  add_experiment_options(ab, exp, benches, out_dir, ckpt, no_cot, sp, text);

  auto* pc = app.add_subcommand("params-count", "report the parameter count of a model configuration");
  pc->add_option("--config", config_path, "JSON config");
  pc->add_option("--checkpoint", count.checkpoint, "count an existing checkpoint instead");
  pc->add_option("--vocab-size", count.model.vocab_size, "vocabulary size (default: the 2048 cap)");
  pc->add_option("--seed", count.seed, "init seed");
  add_model_options(pc, count.model);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  }

  if (*d) return run_dataset(dataset);
  if (*c) return run_cot(cot);
  if (*t) return run_train(train);
  if (*g) return run_generate(gen);
  if (*e || *ab) {
    apply_experiment_overrides(exp, benches, out_dir, ckpt, no_cot, sp, text);
    if (*e) {
      const auto rows = run_eval(exp);
      std::cout << report_table(rows);
    } else {
      const auto rep = run_ablations(exp);
      std::cout << report_table(rep.tokenization) << "\n" << report_table(rep.decoding) << "\n";
      for (const auto& line : rep.trend) std::cout << line << "\n";
    }
    return 0;
  }
  if (*pc) {
    std::size_t n = 0;
    if (!count.checkpoint.empty()) {
      n = parameter_count(load_checkpoint(count.checkpoint).params);
    } else {
      ModelConfig mc = count.model.config(count.seed);
      if (mc.vocab_size <= 0) mc.vocab_size = kMaxVocab;
      n = parameter_count(init_params(mc));
    }
    std::printf("%zu\n", n);
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 1;
  }
}

#include "autotraces/eval.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include "autotraces/dataset.hpp"
#include "autotraces/rng.hpp"
#include "autotraces/train.hpp"

namespace autotraces {

std::vector<Waypoint> baseline_const_velocity(const Sample& sample, int T) {
  const auto& h = sample.history.points;
  if (h.size() < 2) throw std::invalid_argument("constant velocity needs at least 2 history points");
  if (T < 0) throw std::invalid_argument("negative horizon");
  const Waypoint step = h.back() - h[h.size() - 2];
  std::vector<Waypoint> out;
  out.reserve(static_cast<std::size_t>(T));
  Waypoint p = h.back();
  for (int k = 0; k < T; ++k) {
    p = p + step;
    out.push_back(p);
  }
  return out;
}

namespace {

// Applies fn to every index with `workers` threads in a strided split; results
// keep input order.
template <class F>
std::vector<GenResult> parallel_results(std::size_t n, int workers, F&& fn) {
  std::vector<GenResult> out(n);
  if (n == 0) return out;
  if (workers <= 0) workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  workers = std::min<int>(workers, static_cast<int>(n));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  auto run = [&](int w) {
    try {
      for (std::size_t i = static_cast<std::size_t>(w); i < n; i += static_cast<std::size_t>(workers)) out[i] = fn(i);
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
  return out;
}

GenResult fixed_result(std::vector<Waypoint> waypoints, int requested_T) {
  GenResult r;
  r.waypoints = std::move(waypoints);
  r.requested_T = requested_T;
  r.compliant = static_cast<int>(r.waypoints.size()) >= requested_T;
  r.stop_reason = StopReason::kEos;
  return r;
}

std::string fmt_opt(const std::optional<double>& v) {
  if (!v) return "";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", *v);
  return buf;
}

std::string fmt(double v) { return fmt_opt(v); }

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};

}  // namespace

std::vector<ReportRow> evaluate_methods(const std::vector<Method>& methods, const std::vector<Benchmark>& benchmarks,
                                        const std::vector<int>& horizons) {
  std::vector<ReportRow> rows;
  for (const auto& method : methods) {
    for (const auto& bench : benchmarks) {
      for (int H : horizons) {
        std::vector<Sample> usable;
        for (const auto& s : bench.samples) {
          if (static_cast<int>(s.future.size()) >= H) usable.push_back(s);
        }
        ReportRow row;
        row.method = method.name;
        row.benchmark = bench.name;
        row.horizon = H;
        row.n = static_cast<int>(usable.size());
        if (usable.empty()) {
          spdlog::warn("benchmark {} has no samples with {} future points", bench.name, H);
          rows.push_back(row);
          continue;
        }
        const MethodRun run = method.run(usable, H);
        if (run.results.size() != usable.size()) throw std::logic_error("method " + method.name + " dropped samples");
        int compliant = 0;
        double tokens = 0.0, l2 = 0.0, l1 = 0.0;
        for (std::size_t i = 0; i < usable.size(); ++i) {
          const GenResult& r = run.results[i];
          tokens += r.emitted_tokens;
          if (!r.compliant || static_cast<int>(r.waypoints.size()) < H) continue;
          ++compliant;
          const std::span<const Waypoint> pred(r.waypoints.data(), static_cast<std::size_t>(H));
          const std::span<const Waypoint> gt(usable[i].future.points.data(), static_cast<std::size_t>(H));
          l2 += l2_metric(pred, gt);
          l1 += l1_metric(pred, gt);
        }
        row.ieacc = static_cast<double>(compliant) / row.n;
        if (run.emits_tokens) row.tpr = tokens / row.n;
        if (compliant > 0) {
          row.l2 = l2 / compliant;
          row.l1 = l1 / compliant;
        }
        rows.push_back(row);
      }
    }
  }
  return rows;
}

std::string report_csv(const std::vector<ReportRow>& rows) {
  std::string out = std::string(kReportHeader) + "\n";
  for (const auto& r : rows) {
    out += r.method + "," + r.benchmark + "," + std::to_string(r.horizon) + "," + fmt_opt(r.l2) + "," +
           fmt_opt(r.l1) + "," + fmt(r.ieacc) + "," + fmt_opt(r.tpr) + "," + std::to_string(r.n) + "\n";
  }
  return out;
}

std::string report_table(const std::vector<ReportRow>& rows) {
  const std::vector<std::string> header{"method", "benchmark", "horizon", "l2", "l1", "ieacc", "tpr", "n"};
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : rows) {
    auto dash = [](const std::optional<double>& v) { return v ? fmt_opt(v) : std::string("-"); };
    cells.push_back({r.method, r.benchmark, std::to_string(r.horizon), dash(r.l2), dash(r.l1), fmt(r.ieacc),
                     dash(r.tpr), std::to_string(r.n)});
  }
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) {
    width[c] = header[c].size();
    for (const auto& row : cells) width[c] = std::max(width[c], row[c].size());
  }
  auto line = [&](const std::vector<std::string>& row) {
    std::string s;
    for (std::size_t c = 0; c < row.size(); ++c) {
      const std::string pad(width[c] - row[c].size(), ' ');
      s += c < 3 ? row[c] + pad : pad + row[c];  // text left, numbers right
      if (c + 1 < row.size()) s += "  ";
    }
    return s + "\n";
  };
  std::string out = line(header);
  std::size_t total = 0;
  for (auto w : width) total += w;
  out += std::string(total + 2 * (width.size() - 1), '-') + "\n";
  for (const auto& row : cells) out += line(row);
  return out;
}

void ExperimentConfig::validate() const {
  if (benchmarks.empty()) throw std::invalid_argument("experiment needs at least one benchmark");
  if (horizons.empty()) throw std::invalid_argument("experiment needs at least one horizon");
  for (std::size_t i = 0; i < horizons.size(); ++i) {
    if (horizons[i] < 1) throw std::invalid_argument("horizons must be >= 1");
    if (i > 0 && horizons[i] <= horizons[i - 1]) throw std::invalid_argument("horizons must be strictly ascending");
  }
  if (trunc_from < 0 || max_samples < 0 || workers < 0) throw std::invalid_argument("negative experiment setting");
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  nlohmann::json benches = nlohmann::json::array();
  for (const auto& [name, path] : c.benchmarks) benches.push_back({{"name", name}, {"path", path.string()}});
  j = nlohmann::json{{"benchmarks", benches},
                     {"horizons", c.horizons},
                     {"checkpoint", c.checkpoint.string()},
                     {"no_cot_checkpoint", c.no_cot_checkpoint.string()},
                     {"single_pass_checkpoint", c.single_pass_checkpoint.string()},
                     {"text_baseline_checkpoint", c.text_baseline_checkpoint.string()},
                     {"no_cot", c.no_cot},
                     {"single_pass", c.single_pass},
                     {"text_baseline", c.text_baseline},
                     {"const_velocity", c.const_velocity},
                     {"trunc_from", c.trunc_from},
                     {"max_samples", c.max_samples},
                     {"workers", c.workers},
                     {"seed", c.seed},
                     {"out_dir", c.out_dir.string()}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  const ExperimentConfig d;
  c.benchmarks.clear();
  if (j.contains("benchmarks")) {
    for (const auto& b : j.at("benchmarks")) {
      c.benchmarks.emplace_back(b.at("name").get<std::string>(), b.at("path").get<std::string>());
    }
  }
  c.horizons = j.value("horizons", d.horizons);
  c.checkpoint = j.value("checkpoint", std::string());
  c.no_cot_checkpoint = j.value("no_cot_checkpoint", std::string());
  c.single_pass_checkpoint = j.value("single_pass_checkpoint", std::string());
  c.text_baseline_checkpoint = j.value("text_baseline_checkpoint", std::string());
  c.no_cot = j.value("no_cot", d.no_cot);
  c.single_pass = j.value("single_pass", d.single_pass);
  c.text_baseline = j.value("text_baseline", d.text_baseline);
  c.const_velocity = j.value("const_velocity", d.const_velocity);
  c.trunc_from = j.value("trunc_from", d.trunc_from);
  c.max_samples = j.value("max_samples", d.max_samples);
  c.workers = j.value("workers", d.workers);
  c.seed = j.value("seed", d.seed);
  c.out_dir = j.value("out_dir", d.out_dir.string());
}

std::vector<Benchmark> load_benchmarks(const ExperimentConfig& cfg) {
  std::vector<Benchmark> out;
  for (std::size_t b = 0; b < cfg.benchmarks.size(); ++b) {
    const auto& [name, path] = cfg.benchmarks[b];
    if (!std::filesystem::exists(path)) throw std::runtime_error("benchmark file not found: " + path.string());
    std::vector<Sample> samples = read_dataset(path);
    if (cfg.max_samples > 0 && static_cast<int>(samples.size()) > cfg.max_samples) {
      std::vector<std::size_t> idx(samples.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      Rng rng(mix_seed(cfg.seed, b));
      rng.shuffle(idx);
      idx.resize(static_cast<std::size_t>(cfg.max_samples));
      std::sort(idx.begin(), idx.end());
      std::vector<Sample> subset;
      for (auto i : idx) subset.push_back(std::move(samples[i]));
      samples = std::move(subset);
    }
    out.push_back({name, std::move(samples)});
  }
  return out;
}

namespace {

Checkpoint require_checkpoint(const std::filesystem::path& path, const std::string& what) {
  if (path.empty()) throw std::runtime_error("missing " + what + " checkpoint");
  if (!std::filesystem::exists(path)) throw std::runtime_error(what + " checkpoint not found: " + path.string());
  return load_checkpoint(path);
}

std::optional<Checkpoint> optional_checkpoint(const std::filesystem::path& path, const std::string& what) {
  if (path.empty() || !std::filesystem::exists(path)) {
    spdlog::warn("{} checkpoint unavailable ({}); skipping its rows", what, path.empty() ? "not set" : path.string());
    return std::nullopt;
  }
  return load_checkpoint(path);
}

// Methods share the checkpoint through a shared_ptr so the closures stay cheap to copy.
Method autoregressive_method(std::string name, std::shared_ptr<const Checkpoint> ck, int workers, int generate_T = 0) {
  return {std::move(name), [ck, workers, generate_T](const std::vector<Sample>& samples, int H) {
            const int T = std::max(H, generate_T);
            MethodRun run;
            run.results = parallel_results(samples.size(), workers, [&](std::size_t i) {
              return generate(ck->params, ck->vocab, samples[i], T);
            });
            return run;
          }};
}

Method single_pass_method(std::shared_ptr<const Checkpoint> ck, int workers) {
  return {"single-pass", [ck, workers](const std::vector<Sample>& samples, int H) {
            const int fixed = ck->params.config.query_slots;
            MethodRun run;
            run.emits_tokens = false;
            run.results = parallel_results(samples.size(), workers, [&](std::size_t i) {
              if (H > fixed) return fixed_result({}, H);  // cannot produce more than its fixed slots
              return fixed_result(single_pass_decode(ck->params, ck->vocab, samples[i], fixed), H);
            });
            return run;
          }};
}

Method text_baseline_method(std::shared_ptr<const Checkpoint> ck, int workers) {
  return {"text-baseline", [ck, workers](const std::vector<Sample>& samples, int H) {
            MethodRun run;
            run.results = parallel_results(samples.size(), workers, [&](std::size_t i) {
              try {
                return generate_text_baseline(ck->params, ck->vocab, samples[i], H);
              } catch (const std::length_error&) {
                GenResult r;  // serialized prompt plus targets exceed the context
                r.requested_T = H;
                return r;
              }
            });
            return run;
          }};
}

Method const_velocity_method() {
  return {"const-velocity", [](const std::vector<Sample>& samples, int H) {
            MethodRun run;
            run.emits_tokens = false;
            for (const auto& s : samples) run.results.push_back(fixed_result(baseline_const_velocity(s, H), H));
            return run;
          }};
}

std::vector<Series> series_by_method(const std::vector<ReportRow>& rows, const std::string& benchmark) {
  std::vector<Series> out;
  for (const auto& r : rows) {
    if (r.benchmark != benchmark) continue;
    auto it = std::find_if(out.begin(), out.end(), [&](const Series& s) { return s.label == r.method; });
    if (it == out.end()) {
      out.push_back({r.method, {}});
      it = out.end() - 1;
    }
    if (r.l2) it->points.emplace_back(r.horizon, *r.l2);
  }
  return out;
}

}  // namespace

std::vector<ReportRow> run_eval(const ExperimentConfig& cfg) {
  cfg.validate();
  auto full = std::make_shared<const Checkpoint>(require_checkpoint(cfg.checkpoint, "model"));
  const std::vector<Benchmark> benchmarks = load_benchmarks(cfg);

  std::vector<Method> methods{autoregressive_method("autotraces", full, cfg.workers)};
  if (cfg.trunc_from > 0) {
    methods.push_back(autoregressive_method("autotraces-trunc" + std::to_string(cfg.trunc_from), full, cfg.workers,
                                            cfg.trunc_from));
  }
  if (cfg.const_velocity) methods.push_back(const_velocity_method());
  if (cfg.no_cot) {
    if (auto ck = optional_checkpoint(cfg.no_cot_checkpoint, "no-CoT")) {
      methods.push_back(autoregressive_method("no-cot", std::make_shared<const Checkpoint>(std::move(*ck)), cfg.workers));
    }
  }
  if (cfg.single_pass) {
    if (auto ck = optional_checkpoint(cfg.single_pass_checkpoint, "single-pass")) {
      methods.push_back(single_pass_method(std::make_shared<const Checkpoint>(std::move(*ck)), cfg.workers));
    }
  }
  if (cfg.text_baseline) {
    if (auto ck = optional_checkpoint(cfg.text_baseline_checkpoint, "text-baseline")) {
      methods.push_back(text_baseline_method(std::make_shared<const Checkpoint>(std::move(*ck)), cfg.workers));
    }
  }

  const std::vector<ReportRow> rows = evaluate_methods(methods, benchmarks, cfg.horizons);
  std::filesystem::create_directories(cfg.out_dir);
  write_text(cfg.out_dir / "eval_report.csv", report_csv(rows));
  write_text(cfg.out_dir / "eval_report.txt", report_table(rows));

  const int H = cfg.horizons.back();
  for (const auto& bench : benchmarks) {
    std::vector<Sample> shown;
    std::vector<std::vector<Waypoint>> preds;
    for (const auto& s : bench.samples) {
      if (static_cast<int>(s.future.size()) < H) continue;
      shown.push_back(s);
      preds.push_back(generate(full->params, full->vocab, s, H).waypoints);
      if (shown.size() == 4) break;
    }
    if (!shown.empty()) {
      write_text(cfg.out_dir / ("trajectories_" + bench.name + ".svg"),
                 svg_trajectories(bench.name + ", horizon " + std::to_string(H), shown, preds));
    }
  }
  return rows;
}

AblationReport run_ablations(const ExperimentConfig& cfg) {
  cfg.validate();
  auto full = std::make_shared<const Checkpoint>(require_checkpoint(cfg.checkpoint, "model"));
  const std::vector<Benchmark> benchmarks = load_benchmarks(cfg);

  std::vector<Method> tokenization{autoregressive_method("full", full, cfg.workers)};
  if (auto ck = optional_checkpoint(cfg.no_cot_checkpoint, "no-CoT")) {
    tokenization.push_back(
        autoregressive_method("no-cot", std::make_shared<const Checkpoint>(std::move(*ck)), cfg.workers));
  }
  if (auto ck = optional_checkpoint(cfg.text_baseline_checkpoint, "text-baseline")) {
    tokenization.push_back(text_baseline_method(std::make_shared<const Checkpoint>(std::move(*ck)), cfg.workers));
  }
  std::vector<Method> decoding{autoregressive_method("autoregressive", full, cfg.workers)};
  if (auto ck = optional_checkpoint(cfg.single_pass_checkpoint, "single-pass")) {
    decoding.push_back(single_pass_method(std::make_shared<const Checkpoint>(std::move(*ck)), cfg.workers));
  }

  AblationReport rep;
  rep.tokenization = evaluate_methods(tokenization, benchmarks, cfg.horizons);
  rep.decoding = evaluate_methods(decoding, benchmarks, cfg.horizons);

  for (const auto& bench : benchmarks) {
    // Compare at the largest horizon where both decoders have a score.
    std::optional<double> ar, sp;
    int at = 0;
    for (int H : cfg.horizons) {
      std::optional<double> a, s;
      for (const auto& r : rep.decoding) {
        if (r.benchmark != bench.name || r.horizon != H) continue;
        if (r.method == "autoregressive") a = r.l2;
        if (r.method == "single-pass") s = r.l2;
      }
      if (a && s) {
        ar = a;
        sp = s;
        at = H;
      }
    }
    if (ar && sp) {
      char buf[256];
      std::snprintf(buf, sizeof(buf), "%s horizon %d: autoregressive l2 %.4f, single-pass l2 %.4f, autoregressive <= single-pass: %s",
                    bench.name.c_str(), at, *ar, *sp, *ar <= *sp ? "yes" : "no");
      rep.trend.emplace_back(buf);
    } else {
      rep.trend.push_back(bench.name + ": no horizon with both autoregressive and single-pass scores");
    }
  }

  std::filesystem::create_directories(cfg.out_dir);
  auto emit = [&](const std::string& name, const std::string& text) {
    write_text(cfg.out_dir / name, text);
    rep.files.push_back(cfg.out_dir / name);
  };
  emit("ablation_tokenization.csv", report_csv(rep.tokenization));
  emit("ablation_decoding.csv", report_csv(rep.decoding));
  std::string trend;
  for (const auto& t : rep.trend) trend += t + "\n";
  emit("ablation_trend.txt", trend);
  for (const auto& bench : benchmarks) {
    emit("ablation_tokenization_" + bench.name + ".svg",
         svg_line_chart("waypoint tokenization and CoT (" + bench.name + ")", "horizon", "L2 (m)",
                        series_by_method(rep.tokenization, bench.name)));
    emit("ablation_decoding_" + bench.name + ".svg",
         svg_line_chart("autoregressive vs single-pass (" + bench.name + ")", "horizon", "L2 (m)",
                        series_by_method(rep.decoding, bench.name)));
  }
  return rep;
}

namespace {

struct Canvas {
  double x0, x1, y0, y1;  // data bounds
  double left = 70, right = 170, top = 40, bottom = 50, width = 720, height = 420;

  double px(double x) const { return left + (x - x0) / (x1 - x0) * (width - left - right); }
  double py(double y) const { return height - bottom - (y - y0) / (y1 - y0) * (height - top - bottom); }
};

void pad_bounds(double& lo, double& hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double m = 0.05 * (hi - lo);
  lo -= m;
  hi += m;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

std::string coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string frame(const Canvas& c, const std::string& title, const std::string& x_label, const std::string& y_label) {
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + coord(c.width) + "\" height=\"" +
                  coord(c.height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + coord(c.width / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" + xml_escape(title) +
       "</text>\n";
  const double xa = c.left, xb = c.width - c.right, ya = c.top, yb = c.height - c.bottom;
  s += "<rect x=\"" + coord(xa) + "\" y=\"" + coord(ya) + "\" width=\"" + coord(xb - xa) + "\" height=\"" +
       coord(yb - ya) + "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = c.x0 + (c.x1 - c.x0) * i / 4.0;
    const double fy = c.y0 + (c.y1 - c.y0) * i / 4.0;
    s += "<text x=\"" + coord(c.px(fx)) + "\" y=\"" + coord(yb + 16) + "\" text-anchor=\"middle\">" + num(fx) +
         "</text>\n";
    s += "<text x=\"" + coord(xa - 6) + "\" y=\"" + coord(c.py(fy) + 4) + "\" text-anchor=\"end\">" + num(fy) +
         "</text>\n";
  }
  s += "<text x=\"" + coord((xa + xb) / 2) + "\" y=\"" + coord(c.height - 12) + "\" text-anchor=\"middle\">" +
       xml_escape(x_label) + "</text>\n";
  s += "<text x=\"16\" y=\"" + coord((ya + yb) / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
       coord((ya + yb) / 2) + ")\">" + xml_escape(y_label) + "</text>\n";
  return s;
}

std::string polyline(const Canvas& c, const std::vector<std::pair<double, double>>& pts, const std::string& color,
                     const std::string& extra = "") {
  std::string s = "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"2\"" + extra + " points=\"";
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (i) s += ' ';
    s += coord(c.px(pts[i].first)) + "," + coord(c.py(pts[i].second));
  }
  return s + "\"/>\n";
}

std::string legend(const Canvas& c, int index, const std::string& label, const std::string& color,
                   const std::string& extra = "") {
  const double x = c.width - c.right + 12, y = c.top + 10 + 18 * index;
  return "<line x1=\"" + coord(x) + "\" y1=\"" + coord(y) + "\" x2=\"" + coord(x + 22) + "\" y2=\"" + coord(y) +
         "\" stroke=\"" + color + "\" stroke-width=\"2\"" + extra + "/>\n<text x=\"" + coord(x + 28) + "\" y=\"" +
         coord(y + 4) + "\">" + xml_escape(label) + "</text>\n";
}

}  // namespace

std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  std::vector<Series> clean;
  for (const auto& s : series) {
    Series c{s.label, {}};
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      c.points.emplace_back(x, y);
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
    clean.push_back(std::move(c));
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  pad_bounds(x0, x1);
  y0 = std::min(y0, 0.0);
  pad_bounds(y0, y1);
  const Canvas c{x0, x1, y0, y1};
  std::string s = frame(c, title, x_label, y_label);
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const std::string color = kPalette[i % std::size(kPalette)];
    s += polyline(c, clean[i].points, color);
    for (const auto& [x, y] : clean[i].points) {
      s += "<circle cx=\"" + coord(c.px(x)) + "\" cy=\"" + coord(c.py(y)) + "\" r=\"3\" fill=\"" + color + "\"/>\n";
    }
    s += legend(c, static_cast<int>(i), clean[i].label, color);
  }
  return s + "</svg>\n";
}

std::string svg_trajectories(const std::string& title, const std::vector<Sample>& samples,
                             const std::vector<std::vector<Waypoint>>& predictions) {
  if (samples.size() != predictions.size()) throw std::invalid_argument("svg_trajectories: size mismatch");
  using Pts = std::vector<std::pair<double, double>>;
  // Ego x (forward) is drawn upwards and ego y (left) to the left.
  auto to_pts = [](const std::vector<Waypoint>& w, Waypoint start, bool prepend) {
    Pts p;
    if (prepend) p.emplace_back(-start.y, start.x);
    for (const auto& q : w) p.emplace_back(-q.y, q.x);
    return p;
  };
  std::vector<Pts> hist, gt, pred;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Waypoint now = samples[i].history.points.back();
    hist.push_back(to_pts(samples[i].history.points, now, false));
    gt.push_back(to_pts(samples[i].future.points, now, true));
    pred.push_back(to_pts(predictions[i], now, true));
    for (const auto* set : {&hist.back(), &gt.back(), &pred.back()}) {
      for (const auto& [x, y] : *set) {
        if (!std::isfinite(x) || !std::isfinite(y)) continue;
        lo = std::min({lo, x, y});
        hi = std::max({hi, x, y});
      }
    }
  }
  if (!std::isfinite(lo)) lo = -1, hi = 1;
  pad_bounds(lo, hi);
  Canvas c{lo, hi, lo, hi};
  c.width = 620;
  c.height = 520;
  std::string s = frame(c, title, "-y (m, left)", "x (m, forward)");
  const std::string dashed = " stroke-dasharray=\"6,4\"";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string color = kPalette[i % std::size(kPalette)];
    s += polyline(c, hist[i], "#999999");
    s += polyline(c, gt[i], color);
    s += polyline(c, pred[i], color, dashed);
  }
  s += legend(c, 0, "history", "#999999");
  s += legend(c, 1, "ground truth", kPalette[0]);
  s += legend(c, 2, "prediction", kPalette[0], dashed);
  return s + "</svg>\n";
}

}  // namespace autotraces

#pragma once

#include <filesystem>
#include <functional>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "autotraces/generate.hpp"

namespace autotraces {

// Extrapolates the last history displacement T times.
std::vector<Waypoint> baseline_const_velocity(const Sample& sample, int T);

struct ReportRow {
  std::string method;
  std::string benchmark;
  int horizon = 0;
  std::optional<double> l2, l1;  // over compliant samples only
  double ieacc = 0.0;
  std::optional<double> tpr;     // absent for methods that emit no tokens
  int n = 0;
};

// Output of one method on a benchmark at one horizon; results[i] belongs to
// samples[i]. Compliant results must hold at least `horizon` waypoints; only
// the first `horizon` are scored.
struct MethodRun {
  std::vector<GenResult> results;
  bool emits_tokens = true;
};

struct Method {
  std::string name;
  std::function<MethodRun(const std::vector<Sample>&, int horizon)> run;
};

struct Benchmark {
  std::string name;
  std::vector<Sample> samples;
};

// Scores every (method, benchmark, horizon) triple in that nesting order.
// Samples with fewer than `horizon` future points are skipped for that horizon.
std::vector<ReportRow> evaluate_methods(const std::vector<Method>& methods, const std::vector<Benchmark>& benchmarks,
                                        const std::vector<int>& horizons);

inline constexpr const char* kReportHeader = "method,benchmark,horizon,l2,l1,ieacc,tpr,n";
std::string report_csv(const std::vector<ReportRow>& rows);
std::string report_table(const std::vector<ReportRow>& rows);

struct ExperimentConfig {
  std::vector<std::pair<std::string, std::filesystem::path>> benchmarks;  // name, test set
  std::vector<int> horizons{5, 8, 10};
  std::filesystem::path checkpoint;  // full model
  std::filesystem::path no_cot_checkpoint;
  std::filesystem::path single_pass_checkpoint;
  std::filesystem::path text_baseline_checkpoint;
  bool no_cot = false;
  bool single_pass = false;
  bool text_baseline = false;
  bool const_velocity = true;
  int trunc_from = 10;  // also score T=trunc_from generations cut to each horizon; 0 disables
  int max_samples = 0;  // per benchmark, 0 = all; a seeded subset otherwise
  int workers = 1;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = ".";

  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

// Loads benchmarks (subsampled per max_samples/seed), in config order.
std::vector<Benchmark> load_benchmarks(const ExperimentConfig& cfg);

// Evaluates the full model (plus the configured baselines and enabled variants)
// and writes eval_report.csv and eval_report.txt into out_dir.
std::vector<ReportRow> run_eval(const ExperimentConfig& cfg);

struct AblationReport {
  std::vector<ReportRow> tokenization;  // full vs no-CoT vs text baseline, per horizon
  std::vector<ReportRow> decoding;      // autoregressive vs single-pass, per benchmark
  std::vector<std::string> trend;       // one line per benchmark
  std::vector<std::filesystem::path> files;
};

// Writes ablation_tokenization.csv, ablation_decoding.csv, ablation_trend.txt
// and one SVG line plot per benchmark and study into out_dir. Variants without
// a checkpoint are skipped with a warning.
AblationReport run_ablations(const ExperimentConfig& cfg);

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

// Minimal SVG line chart; points outside finite range are dropped.
std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series);

// History, ground truth and prediction of a few samples in the ego frame.
std::string svg_trajectories(const std::string& title, const std::vector<Sample>& samples,
                             const std::vector<std::vector<Waypoint>>& predictions);

}  // namespace autotraces

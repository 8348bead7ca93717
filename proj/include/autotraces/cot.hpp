#pragma once

#include <chrono>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "autotraces/traj.hpp"

namespace autotraces {

enum class Action : char { kStraight = 'S', kLeft = 'L', kRight = 'R' };

struct MetaAction {
  Action label = Action::kStraight;
  int start = 0;  // inclusive point indices
  int end = 0;

  friend bool operator==(const MetaAction&, const MetaAction&) = default;
};

struct CurvatureConfig {
  int window = 3;
  double theta_s = 5.0 * std::numbers::pi / 180.0;  // mean |turn| per step below which a window is straight
};

// Signed turning angle at every point (left positive); endpoints carry 0.
std::vector<double> turning_angles(const Trajectory& traj);

// Each interior point is labeled from a centered window of `window` turning
// angles (clipped at the ends): S when the mean magnitude is below theta_s,
// else L/R by the sign of the mean angle (a zero mean stays S). Endpoints copy
// their neighbor; runs of equal labels merge into spans covering every point.
std::vector<MetaAction> decompose(const Trajectory& traj, int window, double theta_s);
inline std::vector<MetaAction> decompose(const Trajectory& traj, const CurvatureConfig& cfg = {}) {
  return decompose(traj, cfg.window, cfg.theta_s);
}

// The trajectory the annotator analyzes: current position followed by the future.
Trajectory cot_trajectory(const Sample& sample);

enum class CotProvider { kTemplate, kRemote };

struct CoTRecord {
  std::string sample_id;
  std::vector<MetaAction> actions;
  std::string reasoning;
  CotProvider provider = CotProvider::kTemplate;
};

inline constexpr int kMaxCotWords = 120;

CoTRecord template_cot(const Sample& sample, const std::vector<MetaAction>& actions);

// Recovers (label, point count) per span from the action part of a template text.
std::vector<std::pair<Action, int>> parse_action_text(const std::string& reasoning);

struct RemoteOptions {
  std::string endpoint;  // http://host:port/path
  std::chrono::milliseconds timeout{10000};
};

// Posts the sample to a remote provider; falls back to template_cot (with a
// logged warning) on any transport, status, or payload failure.
CoTRecord remote_cot(const Sample& sample, const std::vector<MetaAction>& actions, const RemoteOptions& opts);

struct AnnotateOptions {
  CotProvider provider = CotProvider::kTemplate;
  RemoteOptions remote;
  int max_in_flight = 4;
  CurvatureConfig curvature;
};

// Fills every missing `cot` field, keeping existing ones. Returns the number
// of annotated samples in the output.
std::size_t annotate_dataset(const std::filesystem::path& in_path, const std::filesystem::path& out_path,
                             const AnnotateOptions& opts = {});

// In-memory variant used by the trainer.
void annotate_samples(std::vector<Sample>& samples, const AnnotateOptions& opts = {});

}  // namespace autotraces

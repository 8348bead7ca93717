#include "autotraces/traj.hpp"

#include <numbers>
#include <stdexcept>

namespace autotraces {

bool is_valid(const Waypoint& p) {
  return std::isfinite(p.x) && std::isfinite(p.y) && std::abs(p.x) <= kSceneBound &&
         std::abs(p.y) <= kSceneBound;
}

void validate(const Trajectory& traj, double max_speed) {
  if (traj.empty()) throw std::invalid_argument("trajectory is empty");
  if (!(traj.dt > 0.0)) throw std::invalid_argument("trajectory dt must be positive");
  for (std::size_t i = 0; i < traj.size(); ++i) {
    if (!is_valid(traj[i])) {
      throw std::invalid_argument("trajectory point " + std::to_string(i) + " is invalid");
    }
    if (i > 0 && norm(traj[i] - traj[i - 1]) > max_speed * traj.dt + 1e-9) {
      throw std::invalid_argument("trajectory step " + std::to_string(i) + " exceeds speed bound");
    }
  }
}

void validate(const Sample& sample) {
  if (sample.history.size() != kHistoryLen) {
    throw std::invalid_argument("history must have " + std::to_string(kHistoryLen) + " points");
  }
  if (sample.observations.size() != sample.history.size()) {
    throw std::invalid_argument("observation count must match history length");
  }
  if (sample.future.empty()) throw std::invalid_argument("future is empty");
  validate(sample.history);
  validate(sample.future);
  if (!is_valid(sample.goal)) throw std::invalid_argument("goal is invalid");
}

double wrap_angle(double radians) {
  constexpr double pi = std::numbers::pi;
  double a = std::remainder(radians, 2.0 * pi);
  if (a <= -pi) a += 2.0 * pi;
  return a;
}

Waypoint Frame::to_local(Waypoint world) const {
  const double c = std::cos(heading), s = std::sin(heading);
  const Waypoint d = world - origin;
  return {c * d.x + s * d.y, -s * d.x + c * d.y};
}

Waypoint Frame::to_world(Waypoint local) const {
  const double c = std::cos(heading), s = std::sin(heading);
  return {origin.x + c * local.x - s * local.y, origin.y + s * local.x + c * local.y};
}

Frame ego_frame(const Trajectory& history) {
  if (history.empty()) throw std::invalid_argument("ego_frame: empty history");
  Frame f{history.back(), 0.0};
  if (history.size() >= 2) {
    const Waypoint d = history.back() - history[history.size() - 2];
    if (d.x != 0.0 || d.y != 0.0) f.heading = wrap_angle(std::atan2(d.y, d.x));
  }
  return f;
}

Trajectory transform(const Trajectory& traj, const Frame& frame, bool to_local) {
  Trajectory out{{}, traj.dt};
  out.points.reserve(traj.size());
  for (const auto& p : traj.points) {
    out.points.push_back(to_local ? frame.to_local(p) : frame.to_world(p));
  }
  return out;
}

Sample to_ego_frame(const Sample& sample) {
  const Frame f = ego_frame(sample.history);
  Sample out = sample;
  out.history = transform(sample.history, f, true);
  out.future = transform(sample.future, f, true);
  out.goal = f.to_local(sample.goal);
  // The anchor maps to the origin exactly, not up to rounding.
  out.history.points.back() = {0.0, 0.0};
  return out;
}

Sample from_ego_frame(const Sample& ego_sample, const Frame& frame) {
  Sample out = ego_sample;
  out.history = transform(ego_sample.history, frame, false);
  out.future = transform(ego_sample.future, frame, false);
  out.goal = frame.to_world(ego_sample.goal);
  return out;
}

namespace {

void check_pair(std::size_t a, std::size_t b) {
  if (a == 0 || b == 0) throw std::invalid_argument("metric: empty trajectory");
  if (a != b) {
    throw std::invalid_argument("metric: length mismatch (" + std::to_string(a) + " vs " +
                                std::to_string(b) + "); truncate explicitly");
  }
}

}  // namespace

double l2_metric(std::span<const Waypoint> pred, std::span<const Waypoint> gt) {
  check_pair(pred.size(), gt.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) sum += norm(pred[i] - gt[i]);
  return sum / static_cast<double>(pred.size());
}

double l1_metric(std::span<const Waypoint> pred, std::span<const Waypoint> gt) {
  check_pair(pred.size(), gt.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    sum += std::abs(pred[i].x - gt[i].x) + std::abs(pred[i].y - gt[i].y);
  }
  return sum / static_cast<double>(pred.size());
}

double l2_metric(const Trajectory& pred, const Trajectory& gt) {
  return l2_metric(std::span<const Waypoint>(pred.points), std::span<const Waypoint>(gt.points));
}

double l1_metric(const Trajectory& pred, const Trajectory& gt) {
  return l1_metric(std::span<const Waypoint>(pred.points), std::span<const Waypoint>(gt.points));
}

Trajectory truncate(const Trajectory& traj, std::size_t k) {
  if (k < 1 || k > traj.size()) {
    throw std::out_of_range("truncate: k=" + std::to_string(k) + " outside [1, " +
                            std::to_string(traj.size()) + "]");
  }
  Trajectory out{{traj.points.begin(), traj.points.begin() + static_cast<std::ptrdiff_t>(k)}, traj.dt};
  return out;
}

}  // namespace autotraces

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace autotraces {

inline constexpr int kHistoryLen = 9;     // positions t-8 .. t
inline constexpr double kStepSeconds = 1.0;
inline constexpr double kMaxSpeed = 3.0;  // m/s, simulator bound
inline constexpr double kSceneBound = 1000.0;

struct Waypoint {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Waypoint&, const Waypoint&) = default;
};

inline Waypoint operator+(Waypoint a, Waypoint b) { return {a.x + b.x, a.y + b.y}; }
inline Waypoint operator-(Waypoint a, Waypoint b) { return {a.x - b.x, a.y - b.y}; }
inline Waypoint operator*(double s, Waypoint a) { return {s * a.x, s * a.y}; }
inline double norm(Waypoint a) { return std::hypot(a.x, a.y); }
inline double dot(Waypoint a, Waypoint b) { return a.x * b.x + a.y * b.y; }
inline double cross(Waypoint a, Waypoint b) { return a.x * b.y - a.y * b.x; }

bool is_valid(const Waypoint& p);

struct Trajectory {
  std::vector<Waypoint> points;
  double dt = kStepSeconds;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  const Waypoint& operator[](std::size_t i) const { return points[i]; }
  Waypoint& operator[](std::size_t i) { return points[i]; }
  const Waypoint& back() const { return points.back(); }

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

// Throws std::invalid_argument when the trajectory is empty, has a
// non-finite/out-of-bounds point, a non-positive dt, or a step longer than
// max_speed * dt.
void validate(const Trajectory& traj, double max_speed = kMaxSpeed);

// Rigid 2-D frame. Local x points along `heading`, local y to its left.
struct Frame {
  Waypoint origin;
  double heading = 0.0;  // (-pi, pi]

  Waypoint to_local(Waypoint world) const;
  Waypoint to_world(Waypoint local) const;

  friend bool operator==(const Frame&, const Frame&) = default;
};

double wrap_angle(double radians);

// 32x32 ego-centric occupancy grid. Row 0 is the farthest-ahead row; the
// robot sits in cell (31, 16) facing toward row 0.
struct OccGrid {
  static constexpr int kSize = 32;
  static constexpr int kCells = kSize * kSize;
  static constexpr int kRobotRow = kSize - 1;
  static constexpr int kRobotCol = kSize / 2;

  std::array<std::uint8_t, kCells> cells{};
  double resolution = 0.5;
  Frame pose;

  std::uint8_t at(int row, int col) const { return cells[row * kSize + col]; }
  std::uint8_t& at(int row, int col) { return cells[row * kSize + col]; }
  // Ego coordinates (forward, left) of a cell center.
  Waypoint cell_center(int row, int col) const {
    return {(kRobotRow - row) * resolution, (kRobotCol - col) * resolution};
  }

  friend bool operator==(const OccGrid& a, const OccGrid& b) { return a.cells == b.cells; }
};

struct Sample {
  Trajectory history;  // exactly kHistoryLen points
  std::vector<OccGrid> observations;
  Waypoint goal;
  Trajectory future;
  std::optional<std::string> cot_text;
  std::string scene_id;
  std::string sample_id;

  friend bool operator==(const Sample&, const Sample&) = default;
};

void validate(const Sample& sample);

// Frame anchored at the last history point, heading along the last history
// displacement. A zero-length last displacement gives heading 0.
Frame ego_frame(const Trajectory& history);

Sample to_ego_frame(const Sample& sample);
Sample from_ego_frame(const Sample& ego_sample, const Frame& frame);
Trajectory transform(const Trajectory& traj, const Frame& frame, bool to_local);

double l2_metric(const Trajectory& pred, const Trajectory& gt);
double l1_metric(const Trajectory& pred, const Trajectory& gt);
double l2_metric(std::span<const Waypoint> pred, std::span<const Waypoint> gt);
double l1_metric(std::span<const Waypoint> pred, std::span<const Waypoint> gt);

Trajectory truncate(const Trajectory& traj, std::size_t k);

}  // namespace autotraces

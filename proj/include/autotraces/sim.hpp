#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "autotraces/traj.hpp"

namespace autotraces {

struct Disc {
  Waypoint center;
  double radius = 0.0;
};

struct SceneConfig {
  double bounds = 40.0;  // side of the square scene, centered on the origin
  int n_obstacles = 6;
  std::pair<double, double> obstacle_radius_range{0.5, 1.5};
  int n_pedestrians = 2;
  std::pair<double, double> ped_speed_range{0.5, 1.2};
  double ped_radius = 0.3;
  double robot_speed = 1.0;
  std::uint64_t seed = 0;

  double k_goal = 1.0;
  double k_obstacle = 0.8;
  double min_clearance = 0.2;  // floor of (d - r) in the repulsion term
  int max_steps = 120;
  double goal_tolerance = 1.0;
  double resolution = 0.5;

  // Overrides for controlled scenes; random placement when unset.
  std::optional<Waypoint> start;
  std::optional<Waypoint> goal;
  std::optional<std::vector<Disc>> obstacles;

  std::string scene_id;  // defaults to "<family>-<seed>"
};

// Dense, slow scenes (training family).
SceneConfig indoor_scene(std::uint64_t seed);
// Sparse scenes with 1.5x robot and pedestrian speeds (shifted dynamics).
SceneConfig outdoor_scene(std::uint64_t seed);
// Named family lookup: "indoor" | "outdoor".
SceneConfig scene_family(const std::string& family, std::uint64_t seed);

void validate(const SceneConfig& cfg);

struct Episode {
  Trajectory robot_traj;
  std::vector<OccGrid> observations;  // one per step, in the pose of that step
  Waypoint goal;
  std::string scene_id;
  bool complete = false;  // goal reached within max_steps
  std::vector<Disc> obstacles;
};

Episode simulate_episode(const SceneConfig& cfg);

// A cell is occupied iff a disc overlaps the cell square with positive area
// (strict closest-point distance < radius).
OccGrid render_occupancy(const std::vector<Disc>& discs, const Frame& pose, double resolution = 0.5);

// Sliding windows over an episode: anchors t = 8 .. len-1-t_min, future length
// uniform in [t_min, t_max] clamped to the remaining steps, all in ego frame.
std::vector<Sample> make_samples(const Episode& ep, int t_min, int t_max, std::uint64_t seed);

// Draws a future length for one anchor; exposed for frequency checks.
int draw_future_length(class Rng& rng, int t_min, int t_max, int remaining);

// Generates `n_episodes` episodes of a family with seeds base_seed+i and
// returns all their samples in order.
std::vector<Sample> generate_samples(const std::string& family, std::uint64_t base_seed,
                                     int n_episodes, int t_min, int t_max);

}  // namespace autotraces

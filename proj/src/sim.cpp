#include "autotraces/sim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "autotraces/rng.hpp"

namespace autotraces {

SceneConfig indoor_scene(std::uint64_t seed) {
  SceneConfig cfg;
  cfg.n_obstacles = 12;
  cfg.n_pedestrians = 4;
  cfg.seed = seed;
  cfg.scene_id = "indoor-" + std::to_string(seed);
  return cfg;
}

SceneConfig outdoor_scene(std::uint64_t seed) {
  SceneConfig cfg;
  cfg.n_obstacles = 3;
  cfg.n_pedestrians = 1;
  cfg.robot_speed = 1.5;
  cfg.ped_speed_range = {0.75, 1.8};
  cfg.bounds = 60.0;
  cfg.seed = seed;
  cfg.scene_id = "outdoor-" + std::to_string(seed);
  return cfg;
}

SceneConfig scene_family(const std::string& family, std::uint64_t seed) {
  if (family == "indoor") return indoor_scene(seed);
  if (family == "outdoor") return outdoor_scene(seed);
  throw std::invalid_argument("unknown scene family: " + family);
}

void validate(const SceneConfig& cfg) {
  if (cfg.n_obstacles < 0 || cfg.n_pedestrians < 0) throw std::invalid_argument("negative count");
  if (cfg.obstacle_radius_range.first > cfg.obstacle_radius_range.second ||
      cfg.ped_speed_range.first > cfg.ped_speed_range.second) {
    throw std::invalid_argument("unordered range");
  }
  if (!(cfg.bounds > 0) || !(cfg.robot_speed > 0) || cfg.max_steps < 1) {
    throw std::invalid_argument("invalid scene parameters");
  }
}

namespace {

struct Pedestrian {
  Waypoint pos;
  Waypoint vel;
};

bool inside_any(const std::vector<Disc>& discs, Waypoint p, double margin) {
  return std::any_of(discs.begin(), discs.end(),
                     [&](const Disc& d) { return norm(p - d.center) < d.radius + margin; });
}

Waypoint random_free_point(Rng& rng, const std::vector<Disc>& obstacles, double half, double margin) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const Waypoint p{rng.uniform(-half, half), rng.uniform(-half, half)};
    if (!inside_any(obstacles, p, margin)) return p;
  }
  throw std::runtime_error("scene too crowded to place a free point");
}

std::vector<Disc> snapshot(const std::vector<Disc>& obstacles, const std::vector<Pedestrian>& peds,
                           double ped_radius) {
  std::vector<Disc> discs = obstacles;
  for (const auto& p : peds) discs.push_back({p.pos, ped_radius});
  return discs;
}

}  // namespace

OccGrid render_occupancy(const std::vector<Disc>& discs, const Frame& pose, double resolution) {
  OccGrid grid;
  grid.resolution = resolution;
  grid.pose = pose;
  const double half = resolution / 2.0;
  for (const auto& disc : discs) {
    const Waypoint c = pose.to_local(disc.center);
    for (int row = 0; row < OccGrid::kSize; ++row) {
      for (int col = 0; col < OccGrid::kSize; ++col) {
        const Waypoint center = grid.cell_center(row, col);
        const double dx = std::max(std::abs(c.x - center.x) - half, 0.0);
        const double dy = std::max(std::abs(c.y - center.y) - half, 0.0);
        if (dx * dx + dy * dy < disc.radius * disc.radius) grid.at(row, col) = 255;
      }
    }
  }
  return grid;
}

Episode simulate_episode(const SceneConfig& cfg) {
  validate(cfg);
  Rng rng(cfg.seed);
  const double half = cfg.bounds / 2.0;

  std::vector<Disc> obstacles;
  if (cfg.obstacles) {
    obstacles = *cfg.obstacles;
  } else {
    for (int i = 0; i < cfg.n_obstacles; ++i) {
      const Waypoint c{rng.uniform(-half + 1.0, half - 1.0), rng.uniform(-half + 1.0, half - 1.0)};
      obstacles.push_back({c, rng.uniform(cfg.obstacle_radius_range.first, cfg.obstacle_radius_range.second)});
    }
  }

  const Waypoint start = cfg.start ? *cfg.start : random_free_point(rng, obstacles, half - 2.0, 1.0);
  Waypoint goal;
  if (cfg.goal) {
    goal = *cfg.goal;
  } else {
    goal = random_free_point(rng, obstacles, half - 2.0, 1.0);
    for (int attempt = 0; attempt < 1000; ++attempt) {
      const double d = norm(goal - start);
      if (d >= 0.4 * cfg.bounds && d <= 0.8 * cfg.bounds) break;
      goal = random_free_point(rng, obstacles, half - 2.0, 1.0);
    }
  }

  std::vector<Pedestrian> peds;
  for (int i = 0; i < cfg.n_pedestrians; ++i) {
    const Waypoint p = random_free_point(rng, obstacles, half, cfg.ped_radius);
    const double angle = rng.uniform(-std::numbers::pi, std::numbers::pi);
    const double speed = rng.uniform(cfg.ped_speed_range.first, cfg.ped_speed_range.second);
    peds.push_back({p, {speed * std::cos(angle), speed * std::sin(angle)}});
  }

  Episode ep;
  ep.goal = goal;
  ep.scene_id = cfg.scene_id.empty() ? "scene-" + std::to_string(cfg.seed) : cfg.scene_id;
  ep.obstacles = obstacles;
  const double dt = kStepSeconds;

  Waypoint pos = start;
  Waypoint vel{0.0, 0.0};
  const Waypoint to_goal = goal - start;
  double heading = (to_goal.x == 0.0 && to_goal.y == 0.0) ? 0.0 : std::atan2(to_goal.y, to_goal.x);

  ep.robot_traj.points.push_back(pos);
  ep.observations.push_back(render_occupancy(snapshot(obstacles, peds, cfg.ped_radius), {pos, wrap_angle(heading)}, cfg.resolution));

  for (int step = 1; step < cfg.max_steps && norm(goal - pos) >= cfg.goal_tolerance; ++step) {
    Waypoint accel{0.0, 0.0};
    const Waypoint g = goal - pos;
    if (norm(g) > 0.0) accel = accel + (cfg.k_goal / norm(g)) * g;
    auto repel = [&](const Disc& d) {
      const Waypoint away = pos - d.center;
      const double dist = norm(away);
      if (dist == 0.0) return;
      const double gap = std::max(dist - d.radius, cfg.min_clearance);
      accel = accel + (cfg.k_obstacle / (dist * gap * gap)) * away;
    };
    for (const auto& o : obstacles) repel(o);
    for (const auto& p : peds) repel({p.pos, cfg.ped_radius});

    vel = vel + dt * accel;
    const double speed = norm(vel);
    if (speed > cfg.robot_speed) vel = (cfg.robot_speed / speed) * vel;

    // Shrink the step until it ends outside every static obstacle.
    Waypoint next = pos + dt * vel;
    if (inside_any(obstacles, next, 0.0)) {
      double lo = 0.0, hi = 1.0;
      for (int it = 0; it < 40; ++it) {
        const double mid = 0.5 * (lo + hi);
        (inside_any(obstacles, pos + (mid * dt) * vel, 0.0) ? hi : lo) = mid;
      }
      next = pos + (lo * dt) * vel;
      vel = lo * vel;
    }

    for (auto& p : peds) {
      p.pos = p.pos + dt * p.vel;
      if (std::abs(p.pos.x) > half) {
        p.vel.x = -p.vel.x;
        p.pos.x = std::clamp(p.pos.x, -half, half);
      }
      if (std::abs(p.pos.y) > half) {
        p.vel.y = -p.vel.y;
        p.pos.y = std::clamp(p.pos.y, -half, half);
      }
    }

    const Waypoint disp = next - pos;
    if (disp.x != 0.0 || disp.y != 0.0) heading = std::atan2(disp.y, disp.x);
    pos = next;
    ep.robot_traj.points.push_back(pos);
    ep.observations.push_back(render_occupancy(snapshot(obstacles, peds, cfg.ped_radius), {pos, wrap_angle(heading)}, cfg.resolution));
  }
  ep.complete = norm(goal - pos) < cfg.goal_tolerance;
  return ep;
}

int draw_future_length(Rng& rng, int t_min, int t_max, int remaining) {
  const int t = static_cast<int>(rng.uniform_int(t_min, t_max));
  return std::min(t, remaining);
}

std::vector<Sample> make_samples(const Episode& ep, int t_min, int t_max, std::uint64_t seed) {
  if (t_min < 1 || t_max < t_min) throw std::invalid_argument("make_samples: bad horizon range");
  std::vector<Sample> out;
  const int len = static_cast<int>(ep.robot_traj.size());
  if (len < kHistoryLen + t_min) return out;
  Rng rng(seed);
  for (int t = kHistoryLen - 1; t + t_min <= len - 1; ++t) {
    const int T = draw_future_length(rng, t_min, t_max, len - 1 - t);
    Sample s;
    s.history.points.assign(ep.robot_traj.points.begin() + (t - kHistoryLen + 1),
                            ep.robot_traj.points.begin() + t + 1);
    s.observations.assign(ep.observations.begin() + (t - kHistoryLen + 1), ep.observations.begin() + t + 1);
    s.future.points.assign(ep.robot_traj.points.begin() + t + 1, ep.robot_traj.points.begin() + t + 1 + T);
    s.goal = ep.goal;
    s.scene_id = ep.scene_id;
    s.sample_id = ep.scene_id + ":" + std::to_string(t);
    out.push_back(to_ego_frame(s));
  }
  return out;
}

std::vector<Sample> generate_samples(const std::string& family, std::uint64_t base_seed,
                                     int n_episodes, int t_min, int t_max) {
  std::vector<Sample> out;
  for (int i = 0; i < n_episodes; ++i) {
    const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(i);
    const Episode ep = simulate_episode(scene_family(family, seed));
    auto samples = make_samples(ep, t_min, t_max, mix_seed(seed, 17));
    out.insert(out.end(), std::make_move_iterator(samples.begin()), std::make_move_iterator(samples.end()));
  }
  return out;
}

}  // namespace autotraces

#include "autotraces/cot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <future>
#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>
#include <stdexcept>

#include "autotraces/dataset.hpp"
#include "autotraces/tokens.hpp"

namespace autotraces {

std::vector<double> turning_angles(const Trajectory& traj) {
  const std::size_t n = traj.size();
  std::vector<double> angles(n, 0.0);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const Waypoint a = traj[i] - traj[i - 1];
    const Waypoint b = traj[i + 1] - traj[i];
    const double c = cross(a, b), d = dot(a, b);
    angles[i] = (c == 0.0 && d == 0.0) ? 0.0 : std::atan2(c, d);
  }
  return angles;
}

std::vector<MetaAction> decompose(const Trajectory& traj, int window, double theta_s) {
  if (window < 2) throw std::invalid_argument("decompose: window must be >= 2");
  if (!(theta_s > 0.0)) throw std::invalid_argument("decompose: theta_s must be positive");
  const int n = static_cast<int>(traj.size());
  if (n < 3) return {{Action::kStraight, 0, std::max(n - 1, 0)}};

  const auto angles = turning_angles(traj);
  std::vector<Action> labels(n, Action::kStraight);
  const int before = (window - 1) / 2;
  const int after = window / 2;
  for (int i = 1; i <= n - 2; ++i) {
    const int lo = std::max(1, i - before);
    const int hi = std::min(n - 2, i + after);
    double sum = 0.0, sum_abs = 0.0;
    for (int j = lo; j <= hi; ++j) {
      sum += angles[j];
      sum_abs += std::abs(angles[j]);
    }
    const double count = hi - lo + 1;
    if (sum_abs / count < theta_s || sum == 0.0) {
      labels[i] = Action::kStraight;
    } else {
      labels[i] = sum > 0.0 ? Action::kLeft : Action::kRight;
    }
  }
  labels[0] = labels[1];
  labels[n - 1] = labels[n - 2];

  std::vector<MetaAction> spans;
  for (int i = 0; i < n; ++i) {
    if (spans.empty() || spans.back().label != labels[i]) {
      spans.push_back({labels[i], i, i});
    } else {
      spans.back().end = i;
    }
  }
  return spans;
}

Trajectory cot_trajectory(const Sample& sample) {
  Trajectory t{{sample.history.back()}, sample.future.dt};
  t.points.insert(t.points.end(), sample.future.points.begin(), sample.future.points.end());
  return t;
}

namespace {

const char* action_word(Action a) {
  switch (a) {
    case Action::kLeft:
      return "left";
    case Action::kRight:
      return "right";
    default:
      return "straight";
  }
}

std::string fmt1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", v);
  return buf;
}

// Sector thirds by column (col 0 is the far left), near band under 4 m ahead.
std::string obstacle_analysis(const Sample& sample) {
  if (sample.observations.empty()) return "obstacle analysis : no observations .";
  const OccGrid& g = sample.observations.back();
  struct Cell {
    const char* sector;
    const char* band;
    double nearest = INFINITY;
  };
  Cell cells[6] = {{"front", "near"}, {"front", "far"}, {"left", "near"},
                   {"left", "far"},   {"right", "near"}, {"right", "far"}};
  for (int row = 0; row < OccGrid::kSize; ++row) {
    for (int col = 0; col < OccGrid::kSize; ++col) {
      if (!g.at(row, col)) continue;
      const Waypoint c = g.cell_center(row, col);
      const int sector = col <= 10 ? 1 : (col <= 20 ? 0 : 2);
      const int band = c.x < 4.0 ? 0 : 1;
      auto& cell = cells[sector * 2 + band];
      cell.nearest = std::min(cell.nearest, norm(c));
    }
  }
  std::string out = "obstacle analysis :";
  int listed = 0;
  for (const auto& cell : cells) {
    if (!std::isfinite(cell.nearest) || listed == 4) continue;
    out += std::string(listed ? " ," : "") + " " + cell.sector + " " + cell.band + " obstacle at " +
           fmt1(cell.nearest) + " m";
    ++listed;
  }
  out += listed ? " ." : " no obstacles in view .";
  return out;
}

std::string action_derivation(const std::vector<MetaAction>& actions, bool compact) {
  std::string out = compact ? "actions :" : "action derivation :";
  for (std::size_t i = 0; i < actions.size(); ++i) {
    const auto& a = actions[i];
    const int steps = a.end - a.start + 1;
    if (compact) {
      out += std::string(i ? " ," : "") + " " + action_word(a.label) + " " + std::to_string(steps);
    } else {
      out += std::string(i ? " , then" : "") + (a.label == Action::kStraight ? " go " : " turn ") +
             action_word(a.label) + " for " + std::to_string(steps) + " steps";
    }
  }
  return out + " .";
}

}  // namespace

CoTRecord template_cot(const Sample& sample, const std::vector<MetaAction>& actions) {
  CoTRecord rec;
  rec.sample_id = sample.sample_id;
  rec.actions = actions;
  rec.provider = CotProvider::kTemplate;
  const std::string part1 = obstacle_analysis(sample);
  rec.reasoning = part1 + " " + action_derivation(actions, false);
  if (tokenize_words(rec.reasoning).size() > kMaxCotWords) {
    rec.reasoning = part1 + " " + action_derivation(actions, true);
  }
  return rec;
}

std::vector<std::pair<Action, int>> parse_action_text(const std::string& reasoning) {
  const auto words = tokenize_words(reasoning);
  std::size_t i = 0;
  for (; i + 1 < words.size(); ++i) {
    if ((words[i] == "derivation" || words[i] == "actions") && words[i + 1] == ":") break;
  }
  std::vector<std::pair<Action, int>> out;
  for (i += 2; i < words.size(); ++i) {
    Action a;
    if (words[i] == "straight") {
      a = Action::kStraight;
    } else if (words[i] == "left") {
      a = Action::kLeft;
    } else if (words[i] == "right") {
      a = Action::kRight;
    } else {
      continue;
    }
    std::size_t j = i + 1;
    if (j < words.size() && words[j] == "for") ++j;
    if (j >= words.size()) throw std::invalid_argument("action without step count");
    out.emplace_back(a, std::stoi(words[j]));
    i = j;
  }
  return out;
}

namespace {

nlohmann::json remote_request(const Sample& s, const std::vector<MetaAction>& actions) {
  nlohmann::json req;
  auto pts = [](const Trajectory& t) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : t.points) arr.push_back({p.x, p.y});
    return arr;
  };
  req["history"] = pts(s.history);
  req["future"] = pts(s.future);
  nlohmann::json labels = nlohmann::json::array();
  for (const auto& a : actions) labels.push_back(std::string(1, static_cast<char>(a.label)));
  req["actions"] = std::move(labels);
  nlohmann::json obs = nlohmann::json::array();
  for (const auto& g : s.observations) obs.push_back(base64_encode(g.cells));
  req["obs_b64"] = std::move(obs);
  return req;
}

CoTRecord fallback(const Sample& s, const std::vector<MetaAction>& actions, const std::string& why) {
  spdlog::warn("remote CoT for {} failed ({}); using template provider", s.sample_id, why);
  return template_cot(s, actions);
}

}  // namespace

CoTRecord remote_cot(const Sample& sample, const std::vector<MetaAction>& actions, const RemoteOptions& opts) {
  const std::string& url = opts.endpoint;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos || url.compare(0, scheme_end, "http") != 0) {
    return fallback(sample, actions, "unsupported endpoint '" + url + "'");
  }
  const auto path_start = url.find('/', scheme_end + 3);
  const std::string host = url.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

  httplib::Client client(host);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(opts.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(opts.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());

  const auto res = client.Post(path, remote_request(sample, actions).dump(), "application/json");
  if (!res) return fallback(sample, actions, httplib::to_string(res.error()));
  if (res->status != 200) return fallback(sample, actions, "HTTP " + std::to_string(res->status));
  const auto body = nlohmann::json::parse(res->body, nullptr, false);
  if (body.is_discarded() || !body.is_object() || !body.contains("reasoning") || !body["reasoning"].is_string() ||
      body["reasoning"].get<std::string>().empty()) {
    return fallback(sample, actions, "malformed response");
  }
  CoTRecord rec;
  rec.sample_id = sample.sample_id;
  rec.actions = actions;
  rec.reasoning = body["reasoning"].get<std::string>();
  rec.provider = CotProvider::kRemote;
  return rec;
}

void annotate_samples(std::vector<Sample>& samples, const AnnotateOptions& opts) {
  auto annotate_one = [&](const Sample& s) {
    const auto actions = decompose(cot_trajectory(s), opts.curvature);
    return opts.provider == CotProvider::kRemote ? remote_cot(s, actions, opts.remote).reasoning
                                                 : template_cot(s, actions).reasoning;
  };
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!samples[i].cot_text) todo.push_back(i);
  }
  if (opts.provider == CotProvider::kTemplate) {
    for (auto i : todo) samples[i].cot_text = annotate_one(samples[i]);
    return;
  }
  const std::size_t cap = static_cast<std::size_t>(std::max(1, opts.max_in_flight));
  for (std::size_t begin = 0; begin < todo.size(); begin += cap) {
    const std::size_t end = std::min(todo.size(), begin + cap);
    std::vector<std::future<std::string>> inflight;
    for (std::size_t k = begin; k < end; ++k) {
      inflight.push_back(std::async(std::launch::async, annotate_one, std::cref(samples[todo[k]])));
    }
    for (std::size_t k = begin; k < end; ++k) samples[todo[k]].cot_text = inflight[k - begin].get();
  }
}

std::size_t annotate_dataset(const std::filesystem::path& in_path, const std::filesystem::path& out_path,
                             const AnnotateOptions& opts) {
  auto samples = read_dataset(in_path);
  annotate_samples(samples, opts);
  write_dataset(samples, out_path);
  return samples.size();
}

}  // namespace autotraces

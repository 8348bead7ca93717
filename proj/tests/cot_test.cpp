#include <gtest/gtest.h>
#include <httplib.h>
#include <spdlog/sinks/ringbuffer_sink.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <thread>

#include "autotraces/cot.hpp"
#include "autotraces/dataset.hpp"
#include "autotraces/rng.hpp"
#include "autotraces/sim.hpp"
#include "autotraces/tokens.hpp"
#include "test_util.hpp"

namespace autotraces {
namespace {

namespace fs = std::filesystem;

Trajectory from_headings(Waypoint start, const std::vector<double>& headings, double step = 1.0) {
  Trajectory t{{start}};
  for (double h : headings) t.points.push_back(t.back() + step * Waypoint{std::cos(h), std::sin(h)});
  return t;
}

// Brute-force oracle: turning angle as the wrapped difference of segment
// headings, a clipped centered window per interior point, endpoints copied,
// then run-length merge.
std::vector<MetaAction> oracle_decompose(const Trajectory& t, int window, double theta_s) {
  const int n = static_cast<int>(t.size());
  if (n < 3) return {{Action::kStraight, 0, n - 1}};
  std::vector<double> angle(n, 0.0);
  for (int i = 1; i + 1 < n; ++i) {
    const Waypoint a = t[i] - t[i - 1], b = t[i + 1] - t[i];
    if (norm(a) == 0 || norm(b) == 0) continue;
    double d = std::atan2(b.y, b.x) - std::atan2(a.y, a.x);
    while (d > std::numbers::pi) d -= 2 * std::numbers::pi;
    while (d <= -std::numbers::pi) d += 2 * std::numbers::pi;
    angle[i] = d;
  }
  std::vector<char> label(n, 'S');
  for (int i = 1; i + 1 < n; ++i) {
    double sum = 0, mag = 0;
    int cnt = 0;
    for (int j = i - (window - 1) / 2; j <= i + window / 2; ++j) {
      if (j < 1 || j > n - 2) continue;
      sum += angle[j];
      mag += std::abs(angle[j]);
      ++cnt;
    }
    if (mag / cnt >= theta_s && sum != 0) label[i] = sum > 0 ? 'L' : 'R';
  }
  label[0] = label[1];
  label[n - 1] = label[n - 2];
  std::vector<MetaAction> out;
  for (int i = 0; i < n; ++i) {
    if (out.empty() || static_cast<char>(out.back().label) != label[i]) {
      out.push_back({static_cast<Action>(label[i]), i, i});
    } else {
      out.back().end = i;
    }
  }
  return out;
}

void expect_cover(const std::vector<MetaAction>& spans, int n) {
  ASSERT_FALSE(spans.empty());
  EXPECT_EQ(spans.front().start, 0);
  EXPECT_EQ(spans.back().end, n - 1);
  for (std::size_t i = 0; i < spans.size(); ++i) {
    EXPECT_LE(spans[i].start, spans[i].end);
    if (i > 0) {
      EXPECT_EQ(spans[i].start, spans[i - 1].end + 1);
      EXPECT_NE(spans[i].label, spans[i - 1].label);
    }
  }
}

TEST(Decompose, CollinearIsStraight) {
  const Trajectory t = from_headings({0, 0}, std::vector<double>(10, 0.0));
  EXPECT_EQ(decompose(t), (std::vector<MetaAction>{{Action::kStraight, 0, 10}}));
}

TEST(Decompose, CounterclockwiseCircleIsLeft) {
  Trajectory t;
  for (int i = 0; i < 12; ++i) {
    const double a = 2 * std::numbers::pi * i / 12;
    t.points.push_back({5 * std::cos(a), 5 * std::sin(a)});
  }
  EXPECT_EQ(decompose(t), (std::vector<MetaAction>{{Action::kLeft, 0, 11}}));
}

TEST(Decompose, ShortInputIsOneStraightSpan) {
  EXPECT_EQ(decompose(Trajectory{{{0, 0}, {1, 1}}}), (std::vector<MetaAction>{{Action::kStraight, 0, 1}}));
  EXPECT_THROW(decompose(Trajectory{{{0, 0}, {1, 0}, {2, 0}}}, 1, 0.1), std::invalid_argument);
  EXPECT_THROW(decompose(Trajectory{{{0, 0}, {1, 0}, {2, 0}}}, 3, 0.0), std::invalid_argument);
}

TEST(Decompose, MatchesBruteForceOnRandomTrajectories) {
  Rng rng(31);
  const CurvatureConfig cfg;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(3, 25));
    std::vector<double> headings;
    double h = rng.uniform(-3, 3);
    for (int i = 0; i + 1 < n; ++i) {
      h += rng.uniform() < 0.5 ? 0.0 : rng.uniform(-0.8, 0.8);
      headings.push_back(h);
    }
    const Trajectory t = from_headings({rng.uniform(-5, 5), rng.uniform(-5, 5)}, headings, rng.uniform(0.2, 1.5));
    const auto got = decompose(t, cfg);
    ASSERT_EQ(got, oracle_decompose(t, cfg.window, cfg.theta_s)) << "trial " << trial;
    expect_cover(got, n);
  }
}

TEST(Decompose, RigidMotionInvarianceAndMirror) {
  Rng rng(32);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> headings;
    double h = 0;
    for (int i = 0; i < 12; ++i) headings.push_back(h += rng.uniform(-0.6, 0.6));
    const Trajectory t = from_headings({0, 0}, headings);
    const auto base = decompose(t);

    const Frame f{{rng.uniform(-9, 9), rng.uniform(-9, 9)}, rng.uniform(-3, 3)};
    const auto moved = decompose(transform(t, f, false));
    ASSERT_EQ(moved, base);

    Trajectory mirror = t;
    for (auto& p : mirror.points) p.y = -p.y;
    auto swapped = base;
    for (auto& a : swapped) {
      if (a.label == Action::kLeft) {
        a.label = Action::kRight;
      } else if (a.label == Action::kRight) {
        a.label = Action::kLeft;
      }
    }
    ASSERT_EQ(decompose(mirror), swapped);
  }
}

Sample empty_scene_sample() {
  Sample s = testing::synthetic_sample(1);
  for (auto& g : s.observations) g.cells.fill(0);
  return s;
}

bool contains_word(const std::string& text, const std::string& word) {
  const auto words = tokenize_words(text);
  return std::find(words.begin(), words.end(), word) != words.end();
}

TEST(Template, EmptySceneAllStraight) {
  const Sample s = empty_scene_sample();
  const auto rec = template_cot(s, {{Action::kStraight, 0, 5}});
  EXPECT_NE(rec.reasoning.find("no obstacles"), std::string::npos);
  EXPECT_TRUE(contains_word(rec.reasoning, "straight"));
  EXPECT_FALSE(contains_word(rec.reasoning, "left"));
  EXPECT_FALSE(contains_word(rec.reasoning, "right"));
  EXPECT_EQ(rec.provider, CotProvider::kTemplate);
}

TEST(Template, ObstacleAnalysisPrecedesActions) {
  Sample s = empty_scene_sample();
  s.observations.back().at(OccGrid::kRobotRow - 4, OccGrid::kRobotCol) = 255;  // 2 m ahead
  const std::vector<MetaAction> actions{{Action::kStraight, 0, 2}, {Action::kLeft, 3, 5}};
  const auto rec = template_cot(s, actions);
  const auto front = rec.reasoning.find("front");
  const auto left = rec.reasoning.find("left");
  ASSERT_NE(front, std::string::npos);
  ASSERT_NE(left, std::string::npos);
  EXPECT_LT(front, left);
  EXPECT_NE(rec.reasoning.find("2.0 m"), std::string::npos);
  EXPECT_EQ(template_cot(s, actions).reasoning, rec.reasoning);
}

TEST(Template, WordBudgetAndActionRoundTrip) {
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    Sample s = testing::synthetic_sample(100 + trial, static_cast<int>(rng.uniform_int(5, 20)));
    // Alternating actions stress the budget.
    std::vector<MetaAction> actions;
    const int n = static_cast<int>(s.future.size()) + 1;
    for (int i = 0; i < n; ++i) actions.push_back({static_cast<Action>("SLR"[i % 3]), i, i});
    if (trial % 2) actions = decompose(cot_trajectory(s));
    const auto rec = template_cot(s, actions);
    EXPECT_LE(tokenize_words(rec.reasoning).size(), static_cast<std::size_t>(kMaxCotWords));
    const auto parsed = parse_action_text(rec.reasoning);
    ASSERT_EQ(parsed.size(), actions.size());
    for (std::size_t i = 0; i < actions.size(); ++i) {
      EXPECT_EQ(parsed[i].first, actions[i].label);
      EXPECT_EQ(parsed[i].second, actions[i].end - actions[i].start + 1);
    }
  }
}

// Local HTTP server on an ephemeral port, stopped on destruction.
class MockServer {
 public:
  explicit MockServer(httplib::Server::Handler handler) {
    server_.Post("/cot", std::move(handler));
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~MockServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/cot"; }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

class WarningCapture {
 public:
  WarningCapture() : sink_(std::make_shared<spdlog::sinks::ringbuffer_sink_mt>(64)) {
    previous_ = spdlog::default_logger();
    spdlog::set_default_logger(std::make_shared<spdlog::logger>("capture", sink_));
  }
  ~WarningCapture() { spdlog::set_default_logger(previous_); }
  std::size_t warnings() const {
    std::size_t n = 0;
    for (const auto& m : sink_->last_raw()) n += m.level == spdlog::level::warn;
    return n;
  }

 private:
  std::shared_ptr<spdlog::sinks::ringbuffer_sink_mt> sink_;
  std::shared_ptr<spdlog::logger> previous_;
};

TEST(Remote, EchoServerTextIsUsed) {
  nlohmann::json seen;
  MockServer server([&](const httplib::Request& req, httplib::Response& res) {
    seen = nlohmann::json::parse(req.body);
    res.set_content(R"({"reasoning":"pedestrian ahead , turn right"})", "application/json");
  });
  const Sample s = testing::synthetic_sample(2);
  const auto actions = decompose(cot_trajectory(s));
  const auto rec = remote_cot(s, actions, {server.url()});
  EXPECT_EQ(rec.reasoning, "pedestrian ahead , turn right");
  EXPECT_EQ(rec.provider, CotProvider::kRemote);
  EXPECT_EQ(seen.at("history").size(), static_cast<std::size_t>(kHistoryLen));
  EXPECT_EQ(seen.at("future").size(), s.future.size());
  EXPECT_EQ(seen.at("actions").size(), actions.size());
  EXPECT_EQ(seen.at("obs_b64").size(), static_cast<std::size_t>(kHistoryLen));
}

TEST(Remote, ServerErrorFallsBackWithOneWarning) {
  MockServer server([](const httplib::Request&, httplib::Response& res) { res.status = 500; });
  WarningCapture capture;
  const Sample s = testing::synthetic_sample(3);
  const auto actions = decompose(cot_trajectory(s));
  const auto rec = remote_cot(s, actions, {server.url()});
  EXPECT_EQ(rec.provider, CotProvider::kTemplate);
  EXPECT_EQ(rec.reasoning, template_cot(s, actions).reasoning);
  EXPECT_EQ(capture.warnings(), 1u);
}

TEST(Remote, MalformedResponseFallsBack) {
  MockServer server([](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"text":"wrong key"})", "application/json");
  });
  WarningCapture capture;
  const Sample s = testing::synthetic_sample(4);
  EXPECT_EQ(remote_cot(s, {}, {server.url()}).provider, CotProvider::kTemplate);
  EXPECT_EQ(capture.warnings(), 1u);
}

TEST(Remote, UnreachableAndSlowEndpointsFallBack) {
  WarningCapture capture;
  const Sample s = testing::synthetic_sample(5);
  const auto actions = decompose(cot_trajectory(s));
  const auto rec = remote_cot(s, actions, {"http://127.0.0.1:1/cot", std::chrono::milliseconds(500)});
  EXPECT_EQ(rec.provider, CotProvider::kTemplate);
  EXPECT_EQ(rec.reasoning, template_cot(s, actions).reasoning);

  MockServer slow([](const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(800));
    res.set_content(R"({"reasoning":"late"})", "application/json");
  });
  EXPECT_EQ(remote_cot(s, actions, {slow.url(), std::chrono::milliseconds(200)}).provider, CotProvider::kTemplate);
  EXPECT_EQ(remote_cot(s, actions, {"ftp://example/cot"}).provider, CotProvider::kTemplate);
  EXPECT_EQ(capture.warnings(), 3u);
}

fs::path temp_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "autotraces_cot_test";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

TEST(Annotate, FillsEveryCotAndIsIdempotent) {
  auto samples = generate_samples("indoor", 40, 8, 5, 10);
  ASSERT_GE(samples.size(), 100u);
  samples.resize(100);
  const fs::path in = temp_file("in.jsonl"), out = temp_file("out.jsonl"), again = temp_file("again.jsonl");
  write_dataset(samples, in);
  EXPECT_EQ(annotate_dataset(in, out), 100u);
  for (const auto& s : read_dataset(out)) EXPECT_TRUE(s.cot_text.has_value());
  EXPECT_EQ(annotate_dataset(out, again), 100u);
  EXPECT_EQ(slurp(out), slurp(again));

  const fs::path empty = temp_file("empty.jsonl"), empty_out = temp_file("empty_out.jsonl");
  std::ofstream(empty).close();
  EXPECT_EQ(annotate_dataset(empty, empty_out), 0u);
}

TEST(Annotate, RemoteFanOutKeepsInputOrder) {
  std::atomic<int> in_flight{0}, peak{0};
  MockServer server([&](const httplib::Request& req, httplib::Response& res) {
    const int now = ++in_flight;
    int p = peak.load();
    while (now > p && !peak.compare_exchange_weak(p, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    const auto body = nlohmann::json::parse(req.body);
    res.set_content(nlohmann::json{{"reasoning", "future of " + std::to_string(body["future"].size())}}.dump(),
                    "application/json");
    --in_flight;
  });
  std::vector<Sample> samples;
  for (int i = 0; i < 12; ++i) samples.push_back(testing::synthetic_sample(50 + i, 5 + i));
  AnnotateOptions opts;
  opts.provider = CotProvider::kRemote;
  opts.remote.endpoint = server.url();
  opts.max_in_flight = 3;
  annotate_samples(samples, opts);
  for (int i = 0; i < 12; ++i) EXPECT_EQ(*samples[i].cot_text, "future of " + std::to_string(5 + i));
  EXPECT_LE(peak.load(), 3);
}

}  // namespace
}  // namespace autotraces

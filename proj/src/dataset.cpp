#include "autotraces/dataset.hpp"

#include <array>
#include <fstream>
#include <json.hpp>

namespace autotraces {

namespace {

constexpr std::string_view kAlphabet =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int decode_char(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}

using ordered_json = nlohmann::ordered_json;

ordered_json points_json(const Trajectory& t) {
  ordered_json arr = ordered_json::array();
  for (const auto& p : t.points) arr.push_back({p.x, p.y});
  return arr;
}

Waypoint point_from(const ordered_json& j) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    throw std::invalid_argument("expected [x, y] pair");
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

Trajectory trajectory_from(const ordered_json& j) {
  if (!j.is_array()) throw std::invalid_argument("expected array of points");
  Trajectory t;
  for (const auto& p : j) t.points.push_back(point_from(p));
  return t;
}

}  // namespace

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (i < bytes.size()) {
    std::uint32_t v = bytes[i] << 16;
    if (i + 1 < bytes.size()) v |= bytes[i + 1] << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += (i + 1 < bytes.size()) ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw std::invalid_argument("base64 length not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    std::array<int, 4> v{};
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=' && i + 4 == text.size() && k >= 2) {
        v[k] = 0;
        ++pad;
      } else {
        if (pad > 0) throw std::invalid_argument("base64 padding in the middle");
        v[k] = decode_char(c);
        if (v[k] < 0) throw std::invalid_argument("invalid base64 character");
      }
    }
    const std::uint32_t word = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    out.push_back(static_cast<std::uint8_t>(word >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>((word >> 8) & 0xFF));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(word & 0xFF));
  }
  return out;
}

std::string sample_to_json_line(const Sample& s) {
  ordered_json j;
  j["scene_id"] = s.scene_id;
  j["sample_id"] = s.sample_id;
  j["history"] = points_json(s.history);
  j["goal"] = {s.goal.x, s.goal.y};
  j["future"] = points_json(s.future);
  ordered_json obs = ordered_json::array();
  for (const auto& g : s.observations) obs.push_back(base64_encode(g.cells));
  j["obs"] = std::move(obs);
  j["cot"] = s.cot_text ? ordered_json(*s.cot_text) : ordered_json(nullptr);
  return j.dump();
}

Sample sample_from_json_line(std::string_view line, std::size_t line_no) {
  try {
    const ordered_json j = ordered_json::parse(line);
    Sample s;
    s.scene_id = j.at("scene_id").get<std::string>();
    s.sample_id = j.at("sample_id").get<std::string>();
    s.history = trajectory_from(j.at("history"));
    s.goal = point_from(j.at("goal"));
    s.future = trajectory_from(j.at("future"));
    const auto& obs = j.at("obs");
    if (!obs.is_array()) throw std::invalid_argument("obs must be an array");
    for (const auto& o : obs) {
      const auto bytes = base64_decode(o.get<std::string>());
      if (bytes.size() != OccGrid::kCells) {
        throw std::invalid_argument("grid has " + std::to_string(bytes.size()) + " bytes, expected " +
                                    std::to_string(OccGrid::kCells));
      }
      OccGrid g;
      for (std::size_t i = 0; i < bytes.size(); ++i) {
        if (bytes[i] != 0 && bytes[i] != 255) throw std::invalid_argument("grid value not in {0, 255}");
        g.cells[i] = bytes[i];
      }
      s.observations.push_back(g);
    }
    const auto& cot = j.at("cot");
    if (!cot.is_null()) s.cot_text = cot.get<std::string>();
    validate(s);
    return s;
  } catch (const DatasetError&) {
    throw;
  } catch (const std::exception& e) {
    throw DatasetError(line_no, e.what());
  }
}

void write_dataset(const std::vector<Sample>& samples, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const auto& s : samples) out << sample_to_json_line(s) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<Sample> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<Sample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    out.push_back(sample_from_json_line(line, line_no));
  }
  return out;
}

}  // namespace autotraces

#include "autotraces/tokens.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

namespace autotraces {

namespace {

const char* const kSpecialNames[token::kNumSpecial] = {
    "<pad>", "<unk>", "<s>", "</s>", "<image>", "<point>", "<point_start>", "<point_end>"};

std::string format_coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%+.2f", v);
  return buf;
}

void push_text(TokenStream& ts, const std::vector<int>& ids, bool target) {
  for (int id : ids) ts.push(id, TextSlot{}, target);
}

void push_prefix(TokenStream& ts, const Sample& sample, const std::string& prompt, const Vocabulary& vocab) {
  ts.push(token::kBos, TextSlot{});
  for (int f = 0; f < static_cast<int>(sample.observations.size()); ++f) {
    for (int p = 0; p < kPatchesPerFrame; ++p) ts.push(token::kImage, VisualSlot{f, p});
  }
  push_text(ts, vocab.encode(prompt), false);
}

void push_history_points(TokenStream& ts, const Sample& sample) {
  ts.push(token::kPointStart, TextSlot{});
  for (int i = 0; i < static_cast<int>(sample.history.size()); ++i) {
    ts.push(token::kPoint, PointSlot{PointSource::kHistory, i});
  }
  ts.push(token::kPointEnd, TextSlot{});
  ts.push(token::kPoint, PointSlot{PointSource::kGoal, 0});
}

void check_length(const TokenStream& ts) {
  if (static_cast<int>(ts.size()) > kContextLimit) {
    throw std::length_error("token stream length " + std::to_string(ts.size()) +
                            " exceeds context limit " + std::to_string(kContextLimit));
  }
}

}  // namespace

std::vector<std::string> tokenize_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (std::isalnum(c) || c >= 0x80) {
      cur += static_cast<char>(std::tolower(c));
    } else {
      flush();
      out.emplace_back(1, ch);
    }
  }
  flush();
  return out;
}

const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> tokens = [] {
    std::vector<std::string> t(kSpecialNames, kSpecialNames + token::kNumSpecial);
    for (int i = 0; i < 100; ++i) t.push_back(std::to_string(i));
    for (int i = 0; i < 10; ++i) t.push_back("0" + std::to_string(i));
    for (const char* s : {"+", "-", ".", ";", ",", ":"}) t.emplace_back(s);
    return t;
  }();
  return tokens;
}

Vocabulary::Vocabulary() : Vocabulary(reserved_tokens()) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < token::kNumSpecial) throw std::invalid_argument("vocabulary lacks special tokens");
  for (int i = 0; i < token::kNumSpecial; ++i) {
    if (tokens_[i] != kSpecialNames[i]) throw std::invalid_argument("special token order mismatch at " + std::to_string(i));
  }
  if (tokens_.size() > kMaxVocab) throw std::invalid_argument("vocabulary larger than cap");
  for (int i = 0; i < size(); ++i) {
    if (!index_.emplace(tokens_[i], i).second) throw std::invalid_argument("duplicate token: " + tokens_[i]);
  }
}

int Vocabulary::id(std::string_view tok) const {
  const auto it = index_.find(std::string(tok));
  return it == index_.end() ? token::kUnk : it->second;
}

bool Vocabulary::contains(std::string_view tok) const { return index_.count(std::string(tok)) > 0; }

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& w : tokenize_words(text)) ids.push_back(id(w));
  return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += token(ids[i]);
  }
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  return Vocabulary(std::move(tokens));
}

Vocabulary build_vocab(const std::vector<std::string>& corpus, int cap) {
  cap = std::min(cap, kMaxVocab);
  std::vector<std::string> tokens = reserved_tokens();
  std::map<std::string, long> counts;
  for (const auto& text : corpus) {
    for (auto& w : tokenize_words(text)) ++counts[w];
  }
  std::vector<std::pair<std::string, long>> ranked;
  for (auto& [w, n] : counts) {
    if (std::find(tokens.begin(), tokens.end(), w) == tokens.end()) ranked.emplace_back(w, n);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  for (const auto& [w, n] : ranked) {
    if (static_cast<int>(tokens.size()) >= cap) break;
    tokens.push_back(w);
  }
  return Vocabulary(std::move(tokens));
}

std::string render_prompt(const Sample& sample, int requested_T, PromptMode mode) {
  if (requested_T < 1 || requested_T > 64) throw std::invalid_argument("requested_T must be in [1, 64]");
  std::string p = "video of " + std::to_string(sample.history.size()) + " frames at 1 hz . goal x " +
                  format_coord(sample.goal.x) + " y " + format_coord(sample.goal.y) + " . ";
  if (mode == PromptMode::kForecast) {
    p += "predict " + std::to_string(requested_T) + " waypoints .";
  } else {
    p += "describe obstacles and actions .";
  }
  return p;
}

int TokenStream::mask_count() const {
  return static_cast<int>(std::count(loss_mask.begin(), loss_mask.end(), std::uint8_t{1}));
}

void TokenStream::push(int id, Slot slot, bool target) {
  if (!target && prefix_len == static_cast<int>(ids.size())) ++prefix_len;
  ids.push_back(id);
  slots.push_back(slot);
  loss_mask.push_back(target ? 1 : 0);
}

void TokenStream::check() const {
  if (slots.size() != ids.size() || loss_mask.size() != ids.size()) {
    throw std::logic_error("token stream arrays differ in length");
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const bool visual = std::holds_alternative<VisualSlot>(slots[i]);
    const bool point = std::holds_alternative<PointSlot>(slots[i]);
    if ((ids[i] == token::kImage) != visual) throw std::logic_error("IMG/VISUAL mismatch at " + std::to_string(i));
    if ((ids[i] == token::kPoint) != point) throw std::logic_error("PT/POINT mismatch at " + std::to_string(i));
    if (std::holds_alternative<QuerySlot>(slots[i]) && ids[i] != token::kPad) {
      throw std::logic_error("query slot must carry PAD at " + std::to_string(i));
    }
    if (loss_mask[i] && static_cast<int>(i) < prefix_len) throw std::logic_error("loss mask inside prefix");
  }
}

TokenStream assemble(const Sample& sample, const std::string& prompt, const Vocabulary& vocab,
                     PromptMode mode, int requested_T, bool with_targets) {
  TokenStream ts;
  push_prefix(ts, sample, prompt, vocab);
  push_history_points(ts, sample);
  if (with_targets) {
    if (mode == PromptMode::kForecast) {
      if (requested_T < 1 || requested_T > static_cast<int>(sample.future.size())) {
        throw std::invalid_argument("requested_T exceeds available future waypoints");
      }
      ts.push(token::kPointStart, TextSlot{}, true);
      for (int k = 0; k < requested_T; ++k) ts.push(token::kPoint, PointSlot{PointSource::kFuture, k}, true);
      ts.push(token::kPointEnd, TextSlot{}, true);
    } else {
      if (!sample.cot_text) throw std::invalid_argument("cot mode requires CoT text on the sample");
      push_text(ts, vocab.encode(*sample.cot_text), true);
    }
    ts.push(token::kEos, TextSlot{}, true);
  }
  check_length(ts);
  ts.check();
  return ts;
}

TokenStream assemble_single_pass(const Sample& sample, const Vocabulary& vocab, int n_queries) {
  TokenStream ts;
  push_prefix(ts, sample, render_prompt(sample, n_queries, PromptMode::kForecast), vocab);
  push_history_points(ts, sample);
  for (int q = 0; q < n_queries; ++q) ts.push(token::kPad, QuerySlot{q}, false);
  check_length(ts);
  ts.check();
  return ts;
}

std::vector<int> serialize_waypoints(const std::vector<Waypoint>& points, const Vocabulary& vocab) {
  std::vector<int> ids;
  auto coord = [&](double v) {
    const long q = std::min(9999L, std::lround(std::abs(v) * 100.0));
    ids.push_back(vocab.id(v < 0 && q > 0 ? "-" : "+"));
    ids.push_back(vocab.id(std::to_string(q / 1000)));
    ids.push_back(vocab.id(std::to_string((q / 100) % 10)));
    ids.push_back(vocab.id("."));
    ids.push_back(vocab.id(std::to_string((q / 10) % 10)));
    ids.push_back(vocab.id(std::to_string(q % 10)));
  };
  for (const auto& p : points) {
    coord(p.x);
    coord(p.y);
    ids.push_back(vocab.id(";"));
  }
  return ids;
}

bool parse_waypoints(const std::vector<int>& ids, const Vocabulary& vocab, std::vector<Waypoint>& out) {
  out.clear();
  if (ids.size() % kTextTokensPerWaypoint != 0) return false;
  auto digit = [&](int id, int& d) {
    const auto& t = vocab.token(id);
    if (t.size() != 1 || t[0] < '0' || t[0] > '9') return false;
    d = t[0] - '0';
    return true;
  };
  auto coord = [&](std::size_t at, double& v) {
    const auto& sign = vocab.token(ids[at]);
    if (sign != "+" && sign != "-") return false;
    int d[4];
    if (!digit(ids[at + 1], d[0]) || !digit(ids[at + 2], d[1]) || vocab.token(ids[at + 3]) != "." ||
        !digit(ids[at + 4], d[2]) || !digit(ids[at + 5], d[3])) {
      return false;
    }
    v = (d[0] * 1000 + d[1] * 100 + d[2] * 10 + d[3]) / 100.0;
    if (sign == "-") v = -v;
    return true;
  };
  for (std::size_t i = 0; i < ids.size(); i += kTextTokensPerWaypoint) {
    Waypoint p;
    if (!coord(i, p.x) || !coord(i + 6, p.y) || vocab.token(ids[i + 12]) != ";") return false;
    out.push_back(p);
  }
  return true;
}

TokenStream assemble_text_baseline(const Sample& sample, const Vocabulary& vocab, int requested_T,
                                   bool with_targets) {
  TokenStream ts;
  push_prefix(ts, sample, render_prompt(sample, requested_T, PromptMode::kForecast), vocab);
  push_text(ts, serialize_waypoints(sample.history.points, vocab), false);
  push_text(ts, serialize_waypoints({sample.goal}, vocab), false);
  if (with_targets) {
    if (requested_T < 1 || requested_T > static_cast<int>(sample.future.size())) {
      throw std::invalid_argument("requested_T exceeds available future waypoints");
    }
    std::vector<Waypoint> fut(sample.future.points.begin(), sample.future.points.begin() + requested_T);
    push_text(ts, serialize_waypoints(fut, vocab), true);
    ts.push(token::kEos, TextSlot{}, true);
  }
  check_length(ts);
  ts.check();
  return ts;
}

}  // namespace autotraces

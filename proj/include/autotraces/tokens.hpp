#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "autotraces/traj.hpp"

namespace autotraces {

// Special ids are fixed; they occupy the first rows of every vocabulary.
namespace token {
inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kBos = 2;
inline constexpr int kEos = 3;
inline constexpr int kImage = 4;
inline constexpr int kPoint = 5;
inline constexpr int kPointStart = 6;
inline constexpr int kPointEnd = 7;
inline constexpr int kNumSpecial = 8;
}  // namespace token

inline constexpr int kMaxVocab = 2048;
inline constexpr int kContextLimit = 512;
inline constexpr int kPatchesPerFrame = 16;  // 32x32 grid in 8x8 patches

// Lowercases and splits on whitespace; every punctuation character becomes its
// own token, letter/digit runs stay together.
std::vector<std::string> tokenize_words(std::string_view text);

class Vocabulary {
 public:
  Vocabulary();  // specials + reserved tokens only
  explicit Vocabulary(std::vector<std::string> tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(std::string_view token) const;  // kUnk when absent
  bool contains(std::string_view token) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode(std::string_view text) const;
  std::string decode(const std::vector<int>& ids) const;

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Specials, then the reserved block ("0".."99" and the coordinate symbols),
// in this order.
const std::vector<std::string>& reserved_tokens();

// Word-level vocabulary: reserved tokens then corpus words by descending
// frequency (ties lexicographic) up to `cap` entries in total.
Vocabulary build_vocab(const std::vector<std::string>& corpus, int cap = kMaxVocab);

enum class PromptMode { kCot, kForecast };

std::string render_prompt(const Sample& sample, int requested_T, PromptMode mode);

struct TextSlot {
  friend bool operator==(const TextSlot&, const TextSlot&) = default;
};
struct VisualSlot {
  int frame = 0;
  int patch = 0;
  friend bool operator==(const VisualSlot&, const VisualSlot&) = default;
};
enum class PointSource : std::uint8_t { kHistory, kGoal, kFuture };
struct PointSlot {
  PointSource source = PointSource::kHistory;
  int index = 0;
  friend bool operator==(const PointSlot&, const PointSlot&) = default;
};
// Learned query rows used only by the single-pass decoder.
struct QuerySlot {
  int index = 0;
  friend bool operator==(const QuerySlot&, const QuerySlot&) = default;
};
using Slot = std::variant<TextSlot, VisualSlot, PointSlot, QuerySlot>;

struct TokenStream {
  std::vector<int> ids;
  std::vector<Slot> slots;
  std::vector<std::uint8_t> loss_mask;
  int prefix_len = 0;  // positions before the first target

  std::size_t size() const { return ids.size(); }
  int mask_count() const;
  // Throws std::logic_error on any id/slot/mask inconsistency.
  void check() const;

  void push(int id, Slot slot, bool target = false);
};

// BOS, 9 frames x 16 IMG, prompt text, PTS, 9 history PT, PTE, goal PT, then
// targets (omitted when with_targets is false):
//   forecast: PTS, requested_T future PT, PTE, EOS
//   cot:      tokenized CoT text, EOS
TokenStream assemble(const Sample& sample, const std::string& prompt, const Vocabulary& vocab,
                     PromptMode mode, int requested_T, bool with_targets = true);

// Prefix followed by `n_queries` query rows (single-pass decoder).
TokenStream assemble_single_pass(const Sample& sample, const Vocabulary& vocab, int n_queries);

// Text-coordinate baseline: every waypoint serialized as digits.
inline constexpr int kTextTokensPerWaypoint = 13;
std::vector<int> serialize_waypoints(const std::vector<Waypoint>& points, const Vocabulary& vocab);
// Strict inverse of serialize_waypoints; returns false on malformed input.
bool parse_waypoints(const std::vector<int>& ids, const Vocabulary& vocab, std::vector<Waypoint>& out);
// BOS, frames, prompt, serialized history, serialized goal, then targets:
// serialized future (requested_T points), EOS.
TokenStream assemble_text_baseline(const Sample& sample, const Vocabulary& vocab, int requested_T,
                                   bool with_targets = true);

}  // namespace autotraces

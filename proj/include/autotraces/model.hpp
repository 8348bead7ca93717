#pragma once

#include <array>
#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

#include "autotraces/nn.hpp"
#include "autotraces/point_codec.hpp"
#include "autotraces/tokens.hpp"

namespace autotraces {

struct ModelConfig {
  int width = 128;
  int n_layers = 4;
  int n_heads = 4;
  int context = kContextLimit;
  int vocab_size = 0;
  int patch_size = 8;
  int lora_rank = 4;
  double lora_alpha = 4.0;
  int fourier_bands = 8;
  double coord_scale = 20.0;
  bool codec_include_input = true;
  bool alibi = true;  // linear recency bias on attention scores
  int query_slots = 0;  // > 0 only for the single-pass variant
  std::uint64_t seed = 0;

  CodecConfig codec() const { return {fourier_bands, coord_scale, codec_include_input}; }
  double lora_scale() const { return lora_rank > 0 ? lora_alpha / lora_rank : 0.0; }
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Head h of n penalizes a key at distance d by 2^(-8 (h + 1) / n) * d.
inline double alibi_slope(int head, int n_heads) { return std::exp2(-8.0 * (head + 1) / n_heads); }

enum class ParamGroup : std::uint8_t {
  kTokenEmbedding,
  kPositionEmbedding,
  kVisual,
  kBase,  // attention, MLP and norm weights of the decoder
  kLora,
  kTextHead,
  kPointEncoder,
  kPointHead,
  kQuery,
};
inline constexpr int kNumParamGroups = 9;

class TrainableSet {
 public:
  TrainableSet() = default;
  TrainableSet(std::initializer_list<ParamGroup> groups) {
    for (auto g : groups) on_[static_cast<int>(g)] = true;
  }
  bool has(ParamGroup g) const { return on_[static_cast<int>(g)]; }
  bool any_below_head() const;

  // LoRA + text head + visual embedder + position embeddings.
  static TrainableSet stage1();
  // LoRA + text head + point encoder + point head.
  static TrainableSet stage2();
  // LoRA + point encoder + point head + query rows.
  static TrainableSet single_pass();
  // LoRA + text head.
  static TrainableSet text_baseline();
  static TrainableSet all();

 private:
  std::array<bool, kNumParamGroups> on_{};
};

struct LayerParams {
  Mat ln1_g, ln1_b;
  Mat wq, wk, wv, wo;  // D x D, applied as x * W
  Mat ln2_g, ln2_b;
  Mat w1, b1, w2, b2;  // D x 4D, 1 x 4D, 4D x D, 1 x D
  // x * W + (alpha / r) * (x * A) * B with A: D x r, B: r x D.
  Mat lora_aq, lora_bq, lora_av, lora_bv;
};

struct ModelParams {
  ModelConfig config;
  Mat tok_emb;  // V x D
  Mat pos_emb;  // context x D
  Mat patch_w;  // 64 x D
  Mat patch_b;  // 1 x D
  std::vector<LayerParams> layers;
  Mat lnf_g, lnf_b;
  Mat head_w, head_b;  // D x V, 1 x V
  PointEncoderParams point_enc;
  PointHeadParams point_head;
  Mat queries;  // query_slots x D
};

ModelParams init_params(const ModelConfig& config);
ModelParams zeros_like(const ModelParams& params);

// Visits every tensor in a fixed order as fn(name, group, tensor).
template <class P, class F>
void for_each_tensor(P& p, F&& fn) {
  fn("tok_emb", ParamGroup::kTokenEmbedding, p.tok_emb);
  fn("pos_emb", ParamGroup::kPositionEmbedding, p.pos_emb);
  fn("patch_w", ParamGroup::kVisual, p.patch_w);
  fn("patch_b", ParamGroup::kVisual, p.patch_b);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& L = p.layers[l];
    const std::string pre = "layers." + std::to_string(l) + ".";
    fn(pre + "ln1_g", ParamGroup::kBase, L.ln1_g);
    fn(pre + "ln1_b", ParamGroup::kBase, L.ln1_b);
    fn(pre + "wq", ParamGroup::kBase, L.wq);
    fn(pre + "wk", ParamGroup::kBase, L.wk);
    fn(pre + "wv", ParamGroup::kBase, L.wv);
    fn(pre + "wo", ParamGroup::kBase, L.wo);
    fn(pre + "ln2_g", ParamGroup::kBase, L.ln2_g);
    fn(pre + "ln2_b", ParamGroup::kBase, L.ln2_b);
    fn(pre + "w1", ParamGroup::kBase, L.w1);
    fn(pre + "b1", ParamGroup::kBase, L.b1);
    fn(pre + "w2", ParamGroup::kBase, L.w2);
    fn(pre + "b2", ParamGroup::kBase, L.b2);
    fn(pre + "lora_aq", ParamGroup::kLora, L.lora_aq);
    fn(pre + "lora_bq", ParamGroup::kLora, L.lora_bq);
    fn(pre + "lora_av", ParamGroup::kLora, L.lora_av);
    fn(pre + "lora_bv", ParamGroup::kLora, L.lora_bv);
  }
  fn("lnf_g", ParamGroup::kBase, p.lnf_g);
  fn("lnf_b", ParamGroup::kBase, p.lnf_b);
  fn("head_w", ParamGroup::kTextHead, p.head_w);
  fn("head_b", ParamGroup::kTextHead, p.head_b);
  fn("point_enc.w1", ParamGroup::kPointEncoder, p.point_enc.w1);
  fn("point_enc.b1", ParamGroup::kPointEncoder, p.point_enc.b1);
  fn("point_enc.w2", ParamGroup::kPointEncoder, p.point_enc.w2);
  fn("point_enc.b2", ParamGroup::kPointEncoder, p.point_enc.b2);
  fn("point_head.w1", ParamGroup::kPointHead, p.point_head.w1);
  fn("point_head.b1", ParamGroup::kPointHead, p.point_head.b1);
  fn("point_head.w2", ParamGroup::kPointHead, p.point_head.w2);
  fn("point_head.b2", ParamGroup::kPointHead, p.point_head.b2);
  fn("queries", ParamGroup::kQuery, p.queries);
}

std::size_t parameter_count(const ModelParams& params);

// Pixel values of one 8x8 patch of a grid, scaled to [0, 1].
Row patch_pixels(const OccGrid& grid, int patch, int patch_size = 8);

struct EmbedCache {
  std::vector<int> point_rows;
  std::vector<EncodeCache> point_caches;
};

// Position-wise input rows: token, visual patch, encoded point or query
// embedding, plus the learned position embedding.
Mat embed_stream(const ModelParams& params, const TokenStream& stream, const Sample& sample,
                 EmbedCache* cache = nullptr);
// The waypoint a point slot refers to.
Waypoint slot_waypoint(const Sample& sample, const PointSlot& slot);

struct LayerCache {
  Mat x_in;
  LayerNormCache ln1;
  Mat a, q, k, v, tq, tv;
  std::vector<Mat> probs;  // per head, n x n (upper triangle zero)
  Mat attn;
  LayerNormCache ln2;
  Mat m, u, g;
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  LayerNormCache lnf;
};

// Pre-norm causal decoder; returns the final-normed hidden states (n x D).
Mat forward(const ModelParams& params, const Mat& embeddings, bool use_lora, ForwardCache* cache = nullptr);

// Backpropagates dL/dhidden through the decoder. Accumulates gradients for
// trainable groups into `grads` and returns dL/dembeddings.
Mat forward_backward(const ModelParams& params, const ForwardCache& cache, const Mat& d_hidden, bool use_lora,
                     const TrainableSet& trainable, ModelParams& grads);

void embed_backward(const ModelParams& params, const TokenStream& stream, const Sample& sample,
                    const EmbedCache& cache, const Mat& d_emb, const TrainableSet& trainable, ModelParams& grads);

// Routing of supervised positions. The hidden state at position j-1 produces
// the logits for target j and, when target j is a future PT, its waypoint.
struct HeadRouting {
  std::vector<int> ce_rows;     // j - 1 for every masked target j
  std::vector<int> ce_targets;  // ids[j]
  std::vector<int> point_rows;  // hidden rows decoded by the point head
  std::vector<int> point_index; // future waypoint index for each point row
};

HeadRouting route_heads(const TokenStream& stream);

struct HeadOutputs {
  Mat logits;  // ce_rows.size() x V
  std::vector<Waypoint> waypoints;
};

HeadOutputs heads(const ModelParams& params, const Mat& hidden, const HeadRouting& routing);

Row text_logits(const ModelParams& params, const Row& hidden);

// Incremental decoder with cached keys and values.
class DecodeSession {
 public:
  DecodeSession(const ModelParams& params, bool use_lora);

  // Appends input rows (position embeddings already added, as produced by
  // embed_stream) and returns their hidden states.
  Mat append(const Mat& embeddings);
  int length() const { return length_; }

 private:
  const ModelParams* params_;
  bool use_lora_;
  std::vector<Mat> keys_, values_;
  int length_ = 0;
};

}  // namespace autotraces

#include "autotraces/model.hpp"

#include <stdexcept>

#include "autotraces/rng.hpp"

namespace autotraces {

void ModelConfig::validate() const {
  if (width <= 0 || n_heads <= 0 || width % n_heads != 0) throw std::invalid_argument("width must be divisible by n_heads");
  if (n_layers < 1) throw std::invalid_argument("n_layers must be >= 1");
  if (lora_rank < 0) throw std::invalid_argument("lora_rank must be >= 0");
  if (vocab_size < token::kNumSpecial) throw std::invalid_argument("vocab_size too small");
  if (context < 1 || context > kContextLimit) throw std::invalid_argument("context out of range");
  if (patch_size != 8) throw std::invalid_argument("patch_size must be 8 for 32x32 grids");
  if (fourier_bands < 1 || !(coord_scale > 0)) throw std::invalid_argument("invalid point codec settings");
  if (query_slots < 0) throw std::invalid_argument("query_slots must be >= 0");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"width", c.width},         {"n_layers", c.n_layers},
                     {"n_heads", c.n_heads},     {"context", c.context},
                     {"vocab_size", c.vocab_size}, {"patch_size", c.patch_size},
                     {"lora_rank", c.lora_rank}, {"lora_alpha", c.lora_alpha},
                     {"fourier_bands", c.fourier_bands}, {"coord_scale", c.coord_scale},
                     {"codec_include_input", c.codec_include_input}, {"alibi", c.alibi},
                     {"query_slots", c.query_slots}, {"seed", c.seed},
                     {"activation", "gelu-erf"}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.width = j.value("width", d.width);
  c.n_layers = j.value("n_layers", d.n_layers);
  c.n_heads = j.value("n_heads", d.n_heads);
  c.context = j.value("context", d.context);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.patch_size = j.value("patch_size", d.patch_size);
  c.lora_rank = j.value("lora_rank", d.lora_rank);
  c.lora_alpha = j.value("lora_alpha", d.lora_alpha);
  c.fourier_bands = j.value("fourier_bands", d.fourier_bands);
  c.coord_scale = j.value("coord_scale", d.coord_scale);
  c.codec_include_input = j.value("codec_include_input", d.codec_include_input);
  c.alibi = j.value("alibi", d.alibi);
  c.query_slots = j.value("query_slots", d.query_slots);
  c.seed = j.value("seed", d.seed);
}

bool TrainableSet::any_below_head() const {
  return has(ParamGroup::kTokenEmbedding) || has(ParamGroup::kPositionEmbedding) || has(ParamGroup::kVisual) ||
         has(ParamGroup::kBase) || has(ParamGroup::kLora) || has(ParamGroup::kPointEncoder) ||
         has(ParamGroup::kQuery);
}

TrainableSet TrainableSet::stage1() {
  return {ParamGroup::kLora, ParamGroup::kTextHead, ParamGroup::kVisual, ParamGroup::kPositionEmbedding};
}
TrainableSet TrainableSet::stage2() {
  return {ParamGroup::kLora, ParamGroup::kTextHead, ParamGroup::kPointEncoder, ParamGroup::kPointHead};
}
TrainableSet TrainableSet::single_pass() {
  return {ParamGroup::kLora, ParamGroup::kPointEncoder, ParamGroup::kPointHead, ParamGroup::kQuery};
}
TrainableSet TrainableSet::text_baseline() { return {ParamGroup::kLora, ParamGroup::kTextHead}; }
TrainableSet TrainableSet::all() {
  return {ParamGroup::kTokenEmbedding, ParamGroup::kPositionEmbedding, ParamGroup::kVisual,
          ParamGroup::kBase,           ParamGroup::kLora,              ParamGroup::kTextHead,
          ParamGroup::kPointEncoder,   ParamGroup::kPointHead,         ParamGroup::kQuery};
}

namespace {

Mat gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.normal();
  return m;
}

}  // namespace

ModelParams init_params(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const int D = cfg.width, V = cfg.vocab_size, r = cfg.lora_rank;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(D));
  const double residual = 1.0 / std::sqrt(2.0 * cfg.n_layers);

  ModelParams p;
  p.config = cfg;
  p.tok_emb = gaussian(rng, V, D, 1.0);
  p.pos_emb = gaussian(rng, cfg.context, D, 0.5);
  p.patch_w = gaussian(rng, cfg.patch_size * cfg.patch_size, D, 1.0 / cfg.patch_size);
  p.patch_b = gaussian(rng, 1, D, 1.0);
  for (int l = 0; l < cfg.n_layers; ++l) {
    LayerParams L;
    L.ln1_g = Mat::Ones(1, D);
    L.ln1_b = Mat::Zero(1, D);
    L.wq = gaussian(rng, D, D, inv_sqrt_d);
    L.wk = gaussian(rng, D, D, inv_sqrt_d);
    L.wv = gaussian(rng, D, D, inv_sqrt_d);
    L.wo = gaussian(rng, D, D, inv_sqrt_d * residual);
    L.ln2_g = Mat::Ones(1, D);
    L.ln2_b = Mat::Zero(1, D);
    L.w1 = gaussian(rng, D, 4 * D, inv_sqrt_d);
    L.b1 = Mat::Zero(1, 4 * D);
    L.w2 = gaussian(rng, 4 * D, D, 0.5 * inv_sqrt_d * residual);
    L.b2 = Mat::Zero(1, D);
    L.lora_aq = gaussian(rng, D, r, inv_sqrt_d);
    L.lora_bq = Mat::Zero(r, D);
    L.lora_av = gaussian(rng, D, r, inv_sqrt_d);
    L.lora_bv = Mat::Zero(r, D);
    p.layers.push_back(std::move(L));
  }
  p.lnf_g = Mat::Ones(1, D);
  p.lnf_b = Mat::Zero(1, D);
  p.head_w = gaussian(rng, D, V, 0.02);
  p.head_b = Mat::Zero(1, V);
  const int F = feature_count(cfg.codec());
  p.point_enc.w1 = gaussian(rng, F, 2 * D, 1.0 / std::sqrt(static_cast<double>(F)));
  p.point_enc.b1 = Mat::Zero(1, 2 * D);
  p.point_enc.w2 = gaussian(rng, 2 * D, D, 1.0 / std::sqrt(2.0 * D));
  p.point_enc.b2 = Mat::Zero(1, D);
  p.point_head.w1 = gaussian(rng, D, D, inv_sqrt_d);
  p.point_head.b1 = Mat::Zero(1, D);
  p.point_head.w2 = gaussian(rng, D, 2, 0.01);
  p.point_head.b2 = Mat::Zero(1, 2);
  p.queries = gaussian(rng, cfg.query_slots, D, 1.0);
  return p;
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams z = params;
  for_each_tensor(z, [](const std::string&, ParamGroup, Mat& t) { t.setZero(); });
  return z;
}

std::size_t parameter_count(const ModelParams& params) {
  std::size_t n = 0;
  for_each_tensor(params, [&](const std::string&, ParamGroup, const Mat& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

Row patch_pixels(const OccGrid& grid, int patch, int patch_size) {
  const int per_row = OccGrid::kSize / patch_size;
  const int r0 = (patch / per_row) * patch_size, c0 = (patch % per_row) * patch_size;
  Row px(patch_size * patch_size);
  for (int r = 0; r < patch_size; ++r) {
    for (int c = 0; c < patch_size; ++c) px(r * patch_size + c) = grid.at(r0 + r, c0 + c) / 255.0;
  }
  return px;
}

Waypoint slot_waypoint(const Sample& sample, const PointSlot& slot) {
  const auto pick = [&](const Trajectory& t) {
    if (slot.index < 0 || slot.index >= static_cast<int>(t.size())) {
      throw std::out_of_range("point slot references missing waypoint " + std::to_string(slot.index));
    }
    return t[static_cast<std::size_t>(slot.index)];
  };
  switch (slot.source) {
    case PointSource::kHistory:
      return pick(sample.history);
    case PointSource::kFuture:
      return pick(sample.future);
    case PointSource::kGoal:
      return sample.goal;
  }
  throw std::logic_error("unknown point source");
}

Mat embed_stream(const ModelParams& params, const TokenStream& stream, const Sample& sample, EmbedCache* cache) {
  const int n = static_cast<int>(stream.size());
  if (n > params.config.context) throw std::length_error("stream longer than model context");
  const int D = params.config.width;
  const CodecConfig codec = params.config.codec();
  Mat x(n, D);
  if (cache) *cache = {};
  for (int i = 0; i < n; ++i) {
    const Slot& slot = stream.slots[static_cast<std::size_t>(i)];
    if (const auto* vs = std::get_if<VisualSlot>(&slot)) {
      if (vs->frame < 0 || vs->frame >= static_cast<int>(sample.observations.size())) {
        throw std::out_of_range("visual slot references missing frame " + std::to_string(vs->frame));
      }
      x.row(i) = patch_pixels(sample.observations[static_cast<std::size_t>(vs->frame)], vs->patch,
                              params.config.patch_size) * params.patch_w + params.patch_b;
    } else if (const auto* ps = std::get_if<PointSlot>(&slot)) {
      EncodeCache ec;
      x.row(i) = encode_point(params.point_enc, codec, slot_waypoint(sample, *ps), cache ? &ec : nullptr);
      if (cache) {
        cache->point_rows.push_back(i);
        cache->point_caches.push_back(std::move(ec));
      }
    } else if (const auto* qs = std::get_if<QuerySlot>(&slot)) {
      if (qs->index < 0 || qs->index >= params.queries.rows()) throw std::out_of_range("query slot out of range");
      x.row(i) = params.queries.row(qs->index);
    } else {
      const int id = stream.ids[static_cast<std::size_t>(i)];
      if (id < 0 || id >= params.tok_emb.rows()) throw std::out_of_range("token id out of range");
      x.row(i) = params.tok_emb.row(id);
    }
  }
  x += params.pos_emb.topRows(n);
  return x;
}

void embed_backward(const ModelParams& params, const TokenStream& stream, const Sample& sample,
                    const EmbedCache& cache, const Mat& d_emb, const TrainableSet& trainable, ModelParams& grads) {
  const int n = static_cast<int>(stream.size());
  if (trainable.has(ParamGroup::kPositionEmbedding)) grads.pos_emb.topRows(n) += d_emb;
  if (trainable.has(ParamGroup::kPointEncoder)) {
    for (std::size_t k = 0; k < cache.point_rows.size(); ++k) {
      encode_point_backward(params.point_enc, cache.point_caches[k], d_emb.row(cache.point_rows[k]), grads.point_enc);
    }
  }
  const bool visual = trainable.has(ParamGroup::kVisual);
  const bool tokens = trainable.has(ParamGroup::kTokenEmbedding);
  const bool queries = trainable.has(ParamGroup::kQuery);
  if (!visual && !tokens && !queries) return;
  for (int i = 0; i < n; ++i) {
    const Slot& slot = stream.slots[static_cast<std::size_t>(i)];
    if (const auto* vs = std::get_if<VisualSlot>(&slot)) {
      if (!visual) continue;
      const Row px = patch_pixels(sample.observations[static_cast<std::size_t>(vs->frame)], vs->patch,
                                  params.config.patch_size);
      grads.patch_w.noalias() += px.transpose() * d_emb.row(i);
      grads.patch_b += d_emb.row(i);
    } else if (const auto* qs = std::get_if<QuerySlot>(&slot)) {
      if (queries) grads.queries.row(qs->index) += d_emb.row(i);
    } else if (!std::holds_alternative<PointSlot>(slot)) {
      if (tokens) grads.tok_emb.row(stream.ids[static_cast<std::size_t>(i)]) += d_emb.row(i);
    }
  }
}

namespace {

// Causal softmax attention of `q_rows` (positions offset..offset+m-1) over
// keys/values 0..offset+m-1, one head slice at a time.
// Scores get a per-head linear distance penalty when `alibi` is set; the
// bias is constant, so the backward pass is unchanged.
void attend(const Mat& q, const Mat& keys, const Mat& values, int offset, int n_heads, bool alibi, Mat& out,
            std::vector<Mat>* probs) {
  const Eigen::Index m = q.rows(), D = q.cols();
  const int dh = static_cast<int>(D) / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Eigen::Index total = offset + m;
  out.resize(m, D);
  if (probs) probs->assign(static_cast<std::size_t>(n_heads), Mat());
  for (int h = 0; h < n_heads; ++h) {
    Mat s = (q.middleCols(h * dh, dh) * keys.topRows(total).middleCols(h * dh, dh).transpose()) * scale;
    const double slope = alibi ? alibi_slope(h, n_heads) : 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      const Eigen::Index visible = offset + i + 1;
      if (slope != 0.0) {
        for (Eigen::Index j = 0; j < visible; ++j) s(i, j) -= slope * static_cast<double>(visible - 1 - j);
      }
      const double mx = s.row(i).head(visible).maxCoeff();
      double sum = 0.0;
      for (Eigen::Index j = 0; j < visible; ++j) {
        s(i, j) = std::exp(s(i, j) - mx);
        sum += s(i, j);
      }
      s.row(i).head(visible) /= sum;
      s.row(i).tail(total - visible).setZero();
    }
    out.middleCols(h * dh, dh).noalias() = s * values.topRows(total).middleCols(h * dh, dh);
    if (probs) (*probs)[static_cast<std::size_t>(h)] = std::move(s);
  }
}

Mat project(const Mat& a, const Mat& w, const Mat& lora_a, const Mat& lora_b, bool use_lora, double scale,
            Mat* t_out) {
  Mat y = a * w;
  if (use_lora && lora_a.cols() > 0) {
    Mat t = a * lora_a;
    y.noalias() += scale * (t * lora_b);
    if (t_out) *t_out = std::move(t);
  }
  return y;
}

}  // namespace

Mat forward(const ModelParams& params, const Mat& embeddings, bool use_lora, ForwardCache* cache) {
  const ModelConfig& cfg = params.config;
  const double s = cfg.lora_scale();
  Mat x = embeddings;
  if (cache) cache->layers.assign(params.layers.size(), LayerCache{});
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const LayerParams& L = params.layers[l];
    LayerCache local;
    LayerCache& c = cache ? cache->layers[l] : local;
    if (cache) c.x_in = x;
    c.a = layer_norm(x, L.ln1_g, L.ln1_b, &c.ln1);
    c.q = project(c.a, L.wq, L.lora_aq, L.lora_bq, use_lora, s, &c.tq);
    c.k = c.a * L.wk;
    c.v = project(c.a, L.wv, L.lora_av, L.lora_bv, use_lora, s, &c.tv);
    attend(c.q, c.k, c.v, 0, cfg.n_heads, cfg.alibi, c.attn, cache ? &c.probs : nullptr);
    x.noalias() += c.attn * L.wo;
    c.m = layer_norm(x, L.ln2_g, L.ln2_b, &c.ln2);
    c.u = (c.m * L.w1).rowwise() + L.b1.row(0);
    c.g = gelu(c.u);
    x.noalias() += c.g * L.w2;
    x.rowwise() += L.b2.row(0);
  }
  return layer_norm(x, params.lnf_g, params.lnf_b, cache ? &cache->lnf : nullptr);
}

Mat forward_backward(const ModelParams& params, const ForwardCache& cache, const Mat& d_hidden, bool use_lora,
                     const TrainableSet& trainable, ModelParams& grads) {
  const ModelConfig& cfg = params.config;
  const bool base = trainable.has(ParamGroup::kBase);
  const bool lora = use_lora && trainable.has(ParamGroup::kLora) && cfg.lora_rank > 0;
  const double s = cfg.lora_scale();
  const int dh = cfg.width / cfg.n_heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Mat dx = layer_norm_backward(d_hidden, params.lnf_g, cache.lnf, base ? &grads.lnf_g : nullptr,
                               base ? &grads.lnf_b : nullptr);
  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const LayerParams& L = params.layers[li];
    const LayerCache& c = cache.layers[li];
    LayerParams& G = grads.layers[li];

    // MLP block.
    Mat du = dx * L.w2.transpose();
    du.array() *= c.u.unaryExpr([](double v) { return gelu_grad(v); }).array();
    if (base) {
      G.w2.noalias() += c.g.transpose() * dx;
      G.b2 += dx.colwise().sum();
      G.w1.noalias() += c.m.transpose() * du;
      G.b1 += du.colwise().sum();
    }
    const Mat dm = du * L.w1.transpose();
    dx += layer_norm_backward(dm, L.ln2_g, c.ln2, base ? &G.ln2_g : nullptr, base ? &G.ln2_b : nullptr);

    // Attention block.
    const Mat d_attn = dx * L.wo.transpose();
    if (base) G.wo.noalias() += c.attn.transpose() * dx;
    Mat dq(c.q.rows(), c.q.cols()), dk(c.k.rows(), c.k.cols()), dv(c.v.rows(), c.v.cols());
    for (int h = 0; h < cfg.n_heads; ++h) {
      const Mat& P = c.probs[static_cast<std::size_t>(h)];
      const auto d_out = d_attn.middleCols(h * dh, dh);
      Mat dP = d_out * c.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh).noalias() = P.transpose() * d_out;
      for (Eigen::Index i = 0; i < dP.rows(); ++i) {
        const double inner = P.row(i).head(i + 1).dot(dP.row(i).head(i + 1));
        dP.row(i).head(i + 1) = (P.row(i).head(i + 1).array() * (dP.row(i).head(i + 1).array() - inner)).matrix();
        dP.row(i).tail(dP.cols() - i - 1).setZero();
      }
      dq.middleCols(h * dh, dh).noalias() = (dP * c.k.middleCols(h * dh, dh)) * att_scale;
      dk.middleCols(h * dh, dh).noalias() = (dP.transpose() * c.q.middleCols(h * dh, dh)) * att_scale;
    }
    Mat da = dq * L.wq.transpose();
    da.noalias() += dk * L.wk.transpose();
    da.noalias() += dv * L.wv.transpose();
    if (use_lora && cfg.lora_rank > 0) {
      const Mat dtq = s * (dq * L.lora_bq.transpose());
      const Mat dtv = s * (dv * L.lora_bv.transpose());
      da.noalias() += dtq * L.lora_aq.transpose();
      da.noalias() += dtv * L.lora_av.transpose();
      if (lora) {
        G.lora_bq.noalias() += s * (c.tq.transpose() * dq);
        G.lora_bv.noalias() += s * (c.tv.transpose() * dv);
        G.lora_aq.noalias() += c.a.transpose() * dtq;
        G.lora_av.noalias() += c.a.transpose() * dtv;
      }
    }
    if (base) {
      G.wq.noalias() += c.a.transpose() * dq;
      G.wk.noalias() += c.a.transpose() * dk;
      G.wv.noalias() += c.a.transpose() * dv;
    }
    dx += layer_norm_backward(da, L.ln1_g, c.ln1, base ? &G.ln1_g : nullptr, base ? &G.ln1_b : nullptr);
  }
  return dx;
}

HeadRouting route_heads(const TokenStream& stream) {
  HeadRouting r;
  for (std::size_t j = 0; j < stream.size(); ++j) {
    const int jj = static_cast<int>(j);
    if (stream.loss_mask[j]) {
      if (j == 0) throw std::logic_error("first position cannot be a target");
      r.ce_rows.push_back(jj - 1);
      r.ce_targets.push_back(stream.ids[j]);
      if (const auto* ps = std::get_if<PointSlot>(&stream.slots[j]); ps && ps->source == PointSource::kFuture) {
        r.point_rows.push_back(jj - 1);
        r.point_index.push_back(ps->index);
      }
    } else if (const auto* qs = std::get_if<QuerySlot>(&stream.slots[j])) {
      r.point_rows.push_back(jj);
      r.point_index.push_back(qs->index);
    }
  }
  return r;
}

Row text_logits(const ModelParams& params, const Row& hidden) { return hidden * params.head_w + params.head_b; }

HeadOutputs heads(const ModelParams& params, const Mat& hidden, const HeadRouting& routing) {
  HeadOutputs out;
  const Eigen::Index V = params.head_w.cols();
  out.logits.resize(static_cast<Eigen::Index>(routing.ce_rows.size()), V);
  for (std::size_t k = 0; k < routing.ce_rows.size(); ++k) {
    out.logits.row(static_cast<Eigen::Index>(k)) = text_logits(params, hidden.row(routing.ce_rows[k]));
  }
  const CodecConfig codec = params.config.codec();
  for (int row : routing.point_rows) out.waypoints.push_back(decode_point(params.point_head, codec, hidden.row(row)));
  return out;
}

DecodeSession::DecodeSession(const ModelParams& params, bool use_lora) : params_(&params), use_lora_(use_lora) {
  const auto& cfg = params.config;
  keys_.assign(params.layers.size(), Mat(cfg.context, cfg.width));
  values_.assign(params.layers.size(), Mat(cfg.context, cfg.width));
}

Mat DecodeSession::append(const Mat& embeddings) {
  const ModelParams& params = *params_;
  const ModelConfig& cfg = params.config;
  const int m = static_cast<int>(embeddings.rows());
  if (length_ + m > cfg.context) throw std::length_error("decode session exceeds model context");
  const double s = cfg.lora_scale();
  Mat x = embeddings;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const LayerParams& L = params.layers[l];
    const Mat a = layer_norm(x, L.ln1_g, L.ln1_b);
    const Mat q = project(a, L.wq, L.lora_aq, L.lora_bq, use_lora_, s, nullptr);
    keys_[l].middleRows(length_, m) = a * L.wk;
    values_[l].middleRows(length_, m) = project(a, L.wv, L.lora_av, L.lora_bv, use_lora_, s, nullptr);
    Mat attn;
    attend(q, keys_[l], values_[l], length_, cfg.n_heads, cfg.alibi, attn, nullptr);
    x.noalias() += attn * L.wo;
    const Mat mm = layer_norm(x, L.ln2_g, L.ln2_b);
    Mat u = (mm * L.w1).rowwise() + L.b1.row(0);
    x.noalias() += gelu(u) * L.w2;
    x.rowwise() += L.b2.row(0);
  }
  length_ += m;
  return layer_norm(x, params.lnf_g, params.lnf_b);
}

}  // namespace autotraces

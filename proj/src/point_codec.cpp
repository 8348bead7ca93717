#include "autotraces/point_codec.hpp"

namespace autotraces {

Row fourier_features(Waypoint p, const CodecConfig& cfg) {
  Row f(feature_count(cfg));
  const double c[2] = {p.x / cfg.scale, p.y / cfg.scale};
  for (int k = 0; k < cfg.bands; ++k) {
    const double freq = std::ldexp(std::numbers::pi, k);
    for (int d = 0; d < 2; ++d) {
      f(4 * k + 2 * d) = std::sin(freq * c[d]);
      f(4 * k + 2 * d + 1) = std::cos(freq * c[d]);
    }
  }
  if (cfg.include_input) {
    f(4 * cfg.bands) = c[0];
    f(4 * cfg.bands + 1) = c[1];
  }
  return f;
}

Mat fourier_jacobian(Waypoint p, const CodecConfig& cfg) {
  const double scale = cfg.scale;
  Mat j = Mat::Zero(feature_count(cfg), 2);
  const double c[2] = {p.x / scale, p.y / scale};
  for (int k = 0; k < cfg.bands; ++k) {
    const double freq = std::ldexp(std::numbers::pi, k);
    for (int d = 0; d < 2; ++d) {
      j(4 * k + 2 * d, d) = freq / scale * std::cos(freq * c[d]);
      j(4 * k + 2 * d + 1, d) = -freq / scale * std::sin(freq * c[d]);
    }
  }
  if (cfg.include_input) {
    j(4 * cfg.bands, 0) = 1.0 / scale;
    j(4 * cfg.bands + 1, 1) = 1.0 / scale;
  }
  return j;
}

Row encode_point(const PointEncoderParams& params, const CodecConfig& cfg, Waypoint p, EncodeCache* cache) {
  Row features = fourier_features(p, cfg);
  Row pre = features * params.w1 + params.b1;
  Row act = gelu(pre);
  Row out = act * params.w2 + params.b2;
  if (cache) {
    cache->features = std::move(features);
    cache->pre = std::move(pre);
    cache->act = std::move(act);
  }
  return out;
}

void encode_point_backward(const PointEncoderParams& params, const EncodeCache& cache, const Row& d_out,
                           PointEncoderParams& grads) {
  grads.w2.noalias() += cache.act.transpose() * d_out;
  grads.b2 += d_out;
  const Row d_act = d_out * params.w2.transpose();
  const Row d_pre = d_act.array() * cache.pre.unaryExpr([](double v) { return gelu_grad(v); }).array();
  grads.w1.noalias() += cache.features.transpose() * d_pre;
  grads.b1 += d_pre;
}

Mat encode_point_jacobian(const PointEncoderParams& params, const CodecConfig& cfg, Waypoint p) {
  EncodeCache cache;
  encode_point(params, cfg, p, &cache);
  const Mat jf = fourier_jacobian(p, cfg);  // F x 2
  Mat jpre = params.w1.transpose() * jf;  // 2D x 2
  for (Eigen::Index i = 0; i < jpre.rows(); ++i) jpre.row(i) *= gelu_grad(cache.pre(i));
  return params.w2.transpose() * jpre;  // D x 2
}

Waypoint decode_point(const PointHeadParams& params, const CodecConfig& cfg, const Row& hidden, DecodeCache* cache) {
  Row pre = hidden * params.w1 + params.b1;
  Row act = gelu(pre);
  const Row out = act * params.w2 + params.b2;
  if (cache) {
    cache->hidden = hidden;
    cache->pre = std::move(pre);
    cache->act = std::move(act);
  }
  return {out(0) * cfg.scale, out(1) * cfg.scale};
}

Row decode_point_backward(const PointHeadParams& params, const CodecConfig& cfg, const DecodeCache& cache,
                          Waypoint d_xy, PointHeadParams* grads) {
  Row d_out(2);
  d_out << d_xy.x * cfg.scale, d_xy.y * cfg.scale;
  const Row d_act = d_out * params.w2.transpose();
  const Row d_pre = d_act.array() * cache.pre.unaryExpr([](double v) { return gelu_grad(v); }).array();
  if (grads) {
    grads->w2.noalias() += cache.act.transpose() * d_out;
    grads->b2 += d_out;
    grads->w1.noalias() += cache.hidden.transpose() * d_pre;
    grads->b1 += d_pre;
  }
  return d_pre * params.w1.transpose();
}

}  // namespace autotraces

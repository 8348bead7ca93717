#pragma once

#include "autotraces/nn.hpp"
#include "autotraces/traj.hpp"

namespace autotraces {

struct CodecConfig {
  int bands = 8;
  double scale = 20.0;  // meters mapped to unit coordinates
  bool include_input = true;  // append the raw scaled coordinates to the features
};

inline int feature_count(const CodecConfig& cfg) { return 4 * cfg.bands + (cfg.include_input ? 2 : 0); }

// Fourier features -> affine (features -> 2D) -> GELU -> affine (2D -> D).
struct PointEncoderParams {
  Mat w1, b1, w2, b2;
};

// affine (D -> D) -> GELU -> affine (D -> 2), output rescaled to meters.
struct PointHeadParams {
  Mat w1, b1, w2, b2;
};

// [sin(2^k pi c), cos(2^k pi c)] for k = 0..B-1 and c in {x/scale, y/scale};
// entry 4k + 2c + {0: sin, 1: cos}. With include_input, entries 4B and 4B+1
// hold x/scale and y/scale.
Row fourier_features(Waypoint p, const CodecConfig& cfg);
// d features / d (x, y), shape feature_count x 2.
Mat fourier_jacobian(Waypoint p, const CodecConfig& cfg);

struct EncodeCache {
  Row features, pre, act;
};

Row encode_point(const PointEncoderParams& params, const CodecConfig& cfg, Waypoint p, EncodeCache* cache = nullptr);
// Accumulates parameter gradients for d_out into `grads`.
void encode_point_backward(const PointEncoderParams& params, const EncodeCache& cache, const Row& d_out,
                           PointEncoderParams& grads);
// d embedding / d (x, y), shape D x 2.
Mat encode_point_jacobian(const PointEncoderParams& params, const CodecConfig& cfg, Waypoint p);

struct DecodeCache {
  Row hidden, pre, act;
};

Waypoint decode_point(const PointHeadParams& params, const CodecConfig& cfg, const Row& hidden,
                      DecodeCache* cache = nullptr);
// Given dL/d(x, y) in meters, accumulates parameter gradients and returns dL/dhidden.
Row decode_point_backward(const PointHeadParams& params, const CodecConfig& cfg, const DecodeCache& cache,
                          Waypoint d_xy, PointHeadParams* grads);

}  // namespace autotraces

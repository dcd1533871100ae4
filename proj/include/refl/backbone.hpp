#pragma once

#include <cstdint>

#include "refl/matrix.hpp"
#include "refl/pointcloud.hpp"

namespace refl {

// Per-point encoder with two rounds of neighbor-mean aggregation. Stands in
// for a full segmentation backbone; produces point features F and initial
// logits Y.
struct BackboneConfig {
    std::size_t hidden = 64;       // h
    std::size_t feature_dim = 128; // d
    std::size_t num_classes = 6;   // C
};

struct BackboneOutput {
    Matrix features;  // N x d
    Matrix logits;    // N x C
};

// Forward intermediates needed by the exact backward pass.
struct BackboneCache {
    Matrix input;  // N x 6
    Matrix pre1, x1, cat1;
    Matrix pre2, x2, cat2;
    Matrix features;
    const NeighborIndex* nn = nullptr;
    std::size_t n = 0;
};

// Parameter names: backbone.mlp1.{w,b}, backbone.mlp2.{w,b}, backbone.mlp3.{w,b},
// backbone.head.{w,b}. Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)],
// biases zero.
void backbone_init(ParamStore& params, const BackboneConfig& cfg, std::uint64_t seed);

// Input channels per point: coords normalized to the scene bounding box, then
// colors. Requires nn built on pc.
BackboneOutput backbone_forward(const PointCloud& pc, const NeighborIndex& nn,
                                const ParamStore& params, const BackboneConfig& cfg,
                                BackboneCache* cache = nullptr);

// Accumulates exact gradients into params' grad slots. Either upstream grad
// may be empty (treated as zero).
void backbone_backward(const BackboneCache& cache, ParamStore& params, const BackboneConfig& cfg,
                       const Matrix& grad_features, const Matrix& grad_logits);

}  // namespace refl

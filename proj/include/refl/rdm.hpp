#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "refl/matrix.hpp"
#include "refl/pointcloud.hpp"
#include "refl/ssre.hpp"

namespace refl {

// Region dependency modeling: multi-head self-attention over pooled region
// features with a contextual relative positional encoding derived from
// quantized region-center offsets, then point-region fusion.
struct RdmConfig {
    std::size_t feature_dim = 128;  // d
    std::size_t num_heads = 8;
    std::size_t num_layers = 3;
    std::size_t num_classes = 6;
    double rpe_interval = 0.02;     // t, meters
    double rpe_max_rel = 2.0;       // meters
    bool plain_block = false;       // ablation: no LN, no residuals
    bool use_rpe = true;            // disable to drop the positional bias entirely

    std::size_t rpe_bins() const;   // L = round(2 * max_rel / t)
    std::size_t head_dim() const { return feature_dim / num_heads; }
    void validate() const;
};

// Quantized per-axis relative offsets between region centers, clamped to
// [0, L). Layout axis-major: idx[axis*M*M + i*M + j].
struct RpeIndices {
    std::size_t m = 0;
    std::size_t bins = 0;
    std::vector<int> idx;

    int at(int axis, std::size_t i, std::size_t j) const { return idx[axis * m * m + i * m + j]; }
};

RpeIndices rpe_index(const std::vector<Vec3>& centers, double interval, double max_rel);

// Contextual bias per head: bias[h](i,j) = dot(q_h(i), pe_ij|head slice) / sqrt(d/heads)
// where pe_ij sums one row from each per-axis table. `table` is (3L) x d.
std::vector<Matrix> rpe_bias(const Matrix& queries, const RpeIndices& indices, const Matrix& table,
                             std::size_t num_heads);

struct LayerCache {
    Matrix x_in;
    Matrix ln1_hat;                 // normalized input (pre-gain)
    std::vector<double> ln1_rstd;
    Matrix q, k, v;
    std::vector<Matrix> attn;       // per head M x M, rows sum to 1
    Matrix heads_out;               // concatenated A_h V_h, M x d
    Matrix attn_out;                // after output projection
    Matrix x_mid;                   // after attention residual
    Matrix ln2_hat;
    std::vector<double> ln2_rstd;
    Matrix mlp_pre, mlp_hidden;
    Matrix x_out;
};

struct RdmCache {
    Matrix pooled;                  // M x d
    std::vector<Vec3> centers;      // mean of member coordinates
    RpeIndices indices;
    std::vector<LayerCache> layers;
    Matrix enhanced;                // M x d
    Matrix fuse_concat;             // N x 2d
    Matrix fuse_pre, fuse_hidden;   // N x d
    const RegionPartition* partition = nullptr;
    std::size_t n = 0;
};

// Parameter names: rdm.l<i>.{wq,wk,wv,wo,ln1.g,ln1.b,ln2.g,ln2.b,mlp.w1,mlp.b1,
// mlp.w2,mlp.b2,table}, rdm.fuse.{w1,b1,w2,b2}. Weights uniform in
// [-1/sqrt(d), 1/sqrt(d)]; LN gains one; biases and RPE tables zero.
void rdm_init(ParamStore& params, const RdmConfig& cfg, std::uint64_t seed);

// Mean of features and coordinates per region. Throws if a region has no
// members (cannot happen for partitions built by extract_regions).
std::pair<Matrix, std::vector<Vec3>> region_pool(const Matrix& features,
                                                 const std::vector<Vec3>& coords,
                                                 const RegionPartition& partition);

// Runs num_layers attention blocks; attention maps land in cache->layers.
Matrix region_attention_forward(const Matrix& pooled, const std::vector<Vec3>& centers,
                                const ParamStore& params, const RdmConfig& cfg, RdmCache* cache);

// Concatenate each point's feature with its region's enhanced feature, apply
// the fusion MLP head.
Matrix fuse_and_predict(const Matrix& features, const Matrix& enhanced,
                        const RegionPartition& partition, const ParamStore& params,
                        const RdmConfig& cfg, RdmCache* cache);

// Full RDM forward: pool -> attention -> fusion. Returns refined logits N x C.
Matrix rdm_forward(const Matrix& features, const std::vector<Vec3>& coords,
                   const RegionPartition& partition, const ParamStore& params,
                   const RdmConfig& cfg, RdmCache* cache);

// Exact gradients for all rdm.* parameters (accumulated into params) plus the
// gradient w.r.t. the input point features. Region assignment is constant.
Matrix rdm_backward(const RdmCache& cache, ParamStore& params, const RdmConfig& cfg,
                    const Matrix& grad_refined_logits);

// Writes one CSV per layer/head ("attn_l<layer>_h<head>.csv", M rows of M
// comma-separated floats) plus "regions_meta.csv" with
// region_id,class_id,cx,cy,cz,point_count. Requires a populated forward cache.
void write_attention_dump(const RdmCache& cache, const RegionPartition& partition,
                          const std::string& out_dir);

// Closed-form op count of the attention stack: per layer 4Md^2 for the
// Q/K/V/output projections plus 6M^2 d pairwise work (scores, positional
// embedding sum, contextual dot, value aggregation) plus 3hM^2 softmax ops.
std::uint64_t attention_flops(std::size_t m, std::size_t d, std::size_t heads, std::size_t layers);

}  // namespace refl

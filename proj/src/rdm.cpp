#include "refl/rdm.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "refl/rng.hpp"
#include "refl/textio.hpp"

namespace refl {

namespace {

constexpr double kLnEps = 1e-5;

std::string layer_prefix(std::size_t layer) { return "rdm.l" + std::to_string(layer) + "."; }

Matrix uniform_matrix(std::size_t rows, std::size_t cols, double bound, SplitMix64& rng) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = rng.uniform(-bound, bound);
    return m;
}

void accumulate(Matrix& into, const Matrix& delta) {
    for (std::size_t i = 0; i < into.size(); ++i) into.data()[i] += delta.data()[i];
}

Matrix col_sums(const Matrix& m) {
    Matrix out(1, m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double* row = m.row(i);
        for (std::size_t j = 0; j < m.cols(); ++j) out(0, j) += row[j];
    }
    return out;
}

// y = gain * xhat + bias, xhat = (x - mean) * rstd per row
Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, Matrix& hat_out,
                  std::vector<double>& rstd_out) {
    const std::size_t d = x.cols();
    hat_out = Matrix(x.rows(), d);
    rstd_out.resize(x.rows());
    Matrix y(x.rows(), d);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const double* row = x.row(i);
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double rstd = 1.0 / std::sqrt(var + kLnEps);
        rstd_out[i] = rstd;
        double* hrow = hat_out.row(i);
        double* yrow = y.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            hrow[j] = (row[j] - mean) * rstd;
            yrow[j] = gain(0, j) * hrow[j] + bias(0, j);
        }
    }
    return y;
}

Matrix apply_gain_bias(const Matrix& hat, const Matrix& gain, const Matrix& bias) {
    Matrix y(hat.rows(), hat.cols());
    for (std::size_t i = 0; i < hat.rows(); ++i) {
        const double* hrow = hat.row(i);
        double* yrow = y.row(i);
        for (std::size_t j = 0; j < hat.cols(); ++j) yrow[j] = gain(0, j) * hrow[j] + bias(0, j);
    }
    return y;
}

// Returns dx; accumulates dgain/dbias.
Matrix layer_norm_backward(const Matrix& dy, const Matrix& hat, const std::vector<double>& rstd,
                           const Matrix& gain, Matrix& dgain, Matrix& dbias) {
    const std::size_t d = hat.cols();
    Matrix dx(hat.rows(), d);
    for (std::size_t i = 0; i < hat.rows(); ++i) {
        const double* dyr = dy.row(i);
        const double* hr = hat.row(i);
        double sum_dxhat = 0.0, sum_dxhat_hat = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double dxhat = dyr[j] * gain(0, j);
            sum_dxhat += dxhat;
            sum_dxhat_hat += dxhat * hr[j];
            dgain(0, j) += dyr[j] * hr[j];
            dbias(0, j) += dyr[j];
        }
        const double inv_d = 1.0 / static_cast<double>(d);
        double* dxr = dx.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            const double dxhat = dyr[j] * gain(0, j);
            dxr[j] = rstd[i] * (dxhat - sum_dxhat * inv_d - hr[j] * sum_dxhat_hat * inv_d);
        }
    }
    return dx;
}

// dlogits = A * (dA - rowsum(dA * A)) per row
Matrix softmax_rows_backward(const Matrix& a, const Matrix& da) {
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* ar = a.row(i);
        const double* dar = da.row(i);
        double dot = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) dot += ar[j] * dar[j];
        double* orow = out.row(i);
        for (std::size_t j = 0; j < a.cols(); ++j) orow[j] = ar[j] * (dar[j] - dot);
    }
    return out;
}

}  // namespace

std::size_t RdmConfig::rpe_bins() const {
    return static_cast<std::size_t>(std::llround(2.0 * rpe_max_rel / rpe_interval));
}

void RdmConfig::validate() const {
    if (feature_dim == 0 || num_heads == 0 || num_layers == 0) {
        throw ConfigError("rdm: feature_dim, num_heads, num_layers must be positive");
    }
    if (feature_dim % num_heads != 0) {
        throw ConfigError("rdm: feature_dim " + std::to_string(feature_dim) +
                          " not divisible by num_heads " + std::to_string(num_heads));
    }
    if (rpe_interval <= 0.0 || rpe_max_rel <= 0.0) {
        throw ConfigError("rdm: rpe interval and max relative distance must be positive");
    }
}

RpeIndices rpe_index(const std::vector<Vec3>& centers, double interval, double max_rel) {
    if (interval <= 0.0) throw NumericError("rpe_index: interval must be positive");
    RpeIndices out;
    out.m = centers.size();
    const std::size_t bins = static_cast<std::size_t>(std::llround(2.0 * max_rel / interval));
    out.bins = bins;
    out.idx.resize(3 * out.m * out.m);
    const long half = static_cast<long>(bins) / 2;
    for (int axis = 0; axis < 3; ++axis) {
        int* base = out.idx.data() + axis * out.m * out.m;
        for (std::size_t i = 0; i < out.m; ++i) {
            for (std::size_t j = 0; j < out.m; ++j) {
                const double r = centers[i][axis] - centers[j][axis];
                long raw = static_cast<long>(std::floor(r / interval));
                raw = std::clamp(raw, -half, half - 1);
                base[i * out.m + j] = static_cast<int>(raw + half);
            }
        }
    }
    return out;
}

std::vector<Matrix> rpe_bias(const Matrix& queries, const RpeIndices& indices, const Matrix& table,
                             std::size_t num_heads) {
    const std::size_t m = indices.m;
    const std::size_t d = queries.cols();
    const std::size_t dh = d / num_heads;
    const std::size_t bins = indices.bins;
    if (table.rows() != 3 * bins || table.cols() != d) {
        throw NumericError("rpe_bias: table shape " + table.shape_str() + " does not match L=" +
                           std::to_string(bins) + ", d=" + std::to_string(d));
    }
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Matrix> bias(num_heads, Matrix(m, m));
    std::vector<double> pe(d);
    for (std::size_t i = 0; i < m; ++i) {
        const double* qrow = queries.row(i);
        for (std::size_t j = 0; j < m; ++j) {
            const double* tx = table.row(static_cast<std::size_t>(indices.at(0, i, j)));
            const double* ty = table.row(bins + static_cast<std::size_t>(indices.at(1, i, j)));
            const double* tz = table.row(2 * bins + static_cast<std::size_t>(indices.at(2, i, j)));
            for (std::size_t c = 0; c < d; ++c) pe[c] = tx[c] + ty[c] + tz[c];
            for (std::size_t h = 0; h < num_heads; ++h) {
                double acc = 0.0;
                for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) acc += qrow[c] * pe[c];
                bias[h](i, j) = acc * inv_sqrt_dh;
            }
        }
    }
    return bias;
}

void rdm_init(ParamStore& params, const RdmConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    SplitMix64 rng(seed);
    const std::size_t d = cfg.feature_dim;
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
        const std::string p = layer_prefix(l);
        params.add(p + "wq", uniform_matrix(d, d, bound, rng));
        params.add(p + "wk", uniform_matrix(d, d, bound, rng));
        params.add(p + "wv", uniform_matrix(d, d, bound, rng));
        params.add(p + "wo", uniform_matrix(d, d, bound, rng));
        params.add(p + "ln1.g", Matrix(1, d, 1.0));
        params.add(p + "ln1.b", Matrix(1, d));
        params.add(p + "ln2.g", Matrix(1, d, 1.0));
        params.add(p + "ln2.b", Matrix(1, d));
        params.add(p + "mlp.w1", uniform_matrix(d, 2 * d, bound, rng));
        params.add(p + "mlp.b1", Matrix(1, 2 * d));
        params.add(p + "mlp.w2", uniform_matrix(2 * d, d, 1.0 / std::sqrt(2.0 * d), rng));
        params.add(p + "mlp.b2", Matrix(1, d));
        params.add(p + "table", Matrix(3 * cfg.rpe_bins(), d));
    }
    params.add("rdm.fuse.w1", uniform_matrix(2 * d, d, 1.0 / std::sqrt(2.0 * d), rng));
    params.add("rdm.fuse.b1", Matrix(1, d));
    params.add("rdm.fuse.w2", uniform_matrix(d, cfg.num_classes, bound, rng));
    params.add("rdm.fuse.b2", Matrix(1, cfg.num_classes));
}

std::pair<Matrix, std::vector<Vec3>> region_pool(const Matrix& features,
                                                 const std::vector<Vec3>& coords,
                                                 const RegionPartition& partition) {
    const std::size_t n = features.rows();
    if (partition.region_of.size() != n || coords.size() != n) {
        throw NumericError("region_pool: partition does not cover the feature rows");
    }
    const std::size_t m = partition.region_count;
    Matrix pooled(m, features.cols());
    std::vector<Vec3> centers(m, Vec3{0, 0, 0});
    std::vector<std::size_t> counts(m, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t r = partition.region_of[i];
        ++counts[r];
        double* prow = pooled.row(r);
        const double* frow = features.row(i);
        for (std::size_t c = 0; c < features.cols(); ++c) prow[c] += frow[c];
        for (int a = 0; a < 3; ++a) centers[r][a] += coords[i][a];
    }
    for (std::size_t r = 0; r < m; ++r) {
        if (counts[r] == 0) throw NumericError("region_pool: empty region " + std::to_string(r));
        const double inv = 1.0 / static_cast<double>(counts[r]);
        double* prow = pooled.row(r);
        for (std::size_t c = 0; c < features.cols(); ++c) prow[c] *= inv;
        for (int a = 0; a < 3; ++a) centers[r][a] *= inv;
    }
    return {std::move(pooled), std::move(centers)};
}

Matrix region_attention_forward(const Matrix& pooled, const std::vector<Vec3>& centers,
                                const ParamStore& params, const RdmConfig& cfg, RdmCache* cache) {
    cfg.validate();
    const std::size_t m = pooled.rows();
    const std::size_t d = cfg.feature_dim;
    if (m == 0) throw NumericError("region_attention_forward: no regions");
    if (pooled.cols() != d) {
        throw ConfigError("region_attention_forward: pooled dim " + std::to_string(pooled.cols()) +
                          " != configured d " + std::to_string(d));
    }
    const std::size_t heads = cfg.num_heads;
    const std::size_t dh = cfg.head_dim();
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    RpeIndices indices = rpe_index(centers, cfg.rpe_interval, cfg.rpe_max_rel);
    Matrix x = pooled;
    std::vector<LayerCache> layer_caches;
    layer_caches.reserve(cfg.num_layers);

    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
        const std::string p = layer_prefix(l);
        LayerCache lc;
        lc.x_in = x;

        Matrix u;
        if (cfg.plain_block) {
            u = x;
        } else {
            u = layer_norm(x, params.value(p + "ln1.g"), params.value(p + "ln1.b"), lc.ln1_hat,
                           lc.ln1_rstd);
        }
        lc.q = matmul(u, params.value(p + "wq"));
        lc.k = matmul(u, params.value(p + "wk"));
        lc.v = matmul(u, params.value(p + "wv"));

        std::vector<Matrix> bias;
        if (cfg.use_rpe) bias = rpe_bias(lc.q, indices, params.value(p + "table"), heads);

        lc.attn.resize(heads);
        lc.heads_out = Matrix(m, d);
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * dh;
            Matrix logits(m, m);
            for (std::size_t i = 0; i < m; ++i) {
                const double* qr = lc.q.row(i) + off;
                double* lrow = logits.row(i);
                for (std::size_t j = 0; j < m; ++j) {
                    const double* kr = lc.k.row(j) + off;
                    double acc = 0.0;
                    for (std::size_t c = 0; c < dh; ++c) acc += qr[c] * kr[c];
                    lrow[j] = acc * inv_sqrt_dh;
                }
            }
            if (cfg.use_rpe) accumulate(logits, bias[h]);
            lc.attn[h] = softmax_rows(logits);
            // heads_out slice = A_h V_h
            for (std::size_t i = 0; i < m; ++i) {
                const double* ar = lc.attn[h].row(i);
                double* orow = lc.heads_out.row(i) + off;
                for (std::size_t j = 0; j < m; ++j) {
                    const double a = ar[j];
                    const double* vr = lc.v.row(j) + off;
                    for (std::size_t c = 0; c < dh; ++c) orow[c] += a * vr[c];
                }
            }
        }
        lc.attn_out = matmul(lc.heads_out, params.value(p + "wo"));
        lc.x_mid = cfg.plain_block ? lc.attn_out : add(x, lc.attn_out);

        Matrix mlp_in;
        if (cfg.plain_block) {
            mlp_in = lc.x_mid;
        } else {
            mlp_in = layer_norm(lc.x_mid, params.value(p + "ln2.g"), params.value(p + "ln2.b"),
                                lc.ln2_hat, lc.ln2_rstd);
        }
        lc.mlp_pre = add_row_broadcast(matmul(mlp_in, params.value(p + "mlp.w1")),
                                       params.value(p + "mlp.b1"));
        lc.mlp_hidden = relu(lc.mlp_pre);
        Matrix mlp_out = add_row_broadcast(matmul(lc.mlp_hidden, params.value(p + "mlp.w2")),
                                           params.value(p + "mlp.b2"));
        lc.x_out = cfg.plain_block ? mlp_out : add(lc.x_mid, mlp_out);
        x = lc.x_out;
        layer_caches.push_back(std::move(lc));
    }

    if (cache) {
        cache->pooled = pooled;
        cache->centers = centers;
        cache->indices = std::move(indices);
        cache->layers = std::move(layer_caches);
        cache->enhanced = x;
    }
    return x;
}

Matrix fuse_and_predict(const Matrix& features, const Matrix& enhanced,
                        const RegionPartition& partition, const ParamStore& params,
                        const RdmConfig& cfg, RdmCache* cache) {
    const std::size_t n = features.rows();
    const std::size_t d = cfg.feature_dim;
    if (partition.region_of.size() != n) {
        throw NumericError("fuse_and_predict: partition size != N");
    }
    Matrix concat(n, 2 * d);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t r = partition.region_of[i];
        std::copy(features.row(i), features.row(i) + d, concat.row(i));
        std::copy(enhanced.row(r), enhanced.row(r) + d, concat.row(i) + d);
    }
    Matrix pre = add_row_broadcast(matmul(concat, params.value("rdm.fuse.w1")),
                                   params.value("rdm.fuse.b1"));
    Matrix hidden = relu(pre);
    Matrix logits = add_row_broadcast(matmul(hidden, params.value("rdm.fuse.w2")),
                                      params.value("rdm.fuse.b2"));
    if (cache) {
        cache->fuse_concat = std::move(concat);
        cache->fuse_pre = std::move(pre);
        cache->fuse_hidden = std::move(hidden);
        cache->partition = &partition;
        cache->n = n;
    }
    return logits;
}

Matrix rdm_forward(const Matrix& features, const std::vector<Vec3>& coords,
                   const RegionPartition& partition, const ParamStore& params,
                   const RdmConfig& cfg, RdmCache* cache) {
    auto [pooled, centers] = region_pool(features, coords, partition);
    RdmCache local;
    RdmCache* c = cache ? cache : &local;
    Matrix enhanced = region_attention_forward(pooled, centers, params, cfg, c);
    return fuse_and_predict(features, enhanced, partition, params, cfg, c);
}

Matrix rdm_backward(const RdmCache& cache, ParamStore& params, const RdmConfig& cfg,
                    const Matrix& grad_refined_logits) {
    if (cache.partition == nullptr || cache.n == 0 || cache.layers.size() != cfg.num_layers) {
        throw NumericError("rdm_backward: stale or missing forward cache");
    }
    const RegionPartition& partition = *cache.partition;
    const std::size_t n = cache.n;
    const std::size_t m = partition.region_count;
    const std::size_t d = cfg.feature_dim;
    const std::size_t heads = cfg.num_heads;
    const std::size_t dh = cfg.head_dim();
    const std::size_t bins = cache.indices.bins;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    // fusion head
    accumulate(params.grad("rdm.fuse.w2"), matmul_at(cache.fuse_hidden, grad_refined_logits));
    accumulate(params.grad("rdm.fuse.b2"), col_sums(grad_refined_logits));
    Matrix d_hidden = matmul_bt(grad_refined_logits, params.value("rdm.fuse.w2"));
    Matrix d_pre = relu_backward(cache.fuse_pre, d_hidden);
    accumulate(params.grad("rdm.fuse.w1"), matmul_at(cache.fuse_concat, d_pre));
    accumulate(params.grad("rdm.fuse.b1"), col_sums(d_pre));
    Matrix d_concat = matmul_bt(d_pre, params.value("rdm.fuse.w1"));

    Matrix grad_features(n, d);
    Matrix g(m, d);  // grad w.r.t. enhanced region features
    for (std::size_t i = 0; i < n; ++i) {
        const double* dc = d_concat.row(i);
        std::copy(dc, dc + d, grad_features.row(i));
        double* grow = g.row(partition.region_of[i]);
        for (std::size_t c = 0; c < d; ++c) grow[c] += dc[d + c];
    }

    // attention stack, last layer first
    for (std::size_t li = cfg.num_layers; li-- > 0;) {
        const LayerCache& lc = cache.layers[li];
        const std::string p = layer_prefix(li);

        // MLP half
        accumulate(params.grad(p + "mlp.w2"), matmul_at(lc.mlp_hidden, g));
        accumulate(params.grad(p + "mlp.b2"), col_sums(g));
        Matrix dmh = matmul_bt(g, params.value(p + "mlp.w2"));
        Matrix dmp = relu_backward(lc.mlp_pre, dmh);
        Matrix mlp_in = cfg.plain_block
                            ? lc.x_mid
                            : apply_gain_bias(lc.ln2_hat, params.value(p + "ln2.g"),
                                              params.value(p + "ln2.b"));
        accumulate(params.grad(p + "mlp.w1"), matmul_at(mlp_in, dmp));
        accumulate(params.grad(p + "mlp.b1"), col_sums(dmp));
        Matrix d_mlp_in = matmul_bt(dmp, params.value(p + "mlp.w1"));

        Matrix g_mid;
        if (cfg.plain_block) {
            g_mid = d_mlp_in;
        } else {
            g_mid = add(g, layer_norm_backward(d_mlp_in, lc.ln2_hat, lc.ln2_rstd,
                                               params.value(p + "ln2.g"),
                                               params.grad(p + "ln2.g"),
                                               params.grad(p + "ln2.b")));
        }

        // attention half; x_mid = [x_in +] attn_out
        accumulate(params.grad(p + "wo"), matmul_at(lc.heads_out, g_mid));
        Matrix d_heads = matmul_bt(g_mid, params.value(p + "wo"));

        Matrix dq(m, d), dk(m, d), dv(m, d);
        Matrix& d_table = params.grad(p + "table");
        std::vector<double> pe(d);
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * dh;
            // dA = dO_h V_h^T ; dV_h += A^T dO_h
            Matrix da(m, m);
            for (std::size_t i = 0; i < m; ++i) {
                const double* dor = d_heads.row(i) + off;
                const double* ar = lc.attn[h].row(i);
                double* dar = da.row(i);
                for (std::size_t j = 0; j < m; ++j) {
                    const double* vr = lc.v.row(j) + off;
                    double acc = 0.0;
                    for (std::size_t c = 0; c < dh; ++c) acc += dor[c] * vr[c];
                    dar[j] = acc;
                    double* dvr = dv.row(j) + off;
                    const double a = ar[j];
                    for (std::size_t c = 0; c < dh; ++c) dvr[c] += a * dor[c];
                }
            }
            Matrix dlogits = softmax_rows_backward(lc.attn[h], da);
            // score path
            for (std::size_t i = 0; i < m; ++i) {
                const double* dlr = dlogits.row(i);
                const double* qr = lc.q.row(i) + off;
                double* dqr = dq.row(i) + off;
                for (std::size_t j = 0; j < m; ++j) {
                    const double gl = dlr[j] * inv_sqrt_dh;
                    if (gl == 0.0) continue;
                    const double* kr = lc.k.row(j) + off;
                    double* dkr = dk.row(j) + off;
                    for (std::size_t c = 0; c < dh; ++c) {
                        dqr[c] += gl * kr[c];
                        dkr[c] += gl * qr[c];
                    }
                }
            }
            // contextual bias path
            if (cfg.use_rpe) {
                const Matrix& table = params.value(p + "table");
                for (std::size_t i = 0; i < m; ++i) {
                    const double* dlr = dlogits.row(i);
                    const double* qr = lc.q.row(i);
                    double* dqr = dq.row(i);
                    for (std::size_t j = 0; j < m; ++j) {
                        const double gl = dlr[j] * inv_sqrt_dh;
                        if (gl == 0.0) continue;
                        const std::size_t ix = static_cast<std::size_t>(cache.indices.at(0, i, j));
                        const std::size_t iy = static_cast<std::size_t>(cache.indices.at(1, i, j));
                        const std::size_t iz = static_cast<std::size_t>(cache.indices.at(2, i, j));
                        const double* tx = table.row(ix);
                        const double* ty = table.row(bins + iy);
                        const double* tz = table.row(2 * bins + iz);
                        double* dtx = d_table.row(ix);
                        double* dty = d_table.row(bins + iy);
                        double* dtz = d_table.row(2 * bins + iz);
                        for (std::size_t c = off; c < off + dh; ++c) {
                            dqr[c] += gl * (tx[c] + ty[c] + tz[c]);
                            const double gq = gl * qr[c];
                            dtx[c] += gq;
                            dty[c] += gq;
                            dtz[c] += gq;
                        }
                    }
                }
            }
        }

        Matrix u = cfg.plain_block ? lc.x_in
                                   : apply_gain_bias(lc.ln1_hat, params.value(p + "ln1.g"),
                                                     params.value(p + "ln1.b"));
        accumulate(params.grad(p + "wq"), matmul_at(u, dq));
        accumulate(params.grad(p + "wk"), matmul_at(u, dk));
        accumulate(params.grad(p + "wv"), matmul_at(u, dv));
        Matrix du = matmul_bt(dq, params.value(p + "wq"));
        accumulate(du, matmul_bt(dk, params.value(p + "wk")));
        accumulate(du, matmul_bt(dv, params.value(p + "wv")));

        if (cfg.plain_block) {
            g = du;
        } else {
            g = add(g_mid, layer_norm_backward(du, lc.ln1_hat, lc.ln1_rstd,
                                               params.value(p + "ln1.g"),
                                               params.grad(p + "ln1.g"),
                                               params.grad(p + "ln1.b")));
        }
    }

    // mean-pool adjoint: spread each region gradient equally over its members
    std::vector<std::size_t> counts(m, 0);
    for (std::size_t i = 0; i < n; ++i) ++counts[partition.region_of[i]];
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t r = partition.region_of[i];
        const double inv = 1.0 / static_cast<double>(counts[r]);
        const double* grow = g.row(r);
        double* frow = grad_features.row(i);
        for (std::size_t c = 0; c < d; ++c) frow[c] += grow[c] * inv;
    }
    return grad_features;
}

void write_attention_dump(const RdmCache& cache, const RegionPartition& partition,
                          const std::string& out_dir) {
    if (cache.layers.empty() || cache.partition == nullptr) {
        throw NumericError("write_attention_dump: stale or missing forward cache");
    }
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create directory: " + out_dir);

    for (std::size_t l = 0; l < cache.layers.size(); ++l) {
        const LayerCache& lc = cache.layers[l];
        for (std::size_t h = 0; h < lc.attn.size(); ++h) {
            const Matrix& a = lc.attn[h];
            std::ostringstream out;
            for (std::size_t i = 0; i < a.rows(); ++i) {
                for (std::size_t j = 0; j < a.cols(); ++j) {
                    if (j) out << ",";
                    out << fmt_g9(a(i, j));
                }
                out << "\n";
            }
            atomic_write_text(out_dir + "/attn_l" + std::to_string(l) + "_h" + std::to_string(h) +
                                  ".csv",
                              out.str());
        }
    }

    std::vector<std::size_t> counts(partition.region_count, 0);
    for (std::size_t r : partition.region_of) ++counts[r];
    std::ostringstream meta;
    meta << "region_id,class_id,cx,cy,cz,point_count\n";
    for (std::size_t r = 0; r < partition.region_count; ++r) {
        meta << r << "," << partition.region_class[r] << "," << fmt_g9(cache.centers[r][0]) << ","
             << fmt_g9(cache.centers[r][1]) << "," << fmt_g9(cache.centers[r][2]) << ","
             << counts[r] << "\n";
    }
    atomic_write_text(out_dir + "/regions_meta.csv", meta.str());
}

std::uint64_t attention_flops(std::size_t m, std::size_t d, std::size_t heads, std::size_t layers) {
    if (m == 0 || d == 0 || heads == 0 || layers == 0) {
        throw NumericError("attention_flops: all arguments must be positive");
    }
    const std::uint64_t mm = static_cast<std::uint64_t>(m) * m;
    const std::uint64_t proj = 4ULL * m * d * d;
    const std::uint64_t pairwise = 6ULL * mm * d + 3ULL * heads * mm;
    return layers * (proj + pairwise);
}

}  // namespace refl

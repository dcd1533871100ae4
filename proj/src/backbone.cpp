#include "refl/backbone.hpp"

#include <algorithm>
#include <cmath>

#include "refl/rng.hpp"

namespace refl {

namespace {

Matrix uniform_matrix(std::size_t rows, std::size_t cols, double bound, SplitMix64& rng) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = rng.uniform(-bound, bound);
    return m;
}

Matrix neighbor_mean(const Matrix& x, const NeighborIndex& nn) {
    Matrix out(x.rows(), x.cols());
    const double inv_k = 1.0 / static_cast<double>(nn.k);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double* orow = out.row(i);
        for (std::size_t j : nn.neighbors[i]) {
            const double* xr = x.row(j);
            for (std::size_t c = 0; c < x.cols(); ++c) orow[c] += xr[c];
        }
        for (std::size_t c = 0; c < x.cols(); ++c) orow[c] *= inv_k;
    }
    return out;
}

// adjoint of neighbor_mean: scatter upstream/k back to each neighbor
Matrix neighbor_mean_backward(const Matrix& upstream, const NeighborIndex& nn) {
    Matrix out(upstream.rows(), upstream.cols());
    const double inv_k = 1.0 / static_cast<double>(nn.k);
    for (std::size_t i = 0; i < upstream.rows(); ++i) {
        const double* urow = upstream.row(i);
        for (std::size_t j : nn.neighbors[i]) {
            double* orow = out.row(j);
            for (std::size_t c = 0; c < upstream.cols(); ++c) orow[c] += urow[c] * inv_k;
        }
    }
    return out;
}

void check_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* name) {
    if (m.rows() != rows || m.cols() != cols) {
        throw ConfigError(std::string("backbone: parameter ") + name + " has shape " +
                          m.shape_str() + ", expected " + std::to_string(rows) + "x" +
                          std::to_string(cols));
    }
}

}  // namespace

void backbone_init(ParamStore& params, const BackboneConfig& cfg, std::uint64_t seed) {
    SplitMix64 rng(seed);
    const std::size_t h = cfg.hidden, d = cfg.feature_dim, c = cfg.num_classes;
    params.add("backbone.mlp1.w", uniform_matrix(6, h, 1.0 / std::sqrt(6.0), rng));
    params.add("backbone.mlp1.b", Matrix(1, h));
    params.add("backbone.mlp2.w", uniform_matrix(2 * h, h, 1.0 / std::sqrt(2.0 * h), rng));
    params.add("backbone.mlp2.b", Matrix(1, h));
    params.add("backbone.mlp3.w", uniform_matrix(2 * h, d, 1.0 / std::sqrt(2.0 * h), rng));
    params.add("backbone.mlp3.b", Matrix(1, d));
    params.add("backbone.head.w", uniform_matrix(d, c, 1.0 / std::sqrt(static_cast<double>(d)), rng));
    params.add("backbone.head.b", Matrix(1, c));
}

BackboneOutput backbone_forward(const PointCloud& pc, const NeighborIndex& nn,
                                const ParamStore& params, const BackboneConfig& cfg,
                                BackboneCache* cache) {
    const std::size_t n = pc.size();
    if (n == 0) throw NumericError("backbone_forward: empty cloud");
    if (nn.neighbors.size() != n || nn.k < 1) {
        throw ConfigError("backbone_forward: neighbor index does not match cloud");
    }
    const std::size_t h = cfg.hidden, d = cfg.feature_dim, c = cfg.num_classes;
    const Matrix& w1 = params.value("backbone.mlp1.w");
    const Matrix& b1 = params.value("backbone.mlp1.b");
    const Matrix& w2 = params.value("backbone.mlp2.w");
    const Matrix& b2 = params.value("backbone.mlp2.b");
    const Matrix& w3 = params.value("backbone.mlp3.w");
    const Matrix& b3 = params.value("backbone.mlp3.b");
    const Matrix& wh = params.value("backbone.head.w");
    const Matrix& bh = params.value("backbone.head.b");
    check_shape(w1, 6, h, "mlp1.w");
    check_shape(w2, 2 * h, h, "mlp2.w");
    check_shape(w3, 2 * h, d, "mlp3.w");
    check_shape(wh, d, c, "head.w");

    // normalize coords to the scene bounding box for translation/scale invariance
    Vec3 lo = pc.coords[0], hi = pc.coords[0];
    for (const Vec3& p : pc.coords) {
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], p[a]);
            hi[a] = std::max(hi[a], p[a]);
        }
    }
    Matrix input(n, 6);
    for (std::size_t i = 0; i < n; ++i) {
        double* row = input.row(i);
        for (int a = 0; a < 3; ++a) {
            const double extent = std::max(hi[a] - lo[a], 1e-9);
            row[a] = (pc.coords[i][a] - lo[a]) / extent;
            row[3 + a] = pc.colors[i][a];
        }
    }

    Matrix pre1 = add_row_broadcast(matmul(input, w1), b1);
    Matrix x1 = relu(pre1);
    Matrix cat1 = hconcat(x1, neighbor_mean(x1, nn));
    Matrix pre2 = add_row_broadcast(matmul(cat1, w2), b2);
    Matrix x2 = relu(pre2);
    Matrix cat2 = hconcat(x2, neighbor_mean(x2, nn));
    BackboneOutput out;
    out.features = add_row_broadcast(matmul(cat2, w3), b3);
    out.logits = add_row_broadcast(matmul(out.features, wh), bh);

    if (cache) {
        cache->input = input;
        cache->pre1 = std::move(pre1);
        cache->x1 = std::move(x1);
        cache->cat1 = std::move(cat1);
        cache->pre2 = std::move(pre2);
        cache->x2 = std::move(x2);
        cache->cat2 = std::move(cat2);
        cache->features = out.features;
        cache->nn = &nn;
        cache->n = n;
    }
    return out;
}

namespace {

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

// split [a | b] gradient back into halves
std::pair<Matrix, Matrix> hsplit(const Matrix& m, std::size_t left_cols) {
    Matrix a(m.rows(), left_cols), b(m.rows(), m.cols() - left_cols);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        std::copy(m.row(i), m.row(i) + left_cols, a.row(i));
        std::copy(m.row(i) + left_cols, m.row(i) + m.cols(), b.row(i));
    }
    return {std::move(a), std::move(b)};
}

}  // namespace

void backbone_backward(const BackboneCache& cache, ParamStore& params, const BackboneConfig& cfg,
                       const Matrix& grad_features, const Matrix& grad_logits) {
    if (cache.nn == nullptr || cache.n == 0 || cache.cat2.rows() != cache.n) {
        throw NumericError("backbone_backward: stale or missing forward cache");
    }
    const NeighborIndex& nn = *cache.nn;
    const std::size_t h = cfg.hidden;

    Matrix gF(cache.n, cfg.feature_dim);
    if (grad_features.size() > 0) gF = grad_features;
    if (grad_logits.size() > 0) {
        const Matrix& wh = params.value("backbone.head.w");
        accumulate(params.grad("backbone.head.w"), matmul_at(cache.features, grad_logits));
        accumulate(params.grad("backbone.head.b"), col_sums(grad_logits));
        accumulate(gF, matmul_bt(grad_logits, wh));
    }

    accumulate(params.grad("backbone.mlp3.w"), matmul_at(cache.cat2, gF));
    accumulate(params.grad("backbone.mlp3.b"), col_sums(gF));
    Matrix g_cat2 = matmul_bt(gF, params.value("backbone.mlp3.w"));
    auto [g_x2_direct, g_a2] = hsplit(g_cat2, h);
    Matrix g_x2 = g_x2_direct;
    accumulate(g_x2, neighbor_mean_backward(g_a2, nn));

    Matrix g_pre2 = relu_backward(cache.pre2, g_x2);
    accumulate(params.grad("backbone.mlp2.w"), matmul_at(cache.cat1, g_pre2));
    accumulate(params.grad("backbone.mlp2.b"), col_sums(g_pre2));
    Matrix g_cat1 = matmul_bt(g_pre2, params.value("backbone.mlp2.w"));
    auto [g_x1_direct, g_a1] = hsplit(g_cat1, h);
    Matrix g_x1 = g_x1_direct;
    accumulate(g_x1, neighbor_mean_backward(g_a1, nn));

    Matrix g_pre1 = relu_backward(cache.pre1, g_x1);
    accumulate(params.grad("backbone.mlp1.w"), matmul_at(cache.input, g_pre1));
    accumulate(params.grad("backbone.mlp1.b"), col_sums(g_pre1));
}

}  // namespace refl

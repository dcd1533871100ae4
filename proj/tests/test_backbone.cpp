#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numeric>

#include "refl/backbone.hpp"
#include "refl/rng.hpp"

using namespace refl;

namespace {

PointCloud random_cloud(std::size_t n, SplitMix64& rng, std::size_t num_classes = 4) {
    PointCloud pc;
    pc.num_classes = static_cast<int>(num_classes);
    pc.coords.resize(n);
    pc.colors.resize(n);
    pc.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (int a = 0; a < 3; ++a) {
            pc.coords[i][a] = rng.uniform(0.0, 4.0);
            pc.colors[i][a] = rng.next_double();
        }
        pc.labels[i] = static_cast<int>(rng.next_below(num_classes));
    }
    return pc;
}

}  // namespace

TEST_CASE("forward shapes and zero-params argmax") {
    SplitMix64 rng(1);
    PointCloud pc = random_cloud(20, rng);
    NeighborIndex nn = knn(pc.coords, 4);
    BackboneConfig cfg{8, 16, 4};

    ParamStore zeros;
    backbone_init(zeros, cfg, 3);
    for (auto& [name, e] : zeros.entries()) e.value.fill(0.0);
    BackboneOutput out = backbone_forward(pc, nn, zeros, cfg);
    CHECK(out.features.rows() == 20);
    CHECK(out.features.cols() == 16);
    CHECK(out.logits.rows() == 20);
    CHECK(out.logits.cols() == 4);
    for (double v : out.logits.data()) CHECK(v == 0.0);
}

TEST_CASE("config mismatch with params is a config error") {
    SplitMix64 rng(2);
    PointCloud pc = random_cloud(10, rng);
    NeighborIndex nn = knn(pc.coords, 4);
    ParamStore ps;
    backbone_init(ps, BackboneConfig{8, 16, 4}, 3);
    CHECK_THROWS_AS(backbone_forward(pc, nn, ps, BackboneConfig{8, 32, 4}), ConfigError);
}

TEST_CASE("permutation equivariance") {
    SplitMix64 rng(3);
    PointCloud pc = random_cloud(16, rng);
    NeighborIndex nn = knn(pc.coords, 4);
    BackboneConfig cfg{8, 8, 4};
    ParamStore ps;
    backbone_init(ps, cfg, 7);
    BackboneOutput base = backbone_forward(pc, nn, ps, cfg);

    std::vector<std::size_t> perm(16);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = 15; i > 0; --i) std::swap(perm[i], perm[rng.next_below(i + 1)]);
    // perm[i] = old index placed at new position i
    std::vector<std::size_t> inv(16);
    for (std::size_t i = 0; i < 16; ++i) inv[perm[i]] = i;

    PointCloud ppc = pc;
    for (std::size_t i = 0; i < 16; ++i) {
        ppc.coords[i] = pc.coords[perm[i]];
        ppc.colors[i] = pc.colors[perm[i]];
        ppc.labels[i] = pc.labels[perm[i]];
    }
    NeighborIndex pnn;
    pnn.k = nn.k;
    pnn.neighbors.resize(16);
    pnn.distances.resize(16);
    for (std::size_t i = 0; i < 16; ++i) {
        pnn.distances[i] = nn.distances[perm[i]];
        for (std::size_t j : nn.neighbors[perm[i]]) pnn.neighbors[i].push_back(inv[j]);
    }
    BackboneOutput permuted = backbone_forward(ppc, pnn, ps, cfg);
    for (std::size_t i = 0; i < 16; ++i) {
        for (std::size_t c = 0; c < 8; ++c) {
            CHECK(permuted.features(i, c) == doctest::Approx(base.features(perm[i], c)).epsilon(1e-12));
        }
    }
}

TEST_CASE("translation invariance via bounding-box normalization") {
    SplitMix64 rng(4);
    PointCloud pc = random_cloud(12, rng);
    NeighborIndex nn = knn(pc.coords, 4);
    BackboneConfig cfg{8, 8, 4};
    ParamStore ps;
    backbone_init(ps, cfg, 11);
    BackboneOutput base = backbone_forward(pc, nn, ps, cfg);

    PointCloud shifted = pc;
    for (Vec3& p : shifted.coords) {
        p[0] += 12.5;
        p[1] -= 3.0;
        p[2] += 0.75;
    }
    BackboneOutput moved = backbone_forward(shifted, nn, ps, cfg);
    for (std::size_t i = 0; i < base.logits.size(); ++i) {
        CHECK(moved.logits.data()[i] == doctest::Approx(base.logits.data()[i]).epsilon(1e-12));
    }
}

TEST_CASE("zero upstream grads give zero parameter grads") {
    SplitMix64 rng(5);
    PointCloud pc = random_cloud(10, rng);
    NeighborIndex nn = knn(pc.coords, 4);
    BackboneConfig cfg{8, 8, 4};
    ParamStore ps;
    backbone_init(ps, cfg, 13);
    BackboneCache cache;
    backbone_forward(pc, nn, ps, cfg, &cache);
    backbone_backward(cache, ps, cfg, Matrix(10, 8), Matrix(10, 4));
    for (auto& [name, e] : ps.entries()) {
        for (double v : e.grad.data()) CHECK(v == 0.0);
    }
}

TEST_CASE("stale cache is rejected") {
    ParamStore ps;
    BackboneConfig cfg{8, 8, 4};
    backbone_init(ps, cfg, 1);
    BackboneCache empty;
    CHECK_THROWS_AS(backbone_backward(empty, ps, cfg, Matrix(), Matrix(1, 4)), NumericError);
}

TEST_CASE("gradient check: full backbone + CE over 5 seeds") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        SplitMix64 rng(seed * 1000);
        PointCloud pc = random_cloud(32, rng);
        NeighborIndex nn = knn(pc.coords, 4);
        BackboneConfig cfg{8, 8, 4};
        ParamStore ps;
        backbone_init(ps, cfg, seed);

        BackboneCache cache;
        BackboneOutput out = backbone_forward(pc, nn, ps, cfg, &cache);
        CrossEntropyResult ce = cross_entropy_mean(out.logits, pc.labels);
        backbone_backward(cache, ps, cfg, Matrix(), ce.grad_logits);
        std::map<std::string, Matrix> analytic;
        for (auto& [name, e] : ps.entries()) analytic.emplace(name, e.grad);
        ps.zero_grads();

        auto f = [&](const ParamStore& p) {
            BackboneOutput o = backbone_forward(pc, nn, p, cfg);
            return cross_entropy_mean(o.logits, pc.labels).loss;
        };
        CHECK(finite_diff_check(f, ps, analytic, 1e-5) < 1e-5);
    }
}

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "refl/error.hpp"

namespace refl {

using Vec3 = std::array<double, 3>;

// Immutable-by-convention point cloud: coordinates in meters, RGB in [0,1],
// optional per-point class labels (empty vector = absent, -1 = unknown point).
struct PointCloud {
    std::vector<Vec3> coords;
    std::vector<Vec3> colors;
    std::vector<int> labels;  // empty when absent
    int num_classes = 0;
    std::string scene_id;

    std::size_t size() const { return coords.size(); }
    bool has_labels() const { return !labels.empty(); }
};

// k nearest neighbors per point, self excluded, distances ascending.
struct NeighborIndex {
    std::size_t k = 0;
    std::vector<std::vector<std::size_t>> neighbors;  // N x k
    std::vector<std::vector<double>> distances;       // N x k
};

struct VoxelResult {
    PointCloud cloud;
    std::vector<std::size_t> origin_map;  // downsampled index per original point
};

// One output point per occupied cell; coords/colors averaged, label by majority
// (ties to the lowest class index). Cells are floor(coord/voxel_size) anchored
// at the global origin.
VoxelResult voxel_downsample(const PointCloud& pc, double voxel_size);

// Greedy maximin selection. First index = splitmix64(seed) mod N; ties broken
// by lowest index. Output order is selection order.
std::vector<std::size_t> farthest_point_sample(const std::vector<Vec3>& coords, std::size_t m,
                                               std::uint64_t seed);

// argmin over centers by Euclidean distance, ties to the lowest center index.
std::vector<std::size_t> assign_nearest_center(const std::vector<Vec3>& coords,
                                               const std::vector<Vec3>& centers);

NeighborIndex knn(const std::vector<Vec3>& coords, std::size_t k);

double dist2(const Vec3& a, const Vec3& b);

// Text formats (see README): "pcd v1 <N> <num_classes>" then N lines
// "x y z r g b label"; "regions v1 <N> <M>" then N region ids.
void write_pointcloud(const PointCloud& pc, const std::string& path);
PointCloud read_pointcloud(const std::string& path);
void write_regions(const std::vector<std::size_t>& region_of, std::size_t region_count,
                   const std::string& path);
std::vector<std::size_t> read_regions(const std::string& path, std::size_t* region_count = nullptr);

}  // namespace refl

#pragma once

#include <cstdint>
#include <vector>

#include "refl/matrix.hpp"
#include "refl/pointcloud.hpp"

namespace refl {

// Semantic-spatial partition: points grouped by predicted class, each group
// split into compact regions around FPS-sampled centers.
struct RegionPartition {
    std::vector<std::size_t> region_of;       // N global region ids in [0, M)
    std::size_t region_count = 0;             // M
    std::vector<Vec3> centers;                // M, FPS-selected point coordinates
    std::vector<int> region_class;            // M predicted class ids
    std::size_t region_size_param = 0;        // s
    std::vector<std::size_t> group_sizes;     // per class N_k
    std::vector<std::size_t> group_regions;   // per class M_k
};

// argmax per row, ties to the lowest class index.
std::vector<int> semantic_grouping(const Matrix& logits);

// max(1, floor(N_k / s)); the floor alone would leave sub-s groups regionless.
std::size_t region_count_for_group(std::size_t group_size, std::size_t region_size);

// FPS centers + nearest-center assignment within each semantic group; global
// region ids ordered by (class id, local center order). Per-group FPS seed is
// seed XOR class id.
RegionPartition extract_regions(const PointCloud& pc, const Matrix& logits,
                                std::size_t region_size, std::uint64_t seed);

// Sidecar "centers v1 <M>" then "class_id x y z" per region.
void write_centers(const RegionPartition& partition, const std::string& path);

}  // namespace refl

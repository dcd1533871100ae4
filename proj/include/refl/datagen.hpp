#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "refl/pointcloud.hpp"

namespace refl {

// Synthetic indoor scenes: floor + walls + axis-aligned boxes, with per-class
// color models. Ambiguity pairs force two classes to share a color mean so
// they can only be told apart by geometry and context.
namespace scene_class {
inline constexpr int kFloor = 0;
inline constexpr int kWall = 1;
inline constexpr int kTable = 2;
inline constexpr int kChair = 3;
inline constexpr int kCabinet = 4;
inline constexpr int kOther = 5;
inline constexpr std::size_t kCount = 6;
}  // namespace scene_class

struct SceneSpec {
    double room_x = 5.0;              // meters, sensible range [3, 8]
    double room_y = 5.0;
    double room_z = 2.6;
    std::array<std::size_t, scene_class::kCount> objects_per_class = {0, 0, 2, 3, 2, 2};
    double density = 100.0;           // points per square meter of surface
    std::array<Vec3, scene_class::kCount> color_means = {
        Vec3{0.45, 0.40, 0.35},  // floor
        Vec3{0.85, 0.85, 0.80},  // wall
        Vec3{0.55, 0.35, 0.20},  // table
        Vec3{0.20, 0.30, 0.60},  // chair
        Vec3{0.60, 0.55, 0.50},  // cabinet
        Vec3{0.35, 0.55, 0.30},  // other
    };
    double color_sigma = 0.05;
    std::vector<std::pair<int, int>> ambiguity_pairs;  // (a, b): b takes a's mean
    std::uint64_t seed = 0;
};

struct SceneResult {
    PointCloud cloud;
    std::size_t skipped_objects = 0;  // unplaceable after 1000 tries
};

SceneResult generate_scene(const SceneSpec& spec);

struct DatasetManifest {
    std::vector<std::string> paths;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> splits;  // "train" / "val"
};

// Scene i uses seed base_seed + i; train scenes come first. Writes pcd files
// plus a "manifest v1 <count>" file with "<path> <seed> <split>" lines.
DatasetManifest generate_dataset(const SceneSpec& base, std::size_t n_train, std::size_t n_val,
                                 std::uint64_t base_seed, const std::string& out_dir);

DatasetManifest read_manifest(const std::string& path);
std::vector<std::string> manifest_paths(const DatasetManifest& m, const std::string& split);

}  // namespace refl

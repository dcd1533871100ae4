#pragma once

#include <optional>
#include <string>
#include <vector>

#include "refl/pointcloud.hpp"
#include "refl/ssre.hpp"

namespace refl {

struct EvalReport {
    std::vector<std::optional<double>> per_class_iou;  // absent when class missing from both
    double miou = 0.0;
    std::vector<double> region_entropy;                // per region, nats
    double entropy_scene = 0.0;
    std::optional<double> boundary_recall;
    std::vector<std::vector<std::size_t>> confusion;   // C x C, [gt][pred]
};

// IoU_c = TP / (TP + FP + FN); classes with zero union excluded from the mean.
EvalReport mean_iou(const std::vector<int>& pred, const std::vector<int>& gt, std::size_t num_classes);

// Shannon entropy (nats) of the ground-truth class mix inside each region,
// plus the scene mean.
std::pair<std::vector<double>, double> region_entropy(const RegionPartition& partition,
                                                      const std::vector<int>& gt,
                                                      std::size_t num_classes);

// E_val: mean over scenes of per-scene mean region entropy.
double dataset_entropy(const std::vector<double>& scene_means);

// Fraction of ground-truth boundary points within `tolerance` of some
// region-boundary point; 1.0 when no ground-truth boundary exists.
double boundary_recall(const RegionPartition& partition, const std::vector<int>& gt,
                       const std::vector<Vec3>& coords, const NeighborIndex& nn, double tolerance);

// CSV "metric,class,value" with per-class IoU rows then aggregate rows.
std::string report_csv(const EvalReport& report);

}  // namespace refl

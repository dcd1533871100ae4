#include "refl/metrics.hpp"

#include <cmath>
#include <sstream>

#include "refl/textio.hpp"

namespace refl {

EvalReport mean_iou(const std::vector<int>& pred, const std::vector<int>& gt,
                    std::size_t num_classes) {
    if (pred.size() != gt.size()) {
        throw NumericError("mean_iou: pred length " + std::to_string(pred.size()) +
                           " != gt length " + std::to_string(gt.size()));
    }
    EvalReport rep;
    rep.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] < 0 || static_cast<std::size_t>(pred[i]) >= num_classes || gt[i] < 0 ||
            static_cast<std::size_t>(gt[i]) >= num_classes) {
            throw NumericError("mean_iou: class id outside [0, " + std::to_string(num_classes) +
                               ") at index " + std::to_string(i));
        }
        ++rep.confusion[static_cast<std::size_t>(gt[i])][static_cast<std::size_t>(pred[i])];
    }
    rep.per_class_iou.assign(num_classes, std::nullopt);
    double sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        const std::size_t tp = rep.confusion[c][c];
        std::size_t fp = 0, fn = 0;
        for (std::size_t o = 0; o < num_classes; ++o) {
            if (o == c) continue;
            fp += rep.confusion[o][c];
            fn += rep.confusion[c][o];
        }
        const std::size_t uni = tp + fp + fn;
        if (uni == 0) continue;
        const double iou = static_cast<double>(tp) / static_cast<double>(uni);
        rep.per_class_iou[c] = iou;
        sum += iou;
        ++present;
    }
    rep.miou = present ? sum / static_cast<double>(present) : 0.0;
    return rep;
}

std::pair<std::vector<double>, double> region_entropy(const RegionPartition& partition,
                                                      const std::vector<int>& gt,
                                                      std::size_t num_classes) {
    if (partition.region_of.size() != gt.size()) {
        throw NumericError("region_entropy: partition does not cover the labels");
    }
    const std::size_t m = partition.region_count;
    std::vector<std::vector<std::size_t>> counts(m, std::vector<std::size_t>(num_classes, 0));
    std::vector<std::size_t> totals(m, 0);
    for (std::size_t i = 0; i < gt.size(); ++i) {
        ++counts[partition.region_of[i]][static_cast<std::size_t>(gt[i])];
        ++totals[partition.region_of[i]];
    }
    std::vector<double> entropies(m, 0.0);
    double sum = 0.0;
    for (std::size_t r = 0; r < m; ++r) {
        double e = 0.0;
        for (std::size_t c = 0; c < num_classes; ++c) {
            if (counts[r][c] == 0) continue;  // 0*log(0) := 0
            const double h = static_cast<double>(counts[r][c]) / static_cast<double>(totals[r]);
            e -= h * std::log(h);
        }
        entropies[r] = e;
        sum += e;
    }
    return {std::move(entropies), m ? sum / static_cast<double>(m) : 0.0};
}

double dataset_entropy(const std::vector<double>& scene_means) {
    if (scene_means.empty()) throw NumericError("dataset_entropy: no scenes");
    double sum = 0.0;
    for (double v : scene_means) sum += v;
    return sum / static_cast<double>(scene_means.size());
}

double boundary_recall(const RegionPartition& partition, const std::vector<int>& gt,
                       const std::vector<Vec3>& coords, const NeighborIndex& nn, double tolerance) {
    const std::size_t n = gt.size();
    std::vector<std::size_t> gt_boundary;
    std::vector<Vec3> region_boundary;
    for (std::size_t i = 0; i < n; ++i) {
        bool gt_b = false, reg_b = false;
        for (std::size_t j : nn.neighbors[i]) {
            if (gt[j] != gt[i]) gt_b = true;
            if (partition.region_of[j] != partition.region_of[i]) reg_b = true;
        }
        if (gt_b) gt_boundary.push_back(i);
        if (reg_b) region_boundary.push_back(coords[i]);
    }
    if (gt_boundary.empty()) return 1.0;
    const double tol2 = tolerance * tolerance;
    std::size_t hit = 0;
    for (std::size_t i : gt_boundary) {
        for (const Vec3& b : region_boundary) {
            if (dist2(coords[i], b) <= tol2) {
                ++hit;
                break;
            }
        }
    }
    return static_cast<double>(hit) / static_cast<double>(gt_boundary.size());
}

std::string report_csv(const EvalReport& report) {
    std::ostringstream out;
    out << "metric,class,value\n";
    for (std::size_t c = 0; c < report.per_class_iou.size(); ++c) {
        out << "iou," << c << ",";
        if (report.per_class_iou[c].has_value()) {
            out << fmt_g9(*report.per_class_iou[c]);
        } else {
            out << "absent";
        }
        out << "\n";
    }
    out << "miou,," << fmt_g9(report.miou) << "\n";
    if (!report.region_entropy.empty() || report.boundary_recall.has_value()) {
        out << "entropy_scene,," << fmt_g9(report.entropy_scene) << "\n";
    }
    if (report.boundary_recall.has_value()) {
        out << "boundary_recall,," << fmt_g9(*report.boundary_recall) << "\n";
    }
    return out.str();
}

}  // namespace refl

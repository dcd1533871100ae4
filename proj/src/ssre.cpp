#include "refl/ssre.hpp"

#include <sstream>

#include "refl/textio.hpp"

namespace refl {

std::vector<int> semantic_grouping(const Matrix& logits) {
    if (logits.cols() < 1) throw NumericError("semantic_grouping: need at least one class");
    std::vector<int> classes(logits.rows());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const double* row = logits.row(i);
        std::size_t best = 0;
        for (std::size_t j = 1; j < logits.cols(); ++j) {
            if (row[j] > row[best]) best = j;
        }
        classes[i] = static_cast<int>(best);
    }
    return classes;
}

std::size_t region_count_for_group(std::size_t group_size, std::size_t region_size) {
    if (group_size < 1 || region_size < 1) {
        throw NumericError("region_count_for_group: sizes must be >= 1");
    }
    return std::max<std::size_t>(1, group_size / region_size);
}

RegionPartition extract_regions(const PointCloud& pc, const Matrix& logits,
                                std::size_t region_size, std::uint64_t seed) {
    const std::size_t n = pc.size();
    if (logits.rows() != n) {
        throw NumericError("extract_regions: logits rows " + std::to_string(logits.rows()) +
                           " != N " + std::to_string(n));
    }
    if (region_size < 1) throw NumericError("extract_regions: region size must be >= 1");

    RegionPartition part;
    part.region_size_param = region_size;
    part.region_of.assign(n, 0);
    const std::size_t num_classes = logits.cols();
    part.group_sizes.assign(num_classes, 0);
    part.group_regions.assign(num_classes, 0);
    if (n == 0) return part;

    const std::vector<int> pred = semantic_grouping(logits);
    std::vector<std::vector<std::size_t>> group_members(num_classes);
    for (std::size_t i = 0; i < n; ++i) {
        group_members[static_cast<std::size_t>(pred[i])].push_back(i);
    }

    std::size_t next_region = 0;
    for (std::size_t k = 0; k < num_classes; ++k) {
        const auto& members = group_members[k];
        part.group_sizes[k] = members.size();
        if (members.empty()) continue;

        const std::size_t mk = region_count_for_group(members.size(), region_size);
        part.group_regions[k] = mk;
        std::vector<Vec3> group_coords(members.size());
        for (std::size_t t = 0; t < members.size(); ++t) group_coords[t] = pc.coords[members[t]];

        const std::uint64_t group_seed = seed ^ static_cast<std::uint64_t>(k);
        const std::vector<std::size_t> center_idx =
            farthest_point_sample(group_coords, mk, group_seed);
        std::vector<Vec3> centers(mk);
        for (std::size_t j = 0; j < mk; ++j) centers[j] = group_coords[center_idx[j]];

        const std::vector<std::size_t> local = assign_nearest_center(group_coords, centers);
        for (std::size_t t = 0; t < members.size(); ++t) {
            part.region_of[members[t]] = next_region + local[t];
        }
        for (std::size_t j = 0; j < mk; ++j) {
            part.centers.push_back(centers[j]);
            part.region_class.push_back(static_cast<int>(k));
        }
        next_region += mk;
    }
    part.region_count = next_region;
    return part;
}

void write_centers(const RegionPartition& partition, const std::string& path) {
    std::ostringstream out;
    out << "centers v1 " << partition.region_count << "\n";
    for (std::size_t j = 0; j < partition.region_count; ++j) {
        out << partition.region_class[j] << " " << fmt_g9(partition.centers[j][0]) << " "
            << fmt_g9(partition.centers[j][1]) << " " << fmt_g9(partition.centers[j][2]) << "\n";
    }
    atomic_write_text(path, out.str());
}

}  // namespace refl

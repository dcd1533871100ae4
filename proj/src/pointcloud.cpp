#include "refl/pointcloud.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "refl/rng.hpp"
#include "refl/textio.hpp"

namespace refl {

double dist2(const Vec3& a, const Vec3& b) {
    const double dx = a[0] - b[0];
    const double dy = a[1] - b[1];
    const double dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

VoxelResult voxel_downsample(const PointCloud& pc, double voxel_size) {
    if (voxel_size <= 0.0) throw NumericError("voxel_downsample: voxel_size must be positive");
    VoxelResult res;
    res.cloud.num_classes = pc.num_classes;
    res.cloud.scene_id = pc.scene_id;
    res.origin_map.resize(pc.size());

    using Cell = std::array<std::int64_t, 3>;
    std::map<Cell, std::size_t> cell_to_voxel;  // ordered: voxel order = cell order
    std::vector<std::vector<std::size_t>> members;
    std::vector<Cell> cells(pc.size());
    for (std::size_t i = 0; i < pc.size(); ++i) {
        for (int a = 0; a < 3; ++a) {
            cells[i][a] = static_cast<std::int64_t>(std::floor(pc.coords[i][a] / voxel_size));
        }
    }
    for (std::size_t i = 0; i < pc.size(); ++i) {
        auto [it, inserted] = cell_to_voxel.try_emplace(cells[i], members.size());
        if (inserted) members.emplace_back();
        members[it->second].push_back(i);
        res.origin_map[i] = it->second;
    }

    const bool labeled = pc.has_labels();
    res.cloud.coords.resize(members.size());
    res.cloud.colors.resize(members.size());
    if (labeled) res.cloud.labels.resize(members.size());
    for (std::size_t v = 0; v < members.size(); ++v) {
        Vec3 c{0, 0, 0}, col{0, 0, 0};
        std::map<int, std::size_t> label_counts;
        for (std::size_t i : members[v]) {
            for (int a = 0; a < 3; ++a) {
                c[a] += pc.coords[i][a];
                col[a] += pc.colors[i][a];
            }
            if (labeled) ++label_counts[pc.labels[i]];
        }
        const double inv = 1.0 / static_cast<double>(members[v].size());
        for (int a = 0; a < 3; ++a) {
            res.cloud.coords[v][a] = c[a] * inv;
            res.cloud.colors[v][a] = col[a] * inv;
        }
        if (labeled) {
            // majority label, ties to the lowest class index (map iterates ascending)
            int best = -2;
            std::size_t best_n = 0;
            for (auto [lab, n] : label_counts) {
                if (n > best_n) {
                    best = lab;
                    best_n = n;
                }
            }
            res.cloud.labels[v] = best;
        }
    }
    return res;
}

std::vector<std::size_t> farthest_point_sample(const std::vector<Vec3>& coords, std::size_t m,
                                               std::uint64_t seed) {
    const std::size_t n = coords.size();
    if (m < 1 || m > n) {
        throw NumericError("farthest_point_sample: m=" + std::to_string(m) + " outside [1, " +
                           std::to_string(n) + "]");
    }
    std::vector<std::size_t> selected;
    selected.reserve(m);
    SplitMix64 rng(seed);
    std::size_t cur = static_cast<std::size_t>(rng.next_below(n));
    selected.push_back(cur);

    std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
    for (std::size_t step = 1; step < m; ++step) {
        std::size_t best = 0;
        double best_d2 = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            min_d2[i] = std::min(min_d2[i], dist2(coords[i], coords[cur]));
            if (min_d2[i] > best_d2) {
                best_d2 = min_d2[i];
                best = i;
            }
        }
        cur = best;
        selected.push_back(cur);
    }
    return selected;
}

std::vector<std::size_t> assign_nearest_center(const std::vector<Vec3>& coords,
                                               const std::vector<Vec3>& centers) {
    if (centers.empty()) throw NumericError("assign_nearest_center: no centers");
    std::vector<std::size_t> ids(coords.size());
    for (std::size_t i = 0; i < coords.size(); ++i) {
        std::size_t best = 0;
        double best_d2 = dist2(coords[i], centers[0]);
        for (std::size_t j = 1; j < centers.size(); ++j) {
            const double d2 = dist2(coords[i], centers[j]);
            if (d2 < best_d2) {
                best_d2 = d2;
                best = j;
            }
        }
        ids[i] = best;
    }
    return ids;
}

NeighborIndex knn(const std::vector<Vec3>& coords, std::size_t k) {
    const std::size_t n = coords.size();
    if (k >= n) {
        throw NumericError("knn: k=" + std::to_string(k) + " must be < N=" + std::to_string(n));
    }
    NeighborIndex idx;
    idx.k = k;
    idx.neighbors.assign(n, {});
    idx.distances.assign(n, {});
    std::vector<std::pair<double, std::size_t>> cand(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t c = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            cand[c++] = {dist2(coords[i], coords[j]), j};
        }
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
        idx.neighbors[i].resize(k);
        idx.distances[i].resize(k);
        for (std::size_t t = 0; t < k; ++t) {
            idx.neighbors[i][t] = cand[t].second;
            idx.distances[i][t] = std::sqrt(cand[t].first);
        }
    }
    return idx;
}

void write_pointcloud(const PointCloud& pc, const std::string& path) {
    std::ostringstream out;
    out << "pcd v1 " << pc.size() << " " << pc.num_classes << "\n";
    for (std::size_t i = 0; i < pc.size(); ++i) {
        const int lab = pc.has_labels() ? pc.labels[i] : -1;
        out << fmt_g9(pc.coords[i][0]) << " " << fmt_g9(pc.coords[i][1]) << " "
            << fmt_g9(pc.coords[i][2]) << " " << fmt_g9(pc.colors[i][0]) << " "
            << fmt_g9(pc.colors[i][1]) << " " << fmt_g9(pc.colors[i][2]) << " " << lab << "\n";
    }
    atomic_write_text(path, out.str());
}

PointCloud read_pointcloud(const std::string& path) {
    std::istringstream in(read_text(path));
    std::string magic, version;
    std::size_t n = 0;
    PointCloud pc;
    in >> magic >> version >> n >> pc.num_classes;
    if (magic != "pcd" || version != "v1" || !in) {
        throw IoError("bad point-cloud header in " + path);
    }
    pc.coords.resize(n);
    pc.colors.resize(n);
    std::vector<int> labels(n);
    bool any_label = false;
    for (std::size_t i = 0; i < n; ++i) {
        in >> pc.coords[i][0] >> pc.coords[i][1] >> pc.coords[i][2] >> pc.colors[i][0] >>
            pc.colors[i][1] >> pc.colors[i][2] >> labels[i];
        if (labels[i] >= 0) any_label = true;
    }
    if (!in) throw IoError("truncated point-cloud file: " + path);
    if (any_label) pc.labels = std::move(labels);
    pc.scene_id = path;
    return pc;
}

void write_regions(const std::vector<std::size_t>& region_of, std::size_t region_count,
                   const std::string& path) {
    std::ostringstream out;
    out << "regions v1 " << region_of.size() << " " << region_count << "\n";
    for (std::size_t id : region_of) out << id << "\n";
    atomic_write_text(path, out.str());
}

std::vector<std::size_t> read_regions(const std::string& path, std::size_t* region_count) {
    std::istringstream in(read_text(path));
    std::string magic, version;
    std::size_t n = 0, m = 0;
    in >> magic >> version >> n >> m;
    if (magic != "regions" || version != "v1" || !in) throw IoError("bad region header in " + path);
    std::vector<std::size_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) in >> ids[i];
    if (!in) throw IoError("truncated region file: " + path);
    if (region_count) *region_count = m;
    return ids;
}

}  // namespace refl

#include "refl/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "refl/rng.hpp"
#include "refl/textio.hpp"

namespace refl {

namespace {

// Axis-aligned rectangle in 3D: origin + two orthogonal edges.
struct Rect {
    Vec3 origin;
    Vec3 edge_u;
    Vec3 edge_v;
    int cls = 0;
    double area = 0.0;
};

struct Footprint {
    double x0, x1, y0, y1;
};

bool overlaps(const Footprint& a, const Footprint& b) {
    return a.x0 < b.x1 && b.x0 < a.x1 && a.y0 < b.y1 && b.y0 < a.y1;
}

void add_rect(std::vector<Rect>& rects, Vec3 origin, Vec3 u, Vec3 v, int cls) {
    const double lu = std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
    const double lv = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    rects.push_back({origin, u, v, cls, lu * lv});
}

// top + 4 side faces of a box resting on z0
void add_box(std::vector<Rect>& rects, double x0, double y0, double z0, double w, double dpt,
             double h, int cls) {
    add_rect(rects, {x0, y0, z0 + h}, {w, 0, 0}, {0, dpt, 0}, cls);  // top
    add_rect(rects, {x0, y0, z0}, {w, 0, 0}, {0, 0, h}, cls);        // front
    add_rect(rects, {x0, y0 + dpt, z0}, {w, 0, 0}, {0, 0, h}, cls);  // back
    add_rect(rects, {x0, y0, z0}, {0, dpt, 0}, {0, 0, h}, cls);      // left
    add_rect(rects, {x0 + w, y0, z0}, {0, dpt, 0}, {0, 0, h}, cls);  // right
}

struct SizeRange {
    double w0, w1, d0, d1, h0, h1;
};

SizeRange size_range(int cls) {
    switch (cls) {
        case scene_class::kTable:
            return {0.8, 1.4, 0.6, 1.0, 0.68, 0.78};
        case scene_class::kChair:
            return {0.35, 0.5, 0.35, 0.5, 0.75, 0.95};
        case scene_class::kCabinet:
            return {0.5, 1.0, 0.3, 0.6, 1.4, 2.0};
        default:
            // low clutter: distinguishable from chairs by height, not color
            return {0.6, 1.2, 0.5, 1.0, 0.1, 0.3};
    }
}

}  // namespace

SceneResult generate_scene(const SceneSpec& spec) {
    if (spec.density <= 0.0) throw NumericError("generate_scene: density must be positive");
    SplitMix64 rng(spec.seed);
    SceneResult res;

    std::vector<Rect> rects;
    add_rect(rects, {0, 0, 0}, {spec.room_x, 0, 0}, {0, spec.room_y, 0}, scene_class::kFloor);
    add_rect(rects, {0, 0, 0}, {0, spec.room_y, 0}, {0, 0, spec.room_z}, scene_class::kWall);
    add_rect(rects, {spec.room_x, 0, 0}, {0, spec.room_y, 0}, {0, 0, spec.room_z},
             scene_class::kWall);
    add_rect(rects, {0, 0, 0}, {spec.room_x, 0, 0}, {0, 0, spec.room_z}, scene_class::kWall);
    add_rect(rects, {0, spec.room_y, 0}, {spec.room_x, 0, 0}, {0, 0, spec.room_z},
             scene_class::kWall);

    std::vector<Footprint> placed;
    const double margin = 0.1;
    for (std::size_t cls = 0; cls < scene_class::kCount; ++cls) {
        for (std::size_t obj = 0; obj < spec.objects_per_class[cls]; ++obj) {
            if (cls == scene_class::kFloor || cls == scene_class::kWall) continue;
            const SizeRange sr = size_range(static_cast<int>(cls));
            const double w = rng.uniform(sr.w0, sr.w1);
            const double dpt = rng.uniform(sr.d0, sr.d1);
            const double h = rng.uniform(sr.h0, sr.h1);
            bool done = false;
            for (int attempt = 0; attempt < 1000 && !done; ++attempt) {
                const double x0 = rng.uniform(margin, std::max(margin + 1e-6, spec.room_x - w - margin));
                const double y0 = rng.uniform(margin, std::max(margin + 1e-6, spec.room_y - dpt - margin));
                const Footprint fp{x0, x0 + w, y0, y0 + dpt};
                bool collide = false;
                for (const Footprint& other : placed) {
                    if (overlaps(fp, other)) {
                        collide = true;
                        break;
                    }
                }
                if (!collide) {
                    placed.push_back(fp);
                    add_box(rects, x0, y0, 0.0, w, dpt, h, static_cast<int>(cls));
                    done = true;
                }
            }
            if (!done) ++res.skipped_objects;
        }
    }

    // ambiguity pairs share the first class's color mean
    std::array<Vec3, scene_class::kCount> means = spec.color_means;
    for (auto [a, b] : spec.ambiguity_pairs) {
        if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= scene_class::kCount ||
            static_cast<std::size_t>(b) >= scene_class::kCount) {
            throw ConfigError("generate_scene: ambiguity pair class outside range");
        }
        means[static_cast<std::size_t>(b)] = means[static_cast<std::size_t>(a)];
    }

    // dart throwing: pick a rectangle proportional to its area, uniform within
    std::vector<double> cumulative(rects.size());
    double total_area = 0.0;
    for (std::size_t i = 0; i < rects.size(); ++i) {
        total_area += rects[i].area;
        cumulative[i] = total_area;
    }
    const std::size_t n = static_cast<std::size_t>(std::llround(total_area * spec.density));

    PointCloud& pc = res.cloud;
    pc.num_classes = static_cast<int>(scene_class::kCount);
    pc.coords.reserve(n);
    pc.colors.reserve(n);
    pc.labels.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double pick = rng.next_double() * total_area;
        const std::size_t r = static_cast<std::size_t>(
            std::lower_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin());
        const Rect& rect = rects[std::min(r, rects.size() - 1)];
        const double a = rng.next_double();
        const double b = rng.next_double();
        Vec3 p;
        for (int ax = 0; ax < 3; ++ax) {
            p[ax] = rect.origin[ax] + a * rect.edge_u[ax] + b * rect.edge_v[ax];
        }
        Vec3 col;
        for (int ax = 0; ax < 3; ++ax) {
            col[ax] = std::clamp(
                means[static_cast<std::size_t>(rect.cls)][ax] + spec.color_sigma * rng.next_gaussian(),
                0.0, 1.0);
        }
        pc.coords.push_back(p);
        pc.colors.push_back(col);
        pc.labels.push_back(rect.cls);
    }
    return res;
}

DatasetManifest generate_dataset(const SceneSpec& base, std::size_t n_train, std::size_t n_val,
                                 std::uint64_t base_seed, const std::string& out_dir) {
    if (n_train < 1 || n_val < 1) throw ConfigError("generate_dataset: counts must be >= 1");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create directory: " + out_dir);

    DatasetManifest manifest;
    for (std::size_t i = 0; i < n_train + n_val; ++i) {
        const bool train = i < n_train;
        SceneSpec spec = base;
        spec.seed = base_seed + i;
        // room extents vary per scene within [3, 8] x [3, 8]
        SplitMix64 layout_rng(spec.seed ^ 0x5CE9E5ULL);
        spec.room_x = layout_rng.uniform(3.0, 8.0);
        spec.room_y = layout_rng.uniform(3.0, 8.0);
        SceneResult scene = generate_scene(spec);
        std::ostringstream name;
        name << out_dir << "/" << (train ? "train" : "val") << "_"
             << (train ? i : i - n_train) << ".pcd";
        scene.cloud.scene_id = name.str();
        write_pointcloud(scene.cloud, name.str());
        manifest.paths.push_back(name.str());
        manifest.seeds.push_back(spec.seed);
        manifest.splits.push_back(train ? "train" : "val");
    }
    std::ostringstream out;
    out << "manifest v1 " << manifest.paths.size() << "\n";
    for (std::size_t i = 0; i < manifest.paths.size(); ++i) {
        out << manifest.paths[i] << " " << manifest.seeds[i] << " " << manifest.splits[i] << "\n";
    }
    atomic_write_text(out_dir + "/manifest.txt", out.str());
    return manifest;
}

DatasetManifest read_manifest(const std::string& path) {
    std::istringstream in(read_text(path));
    std::string magic, version;
    std::size_t count = 0;
    in >> magic >> version >> count;
    if (magic != "manifest" || version != "v1" || !in) throw IoError("bad manifest header in " + path);
    DatasetManifest m;
    for (std::size_t i = 0; i < count; ++i) {
        std::string p, split;
        std::uint64_t seed = 0;
        in >> p >> seed >> split;
        if (!in) throw IoError("truncated manifest: " + path);
        m.paths.push_back(p);
        m.seeds.push_back(seed);
        m.splits.push_back(split);
    }
    return m;
}

std::vector<std::string> manifest_paths(const DatasetManifest& m, const std::string& split) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < m.paths.size(); ++i) {
        if (m.splits[i] == split) out.push_back(m.paths[i]);
    }
    return out;
}

}  // namespace refl

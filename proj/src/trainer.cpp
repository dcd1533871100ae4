#include "refl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "refl/ssre.hpp"
#include "refl/textio.hpp"

namespace refl {

void RunConfig::validate() const {
    if (d == 0 || heads == 0 || layers == 0 || d % heads != 0) {
        throw ConfigError("config: d must be positive and divisible by heads");
    }
    if (lr_pretrain <= 0.0 || lr_rdm <= 0.0) {
        throw ConfigError("config: learning rates must be positive");
    }
    if (lr_backbone_joint < 0.0) throw ConfigError("config: lr_backbone_joint must be >= 0");
    if (region_size < 1) throw ConfigError("config: region_size must be >= 1");
    if (t <= 0.0 || max_rel <= 0.0 || voxel <= 0.0) {
        throw ConfigError("config: t, max_rel, voxel must be positive");
    }
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("config: momentum must be in [0, 1)");
}

BackboneConfig RunConfig::backbone_config() const {
    return BackboneConfig{hidden, d, num_classes};
}

RdmConfig RunConfig::rdm_config() const {
    RdmConfig rc;
    rc.feature_dim = d;
    rc.num_heads = heads;
    rc.num_layers = layers;
    rc.num_classes = num_classes;
    rc.rpe_interval = t;
    rc.rpe_max_rel = max_rel;
    rc.plain_block = plain_block;
    return rc;
}

void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
    auto as_size = [&]() -> std::size_t {
        try {
            return static_cast<std::size_t>(std::stoull(value));
        } catch (const std::exception&) {
            throw ConfigError("config: bad integer for " + key + ": " + value);
        }
    };
    auto as_double = [&]() -> double {
        try {
            return std::stod(value);
        } catch (const std::exception&) {
            throw ConfigError("config: bad number for " + key + ": " + value);
        }
    };
    auto as_bool = [&]() -> bool {
        if (value == "true" || value == "1") return true;
        if (value == "false" || value == "0") return false;
        throw ConfigError("config: bad boolean for " + key + ": " + value);
    };
    if (key == "d") cfg.d = as_size();
    else if (key == "heads") cfg.heads = as_size();
    else if (key == "layers") cfg.layers = as_size();
    else if (key == "region_size") cfg.region_size = as_size();
    else if (key == "t") cfg.t = as_double();
    else if (key == "max_rel") cfg.max_rel = as_double();
    else if (key == "voxel") cfg.voxel = as_double();
    else if (key == "knn_k") cfg.knn_k = as_size();
    else if (key == "hidden") cfg.hidden = as_size();
    else if (key == "num_classes") cfg.num_classes = as_size();
    else if (key == "lr_pretrain") cfg.lr_pretrain = as_double();
    else if (key == "lr_backbone_joint") cfg.lr_backbone_joint = as_double();
    else if (key == "lr_rdm") cfg.lr_rdm = as_double();
    else if (key == "weight_decay") cfg.weight_decay = as_double();
    else if (key == "momentum") cfg.momentum = as_double();
    else if (key == "epochs_pretrain") cfg.epochs_pretrain = as_size();
    else if (key == "epochs_joint") cfg.epochs_joint = as_size();
    else if (key == "batch_scenes") cfg.batch_scenes = as_size();
    else if (key == "warmup_iters") cfg.warmup_iters = as_size();
    else if (key == "seed") cfg.seed = as_size();
    else if (key == "plain_block") cfg.plain_block = as_bool();
    else if (key == "freeze_partition") cfg.freeze_partition = as_bool();
    else if (key == "br_k") cfg.br_k = as_size();
    else if (key == "br_tolerance_factor") cfg.br_tolerance_factor = as_double();
    else throw ConfigError("config: unknown key: " + key);
}

RunConfig parse_config_file(const std::string& path) {
    RunConfig cfg;
    std::istringstream in(read_text(path));
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config: missing '=' at " + path + ":" + std::to_string(lineno));
        }
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        apply_config_entry(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    cfg.validate();
    return cfg;
}

SceneData prepare_scene(const PointCloud& raw, const RunConfig& cfg) {
    SceneData sd;
    sd.raw = raw;
    VoxelResult vr = voxel_downsample(raw, cfg.voxel);
    sd.voxels = std::move(vr.cloud);
    sd.origin_map = std::move(vr.origin_map);
    if (sd.voxels.size() <= cfg.knn_k) {
        throw ConfigError("scene " + raw.scene_id + " has only " +
                          std::to_string(sd.voxels.size()) + " voxels, need > knn_k");
    }
    sd.nn = knn(sd.voxels.coords, cfg.knn_k);
    return sd;
}

std::vector<SceneData> load_scenes(const std::vector<std::string>& paths, const RunConfig& cfg) {
    std::vector<SceneData> scenes;
    scenes.reserve(paths.size());
    for (const std::string& p : paths) scenes.push_back(prepare_scene(read_pointcloud(p), cfg));
    return scenes;
}

namespace {

double warmup_scale(std::size_t iter, std::size_t warmup_iters) {
    if (warmup_iters == 0) return 1.0;
    return std::min(1.0, static_cast<double>(iter + 1) / static_cast<double>(warmup_iters));
}

double eval_miou_only(const RunConfig& cfg, const ParamStore& backbone_params,
                      const ParamStore* rdm_params, std::vector<SceneData>& scenes, bool joint);

}  // namespace

std::vector<LossReport> pretrain(const RunConfig& cfg, std::vector<SceneData>& train,
                                 const std::vector<SceneData>* val, ParamStore& backbone_params) {
    cfg.validate();
    const BackboneConfig bc = cfg.backbone_config();
    backbone_init(backbone_params, bc, cfg.seed);
    SgdConfig sgd{cfg.lr_pretrain, cfg.weight_decay, cfg.momentum};

    std::vector<LossReport> reports;
    std::size_t iter = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs_pretrain; ++epoch) {
        double loss_sum = 0.0;
        std::size_t steps = 0;
        std::size_t pending = 0;
        for (SceneData& sd : train) {
            if (!sd.voxels.has_labels()) {
                throw ConfigError("pretrain: scene " + sd.raw.scene_id + " has no labels");
            }
            BackboneCache cache;
            BackboneOutput out = backbone_forward(sd.voxels, sd.nn, backbone_params, bc, &cache);
            CrossEntropyResult ce = cross_entropy_mean(out.logits, sd.voxels.labels);
            loss_sum += ce.loss;
            ++steps;
            backbone_backward(cache, backbone_params, bc, Matrix(), ce.grad_logits);
            if (++pending >= cfg.batch_scenes) {
                SgdConfig step_cfg = sgd;
                step_cfg.learning_rate *= warmup_scale(iter, cfg.warmup_iters);
                sgd_step(backbone_params, step_cfg);
                pending = 0;
                ++iter;
            }
        }
        if (pending > 0) {
            SgdConfig step_cfg = sgd;
            step_cfg.learning_rate *= warmup_scale(iter, cfg.warmup_iters);
            sgd_step(backbone_params, step_cfg);
            ++iter;
        }
        LossReport rep{"initial", epoch, steps ? loss_sum / static_cast<double>(steps) : 0.0, -1.0};
        if (val) {
            rep.val_miou = eval_miou_only(cfg, backbone_params, nullptr,
                                          *const_cast<std::vector<SceneData>*>(val), false);
        }
        reports.push_back(rep);
    }
    return reports;
}

namespace {

struct JointForward {
    BackboneCache backbone_cache;
    RdmCache rdm_cache;
    Matrix refined_logits;
    RegionPartition partition;
};

JointForward joint_forward(const RunConfig& cfg, const ParamStore& backbone_params,
                           const ParamStore& rdm_params, SceneData& sd, std::uint64_t region_seed,
                           const RegionPartition* frozen) {
    JointForward jf;
    const BackboneConfig bc = cfg.backbone_config();
    const RdmConfig rc = cfg.rdm_config();
    BackboneOutput out = backbone_forward(sd.voxels, sd.nn, backbone_params, bc, &jf.backbone_cache);
    jf.partition = frozen ? *frozen
                          : extract_regions(sd.voxels, out.logits, cfg.region_size, region_seed);
    jf.refined_logits = rdm_forward(out.features, sd.voxels.coords, jf.partition, rdm_params, rc,
                                    &jf.rdm_cache);
    return jf;
}

}  // namespace

std::vector<LossReport> train_joint(const RunConfig& cfg, std::vector<SceneData>& train,
                                    const std::vector<SceneData>* val,
                                    ParamStore& backbone_params, ParamStore& rdm_params) {
    cfg.validate();
    if (!backbone_params.has("backbone.mlp1.w")) {
        throw ConfigError("train_joint: missing stage-1 backbone checkpoint");
    }
    const BackboneConfig bc = cfg.backbone_config();
    const RdmConfig rc = cfg.rdm_config();
    rdm_init(rdm_params, rc, cfg.seed ^ 0x52444DULL);

    SgdConfig sgd_backbone{std::max(cfg.lr_backbone_joint, 1e-300), cfg.weight_decay, cfg.momentum};
    SgdConfig sgd_rdm{cfg.lr_rdm, cfg.weight_decay, cfg.momentum};

    std::vector<RegionPartition> frozen(train.size());
    std::vector<bool> have_frozen(train.size(), false);

    std::vector<LossReport> reports;
    std::size_t iter = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs_joint; ++epoch) {
        double loss_sum = 0.0;
        std::size_t steps = 0;
        std::size_t pending = 0;
        for (std::size_t si = 0; si < train.size(); ++si) {
            SceneData& sd = train[si];
            const std::uint64_t region_seed = cfg.seed + si;
            const RegionPartition* use_frozen =
                (cfg.freeze_partition && have_frozen[si]) ? &frozen[si] : nullptr;
            JointForward jf =
                joint_forward(cfg, backbone_params, rdm_params, sd, region_seed, use_frozen);
            if (cfg.freeze_partition && !have_frozen[si]) {
                frozen[si] = jf.partition;
                have_frozen[si] = true;
            }
            CrossEntropyResult ce = cross_entropy_mean(jf.refined_logits, sd.voxels.labels);
            loss_sum += ce.loss;
            ++steps;
            Matrix grad_features = rdm_backward(jf.rdm_cache, rdm_params, rc, ce.grad_logits);
            backbone_backward(jf.backbone_cache, backbone_params, bc, grad_features, Matrix());
            if (++pending >= cfg.batch_scenes) {
                const double scale = warmup_scale(iter, cfg.warmup_iters);
                if (cfg.lr_backbone_joint > 0.0) {
                    SgdConfig s = sgd_backbone;
                    s.learning_rate = cfg.lr_backbone_joint * scale;
                    sgd_step(backbone_params, s);
                } else {
                    backbone_params.zero_grads();
                }
                SgdConfig s = sgd_rdm;
                s.learning_rate = cfg.lr_rdm * scale;
                sgd_step(rdm_params, s);
                pending = 0;
                ++iter;
            }
        }
        if (pending > 0) {
            const double scale = warmup_scale(iter, cfg.warmup_iters);
            if (cfg.lr_backbone_joint > 0.0) {
                SgdConfig s = sgd_backbone;
                s.learning_rate = cfg.lr_backbone_joint * scale;
                sgd_step(backbone_params, s);
            } else {
                backbone_params.zero_grads();
            }
            SgdConfig s = sgd_rdm;
            s.learning_rate = cfg.lr_rdm * scale;
            sgd_step(rdm_params, s);
            ++iter;
        }
        LossReport rep{"refined", epoch, steps ? loss_sum / static_cast<double>(steps) : 0.0, -1.0};
        if (val) {
            rep.val_miou = eval_miou_only(cfg, backbone_params, &rdm_params,
                                          *const_cast<std::vector<SceneData>*>(val), true);
        }
        reports.push_back(rep);
    }
    return reports;
}

namespace {

std::vector<int> scene_predictions(const RunConfig& cfg, const ParamStore& backbone_params,
                                   const ParamStore* rdm_params, SceneData& sd, bool joint,
                                   std::uint64_t region_seed, RegionPartition* partition_out) {
    const BackboneConfig bc = cfg.backbone_config();
    BackboneOutput out = backbone_forward(sd.voxels, sd.nn, backbone_params, bc, nullptr);
    Matrix logits;
    if (joint) {
        if (!rdm_params || !rdm_params->has("rdm.fuse.w1")) {
            throw ConfigError("evaluate: joint mode requires RDM parameters");
        }
        RegionPartition part = extract_regions(sd.voxels, out.logits, cfg.region_size, region_seed);
        logits = rdm_forward(out.features, sd.voxels.coords, part, *rdm_params, cfg.rdm_config(),
                             nullptr);
        if (partition_out) *partition_out = std::move(part);
    } else {
        logits = std::move(out.logits);
    }
    std::vector<int> voxel_pred = semantic_grouping(logits);
    std::vector<int> raw_pred(sd.raw.size());
    for (std::size_t i = 0; i < sd.raw.size(); ++i) raw_pred[i] = voxel_pred[sd.origin_map[i]];
    return raw_pred;
}

double eval_miou_only(const RunConfig& cfg, const ParamStore& backbone_params,
                      const ParamStore* rdm_params, std::vector<SceneData>& scenes, bool joint) {
    double sum = 0.0;
    for (std::size_t si = 0; si < scenes.size(); ++si) {
        std::vector<int> pred = scene_predictions(cfg, backbone_params, rdm_params, scenes[si],
                                                  joint, cfg.seed + si, nullptr);
        sum += mean_iou(pred, scenes[si].raw.labels, cfg.num_classes).miou;
    }
    return scenes.empty() ? 0.0 : sum / static_cast<double>(scenes.size());
}

}  // namespace

AggregateEval evaluate(const RunConfig& cfg, const ParamStore& backbone_params,
                       const ParamStore* rdm_params, std::vector<SceneData>& scenes, bool joint) {
    AggregateEval agg;
    agg.joint = joint;
    std::vector<double> entropy_means;
    double br_sum = 0.0;
    for (std::size_t si = 0; si < scenes.size(); ++si) {
        SceneData& sd = scenes[si];
        RegionPartition part;
        std::vector<int> pred = scene_predictions(cfg, backbone_params, rdm_params, sd, joint,
                                                  cfg.seed + si, &part);
        EvalReport rep = mean_iou(pred, sd.raw.labels, cfg.num_classes);
        if (joint) {
            auto [ent, scene_mean] = region_entropy(part, sd.voxels.labels, cfg.num_classes);
            rep.region_entropy = std::move(ent);
            rep.entropy_scene = scene_mean;
            entropy_means.push_back(scene_mean);
            NeighborIndex br_nn = knn(sd.voxels.coords, std::min(cfg.br_k, sd.voxels.size() - 1));
            rep.boundary_recall = boundary_recall(part, sd.voxels.labels, sd.voxels.coords, br_nn,
                                                  cfg.br_tolerance_factor * cfg.voxel);
            br_sum += *rep.boundary_recall;
        }
        agg.miou += rep.miou;
        agg.per_scene.push_back(std::move(rep));
    }
    if (!scenes.empty()) agg.miou /= static_cast<double>(scenes.size());
    if (joint && !entropy_means.empty()) {
        agg.entropy_dataset = dataset_entropy(entropy_means);
        agg.boundary_recall = br_sum / static_cast<double>(entropy_means.size());
    }
    return agg;
}

ParamStore merge_params(const ParamStore& a, const ParamStore& b) {
    ParamStore merged;
    for (const auto& [name, e] : a.entries()) merged.add(name, e.value);
    for (const auto& [name, e] : b.entries()) merged.add(name, e.value);
    return merged;
}

void split_params(const ParamStore& merged, ParamStore& backbone_out, ParamStore& rdm_out) {
    for (const auto& [name, e] : merged.entries()) {
        if (name.rfind("backbone.", 0) == 0) {
            backbone_out.add(name, e.value);
        } else if (name.rfind("rdm.", 0) == 0) {
            rdm_out.add(name, e.value);
        } else {
            throw ConfigError("checkpoint: unexpected parameter " + name);
        }
    }
}

}  // namespace refl

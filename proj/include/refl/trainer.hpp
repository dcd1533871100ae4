#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "refl/backbone.hpp"
#include "refl/datagen.hpp"
#include "refl/matrix.hpp"
#include "refl/metrics.hpp"
#include "refl/pointcloud.hpp"
#include "refl/rdm.hpp"

namespace refl {

struct RunConfig {
    std::size_t d = 128;
    std::size_t heads = 8;
    std::size_t layers = 3;
    std::size_t region_size = 200;       // s
    double t = 0.02;                     // cRPE quantization interval, m
    double max_rel = 2.0;                // cRPE clamp, m
    double voxel = 0.02;                 // m
    std::size_t knn_k = 8;
    std::size_t hidden = 64;             // backbone h
    std::size_t num_classes = 6;
    double lr_pretrain = 1e-1;
    double lr_backbone_joint = 5e-3;
    double lr_rdm = 5e-4;
    double weight_decay = 1e-4;
    double momentum = 0.9;
    std::size_t epochs_pretrain = 30;
    std::size_t epochs_joint = 30;
    std::size_t batch_scenes = 1;        // scenes per optimizer step
    std::size_t warmup_iters = 0;
    std::uint64_t seed = 1;
    bool plain_block = false;
    bool freeze_partition = false;
    std::size_t br_k = 10;               // boundary-recall neighborhood
    double br_tolerance_factor = 2.0;    // * voxel

    void validate() const;
    BackboneConfig backbone_config() const;
    RdmConfig rdm_config() const;
};

// "key = value" lines, '#' comments; unknown keys are an error.
RunConfig parse_config_file(const std::string& path);
void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value);

struct LossReport {
    std::string stage;  // "initial" or "refined"
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double val_miou = -1.0;  // negative = not evaluated
};

// Voxelized scene plus cached neighbor graph; reused across epochs.
struct SceneData {
    PointCloud raw;
    PointCloud voxels;
    std::vector<std::size_t> origin_map;
    NeighborIndex nn;
};

SceneData prepare_scene(const PointCloud& raw, const RunConfig& cfg);
std::vector<SceneData> load_scenes(const std::vector<std::string>& paths, const RunConfig& cfg);

// Stage 1: initializes backbone params from cfg.seed and minimizes L_initial.
std::vector<LossReport> pretrain(const RunConfig& cfg, std::vector<SceneData>& train,
                                 const std::vector<SceneData>* val, ParamStore& backbone_params);

// Stage 2: fresh RDM params, joint optimization of L_refined with separate
// learning rates. lr_backbone_joint == 0 freezes the backbone.
std::vector<LossReport> train_joint(const RunConfig& cfg, std::vector<SceneData>& train,
                                    const std::vector<SceneData>* val,
                                    ParamStore& backbone_params, ParamStore& rdm_params);

struct SceneEval {
    EvalReport report;
    double entropy_scene = 0.0;
};

struct AggregateEval {
    std::vector<EvalReport> per_scene;
    double miou = 0.0;          // mean over scenes
    double entropy_dataset = 0.0;
    double boundary_recall = 0.0;
    bool joint = false;
};

// Predictions are made on voxels and broadcast back to raw points through the
// origin map; mIoU is computed against raw labels. With `joint` set the RDM
// path runs and region entropy / boundary recall are reported as well.
AggregateEval evaluate(const RunConfig& cfg, const ParamStore& backbone_params,
                       const ParamStore* rdm_params, std::vector<SceneData>& scenes, bool joint);

// Checkpoint helpers: a joint checkpoint holds backbone.* and rdm.* together.
ParamStore merge_params(const ParamStore& a, const ParamStore& b);
void split_params(const ParamStore& merged, ParamStore& backbone_out, ParamStore& rdm_out);

}  // namespace refl

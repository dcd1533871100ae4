#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "refl/checkpoint.hpp"
#include "refl/datagen.hpp"
#include "refl/error.hpp"
#include "refl/rdm.hpp"
#include "refl/ssre.hpp"
#include "refl/textio.hpp"
#include "refl/trainer.hpp"

namespace {

using namespace refl;

struct ConfigArgs {
    std::string config_file;
    std::vector<std::string> overrides;  // key=value
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
    cmd->add_option("--config", args.config_file, "run configuration file (key = value lines)");
    cmd->add_option("--set", args.overrides,
                    "override a configuration key, e.g. --set region_size=50 (repeatable)");
}

RunConfig resolve_config(const ConfigArgs& args) {
    RunConfig cfg = args.config_file.empty() ? RunConfig{} : parse_config_file(args.config_file);
    for (const std::string& kv : args.overrides) {
        const std::size_t eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("override missing '=': " + kv);
        apply_config_entry(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
}

void print_reports(const std::vector<LossReport>& reports) {
    for (const LossReport& r : reports) {
        std::cout << r.stage << " epoch " << r.epoch << " loss " << fmt_g9(r.mean_loss);
        if (r.val_miou >= 0.0) std::cout << " val_miou " << fmt_g9(r.val_miou);
        std::cout << "\n";
    }
}

std::pair<ParamStore, ParamStore> load_split_checkpoint(const std::string& path) {
    ParamStore backbone, rdm;
    split_params(read_checkpoint(path), backbone, rdm);
    return {std::move(backbone), std::move(rdm)};
}

int run(int argc, char** argv) {
    CLI::App app{"Region-enhanced point cloud segmentation pipeline"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "generate a synthetic labeled dataset");
    std::string gen_out = "data";
    std::size_t gen_train = 24, gen_val = 8;
    std::uint64_t gen_seed = 1;
    double gen_density = 100.0;
    bool gen_ambiguity = false;
    gen->add_option("--out", gen_out, "output directory");
    gen->add_option("--train", gen_train, "number of training scenes");
    gen->add_option("--val", gen_val, "number of validation scenes");
    gen->add_option("--seed", gen_seed, "base seed; scene i uses seed + i");
    gen->add_option("--density", gen_density, "points per square meter of surface");
    gen->add_flag("--ambiguity", gen_ambiguity,
                  "make table/cabinet and chair/other share color means");

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "stage 1: train the backbone on initial labels");
    ConfigArgs pre_cfg;
    std::string pre_manifest, pre_out = "backbone.ckpt";
    bool pre_eval_val = false;
    add_config_options(pre, pre_cfg);
    pre->add_option("--manifest", pre_manifest, "dataset manifest file")->required();
    pre->add_option("--out", pre_out, "output checkpoint path");
    pre->add_flag("--eval-val", pre_eval_val, "report val mIoU after each epoch");

    // train-joint
    auto* joint = app.add_subcommand("train-joint",
                                     "stage 2: jointly train backbone and region module");
    ConfigArgs joint_cfg;
    std::string joint_manifest, joint_in, joint_out = "joint.ckpt";
    bool joint_eval_val = false;
    add_config_options(joint, joint_cfg);
    joint->add_option("--manifest", joint_manifest, "dataset manifest file")->required();
    joint->add_option("--in", joint_in, "stage-1 backbone checkpoint")->required();
    joint->add_option("--out", joint_out, "output checkpoint path (backbone + region module)");
    joint->add_flag("--eval-val", joint_eval_val, "report val mIoU after each epoch");

    // extract-regions
    auto* extract = app.add_subcommand("extract-regions",
                                       "partition one scene into semantic-spatial regions");
    ConfigArgs extract_cfg;
    std::string extract_ckpt, extract_scene, extract_regions_out = "scene.regions",
                extract_centers_out = "scene.centers";
    std::uint64_t extract_seed = 0;
    bool extract_seed_set = false;
    add_config_options(extract, extract_cfg);
    extract->add_option("--ckpt", extract_ckpt, "checkpoint with backbone parameters")->required();
    extract->add_option("--scene", extract_scene, "scene point cloud file")->required();
    extract->add_option("--regions-out", extract_regions_out, "region assignment output file");
    extract->add_option("--centers-out", extract_centers_out, "region centers output file");
    extract->add_option("--region-seed", extract_seed, "sampling seed (default: config seed)")
        ->each([&](const std::string&) { extract_seed_set = true; });

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
    ConfigArgs eval_cfg;
    std::string eval_ckpt, eval_manifest, eval_split = "val", eval_out;
    bool eval_joint = false;
    add_config_options(eval_cmd, eval_cfg);
    eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
    eval_cmd->add_option("--manifest", eval_manifest, "dataset manifest file")->required();
    eval_cmd->add_option("--split", eval_split, "manifest split to evaluate (train or val)");
    eval_cmd->add_option("--out", eval_out, "write the per-scene CSV report to this file");
    eval_cmd->add_flag("--joint", eval_joint,
                       "run the refined pipeline (requires region-module parameters)");

    // infer
    auto* infer = app.add_subcommand("infer", "predict labels for one scene");
    ConfigArgs infer_cfg;
    std::string infer_ckpt, infer_scene, infer_out = "pred.pcd";
    bool infer_joint = false;
    add_config_options(infer, infer_cfg);
    infer->add_option("--ckpt", infer_ckpt, "checkpoint path")->required();
    infer->add_option("--scene", infer_scene, "scene point cloud file")->required();
    infer->add_option("--out", infer_out, "output cloud with predicted labels");
    infer->add_flag("--joint", infer_joint, "run the refined pipeline");

    // attn-dump
    auto* attn = app.add_subcommand("attn-dump", "write per-layer/head attention maps for a scene");
    ConfigArgs attn_cfg;
    std::string attn_ckpt, attn_scene, attn_out = "attn";
    std::uint64_t attn_seed = 0;
    bool attn_seed_set = false;
    add_config_options(attn, attn_cfg);
    attn->add_option("--ckpt", attn_ckpt, "joint checkpoint path")->required();
    attn->add_option("--scene", attn_scene, "scene point cloud file")->required();
    attn->add_option("--out-dir", attn_out, "output directory for the CSV files");
    attn->add_option("--region-seed", attn_seed, "sampling seed (default: config seed)")
        ->each([&](const std::string&) { attn_seed_set = true; });

    // flops
    auto* flops = app.add_subcommand("flops", "attention operation counts for region counts M");
    ConfigArgs flops_cfg;
    std::vector<std::size_t> flops_m;
    std::string flops_out;
    add_config_options(flops, flops_cfg);
    flops->add_option("--m", flops_m, "region counts to tabulate")->required();
    flops->add_option("--out", flops_out, "write the CSV to this file instead of stdout");

    CLI11_PARSE(app, argc, argv);

    if (gen->parsed()) {
        SceneSpec spec;
        spec.density = gen_density;
        if (gen_ambiguity) {
            spec.ambiguity_pairs = {{scene_class::kTable, scene_class::kCabinet},
                                    {scene_class::kChair, scene_class::kOther}};
        }
        DatasetManifest m = generate_dataset(spec, gen_train, gen_val, gen_seed, gen_out);
        std::cout << "wrote " << m.paths.size() << " scenes and " << gen_out
                  << "/manifest.txt\n";
        return 0;
    }

    if (pre->parsed()) {
        RunConfig cfg = resolve_config(pre_cfg);
        DatasetManifest m = read_manifest(pre_manifest);
        std::vector<SceneData> train = load_scenes(manifest_paths(m, "train"), cfg);
        std::vector<SceneData> val;
        if (pre_eval_val) val = load_scenes(manifest_paths(m, "val"), cfg);
        ParamStore backbone;
        print_reports(pretrain(cfg, train, pre_eval_val ? &val : nullptr, backbone));
        write_checkpoint(backbone, pre_out);
        std::cout << "wrote " << pre_out << "\n";
        return 0;
    }

    if (joint->parsed()) {
        RunConfig cfg = resolve_config(joint_cfg);
        DatasetManifest m = read_manifest(joint_manifest);
        std::vector<SceneData> train = load_scenes(manifest_paths(m, "train"), cfg);
        std::vector<SceneData> val;
        if (joint_eval_val) val = load_scenes(manifest_paths(m, "val"), cfg);
        auto [backbone, rdm_loaded] = load_split_checkpoint(joint_in);
        if (backbone.has("backbone.mlp3.w") &&
            backbone.value("backbone.mlp3.w").cols() != cfg.d) {
            throw ConfigError("checkpoint feature dim " +
                              std::to_string(backbone.value("backbone.mlp3.w").cols()) +
                              " does not match configured d " + std::to_string(cfg.d));
        }
        ParamStore rdm;
        print_reports(train_joint(cfg, train, joint_eval_val ? &val : nullptr, backbone, rdm));
        write_checkpoint(merge_params(backbone, rdm), joint_out);
        std::cout << "wrote " << joint_out << "\n";
        return 0;
    }

    if (extract->parsed()) {
        RunConfig cfg = resolve_config(extract_cfg);
        auto [backbone, rdm] = load_split_checkpoint(extract_ckpt);
        SceneData sd = prepare_scene(read_pointcloud(extract_scene), cfg);
        BackboneOutput out = backbone_forward(sd.voxels, sd.nn, backbone, cfg.backbone_config());
        const std::uint64_t seed = extract_seed_set ? extract_seed : cfg.seed;
        RegionPartition part = extract_regions(sd.voxels, out.logits, cfg.region_size, seed);
        write_regions(part.region_of, part.region_count, extract_regions_out);
        write_centers(part, extract_centers_out);
        std::cout << "M " << part.region_count << "\n";
        for (std::size_t c = 0; c < part.group_regions.size(); ++c) {
            std::cout << "class " << c << " N_k " << part.group_sizes[c] << " M_k "
                      << part.group_regions[c] << "\n";
        }
        return 0;
    }

    if (eval_cmd->parsed()) {
        RunConfig cfg = resolve_config(eval_cfg);
        auto [backbone, rdm] = load_split_checkpoint(eval_ckpt);
        DatasetManifest m = read_manifest(eval_manifest);
        std::vector<std::string> paths = manifest_paths(m, eval_split);
        if (paths.empty()) throw ConfigError("no scenes in split: " + eval_split);
        std::vector<SceneData> scenes = load_scenes(paths, cfg);
        AggregateEval agg = evaluate(cfg, backbone, eval_joint ? &rdm : nullptr, scenes, eval_joint);
        std::ostringstream csv;
        for (std::size_t i = 0; i < paths.size(); ++i) {
            csv << "scene," << paths[i] << "\n" << report_csv(agg.per_scene[i]);
        }
        csv << "aggregate,miou," << fmt_g9(agg.miou) << "\n";
        if (eval_joint) {
            csv << "aggregate,entropy," << fmt_g9(agg.entropy_dataset) << "\n";
            csv << "aggregate,boundary_recall," << fmt_g9(agg.boundary_recall) << "\n";
        }
        if (eval_out.empty()) {
            std::cout << csv.str();
        } else {
            atomic_write_text(eval_out, csv.str());
        }
        std::cout << "miou " << fmt_g9(agg.miou) << "\n";
        return 0;
    }

    if (infer->parsed()) {
        RunConfig cfg = resolve_config(infer_cfg);
        auto [backbone, rdm] = load_split_checkpoint(infer_ckpt);
        SceneData sd = prepare_scene(read_pointcloud(infer_scene), cfg);
        BackboneOutput out = backbone_forward(sd.voxels, sd.nn, backbone, cfg.backbone_config());
        Matrix logits;
        if (infer_joint) {
            if (!rdm.has("rdm.fuse.w1")) {
                throw ConfigError("infer: --joint requires region-module parameters");
            }
            RegionPartition part = extract_regions(sd.voxels, out.logits, cfg.region_size, cfg.seed);
            logits = rdm_forward(out.features, sd.voxels.coords, part, rdm, cfg.rdm_config(),
                                 nullptr);
        } else {
            logits = std::move(out.logits);
        }
        std::vector<int> voxel_pred = semantic_grouping(logits);
        PointCloud pred = sd.raw;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            pred.labels[i] = voxel_pred[sd.origin_map[i]];
        }
        write_pointcloud(pred, infer_out);
        std::cout << "wrote " << infer_out << "\n";
        return 0;
    }

    if (attn->parsed()) {
        RunConfig cfg = resolve_config(attn_cfg);
        auto [backbone, rdm] = load_split_checkpoint(attn_ckpt);
        if (!rdm.has("rdm.fuse.w1")) {
            throw ConfigError("attn-dump: checkpoint has no region-module parameters");
        }
        SceneData sd = prepare_scene(read_pointcloud(attn_scene), cfg);
        BackboneOutput out = backbone_forward(sd.voxels, sd.nn, backbone, cfg.backbone_config());
        const std::uint64_t seed = attn_seed_set ? attn_seed : cfg.seed;
        RegionPartition part = extract_regions(sd.voxels, out.logits, cfg.region_size, seed);
        RdmCache cache;
        rdm_forward(out.features, sd.voxels.coords, part, rdm, cfg.rdm_config(), &cache);
        write_attention_dump(cache, part, attn_out);
        std::cout << "wrote " << cfg.layers * cfg.heads << " attention maps (M = "
                  << part.region_count << ") to " << attn_out << "\n";
        return 0;
    }

    if (flops->parsed()) {
        RunConfig cfg = resolve_config(flops_cfg);
        std::ostringstream csv;
        csv << "M,flops\n";
        for (std::size_t m : flops_m) {
            csv << m << "," << attention_flops(m, cfg.d, cfg.heads, cfg.layers) << "\n";
        }
        if (flops_out.empty()) {
            std::cout << csv.str();
        } else {
            atomic_write_text(flops_out, csv.str());
            std::cout << "wrote " << flops_out << "\n";
        }
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const refl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const refl::IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 3;
    } catch (const refl::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    }
}

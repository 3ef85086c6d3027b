#include "laneatt/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "laneatt/anchors.hpp"
#include "laneatt/config.hpp"
#include "laneatt/data.hpp"
#include "laneatt/errors.hpp"
#include "laneatt/eval.hpp"
#include "laneatt/matching.hpp"
#include "laneatt/model.hpp"
#include "laneatt/rng.hpp"
#include "laneatt/tensor.hpp"
#include "laneatt/train.hpp"

namespace laneatt {
namespace {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Run configuration: defaults < LANEATT_SEED < config file < flags.
// List-valued fields are kept as comma-separated text so the config file and
// the flags share one syntax.
// ---------------------------------------------------------------------------

struct RunConfig {
    std::uint64_t seed = 0;

    // geometry + model
    int image_height = 160;
    int image_width = 320;
    int n_points = 72;
    std::string backbone_channels = "8,16,32,64";
    std::string backbone_strides = "2,2,2,2";
    int feature_channels = 16;
    int num_classes = 1;
    bool attention = true;
    bool per_border_heads = false;

    // anchor layout ("" for bottom angles selects the built-in fan)
    int anchor_stride = 16;
    std::string left_angles = "72,60,49,39,30,22";
    std::string right_angles = "108,120,131,141,150,158";
    std::string bottom_angles = "";
    int left_origins = 72;
    int right_origins = 72;
    int bottom_origins = 137;

    // data generation
    int gen_count = 100;
    int gen_min_lanes = 2;
    int gen_max_lanes = 5;
    double flip_prob = 0.5;
    double shear_max = 0.08;
    double shift_max = 8.0;
    double dash_prob = 0.4;
    double occlusion_prob = 0.3;

    // training
    int epochs = 30;
    std::string optimizer = "adam";
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double momentum = 0.9;
    double lambda = 10.0;
    double focal_gamma = 2.0;
    double focal_alpha = 0.25;
    bool cross_entropy = false;
    double tau_positive = 15.0;
    double tau_negative = 20.0;
    double train_nms = 15.0;
    bool shuffle = true;
    int eval_limit = 50;

    // inference + scoring
    double confidence = 0.5;
    double nms_distance = 50.0;
    int max_lanes = 5;
    std::string format = "jsonl";  // or "lines"
    double pixel_threshold = 20.0;
    double match_threshold = 0.85;
    bool per_clip = false;
    double lane_width = 30.0;
    double iou_threshold = 0.5;
    bool csv = false;

    // benchmark sweep
    std::string bench_sizes = "160x320,288x512,360x640";
    std::string bench_anchors = "250,500,1000";
    int warmup = 1;
    int reps = 3;

    // paths (flags only, never config keys)
    std::string config_path;
    std::string data_dir;
    std::string eval_data;
    std::string out_path;
    std::string pred_path;
    std::string gt_path;
    std::string checkpoint;
    std::string init_checkpoint;
    std::string anchors_dir;
    int limit = 0;
    int keep = 1000;  // filter-anchors survivor count
};

const std::vector<std::string>& documented_keys() {
    static const std::vector<std::string> keys = {
        "seed",          "image_height",   "image_width",    "n_points",
        "backbone_channels", "backbone_strides", "feature_channels", "num_classes",
        "attention",     "per_border_heads", "anchor_stride", "left_angles",
        "right_angles",  "bottom_angles",  "left_origins",   "right_origins",
        "bottom_origins", "gen_count",     "gen_min_lanes",  "gen_max_lanes",
        "flip_prob",     "shear_max",      "shift_max",      "dash_prob",
        "occlusion_prob", "epochs",        "optimizer",      "learning_rate",
        "beta1",         "beta2",          "epsilon",        "momentum",
        "lambda",        "focal_gamma",    "focal_alpha",    "cross_entropy",
        "tau_positive",  "tau_negative",   "train_nms",      "shuffle",
        "confidence",    "nms_distance",   "max_lanes",      "format",
        "pixel_threshold", "match_threshold", "per_clip",    "lane_width",
        "iou_threshold", "bench_sizes",    "bench_anchors",  "warmup",
        "reps",          "eval_limit",
    };
    return keys;
}

std::uint64_t parse_seed_field(const std::string& field, const std::string& text) {
    try {
        std::size_t used = 0;
        const unsigned long long value = std::stoull(text, &used);
        if (used != text.size()) throw std::invalid_argument("trailing characters");
        return static_cast<std::uint64_t>(value);
    } catch (const std::exception&) {
        throw ConfigError(field, "expected an unsigned integer, got \"" + text + "\"");
    }
}

void apply_config_file(const KeyValueMap& map, RunConfig& rc, const std::string& origin) {
    reject_unknown_keys(map, documented_keys(), origin);
    if (map.count("seed")) rc.seed = parse_seed_field("seed", map.at("seed"));
    rc.image_height = config_int(map, "image_height", rc.image_height);
    rc.image_width = config_int(map, "image_width", rc.image_width);
    rc.n_points = config_int(map, "n_points", rc.n_points);
    rc.backbone_channels = config_string(map, "backbone_channels", rc.backbone_channels);
    rc.backbone_strides = config_string(map, "backbone_strides", rc.backbone_strides);
    rc.feature_channels = config_int(map, "feature_channels", rc.feature_channels);
    rc.num_classes = config_int(map, "num_classes", rc.num_classes);
    rc.attention = config_bool(map, "attention", rc.attention);
    rc.per_border_heads = config_bool(map, "per_border_heads", rc.per_border_heads);
    rc.anchor_stride = config_int(map, "anchor_stride", rc.anchor_stride);
    rc.left_angles = config_string(map, "left_angles", rc.left_angles);
    rc.right_angles = config_string(map, "right_angles", rc.right_angles);
    rc.bottom_angles = config_string(map, "bottom_angles", rc.bottom_angles);
    rc.left_origins = config_int(map, "left_origins", rc.left_origins);
    rc.right_origins = config_int(map, "right_origins", rc.right_origins);
    rc.bottom_origins = config_int(map, "bottom_origins", rc.bottom_origins);
    rc.gen_count = config_int(map, "gen_count", rc.gen_count);
    rc.gen_min_lanes = config_int(map, "gen_min_lanes", rc.gen_min_lanes);
    rc.gen_max_lanes = config_int(map, "gen_max_lanes", rc.gen_max_lanes);
    rc.flip_prob = config_double(map, "flip_prob", rc.flip_prob);
    rc.shear_max = config_double(map, "shear_max", rc.shear_max);
    rc.shift_max = config_double(map, "shift_max", rc.shift_max);
    rc.dash_prob = config_double(map, "dash_prob", rc.dash_prob);
    rc.occlusion_prob = config_double(map, "occlusion_prob", rc.occlusion_prob);
    rc.epochs = config_int(map, "epochs", rc.epochs);
    rc.optimizer = config_string(map, "optimizer", rc.optimizer);
    rc.learning_rate = config_double(map, "learning_rate", rc.learning_rate);
    rc.beta1 = config_double(map, "beta1", rc.beta1);
    rc.beta2 = config_double(map, "beta2", rc.beta2);
    rc.epsilon = config_double(map, "epsilon", rc.epsilon);
    rc.momentum = config_double(map, "momentum", rc.momentum);
    rc.lambda = config_double(map, "lambda", rc.lambda);
    rc.focal_gamma = config_double(map, "focal_gamma", rc.focal_gamma);
    rc.focal_alpha = config_double(map, "focal_alpha", rc.focal_alpha);
    rc.cross_entropy = config_bool(map, "cross_entropy", rc.cross_entropy);
    rc.tau_positive = config_double(map, "tau_positive", rc.tau_positive);
    rc.tau_negative = config_double(map, "tau_negative", rc.tau_negative);
    rc.train_nms = config_double(map, "train_nms", rc.train_nms);
    rc.shuffle = config_bool(map, "shuffle", rc.shuffle);
    rc.confidence = config_double(map, "confidence", rc.confidence);
    rc.nms_distance = config_double(map, "nms_distance", rc.nms_distance);
    rc.max_lanes = config_int(map, "max_lanes", rc.max_lanes);
    rc.format = config_string(map, "format", rc.format);
    rc.pixel_threshold = config_double(map, "pixel_threshold", rc.pixel_threshold);
    rc.match_threshold = config_double(map, "match_threshold", rc.match_threshold);
    rc.per_clip = config_bool(map, "per_clip", rc.per_clip);
    rc.lane_width = config_double(map, "lane_width", rc.lane_width);
    rc.iou_threshold = config_double(map, "iou_threshold", rc.iou_threshold);
    rc.bench_sizes = config_string(map, "bench_sizes", rc.bench_sizes);
    rc.bench_anchors = config_string(map, "bench_anchors", rc.bench_anchors);
    rc.warmup = config_int(map, "warmup", rc.warmup);
    rc.reps = config_int(map, "reps", rc.reps);
    rc.eval_limit = config_int(map, "eval_limit", rc.eval_limit);
}

// ---------------------------------------------------------------------------
// Field parsing shared by flags and config values
// ---------------------------------------------------------------------------

std::vector<int> parse_int_list(const std::string& field, const std::string& text) {
    std::vector<int> out;
    for (double v : parse_double_list_field(field, text)) {
        const int i = static_cast<int>(v);
        if (static_cast<double>(i) != v) {
            throw ConfigError(field, "expected integers, got \"" + text + "\"");
        }
        out.push_back(i);
    }
    return out;
}

std::vector<std::pair<int, int>> parse_size_list(const std::string& field,
                                                 const std::string& text) {
    std::vector<std::pair<int, int>> sizes;
    std::string item;
    std::istringstream stream(text);
    while (std::getline(stream, item, ',')) {
        const std::size_t cut = item.find('x');
        if (cut == std::string::npos) {
            throw ConfigError(field, "expected HxW entries, got \"" + item + "\"");
        }
        sizes.emplace_back(parse_int_field(field, item.substr(0, cut)),
                           parse_int_field(field, item.substr(cut + 1)));
    }
    if (sizes.empty()) throw ConfigError(field, "empty size list");
    return sizes;
}

AnchorGenConfig anchor_config_from(const RunConfig& rc) {
    AnchorGenConfig cfg;
    cfg.left_angles = parse_double_list_field("left_angles", rc.left_angles);
    cfg.right_angles = parse_double_list_field("right_angles", rc.right_angles);
    cfg.bottom_angles = rc.bottom_angles.empty()
                            ? std::vector<double>{}
                            : parse_double_list_field("bottom_angles", rc.bottom_angles);
    cfg.left_origins = rc.left_origins;
    cfg.right_origins = rc.right_origins;
    cfg.bottom_origins = rc.bottom_origins;
    cfg.n_points = rc.n_points;
    cfg.stride = rc.anchor_stride;
    return cfg;
}

ModelConfig model_config_from(const RunConfig& rc) {
    ModelConfig cfg;
    cfg.backbone.stage_channels = parse_int_list("backbone_channels", rc.backbone_channels);
    cfg.backbone.stage_strides = parse_int_list("backbone_strides", rc.backbone_strides);
    cfg.backbone.feature_channels = rc.feature_channels;
    cfg.backbone.input_height = rc.image_height;
    cfg.backbone.input_width = rc.image_width;
    cfg.n_points = rc.n_points;
    cfg.num_classes = rc.num_classes;
    cfg.use_attention = rc.attention;
    cfg.per_border_heads = rc.per_border_heads;
    return cfg;
}

GenConfig gen_config_from(const RunConfig& rc) {
    GenConfig cfg;
    cfg.image_height = rc.image_height;
    cfg.image_width = rc.image_width;
    cfg.n_points = rc.n_points;
    cfg.min_lanes = rc.gen_min_lanes;
    cfg.max_lanes = rc.gen_max_lanes;
    cfg.flip_prob = rc.flip_prob;
    cfg.shear_max = rc.shear_max;
    cfg.shift_max = rc.shift_max;
    cfg.dash_prob = rc.dash_prob;
    cfg.occlusion_prob = rc.occlusion_prob;
    return cfg;
}

TrainConfig train_config_from(const RunConfig& rc) {
    TrainConfig cfg;
    cfg.epochs = rc.epochs;
    cfg.tau_positive = rc.tau_positive;
    cfg.tau_negative = rc.tau_negative;
    cfg.nms_distance = rc.train_nms;
    cfg.loss.lambda = rc.lambda;
    cfg.loss.focal_gamma = rc.focal_gamma;
    cfg.loss.focal_alpha = rc.focal_alpha;
    cfg.loss.use_cross_entropy = rc.cross_entropy;
    cfg.optim.method = rc.optimizer;
    cfg.optim.learning_rate = rc.learning_rate;
    cfg.optim.beta1 = rc.beta1;
    cfg.optim.beta2 = rc.beta2;
    cfg.optim.epsilon = rc.epsilon;
    cfg.optim.momentum = rc.momentum;
    cfg.shuffle = rc.shuffle;
    cfg.shuffle_seed = rc.seed;
    return cfg;
}

InferParams infer_params_from(const RunConfig& rc) {
    InferParams params;
    params.confidence = rc.confidence;
    params.nms_distance = rc.nms_distance;
    if (rc.max_lanes > 0) {
        params.max_lanes = rc.max_lanes;
    } else {
        params.max_lanes = std::nullopt;
    }
    return params;
}

MaskF1Config mask_config_from(const RunConfig& rc) {
    MaskF1Config cfg;
    cfg.lane_width = rc.lane_width;
    cfg.iou_threshold = rc.iou_threshold;
    return cfg;
}

// ---------------------------------------------------------------------------
// Dataset loading
// ---------------------------------------------------------------------------

/// Lanes of one label entry on the n_points grid; rows with no visible point
/// are dropped.
std::vector<Lane> entry_lanes(const RowSampleEntry& entry, int n_points, int image_height) {
    std::vector<Lane> lanes;
    for (const std::vector<int>& xs : entry.lanes) {
        bool any = false;
        for (int x : xs) {
            if (x >= 0) any = true;
        }
        if (!any) continue;
        lanes.push_back(lane_from_row_samples(xs, entry.h_samples, n_points, image_height));
    }
    return lanes;
}

struct LoadedDataset {
    DatasetMeta meta;
    std::vector<RowSampleEntry> entries;
    std::vector<Tensor> images;             // filled when with_images
    std::vector<std::vector<Lane>> labels;  // on the meta.n_points grid
};

LoadedDataset load_dataset(const std::string& root, bool with_images, int limit) {
    LoadedDataset ds;
    ds.meta = read_dataset_meta(root);
    ds.entries = read_jsonl((fs::path(root) / "labels.jsonl").string());
    if (limit > 0 && static_cast<int>(ds.entries.size()) > limit) {
        ds.entries.resize(static_cast<std::size_t>(limit));
    }
    ds.labels.reserve(ds.entries.size());
    for (const RowSampleEntry& entry : ds.entries) {
        ds.labels.push_back(entry_lanes(entry, ds.meta.n_points, ds.meta.image_height));
        if (with_images) {
            const Image image = read_ppm((fs::path(root) / entry.raw_file).string());
            if (image.height != ds.meta.image_height || image.width != ds.meta.image_width) {
                throw DataError(entry.raw_file + ": image size disagrees with meta.cfg");
            }
            ds.images.push_back(image_to_tensor(image));
        }
    }
    return ds;
}

void check_dataset_geometry(const LoadedDataset& ds, const RunConfig& rc,
                            const std::string& field) {
    if (ds.meta.image_height != rc.image_height || ds.meta.image_width != rc.image_width) {
        throw ConfigError(field, "dataset is " + std::to_string(ds.meta.image_width) + "x" +
                                     std::to_string(ds.meta.image_height) +
                                     " but the configured input is " +
                                     std::to_string(rc.image_width) + "x" +
                                     std::to_string(rc.image_height) +
                                     " (set image_height/image_width to match)");
    }
    if (ds.meta.n_points != rc.n_points) {
        throw ConfigError(field, "dataset labels use " + std::to_string(ds.meta.n_points) +
                                     " grid rows but n_points is " + std::to_string(rc.n_points));
    }
}

/// Anchor pack directory (anchors.cfg + anchors.csv) or freshly generated.
AnchorSet load_or_generate_anchors(const RunConfig& rc) {
    if (rc.anchors_dir.empty()) {
        return generate_anchors(anchor_config_from(rc), rc.image_height, rc.image_width);
    }
    const AnchorGenConfig cfg =
        read_anchor_config((fs::path(rc.anchors_dir) / "anchors.cfg").string());
    if (cfg.n_points != rc.n_points) {
        throw ConfigError("anchors", "anchor pack uses " + std::to_string(cfg.n_points) +
                                         " grid rows but n_points is " +
                                         std::to_string(rc.n_points));
    }
    return import_anchor_csv((fs::path(rc.anchors_dir) / "anchors.csv").string(), cfg,
                             rc.image_height, rc.image_width);
}

std::string stem_of(const std::string& raw_file) {
    return fs::path(raw_file).stem().string();
}

// ---------------------------------------------------------------------------
// Subcommand bodies
// ---------------------------------------------------------------------------

int cmd_gen_data(const RunConfig& rc) {
    const GenConfig cfg = gen_config_from(rc);
    const std::vector<RowSampleEntry> entries =
        write_dataset(rc.out_path, cfg, rc.seed, rc.gen_count);
    std::cout << "wrote " << entries.size() << " samples (" << cfg.image_width << "x"
              << cfg.image_height << ", seed " << rc.seed << ") under " << rc.out_path << "\n";
    return 0;
}

int cmd_filter_anchors(const RunConfig& rc) {
    const LoadedDataset ds = load_dataset(rc.data_dir, /*with_images=*/false, rc.limit);
    check_dataset_geometry(ds, rc, "filter-anchors");
    const AnchorSet full = generate_anchors(anchor_config_from(rc), rc.image_height,
                                            rc.image_width);
    if (rc.keep <= 0) {
        throw ConfigError("keep", "must keep at least one anchor");
    }
    const AnchorSet kept = filter_anchors(full, ds.labels, rc.keep, rc.tau_positive);
    fs::create_directories(rc.out_path);
    export_anchor_csv(kept, (fs::path(rc.out_path) / "anchors.csv").string());
    write_anchor_config(kept.config, (fs::path(rc.out_path) / "anchors.cfg").string());
    std::cout << "kept " << kept.size() << " of " << full.size() << " anchors (ranked by "
              << "positive matches over " << ds.entries.size() << " samples) under "
              << rc.out_path << "\n";
    return 0;
}

int cmd_train(const RunConfig& rc) {
    if (rc.epochs < 0) throw ConfigError("epochs", "must be non-negative");
    const LoadedDataset ds = load_dataset(rc.data_dir, /*with_images=*/true, rc.limit);
    check_dataset_geometry(ds, rc, "train");
    const AnchorSet anchors = load_or_generate_anchors(rc);
    const ModelConfig mcfg = model_config_from(rc);

    ModelParams params = init_params(mcfg, anchors.size(), rc.seed);
    if (!rc.init_checkpoint.empty()) {
        load_params(rc.init_checkpoint, params);
    }

    fs::create_directories(rc.out_path);
    if (rc.epochs == 0) {
        // Zero epochs: persist the starting point untouched.
        save_params((fs::path(rc.out_path) / "epoch_000.ckpt").string(), params);
        std::cout << "no epochs requested; wrote initialization to " << rc.out_path
                  << "/epoch_000.ckpt\n";
        return 0;
    }

    // Held-out (or training) images for the per-epoch detection score.
    const LoadedDataset* eval_ds = &ds;
    LoadedDataset held_out;
    if (!rc.eval_data.empty()) {
        held_out = load_dataset(rc.eval_data, /*with_images=*/true, rc.eval_limit);
        check_dataset_geometry(held_out, rc, "eval-data");
        eval_ds = &held_out;
    }
    std::size_t eval_n = eval_ds->images.size();
    if (rc.eval_limit > 0) {
        eval_n = std::min(eval_n, static_cast<std::size_t>(rc.eval_limit));
    }
    const InferParams infer = infer_params_from(rc);
    const MaskF1Config mask_cfg = mask_config_from(rc);
    auto eval_f1 = [&]() {
        std::vector<std::vector<Lane>> preds;
        std::vector<std::vector<Lane>> gts;
        for (std::size_t i = 0; i < eval_n; ++i) {
            preds.push_back(infer_lanes(eval_ds->images[i], params, mcfg, anchors, infer));
            gts.push_back(eval_ds->labels[i]);
        }
        return score_mask_f1(preds, gts, rc.image_height, rc.image_width, mask_cfg).f1;
    };

    std::printf("training on %zu images, %d anchors, seed %llu\n", ds.images.size(),
                anchors.size(), static_cast<unsigned long long>(rc.seed));
    std::printf("epoch %3d/%d  f1 %.4f  (untrained)\n", 0, rc.epochs, eval_f1());

    TrainConfig tcfg = train_config_from(rc);
    tcfg.checkpoint_dir = rc.out_path;
    train_model(params, mcfg, anchors, ds.images, ds.labels, tcfg, nullptr,
                [&](const EpochStats& stats) {
                    std::printf("epoch %3d/%d  loss %.4f  cls %.4f  reg %.4f  f1 %.4f\n",
                                stats.epoch, rc.epochs, stats.mean_loss,
                                stats.mean_classification, stats.mean_regression, eval_f1());
                    std::fflush(stdout);
                });

    char last[32];
    std::snprintf(last, sizeof(last), "epoch_%03d.ckpt", rc.epochs);
    std::cout << "training complete; final checkpoint " << rc.out_path << "/" << last << "\n";
    return 0;
}

int cmd_infer(const RunConfig& rc) {
    if (rc.format != "jsonl" && rc.format != "lines") {
        throw ConfigError("format", "must be \"jsonl\" or \"lines\", got \"" + rc.format + "\"");
    }
    const LoadedDataset ds = load_dataset(rc.data_dir, /*with_images=*/true, rc.limit);
    check_dataset_geometry(ds, rc, "infer");
    const AnchorSet anchors = load_or_generate_anchors(rc);
    const ModelConfig mcfg = model_config_from(rc);
    ModelParams params = init_params(mcfg, anchors.size(), rc.seed);
    load_params(rc.checkpoint, params);

    const InferParams infer = infer_params_from(rc);
    std::size_t total_lanes = 0;
    if (rc.format == "jsonl") {
        std::vector<RowSampleEntry> out;
        out.reserve(ds.images.size());
        for (std::size_t i = 0; i < ds.images.size(); ++i) {
            const std::vector<Lane> lanes =
                infer_lanes(ds.images[i], params, mcfg, anchors, infer);
            RowSampleEntry entry;
            entry.h_samples = ds.entries[i].h_samples;
            entry.raw_file = ds.entries[i].raw_file;
            for (const Lane& lane : lanes) {
                entry.lanes.push_back(
                    lane_to_row_samples(lane, entry.h_samples, rc.image_height));
            }
            total_lanes += lanes.size();
            out.push_back(std::move(entry));
        }
        if (const fs::path parent = fs::path(rc.out_path).parent_path(); !parent.empty()) {
            fs::create_directories(parent);
        }
        write_jsonl(rc.out_path, out);
        std::cout << "wrote " << out.size() << " prediction rows (" << total_lanes
                  << " lanes) to " << rc.out_path << "\n";
    } else {
        fs::create_directories(rc.out_path);
        for (std::size_t i = 0; i < ds.images.size(); ++i) {
            const std::vector<Lane> lanes =
                infer_lanes(ds.images[i], params, mcfg, anchors, infer);
            std::vector<Polyline> polylines;
            for (const Lane& lane : lanes) {
                polylines.push_back(lane_to_polyline(lane, rc.image_height));
            }
            total_lanes += lanes.size();
            const std::string name = stem_of(ds.entries[i].raw_file) + ".lines.txt";
            write_lines_file((fs::path(rc.out_path) / name).string(), polylines);
        }
        std::cout << "wrote " << ds.images.size() << " lines files (" << total_lanes
                  << " lanes) under " << rc.out_path << "\n";
    }
    return 0;
}

int cmd_score(const RunConfig& rc) {
    const std::vector<RowSampleEntry> preds = read_jsonl(rc.pred_path);

    std::vector<RowSampleEntry> gts;
    int height = rc.image_height;
    int width = rc.image_width;
    int n_points = rc.n_points;
    if (fs::is_directory(rc.gt_path)) {
        const DatasetMeta meta = read_dataset_meta(rc.gt_path);
        gts = read_jsonl((fs::path(rc.gt_path) / "labels.jsonl").string());
        height = meta.image_height;
        width = meta.image_width;
        n_points = meta.n_points;
    } else {
        gts = read_jsonl(rc.gt_path);
    }
    if (preds.size() != gts.size()) {
        throw DataError("prediction and ground-truth files hold different image counts (" +
                        std::to_string(preds.size()) + " vs " + std::to_string(gts.size()) + ")");
    }

    RowAccuracyConfig row_cfg;
    row_cfg.pixel_threshold = rc.pixel_threshold;
    row_cfg.match_threshold = rc.match_threshold;
    row_cfg.per_clip_average = rc.per_clip;
    const RowAccuracyResult rows = score_row_accuracy(preds, gts, row_cfg);

    std::vector<std::vector<Lane>> pred_lanes;
    std::vector<std::vector<Lane>> gt_lanes;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        pred_lanes.push_back(entry_lanes(preds[i], n_points, height));
        gt_lanes.push_back(entry_lanes(gts[i], n_points, height));
    }
    const MaskF1Result mask =
        score_mask_f1(pred_lanes, gt_lanes, height, width, mask_config_from(rc));

    MetricsReport report;
    report.add("accuracy", rows.accuracy);
    report.add("fp_rate", rows.fp_rate);
    report.add("fn_rate", rows.fn_rate);
    report.add("point_tp_lanes", rows.tp);
    report.add("point_fp_lanes", rows.fp);
    report.add("point_fn_lanes", rows.fn);
    report.add("mask_precision", mask.precision);
    report.add("mask_recall", mask.recall);
    report.add("mask_f1", mask.f1);
    report.add("mask_tp", mask.tp);
    report.add("mask_fp", mask.fp);
    report.add("mask_fn", mask.fn);
    std::cout << (rc.csv ? report.to_csv() : report.to_text());
    return 0;
}

int cmd_bench(const RunConfig& rc) {
    const std::vector<std::pair<int, int>> sizes = parse_size_list("bench_sizes", rc.bench_sizes);
    const std::vector<int> counts = parse_int_list("bench_anchors", rc.bench_anchors);
    for (int n : counts) {
        if (n < 2) throw ConfigError("bench_anchors", "need at least 2 anchors per entry");
    }

    std::cout << "forward-pass benchmark (three stride-2 stages + reduction; map stride 8)\n"
              << "multiply-accumulate counts cover convolution and dense layers of the\n"
              << "forward pass only; attention products and elementwise work are excluded\n"
              << "  " << (rc.attention ? "attention on" : "attention off") << ", warmup "
              << rc.warmup << ", timed reps " << rc.reps << "\n\n";
    std::printf("%10s  %8s  %14s  %10s  %12s\n", "input", "anchors", "macs/image", "img/s",
                "sec/image");

    BenchConfig bench_cfg;
    bench_cfg.warmup = rc.warmup;
    bench_cfg.reps = rc.reps;
    for (const auto& [height, width] : sizes) {
        // A fixed sweep backbone whose stride divides every listed size.
        RunConfig sized = rc;
        sized.image_height = height;
        sized.image_width = width;
        sized.backbone_channels = "8,16,32";
        sized.backbone_strides = "2,2,2";
        sized.anchor_stride = 8;
        const ModelConfig mcfg = model_config_from(sized);
        const AnchorSet full =
            generate_anchors(anchor_config_from(sized), height, width);

        // Deterministic pseudo-image; pixel content does not affect the cost.
        Tensor image({3, height, width});
        Rng pixel_rng(mix_seed(rc.seed, 0xBE7C));
        for (double& v : image.data) v = pixel_rng.next_double();

        for (int count : counts) {
            AnchorSet sub;
            sub.config = full.config;
            sub.image_height = full.image_height;
            sub.image_width = full.image_width;
            const int take = std::min(count, full.size());
            for (int i = 0; i < take; ++i) {
                const std::size_t pick = static_cast<std::size_t>(
                    static_cast<long long>(i) * full.size() / take);
                Anchor anchor = full.anchors[pick];
                anchor.id = i;
                sub.anchors.push_back(anchor);
            }
            const ModelParams params = init_params(mcfg, sub.size(), rc.seed);
            const BenchResult result = benchmark_forward(image, params, mcfg, sub, bench_cfg);
            char label[32];
            std::snprintf(label, sizeof(label), "%dx%d", height, width);
            std::printf("%10s  %8d  %14llu  %10.3f  %12.6f\n", label, sub.size(),
                        static_cast<unsigned long long>(result.macs_per_image), result.fps,
                        result.seconds_per_image);
            std::fflush(stdout);
        }
    }
    return 0;
}

int cmd_render(const RunConfig& rc) {
    const LoadedDataset ds = load_dataset(rc.data_dir, /*with_images=*/false, rc.limit);
    std::vector<RowSampleEntry> preds = read_jsonl(rc.pred_path);
    const std::size_t count = std::min(preds.size(), ds.entries.size());
    fs::create_directories(rc.out_path);

    std::size_t tp_total = 0;
    std::size_t fp_total = 0;
    for (std::size_t i = 0; i < count; ++i) {
        Image image = read_ppm((fs::path(rc.data_dir) / ds.entries[i].raw_file).string());
        const std::vector<Lane> gt = ds.labels[i];
        const std::vector<Lane> pred =
            entry_lanes(preds[i], ds.meta.n_points, ds.meta.image_height);

        for (const Lane& lane : gt) {
            draw_lane(image, lane, 40, 90, 255);  // ground truth: blue
        }
        // One-to-one matching in file order: a prediction whose best free
        // ground truth clears the overlap bar counts as a true positive.
        std::vector<bool> taken(gt.size(), false);
        for (const Lane& lane : pred) {
            int best = -1;
            double best_iou = rc.iou_threshold;
            for (std::size_t g = 0; g < gt.size(); ++g) {
                if (taken[g]) continue;
                const double iou = lane_mask_iou(lane, gt[g], ds.meta.image_height,
                                                 ds.meta.image_width, rc.lane_width);
                if (iou > best_iou) {
                    best_iou = iou;
                    best = static_cast<int>(g);
                }
            }
            if (best >= 0) {
                taken[static_cast<std::size_t>(best)] = true;
                ++tp_total;
                draw_lane(image, lane, 60, 220, 80);  // true positive: green
            } else {
                ++fp_total;
                draw_lane(image, lane, 230, 60, 50);  // false positive: red
            }
        }
        const std::string name = stem_of(ds.entries[i].raw_file) + "_overlay.ppm";
        write_ppm((fs::path(rc.out_path) / name).string(), image);
    }
    std::cout << "wrote " << count << " overlays (" << tp_total << " matched lanes green, "
              << fp_total << " unmatched red, ground truth blue) under " << rc.out_path << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// Argument wiring
// ---------------------------------------------------------------------------

std::string find_config_arg(const std::vector<std::string>& args) {
    std::string path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[i + 1];
        } else if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
        }
    }
    return path;
}

void add_geometry_flags(CLI::App* cmd, RunConfig& rc) {
    cmd->add_option("--image-height", rc.image_height, "input image height");
    cmd->add_option("--image-width", rc.image_width, "input image width");
    cmd->add_option("--n-points", rc.n_points, "lane grid rows");
}

void add_model_flags(CLI::App* cmd, RunConfig& rc) {
    cmd->add_option("--backbone-channels", rc.backbone_channels,
                    "comma list of stage output channels");
    cmd->add_option("--backbone-strides", rc.backbone_strides, "comma list of stage strides");
    cmd->add_option("--feature-channels", rc.feature_channels, "reduced feature channels");
    cmd->add_option("--num-classes", rc.num_classes, "lane classes (background excluded)");
    cmd->add_flag("--attention,!--no-attention", rc.attention,
                  "pool global context through anchor attention");
    cmd->add_flag("--per-border-heads,!--shared-heads", rc.per_border_heads,
                  "separate prediction heads per anchor border");
    cmd->add_option("--anchors", rc.anchors_dir,
                    "anchor pack directory from filter-anchors (default: generate)");
}

void add_anchor_flags(CLI::App* cmd, RunConfig& rc) {
    cmd->add_option("--anchor-stride", rc.anchor_stride, "feature-map stride for anchor rows");
    cmd->add_option("--left-angles", rc.left_angles, "comma list, degrees");
    cmd->add_option("--right-angles", rc.right_angles, "comma list, degrees");
    cmd->add_option("--bottom-angles", rc.bottom_angles,
                    "comma list, degrees (empty = built-in fan)");
    cmd->add_option("--left-origins", rc.left_origins, "origins on the left border");
    cmd->add_option("--right-origins", rc.right_origins, "origins on the right border");
    cmd->add_option("--bottom-origins", rc.bottom_origins, "origins on the bottom border");
}

void add_infer_flags(CLI::App* cmd, RunConfig& rc) {
    cmd->add_option("--confidence", rc.confidence, "minimum lane score");
    cmd->add_option("--nms-distance", rc.nms_distance, "suppression radius, pixels");
    cmd->add_option("--max-lanes", rc.max_lanes, "cap on reported lanes (0 = unlimited)");
}

void add_mask_flags(CLI::App* cmd, RunConfig& rc) {
    cmd->add_option("--lane-width", rc.lane_width, "mask stroke width, pixels");
    cmd->add_option("--iou-threshold", rc.iou_threshold, "match when IoU exceeds this");
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    RunConfig rc;
    CLI::App app{"anchor-attention lane detection toolkit"};
    app.name("laneatt");

    try {
        if (const char* env_seed = std::getenv("LANEATT_SEED")) {
            rc.seed = parse_seed_field("LANEATT_SEED", env_seed);
        }
        const std::string config_path = find_config_arg(args);
        if (!config_path.empty()) {
            apply_config_file(parse_key_value_file(config_path), rc, config_path);
        }

        app.require_subcommand(1);
        app.add_option("--config", rc.config_path,
                       "key=value config file layered under the flags");
        app.add_option("--seed", rc.seed, "random seed (fallback: LANEATT_SEED, then 0)");

        CLI::App* gen = app.add_subcommand("gen-data", "generate a labeled synthetic dataset");
        gen->fallthrough();
        gen->add_option("--out", rc.out_path, "dataset directory")->required();
        gen->add_option("--count", rc.gen_count, "number of samples");
        add_geometry_flags(gen, rc);
        gen->add_option("--min-lanes", rc.gen_min_lanes, "fewest lanes per scene");
        gen->add_option("--max-lanes", rc.gen_max_lanes, "most lanes per scene");
        gen->add_option("--flip-prob", rc.flip_prob, "horizontal flip probability");
        gen->add_option("--shear-max", rc.shear_max, "max horizontal shear per unit height");
        gen->add_option("--shift-max", rc.shift_max, "max horizontal shift, pixels");
        gen->add_option("--dash-prob", rc.dash_prob, "dashed marking probability");
        gen->add_option("--occlusion-prob", rc.occlusion_prob, "occlusion box probability");

        CLI::App* train = app.add_subcommand("train", "train a detector on a dataset");
        train->fallthrough();
        train->add_option("--data", rc.data_dir, "dataset directory")->required();
        train->add_option("--out", rc.out_path, "checkpoint directory")->required();
        train->add_option("--epochs", rc.epochs, "training epochs (0 = save initialization)");
        train->add_option("--optimizer", rc.optimizer, "adam or sgd");
        train->add_option("--learning-rate", rc.learning_rate, "step size");
        train->add_option("--beta1", rc.beta1, "adam first-moment decay");
        train->add_option("--beta2", rc.beta2, "adam second-moment decay");
        train->add_option("--epsilon", rc.epsilon, "adam denominator floor");
        train->add_option("--momentum", rc.momentum, "sgd momentum");
        train->add_option("--lambda", rc.lambda, "classification loss weight");
        train->add_option("--focal-gamma", rc.focal_gamma, "focusing exponent");
        train->add_option("--focal-alpha", rc.focal_alpha, "class balance weight");
        train->add_flag("--cross-entropy", rc.cross_entropy,
                        "plain cross-entropy instead of the focal weighting");
        train->add_option("--tau-positive", rc.tau_positive, "positive assignment distance");
        train->add_option("--tau-negative", rc.tau_negative, "negative assignment distance");
        train->add_option("--train-nms", rc.train_nms, "training-time suppression radius");
        train->add_flag("--shuffle,!--no-shuffle", rc.shuffle, "shuffle images each epoch");
        train->add_option("--init", rc.init_checkpoint, "checkpoint to resume from");
        train->add_option("--eval-data", rc.eval_data,
                          "held-out dataset for the per-epoch score (default: training data)");
        train->add_option("--eval-limit", rc.eval_limit,
                          "cap on per-epoch scoring images (0 = all)");
        train->add_option("--limit", rc.limit, "cap on training images (0 = all)");
        add_geometry_flags(train, rc);
        add_model_flags(train, rc);
        add_anchor_flags(train, rc);
        add_infer_flags(train, rc);
        add_mask_flags(train, rc);

        CLI::App* infer = app.add_subcommand("infer", "run a checkpoint over a dataset");
        infer->fallthrough();
        infer->add_option("--data", rc.data_dir, "dataset directory")->required();
        infer->add_option("--checkpoint", rc.checkpoint, "trained checkpoint")->required();
        infer->add_option("--out", rc.out_path,
                          "output file (jsonl) or directory (lines)")->required();
        infer->add_option("--format", rc.format, "jsonl or lines");
        infer->add_option("--limit", rc.limit, "cap on images (0 = all)");
        add_geometry_flags(infer, rc);
        add_model_flags(infer, rc);
        add_anchor_flags(infer, rc);
        add_infer_flags(infer, rc);

        CLI::App* score = app.add_subcommand("score", "score predictions against ground truth");
        score->fallthrough();
        score->add_option("--pred", rc.pred_path, "predictions jsonl")->required();
        score->add_option("--gt", rc.gt_path, "dataset directory or labels jsonl")->required();
        score->add_option("--pixel-threshold", rc.pixel_threshold,
                          "per-point tolerance, pixels");
        score->add_option("--match-threshold", rc.match_threshold,
                          "lane accuracy needed to count as found");
        score->add_flag("--per-clip", rc.per_clip, "average accuracy per image, not pooled");
        add_mask_flags(score, rc);
        score->add_flag("--csv", rc.csv, "machine-readable output");
        add_geometry_flags(score, rc);

        CLI::App* bench = app.add_subcommand("bench",
                                             "forward-pass cost sweep over size and anchors");
        bench->fallthrough();
        bench->add_option("--sizes", rc.bench_sizes, "comma list of HxW inputs");
        bench->add_option("--anchors-list", rc.bench_anchors, "comma list of anchor counts");
        bench->add_option("--warmup", rc.warmup, "untimed runs per entry");
        bench->add_option("--reps", rc.reps, "timed runs per entry");
        bench->add_option("--feature-channels", rc.feature_channels, "reduced feature channels");
        bench->add_flag("--attention,!--no-attention", rc.attention,
                        "pool global context through anchor attention");

        CLI::App* render = app.add_subcommand("render", "draw label/prediction overlays");
        render->fallthrough();
        render->add_option("--data", rc.data_dir, "dataset directory")->required();
        render->add_option("--pred", rc.pred_path, "predictions jsonl")->required();
        render->add_option("--out", rc.out_path, "overlay output directory")->required();
        render->add_option("--limit", rc.limit, "cap on images (0 = all)");
        add_mask_flags(render, rc);

        CLI::App* filter = app.add_subcommand("filter-anchors",
                                              "keep the anchors that match lanes most often");
        filter->fallthrough();
        filter->add_option("--data", rc.data_dir, "dataset directory")->required();
        filter->add_option("--out", rc.out_path, "anchor pack directory")->required();
        filter->add_option("--keep", rc.keep, "anchors to keep");
        filter->add_option("--tau-positive", rc.tau_positive, "positive assignment distance");
        filter->add_option("--limit", rc.limit, "cap on samples (0 = all)");
        add_geometry_flags(filter, rc);
        add_anchor_flags(filter, rc);

        try {
            std::vector<std::string> reversed(args.rbegin(), args.rend());
            app.parse(reversed);
        } catch (const CLI::ParseError& e) {
            const int code = app.exit(e);
            return code == 0 ? 0 : 1;
        }

        if (gen->parsed()) return cmd_gen_data(rc);
        if (train->parsed()) return cmd_train(rc);
        if (infer->parsed()) return cmd_infer(rc);
        if (score->parsed()) return cmd_score(rc);
        if (bench->parsed()) return cmd_bench(rc);
        if (render->parsed()) return cmd_render(rc);
        if (filter->parsed()) return cmd_filter_anchors(rc);
        std::cerr << "laneatt: no subcommand selected\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}

}  // namespace laneatt

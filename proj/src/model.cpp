#include "laneatt/model.hpp"

#include <algorithm>
#include <cmath>

#include "laneatt/errors.hpp"
#include "laneatt/rng.hpp"

namespace laneatt {

int BackboneConfig::total_stride() const {
    int s = 1;
    for (int st : stage_strides) s *= st;
    return s;
}

void validate_backbone_config(const BackboneConfig& config) {
    if (config.stage_channels.empty()) {
        throw ConfigError("backbone.stage_channels", "need at least one stage");
    }
    if (config.stage_channels.size() != config.stage_strides.size()) {
        throw ConfigError("backbone.stage_strides",
                          "must match stage_channels in length");
    }
    for (int c : config.stage_channels) {
        if (c < 1) throw ConfigError("backbone.stage_channels", "channel counts must be positive");
    }
    for (int s : config.stage_strides) {
        if (s < 1) throw ConfigError("backbone.stage_strides", "strides must be positive");
    }
    if (config.feature_channels < 1) {
        throw ConfigError("backbone.feature_channels", "must be positive");
    }
    if (config.input_height < 1 || config.input_width < 1) {
        throw ConfigError("backbone.input_size", "must be positive");
    }
    const int stride = config.total_stride();
    if (config.input_height % stride != 0 || config.input_width % stride != 0) {
        throw ConfigError("backbone.input_size",
                          std::to_string(config.input_width) + "x" +
                              std::to_string(config.input_height) +
                              " not divisible by the total stride " + std::to_string(stride));
    }
}

void validate_model_config(const ModelConfig& config) {
    validate_backbone_config(config.backbone);
    if (config.n_points < 2) throw ConfigError("model.n_points", "need at least 2 grid rows");
    if (config.num_classes < 1) throw ConfigError("model.num_classes", "need at least one lane class");
}

namespace {

Tensor uniform_tensor(Shape shape, int fan_in, Rng& rng) {
    const double bound = std::sqrt(1.0 / fan_in);
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = rng.uniform(-bound, bound);
    return t;
}

}  // namespace

ModelParams init_params(const ModelConfig& config, int n_anchors, std::uint64_t seed) {
    validate_model_config(config);
    if (n_anchors < 2) {
        throw ConfigError("model.n_anchors", "need at least two anchors");
    }
    const BackboneConfig& bb = config.backbone;
    Rng rng(seed);

    ModelParams params;
    int in_ch = 3;
    for (std::size_t i = 0; i < bb.stage_channels.size(); ++i) {
        const int out_ch = bb.stage_channels[i];
        Conv2dParams stage;
        stage.kernel = uniform_tensor({out_ch, in_ch, 3, 3}, in_ch * 9, rng);
        stage.bias = uniform_tensor({out_ch}, in_ch * 9, rng);
        stage.stride = bb.stage_strides[i];
        stage.padding = 1;
        params.stages.push_back(std::move(stage));
        in_ch = out_ch;
    }
    params.reduce.kernel = uniform_tensor({bb.feature_channels, in_ch, 1, 1}, in_ch, rng);
    params.reduce.bias = uniform_tensor({bb.feature_channels}, in_ch, rng);
    params.reduce.stride = 1;
    params.reduce.padding = 0;

    const int pooled = bb.feature_channels * bb.feature_height();
    params.attention.weight = uniform_tensor({n_anchors - 1, pooled}, pooled, rng);
    params.attention.bias = uniform_tensor({n_anchors - 1}, pooled, rng);

    const int joint = 2 * pooled;
    const int head_pairs = config.per_border_heads ? 3 : 1;
    for (int h = 0; h < head_pairs; ++h) {
        DenseParams cls;
        cls.weight = uniform_tensor({config.num_classes + 1, joint}, joint, rng);
        cls.bias = uniform_tensor({config.num_classes + 1}, joint, rng);
        params.cls_heads.push_back(std::move(cls));
        DenseParams reg;
        reg.weight = uniform_tensor({1 + config.n_points, joint}, joint, rng);
        reg.bias = uniform_tensor({1 + config.n_points}, joint, rng);
        params.reg_heads.push_back(std::move(reg));
    }
    return params;
}

std::vector<std::pair<std::string, Tensor*>> named_params(ModelParams& params) {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (std::size_t i = 0; i < params.stages.size(); ++i) {
        const std::string base = "stage" + std::to_string(i);
        out.emplace_back(base + ".kernel", &params.stages[i].kernel);
        out.emplace_back(base + ".bias", &params.stages[i].bias);
    }
    out.emplace_back("reduce.kernel", &params.reduce.kernel);
    out.emplace_back("reduce.bias", &params.reduce.bias);
    out.emplace_back("attention.weight", &params.attention.weight);
    out.emplace_back("attention.bias", &params.attention.bias);
    const bool per_border = params.cls_heads.size() == 3;
    const char* suffixes[] = {"_left", "_bottom", "_right"};
    for (std::size_t h = 0; h < params.cls_heads.size(); ++h) {
        const std::string tag = per_border ? suffixes[h] : "";
        out.emplace_back("cls" + tag + ".weight", &params.cls_heads[h].weight);
        out.emplace_back("cls" + tag + ".bias", &params.cls_heads[h].bias);
    }
    for (std::size_t h = 0; h < params.reg_heads.size(); ++h) {
        const std::string tag = per_border ? suffixes[h] : "";
        out.emplace_back("reg" + tag + ".weight", &params.reg_heads[h].weight);
        out.emplace_back("reg" + tag + ".bias", &params.reg_heads[h].bias);
    }
    return out;
}

void watch_params(Tape& tape, ModelParams& params) {
    for (auto& [name, tensor] : named_params(params)) tape.watch(*tensor);
}

void save_params(const std::string& path, ModelParams& params) {
    CheckpointEntries entries;
    for (auto& [name, tensor] : named_params(params)) entries.emplace_back(name, *tensor);
    save_checkpoint(path, entries);
}

void load_params(const std::string& path, ModelParams& params) {
    const CheckpointEntries entries = load_checkpoint(path);
    auto expected = named_params(params);
    if (entries.size() != expected.size()) {
        throw DataError("checkpoint has " + std::to_string(entries.size()) + " entries, expected " +
                        std::to_string(expected.size()) + ": " + path);
    }
    for (std::size_t i = 0; i < expected.size(); ++i) {
        if (entries[i].first != expected[i].first) {
            throw DataError("checkpoint entry '" + entries[i].first + "' where '" +
                            expected[i].first + "' was expected: " + path);
        }
        if (entries[i].second.shape != expected[i].second->shape) {
            throw DataError("checkpoint entry '" + entries[i].first +
                            "' has a mismatched shape: " + path);
        }
        expected[i].second->data = entries[i].second.data;
        expected[i].second->node = Tensor::kNoNode;
        expected[i].second->tape_id = 0;
    }
}

Tensor backbone_forward(Tape* tape, const Tensor& image, const ModelParams& params,
                        const BackboneConfig& config) {
    validate_backbone_config(config);
    if (image.rank() != 3 || image.shape[0] != 3 || image.shape[1] != config.input_height ||
        image.shape[2] != config.input_width) {
        throw ShapeError("backbone input must be [3," + std::to_string(config.input_height) + "," +
                         std::to_string(config.input_width) + "]");
    }
    if (params.stages.size() != config.stage_channels.size()) {
        throw ShapeError("parameter stage count does not match the backbone config");
    }
    Tensor x = image;
    for (const Conv2dParams& stage : params.stages) {
        x = relu(tape, add_channel_bias(tape, conv2d(tape, x, stage.kernel, stage.stride, stage.padding),
                                        stage.bias));
    }
    x = add_channel_bias(tape, conv2d(tape, x, params.reduce.kernel, 1, 0), params.reduce.bias);
    if (x.shape[1] != config.feature_height() || x.shape[2] != config.feature_width()) {
        throw Error("backbone produced an unexpected feature size");
    }
    return x;
}

Tensor pool_features(Tape* tape, const Tensor& feature_map, const Anchor& anchor) {
    if (feature_map.rank() != 3) throw ShapeError("pool_features needs a [C,H,W] feature map");
    if (static_cast<int>(anchor.feature_cols.size()) != feature_map.shape[1]) {
        throw ShapeError("anchor " + std::to_string(anchor.id) + " projection cache has " +
                         std::to_string(anchor.feature_cols.size()) + " rows, feature map has " +
                         std::to_string(feature_map.shape[1]));
    }
    return pool_gather(tape, feature_map, anchor.feature_cols);
}

Tensor pool_features_all(Tape* tape, const Tensor& feature_map, const AnchorSet& anchors) {
    if (feature_map.rank() != 3) throw ShapeError("pool_features_all needs a [C,H,W] feature map");
    std::vector<std::vector<int>> col_sets;
    col_sets.reserve(anchors.anchors.size());
    for (const Anchor& a : anchors.anchors) {
        if (static_cast<int>(a.feature_cols.size()) != feature_map.shape[1]) {
            throw ShapeError("anchor " + std::to_string(a.id) +
                             " projection cache does not match the feature map height");
        }
        col_sets.push_back(a.feature_cols);
    }
    return pool_gather_rows(tape, feature_map, col_sets);
}

Tensor attention_weights(Tape* tape, const Tensor& a_loc, const DenseParams& attention) {
    if (a_loc.rank() != 2 || a_loc.shape[0] < 2) {
        throw ShapeError("attention needs [N,D] pooled features with N >= 2");
    }
    Tensor scores = linear_rows(tape, a_loc, attention.weight, attention.bias);
    return attention_scatter(tape, softmax_rows(tape, scores));
}

Tensor global_features(Tape* tape, const Tensor& weights, const Tensor& a_loc) {
    return matmul(tape, weights, a_loc);
}

ProposalBatch predict_batch(Tape* tape, const Tensor& a_loc, const Tensor& a_glob,
                            const ModelParams& params, const ModelConfig& config,
                            const AnchorSet& anchors) {
    if (a_loc.shape != a_glob.shape) {
        throw ShapeError("local and global features must have identical shapes");
    }
    const int n = a_loc.shape[0];
    if (n != anchors.size()) {
        throw ShapeError("feature rows (" + std::to_string(n) + ") do not match the anchor set (" +
                         std::to_string(anchors.size()) + ")");
    }
    const std::size_t expected_heads = config.per_border_heads ? 3 : 1;
    if (params.cls_heads.size() != expected_heads || params.reg_heads.size() != expected_heads) {
        throw ShapeError("head count does not match the per-border toggle");
    }

    Tensor joint = concat_cols(tape, a_loc, a_glob);
    ProposalBatch batch;
    if (!config.per_border_heads) {
        batch.cls = linear_rows(tape, joint, params.cls_heads[0].weight, params.cls_heads[0].bias);
        batch.reg = linear_rows(tape, joint, params.reg_heads[0].weight, params.reg_heads[0].bias);
        return batch;
    }

    std::vector<std::vector<int>> groups(3);
    for (int i = 0; i < n; ++i) {
        groups[static_cast<std::size_t>(anchors.anchors[static_cast<std::size_t>(i)].border)].push_back(i);
    }
    std::vector<Tensor> cls_parts, reg_parts;
    std::vector<std::vector<int>> used_ids;
    for (std::size_t b = 0; b < 3; ++b) {
        if (groups[b].empty()) continue;
        Tensor rows = select_rows(tape, joint, groups[b]);
        cls_parts.push_back(linear_rows(tape, rows, params.cls_heads[b].weight, params.cls_heads[b].bias));
        reg_parts.push_back(linear_rows(tape, rows, params.reg_heads[b].weight, params.reg_heads[b].bias));
        used_ids.push_back(groups[b]);
    }
    std::vector<const Tensor*> cls_ptrs, reg_ptrs;
    for (const Tensor& t : cls_parts) cls_ptrs.push_back(&t);
    for (const Tensor& t : reg_parts) reg_ptrs.push_back(&t);
    batch.cls = merge_rows(tape, cls_ptrs, used_ids, n);
    batch.reg = merge_rows(tape, reg_ptrs, used_ids, n);
    return batch;
}

ProposalBatch model_forward(Tape* tape, const Tensor& image, const ModelParams& params,
                            const ModelConfig& config, const AnchorSet& anchors) {
    if (anchors.config.stride != config.backbone.total_stride()) {
        throw ConfigError("model.stride",
                          "anchor projection stride " + std::to_string(anchors.config.stride) +
                              " does not match the backbone stride " +
                              std::to_string(config.backbone.total_stride()));
    }
    Tensor fm = backbone_forward(tape, image, params, config.backbone);
    Tensor a_loc = pool_features_all(tape, fm, anchors);
    Tensor a_glob;
    if (config.use_attention) {
        Tensor weights = attention_weights(tape, a_loc, params.attention);
        a_glob = global_features(tape, weights, a_loc);
    } else {
        a_glob = Tensor::zeros(a_loc.shape);  // ablation: same width, no cross-anchor mixing
    }
    return predict_batch(tape, a_loc, a_glob, params, config, anchors);
}

std::vector<Proposal> to_proposals(const ProposalBatch& batch, const AnchorSet& anchors) {
    if (batch.cls.rank() != 2 || batch.reg.rank() != 2 || batch.cls.shape[0] != batch.reg.shape[0]) {
        throw ShapeError("malformed proposal batch");
    }
    const int n = batch.cls.shape[0];
    if (n != anchors.size()) throw ShapeError("proposal batch does not match the anchor set");
    const int classes = batch.cls.shape[1];
    const int reg_width = batch.reg.shape[1];

    std::vector<Proposal> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int r = 0; r < n; ++r) {
        Proposal p;
        p.anchor_id = anchors.anchors[static_cast<std::size_t>(r)].id;
        const double* cls_row = batch.cls.data.data() + static_cast<std::size_t>(r) * classes;
        const double* reg_row = batch.reg.data.data() + static_cast<std::size_t>(r) * reg_width;
        p.class_logits.assign(cls_row, cls_row + classes);
        p.length = reg_row[0];
        p.offsets.assign(reg_row + 1, reg_row + reg_width);
        out.push_back(std::move(p));
    }
    return out;
}

Lane decode_proposal(const Proposal& proposal, const Anchor& anchor, int n_points,
                     double image_height) {
    if (static_cast<int>(proposal.offsets.size()) != n_points) {
        throw ShapeError("proposal carries " + std::to_string(proposal.offsets.size()) +
                         " offsets for " + std::to_string(n_points) + " grid rows");
    }
    if (proposal.class_logits.size() < 2) {
        throw ShapeError("proposal needs background plus at least one lane class");
    }

    Lane lane;
    lane.xs.resize(static_cast<std::size_t>(n_points));
    for (int i = 0; i < n_points; ++i) {
        lane.xs[static_cast<std::size_t>(i)] =
            anchor.x_at(grid_y(i, n_points, image_height)) + proposal.offsets[static_cast<std::size_t>(i)];
    }
    lane.s = nearest_grid_row(anchor.y_orig, n_points, image_height);
    double len = std::floor(proposal.length);
    if (!(len >= 1.0)) len = 1.0;  // non-finite or sub-row predictions keep one row
    if (len > static_cast<double>(n_points)) len = static_cast<double>(n_points);
    lane.e = std::clamp(lane.s + static_cast<int>(len) - 1, lane.s, n_points - 1);

    // score = 1 - P(background); category = strongest lane class
    double mx = proposal.class_logits[0];
    for (double v : proposal.class_logits) mx = std::max(mx, v);
    double total = 0.0;
    std::vector<double> probs(proposal.class_logits.size());
    for (std::size_t c = 0; c < probs.size(); ++c) {
        probs[c] = std::exp(proposal.class_logits[c] - mx);
        total += probs[c];
    }
    for (auto& p : probs) p /= total;
    lane.score = 1.0 - probs[0];
    int best_class = 1;
    for (std::size_t c = 2; c < probs.size(); ++c) {
        if (probs[c] > probs[static_cast<std::size_t>(best_class)]) best_class = static_cast<int>(c);
    }
    lane.category = best_class;
    validate_lane(lane);
    return lane;
}

std::vector<Lane> decode_batch(const ProposalBatch& batch, const AnchorSet& anchors) {
    const std::vector<Proposal> proposals = to_proposals(batch, anchors);
    const int n_points = batch.reg.shape[1] - 1;
    std::vector<Lane> lanes;
    lanes.reserve(proposals.size());
    for (std::size_t i = 0; i < proposals.size(); ++i) {
        lanes.push_back(decode_proposal(proposals[i], anchors.anchors[i], n_points,
                                        static_cast<double>(anchors.image_height)));
    }
    return lanes;
}

}  // namespace laneatt

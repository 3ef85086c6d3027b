#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "laneatt/anchors.hpp"
#include "laneatt/checkpoint.hpp"
#include "laneatt/lane.hpp"
#include "laneatt/tensor.hpp"

namespace laneatt {

/// Convolutional feature extractor: a chain of 3x3 conv+ReLU stages followed
/// by a 1x1 channel reduction. The product of the stage strides is the
/// overall stride; input dimensions must be divisible by it.
struct BackboneConfig {
    std::vector<int> stage_channels{8, 16, 32, 64};
    std::vector<int> stage_strides{2, 2, 2, 2};
    int feature_channels = 16;  // channels after the 1x1 reduction
    int input_height = 160;
    int input_width = 320;

    int total_stride() const;
    int feature_height() const { return input_height / total_stride(); }
    int feature_width() const { return input_width / total_stride(); }
};

/// Throws ConfigError naming the offending field.
void validate_backbone_config(const BackboneConfig& config);

struct ModelConfig {
    BackboneConfig backbone;
    int n_points = 72;
    int num_classes = 1;  // lane classes K; logits have K+1 entries (0 = background)
    bool use_attention = true;
    bool per_border_heads = false;
};

void validate_model_config(const ModelConfig& config);

struct Conv2dParams {
    Tensor kernel;  // [C_out, C_in, kh, kw]
    Tensor bias;    // [C_out]
    int stride = 1;
    int padding = 0;
};

struct DenseParams {
    Tensor weight;  // [out, in]
    Tensor bias;    // [out]
};

/// All trainable tensors. Head vectors hold one entry normally and three
/// (left, bottom, right) when per-border heads are enabled.
struct ModelParams {
    std::vector<Conv2dParams> stages;
    Conv2dParams reduce;
    DenseParams attention;  // [N_anc - 1, C_F * H_F]
    std::vector<DenseParams> cls_heads;  // -> [K + 1]
    std::vector<DenseParams> reg_heads;  // -> [1 + n_points]: length, then offsets
};

/// Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) initialization, reproducible
/// from the seed. n_anchors fixes the attention layer's output width.
ModelParams init_params(const ModelConfig& config, int n_anchors, std::uint64_t seed);

/// Registers every parameter tensor on the tape (training entry point).
void watch_params(Tape& tape, ModelParams& params);

/// Flat named view in a fixed order, for checkpoints and optimizers.
std::vector<std::pair<std::string, Tensor*>> named_params(ModelParams& params);

void save_params(const std::string& path, ModelParams& params);
/// Throws DataError when the file's shapes do not match the expected layout.
void load_params(const std::string& path, ModelParams& params);

/// [3,H_I,W_I] -> [C_F,H_F,W_F]; stages are conv+bias+ReLU, the final 1x1
/// reduction is affine only.
Tensor backbone_forward(Tape* tape, const Tensor& image, const ModelParams& params,
                        const BackboneConfig& config);

/// One anchor's pooled feature vector of length C_F*H_F (layout: feature row
/// j outer, channel inner; row 0 is the map bottom). Off-map rows are zeros.
Tensor pool_features(Tape* tape, const Tensor& feature_map, const Anchor& anchor);

/// All anchors pooled into [N, C_F*H_F].
Tensor pool_features_all(Tape* tape, const Tensor& feature_map, const AnchorSet& anchors);

/// Anchor attention matrix W [N,N]: row i is the softmax of the attention
/// layer's N-1 scores for anchor i scattered around a zero diagonal, so
/// W[i,i] = 0 and each row sums to 1. Needs at least two anchors.
Tensor attention_weights(Tape* tape, const Tensor& a_loc, const DenseParams& attention);

/// A_glob = W * A_loc (same shape as A_loc).
Tensor global_features(Tape* tape, const Tensor& weights, const Tensor& a_loc);

/// Raw head outputs over all anchors.
struct ProposalBatch {
    Tensor cls;  // [N, K+1] logits
    Tensor reg;  // [N, 1+n_points]: column 0 = length, then per-row offsets
};

/// Heads applied to concat(a_loc, a_glob) per anchor. With per-border heads
/// the anchor's border selects which head pair sees its row.
ProposalBatch predict_batch(Tape* tape, const Tensor& a_loc, const Tensor& a_glob,
                            const ModelParams& params, const ModelConfig& config,
                            const AnchorSet& anchors);

/// Whole forward pass; a_glob is zeros when attention is disabled.
ProposalBatch model_forward(Tape* tape, const Tensor& image, const ModelParams& params,
                            const ModelConfig& config, const AnchorSet& anchors);

/// One candidate lane, as raw numbers (post-tape view of a batch row).
struct Proposal {
    int anchor_id = 0;
    std::vector<double> class_logits;  // K+1
    std::vector<double> offsets;       // n_points, pixels
    double length = 0.0;
};

std::vector<Proposal> to_proposals(const ProposalBatch& batch, const AnchorSet& anchors);

/// Proposal -> Lane: x[i] = anchor line at grid row i + offsets[i]; start row
/// s from the anchor origin; e = s + floor(length) - 1 clamped into
/// [s, n_points-1]; score = 1 - P(background); category = best lane class.
Lane decode_proposal(const Proposal& proposal, const Anchor& anchor, int n_points,
                     double image_height);

/// Every batch row decoded against its anchor (no confidence filtering).
std::vector<Lane> decode_batch(const ProposalBatch& batch, const AnchorSet& anchors);

}  // namespace laneatt

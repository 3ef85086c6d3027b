#pragma once

#include "laneatt/anchors.hpp"
#include "laneatt/matching.hpp"
#include "laneatt/model.hpp"
#include "laneatt/tensor.hpp"

namespace laneatt {

/// Training objective: total = lambda * sum of per-anchor classification
/// terms (positives and negatives; ignored anchors contribute nothing) plus
/// the sum of per-positive regression terms. Each regression term is the
/// smooth-L1 of the predicted length plus the mean smooth-L1 of the x
/// offsets over the target's row range.
struct LossConfig {
    double lambda = 10.0;      // classification weight
    double focal_gamma = 2.0;  // focusing exponent
    double focal_alpha = 0.25; // positive-class balance factor
    bool use_cross_entropy = false;  // ablation: plain CE instead of focal
};

void validate_loss_config(const LossConfig& config);

/// -alpha * (1 - p_t)^gamma * log(p_t), the per-example classification term.
double focal_loss_scalar(double p_t, double gamma, double alpha);

/// 0.5 d^2 for |d| < 1, |d| - 0.5 otherwise.
double smooth_l1_scalar(double d);

struct LossBreakdown {
    Tensor total;                 // scalar on the tape; backprop target
    double classification = 0.0;  // lambda-weighted classification value
    double regression = 0.0;
    int num_positive = 0;
    int num_negative = 0;
};

/// Builds the differentiable loss for one image. `batch` holds the head
/// outputs for exactly the anchors in `anchors` (any subset the caller
/// selected), and `assignment` their labels/targets in the same order.
/// Throws Error when no anchor is labeled positive or negative, and
/// DataError when a target category exceeds the class count.
LossBreakdown total_loss(Tape* tape, const ProposalBatch& batch, const AnchorSet& anchors,
                         const AssignmentResult& assignment, const LossConfig& config);

}  // namespace laneatt

#pragma once

#include <optional>
#include <vector>

#include "laneatt/lane.hpp"

namespace laneatt {

/// Mean absolute x-difference over the common valid index range
/// [max(s_a,s_b), min(e_a,e_b)]; +infinity when the ranges are disjoint.
/// Symmetric and non-negative but not a metric (no triangle inequality).
double lane_distance(const Lane& a, const Lane& b);

/// Greedy non-maximum suppression. Drops proposals with score below
/// `confidence_threshold`, then repeatedly keeps the highest-score survivor
/// (ties: lower index) and suppresses everything within `distance_threshold`
/// of it. Returns indices into `proposals` in selection order, at most
/// `max_keep` of them.
std::vector<int> nms(const std::vector<Lane>& proposals, double distance_threshold,
                     double confidence_threshold, std::optional<int> max_keep = std::nullopt);

enum class AnchorLabel { kPositive, kNegative, kIgnored };

/// Per-anchor training target. For positives, `target_xs` holds the matched
/// ground truth's x-coordinates over rows s..e where s = max(s_anchor, s_gt)
/// and e = e_gt (the ground truth's end, regardless of the proposal's), and
/// `target_length` = e - s + 1.
struct AnchorAssignment {
    AnchorLabel label = AnchorLabel::kNegative;
    double min_distance = 0.0;
    int gt_index = -1;
    int s = 0;
    int e = 0;
    std::vector<double> target_xs;
    int target_length = 0;
    int target_category = 1;  // class of the matched ground truth (positives only)
};

struct AssignmentResult {
    std::vector<AnchorAssignment> anchors;
    int num_positive = 0;
    int num_negative = 0;
    int num_ignored = 0;
};

/// Labels each anchor by its minimum lane distance d to the ground truths:
/// positive when d < tau_positive (paired with the nearest ground truth,
/// ties to the lower index), negative when d > tau_negative, ignored
/// otherwise. With no ground truths every anchor is negative.
AssignmentResult assign_targets(const std::vector<Lane>& anchors_as_lanes,
                                const std::vector<Lane>& ground_truths, double tau_positive,
                                double tau_negative);

}  // namespace laneatt

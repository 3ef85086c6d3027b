#include "laneatt/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "laneatt/errors.hpp"

namespace laneatt {

double lane_distance(const Lane& a, const Lane& b) {
    if (a.n_points() != b.n_points()) {
        throw ShapeError("lane_distance across grids: " + std::to_string(a.n_points()) + " vs " +
                         std::to_string(b.n_points()) + " rows");
    }
    const int lo = std::max(a.s, b.s);
    const int hi = std::min(a.e, b.e);
    if (hi < lo) return std::numeric_limits<double>::infinity();
    double acc = 0.0;
    for (int i = lo; i <= hi; ++i) {
        acc += std::abs(a.xs[static_cast<std::size_t>(i)] - b.xs[static_cast<std::size_t>(i)]);
    }
    return acc / (hi - lo + 1);
}

std::vector<int> nms(const std::vector<Lane>& proposals, double distance_threshold,
                     double confidence_threshold, std::optional<int> max_keep) {
    if (distance_threshold <= 0.0) {
        throw ConfigError("nms.distance_threshold", "must be positive");
    }
    std::vector<int> order;
    for (int i = 0; i < static_cast<int>(proposals.size()); ++i) {
        if (proposals[static_cast<std::size_t>(i)].score >= confidence_threshold) order.push_back(i);
    }
    std::stable_sort(order.begin(), order.end(), [&](int l, int r) {
        return proposals[static_cast<std::size_t>(l)].score > proposals[static_cast<std::size_t>(r)].score;
    });

    std::vector<int> kept;
    std::vector<bool> suppressed(proposals.size(), false);
    for (int idx : order) {
        if (suppressed[static_cast<std::size_t>(idx)]) continue;
        kept.push_back(idx);
        if (max_keep && static_cast<int>(kept.size()) >= *max_keep) break;
        for (int other : order) {
            if (other == idx || suppressed[static_cast<std::size_t>(other)]) continue;
            if (lane_distance(proposals[static_cast<std::size_t>(idx)],
                              proposals[static_cast<std::size_t>(other)]) < distance_threshold) {
                suppressed[static_cast<std::size_t>(other)] = true;
            }
        }
    }
    return kept;
}

AssignmentResult assign_targets(const std::vector<Lane>& anchors_as_lanes,
                                const std::vector<Lane>& ground_truths, double tau_positive,
                                double tau_negative) {
    if (tau_positive > tau_negative) {
        throw ConfigError("matching.tau", "tau_positive must not exceed tau_negative");
    }
    AssignmentResult result;
    result.anchors.resize(anchors_as_lanes.size());
    for (std::size_t a = 0; a < anchors_as_lanes.size(); ++a) {
        AnchorAssignment& slot = result.anchors[a];
        double best = std::numeric_limits<double>::infinity();
        int best_gt = -1;
        for (std::size_t g = 0; g < ground_truths.size(); ++g) {
            const double d = lane_distance(anchors_as_lanes[a], ground_truths[g]);
            if (d < best) {  // strict: ties keep the lower ground-truth index
                best = d;
                best_gt = static_cast<int>(g);
            }
        }
        slot.min_distance = best;
        if (best < tau_positive) {
            const Lane& gt = ground_truths[static_cast<std::size_t>(best_gt)];
            slot.label = AnchorLabel::kPositive;
            slot.gt_index = best_gt;
            slot.s = std::max(anchors_as_lanes[a].s, gt.s);
            slot.e = gt.e;
            // A ground truth can start above the anchor; clamp so the target
            // range stays well-formed even then.
            if (slot.e < slot.s) slot.e = slot.s;
            slot.target_xs.assign(gt.xs.begin() + slot.s, gt.xs.begin() + slot.e + 1);
            slot.target_length = slot.e - slot.s + 1;
            slot.target_category = gt.category;
            result.num_positive += 1;
        } else if (best > tau_negative) {
            slot.label = AnchorLabel::kNegative;
            result.num_negative += 1;
        } else {
            slot.label = AnchorLabel::kIgnored;
            result.num_ignored += 1;
        }
    }
    return result;
}

}  // namespace laneatt

#include "laneatt/loss.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "laneatt/errors.hpp"

namespace laneatt {

namespace {
constexpr double kLogFloor = 1e-12;  // keeps log(p_t) finite for saturated rows
}

void validate_loss_config(const LossConfig& config) {
    if (!(config.lambda > 0.0)) throw ConfigError("loss.lambda", "must be positive");
    if (!(config.focal_gamma >= 0.0)) throw ConfigError("loss.focal_gamma", "must be non-negative");
    if (!(config.focal_alpha > 0.0) || config.focal_alpha > 1.0) {
        throw ConfigError("loss.focal_alpha", "must lie in (0, 1]");
    }
}

double focal_loss_scalar(double p_t, double gamma, double alpha) {
    const double p = std::max(p_t, kLogFloor);
    return -alpha * std::pow(1.0 - p_t, gamma) * std::log(p);
}

double smooth_l1_scalar(double d) {
    const double a = std::abs(d);
    return a < 1.0 ? 0.5 * d * d : a - 0.5;
}

LossBreakdown total_loss(Tape* tape, const ProposalBatch& batch, const AnchorSet& anchors,
                         const AssignmentResult& assignment, const LossConfig& config) {
    validate_loss_config(config);
    if (batch.cls.rank() != 2 || batch.reg.rank() != 2) {
        throw ShapeError("loss needs rank-2 head outputs");
    }
    const int n = batch.cls.shape[0];
    if (batch.reg.shape[0] != n || n != anchors.size() ||
        static_cast<int>(assignment.anchors.size()) != n) {
        throw ShapeError("head outputs, anchors and assignment disagree on the anchor count");
    }
    const int num_classes = batch.cls.shape[1] - 1;
    const int n_points = batch.reg.shape[1] - 1;
    if (num_classes < 1 || n_points < 2) throw ShapeError("head outputs are too narrow");

    // Classification rows: every positive or negative anchor.
    std::vector<int> rows;
    std::vector<int> targets;
    for (int i = 0; i < n; ++i) {
        const AnchorAssignment& a = assignment.anchors[static_cast<std::size_t>(i)];
        if (a.label == AnchorLabel::kIgnored) continue;
        rows.push_back(i);
        if (a.label == AnchorLabel::kPositive) {
            if (a.target_category < 1 || a.target_category > num_classes) {
                throw DataError("target category " + std::to_string(a.target_category) +
                                " outside the model's " + std::to_string(num_classes) +
                                " lane classes");
            }
            targets.push_back(a.target_category);
        } else {
            targets.push_back(0);
        }
    }
    if (rows.empty()) throw Error("no anchors contribute to the loss");

    const double gamma = config.use_cross_entropy ? 0.0 : config.focal_gamma;
    const double alpha = config.use_cross_entropy ? 1.0 : config.focal_alpha;

    Tensor cls_rows = select_rows(tape, batch.cls, rows);
    Tensor probs = softmax_rows(tape, cls_rows);
    Tensor p_t = take_per_row(tape, probs, targets);
    Tensor log_p = log_op(tape, clamp_min(tape, p_t, kLogFloor));
    Tensor weight = pow_scalar(tape, sub_from_scalar(tape, 1.0, p_t), gamma);
    Tensor cls_sum = scale(tape, sum_all(tape, mul(tape, weight, log_p)), -alpha);
    Tensor cls_term = scale(tape, cls_sum, config.lambda);

    // Regression: per positive anchor, length plus mean offset smooth-L1.
    Tensor reg_term = Tensor::scalar(0.0);
    for (int i = 0; i < n; ++i) {
        const AnchorAssignment& a = assignment.anchors[static_cast<std::size_t>(i)];
        if (a.label != AnchorLabel::kPositive) continue;
        if (a.e >= n_points || a.s < 0 || a.e < a.s) {
            throw DataError("assignment rows " + std::to_string(a.s) + ".." + std::to_string(a.e) +
                            " outside the " + std::to_string(n_points) + "-row grid");
        }
        const Anchor& anchor = anchors.anchors[static_cast<std::size_t>(i)];
        const int len = a.e - a.s + 1;

        Tensor row = reshape(tape, select_rows(tape, batch.reg, {i}), {n_points + 1});
        Tensor pred_len = slice(tape, row, 0, 1);
        Tensor pred_off = slice(tape, row, 1 + a.s, len);

        Tensor len_target({1}, {static_cast<double>(a.target_length)});
        Tensor off_target({len});
        for (int k = 0; k < len; ++k) {
            const double y = grid_y(a.s + k, n_points, static_cast<double>(anchors.image_height));
            off_target.data[static_cast<std::size_t>(k)] =
                a.target_xs[static_cast<std::size_t>(k)] - anchor.x_at(y);
        }
        Tensor term = add(tape, smooth_l1_mean(tape, pred_len, len_target),
                          smooth_l1_mean(tape, pred_off, off_target));
        reg_term = add(tape, reg_term, term);
    }

    LossBreakdown out;
    out.total = add(tape, cls_term, reg_term);
    out.classification = cls_term.value();
    out.regression = reg_term.value();
    out.num_positive = assignment.num_positive;
    out.num_negative = assignment.num_negative;
    return out;
}

}  // namespace laneatt

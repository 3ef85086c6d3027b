#include "laneatt/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>

#include "laneatt/errors.hpp"
#include "laneatt/matching.hpp"

namespace laneatt {

// --- row-sampled point accuracy -------------------------------------------

namespace {

struct PairScore {
    double accuracy;
    int correct;
    int pred;
    int gt;
};

bool lane_has_points(const std::vector<int>& xs) {
    return std::any_of(xs.begin(), xs.end(), [](int x) { return x >= 0; });
}

}  // namespace

RowAccuracyResult score_row_accuracy(const std::vector<RowSampleEntry>& predictions,
                                     const std::vector<RowSampleEntry>& ground_truth,
                                     const RowAccuracyConfig& config) {
    if (config.pixel_threshold < 0 || config.match_threshold < 0 || config.match_threshold > 1) {
        throw ConfigError("score.row_accuracy", "bad threshold");
    }
    if (predictions.size() != ground_truth.size()) {
        throw DataError("prediction list has " + std::to_string(predictions.size()) +
                        " entries, ground truth has " + std::to_string(ground_truth.size()));
    }

    RowAccuracyResult result;
    std::uint64_t pred_lanes_total = 0, gt_lanes_total = 0;
    double per_clip_sum = 0.0;
    std::uint64_t per_clip_images = 0;

    for (std::size_t img = 0; img < predictions.size(); ++img) {
        const RowSampleEntry& pred = predictions[img];
        const RowSampleEntry& gt = ground_truth[img];
        if (pred.h_samples != gt.h_samples) {
            throw DataError("entry " + std::to_string(img) +
                            ": prediction and ground truth use different h_samples");
        }
        const std::size_t rows = gt.h_samples.size();

        std::vector<const std::vector<int>*> gts;
        for (const auto& lane : gt.lanes) {
            if (lane_has_points(lane)) gts.push_back(&lane);
        }
        const auto& preds = pred.lanes;

        // Point accuracy for every (pred, gt) pair.
        std::vector<PairScore> scores;
        for (std::size_t p = 0; p < preds.size(); ++p) {
            for (std::size_t g = 0; g < gts.size(); ++g) {
                int correct = 0, visible = 0;
                for (std::size_t r = 0; r < rows; ++r) {
                    const int gx = (*gts[g])[r];
                    if (gx < 0) continue;
                    ++visible;
                    const int px = preds[p][r];
                    if (px >= 0 && std::abs(px - gx) <= config.pixel_threshold) ++correct;
                }
                scores.push_back({visible > 0 ? static_cast<double>(correct) / visible : 0.0,
                                  correct, static_cast<int>(p), static_cast<int>(g)});
            }
        }
        std::sort(scores.begin(), scores.end(), [](const PairScore& a, const PairScore& b) {
            if (a.accuracy != b.accuracy) return a.accuracy > b.accuracy;
            if (a.pred != b.pred) return a.pred < b.pred;
            return a.gt < b.gt;
        });

        std::vector<bool> pred_used(preds.size(), false), gt_used(gts.size(), false);
        std::uint64_t img_correct = 0;
        int img_tp = 0;
        for (const PairScore& s : scores) {
            if (pred_used[static_cast<std::size_t>(s.pred)] ||
                gt_used[static_cast<std::size_t>(s.gt)]) {
                continue;
            }
            pred_used[static_cast<std::size_t>(s.pred)] = true;
            gt_used[static_cast<std::size_t>(s.gt)] = true;
            img_correct += static_cast<std::uint64_t>(s.correct);
            if (s.accuracy >= config.match_threshold) ++img_tp;
        }

        std::uint64_t img_total = 0;
        for (const auto* lane : gts) {
            for (int x : *lane) img_total += x >= 0 ? 1 : 0;
        }

        result.tp += img_tp;
        result.fp += static_cast<int>(preds.size()) - img_tp;
        result.fn += static_cast<int>(gts.size()) - img_tp;
        result.correct_points += img_correct;
        result.total_points += img_total;
        pred_lanes_total += preds.size();
        gt_lanes_total += gts.size();
        if (img_total > 0) {
            per_clip_sum += static_cast<double>(img_correct) / static_cast<double>(img_total);
            ++per_clip_images;
        }
    }

    if (config.per_clip_average) {
        result.accuracy = per_clip_images > 0 ? per_clip_sum / static_cast<double>(per_clip_images) : 0.0;
    } else {
        result.accuracy = result.total_points > 0
                              ? static_cast<double>(result.correct_points) /
                                    static_cast<double>(result.total_points)
                              : 0.0;
    }
    result.fp_rate =
        pred_lanes_total > 0 ? static_cast<double>(result.fp) / static_cast<double>(pred_lanes_total) : 0.0;
    result.fn_rate =
        gt_lanes_total > 0 ? static_cast<double>(result.fn) / static_cast<double>(gt_lanes_total) : 0.0;
    return result;
}

// --- mask-overlap F1 ------------------------------------------------------

namespace {

/// Half-open pixel interval of `lane` on image row `row`, clipped to the
/// image; empty intervals come back as lo == hi.
std::pair<int, int> lane_row_interval(const Lane& lane, int row, double image_height,
                                      int image_width, int width_px) {
    const int n = lane.n_points();
    const double dy = image_height / (n - 1);
    const double y = image_height - row - 0.5;
    const double k = y / dy;
    if (k < lane.s - 1e-9 || k > lane.e + 1e-9) return {0, 0};
    const int i0 = std::clamp(static_cast<int>(std::floor(k)), lane.s, std::max(lane.s, lane.e - 1));
    const int i1 = std::min(i0 + 1, lane.e);
    const double frac = std::clamp(k - i0, 0.0, 1.0);
    const double xc = (1 - frac) * lane.xs[static_cast<std::size_t>(i0)] +
                      frac * lane.xs[static_cast<std::size_t>(i1)];
    const int c = static_cast<int>(std::lround(xc));
    int lo = c - width_px / 2;
    int hi = lo + width_px;
    lo = std::max(lo, 0);
    hi = std::min(hi, image_width);
    if (hi < lo) hi = lo;
    return {lo, hi};
}

}  // namespace

double lane_mask_iou(const Lane& a, const Lane& b, int image_height, int image_width,
                     double lane_width) {
    validate_lane(a);
    validate_lane(b);
    if (image_height < 1 || image_width < 1 || !(lane_width > 0)) {
        throw ConfigError("score.mask", "bad raster geometry");
    }
    const int width_px = static_cast<int>(std::lround(lane_width));
    std::int64_t inter = 0, uni = 0;
    for (int row = 0; row < image_height; ++row) {
        const auto [alo, ahi] = lane_row_interval(a, row, image_height, image_width, width_px);
        const auto [blo, bhi] = lane_row_interval(b, row, image_height, image_width, width_px);
        const int la = ahi - alo, lb = bhi - blo;
        const int overlap = std::max(0, std::min(ahi, bhi) - std::max(alo, blo));
        inter += overlap;
        uni += la + lb - overlap;
    }
    return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

namespace {

/// Kuhn's augmenting-path maximum bipartite matching.
int max_matching(const std::vector<std::vector<int>>& adj, int n_right) {
    std::vector<int> right_match(static_cast<std::size_t>(n_right), -1);
    int matched = 0;
    std::vector<bool> visited;
    std::function<bool(int)> augment = [&](int left) {
        for (int r : adj[static_cast<std::size_t>(left)]) {
            if (visited[static_cast<std::size_t>(r)]) continue;
            visited[static_cast<std::size_t>(r)] = true;
            if (right_match[static_cast<std::size_t>(r)] < 0 ||
                augment(right_match[static_cast<std::size_t>(r)])) {
                right_match[static_cast<std::size_t>(r)] = left;
                return true;
            }
        }
        return false;
    };
    for (std::size_t l = 0; l < adj.size(); ++l) {
        visited.assign(static_cast<std::size_t>(n_right), false);
        if (augment(static_cast<int>(l))) ++matched;
    }
    return matched;
}

}  // namespace

MaskF1Result score_mask_f1(const std::vector<std::vector<Lane>>& predictions,
                           const std::vector<std::vector<Lane>>& ground_truth, int image_height,
                           int image_width, const MaskF1Config& config) {
    if (predictions.size() != ground_truth.size()) {
        throw DataError("prediction list has " + std::to_string(predictions.size()) +
                        " entries, ground truth has " + std::to_string(ground_truth.size()));
    }
    if (config.iou_threshold < 0 || config.iou_threshold >= 1 || !(config.lane_width > 0)) {
        throw ConfigError("score.mask", "bad IoU threshold or lane width");
    }

    MaskF1Result result;
    for (std::size_t img = 0; img < predictions.size(); ++img) {
        const auto& preds = predictions[img];
        const auto& gts = ground_truth[img];
        std::vector<std::vector<int>> adj(preds.size());
        for (std::size_t p = 0; p < preds.size(); ++p) {
            for (std::size_t g = 0; g < gts.size(); ++g) {
                if (lane_mask_iou(preds[p], gts[g], image_height, image_width, config.lane_width) >
                    config.iou_threshold) {
                    adj[p].push_back(static_cast<int>(g));
                }
            }
        }
        const int matched = max_matching(adj, static_cast<int>(gts.size()));
        result.tp += matched;
        result.fp += static_cast<int>(preds.size()) - matched;
        result.fn += static_cast<int>(gts.size()) - matched;
    }

    if (result.tp + result.fp + result.fn == 0) {
        result.precision = result.recall = result.f1 = 1.0;  // vacuously perfect
        return result;
    }
    result.precision =
        result.tp + result.fp > 0 ? static_cast<double>(result.tp) / (result.tp + result.fp) : 0.0;
    result.recall =
        result.tp + result.fn > 0 ? static_cast<double>(result.tp) / (result.tp + result.fn) : 0.0;
    result.f1 = result.precision + result.recall > 0
                    ? 2.0 * result.precision * result.recall / (result.precision + result.recall)
                    : 0.0;
    return result;
}

// --- inference ------------------------------------------------------------

std::vector<Lane> infer_lanes(const Tensor& image, const ModelParams& params,
                              const ModelConfig& config, const AnchorSet& anchors,
                              const InferParams& infer) {
    if (infer.nms_distance <= 0) throw ConfigError("infer.nms_distance", "must be positive");
    const ProposalBatch batch = model_forward(nullptr, image, params, config, anchors);
    const std::vector<Lane> decoded = decode_batch(batch, anchors);
    const std::vector<int> kept = nms(decoded, infer.nms_distance, infer.confidence, infer.max_lanes);
    std::vector<Lane> out;
    out.reserve(kept.size());
    for (int idx : kept) out.push_back(decoded[static_cast<std::size_t>(idx)]);
    return out;
}

// --- result reporting -----------------------------------------------------

std::string MetricsReport::to_text() const {
    std::size_t width = 0;
    for (const auto& [name, value] : rows) width = std::max(width, name.size());
    std::ostringstream out;
    char buf[64];
    for (const auto& [name, value] : rows) {
        std::snprintf(buf, sizeof buf, "%.6g", value);
        out << name << std::string(width - name.size(), ' ') << " = " << buf << '\n';
    }
    return out.str();
}

std::string MetricsReport::to_csv() const {
    std::ostringstream out;
    out << "metric,value\n";
    char buf[64];
    for (const auto& [name, value] : rows) {
        std::snprintf(buf, sizeof buf, "%.10g", value);
        out << name << ',' << buf << '\n';
    }
    return out.str();
}

// --- forward-pass benchmark -----------------------------------------------

BenchResult benchmark_forward(const Tensor& image, const ModelParams& params,
                              const ModelConfig& config, const AnchorSet& anchors,
                              const BenchConfig& bench) {
    if (bench.reps < 1) throw ConfigError("bench.reps", "need at least one repetition");
    if (bench.warmup < 0) throw ConfigError("bench.warmup", "must be non-negative");

    for (int i = 0; i < bench.warmup; ++i) model_forward(nullptr, image, params, config, anchors);

    reset_mac_counter();
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < bench.reps; ++i) model_forward(nullptr, image, params, config, anchors);
    const auto t1 = std::chrono::steady_clock::now();
    const std::uint64_t macs = mac_total();
    if (macs % static_cast<std::uint64_t>(bench.reps) != 0) {
        throw Error("multiply-accumulate count varied across identical forward passes");
    }

    BenchResult result;
    result.macs_per_image = macs / static_cast<std::uint64_t>(bench.reps);
    result.seconds_per_image =
        std::chrono::duration<double>(t1 - t0).count() / static_cast<double>(bench.reps);
    result.fps = result.seconds_per_image > 0 ? 1.0 / result.seconds_per_image : 0.0;
    return result;
}

}  // namespace laneatt

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "laneatt/anchors.hpp"
#include "laneatt/data.hpp"
#include "laneatt/model.hpp"

namespace laneatt {

// --- row-sampled point accuracy -------------------------------------------

/// Point-threshold scoring on row-sampled labels: a predicted point is
/// correct when it lies within `pixel_threshold` of the ground truth at the
/// same sampled row. Lanes are paired greedily by descending point accuracy
/// (one to one); a pair whose accuracy reaches `match_threshold` is a true
/// positive, leftover predictions are false positives and leftover ground
/// truths false negatives. Correct points of every pair count toward the
/// accuracy regardless of the lane-level threshold.
struct RowAccuracyConfig {
    double pixel_threshold = 20.0;
    double match_threshold = 0.85;
    bool per_clip_average = false;  // mean of per-image accuracies instead of pooled points
};

struct RowAccuracyResult {
    double accuracy = 0.0;
    double fp_rate = 0.0;  // false positives / predicted lanes
    double fn_rate = 0.0;  // false negatives / ground-truth lanes
    int tp = 0;
    int fp = 0;
    int fn = 0;
    std::uint64_t correct_points = 0;
    std::uint64_t total_points = 0;
};

/// Entries are matched by position; every pair must share its h_samples.
/// Ground-truth lanes without a single visible point are ignored.
RowAccuracyResult score_row_accuracy(const std::vector<RowSampleEntry>& predictions,
                                     const std::vector<RowSampleEntry>& ground_truth,
                                     const RowAccuracyConfig& config);

// --- mask-overlap F1 ------------------------------------------------------

struct MaskF1Config {
    double lane_width = 30.0;   // rasterized stroke width, pixels
    double iou_threshold = 0.5; // strict: a pair matches when IoU > threshold
};

struct MaskF1Result {
    int tp = 0;
    int fp = 0;
    int fn = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// IoU of the two lanes rasterized as `lane_width`-wide bands: per image
/// row, a covered lane contributes the half-open pixel interval
/// [round(x) - w/2, round(x) + w/2) clipped to the image. Computed by
/// interval arithmetic, equivalent to counting mask pixels.
double lane_mask_iou(const Lane& a, const Lane& b, int image_height, int image_width,
                     double lane_width);

/// Per image, predictions and ground truths are matched one to one by
/// maximum bipartite matching over pairs with IoU above the threshold;
/// counts are accumulated over all images.
MaskF1Result score_mask_f1(const std::vector<std::vector<Lane>>& predictions,
                           const std::vector<std::vector<Lane>>& ground_truth, int image_height,
                           int image_width, const MaskF1Config& config);

// --- inference ------------------------------------------------------------

/// Post-processing knobs for turning raw head outputs into final lanes.
struct InferParams {
    double confidence = 0.5;     // minimum score (1 - background probability)
    double nms_distance = 50.0;  // suppression radius, pixels
    std::optional<int> max_lanes = 5;
};

/// Forward pass (tape-free) + decode + confidence filter + suppression.
/// Lanes come back in selection order (best first).
std::vector<Lane> infer_lanes(const Tensor& image, const ModelParams& params,
                              const ModelConfig& config, const AnchorSet& anchors,
                              const InferParams& infer);

// --- result reporting -----------------------------------------------------

struct MetricsReport {
    std::vector<std::pair<std::string, double>> rows;

    void add(const std::string& name, double value) { rows.emplace_back(name, value); }
    std::string to_text() const;  // aligned "name = value" lines
    std::string to_csv() const;   // "metric,value" header plus one row per metric
};

// --- forward-pass benchmark -----------------------------------------------

struct BenchConfig {
    int warmup = 2;
    int reps = 10;
};

/// Times tape-free forward passes of an in-memory image (file I/O excluded)
/// and reports the multiply-accumulate count per image. The MAC total must
/// be identical across repetitions or the run aborts with Error.
struct BenchResult {
    double seconds_per_image = 0.0;
    double fps = 0.0;
    std::uint64_t macs_per_image = 0;
};

BenchResult benchmark_forward(const Tensor& image, const ModelParams& params,
                              const ModelConfig& config, const AnchorSet& anchors,
                              const BenchConfig& bench);

}  // namespace laneatt

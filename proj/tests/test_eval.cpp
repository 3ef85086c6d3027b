#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "laneatt/errors.hpp"
#include "laneatt/eval.hpp"
#include "laneatt/rng.hpp"
#include "support/gradcheck.hpp"

using namespace laneatt;

namespace {

RowSampleEntry entry_of(std::vector<std::vector<int>> lanes, std::vector<int> hs) {
    RowSampleEntry e;
    e.lanes = std::move(lanes);
    e.h_samples = std::move(hs);
    return e;
}

std::vector<int> hs10() { return {10, 20, 30, 40, 50, 60, 70, 80, 90, 100}; }

Lane vertical_lane(double x, int n_points, int s, int e) {
    Lane lane;
    lane.xs.assign(static_cast<std::size_t>(n_points), x);
    lane.s = s;
    lane.e = e;
    lane.score = 1.0;
    return lane;
}

/// Random-walk lane used to fuzz the IoU raster against a pixel oracle.
Lane wandering_lane(Rng& rng, int n_points, double image_width) {
    Lane lane;
    lane.xs.resize(static_cast<std::size_t>(n_points));
    double x = rng.uniform(-20.0, image_width + 20.0);
    for (int i = 0; i < n_points; ++i) {
        lane.xs[static_cast<std::size_t>(i)] = x;
        x += rng.uniform(-6.0, 6.0);
    }
    lane.s = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n_points - 1)));
    lane.e = lane.s + 1 +
             static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n_points - lane.s - 1)));
    lane.score = 1.0;
    return lane;
}

/// Per-pixel membership oracle for the band raster.
std::vector<std::uint8_t> rasterize_oracle(const Lane& lane, int H, int W, int width_px) {
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(H) * W, 0);
    const double dy = static_cast<double>(H) / (lane.n_points() - 1);
    for (int r = 0; r < H; ++r) {
        const double y = H - r - 0.5;
        const double k = y / dy;
        if (k < lane.s - 1e-9 || k > lane.e + 1e-9) continue;
        const int i0 = std::clamp(static_cast<int>(std::floor(k)), lane.s,
                                  std::max(lane.s, lane.e - 1));
        const int i1 = std::min(i0 + 1, lane.e);
        const double frac = std::clamp(k - i0, 0.0, 1.0);
        const double xc = (1 - frac) * lane.xs[static_cast<std::size_t>(i0)] +
                          frac * lane.xs[static_cast<std::size_t>(i1)];
        const long c = std::lround(xc);
        for (int px = 0; px < W; ++px) {
            if (px >= c - width_px / 2 && px < c - width_px / 2 + width_px) {
                mask[static_cast<std::size_t>(r) * W + px] = 1;
            }
        }
    }
    return mask;
}

}  // namespace

TEST_CASE("row accuracy hand case: one good lane, one weak lane") {
    // Ground truth: two lanes, 10 visible points each (20 points total).
    // Prediction A hits lane 1 on 9/10 rows (a true positive at 0.9 >= 0.85);
    // prediction B hits lane 2 on 5/10 rows (below the lane threshold, so it
    // counts as a false positive and lane 2 as a false negative). Pooled
    // accuracy still pools both pairs' correct points: (9+5)/20 = 0.7.
    RowSampleEntry gt = entry_of({std::vector<int>(10, 100), std::vector<int>(10, 300)}, hs10());
    std::vector<int> pa(10, 100);
    pa[7] = 200;
    std::vector<int> pb(10, 300);
    for (int i = 5; i < 10; ++i) pb[static_cast<std::size_t>(i)] = 400;
    RowSampleEntry pred = entry_of({pa, pb}, hs10());

    RowAccuracyResult r = score_row_accuracy({pred}, {gt}, RowAccuracyConfig{});
    CHECK(r.tp == 1);
    CHECK(r.fp == 1);
    CHECK(r.fn == 1);
    CHECK(r.correct_points == 14);
    CHECK(r.total_points == 20);
    CHECK(r.accuracy == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(r.fp_rate == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(r.fn_rate == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("scoring ground truth against itself is perfect") {
    GenConfig cfg;
    cfg.image_height = 96;
    cfg.image_width = 160;
    cfg.n_points = 24;
    const std::vector<int> hs = default_h_samples(cfg.image_height);
    std::vector<RowSampleEntry> gts, preds;
    std::vector<std::vector<Lane>> gt_lanes, pred_lanes;
    for (int idx = 0; idx < 4; ++idx) {
        Sample s = gen_sample(cfg, 17, idx);
        gts.push_back(sample_to_entry(s, hs, ""));
        preds.push_back(gts.back());
        gt_lanes.push_back(s.lanes);
        pred_lanes.push_back(s.lanes);
    }
    RowAccuracyResult acc = score_row_accuracy(preds, gts, RowAccuracyConfig{});
    CHECK(acc.accuracy == 1.0);
    CHECK(acc.fp == 0);
    CHECK(acc.fn == 0);
    CHECK(acc.tp > 0);

    MaskF1Result f1 = score_mask_f1(pred_lanes, gt_lanes, cfg.image_height, cfg.image_width,
                                    MaskF1Config{});
    CHECK(f1.f1 == 1.0);
    CHECK(f1.fp == 0);
    CHECK(f1.fn == 0);
}

TEST_CASE("the pixel threshold is inclusive") {
    RowSampleEntry gt = entry_of({std::vector<int>(10, 100)}, hs10());
    RowSampleEntry at20 = entry_of({std::vector<int>(10, 120)}, hs10());
    RowSampleEntry at21 = entry_of({std::vector<int>(10, 121)}, hs10());
    CHECK(score_row_accuracy({at20}, {gt}, RowAccuracyConfig{}).accuracy == 1.0);
    CHECK(score_row_accuracy({at21}, {gt}, RowAccuracyConfig{}).accuracy == 0.0);
}

TEST_CASE("greedy pairing gives the ground truth its best prediction") {
    RowSampleEntry gt = entry_of({std::vector<int>(10, 100)}, hs10());
    std::vector<int> close(10, 100);
    std::vector<int> off(10, 100);
    off[0] = 500;  // 9/10
    RowSampleEntry pred = entry_of({off, close}, hs10());  // weaker lane listed first
    RowAccuracyResult r = score_row_accuracy({pred}, {gt}, RowAccuracyConfig{});
    CHECK(r.tp == 1);
    CHECK(r.fp == 1);
    CHECK(r.fn == 0);
    CHECK(r.correct_points == 10);  // the 10/10 prediction is the paired one
}

TEST_CASE("missing rows count against the prediction, extra rows do not") {
    std::vector<int> gt_lane(10, 100);
    gt_lane[0] = -2;  // 9 visible points
    RowSampleEntry gt = entry_of({gt_lane}, hs10());
    std::vector<int> pred_lane(10, 100);
    pred_lane[1] = -2;  // misses a visible row
    pred_lane[0] = 100; // predicts where the ground truth is absent
    RowSampleEntry pred = entry_of({pred_lane}, hs10());
    RowAccuracyResult r = score_row_accuracy({pred}, {gt}, RowAccuracyConfig{});
    CHECK(r.total_points == 9);
    CHECK(r.correct_points == 8);
    CHECK(r.accuracy == doctest::Approx(8.0 / 9.0).epsilon(1e-12));
}

TEST_CASE("per-clip averaging weighs images equally") {
    RowSampleEntry gt1 = entry_of({std::vector<int>(10, 50)}, hs10());       // 10 points
    RowSampleEntry gt2 = entry_of({std::vector<int>(10, 50),
                                   std::vector<int>(10, 200),
                                   std::vector<int>(10, 300),
                                   std::vector<int>(10, 400)}, hs10());      // 40 points
    RowSampleEntry pred1 = gt1;  // 10/10 on image 1
    std::vector<int> half(10, 200);
    for (int i = 0; i < 5; ++i) half[static_cast<std::size_t>(i)] = 900;
    // Image 2 predictions: exact, half right, exact, hopeless -> 25/40.
    RowSampleEntry pred2 = entry_of({std::vector<int>(10, 50), half,
                                     std::vector<int>(10, 300),
                                     std::vector<int>(10, 901)}, hs10());

    RowAccuracyConfig pooled;
    RowAccuracyResult rp = score_row_accuracy({pred1, pred2}, {gt1, gt2}, pooled);
    // image 1: 10/10; image 2: 10 + 5 + 10 + 0 = 25/40.
    CHECK(rp.accuracy == doctest::Approx(35.0 / 50.0).epsilon(1e-12));

    RowAccuracyConfig per_clip;
    per_clip.per_clip_average = true;
    RowAccuracyResult rc = score_row_accuracy({pred1, pred2}, {gt1, gt2}, per_clip);
    CHECK(rc.accuracy == doctest::Approx(0.5 * (1.0 + 25.0 / 40.0)).epsilon(1e-12));
}

TEST_CASE("row accuracy input validation") {
    RowSampleEntry a = entry_of({}, hs10());
    RowSampleEntry b = entry_of({}, {1, 2, 3});
    CHECK_THROWS_AS(score_row_accuracy({a}, {a, a}, RowAccuracyConfig{}), DataError);
    CHECK_THROWS_AS(score_row_accuracy({a}, {b}, RowAccuracyConfig{}), DataError);
    RowAccuracyConfig bad;
    bad.match_threshold = 1.5;
    CHECK_THROWS_AS(score_row_accuracy({a}, {a}, bad), ConfigError);

    // Empty predictions: every ground truth is missed.
    RowSampleEntry gt = entry_of({std::vector<int>(10, 100)}, hs10());
    RowSampleEntry none = entry_of({}, hs10());
    RowAccuracyResult r = score_row_accuracy({none}, {gt}, RowAccuracyConfig{});
    CHECK(r.fn == 1);
    CHECK(r.accuracy == 0.0);
    CHECK(r.fn_rate == 1.0);
}

TEST_CASE("band IoU hand values") {
    const int H = 40, W = 200, n = 9;
    Lane a = vertical_lane(100.0, n, 0, n - 1);
    CHECK(lane_mask_iou(a, a, H, W, 30.0) == 1.0);

    Lane b = vertical_lane(115.0, n, 0, n - 1);  // 15px apart -> IoU exactly 1/3
    CHECK(lane_mask_iou(a, b, H, W, 30.0) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    Lane c = vertical_lane(160.0, n, 0, n - 1);  // disjoint bands
    CHECK(lane_mask_iou(a, c, H, W, 30.0) == 0.0);

    // Clipping: a lane half off the left edge still collects band pixels.
    Lane d = vertical_lane(0.0, n, 0, n - 1);
    CHECK(lane_mask_iou(d, d, H, W, 30.0) == 1.0);
    CHECK(lane_mask_iou(a, d, H, W, 30.0) == 0.0);

    CHECK_THROWS_AS(lane_mask_iou(a, b, 0, W, 30.0), ConfigError);
    CHECK_THROWS_AS(lane_mask_iou(a, b, H, W, 0.0), ConfigError);
}

TEST_CASE("interval raster equals the per-pixel mask oracle") {
    const int H = 48, W = 96, n = 13;
    Rng rng(0xE7AF);
    for (int trial = 0; trial < 40; ++trial) {
        Lane a = wandering_lane(rng, n, W);
        Lane b = wandering_lane(rng, n, W);
        const auto ma = rasterize_oracle(a, H, W, 30);
        const auto mb = rasterize_oracle(b, H, W, 30);
        std::int64_t inter = 0, uni = 0;
        for (std::size_t i = 0; i < ma.size(); ++i) {
            inter += (ma[i] & mb[i]) ? 1 : 0;
            uni += (ma[i] | mb[i]) ? 1 : 0;
        }
        const double expected = uni > 0 ? static_cast<double>(inter) / uni : 0.0;
        CHECK(lane_mask_iou(a, b, H, W, 30.0) == doctest::Approx(expected).epsilon(1e-14));
    }
}

TEST_CASE("mask F1 hand case") {
    const int H = 60, W = 300, n = 7;
    std::vector<std::vector<Lane>> gts{{vertical_lane(100, n, 0, 6), vertical_lane(200, n, 0, 6)}};
    std::vector<std::vector<Lane>> preds{{vertical_lane(100, n, 0, 6), vertical_lane(260, n, 0, 6)}};
    MaskF1Result r = score_mask_f1(preds, gts, H, W, MaskF1Config{});
    CHECK(r.tp == 1);
    CHECK(r.fp == 1);
    CHECK(r.fn == 1);
    CHECK(r.precision == doctest::Approx(0.5));
    CHECK(r.recall == doctest::Approx(0.5));
    CHECK(r.f1 == doctest::Approx(0.5));
}

TEST_CASE("matching is maximum, not greedy") {
    // Prediction A overlaps both ground truths, B only the first. Greedy
    // best-IoU pairing would give A the first lane and strand B; the
    // augmenting-path matcher recovers both pairs.
    const int H = 60, W = 300, n = 7;
    Lane g1 = vertical_lane(100, n, 0, 6), g2 = vertical_lane(108, n, 0, 6);
    Lane A = vertical_lane(104, n, 0, 6), B = vertical_lane(94, n, 0, 6);
    REQUIRE(lane_mask_iou(A, g1, H, W, 30.0) > 0.5);
    REQUIRE(lane_mask_iou(A, g2, H, W, 30.0) > 0.5);
    REQUIRE(lane_mask_iou(B, g1, H, W, 30.0) > 0.5);
    REQUIRE(lane_mask_iou(B, g2, H, W, 30.0) < 0.5);
    REQUIRE(lane_mask_iou(A, g1, H, W, 30.0) > lane_mask_iou(A, g2, H, W, 30.0) - 1e-12);

    MaskF1Result r = score_mask_f1({{A, B}}, {{g1, g2}}, H, W, MaskF1Config{});
    CHECK(r.tp == 2);
    CHECK(r.f1 == 1.0);
}

TEST_CASE("mask F1 edge cases and invariances") {
    const int H = 60, W = 300, n = 7;
    MaskF1Result empty = score_mask_f1({{}}, {{}}, H, W, MaskF1Config{});
    CHECK(empty.f1 == 1.0);  // nothing to find, nothing claimed

    std::vector<std::vector<Lane>> gts{{vertical_lane(100, n, 0, 6)}};
    MaskF1Result missed = score_mask_f1({{}}, gts, H, W, MaskF1Config{});
    CHECK(missed.f1 == 0.0);
    CHECK(missed.fn == 1);

    // Lane order within an image must not matter.
    std::vector<Lane> set{vertical_lane(100, n, 0, 6), vertical_lane(150, n, 0, 6),
                          vertical_lane(210, n, 0, 6)};
    std::vector<Lane> shuffled{set[2], set[0], set[1]};
    MaskF1Result a = score_mask_f1({shuffled}, {set}, H, W, MaskF1Config{});
    CHECK(a.tp == 3);
    CHECK(a.f1 == 1.0);

    CHECK_THROWS_AS(score_mask_f1({{}}, {}, H, W, MaskF1Config{}), DataError);
    MaskF1Config bad;
    bad.iou_threshold = 1.0;
    CHECK_THROWS_AS(score_mask_f1({{}}, {{}}, H, W, bad), ConfigError);
}

TEST_CASE("metric reports format as text and CSV") {
    MetricsReport report;
    report.add("accuracy", 0.875);
    report.add("f1", 0.5);
    const std::string text = report.to_text();
    CHECK(text.find("accuracy = 0.875") != std::string::npos);
    CHECK(text.find("f1") != std::string::npos);
    const std::string csv = report.to_csv();
    CHECK(csv == "metric,value\naccuracy,0.875\nf1,0.5\n");
}

TEST_CASE("benchmark reports stable arithmetic cost and positive throughput") {
    ModelConfig cfg;
    cfg.backbone.stage_channels = {4, 8};
    cfg.backbone.stage_strides = {2, 2};
    cfg.backbone.feature_channels = 6;
    cfg.backbone.input_height = 32;
    cfg.backbone.input_width = 64;
    cfg.n_points = 12;

    AnchorGenConfig acfg;
    acfg.left_angles = {60.0};
    acfg.right_angles = {120.0};
    acfg.bottom_angles = {80.0, 100.0};
    acfg.left_origins = 2;
    acfg.right_origins = 2;
    acfg.bottom_origins = 3;
    acfg.n_points = 12;
    acfg.stride = 4;
    AnchorSet set = generate_anchors(acfg, 32, 64);

    ModelParams params = init_params(cfg, set.size(), 55);
    Tensor image({3, 32, 64}, testsupport::random_values(3 * 32 * 64, 0xBE));

    BenchConfig bc;
    bc.warmup = 1;
    bc.reps = 3;
    BenchResult r1 = benchmark_forward(image, params, cfg, set, bc);
    BenchResult r2 = benchmark_forward(image, params, cfg, set, bc);
    CHECK(r1.macs_per_image == r2.macs_per_image);
    CHECK(r1.fps > 0.0);
    CHECK(r1.seconds_per_image > 0.0);

    // The per-image count equals one measured forward pass.
    reset_mac_counter();
    ProposalBatch batch = model_forward(nullptr, image, params, cfg, set);
    CHECK(mac_total() == r1.macs_per_image);

    // Decoding yields one scored lane per anchor.
    std::vector<Lane> lanes = decode_batch(batch, set);
    REQUIRE(static_cast<int>(lanes.size()) == set.size());
    for (const Lane& lane : lanes) {
        CHECK_NOTHROW(validate_lane(lane));
        CHECK(lane.score >= 0.0);
        CHECK(lane.score <= 1.0);
    }

    BenchConfig bad;
    bad.reps = 0;
    CHECK_THROWS_AS(benchmark_forward(image, params, cfg, set, bad), ConfigError);
}

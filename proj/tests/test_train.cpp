#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "laneatt/anchors.hpp"
#include "laneatt/errors.hpp"
#include "laneatt/eval.hpp"
#include "laneatt/matching.hpp"
#include "laneatt/model.hpp"
#include "laneatt/tensor.hpp"
#include "laneatt/train.hpp"
#include "support/gradcheck.hpp"

using namespace laneatt;
using testsupport::random_values;

namespace {

// 8x8 image, one conv stage, 6 anchors on a 4-row grid: the smallest setup
// where every module (backbone, pooling, attention, heads, decode,
// suppression, assignment, loss) still participates.
ModelConfig micro_model() {
    ModelConfig cfg;
    cfg.backbone.stage_channels = {2};
    cfg.backbone.stage_strides = {2};
    cfg.backbone.feature_channels = 2;
    cfg.backbone.input_height = 8;
    cfg.backbone.input_width = 8;
    cfg.n_points = 4;
    return cfg;
}

AnchorSet micro_anchors() {
    AnchorGenConfig acfg;
    acfg.left_angles = {45.0};
    acfg.right_angles = {135.0};
    acfg.bottom_angles = {90.0};
    acfg.left_origins = 2;
    acfg.right_origins = 2;
    acfg.bottom_origins = 2;
    acfg.n_points = 4;
    acfg.stride = 2;
    return generate_anchors(acfg, 8, 8);
}

// Ground truth = a chosen anchor's line nudged sideways, so that anchor (or a
// near neighbour) is guaranteed a positive match.
Lane shifted_anchor_lane(const AnchorSet& set, int idx, double shift) {
    Lane lane = anchor_to_lane(set.anchors[static_cast<std::size_t>(idx)], set.config.n_points,
                               static_cast<double>(set.image_height));
    for (double& x : lane.xs) x += shift;
    return lane;
}

TrainConfig micro_train_config() {
    TrainConfig tc;
    tc.epochs = 1;
    // On an 8px-wide image every lane is within the default radius of every
    // other; shrink it so distinct anchor lines survive side by side.
    tc.nms_distance = 0.5;
    tc.optim.learning_rate = 1e-2;
    return tc;
}

Lane plain_lane(std::vector<double> xs, int s, double score) {
    Lane lane;
    lane.xs = std::move(xs);
    lane.s = s;
    lane.e = s + static_cast<int>(lane.xs.size()) - 1;
    lane.score = score;
    return lane;
}

}  // namespace

TEST_CASE("adam follows the reference update formula") {
    Tensor p({3}, {0.5, -1.0, 2.0});
    OptimConfig oc;
    oc.method = "adam";
    oc.learning_rate = 0.1;
    Optimizer opt(oc, {&p});

    // Independent tracker: same starting point, textbook Adam recursion on
    // the gradient of sum(p^2), which is 2p elementwise.
    std::vector<double> x = {0.5, -1.0, 2.0};
    std::vector<double> m(3, 0.0), v(3, 0.0);

    for (int t = 1; t <= 4; ++t) {
        Tape tape;
        tape.watch(p);
        Tensor loss = sum_all(&tape, mul(&tape, p, p));
        tape.backward(loss);
        opt.step(tape);

        for (int k = 0; k < 3; ++k) {
            const double g = 2.0 * x[static_cast<std::size_t>(k)];
            m[static_cast<std::size_t>(k)] = 0.9 * m[static_cast<std::size_t>(k)] + 0.1 * g;
            v[static_cast<std::size_t>(k)] =
                0.999 * v[static_cast<std::size_t>(k)] + 0.001 * g * g;
            const double m_hat = m[static_cast<std::size_t>(k)] / (1.0 - std::pow(0.9, t));
            const double v_hat = v[static_cast<std::size_t>(k)] / (1.0 - std::pow(0.999, t));
            x[static_cast<std::size_t>(k)] -= 0.1 * m_hat / (std::sqrt(v_hat) + 1e-8);
        }
        for (int k = 0; k < 3; ++k) {
            CHECK(p.data[static_cast<std::size_t>(k)] ==
                  doctest::Approx(x[static_cast<std::size_t>(k)]).epsilon(1e-14));
        }
    }
    CHECK(opt.steps_taken() == 4);
}

TEST_CASE("sgd with momentum follows the reference velocity recursion") {
    Tensor p({2}, {3.0, -2.0});
    OptimConfig oc;
    oc.method = "sgd";
    oc.learning_rate = 0.05;
    oc.momentum = 0.9;
    Optimizer opt(oc, {&p});

    std::vector<double> x = {3.0, -2.0};
    std::vector<double> vel(2, 0.0);
    for (int t = 1; t <= 3; ++t) {
        Tape tape;
        tape.watch(p);
        Tensor loss = sum_all(&tape, mul(&tape, p, p));
        tape.backward(loss);
        opt.step(tape);

        for (int k = 0; k < 2; ++k) {
            const double g = 2.0 * x[static_cast<std::size_t>(k)];
            vel[static_cast<std::size_t>(k)] = 0.9 * vel[static_cast<std::size_t>(k)] + g;
            x[static_cast<std::size_t>(k)] -= 0.05 * vel[static_cast<std::size_t>(k)];
        }
        for (int k = 0; k < 2; ++k) {
            CHECK(p.data[static_cast<std::size_t>(k)] ==
                  doctest::Approx(x[static_cast<std::size_t>(k)]).epsilon(1e-14));
        }
    }
}

TEST_CASE("sgd without momentum is plain gradient descent") {
    Tensor p({2}, {1.0, -4.0});
    OptimConfig oc;
    oc.method = "sgd";
    oc.learning_rate = 0.25;
    oc.momentum = 0.0;
    Optimizer opt(oc, {&p});

    Tape tape;
    tape.watch(p);
    Tensor loss = sum_all(&tape, mul(&tape, p, p));
    tape.backward(loss);
    opt.step(tape);

    CHECK(p.data[0] == doctest::Approx(1.0 - 0.25 * 2.0).epsilon(1e-15));
    CHECK(p.data[1] == doctest::Approx(-4.0 - 0.25 * -8.0).epsilon(1e-15));
}

TEST_CASE("optimizer and schedule configs reject bad values") {
    Tensor p({1}, {1.0});

    OptimConfig oc;
    oc.method = "newton";
    CHECK_THROWS_AS(validate_optim_config(oc), ConfigError);
    oc = OptimConfig{};
    oc.learning_rate = 0.0;
    CHECK_THROWS_AS(validate_optim_config(oc), ConfigError);
    oc = OptimConfig{};
    oc.beta1 = 1.0;
    CHECK_THROWS_AS(validate_optim_config(oc), ConfigError);
    oc = OptimConfig{};
    oc.beta2 = -0.1;
    CHECK_THROWS_AS(validate_optim_config(oc), ConfigError);
    oc = OptimConfig{};
    oc.epsilon = 0.0;
    CHECK_THROWS_AS(validate_optim_config(oc), ConfigError);
    oc = OptimConfig{};
    oc.momentum = 1.0;
    CHECK_THROWS_AS(validate_optim_config(oc), ConfigError);

    CHECK_THROWS_AS(Optimizer(OptimConfig{}, {}), ConfigError);
    CHECK_THROWS_AS(Optimizer(OptimConfig{}, {&p, nullptr}), ConfigError);

    TrainConfig tc;
    tc.epochs = 0;
    CHECK_THROWS_AS(validate_train_config(tc), ConfigError);
    tc = TrainConfig{};
    tc.tau_positive = 0.0;
    CHECK_THROWS_AS(validate_train_config(tc), ConfigError);
    tc = TrainConfig{};
    tc.tau_negative = tc.tau_positive - 1.0;
    CHECK_THROWS_AS(validate_train_config(tc), ConfigError);
    tc = TrainConfig{};
    tc.nms_distance = 0.0;
    CHECK_THROWS_AS(validate_train_config(tc), ConfigError);
    tc = TrainConfig{};
    tc.loss.lambda = -1.0;
    CHECK_THROWS_AS(validate_train_config(tc), ConfigError);
    tc = TrainConfig{};
    tc.optim.method = "nope";
    CHECK_THROWS_AS(validate_train_config(tc), ConfigError);
}

TEST_CASE("training-time suppression collapses near-duplicates, keeps the rest") {
    std::vector<Lane> lanes;
    lanes.push_back(plain_lane({10, 10, 10, 10}, 0, 0.5));
    lanes.push_back(plain_lane({12, 12, 12, 12}, 0, 0.9));
    lanes.push_back(plain_lane({60, 60, 60, 60}, 0, 0.2));

    // The middle lane wins its duel with lane 0 (distance 2 < 5); lane 2 is
    // 48 away and stays. Output is ascending by anchor index, not by score.
    std::vector<int> kept = training_survivors(lanes, 5.0);
    REQUIRE(kept.size() == 2);
    CHECK(kept[0] == 1);
    CHECK(kept[1] == 2);

    // A huge radius leaves only the single best proposal.
    kept = training_survivors(lanes, 100.0);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0] == 1);

    // Zero scores are not filtered out: suppression here is geometric only.
    std::vector<Lane> flat;
    flat.push_back(plain_lane({10, 10}, 0, 0.0));
    flat.push_back(plain_lane({50, 50}, 0, 0.0));
    kept = training_survivors(flat, 5.0);
    CHECK(kept == std::vector<int>{0, 1});
}

TEST_CASE("repeated steps on one image drive the loss down") {
    const ModelConfig cfg = micro_model();
    const AnchorSet set = micro_anchors();
    ModelParams params = init_params(cfg, set.size(), 321);

    const Tensor image({3, 8, 8}, random_values(192, 0xA1));
    std::vector<Lane> gts;
    gts.push_back(shifted_anchor_lane(set, 1, 0.4));
    gts.push_back(shifted_anchor_lane(set, 4, -0.3));

    const TrainConfig tc = micro_train_config();
    std::vector<Tensor*> ptrs;
    for (auto& [name, tensor] : named_params(params)) {
        (void)name;
        ptrs.push_back(tensor);
    }
    Optimizer opt(tc.optim, std::move(ptrs));

    double first = 0.0;
    double last = 0.0;
    for (int step = 0; step < 40; ++step) {
        LossBreakdown lb = train_step(params, opt, image, gts, cfg, set, tc);
        const double value = lb.total.value();
        REQUIRE(std::isfinite(value));
        CHECK(lb.num_positive + lb.num_negative >= 1);
        if (step == 0) first = value;
        last = value;
    }
    CHECK(opt.steps_taken() == 40);
    CHECK(last < 0.5 * first);
}

TEST_CASE("full schedule: checkpoints land on disk and restore exactly") {
    const ModelConfig cfg = micro_model();
    const AnchorSet set = micro_anchors();

    std::vector<Tensor> images;
    images.emplace_back(Shape{3, 8, 8}, random_values(192, 0xB1));
    images.emplace_back(Shape{3, 8, 8}, random_values(192, 0xB2));
    std::vector<std::vector<Lane>> labels(2);
    labels[0].push_back(shifted_anchor_lane(set, 1, 0.4));
    labels[1].push_back(shifted_anchor_lane(set, 4, -0.5));

    TrainConfig tc = micro_train_config();
    tc.epochs = 3;
    tc.shuffle_seed = 7;
    const std::string dir = "train_ckpt_test_dir";
    std::filesystem::remove_all(dir);
    tc.checkpoint_dir = dir;

    ModelParams trained = init_params(cfg, set.size(), 9);
    std::vector<EpochStats> history = train_model(trained, cfg, set, images, labels, tc);

    REQUIRE(history.size() == 3);
    for (int e = 0; e < 3; ++e) {
        CHECK(history[static_cast<std::size_t>(e)].epoch == e + 1);
        CHECK(std::isfinite(history[static_cast<std::size_t>(e)].mean_loss));
        char name[32];
        std::snprintf(name, sizeof(name), "epoch_%03d.ckpt", e + 1);
        CHECK(std::filesystem::exists(std::filesystem::path(dir) / name));
    }

    // The last checkpoint reproduces the trained forward pass bit for bit,
    // even when loaded over differently-initialized parameters.
    ModelParams restored = init_params(cfg, set.size(), 4444);
    load_params((std::filesystem::path(dir) / "epoch_003.ckpt").string(), restored);
    ProposalBatch a = model_forward(nullptr, images[0], trained, cfg, set);
    ProposalBatch b = model_forward(nullptr, images[0], restored, cfg, set);
    CHECK(a.cls.data == b.cls.data);
    CHECK(a.reg.data == b.reg.data);

    std::filesystem::remove_all(dir);
}

TEST_CASE("identical seeds give identical training trajectories") {
    const ModelConfig cfg = micro_model();
    const AnchorSet set = micro_anchors();

    std::vector<Tensor> images;
    images.emplace_back(Shape{3, 8, 8}, random_values(192, 0xC1));
    images.emplace_back(Shape{3, 8, 8}, random_values(192, 0xC2));
    images.emplace_back(Shape{3, 8, 8}, random_values(192, 0xC3));
    std::vector<std::vector<Lane>> labels(3);
    labels[0].push_back(shifted_anchor_lane(set, 0, 0.5));
    labels[1].push_back(shifted_anchor_lane(set, 3, -0.4));
    labels[2].push_back(shifted_anchor_lane(set, 5, 0.2));

    TrainConfig tc = micro_train_config();
    tc.epochs = 2;
    tc.shuffle_seed = 11;

    ModelParams run1 = init_params(cfg, set.size(), 55);
    ModelParams run2 = init_params(cfg, set.size(), 55);
    std::vector<EpochStats> h1 = train_model(run1, cfg, set, images, labels, tc);
    std::vector<EpochStats> h2 = train_model(run2, cfg, set, images, labels, tc);

    REQUIRE(h1.size() == h2.size());
    for (std::size_t i = 0; i < h1.size(); ++i) {
        CHECK(h1[i].mean_loss == h2[i].mean_loss);
        CHECK(h1[i].mean_classification == h2[i].mean_classification);
        CHECK(h1[i].mean_regression == h2[i].mean_regression);
    }
    for (std::size_t i = 0; i < run1.stages.size(); ++i) {
        CHECK(run1.stages[i].kernel.data == run2.stages[i].kernel.data);
    }
    CHECK(run1.cls_heads[0].weight.data == run2.cls_heads[0].weight.data);

    // A different shuffle seed visits images in a different order, which
    // changes the optimizer trajectory.
    TrainConfig other = tc;
    other.shuffle_seed = 12;
    ModelParams run3 = init_params(cfg, set.size(), 55);
    std::vector<EpochStats> h3 = train_model(run3, cfg, set, images, labels, other);
    bool any_diff = false;
    for (std::size_t i = 0; i < h1.size(); ++i) {
        if (h1[i].mean_loss != h3[i].mean_loss) any_diff = true;
    }
    CHECK(any_diff);
}

TEST_CASE("schedule rejects mismatched or empty datasets") {
    const ModelConfig cfg = micro_model();
    const AnchorSet set = micro_anchors();
    ModelParams params = init_params(cfg, set.size(), 1);
    TrainConfig tc = micro_train_config();

    std::vector<Tensor> images;
    std::vector<std::vector<Lane>> labels;
    CHECK_THROWS_AS(train_model(params, cfg, set, images, labels, tc), DataError);

    images.emplace_back(Shape{3, 8, 8}, random_values(192, 1));
    CHECK_THROWS_AS(train_model(params, cfg, set, images, labels, tc), ShapeError);
}

TEST_CASE("inference filters by confidence and caps the lane count") {
    const ModelConfig cfg = micro_model();
    const AnchorSet set = micro_anchors();
    ModelParams params = init_params(cfg, set.size(), 77);
    for (auto& [name, tensor] : named_params(params)) {
        (void)name;
        std::fill(tensor->data.begin(), tensor->data.end(), 0.0);
    }
    const Tensor image({3, 8, 8}, random_values(192, 0xD1));

    // All-zero parameters produce zero logits, so every proposal scores
    // exactly 1 - softmax([0, 0])[0] = 0.5.
    InferParams ip;
    ip.confidence = 0.5;
    ip.nms_distance = 0.25;
    ip.max_lanes = std::nullopt;
    std::vector<Lane> lanes = infer_lanes(image, params, cfg, set, ip);
    REQUIRE(!lanes.empty());
    for (const Lane& lane : lanes) {
        CHECK(lane.score == doctest::Approx(0.5).epsilon(1e-12));
    }

    ip.max_lanes = 1;
    CHECK(infer_lanes(image, params, cfg, set, ip).size() == 1);

    ip.max_lanes = std::nullopt;
    ip.confidence = 0.9;
    CHECK(infer_lanes(image, params, cfg, set, ip).empty());

    ip.confidence = 0.5;
    ip.nms_distance = 0.0;
    CHECK_THROWS_AS(infer_lanes(image, params, cfg, set, ip), ConfigError);
}

TEST_CASE("training sharpens inference on the trained image") {
    const ModelConfig cfg = micro_model();
    const AnchorSet set = micro_anchors();
    ModelParams params = init_params(cfg, set.size(), 13);

    const Tensor image({3, 8, 8}, random_values(192, 0xE7));
    std::vector<Lane> gts;
    gts.push_back(shifted_anchor_lane(set, 1, 0.3));

    TrainConfig tc = micro_train_config();
    std::vector<Tensor*> ptrs;
    for (auto& [name, tensor] : named_params(params)) {
        (void)name;
        ptrs.push_back(tensor);
    }
    Optimizer opt(tc.optim, std::move(ptrs));
    for (int step = 0; step < 150; ++step) {
        train_step(params, opt, image, gts, cfg, set, tc);
    }

    // After fitting one image, at least one proposal should clear a high
    // confidence bar and sit close to the target lane.
    InferParams ip;
    ip.confidence = 0.8;
    ip.nms_distance = 0.5;
    std::vector<Lane> lanes = infer_lanes(image, params, cfg, set, ip);
    REQUIRE(!lanes.empty());
    CHECK(lanes[0].score > 0.8);
    CHECK(lane_distance(lanes[0], gts[0]) < 1.0);
}

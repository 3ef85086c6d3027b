#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "laneatt/anchors.hpp"
#include "laneatt/loss.hpp"
#include "laneatt/model.hpp"
#include "laneatt/tensor.hpp"

namespace laneatt {

/// First-order optimizers over a fixed parameter list.
struct OptimConfig {
    std::string method = "adam";  // "adam" or "sgd"
    double learning_rate = 1e-3;
    double beta1 = 0.9;    // adam: first-moment decay
    double beta2 = 0.999;  // adam: second-moment decay
    double epsilon = 1e-8;
    double momentum = 0.9;  // sgd only
};

void validate_optim_config(const OptimConfig& config);

class Optimizer {
public:
    /// Holds raw pointers; the parameter tensors must outlive the optimizer
    /// and keep their shapes.
    Optimizer(OptimConfig config, std::vector<Tensor*> params);

    /// One update from the gradients recorded on `tape` (every parameter
    /// must be watched there). Unused parameters see zero gradients and are
    /// left in place.
    void step(Tape& tape);

    int steps_taken() const { return t_; }

private:
    OptimConfig config_;
    std::vector<Tensor*> params_;
    std::vector<std::vector<double>> m_;  // adam first moment / sgd velocity
    std::vector<std::vector<double>> v_;  // adam second moment
    int t_ = 0;
};

/// One-image gradient-descent schedule over anchor-pooled lane detection.
struct TrainConfig {
    int epochs = 30;
    double tau_positive = 15.0;  // label thresholds on the lane distance
    double tau_negative = 20.0;
    double nms_distance = 15.0;  // training-time suppression radius; no
                                 // confidence filtering is applied here
    LossConfig loss;
    OptimConfig optim;
    bool shuffle = true;
    std::uint64_t shuffle_seed = 1;
    std::string checkpoint_dir;  // when set, epoch_NNN.ckpt after each epoch
};

void validate_train_config(const TrainConfig& config);

/// Anchor indices that survive training-time suppression of the decoded
/// proposals (no confidence filter), in ascending order.
std::vector<int> training_survivors(const std::vector<Lane>& decoded, double nms_distance);

/// Forward, suppress, assign targets to the surviving anchors (by their
/// anchor-line geometry), backpropagate and apply one optimizer update.
LossBreakdown train_step(ModelParams& params, Optimizer& optimizer, const Tensor& image,
                         const std::vector<Lane>& ground_truth, const ModelConfig& model_config,
                         const AnchorSet& anchors, const TrainConfig& config);

struct EpochStats {
    int epoch = 0;  // 1-based
    double mean_loss = 0.0;
    double mean_classification = 0.0;
    double mean_regression = 0.0;
};

/// Called after each epoch's updates and checkpoint write; the parameters
/// reflect the epoch's final state at that point.
using EpochCallback = std::function<void(const EpochStats&)>;

/// Per-image updates over the dataset for `config.epochs` epochs. Images are
/// visited in a seed-deterministic shuffled order (or verbatim order when
/// shuffling is off). Progress lines go to `log` when given.
std::vector<EpochStats> train_model(ModelParams& params, const ModelConfig& model_config,
                                    const AnchorSet& anchors, const std::vector<Tensor>& images,
                                    const std::vector<std::vector<Lane>>& labels,
                                    const TrainConfig& config, std::ostream* log = nullptr,
                                    const EpochCallback& on_epoch = {});

}  // namespace laneatt

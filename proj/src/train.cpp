#include "laneatt/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <ostream>
#include <utility>

#include "laneatt/errors.hpp"
#include "laneatt/matching.hpp"
#include "laneatt/rng.hpp"

namespace laneatt {

void validate_optim_config(const OptimConfig& config) {
    if (config.method != "adam" && config.method != "sgd") {
        throw ConfigError("optim.method", "must be \"adam\" or \"sgd\", got \"" + config.method + "\"");
    }
    if (!(config.learning_rate > 0.0)) {
        throw ConfigError("optim.learning_rate", "must be positive");
    }
    if (!(config.beta1 >= 0.0 && config.beta1 < 1.0)) {
        throw ConfigError("optim.beta1", "must lie in [0, 1)");
    }
    if (!(config.beta2 >= 0.0 && config.beta2 < 1.0)) {
        throw ConfigError("optim.beta2", "must lie in [0, 1)");
    }
    if (!(config.epsilon > 0.0)) {
        throw ConfigError("optim.epsilon", "must be positive");
    }
    if (!(config.momentum >= 0.0 && config.momentum < 1.0)) {
        throw ConfigError("optim.momentum", "must lie in [0, 1)");
    }
}

Optimizer::Optimizer(OptimConfig config, std::vector<Tensor*> params)
    : config_(std::move(config)), params_(std::move(params)) {
    validate_optim_config(config_);
    if (params_.empty()) {
        throw ConfigError("optim.params", "parameter list is empty");
    }
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (Tensor* p : params_) {
        if (p == nullptr) {
            throw ConfigError("optim.params", "null parameter pointer");
        }
        m_.emplace_back(p->data.size(), 0.0);
        v_.emplace_back(p->data.size(), 0.0);
    }
}

void Optimizer::step(Tape& tape) {
    ++t_;
    const bool adam = config_.method == "adam";
    const double lr = config_.learning_rate;
    const double bc1 = 1.0 - std::pow(config_.beta1, t_);
    const double bc2 = 1.0 - std::pow(config_.beta2, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = *params_[i];
        const std::vector<double>& g = tape.grad(p);
        if (g.size() != p.data.size()) {
            throw TapeError("gradient size does not match parameter size");
        }
        std::vector<double>& m = m_[i];
        if (adam) {
            std::vector<double>& v = v_[i];
            for (std::size_t k = 0; k < g.size(); ++k) {
                m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * g[k];
                v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * g[k] * g[k];
                const double m_hat = m[k] / bc1;
                const double v_hat = v[k] / bc2;
                p.data[k] -= lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
            }
        } else {
            for (std::size_t k = 0; k < g.size(); ++k) {
                m[k] = config_.momentum * m[k] + g[k];
                p.data[k] -= lr * m[k];
            }
        }
    }
}

void validate_train_config(const TrainConfig& config) {
    if (config.epochs < 1) {
        throw ConfigError("train.epochs", "must be at least 1");
    }
    if (!(config.tau_positive > 0.0)) {
        throw ConfigError("train.tau_positive", "must be positive");
    }
    if (!(config.tau_negative >= config.tau_positive)) {
        throw ConfigError("train.tau_negative", "must be at least tau_positive");
    }
    if (!(config.nms_distance > 0.0)) {
        throw ConfigError("train.nms_distance", "must be positive");
    }
    validate_loss_config(config.loss);
    validate_optim_config(config.optim);
}

std::vector<int> training_survivors(const std::vector<Lane>& decoded, double nms_distance) {
    // Confidence threshold -1 disables score filtering: every proposal
    // competes, and only geometric duplicates are removed.
    std::vector<int> kept = nms(decoded, nms_distance, -1.0);
    std::sort(kept.begin(), kept.end());
    return kept;
}

LossBreakdown train_step(ModelParams& params, Optimizer& optimizer, const Tensor& image,
                         const std::vector<Lane>& ground_truth, const ModelConfig& model_config,
                         const AnchorSet& anchors, const TrainConfig& config) {
    validate_train_config(config);

    Tape tape;
    watch_params(tape, params);
    ProposalBatch batch = model_forward(&tape, image, params, model_config, anchors);
    std::vector<Lane> decoded = decode_batch(batch, anchors);
    std::vector<int> survivors = training_survivors(decoded, config.nms_distance);

    AnchorSet sub;
    sub.config = anchors.config;
    sub.image_height = anchors.image_height;
    sub.image_width = anchors.image_width;
    std::vector<Lane> lines;
    sub.anchors.reserve(survivors.size());
    lines.reserve(survivors.size());
    for (int id : survivors) {
        const Anchor& a = anchors.anchors[static_cast<std::size_t>(id)];
        sub.anchors.push_back(a);
        // Targets attach to the anchor's own line, not to the current decoded
        // proposal, so the labels do not drift with the regression outputs.
        lines.push_back(anchor_to_lane(a, anchors.config.n_points,
                                       static_cast<double>(anchors.image_height)));
    }
    AssignmentResult assignment =
        assign_targets(lines, ground_truth, config.tau_positive, config.tau_negative);

    ProposalBatch sub_batch;
    sub_batch.cls = select_rows(&tape, batch.cls, survivors);
    sub_batch.reg = select_rows(&tape, batch.reg, survivors);

    LossBreakdown loss = total_loss(&tape, sub_batch, sub, assignment, config.loss);
    tape.backward(loss.total);
    optimizer.step(tape);
    return loss;
}

std::vector<EpochStats> train_model(ModelParams& params, const ModelConfig& model_config,
                                    const AnchorSet& anchors, const std::vector<Tensor>& images,
                                    const std::vector<std::vector<Lane>>& labels,
                                    const TrainConfig& config, std::ostream* log,
                                    const EpochCallback& on_epoch) {
    validate_train_config(config);
    if (images.size() != labels.size()) {
        throw ShapeError("training images and labels differ in count");
    }
    if (images.empty()) {
        throw DataError("no training images");
    }

    std::vector<Tensor*> param_ptrs;
    for (auto& [name, tensor] : named_params(params)) {
        (void)name;
        param_ptrs.push_back(tensor);
    }
    Optimizer optimizer(config.optim, std::move(param_ptrs));

    if (!config.checkpoint_dir.empty()) {
        std::filesystem::create_directories(config.checkpoint_dir);
    }

    const int n = static_cast<int>(images.size());
    std::vector<EpochStats> history;
    history.reserve(static_cast<std::size_t>(config.epochs));
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::vector<int> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        if (config.shuffle) {
            Rng rng(mix_seed(config.shuffle_seed, static_cast<std::uint64_t>(epoch)));
            for (int i = n - 1; i > 0; --i) {
                const int j = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(i) + 1));
                std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
            }
        }

        double sum_total = 0.0;
        double sum_cls = 0.0;
        double sum_reg = 0.0;
        for (int idx : order) {
            LossBreakdown lb =
                train_step(params, optimizer, images[static_cast<std::size_t>(idx)],
                           labels[static_cast<std::size_t>(idx)], model_config, anchors, config);
            sum_total += lb.total.value();
            sum_cls += lb.classification;
            sum_reg += lb.regression;
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.mean_loss = sum_total / n;
        stats.mean_classification = sum_cls / n;
        stats.mean_regression = sum_reg / n;
        history.push_back(stats);

        if (log != nullptr) {
            (*log) << "epoch " << epoch << "/" << config.epochs << "  loss " << stats.mean_loss
                   << "  cls " << stats.mean_classification << "  reg " << stats.mean_regression
                   << '\n';
        }
        if (!config.checkpoint_dir.empty()) {
            char name[32];
            std::snprintf(name, sizeof(name), "epoch_%03d.ckpt", epoch);
            save_params((std::filesystem::path(config.checkpoint_dir) / name).string(), params);
        }
        if (on_epoch) {
            on_epoch(stats);
        }
    }
    return history;
}

}  // namespace laneatt

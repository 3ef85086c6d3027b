#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <sstream>

#include "laneatt/anchors.hpp"
#include "laneatt/data.hpp"
#include "laneatt/eval.hpp"
#include "laneatt/lane.hpp"
#include "laneatt/loss.hpp"
#include "laneatt/matching.hpp"
#include "laneatt/model.hpp"
#include "laneatt/tensor.hpp"
#include "laneatt/train.hpp"

namespace py = pybind11;
using namespace laneatt;

PYBIND11_MODULE(_core, m) {
    m.doc() = "Anchor-based lane detector: C++ core bindings";

    // --- geometry ---------------------------------------------------------

    py::class_<Lane>(m, "Lane")
        .def(py::init<>())
        .def_readwrite("xs", &Lane::xs)
        .def_readwrite("s", &Lane::s)
        .def_readwrite("e", &Lane::e)
        .def_readwrite("score", &Lane::score)
        .def_readwrite("category", &Lane::category)
        .def_property_readonly("n_points", &Lane::n_points)
        .def("__repr__", [](const Lane& l) {
            std::ostringstream out;
            out << "Lane(rows " << l.s << ".." << l.e << " of " << l.n_points() << ", score "
                << l.score << ")";
            return out.str();
        });
    m.def("grid_y", &grid_y, py::arg("row"), py::arg("n_points"), py::arg("image_height"));
    m.def("lane_distance", &lane_distance, py::arg("a"), py::arg("b"),
          "Mean |dx| over the common row range; inf when disjoint.");

    py::enum_<Border>(m, "Border")
        .value("LEFT", Border::kLeft)
        .value("BOTTOM", Border::kBottom)
        .value("RIGHT", Border::kRight);

    py::class_<Anchor>(m, "Anchor")
        .def(py::init<>())
        .def_readwrite("x_orig", &Anchor::x_orig)
        .def_readwrite("y_orig", &Anchor::y_orig)
        .def_readwrite("theta_deg", &Anchor::theta_deg)
        .def_readwrite("border", &Anchor::border)
        .def_readwrite("id", &Anchor::id)
        .def_readonly("feature_cols", &Anchor::feature_cols)
        .def("x_at", &Anchor::x_at, py::arg("y"));

    py::class_<AnchorGenConfig>(m, "AnchorGenConfig")
        .def(py::init<>())
        .def_readwrite("left_angles", &AnchorGenConfig::left_angles)
        .def_readwrite("right_angles", &AnchorGenConfig::right_angles)
        .def_readwrite("bottom_angles", &AnchorGenConfig::bottom_angles)
        .def_readwrite("left_origins", &AnchorGenConfig::left_origins)
        .def_readwrite("right_origins", &AnchorGenConfig::right_origins)
        .def_readwrite("bottom_origins", &AnchorGenConfig::bottom_origins)
        .def_readwrite("n_points", &AnchorGenConfig::n_points)
        .def_readwrite("stride", &AnchorGenConfig::stride);

    py::class_<AnchorSet>(m, "AnchorSet")
        .def(py::init<>())
        .def_readwrite("anchors", &AnchorSet::anchors)
        .def_readwrite("config", &AnchorSet::config)
        .def_readwrite("image_height", &AnchorSet::image_height)
        .def_readwrite("image_width", &AnchorSet::image_width)
        .def("__len__", &AnchorSet::size);

    m.def("generate_anchors", &generate_anchors, py::arg("config"), py::arg("image_height"),
          py::arg("image_width"));
    m.def("project_anchor", &project_anchor, py::arg("anchor"), py::arg("feature_height"),
          py::arg("feature_width"), py::arg("stride"));
    m.def("anchor_to_lane", &anchor_to_lane, py::arg("anchor"), py::arg("n_points"),
          py::arg("image_height"));
    m.def("filter_anchors", &filter_anchors, py::arg("anchors"), py::arg("training_samples"),
          py::arg("n_keep"), py::arg("tau_positive"));
    m.def("positive_counts", &positive_counts, py::arg("anchors"), py::arg("training_samples"),
          py::arg("tau_positive"));

    // --- matching ---------------------------------------------------------

    m.def(
        "nms",
        [](const std::vector<Lane>& proposals, double distance_threshold,
           double confidence_threshold, std::optional<int> max_keep) {
            return nms(proposals, distance_threshold, confidence_threshold, max_keep);
        },
        py::arg("proposals"), py::arg("distance_threshold"), py::arg("confidence_threshold") = 0.0,
        py::arg("max_keep") = py::none());

    py::enum_<AnchorLabel>(m, "AnchorLabel")
        .value("POSITIVE", AnchorLabel::kPositive)
        .value("NEGATIVE", AnchorLabel::kNegative)
        .value("IGNORED", AnchorLabel::kIgnored);

    py::class_<AnchorAssignment>(m, "AnchorAssignment")
        .def_readonly("label", &AnchorAssignment::label)
        .def_readonly("min_distance", &AnchorAssignment::min_distance)
        .def_readonly("gt_index", &AnchorAssignment::gt_index)
        .def_readonly("s", &AnchorAssignment::s)
        .def_readonly("e", &AnchorAssignment::e)
        .def_readonly("target_xs", &AnchorAssignment::target_xs)
        .def_readonly("target_length", &AnchorAssignment::target_length)
        .def_readonly("target_category", &AnchorAssignment::target_category);

    py::class_<AssignmentResult>(m, "AssignmentResult")
        .def_readonly("anchors", &AssignmentResult::anchors)
        .def_readonly("num_positive", &AssignmentResult::num_positive)
        .def_readonly("num_negative", &AssignmentResult::num_negative)
        .def_readonly("num_ignored", &AssignmentResult::num_ignored);

    m.def("assign_targets", &assign_targets, py::arg("anchors_as_lanes"), py::arg("ground_truths"),
          py::arg("tau_positive"), py::arg("tau_negative"));

    // --- tensors and synthetic data ---------------------------------------

    py::class_<Tensor>(m, "Tensor")
        .def(py::init<>())
        .def(py::init<Shape>(), py::arg("shape"))
        .def(py::init<Shape, std::vector<double>>(), py::arg("shape"), py::arg("values"))
        .def_readwrite("shape", &Tensor::shape)
        .def_readwrite("data", &Tensor::data)
        .def_property_readonly("size", &Tensor::size)
        .def_property_readonly("rank", &Tensor::rank);

    py::class_<Image>(m, "Image")
        .def(py::init<>())
        .def(py::init<int, int>(), py::arg("height"), py::arg("width"))
        .def_readwrite("height", &Image::height)
        .def_readwrite("width", &Image::width)
        .def_readwrite("pixels", &Image::pixels);

    m.def("image_to_tensor", &image_to_tensor, py::arg("image"));
    m.def("write_ppm", &write_ppm, py::arg("path"), py::arg("image"));
    m.def("read_ppm", &read_ppm, py::arg("path"));

    py::class_<GenConfig>(m, "GenConfig")
        .def(py::init<>())
        .def_readwrite("image_height", &GenConfig::image_height)
        .def_readwrite("image_width", &GenConfig::image_width)
        .def_readwrite("n_points", &GenConfig::n_points)
        .def_readwrite("min_lanes", &GenConfig::min_lanes)
        .def_readwrite("max_lanes", &GenConfig::max_lanes)
        .def_readwrite("flip_prob", &GenConfig::flip_prob)
        .def_readwrite("shear_max", &GenConfig::shear_max)
        .def_readwrite("shift_max", &GenConfig::shift_max)
        .def_readwrite("dash_prob", &GenConfig::dash_prob)
        .def_readwrite("occlusion_prob", &GenConfig::occlusion_prob);

    py::class_<Sample>(m, "Sample")
        .def_readwrite("image", &Sample::image)
        .def_readwrite("lanes", &Sample::lanes);

    m.def("gen_sample", &gen_sample, py::arg("config"), py::arg("seed"), py::arg("index"));

    py::class_<RowSampleEntry>(m, "RowSampleEntry")
        .def(py::init<>())
        .def_readwrite("lanes", &RowSampleEntry::lanes)
        .def_readwrite("h_samples", &RowSampleEntry::h_samples)
        .def_readwrite("raw_file", &RowSampleEntry::raw_file);

    m.def("default_h_samples", &default_h_samples, py::arg("image_height"));
    m.def("lane_to_row_samples", &lane_to_row_samples, py::arg("lane"), py::arg("h_samples"),
          py::arg("image_height"));
    m.def("lane_from_row_samples", &lane_from_row_samples, py::arg("xs"), py::arg("h_samples"),
          py::arg("n_points"), py::arg("image_height"));
    m.def("read_jsonl", &read_jsonl, py::arg("path"));
    m.def("write_jsonl", &write_jsonl, py::arg("path"), py::arg("entries"));

    // --- model ------------------------------------------------------------

    py::class_<BackboneConfig>(m, "BackboneConfig")
        .def(py::init<>())
        .def_readwrite("stage_channels", &BackboneConfig::stage_channels)
        .def_readwrite("stage_strides", &BackboneConfig::stage_strides)
        .def_readwrite("feature_channels", &BackboneConfig::feature_channels)
        .def_readwrite("input_height", &BackboneConfig::input_height)
        .def_readwrite("input_width", &BackboneConfig::input_width)
        .def("total_stride", &BackboneConfig::total_stride)
        .def("feature_height", &BackboneConfig::feature_height)
        .def("feature_width", &BackboneConfig::feature_width);

    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("backbone", &ModelConfig::backbone)
        .def_readwrite("n_points", &ModelConfig::n_points)
        .def_readwrite("num_classes", &ModelConfig::num_classes)
        .def_readwrite("use_attention", &ModelConfig::use_attention)
        .def_readwrite("per_border_heads", &ModelConfig::per_border_heads);

    py::class_<ModelParams>(m, "ModelParams");

    m.def("init_params", &init_params, py::arg("config"), py::arg("n_anchors"), py::arg("seed"));
    m.def("save_params", &save_params, py::arg("path"), py::arg("params"));
    m.def("load_params", &load_params, py::arg("path"), py::arg("params"));

    py::class_<Proposal>(m, "Proposal")
        .def_readonly("anchor_id", &Proposal::anchor_id)
        .def_readonly("class_logits", &Proposal::class_logits)
        .def_readonly("offsets", &Proposal::offsets)
        .def_readonly("length", &Proposal::length);

    m.def(
        "forward_proposals",
        [](const Tensor& image, ModelParams& params, const ModelConfig& config,
           const AnchorSet& anchors) {
            return to_proposals(model_forward(nullptr, image, params, config, anchors), anchors);
        },
        py::arg("image"), py::arg("params"), py::arg("config"), py::arg("anchors"),
        "Raw per-anchor head outputs for one image (no suppression).");
    m.def(
        "decode_lanes",
        [](const Tensor& image, ModelParams& params, const ModelConfig& config,
           const AnchorSet& anchors) {
            return decode_batch(model_forward(nullptr, image, params, config, anchors), anchors);
        },
        py::arg("image"), py::arg("params"), py::arg("config"), py::arg("anchors"),
        "Every anchor decoded to a lane (no suppression).");

    // --- inference, scoring, benchmarking ---------------------------------

    py::class_<InferParams>(m, "InferParams")
        .def(py::init<>())
        .def_readwrite("confidence", &InferParams::confidence)
        .def_readwrite("nms_distance", &InferParams::nms_distance)
        .def_readwrite("max_lanes", &InferParams::max_lanes);

    m.def("infer_lanes", &infer_lanes, py::arg("image"), py::arg("params"), py::arg("config"),
          py::arg("anchors"), py::arg("infer"));

    py::class_<RowAccuracyConfig>(m, "RowAccuracyConfig")
        .def(py::init<>())
        .def_readwrite("pixel_threshold", &RowAccuracyConfig::pixel_threshold)
        .def_readwrite("match_threshold", &RowAccuracyConfig::match_threshold);

    py::class_<RowAccuracyResult>(m, "RowAccuracyResult")
        .def_readonly("accuracy", &RowAccuracyResult::accuracy)
        .def_readonly("fp_rate", &RowAccuracyResult::fp_rate)
        .def_readonly("fn_rate", &RowAccuracyResult::fn_rate)
        .def_readonly("tp", &RowAccuracyResult::tp)
        .def_readonly("fp", &RowAccuracyResult::fp)
        .def_readonly("fn", &RowAccuracyResult::fn)
        .def_readonly("correct_points", &RowAccuracyResult::correct_points)
        .def_readonly("total_points", &RowAccuracyResult::total_points);

    m.def("score_row_accuracy", &score_row_accuracy, py::arg("predictions"),
          py::arg("ground_truth"), py::arg("config") = RowAccuracyConfig{});

    py::class_<MaskF1Config>(m, "MaskF1Config")
        .def(py::init<>())
        .def_readwrite("lane_width", &MaskF1Config::lane_width)
        .def_readwrite("iou_threshold", &MaskF1Config::iou_threshold);

    py::class_<MaskF1Result>(m, "MaskF1Result")
        .def_readonly("tp", &MaskF1Result::tp)
        .def_readonly("fp", &MaskF1Result::fp)
        .def_readonly("fn", &MaskF1Result::fn)
        .def_readonly("precision", &MaskF1Result::precision)
        .def_readonly("recall", &MaskF1Result::recall)
        .def_readonly("f1", &MaskF1Result::f1);

    m.def("lane_mask_iou", &lane_mask_iou, py::arg("a"), py::arg("b"), py::arg("image_height"),
          py::arg("image_width"), py::arg("lane_width"));
    m.def("score_mask_f1", &score_mask_f1, py::arg("predictions"), py::arg("ground_truth"),
          py::arg("image_height"), py::arg("image_width"), py::arg("config") = MaskF1Config{});

    py::class_<BenchConfig>(m, "BenchConfig")
        .def(py::init<>())
        .def_readwrite("warmup", &BenchConfig::warmup)
        .def_readwrite("reps", &BenchConfig::reps);

    py::class_<BenchResult>(m, "BenchResult")
        .def_readonly("seconds_per_image", &BenchResult::seconds_per_image)
        .def_readonly("fps", &BenchResult::fps)
        .def_readonly("macs_per_image", &BenchResult::macs_per_image);

    m.def("benchmark_forward", &benchmark_forward, py::arg("image"), py::arg("params"),
          py::arg("config"), py::arg("anchors"), py::arg("bench") = BenchConfig{});

    m.def("mac_total", &mac_total, "Multiply-accumulate count since the last reset.");
    m.def("reset_mac_counter", &reset_mac_counter);

    // --- training ---------------------------------------------------------

    py::class_<LossConfig>(m, "LossConfig")
        .def(py::init<>())
        .def_readwrite("lambda_cls", &LossConfig::lambda)
        .def_readwrite("focal_gamma", &LossConfig::focal_gamma)
        .def_readwrite("focal_alpha", &LossConfig::focal_alpha)
        .def_readwrite("use_cross_entropy", &LossConfig::use_cross_entropy);

    py::class_<OptimConfig>(m, "OptimConfig")
        .def(py::init<>())
        .def_readwrite("method", &OptimConfig::method)
        .def_readwrite("learning_rate", &OptimConfig::learning_rate)
        .def_readwrite("beta1", &OptimConfig::beta1)
        .def_readwrite("beta2", &OptimConfig::beta2)
        .def_readwrite("epsilon", &OptimConfig::epsilon)
        .def_readwrite("momentum", &OptimConfig::momentum);

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("epochs", &TrainConfig::epochs)
        .def_readwrite("tau_positive", &TrainConfig::tau_positive)
        .def_readwrite("tau_negative", &TrainConfig::tau_negative)
        .def_readwrite("nms_distance", &TrainConfig::nms_distance)
        .def_readwrite("loss", &TrainConfig::loss)
        .def_readwrite("optim", &TrainConfig::optim)
        .def_readwrite("shuffle", &TrainConfig::shuffle)
        .def_readwrite("shuffle_seed", &TrainConfig::shuffle_seed)
        .def_readwrite("checkpoint_dir", &TrainConfig::checkpoint_dir);

    py::class_<EpochStats>(m, "EpochStats")
        .def_readonly("epoch", &EpochStats::epoch)
        .def_readonly("mean_loss", &EpochStats::mean_loss)
        .def_readonly("mean_classification", &EpochStats::mean_classification)
        .def_readonly("mean_regression", &EpochStats::mean_regression);

    m.def(
        "train_model",
        [](ModelParams& params, const ModelConfig& model_config, const AnchorSet& anchors,
           const std::vector<Tensor>& images, const std::vector<std::vector<Lane>>& labels,
           const TrainConfig& config) {
            return train_model(params, model_config, anchors, images, labels, config);
        },
        py::arg("params"), py::arg("model_config"), py::arg("anchors"), py::arg("images"),
        py::arg("labels"), py::arg("config"));
}

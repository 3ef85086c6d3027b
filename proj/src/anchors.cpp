#include "laneatt/anchors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "laneatt/config.hpp"
#include "laneatt/errors.hpp"
#include "laneatt/matching.hpp"

namespace laneatt {

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt_double_list(const std::vector<double>& vs) {
    std::string out;
    for (std::size_t i = 0; i < vs.size(); ++i) {
        if (i) out += ",";
        out += fmt_double(vs[i]);
    }
    return out;
}

/// Config with the bottom-angle default filled in.
AnchorGenConfig effective_config(AnchorGenConfig config) {
    if (config.bottom_angles.empty()) config.bottom_angles = default_bottom_angles();
    return config;
}

void check_angles(const std::vector<double>& angles, const std::string& field) {
    if (angles.empty()) throw ConfigError(field, "angle list must not be empty");
    for (double a : angles) {
        if (!(a > 0.0 && a < 180.0)) {
            throw ConfigError(field, "angle " + fmt_double(a) +
                                         " is parallel to the border rows or out of (0, 180)");
        }
    }
}

}  // namespace

std::string border_name(Border b) {
    switch (b) {
        case Border::kLeft: return "left";
        case Border::kBottom: return "bottom";
        case Border::kRight: return "right";
    }
    throw Error("unreachable border value");
}

Border border_from_name(const std::string& name) {
    if (name == "left") return Border::kLeft;
    if (name == "bottom") return Border::kBottom;
    if (name == "right") return Border::kRight;
    throw DataError("unknown border '" + name + "'");
}

double cot_deg(double theta_deg) {
    if (theta_deg == 90.0) return 0.0;
    const double rad = theta_deg * std::numbers::pi / 180.0;
    return std::cos(rad) / std::sin(rad);
}

std::vector<double> default_bottom_angles() {
    std::vector<double> out;
    out.reserve(14);
    for (int k = 0; k < 14; ++k) out.push_back(15.0 + k * (150.0 / 13.0));
    return out;
}

void validate_anchor_config(const AnchorGenConfig& config) {
    const AnchorGenConfig cfg = effective_config(config);
    check_angles(cfg.left_angles, "anchors.left_angles");
    check_angles(cfg.right_angles, "anchors.right_angles");
    check_angles(cfg.bottom_angles, "anchors.bottom_angles");
    if (cfg.left_origins < 1) throw ConfigError("anchors.left_origins", "must be positive");
    if (cfg.right_origins < 1) throw ConfigError("anchors.right_origins", "must be positive");
    if (cfg.bottom_origins < 1) throw ConfigError("anchors.bottom_origins", "must be positive");
    if (cfg.n_points < 2) throw ConfigError("anchors.n_points", "need at least 2 grid rows");
    if (cfg.stride < 1) throw ConfigError("anchors.stride", "must be at least 1");
}

std::vector<int> project_anchor(const Anchor& anchor, int feature_height, int feature_width,
                                int stride) {
    if (stride < 1) throw ConfigError("anchors.stride", "must be at least 1");
    if (!(anchor.theta_deg > 0.0 && anchor.theta_deg < 180.0)) {
        throw ConfigError("anchors.theta", "angle must lie strictly inside (0, 180)");
    }
    if (feature_height < 1 || feature_width < 1) {
        throw ConfigError("anchors.feature_size", "feature map must be non-empty");
    }
    const double cot = cot_deg(anchor.theta_deg);
    const double x0 = anchor.x_orig / stride;
    const double y0 = anchor.y_orig / stride;
    std::vector<int> cols(static_cast<std::size_t>(feature_height));
    for (int j = 0; j < feature_height; ++j) {
        double x = std::floor(cot * (j - y0) + x0);
        x = std::clamp(x, -1.0e9, 1.0e9);  // keep the int cast defined for extreme angles
        cols[static_cast<std::size_t>(j)] = static_cast<int>(x);
    }
    return cols;
}

AnchorSet generate_anchors(const AnchorGenConfig& config, int image_height, int image_width) {
    validate_anchor_config(config);
    const AnchorGenConfig cfg = effective_config(config);
    if (image_height < 1 || image_width < 1) {
        throw ConfigError("anchors.image_size", "image must be non-empty");
    }
    if (image_height % cfg.stride != 0 || image_width % cfg.stride != 0) {
        throw ConfigError("anchors.stride", "image size " + std::to_string(image_width) + "x" +
                                                std::to_string(image_height) +
                                                " not divisible by stride " +
                                                std::to_string(cfg.stride));
    }
    const int fh = image_height / cfg.stride;
    const int fw = image_width / cfg.stride;

    // Side origin heights snap to the lane grid so every origin has a valid
    // start row; a single origin degenerates to the border's bottom end.
    auto side_ys = [&](int count) {
        std::vector<double> ys;
        ys.reserve(static_cast<std::size_t>(count));
        for (int k = 0; k < count; ++k) {
            const double y = count == 1 ? 0.0 : k * static_cast<double>(image_height) / (count - 1);
            ys.push_back(grid_y(nearest_grid_row(y, cfg.n_points, image_height), cfg.n_points,
                                image_height));
        }
        return ys;
    };

    AnchorSet set;
    set.config = cfg;
    set.image_height = image_height;
    set.image_width = image_width;

    auto emit = [&](double x, double y, double theta, Border border) {
        Anchor a;
        a.x_orig = x;
        a.y_orig = y;
        a.theta_deg = theta;
        a.border = border;
        a.id = static_cast<int>(set.anchors.size());
        a.feature_cols = project_anchor(a, fh, fw, cfg.stride);
        set.anchors.push_back(std::move(a));
    };

    const std::vector<double> left_ys = side_ys(cfg.left_origins);
    for (int k = cfg.left_origins - 1; k >= 0; --k) {  // top to bottom
        for (double theta : cfg.left_angles) emit(0.0, left_ys[static_cast<std::size_t>(k)], theta, Border::kLeft);
    }
    for (int k = 0; k < cfg.bottom_origins; ++k) {  // left to right
        const double x = cfg.bottom_origins == 1
                             ? image_width / 2.0
                             : k * static_cast<double>(image_width) / (cfg.bottom_origins - 1);
        for (double theta : cfg.bottom_angles) emit(x, 0.0, theta, Border::kBottom);
    }
    const std::vector<double> right_ys = side_ys(cfg.right_origins);
    for (int k = cfg.right_origins - 1; k >= 0; --k) {  // top to bottom
        for (double theta : cfg.right_angles) emit(static_cast<double>(image_width), right_ys[static_cast<std::size_t>(k)], theta, Border::kRight);
    }
    return set;
}

Lane anchor_to_lane(const Anchor& anchor, int n_points, double image_height) {
    Lane lane;
    lane.xs.resize(static_cast<std::size_t>(n_points));
    for (int i = 0; i < n_points; ++i) {
        lane.xs[static_cast<std::size_t>(i)] = anchor.x_at(grid_y(i, n_points, image_height));
    }
    lane.s = nearest_grid_row(anchor.y_orig, n_points, image_height);
    lane.e = n_points - 1;
    validate_lane(lane);
    return lane;
}

std::vector<int> positive_counts(const AnchorSet& set,
                                 const std::vector<std::vector<Lane>>& training_samples,
                                 double tau_positive) {
    if (training_samples.empty()) {
        throw DataError("anchor filtering needs at least one training sample");
    }
    std::vector<Lane> anchor_lanes;
    anchor_lanes.reserve(set.anchors.size());
    for (const Anchor& a : set.anchors) {
        anchor_lanes.push_back(anchor_to_lane(a, set.config.n_points, set.image_height));
    }
    std::vector<int> counts(set.anchors.size(), 0);
    for (const auto& ground_truths : training_samples) {
        // tau_n == tau_p makes "positive" exactly "distance < tau_positive".
        const AssignmentResult assignment =
            assign_targets(anchor_lanes, ground_truths, tau_positive, tau_positive);
        for (std::size_t a = 0; a < counts.size(); ++a) {
            if (assignment.anchors[a].label == AnchorLabel::kPositive) counts[a] += 1;
        }
    }
    return counts;
}

AnchorSet filter_anchors(const AnchorSet& set,
                         const std::vector<std::vector<Lane>>& training_samples, int n_keep,
                         double tau_positive) {
    if (n_keep < 1 || n_keep > set.size()) {
        throw ConfigError("filter.n_keep", "must lie in [1, " + std::to_string(set.size()) + "]");
    }
    const std::vector<int> counts = positive_counts(set, training_samples, tau_positive);

    std::vector<int> order(counts.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return counts[static_cast<std::size_t>(a)] > counts[static_cast<std::size_t>(b)]; });
    order.resize(static_cast<std::size_t>(n_keep));
    std::sort(order.begin(), order.end());  // restore original anchor order

    AnchorSet kept;
    kept.config = set.config;
    kept.image_height = set.image_height;
    kept.image_width = set.image_width;
    kept.anchors.reserve(order.size());
    for (int idx : order) {
        Anchor a = set.anchors[static_cast<std::size_t>(idx)];
        a.id = static_cast<int>(kept.anchors.size());
        kept.anchors.push_back(std::move(a));
    }
    return kept;
}

// --- persistence ----------------------------------------------------------

AnchorGenConfig read_anchor_config(const std::string& path) {
    const KeyValueMap map = parse_key_value_file(path);
    reject_unknown_keys(map,
                        {"left_angles", "right_angles", "bottom_angles", "left_origins",
                         "right_origins", "bottom_origins", "n_points", "stride"},
                        path);
    AnchorGenConfig defaults;
    AnchorGenConfig cfg;
    cfg.left_angles = config_double_list(map, "left_angles", defaults.left_angles);
    cfg.right_angles = config_double_list(map, "right_angles", defaults.right_angles);
    cfg.bottom_angles = config_double_list(map, "bottom_angles", default_bottom_angles());
    cfg.left_origins = config_int(map, "left_origins", defaults.left_origins);
    cfg.right_origins = config_int(map, "right_origins", defaults.right_origins);
    cfg.bottom_origins = config_int(map, "bottom_origins", defaults.bottom_origins);
    cfg.n_points = config_int(map, "n_points", defaults.n_points);
    cfg.stride = config_int(map, "stride", defaults.stride);
    validate_anchor_config(cfg);
    return cfg;
}

void write_anchor_config(const AnchorGenConfig& config, const std::string& path) {
    const AnchorGenConfig cfg = effective_config(config);
    std::ofstream out(path);
    if (!out) throw DataError("cannot open anchor config for writing: " + path);
    out << "# anchor generation parameters\n";
    out << "left_angles = " << fmt_double_list(cfg.left_angles) << "\n";
    out << "right_angles = " << fmt_double_list(cfg.right_angles) << "\n";
    out << "bottom_angles = " << fmt_double_list(cfg.bottom_angles) << "\n";
    out << "left_origins = " << cfg.left_origins << "\n";
    out << "right_origins = " << cfg.right_origins << "\n";
    out << "bottom_origins = " << cfg.bottom_origins << "\n";
    out << "n_points = " << cfg.n_points << "\n";
    out << "stride = " << cfg.stride << "\n";
    if (!out) throw DataError("write failed for anchor config: " + path);
}

void export_anchor_csv(const AnchorSet& set, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open anchor CSV for writing: " + path);
    out << "id,border,x_orig,y_orig,theta\n";
    for (const Anchor& a : set.anchors) {
        out << a.id << "," << border_name(a.border) << "," << fmt_double(a.x_orig) << ","
            << fmt_double(a.y_orig) << "," << fmt_double(a.theta_deg) << "\n";
    }
    if (!out) throw DataError("write failed for anchor CSV: " + path);
}

AnchorSet import_anchor_csv(const std::string& path, const AnchorGenConfig& config,
                            int image_height, int image_width) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open anchor CSV: " + path);
    const AnchorGenConfig cfg = effective_config(config);
    validate_anchor_config(cfg);
    if (image_height % cfg.stride != 0 || image_width % cfg.stride != 0) {
        throw ConfigError("anchors.stride", "image size not divisible by stride");
    }
    const int fh = image_height / cfg.stride;
    const int fw = image_width / cfg.stride;

    AnchorSet set;
    set.config = cfg;
    set.image_height = image_height;
    set.image_width = image_width;

    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1) {
            if (line != "id,border,x_orig,y_orig,theta") {
                throw DataError("unexpected anchor CSV header", line_no);
            }
            continue;
        }
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string id_s, border_s, x_s, y_s, theta_s, extra;
        if (!std::getline(row, id_s, ',') || !std::getline(row, border_s, ',') ||
            !std::getline(row, x_s, ',') || !std::getline(row, y_s, ',') ||
            !std::getline(row, theta_s, ',') || std::getline(row, extra, ',')) {
            throw DataError("expected 5 comma-separated fields", line_no);
        }
        Anchor a;
        try {
            a.id = std::stoi(id_s);
            a.x_orig = std::stod(x_s);
            a.y_orig = std::stod(y_s);
            a.theta_deg = std::stod(theta_s);
        } catch (const std::exception&) {
            throw DataError("malformed numeric field in anchor CSV", line_no);
        }
        a.border = border_from_name(border_s);
        if (a.id != static_cast<int>(set.anchors.size())) {
            throw DataError("anchor ids must be dense and ascending", line_no);
        }
        const double border_gap =
            a.border == Border::kLeft ? std::abs(a.x_orig)
            : a.border == Border::kRight ? std::abs(a.x_orig - image_width)
                                         : std::abs(a.y_orig);
        if (border_gap > 1e-6) {
            throw DataError("anchor origin does not lie on its declared border", line_no);
        }
        if (!(a.theta_deg > 0.0 && a.theta_deg < 180.0)) {
            throw DataError("anchor angle outside (0, 180)", line_no);
        }
        a.feature_cols = project_anchor(a, fh, fw, cfg.stride);
        set.anchors.push_back(std::move(a));
    }
    return set;
}

}  // namespace laneatt

#pragma once

#include <string>
#include <vector>

#include "laneatt/lane.hpp"

namespace laneatt {

/// Image border an anchor originates from. The top border never hosts
/// anchors. Coordinates follow the lane frame: x grows rightward, y grows
/// upward from the image bottom, and theta is measured in degrees from the
/// positive x axis turning toward increasing y (90 = straight up).
enum class Border { kLeft, kBottom, kRight };

std::string border_name(Border b);
Border border_from_name(const std::string& name);

/// cot(theta) with the vertical case pinned to exactly zero.
double cot_deg(double theta_deg);

struct Anchor {
    double x_orig = 0.0;
    double y_orig = 0.0;
    double theta_deg = 90.0;
    Border border = Border::kBottom;
    int id = 0;
    /// Cached feature-map column per feature row (row 0 = map bottom), from
    /// the generation config's stride. Values may fall outside [0, W_F);
    /// such rows pool zeros.
    std::vector<int> feature_cols;

    /// Continuous x of the anchor line at lane-frame height y (pixels).
    double x_at(double y) const { return cot_deg(theta_deg) * (y - y_orig) + x_orig; }
};

/// Anchor generation parameters. The defaults produce 2,782 anchors on the
/// stock grid: 72 origins per side border x 6 angles each, plus 137 bottom
/// origins x 14 angles.
struct AnchorGenConfig {
    std::vector<double> left_angles{72.0, 60.0, 49.0, 39.0, 30.0, 22.0};
    std::vector<double> right_angles{108.0, 120.0, 131.0, 141.0, 150.0, 158.0};
    std::vector<double> bottom_angles;  // empty -> default_bottom_angles()
    int left_origins = 72;
    int right_origins = 72;
    int bottom_origins = 137;
    int n_points = 72;  // lane grid rows; side origins sit on this grid
    int stride = 8;     // feature-map stride used for the projection cache
};

/// 14 angles evenly spanning 15..165 degrees (the default bottom fan).
std::vector<double> default_bottom_angles();

/// Throws ConfigError on empty angle lists, non-positive origin counts,
/// angles outside (0, 180), or a degenerate grid/stride.
void validate_anchor_config(const AnchorGenConfig& config);

struct AnchorSet {
    std::vector<Anchor> anchors;  // ids dense 0..N-1 in order
    AnchorGenConfig config;
    int image_height = 0;
    int image_width = 0;

    int size() const { return static_cast<int>(anchors.size()); }
};

/// Builds the anchor set in a fixed order: left border top-to-bottom, bottom
/// border left-to-right, right border top-to-bottom; angles in config order
/// within each origin. Side origin heights snap onto the lane grid.
/// image_height and image_width must be divisible by config.stride.
AnchorSet generate_anchors(const AnchorGenConfig& config, int image_height, int image_width);

/// Feature-map column per feature row (row 0 = map bottom, counting up):
/// x_j = floor(cot(theta) * (j - y_orig/stride) + x_orig/stride).
/// Entries outside [0, feature_width) mark off-map rows.
std::vector<int> project_anchor(const Anchor& anchor, int feature_height, int feature_width,
                                int stride);

/// The anchor line sampled on the lane grid with full range
/// [start row, n_points-1]; the start row comes from y_orig.
Lane anchor_to_lane(const Anchor& anchor, int n_points, double image_height);

/// Keeps the n_keep anchors most frequently assigned positive (distance
/// below tau_positive to some ground truth) over the training samples.
/// Ties prefer the lower anchor id; survivor order is preserved and ids are
/// re-densified. Throws DataError on an empty sample list.
AnchorSet filter_anchors(const AnchorSet& set,
                         const std::vector<std::vector<Lane>>& training_samples, int n_keep,
                         double tau_positive);

/// Positive-assignment counts per anchor over the samples (the quantity
/// filter_anchors ranks by), exposed for inspection and testing.
std::vector<int> positive_counts(const AnchorSet& set,
                                 const std::vector<std::vector<Lane>>& training_samples,
                                 double tau_positive);

// --- persistence ----------------------------------------------------------

/// Anchor config as a key=value file (angles as comma lists).
AnchorGenConfig read_anchor_config(const std::string& path);
void write_anchor_config(const AnchorGenConfig& config, const std::string& path);

/// CSV export/import: header `id,border,x_orig,y_orig,theta`, one anchor per
/// row. Import recomputes the projection cache from `config` and validates
/// dense ids.
void export_anchor_csv(const AnchorSet& set, const std::string& path);
AnchorSet import_anchor_csv(const std::string& path, const AnchorGenConfig& config,
                            int image_height, int image_width);

}  // namespace laneatt

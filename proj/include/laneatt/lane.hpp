#pragma once

#include <cstddef>
#include <vector>

#include "laneatt/errors.hpp"

namespace laneatt {

/// A lane as x-coordinates sampled on a fixed vertical grid. Grid row 0 is
/// the image bottom and row n_points-1 the top; row i sits at lane-frame
/// height y_i = i * H_I / (n_points - 1), measured upward in pixels.
/// xs[i] is meaningful only for s <= i <= e.
struct Lane {
    std::vector<double> xs;
    int s = 0;
    int e = 0;
    double score = 0.0;
    int category = 1;  // class id in [1..K]; 1 for single-class setups

    int n_points() const { return static_cast<int>(xs.size()); }
};

/// Throws ShapeError unless 0 <= s <= e <= n_points-1 with a non-empty grid.
inline void validate_lane(const Lane& lane) {
    if (lane.xs.empty()) throw ShapeError("lane has an empty x grid");
    if (lane.s < 0 || lane.e < lane.s || lane.e >= lane.n_points()) {
        throw ShapeError("lane range [" + std::to_string(lane.s) + "," + std::to_string(lane.e) +
                         "] invalid for " + std::to_string(lane.n_points()) + " grid rows");
    }
}

/// Lane-frame height (pixels above the image bottom) of grid row `row`.
inline double grid_y(int row, int n_points, double image_height) {
    return row * image_height / (n_points - 1);
}

/// Grid row nearest to lane-frame height `y`, clamped to the grid.
inline int nearest_grid_row(double y, int n_points, double image_height) {
    const int row = static_cast<int>(y * (n_points - 1) / image_height + 0.5);
    return row < 0 ? 0 : (row > n_points - 1 ? n_points - 1 : row);
}

}  // namespace laneatt

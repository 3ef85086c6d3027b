#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "laneatt/lane.hpp"
#include "laneatt/tensor.hpp"

namespace laneatt {

/// 8-bit RGB raster, row 0 at the image top. The lane frame's y axis points
/// the other way: a pixel row r covers lane-frame height H - r - 0.5.
struct Image {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;  // interleaved RGB, row-major

    Image() = default;
    Image(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0) {}

    std::uint8_t& at(int row, int col, int channel) {
        return pixels[(static_cast<std::size_t>(row) * width + col) * 3 + channel];
    }
    std::uint8_t at(int row, int col, int channel) const {
        return pixels[(static_cast<std::size_t>(row) * width + col) * 3 + channel];
    }
};

/// [3,H,W] float tensor scaled to [0,1], channel-major, rows top-down.
Tensor image_to_tensor(const Image& image);

/// Binary PPM (P6, maxval 255). read_ppm throws DataError on malformed
/// headers, wrong maxval, or truncated payloads.
void write_ppm(const std::string& path, const Image& image);
Image read_ppm(const std::string& path);

// --- synthetic scenes -----------------------------------------------------

/// Road-scene generator: lanes curve from the bottom toward a common
/// vanishing point, optionally flipped and sheared (the same transform is
/// applied to the rendered strokes and the returned ground truth), with
/// per-pixel noise, optional dashed markings and an optional occluding box.
struct GenConfig {
    int image_height = 360;
    int image_width = 640;
    int n_points = 72;   // ground-truth grid rows
    int min_lanes = 2;
    int max_lanes = 5;
    double flip_prob = 0.5;
    double shear_max = 0.08;    // horizontal shear per unit height
    double shift_max = 8.0;     // horizontal translation, pixels
    double dash_prob = 0.4;
    double occlusion_prob = 0.3;
};

void validate_gen_config(const GenConfig& config);

struct Sample {
    Image image;
    std::vector<Lane> lanes;
};

/// Deterministic: the stream is mix_seed(seed, index), so samples are
/// reproducible individually and independent of generation order.
Sample gen_sample(const GenConfig& config, std::uint64_t seed, int index);

/// Blends a lane's polyline into the image (alpha-composited stroke of the
/// given half-width), interpolating between grid rows over [s, e].
void draw_lane(Image& image, const Lane& lane, std::uint8_t r, std::uint8_t g, std::uint8_t b,
               double half_width = 2.0);

// --- row-sampled label format (JSON lines) --------------------------------

/// One labeled image: per lane, an x for every entry of `h_samples` (image
/// rows, top-down), with -2 marking rows the lane does not reach.
struct RowSampleEntry {
    std::vector<std::vector<int>> lanes;
    std::vector<int> h_samples;
    std::string raw_file;
};

/// Image rows covering the lower ~3/4 of the frame at a uniform step; the
/// default sampling grid for generated labels.
std::vector<int> default_h_samples(int image_height);

/// Lane -> per-h_sample x values (rounded, -2 outside the lane's extent).
std::vector<int> lane_to_row_samples(const Lane& lane, const std::vector<int>& h_samples,
                                     double image_height);

/// Inverse: piecewise-linear interpolation of the valid samples onto the
/// n_points grid. Throws DataError when no sample is valid.
Lane lane_from_row_samples(const std::vector<int>& xs, const std::vector<int>& h_samples,
                           int n_points, double image_height);

RowSampleEntry sample_to_entry(const Sample& sample, const std::vector<int>& h_samples,
                               const std::string& raw_file);

/// One JSON object per line with keys "lanes", "h_samples", "raw_file".
/// Reading reports the offending line on parse errors.
std::vector<RowSampleEntry> read_jsonl(const std::string& path);
void write_jsonl(const std::string& path, const std::vector<RowSampleEntry>& entries);

// --- polyline label format ------------------------------------------------

using Polyline = std::vector<std::pair<double, double>>;  // (x, image row y)

/// One lane per line as whitespace-separated "x1 y1 x2 y2 ..." pairs.
std::vector<Polyline> read_lines_file(const std::string& path);
void write_lines_file(const std::string& path, const std::vector<Polyline>& lanes);

/// Lane grid rows s..e as polyline points, bottom of the image first.
Polyline lane_to_polyline(const Lane& lane, double image_height);

/// Piecewise-linear resampling of a polyline onto the lane grid. Throws
/// DataError on polylines with fewer than two points.
Lane lane_from_polyline(const Polyline& points, int n_points, double image_height);

// --- generated dataset layout ---------------------------------------------

/// Writes `count` samples under `root`: images/NNNNNN.ppm, labels.jsonl and
/// a meta.cfg recording the geometry. Returns the label entries.
std::vector<RowSampleEntry> write_dataset(const std::string& root, const GenConfig& config,
                                          std::uint64_t seed, int count);

struct DatasetMeta {
    int image_height = 0;
    int image_width = 0;
    int n_points = 0;
    int count = 0;
};

DatasetMeta read_dataset_meta(const std::string& root);

}  // namespace laneatt

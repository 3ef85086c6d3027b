#include "laneatt/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "laneatt/config.hpp"
#include "laneatt/errors.hpp"
#include "laneatt/rng.hpp"

namespace laneatt {

namespace {

std::uint8_t clamp_byte(double v) {
    return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
}

/// Stateless per-pixel hash used for reproducible image noise.
std::uint64_t pixel_hash(std::uint64_t seed, std::uint64_t k) {
    std::uint64_t z = seed + (k + 1) * 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double hash_unit(std::uint64_t seed, std::uint64_t k) {
    return static_cast<double>(pixel_hash(seed, k) >> 11) * 0x1.0p-53;
}

}  // namespace

Tensor image_to_tensor(const Image& image) {
    if (image.height < 1 || image.width < 1 ||
        image.pixels.size() != static_cast<std::size_t>(image.height) * image.width * 3) {
        throw ShapeError("image buffer does not match its dimensions");
    }
    Tensor t({3, image.height, image.width});
    const std::size_t plane = static_cast<std::size_t>(image.height) * image.width;
    for (int r = 0; r < image.height; ++r) {
        for (int x = 0; x < image.width; ++x) {
            const std::size_t p = static_cast<std::size_t>(r) * image.width + x;
            for (int c = 0; c < 3; ++c) {
                t.data[static_cast<std::size_t>(c) * plane + p] = image.at(r, x, c) / 255.0;
            }
        }
    }
    return t;
}

void write_ppm(const std::string& path, const Image& image) {
    if (image.pixels.size() != static_cast<std::size_t>(image.height) * image.width * 3) {
        throw ShapeError("image buffer does not match its dimensions");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << "P6\n" << image.width << " " << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()),
              static_cast<std::streamsize>(image.pixels.size()));
    if (!out) throw DataError("short write: " + path);
}

namespace {

/// Reads the next header token, skipping whitespace and '#' comments.
std::string ppm_token(std::istream& in, const std::string& path) {
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            c = in.get();
        } else {
            break;
        }
    }
    if (c == EOF) throw DataError("truncated header: " + path);
    std::string token;
    while (c != EOF && !std::isspace(c)) {
        token.push_back(static_cast<char>(c));
        c = in.get();
    }
    return token;
}

int ppm_int(std::istream& in, const std::string& path, const char* what) {
    const std::string tok = ppm_token(in, path);
    try {
        std::size_t used = 0;
        const int v = std::stoi(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw DataError(std::string("bad ") + what + " '" + tok + "': " + path);
    }
}

}  // namespace

Image read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    if (ppm_token(in, path) != "P6") throw DataError("not a binary PPM (P6): " + path);
    const int width = ppm_int(in, path, "width");
    const int height = ppm_int(in, path, "height");
    const int maxval = ppm_int(in, path, "maxval");
    if (width < 1 || height < 1 || width > 1 << 15 || height > 1 << 15) {
        throw DataError("unreasonable image dimensions: " + path);
    }
    if (maxval != 255) throw DataError("only maxval 255 is supported: " + path);
    // The header ends with exactly one whitespace byte (already consumed by
    // the tokenizer), so the payload starts here.
    Image image(height, width);
    in.read(reinterpret_cast<char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(image.pixels.size())) {
        throw DataError("truncated pixel data: " + path);
    }
    return image;
}

// --- synthetic scenes -----------------------------------------------------

void validate_gen_config(const GenConfig& config) {
    if (config.image_height < 32 || config.image_width < 32) {
        throw ConfigError("gen.image_size", "must be at least 32x32");
    }
    if (config.n_points < 8) throw ConfigError("gen.n_points", "need at least 8 grid rows");
    if (config.min_lanes < 1 || config.max_lanes < config.min_lanes || config.max_lanes > 8) {
        throw ConfigError("gen.lanes", "need 1 <= min_lanes <= max_lanes <= 8");
    }
    for (double p : {config.flip_prob, config.dash_prob, config.occlusion_prob}) {
        if (p < 0.0 || p > 1.0) throw ConfigError("gen.probability", "must lie in [0, 1]");
    }
    if (config.shear_max < 0.0 || config.shift_max < 0.0) {
        throw ConfigError("gen.augmentation", "shear/shift bounds must be non-negative");
    }
}

namespace {

struct CurveSpec {
    double x0 = 0.0;    // bottom x (lane frame y = 0)
    double x1 = 0.0;    // bend control x at mid height
    double x2 = 0.0;    // x at the vanishing height
    double y_start = 0.0;
    double y_end = 0.0;
    bool dashed = false;
    bool yellow = false;
};

struct SceneSpec {
    double y_vp = 0.0;  // lane-frame height where lanes converge
    bool flip = false;
    double shear = 0.0;
    double shift = 0.0;
    double width = 0.0;
    std::vector<CurveSpec> curves;

    /// Quadratic-in-t curve with y(t) linear, then flip/shear/shift. The
    /// ground truth and the renderer both sample this exact function.
    double x_at(const CurveSpec& c, double y) const {
        const double t = std::clamp(y / y_vp, 0.0, 1.05);
        double x = (1 - t) * (1 - t) * c.x0 + 2 * t * (1 - t) * c.x1 + t * t * c.x2;
        if (flip) x = width - x;
        return x + shear * y + shift;
    }
};

void blend(Image& img, int row, int col, double alpha, double r, double g, double b) {
    if (row < 0 || row >= img.height || col < 0 || col >= img.width || alpha <= 0.0) return;
    img.at(row, col, 0) = clamp_byte((1 - alpha) * img.at(row, col, 0) + alpha * r);
    img.at(row, col, 1) = clamp_byte((1 - alpha) * img.at(row, col, 1) + alpha * g);
    img.at(row, col, 2) = clamp_byte((1 - alpha) * img.at(row, col, 2) + alpha * b);
}

}  // namespace

Sample gen_sample(const GenConfig& config, std::uint64_t seed, int index) {
    validate_gen_config(config);
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(index)));
    const double H = config.image_height;
    const double W = config.image_width;

    SceneSpec scene;
    scene.width = W;
    const double vp_x = W * (0.5 + rng.uniform(-0.12, 0.12));
    scene.y_vp = H * rng.uniform(0.62, 0.80);
    const int lane_count =
        config.min_lanes + static_cast<int>(rng.next_below(
                               static_cast<std::uint64_t>(config.max_lanes - config.min_lanes + 1)));
    scene.flip = rng.next_double() < config.flip_prob;
    scene.shear = rng.uniform(-config.shear_max, config.shear_max);
    scene.shift = rng.uniform(-config.shift_max, config.shift_max);
    const std::uint64_t noise_seed = rng.next_u64();

    for (int i = 0; i < lane_count; ++i) {
        CurveSpec c;
        const double slot = W * (i + 1) / (lane_count + 1);
        c.x0 = slot + rng.uniform(-0.35, 0.35) * W / (lane_count + 1);
        c.x1 = 0.5 * (c.x0 + vp_x) + rng.uniform(-0.06, 0.06) * W;
        c.x2 = vp_x + rng.uniform(-0.015, 0.015) * W;
        c.y_end = scene.y_vp * rng.uniform(0.55, 0.92);
        c.y_start = rng.next_double() < 0.2 ? scene.y_vp * rng.uniform(0.02, 0.15) : 0.0;
        c.dashed = rng.next_double() < config.dash_prob;
        c.yellow = rng.next_double() < 0.2;
        scene.curves.push_back(c);
    }

    // Ground truth on the lane grid; degenerate or far-off-frame curves are
    // dropped from both the labels and the render.
    const double dy = H / (config.n_points - 1);
    std::vector<CurveSpec> kept;
    Sample sample;
    for (const CurveSpec& c : scene.curves) {
        Lane lane;
        lane.xs.resize(static_cast<std::size_t>(config.n_points));
        for (int i = 0; i < config.n_points; ++i) {
            lane.xs[static_cast<std::size_t>(i)] = scene.x_at(c, i * dy);
        }
        lane.s = std::clamp(static_cast<int>(std::ceil(c.y_start / dy - 1e-9)), 0,
                            config.n_points - 1);
        lane.e = std::clamp(static_cast<int>(std::floor(c.y_end / dy + 1e-9)), 0,
                            config.n_points - 1);
        if (lane.e - lane.s < 2) continue;
        const double x_bottom = lane.xs[static_cast<std::size_t>(lane.s)];
        if (x_bottom < -0.2 * W || x_bottom > 1.2 * W) continue;
        lane.score = 1.0;
        lane.category = 1;
        sample.lanes.push_back(std::move(lane));
        kept.push_back(c);
    }

    // Road surface: vertical gradient plus per-pixel noise.
    Image& img = sample.image;
    img = Image(config.image_height, config.image_width);
    for (int r = 0; r < img.height; ++r) {
        const double base = 62.0 + 38.0 * (static_cast<double>(r) / H);
        for (int x = 0; x < img.width; ++x) {
            const double noise =
                24.0 * hash_unit(noise_seed, static_cast<std::uint64_t>(r) * img.width + x) - 12.0;
            const std::uint8_t v = clamp_byte(base + noise);
            img.at(r, x, 0) = v;
            img.at(r, x, 1) = v;
            img.at(r, x, 2) = clamp_byte(base + noise - 4.0);
        }
    }

    // Markings: anti-aliased strokes that widen toward the viewer.
    for (const CurveSpec& c : kept) {
        const double cr = c.yellow ? 225.0 : 235.0;
        const double cg = c.yellow ? 205.0 : 235.0;
        const double cb = c.yellow ? 90.0 : 228.0;
        for (int r = 0; r < img.height; ++r) {
            const double y = H - r - 0.5;  // lane-frame height of this pixel row
            if (y < c.y_start || y > c.y_end) continue;
            if (c.dashed && std::fmod(y, 24.0) >= 15.0) continue;
            const double xc = scene.x_at(c, y);
            const double half = std::max(0.7, 1.0 + 2.2 * (1.0 - y / scene.y_vp));
            const int lo = static_cast<int>(std::floor(xc - half - 1.0));
            const int hi = static_cast<int>(std::ceil(xc + half + 1.0));
            for (int px = lo; px <= hi; ++px) {
                const double cov = std::clamp(half + 0.5 - std::abs(px - xc), 0.0, 1.0);
                blend(img, r, px, cov, cr, cg, cb);
            }
        }
    }

    // Optional occluding box (labels are unaffected).
    if (rng.next_double() < config.occlusion_prob) {
        const int r0 = static_cast<int>(H * rng.uniform(0.25, 0.60));
        const int rh = static_cast<int>(H * rng.uniform(0.06, 0.16));
        const int x0 = static_cast<int>(W * rng.uniform(0.0, 0.70));
        const int xw = static_cast<int>(W * rng.uniform(0.15, 0.35));
        for (int r = r0; r < std::min(img.height, r0 + rh); ++r) {
            for (int x = x0; x < std::min(img.width, x0 + xw); ++x) {
                const double noise =
                    8.0 * hash_unit(noise_seed ^ 0xD1CEull,
                                    static_cast<std::uint64_t>(r) * img.width + x);
                const std::uint8_t v = clamp_byte(36.0 + noise);
                img.at(r, x, 0) = v;
                img.at(r, x, 1) = v;
                img.at(r, x, 2) = v;
            }
        }
    }
    return sample;
}

void draw_lane(Image& image, const Lane& lane, std::uint8_t r, std::uint8_t g, std::uint8_t b,
               double half_width) {
    validate_lane(lane);
    const double H = image.height;
    const double dy = H / (static_cast<int>(lane.xs.size()) - 1);
    for (int row = 0; row < image.height; ++row) {
        const double y = H - row - 0.5;
        const double k = y / dy;
        if (k < lane.s - 0.5 || k > lane.e + 0.5) continue;
        const int i0 = std::clamp(static_cast<int>(std::floor(k)), lane.s, lane.e - 1 > lane.s ? lane.e - 1 : lane.s);
        const int i1 = std::min(i0 + 1, lane.e);
        const double frac = std::clamp(k - i0, 0.0, 1.0);
        const double xc = (1 - frac) * lane.xs[static_cast<std::size_t>(i0)] +
                          frac * lane.xs[static_cast<std::size_t>(i1)];
        const int lo = static_cast<int>(std::floor(xc - half_width - 1.0));
        const int hi = static_cast<int>(std::ceil(xc + half_width + 1.0));
        for (int px = lo; px <= hi; ++px) {
            const double cov = std::clamp(half_width + 0.5 - std::abs(px - xc), 0.0, 1.0);
            blend(image, row, px, 0.85 * cov, r, g, b);
        }
    }
}

// --- row-sampled labels ---------------------------------------------------

std::vector<int> default_h_samples(int image_height) {
    const int step = std::max(1, image_height / 72);
    std::vector<int> out;
    for (int h = image_height / 4; h < image_height; h += step) out.push_back(h);
    return out;
}

std::vector<int> lane_to_row_samples(const Lane& lane, const std::vector<int>& h_samples,
                                     double image_height) {
    validate_lane(lane);
    const int n = static_cast<int>(lane.xs.size());
    const double dy = image_height / (n - 1);
    std::vector<int> out;
    out.reserve(h_samples.size());
    for (int h : h_samples) {
        const double y = image_height - h;
        const double k = y / dy;
        if (k < lane.s - 1e-9 || k > lane.e + 1e-9) {
            out.push_back(-2);
            continue;
        }
        const int i0 = std::clamp(static_cast<int>(std::floor(k)), lane.s, std::max(lane.s, lane.e - 1));
        const int i1 = std::min(i0 + 1, lane.e);
        const double frac = std::clamp(k - i0, 0.0, 1.0);
        const double x = (1 - frac) * lane.xs[static_cast<std::size_t>(i0)] +
                         frac * lane.xs[static_cast<std::size_t>(i1)];
        out.push_back(static_cast<int>(std::lround(x)));
    }
    return out;
}

Lane lane_from_row_samples(const std::vector<int>& xs, const std::vector<int>& h_samples,
                           int n_points, double image_height) {
    if (xs.size() != h_samples.size()) {
        throw DataError("lane has " + std::to_string(xs.size()) + " xs for " +
                        std::to_string(h_samples.size()) + " h_samples");
    }
    std::vector<std::pair<double, double>> pts;  // (h, x), ascending h
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (xs[i] >= 0) pts.emplace_back(static_cast<double>(h_samples[i]), static_cast<double>(xs[i]));
    }
    if (pts.empty()) throw DataError("lane with no visible points");
    std::sort(pts.begin(), pts.end());

    Lane lane;
    lane.xs.assign(static_cast<std::size_t>(n_points), 0.0);
    const double dy = image_height / (n_points - 1);
    const double h_first = pts.front().first, h_last = pts.back().first;

    auto x_at_h = [&](double h) {
        if (h <= h_first) return pts.front().second;
        if (h >= h_last) return pts.back().second;
        auto it = std::lower_bound(pts.begin(), pts.end(), std::make_pair(h, -1e300));
        const auto hi = it;
        const auto lo = it - 1;
        const double span = hi->first - lo->first;
        const double frac = span > 0 ? (h - lo->first) / span : 0.0;
        return (1 - frac) * lo->second + frac * hi->second;
    };

    int s = -1, e = -1;
    for (int i = 0; i < n_points; ++i) {
        const double h = image_height - i * dy;
        lane.xs[static_cast<std::size_t>(i)] = x_at_h(h);
        if (h >= h_first - 1e-9 && h <= h_last + 1e-9) {
            if (s < 0) s = i;
            e = i;
        }
    }
    if (s < 0) {  // lane shorter than the grid spacing: snap to one row
        s = e = nearest_grid_row(image_height - 0.5 * (h_first + h_last), n_points, image_height);
    }
    lane.s = s;
    lane.e = e;
    lane.score = 1.0;
    return lane;
}

RowSampleEntry sample_to_entry(const Sample& sample, const std::vector<int>& h_samples,
                               const std::string& raw_file) {
    RowSampleEntry entry;
    entry.h_samples = h_samples;
    entry.raw_file = raw_file;
    for (const Lane& lane : sample.lanes) {
        entry.lanes.push_back(
            lane_to_row_samples(lane, h_samples, static_cast<double>(sample.image.height)));
    }
    return entry;
}

std::vector<RowSampleEntry> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open: " + path);
    std::vector<RowSampleEntry> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const nlohmann::json j = nlohmann::json::parse(line);
            RowSampleEntry entry;
            entry.lanes = j.at("lanes").get<std::vector<std::vector<int>>>();
            entry.h_samples = j.at("h_samples").get<std::vector<int>>();
            entry.raw_file = j.at("raw_file").get<std::string>();
            for (const auto& lane : entry.lanes) {
                if (lane.size() != entry.h_samples.size()) {
                    throw DataError("lane length does not match h_samples", line_no);
                }
            }
            out.push_back(std::move(entry));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(std::string("bad JSON: ") + e.what() + " in " + path, line_no);
        }
    }
    return out;
}

void write_jsonl(const std::string& path, const std::vector<RowSampleEntry>& entries) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    for (const RowSampleEntry& entry : entries) {
        nlohmann::json j;
        j["lanes"] = entry.lanes;
        j["h_samples"] = entry.h_samples;
        j["raw_file"] = entry.raw_file;
        out << j.dump() << '\n';
    }
    if (!out) throw DataError("short write: " + path);
}

// --- polyline labels ------------------------------------------------------

std::vector<Polyline> read_lines_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open: " + path);
    std::vector<Polyline> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ss(line);
        std::vector<double> nums;
        double v = 0.0;
        while (ss >> v) nums.push_back(v);
        if (!ss.eof()) throw DataError("non-numeric token in " + path, line_no);
        if (nums.empty()) continue;
        if (nums.size() % 2 != 0) throw DataError("odd coordinate count in " + path, line_no);
        Polyline lane;
        for (std::size_t i = 0; i < nums.size(); i += 2) lane.emplace_back(nums[i], nums[i + 1]);
        out.push_back(std::move(lane));
    }
    return out;
}

void write_lines_file(const std::string& path, const std::vector<Polyline>& lanes) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    char buf[64];
    for (const Polyline& lane : lanes) {
        for (std::size_t i = 0; i < lane.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.4f %.4f", lane[i].first, lane[i].second);
            out << buf << (i + 1 < lane.size() ? " " : "");
        }
        out << '\n';
    }
    if (!out) throw DataError("short write: " + path);
}

Polyline lane_to_polyline(const Lane& lane, double image_height) {
    validate_lane(lane);
    const int n = static_cast<int>(lane.xs.size());
    const double dy = image_height / (n - 1);
    Polyline out;
    for (int i = lane.s; i <= lane.e; ++i) {
        out.emplace_back(lane.xs[static_cast<std::size_t>(i)], image_height - i * dy);
    }
    return out;
}

Lane lane_from_polyline(const Polyline& points, int n_points, double image_height) {
    if (points.size() < 2) throw DataError("polyline needs at least two points");
    std::vector<std::pair<double, double>> pts;  // (lane-frame y, x) ascending y
    for (const auto& [x, h] : points) pts.emplace_back(image_height - h, x);
    std::sort(pts.begin(), pts.end());

    Lane lane;
    lane.xs.assign(static_cast<std::size_t>(n_points), 0.0);
    const double dy = image_height / (n_points - 1);
    const double y_min = pts.front().first, y_max = pts.back().first;
    if (!(y_max > y_min)) throw DataError("polyline spans no height");

    auto x_at_y = [&](double y) {
        if (y <= y_min) return pts.front().second;
        if (y >= y_max) return pts.back().second;
        auto hi = std::lower_bound(pts.begin(), pts.end(), std::make_pair(y, -1e300));
        auto lo = hi - 1;
        while (hi->first <= lo->first && hi + 1 != pts.end()) ++hi;  // skip duplicate heights
        const double span = hi->first - lo->first;
        const double frac = span > 0 ? (y - lo->first) / span : 0.0;
        return (1 - frac) * lo->second + frac * hi->second;
    };

    int s = -1, e = -1;
    for (int i = 0; i < n_points; ++i) {
        const double y = i * dy;
        lane.xs[static_cast<std::size_t>(i)] = x_at_y(y);
        if (y >= y_min - 1e-9 && y <= y_max + 1e-9) {
            if (s < 0) s = i;
            e = i;
        }
    }
    if (s < 0) s = e = nearest_grid_row(0.5 * (y_min + y_max), n_points, image_height);
    lane.s = s;
    lane.e = e;
    lane.score = 1.0;
    return lane;
}

// --- dataset layout -------------------------------------------------------

std::vector<RowSampleEntry> write_dataset(const std::string& root, const GenConfig& config,
                                          std::uint64_t seed, int count) {
    validate_gen_config(config);
    if (count < 1) throw ConfigError("gen.count", "need at least one sample");
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(root) / "images");

    const std::vector<int> h_samples = default_h_samples(config.image_height);
    std::vector<RowSampleEntry> entries;
    entries.reserve(static_cast<std::size_t>(count));
    char name[32];
    for (int k = 0; k < count; ++k) {
        const Sample sample = gen_sample(config, seed, k);
        std::snprintf(name, sizeof name, "%06d.ppm", k);
        const std::string rel = std::string("images/") + name;
        write_ppm((fs::path(root) / rel).string(), sample.image);
        entries.push_back(sample_to_entry(sample, h_samples, rel));
    }
    write_jsonl((fs::path(root) / "labels.jsonl").string(), entries);

    std::ofstream meta((fs::path(root) / "meta.cfg").string());
    meta << "image_height = " << config.image_height << "\n"
         << "image_width = " << config.image_width << "\n"
         << "n_points = " << config.n_points << "\n"
         << "count = " << count << "\n"
         << "seed = " << seed << "\n";
    if (!meta) throw DataError("cannot write dataset metadata under " + root);
    return entries;
}

DatasetMeta read_dataset_meta(const std::string& root) {
    namespace fs = std::filesystem;
    const KeyValueMap map = parse_key_value_file((fs::path(root) / "meta.cfg").string());
    reject_unknown_keys(map, {"image_height", "image_width", "n_points", "count", "seed"},
                        root + "/meta.cfg");
    DatasetMeta meta;
    meta.image_height = config_int(map, "image_height", 0);
    meta.image_width = config_int(map, "image_width", 0);
    meta.n_points = config_int(map, "n_points", 0);
    meta.count = config_int(map, "count", 0);
    if (meta.image_height < 1 || meta.image_width < 1 || meta.n_points < 2 || meta.count < 1) {
        throw DataError("incomplete dataset metadata under " + root);
    }
    return meta;
}

}  // namespace laneatt

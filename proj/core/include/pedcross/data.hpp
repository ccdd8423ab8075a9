#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pedcross/error.hpp"

namespace pedcross {

// Pixel-space box, upper-left (x1, y1) to lower-right (x2, y2).
struct BoundingBox {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    bool operator==(const BoundingBox&) const = default;
    double center_x() const { return 0.5 * (x1 + x2); }
    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
};

enum class CrossingLabel { kNotCrossing = 0, kCrossing = 1 };

std::string label_name(CrossingLabel l);
CrossingLabel label_from_name(const std::string& name);

// One pedestrian's full trajectory at 30 fps with consecutive frames
// starting at first_frame. critical_frame is the crossing onset for
// crossers and the last observable frame otherwise.
struct Track {
    std::string track_id;
    CrossingLabel label = CrossingLabel::kNotCrossing;
    int first_frame = 0;
    int critical_frame = 0;
    int image_w = 0, image_h = 0;
    std::vector<BoundingBox> boxes;

    bool operator==(const Track&) const = default;
    int last_frame() const { return first_frame + static_cast<int>(boxes.size()) - 1; }
    const BoundingBox& box_at_frame(int frame) const;
};

void validate_track(const Track& t);  // throws DataError

// Fixed-length observation slice ending at frame M, with TTE = A - M.
// `target` (boxes M+1..A) is present only when sliced for the decoder.
// Coordinates are raw pixels until normalize(); normalized windows keep
// the raw boxes alongside for reporting.
struct ObservationWindow {
    std::string track_id;
    int last_obs_frame = 0;  // M
    int tte_frames = 0;
    CrossingLabel label = CrossingLabel::kNotCrossing;
    int image_w = 0, image_h = 0;
    std::vector<BoundingBox> obs;
    std::vector<BoundingBox> target;
    bool normalized = false;
    std::vector<BoundingBox> raw_obs, raw_target;

    bool operator==(const ObservationWindow&) const = default;
};

// Rounds to 6 decimal places; every coordinate that reaches a window or
// a file goes through this, which is what makes the fixed 6-decimal
// serialization a lossless round trip and flipping an exact involution.
double quantize6(double v);
std::string fmt6(double v);

struct SliceOptions {
    int obs_len = 16;
    double overlap = 0.6;  // evaluation slicing uses 0 (stride = obs_len)
    int tte_min = 30;
    int tte_max = 60;
    bool with_target = false;
};

// Windows are anchored so the latest feasible M (closest to A) is always
// emitted, stepping back by stride = round(obs_len * (1 - overlap)).
// A too-short track yields an empty list.
std::vector<ObservationWindow> slice_track(const Track& t, const SliceOptions& opt);

// Horizontal mirror of observation and target boxes; label and TTE kept.
ObservationWindow flip_window(const ObservationWindow& w, int image_w);

// Flip-augments the minority class, then randomly undersamples whichever
// class is larger, leaving exactly equal counts. Training splits only.
std::vector<ObservationWindow> balance_training_split(std::vector<ObservationWindow> windows,
                                                      std::uint64_t seed);

// Coordinates scaled into [0, 1] by the image dimensions; raw boxes kept.
ObservationWindow normalize(const ObservationWindow& w, int image_w, int image_h);

enum class Domain { kA, kB };
std::string domain_name(Domain d);
Domain domain_from_name(const std::string& name);

struct Range {
    double lo = 0, hi = 0;
};

// Kinematic camera-plane scenario generator standing in for simulated
// urban footage: crossers drift laterally toward the image center while
// the box scale grows with ego approach; non-crossers walk parallel to
// the road or stand. Domains A and B differ in speed, geometry, and
// noise so transfer experiments have two distinct sources.
struct ScenarioConfig {
    Domain domain = Domain::kA;
    int n_pedestrians = 1000;
    double crossing_fraction = 0.25;
    std::uint64_t seed = 0;

    int image_w = 1920, image_h = 1080;
    int fps = 30;
    double focal_px = 672.0;       // ~110 deg horizontal FOV at 1920 px
    double road_half_width_m = 1.75;
    double camera_height_m = 1.4;
    Range walk_speed_mps{0.8, 2.0};     // crosser lateral speed
    Range closing_speed_mps{4.0, 9.0};  // ego-relative approach speed
    Range side_offset_m{2.8, 5.5};      // non-crosser lateral distance
    Range onset_frames{50, 110};        // crosser frames until road entry
    Range tail_frames{10, 40};          // crosser frames kept after onset
    Range track_len_frames{60, 150};    // non-crosser track length
    Range end_depth_m{5.0, 9.0};        // depth at the final frame
    double stand_fraction = 0.3;        // of non-crossers
    double corner_noise_px = 1.0;

    static ScenarioConfig domain_a(int n_pedestrians, std::uint64_t seed);
    static ScenarioConfig domain_b(int n_pedestrians, std::uint64_t seed);
};

// Pure function of the config: same config, byte-identical tracks. The
// crossing count is exactly round(crossing_fraction * n_pedestrians).
std::vector<Track> generate_synthetic(const ScenarioConfig& cfg);

struct TteBand {
    int lo = 0, hi = 0;

    bool operator==(const TteBand&) const = default;
};

std::vector<TteBand> parse_bands(const std::string& spec);  // "15-30,30-45,..."

// Evaluation windows (no overlap, no targets) for each TTE band, using
// models trained on the standard [30, 60] interval.
std::vector<std::pair<TteBand, std::vector<ObservationWindow>>> tte_sweep_slices(
    const std::vector<Track>& tracks, int obs_len, const std::vector<TteBand>& bands);

// Line-delimited records, one entity per line, fixed field order,
// reals at 6 decimal places.
void write_tracks(const std::string& path, const std::vector<Track>& tracks);
std::vector<Track> read_tracks(const std::string& path);
void write_dataset(const std::string& path, const std::vector<ObservationWindow>& windows);
std::vector<ObservationWindow> read_dataset(const std::string& path);

// Adapter for externally exported annotations (e.g. a PIE export); the
// record schema is the track schema above.
std::vector<Track> load_pie_records(const std::string& path);

struct SplitFractions {
    double train = 0.7, val = 0.15;  // test gets the rest
};

struct TrackSplit {
    std::vector<Track> train, val, test;
};

// Label-stratified shuffle split, deterministic under seed.
TrackSplit split_tracks(std::vector<Track> tracks, const SplitFractions& fractions,
                        std::uint64_t seed);

}  // namespace pedcross

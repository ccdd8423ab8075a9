#include "pedcross/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"

namespace pedcross {

namespace {

using nlohmann::json;

std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

std::string label_name(CrossingLabel l) {
    return l == CrossingLabel::kCrossing ? "crossing" : "not_crossing";
}

CrossingLabel label_from_name(const std::string& name) {
    if (name == "crossing") return CrossingLabel::kCrossing;
    if (name == "not_crossing") return CrossingLabel::kNotCrossing;
    throw DataError("unknown label '" + name + "'");
}

const BoundingBox& Track::box_at_frame(int frame) const {
    const int idx = frame - first_frame;
    if (idx < 0 || idx >= static_cast<int>(boxes.size())) {
        throw DataError("frame " + std::to_string(frame) + " outside track " + track_id);
    }
    return boxes[static_cast<std::size_t>(idx)];
}

void validate_track(const Track& t) {
    if (t.track_id.empty()) throw DataError("track without id");
    if (t.boxes.empty()) throw DataError("track " + t.track_id + " has no boxes");
    if (t.image_w <= 0 || t.image_h <= 0) {
        throw DataError("track " + t.track_id + " has invalid image dimensions");
    }
    if (t.critical_frame < t.first_frame || t.critical_frame > t.last_frame()) {
        throw DataError("track " + t.track_id + " critical frame outside its frame range");
    }
    for (const BoundingBox& b : t.boxes) {
        if (!(b.x1 < b.x2) || !(b.y1 < b.y2)) {
            throw DataError("track " + t.track_id + " has a degenerate box");
        }
        if (b.x1 < 0 || b.y1 < 0 || b.x2 > t.image_w || b.y2 > t.image_h) {
            throw DataError("track " + t.track_id + " has a box outside the image");
        }
    }
}

double quantize6(double v) {
    double q = std::round(v * 1e6);
    if (q == 0.0) q = 0.0;  // normalize -0
    return q / 1e6;
}

std::string fmt6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

std::vector<ObservationWindow> slice_track(const Track& t, const SliceOptions& opt) {
    if (opt.obs_len < 1) throw DataError("obs_len must be >= 1");
    if (opt.overlap < 0.0 || opt.overlap >= 1.0) throw DataError("overlap must be in [0, 1)");
    if (opt.tte_min < 0 || opt.tte_max < opt.tte_min) throw DataError("bad TTE interval");
    validate_track(t);

    const int stride = std::max(1, static_cast<int>(std::lround(opt.obs_len * (1.0 - opt.overlap))));
    const int a = t.critical_frame;
    const int m_min = std::max(a - opt.tte_max, t.first_frame + opt.obs_len - 1);
    const int m_max = std::min(a - opt.tte_min, t.last_frame());

    std::vector<ObservationWindow> out;
    for (int m = m_max; m >= m_min; m -= stride) {
        ObservationWindow w;
        w.track_id = t.track_id;
        w.last_obs_frame = m;
        w.tte_frames = a - m;
        w.label = t.label;
        w.image_w = t.image_w;
        w.image_h = t.image_h;
        for (int f = m - opt.obs_len + 1; f <= m; ++f) w.obs.push_back(t.box_at_frame(f));
        if (opt.with_target) {
            for (int f = m + 1; f <= a; ++f) w.target.push_back(t.box_at_frame(f));
        }
        out.push_back(std::move(w));
    }
    std::reverse(out.begin(), out.end());  // ascending M
    return out;
}

namespace {

BoundingBox flip_box(const BoundingBox& b, int image_w) {
    return {quantize6(image_w - b.x2), b.y1, quantize6(image_w - b.x1), b.y2};
}

}  // namespace

ObservationWindow flip_window(const ObservationWindow& w, int image_w) {
    if (w.normalized) throw DataError("flip_window expects raw pixel coordinates");
    ObservationWindow f = w;
    for (BoundingBox& b : f.obs) b = flip_box(b, image_w);
    for (BoundingBox& b : f.target) b = flip_box(b, image_w);
    return f;
}

std::vector<ObservationWindow> balance_training_split(std::vector<ObservationWindow> windows,
                                                      std::uint64_t seed) {
    std::vector<ObservationWindow> pos, neg;
    for (auto& w : windows) {
        (w.label == CrossingLabel::kCrossing ? pos : neg).push_back(std::move(w));
    }
    if (pos.empty() || neg.empty()) {
        throw DataError("balance_training_split: training data has a single class");
    }

    // Flip-augment the minority class only.
    auto augment = [](std::vector<ObservationWindow>& minority) {
        const std::size_t original = minority.size();
        minority.reserve(2 * original);
        for (std::size_t i = 0; i < original; ++i) {
            minority.push_back(flip_window(minority[i], minority[i].image_w));
        }
    };
    if (pos.size() < neg.size()) {
        augment(pos);
    } else if (neg.size() < pos.size()) {
        augment(neg);
    }

    std::mt19937_64 rng(mix64(seed, 0x62616c616eULL));
    const std::size_t keep = std::min(pos.size(), neg.size());
    auto subsample = [&](std::vector<ObservationWindow>& v) {
        if (v.size() > keep) {
            std::shuffle(v.begin(), v.end(), rng);
            v.resize(keep);
        }
    };
    subsample(pos);
    subsample(neg);

    std::vector<ObservationWindow> out;
    out.reserve(2 * keep);
    std::move(pos.begin(), pos.end(), std::back_inserter(out));
    std::move(neg.begin(), neg.end(), std::back_inserter(out));
    std::shuffle(out.begin(), out.end(), rng);
    return out;
}

ObservationWindow normalize(const ObservationWindow& w, int image_w, int image_h) {
    if (w.normalized) throw DataError("window already normalized");
    if (image_w <= 0 || image_h <= 0) throw DataError("normalize: invalid image dimensions");
    ObservationWindow n = w;
    n.raw_obs = w.obs;
    n.raw_target = w.target;
    auto scale_box = [&](BoundingBox& b) {
        b.x1 = quantize6(b.x1 / image_w);
        b.x2 = quantize6(b.x2 / image_w);
        b.y1 = quantize6(b.y1 / image_h);
        b.y2 = quantize6(b.y2 / image_h);
    };
    for (BoundingBox& b : n.obs) scale_box(b);
    for (BoundingBox& b : n.target) scale_box(b);
    n.normalized = true;
    return n;
}

std::string domain_name(Domain d) { return d == Domain::kA ? "A" : "B"; }

Domain domain_from_name(const std::string& name) {
    if (name == "A") return Domain::kA;
    if (name == "B") return Domain::kB;
    throw DataError("unknown domain '" + name + "' (expected A or B)");
}

ScenarioConfig ScenarioConfig::domain_a(int n_pedestrians, std::uint64_t seed) {
    ScenarioConfig cfg;
    cfg.domain = Domain::kA;
    cfg.n_pedestrians = n_pedestrians;
    cfg.seed = seed;
    return cfg;
}

ScenarioConfig ScenarioConfig::domain_b(int n_pedestrians, std::uint64_t seed) {
    ScenarioConfig cfg;
    cfg.domain = Domain::kB;
    cfg.n_pedestrians = n_pedestrians;
    cfg.seed = seed;
    cfg.road_half_width_m = 2.25;
    cfg.walk_speed_mps = {0.6, 1.6};
    cfg.closing_speed_mps = {3.0, 6.5};
    cfg.side_offset_m = {3.0, 6.0};
    cfg.onset_frames = {55, 115};
    cfg.tail_frames = {10, 45};
    cfg.track_len_frames = {70, 160};
    cfg.end_depth_m = {6.0, 10.0};
    cfg.stand_fraction = 0.45;
    cfg.corner_noise_px = 1.8;
    return cfg;
}

namespace {

double draw(Range r, std::mt19937_64& rng) {
    return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

int draw_int(Range r, std::mt19937_64& rng) {
    return std::uniform_int_distribution<int>(static_cast<int>(r.lo), static_cast<int>(r.hi))(rng);
}

struct PedestrianGeometry {
    double width_m, height_m;
};

BoundingBox project_box(const ScenarioConfig& cfg, double lateral_m, double depth_m,
                        const PedestrianGeometry& ped, std::mt19937_64& rng) {
    const double cx = 0.5 * cfg.image_w;
    const double cy = 0.5 * cfg.image_h;
    const double u = cx + cfg.focal_px * lateral_m / depth_m;
    const double bw = cfg.focal_px * ped.width_m / depth_m;
    const double bh = cfg.focal_px * ped.height_m / depth_m;
    const double vc = cy + cfg.focal_px * (cfg.camera_height_m - 0.5 * ped.height_m) / depth_m;

    std::normal_distribution<double> jitter(0.0, cfg.corner_noise_px);
    double x1 = u - 0.5 * bw + jitter(rng);
    double y1 = vc - 0.5 * bh + jitter(rng);
    double x2 = u + 0.5 * bw + jitter(rng);
    double y2 = vc + 0.5 * bh + jitter(rng);

    auto order = [](double& lo, double& hi) {
        if (hi - lo < 0.5) {
            const double mid = 0.5 * (lo + hi);
            lo = mid - 0.25;
            hi = mid + 0.25;
        }
    };
    order(x1, x2);
    order(y1, y2);
    auto clamp_pair = [](double& lo, double& hi, double limit) {
        lo = std::clamp(lo, 0.0, limit - 0.5);
        hi = std::clamp(hi, lo + 0.5, limit);
    };
    clamp_pair(x1, x2, static_cast<double>(cfg.image_w));
    clamp_pair(y1, y2, static_cast<double>(cfg.image_h));
    return {quantize6(x1), quantize6(y1), quantize6(x2), quantize6(y2)};
}

Track make_crossing_track(const ScenarioConfig& cfg, int index, std::mt19937_64& rng) {
    const int onset = draw_int(cfg.onset_frames, rng);
    const int tail = draw_int(cfg.tail_frames, rng);
    const int len = onset + tail + 1;
    const double v_walk = draw(cfg.walk_speed_mps, rng);
    const double side = (rng() & 1) ? 1.0 : -1.0;
    const double v_close = draw(cfg.closing_speed_mps, rng);
    const double z_end = draw(cfg.end_depth_m, rng);
    const PedestrianGeometry ped{std::uniform_real_distribution<double>(0.4, 0.6)(rng),
                                 std::uniform_real_distribution<double>(1.55, 1.9)(rng)};
    const double x0 = side * (cfg.road_half_width_m + v_walk * onset / cfg.fps);

    Track t;
    t.track_id = domain_name(cfg.domain) + "-" + std::to_string(index);
    t.label = CrossingLabel::kCrossing;
    t.image_w = cfg.image_w;
    t.image_h = cfg.image_h;
    t.critical_frame = -1;
    for (int f = 0; f < len; ++f) {
        const double lateral = x0 - side * v_walk * f / cfg.fps;
        const double depth = z_end + (len - 1 - f) * v_close / cfg.fps;
        if (t.critical_frame < 0 && std::fabs(lateral) <= cfg.road_half_width_m + 1e-9) {
            t.critical_frame = f;  // first lateral road entry
        }
        t.boxes.push_back(project_box(cfg, lateral, depth, ped, rng));
    }
    if (t.critical_frame < 0) t.critical_frame = len - 1;
    return t;
}

Track make_non_crossing_track(const ScenarioConfig& cfg, int index, std::mt19937_64& rng) {
    const int len = draw_int(cfg.track_len_frames, rng);
    const bool standing = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.stand_fraction;
    const double side = (rng() & 1) ? 1.0 : -1.0;
    const double x_off = side * draw(cfg.side_offset_m, rng);
    double drift = standing ? 0.0 : std::uniform_real_distribution<double>(-0.15, 0.15)(rng);
    const double v_close = draw(cfg.closing_speed_mps, rng);
    const double z_end = draw(cfg.end_depth_m, rng);
    const PedestrianGeometry ped{std::uniform_real_distribution<double>(0.4, 0.6)(rng),
                                 std::uniform_real_distribution<double>(1.55, 1.9)(rng)};

    // Keep the drift from ever carrying the walker into the road.
    const double margin = std::fabs(x_off) - cfg.road_half_width_m - 0.25;
    const double max_drift = margin * cfg.fps / std::max(1, len - 1);
    drift = std::clamp(drift, -max_drift, max_drift);

    Track t;
    t.track_id = domain_name(cfg.domain) + "-" + std::to_string(index);
    t.label = CrossingLabel::kNotCrossing;
    t.image_w = cfg.image_w;
    t.image_h = cfg.image_h;
    t.critical_frame = len - 1;  // last observable frame
    for (int f = 0; f < len; ++f) {
        const double lateral = x_off + drift * f / cfg.fps;
        const double depth = z_end + (len - 1 - f) * v_close / cfg.fps;
        t.boxes.push_back(project_box(cfg, lateral, depth, ped, rng));
    }
    return t;
}

}  // namespace

std::vector<Track> generate_synthetic(const ScenarioConfig& cfg) {
    if (cfg.n_pedestrians < 1) throw DataError("n_pedestrians must be >= 1");
    if (cfg.crossing_fraction < 0.0 || cfg.crossing_fraction > 1.0) {
        throw DataError("crossing_fraction must be in [0, 1]");
    }
    const int n_cross = static_cast<int>(std::lround(cfg.crossing_fraction * cfg.n_pedestrians));
    std::vector<Track> tracks;
    tracks.reserve(static_cast<std::size_t>(cfg.n_pedestrians));
    for (int i = 0; i < cfg.n_pedestrians; ++i) {
        std::mt19937_64 rng(mix64(cfg.seed, static_cast<std::uint64_t>(i)));
        Track t = i < n_cross ? make_crossing_track(cfg, i, rng)
                              : make_non_crossing_track(cfg, i, rng);
        validate_track(t);
        tracks.push_back(std::move(t));
    }
    return tracks;
}

std::vector<TteBand> parse_bands(const std::string& spec) {
    std::vector<TteBand> bands;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto dash = item.find('-');
        if (dash == std::string::npos) throw DataError("band '" + item + "' is not lo-hi");
        try {
            TteBand b{std::stoi(item.substr(0, dash)), std::stoi(item.substr(dash + 1))};
            if (b.lo < 0 || b.hi < b.lo) throw DataError("band '" + item + "' is not ordered");
            bands.push_back(b);
        } catch (const std::invalid_argument&) {
            throw DataError("band '" + item + "' is not numeric");
        }
    }
    if (bands.empty()) throw DataError("no TTE bands given");
    return bands;
}

std::vector<std::pair<TteBand, std::vector<ObservationWindow>>> tte_sweep_slices(
    const std::vector<Track>& tracks, int obs_len, const std::vector<TteBand>& bands) {
    std::vector<std::pair<TteBand, std::vector<ObservationWindow>>> out;
    for (const TteBand& band : bands) {
        SliceOptions opt;
        opt.obs_len = obs_len;
        opt.overlap = 0.0;
        opt.tte_min = band.lo;
        opt.tte_max = band.hi;
        std::vector<ObservationWindow> windows;
        for (const Track& t : tracks) {
            auto sliced = slice_track(t, opt);
            std::move(sliced.begin(), sliced.end(), std::back_inserter(windows));
        }
        out.emplace_back(band, std::move(windows));
    }
    return out;
}

namespace {

void append_box_array(std::string& line, const std::vector<BoundingBox>& boxes) {
    line += '[';
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        if (i) line += ',';
        const BoundingBox& b = boxes[i];
        line += '[';
        line += fmt6(b.x1);
        line += ',';
        line += fmt6(b.y1);
        line += ',';
        line += fmt6(b.x2);
        line += ',';
        line += fmt6(b.y2);
        line += ']';
    }
    line += ']';
}

std::vector<BoundingBox> parse_box_array(const json& j, const std::string& what) {
    if (!j.is_array()) throw DataError(what + " is not an array");
    std::vector<BoundingBox> boxes;
    boxes.reserve(j.size());
    for (const json& b : j) {
        if (!b.is_array() || b.size() != 4) throw DataError(what + " box is not [x1,y1,x2,y2]");
        boxes.push_back({b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                         b[3].get<double>()});
    }
    return boxes;
}

void check_keys(const json& j, const std::vector<std::string>& allowed, const std::string& what) {
    for (const auto& kv : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), kv.key()) == allowed.end()) {
            throw DataError("unknown field '" + kv.key() + "' in " + what + " record");
        }
    }
}

json parse_line(const std::string& line, const std::string& path, std::size_t lineno) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw DataError(path + ":" + std::to_string(lineno) + ": malformed record");
    }
    return j;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    return out;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    return in;
}

}  // namespace

void write_tracks(const std::string& path, const std::vector<Track>& tracks) {
    std::ofstream out = open_out(path);
    std::string line;
    for (const Track& t : tracks) {
        line.clear();
        line += "{\"track_id\":\"" + t.track_id + "\",\"label\":\"" + label_name(t.label) +
                "\",\"first_frame\":" + std::to_string(t.first_frame) +
                ",\"critical_frame\":" + std::to_string(t.critical_frame) +
                ",\"image_w\":" + std::to_string(t.image_w) +
                ",\"image_h\":" + std::to_string(t.image_h) + ",\"boxes\":";
        append_box_array(line, t.boxes);
        line += "}\n";
        out << line;
    }
}

std::vector<Track> read_tracks(const std::string& path) {
    std::ifstream in = open_in(path);
    std::vector<Track> tracks;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j = parse_line(line, path, lineno);
        check_keys(j, {"track_id", "label", "first_frame", "critical_frame", "image_w", "image_h",
                       "boxes"},
                   "track");
        try {
            Track t;
            t.track_id = j.at("track_id").get<std::string>();
            t.label = label_from_name(j.at("label").get<std::string>());
            t.first_frame = j.at("first_frame").get<int>();
            t.critical_frame = j.at("critical_frame").get<int>();
            t.image_w = j.at("image_w").get<int>();
            t.image_h = j.at("image_h").get<int>();
            t.boxes = parse_box_array(j.at("boxes"), "track boxes");
            validate_track(t);
            tracks.push_back(std::move(t));
        } catch (const json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return tracks;
}

std::vector<Track> load_pie_records(const std::string& path) { return read_tracks(path); }

void write_dataset(const std::string& path, const std::vector<ObservationWindow>& windows) {
    std::ofstream out = open_out(path);
    std::string line;
    for (const ObservationWindow& w : windows) {
        if (w.normalized) throw DataError("write_dataset expects raw pixel windows");
        line.clear();
        line += "{\"track_id\":\"" + w.track_id + "\",\"M\":" + std::to_string(w.last_obs_frame) +
                ",\"tte\":" + std::to_string(w.tte_frames) + ",\"label\":\"" +
                label_name(w.label) + "\",\"image_w\":" + std::to_string(w.image_w) +
                ",\"image_h\":" + std::to_string(w.image_h) + ",\"obs\":";
        append_box_array(line, w.obs);
        if (!w.target.empty()) {
            line += ",\"target\":";
            append_box_array(line, w.target);
        }
        line += "}\n";
        out << line;
    }
}

std::vector<ObservationWindow> read_dataset(const std::string& path) {
    std::ifstream in = open_in(path);
    std::vector<ObservationWindow> windows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j = parse_line(line, path, lineno);
        check_keys(j, {"track_id", "M", "tte", "label", "image_w", "image_h", "obs", "target"},
                   "window");
        try {
            ObservationWindow w;
            w.track_id = j.at("track_id").get<std::string>();
            w.last_obs_frame = j.at("M").get<int>();
            w.tte_frames = j.at("tte").get<int>();
            w.label = label_from_name(j.at("label").get<std::string>());
            w.image_w = j.at("image_w").get<int>();
            w.image_h = j.at("image_h").get<int>();
            w.obs = parse_box_array(j.at("obs"), "window obs");
            if (j.contains("target")) {
                w.target = parse_box_array(j.at("target"), "window target");
                if (static_cast<int>(w.target.size()) != w.tte_frames) {
                    throw DataError(path + ":" + std::to_string(lineno) +
                                    ": target length does not match tte");
                }
            }
            if (w.obs.empty()) throw DataError(path + ":" + std::to_string(lineno) + ": empty obs");
            windows.push_back(std::move(w));
        } catch (const json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return windows;
}

TrackSplit split_tracks(std::vector<Track> tracks, const SplitFractions& fractions,
                        std::uint64_t seed) {
    if (fractions.train < 0 || fractions.val < 0 || fractions.train + fractions.val > 1.0) {
        throw DataError("invalid split fractions");
    }
    std::vector<Track> pos, neg;
    for (auto& t : tracks) (t.label == CrossingLabel::kCrossing ? pos : neg).push_back(std::move(t));

    TrackSplit split;
    std::mt19937_64 rng(mix64(seed, 0x73706c6974ULL));
    auto assign = [&](std::vector<Track>& klass) {
        std::shuffle(klass.begin(), klass.end(), rng);
        const std::size_t n = klass.size();
        const auto n_train = static_cast<std::size_t>(std::lround(fractions.train * n));
        const auto n_val = static_cast<std::size_t>(std::lround(fractions.val * n));
        for (std::size_t i = 0; i < n; ++i) {
            if (i < n_train) {
                split.train.push_back(std::move(klass[i]));
            } else if (i < n_train + n_val) {
                split.val.push_back(std::move(klass[i]));
            } else {
                split.test.push_back(std::move(klass[i]));
            }
        }
    };
    assign(pos);
    assign(neg);
    return split;
}

}  // namespace pedcross

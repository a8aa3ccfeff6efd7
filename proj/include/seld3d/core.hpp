#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "seld3d/tensor.hpp"

namespace seld3d {

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RangeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ZeroVector : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr double kPi = 3.141592653589793238462643383279502884;
inline constexpr double kDegToRad = kPi / 180.0;
inline constexpr double kRadToDeg = 180.0 / kPi;

// The 13 sound event classes, index order fixed for the lifetime of a run.
struct ClassVocabulary {
    static constexpr int kNumClasses = 13;

    static const std::array<const char*, kNumClasses>& names() {
        static const std::array<const char*, kNumClasses> v = {
            "female speech", "male speech",  "clapping", "telephone",
            "laughter",      "domestic sounds", "footsteps", "door",
            "music",         "musical instrument", "water tap", "bell",
            "knock"};
        return v;
    }

    static const char* name(int class_id) {
        if (class_id < 0 || class_id >= kNumClasses)
            throw RangeError("class_id out of range: " + std::to_string(class_id));
        return names()[static_cast<std::size_t>(class_id)];
    }
};

// Clip timing conventions. 250 STFT frames at 20 ms hop and 50 label frames
// at 100 ms hop both span exactly 5 s; the factor 5 between them is the
// temporal pooling rate.
struct ClipSpec {
    int sample_rate = 24000;
    double stft_win_s = 0.040;
    double stft_hop_s = 0.020;
    int feature_frames = 250;
    double label_hop_s = 0.100;
    int label_frames = 50;

    int win_samples() const { return static_cast<int>(std::lround(stft_win_s * sample_rate)); }
    int hop_samples() const { return static_cast<int>(std::lround(stft_hop_s * sample_rate)); }
    int label_hop_samples() const { return static_cast<int>(std::lround(label_hop_s * sample_rate)); }
    int clip_samples() const { return label_frames * label_hop_samples(); }
    int pool_rate() const { return feature_frames / label_frames; }
};

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    Vec3() = default;
    Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}
};

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(double s, const Vec3& v) { return {s * v.x, s * v.y, s * v.z}; }

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }

inline Vec3 normalized(const Vec3& v) {
    const double n = norm(v);
    if (n < 1e-9) throw ZeroVector("cannot normalize near-zero vector");
    return {v.x / n, v.y / n, v.z / n};
}

// Azimuth counterclockwise from +x, elevation up from the horizontal plane,
// both in degrees. Any input angle is accepted; the trig below is periodic.
inline Vec3 sph_to_unit(double azimuth_deg, double elevation_deg) {
    const double az = azimuth_deg * kDegToRad;
    const double el = elevation_deg * kDegToRad;
    return {std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
}

// Inverse of sph_to_unit after normalization. Poles get azimuth 0.
inline void unit_to_sph(const Vec3& v, double& azimuth_deg, double& elevation_deg) {
    const Vec3 u = normalized(v);
    elevation_deg = std::asin(std::clamp(u.z, -1.0, 1.0)) * kRadToDeg;
    azimuth_deg = (std::abs(u.x) < 1e-12 && std::abs(u.y) < 1e-12)
                      ? 0.0
                      : std::atan2(u.y, u.x) * kRadToDeg;
    if (azimuth_deg >= 180.0) azimuth_deg -= 360.0;
}

inline double angular_distance_deg(const Vec3& a, const Vec3& b) {
    const double na = norm(a);
    const double nb = norm(b);
    if (na < 1e-9 || nb < 1e-9) throw ZeroVector("angular distance of near-zero vector");
    const double c = std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
    return std::acos(c) * kRadToDeg;
}

inline double wrap_azimuth(double az) {
    az = std::fmod(az + 180.0, 360.0);
    if (az < 0) az += 360.0;
    return az - 180.0;
}

// One annotated sound event instant on the 100 ms label grid.
struct EventRecord {
    int frame = 0;     // label-frame index
    int class_id = 0;  // 0..12
    int track_id = 0;  // distinguishes simultaneous same-class sources
    double azimuth = 0.0;    // degrees, [-180, 180)
    double elevation = 0.0;  // degrees, [-90, 90]
    double distance = 1.0;   // meters, > 0

    Vec3 doa() const { return sph_to_unit(azimuth, elevation); }

    void validate() const {
        if (frame < 0) throw RangeError("frame must be non-negative");
        if (class_id < 0 || class_id >= ClassVocabulary::kNumClasses)
            throw RangeError("class out of range: " + std::to_string(class_id));
        if (track_id < 0) throw RangeError("track must be non-negative");
        if (!(azimuth >= -180.0 && azimuth < 180.0))
            throw RangeError("azimuth out of range: " + std::to_string(azimuth));
        if (!(elevation >= -90.0 && elevation <= 90.0))
            throw RangeError("elevation out of range: " + std::to_string(elevation));
        if (!(distance > 0.0))
            throw RangeError("distance must be positive: " + std::to_string(distance));
    }
};

inline bool event_order(const EventRecord& a, const EventRecord& b) {
    if (a.frame != b.frame) return a.frame < b.frame;
    if (a.class_id != b.class_id) return a.class_id < b.class_id;
    return a.track_id < b.track_id;
}

// ---------------------------------------------------------------------------
// Metadata CSV: header `frame,class,track,azimuth,elevation,distance`,
// UTF-8, LF endings, rows sorted by (frame, class, track). Angles and
// distances are written with 3 decimals, which is the declared precision.
// ---------------------------------------------------------------------------

inline constexpr const char* kMetadataHeader = "frame,class,track,azimuth,elevation,distance";

namespace detail {

inline std::string format_fixed3(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    std::string s(buf);
    if (s == "-0.000") s = "0.000";
    return s;
}

inline long parse_long(const std::string& field, int line_no, const char* name) {
    std::size_t pos = 0;
    long v = 0;
    try {
        v = std::stol(field, &pos);
    } catch (const std::exception&) {
        throw ParseError("line " + std::to_string(line_no) + ": bad integer for " +
                         std::string(name) + ": '" + field + "'");
    }
    if (pos != field.size())
        throw ParseError("line " + std::to_string(line_no) + ": trailing characters in " +
                         std::string(name) + ": '" + field + "'");
    return v;
}

inline double parse_double(const std::string& field, int line_no, const char* name) {
    std::size_t pos = 0;
    double v = 0;
    try {
        v = std::stod(field, &pos);
    } catch (const std::exception&) {
        throw ParseError("line " + std::to_string(line_no) + ": bad number for " +
                         std::string(name) + ": '" + field + "'");
    }
    if (pos != field.size())
        throw ParseError("line " + std::to_string(line_no) + ": trailing characters in " +
                         std::string(name) + ": '" + field + "'");
    return v;
}

} // namespace detail

inline std::vector<EventRecord> read_metadata(std::istream& is, const std::string& origin = "<stream>") {
    std::vector<EventRecord> events;
    std::string line;
    int line_no = 0;
    bool saw_header = false;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!saw_header) {
            if (line != kMetadataHeader)
                throw ParseError(origin + ": line 1: bad header '" + line + "'");
            saw_header = true;
            continue;
        }
        std::vector<std::string> fields;
        std::string cur;
        for (char ch : line) {
            if (ch == ',') {
                fields.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(ch);
            }
        }
        fields.push_back(cur);
        if (fields.size() != 6)
            throw ParseError(origin + ": line " + std::to_string(line_no) + ": expected 6 fields, got " +
                             std::to_string(fields.size()));
        EventRecord e;
        e.frame = static_cast<int>(detail::parse_long(fields[0], line_no, "frame"));
        e.class_id = static_cast<int>(detail::parse_long(fields[1], line_no, "class"));
        e.track_id = static_cast<int>(detail::parse_long(fields[2], line_no, "track"));
        e.azimuth = detail::parse_double(fields[3], line_no, "azimuth");
        e.elevation = detail::parse_double(fields[4], line_no, "elevation");
        e.distance = detail::parse_double(fields[5], line_no, "distance");
        try {
            e.validate();
        } catch (const RangeError& err) {
            throw RangeError(origin + ": line " + std::to_string(line_no) + ": " + err.what());
        }
        events.push_back(e);
    }
    std::stable_sort(events.begin(), events.end(), event_order);
    for (std::size_t i = 1; i < events.size(); ++i) {
        const auto& a = events[i - 1];
        const auto& b = events[i];
        if (a.frame == b.frame && a.class_id == b.class_id && a.track_id == b.track_id)
            throw RangeError(origin + ": duplicate (frame,class,track) = (" + std::to_string(a.frame) +
                             "," + std::to_string(a.class_id) + "," + std::to_string(a.track_id) + ")");
    }
    return events;
}

inline std::vector<EventRecord> read_metadata(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open metadata file: " + path);
    return read_metadata(is, path);
}

inline void write_metadata(const std::vector<EventRecord>& events, std::ostream& os) {
    std::vector<EventRecord> sorted = events;
    for (const auto& e : sorted) e.validate();
    std::stable_sort(sorted.begin(), sorted.end(), event_order);
    os << kMetadataHeader << '\n';
    for (const auto& e : sorted) {
        os << e.frame << ',' << e.class_id << ',' << e.track_id << ','
           << detail::format_fixed3(e.azimuth) << ',' << detail::format_fixed3(e.elevation) << ','
           << detail::format_fixed3(e.distance) << '\n';
    }
}

inline void write_metadata(const std::vector<EventRecord>& events, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open metadata file for writing: " + path);
    write_metadata(events, os);
    if (!os) throw IoError("write failed: " + path);
}

} // namespace seld3d

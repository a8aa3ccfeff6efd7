#pragma once

#include <array>
#include <map>
#include <vector>

#include "seld3d/core.hpp"
#include "seld3d/tensor.hpp"

namespace seld3d {

struct TrackOverflow : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ClasswiseCollision : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr int kNumTracks = 3;   // N, maximum simultaneous same-class sources
inline constexpr int kNumClasses = ClassVocabulary::kNumClasses;
inline constexpr int kLabelFrames = 50;

// All 3! track permutations, lexicographic. Loss code and tests both index
// into this table so tie-breaking is reproducible.
inline constexpr std::array<std::array<int, 3>, 6> kTrackPerms = {{
    {0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};

enum class OutputMethod { MultiTask, MultiAccddoa };
enum class Activation { Tanh, Relu, Linear };

// Output head geometry per method: multi-task splits into a tanh ACCDOA
// branch (3C wide) and a ReLU distance branch (C wide); multi-ACCDDOA is one
// linear branch of width 4NC.
struct OutputSpec {
    OutputMethod method = OutputMethod::MultiAccddoa;
    std::vector<int> widths;
    std::vector<Activation> activations;

    static OutputSpec multi_task() {
        return {OutputMethod::MultiTask,
                {3 * kNumClasses, kNumClasses},
                {Activation::Tanh, Activation::Relu}};
    }
    static OutputSpec multi_accddoa() {
        return {OutputMethod::MultiAccddoa, {4 * kNumTracks * kNumClasses}, {Activation::Linear}};
    }

    int total_width() const {
        int w = 0;
        for (int v : widths) w += v;
        return w;
    }
};

// Track-wise target structure: activity a, unit DOA R and distance D per
// (track, class, label frame). Wherever a is 0 both R and D are zero.
struct AccddoaTensor {
    int tracks = kNumTracks;
    int classes = kNumClasses;
    int frames = kLabelFrames;
    TensorD a;  // N x C x Tl, values in {0, 1}
    TensorD r;  // 3 x N x C x Tl
    TensorD d;  // N x C x Tl, meters >= 0

    AccddoaTensor(int n = kNumTracks, int c = kNumClasses, int t = kLabelFrames)
        : tracks(n), classes(c), frames(t),
          a({static_cast<std::size_t>(n), static_cast<std::size_t>(c), static_cast<std::size_t>(t)}),
          r({3, static_cast<std::size_t>(n), static_cast<std::size_t>(c), static_cast<std::size_t>(t)}),
          d({static_cast<std::size_t>(n), static_cast<std::size_t>(c), static_cast<std::size_t>(t)}) {}

    int frame_width() const { return 4 * tracks * classes; }

    // flattened per-frame vector, component order (track, class, [Rx Ry Rz D])
    TensorD flatten_frames() const {
        TensorD out({static_cast<std::size_t>(frames), static_cast<std::size_t>(frame_width())});
        for (int t = 0; t < frames; ++t)
            for (int n = 0; n < tracks; ++n)
                for (int c = 0; c < classes; ++c) {
                    const std::size_t base = (static_cast<std::size_t>(n) * classes + c) * 4;
                    const double act = a.at(n, c, t);
                    out.at(t, base + 0) = act * r.at(0, n, c, t);
                    out.at(t, base + 1) = act * r.at(1, n, c, t);
                    out.at(t, base + 2) = act * r.at(2, n, c, t);
                    out.at(t, base + 3) = d.at(n, c, t);
                }
        return out;
    }
};

// Classwise two-branch structure: activity-scaled DOA plus a distance plane.
struct MtTensor {
    int classes = kNumClasses;
    int frames = kLabelFrames;
    TensorD accdoa;  // 3 x C x Tl, a_ct * R_ct
    TensorD dist;    // C x Tl, meters >= 0

    MtTensor(int c = kNumClasses, int t = kLabelFrames)
        : classes(c), frames(t),
          accdoa({3, static_cast<std::size_t>(c), static_cast<std::size_t>(t)}),
          dist({static_cast<std::size_t>(c), static_cast<std::size_t>(t)}) {}
};

namespace detail {

using CellKey = std::pair<int, int>;  // (class, frame)

inline std::map<CellKey, std::vector<EventRecord>> group_by_cell(
    const std::vector<EventRecord>& events) {
    std::map<CellKey, std::vector<EventRecord>> cells;
    for (const auto& e : events) cells[{e.class_id, e.frame}].push_back(e);
    for (auto& [key, list] : cells)
        std::stable_sort(list.begin(), list.end(),
                         [](const EventRecord& a, const EventRecord& b) {
                             return a.track_id < b.track_id;
                         });
    return cells;
}

} // namespace detail

inline AccddoaTensor encode_multi_accddoa(const std::vector<EventRecord>& events,
                                          int label_frames = kLabelFrames) {
    AccddoaTensor out(kNumTracks, kNumClasses, label_frames);
    for (const auto& e : events) {
        e.validate();
        if (e.frame >= label_frames)
            throw RangeError("event frame " + std::to_string(e.frame) + " beyond clip length");
        if (e.track_id >= kNumTracks)
            throw TrackOverflow("track " + std::to_string(e.track_id) + " exceeds N=" +
                                std::to_string(kNumTracks));
        if (out.a.at(e.track_id, e.class_id, e.frame) != 0.0)
            throw TrackOverflow("duplicate (frame,class,track) at frame " + std::to_string(e.frame));
        const Vec3 u = e.doa();
        out.a.at(e.track_id, e.class_id, e.frame) = 1.0;
        out.r.at(0, e.track_id, e.class_id, e.frame) = u.x;
        out.r.at(1, e.track_id, e.class_id, e.frame) = u.y;
        out.r.at(2, e.track_id, e.class_id, e.frame) = u.z;
        out.d.at(e.track_id, e.class_id, e.frame) = e.distance;
    }
    return out;
}

// One padded ADPIT slot: [a*R, D] of either a real event or an inactive fill.
struct AdpitSlot {
    bool active = false;
    Vec3 doa;
    double distance = 0.0;

    std::array<double, 4> values() const {
        if (!active) return {0.0, 0.0, 0.0, 0.0};
        return {doa.x, doa.y, doa.z, distance};
    }
};

// Pads the <=N events of one (class, frame) cell to exactly N slots by
// cyclic duplication; zero events produce all-inactive slots. The
// permutation set used by the loss is every N! ordering of this list.
inline std::array<AdpitSlot, kNumTracks> adpit_pad(const std::vector<EventRecord>& cell_events) {
    if (cell_events.size() > kNumTracks)
        throw TrackOverflow("more than N=" + std::to_string(kNumTracks) +
                            " same-class events in one frame");
    std::array<AdpitSlot, kNumTracks> slots;
    if (cell_events.empty()) return slots;
    for (int n = 0; n < kNumTracks; ++n) {
        const EventRecord& e = cell_events[n % cell_events.size()];
        slots[n] = {true, e.doa(), e.distance};
    }
    return slots;
}

// Padded target tensor for the ADPIT loss, N x C x Tl x 4.
template <typename T = double>
TensorT<T> adpit_targets(const std::vector<EventRecord>& events, int label_frames = kLabelFrames) {
    TensorT<T> out({kNumTracks, kNumClasses, static_cast<std::size_t>(label_frames), 4});
    for (const auto& [key, cell] : detail::group_by_cell(events)) {
        const auto [class_id, frame] = key;
        if (frame >= label_frames)
            throw RangeError("event frame " + std::to_string(frame) + " beyond clip length");
        const auto slots = adpit_pad(cell);
        for (int n = 0; n < kNumTracks; ++n) {
            const auto v = slots[n].values();
            for (int j = 0; j < 4; ++j)
                out.at(n, class_id, frame, j) = static_cast<T>(v[j]);
        }
    }
    return out;
}

struct DecodeConfig {
    double threshold = 0.5;      // activity gate on the DOA-vector norm
    double merge_angle = 15.0;   // same-class tracks closer than this merge
    double dist_floor = 1e-3;    // meters; keeps decoded records valid
};

namespace detail {

struct DecodedGroup {
    Vec3 sum;
    double dist_sum = 0.0;
    int count = 0;
};

template <typename T>
void decode_cell(const TensorT<T>* pred4, const TensorT<T>* accdoa3, const TensorT<T>* dist_plane,
                 int tracks, int class_id, int frame, const DecodeConfig& cfg,
                 std::vector<EventRecord>& out) {
    std::vector<DecodedGroup> groups;
    for (int n = 0; n < tracks; ++n) {
        Vec3 v;
        double dist = 0.0;
        if (pred4) {
            v = {static_cast<double>(pred4->at(n, class_id, frame, 0)),
                 static_cast<double>(pred4->at(n, class_id, frame, 1)),
                 static_cast<double>(pred4->at(n, class_id, frame, 2))};
            dist = static_cast<double>(pred4->at(n, class_id, frame, 3));
        } else {
            v = {static_cast<double>(accdoa3->at(0, class_id, frame)),
                 static_cast<double>(accdoa3->at(1, class_id, frame)),
                 static_cast<double>(accdoa3->at(2, class_id, frame))};
            dist = static_cast<double>(dist_plane->at(class_id, frame));
        }
        if (!(norm(v) > cfg.threshold)) continue;
        const Vec3 u = normalized(v);
        dist = std::max(dist, 0.0);
        bool merged = false;
        for (auto& g : groups) {
            if (angular_distance_deg(normalized(g.sum), u) <= cfg.merge_angle) {
                g.sum = g.sum + u;
                g.dist_sum += dist;
                g.count += 1;
                merged = true;
                break;
            }
        }
        if (!merged) groups.push_back({u, dist, 1});
    }
    int track = 0;
    for (const auto& g : groups) {
        EventRecord e;
        e.frame = frame;
        e.class_id = class_id;
        e.track_id = track++;
        unit_to_sph(g.sum, e.azimuth, e.elevation);
        e.azimuth = wrap_azimuth(e.azimuth);
        e.distance = std::max(g.dist_sum / g.count, cfg.dist_floor);
        out.push_back(e);
    }
}

} // namespace detail

// Inverse of the multi-ACCDDOA encoding: threshold each track slot on its
// DOA-vector norm, then merge same-class tracks that point the same way.
template <typename T>
std::vector<EventRecord> decode_multi_accddoa(const TensorT<T>& pred,
                                              const DecodeConfig& cfg = {}) {
    if (pred.ndim() != 4 || pred.dim(3) != 4)
        throw ShapeMismatch("decode_multi_accddoa expects an N x C x Tl x 4 tensor");
    const int tracks = static_cast<int>(pred.dim(0));
    const int classes = static_cast<int>(pred.dim(1));
    const int frames = static_cast<int>(pred.dim(2));
    std::vector<EventRecord> out;
    for (int c = 0; c < classes; ++c)
        for (int t = 0; t < frames; ++t)
            detail::decode_cell<T>(&pred, nullptr, nullptr, tracks, c, t, cfg, out);
    std::sort(out.begin(), out.end(), event_order);
    return out;
}

// Classwise encoding; rejects any same-class overlap since one slot per
// class cannot represent two sources.
inline MtTensor encode_mt(const std::vector<EventRecord>& events, int label_frames = kLabelFrames) {
    MtTensor out(kNumClasses, label_frames);
    TensorD seen({kNumClasses, static_cast<std::size_t>(label_frames)});
    for (const auto& e : events) {
        e.validate();
        if (e.frame >= label_frames)
            throw RangeError("event frame " + std::to_string(e.frame) + " beyond clip length");
        if (seen.at(e.class_id, e.frame) != 0.0)
            throw ClasswiseCollision("two class-" + std::to_string(e.class_id) +
                                     " events in frame " + std::to_string(e.frame));
        seen.at(e.class_id, e.frame) = 1.0;
        const Vec3 u = e.doa();
        out.accdoa.at(0, e.class_id, e.frame) = u.x;
        out.accdoa.at(1, e.class_id, e.frame) = u.y;
        out.accdoa.at(2, e.class_id, e.frame) = u.z;
        out.dist.at(e.class_id, e.frame) = e.distance;
    }
    return out;
}

template <typename T>
std::vector<EventRecord> decode_mt(const TensorT<T>& accdoa, const TensorT<T>& dist,
                                   const DecodeConfig& cfg = {}) {
    if (accdoa.ndim() != 3 || accdoa.dim(0) != 3)
        throw ShapeMismatch("decode_mt expects a 3 x C x Tl ACCDOA tensor");
    if (dist.ndim() != 2 || dist.dim(0) != accdoa.dim(1) || dist.dim(1) != accdoa.dim(2))
        throw ShapeMismatch("decode_mt distance plane must be C x Tl");
    const int classes = static_cast<int>(accdoa.dim(1));
    const int frames = static_cast<int>(accdoa.dim(2));
    std::vector<EventRecord> out;
    for (int c = 0; c < classes; ++c)
        for (int t = 0; t < frames; ++t)
            detail::decode_cell<T>(nullptr, &accdoa, &dist, 1, c, t, cfg, out);
    std::sort(out.begin(), out.end(), event_order);
    return out;
}

} // namespace seld3d

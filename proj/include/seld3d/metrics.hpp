#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <vector>

#include "seld3d/codec.hpp"
#include "seld3d/core.hpp"

namespace seld3d {

struct GridMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EmptyReference : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TooFewClips : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr int kFramesPerSegment = 10;     // 1 s segments on the 100 ms grid
inline constexpr double kDoaGateDeg = 20.0;      // location-aware detection gate

// ---------------------------------------------------------------------------
// Hungarian algorithm (shortest augmenting paths with potentials). Returns a
// minimum-total-cost one-to-one assignment of min(n, m) pairs.
// ---------------------------------------------------------------------------

inline std::vector<std::pair<int, int>> hungarian(const std::vector<std::vector<double>>& cost) {
    const int n = static_cast<int>(cost.size());
    if (n == 0) return {};
    const int m = static_cast<int>(cost[0].size());
    for (const auto& row : cost)
        if (static_cast<int>(row.size()) != m)
            throw ShapeMismatch("hungarian needs a rectangular cost matrix");
    if (m == 0) return {};

    // the algorithm below assigns every row, so run it on the smaller side
    if (n > m) {
        std::vector<std::vector<double>> transposed(m, std::vector<double>(n));
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) transposed[j][i] = cost[i][j];
        auto pairs = hungarian(transposed);
        for (auto& p : pairs) std::swap(p.first, p.second);
        std::sort(pairs.begin(), pairs.end());
        return pairs;
    }

    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<int> match(m + 1, 0), way(m + 1, 0);
    for (int i = 1; i <= n; ++i) {
        match[0] = i;
        int j0 = 0;
        std::vector<double> min_v(m + 1, inf);
        std::vector<bool> used(m + 1, false);
        do {
            used[j0] = true;
            const int i0 = match[j0];
            double delta = inf;
            int j1 = -1;
            for (int j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < min_v[j]) {
                    min_v[j] = cur;
                    way[j] = j0;
                }
                if (min_v[j] < delta) {
                    delta = min_v[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[match[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_v[j] -= delta;
                }
            }
            j0 = j1;
        } while (match[j0] != 0);
        do {
            const int j1 = way[j0];
            match[j0] = match[j1];
            j0 = j1;
        } while (j0);
    }

    std::vector<std::pair<int, int>> pairs;
    for (int j = 1; j <= m; ++j)
        if (match[j] != 0) pairs.emplace_back(match[j] - 1, j - 1);
    std::sort(pairs.begin(), pairs.end());
    return pairs;
}

// ---------------------------------------------------------------------------
// Segment scoring
// ---------------------------------------------------------------------------

// Micro-average accumulators. Mergeable across segments, classes and clips;
// every reported metric is a pure function of these sums.
struct SegmentCounts {
    long long tp = 0, fp = 0, fn = 0;          // gated detection counts
    long long subs = 0, dels = 0, ins = 0;     // per-segment S, D, I
    long long n_refs = 0;                      // reference instances
    long long loc_matched = 0, loc_fn = 0;     // class-correct matches / missed refs
    std::vector<double> ang_errors;            // degrees, one per matched pair
    std::vector<double> dist_errors;           // meters, one per matched pair

    void merge(const SegmentCounts& other) {
        tp += other.tp;
        fp += other.fp;
        fn += other.fn;
        subs += other.subs;
        dels += other.dels;
        ins += other.ins;
        n_refs += other.n_refs;
        loc_matched += other.loc_matched;
        loc_fn += other.loc_fn;
        ang_errors.insert(ang_errors.end(), other.ang_errors.begin(), other.ang_errors.end());
        dist_errors.insert(dist_errors.end(), other.dist_errors.begin(), other.dist_errors.end());
    }
};

namespace detail {

struct SegmentInstance {
    Vec3 doa;
    double distance = 0.0;
};

// One instance per (segment, class, track); the representative frame is the
// medoid under angular distance, ties to the earliest frame.
inline std::map<std::pair<int, int>, std::vector<SegmentInstance>> reduce_to_segments(
    const std::vector<EventRecord>& events, int n_label_frames) {
    std::map<std::tuple<int, int, int>, std::vector<EventRecord>> tracks;
    for (const auto& e : events) {
        if (e.frame < 0 || e.frame >= n_label_frames)
            throw GridMismatch("event frame " + std::to_string(e.frame) +
                               " outside the clip's label grid");
        tracks[{e.frame / kFramesPerSegment, e.class_id, e.track_id}].push_back(e);
    }
    std::map<std::pair<int, int>, std::vector<SegmentInstance>> cells;
    for (const auto& [key, list] : tracks) {
        const auto [segment, class_id, track_id] = key;
        std::vector<Vec3> dirs;
        dirs.reserve(list.size());
        for (const auto& e : list) dirs.push_back(e.doa());
        std::size_t medoid = 0;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < dirs.size(); ++i) {
            double total = 0.0;
            for (std::size_t j = 0; j < dirs.size(); ++j)
                if (i != j) total += angular_distance_deg(dirs[i], dirs[j]);
            if (total < best) {
                best = total;
                medoid = i;
            }
        }
        cells[{segment, class_id}].push_back({dirs[medoid], list[medoid].distance});
    }
    return cells;
}

} // namespace detail

// Location-aware segment scoring: events are reduced to one instance per
// (1 s segment, class, track), references and predictions are matched per
// (segment, class) with the Hungarian algorithm on angular distance, and a
// match counts as a true positive only within the 20 degree gate. Matched
// pairs feed the localization/distance errors regardless of the gate.
inline SegmentCounts score_segments(const std::vector<EventRecord>& refs,
                                    const std::vector<EventRecord>& preds,
                                    int n_label_frames = kLabelFrames) {
    if (n_label_frames <= 0) throw GridMismatch("clip length must be positive");
    auto ref_cells = detail::reduce_to_segments(refs, n_label_frames);
    auto pred_cells = detail::reduce_to_segments(preds, n_label_frames);

    const int n_segments = (n_label_frames + kFramesPerSegment - 1) / kFramesPerSegment;
    SegmentCounts counts;
    for (int seg = 0; seg < n_segments; ++seg) {
        long long seg_fp = 0, seg_fn = 0;
        for (int c = 0; c < ClassVocabulary::kNumClasses; ++c) {
            const auto rit = ref_cells.find({seg, c});
            const auto pit = pred_cells.find({seg, c});
            const auto* r = rit == ref_cells.end() ? nullptr : &rit->second;
            const auto* p = pit == pred_cells.end() ? nullptr : &pit->second;
            const std::size_t nr = r ? r->size() : 0;
            const std::size_t np = p ? p->size() : 0;
            counts.n_refs += static_cast<long long>(nr);
            if (nr == 0 && np == 0) continue;

            std::vector<std::pair<int, int>> pairs;
            if (nr > 0 && np > 0) {
                std::vector<std::vector<double>> cost(nr, std::vector<double>(np));
                for (std::size_t i = 0; i < nr; ++i)
                    for (std::size_t j = 0; j < np; ++j)
                        cost[i][j] = angular_distance_deg((*r)[i].doa, (*p)[j].doa);
                pairs = hungarian(cost);
            }
            long long cell_tp = 0;
            for (const auto& [i, j] : pairs) {
                const double ang = angular_distance_deg((*r)[i].doa, (*p)[j].doa);
                counts.ang_errors.push_back(ang);
                counts.dist_errors.push_back(std::abs((*r)[i].distance - (*p)[j].distance));
                counts.loc_matched += 1;
                if (ang <= kDoaGateDeg) {
                    cell_tp += 1;
                } else {
                    seg_fp += 1;
                    seg_fn += 1;
                }
            }
            const long long matched = static_cast<long long>(pairs.size());
            const long long unmatched_preds = static_cast<long long>(np) - matched;
            const long long unmatched_refs = static_cast<long long>(nr) - matched;
            counts.tp += cell_tp;
            seg_fp += unmatched_preds;
            seg_fn += unmatched_refs;
            counts.loc_fn += unmatched_refs;
        }
        counts.fp += seg_fp;
        counts.fn += seg_fn;
        counts.subs += std::min(seg_fp, seg_fn);
        counts.dels += std::max(0LL, seg_fn - seg_fp);
        counts.ins += std::max(0LL, seg_fp - seg_fn);
    }
    return counts;
}

struct MetricCi {
    double estimate = 0.0;  // bias-corrected jackknife estimate
    double low = 0.0;
    double high = 0.0;
};

struct Scores {
    double er = 0.0;          // segment error rate
    double f1 = 0.0;          // percent
    double doa_error = 0.0;   // degrees; 180 when nothing was matched
    double recall = 0.0;      // localization recall, percent
    double dist_error = 0.0;  // meters, MAE over matched pairs

    std::optional<MetricCi> er_ci, f1_ci, doa_error_ci, recall_ci, dist_error_ci;
};

inline Scores compute_scores(const SegmentCounts& counts) {
    if (counts.n_refs == 0) throw EmptyReference("no reference events to score against");
    Scores s;
    s.er = static_cast<double>(counts.subs + counts.dels + counts.ins) /
           static_cast<double>(counts.n_refs);
    const double f1_denom = static_cast<double>(2 * counts.tp + counts.fp + counts.fn);
    s.f1 = f1_denom > 0.0 ? 100.0 * 2.0 * counts.tp / f1_denom : 0.0;
    if (counts.loc_matched > 0) {
        double ang = 0.0, dist = 0.0;
        for (double a : counts.ang_errors) ang += a;
        for (double d : counts.dist_errors) dist += d;
        s.doa_error = ang / counts.loc_matched;
        s.dist_error = dist / counts.loc_matched;
    } else {
        s.doa_error = 180.0;
        s.dist_error = std::numeric_limits<double>::quiet_NaN();
    }
    s.recall = 100.0 * counts.loc_matched /
               static_cast<double>(counts.loc_matched + counts.loc_fn);
    return s;
}

// ---------------------------------------------------------------------------
// Jackknife confidence intervals
// ---------------------------------------------------------------------------

namespace detail {

inline double beta_cont_fraction(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 1e-16;
    constexpr double kTiny = 1e-300;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) break;
    }
    return h;
}

// regularized incomplete beta I_x(a, b)
inline double incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0))
        return front * beta_cont_fraction(a, b, x) / a;
    return 1.0 - front * beta_cont_fraction(b, a, 1.0 - x) / b;
}

} // namespace detail

inline double student_t_cdf(double x, double dof) {
    const double ib = detail::incomplete_beta(dof / 2.0, 0.5, dof / (dof + x * x));
    return x >= 0.0 ? 1.0 - 0.5 * ib : 0.5 * ib;
}

// upper-tail quantile by bisection; p in (0.5, 1)
inline double student_t_quantile(double p, double dof) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("t quantile needs p in (0,1)");
    if (p == 0.5) return 0.0;
    const bool upper = p > 0.5;
    const double target = upper ? p : 1.0 - p;
    double lo = 0.0, hi = 1.0;
    while (student_t_cdf(hi, dof) < target) hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (student_t_cdf(mid, dof) < target)
            lo = mid;
        else
            hi = mid;
        if (hi - lo <= 1e-14 * std::max(1.0, hi)) break;
    }
    const double q = 0.5 * (lo + hi);
    return upper ? q : -q;
}

struct JackknifeEstimate {
    double full = 0.0;      // estimate from all clips
    double estimate = 0.0;  // bias-corrected
    double low = 0.0;
    double high = 0.0;
    double se = 0.0;
};

// Leave-one-out resampling of a micro-averaged metric. `metric` is called
// with a subset of the items and must return the metric on that subset.
template <typename Item, typename Fn>
JackknifeEstimate jackknife_ci(const std::vector<Item>& items, Fn&& metric,
                               double significance = 0.05) {
    const std::size_t n = items.size();
    if (n < 2) throw TooFewClips("jackknife needs at least 2 clips");

    JackknifeEstimate out;
    out.full = metric(items);

    std::vector<double> theta(n);
    std::vector<Item> subset;
    subset.reserve(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        subset.clear();
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) subset.push_back(items[j]);
        theta[i] = metric(subset);
    }
    double mean = 0.0;
    for (double v : theta) mean += v;
    mean /= static_cast<double>(n);

    double ss = 0.0;
    for (double v : theta) ss += (v - mean) * (v - mean);
    out.se = std::sqrt((static_cast<double>(n) - 1.0) / static_cast<double>(n) * ss);
    out.estimate = static_cast<double>(n) * out.full - (static_cast<double>(n) - 1.0) * mean;
    const double t = student_t_quantile(1.0 - significance / 2.0, static_cast<double>(n) - 1.0);
    out.low = out.estimate - t * out.se;
    out.high = out.estimate + t * out.se;
    return out;
}

// Scores over all clips plus jackknife CIs for each metric, CI bounds
// clamped to each metric's natural range.
inline Scores scores_with_ci(const std::vector<SegmentCounts>& per_clip,
                             double significance = 0.05) {
    SegmentCounts all;
    for (const auto& c : per_clip) all.merge(c);
    Scores s = compute_scores(all);
    if (per_clip.size() < 2) return s;

    auto metric_of = [](const std::vector<SegmentCounts>& subset, auto&& extract) {
        SegmentCounts merged;
        for (const auto& c : subset) merged.merge(c);
        return extract(compute_scores(merged));
    };
    auto ci_for = [&](auto&& extract, double lo, double hi) {
        auto jk = jackknife_ci(
            per_clip,
            [&](const std::vector<SegmentCounts>& subset) { return metric_of(subset, extract); },
            significance);
        MetricCi ci;
        ci.estimate = std::clamp(jk.estimate, lo, hi);
        ci.low = std::clamp(jk.low, lo, hi);
        ci.high = std::clamp(jk.high, lo, hi);
        return ci;
    };
    const double inf = std::numeric_limits<double>::infinity();
    s.er_ci = ci_for([](const Scores& x) { return x.er; }, 0.0, inf);
    s.f1_ci = ci_for([](const Scores& x) { return x.f1; }, 0.0, 100.0);
    s.doa_error_ci = ci_for([](const Scores& x) { return x.doa_error; }, 0.0, 180.0);
    s.recall_ci = ci_for([](const Scores& x) { return x.recall; }, 0.0, 100.0);
    s.dist_error_ci = ci_for([](const Scores& x) { return x.dist_error; }, 0.0, inf);
    return s;
}

} // namespace seld3d

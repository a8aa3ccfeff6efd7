#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "seld3d/codec.hpp"
#include "seld3d/tensor.hpp"

namespace seld3d {

struct ZeroTargetDenominator : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct BadTrackCount : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class LossKind { MSE, MAE, MSPE, MAPE };

inline const char* loss_kind_name(LossKind k) {
    switch (k) {
        case LossKind::MSE: return "mse";
        case LossKind::MAE: return "mae";
        case LossKind::MSPE: return "mspe";
        case LossKind::MAPE: return "mape";
    }
    return "?";
}

inline LossKind parse_loss_kind(const std::string& s) {
    if (s == "mse") return LossKind::MSE;
    if (s == "mae") return LossKind::MAE;
    if (s == "mspe") return LossKind::MSPE;
    if (s == "mape") return LossKind::MAPE;
    throw std::invalid_argument("unknown loss kind: " + s);
}

template <typename T>
struct LossResultT {
    double value = 0.0;
    TensorT<T> grad;  // d value / d prediction, same shape as the prediction
};

using LossResult = LossResultT<double>;

namespace detail {

// per-element error and its derivative w.r.t. the prediction
inline double elem_loss(LossKind kind, double pred, double target) {
    switch (kind) {
        case LossKind::MSE: {
            const double d = pred - target;
            return d * d;
        }
        case LossKind::MAE:
            return std::abs(pred - target);
        case LossKind::MSPE: {
            const double d = (pred - target) / target;
            return d * d;
        }
        case LossKind::MAPE:
            return std::abs(pred - target) / target;
    }
    return 0.0;
}

inline double elem_grad(LossKind kind, double pred, double target) {
    const double d = pred - target;
    const double sgn = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);  // subgradient 0 at kinks
    switch (kind) {
        case LossKind::MSE: return 2.0 * d;
        case LossKind::MAE: return sgn;
        case LossKind::MSPE: return 2.0 * d / (target * target);
        case LossKind::MAPE: return sgn / target;
    }
    return 0.0;
}

inline void require_positive_targets(LossKind kind, const double* targets, std::size_t n) {
    if (kind != LossKind::MSPE && kind != LossKind::MAPE) return;
    for (std::size_t i = 0; i < n; ++i)
        if (!(targets[i] > 0.0))
            throw ZeroTargetDenominator("relative losses need strictly positive targets");
}

} // namespace detail

// Mean of the per-element error over all M elements, with the exact gradient.
template <typename T>
LossResultT<T> elementwise_loss(LossKind kind, const TensorT<T>& pred, const TensorT<T>& target) {
    if (!pred.same_shape(target))
        throw ShapeMismatch("elementwise_loss shapes differ");
    const std::size_t m = pred.size();
    if (m == 0) throw ShapeMismatch("elementwise_loss on empty tensors");
    if (kind == LossKind::MSPE || kind == LossKind::MAPE)
        for (std::size_t i = 0; i < m; ++i)
            if (!(static_cast<double>(target[i]) > 0.0))
                throw ZeroTargetDenominator("relative losses need strictly positive targets");

    LossResultT<T> res;
    res.grad = TensorT<T>(pred.shape);
    double total = 0.0;
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double p = static_cast<double>(pred[i]);
        const double y = static_cast<double>(target[i]);
        total += detail::elem_loss(kind, p, y);
        res.grad[i] = static_cast<T>(detail::elem_grad(kind, p, y) * inv_m);
    }
    res.value = total * inv_m;
    return res;
}

template <typename T>
struct MtLossResultT {
    double value = 0.0;
    TensorT<T> accdoa_grad;  // 3 x C x Tl
    TensorT<T> dist_grad;    // C x Tl
};

using MtLossResult = MtLossResultT<double>;

// Two-branch loss: per (class, frame) the MSE over the three ACCDOA
// components plus the chosen distance loss, averaged over C*Tl cells. For
// the relative distance losses the distance term only covers cells with an
// active target (positive target distance), since inactive cells would
// divide by zero.
template <typename T>
MtLossResultT<T> mt_loss(const TensorT<T>& pred_accdoa, const TensorT<T>& pred_dist,
                         const TensorT<T>& target_accdoa, const TensorT<T>& target_dist,
                         LossKind dist_kind) {
    if (!pred_accdoa.same_shape(target_accdoa) || !pred_dist.same_shape(target_dist))
        throw ShapeMismatch("mt_loss shapes differ");
    if (pred_accdoa.ndim() != 3 || pred_accdoa.dim(0) != 3 || pred_dist.ndim() != 2 ||
        pred_accdoa.dim(1) != pred_dist.dim(0) || pred_accdoa.dim(2) != pred_dist.dim(1))
        throw ShapeMismatch("mt_loss expects 3 x C x Tl and C x Tl tensors");

    const int classes = static_cast<int>(pred_dist.dim(0));
    const int frames = static_cast<int>(pred_dist.dim(1));
    const bool relative = dist_kind == LossKind::MSPE || dist_kind == LossKind::MAPE;

    MtLossResultT<T> res;
    res.accdoa_grad = TensorT<T>(pred_accdoa.shape);
    res.dist_grad = TensorT<T>(pred_dist.shape);
    const double inv_cells = 1.0 / (static_cast<double>(classes) * frames);

    double total = 0.0;
    for (int c = 0; c < classes; ++c)
        for (int t = 0; t < frames; ++t) {
            double seld = 0.0;
            for (int i = 0; i < 3; ++i) {
                const double d = static_cast<double>(pred_accdoa.at(i, c, t)) -
                                 static_cast<double>(target_accdoa.at(i, c, t));
                seld += d * d;
                res.accdoa_grad.at(i, c, t) =
                    static_cast<T>(2.0 * d / 3.0 * inv_cells);
            }
            seld /= 3.0;

            const double pd = static_cast<double>(pred_dist.at(c, t));
            const double yd = static_cast<double>(target_dist.at(c, t));
            double sde = 0.0;
            if (!relative || yd > 0.0) {
                sde = detail::elem_loss(dist_kind, pd, yd);
                res.dist_grad.at(c, t) =
                    static_cast<T>(detail::elem_grad(dist_kind, pd, yd) * inv_cells);
            }
            total += seld + sde;
        }
    res.value = total * inv_cells;
    return res;
}

inline MtLossResult mt_loss(const MtTensor& pred, const MtTensor& target, LossKind dist_kind) {
    return mt_loss(pred.accdoa, pred.dist, target.accdoa, target.dist, dist_kind);
}

struct AdpitConfig {
    LossKind base_kind = LossKind::MSE;  // MSE or MAE only
    double dist_weight = 1.0;            // extra weight on the distance component
};

// Permutation-invariant loss over the padded target slots: per (class,
// frame) the minimum over all six track permutations of the track-mean
// 4-vector loss, averaged over C*Tl. The gradient flows only through each
// cell's argmin permutation; ties resolve to the lowest permutation index.
template <typename T>
LossResultT<T> adpit_loss(const TensorT<T>& pred, const TensorT<T>& targets,
                          const AdpitConfig& cfg = {}) {
    if (!pred.same_shape(targets)) throw ShapeMismatch("adpit_loss shapes differ");
    if (pred.ndim() != 4 || pred.dim(3) != 4)
        throw ShapeMismatch("adpit_loss expects N x C x Tl x 4 tensors");
    if (pred.dim(0) != kNumTracks)
        throw BadTrackCount("adpit_loss is defined for N=" + std::to_string(kNumTracks));
    if (cfg.base_kind != LossKind::MSE && cfg.base_kind != LossKind::MAE)
        throw std::invalid_argument("adpit_loss supports only the MSE and MAE base losses");

    const int classes = static_cast<int>(pred.dim(1));
    const int frames = static_cast<int>(pred.dim(2));
    const bool squared = cfg.base_kind == LossKind::MSE;

    LossResultT<T> res;
    res.grad = TensorT<T>(pred.shape);
    const double cell_scale = 1.0 / (static_cast<double>(classes) * frames);

    double total = 0.0;
    for (int c = 0; c < classes; ++c)
        for (int t = 0; t < frames; ++t) {
            double best = 0.0;
            int best_perm = -1;
            for (int a = 0; a < 6; ++a) {
                double acc = 0.0;
                for (int n = 0; n < kNumTracks; ++n) {
                    const int pn = kTrackPerms[a][n];
                    double s = 0.0;
                    for (int j = 0; j < 4; ++j) {
                        const double diff = static_cast<double>(pred.at(n, c, t, j)) -
                                            static_cast<double>(targets.at(pn, c, t, j));
                        double term = squared ? diff * diff : std::abs(diff);
                        if (j == 3) term *= cfg.dist_weight;
                        s += term;
                    }
                    s /= 4.0;
                    acc += s;
                }
                acc /= static_cast<double>(kNumTracks);
                if (best_perm < 0 || acc < best) {
                    best = acc;
                    best_perm = a;
                }
            }
            total += best;

            const auto& perm = kTrackPerms[best_perm];
            for (int n = 0; n < kNumTracks; ++n)
                for (int j = 0; j < 4; ++j) {
                    const double diff = static_cast<double>(pred.at(n, c, t, j)) -
                                        static_cast<double>(targets.at(perm[n], c, t, j));
                    double g = squared ? 2.0 * diff
                                       : (diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0));
                    if (j == 3) g *= cfg.dist_weight;
                    res.grad.at(n, c, t, j) =
                        static_cast<T>(g / 4.0 / static_cast<double>(kNumTracks) * cell_scale);
                }
        }
    res.value = total * cell_scale;
    return res;
}

// Central finite differences against the analytic gradient; returns the
// maximum per-coordinate relative error. The callable must return a
// LossResult evaluated at the given point.
template <typename Fn>
double grad_check(Fn&& fn, const TensorD& point, double step = 1e-5) {
    const LossResult base = fn(point);
    double max_rel = 0.0;
    TensorD x = point;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + step;
        const double f_plus = fn(x).value;
        x[i] = orig - step;
        const double f_minus = fn(x).value;
        x[i] = orig;
        const double fd = (f_plus - f_minus) / (2.0 * step);
        const double an = base.grad[i];
        const double denom = std::max({std::abs(fd), std::abs(an), 1e-12});
        max_rel = std::max(max_rel, std::abs(fd - an) / denom);
    }
    return max_rel;
}

} // namespace seld3d

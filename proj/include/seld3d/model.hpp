#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "seld3d/codec.hpp"
#include "seld3d/core.hpp"
#include "seld3d/features.hpp"
#include "seld3d/losses.hpp"
#include "seld3d/rng.hpp"
#include "seld3d/tensor.hpp"

namespace seld3d {

struct BadCheckpoint : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EmptyDataset : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Configuration and parameters
// ---------------------------------------------------------------------------

struct ModelConfig {
    AudioFormat format = AudioFormat::FOA;
    OutputMethod method = OutputMethod::MultiAccddoa;
    std::vector<int> hidden = {256, 256};
    int context = 2;  // feature frames on each side of a label frame's center

    // loss selection: ADPIT base kind for the single-branch method, distance
    // branch kind for the two-branch method
    LossKind loss_kind = LossKind::MSE;
    double dist_weight = 1.0;

    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999;
    double adam_eps = 1e-8;
    int epochs = 250;
    int patience = 75;
    int batch_clips = 1;  // clips per Adam step (gradients summed)
    std::uint64_t seed = 0;
};

struct Dense {
    TensorD w;  // (out, in), row-major
    TensorD b;  // (out)
};

// Context-window MLP over feature frames. Each label frame is predicted from
// the feature frames centered on it (pool rate x context window), pushed
// through ReLU hidden layers and one affine head per output branch.
struct Model {
    AudioFormat format = AudioFormat::FOA;
    OutputMethod method = OutputMethod::MultiAccddoa;
    int context = 2;
    OutputSpec spec;

    std::vector<double> mu, sigma;  // per-input standardization
    std::vector<Dense> layers;      // hidden, ReLU
    std::vector<Dense> heads;       // one affine map per branch

    int input_width() const { return static_cast<int>(mu.size()); }
};

inline int model_input_width(const FeatureSpec& fs, int context) {
    return fs.channels * fs.features * (2 * context + 1);
}

inline Model init_model(const ModelConfig& cfg, Rng& rng) {
    const FeatureSpec fs = cfg.format == AudioFormat::FOA ? FeatureSpec::foa()
                                                          : FeatureSpec::binaural();
    Model m;
    m.format = cfg.format;
    m.method = cfg.method;
    m.context = cfg.context;
    m.spec = cfg.method == OutputMethod::MultiAccddoa ? OutputSpec::multi_accddoa()
                                                      : OutputSpec::multi_task();
    const int in = model_input_width(fs, cfg.context);
    m.mu.assign(in, 0.0);
    m.sigma.assign(in, 1.0);

    // uniform fan-in scaling: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in))
    auto make_dense = [&](int n_out, int n_in) {
        Dense d;
        d.w = TensorD({static_cast<std::size_t>(n_out), static_cast<std::size_t>(n_in)});
        d.b = TensorD({static_cast<std::size_t>(n_out)});
        const double bound = 1.0 / std::sqrt(static_cast<double>(n_in));
        for (auto& v : d.w.data) v = rng.uniform(-bound, bound);
        return d;
    };
    int prev = in;
    for (int h : cfg.hidden) {
        if (h < 1) throw RangeError("hidden layer width must be positive");
        m.layers.push_back(make_dense(h, prev));
        prev = h;
    }
    for (std::size_t q = 0; q < m.spec.widths.size(); ++q)
        m.heads.push_back(make_dense(m.spec.widths[q], prev));
    return m;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

namespace detail {

// y = x . w^T + b, x: (B, in), w: (out, in) -> (B, out)
inline TensorD affine(const TensorD& x, const Dense& d) {
    const std::size_t batch = x.shape[0], in = x.shape[1], out = d.w.shape[0];
    if (d.w.shape[1] != in) throw ShapeMismatch("affine: input width mismatch");
    TensorD y({batch, out});
    for (std::size_t bi = 0; bi < batch; ++bi) {
        const double* xr = &x.data[bi * in];
        double* yr = &y.data[bi * out];
        for (std::size_t o = 0; o < out; ++o) {
            const double* wr = &d.w.data[o * in];
            double acc = d.b.data[o];
            for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wr[i];
            yr[o] = acc;
        }
    }
    return y;
}

// gradients of an affine layer; returns dx and accumulates dw, db
inline TensorD affine_backward(const TensorD& x, const Dense& d, const TensorD& dy,
                               Dense& grad) {
    const std::size_t batch = x.shape[0], in = x.shape[1], out = d.w.shape[0];
    TensorD dx({batch, in});
    for (std::size_t bi = 0; bi < batch; ++bi) {
        const double* xr = &x.data[bi * in];
        const double* dyr = &dy.data[bi * out];
        double* dxr = &dx.data[bi * in];
        for (std::size_t o = 0; o < out; ++o) {
            const double g = dyr[o];
            if (g == 0.0) continue;
            const double* wr = &d.w.data[o * in];
            double* gw = &grad.w.data[o * in];
            for (std::size_t i = 0; i < in; ++i) {
                dxr[i] += g * wr[i];
                gw[i] += g * xr[i];
            }
            grad.b.data[o] += g;
        }
    }
    return dx;
}

inline void apply_activation(TensorD& t, Activation act) {
    switch (act) {
        case Activation::Tanh:
            for (auto& v : t.data) v = std::tanh(v);
            break;
        case Activation::Relu:
            for (auto& v : t.data) v = v > 0.0 ? v : 0.0;
            break;
        case Activation::Linear:
            break;
    }
}

// dL/dpre from dL/dpost given the post-activation values
inline void activation_backward(TensorD& dy, const TensorD& y, Activation act) {
    switch (act) {
        case Activation::Tanh:
            for (std::size_t i = 0; i < dy.data.size(); ++i)
                dy.data[i] *= 1.0 - y.data[i] * y.data[i];
            break;
        case Activation::Relu:
            for (std::size_t i = 0; i < dy.data.size(); ++i)
                if (y.data[i] <= 0.0) dy.data[i] = 0.0;
            break;
        case Activation::Linear:
            break;
    }
}

} // namespace detail

// Stacks the context window of every label frame into one input row:
// offset-major, then channel, then bin. Edge frames clamp to the clip.
inline TensorD window_inputs(const FeatureTensor& feat, int context, const ClipSpec& clip) {
    const FeatureSpec fs = feat.spec;
    const int width = model_input_width(fs, context);
    const int pool = clip.pool_rate();
    const int n_label = clip.label_frames;
    const int window = 2 * context + 1;
    TensorD x({static_cast<std::size_t>(n_label), static_cast<std::size_t>(width)});
    for (int l = 0; l < n_label; ++l) {
        const int center = l * pool + pool / 2;
        double* row = &x.data[static_cast<std::size_t>(l) * width];
        std::size_t idx = 0;
        for (int o = 0; o < window; ++o) {
            int t = center + o - context;
            t = std::clamp(t, 0, fs.frames - 1);
            for (int ch = 0; ch < fs.channels; ++ch)
                for (int bin = 0; bin < fs.features; ++bin) row[idx++] = feat.data.at(ch, t, bin);
        }
    }
    return x;
}

// window_inputs standardized with the model's training statistics
inline TensorD model_inputs(const Model& m, const FeatureTensor& feat, const ClipSpec& clip) {
    if (model_input_width(feat.spec, m.context) != m.input_width())
        throw ShapeMismatch("feature tensor does not match the model's input width");
    TensorD x = window_inputs(feat, m.context, clip);
    const auto width = static_cast<std::size_t>(m.input_width());
    for (std::size_t r = 0; r < x.shape[0]; ++r)
        for (std::size_t i = 0; i < width; ++i) {
            double& v = x.data[r * width + i];
            v = (v - m.mu[i]) / std::max(m.sigma[i], 1e-6);
        }
    return x;
}

struct ForwardState {
    TensorD input;                 // (Tl, in), standardized
    std::vector<TensorD> hidden;   // post-ReLU per layer
    std::vector<TensorD> branches; // post-activation per head, (Tl, width_q)
};

inline ForwardState forward(const Model& m, TensorD inputs) {
    ForwardState st;
    st.input = std::move(inputs);
    const TensorD* cur = &st.input;
    for (const auto& layer : m.layers) {
        TensorD h = detail::affine(*cur, layer);
        detail::apply_activation(h, Activation::Relu);
        st.hidden.push_back(std::move(h));
        cur = &st.hidden.back();
    }
    for (std::size_t q = 0; q < m.heads.size(); ++q) {
        TensorD y = detail::affine(*cur, m.heads[q]);
        detail::apply_activation(y, m.spec.activations[q]);
        st.branches.push_back(std::move(y));
    }
    return st;
}

// ---------------------------------------------------------------------------
// Branch <-> tensor layout
// ---------------------------------------------------------------------------

namespace detail {

// single-branch frames (Tl, 4*N*C) -> (N, C, Tl, 4)
inline TensorD frames_to_accddoa(const TensorD& out) {
    const auto frames = out.shape[0];
    TensorD t({kNumTracks, kNumClasses, frames, 4});
    for (std::size_t l = 0; l < frames; ++l)
        for (std::size_t n = 0; n < kNumTracks; ++n)
            for (std::size_t c = 0; c < kNumClasses; ++c)
                for (std::size_t j = 0; j < 4; ++j)
                    t.at(n, c, l, j) = out.at(l, (n * kNumClasses + c) * 4 + j);
    return t;
}

inline TensorD accddoa_to_frames(const TensorD& grad) {
    const auto frames = grad.shape[2];
    TensorD out({frames, 4 * kNumTracks * kNumClasses});
    for (std::size_t l = 0; l < frames; ++l)
        for (std::size_t n = 0; n < kNumTracks; ++n)
            for (std::size_t c = 0; c < kNumClasses; ++c)
                for (std::size_t j = 0; j < 4; ++j)
                    out.at(l, (n * kNumClasses + c) * 4 + j) = grad.at(n, c, l, j);
    return out;
}

// axis-major two-branch layout: branch 0 column = axis*C + c, branch 1 = c
inline TensorD frames_to_accdoa(const TensorD& out) {
    const auto frames = out.shape[0];
    TensorD t({3, kNumClasses, frames});
    for (std::size_t l = 0; l < frames; ++l)
        for (std::size_t ax = 0; ax < 3; ++ax)
            for (std::size_t c = 0; c < kNumClasses; ++c)
                t.at(ax, c, l) = out.at(l, ax * kNumClasses + c);
    return t;
}

inline TensorD accdoa_to_frames(const TensorD& grad) {
    const auto frames = grad.shape[2];
    TensorD out({frames, 3 * kNumClasses});
    for (std::size_t l = 0; l < frames; ++l)
        for (std::size_t ax = 0; ax < 3; ++ax)
            for (std::size_t c = 0; c < kNumClasses; ++c)
                out.at(l, ax * kNumClasses + c) = grad.at(ax, c, l);
    return out;
}

inline TensorD frames_to_dist(const TensorD& out) {
    const auto frames = out.shape[0];
    TensorD t({kNumClasses, frames});
    for (std::size_t l = 0; l < frames; ++l)
        for (std::size_t c = 0; c < kNumClasses; ++c) t.at(c, l) = out.at(l, c);
    return t;
}

inline TensorD dist_to_frames(const TensorD& grad) {
    const auto frames = grad.shape[1];
    TensorD out({frames, kNumClasses});
    for (std::size_t l = 0; l < frames; ++l)
        for (std::size_t c = 0; c < kNumClasses; ++c) out.at(l, c) = grad.at(c, l);
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Loss + gradients for one clip
// ---------------------------------------------------------------------------

// per-clip training targets, precomputed from the label events
struct ClipTargets {
    TensorD adpit;   // (N, C, Tl, 4); single-branch method
    TensorD accdoa;  // (3, C, Tl); two-branch method
    TensorD dist;    // (C, Tl)
};

inline ClipTargets make_targets(const std::vector<EventRecord>& events,
                                const ModelConfig& cfg, int label_frames) {
    ClipTargets t;
    if (cfg.method == OutputMethod::MultiAccddoa) {
        t.adpit = adpit_targets<double>(events, label_frames);
    } else {
        MtTensor mt = encode_mt(events, label_frames);
        t.accdoa = std::move(mt.accdoa);
        t.dist = std::move(mt.dist);
    }
    return t;
}

struct Gradients {
    std::vector<Dense> layers;
    std::vector<Dense> heads;
};

inline Gradients zero_gradients(const Model& m) {
    Gradients g;
    auto zero_like = [](const Dense& d) {
        Dense z;
        z.w = TensorD(d.w.shape);
        z.b = TensorD(d.b.shape);
        return z;
    };
    for (const auto& l : m.layers) g.layers.push_back(zero_like(l));
    for (const auto& h : m.heads) g.heads.push_back(zero_like(h));
    return g;
}

// Runs the model on one clip's standardized inputs, evaluates the configured
// loss against the targets and accumulates exact parameter gradients.
inline double loss_and_grads(const Model& m, const ModelConfig& cfg, const TensorD& inputs,
                             const ClipTargets& targets, Gradients& grads) {
    ForwardState st = forward(m, inputs);

    double loss = 0.0;
    std::vector<TensorD> branch_grads(st.branches.size());
    if (m.method == OutputMethod::MultiAccddoa) {
        const TensorD pred = detail::frames_to_accddoa(st.branches[0]);
        AdpitConfig ac;
        ac.base_kind = cfg.loss_kind;
        ac.dist_weight = cfg.dist_weight;
        auto res = adpit_loss<double>(pred, targets.adpit, ac);
        loss = res.value;
        branch_grads[0] = detail::accddoa_to_frames(res.grad);
    } else {
        const TensorD pred_acc = detail::frames_to_accdoa(st.branches[0]);
        const TensorD pred_dist = detail::frames_to_dist(st.branches[1]);
        auto res = mt_loss<double>(pred_acc, pred_dist, targets.accdoa, targets.dist,
                                   cfg.loss_kind);
        loss = res.value;
        branch_grads[0] = detail::accdoa_to_frames(res.accdoa_grad);
        branch_grads[1] = detail::dist_to_frames(res.dist_grad);
    }

    // heads -> shared trunk
    const TensorD& trunk = m.layers.empty() ? st.input : st.hidden.back();
    TensorD d_trunk({trunk.shape[0], trunk.shape[1]});
    for (std::size_t q = 0; q < m.heads.size(); ++q) {
        detail::activation_backward(branch_grads[q], st.branches[q], m.spec.activations[q]);
        const TensorD dx = detail::affine_backward(trunk, m.heads[q], branch_grads[q],
                                                   grads.heads[q]);
        for (std::size_t i = 0; i < d_trunk.data.size(); ++i) d_trunk.data[i] += dx.data[i];
    }

    // hidden layers, last to first
    for (int li = static_cast<int>(m.layers.size()) - 1; li >= 0; --li) {
        const TensorD& y = st.hidden[li];
        detail::activation_backward(d_trunk, y, Activation::Relu);
        const TensorD& x = li == 0 ? st.input : st.hidden[li - 1];
        d_trunk = detail::affine_backward(x, m.layers[li], d_trunk, grads.layers[li]);
    }
    return loss;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
    Gradients m, v;
    long long t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

inline AdamState init_adam(const Model& m, const ModelConfig& cfg = {}) {
    AdamState s;
    s.m = zero_gradients(m);
    s.v = zero_gradients(m);
    s.beta1 = cfg.beta1;
    s.beta2 = cfg.beta2;
    s.eps = cfg.adam_eps;
    return s;
}

namespace detail {

inline void adam_update_tensor(TensorD& w, const TensorD& g, TensorD& m1, TensorD& m2,
                               const AdamState& s, double lr) {
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
    for (std::size_t i = 0; i < w.data.size(); ++i) {
        m1.data[i] = s.beta1 * m1.data[i] + (1.0 - s.beta1) * g.data[i];
        m2.data[i] = s.beta2 * m2.data[i] + (1.0 - s.beta2) * g.data[i] * g.data[i];
        const double mh = m1.data[i] / c1;
        const double vh = m2.data[i] / c2;
        w.data[i] -= lr * mh / (std::sqrt(vh) + s.eps);
    }
}

} // namespace detail

inline void adam_step(Model& model, const Gradients& grads, AdamState& state, double lr) {
    state.t += 1;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        detail::adam_update_tensor(model.layers[i].w, grads.layers[i].w, state.m.layers[i].w,
                                   state.v.layers[i].w, state, lr);
        detail::adam_update_tensor(model.layers[i].b, grads.layers[i].b, state.m.layers[i].b,
                                   state.v.layers[i].b, state, lr);
    }
    for (std::size_t i = 0; i < model.heads.size(); ++i) {
        detail::adam_update_tensor(model.heads[i].w, grads.heads[i].w, state.m.heads[i].w,
                                   state.v.heads[i].w, state, lr);
        detail::adam_update_tensor(model.heads[i].b, grads.heads[i].b, state.m.heads[i].b,
                                   state.v.heads[i].b, state, lr);
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainClip {
    FeatureTensor features;
    std::vector<EventRecord> events;
};

// canonical key=value form of a training configuration; also what gets hashed
inline std::string model_config_text(const ModelConfig& cfg) {
    std::ostringstream os;
    os << "format=" << (cfg.format == AudioFormat::FOA ? "foa" : "binaural") << "\n";
    os << "method=" << (cfg.method == OutputMethod::MultiAccddoa ? "multi-accddoa" : "mt")
       << "\n";
    os << "hidden=";
    for (std::size_t i = 0; i < cfg.hidden.size(); ++i)
        os << (i ? "," : "") << cfg.hidden[i];
    os << "\n";
    os << "context=" << cfg.context << "\n";
    os << "loss=" << loss_kind_name(cfg.loss_kind) << "\n";
    os << "dist_weight=" << cfg.dist_weight << "\n";
    os << "lr=" << cfg.lr << "\n";
    os << "beta1=" << cfg.beta1 << "\n";
    os << "beta2=" << cfg.beta2 << "\n";
    os << "adam_eps=" << cfg.adam_eps << "\n";
    os << "epochs=" << cfg.epochs << "\n";
    os << "patience=" << cfg.patience << "\n";
    os << "batch_clips=" << cfg.batch_clips << "\n";
    os << "seed=" << cfg.seed << "\n";
    return os.str();
}

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t model_config_hash(const ModelConfig& cfg) {
    return fnv1a64(model_config_text(cfg));
}

// Trained model plus the run bookkeeping that belongs in the artifact file.
struct Checkpoint {
    Model model;
    std::uint64_t config_hash = 0;
    int epoch = 0;          // 0-based epoch the stored weights come from
    double best_val = std::numeric_limits<double>::quiet_NaN();
    std::string rng_state;  // trainer generator state at the stored epoch
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<double> train_loss;  // per epoch
    std::vector<double> val_loss;    // per epoch; empty when val set is empty
};

// Full training loop: standardization from the training set, Adam steps over
// seed-shuffled clip batches, early stopping on the validation set with the
// best weights retained. Deterministic in cfg.seed.
inline TrainResult train(const std::vector<TrainClip>& train_clips,
                         const std::vector<TrainClip>& val_clips, const ModelConfig& cfg,
                         const ClipSpec& clip_spec = {}, std::ostream* log = nullptr) {
    if (train_clips.empty()) throw EmptyDataset("training set is empty");
    if (cfg.batch_clips < 1) throw RangeError("batch_clips must be positive");
    Rng rng(cfg.seed);
    Model model = init_model(cfg, rng);

    // standardization over the training set (raw feature values per input)
    const auto in_width = static_cast<std::size_t>(model.input_width());
    std::vector<double> sum(in_width, 0.0), sq(in_width, 0.0);
    std::size_t n_rows = 0;
    for (const auto& clip : train_clips) {
        const TensorD x = window_inputs(clip.features, cfg.context, clip_spec);
        for (std::size_t r = 0; r < x.shape[0]; ++r)
            for (std::size_t i = 0; i < in_width; ++i) {
                const double v = x.data[r * in_width + i];
                sum[i] += v;
                sq[i] += v * v;
            }
        n_rows += x.shape[0];
    }
    for (std::size_t i = 0; i < in_width; ++i) {
        const double mean = sum[i] / static_cast<double>(n_rows);
        const double var = std::max(0.0, sq[i] / static_cast<double>(n_rows) - mean * mean);
        model.mu[i] = mean;
        model.sigma[i] = std::sqrt(var);
    }

    // precompute standardized inputs and targets once
    auto prepare = [&](const std::vector<TrainClip>& clips, std::vector<TensorD>& inputs,
                       std::vector<ClipTargets>& targets) {
        inputs.resize(clips.size());
        targets.resize(clips.size());
        for (std::size_t i = 0; i < clips.size(); ++i) {
            inputs[i] = model_inputs(model, clips[i].features, clip_spec);
            targets[i] = make_targets(clips[i].events, cfg, clip_spec.label_frames);
        }
    };
    std::vector<TensorD> train_x, val_x;
    std::vector<ClipTargets> train_y, val_y;
    prepare(train_clips, train_x, train_y);
    prepare(val_clips, val_x, val_y);

    AdamState adam = init_adam(model, cfg);
    TrainResult result;
    result.checkpoint.config_hash = model_config_hash(cfg);
    double best_val = std::numeric_limits<double>::infinity();
    Model best_model = model;
    int best_epoch = 0;
    std::string best_rng = rng.state();
    int since_best = 0;

    std::vector<std::size_t> order(train_clips.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.uniform_index(i)]);
        double epoch_loss = 0.0;
        const auto batch = static_cast<std::size_t>(cfg.batch_clips);
        for (std::size_t begin = 0; begin < order.size(); begin += batch) {
            const std::size_t end = std::min(order.size(), begin + batch);
            Gradients grads = zero_gradients(model);
            for (std::size_t k = begin; k < end; ++k)
                epoch_loss +=
                    loss_and_grads(model, cfg, train_x[order[k]], train_y[order[k]], grads);
            adam_step(model, grads, adam, cfg.lr);
        }
        epoch_loss /= static_cast<double>(order.size());
        result.train_loss.push_back(epoch_loss);

        if (!val_clips.empty()) {
            double val = 0.0;
            for (std::size_t i = 0; i < val_x.size(); ++i) {
                Gradients scratch = zero_gradients(model);
                val += loss_and_grads(model, cfg, val_x[i], val_y[i], scratch);
            }
            val /= static_cast<double>(val_x.size());
            result.val_loss.push_back(val);
            const bool improved = val < best_val - 1e-12;
            if (improved) {
                best_val = val;
                best_model = model;
                best_epoch = epoch;
                best_rng = rng.state();
                since_best = 0;
            }
            if (log)
                *log << "epoch " << epoch + 1 << "/" << cfg.epochs << " train " << epoch_loss
                     << " val " << val << "\n";
            if (!improved && ++since_best > cfg.patience) {
                if (log)
                    *log << "early stop at epoch " << epoch + 1 << " (best epoch "
                         << best_epoch + 1 << ")\n";
                break;
            }
        } else {
            best_model = model;
            best_epoch = epoch;
            best_rng = rng.state();
            if (log)
                *log << "epoch " << epoch + 1 << "/" << cfg.epochs << " train " << epoch_loss
                     << "\n";
        }
    }
    result.checkpoint.model = std::move(best_model);
    result.checkpoint.epoch = best_epoch;
    result.checkpoint.best_val =
        val_clips.empty() ? std::numeric_limits<double>::quiet_NaN() : best_val;
    result.checkpoint.rng_state = std::move(best_rng);
    return result;
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

inline std::vector<EventRecord> predict_events(const Model& m, const FeatureTensor& feat,
                                               const ClipSpec& clip_spec = {},
                                               const DecodeConfig& dc = {}) {
    ForwardState st = forward(m, model_inputs(m, feat, clip_spec));
    if (m.method == OutputMethod::MultiAccddoa)
        return decode_multi_accddoa<double>(detail::frames_to_accddoa(st.branches[0]), dc);
    return decode_mt<double>(detail::frames_to_accdoa(st.branches[0]),
                             detail::frames_to_dist(st.branches[1]), dc);
}

// features -> forward -> decode, from raw audio in the model's format
inline std::vector<EventRecord> predict_to_events(const Model& m, const AudioClip& audio,
                                                  const ClipSpec& clip_spec = {},
                                                  const DecodeConfig& dc = {}) {
    const FeatureTensor feat = extract_features(audio, m.format, clip_spec);
    return predict_events(m, feat, clip_spec, dc);
}

// ---------------------------------------------------------------------------
// Checkpoint I/O
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[4] = {'S', '3', 'D', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_u64(std::ostream& out, std::uint64_t v) {
    write_u32(out, static_cast<std::uint32_t>(v & 0xffffffffULL));
    write_u32(out, static_cast<std::uint32_t>(v >> 32));
}

inline std::uint64_t read_u64(std::istream& in) {
    const std::uint64_t lo = read_u32(in);
    const std::uint64_t hi = read_u32(in);
    return lo | (hi << 32);
}

inline void write_f64(std::ostream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_u64(out, bits);
}

inline double read_f64(std::istream& in) {
    const std::uint64_t bits = read_u64(in);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

inline void write_named_tensor(std::ostream& out, const std::string& name, const TensorD& t) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) write_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.data) write_f32(out, static_cast<float>(v));
}

inline std::pair<std::string, TensorD> read_named_tensor(std::istream& in) {
    const std::uint32_t name_len = read_u32(in);
    if (name_len > 256) throw BadCheckpoint("unreasonable tensor name length");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const std::uint32_t ndim = read_u32(in);
    if (ndim < 1 || ndim > 4) throw BadCheckpoint("bad tensor rank in checkpoint");
    std::vector<std::size_t> shape(ndim);
    for (auto& d : shape) d = read_u32(in);
    TensorD t(shape);
    for (auto& v : t.data) v = static_cast<double>(read_f32(in));
    if (!in) throw BadCheckpoint("truncated checkpoint tensor: " + name);
    return {name, std::move(t)};
}

} // namespace detail

// Weights are stored as float32; loading them back reproduces exactly what
// was written, not the pre-save doubles.
inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const Model& m = ckpt.model;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path.string());
    out.write(kCheckpointMagic, 4);
    detail::write_u32(out, kCheckpointVersion);
    detail::write_u32(out, m.method == OutputMethod::MultiAccddoa ? 0u : 1u);
    detail::write_u32(out, m.format == AudioFormat::FOA ? 0u : 1u);
    detail::write_u32(out, static_cast<std::uint32_t>(m.context));
    detail::write_u64(out, ckpt.config_hash);
    detail::write_u32(out, static_cast<std::uint32_t>(ckpt.epoch));
    detail::write_f64(out, ckpt.best_val);
    detail::write_u32(out, static_cast<std::uint32_t>(ckpt.rng_state.size()));
    out.write(ckpt.rng_state.data(), static_cast<std::streamsize>(ckpt.rng_state.size()));

    std::vector<std::pair<std::string, const TensorD*>> entries;
    TensorD mu({m.mu.size()}), sigma({m.sigma.size()});
    mu.data = m.mu;
    sigma.data = m.sigma;
    entries.push_back({"norm.mu", &mu});
    entries.push_back({"norm.sigma", &sigma});
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        entries.push_back({"hidden" + std::to_string(i) + ".w", &m.layers[i].w});
        entries.push_back({"hidden" + std::to_string(i) + ".b", &m.layers[i].b});
    }
    for (std::size_t i = 0; i < m.heads.size(); ++i) {
        entries.push_back({"head" + std::to_string(i) + ".w", &m.heads[i].w});
        entries.push_back({"head" + std::to_string(i) + ".b", &m.heads[i].b});
    }
    detail::write_u32(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, t] : entries) detail::write_named_tensor(out, name, *t);
    if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw BadCheckpoint("not a checkpoint file: " + path.string());
    const std::uint32_t version = detail::read_u32(in);
    if (version != kCheckpointVersion)
        throw BadCheckpoint("unsupported checkpoint version " + std::to_string(version));

    Checkpoint ckpt;
    Model& m = ckpt.model;
    const std::uint32_t method = detail::read_u32(in);
    const std::uint32_t format = detail::read_u32(in);
    if (method > 1 || format > 1) throw BadCheckpoint("bad enum field in checkpoint header");
    m.method = method == 0 ? OutputMethod::MultiAccddoa : OutputMethod::MultiTask;
    m.format = format == 0 ? AudioFormat::FOA : AudioFormat::Binaural;
    m.context = static_cast<int>(detail::read_u32(in));
    m.spec = m.method == OutputMethod::MultiAccddoa ? OutputSpec::multi_accddoa()
                                                    : OutputSpec::multi_task();
    ckpt.config_hash = detail::read_u64(in);
    ckpt.epoch = static_cast<int>(detail::read_u32(in));
    ckpt.best_val = detail::read_f64(in);
    const std::uint32_t rng_len = detail::read_u32(in);
    if (rng_len > 65536) throw BadCheckpoint("unreasonable rng state length");
    ckpt.rng_state.assign(rng_len, '\0');
    in.read(ckpt.rng_state.data(), rng_len);

    const std::uint32_t n_entries = detail::read_u32(in);
    if (!in) throw BadCheckpoint("truncated checkpoint header");
    std::map<std::string, TensorD> tensors;
    for (std::uint32_t i = 0; i < n_entries; ++i) {
        auto [name, t] = detail::read_named_tensor(in);
        tensors.emplace(std::move(name), std::move(t));
    }
    auto take = [&](const std::string& name) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw BadCheckpoint("checkpoint missing tensor: " + name);
        TensorD t = std::move(it->second);
        tensors.erase(it);
        return t;
    };
    m.mu = take("norm.mu").data;
    m.sigma = take("norm.sigma").data;
    for (std::size_t i = 0; tensors.count("hidden" + std::to_string(i) + ".w"); ++i) {
        Dense d;
        d.w = take("hidden" + std::to_string(i) + ".w");
        d.b = take("hidden" + std::to_string(i) + ".b");
        m.layers.push_back(std::move(d));
    }
    for (std::size_t i = 0; i < m.spec.widths.size(); ++i) {
        Dense d;
        d.w = take("head" + std::to_string(i) + ".w");
        d.b = take("head" + std::to_string(i) + ".b");
        if (d.w.shape[0] != static_cast<std::size_t>(m.spec.widths[i]))
            throw BadCheckpoint("head width does not match the output method");
        m.heads.push_back(std::move(d));
    }
    if (!tensors.empty())
        throw BadCheckpoint("unexpected tensor in checkpoint: " + tensors.begin()->first);
    return ckpt;
}

} // namespace seld3d

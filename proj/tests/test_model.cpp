// Context-window MLP: initialization, forward pass, exact parameter
// gradients, the Adam update, the training loop with early stopping, and
// checkpoint round trips.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "seld3d/model.hpp"
#include "seld3d/simulate.hpp"

using namespace seld3d;

namespace {

namespace fs = std::filesystem;

// unique scratch directory per test run
fs::path scratch_dir(const char* tag) {
    fs::path dir = fs::temp_directory_path() / (std::string("seld3d_model_") + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.hidden = {16};
    cfg.context = 0;
    cfg.epochs = 10;
    cfg.patience = 10;
    cfg.seed = 11;
    return cfg;
}

// feature tensor filled with seeded noise; cheap stand-in for real clips
FeatureTensor random_features(Rng& rng, AudioFormat fmt = AudioFormat::FOA) {
    FeatureTensor f;
    f.spec = feature_spec_for(fmt);
    f.data = Tensor({static_cast<std::size_t>(f.spec.channels),
                     static_cast<std::size_t>(f.spec.frames),
                     static_cast<std::size_t>(f.spec.features)});
    for (auto& v : f.data.data) v = static_cast<float>(rng.normal());
    return f;
}

// standardized input rows drawn directly, skipping feature extraction
TensorD random_inputs(Rng& rng, int rows, int width) {
    TensorD x({static_cast<std::size_t>(rows), static_cast<std::size_t>(width)});
    for (auto& v : x.data) v = rng.normal();
    return x;
}

std::vector<EventRecord> sample_events(int label_frames) {
    std::vector<EventRecord> events;
    for (int f = 0; f < label_frames; ++f) {
        EventRecord ev;
        ev.frame = f;
        ev.class_id = (f * 5 + 2) % ClassVocabulary::kNumClasses;
        ev.track_id = 0;
        ev.azimuth = -120.0 + 50.0 * f;
        ev.elevation = 10.0 * f - 15.0;
        ev.distance = 1.0 + 0.5 * f;
        events.push_back(ev);
    }
    return events;
}

double loss_only(const Model& m, const ModelConfig& cfg, const TensorD& x,
                 const ClipTargets& y) {
    Gradients scratch = zero_gradients(m);
    return loss_and_grads(m, cfg, x, y, scratch);
}

// central finite differences over a sample of parameter coordinates
void check_model_gradients(const ModelConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    Model m = init_model(cfg, rng);
    const int tl = 4;
    const TensorD x = random_inputs(rng, tl, m.input_width());
    const ClipTargets y = make_targets(sample_events(tl), cfg, tl);

    Gradients grads = zero_gradients(m);
    loss_and_grads(m, cfg, x, y, grads);

    std::vector<std::pair<TensorD*, TensorD*>> slots;
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        slots.push_back({&m.layers[i].w, &grads.layers[i].w});
        slots.push_back({&m.layers[i].b, &grads.layers[i].b});
    }
    for (std::size_t i = 0; i < m.heads.size(); ++i) {
        slots.push_back({&m.heads[i].w, &grads.heads[i].w});
        slots.push_back({&m.heads[i].b, &grads.heads[i].b});
    }

    const double h = 1e-5;
    double worst = 0.0;
    for (int trial = 0; trial < 120; ++trial) {
        auto& [param, grad] = slots[rng.uniform_index(slots.size())];
        const std::size_t j = rng.uniform_index(param->size());
        const double keep = (*param)[j];
        (*param)[j] = keep + h;
        const double up = loss_only(m, cfg, x, y);
        (*param)[j] = keep - h;
        const double down = loss_only(m, cfg, x, y);
        (*param)[j] = keep;
        const double fd = (up - down) / (2.0 * h);
        const double an = (*grad)[j];
        const double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-3});
        worst = std::max(worst, err);
    }
    INFO("worst sampled relative error " << worst);
    CHECK(worst < 1e-5);
}

// single-source scenes, the same shape of data the trainer sees in production
std::vector<TrainClip> synth_clips(int n, std::uint64_t tag) {
    std::vector<TrainClip> clips;
    for (int i = 0; i < n; ++i) {
        SceneConfig sc;
        sc.seed = mix_seed(tag, static_cast<std::uint64_t>(i));
        sc.n_events = 1;
        sc.moving_fraction = 0.0;
        SceneResult scene = synth_scene(sc);
        TrainClip tc;
        tc.features = extract_features(scene.audio, AudioFormat::FOA);
        tc.events = scene.events;
        clips.push_back(std::move(tc));
    }
    return clips;
}

void zero_weights(Model& m) {
    for (auto& l : m.layers) {
        std::fill(l.w.data.begin(), l.w.data.end(), 0.0);
        std::fill(l.b.data.begin(), l.b.data.end(), 0.0);
    }
    for (auto& h : m.heads) {
        std::fill(h.w.data.begin(), h.w.data.end(), 0.0);
        std::fill(h.b.data.begin(), h.b.data.end(), 0.0);
    }
}

} // namespace

TEST_CASE("init_model is deterministic in the seed and honors the layout") {
    ModelConfig cfg;
    cfg.hidden = {32, 24};
    cfg.context = 1;

    Rng a(5), b(5), c(6);
    const Model m1 = init_model(cfg, a);
    const Model m2 = init_model(cfg, b);
    const Model m3 = init_model(cfg, c);

    REQUIRE(m1.layers.size() == 2);
    REQUIRE(m1.heads.size() == 1);
    const int in = model_input_width(FeatureSpec::foa(), 1);
    CHECK(in == 7 * 64 * 3);
    CHECK(m1.input_width() == in);
    CHECK(m1.layers[0].w.shape == std::vector<std::size_t>{32, static_cast<std::size_t>(in)});
    CHECK(m1.layers[1].w.shape == std::vector<std::size_t>{24, 32});
    CHECK(m1.heads[0].w.shape == std::vector<std::size_t>{156, 24});

    CHECK(m1.layers[0].w.data == m2.layers[0].w.data);
    CHECK(m1.heads[0].w.data == m2.heads[0].w.data);
    CHECK(m1.layers[0].w.data != m3.layers[0].w.data);
}

TEST_CASE("initial weights use uniform fan-in scaling with zero biases") {
    ModelConfig cfg;
    cfg.hidden = {64};
    Rng rng(9);
    const Model m = init_model(cfg, rng);

    const double bound0 = 1.0 / std::sqrt(static_cast<double>(m.input_width()));
    double lo = 0.0, hi = 0.0;
    for (double v : m.layers[0].w.data) {
        CHECK(std::abs(v) <= bound0);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    // the draw actually spans the interval rather than collapsing near zero
    CHECK(lo < -0.8 * bound0);
    CHECK(hi > 0.8 * bound0);
    for (double v : m.layers[0].b.data) CHECK(v == 0.0);
    for (double v : m.heads[0].b.data) CHECK(v == 0.0);

    const double bound_head = 1.0 / std::sqrt(64.0);
    for (double v : m.heads[0].w.data) CHECK(std::abs(v) <= bound_head);
}

TEST_CASE("head count and widths follow the output method") {
    Rng rng(3);
    ModelConfig cfg;
    cfg.method = OutputMethod::MultiAccddoa;
    const Model single = init_model(cfg, rng);
    REQUIRE(single.heads.size() == 1);
    CHECK(single.heads[0].w.shape[0] == 156);
    CHECK(single.spec.activations[0] == Activation::Linear);

    cfg.method = OutputMethod::MultiTask;
    const Model dual = init_model(cfg, rng);
    REQUIRE(dual.heads.size() == 2);
    CHECK(dual.heads[0].w.shape[0] == 39);
    CHECK(dual.heads[1].w.shape[0] == 13);
    CHECK(dual.spec.activations[0] == Activation::Tanh);
    CHECK(dual.spec.activations[1] == Activation::Relu);
}

TEST_CASE("init_model rejects non-positive hidden widths") {
    ModelConfig cfg;
    cfg.hidden = {16, 0};
    Rng rng(1);
    CHECK_THROWS_AS(init_model(cfg, rng), RangeError);
}

TEST_CASE("window_inputs stacks the context window and clamps at the edges") {
    FeatureTensor feat;
    feat.spec = FeatureSpec::foa();
    feat.data = Tensor({7, 250, 64});
    // value encodes the frame index so the stacked layout is visible
    for (int ch = 0; ch < 7; ++ch)
        for (int t = 0; t < 250; ++t)
            for (int b = 0; b < 64; ++b) feat.data.at(ch, t, b) = static_cast<float>(t);

    const ClipSpec clip;
    const int context = 3;
    const TensorD x = window_inputs(feat, context, clip);
    REQUIRE(x.shape == std::vector<std::size_t>{50, static_cast<std::size_t>(7 * 64 * 7)});

    const int block = 7 * 64;  // one context offset holds all channels and bins
    // label frame 0 is centered on feature frame 2; offset -3 clamps to 0
    CHECK(x.at(0, 0) == 0.0);
    CHECK(x.at(0, block) == 0.0);
    CHECK(x.at(0, 2 * block) == 1.0);
    CHECK(x.at(0, 6 * block) == 5.0);
    // label frame 49 is centered on feature frame 247; offset +3 clamps to 249
    CHECK(x.at(49, 0) == 244.0);
    CHECK(x.at(49, 6 * block) == 249.0);
    // an interior frame reads the plain arithmetic window
    CHECK(x.at(10, 0) == 49.0);
    CHECK(x.at(10, 3 * block) == 52.0);
    CHECK(x.at(10, 6 * block) == 55.0);
}

TEST_CASE("forward maps 250 feature frames to 50 output frames per head") {
    Rng rng(21);
    ModelConfig cfg = tiny_config();
    Model m = init_model(cfg, rng);
    const FeatureTensor feat = random_features(rng);

    const TensorD x = model_inputs(m, feat, ClipSpec{});
    REQUIRE(x.shape[0] == 50);
    const ForwardState st = forward(m, x);
    REQUIRE(st.branches.size() == 1);
    CHECK(st.branches[0].shape == std::vector<std::size_t>{50, 156});
    for (double v : st.branches[0].data) CHECK(std::isfinite(v));

    cfg.method = OutputMethod::MultiTask;
    Model mt = init_model(cfg, rng);
    const ForwardState st2 = forward(mt, model_inputs(mt, feat, ClipSpec{}));
    REQUIRE(st2.branches.size() == 2);
    CHECK(st2.branches[0].shape == std::vector<std::size_t>{50, 39});
    CHECK(st2.branches[1].shape == std::vector<std::size_t>{50, 13});
    for (double v : st2.branches[0].data) {
        CHECK(v > -1.0);
        CHECK(v < 1.0);
    }
    for (double v : st2.branches[1].data) CHECK(v >= 0.0);
}

TEST_CASE("zero weights produce all-zero outputs on every head") {
    Rng rng(4);
    ModelConfig cfg = tiny_config();
    cfg.method = OutputMethod::MultiTask;
    Model m = init_model(cfg, rng);
    zero_weights(m);

    const FeatureTensor feat = random_features(rng);
    const ForwardState st = forward(m, model_inputs(m, feat, ClipSpec{}));
    for (const TensorD& branch : st.branches)
        for (double v : branch.data) CHECK(v == 0.0);
}

TEST_CASE("identical input rows produce identical output rows") {
    Rng rng(31);
    ModelConfig cfg = tiny_config();
    Model m = init_model(cfg, rng);

    TensorD x = random_inputs(rng, 6, m.input_width());
    for (int r = 1; r < 6; ++r)
        for (int i = 0; i < m.input_width(); ++i) x.at(r, i) = x.at(0, i);

    const ForwardState st = forward(m, x);
    const TensorD& out = st.branches[0];
    for (std::size_t r = 1; r < out.shape[0]; ++r)
        for (std::size_t c = 0; c < out.shape[1]; ++c) CHECK(out.at(r, c) == out.at(0, c));
}

TEST_CASE("model_inputs rejects features that do not match the model") {
    Rng rng(2);
    ModelConfig cfg = tiny_config();
    Model m = init_model(cfg, rng);
    const FeatureTensor wrong = random_features(rng, AudioFormat::Binaural);
    CHECK_THROWS_AS(model_inputs(m, wrong, ClipSpec{}), ShapeMismatch);
}

TEST_CASE("analytic parameter gradients match finite differences") {
    SECTION("single-branch head, squared-error base") {
        ModelConfig cfg = tiny_config();
        cfg.method = OutputMethod::MultiAccddoa;
        cfg.loss_kind = LossKind::MSE;
        check_model_gradients(cfg, 101);
    }
    SECTION("single-branch head, absolute-error base with distance weight") {
        ModelConfig cfg = tiny_config();
        cfg.method = OutputMethod::MultiAccddoa;
        cfg.loss_kind = LossKind::MAE;
        cfg.dist_weight = 0.6;
        check_model_gradients(cfg, 103);
    }
    SECTION("two-branch head, squared-error distance") {
        ModelConfig cfg = tiny_config();
        cfg.method = OutputMethod::MultiTask;
        cfg.loss_kind = LossKind::MSE;
        check_model_gradients(cfg, 107);
    }
    SECTION("two hidden layers") {
        ModelConfig cfg = tiny_config();
        cfg.hidden = {12, 10};
        cfg.loss_kind = LossKind::MSE;
        check_model_gradients(cfg, 109);
    }
}

TEST_CASE("gradients vanish at a perfect fit") {
    Rng rng(55);
    ModelConfig cfg = tiny_config();
    Model m = init_model(cfg, rng);
    const int tl = 4;
    const TensorD x = random_inputs(rng, tl, m.input_width());

    // targets copied from the model's own outputs: the loss floor is exact
    ClipTargets y;
    y.adpit = detail::frames_to_accddoa(forward(m, x).branches[0]);

    Gradients grads = zero_gradients(m);
    const double loss = loss_and_grads(m, cfg, x, y, grads);
    CHECK(loss == 0.0);
    for (const auto& layer : grads.layers) {
        for (double v : layer.w.data) CHECK(v == 0.0);
        for (double v : layer.b.data) CHECK(v == 0.0);
    }
    for (const auto& head : grads.heads) {
        for (double v : head.w.data) CHECK(v == 0.0);
        for (double v : head.b.data) CHECK(v == 0.0);
    }
}

TEST_CASE("first Adam step moves every active parameter by about lr") {
    Rng rng(77);
    ModelConfig cfg = tiny_config();
    Model m = init_model(cfg, rng);
    const TensorD x = random_inputs(rng, 4, m.input_width());
    const ClipTargets y = make_targets(sample_events(4), cfg, 4);

    Gradients grads = zero_gradients(m);
    loss_and_grads(m, cfg, x, y, grads);

    Model stepped = m;
    AdamState adam = init_adam(stepped, cfg);
    const double lr = 1e-3;
    adam_step(stepped, grads, adam, lr);
    CHECK(adam.t == 1);

    int active = 0;
    for (std::size_t i = 0; i < m.heads[0].w.size(); ++i) {
        const double g = grads.heads[0].w[i];
        if (std::abs(g) < 1e-5) continue;
        const double delta = stepped.heads[0].w[i] - m.heads[0].w[i];
        // bias-corrected first step is -lr * g/(|g| + eps), i.e. lr-sized
        CHECK(std::abs(delta) == Catch::Approx(lr).epsilon(1e-2));
        CHECK(delta * g < 0.0);
        ++active;
    }
    CHECK(active > 100);
}

TEST_CASE("Adam leaves parameters untouched when gradients are zero") {
    Rng rng(78);
    ModelConfig cfg = tiny_config();
    Model m = init_model(cfg, rng);
    const Model before = m;

    AdamState adam = init_adam(m, cfg);
    const Gradients zeros = zero_gradients(m);
    adam_step(m, zeros, adam, 1e-3);

    CHECK(adam.t == 1);
    CHECK(m.layers[0].w.data == before.layers[0].w.data);
    CHECK(m.heads[0].w.data == before.heads[0].w.data);
}

TEST_CASE("identical Adam sequences produce identical parameters") {
    Rng rng(79);
    ModelConfig cfg = tiny_config();
    Model m = init_model(cfg, rng);
    const TensorD x = random_inputs(rng, 4, m.input_width());
    const ClipTargets y = make_targets(sample_events(4), cfg, 4);

    auto run = [&](Model model) {
        AdamState adam = init_adam(model, cfg);
        for (int step = 0; step < 5; ++step) {
            Gradients grads = zero_gradients(model);
            loss_and_grads(model, cfg, x, y, grads);
            adam_step(model, grads, adam, cfg.lr);
        }
        return model;
    };
    const Model a = run(m);
    const Model b = run(m);
    CHECK(a.layers[0].w.data == b.layers[0].w.data);
    CHECK(a.heads[0].w.data == b.heads[0].w.data);
}

TEST_CASE("loss decreases over repeated Adam steps on a fixed batch") {
    Rng rng(80);
    ModelConfig cfg = tiny_config();
    Model m = init_model(cfg, rng);
    const TensorD x = random_inputs(rng, 4, m.input_width());
    const ClipTargets y = make_targets(sample_events(4), cfg, 4);

    AdamState adam = init_adam(m, cfg);
    double first = 0.0, last = 0.0;
    for (int step = 0; step < 100; ++step) {
        Gradients grads = zero_gradients(m);
        const double loss = loss_and_grads(m, cfg, x, y, grads);
        if (step == 0) first = loss;
        last = loss;
        adam_step(m, grads, adam, cfg.lr);
    }
    CHECK(last < 0.5 * first);
}

TEST_CASE("train fits synthetic clips and reports the loss curves") {
    const std::vector<TrainClip> clips = synth_clips(6, 400);
    const std::vector<TrainClip> train_set(clips.begin(), clips.begin() + 4);
    const std::vector<TrainClip> val_set(clips.begin() + 4, clips.end());

    ModelConfig cfg = tiny_config();
    const TrainResult res = train(train_set, val_set, cfg);

    REQUIRE(res.train_loss.size() == 10);
    REQUIRE(res.val_loss.size() == 10);
    CHECK(res.train_loss.back() < res.train_loss.front());

    const auto best = std::min_element(res.val_loss.begin(), res.val_loss.end());
    CHECK(res.checkpoint.epoch == static_cast<int>(best - res.val_loss.begin()));
    CHECK(res.checkpoint.best_val == *best);
    CHECK(res.checkpoint.config_hash == model_config_hash(cfg));
    CHECK_FALSE(res.checkpoint.rng_state.empty());
}

TEST_CASE("training is reproducible bit-for-bit under a fixed seed") {
    const std::vector<TrainClip> clips = synth_clips(5, 401);
    const std::vector<TrainClip> train_set(clips.begin(), clips.begin() + 4);
    const std::vector<TrainClip> val_set(clips.begin() + 4, clips.end());

    ModelConfig cfg = tiny_config();
    cfg.epochs = 6;
    cfg.batch_clips = 3;  // uneven final batch exercises the remainder path
    const TrainResult a = train(train_set, val_set, cfg);
    const TrainResult b = train(train_set, val_set, cfg);

    CHECK(a.train_loss == b.train_loss);
    CHECK(a.val_loss == b.val_loss);
    CHECK(a.checkpoint.model.layers[0].w.data == b.checkpoint.model.layers[0].w.data);
    CHECK(a.checkpoint.model.heads[0].w.data == b.checkpoint.model.heads[0].w.data);
    CHECK(a.checkpoint.rng_state == b.checkpoint.rng_state);
}

TEST_CASE("patience zero stops at the first epoch that fails to improve") {
    const std::vector<TrainClip> clips = synth_clips(5, 402);
    const std::vector<TrainClip> train_set(clips.begin(), clips.begin() + 4);
    const std::vector<TrainClip> val_set(clips.begin() + 4, clips.end());

    ModelConfig cfg = tiny_config();
    cfg.epochs = 60;
    cfg.patience = 0;
    const TrainResult res = train(train_set, val_set, cfg);

    REQUIRE(res.val_loss.size() < 60);
    // the run ends exactly one epoch after the best one
    CHECK(res.val_loss.size() == static_cast<std::size_t>(res.checkpoint.epoch) + 2);
    CHECK(res.checkpoint.best_val == res.val_loss[res.checkpoint.epoch]);
}

TEST_CASE("an empty validation set disables early stopping") {
    const std::vector<TrainClip> clips = synth_clips(3, 403);

    ModelConfig cfg = tiny_config();
    cfg.epochs = 4;
    cfg.patience = 0;
    const TrainResult res = train(clips, {}, cfg);

    CHECK(res.train_loss.size() == 4);
    CHECK(res.val_loss.empty());
    CHECK(res.checkpoint.epoch == 3);
    CHECK(std::isnan(res.checkpoint.best_val));
}

TEST_CASE("train validates its inputs") {
    const std::vector<TrainClip> clips = synth_clips(1, 404);
    ModelConfig cfg = tiny_config();
    CHECK_THROWS_AS(train({}, {}, cfg), EmptyDataset);

    cfg.batch_clips = 0;
    CHECK_THROWS_AS(train(clips, {}, cfg), RangeError);
}

TEST_CASE("config text lists every training knob and hashes stably") {
    ModelConfig cfg;
    cfg.hidden = {128, 64};
    const std::string text = model_config_text(cfg);
    CHECK(text.find("method=multi-accddoa\n") != std::string::npos);
    CHECK(text.find("hidden=128,64\n") != std::string::npos);
    CHECK(text.find("loss=mse\n") != std::string::npos);
    CHECK(text.find("lr=0.001\n") != std::string::npos);
    CHECK(text.find("patience=75\n") != std::string::npos);

    ModelConfig same = cfg;
    CHECK(model_config_hash(cfg) == model_config_hash(same));

    ModelConfig faster = cfg;
    faster.lr = 2e-3;
    CHECK(model_config_hash(cfg) != model_config_hash(faster));

    ModelConfig mt = cfg;
    mt.method = OutputMethod::MultiTask;
    CHECK(model_config_text(mt).find("method=mt\n") != std::string::npos);
    CHECK(model_config_hash(cfg) != model_config_hash(mt));
}

TEST_CASE("checkpoints round trip the run metadata and the weights") {
    const fs::path dir = scratch_dir("roundtrip");
    const std::vector<TrainClip> clips = synth_clips(4, 405);
    const std::vector<TrainClip> train_set(clips.begin(), clips.begin() + 3);
    const std::vector<TrainClip> val_set(clips.begin() + 3, clips.end());

    ModelConfig cfg = tiny_config();
    cfg.epochs = 3;
    const TrainResult res = train(train_set, val_set, cfg);

    const fs::path path = dir / "model.ckpt";
    save_checkpoint(res.checkpoint, path);
    const Checkpoint loaded = load_checkpoint(path);

    CHECK(loaded.config_hash == res.checkpoint.config_hash);
    CHECK(loaded.epoch == res.checkpoint.epoch);
    CHECK(loaded.best_val == res.checkpoint.best_val);
    CHECK(loaded.rng_state == res.checkpoint.rng_state);
    CHECK(loaded.model.context == res.checkpoint.model.context);
    CHECK(loaded.model.method == res.checkpoint.model.method);
    CHECK(loaded.model.format == res.checkpoint.model.format);
    REQUIRE(loaded.model.layers.size() == res.checkpoint.model.layers.size());

    // weights are stored as float32: reloaded values sit within rounding of
    // the originals, and a second save/load cycle reproduces them exactly
    Rng rng(500);
    const FeatureTensor feat = random_features(rng);
    const TensorD x_orig = model_inputs(res.checkpoint.model, feat, ClipSpec{});
    const TensorD x_load = model_inputs(loaded.model, feat, ClipSpec{});
    const TensorD out_orig = forward(res.checkpoint.model, x_orig).branches[0];
    const TensorD out_load = forward(loaded.model, x_load).branches[0];
    REQUIRE(out_orig.shape == out_load.shape);
    for (std::size_t i = 0; i < out_orig.size(); ++i)
        CHECK(out_load[i] == Catch::Approx(out_orig[i]).margin(1e-4));

    Checkpoint copy = loaded;
    const fs::path path2 = dir / "model2.ckpt";
    save_checkpoint(copy, path2);
    const Checkpoint reloaded = load_checkpoint(path2);
    const TensorD out_re =
        forward(reloaded.model, model_inputs(reloaded.model, feat, ClipSpec{})).branches[0];
    CHECK(out_re.data == out_load.data);

    fs::remove_all(dir);
}

TEST_CASE("checkpoint loading rejects damaged files") {
    const fs::path dir = scratch_dir("damage");

    CHECK_THROWS_AS(load_checkpoint(dir / "absent.ckpt"), IoError);

    const fs::path junk = dir / "junk.ckpt";
    std::ofstream(junk, std::ios::binary) << "not a checkpoint at all";
    CHECK_THROWS_AS(load_checkpoint(junk), BadCheckpoint);

    // a real checkpoint, then damaged copies of it
    Rng rng(600);
    ModelConfig cfg = tiny_config();
    Checkpoint ckpt;
    ckpt.model = init_model(cfg, rng);
    ckpt.config_hash = model_config_hash(cfg);
    const fs::path good = dir / "good.ckpt";
    save_checkpoint(ckpt, good);
    CHECK_NOTHROW(load_checkpoint(good));

    std::ifstream in(good, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();

    const fs::path truncated = dir / "truncated.ckpt";
    std::ofstream(truncated, std::ios::binary).write(bytes.data(), bytes.size() / 2);
    CHECK_THROWS_AS(load_checkpoint(truncated), std::runtime_error);

    std::string bad_method = bytes;
    bad_method[8] = 9;  // method enum follows the magic and version words
    const fs::path enum_path = dir / "enum.ckpt";
    std::ofstream(enum_path, std::ios::binary).write(bad_method.data(), bad_method.size());
    CHECK_THROWS_AS(load_checkpoint(enum_path), BadCheckpoint);

    fs::remove_all(dir);
}

TEST_CASE("predict_to_events yields valid, deterministic records") {
    SceneConfig sc;
    sc.seed = 77;
    sc.n_events = 1;
    sc.moving_fraction = 0.0;
    const SceneResult scene = synth_scene(sc);

    Rng rng(88);
    ModelConfig cfg = tiny_config();
    Model m = init_model(cfg, rng);
    // scale the head up so an untrained model still crosses the gate
    for (auto& v : m.heads[0].w.data) v *= 40.0;

    const std::vector<EventRecord> once = predict_to_events(m, scene.audio);
    const std::vector<EventRecord> twice = predict_to_events(m, scene.audio);
    REQUIRE_FALSE(once.empty());
    CHECK(once.size() == twice.size());
    for (std::size_t i = 0; i < once.size(); ++i) {
        CHECK_NOTHROW(once[i].validate());
        CHECK(once[i].frame == twice[i].frame);
        CHECK(once[i].azimuth == twice[i].azimuth);
        CHECK(once[i].distance == twice[i].distance);
    }
}

TEST_CASE("a zero-weight model predicts no events at the default gate") {
    SceneConfig sc;
    sc.seed = 78;
    sc.n_events = 1;
    const SceneResult scene = synth_scene(sc);

    Rng rng(89);
    Model m = init_model(tiny_config(), rng);
    zero_weights(m);
    CHECK(predict_to_events(m, scene.audio).empty());
}

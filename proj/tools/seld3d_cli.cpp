// Command-line batch tools around the library: dataset synthesis, feature
// extraction, training, and evaluation as reproducible runs.
//
// Exit codes: 0 success, 1 usage error, 2 data/runtime error.

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "seld3d/seld3d.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace seld3d;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

int thread_budget() {
    if (const char* env = std::getenv("SELD3D_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc > 0 ? static_cast<int>(hc) : 1;
}

// Applies a key=value config file to a parsed subcommand. Explicit
// command-line flags win over file entries; unknown keys and values that
// fail an option's validation are usage errors.
int apply_config_file(CLI::App* sub, const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        std::cerr << "usage error: cannot read config file " << path << "\n";
        return kExitUsage;
    }
    auto trim = [](const std::string& s) {
        const auto a = s.find_first_not_of(" \t\r");
        const auto b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    std::string line;
    while (std::getline(in, line)) {
        const std::string entry = trim(line);
        if (entry.empty() || entry[0] == '#' || entry[0] == ';') continue;
        const auto eq = entry.find('=');
        if (eq == std::string::npos) {
            std::cerr << "usage error: malformed config line '" << entry << "' in " << path
                      << "\n";
            return kExitUsage;
        }
        const std::string key = trim(entry.substr(0, eq));
        std::string value = trim(entry.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
            value = value.substr(1, value.size() - 2);
        CLI::Option* opt = sub->get_option_no_throw("--" + key);
        if (opt == nullptr) {
            std::cerr << "usage error: unknown config key '" << key << "' in " << path << "\n";
            return kExitUsage;
        }
        if (opt->count() > 0) continue;  // command line wins
        try {
            opt->add_result(value);
            opt->run_callback();
        } catch (const CLI::ParseError& err) {
            std::cerr << "usage error: config key '" << key << "': " << err.what() << "\n";
            return kExitUsage;
        }
    }
    return 0;
}

// fn(i) for i in [0, n), striped across the thread budget; per-index work is
// independent, so results do not depend on the number of workers
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const std::size_t workers =
        std::min(static_cast<std::size_t>(thread_budget()), std::max<std::size_t>(n, 1));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::mutex mu;
    std::exception_ptr first_error;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) fn(i);
            } catch (...) {
                const std::lock_guard<std::mutex> lock(mu);
                if (!first_error) first_error = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

AudioFormat parse_format(const std::string& s) {
    return s == "binaural" ? AudioFormat::Binaural : AudioFormat::FOA;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

json ci_json(const MetricCi& ci) {
    return json{{"estimate", ci.estimate}, {"low", ci.low}, {"high", ci.high}};
}

json report_json(const Scores& s, std::size_t clips) {
    json j{{"schema", 1},         {"clips", clips},           {"er", s.er},
           {"f1", s.f1},          {"doa_error", s.doa_error}, {"recall", s.recall},
           {"dist_error", s.dist_error}};
    if (s.er_ci) {
        j["ci"] = json{{"er", ci_json(*s.er_ci)},
                       {"f1", ci_json(*s.f1_ci)},
                       {"doa_error", ci_json(*s.doa_error_ci)},
                       {"recall", ci_json(*s.recall_ci)},
                       {"dist_error", ci_json(*s.dist_error_ci)}};
    }
    return j;
}

void print_report(const Scores& s, std::size_t clips, std::ostream& out) {
    auto row = [&](const char* name, double value, const std::optional<MetricCi>& ci) {
        out << std::left << std::setw(16) << name << std::right << std::setw(10)
            << std::fixed << std::setprecision(4) << value;
        if (ci)
            out << "   [" << std::setprecision(4) << ci->low << ", " << ci->high << "]";
        out << "\n";
    };
    out << "scores over " << clips << " clip(s)";
    if (s.er_ci) out << ", 95% jackknife intervals";
    out << "\n";
    row("error_rate", s.er, s.er_ci);
    row("f1_pct", s.f1, s.f1_ci);
    row("doa_error_deg", s.doa_error, s.doa_error_ci);
    row("recall_pct", s.recall, s.recall_ci);
    row("dist_error_m", s.dist_error, s.dist_error_ci);
}

void emit_report(const Scores& s, std::size_t clips, const std::string& json_path) {
    print_report(s, clips, std::cout);
    if (!json_path.empty()) {
        std::ofstream out(json_path);
        if (!out) throw IoError("cannot write report: " + json_path);
        out << report_json(s, clips).dump(2) << "\n";
    }
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthOpts {
    std::string out;
    int clips = 10;
    std::string format = "foa";
    SceneConfig scene;
};

int cmd_synth(const SynthOpts& o) {
    SceneConfig cfg = o.scene;
    cfg.format = parse_format(o.format);
    const auto rows = synth_dataset(cfg, o.clips, o.out);
    std::cout << "wrote " << rows.size() << " clip(s) to " << o.out << " (manifest.csv)\n";
    return 0;
}

// ---------------------------------------------------------------------------
// extract
// ---------------------------------------------------------------------------

struct ExtractOpts {
    std::string audio_dir;
    std::string out_dir;
    std::string format = "foa";
};

int cmd_extract(const ExtractOpts& o) {
    const AudioFormat fmt = parse_format(o.format);
    std::vector<fs::path> wavs;
    for (const auto& entry : fs::directory_iterator(o.audio_dir))
        if (entry.is_regular_file() && entry.path().extension() == ".wav")
            wavs.push_back(entry.path());
    std::sort(wavs.begin(), wavs.end());
    if (wavs.empty()) throw IoError("no WAV files in " + o.audio_dir);
    fs::create_directories(o.out_dir);

    std::mutex mu;
    std::vector<std::string> failures;
    std::size_t done = 0, skipped = 0;
    parallel_for(wavs.size(), [&](std::size_t i) {
        const fs::path out = fs::path(o.out_dir) / wavs[i].filename().replace_extension(".s3dt");
        if (fs::exists(out)) {
            const std::lock_guard<std::mutex> lock(mu);
            ++skipped;
            return;
        }
        try {
            const AudioClip clip = read_wav(wavs[i]);
            const FeatureTensor feat = extract_features(clip, fmt);
            save_tensor(feat.data, out.string());
            const std::lock_guard<std::mutex> lock(mu);
            ++done;
        } catch (const std::exception& e) {
            const std::lock_guard<std::mutex> lock(mu);
            failures.push_back(wavs[i].filename().string() + ": " + e.what());
        }
    });

    std::cout << "extracted " << done << ", skipped " << skipped << ", failed "
              << failures.size() << "\n";
    if (!failures.empty()) {
        std::sort(failures.begin(), failures.end());
        for (const auto& f : failures) std::cerr << "error: " << f << "\n";
        return kExitData;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOpts {
    std::string manifest;
    std::string out;
    std::string log_csv;
    double val_frac = 0.2;
    std::string method = "multi-accddoa";
    std::string loss = "mse";
    double dist_weight = 1.0;
    std::vector<int> hidden = {256, 256};
    int context = 2;
    double lr = 1e-3;
    int epochs = 250;
    int patience = 75;
    int batch = 1;
    std::uint64_t seed = 0;
    std::string format = "foa";
};

std::vector<TrainClip> load_clips(const std::vector<ManifestRow>& rows, const fs::path& base,
                                  AudioFormat fmt) {
    std::vector<TrainClip> clips(rows.size());
    parallel_for(rows.size(), [&](std::size_t i) {
        const AudioClip audio = read_wav(base / rows[i].path_wav);
        clips[i].features = extract_features(audio, fmt);
        clips[i].events = read_metadata(base / rows[i].path_csv);
    });
    return clips;
}

int cmd_train(const TrainOpts& o) {
    ModelConfig cfg;
    cfg.format = parse_format(o.format);
    cfg.method = o.method == "mt" ? OutputMethod::MultiTask : OutputMethod::MultiAccddoa;
    cfg.loss_kind = parse_loss_kind(o.loss);
    if (cfg.method == OutputMethod::MultiAccddoa &&
        (cfg.loss_kind == LossKind::MSPE || cfg.loss_kind == LossKind::MAPE)) {
        std::cerr << "usage error: --method multi-accddoa supports --loss mse or mae only\n";
        return kExitUsage;
    }
    cfg.dist_weight = o.dist_weight;
    cfg.hidden = o.hidden;
    cfg.context = o.context;
    cfg.lr = o.lr;
    cfg.epochs = o.epochs;
    cfg.patience = o.patience;
    cfg.batch_clips = o.batch;
    cfg.seed = o.seed;

    const fs::path manifest_path(o.manifest);
    const auto rows = read_manifest(manifest_path);
    const auto clips = load_clips(rows, manifest_path.parent_path(), cfg.format);

    const auto n_val = static_cast<std::size_t>(std::llround(o.val_frac * clips.size()));
    if (n_val >= clips.size())
        throw RangeError("--val-frac leaves no training clips");
    const std::vector<TrainClip> train_set(clips.begin(), clips.end() - n_val);
    const std::vector<TrainClip> val_set(clips.end() - n_val, clips.end());
    std::cerr << "training on " << train_set.size() << " clip(s), validating on "
              << val_set.size() << "\n";

    const TrainResult res = train(train_set, val_set, cfg, ClipSpec{}, &std::cerr);
    save_checkpoint(res.checkpoint, o.out);

    std::ofstream cfg_out(o.out + ".config");
    cfg_out << model_config_text(cfg);

    const std::string log_path = o.log_csv.empty() ? o.out + ".log.csv" : o.log_csv;
    std::ofstream log(log_path);
    log << "epoch,train_loss,val_loss\n";
    for (std::size_t e = 0; e < res.train_loss.size(); ++e) {
        log << e + 1 << "," << res.train_loss[e] << ",";
        if (e < res.val_loss.size()) log << res.val_loss[e];
        log << "\n";
    }

    std::cout << "checkpoint " << o.out << " (best epoch " << res.checkpoint.epoch + 1
              << ", best val " << res.checkpoint.best_val << ")\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval / score
// ---------------------------------------------------------------------------

struct EvalOpts {
    std::string ckpt;
    std::string manifest;
    std::string preds_out;
    std::string json_path;
    double threshold = 0.5;
    bool no_ci = false;
};

Scores scores_from_counts(std::vector<SegmentCounts> counts, bool no_ci) {
    if (no_ci || counts.size() < 2) {
        SegmentCounts all;
        for (const auto& c : counts) all.merge(c);
        return compute_scores(all);
    }
    return scores_with_ci(counts);
}

int cmd_eval(const EvalOpts& o) {
    const Checkpoint ckpt = load_checkpoint(o.ckpt);
    const fs::path manifest_path(o.manifest);
    const auto rows = read_manifest(manifest_path);
    const fs::path base = manifest_path.parent_path();
    if (!o.preds_out.empty()) fs::create_directories(o.preds_out);

    DecodeConfig dc;
    dc.threshold = o.threshold;

    std::vector<SegmentCounts> counts(rows.size());
    parallel_for(rows.size(), [&](std::size_t i) {
        const AudioClip audio = read_wav(base / rows[i].path_wav);
        const auto refs = read_metadata(base / rows[i].path_csv);
        const auto preds = predict_to_events(ckpt.model, audio, ClipSpec{}, dc);
        counts[i] = score_segments(refs, preds);
        if (!o.preds_out.empty())
            write_metadata(preds, fs::path(o.preds_out) / (rows[i].clip_id + ".csv"));
    });

    emit_report(scores_from_counts(std::move(counts), o.no_ci), rows.size(), o.json_path);
    return 0;
}

struct ScoreOpts {
    std::string refs_dir;
    std::string preds_dir;
    std::string json_path;
    bool no_ci = false;
};

int cmd_score(const ScoreOpts& o) {
    std::vector<fs::path> ref_files;
    for (const auto& entry : fs::directory_iterator(o.refs_dir))
        if (entry.is_regular_file() && entry.path().extension() == ".csv" &&
            entry.path().filename() != "manifest.csv")
            ref_files.push_back(entry.path());
    std::sort(ref_files.begin(), ref_files.end());
    if (ref_files.empty()) throw IoError("no reference CSVs in " + o.refs_dir);

    std::vector<std::string> missing;
    for (const auto& ref : ref_files)
        if (!fs::exists(fs::path(o.preds_dir) / ref.filename()))
            missing.push_back(ref.filename().string());
    if (!missing.empty()) {
        for (const auto& name : missing)
            std::cerr << "error: no prediction file for " << name << "\n";
        return kExitData;
    }

    std::vector<SegmentCounts> counts(ref_files.size());
    parallel_for(ref_files.size(), [&](std::size_t i) {
        const auto refs = read_metadata(ref_files[i]);
        const auto preds = read_metadata(fs::path(o.preds_dir) / ref_files[i].filename());
        counts[i] = score_segments(refs, preds);
    });

    emit_report(scores_from_counts(std::move(counts), o.no_ci), ref_files.size(),
                o.json_path);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"sound event detection, localization and distance toolkit"};
    app.require_subcommand(1);

    // one slot suffices: exactly one subcommand parses per invocation
    std::string config_path;
    auto add_config = [&config_path](CLI::App* sub) {
        sub->add_option("--config", config_path, "key=value config file")->configurable(false);
    };

    SynthOpts synth;
    CLI::App* s = app.add_subcommand("synth", "synthesize a labelled dataset");
    add_config(s);
    s->add_option("--out", synth.out, "output directory")->required();
    s->add_option("--clips", synth.clips, "number of clips")->check(CLI::PositiveNumber);
    s->add_option("--seed", synth.scene.seed, "base RNG seed");
    s->add_option("--format", synth.format, "audio format")
        ->check(CLI::IsMember({"foa", "binaural"}))
        ->capture_default_str();
    s->add_option("--events", synth.scene.n_events, "events per clip")
        ->capture_default_str();
    s->add_option("--polyphony", synth.scene.max_polyphony, "max simultaneous events")
        ->capture_default_str();
    s->add_option("--min-dist", synth.scene.min_distance, "min source distance, m")
        ->capture_default_str();
    s->add_option("--max-dist", synth.scene.max_distance, "max source distance, m")
        ->capture_default_str();
    s->add_option("--min-event", synth.scene.min_event_s, "min event length, s")
        ->capture_default_str();
    s->add_option("--max-event", synth.scene.max_event_s, "max event length, s")
        ->capture_default_str();
    s->add_option("--moving", synth.scene.moving_fraction, "fraction of moving sources")
        ->capture_default_str();
    s->add_option("--snr", synth.scene.snr_db, "mixture-over-noise SNR, dB")
        ->capture_default_str();

    ExtractOpts extract;
    CLI::App* x = app.add_subcommand("extract", "extract feature tensors from WAV files");
    add_config(x);
    x->add_option("--audio", extract.audio_dir, "directory of WAV clips")->required();
    x->add_option("--out", extract.out_dir, "output directory")->required();
    x->add_option("--format", extract.format, "audio format")
        ->check(CLI::IsMember({"foa", "binaural"}))
        ->capture_default_str();

    TrainOpts tr;
    CLI::App* t = app.add_subcommand("train", "train a model on a dataset manifest");
    add_config(t);
    t->add_option("--manifest", tr.manifest, "dataset manifest CSV")->required();
    t->add_option("--out", tr.out, "checkpoint output path")->required();
    t->add_option("--log", tr.log_csv, "training log CSV path");
    t->add_option("--val-frac", tr.val_frac, "fraction of clips held for validation")
        ->check(CLI::Range(0.0, 0.9))
        ->capture_default_str();
    t->add_option("--method", tr.method, "output format")
        ->check(CLI::IsMember({"multi-accddoa", "mt"}))
        ->capture_default_str();
    t->add_option("--loss", tr.loss, "for multi-accddoa the track loss; for mt the distance branch")
        ->check(CLI::IsMember({"mse", "mae", "mspe", "mape"}))
        ->capture_default_str();
    t->add_option("--dist-weight", tr.dist_weight, "distance term weight")
        ->capture_default_str();
    t->add_option("--hidden", tr.hidden, "hidden layer widths")
        ->delimiter(',')
        ->capture_default_str();
    t->add_option("--context", tr.context, "context frames per side")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    t->add_option("--lr", tr.lr, "Adam learning rate")->capture_default_str();
    t->add_option("--epochs", tr.epochs, "max epochs")->capture_default_str();
    t->add_option("--patience", tr.patience, "early-stopping patience, epochs")
        ->capture_default_str();
    t->add_option("--batch", tr.batch, "clips per optimizer step")->capture_default_str();
    t->add_option("--seed", tr.seed, "training seed");
    t->add_option("--format", tr.format, "audio format")
        ->check(CLI::IsMember({"foa", "binaural"}))
        ->capture_default_str();

    EvalOpts ev;
    CLI::App* e = app.add_subcommand("eval", "run a checkpoint over a manifest and score it");
    add_config(e);
    e->add_option("--ckpt", ev.ckpt, "checkpoint path")->required();
    e->add_option("--manifest", ev.manifest, "dataset manifest CSV")->required();
    e->add_option("--preds-out", ev.preds_out, "directory for predicted metadata CSVs");
    e->add_option("--json", ev.json_path, "write the JSON report here");
    e->add_option("--threshold", ev.threshold, "decode activity threshold")
        ->capture_default_str();
    e->add_flag("--no-ci", ev.no_ci, "skip jackknife confidence intervals");

    ScoreOpts sc;
    CLI::App* c = app.add_subcommand("score", "score predicted metadata against references");
    add_config(c);
    c->add_option("--refs", sc.refs_dir, "directory of reference CSVs")->required();
    c->add_option("--preds", sc.preds_dir, "directory of predicted CSVs")->required();
    c->add_option("--json", sc.json_path, "write the JSON report here");
    c->add_flag("--no-ci", sc.no_ci, "skip jackknife confidence intervals");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : kExitUsage;
    }

    CLI::App* sub = app.get_subcommands().front();
    if (!config_path.empty()) {
        const int rc = apply_config_file(sub, config_path);
        if (rc != 0) return rc;
    }
    std::cerr << "resolved config [" << sub->get_name() << "]\n"
              << sub->config_to_str(true, false);

    try {
        if (sub == s) return cmd_synth(synth);
        if (sub == x) return cmd_extract(extract);
        if (sub == t) return cmd_train(tr);
        if (sub == e) return cmd_eval(ev);
        return cmd_score(sc);
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitData;
    }
}

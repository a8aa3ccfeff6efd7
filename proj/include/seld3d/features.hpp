#pragma once

#include <complex>
#include <vector>

#include "seld3d/core.hpp"
#include "seld3d/fft.hpp"
#include "seld3d/tensor.hpp"
#include "seld3d/wav.hpp"

namespace seld3d {

struct EmptySignal : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ChannelCount : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct BadConfig : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class AudioFormat { FOA, Binaural };

// Input tensor geometry per audio format, plus the per-block feature-pooling
// rates kept as model configuration metadata.
struct FeatureSpec {
    AudioFormat format = AudioFormat::FOA;
    int channels = 7;
    int frames = 250;
    int features = 64;
    std::vector<int> pooling = {4, 4, 2};

    static FeatureSpec foa() { return {AudioFormat::FOA, 7, 250, 64, {4, 4, 2}}; }
    static FeatureSpec binaural() { return {AudioFormat::Binaural, 4, 250, 512, {8, 8, 4}}; }
};

inline FeatureSpec feature_spec_for(AudioFormat fmt) {
    return fmt == AudioFormat::FOA ? FeatureSpec::foa() : FeatureSpec::binaural();
}

struct FeatureTensor {
    FeatureSpec spec;
    Tensor data;  // CH x T x F
};

inline constexpr int kFftSize = 1024;
inline constexpr int kSpectrogramBins = 512;  // bins 1..512, DC dropped

struct FeatureConfig {
    double eps = 1e-8;
    bool mel_log = true;          // log-compress FOA mel energies
    double ild_clamp_db = 40.0;   // ILD feature bound
    int n_mels = 64;
};

// Complex STFT of one clip: CH x T x 512, T fixed at 250 with a zero-padded tail.
struct Spectrogram {
    int channels = 0;
    int frames = 0;
    int bins = kSpectrogramBins;
    std::vector<std::complex<double>> data;

    std::complex<double>& at(int ch, int t, int f) {
        return data[(static_cast<std::size_t>(ch) * frames + t) * bins + f];
    }
    const std::complex<double>& at(int ch, int t, int f) const {
        return data[(static_cast<std::size_t>(ch) * frames + t) * bins + f];
    }
};

inline std::vector<double> hamming_window(int n) {
    std::vector<double> w(n);
    for (int i = 0; i < n; ++i)
        w[i] = 0.54 - 0.46 * std::cos(2.0 * kPi * i / (n - 1));
    return w;
}

// Hamming-windowed STFT, 40 ms window, 20 ms hop, FFT length 1024 (the next
// power of two above the 960-sample window at 24 kHz). The DC bin is dropped
// so that exactly 512 bins remain.
inline Spectrogram stft(const std::vector<std::vector<float>>& signal, const ClipSpec& clip) {
    if (signal.empty() || signal[0].empty()) throw EmptySignal("stft needs at least one sample");
    const int win = clip.win_samples();
    const int hop = clip.hop_samples();
    if (win > kFftSize) throw BadConfig("window longer than FFT size");

    Spectrogram spec;
    spec.channels = static_cast<int>(signal.size());
    spec.frames = clip.feature_frames;
    spec.data.resize(static_cast<std::size_t>(spec.channels) * spec.frames * spec.bins);

    const std::vector<double> window = hamming_window(win);
    std::vector<std::complex<double>> frame(kFftSize);
    for (int ch = 0; ch < spec.channels; ++ch) {
        const auto& samples = signal[ch];
        for (int t = 0; t < spec.frames; ++t) {
            const std::size_t start = static_cast<std::size_t>(t) * hop;
            for (int i = 0; i < win; ++i) {
                const std::size_t idx = start + i;
                const double s = idx < samples.size() ? samples[idx] : 0.0;
                frame[i] = s * window[i];
            }
            std::fill(frame.begin() + win, frame.end(), std::complex<double>(0.0, 0.0));
            fft_pow2(frame);
            for (int f = 0; f < spec.bins; ++f) spec.at(ch, t, f) = frame[f + 1];
        }
    }
    return spec;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular mel filterbank over the retained STFT bins. Row m holds the
// weights of filter m; peak value 1, so a filter's response to a flat
// spectrum is its area (the row sum).
inline TensorD mel_bank(int n_mels, int f_bins, int sample_rate) {
    if (n_mels <= 0 || f_bins <= 0 || n_mels >= f_bins)
        throw BadConfig("mel_bank needs 0 < n_mels < f_bins");
    const double nyquist = sample_rate / 2.0;
    const double mel_max = hz_to_mel(nyquist);
    std::vector<double> edges_hz(n_mels + 2);
    for (int i = 0; i < n_mels + 2; ++i)
        edges_hz[i] = mel_to_hz(mel_max * i / (n_mels + 1));

    TensorD bank({static_cast<std::size_t>(n_mels), static_cast<std::size_t>(f_bins)});
    // retained bin k (0-based) sits at (k+1) * sr / fft_size because DC is dropped
    for (int m = 0; m < n_mels; ++m) {
        const double lo = edges_hz[m];
        const double mid = edges_hz[m + 1];
        const double hi = edges_hz[m + 2];
        for (int k = 0; k < f_bins; ++k) {
            const double f = (k + 1) * static_cast<double>(sample_rate) / kFftSize;
            double w = 0.0;
            if (f > lo && f < hi)
                w = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
            bank.at(m, k) = w;
        }
        double area = 0.0;
        for (int k = 0; k < f_bins; ++k) area += bank.at(m, k);
        if (area <= 0.0) throw BadConfig("mel filter " + std::to_string(m) + " has zero area");
    }
    return bank;
}

// Per-bin acoustic intensity of an FOA spectrogram (ACN order W, Y, Z, X),
// normalized by the total energy of the bin and then averaged across each
// mel band. Output 3 x T x n_mels with components in [-1, 1].
inline TensorD intensity_vectors(const Spectrogram& spec, const TensorD& bank,
                                 const FeatureConfig& cfg = {}) {
    if (spec.channels != 4) throw ChannelCount("intensity vectors need a 4-channel FOA spectrogram");
    const int n_mels = static_cast<int>(bank.dim(0));
    const int f_bins = static_cast<int>(bank.dim(1));
    if (f_bins != spec.bins) throw BadConfig("mel bank bin count does not match spectrogram");

    std::vector<double> band_area(n_mels, 0.0);
    for (int m = 0; m < n_mels; ++m)
        for (int k = 0; k < f_bins; ++k) band_area[m] += bank.at(m, k);

    TensorD out({3, static_cast<std::size_t>(spec.frames), static_cast<std::size_t>(n_mels)});
    std::vector<double> ix(f_bins), iy(f_bins), iz(f_bins);
    for (int t = 0; t < spec.frames; ++t) {
        for (int k = 0; k < f_bins; ++k) {
            const std::complex<double> w = spec.at(0, t, k);
            const std::complex<double> y = spec.at(1, t, k);
            const std::complex<double> z = spec.at(2, t, k);
            const std::complex<double> x = spec.at(3, t, k);
            const double denom = std::norm(w) + (std::norm(x) + std::norm(y) + std::norm(z)) / 3.0 +
                                 cfg.eps;
            ix[k] = (std::conj(w) * x).real() / denom;
            iy[k] = (std::conj(w) * y).real() / denom;
            iz[k] = (std::conj(w) * z).real() / denom;
        }
        for (int m = 0; m < n_mels; ++m) {
            double sx = 0.0, sy = 0.0, sz = 0.0;
            for (int k = 0; k < f_bins; ++k) {
                const double wgt = bank.at(m, k);
                if (wgt == 0.0) continue;
                sx += wgt * ix[k];
                sy += wgt * iy[k];
                sz += wgt * iz[k];
            }
            out.at(0, t, m) = sx / band_area[m];
            out.at(1, t, m) = sy / band_area[m];
            out.at(2, t, m) = sz / band_area[m];
        }
    }
    return out;
}

// FOA feature stack: 4 log-mel magnitude channels followed by the 3
// mel-aggregated intensity-vector channels. Shape 7 x 250 x 64.
inline FeatureTensor foa_features(const AudioClip& audio, const ClipSpec& clip = {},
                                  const FeatureConfig& cfg = {}) {
    if (audio.channels.size() != 4)
        throw ChannelCount("FOA features need exactly 4 channels, got " +
                           std::to_string(audio.channels.size()));
    const Spectrogram spec = stft(audio.channels, clip);
    const TensorD bank = mel_bank(cfg.n_mels, spec.bins, clip.sample_rate);

    FeatureTensor out;
    out.spec = FeatureSpec::foa();
    out.data = Tensor({static_cast<std::size_t>(out.spec.channels),
                       static_cast<std::size_t>(out.spec.frames),
                       static_cast<std::size_t>(out.spec.features)});

    for (int ch = 0; ch < 4; ++ch)
        for (int t = 0; t < spec.frames; ++t)
            for (int m = 0; m < cfg.n_mels; ++m) {
                double e = 0.0;
                for (int k = 0; k < spec.bins; ++k) {
                    const double wgt = bank.at(m, k);
                    if (wgt == 0.0) continue;
                    e += wgt * std::norm(spec.at(ch, t, k));
                }
                const double v = cfg.mel_log ? std::log(e + cfg.eps) : e;
                out.data.at(ch, t, m) = static_cast<float>(v);
            }

    const TensorD iv = intensity_vectors(spec, bank, cfg);
    for (int c = 0; c < 3; ++c)
        for (int t = 0; t < spec.frames; ++t)
            for (int m = 0; m < cfg.n_mels; ++m)
                out.data.at(4 + c, t, m) = static_cast<float>(iv.at(c, t, m));
    return out;
}

// Binaural feature stack: mean log magnitude, sin/cos IPD, and clamped ILD.
// Shape 4 x 250 x 512.
inline FeatureTensor binaural_features(const AudioClip& audio, const ClipSpec& clip = {},
                                       const FeatureConfig& cfg = {}) {
    if (audio.channels.size() != 2)
        throw ChannelCount("binaural features need exactly 2 channels, got " +
                           std::to_string(audio.channels.size()));
    const Spectrogram spec = stft(audio.channels, clip);

    FeatureTensor out;
    out.spec = FeatureSpec::binaural();
    out.data = Tensor({static_cast<std::size_t>(out.spec.channels),
                       static_cast<std::size_t>(out.spec.frames),
                       static_cast<std::size_t>(out.spec.features)});

    for (int t = 0; t < spec.frames; ++t)
        for (int k = 0; k < spec.bins; ++k) {
            const std::complex<double> l = spec.at(0, t, k);
            const std::complex<double> r = spec.at(1, t, k);
            const double mag_l = std::abs(l);
            const double mag_r = std::abs(r);
            const double ipd = std::arg(l) - std::arg(r);
            const double ild = std::clamp(
                20.0 * std::log10((mag_l + cfg.eps) / (mag_r + cfg.eps)),
                -cfg.ild_clamp_db, cfg.ild_clamp_db);
            out.data.at(0, t, k) = static_cast<float>(std::log(0.5 * (mag_l + mag_r) + cfg.eps));
            out.data.at(1, t, k) = static_cast<float>(std::sin(ipd));
            out.data.at(2, t, k) = static_cast<float>(std::cos(ipd));
            out.data.at(3, t, k) = static_cast<float>(ild);
        }
    return out;
}

inline FeatureTensor extract_features(const AudioClip& audio, AudioFormat fmt,
                                      const ClipSpec& clip = {}, const FeatureConfig& cfg = {}) {
    return fmt == AudioFormat::FOA ? foa_features(audio, clip, cfg)
                                   : binaural_features(audio, clip, cfg);
}

} // namespace seld3d

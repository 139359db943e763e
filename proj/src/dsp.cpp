#include "pocketk/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fmt/format.h>
#include <numbers>
#include <numeric>

namespace pocketk::dsp {

namespace {

enum class Kind { Lowpass, Highpass };

std::vector<Biquad> design_butterworth(Kind kind, int order, double cutoff_hz, double fs) {
    if (order < 2 || order % 2 != 0) throw ParameterError("butterworth: order must be even and >= 2");
    if (!(cutoff_hz > 0.0) || !(cutoff_hz < fs / 2.0)) {
        throw ParameterError(fmt::format("butterworth: cutoff {} Hz invalid for fs {} Hz", cutoff_hz, fs));
    }
    const double k = std::tan(std::numbers::pi * cutoff_hz / fs);  // prewarped
    std::vector<Biquad> sections;
    for (int i = 0; i < order / 2; ++i) {
        const double q = 1.0 / (2.0 * std::sin((2 * i + 1) * std::numbers::pi / (2.0 * order)));
        const double norm = 1.0 / (1.0 + k / q + k * k);
        Biquad s;
        if (kind == Kind::Lowpass) {
            s.b0 = k * k * norm;
            s.b1 = 2.0 * s.b0;
            s.b2 = s.b0;
        } else {
            s.b0 = norm;
            s.b1 = -2.0 * norm;
            s.b2 = norm;
        }
        s.a1 = 2.0 * (k * k - 1.0) * norm;
        s.a2 = (1.0 - k / q + k * k) * norm;
        sections.push_back(s);
    }
    return sections;
}

}  // namespace

std::vector<Biquad> design_butterworth_lowpass(int order, double cutoff_hz, double fs) {
    return design_butterworth(Kind::Lowpass, order, cutoff_hz, fs);
}

std::vector<Biquad> design_butterworth_highpass(int order, double cutoff_hz, double fs) {
    return design_butterworth(Kind::Highpass, order, cutoff_hz, fs);
}

std::vector<Biquad> design_bandpass(const BandpassSpec& spec, double fs) {
    if (!(fs > 2.0 * spec.hi_hz)) {
        throw ParameterError(fmt::format("bandpass: fs {} Hz must exceed twice the upper edge {} Hz", fs, spec.hi_hz));
    }
    if (!(spec.lo_hz > 0.0 && spec.lo_hz < spec.hi_hz)) throw ParameterError("bandpass: need 0 < lo < hi");
    auto sections = design_butterworth_highpass(spec.highpass_order, spec.lo_hz, fs);
    const auto lp = design_butterworth_lowpass(spec.lowpass_order, spec.hi_hz, fs);
    sections.insert(sections.end(), lp.begin(), lp.end());
    return sections;
}

double cascade_gain(std::span<const Biquad> sections, double freq_hz, double fs) {
    const std::complex<double> z1 = std::polar(1.0, -2.0 * std::numbers::pi * freq_hz / fs);
    const std::complex<double> z2 = z1 * z1;
    std::complex<double> h{1.0, 0.0};
    for (const auto& s : sections) h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
    return std::abs(h);
}

std::vector<double> filter_cascade(std::span<const Biquad> sections, std::span<const double> x) {
    std::vector<double> y(x.begin(), x.end());
    if (y.empty()) return y;
    double level = y.front();  // steady-state input level for the current section
    for (const auto& s : sections) {
        const double dc_gain = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
        // Transposed direct form II, initialised as if `level` had been
        // applied forever.
        double z1 = (dc_gain - s.b0) * level;
        double z2 = (s.b2 - s.a2 * dc_gain) * level;
        for (double& v : y) {
            const double in = v;
            const double out = s.b0 * in + z1;
            z1 = s.b1 * in - s.a1 * out + z2;
            z2 = s.b2 * in - s.a2 * out;
            v = out;
        }
        level *= dc_gain;
    }
    return y;
}

std::vector<double> bandpass(std::span<const double> x, double fs, const BandpassSpec& spec) {
    const auto sections = design_bandpass(spec, fs);
    const std::size_t n = x.size();
    if (static_cast<double>(n) < fs) throw ParameterError("bandpass: input shorter than one second");

    const std::size_t pad =
        std::min(n - 1, static_cast<std::size_t>(std::lround(spec.pad_seconds * fs)));
    std::vector<double> padded;
    padded.reserve(n + 2 * pad);
    for (std::size_t i = 0; i < pad; ++i) padded.push_back(2.0 * x[0] - x[pad - i]);
    padded.insert(padded.end(), x.begin(), x.end());
    for (std::size_t i = 1; i <= pad; ++i) padded.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

    auto forward = filter_cascade(sections, padded);
    std::reverse(forward.begin(), forward.end());
    auto backward = filter_cascade(sections, forward);
    std::reverse(backward.begin(), backward.end());
    return {backward.begin() + static_cast<std::ptrdiff_t>(pad),
            backward.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

std::vector<std::vector<double>> segment(std::span<const double> x, double fs, double clip_seconds) {
    if (!(fs > 0.0) || !(clip_seconds > 0.0)) throw ParameterError("segment: fs and clip length must be positive");
    const auto clip_len = static_cast<std::size_t>(std::lround(clip_seconds * fs));
    std::vector<std::vector<double>> clips;
    for (std::size_t start = 0; start + clip_len <= x.size(); start += clip_len) {
        clips.emplace_back(x.begin() + static_cast<std::ptrdiff_t>(start),
                           x.begin() + static_cast<std::ptrdiff_t>(start + clip_len));
    }
    return clips;
}

std::vector<double> resample_linear(std::span<const double> x, double fs_in, double fs_out) {
    if (!(fs_in >= 100.0) || !(fs_out > 0.0)) throw ParameterError("resample_linear: invalid sampling rates");
    if (fs_in == fs_out || x.size() < 2) return {x.begin(), x.end()};
    const auto n_out = static_cast<std::size_t>(std::lround(static_cast<double>(x.size()) * fs_out / fs_in));
    std::vector<double> y(n_out);
    const double step = fs_in / fs_out;
    for (std::size_t j = 0; j < n_out; ++j) {
        const double pos = static_cast<double>(j) * step;
        const auto i0 = std::min(static_cast<std::size_t>(pos), x.size() - 2);
        const double frac = pos - static_cast<double>(i0);
        y[j] = x[i0] + frac * (x[i0 + 1] - x[i0]);
    }
    return y;
}

std::vector<double> zscore(std::span<const double> x) {
    if (x.size() < 2) throw QualityError("zscore: need at least two samples");
    const double m = mean(x);
    const double sd = sample_sd(x);
    if (!(sd > 1e-8)) throw QualityError("zscore: zero-variance clip");
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - m) / sd;
    // Second centring pass removes the rounding residue of the first.
    const double residual = mean(y);
    for (double& v : y) v -= residual;
    return y;
}

bool is_saturated(std::span<const double> x, double fraction) {
    if (x.empty()) return false;
    const auto [lo_it, hi_it] = std::minmax_element(x.begin(), x.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    const auto at_hi = static_cast<double>(std::count(x.begin(), x.end(), hi));
    const auto at_lo = static_cast<double>(std::count(x.begin(), x.end(), lo));
    const double limit = fraction * static_cast<double>(x.size());
    return std::max(at_hi, at_lo) >= std::max(limit, 2.0);
}

PreprocessResult preprocess(std::span<const double> raw, double fs, const std::string& record_id,
                            const PreprocessOptions& options) {
    PreprocessResult result;
    if (static_cast<double>(raw.size()) < options.clip_seconds * fs) {
        result.notices.push_back(fmt::format("{}: {:.2f} s is shorter than one {:.0f}-s clip", record_id,
                                             static_cast<double>(raw.size()) / fs, options.clip_seconds));
        return result;
    }
    const auto filtered = bandpass(raw, fs, options.filter);
    auto filtered_clips = segment(filtered, fs, options.clip_seconds);
    const auto raw_clips = segment(raw, fs, options.clip_seconds);
    result.segments = filtered_clips.size();
    for (std::size_t i = 0; i < filtered_clips.size(); ++i) {
        if (!(sample_sd(raw_clips[i]) > 1e-8)) {
            ++result.rejected;
            result.notices.push_back(fmt::format("{} clip {}: zero variance", record_id, i));
            continue;
        }
        if (is_saturated(raw_clips[i], options.saturation_fraction)) {
            ++result.rejected;
            result.notices.push_back(fmt::format("{} clip {}: saturated", record_id, i));
            continue;
        }
        auto resampled = resample_linear(filtered_clips[i], fs, options.target_fs);
        try {
            result.clips.push_back(Clip{zscore(resampled), options.target_fs, record_id, i});
        } catch (const QualityError&) {
            ++result.rejected;
            result.notices.push_back(fmt::format("{} clip {}: zero variance", record_id, i));
        }
    }
    return result;
}

// ---------------------------------------------------------------------------

BeatSet detect_r_peaks(std::span<const double> clip, double fs, BeatWindow window) {
    BeatSet out;
    out.fs = fs;
    out.pre = static_cast<std::size_t>(std::lround(window.pre_s * fs));
    out.post = static_cast<std::size_t>(std::lround(window.post_s * fs));
    const std::size_t n = clip.size();
    if (n < 8) return out;

    // Centred five-point derivative, squared.
    std::vector<double> energy(n, 0.0);
    std::vector<double> slope(n, 0.0);
    for (std::size_t i = 2; i + 2 < n; ++i) {
        const double d = (-clip[i - 2] - 2.0 * clip[i - 1] + 2.0 * clip[i + 1] + clip[i + 2]) * fs / 8.0;
        slope[i] = std::abs(d);
        energy[i] = d * d;
    }
    // Centred 150 ms moving-window integration.
    const auto half = static_cast<std::size_t>(std::lround(0.075 * fs));
    std::vector<double> prefix(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + energy[i];
    std::vector<double> mwi(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i >= half ? i - half : 0;
        const std::size_t hi = std::min(n, i + half + 1);
        mwi[i] = (prefix[hi] - prefix[lo]) / static_cast<double>(2 * half + 1);
    }

    const auto refractory = static_cast<std::size_t>(std::lround(kRefractorySeconds * fs));
    const auto t_wave_guard = static_cast<std::size_t>(std::lround(0.36 * fs));
    const auto learn = std::min(n, static_cast<std::size_t>(std::lround(2.0 * fs)));
    double signal_level = *std::max_element(mwi.begin(), mwi.begin() + static_cast<std::ptrdiff_t>(learn)) / 3.0;
    double noise_level = std::accumulate(mwi.begin(), mwi.begin() + static_cast<std::ptrdiff_t>(learn), 0.0) /
                         static_cast<double>(learn) / 2.0;
    if (!(signal_level > 0.0)) return out;

    const auto max_slope_near = [&](std::size_t i) {
        const std::size_t lo = i >= half ? i - half : 0;
        const std::size_t hi = std::min(n, i + half + 1);
        return *std::max_element(slope.begin() + static_cast<std::ptrdiff_t>(lo),
                                 slope.begin() + static_cast<std::ptrdiff_t>(hi));
    };

    std::vector<std::size_t> qrs;
    std::vector<double> qrs_slope;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        if (!(mwi[i] >= mwi[i - 1] && mwi[i] > mwi[i + 1])) continue;
        const double threshold = noise_level + 0.25 * (signal_level - noise_level);
        const double peak = mwi[i];
        bool is_qrs = peak > threshold;
        if (is_qrs && !qrs.empty()) {
            const std::size_t since = i - qrs.back();
            if (since < refractory) {
                if (peak > mwi[qrs.back()]) {
                    qrs.back() = i;
                    qrs_slope.back() = max_slope_near(i);
                }
                continue;
            }
            if (since < t_wave_guard && max_slope_near(i) < 0.5 * qrs_slope.back()) is_qrs = false;
        }
        if (is_qrs) {
            qrs.push_back(i);
            qrs_slope.push_back(max_slope_near(i));
            signal_level = 0.125 * peak + 0.875 * signal_level;
        } else {
            noise_level = 0.125 * peak + 0.875 * noise_level;
        }
    }

    // Refine to the signal maximum near each energy peak.
    const auto search = static_cast<std::size_t>(std::lround(0.075 * fs));
    for (const std::size_t i : qrs) {
        const std::size_t lo = i >= search ? i - search : 0;
        const std::size_t hi = std::min(n, i + search + 1);
        const auto it = std::max_element(clip.begin() + static_cast<std::ptrdiff_t>(lo),
                                         clip.begin() + static_cast<std::ptrdiff_t>(hi));
        const auto r = static_cast<std::size_t>(it - clip.begin());
        if (!out.r_peaks.empty() && r - out.r_peaks.back() < refractory) {
            if (clip[r] > clip[out.r_peaks.back()]) out.r_peaks.back() = r;
            continue;
        }
        out.r_peaks.push_back(r);
    }
    for (const std::size_t r : out.r_peaks) {
        if (r >= out.pre && r + out.post <= n) out.windowed.push_back(r);
    }
    return out;
}

std::vector<std::vector<double>> extract_beats(std::span<const double> clip, const BeatSet& beats) {
    std::vector<std::vector<double>> out;
    out.reserve(beats.windowed.size());
    for (const std::size_t r : beats.windowed) {
        if (r < beats.pre || r + beats.post > clip.size()) throw ParameterError("extract_beats: window outside clip");
        out.emplace_back(clip.begin() + static_cast<std::ptrdiff_t>(r - beats.pre),
                         clip.begin() + static_cast<std::ptrdiff_t>(r + beats.post));
    }
    return out;
}

bool standardize_beat(std::vector<double>& beat, std::size_t r_index, double fs) {
    const auto lo = static_cast<std::ptrdiff_t>(r_index) - static_cast<std::ptrdiff_t>(std::lround(0.125 * fs));
    const auto hi = static_cast<std::ptrdiff_t>(r_index) - static_cast<std::ptrdiff_t>(std::lround(0.085 * fs));
    if (lo < 0 || r_index >= beat.size()) throw ParameterError("standardize_beat: R index leaves no PR segment");
    std::vector<double> pr(beat.begin() + lo, beat.begin() + hi + 1);
    std::nth_element(pr.begin(), pr.begin() + static_cast<std::ptrdiff_t>(pr.size() / 2), pr.end());
    double base = pr[pr.size() / 2];
    if (pr.size() % 2 == 0) {
        base = 0.5 * (base + *std::max_element(pr.begin(), pr.begin() + static_cast<std::ptrdiff_t>(pr.size() / 2)));
    }
    const double r_amp = beat[r_index] - base;
    if (!(r_amp > 0.0)) return false;
    for (double& v : beat) v = (v - base) / r_amp;
    return true;
}

AveragedWaveform signal_average(const std::string& group, const std::vector<std::vector<double>>& beats) {
    if (beats.empty()) throw ParameterError(fmt::format("signal_average: group '{}' has no beats", group));
    const std::size_t len = beats.front().size();
    AveragedWaveform avg;
    avg.group = group;
    avg.n_beats = beats.size();
    avg.mean.assign(len, 0.0);
    avg.sd.assign(len, 0.0);
    for (const auto& b : beats) {
        if (b.size() != len) throw ParameterError(fmt::format("signal_average: group '{}' has ragged beats", group));
        for (std::size_t i = 0; i < len; ++i) avg.mean[i] += b[i];
    }
    const auto count = static_cast<double>(beats.size());
    for (double& m : avg.mean) m /= count;
    if (beats.size() > 1) {
        for (const auto& b : beats) {
            for (std::size_t i = 0; i < len; ++i) avg.sd[i] += (b[i] - avg.mean[i]) * (b[i] - avg.mean[i]);
        }
        for (double& s : avg.sd) s = std::sqrt(s / (count - 1.0));
    }
    return avg;
}

}  // namespace pocketk::dsp

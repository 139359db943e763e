#pragma once

#include "pocketk/common.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace pocketk::dsp {

inline constexpr double kModelFs = 500.0;
inline constexpr double kClipSeconds = 10.0;

/// Second-order section, a0 normalised to 1.
struct Biquad {
    double b0 = 1.0, b1 = 0.0, b2 = 0.0;
    double a1 = 0.0, a2 = 0.0;
};

/// Butterworth band-pass realised as a high-pass cascade followed by a
/// low-pass cascade. Orders must be even.
struct BandpassSpec {
    double lo_hz = 0.5;
    double hi_hz = 40.0;
    int highpass_order = 4;
    int lowpass_order = 6;
    double pad_seconds = 1.0;
};

std::vector<Biquad> design_butterworth_lowpass(int order, double cutoff_hz, double fs);
std::vector<Biquad> design_butterworth_highpass(int order, double cutoff_hz, double fs);
std::vector<Biquad> design_bandpass(const BandpassSpec& spec, double fs);

/// Magnitude response of a cascade at `freq_hz` (single pass).
double cascade_gain(std::span<const Biquad> sections, double freq_hz, double fs);

/// Causal single pass with steady-state initial conditions scaled by the
/// first sample.
std::vector<double> filter_cascade(std::span<const Biquad> sections, std::span<const double> x);

/// Zero-phase band-pass: odd reflection padding of `pad_seconds` at each
/// end, forward and backward passes, padding removed. Requires
/// fs > 2 * hi and at least one second of input.
std::vector<double> bandpass(std::span<const double> x, double fs, const BandpassSpec& spec = {});

/// Non-overlapping clips of `clip_seconds`; the trailing remainder is
/// dropped. Returns an empty list for inputs shorter than one clip.
std::vector<std::vector<double>> segment(std::span<const double> x, double fs, double clip_seconds = kClipSeconds);

/// Linear interpolation onto a `fs_out` grid starting at t = 0 and
/// covering the same duration (n_in * fs_out / fs_in samples).
std::vector<double> resample_linear(std::span<const double> x, double fs_in, double fs_out = kModelFs);

/// Zero mean, unit sample SD. Throws QualityError when SD <= 1e-8.
std::vector<double> zscore(std::span<const double> x);

/// True when at least `fraction` of the samples sit at the same extreme
/// (max or min) value.
bool is_saturated(std::span<const double> x, double fraction = 0.01);

struct PreprocessOptions {
    BandpassSpec filter;
    double clip_seconds = kClipSeconds;
    double target_fs = kModelFs;
    double saturation_fraction = 0.01;
};

struct Clip {
    std::vector<double> samples;
    double fs = kModelFs;
    std::string record_id;
    std::size_t index = 0;
};

struct PreprocessResult {
    std::vector<Clip> clips;
    std::size_t segments = 0;  ///< clips before the quality gate
    std::size_t rejected = 0;
    std::vector<std::string> notices;
};

/// band-pass -> segment -> resample -> quality gate -> z-score.
PreprocessResult preprocess(std::span<const double> raw, double fs, const std::string& record_id,
                            const PreprocessOptions& options = {});

// ---------------------------------------------------------------------------
// Beats
// ---------------------------------------------------------------------------

struct BeatWindow {
    double pre_s = 0.3;
    double post_s = 0.5;
};

struct BeatSet {
    std::vector<std::size_t> r_peaks;   ///< all detected R indices
    std::vector<std::size_t> windowed;  ///< R indices whose window fits inside the clip
    std::size_t pre = 0;                ///< samples before R
    std::size_t post = 0;               ///< samples from R (inclusive) to window end
    double fs = kModelFs;

    std::size_t window_length() const { return pre + post; }
};

inline constexpr double kRefractorySeconds = 0.2;

/// Derivative, squaring and moving-window integration with an adaptive
/// signal/noise threshold and a 200 ms refractory period; peaks are then
/// refined to the signal maximum within +/-75 ms.
BeatSet detect_r_peaks(std::span<const double> clip, double fs, BeatWindow window = {});

/// One vector per windowed beat, `window_length()` samples each.
std::vector<std::vector<double>> extract_beats(std::span<const double> clip, const BeatSet& beats);

/// Subtracts the PR-segment median ([R-125, R-85] ms) and scales to unit R
/// amplitude. Returns false and leaves the beat unchanged when the R
/// amplitude above baseline is not positive.
bool standardize_beat(std::vector<double>& beat, std::size_t r_index, double fs);

struct AveragedWaveform {
    std::string group;
    std::size_t n_beats = 0;
    std::vector<double> mean;
    std::vector<double> sd;  ///< pointwise sample SD, 0 for a single beat
};

/// Pointwise mean and SD of R-aligned beats. Throws ParameterError naming
/// the group when it is empty or beats differ in length.
AveragedWaveform signal_average(const std::string& group, const std::vector<std::vector<double>>& beats);

}  // namespace pocketk::dsp

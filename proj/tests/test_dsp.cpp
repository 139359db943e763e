#include "pocketk/dsp.hpp"
#include "pocketk/synthdata.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

using namespace pocketk;
using namespace pocketk::dsp;

namespace {

std::vector<double> sine(double f, double fs, double seconds, double amp = 1.0) {
    std::vector<double> x(static_cast<std::size_t>(std::lround(seconds * fs)));
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = amp * std::sin(2.0 * std::numbers::pi * f * i / fs);
    return x;
}

// Peak amplitude over the central half, away from the edges.
double central_peak(const std::vector<double>& x) {
    double m = 0.0;
    for (std::size_t i = x.size() / 4; i < 3 * x.size() / 4; ++i) m = std::max(m, std::abs(x[i]));
    return m;
}

double db(double ratio) { return 20.0 * std::log10(ratio); }

synth::BeatTrain clean_train(double bpm, double fs, double seconds, std::uint64_t seed) {
    auto b = synth::BeatTemplate::physiological();
    b.rr_interval_s = 60.0 / bpm;
    Rng rng(seed);
    return synth::generate_beat_train(b, fs, seconds, 0.0, rng);
}

}  // namespace

TEST_SUITE("dsp") {
    TEST_CASE("passband 10 Hz within 1 dB") {
        const auto y = bandpass(sine(10.0, 500.0, 20.0), 500.0);
        CHECK(std::abs(db(central_peak(y))) <= 1.0);
    }

    TEST_CASE("baseline wander 0.05 Hz attenuated by at least 20 dB") {
        const auto y = bandpass(sine(0.05, 500.0, 120.0), 500.0);
        CHECK(db(central_peak(y)) <= -20.0);
    }

    TEST_CASE("powerline 50 Hz attenuated by at least 20 dB") {
        const auto y = bandpass(sine(50.0, 500.0, 20.0), 500.0);
        CHECK(db(central_peak(y)) <= -20.0);
        const auto y1k = bandpass(sine(50.0, 1000.0, 20.0), 1000.0);
        CHECK(db(central_peak(y1k)) <= -20.0);
    }

    TEST_CASE("design gains match the Butterworth magnitude") {
        const double fs = 500.0;
        const auto lp = design_butterworth_lowpass(6, 40.0, fs);
        const auto hp = design_butterworth_highpass(4, 0.5, fs);
        CHECK(lp.size() == 3);
        CHECK(hp.size() == 2);
        CHECK(cascade_gain(lp, 40.0, fs) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-6));
        CHECK(cascade_gain(hp, 0.5, fs) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-6));
        CHECK(cascade_gain(lp, 0.0, fs) == doctest::Approx(1.0).epsilon(1e-9));
        CHECK_THROWS_AS(design_butterworth_lowpass(5, 40.0, fs), ParameterError);
        CHECK_THROWS_AS(bandpass(sine(10.0, 60.0, 5.0), 60.0), ParameterError);
        CHECK_THROWS_AS(bandpass(std::vector<double>(100, 0.0), 500.0), ParameterError);
    }

    TEST_CASE("zero-phase: a symmetric pulse keeps its peak index") {
        const double fs = 500.0;
        std::vector<double> x(5000, 0.0);
        const std::size_t c = 2500;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double t = (static_cast<double>(i) - c) / fs;
            x[i] = std::exp(-t * t / (2.0 * 0.02 * 0.02));
        }
        const auto y = bandpass(x, fs);
        const auto peak = static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin());
        CHECK(peak == c);
    }

    TEST_CASE("band-pass is linear") {
        Rng rng(1);
        std::vector<double> a(3000), b(3000), mix(3000);
        for (std::size_t i = 0; i < a.size(); ++i) {
            a[i] = rng.normal();
            b[i] = rng.normal() + 0.01 * static_cast<double>(i);
            mix[i] = 2.5 * a[i] - 0.75 * b[i];
        }
        const auto fa = bandpass(a, 500.0), fb = bandpass(b, 500.0), fm = bandpass(mix, 500.0);
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(fm[i] - (2.5 * fa[i] - 0.75 * fb[i])) < 1e-9);
    }

    TEST_CASE("segmentation floor rule") {
        CHECK(segment(std::vector<double>(17500, 0.0), 500.0).size() == 3);
        for (const auto& c : segment(std::vector<double>(17500, 0.0), 500.0)) CHECK(c.size() == 5000);
        CHECK(segment(std::vector<double>(5000, 0.0), 500.0).size() == 1);
        CHECK(segment(std::vector<double>(4950, 0.0), 500.0).empty());
    }

    TEST_CASE("linear resampling") {
        std::vector<double> x(5000);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(0.01 * static_cast<double>(i));
        CHECK(resample_linear(x, 500.0) == x);
        std::vector<double> hi(10000), ramp(10000);
        for (std::size_t i = 0; i < hi.size(); ++i) ramp[i] = 3.0 * (static_cast<double>(i) / 1000.0) + 1.0;
        const auto y = resample_linear(ramp, 1000.0);
        REQUIRE(y.size() == 5000);
        for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y[i] - (3.0 * (static_cast<double>(i) / 500.0) + 1.0)) < 1e-9);
        std::vector<double> lo(2500);
        for (std::size_t i = 0; i < lo.size(); ++i) lo[i] = 3.0 * (static_cast<double>(i) / 250.0) + 1.0;
        const auto up = resample_linear(lo, 250.0);
        REQUIRE(up.size() == 5000);
        for (std::size_t i = 0; i + 2 < up.size(); ++i) CHECK(std::abs(up[i] - (3.0 * (static_cast<double>(i) / 500.0) + 1.0)) < 1e-9);
    }

    TEST_CASE("z-score") {
        const auto z = zscore(std::vector<double>{1.0, 2.0, 3.0});
        CHECK(mean(z) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
        CHECK(sample_sd(z) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK_THROWS_AS(zscore(std::vector<double>(10, 2.0)), QualityError);
        Rng rng(2);
        std::vector<double> x(500), ax(500);
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] = rng.normal();
            ax[i] = 3.5 * x[i] - 7.0;
        }
        const auto zx = zscore(x), zax = zscore(ax);
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(zx[i] - zax[i]) < 1e-12);
    }

    TEST_CASE("saturation gate") {
        std::vector<double> x = sine(5.3, 500.0, 10.0);
        CHECK_FALSE(is_saturated(x));
        for (std::size_t i = 0; i < 100; ++i) x[i * 7] = 3.0;
        CHECK(is_saturated(x));
        const auto r = preprocess(x, 500.0, "sat");
        CHECK(r.segments == 1);
        CHECK(r.rejected == 1);
        CHECK(r.clips.empty());
        CHECK_FALSE(r.notices.empty());
    }

    TEST_CASE("pipeline yields unit-variance 5000-sample clips at any supported rate") {
        for (const double fs : {250.0, 500.0, 1000.0}) {
            auto train = clean_train(70.0, fs, 25.0, 3).samples;
            Rng rng(4);
            synth::add_noise(train, fs, {}, rng);
            const auto r = preprocess(train, fs, "rec");
            REQUIRE(r.clips.size() == 2);
            for (const auto& c : r.clips) {
                CHECK(c.samples.size() == 5000);
                CHECK(c.fs == 500.0);
                CHECK(std::abs(mean(c.samples)) < 1e-9);
                CHECK(std::abs(sample_sd(c.samples) - 1.0) < 1e-6);
            }
        }
    }

    TEST_CASE("R detection against generator ground truth") {
        const auto train = clean_train(60.0, 500.0, 10.0, 9);
        const auto clip = zscore(bandpass(train.samples, 500.0));
        const auto beats = detect_r_peaks(clip, 500.0);
        CHECK(beats.r_peaks.size() >= 9);
        CHECK(beats.r_peaks.size() <= 11);
        for (const double t : train.r_times_s) {
            const auto it = std::min_element(beats.r_peaks.begin(), beats.r_peaks.end(), [&](auto a, auto b) {
                return std::abs(a / 500.0 - t) < std::abs(b / 500.0 - t);
            });
            REQUIRE(it != beats.r_peaks.end());
            CHECK(std::abs(static_cast<double>(*it) / 500.0 - t) <= 0.040);
        }
        for (std::size_t i = 1; i < beats.r_peaks.size(); ++i) {
            CHECK(beats.r_peaks[i] - beats.r_peaks[i - 1] >= static_cast<std::size_t>(kRefractorySeconds * 500.0));
        }
        for (const auto r : beats.windowed) {
            CHECK(r >= beats.pre);
            CHECK(r + beats.post <= clip.size());
        }
    }

    TEST_CASE("R detection is robust to 1% white noise") {
        for (std::uint64_t seed = 1; seed <= 10; ++seed) {
            const auto train = clean_train(55.0 + 4.0 * static_cast<double>(seed), 500.0, 10.0, seed);
            const auto clean = detect_r_peaks(zscore(bandpass(train.samples, 500.0)), 500.0);
            auto noisy = train.samples;
            Rng rng(seed + 100);
            for (double& v : noisy) v += rng.normal(0.0, 0.01);
            const auto n = detect_r_peaks(zscore(bandpass(noisy, 500.0)), 500.0);
            const auto diff = static_cast<long>(clean.r_peaks.size()) - static_cast<long>(n.r_peaks.size());
            CHECK(std::abs(diff) <= 1);
        }
    }

    TEST_CASE("all-zero clip has no beats") {
        const auto b = detect_r_peaks(std::vector<double>(5000, 0.0), 500.0);
        CHECK(b.r_peaks.empty());
        CHECK(b.windowed.empty());
    }

    TEST_CASE("signal averaging") {
        const std::vector<double> beat{0.0, 1.0, 3.0, -2.0};
        const auto same = signal_average("g", {beat, beat, beat});
        CHECK(same.mean == beat);
        for (const double s : same.sd) CHECK(s == 0.0);
        CHECK(same.n_beats == 3);
        std::vector<double> neg(beat.size());
        std::transform(beat.begin(), beat.end(), neg.begin(), [](double v) { return -v; });
        for (const double m : signal_average("g", {beat, neg}).mean) CHECK(m == 0.0);
        try {
            signal_average("high_risk", {});
            FAIL("expected an error");
        } catch (const ParameterError& e) {
            CHECK(std::string(e.what()).find("high_risk") != std::string::npos);
        }
        CHECK_THROWS_AS(signal_average("g", {beat, {1.0}}), ParameterError);
    }

    TEST_CASE("beat standardization") {
        const double fs = 500.0;
        std::vector<double> beat(400, 0.25);
        beat[150] = 2.25;
        REQUIRE(standardize_beat(beat, 150, fs));
        CHECK(beat[150] == doctest::Approx(1.0));
        CHECK(beat[0] == doctest::Approx(0.0));
        std::vector<double> flat(400, 1.0);
        CHECK_FALSE(standardize_beat(flat, 150, fs));
        CHECK(flat[0] == 1.0);
    }
}

#include "pocketk/synthdata.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

using namespace pocketk;
using namespace pocketk::synth;
namespace fs = std::filesystem;

namespace {

synth::BeatTemplate only_r() {
    auto b = BeatTemplate::physiological();
    for (auto& w : b.waves) w.amplitude_mv = 0.0;
    b[Wave::R] = {1.0, 0.02, 0.0};
    return b;
}

double t_r_ratio(const BeatTemplate& b, double fs) {
    const auto x = generate_beat(b, fs);
    const auto r = beat_r_index(b, fs);
    const auto t_lo = r + static_cast<std::size_t>(0.12 * fs);
    const double t_max = *std::max_element(x.begin() + static_cast<long>(t_lo), x.end());
    return t_max / x[r];
}

std::size_t qrs_width_samples(const BeatTemplate& b, double fs) {
    const auto x = generate_beat(b, fs);
    const auto r = beat_r_index(b, fs);
    std::size_t lo = r, hi = r;
    while (lo > 0 && x[lo - 1] > 0.5 * x[r]) --lo;
    while (hi + 1 < x.size() && x[hi + 1] > 0.5 * x[r]) ++hi;
    return hi - lo + 1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

// Two-sided exact binomial acceptance region at level alpha.
std::pair<long, long> binomial_region(long n, double p, double alpha) {
    std::vector<double> pmf(static_cast<std::size_t>(n + 1));
    for (long k = 0; k <= n; ++k) {
        pmf[static_cast<std::size_t>(k)] =
            std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) + k * std::log(p) +
                     (n - k) * std::log1p(-p));
    }
    long lo = 0;
    double c = 0.0;
    while (c + pmf[static_cast<std::size_t>(lo)] <= alpha / 2) c += pmf[static_cast<std::size_t>(lo++)];
    long hi = n;
    c = 0.0;
    while (c + pmf[static_cast<std::size_t>(hi)] <= alpha / 2) c += pmf[static_cast<std::size_t>(hi--)];
    return {lo, hi};
}

SynthConfig tiny_config() {
    SynthConfig c;
    c.n_patients = 10;
    c.min_pairs_per_patient = 2;
    c.max_pairs_per_patient = 2;
    c.no_ecg_fraction = 0.0;
    c.unpairable_fraction = 0.0;
    c.poor_quality_fraction = 0.0;
    c.inject_trajectory_exemplars = false;
    c.seed = 11;
    return c;
}

}  // namespace

TEST_SUITE("synthdata") {
    TEST_CASE("physiological template invariants") {
        const auto b = BeatTemplate::physiological();
        CHECK_NOTHROW(b.validate());
        for (const auto& w : b.waves) {
            CHECK(w.width_s > 0.0);
            CHECK(b[Wave::R].amplitude_mv >= std::abs(w.amplitude_mv));
        }
        auto bad = b;
        bad[Wave::S].center_s = -0.01;
        CHECK_THROWS_AS(bad.validate(), ParameterError);
        bad = b;
        bad[Wave::T].width_s = 0.0;
        CHECK_THROWS_AS(generate_beat(bad, 500.0), ParameterError);
        CHECK_THROWS_AS(generate_beat(b, 0.0), ParameterError);
    }

    TEST_CASE("zero amplitudes give a zero beat") {
        auto b = BeatTemplate::physiological();
        for (auto& w : b.waves) w.amplitude_mv = 0.0;
        for (const double v : generate_beat(b, 500.0)) CHECK(v == 0.0);
    }

    TEST_CASE("single Gaussian peaks at its center") {
        const auto b = only_r();
        const auto x = generate_beat(b, 500.0);
        const auto it = std::max_element(x.begin(), x.end());
        CHECK(*it == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(static_cast<std::size_t>(it - x.begin()) == beat_r_index(b, 500.0));
    }

    TEST_CASE("physiological maximum lies within one R width of R") {
        const auto b = BeatTemplate::physiological();
        const double fs = 500.0;
        const auto x = generate_beat(b, fs);
        const auto idx = static_cast<double>(std::max_element(x.begin(), x.end()) - x.begin());
        const double t = (idx - static_cast<double>(beat_r_index(b, fs))) / fs;
        CHECK(std::abs(t) <= b[Wave::R].width_s);
    }

    TEST_CASE("potassium map examples") {
        const auto b = BeatTemplate::physiological();
        const PotassiumMorphologyMap map;
        CHECK(apply_potassium(b, map, 4.2) == b);
        const auto k56 = apply_potassium(b, map, 5.6);
        const auto k60 = apply_potassium(b, map, 6.0);
        CHECK(k60[Wave::T].amplitude_mv / k60[Wave::R].amplitude_mv >
              k56[Wave::T].amplitude_mv / k56[Wave::R].amplitude_mv);
        const auto k70 = apply_potassium(b, map, 7.0);
        for (const Wave w : {Wave::Q, Wave::R, Wave::S}) CHECK(k70[w].width_s > b[w].width_s);
        CHECK(k70[Wave::P].amplitude_mv < b[Wave::P].amplitude_mv);
        CHECK_THROWS_AS(apply_potassium(b, map, 1.5), ParameterError);
        CHECK_THROWS_AS(apply_potassium(b, map, 9.5), ParameterError);
        PotassiumMorphologyMap bad;
        bad.t_amp_gain = -0.1;
        CHECK_THROWS_AS(apply_potassium(b, bad, 6.0), ParameterError);
    }

    TEST_CASE("morphology is monotone in potassium") {
        const auto b = BeatTemplate::physiological();
        const PotassiumMorphologyMap map;
        double prev_ratio = -1.0;
        std::size_t prev_width = 0;
        for (double k = 4.0; k <= 8.0 + 1e-9; k += 0.5) {
            const auto m = apply_potassium(b, map, k);
            const double ratio = t_r_ratio(m, 500.0);
            const auto width = qrs_width_samples(m, 2000.0);
            CHECK(ratio >= prev_ratio);
            CHECK(width >= prev_width);
            prev_ratio = ratio;
            prev_width = width;
        }
    }

    TEST_CASE("zero noise leaves the beat train unchanged") {
        Rng rng(5);
        const auto train = generate_beat_train(BeatTemplate::physiological(), 500.0, 10.0, 0.05, rng);
        auto noisy = train.samples;
        NoiseConfig quiet{0.0, 0.2, 0.0, 50.0, 0.0};
        add_noise(noisy, 500.0, quiet, rng);
        CHECK(noisy == train.samples);
        CHECK(train.r_times_s.size() >= 9);
        CHECK(train.r_times_s.size() <= 11);
    }

    TEST_CASE("count conservation: 10 patients x 2 pairs") {
        const auto dir = fs::temp_directory_path() / "pocketk_synth_tiny";
        fs::remove_all(dir);
        const auto m = generate_cohort(tiny_config(), dir);
        CHECK(m.recordings == 20);
        CHECK(m.screened_patients == 10);
        std::size_t files = 0;
        for (const auto& e : fs::directory_iterator(dir / "waveforms")) files += e.path().extension() == ".pkecg";
        CHECK(files == 20);
        fs::remove_all(dir);
    }

    TEST_CASE("same seed gives byte-identical cohorts") {
        const auto a = fs::temp_directory_path() / "pocketk_synth_a";
        const auto b = fs::temp_directory_path() / "pocketk_synth_b";
        fs::remove_all(a);
        fs::remove_all(b);
        auto c = tiny_config();
        c.n_patients = 25;
        c.max_pairs_per_patient = 4;
        c.no_ecg_fraction = 0.1;
        c.unpairable_fraction = 0.1;
        c.inject_trajectory_exemplars = true;
        generate_cohort(c, a);
        generate_cohort(c, b);
        std::size_t compared = 0;
        for (const auto& e : fs::recursive_directory_iterator(a)) {
            if (!e.is_regular_file()) continue;
            const auto rel = fs::relative(e.path(), a);
            REQUIRE(fs::exists(b / rel));
            CHECK(slurp(e.path()) == slurp(b / rel));
            ++compared;
        }
        CHECK(compared > 20);
        fs::remove_all(a);
        fs::remove_all(b);
    }

    TEST_CASE("tuned tail weight hits 3% prevalence within the exact binomial 99% region") {
        SynthConfig c;
        c.n_patients = 2500;
        c.inject_trajectory_exemplars = false;
        c.seed = 99;
        c.tail_weight = tail_weight_for_prevalence(c, 0.03);
        CHECK(expected_prevalence(c) == doctest::Approx(0.03).epsilon(1e-9));
        const auto plan = plan_cohort(c);
        long n = 0, pos = 0;
        for (const auto& p : plan.patients) {
            if (p.kind == PatientKind::NoEcg) continue;
            for (const auto& r : p.recordings) {
                if (n == 5000) break;
                ++n;
                pos += r.true_k > 5.5;
            }
        }
        REQUIRE(n == 5000);
        const auto [lo, hi] = binomial_region(n, 0.03, 0.01);
        CHECK(pos >= lo);
        CHECK(pos <= hi);
    }

    TEST_CASE("injected exemplar courses") {
        auto c = tiny_config();
        c.inject_trajectory_exemplars = true;
        const auto plan = plan_cohort(c);
        REQUIRE(plan.patients.size() == 14);
        const auto& rise = plan.patients[10];
        CHECK(rise.exemplar_pattern == "rise");
        REQUIRE(rise.recordings.size() == 6);
        for (std::size_t i = 1; i < 6; ++i) {
            CHECK(rise.recordings[i].true_k >= rise.recordings[i - 1].true_k);
            CHECK(rise.recordings[i].timestamp > rise.recordings[i - 1].timestamp);
        }
    }

    TEST_CASE("CKD patients carry raised potassium") {
        SynthConfig c;
        c.n_patients = 3000;
        c.inject_trajectory_exemplars = false;
        c.tail_weight = 0.0;
        const auto plan = plan_cohort(c);
        std::vector<double> ckd, other;
        for (const auto& p : plan.patients) {
            for (const auto& r : p.recordings) (p.ckd ? ckd : other).push_back(r.true_k);
        }
        REQUIRE(ckd.size() > 100);
        CHECK(mean(ckd) - mean(other) == doctest::Approx(c.ckd_k_shift).epsilon(0.1));
    }

    TEST_CASE("invalid configurations are rejected") {
        SynthConfig c;
        c.min_pairs_per_patient = 3;
        c.max_pairs_per_patient = 2;
        CHECK_THROWS_AS(c.validate(), ParameterError);
        c = SynthConfig{};
        c.no_ecg_fraction = 0.7;
        c.unpairable_fraction = 0.7;
        CHECK_THROWS_AS(c.validate(), ParameterError);
        c = SynthConfig{};
        c.ckd_k_shift = -1.0;
        CHECK_THROWS_AS(c.validate(), ParameterError);
        CHECK_THROWS_AS(tail_weight_for_prevalence(SynthConfig{}, 0.9), ParameterError);
    }
}

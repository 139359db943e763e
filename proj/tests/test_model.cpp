#include "pocketk/eval.hpp"
#include "pocketk/model.hpp"
#include "pocketk/synthdata.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>

using namespace pocketk;
using namespace pocketk::model;

namespace {

std::vector<double> synthetic_clip(double k, std::uint64_t seed, double bpm = 70.0) {
    auto b = synth::apply_potassium(synth::BeatTemplate::physiological(), synth::PotassiumMorphologyMap{}, k);
    b.rr_interval_s = 60.0 / bpm;
    Rng rng(seed);
    const auto train = synth::generate_beat_train(b, 500.0, 10.0, 0.02, rng);
    auto r = dsp::preprocess(train.samples, 500.0, "t");
    REQUIRE(r.clips.size() == 1);
    return r.clips[0].samples;
}

struct Instance {
    std::vector<double> params;
    std::vector<std::vector<double>> rows;
    std::vector<std::uint8_t> labels;
};

Instance random_instance(Rng& rng) {
    Instance in;
    const std::size_t d = 1 + rng.below(6);
    const std::size_t n = 2 + rng.below(30);
    for (std::size_t j = 0; j <= d; ++j) in.params.push_back(rng.normal(0.0, 1.0));
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> row;
        for (std::size_t j = 0; j < d; ++j) row.push_back(rng.normal(0.0, 1.5));
        in.rows.push_back(row);
        in.labels.push_back(rng.bernoulli(0.4) ? 1 : 0);
    }
    return in;
}

double fd_relative_error(const Instance& in) {
    const auto lg = bce_loss_and_gradient(in.params, in.rows, in.labels);
    const double h = 1e-5;
    double num2 = 0.0, diff2 = 0.0, ana2 = 0.0;
    for (std::size_t j = 0; j < in.params.size(); ++j) {
        auto up = in.params, dn = in.params;
        up[j] += h;
        dn[j] -= h;
        const double fd = (bce_loss_and_gradient(up, in.rows, in.labels).loss -
                           bce_loss_and_gradient(dn, in.rows, in.labels).loss) /
                          (2.0 * h);
        diff2 += (fd - lg.gradient[j]) * (fd - lg.gradient[j]);
        num2 += fd * fd;
        ana2 += lg.gradient[j] * lg.gradient[j];
    }
    return std::sqrt(diff2) / std::max({std::sqrt(num2), std::sqrt(ana2), 1e-8});
}

std::vector<LabeledSample> noisy_samples(std::size_t n, std::uint64_t seed, const std::string& prefix) {
    Rng rng(seed);
    std::vector<LabeledSample> out;
    for (std::size_t i = 0; i < n; ++i) {
        const bool y = rng.bernoulli(0.3);
        LabeledSample s;
        s.group = prefix + std::to_string(i / 2);
        s.label = y;
        s.features = {rng.normal(y ? 1.0 : 0.0, 1.0), rng.normal(90.0, 8.0), rng.normal(y ? 95.0 : 105.0, 10.0),
                      rng.normal(1.0, 0.05), rng.normal(75.0, 10.0)};
        out.push_back(s);
    }
    // Clips of one group share a label.
    for (std::size_t i = 1; i < out.size(); i += 2) out[i].label = out[i - 1].label;
    return out;
}

ModelWeights unit_weights() {
    ModelWeights w;
    w.coefficients = {1.0, 0.0, 0.0, 0.0, 0.0};
    w.intercept = -0.5;
    w.frozen_threshold = 0.4;
    return w;
}

}  // namespace

TEST_SUITE("model") {
    TEST_CASE("feature extraction follows the generator") {
        const auto b = synth::BeatTemplate::physiological();
        const auto f4 = extract_features(synthetic_clip(4.0, 1), 500.0);
        const double template_ratio = b[synth::Wave::T].amplitude_mv / b[synth::Wave::R].amplitude_mv;
        CHECK(std::abs(f4.t_r_ratio - template_ratio) <= 0.15 * template_ratio);
        CHECK(f4.heart_rate_bpm == doctest::Approx(70.0).epsilon(0.05));
        const auto f7 = extract_features(synthetic_clip(7.0, 1), 500.0);
        CHECK(f7.qrs_duration_ms > f4.qrs_duration_ms);
        CHECK(f7.t_r_ratio > f4.t_r_ratio);
        CHECK(f7.t_width_ms < f4.t_width_ms);
        CHECK_THROWS_AS(extract_features(std::vector<double>(5000, 0.0), 500.0), FeatureExtractionError);
    }

    TEST_CASE("standardizer") {
        const std::vector<FeatureArray> rows{{1, 2, 3, 4, 5}, {3, 2, 5, 8, 5}};
        const auto s = Standardizer::fit(rows);
        CHECK(s.means[0] == 2.0);
        CHECK(s.sds[0] == doctest::Approx(std::sqrt(2.0)));
        CHECK(s.sds[1] == 1.0);
        CHECK(s.apply(rows[1])[0] == doctest::Approx(1.0 / std::sqrt(2.0)));
    }

    TEST_CASE("loss examples") {
        const std::vector<std::vector<double>> rows{{1.0, -2.0}, {0.5, 3.0}, {-1.0, 0.0}, {2.0, 1.0}};
        const std::vector<std::uint8_t> labels{1, 0, 1, 0};
        const auto lg = bce_loss_and_gradient(std::vector<double>(3, 0.0), rows, labels);
        CHECK(std::abs(lg.loss - std::log(2.0)) < 1e-12);

        const std::vector<std::vector<double>> sep{{-2.0}, {-1.0}, {1.0}, {2.0}};
        const std::vector<std::uint8_t> y{0, 0, 1, 1};
        CHECK(bce_loss_and_gradient(std::vector<double>{20.0, 0.0}, sep, y).loss < 1e-3);
        const auto clamped = bce_loss_and_gradient(std::vector<double>{1e6, 0.0}, sep, y);
        CHECK(std::isfinite(clamped.loss));
        for (const double g : clamped.gradient) CHECK(g == 0.0);
    }

    TEST_CASE("analytic gradient matches central differences on 100 instances") {
        Rng rng(2024);
        for (int i = 0; i < 100; ++i) CHECK(fd_relative_error(random_instance(rng)) < 1e-6);
    }

    TEST_CASE("adam step") {
        AdamConfig cfg;
        std::vector<double> p{0.3, -1.0};
        auto st = AdamState::zeros(2);
        adam_step(p, std::vector<double>{0.0, 0.0}, st, 1, cfg);
        CHECK(p == std::vector<double>{0.3, -1.0});

        for (const double g : {0.01, -0.5, 3.0, 1e3}) {
            std::vector<double> q{1.0};
            auto s = AdamState::zeros(1);
            adam_step(q, std::vector<double>{g}, s, 1, cfg);
            const double step = std::abs(q[0] - 1.0);
            CHECK(std::abs(step - cfg.lr * std::abs(g) / (std::abs(g) + cfg.eps)) <= 1e-12);
            CHECK(std::abs(step - cfg.lr) / cfg.lr < 1e-6);
            CHECK((q[0] - 1.0) * g < 0.0);
        }
        std::vector<double> q{1.0};
        auto s = AdamState::zeros(1);
        CHECK_THROWS_AS(adam_step(q, std::vector<double>{std::numeric_limits<double>::quiet_NaN()}, s, 1, cfg),
                        TrainingError);
        CHECK(q[0] == 1.0);
        CHECK(s.m[0] == 0.0);
    }

    TEST_CASE("threshold freezing") {
        const std::vector<double> scores{0.1, 0.2, 0.8, 0.9};
        const std::vector<std::uint8_t> labels{0, 0, 1, 1};
        const auto t = freeze_threshold(scores, labels);
        CHECK(t.tau == doctest::Approx(0.5));
        CHECK(t.sensitivity == 1.0);
        CHECK(t.specificity == 1.0);
        CHECK_FALSE(t.degenerate);

        const auto flat = freeze_threshold(std::vector<double>{0.3, 0.3, 0.3}, std::vector<std::uint8_t>{0, 1, 0});
        CHECK(flat.tau == 0.3);
        CHECK(flat.degenerate);
        CHECK_THROWS(freeze_threshold(std::vector<double>{0.1, 0.2}, std::vector<std::uint8_t>{1, 1}));

        Rng rng(6);
        std::vector<double> s;
        std::vector<std::uint8_t> y;
        std::vector<eval::ScoredPair> pairs;
        for (int i = 0; i < 200; ++i) {
            const bool pos = rng.bernoulli(0.2);
            s.push_back(1.0 / (1.0 + std::exp(-rng.normal(pos ? 1.0 : -1.0, 1.0))));
            y.push_back(pos ? 1 : 0);
            pairs.push_back(eval::make_scored_pair("r" + std::to_string(i), "p" + std::to_string(i), s.back(),
                                                   pos ? 6.0 : 4.0));
        }
        const auto c = freeze_threshold(s, y);
        const auto m = eval::confusion_metrics(pairs, c.tau, eval::Endpoint::Primary);
        CHECK(std::abs(*m.sensitivity - c.sensitivity) < 1e-12);
        CHECK(std::abs(*m.specificity - c.specificity) < 1e-12);
        auto rs = s;
        auto ry = y;
        std::reverse(rs.begin(), rs.end());
        std::reverse(ry.begin(), ry.end());
        CHECK(freeze_threshold(rs, ry).tau == c.tau);
    }

    TEST_CASE("predict_proba") {
        ModelWeights zero;
        CHECK(predict_proba(zero, FeatureArray{1, 2, 3, 4, 5}) == 0.5);
        const auto w = unit_weights();
        double prev = 0.0;
        for (double x = -3.0; x <= 3.0; x += 0.5) {
            const double p = predict_proba(w, FeatureArray{x, 90, 100, 1, 70});
            CHECK(p > prev);
            CHECK(p > 0.0);
            CHECK(p < 1.0);
            prev = p;
        }
        CHECK_THROWS(predict_proba(w, FeatureArray{std::numeric_limits<double>::infinity(), 0, 0, 0, 0}));
        CHECK(aggregate_risk(std::vector<double>{0.2, 0.4, 0.6}) == doctest::Approx(0.4));
    }

    TEST_CASE("weights file round trip keeps probabilities bit-identical") {
        auto w = unit_weights();
        w.standardizer.means = {0.3, 88.1, 104.7, 1.0, 75.2};
        w.standardizer.sds = {0.12, 6.6, 11.3, 0.067, 14.4};
        w.coefficients = {0.123456789012345, -0.2, -0.3, 0.01, 1e-17};
        w.intercept = -3.4905435818231743;
        w.frozen_threshold = 0.0328262630415841;
        const auto back = weights_from_json(weights_to_json(w));
        const FeatureArray x{0.41, 92.0, 98.0, 1.02, 66.0};
        const double a = predict_proba(w, x), b = predict_proba(back, x);
        CHECK(std::memcmp(&a, &b, sizeof a) == 0);
        CHECK(back.frozen_threshold == w.frozen_threshold);
        CHECK_THROWS_AS(weights_from_json("{\"schema_version\": 1}"), ParseError);
    }

    TEST_CASE("training on separable 1-D data reaches AUROC 1") {
        std::vector<LabeledSample> ft, sel;
        for (int i = 0; i < 60; ++i) {
            const bool y = i % 3 == 0;
            ft.push_back({"f" + std::to_string(i), {y ? 2.0 + 0.01 * i : -1.0 - 0.01 * i, 90, 100, 1, 70}, y});
            sel.push_back({"s" + std::to_string(i), {y ? 1.5 + 0.02 * i : -0.5 - 0.02 * i, 90, 100, 1, 70}, y});
        }
        auto cfg = TrainConfig::compact();
        cfg.max_epochs = 40;
        const auto r = train(ft, sel, cfg);
        CHECK(r.weights.metadata.best_val_auroc == 1.0);
        CHECK(r.weights.coefficients[0] > 0.0);
        CHECK(r.history.size() == 40);
    }

    TEST_CASE("plateau schedule, checkpoint retention and determinism") {
        const auto ft = noisy_samples(400, 1, "f");
        const auto sel = noisy_samples(120, 2, "s");
        auto cfg = TrainConfig::compact();
        cfg.seed = 77;
        cfg.max_epochs = 120;
        const auto r = train(ft, sel, cfg);

        double best = -1.0;
        int stale = 0;
        int decays = 0;
        for (std::size_t e = 0; e < r.history.size(); ++e) {
            const auto& h = r.history[e];
            CHECK(h.epoch == static_cast<int>(e) + 1);
            bool decay_now = false;
            if (h.val_auroc > best) {
                best = h.val_auroc;
                stale = 0;
            } else if (++stale >= cfg.patience) {
                decay_now = true;
                stale = 0;
            }
            if (e + 1 < r.history.size()) {
                const double expected = decay_now ? h.lr * cfg.decay : h.lr;
                CHECK(r.history[e + 1].lr == expected);
            }
            decays += decay_now;
        }
        CHECK(decays >= 1);
        CHECK(std::abs(r.weights.metadata.best_val_auroc - best) < 1e-12);
        int best_flags = 0;
        for (const auto& h : r.history) {
            if (h.is_best) {
                ++best_flags;
                CHECK(h.epoch == r.weights.metadata.best_epoch);
                CHECK(h.val_auroc == best);
            }
        }
        CHECK(best_flags == 1);

        std::vector<double> s;
        std::vector<std::uint8_t> y;
        for (const auto& g : score_groups(r.weights, sel)) {
            s.push_back(g.score);
            y.push_back(g.label);
        }
        CHECK(std::abs(eval::auroc(s, y) - best) < 1e-12);

        const auto again = train(ft, sel, cfg);
        REQUIRE(again.history.size() == r.history.size());
        for (std::size_t e = 0; e < r.history.size(); ++e) {
            CHECK(again.history[e].loss == r.history[e].loss);
            CHECK(again.history[e].val_auroc == r.history[e].val_auroc);
        }
        CHECK(again.weights.coefficients == r.weights.coefficients);
        CHECK(again.weights.intercept == r.weights.intercept);
    }

    TEST_CASE("loss is non-increasing once the rate has decayed twice") {
        const auto ft = noisy_samples(400, 3, "f");
        const auto sel = noisy_samples(100, 4, "s");
        auto cfg = TrainConfig::compact();
        cfg.max_epochs = 200;
        const auto r = train(ft, sel, cfg);
        const double twice = cfg.lr * cfg.decay * cfg.decay;
        std::size_t checked = 0;
        for (std::size_t e = 1; e < r.history.size(); ++e) {
            if (r.history[e].lr <= twice * (1 + 1e-12) && r.history[e - 1].lr <= twice * (1 + 1e-12)) {
                CHECK(r.history[e].loss <= r.history[e - 1].loss + 1e-9);
                ++checked;
            }
        }
        CHECK(checked > 0);
    }

    TEST_CASE("standardizer depends only on the fine-tune set") {
        const auto ft = noisy_samples(200, 5, "f");
        auto sel = noisy_samples(60, 6, "s");
        auto cfg = TrainConfig::compact();
        cfg.max_epochs = 5;
        const auto a = train(ft, sel, cfg);
        for (auto& s : sel) s.features[0] += 100.0;
        const auto b = train(ft, sel, cfg);
        CHECK(a.weights.standardizer.means == b.weights.standardizer.means);
        CHECK(a.weights.standardizer.sds == b.weights.standardizer.sds);
    }

    TEST_CASE("training errors") {
        const auto ft = noisy_samples(50, 7, "f");
        std::vector<LabeledSample> one_class = noisy_samples(20, 8, "s");
        for (auto& s : one_class) s.label = false;
        CHECK_THROWS_AS(train(ft, one_class, TrainConfig::compact()), TrainingError);
        CHECK_THROWS_AS(train({}, one_class, TrainConfig::compact()), TrainingError);
        auto bad = TrainConfig::compact();
        bad.lr = -1.0;
        CHECK_THROWS(bad.validate());
        CHECK(TrainConfig::reference().lr == 1e-4);
        CHECK(TrainConfig::reference().max_epochs == 30);
        CHECK(TrainConfig::for_profile("reference").max_epochs == 30);
        CHECK_THROWS(TrainConfig::for_profile("huge"));
    }

    TEST_CASE("logistic scorer matches predict_proba on extracted features") {
        const auto w = unit_weights();
        const LogisticScorer scorer(w);
        const auto clip = synthetic_clip(5.8, 12);
        CHECK(scorer.score_clip(clip, 500.0) == predict_proba(w, extract_features(clip, 500.0)));
        CHECK(scorer.name() == "logistic");
    }
}

#include "pocketk/device.hpp"
#include "pocketk/study.hpp"

#include <doctest.h>

using namespace pocketk;
using namespace pocketk::device;

namespace {

// Returns a fixed sequence of clip probabilities.
class SequenceScorer final : public model::Scorer {
public:
    explicit SequenceScorer(std::vector<double> probs) : probs_(std::move(probs)) {}
    double score_clip(std::span<const double>, double) const override { return probs_[next_++ % probs_.size()]; }
    std::string name() const override { return "sequence"; }

private:
    std::vector<double> probs_;
    mutable std::size_t next_ = 0;
};

class RejectSecond final : public model::Scorer {
public:
    double score_clip(std::span<const double>, double) const override {
        if (++calls_ == 2) throw QualityError("synthetic rejection");
        return 0.3;
    }
    std::string name() const override { return "reject"; }

private:
    mutable int calls_ = 0;
};

model::ModelWeights demo_weights() {
    model::ModelWeights w;
    w.standardizer.means = {0.3, 90.0, 100.0, 1.0, 75.0};
    w.standardizer.sds = {0.1, 7.0, 11.0, 0.07, 14.0};
    w.coefficients = {1.5, 0.3, -0.8, 0.0, 0.0};
    w.intercept = -3.0;
    w.frozen_threshold = 0.1;
    return w;
}

}  // namespace

TEST_SUITE("device") {
    TEST_CASE("30 s recording yields three clips and a mean risk") {
        const auto rec = study::synthesize_device_recording(4.1, 1);
        CHECK(rec.fs_hz == 500);
        CHECK(rec.samples.size() == 15000);
        const auto equal = run_handheld(rec, SequenceScorer({0.2, 0.2, 0.2}), 0.5);
        CHECK(equal.clips_segmented == 3);
        CHECK(equal.clip_probs.size() == 3);
        CHECK(equal.risk == doctest::Approx(0.2));
        CHECK_FALSE(equal.alert);
        const auto spread = run_handheld(rec, SequenceScorer({0.2, 0.4, 0.6}), 0.4);
        CHECK(spread.risk == doctest::Approx(0.4));
        CHECK(spread.risk == model::aggregate_risk(spread.clip_probs));
        CHECK(spread.alert);
    }

    TEST_CASE("rejected clips are reported and excluded") {
        const auto rec = study::synthesize_device_recording(4.1, 2);
        const auto r = run_handheld(rec, RejectSecond{}, 0.5);
        CHECK(r.clips_segmented == 3);
        CHECK(r.clips_rejected == 1);
        CHECK(r.clip_probs.size() == 2);
        CHECK_FALSE(r.notices.empty());
    }

    TEST_CASE("short and unusable recordings") {
        auto rec = study::synthesize_device_recording(4.1, 3, 500, 9.5);
        CHECK_THROWS_AS(run_handheld(rec, SequenceScorer({0.2}), 0.5), TooShortError);
        const auto twelve = study::synthesize_device_recording(4.1, 3, 500, 12.0);
        CHECK(run_handheld(twelve, SequenceScorer({0.2}), 0.5).clips_segmented == 1);
        Waveform flat{500, std::vector<float>(15000, 0.0f)};
        CHECK_THROWS_AS(run_handheld(flat, SequenceScorer({0.2}), 0.5), QualityError);
        CHECK_THROWS_AS(run_handheld(twelve, SequenceScorer({0.2}), 1.5), ParameterError);
    }

    TEST_CASE("wire path: parse, score, determinism and latency") {
        const auto rec = study::synthesize_device_recording(6.9, 4);
        const auto bytes = encode_waveform(rec);
        const auto parsed = parse_recording(bytes);
        CHECK(parsed.samples.size() == 30u * parsed.fs_hz);
        CHECK(parsed == rec);
        const auto w = demo_weights();
        const auto a = run_handheld(bytes, w);
        const auto b = run_handheld(bytes, w);
        CHECK(a.clip_probs == b.clip_probs);
        CHECK(a.risk == b.risk);
        CHECK(a.threshold == w.frozen_threshold);
        CHECK(a.latency_ms < 1000.0);
        auto truncated = bytes;
        truncated.pop_back();
        CHECK_THROWS_AS(run_handheld(truncated, w), ParseError);
    }

    TEST_CASE("result json") {
        const auto rec = study::synthesize_device_recording(4.1, 5);
        const auto r = run_handheld(rec, SequenceScorer({0.2, 0.4, 0.6}), 0.5);
        const auto j = result_to_json(r, "{\"seed\": 1}");
        CHECK(j.find("\"aggregation\": \"mean\"") != std::string::npos);
        CHECK(j.find("\"provenance\"") != std::string::npos);
    }
}

#include "pocketk/device.hpp"

#include "pocketk/dsp.hpp"

#include <chrono>
#include <fmt/format.h>
#include <json.hpp>

namespace pocketk::device {

Waveform parse_recording(std::span<const std::uint8_t> bytes) {
    return decode_waveform(bytes);
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

DeviceResult score(const Waveform& recording, const model::Scorer& scorer, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw ParameterError("device: threshold must lie in (0, 1)");
    const double fs = recording.fs_hz;
    if (recording.duration_seconds() < dsp::kClipSeconds) {
        throw TooShortError(fmt::format("recording lasts {:.2f} s; at least {:.0f} s is needed",
                                        recording.duration_seconds(), dsp::kClipSeconds));
    }
    const std::vector<double> raw(recording.samples.begin(), recording.samples.end());
    auto pre = dsp::preprocess(raw, fs, "device");
    DeviceResult r;
    r.threshold = threshold;
    r.clips_segmented = pre.segments;
    r.clips_rejected = pre.rejected;
    r.notices = std::move(pre.notices);
    for (const auto& clip : pre.clips) {
        try {
            r.clip_probs.push_back(scorer.score_clip(clip.samples, clip.fs));
        } catch (const QualityError& e) {
            ++r.clips_rejected;
            r.notices.push_back(fmt::format("device clip {}: {}", clip.index, e.what()));
        }
    }
    if (r.clip_probs.empty()) {
        throw QualityError(fmt::format("all {} clip(s) rejected by the quality gate", r.clips_segmented));
    }
    r.risk = model::aggregate_risk(r.clip_probs);
    r.alert = r.risk >= threshold;
    return r;
}

}  // namespace

DeviceResult run_handheld(const Waveform& recording, const model::Scorer& scorer, double threshold) {
    const auto start = Clock::now();
    auto r = score(recording, scorer, threshold);
    r.latency_ms = elapsed_ms(start);
    return r;
}

DeviceResult run_handheld(const Waveform& recording, const model::ModelWeights& weights) {
    const model::LogisticScorer scorer(weights);
    return run_handheld(recording, scorer, weights.frozen_threshold);
}

DeviceResult run_handheld(std::span<const std::uint8_t> bytes, const model::ModelWeights& weights) {
    const auto start = Clock::now();
    const model::LogisticScorer scorer(weights);
    auto r = score(parse_recording(bytes), scorer, weights.frozen_threshold);
    r.latency_ms = elapsed_ms(start);
    return r;
}

std::string result_to_json(const DeviceResult& r, std::string_view provenance_json) {
    nlohmann::ordered_json j;
    j["clip_probs"] = r.clip_probs;
    j["risk"] = r.risk;
    j["threshold"] = r.threshold;
    j["alert"] = r.alert;
    j["aggregation"] = "mean";
    j["clips_segmented"] = r.clips_segmented;
    j["clips_rejected"] = r.clips_rejected;
    j["latency_ms"] = r.latency_ms;
    j["notices"] = r.notices;
    if (!provenance_json.empty()) j["provenance"] = nlohmann::ordered_json::parse(provenance_json);
    return j.dump(2) + "\n";
}

}  // namespace pocketk::device

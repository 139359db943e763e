#pragma once

#include "pocketk/model.hpp"
#include "pocketk/waveform_io.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace pocketk::device {

/// Wire-format bytes to a validated recording.
Waveform parse_recording(std::span<const std::uint8_t> bytes);

struct DeviceResult {
    std::vector<double> clip_probs;  ///< accepted clips, in time order
    std::size_t clips_segmented = 0;
    std::size_t clips_rejected = 0;
    double risk = 0.0;  ///< model::aggregate_risk(clip_probs)
    double threshold = 0.5;
    bool alert = false;  ///< risk >= threshold
    double latency_ms = 0.0;
    std::vector<std::string> notices;
};

/// Scores floor(duration / 10 s) clips. Throws TooShortError below one
/// clip and QualityError when every clip is rejected.
DeviceResult run_handheld(const Waveform& recording, const model::Scorer& scorer, double threshold);
DeviceResult run_handheld(const Waveform& recording, const model::ModelWeights& weights);
/// Latency includes parsing.
DeviceResult run_handheld(std::span<const std::uint8_t> bytes, const model::ModelWeights& weights);

std::string result_to_json(const DeviceResult& result, std::string_view provenance_json = {});

}  // namespace pocketk::device

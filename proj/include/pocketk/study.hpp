#pragma once

#include "pocketk/common.hpp"
#include "pocketk/device.hpp"
#include "pocketk/eval.hpp"
#include "pocketk/ingest.hpp"
#include "pocketk/synthdata.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace pocketk::study {

inline constexpr const char* kDataDirEnv = "POCKETK_DATA_DIR";

/// Upstream artifact missing; the message names the subcommand to run.
class PrerequisiteError : public Error {
public:
    using Error::Error;
};

/// Settings for a full run, read from `key = value` lines.
struct RunConfig {
    std::filesystem::path data_dir = "data";
    std::filesystem::path out_dir = "run";
    std::uint64_t seed = 20160101;

    // Cohorts.
    int dev_patients = 2000;
    std::uint32_t dev_fs_hz = 500;
    Timestamp dev_start = parse_rfc3339("2016-01-01T00:00:00Z");
    Timestamp dev_end = parse_rfc3339("2024-11-30T00:00:00Z");
    int external_patients = 800;
    std::uint32_t external_fs_hz = 1000;
    Timestamp external_start = parse_rfc3339("2023-01-01T00:00:00Z");
    Timestamp external_end = parse_rfc3339("2024-11-30T00:00:00Z");
    double target_prevalence = 0.03;
    double recording_seconds = 10.0;

    // Study design.
    double window_minutes = 60.0;
    Timestamp cutoff = parse_rfc3339("2021-07-01T00:00:00Z");
    double split_finetune = 0.8;
    double split_model_selection = 0.1;
    std::string profile = "compact";
    std::vector<eval::Endpoint> endpoints{eval::Endpoint::Primary, eval::Endpoint::Severe};
    int bootstrap_resamples = eval::kDefaultBootstrapResamples;
    std::string threshold_policy = "youden";

    static RunConfig defaults();
    /// Unknown keys and malformed values throw ParseError naming the key.
    static RunConfig parse(std::string_view text, RunConfig base = defaults());
    static RunConfig load(const std::filesystem::path& path, RunConfig base = defaults());
    void set(std::string_view key, std::string_view value);
    void validate() const;

    /// Canonical `key = value` text in a fixed key order.
    std::string to_text(bool annotate = false) const;
    /// FNV-1a of the canonical text without the path keys.
    std::string hash() const;

    std::uint64_t synth_seed(std::string_view site) const;
    std::uint64_t split_seed() const;
    std::uint64_t train_seed() const;
    std::uint64_t bootstrap_seed() const;

    synth::SynthConfig synth_config(std::string_view site) const;
    std::vector<std::string> sites() const { return {"dev", "external"}; }

    /// "pocketk <version> config_hash=... seed=... stage=..." for CSV comment lines.
    std::string csv_provenance(std::string_view stage) const;
    /// JSON object text with the same fields.
    std::string json_provenance(std::string_view stage) const;
};

/// Human-readable result lines per stage.
using StageLog = std::vector<std::string>;

StageLog run_synth(const RunConfig& config);
StageLog run_pair(const RunConfig& config);
StageLog run_split(const RunConfig& config);
StageLog run_train(const RunConfig& config);
StageLog run_eval(const RunConfig& config);
StageLog run_explain(const RunConfig& config);
StageLog run_track(const RunConfig& config);
StageLog run_report(const RunConfig& config);
/// Writes `output` (default <out>/device_result.json).
device::DeviceResult run_device(const RunConfig& config, const std::filesystem::path& input,
                                const std::filesystem::path& output = {});

/// Synthetic 30-s handheld recording at potassium `k`.
Waveform synthesize_device_recording(double k, std::uint64_t seed, std::uint32_t fs_hz = 500,
                                     double seconds = 30.0);

// ---------------------------------------------------------------------------
// Artifacts shared with tests and the acceptance runner
// ---------------------------------------------------------------------------

/// Per-clip features of one paired recording.
struct ClipFeatures {
    std::string record_id;
    std::string patient_id;
    std::size_t clip_index = 0;
    Timestamp ecg_timestamp;
    double potassium = 0.0;
    model::FeatureArray features{};
};

std::vector<ClipFeatures> read_clip_features(const std::filesystem::path& path);

/// File-safe partition name (':' becomes '_').
std::string partition_file_stem(ingest::Partition p);

/// K bins used for the risk-gradient check.
inline constexpr std::array<const char*, 4> kRiskBins = {"k_lt_5.0", "k_5.0_to_5.5", "k_5.5_to_6.0", "k_ge_6.0"};
std::size_t risk_bin(double potassium);

/// Windows relative to R (seconds) for the averaged-waveform comparison.
struct WaveWindow {
    double lo_s = 0.0;
    double hi_s = 0.0;
};
/// Template T centre +/- 2 widths.
WaveWindow t_wave_window();

}  // namespace pocketk::study

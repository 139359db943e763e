#pragma once

#include "pocketk/common.hpp"
#include "pocketk/waveform_io.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace pocketk::synth {

enum class Wave : std::size_t { P = 0, Q, R, S, T };
inline constexpr std::size_t kWaveCount = 5;

struct GaussianWave {
    double amplitude_mv = 0.0;
    double width_s = 0.01;
    double center_s = 0.0;  ///< relative to the R peak
    bool operator==(const GaussianWave&) const = default;
};

/// One heartbeat as a sum of five Gaussians (P, Q, R, S, T).
struct BeatTemplate {
    std::array<GaussianWave, kWaveCount> waves{};
    double rr_interval_s = 1.0;

    GaussianWave& operator[](Wave w) { return waves[static_cast<std::size_t>(w)]; }
    const GaussianWave& operator[](Wave w) const { return waves[static_cast<std::size_t>(w)]; }
    bool operator==(const BeatTemplate&) const = default;

    /// Upright lead-I beat at 60 bpm.
    static BeatTemplate physiological();

    /// Checks positive widths, positive RR and the P < Q < R = 0 < S < T
    /// ordering of centers. Throws ParameterError.
    void validate() const;

    double value_at(double t_rel_r) const;
};

/// Piecewise-linear potassium dose-response on beat geometry. Identity at
/// or below `onset_k`; T peaking first, QRS widening from
/// `qrs_widen_onset_k`, P flattening from `p_atten_onset_k`.
struct PotassiumMorphologyMap {
    double onset_k = 5.0;
    double t_amp_gain = 1.5;       ///< fractional T amplitude gain per mmol/L
    double t_width_shrink = 0.2;   ///< T width divisor gain per mmol/L
    double qrs_widen_onset_k = 6.0;
    double qrs_width_gain = 0.3;  ///< fractional Q/R/S width gain per mmol/L
    double p_atten_onset_k = 6.5;
    double p_attenuation = 0.4;  ///< fractional P amplitude loss per mmol/L

    void validate() const;
};

inline constexpr double kMinPhysiologicK = 2.0;
inline constexpr double kMaxPhysiologicK = 9.0;

/// One RR interval of the template sampled at `fs`, spanning
/// [-0.4 rr, 0.6 rr) with the R center exactly on sample round(0.4 rr fs).
std::vector<double> generate_beat(const BeatTemplate& beat, double fs);

/// Index of the R center within `generate_beat` output.
std::size_t beat_r_index(const BeatTemplate& beat, double fs);

BeatTemplate apply_potassium(const BeatTemplate& beat, const PotassiumMorphologyMap& map, double k);

struct NoiseConfig {
    double baseline_wander_mv = 0.1;
    double baseline_wander_hz = 0.2;
    double powerline_mv = 0.05;
    double powerline_hz = 50.0;
    double white_mv = 0.01;
};

struct BeatTrain {
    std::vector<double> samples;
    std::vector<double> r_times_s;  ///< R centers falling inside the trace
};

/// Noise-free beat train. RR intervals are jittered uniformly by
/// +/- `rr_jitter` (fraction) per beat.
BeatTrain generate_beat_train(const BeatTemplate& beat, double fs, double duration_s, double rr_jitter,
                              Rng& rng);

/// Adds baseline wander, powerline and white noise in place.
void add_noise(std::vector<double>& samples, double fs, const NoiseConfig& noise, Rng& rng);

// ---------------------------------------------------------------------------
// Cohorts
// ---------------------------------------------------------------------------

struct SynthConfig {
    std::string site = "dev";
    int n_patients = 200;
    int min_pairs_per_patient = 1;
    int max_pairs_per_patient = 5;

    // Potassium: truncated normal core plus a uniform elevated tail.
    double k_mean = 4.14;
    double k_sd = 0.36;
    double k_floor = 2.5;
    double k_ceiling = 8.5;
    double tail_weight = 0.03;
    double tail_lo = 5.0;
    double tail_hi = 7.5;

    double hr_min_bpm = 55.0;
    double hr_max_bpm = 95.0;
    double rr_jitter = 0.05;
    NoiseConfig noise;
    double duration_s = 10.0;
    std::uint32_t fs_hz = 500;
    double morphology_variability = 0.1;  ///< log-scale SD of per-patient wave scaling
    double t_amp_variability = 0.1;       ///< extra log-scale SD on T amplitude
    PotassiumMorphologyMap kmap;

    // Comorbidity probabilities, conditional on the patient having any
    // tail-drawn potassium value.
    double p_ckd_tail = 0.5;
    double p_ckd_base = 0.1;
    double ckd_k_shift = 0.6;  ///< mmol/L added to core potassium draws of CKD patients
    double p_hf_tail = 0.35;
    double p_hf_base = 0.08;
    double p_hypertension = 0.35;
    double p_diabetes = 0.2;
    double p_cad = 0.15;
    double p_stroke = 0.08;
    double p_nonchronic_renal = 0.05;  ///< "renal insufficiency" distractor
    double p_post_index_ckd = 0.05;    ///< CKD diagnosis dated after all ECGs

    double age_min = 25.0;
    double age_max = 90.0;
    double male_fraction = 0.55;

    Timestamp study_start = parse_rfc3339("2016-01-01T00:00:00Z");
    Timestamp study_end = parse_rfc3339("2024-11-30T00:00:00Z");
    double max_pair_spacing_days = 400.0;

    // Screening-stage injections, per patient.
    double no_ecg_fraction = 0.05;
    double unpairable_fraction = 0.05;
    double poor_quality_fraction = 0.01;
    // Per recording.
    double hemolysed_lab_rate = 0.05;
    double stray_lab_rate = 0.1;

    /// Append four six-pair patients with rise, episode-with-recovery,
    /// fluctuation and decline potassium courses after `exemplar_start`.
    bool inject_trajectory_exemplars = true;
    Timestamp exemplar_start = parse_rfc3339("2022-01-10T09:00:00Z");

    std::uint64_t seed = 20160101;

    void validate() const;
};

/// Expected fraction of draws with K > 5.5 under the sampling mixture.
double expected_prevalence(const SynthConfig& config, double threshold = 5.5);

/// Tail weight that yields `target` expected prevalence of K > 5.5.
double tail_weight_for_prevalence(const SynthConfig& config, double target);

enum class PatientKind { Regular, NoEcg, Unpairable, PoorQuality, Exemplar };

struct PlannedRecording {
    std::string record_id;
    Timestamp timestamp;
    double true_k = 4.0;
    double heart_rate_bpm = 60.0;
    std::uint64_t seed = 0;
};

struct PlannedLab {
    std::string lab_id;
    Timestamp timestamp;
    double potassium = 4.0;
    bool hemolysed = false;
};

struct PlannedDiagnosis {
    Timestamp timestamp;
    std::string text;
};

struct PlannedPatient {
    std::string patient_id;
    PatientKind kind = PatientKind::Regular;
    std::string exemplar_pattern;  ///< non-empty for injected exemplars
    double age_years = 50.0;
    char sex = 'M';
    bool ckd = false;
    bool heart_failure = false;
    bool any_tail_draw = false;
    BeatTemplate beat;
    std::vector<PlannedRecording> recordings;
    std::vector<PlannedLab> labs;
    std::vector<PlannedDiagnosis> diagnoses;
};

struct CohortPlan {
    SynthConfig config;
    std::vector<PlannedPatient> patients;
};

struct CohortManifest {
    std::filesystem::path root;
    std::size_t screened_patients = 0;
    std::size_t recordings = 0;
    std::size_t labs = 0;
    std::size_t injected_no_ecg = 0;
    std::size_t injected_unpairable = 0;
    std::size_t injected_poor_quality = 0;
    std::vector<std::pair<std::string, std::string>> exemplars;  ///< (pattern, patient_id)
};

/// Draws every patient, timestamp, lab and diagnosis; no waveform samples.
CohortPlan plan_cohort(const SynthConfig& config);

/// Renders the waveform of one planned recording.
Waveform render_recording(const PlannedPatient& patient, const PlannedRecording& rec, const SynthConfig& config);

/// Writes manifest.csv, labs.csv, diagnoses.csv, demographics.csv,
/// cohort.json and waveforms/<record_id>.pkecg under `out_dir`.
CohortManifest generate_cohort(const SynthConfig& config, const std::filesystem::path& out_dir);

}  // namespace pocketk::synth

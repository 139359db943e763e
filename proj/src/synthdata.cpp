#include "pocketk/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <json.hpp>
#include <numbers>
#include <sstream>

namespace pocketk::synth {

namespace {

constexpr std::array<const char*, kWaveCount> kWaveNames = {"P", "Q", "R", "S", "T"};

double gaussian(double t, const GaussianWave& w) {
    const double z = (t - w.center_s) / w.width_s;
    return w.amplitude_mv * std::exp(-0.5 * z * z);
}

double round2(double x) { return std::round(x * 100.0) / 100.0; }

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

}  // namespace

BeatTemplate BeatTemplate::physiological() {
    BeatTemplate b;
    b[Wave::P] = {0.15, 0.025, -0.200};
    b[Wave::Q] = {-0.10, 0.010, -0.030};
    b[Wave::R] = {1.00, 0.012, 0.0};
    b[Wave::S] = {-0.20, 0.010, 0.030};
    b[Wave::T] = {0.30, 0.045, 0.250};
    b.rr_interval_s = 1.0;
    return b;
}

void BeatTemplate::validate() const {
    for (std::size_t i = 0; i < kWaveCount; ++i) {
        if (!(waves[i].width_s > 0.0)) {
            throw ParameterError(fmt::format("beat template: {} width must be positive", kWaveNames[i]));
        }
        if (!std::isfinite(waves[i].amplitude_mv) || !std::isfinite(waves[i].center_s)) {
            throw ParameterError(fmt::format("beat template: {} parameters must be finite", kWaveNames[i]));
        }
    }
    const auto& self = *this;
    if (!(self[Wave::P].center_s < self[Wave::Q].center_s && self[Wave::Q].center_s < 0.0 &&
          self[Wave::R].center_s == 0.0 && 0.0 < self[Wave::S].center_s &&
          self[Wave::S].center_s < self[Wave::T].center_s)) {
        throw ParameterError("beat template: wave centers must satisfy P < Q < R = 0 < S < T");
    }
    if (!(rr_interval_s > 0.0)) throw ParameterError("beat template: rr_interval must be positive");
}

double BeatTemplate::value_at(double t) const {
    double v = 0.0;
    for (const auto& w : waves) v += gaussian(t, w);
    return v;
}

void PotassiumMorphologyMap::validate() const {
    if (t_amp_gain < 0 || t_width_shrink < 0 || qrs_width_gain < 0 || p_attenuation < 0) {
        throw ParameterError("potassium map: gains must be non-negative");
    }
    if (!(onset_k <= qrs_widen_onset_k)) {
        throw ParameterError("potassium map: QRS onset must not precede T onset");
    }
}

std::size_t beat_r_index(const BeatTemplate& beat, double fs) {
    return static_cast<std::size_t>(std::lround(0.4 * beat.rr_interval_s * fs));
}

std::vector<double> generate_beat(const BeatTemplate& beat, double fs) {
    if (!(fs >= 100.0)) throw ParameterError("generate_beat: fs must be at least 100 Hz");
    beat.validate();
    const auto n = static_cast<std::size_t>(std::lround(beat.rr_interval_s * fs));
    const auto r_index = static_cast<long>(beat_r_index(beat, fs));
    std::vector<double> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        out[k] = beat.value_at(static_cast<double>(static_cast<long>(k) - r_index) / fs);
    }
    return out;
}

BeatTemplate apply_potassium(const BeatTemplate& beat, const PotassiumMorphologyMap& map, double k) {
    if (!(k >= kMinPhysiologicK && k <= kMaxPhysiologicK)) {
        throw ParameterError(fmt::format("apply_potassium: K = {} mmol/L outside [{}, {}]", k, kMinPhysiologicK,
                                         kMaxPhysiologicK));
    }
    map.validate();
    BeatTemplate out = beat;
    const double t_excess = std::max(0.0, k - map.onset_k);
    if (t_excess > 0.0) {
        out[Wave::T].amplitude_mv *= 1.0 + map.t_amp_gain * t_excess;
        out[Wave::T].width_s /= 1.0 + map.t_width_shrink * t_excess;
    }
    const double qrs_excess = std::max(0.0, k - map.qrs_widen_onset_k);
    if (qrs_excess > 0.0) {
        const double scale = 1.0 + map.qrs_width_gain * qrs_excess;
        for (const Wave w : {Wave::Q, Wave::R, Wave::S}) out[w].width_s *= scale;
        out[Wave::Q].center_s *= scale;
        out[Wave::S].center_s *= scale;
    }
    const double p_excess = std::max(0.0, k - map.p_atten_onset_k);
    if (p_excess > 0.0) {
        out[Wave::P].amplitude_mv *= std::max(0.0, 1.0 - map.p_attenuation * p_excess);
    }
    return out;
}

BeatTrain generate_beat_train(const BeatTemplate& beat, double fs, double duration_s, double rr_jitter,
                              Rng& rng) {
    if (!(fs >= 100.0)) throw ParameterError("generate_beat_train: fs must be at least 100 Hz");
    if (!(duration_s > 0.0)) throw ParameterError("generate_beat_train: duration must be positive");
    if (rr_jitter < 0.0 || rr_jitter >= 0.5) throw ParameterError("generate_beat_train: rr_jitter out of range");
    beat.validate();

    const auto n = static_cast<std::size_t>(std::lround(duration_s * fs));
    BeatTrain train;
    train.samples.assign(n, 0.0);

    double r_time = rng.uniform(0.0, beat.rr_interval_s) - beat.rr_interval_s;
    while (r_time < duration_s + beat.rr_interval_s) {
        if (r_time >= 0.0 && r_time < duration_s) train.r_times_s.push_back(r_time);
        for (const auto& w : beat.waves) {
            const double centre = r_time + w.center_s;
            const double reach = 6.0 * w.width_s;
            const long lo = std::max(0L, static_cast<long>(std::ceil((centre - reach) * fs)));
            const long hi = std::min(static_cast<long>(n) - 1, static_cast<long>(std::floor((centre + reach) * fs)));
            for (long k = lo; k <= hi; ++k) {
                train.samples[static_cast<std::size_t>(k)] += gaussian(static_cast<double>(k) / fs - r_time, w);
            }
        }
        r_time += beat.rr_interval_s * (1.0 + rr_jitter * (2.0 * rng.uniform() - 1.0));
    }
    return train;
}

void add_noise(std::vector<double>& samples, double fs, const NoiseConfig& noise, Rng& rng) {
    const double wander_phase = 2.0 * std::numbers::pi * rng.uniform();
    const double mains_phase = 2.0 * std::numbers::pi * rng.uniform();
    for (std::size_t k = 0; k < samples.size(); ++k) {
        const double t = static_cast<double>(k) / fs;
        samples[k] += noise.baseline_wander_mv *
                          std::sin(2.0 * std::numbers::pi * noise.baseline_wander_hz * t + wander_phase) +
                      noise.powerline_mv * std::sin(2.0 * std::numbers::pi * noise.powerline_hz * t + mains_phase) +
                      noise.white_mv * rng.normal();
    }
}

// ---------------------------------------------------------------------------

void SynthConfig::validate() const {
    if (n_patients < 0) throw ParameterError("synth: n_patients must be non-negative");
    if (min_pairs_per_patient < 1 || max_pairs_per_patient < min_pairs_per_patient) {
        throw ParameterError("synth: invalid pairs_per_patient range");
    }
    if (!(k_sd > 0.0) || !(ckd_k_shift >= 0.0) || !(k_floor < k_ceiling) || k_floor < kMinPhysiologicK || k_ceiling > kMaxPhysiologicK) {
        throw ParameterError("synth: invalid potassium distribution");
    }
    if (tail_weight < 0.0 || tail_weight > 1.0 || !(tail_lo < tail_hi) || tail_lo < kMinPhysiologicK ||
        tail_hi > kMaxPhysiologicK) {
        throw ParameterError("synth: invalid potassium tail");
    }
    if (!(hr_min_bpm > 20.0) || !(hr_max_bpm >= hr_min_bpm) || hr_max_bpm > 200.0) {
        throw ParameterError("synth: invalid heart-rate range");
    }
    if (!(duration_s >= 1.0)) throw ParameterError("synth: recording duration must be at least 1 s");
    if (fs_hz < 100) throw ParameterError("synth: fs_hz must be at least 100");
    if (noise.baseline_wander_mv < 0 || noise.powerline_mv < 0 || noise.white_mv < 0) {
        throw ParameterError("synth: noise amplitudes must be non-negative");
    }
    for (const double p : {p_ckd_tail, p_ckd_base, p_hf_tail, p_hf_base, p_hypertension, p_diabetes, p_cad, p_stroke,
                           p_nonchronic_renal, p_post_index_ckd, male_fraction, hemolysed_lab_rate, stray_lab_rate}) {
        if (p < 0.0 || p > 1.0) throw ParameterError("synth: probabilities must lie in [0, 1]");
    }
    if (no_ecg_fraction < 0 || unpairable_fraction < 0 || poor_quality_fraction < 0 ||
        no_ecg_fraction + unpairable_fraction + poor_quality_fraction > 1.0) {
        throw ParameterError("synth: screening injection fractions must sum to at most 1");
    }
    if (!(study_start < study_end)) throw ParameterError("synth: study_start must precede study_end");
    if (!(max_pair_spacing_days >= 2.0)) throw ParameterError("synth: max_pair_spacing_days must be >= 2");
    kmap.validate();
}

double expected_prevalence(const SynthConfig& c, double threshold) {
    const double zf = (c.k_floor - c.k_mean) / c.k_sd;
    const double zc = (c.k_ceiling - c.k_mean) / c.k_sd;
    const double zt = (std::clamp(threshold, c.k_floor, c.k_ceiling) - c.k_mean) / c.k_sd;
    const double untruncated = (normal_cdf(zc) - normal_cdf(zt)) / (normal_cdf(zc) - normal_cdf(zf));
    // Shifted CKD draws are approximated at the base CKD rate.
    const double zs = (std::clamp(threshold - c.ckd_k_shift, c.k_floor, c.k_ceiling) - c.k_mean) / c.k_sd;
    const double shifted = (normal_cdf(zc) - normal_cdf(zs)) / (normal_cdf(zc) - normal_cdf(zf));
    const double core = (1.0 - c.p_ckd_base) * untruncated + c.p_ckd_base * shifted;
    const double tail = std::clamp((c.tail_hi - threshold) / (c.tail_hi - c.tail_lo), 0.0, 1.0);
    return c.tail_weight * tail + (1.0 - c.tail_weight) * core;
}

double tail_weight_for_prevalence(const SynthConfig& config, double target) {
    SynthConfig probe = config;
    probe.tail_weight = 0.0;
    const double core = expected_prevalence(probe);
    probe.tail_weight = 1.0;
    const double tail = expected_prevalence(probe);
    if (!(tail > core)) throw ParameterError("synth: tail does not raise prevalence");
    const double w = (target - core) / (tail - core);
    if (w < 0.0 || w > 1.0) throw ParameterError(fmt::format("synth: prevalence {} unattainable", target));
    return w;
}

namespace {

constexpr std::array<const char*, 7> kCkdTexts = {
    "Chronic kidney disease stage 3", "Chronic renal insufficiency", "chronic renal failure",
    "End-stage renal disease",        "End-stage kidney disease on hemodialysis", "Uraemia",
    "CKD stage 4"};
constexpr std::array<const char*, 5> kHfTexts = {"Congestive heart failure", "Heart failure with reduced ejection fraction",
                                                 "Left heart failure", "HFpEF", "Biventricular heart failure"};

constexpr std::array<std::array<double, 6>, 4> kExemplarCourses = {{
    {4.2, 4.6, 5.0, 5.5, 6.1, 6.8},  // rise
    {4.3, 4.5, 6.5, 6.9, 5.0, 4.4},  // episode with recovery
    {4.3, 5.9, 4.5, 6.2, 4.4, 6.0},  // fluctuation
    {6.8, 6.2, 5.7, 5.1, 4.6, 4.2},  // decline
}};
constexpr std::array<const char*, 4> kExemplarNames = {"rise", "episode_recovery", "fluctuation", "decline"};

double draw_potassium(const SynthConfig& c, Rng& rng, bool& from_tail) {
    from_tail = rng.bernoulli(c.tail_weight);
    if (from_tail) return round2(rng.uniform(c.tail_lo, c.tail_hi));
    while (true) {
        const double k = rng.normal(c.k_mean, c.k_sd);
        if (k >= c.k_floor && k <= c.k_ceiling) return round2(k);
    }
}

Timestamp add_seconds(Timestamp t, double seconds) {
    return t + std::chrono::seconds(static_cast<long long>(std::floor(seconds)));
}

Timestamp random_time_of_day(std::chrono::sys_days day, Rng& rng) {
    // 08:00 to 20:00
    return Timestamp{day} + std::chrono::seconds(8 * 3600 + static_cast<long long>(rng.below(12 * 3600)));
}

BeatTemplate patient_beat(const SynthConfig& c, Rng& rng) {
    BeatTemplate b = BeatTemplate::physiological();
    for (auto& w : b.waves) {
        w.amplitude_mv *= std::exp(rng.normal(0.0, c.morphology_variability));
        w.width_s *= std::exp(rng.normal(0.0, c.morphology_variability));
    }
    b[Wave::T].amplitude_mv *= std::exp(rng.normal(0.0, c.t_amp_variability));
    return b;
}

}  // namespace

CohortPlan plan_cohort(const SynthConfig& config) {
    using namespace std::chrono;
    config.validate();
    CohortPlan plan;
    plan.config = config;

    const auto start_day = floor<days>(config.study_start);
    const auto span_days = static_cast<std::uint64_t>((floor<days>(config.study_end) - start_day).count());
    std::size_t record_counter = 0;
    std::size_t lab_counter = 0;
    const auto next_record_id = [&] { return fmt::format("{}-R{:07d}", config.site, ++record_counter); };
    const auto next_lab_id = [&] { return fmt::format("{}-L{:07d}", config.site, ++lab_counter); };

    const int total = config.n_patients + (config.inject_trajectory_exemplars ? 4 : 0);
    plan.patients.reserve(static_cast<std::size_t>(total));
    for (int i = 0; i < total; ++i) {
        Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(i)));
        PlannedPatient p;
        p.patient_id = fmt::format("{}-P{:06d}", config.site, i + 1);

        const bool exemplar = i >= config.n_patients;
        if (exemplar) {
            p.kind = PatientKind::Exemplar;
            p.exemplar_pattern = kExemplarNames[static_cast<std::size_t>(i - config.n_patients)];
        } else {
            const double u = rng.uniform();
            if (u < config.no_ecg_fraction) {
                p.kind = PatientKind::NoEcg;
            } else if (u < config.no_ecg_fraction + config.unpairable_fraction) {
                p.kind = PatientKind::Unpairable;
            } else if (u < config.no_ecg_fraction + config.unpairable_fraction + config.poor_quality_fraction) {
                p.kind = PatientKind::PoorQuality;
            }
        }
        p.age_years = std::floor(rng.uniform(config.age_min, config.age_max + 1.0));
        p.sex = rng.bernoulli(config.male_fraction) ? 'M' : 'F';
        p.beat = patient_beat(config, rng);
        const double hr = rng.uniform(config.hr_min_bpm, config.hr_max_bpm);

        const int n_recs =
            exemplar ? 6
                     : config.min_pairs_per_patient +
                           static_cast<int>(rng.below(static_cast<std::uint64_t>(
                               config.max_pairs_per_patient - config.min_pairs_per_patient + 1)));

        if (p.kind == PatientKind::NoEcg) {
            for (int j = 0; j < n_recs; ++j) {
                const auto day = start_day + days{static_cast<long>(rng.below(span_days + 1))};
                bool tail = false;
                const double k = draw_potassium(config, rng, tail);
                p.labs.push_back({next_lab_id(), random_time_of_day(day, rng), k, false});
            }
        } else {
            // Potassium and comorbidities are drawn before the recordings;
            // CKD patients carry a raised core level.
            std::vector<double> ks(static_cast<std::size_t>(n_recs));
            std::vector<bool> tails(ks.size());
            for (std::size_t j = 0; j < ks.size(); ++j) {
                bool tail = false;
                ks[j] = draw_potassium(config, rng, tail);
                if (exemplar) {
                    ks[j] = kExemplarCourses[static_cast<std::size_t>(i - config.n_patients)][j];
                    tail = ks[j] > config.tail_lo;
                }
                tails[j] = tail;
                p.any_tail_draw = p.any_tail_draw || tail;
            }
            p.ckd = rng.bernoulli(p.any_tail_draw ? config.p_ckd_tail : config.p_ckd_base);
            p.heart_failure = rng.bernoulli(p.any_tail_draw ? config.p_hf_tail : config.p_hf_base);
            if (p.ckd && !exemplar) {
                for (std::size_t j = 0; j < ks.size(); ++j) {
                    if (!tails[j]) ks[j] = round2(std::min(ks[j] + config.ckd_k_shift, config.k_ceiling));
                }
            }
            sys_days day = exemplar ? floor<days>(config.exemplar_start)
                                    : start_day + days{static_cast<long>(rng.below(span_days + 1))};
            for (int j = 0; j < n_recs; ++j) {
                if (j > 0) {
                    day += days{exemplar ? 30L
                                         : 2L + static_cast<long>(rng.below(
                                                    static_cast<std::uint64_t>(config.max_pair_spacing_days) - 1))};
                }
                PlannedRecording rec;
                rec.record_id = next_record_id();
                rec.timestamp = random_time_of_day(day, rng);
                rec.true_k = ks[static_cast<std::size_t>(j)];
                rec.heart_rate_bpm = hr * rng.uniform(0.95, 1.05);
                rec.seed = rng.next_u64();

                const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
                if (p.kind == PatientKind::Unpairable) {
                    p.labs.push_back({next_lab_id(), add_seconds(rec.timestamp, sign * rng.uniform(65.0, 300.0) * 60.0),
                                      rec.true_k, false});
                } else {
                    // Offsets stay strictly inside (0, 60) minutes.
                    const double offset_min = (1.0 + static_cast<double>(rng.below(3599))) / 60.0;
                    p.labs.push_back(
                        {next_lab_id(), add_seconds(rec.timestamp, sign * offset_min * 60.0), rec.true_k, false});
                    if (rng.bernoulli(config.hemolysed_lab_rate)) {
                        const double closer = rng.uniform(0.0, offset_min);
                        p.labs.push_back({next_lab_id(),
                                          add_seconds(rec.timestamp, (rng.bernoulli(0.5) ? 1.0 : -1.0) * closer * 60.0),
                                          round2(rec.true_k + rng.uniform(0.5, 2.0)), true});
                    }
                }
                if (rng.bernoulli(config.stray_lab_rate)) {
                    bool stray_tail = false;
                    const double k = draw_potassium(config, rng, stray_tail);
                    p.labs.push_back({next_lab_id(),
                                      add_seconds(rec.timestamp, (rng.bernoulli(0.5) ? 1.0 : -1.0) *
                                                                     rng.uniform(2.0, 12.0) * 3600.0),
                                      k, false});
                }
                p.recordings.push_back(rec);
            }
        }

        // Diagnoses: true comorbidities precede the study window; the
        // post-index CKD distractor follows it.
        const auto before_study = [&] {
            return random_time_of_day(start_day - days{30 + static_cast<long>(rng.below(2000))}, rng);
        };
        if (p.kind == PatientKind::NoEcg) {
            p.ckd = rng.bernoulli(config.p_ckd_base);
            p.heart_failure = rng.bernoulli(config.p_hf_base);
        }
        if (p.ckd) p.diagnoses.push_back({before_study(), kCkdTexts[rng.below(kCkdTexts.size())]});
        if (p.heart_failure) p.diagnoses.push_back({before_study(), kHfTexts[rng.below(kHfTexts.size())]});
        if (rng.bernoulli(config.p_hypertension)) p.diagnoses.push_back({before_study(), "Essential hypertension"});
        if (rng.bernoulli(config.p_diabetes)) p.diagnoses.push_back({before_study(), "Type 2 diabetes mellitus"});
        if (rng.bernoulli(config.p_cad)) p.diagnoses.push_back({before_study(), "Coronary artery disease"});
        if (rng.bernoulli(config.p_stroke)) p.diagnoses.push_back({before_study(), "Ischemic stroke"});
        if (rng.bernoulli(config.p_nonchronic_renal)) p.diagnoses.push_back({before_study(), "Renal insufficiency"});
        if (!p.ckd && rng.bernoulli(config.p_post_index_ckd)) {
            const Timestamp last = p.recordings.empty() ? config.study_end
                                                         : std::max(config.study_end, p.recordings.back().timestamp);
            p.diagnoses.push_back({last + days{30 + static_cast<long>(rng.below(300))}, "Chronic kidney disease stage 5"});
        }
        std::stable_sort(p.diagnoses.begin(), p.diagnoses.end(),
                         [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
        plan.patients.push_back(std::move(p));
    }
    return plan;
}

Waveform render_recording(const PlannedPatient& patient, const PlannedRecording& rec, const SynthConfig& config) {
    Rng rng(rec.seed);
    BeatTemplate beat = patient.beat;
    beat.rr_interval_s = 60.0 / rec.heart_rate_bpm;
    beat = apply_potassium(beat, config.kmap, rec.true_k);
    const double fs = config.fs_hz;
    BeatTrain train = generate_beat_train(beat, fs, config.duration_s, config.rr_jitter, rng);
    add_noise(train.samples, fs, config.noise, rng);

    Waveform wf;
    wf.fs_hz = config.fs_hz;
    wf.samples.resize(train.samples.size());
    if (patient.kind == PatientKind::PoorQuality) {
        // Alternate flat-line and saturated (clipped) recordings.
        const bool flat = (rec.record_id.back() - '0') % 2 == 0;
        for (std::size_t k = 0; k < train.samples.size(); ++k) {
            wf.samples[k] = flat ? 0.0f : static_cast<float>(std::clamp(20.0 * train.samples[k], -1.5, 1.5));
        }
        return wf;
    }
    std::transform(train.samples.begin(), train.samples.end(), wf.samples.begin(),
                   [](double v) { return static_cast<float>(v); });
    return wf;
}

namespace {

const char* kind_name(PatientKind k) {
    switch (k) {
        case PatientKind::Regular: return "regular";
        case PatientKind::NoEcg: return "no_ecg";
        case PatientKind::Unpairable: return "unpairable";
        case PatientKind::PoorQuality: return "poor_quality";
        case PatientKind::Exemplar: return "exemplar";
    }
    return "unknown";
}

}  // namespace

CohortManifest generate_cohort(const SynthConfig& config, const std::filesystem::path& out_dir) {
    const CohortPlan plan = plan_cohort(config);
    std::filesystem::create_directories(out_dir / "waveforms");

    CohortManifest manifest;
    manifest.root = out_dir;
    manifest.screened_patients = plan.patients.size();

    std::string manifest_csv = "record_id,patient_id,timestamp,fs_hz,n_samples,file_path,true_k\n";
    std::string labs_csv = "lab_id,patient_id,timestamp,potassium_mmol_l,hemolysed\n";
    std::string diag_csv = "patient_id,timestamp,diagnosis_text\n";
    std::string demo_csv = "patient_id,age_years,sex\n";
    nlohmann::json patients_json = nlohmann::json::array();

    for (const auto& p : plan.patients) {
        switch (p.kind) {
            case PatientKind::NoEcg: ++manifest.injected_no_ecg; break;
            case PatientKind::Unpairable: ++manifest.injected_unpairable; break;
            case PatientKind::PoorQuality: ++manifest.injected_poor_quality; break;
            case PatientKind::Exemplar: manifest.exemplars.emplace_back(p.exemplar_pattern, p.patient_id); break;
            case PatientKind::Regular: break;
        }
        demo_csv += fmt::format("{},{:.0f},{}\n", p.patient_id, p.age_years, p.sex);
        for (const auto& rec : p.recordings) {
            const Waveform wf = render_recording(p, rec, config);
            const std::string rel = "waveforms/" + rec.record_id + ".pkecg";
            write_waveform_file(out_dir / rel, wf);
            manifest_csv += fmt::format("{},{},{},{},{},{},{:.2f}\n", rec.record_id, p.patient_id,
                                        format_rfc3339(rec.timestamp), wf.fs_hz, wf.samples.size(), rel, rec.true_k);
            ++manifest.recordings;
        }
        for (const auto& lab : p.labs) {
            labs_csv += fmt::format("{},{},{},{:.2f},{}\n", lab.lab_id, p.patient_id, format_rfc3339(lab.timestamp),
                                    lab.potassium, lab.hemolysed ? 1 : 0);
            ++manifest.labs;
        }
        for (const auto& d : p.diagnoses) {
            diag_csv += fmt::format("{},{},{}\n", p.patient_id, format_rfc3339(d.timestamp), d.text);
        }
        patients_json.push_back({{"patient_id", p.patient_id},
                                 {"kind", kind_name(p.kind)},
                                 {"ckd", p.ckd},
                                 {"heart_failure", p.heart_failure}});
    }

    write_text_file(out_dir / "manifest.csv", manifest_csv);
    write_text_file(out_dir / "labs.csv", labs_csv);
    write_text_file(out_dir / "diagnoses.csv", diag_csv);
    write_text_file(out_dir / "demographics.csv", demo_csv);

    nlohmann::json summary;
    summary["artifact_version"] = std::string(kArtifactVersion);
    summary["site"] = config.site;
    summary["seed"] = config.seed;
    summary["fs_hz"] = config.fs_hz;
    summary["screened_patients"] = manifest.screened_patients;
    summary["recordings"] = manifest.recordings;
    summary["labs"] = manifest.labs;
    summary["injected"] = {{"no_ecg", manifest.injected_no_ecg},
                           {"unpairable", manifest.injected_unpairable},
                           {"poor_quality", manifest.injected_poor_quality}};
    nlohmann::json ex = nlohmann::json::object();
    for (const auto& [pattern, id] : manifest.exemplars) ex[pattern] = id;
    summary["exemplars"] = ex;
    summary["patients"] = patients_json;
    write_text_file(out_dir / "cohort.json", summary.dump(2) + "\n");
    return manifest;
}

}  // namespace pocketk::synth

#include "pocketk/study.hpp"

#include "pocketk/dsp.hpp"
#include "pocketk/longitudinal.hpp"
#include "pocketk/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fmt/format.h>
#include <json.hpp>
#include <set>

namespace pocketk::study {

namespace fs = std::filesystem;
using ingest::Partition;

// ---------------------------------------------------------------------------
// RunConfig
// ---------------------------------------------------------------------------

namespace {

struct KeyDoc {
    const char* key;
    const char* doc;
};

// Canonical order; path keys are excluded from the hash.
constexpr KeyDoc kKeys[] = {
    {"data_dir", "cohort root; overridden by $POCKETK_DATA_DIR, then --data-dir"},
    {"out_dir", "run directory for every stage output"},
    {"seed", "master seed; synth, split, train and bootstrap seeds derive from it"},
    {"dev_patients", "development-site patients (plus four trajectory exemplars)"},
    {"dev_fs_hz", "development-site sampling rate"},
    {"dev_start", "development-site first ECG date"},
    {"dev_end", "development-site last ECG date"},
    {"external_patients", "external-site patients"},
    {"external_fs_hz", "external-site sampling rate"},
    {"external_start", "external-site first ECG date"},
    {"external_end", "external-site last ECG date"},
    {"target_prevalence", "expected fraction of draws with K > 5.5"},
    {"recording_seconds", "cohort recording length"},
    {"window_minutes", "ECG-anchored pairing window, +/- minutes"},
    {"cutoff", "chronological split: development before, temporal validation from"},
    {"split_finetune", "patient fraction for fine-tuning"},
    {"split_model_selection", "patient fraction for model selection; the rest is internal test"},
    {"profile", "training profile: compact (lr 1e-2, 200 epochs) or reference (lr 1e-4, 30 epochs)"},
    {"endpoints", "endpoints joined by +: primary (K > 5.5), severe (K >= 6.0)"},
    {"bootstrap_resamples", "patient-clustered bootstrap resamples"},
    {"threshold_policy", "frozen threshold rule on model selection: youden"},
};

bool is_path_key(std::string_view key) {
    return key == "data_dir" || key == "out_dir";
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

int parse_positive_int(std::string_view v, std::string_view key) {
    const auto x = parse_int(v, key);
    if (x < 1 || x > 100'000'000) throw ParseError(std::string(key), "must be a positive integer");
    return static_cast<int>(x);
}

std::string endpoints_text(const std::vector<eval::Endpoint>& eps) {
    std::string out;
    for (const auto e : eps) {
        if (!out.empty()) out += "+";
        out += eval::endpoint_name(e);
    }
    return out;
}

}  // namespace

RunConfig RunConfig::defaults() {
    RunConfig c;
    if (const char* env = std::getenv(kDataDirEnv); env != nullptr && *env != '\0') c.data_dir = env;
    return c;
}

void RunConfig::set(std::string_view key, std::string_view value) {
    const std::string k(key);
    const std::string v = trim(value);
    try {
        if (k == "data_dir") data_dir = v;
        else if (k == "out_dir") out_dir = v;
        else if (k == "seed") seed = static_cast<std::uint64_t>(parse_int(v, k));
        else if (k == "dev_patients") dev_patients = parse_positive_int(v, k);
        else if (k == "dev_fs_hz") dev_fs_hz = static_cast<std::uint32_t>(parse_positive_int(v, k));
        else if (k == "dev_start") dev_start = parse_rfc3339(v);
        else if (k == "dev_end") dev_end = parse_rfc3339(v);
        else if (k == "external_patients") external_patients = parse_positive_int(v, k);
        else if (k == "external_fs_hz") external_fs_hz = static_cast<std::uint32_t>(parse_positive_int(v, k));
        else if (k == "external_start") external_start = parse_rfc3339(v);
        else if (k == "external_end") external_end = parse_rfc3339(v);
        else if (k == "target_prevalence") target_prevalence = parse_double(v, k);
        else if (k == "recording_seconds") recording_seconds = parse_double(v, k);
        else if (k == "window_minutes") window_minutes = parse_double(v, k);
        else if (k == "cutoff") cutoff = parse_rfc3339(v);
        else if (k == "split_finetune") split_finetune = parse_double(v, k);
        else if (k == "split_model_selection") split_model_selection = parse_double(v, k);
        else if (k == "profile") profile = v;
        else if (k == "endpoints") {
            endpoints.clear();
            std::size_t start = 0;
            while (start <= v.size()) {
                const auto plus = v.find('+', start);
                const auto part = trim(std::string_view(v).substr(start, plus == std::string::npos ? std::string::npos
                                                                                                   : plus - start));
                endpoints.push_back(eval::parse_endpoint(part));
                if (plus == std::string::npos) break;
                start = plus + 1;
            }
        } else if (k == "bootstrap_resamples") bootstrap_resamples = parse_positive_int(v, k);
        else if (k == "threshold_policy") threshold_policy = v;
        else throw ParseError(k, "unknown configuration key");
    } catch (const ParseError& e) {
        if (e.field() == k) throw;
        throw ParseError(k, e.what());
    } catch (const ParameterError& e) {
        throw ParseError(k, e.what());
    }
}

void RunConfig::validate() const {
    if (!(target_prevalence > 0.0 && target_prevalence < 0.5)) {
        throw ParameterError("target_prevalence must lie in (0, 0.5)");
    }
    if (!(recording_seconds >= dsp::kClipSeconds)) throw ParameterError("recording_seconds must be >= 10");
    if (!(window_minutes >= 0.0)) throw ParameterError("window_minutes must be >= 0");
    if (!(split_finetune > 0.0 && split_model_selection > 0.0 && split_finetune + split_model_selection < 1.0)) {
        throw ParameterError("split fractions must be positive and sum below 1");
    }
    model::TrainConfig::for_profile(profile);
    if (threshold_policy != "youden") throw ParameterError("threshold_policy: only 'youden' is implemented");
    if (endpoints.empty()) throw ParameterError("endpoints: at least one endpoint is required");
    if (!(dev_start < dev_end) || !(external_start < external_end)) {
        throw ParameterError("cohort start dates must precede end dates");
    }
}

RunConfig RunConfig::parse(std::string_view text, RunConfig base) {
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        const auto raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        ++line_no;
        const auto line = trim(raw);
        if (!line.empty() && line.front() != '#') {
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                throw ParseError("config", fmt::format("line {}: expected 'key = value'", line_no));
            }
            base.set(trim(std::string_view(line).substr(0, eq)), std::string_view(line).substr(eq + 1));
        }
        if (nl == std::string_view::npos) break;
        pos = nl + 1;
    }
    base.validate();
    return base;
}

RunConfig RunConfig::load(const fs::path& path, RunConfig base) {
    if (!fs::exists(path)) throw IoError("config file not found: " + path.string());
    return parse(read_text_file(path), std::move(base));
}

std::string RunConfig::to_text(bool annotate) const {
    const std::map<std::string, std::string> values = {
        {"data_dir", data_dir.string()},
        {"out_dir", out_dir.string()},
        {"seed", std::to_string(seed)},
        {"dev_patients", std::to_string(dev_patients)},
        {"dev_fs_hz", std::to_string(dev_fs_hz)},
        {"dev_start", format_rfc3339(dev_start)},
        {"dev_end", format_rfc3339(dev_end)},
        {"external_patients", std::to_string(external_patients)},
        {"external_fs_hz", std::to_string(external_fs_hz)},
        {"external_start", format_rfc3339(external_start)},
        {"external_end", format_rfc3339(external_end)},
        {"target_prevalence", format_double(target_prevalence)},
        {"recording_seconds", format_double(recording_seconds)},
        {"window_minutes", format_double(window_minutes)},
        {"cutoff", format_rfc3339(cutoff)},
        {"split_finetune", format_double(split_finetune)},
        {"split_model_selection", format_double(split_model_selection)},
        {"profile", profile},
        {"endpoints", endpoints_text(endpoints)},
        {"bootstrap_resamples", std::to_string(bootstrap_resamples)},
        {"threshold_policy", threshold_policy},
    };
    std::string out;
    for (const auto& [key, doc] : kKeys) {
        if (annotate) out += fmt::format("# {}\n", doc);
        out += fmt::format("{} = {}\n", key, values.at(key));
    }
    return out;
}

std::string RunConfig::hash() const {
    std::string canonical;
    std::size_t pos = 0;
    const std::string text = to_text(false);
    while (pos < text.size()) {
        const auto nl = text.find('\n', pos);
        const std::string line = text.substr(pos, nl - pos + 1);
        if (!is_path_key(trim(line.substr(0, line.find('='))))) canonical += line;
        pos = nl + 1;
    }
    return fnv1a_hex(canonical);
}

std::uint64_t RunConfig::synth_seed(std::string_view site) const {
    return derive_seed(seed, site == "dev" ? 1 : 2);
}
std::uint64_t RunConfig::split_seed() const { return derive_seed(seed, 3); }
std::uint64_t RunConfig::train_seed() const { return derive_seed(seed, 4); }
std::uint64_t RunConfig::bootstrap_seed() const { return derive_seed(seed, 5); }

synth::SynthConfig RunConfig::synth_config(std::string_view site) const {
    synth::SynthConfig c;
    c.site = std::string(site);
    c.seed = synth_seed(site);
    c.duration_s = recording_seconds;
    if (site == "dev") {
        c.n_patients = dev_patients;
        c.fs_hz = dev_fs_hz;
        c.study_start = dev_start;
        c.study_end = dev_end;
    } else if (site == "external") {
        c.n_patients = external_patients;
        c.fs_hz = external_fs_hz;
        c.study_start = external_start;
        c.study_end = external_end;
        c.inject_trajectory_exemplars = false;
    } else {
        throw ParameterError("unknown site '" + std::string(site) + "'");
    }
    c.tail_weight = synth::tail_weight_for_prevalence(c, target_prevalence);
    return c;
}

std::string RunConfig::csv_provenance(std::string_view stage) const {
    return fmt::format("pocketk {} config_hash={} seed={} stage={}", kArtifactVersion, hash(), seed, stage);
}

std::string RunConfig::json_provenance(std::string_view stage) const {
    nlohmann::ordered_json j;
    j["artifact_version"] = std::string(kArtifactVersion);
    j["config_hash"] = hash();
    j["seed"] = seed;
    j["seeds"] = {{"synth_dev", synth_seed("dev")},
                  {"synth_external", synth_seed("external")},
                  {"split", split_seed()},
                  {"train", train_seed()},
                  {"bootstrap", bootstrap_seed()}};
    j["stage"] = std::string(stage);
    return j.dump();
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

std::string partition_file_stem(Partition p) {
    std::string s(ingest::partition_name(p));
    std::replace(s.begin(), s.end(), ':', '_');
    return s;
}

std::size_t risk_bin(double k) {
    if (k < 5.0) return 0;
    if (k <= 5.5) return 1;
    if (k < 6.0) return 2;
    return 3;
}

WaveWindow t_wave_window() {
    const auto t = synth::BeatTemplate::physiological()[synth::Wave::T];
    return {t.center_s - 2.0 * t.width_s, t.center_s + 2.0 * t.width_s};
}

namespace {

constexpr Partition kEvaluated[] = {Partition::InternalTest, Partition::TemporalValidation,
                                    Partition::ExternalValidation};

fs::path require(const fs::path& p, std::string_view producer) {
    if (!fs::exists(p)) {
        throw PrerequisiteError(fmt::format("missing {}; run `pocketk {}` first", p.string(), producer));
    }
    return p;
}

std::string features_header() {
    std::string h = "record_id,patient_id,clip_index,ecg_timestamp,potassium";
    for (const auto name : model::kFeatureNames) h += fmt::format(",{}", name);
    return h + "\n";
}

std::string feature_row(const ClipFeatures& c) {
    std::string row = fmt::format("{},{},{},{},{}", c.record_id, c.patient_id, c.clip_index,
                                  format_rfc3339(c.ecg_timestamp), format_double(c.potassium));
    for (const double v : c.features) row += "," + format_double(v);
    return row + "\n";
}

std::string sanitize(std::string s) {
    std::replace(s.begin(), s.end(), ',', ';');
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

std::string json_with_provenance(nlohmann::ordered_json j, const RunConfig& cfg, std::string_view stage) {
    j["provenance"] = nlohmann::ordered_json::parse(cfg.json_provenance(stage));
    return j.dump(2) + "\n";
}

nlohmann::ordered_json stard_json(const ingest::StardReport& r, bool partitions_assigned) {
    nlohmann::ordered_json j;
    j["site"] = r.site;
    j["screened_patients"] = r.screened;
    j["excluded_no_ecg"] = r.excluded_no_ecg;
    j["excluded_no_eligible_lab"] = r.excluded_no_eligible_lab;
    j["excluded_poor_quality"] = r.excluded_poor_quality;
    j["retained_patients"] = r.retained_patients;
    j["retained_pairs"] = r.retained_pairs;
    j["poor_quality_pairs"] = r.poor_quality_pairs;
    j["partitions_assigned"] = partitions_assigned;
    if (partitions_assigned) {
        j["dropped_pairs_after_cutoff"] = r.dropped_pairs_after_cutoff;
        nlohmann::ordered_json parts = nlohmann::ordered_json::array();
        for (const auto& p : r.partitions) {
            parts.push_back({{"partition", p.partition}, {"patients", p.patients}, {"pairs", p.pairs}});
        }
        j["partitions"] = parts;
        j["reconciles"] = r.reconciles();
    }
    return j;
}

std::set<std::string> read_poor_quality(const fs::path& path) {
    const auto t = CsvTable::read(path);
    const auto c_rec = t.column("record_id"), c_status = t.column("status");
    std::set<std::string> poor;
    for (std::size_t i = 0; i < t.rows(); ++i) {
        if (t.at(i, c_status) != "ok") poor.insert(t.at(i, c_rec));
    }
    return poor;
}

/// Record-level scores: mean of clip probabilities per record.
std::vector<eval::ScoredRow> score_records(const model::ModelWeights& w, std::span<const ClipFeatures> clips,
                                           const std::string& partition) {
    std::vector<eval::ScoredRow> rows;
    std::map<std::string, std::size_t> slot;
    std::vector<std::vector<double>> probs;
    for (const auto& c : clips) {
        const auto [it, fresh] = slot.try_emplace(c.record_id, rows.size());
        if (fresh) {
            rows.push_back({eval::make_scored_pair(c.record_id, c.patient_id, 0.0, c.potassium), partition,
                            c.ecg_timestamp});
            probs.emplace_back();
        }
        probs[it->second].push_back(model::predict_proba(w, c.features));
    }
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i].pair.score = model::aggregate_risk(probs[i]);
    return rows;
}

std::vector<model::LabeledSample> labeled(std::span<const ClipFeatures> clips) {
    std::vector<model::LabeledSample> out;
    out.reserve(clips.size());
    for (const auto& c : clips) out.push_back({c.record_id, c.features, ingest::primary_label(c.potassium)});
    return out;
}

}  // namespace

std::vector<ClipFeatures> read_clip_features(const fs::path& path) {
    const auto t = CsvTable::read(path);
    const auto c_rec = t.column("record_id"), c_pat = t.column("patient_id"), c_idx = t.column("clip_index"),
               c_ts = t.column("ecg_timestamp"), c_k = t.column("potassium");
    std::array<std::size_t, model::kNumFeatures> c_f{};
    for (std::size_t j = 0; j < model::kNumFeatures; ++j) c_f[j] = t.column(model::kFeatureNames[j]);
    std::vector<ClipFeatures> out;
    out.reserve(t.rows());
    for (std::size_t i = 0; i < t.rows(); ++i) {
        ClipFeatures c;
        c.record_id = t.at(i, c_rec);
        c.patient_id = t.at(i, c_pat);
        c.clip_index = static_cast<std::size_t>(parse_int(t.at(i, c_idx), "clip_index"));
        c.ecg_timestamp = parse_rfc3339(t.at(i, c_ts));
        c.potassium = parse_double(t.at(i, c_k), "potassium");
        for (std::size_t j = 0; j < model::kNumFeatures; ++j) {
            c.features[j] = parse_double(t.at(i, c_f[j]), model::kFeatureNames[j]);
        }
        out.push_back(std::move(c));
    }
    return out;
}

Waveform synthesize_device_recording(double k, std::uint64_t seed, std::uint32_t fs_hz, double seconds) {
    Rng rng(seed);
    synth::BeatTemplate beat = synth::BeatTemplate::physiological();
    beat.rr_interval_s = 60.0 / 72.0;
    beat = synth::apply_potassium(beat, synth::PotassiumMorphologyMap{}, k);
    auto train = synth::generate_beat_train(beat, fs_hz, seconds, 0.05, rng);
    synth::add_noise(train.samples, fs_hz, synth::NoiseConfig{}, rng);
    Waveform wf;
    wf.fs_hz = fs_hz;
    wf.samples.assign(train.samples.begin(), train.samples.end());
    return wf;
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

StageLog run_synth(const RunConfig& cfg) {
    cfg.validate();
    StageLog log;
    for (const auto& site : cfg.sites()) {
        const auto sc = cfg.synth_config(site);
        const auto m = synth::generate_cohort(sc, cfg.data_dir / site);
        log.push_back(fmt::format("{}: {} patients screened, {} recordings, {} labs, expected prevalence {:.3f}", site,
                                  m.screened_patients, m.recordings, m.labs, synth::expected_prevalence(sc)));
    }
    const auto demo_seed = derive_seed(cfg.seed, 6);
    for (const double k : {4.1, 6.9}) {
        const auto path = cfg.data_dir / "device" / fmt::format("demo_k{:.1f}.pkecg", k);
        write_waveform_file(path, synthesize_device_recording(k, derive_seed(demo_seed, k > 5.0 ? 1 : 0)));
        log.push_back(fmt::format("device demo recording {}", path.string()));
    }
    return log;
}

StageLog run_pair(const RunConfig& cfg) {
    cfg.validate();
    StageLog log;
    for (const auto& site : cfg.sites()) {
        const fs::path root = cfg.data_dir / site;
        require(root / "manifest.csv", "synth");
        const auto cohort = ingest::load_cohort(root);
        const auto paired = ingest::pair_ecg_to_lab(cohort.recordings, cohort.labs, cfg.window_minutes);

        std::map<std::string, const ingest::Recording*> by_id;
        for (const auto& r : cohort.recordings) by_id[r.record_id] = &r;

        std::string features = features_header();
        std::string quality = "record_id,patient_id,clips_segmented,clips_usable,status,notes\n";
        std::set<std::string> poor;
        for (const auto& p : paired.pairs) {
            const auto* rec = by_id.at(p.record_id);
            std::size_t segmented = 0, usable = 0;
            std::vector<std::string> notes;
            try {
                const auto wf = read_waveform_file(root / rec->file_path);
                const std::vector<double> raw(wf.samples.begin(), wf.samples.end());
                auto pre = dsp::preprocess(raw, wf.fs_hz, p.record_id);
                segmented = pre.segments;
                notes = std::move(pre.notices);
                for (const auto& clip : pre.clips) {
                    try {
                        const auto f = model::extract_features(clip.samples, clip.fs);
                        features += feature_row(
                            {p.record_id, p.patient_id, clip.index, p.ecg_timestamp, p.potassium, f.as_array()});
                        ++usable;
                    } catch (const QualityError& e) {
                        notes.push_back(fmt::format("clip {}: {}", clip.index, e.what()));
                    }
                }
            } catch (const Error& e) {
                notes.push_back(e.what());
            }
            const bool ok = usable > 0;
            if (!ok) poor.insert(p.record_id);
            std::string joined;
            for (const auto& n : notes) joined += (joined.empty() ? "" : " | ") + sanitize(n);
            quality += fmt::format("{},{},{},{},{},{}\n", p.record_id, p.patient_id, segmented, usable,
                                   ok ? "ok" : "poor_quality", joined);
        }
        const auto prov = cfg.csv_provenance("pair");
        write_text_file(cfg.out_dir / fmt::format("pairs_{}.csv", site),
                        ingest::pairs_to_csv(paired.pairs, {}, prov));
        write_text_file(cfg.out_dir / fmt::format("clip_features_{}.csv", site), "# " + prov + "\n" + features);
        write_text_file(cfg.out_dir / fmt::format("quality_{}.csv", site), "# " + prov + "\n" + quality);

        ingest::StardInputs in;
        in.site = site;
        in.screened_patients = cohort.screened_patients();
        in.recordings = cohort.recordings;
        in.pairs = paired.pairs;
        in.poor_quality_records = poor;
        const auto stard = ingest::stard_accounting(in);
        auto j = stard_json(stard, false);
        j["window_minutes"] = cfg.window_minutes;
        j["ecgs"] = paired.tallies.ecgs;
        j["ecgs_paired"] = paired.tallies.paired;
        j["ecgs_without_eligible_lab"] = paired.tallies.excluded_no_eligible_lab;
        j["hemolysed_labs_excluded"] = paired.tallies.hemolysed_labs;
        j["rejected_input_rows"] = cohort.rejected_rows;
        write_text_file(cfg.out_dir / fmt::format("stard_{}.json", site), json_with_provenance(j, cfg, "pair"));
        log.push_back(fmt::format("{}: {} ECGs, {} paired, {} without an eligible lab, {} poor quality", site,
                                  paired.tallies.ecgs, paired.tallies.paired,
                                  paired.tallies.excluded_no_eligible_lab, poor.size()));
    }
    return log;
}

StageLog run_split(const RunConfig& cfg) {
    cfg.validate();
    StageLog log;
    std::map<std::string, Partition> partition_of;  // record_id -> partition, all sites
    std::vector<ingest::EcgPotassiumPair> all_pairs;
    std::map<Partition, std::string> feature_text;
    std::vector<ingest::Demographic> demographics;
    std::vector<ingest::Diagnosis> diagnoses;
    nlohmann::ordered_json stard_all = nlohmann::ordered_json::array();
    std::string stard_csv = "site,screened,excluded_no_ecg,excluded_no_eligible_lab,excluded_poor_quality,"
                            "retained_patients,retained_pairs,dropped_pairs_after_cutoff,reconciles\n";

    for (const auto& site : cfg.sites()) {
        const auto pairs_in =
            ingest::read_pairs_csv(require(cfg.out_dir / fmt::format("pairs_{}.csv", site), "pair"));
        const auto poor = read_poor_quality(require(cfg.out_dir / fmt::format("quality_{}.csv", site), "pair"));
        std::vector<ingest::EcgPotassiumPair> pairs, good;
        for (const auto& p : pairs_in) {
            pairs.push_back(p.pair);
            if (poor.count(p.pair.record_id) == 0) good.push_back(p.pair);
        }

        std::map<std::string, Partition> site_partition;
        if (site == "dev") {
            const auto chrono = ingest::chronological_split(good, cfg.cutoff);
            std::vector<std::string> dev_patients;
            for (const auto& p : chrono.development) dev_patients.push_back(p.patient_id);
            const auto assign = ingest::patient_split_811(dev_patients, cfg.split_seed(),
                                                          {cfg.split_finetune, cfg.split_model_selection});
            for (const auto& p : chrono.development) site_partition[p.record_id] = assign.at(p.patient_id);
            for (const auto& p : chrono.temporal) site_partition[p.record_id] = Partition::TemporalValidation;
        } else {
            for (const auto& p : good) site_partition[p.record_id] = Partition::ExternalValidation;
        }

        const auto cohort = ingest::load_cohort(cfg.data_dir / site);
        ingest::StardInputs in;
        in.site = site;
        in.screened_patients = cohort.screened_patients();
        in.recordings = cohort.recordings;
        in.pairs = pairs;
        in.poor_quality_records = poor;
        in.pair_partition = site_partition;
        const auto stard = ingest::stard_accounting(in);
        if (!stard.reconciles()) throw Error("STARD accounting does not reconcile for site " + site);
        auto j = stard_json(stard, true);
        write_text_file(cfg.out_dir / fmt::format("stard_{}.json", site), json_with_provenance(j, cfg, "split"));
        stard_all.push_back(j);
        stard_csv += fmt::format("{},{},{},{},{},{},{},{},{}\n", site, stard.screened, stard.excluded_no_ecg,
                                 stard.excluded_no_eligible_lab, stard.excluded_poor_quality, stard.retained_patients,
                                 stard.retained_pairs, stard.dropped_pairs_after_cutoff, stard.reconciles() ? 1 : 0);

        for (const auto& c : read_clip_features(require(cfg.out_dir / fmt::format("clip_features_{}.csv", site),
                                                        "pair"))) {
            const auto it = site_partition.find(c.record_id);
            if (it != site_partition.end()) feature_text[it->second] += feature_row(c);
        }
        for (const auto& p : pairs) {
            const auto it = site_partition.find(p.record_id);
            partition_of[p.record_id] = it == site_partition.end() ? Partition::Excluded : it->second;
        }
        all_pairs.insert(all_pairs.end(), pairs.begin(), pairs.end());
        demographics.insert(demographics.end(), cohort.demographics.begin(), cohort.demographics.end());
        diagnoses.insert(diagnoses.end(), cohort.diagnoses.begin(), cohort.diagnoses.end());
        for (const auto& pc : stard.partitions) {
            log.push_back(fmt::format("{}: {} {} patients / {} pairs", site, pc.partition, pc.patients, pc.pairs));
        }
        log.push_back(fmt::format("{}: {} pairs dropped after the cutoff; STARD reconciles", site,
                                  stard.dropped_pairs_after_cutoff));
    }

    const auto prov = cfg.csv_provenance("split");
    write_text_file(cfg.out_dir / "partitions.csv", ingest::pairs_to_csv(all_pairs, partition_of, prov));
    write_text_file(cfg.out_dir / "stard.csv", "# " + prov + "\n" + stard_csv);
    for (const Partition p : {Partition::Finetune, Partition::ModelSelection, Partition::InternalTest,
                              Partition::TemporalValidation, Partition::ExternalValidation}) {
        write_text_file(cfg.out_dir / "features" / (partition_file_stem(p) + ".csv"),
                        "# " + prov + "\n" + features_header() + feature_text[p]);
    }

    std::vector<ingest::PartitionData> parts;
    for (const Partition p : {Partition::Finetune, Partition::ModelSelection, Partition::InternalTest,
                              Partition::TemporalValidation, Partition::ExternalValidation}) {
        ingest::PartitionData d{std::string(ingest::partition_name(p)), {}};
        for (const auto& pair : all_pairs) {
            if (partition_of.at(pair.record_id) == p) d.pairs.push_back(pair);
        }
        parts.push_back(std::move(d));
    }
    const auto table = ingest::baseline_table(parts, demographics, ingest::index_diagnoses(diagnoses));
    write_text_file(cfg.out_dir / "baseline.csv", ingest::baseline_to_csv(table, prov));
    for (const auto& w : table.warnings) log.push_back("baseline: " + w);
    return log;
}

StageLog run_train(const RunConfig& cfg) {
    cfg.validate();
    const auto ft = read_clip_features(
        require(cfg.out_dir / "features" / (partition_file_stem(Partition::Finetune) + ".csv"), "split"));
    const auto ms = read_clip_features(
        require(cfg.out_dir / "features" / (partition_file_stem(Partition::ModelSelection) + ".csv"), "split"));
    auto tc = model::TrainConfig::for_profile(cfg.profile);
    tc.seed = cfg.train_seed();
    auto result = model::train(labeled(ft), labeled(ms), tc);
    result.weights.metadata.config_hash = cfg.hash();
    model::save_weights(cfg.out_dir / "weights.json", result.weights, cfg.json_provenance("train"));
    write_text_file(cfg.out_dir / "history.csv", model::history_to_csv(result.history, cfg.csv_provenance("train")));
    const auto& m = result.weights.metadata;
    return {fmt::format("profile {}: {} fine-tune clips, {} model-selection records", m.profile, m.finetune_samples,
                        m.selection_records),
            fmt::format("best model-selection AUROC {:.4f} at epoch {}", m.best_val_auroc, m.best_epoch),
            fmt::format("frozen threshold {:.6f} (sensitivity {:.3f}, specificity {:.3f}{})",
                        result.weights.frozen_threshold, m.selection_sensitivity, m.selection_specificity,
                        m.threshold_degenerate ? ", degenerate" : "")};
}

StageLog run_eval(const RunConfig& cfg) {
    cfg.validate();
    const auto weights = model::load_weights(require(cfg.out_dir / "weights.json", "train"));
    StageLog log;
    std::vector<eval::ScoredRow> all_rows;
    std::vector<eval::EvalReport> reports;
    std::string bins = "set,bin,n_pairs,mean_risk\n";
    const auto prov = cfg.csv_provenance("eval");
    for (const Partition part : kEvaluated) {
        const auto stem = partition_file_stem(part);
        const auto clips = read_clip_features(require(cfg.out_dir / "features" / (stem + ".csv"), "split"));
        const auto rows = score_records(weights, clips, std::string(ingest::partition_name(part)));
        all_rows.insert(all_rows.end(), rows.begin(), rows.end());
        std::vector<eval::ScoredPair> pairs;
        for (const auto& r : rows) pairs.push_back(r.pair);

        std::array<std::vector<double>, kRiskBins.size()> bin_scores;
        for (const auto& p : pairs) bin_scores[risk_bin(p.potassium)].push_back(p.score);
        for (std::size_t b = 0; b < kRiskBins.size(); ++b) {
            bins += fmt::format("{},{},{},{}\n", stem, kRiskBins[b], bin_scores[b].size(),
                                bin_scores[b].empty() ? std::string("NA") : format_double(mean(bin_scores[b])));
        }

        for (const auto ep : cfg.endpoints) {
            const auto tag = fmt::format("{}_{}", stem, eval::endpoint_name(ep));
            try {
                auto report = eval::evaluate_endpoint(stem, pairs, weights.frozen_threshold, ep,
                                                      cfg.bootstrap_resamples, cfg.bootstrap_seed());
                write_text_file(cfg.out_dir / "eval" / (tag + ".json"), eval::report_to_json(report, cfg.hash()));
                write_text_file(cfg.out_dir / "eval" / ("roc_" + tag + ".csv"),
                                eval::roc_to_csv(eval::roc_curve(pairs, ep), prov));
                const auto& a = report.metric("auroc");
                log.push_back(fmt::format("{}: n={} prevalence {:.3f} AUROC {:.4f} [{:.4f}, {:.4f}]", tag,
                                          report.n_pairs, report.prevalence, a.ci->point, a.ci->lower, a.ci->upper));
                reports.push_back(std::move(report));
            } catch (const UndefinedMetricError& e) {
                log.push_back(fmt::format("{}: not evaluable ({})", tag, e.what()));
            }
        }
    }
    write_text_file(cfg.out_dir / "scored_pairs.csv", eval::scored_rows_to_csv(all_rows, prov));
    write_text_file(cfg.out_dir / "metrics.csv", eval::reports_to_metrics_csv(reports, prov));
    write_text_file(cfg.out_dir / "risk_by_k_bin.csv", "# " + prov + "\n" + bins);
    return log;
}

StageLog run_explain(const RunConfig& cfg) {
    cfg.validate();
    const auto weights = model::load_weights(require(cfg.out_dir / "weights.json", "train"));
    const auto rows = eval::read_scored_pairs_csv(require(cfg.out_dir / "scored_pairs.csv", "eval"));
    const double tau = weights.frozen_threshold;

    std::map<std::string, std::pair<fs::path, ingest::Recording>> recs;
    std::vector<ingest::Diagnosis> diagnoses;
    for (const auto& site : cfg.sites()) {
        const auto cohort = ingest::load_cohort(require(cfg.data_dir / site, "synth"));
        for (const auto& r : cohort.recordings) recs[r.record_id] = {cfg.data_dir / site, r};
        diagnoses.insert(diagnoses.end(), cohort.diagnoses.begin(), cohort.diagnoses.end());
    }

    // Averaged beats from the development-site validation sets.
    std::vector<std::vector<double>> high, low;
    for (const auto& row : rows) {
        if (row.partition != ingest::partition_name(Partition::InternalTest) &&
            row.partition != ingest::partition_name(Partition::TemporalValidation)) {
            continue;
        }
        const auto it = recs.find(row.pair.record_id);
        if (it == recs.end()) throw PrerequisiteError("record " + row.pair.record_id + " missing from cohort");
        const auto& [root, rec] = it->second;
        const auto wf = read_waveform_file(root / rec.file_path);
        const std::vector<double> raw(wf.samples.begin(), wf.samples.end());
        for (const auto& clip : dsp::preprocess(raw, wf.fs_hz, rec.record_id).clips) {
            const auto set = dsp::detect_r_peaks(clip.samples, clip.fs);
            auto beats = dsp::extract_beats(clip.samples, set);
            auto& dest = row.pair.score >= tau ? high : low;
            for (auto& b : beats) {
                if (dsp::standardize_beat(b, set.pre, clip.fs)) dest.push_back(std::move(b));
            }
        }
    }
    const auto hi = dsp::signal_average("high_risk", high);
    const auto lo = dsp::signal_average("low_risk", low);
    const dsp::BeatWindow window;
    const auto pre = static_cast<std::size_t>(std::lround(window.pre_s * dsp::kModelFs));
    std::string wave = "time_s,high_risk_mean,high_risk_sd,low_risk_mean,low_risk_sd,abs_difference\n";
    std::size_t arg = 0;
    for (std::size_t i = 0; i < hi.mean.size(); ++i) {
        const double t = (static_cast<double>(i) - static_cast<double>(pre)) / dsp::kModelFs;
        const double d = std::abs(hi.mean[i] - lo.mean[i]);
        if (d > std::abs(hi.mean[arg] - lo.mean[arg])) arg = i;
        wave += fmt::format("{},{},{},{},{},{}\n", format_double(t), format_double(hi.mean[i]),
                            format_double(hi.sd[i]), format_double(lo.mean[i]), format_double(lo.sd[i]),
                            format_double(d));
    }
    const double t_max = (static_cast<double>(arg) - static_cast<double>(pre)) / dsp::kModelFs;
    const auto tw = t_wave_window();
    const bool in_t = t_max >= tw.lo_s && t_max <= tw.hi_s;
    const auto prov = cfg.csv_provenance("explain");
    write_text_file(cfg.out_dir / "averaged_waveforms.csv", "# " + prov + "\n" + wave);

    // Reference-negative phenotype comparison over all validation sets.
    const auto dx = ingest::index_diagnoses(diagnoses);
    std::map<std::string, ingest::ComorbidityProfile> profiles;
    std::vector<eval::ScoredPair> pairs;
    for (const auto& row : rows) {
        const auto it = dx.find(row.pair.patient_id);
        const std::vector<ingest::Diagnosis> none;
        profiles[row.pair.record_id] =
            ingest::phenotype(row.pair.patient_id, it == dx.end() ? none : it->second, row.ecg_timestamp);
        pairs.push_back(row.pair);
    }
    StageLog log;
    nlohmann::ordered_json j;
    j["beat_window_s"] = {-window.pre_s, window.post_s};
    j["high_risk_beats"] = hi.n_beats;
    j["low_risk_beats"] = lo.n_beats;
    j["threshold"] = tau;
    j["max_abs_difference_time_s"] = t_max;
    j["t_wave_window_s"] = {tw.lo_s, tw.hi_s};
    j["max_in_t_wave_window"] = in_t;
    log.push_back(fmt::format("averaged beats: {} high-risk, {} low-risk; max difference at {:+.3f} s ({})",
                              hi.n_beats, lo.n_beats, t_max, in_t ? "inside T window" : "outside T window"));
    try {
        const auto cmp = eval::compare_reference_negative(pairs, tau, profiles);
        write_text_file(cfg.out_dir / "phenotype.csv", eval::phenotype_to_csv(cmp, prov));
        for (const auto& r : cmp.rows) {
            if (r.comorbidity == "ckd") {
                j["ckd_low_risk_prevalence"] = r.low_risk_prevalence;
                j["ckd_high_risk_prevalence"] = r.high_risk_prevalence;
                j["ckd_p_value"] = r.test.p_value;
                log.push_back(fmt::format("reference-negative CKD: {:.3f} low-risk vs {:.3f} high-risk, p = {:.3g}",
                                          r.low_risk_prevalence, r.high_risk_prevalence, r.test.p_value));
            }
        }
    } catch (const ParameterError& e) {
        write_text_file(cfg.out_dir / "phenotype.csv", "# " + prov + "\n# not computed: " + e.what() + "\n");
        log.push_back(std::string("phenotype comparison skipped: ") + e.what());
    }
    write_text_file(cfg.out_dir / "explain.json", json_with_provenance(j, cfg, "explain"));
    return log;
}

StageLog run_track(const RunConfig& cfg) {
    cfg.validate();
    const auto rows = eval::read_scored_pairs_csv(require(cfg.out_dir / "scored_pairs.csv", "eval"));
    std::vector<std::string> notices;
    const auto trajectories = longitudinal::track_all(rows, &notices);
    const auto exemplars = longitudinal::select_exemplars(trajectories);
    const auto prov = cfg.csv_provenance("track");
    write_text_file(cfg.out_dir / "trajectories.csv", longitudinal::trajectories_to_csv(trajectories, prov));
    StageLog log{fmt::format("{} patients with >= 2 pairs", trajectories.size())};
    for (const auto& e : exemplars) {
        if (!e.patient_id) {
            log.push_back(fmt::format("{}: absent", longitudinal::pattern_name(e.pattern)));
            continue;
        }
        const auto it = std::find_if(trajectories.begin(), trajectories.end(),
                                     [&](const auto& t) { return t.patient_id == *e.patient_id; });
        write_text_file(cfg.out_dir / "trajectories" / (*e.patient_id + ".csv"),
                        longitudinal::trajectory_to_csv(*it, prov));
        log.push_back(fmt::format("{}: {} ({} matching, Spearman K~risk {})", longitudinal::pattern_name(e.pattern),
                                  *e.patient_id, e.matches,
                                  e.spearman_k_risk ? fmt::format("{:.3f}", *e.spearman_k_risk) : "n/a"));
    }
    write_text_file(cfg.out_dir / "exemplars.json",
                    longitudinal::exemplars_to_json(exemplars, cfg.json_provenance("track")));
    for (const auto& n : notices) log.push_back(n);
    return log;
}

device::DeviceResult run_device(const RunConfig& cfg, const fs::path& input, const fs::path& output) {
    const auto weights = model::load_weights(require(cfg.out_dir / "weights.json", "train"));
    if (!fs::exists(input)) throw IoError("device input not found: " + input.string());
    const auto bytes = read_binary_file(input);
    auto result = device::run_handheld(bytes, weights);
    write_text_file(output.empty() ? cfg.out_dir / "device_result.json" : output,
                    device::result_to_json(result, cfg.json_provenance("device")));
    return result;
}

StageLog run_report(const RunConfig& cfg) {
    cfg.validate();
    const std::pair<const char*, const char*> needed[] = {
        {"stard_dev.json", "split"},        {"stard_external.json", "split"}, {"stard.csv", "split"},
        {"baseline.csv", "split"},          {"partitions.csv", "split"},      {"weights.json", "train"},
        {"history.csv", "train"},           {"metrics.csv", "eval"},          {"scored_pairs.csv", "eval"},
        {"risk_by_k_bin.csv", "eval"},      {"averaged_waveforms.csv", "explain"},
        {"phenotype.csv", "explain"},       {"explain.json", "explain"},      {"trajectories.csv", "track"},
        {"exemplars.json", "track"},
    };
    const fs::path dest = cfg.out_dir / "report";
    fs::create_directories(dest);
    nlohmann::ordered_json index;
    nlohmann::ordered_json files = nlohmann::ordered_json::array();
    for (const auto& [name, stage] : needed) {
        const auto src = require(cfg.out_dir / name, stage);
        fs::copy_file(src, dest / name, fs::copy_options::overwrite_existing);
        files.push_back(name);
    }
    for (const auto* dir : {"eval", "trajectories"}) {
        if (!fs::exists(cfg.out_dir / dir)) continue;
        fs::create_directories(dest / dir);
        std::vector<fs::path> entries;
        for (const auto& e : fs::directory_iterator(cfg.out_dir / dir)) entries.push_back(e.path());
        std::sort(entries.begin(), entries.end());
        for (const auto& p : entries) {
            fs::copy_file(p, dest / dir / p.filename(), fs::copy_options::overwrite_existing);
            files.push_back(std::string(dir) + "/" + p.filename().string());
        }
    }
    const auto weights = model::load_weights(cfg.out_dir / "weights.json");
    index["frozen_threshold"] = weights.frozen_threshold;
    index["config"] = cfg.to_text(false);
    index["files"] = files;
    const auto stard = nlohmann::json::parse(read_text_file(cfg.out_dir / "stard_dev.json"));
    index["stard_dev_reconciles"] = stard.value("reconciles", false);
    write_text_file(dest / "report.json", json_with_provenance(index, cfg, "report"));
    return {fmt::format("report assembled in {} ({} files)", dest.string(), files.size())};
}

}  // namespace pocketk::study

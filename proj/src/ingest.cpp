#include "pocketk/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numeric>

namespace pocketk::ingest {

namespace {

constexpr std::size_t kMaxRowNotices = 20;

void reject_row(Cohort& cohort, const std::string& table, std::size_t row, const std::exception& e) {
    ++cohort.rejected_rows;
    if (cohort.notices.size() < kMaxRowNotices) {
        cohort.notices.push_back(fmt::format("{} row {} rejected: {}", table, row + 1, e.what()));
    }
}

bool parse_flag(std::string_view s, std::string_view field) {
    if (s == "1" || s == "true") return true;
    if (s == "0" || s == "false") return false;
    throw ParseError(std::string(field), "expected 0/1, got '" + std::string(s) + "'");
}

}  // namespace

std::vector<std::string> Cohort::screened_patients() const {
    std::set<std::string> ids;
    for (const auto& r : recordings) ids.insert(r.patient_id);
    for (const auto& l : labs) ids.insert(l.patient_id);
    for (const auto& d : diagnoses) ids.insert(d.patient_id);
    for (const auto& d : demographics) ids.insert(d.patient_id);
    return {ids.begin(), ids.end()};
}

Cohort load_cohort(const std::filesystem::path& root) {
    Cohort cohort;
    cohort.root = root;

    {
        const auto t = CsvTable::read(root / "manifest.csv");
        const auto c_rec = t.column("record_id"), c_pat = t.column("patient_id"), c_ts = t.column("timestamp"),
                   c_fs = t.column("fs_hz"), c_n = t.column("n_samples"), c_path = t.column("file_path");
        const bool has_k = t.has_column("true_k");
        const auto c_k = has_k ? t.column("true_k") : 0;
        for (std::size_t i = 0; i < t.rows(); ++i) {
            try {
                Recording r;
                r.record_id = t.at(i, c_rec);
                r.patient_id = t.at(i, c_pat);
                r.timestamp = parse_rfc3339(t.at(i, c_ts));
                const auto fs = parse_int(t.at(i, c_fs), "fs_hz");
                if (fs <= 0) throw ParseError("fs_hz", "must be positive");
                r.fs_hz = static_cast<std::uint32_t>(fs);
                r.n_samples = static_cast<std::size_t>(parse_int(t.at(i, c_n), "n_samples"));
                r.file_path = t.at(i, c_path);
                if (has_k && !t.at(i, c_k).empty()) r.true_k = parse_double(t.at(i, c_k), "true_k");
                cohort.recordings.push_back(std::move(r));
            } catch (const ParseError& e) {
                reject_row(cohort, "manifest.csv", i, e);
            }
        }
    }
    {
        const auto t = CsvTable::read(root / "labs.csv");
        const auto c_id = t.column("lab_id"), c_pat = t.column("patient_id"), c_ts = t.column("timestamp"),
                   c_k = t.column("potassium_mmol_l"), c_h = t.column("hemolysed");
        for (std::size_t i = 0; i < t.rows(); ++i) {
            try {
                LabResult l;
                l.lab_id = t.at(i, c_id);
                l.patient_id = t.at(i, c_pat);
                l.timestamp = parse_rfc3339(t.at(i, c_ts));
                l.potassium = parse_double(t.at(i, c_k), "potassium_mmol_l");
                if (!(l.potassium > 0.0)) throw ParseError("potassium_mmol_l", "must be positive");
                l.hemolysed = parse_flag(t.at(i, c_h), "hemolysed");
                cohort.labs.push_back(std::move(l));
            } catch (const ParseError& e) {
                reject_row(cohort, "labs.csv", i, e);
            }
        }
    }
    {
        const auto t = CsvTable::read(root / "diagnoses.csv");
        const auto c_pat = t.column("patient_id"), c_ts = t.column("timestamp"), c_txt = t.column("diagnosis_text");
        for (std::size_t i = 0; i < t.rows(); ++i) {
            try {
                cohort.diagnoses.push_back({t.at(i, c_pat), parse_rfc3339(t.at(i, c_ts)), t.at(i, c_txt)});
            } catch (const ParseError& e) {
                reject_row(cohort, "diagnoses.csv", i, e);
            }
        }
    }
    {
        const auto t = CsvTable::read(root / "demographics.csv");
        const auto c_pat = t.column("patient_id"), c_age = t.column("age_years"), c_sex = t.column("sex");
        for (std::size_t i = 0; i < t.rows(); ++i) {
            try {
                Demographic d;
                d.patient_id = t.at(i, c_pat);
                d.age_years = parse_double(t.at(i, c_age), "age_years");
                d.sex = t.at(i, c_sex).empty() ? 'U' : t.at(i, c_sex).front();
                cohort.demographics.push_back(std::move(d));
            } catch (const ParseError& e) {
                reject_row(cohort, "demographics.csv", i, e);
            }
        }
    }
    return cohort;
}

// ---------------------------------------------------------------------------

PairingResult pair_ecg_to_lab(std::span<const Recording> recordings, std::span<const LabResult> labs,
                              double window_minutes) {
    if (window_minutes < 0.0) throw ParameterError("pair_ecg_to_lab: window must be non-negative");
    PairingResult result;
    std::map<std::string, std::vector<const LabResult*>> by_patient;
    for (const auto& lab : labs) {
        if (lab.hemolysed) {
            ++result.tallies.hemolysed_labs;
            continue;
        }
        by_patient[lab.patient_id].push_back(&lab);
    }
    for (auto& [id, list] : by_patient) {
        std::sort(list.begin(), list.end(), [](const LabResult* a, const LabResult* b) {
            return std::tie(a->timestamp, a->lab_id) < std::tie(b->timestamp, b->lab_id);
        });
    }

    for (const auto& rec : recordings) {
        ++result.tallies.ecgs;
        const LabResult* best = nullptr;
        double best_delta = 0.0;
        if (const auto it = by_patient.find(rec.patient_id); it != by_patient.end()) {
            // Sorted ascending, so strict '<' keeps the earlier lab on ties.
            for (const LabResult* lab : it->second) {
                const double delta = std::abs(minutes_between(rec.timestamp, lab->timestamp));
                if (delta > window_minutes) continue;
                if (best == nullptr || delta < best_delta) {
                    best = lab;
                    best_delta = delta;
                }
            }
        }
        if (best == nullptr) {
            ++result.tallies.excluded_no_eligible_lab;
            continue;
        }
        ++result.tallies.paired;
        result.pairs.push_back({rec.record_id, rec.patient_id, rec.timestamp, best->lab_id, best->timestamp,
                                best_delta, best->potassium, primary_label(best->potassium),
                                severe_label(best->potassium)});
    }
    return result;
}

// ---------------------------------------------------------------------------

KeywordConfig KeywordConfig::defaults() {
    KeywordConfig k;
    k.ckd = {"chronic kidney disease", "chronic kidney failure", "chronic renal insufficiency",
             "chronic renal failure", "chronic renal disease", "end stage kidney disease",
             "end stage renal disease", "esrd", "eskd", "uraemia", "uremia", "ckd"};
    k.heart_failure = {"heart failure", "cardiac failure", "hfpef", "hfref"};
    k.hypertension = {"hypertension"};
    k.diabetes = {"diabetes"};
    k.coronary_artery_disease = {"coronary artery disease", "coronary heart disease"};
    k.stroke = {"stroke", "cerebral infarction"};
    return k;
}

std::string normalize_diagnosis(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (const char raw : text) {
        char c = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
        if (c == '-' || c == '_' || std::isspace(static_cast<unsigned char>(c))) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(c);
    }
    return out;
}

namespace {

bool matches_any(const std::string& normalized, const std::vector<std::string>& concepts) {
    return std::any_of(concepts.begin(), concepts.end(), [&](const std::string& kw) {
        return normalized.find(normalize_diagnosis(kw)) != std::string::npos;
    });
}

}  // namespace

ComorbidityProfile phenotype(const std::string& patient_id, std::span<const Diagnosis> diagnoses, Timestamp index,
                             const KeywordConfig& keywords) {
    ComorbidityProfile p;
    p.patient_id = patient_id;
    for (const auto& d : diagnoses) {
        if (d.patient_id != patient_id || d.timestamp > index) continue;
        const std::string text = normalize_diagnosis(d.text);
        p.ckd = p.ckd || matches_any(text, keywords.ckd);
        p.heart_failure = p.heart_failure || matches_any(text, keywords.heart_failure);
        p.hypertension = p.hypertension || matches_any(text, keywords.hypertension);
        p.diabetes = p.diabetes || matches_any(text, keywords.diabetes);
        p.coronary_artery_disease = p.coronary_artery_disease || matches_any(text, keywords.coronary_artery_disease);
        p.stroke = p.stroke || matches_any(text, keywords.stroke);
    }
    return p;
}

DiagnosisIndex index_diagnoses(std::span<const Diagnosis> diagnoses) {
    DiagnosisIndex index;
    for (const auto& d : diagnoses) index[d.patient_id].push_back(d);
    return index;
}

// ---------------------------------------------------------------------------

std::string_view partition_name(Partition p) {
    switch (p) {
        case Partition::Finetune: return "development:finetune";
        case Partition::ModelSelection: return "development:model_selection";
        case Partition::InternalTest: return "development:internal_test";
        case Partition::TemporalValidation: return "temporal_validation";
        case Partition::ExternalValidation: return "external_validation";
        case Partition::Excluded: return "excluded";
    }
    return "excluded";
}

Partition parse_partition(std::string_view name) {
    for (const Partition p : {Partition::Finetune, Partition::ModelSelection, Partition::InternalTest,
                              Partition::TemporalValidation, Partition::ExternalValidation, Partition::Excluded}) {
        if (partition_name(p) == name) return p;
    }
    throw ParseError("partition", "unknown partition '" + std::string(name) + "'");
}

ChronologicalSplit chronological_split(std::span<const EcgPotassiumPair> pairs, Timestamp cutoff) {
    std::set<std::string> development_patients;
    for (const auto& p : pairs) {
        if (p.ecg_timestamp < cutoff) development_patients.insert(p.patient_id);
    }
    ChronologicalSplit split;
    for (const auto& p : pairs) {
        if (p.ecg_timestamp < cutoff) {
            split.development.push_back(p);
        } else if (development_patients.count(p.patient_id) != 0) {
            split.dropped.push_back(p);
            split.excluded_from_temporal.insert(p.patient_id);
        } else {
            split.temporal.push_back(p);
        }
    }
    return split;
}

SplitAssignment patient_split_811(std::span<const std::string> patients, std::uint64_t seed, SplitRatios ratios) {
    std::vector<std::string> ids(patients.begin(), patients.end());
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    if (ids.size() < 10) {
        throw ParameterError(fmt::format("patient split needs at least 10 patients, got {}", ids.size()));
    }
    if (ratios.finetune <= 0 || ratios.model_selection <= 0 || ratios.finetune + ratios.model_selection >= 1.0) {
        throw ParameterError("patient split: invalid ratios");
    }
    Rng rng(seed);
    for (std::size_t i = ids.size() - 1; i > 0; --i) std::swap(ids[i], ids[rng.below(i + 1)]);

    const auto n = static_cast<double>(ids.size());
    // Small epsilon keeps e.g. 0.8 * 10 from flooring to 7.
    const auto n_ft = static_cast<std::size_t>(std::floor(ratios.finetune * n + 1e-9));
    const auto n_ms = static_cast<std::size_t>(std::floor(ratios.model_selection * n + 1e-9));
    SplitAssignment out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        out[ids[i]] = i < n_ft ? Partition::Finetune
                               : (i < n_ft + n_ms ? Partition::ModelSelection : Partition::InternalTest);
    }
    return out;
}

// ---------------------------------------------------------------------------

bool StardReport::reconciles() const {
    if (screened != excluded_no_ecg + excluded_no_eligible_lab + excluded_poor_quality + retained_patients) {
        return false;
    }
    std::size_t partition_pairs = 0;
    for (const auto& p : partitions) partition_pairs += p.pairs;
    return partition_pairs + dropped_pairs_after_cutoff == retained_pairs;
}

StardReport stard_accounting(const StardInputs& in) {
    StardReport r;
    r.site = in.site;
    std::set<std::string> screened(in.screened_patients.begin(), in.screened_patients.end());
    std::set<std::string> with_ecg;
    for (const auto& rec : in.recordings) {
        with_ecg.insert(rec.patient_id);
        screened.insert(rec.patient_id);
    }
    std::set<std::string> with_pair;
    std::set<std::string> with_good_pair;
    std::map<std::string, std::set<std::string>> partition_patients;
    std::map<std::string, std::size_t> partition_pairs;
    for (const auto& p : in.pairs) {
        with_pair.insert(p.patient_id);
        if (in.poor_quality_records.count(p.record_id) != 0) {
            ++r.poor_quality_pairs;
            continue;
        }
        with_good_pair.insert(p.patient_id);
        ++r.retained_pairs;
        const auto it = in.pair_partition.find(p.record_id);
        if (it == in.pair_partition.end()) {
            ++r.dropped_pairs_after_cutoff;
            continue;
        }
        const std::string name(partition_name(it->second));
        partition_patients[name].insert(p.patient_id);
        ++partition_pairs[name];
    }
    r.screened = screened.size();
    for (const auto& id : screened) {
        if (with_ecg.count(id) == 0) {
            ++r.excluded_no_ecg;
        } else if (with_pair.count(id) == 0) {
            ++r.excluded_no_eligible_lab;
        } else if (with_good_pair.count(id) == 0) {
            ++r.excluded_poor_quality;
        } else {
            ++r.retained_patients;
        }
    }
    for (const auto& [name, count] : partition_pairs) {
        r.partitions.push_back({name, partition_patients[name].size(), count});
    }
    return r;
}

// ---------------------------------------------------------------------------

std::string BaselineRow::summary() const {
    if (continuous) return fmt::format("{:.1f} ({:.2f})", mean, sd);
    return fmt::format("{} ({:.1f}%)", count, percent);
}

BaselineRow summarize_continuous(std::string partition, std::string variable, std::span<const double> values) {
    BaselineRow row;
    row.partition = std::move(partition);
    row.variable = std::move(variable);
    row.continuous = true;
    row.units = values.size();
    row.mean = mean(values);
    row.sd = sample_sd(values);
    row.degenerate = values.size() < 2;
    return row;
}

namespace {

BaselineRow categorical(const std::string& partition, std::string variable, std::size_t count, std::size_t units) {
    BaselineRow row;
    row.partition = partition;
    row.variable = std::move(variable);
    row.continuous = false;
    row.units = units;
    row.count = count;
    row.percent = units == 0 ? 0.0 : 100.0 * static_cast<double>(count) / static_cast<double>(units);
    row.degenerate = units < 2;
    return row;
}

}  // namespace

BaselineTable baseline_table(std::span<const PartitionData> partitions, std::span<const Demographic> demographics,
                             const DiagnosisIndex& diagnoses, const KeywordConfig& keywords) {
    BaselineTable table;
    std::map<std::string, const Demographic*> demo;
    for (const auto& d : demographics) demo[d.patient_id] = &d;

    for (const auto& part : partitions) {
        if (part.pairs.empty()) {
            table.warnings.push_back(fmt::format("partition '{}' is empty; omitted", part.name));
            continue;
        }
        std::map<std::string, Timestamp> first_ecg;
        for (const auto& p : part.pairs) {
            auto [it, inserted] = first_ecg.emplace(p.patient_id, p.ecg_timestamp);
            if (!inserted && p.ecg_timestamp < it->second) it->second = p.ecg_timestamp;
        }
        std::vector<double> ages;
        std::size_t male = 0, with_sex = 0;
        std::size_t ckd = 0, hf = 0, htn = 0, dm = 0, cad = 0, stroke = 0;
        for (const auto& [id, index] : first_ecg) {
            if (const auto it = demo.find(id); it != demo.end()) {
                ages.push_back(it->second->age_years);
                if (it->second->sex == 'M' || it->second->sex == 'F') {
                    ++with_sex;
                    male += it->second->sex == 'M' ? 1 : 0;
                }
            }
            static const std::vector<Diagnosis> kNone;
            const auto dit = diagnoses.find(id);
            const auto& dx = dit == diagnoses.end() ? kNone : dit->second;
            const auto profile = phenotype(id, dx, index, keywords);
            ckd += profile.ckd;
            hf += profile.heart_failure;
            htn += profile.hypertension;
            dm += profile.diabetes;
            cad += profile.coronary_artery_disease;
            stroke += profile.stroke;
        }
        std::vector<double> potassium, interval;
        std::size_t hyper = 0, severe = 0;
        for (const auto& p : part.pairs) {
            potassium.push_back(p.potassium);
            interval.push_back(p.delta_minutes);
            hyper += p.label_primary;
            severe += p.label_severe;
        }
        const std::size_t n_patients = first_ecg.size();
        const std::size_t n_pairs = part.pairs.size();

        auto push = [&](BaselineRow row) {
            if (row.degenerate && row.continuous) {
                table.warnings.push_back(
                    fmt::format("partition '{}': {} summarises a single value; SD reported as 0", part.name, row.variable));
            }
            table.rows.push_back(std::move(row));
        };
        push(categorical(part.name, "patients_N", n_patients, n_patients));
        push(categorical(part.name, "pairs_n", n_pairs, n_pairs));
        push(summarize_continuous(part.name, "age_years", ages));
        push(categorical(part.name, "male", male, with_sex));
        push(summarize_continuous(part.name, "potassium_mmol_l", potassium));
        push(summarize_continuous(part.name, "ecg_lab_interval_min", interval));
        push(categorical(part.name, "hyperkalemia_k_gt_5_5", hyper, n_pairs));
        push(categorical(part.name, "k_ge_6_0", severe, n_pairs));
        push(categorical(part.name, "ckd", ckd, n_patients));
        push(categorical(part.name, "heart_failure", hf, n_patients));
        push(categorical(part.name, "hypertension", htn, n_patients));
        push(categorical(part.name, "diabetes", dm, n_patients));
        push(categorical(part.name, "coronary_artery_disease", cad, n_patients));
        push(categorical(part.name, "stroke", stroke, n_patients));
    }
    return table;
}

// ---------------------------------------------------------------------------

std::string pairs_to_csv(std::span<const EcgPotassiumPair> pairs, const std::map<std::string, Partition>& partition,
                         std::string_view provenance) {
    std::string out;
    if (!provenance.empty()) out += fmt::format("# {}\n", provenance);
    out +=
        "record_id,patient_id,lab_id,delta_minutes,potassium_mmol_l,label_primary,label_severe,partition,"
        "ecg_timestamp,lab_timestamp\n";
    for (const auto& p : pairs) {
        const auto it = partition.find(p.record_id);
        out += fmt::format("{},{},{},{},{},{},{},{},{},{}\n", p.record_id, p.patient_id, p.lab_id,
                           format_double(p.delta_minutes), format_double(p.potassium), p.label_primary ? 1 : 0,
                           p.label_severe ? 1 : 0, it == partition.end() ? "unassigned" : partition_name(it->second),
                           format_rfc3339(p.ecg_timestamp), format_rfc3339(p.lab_timestamp));
    }
    return out;
}

std::vector<PartitionedPair> read_pairs_csv(const std::filesystem::path& path) {
    const auto t = CsvTable::read(path);
    const auto c_rec = t.column("record_id"), c_pat = t.column("patient_id"), c_lab = t.column("lab_id"),
               c_dt = t.column("delta_minutes"), c_k = t.column("potassium_mmol_l"), c_part = t.column("partition"),
               c_ets = t.column("ecg_timestamp"), c_lts = t.column("lab_timestamp");
    std::vector<PartitionedPair> out;
    out.reserve(t.rows());
    for (std::size_t i = 0; i < t.rows(); ++i) {
        PartitionedPair pp;
        auto& p = pp.pair;
        p.record_id = t.at(i, c_rec);
        p.patient_id = t.at(i, c_pat);
        p.lab_id = t.at(i, c_lab);
        p.delta_minutes = parse_double(t.at(i, c_dt), "delta_minutes");
        p.potassium = parse_double(t.at(i, c_k), "potassium_mmol_l");
        p.label_primary = primary_label(p.potassium);
        p.label_severe = severe_label(p.potassium);
        p.ecg_timestamp = parse_rfc3339(t.at(i, c_ets));
        p.lab_timestamp = parse_rfc3339(t.at(i, c_lts));
        if (t.at(i, c_part) != "unassigned") pp.partition = parse_partition(t.at(i, c_part));
        out.push_back(std::move(pp));
    }
    return out;
}

std::string baseline_to_csv(const BaselineTable& table, std::string_view provenance) {
    std::string out;
    if (!provenance.empty()) out += fmt::format("# {}\n", provenance);
    out += "partition,variable,type,units,mean,sd,count,percent,summary,degenerate\n";
    for (const auto& r : table.rows) {
        out += fmt::format("{},{},{},{},{},{},{},{},{},{}\n", r.partition, r.variable,
                           r.continuous ? "continuous" : "categorical", r.units,
                           r.continuous ? format_double(r.mean) : "", r.continuous ? format_double(r.sd) : "",
                           r.continuous ? "" : std::to_string(r.count),
                           r.continuous ? "" : format_double(r.percent), r.summary(), r.degenerate ? 1 : 0);
    }
    return out;
}

}  // namespace pocketk::ingest

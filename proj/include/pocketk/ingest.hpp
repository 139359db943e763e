#pragma once

#include "pocketk/common.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace pocketk::ingest {

inline constexpr double kPrimaryThreshold = 5.5;  ///< hyperkalemia: K > 5.5 mmol/L
inline constexpr double kSevereThreshold = 6.0;   ///< moderate-to-severe: K >= 6.0 mmol/L
inline constexpr double kDefaultWindowMinutes = 60.0;

inline bool primary_label(double k) { return k > kPrimaryThreshold; }
inline bool severe_label(double k) { return k >= kSevereThreshold; }

// ---------------------------------------------------------------------------
// Cohort tables
// ---------------------------------------------------------------------------

struct Recording {
    std::string record_id;
    std::string patient_id;
    Timestamp timestamp;
    std::uint32_t fs_hz = 0;
    std::size_t n_samples = 0;
    std::string file_path;  ///< relative to the cohort root
    std::optional<double> true_k;
};

struct LabResult {
    std::string lab_id;
    std::string patient_id;
    Timestamp timestamp;
    double potassium = 0.0;
    bool hemolysed = false;
};

struct Diagnosis {
    std::string patient_id;
    Timestamp timestamp;
    std::string text;
};

struct Demographic {
    std::string patient_id;
    double age_years = 0.0;
    char sex = 'U';
};

struct Cohort {
    std::filesystem::path root;
    std::vector<Recording> recordings;
    std::vector<LabResult> labs;
    std::vector<Diagnosis> diagnoses;
    std::vector<Demographic> demographics;
    std::size_t rejected_rows = 0;  ///< rows dropped for unparseable fields
    std::vector<std::string> notices;

    /// Every patient id mentioned by any table, sorted.
    std::vector<std::string> screened_patients() const;
};

/// Reads manifest.csv, labs.csv, diagnoses.csv and demographics.csv.
/// Malformed rows are rejected and tallied rather than aborting the load.
Cohort load_cohort(const std::filesystem::path& root);

// ---------------------------------------------------------------------------
// Pairing
// ---------------------------------------------------------------------------

struct EcgPotassiumPair {
    std::string record_id;
    std::string patient_id;
    Timestamp ecg_timestamp;
    std::string lab_id;
    Timestamp lab_timestamp;
    double delta_minutes = 0.0;
    double potassium = 0.0;
    bool label_primary = false;
    bool label_severe = false;
};

struct PairingTallies {
    std::size_t ecgs = 0;
    std::size_t paired = 0;
    std::size_t excluded_no_eligible_lab = 0;
    std::size_t hemolysed_labs = 0;
};

struct PairingResult {
    std::vector<EcgPotassiumPair> pairs;
    PairingTallies tallies;
};

/// ECG-anchored pairing: each recording takes the non-hemolysed lab of the
/// same patient with the smallest |dt| <= window; equidistant labs resolve
/// to the earlier one (then the smaller lab id). Labs may be reused.
PairingResult pair_ecg_to_lab(std::span<const Recording> recordings, std::span<const LabResult> labs,
                              double window_minutes = kDefaultWindowMinutes);

// ---------------------------------------------------------------------------
// Phenotyping
// ---------------------------------------------------------------------------

struct KeywordConfig {
    std::vector<std::string> ckd;
    std::vector<std::string> heart_failure;
    std::vector<std::string> hypertension;
    std::vector<std::string> diabetes;
    std::vector<std::string> coronary_artery_disease;
    std::vector<std::string> stroke;

    static KeywordConfig defaults();
};

struct ComorbidityProfile {
    std::string patient_id;
    bool ckd = false;
    bool heart_failure = false;
    bool hypertension = false;
    bool diabetes = false;
    bool coronary_artery_disease = false;
    bool stroke = false;
};

/// Lower-cases, maps '-' and '_' to spaces and collapses whitespace.
std::string normalize_diagnosis(std::string_view text);

/// Flags from diagnoses of `patient_id` dated on or before `index`.
ComorbidityProfile phenotype(const std::string& patient_id, std::span<const Diagnosis> diagnoses, Timestamp index,
                             const KeywordConfig& keywords = KeywordConfig::defaults());

/// Diagnoses grouped by patient for repeated phenotyping.
using DiagnosisIndex = std::map<std::string, std::vector<Diagnosis>>;
DiagnosisIndex index_diagnoses(std::span<const Diagnosis> diagnoses);

// ---------------------------------------------------------------------------
// Partitions
// ---------------------------------------------------------------------------

enum class Partition {
    Finetune,
    ModelSelection,
    InternalTest,
    TemporalValidation,
    ExternalValidation,
    Excluded,
};

std::string_view partition_name(Partition p);
Partition parse_partition(std::string_view name);

using SplitAssignment = std::map<std::string, Partition>;

struct ChronologicalSplit {
    std::vector<EcgPotassiumPair> development;
    std::vector<EcgPotassiumPair> temporal;
    std::vector<EcgPotassiumPair> dropped;  ///< post-cutoff pairs of development patients
    std::set<std::string> excluded_from_temporal;
};

/// Development: pairs before `cutoff`. Temporal: post-cutoff pairs of
/// patients with no pre-cutoff pair.
ChronologicalSplit chronological_split(std::span<const EcgPotassiumPair> pairs, Timestamp cutoff);

struct SplitRatios {
    double finetune = 0.8;
    double model_selection = 0.1;
};

/// Patient-level split into fine-tune / model-selection / internal-test
/// with sizes floor(0.8 N), floor(0.1 N) and the remainder. Patient ids are
/// sorted before a seeded shuffle, so input order does not matter.
SplitAssignment patient_split_811(std::span<const std::string> patients, std::uint64_t seed,
                                  SplitRatios ratios = {});

// ---------------------------------------------------------------------------
// Accounting
// ---------------------------------------------------------------------------

struct PartitionCount {
    std::string partition;
    std::size_t patients = 0;
    std::size_t pairs = 0;
};

struct StardReport {
    std::string site;
    std::size_t screened = 0;
    std::size_t excluded_no_ecg = 0;
    std::size_t excluded_no_eligible_lab = 0;
    std::size_t excluded_poor_quality = 0;
    std::size_t retained_patients = 0;
    std::size_t retained_pairs = 0;
    std::size_t poor_quality_pairs = 0;
    std::size_t dropped_pairs_after_cutoff = 0;
    std::vector<PartitionCount> partitions;

    /// screened == exclusions + retained, and partition pairs plus dropped
    /// pairs equal the retained pairs.
    bool reconciles() const;
};

struct StardInputs {
    std::string site;
    std::vector<std::string> screened_patients;
    std::span<const Recording> recordings;
    std::span<const EcgPotassiumPair> pairs;
    std::set<std::string> poor_quality_records;
    /// Partition per retained pair, keyed by record_id. Retained pairs
    /// missing here count as dropped after the cutoff.
    std::map<std::string, Partition> pair_partition;
};

StardReport stard_accounting(const StardInputs& inputs);

// ---------------------------------------------------------------------------
// Baseline table
// ---------------------------------------------------------------------------

struct BaselineRow {
    std::string partition;
    std::string variable;
    bool continuous = true;
    std::size_t units = 0;  ///< patients or pairs summarised
    double mean = 0.0;      ///< continuous
    double sd = 0.0;        ///< continuous, sample SD
    std::size_t count = 0;  ///< categorical
    double percent = 0.0;   ///< categorical
    bool degenerate = false;

    std::string summary() const;
};

struct BaselineTable {
    std::vector<BaselineRow> rows;
    std::vector<std::string> warnings;
};

struct PartitionData {
    std::string name;
    std::vector<EcgPotassiumPair> pairs;
};

/// Mean (SD) for age, potassium and ECG-to-lab interval; n (%) for sex,
/// comorbidities (indexed at each patient's first ECG in the partition)
/// and endpoint labels. Empty partitions are omitted with a warning.
BaselineTable baseline_table(std::span<const PartitionData> partitions, std::span<const Demographic> demographics,
                             const DiagnosisIndex& diagnoses, const KeywordConfig& keywords = KeywordConfig::defaults());

/// Continuous summary used by the table: n = 1 yields sd 0 and the
/// degenerate flag.
BaselineRow summarize_continuous(std::string partition, std::string variable, std::span<const double> values);

// ---------------------------------------------------------------------------
// CSV forms
// ---------------------------------------------------------------------------

std::string pairs_to_csv(std::span<const EcgPotassiumPair> pairs, const std::map<std::string, Partition>& partition,
                         std::string_view provenance = {});

struct PartitionedPair {
    EcgPotassiumPair pair;
    std::optional<Partition> partition;
};

std::vector<PartitionedPair> read_pairs_csv(const std::filesystem::path& path);

std::string baseline_to_csv(const BaselineTable& table, std::string_view provenance = {});

}  // namespace pocketk::ingest

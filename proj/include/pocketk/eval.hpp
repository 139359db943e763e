#pragma once

#include "pocketk/common.hpp"
#include "pocketk/ingest.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pocketk::eval {

enum class Endpoint { Primary, Severe };

std::string_view endpoint_name(Endpoint e);
Endpoint parse_endpoint(std::string_view name);

struct ScoredPair {
    std::string record_id;
    std::string patient_id;
    double score = 0.0;
    double potassium = 0.0;
    bool label_primary = false;
    bool label_severe = false;

    bool label(Endpoint e) const { return e == Endpoint::Primary ? label_primary : label_severe; }
};

ScoredPair make_scored_pair(std::string record_id, std::string patient_id, double score, double potassium);

// ---------------------------------------------------------------------------
// Discrimination
// ---------------------------------------------------------------------------

/// Mann-Whitney AUROC with ties counted 1/2, via midranks in O(n log n).
/// Throws UndefinedMetricError unless both classes are present.
double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);
double auroc(std::span<const ScoredPair> pairs, Endpoint endpoint);

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
    double threshold = 0.0;
};

/// Operating points for every distinct score used as a `score >= t` cut,
/// plus the (0, 0) point at t = +inf.
std::vector<RocPoint> roc_curve(std::span<const ScoredPair> pairs, Endpoint endpoint);

// ---------------------------------------------------------------------------
// Threshold metrics
// ---------------------------------------------------------------------------

struct ConfusionCounts {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

/// Ratio metrics; std::nullopt when the denominator is zero.
struct ConfusionMetrics {
    ConfusionCounts counts;
    std::optional<double> sensitivity;
    std::optional<double> specificity;
    std::optional<double> ppv;
    std::optional<double> npv;
    std::optional<double> accuracy;
};

/// score >= tau counts as a positive call.
ConfusionMetrics confusion_metrics(std::span<const ScoredPair> pairs, double tau, Endpoint endpoint);

// ---------------------------------------------------------------------------
// Patient-clustered bootstrap
// ---------------------------------------------------------------------------

inline constexpr int kDefaultBootstrapResamples = 2000;

/// Metric over a multiset of pairs; return nullopt when undefined.
using MetricFn = std::function<std::optional<double>(std::span<const ScoredPair>)>;

struct BootstrapCi {
    double point = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    /// The raw percentile interval excluded the point estimate and was
    /// widened to include it.
    bool widened = false;
    int resamples = 0;
    int skipped = 0;  ///< resamples where the metric was undefined
    std::uint64_t seed = 0;
    bool degenerate = false;  ///< fewer than two patients: CI collapsed to the point
};

/// Resamples patients with replacement (each draw carries all of the
/// patient's pairs) B times; percentile 2.5/97.5 interval over resamples
/// where the metric is defined. Resample b uses an RNG seeded from
/// (seed, b) only. Throws UndefinedMetricError if the point estimate is
/// undefined or more than half of the resamples are.
BootstrapCi clustered_bootstrap(std::span<const ScoredPair> pairs, const MetricFn& metric,
                                int resamples = kDefaultBootstrapResamples, std::uint64_t seed = 0);

/// Linear-interpolated percentile of sorted values, q in [0, 1].
double percentile_sorted(std::span<const double> sorted, double q);

// ---------------------------------------------------------------------------
// Endpoint report
// ---------------------------------------------------------------------------

struct MetricReport {
    std::string name;
    std::optional<BootstrapCi> ci;  ///< nullopt when the point metric is undefined
};

struct EvalReport {
    std::string set_name;
    Endpoint endpoint = Endpoint::Primary;
    std::size_t n_pairs = 0;
    std::size_t n_patients = 0;
    std::size_t n_positive = 0;
    double prevalence = 0.0;
    double threshold = 0.5;
    ConfusionCounts counts;
    std::vector<MetricReport> metrics;  ///< auroc, sensitivity, specificity, ppv, npv, accuracy
    int resamples = kDefaultBootstrapResamples;
    std::uint64_t seed = 0;

    const MetricReport& metric(std::string_view name) const;
};

EvalReport evaluate_endpoint(std::string set_name, std::span<const ScoredPair> pairs, double tau, Endpoint endpoint,
                             int resamples = kDefaultBootstrapResamples, std::uint64_t seed = 0);

std::string report_to_json(const EvalReport& report, std::string_view config_hash = {});
/// Header plus one row per metric.
std::string reports_to_metrics_csv(std::span<const EvalReport> reports, std::string_view provenance = {});
std::string roc_to_csv(std::span<const RocPoint> points, std::string_view provenance = {});

struct ScoredRow {
    ScoredPair pair;
    std::string partition;
    Timestamp ecg_timestamp;
};

std::string scored_rows_to_csv(std::span<const ScoredRow> rows, std::string_view provenance = {});
/// Reads record_id, patient_id, score, potassium (plus optional partition
/// and ecg_timestamp columns).
std::vector<ScoredRow> read_scored_pairs_csv(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Reference-negative phenotype comparison
// ---------------------------------------------------------------------------

struct TwoProportionTest {
    double z = 0.0;
    double p_value = 1.0;
};

/// Pooled two-sided two-proportion z-test. p = 1 when the pooled
/// proportion is 0 or 1.
TwoProportionTest two_proportion_z_test(std::size_t x1, std::size_t n1, std::size_t x2, std::size_t n2);

struct PhenotypeRow {
    std::string comorbidity;
    std::size_t low_risk_count = 0;
    std::size_t low_risk_n = 0;
    std::size_t high_risk_count = 0;
    std::size_t high_risk_n = 0;
    double low_risk_prevalence = 0.0;
    double high_risk_prevalence = 0.0;
    TwoProportionTest test;
};

struct PhenotypeComparison {
    double threshold = 0.5;
    std::vector<PhenotypeRow> rows;
};

/// Restricts to K <= 5.5 pairs, splits at score >= tau, and compares
/// comorbidity prevalence (profiles keyed by record_id). Throws
/// ParameterError when either group is empty.
PhenotypeComparison compare_reference_negative(std::span<const ScoredPair> pairs, double tau,
                                               const std::map<std::string, ingest::ComorbidityProfile>& profiles);

std::string phenotype_to_csv(const PhenotypeComparison& cmp, std::string_view provenance = {});

}  // namespace pocketk::eval

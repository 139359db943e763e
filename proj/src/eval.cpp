#include "pocketk/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <json.hpp>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <set>

namespace pocketk::eval {

std::string_view endpoint_name(Endpoint e) {
    return e == Endpoint::Primary ? "primary" : "severe";
}

Endpoint parse_endpoint(std::string_view name) {
    if (name == "primary") return Endpoint::Primary;
    if (name == "severe") return Endpoint::Severe;
    throw ParameterError("unknown endpoint '" + std::string(name) + "' (expected primary or severe)");
}

ScoredPair make_scored_pair(std::string record_id, std::string patient_id, double score, double potassium) {
    return {std::move(record_id), std::move(patient_id), score, potassium, ingest::primary_label(potassium),
            ingest::severe_label(potassium)};
}

// ---------------------------------------------------------------------------

double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    if (scores.size() != labels.size()) throw ParameterError("auroc: scores and labels differ in length");
    const std::size_t n = scores.size();
    std::size_t n_pos = 0;
    for (const auto l : labels) n_pos += l != 0;
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw UndefinedMetricError("auroc: both classes must be present");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Sum of 1-based midranks of the positives.
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) {
            if (labels[order[k]] != 0) rank_sum += midrank;
        }
        i = j + 1;
    }
    const auto p = static_cast<double>(n_pos);
    const auto q = static_cast<double>(n_neg);
    return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

double auroc(std::span<const ScoredPair> pairs, Endpoint endpoint) {
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    scores.reserve(pairs.size());
    labels.reserve(pairs.size());
    for (const auto& p : pairs) {
        scores.push_back(p.score);
        labels.push_back(p.label(endpoint) ? 1 : 0);
    }
    return auroc(scores, labels);
}

std::vector<RocPoint> roc_curve(std::span<const ScoredPair> pairs, Endpoint endpoint) {
    std::vector<std::pair<double, bool>> sorted;
    std::size_t n_pos = 0;
    for (const auto& p : pairs) {
        sorted.emplace_back(p.score, p.label(endpoint));
        n_pos += p.label(endpoint);
    }
    const std::size_t n_neg = sorted.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw UndefinedMetricError("roc_curve: both classes must be present");
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<RocPoint> points{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < sorted.size();) {
        const double t = sorted[i].first;
        while (i < sorted.size() && sorted[i].first == t) {
            (sorted[i].second ? tp : fp) += 1;
            ++i;
        }
        points.push_back({static_cast<double>(fp) / static_cast<double>(n_neg),
                          static_cast<double>(tp) / static_cast<double>(n_pos), t});
    }
    return points;
}

// ---------------------------------------------------------------------------

namespace {

std::optional<double> ratio(std::size_t num, std::size_t den) {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

ConfusionMetrics confusion_metrics(std::span<const ScoredPair> pairs, double tau, Endpoint endpoint) {
    ConfusionMetrics m;
    auto& c = m.counts;
    for (const auto& p : pairs) {
        const bool called = p.score >= tau;
        const bool truth = p.label(endpoint);
        if (called && truth) ++c.tp;
        else if (called) ++c.fp;
        else if (truth) ++c.fn;
        else ++c.tn;
    }
    m.sensitivity = ratio(c.tp, c.tp + c.fn);
    m.specificity = ratio(c.tn, c.tn + c.fp);
    m.ppv = ratio(c.tp, c.tp + c.fp);
    m.npv = ratio(c.tn, c.tn + c.fn);
    m.accuracy = ratio(c.tp + c.tn, c.tp + c.tn + c.fp + c.fn);
    return m;
}

// ---------------------------------------------------------------------------

double percentile_sorted(std::span<const double> sorted, double q) {
    if (sorted.empty()) throw ParameterError("percentile of empty set");
    const double h = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

namespace {

/// Shared resample composition for several metrics.
std::vector<BootstrapCi> bootstrap_many(std::span<const ScoredPair> pairs, std::span<const MetricFn> metrics,
                                        int resamples, std::uint64_t seed) {
    if (resamples < 1) throw ParameterError("bootstrap: need at least one resample");
    std::map<std::string, std::vector<std::size_t>> by_patient;
    for (std::size_t i = 0; i < pairs.size(); ++i) by_patient[pairs[i].patient_id].push_back(i);
    std::vector<const std::vector<std::size_t>*> clusters;
    for (const auto& [id, idx] : by_patient) clusters.push_back(&idx);

    std::vector<BootstrapCi> out(metrics.size());
    for (std::size_t m = 0; m < metrics.size(); ++m) {
        const auto point = metrics[m](pairs);
        if (!point) throw UndefinedMetricError("bootstrap: metric undefined on the full sample");
        out[m].point = *point;
        out[m].lower = out[m].upper = *point;
        out[m].resamples = resamples;
        out[m].seed = seed;
    }
    if (clusters.size() < 2) {
        for (auto& ci : out) ci.degenerate = true;
        return out;
    }

    std::vector<std::vector<double>> values(metrics.size());
    for (auto& v : values) v.reserve(static_cast<std::size_t>(resamples));
    std::vector<ScoredPair> sample;
    for (int b = 0; b < resamples; ++b) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(b)));
        sample.clear();
        for (std::size_t k = 0; k < clusters.size(); ++k) {
            for (const std::size_t i : *clusters[rng.below(clusters.size())]) sample.push_back(pairs[i]);
        }
        for (std::size_t m = 0; m < metrics.size(); ++m) {
            if (const auto v = metrics[m](sample)) {
                values[m].push_back(*v);
            } else {
                ++out[m].skipped;
            }
        }
    }
    for (std::size_t m = 0; m < metrics.size(); ++m) {
        if (2 * out[m].skipped > resamples) {
            throw UndefinedMetricError(fmt::format("bootstrap: metric undefined in {} of {} resamples",
                                                   out[m].skipped, resamples));
        }
        auto& v = values[m];
        std::sort(v.begin(), v.end());
        const double lo = percentile_sorted(v, 0.025);
        const double hi = percentile_sorted(v, 0.975);
        out[m].lower = std::min(lo, out[m].point);
        out[m].upper = std::max(hi, out[m].point);
        out[m].widened = lo > out[m].point || hi < out[m].point;
    }
    return out;
}

}  // namespace

BootstrapCi clustered_bootstrap(std::span<const ScoredPair> pairs, const MetricFn& metric, int resamples,
                                std::uint64_t seed) {
    const MetricFn fns[] = {metric};
    return bootstrap_many(pairs, fns, resamples, seed).front();
}

// ---------------------------------------------------------------------------

const MetricReport& EvalReport::metric(std::string_view name) const {
    for (const auto& m : metrics) {
        if (m.name == name) return m;
    }
    throw ParameterError("no metric named '" + std::string(name) + "'");
}

EvalReport evaluate_endpoint(std::string set_name, std::span<const ScoredPair> pairs, double tau, Endpoint endpoint,
                             int resamples, std::uint64_t seed) {
    if (!(tau > 0.0 && tau < 1.0)) throw ParameterError("evaluate_endpoint: threshold must lie in (0, 1)");
    EvalReport r;
    r.set_name = std::move(set_name);
    r.endpoint = endpoint;
    r.n_pairs = pairs.size();
    r.threshold = tau;
    r.resamples = resamples;
    r.seed = seed;
    std::set<std::string> patients;
    for (const auto& p : pairs) {
        patients.insert(p.patient_id);
        r.n_positive += p.label(endpoint);
    }
    r.n_patients = patients.size();
    r.prevalence = pairs.empty() ? 0.0 : static_cast<double>(r.n_positive) / static_cast<double>(pairs.size());
    const auto full = confusion_metrics(pairs, tau, endpoint);
    r.counts = full.counts;

    using Getter = std::optional<double> ConfusionMetrics::*;
    const std::pair<const char*, Getter> threshold_metrics[] = {
        {"sensitivity", &ConfusionMetrics::sensitivity}, {"specificity", &ConfusionMetrics::specificity},
        {"ppv", &ConfusionMetrics::ppv},                 {"npv", &ConfusionMetrics::npv},
        {"accuracy", &ConfusionMetrics::accuracy}};

    std::vector<std::string> names{"auroc"};
    std::vector<MetricFn> fns{[endpoint](std::span<const ScoredPair> s) -> std::optional<double> {
        try {
            return auroc(s, endpoint);
        } catch (const UndefinedMetricError&) {
            return std::nullopt;
        }
    }};
    // AUROC on a single-class set is an error, not "n/a".
    auroc(pairs, endpoint);
    for (const auto& [name, getter] : threshold_metrics) {
        if (!(full.*getter)) continue;  // not applicable on the full sample
        names.emplace_back(name);
        fns.push_back([tau, endpoint, g = getter](std::span<const ScoredPair> s) {
            return confusion_metrics(s, tau, endpoint).*g;
        });
    }
    const auto cis = bootstrap_many(pairs, fns, resamples, seed);
    for (const char* name : {"auroc", "sensitivity", "specificity", "ppv", "npv", "accuracy"}) {
        MetricReport m;
        m.name = name;
        const auto it = std::find(names.begin(), names.end(), name);
        if (it != names.end()) m.ci = cis[static_cast<std::size_t>(it - names.begin())];
        r.metrics.push_back(std::move(m));
    }
    return r;
}

std::string report_to_json(const EvalReport& r, std::string_view config_hash) {
    nlohmann::json j;
    j["set"] = r.set_name;
    j["endpoint"] = std::string(endpoint_name(r.endpoint));
    j["endpoint_definition"] = r.endpoint == Endpoint::Primary ? "K > 5.5 mmol/L" : "K >= 6.0 mmol/L";
    j["n_pairs"] = r.n_pairs;
    j["n_patients"] = r.n_patients;
    j["n_positive"] = r.n_positive;
    j["prevalence"] = r.prevalence;
    j["threshold"] = r.threshold;
    j["counts"] = {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"tn", r.counts.tn}, {"fn", r.counts.fn}};
    nlohmann::json metrics = nlohmann::json::object();
    for (const auto& m : r.metrics) {
        if (!m.ci) {
            metrics[m.name] = nullptr;
            continue;
        }
        metrics[m.name] = {{"point", m.ci->point},       {"ci_lower", m.ci->lower},
                           {"ci_upper", m.ci->upper},    {"skipped_resamples", m.ci->skipped},
                           {"degenerate", m.ci->degenerate}, {"widened", m.ci->widened}};
    }
    j["metrics"] = metrics;
    j["bootstrap"] = {{"method", "patient-clustered percentile"}, {"resamples", r.resamples}, {"seed", r.seed}};
    j["provenance"] = {{"artifact_version", std::string(kArtifactVersion)}, {"config_hash", std::string(config_hash)}};
    return j.dump(2) + "\n";
}

std::string reports_to_metrics_csv(std::span<const EvalReport> reports, std::string_view provenance) {
    std::string out;
    if (!provenance.empty()) out += fmt::format("# {}\n", provenance);
    out += "set,endpoint,metric,point,ci_lower,ci_upper,n_pairs,n_patients,prevalence,threshold,resamples,seed\n";
    for (const auto& r : reports) {
        for (const auto& m : r.metrics) {
            out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}\n", r.set_name, endpoint_name(r.endpoint), m.name,
                               m.ci ? format_double(m.ci->point) : "NA", m.ci ? format_double(m.ci->lower) : "NA",
                               m.ci ? format_double(m.ci->upper) : "NA", r.n_pairs, r.n_patients,
                               format_double(r.prevalence), format_double(r.threshold), r.resamples, r.seed);
        }
    }
    return out;
}

std::string roc_to_csv(std::span<const RocPoint> points, std::string_view provenance) {
    std::string out;
    if (!provenance.empty()) out += fmt::format("# {}\n", provenance);
    out += "fpr,tpr,threshold\n";
    for (const auto& p : points) {
        out += fmt::format("{},{},{}\n", format_double(p.fpr), format_double(p.tpr),
                           std::isinf(p.threshold) ? std::string("inf") : format_double(p.threshold));
    }
    return out;
}

std::string scored_rows_to_csv(std::span<const ScoredRow> rows, std::string_view provenance) {
    std::string out;
    if (!provenance.empty()) out += fmt::format("# {}\n", provenance);
    out += "record_id,patient_id,score,potassium,partition,ecg_timestamp\n";
    for (const auto& r : rows) {
        out += fmt::format("{},{},{},{},{},{}\n", r.pair.record_id, r.pair.patient_id, format_double(r.pair.score),
                           format_double(r.pair.potassium), r.partition, format_rfc3339(r.ecg_timestamp));
    }
    return out;
}

std::vector<ScoredRow> read_scored_pairs_csv(const std::filesystem::path& path) {
    const auto t = CsvTable::read(path);
    const auto c_rec = t.column("record_id"), c_pat = t.column("patient_id"), c_score = t.column("score"),
               c_k = t.column("potassium");
    const bool has_part = t.has_column("partition");
    const bool has_ts = t.has_column("ecg_timestamp");
    std::vector<ScoredRow> rows;
    rows.reserve(t.rows());
    for (std::size_t i = 0; i < t.rows(); ++i) {
        ScoredRow row;
        const double score = parse_double(t.at(i, c_score), "score");
        if (!std::isfinite(score) || score < 0.0 || score > 1.0) {
            throw ParseError("score", fmt::format("row {}: score must be finite and within [0, 1]", i + 1));
        }
        row.pair = make_scored_pair(t.at(i, c_rec), t.at(i, c_pat), score, parse_double(t.at(i, c_k), "potassium"));
        if (has_part) row.partition = t.at(i, t.column("partition"));
        if (has_ts) row.ecg_timestamp = parse_rfc3339(t.at(i, t.column("ecg_timestamp")));
        rows.push_back(std::move(row));
    }
    return rows;
}

// ---------------------------------------------------------------------------

TwoProportionTest two_proportion_z_test(std::size_t x1, std::size_t n1, std::size_t x2, std::size_t n2) {
    if (n1 == 0 || n2 == 0) throw ParameterError("two_proportion_z_test: empty group");
    if (x1 > n1 || x2 > n2) throw ParameterError("two_proportion_z_test: count exceeds group size");
    const double p1 = static_cast<double>(x1) / static_cast<double>(n1);
    const double p2 = static_cast<double>(x2) / static_cast<double>(n2);
    const double pooled = static_cast<double>(x1 + x2) / static_cast<double>(n1 + n2);
    const double var = pooled * (1.0 - pooled) * (1.0 / static_cast<double>(n1) + 1.0 / static_cast<double>(n2));
    if (!(var > 0.0)) return {0.0, 1.0};
    const double z = (p2 - p1) / std::sqrt(var);
    return {z, std::erfc(std::abs(z) / std::numbers::sqrt2)};
}

PhenotypeComparison compare_reference_negative(std::span<const ScoredPair> pairs, double tau,
                                               const std::map<std::string, ingest::ComorbidityProfile>& profiles) {
    using Flag = bool ingest::ComorbidityProfile::*;
    const std::pair<const char*, Flag> flags[] = {
        {"ckd", &ingest::ComorbidityProfile::ckd},
        {"heart_failure", &ingest::ComorbidityProfile::heart_failure},
        {"hypertension", &ingest::ComorbidityProfile::hypertension},
        {"diabetes", &ingest::ComorbidityProfile::diabetes},
        {"coronary_artery_disease", &ingest::ComorbidityProfile::coronary_artery_disease},
        {"stroke", &ingest::ComorbidityProfile::stroke},
    };
    PhenotypeComparison cmp;
    cmp.threshold = tau;
    std::vector<const ingest::ComorbidityProfile*> low, high;
    for (const auto& p : pairs) {
        if (p.label_primary) continue;
        const auto it = profiles.find(p.record_id);
        if (it == profiles.end()) {
            throw ParameterError("compare_reference_negative: no comorbidity profile for " + p.record_id);
        }
        (p.score >= tau ? high : low).push_back(&it->second);
    }
    if (low.empty()) throw ParameterError("compare_reference_negative: low-risk group is empty");
    if (high.empty()) throw ParameterError("compare_reference_negative: high-risk group is empty");
    for (const auto& [name, flag] : flags) {
        PhenotypeRow row;
        row.comorbidity = name;
        row.low_risk_n = low.size();
        row.high_risk_n = high.size();
        for (const auto* p : low) row.low_risk_count += p->*flag;
        for (const auto* p : high) row.high_risk_count += p->*flag;
        row.low_risk_prevalence = static_cast<double>(row.low_risk_count) / static_cast<double>(row.low_risk_n);
        row.high_risk_prevalence = static_cast<double>(row.high_risk_count) / static_cast<double>(row.high_risk_n);
        row.test = two_proportion_z_test(row.low_risk_count, row.low_risk_n, row.high_risk_count, row.high_risk_n);
        cmp.rows.push_back(std::move(row));
    }
    return cmp;
}

std::string phenotype_to_csv(const PhenotypeComparison& cmp, std::string_view provenance) {
    std::string out;
    if (!provenance.empty()) out += fmt::format("# {}\n", provenance);
    out += "comorbidity,low_risk_count,low_risk_n,low_risk_prevalence,high_risk_count,high_risk_n,"
           "high_risk_prevalence,z,p_value,threshold\n";
    for (const auto& r : cmp.rows) {
        out += fmt::format("{},{},{},{},{},{},{},{},{},{}\n", r.comorbidity, r.low_risk_count, r.low_risk_n,
                           format_double(r.low_risk_prevalence), r.high_risk_count, r.high_risk_n,
                           format_double(r.high_risk_prevalence), format_double(r.test.z),
                           format_double(r.test.p_value), format_double(cmp.threshold));
    }
    return out;
}

}  // namespace pocketk::eval

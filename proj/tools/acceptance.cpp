#include "pocketk/study.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <set>

namespace fs = std::filesystem;
using namespace pocketk;

namespace {

// Pinned tolerances.
constexpr double kAurocTolerance = 1e-12;
constexpr double kAurocBudgetSeconds = 5.0;
constexpr double kGradientTolerance = 1e-6;
constexpr double kPassbandDb = 1.0;
constexpr double kStopbandDb = -20.0;
constexpr double kMinInternalAuroc = 0.90;
constexpr double kMinNpv = 0.99;
constexpr double kPipelineBudgetSeconds = 300.0;
constexpr double kMaxCkdPValue = 0.05;
constexpr double kDeviceBudgetMs = 1000.0;
constexpr double kAggregationTolerance = 1e-15;

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string read_file(const fs::path& p) { return read_text_file(p); }

// ---------------------------------------------------------------------------

double brute_force_auroc(std::span<const double> s, std::span<const std::uint8_t> y) {
    double wins = 0.0;
    double n = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!y[i]) continue;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[j]) continue;
            n += 1.0;
            wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        }
    }
    return wins / n;
}

Outcome auroc_oracle() {
    Rng rng(derive_seed(1, 101));
    double worst = 0.0;
    double elapsed = 0.0;
    for (int k = 0; k < 200; ++k) {
        const std::size_t n = 2 + rng.below(49);
        std::vector<double> s(n);
        std::vector<std::uint8_t> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = static_cast<double>(rng.below(8)) / 8.0;
            y[i] = rng.bernoulli(0.4) ? 1 : 0;
        }
        y[0] = 1;
        y[1] = 0;
        const auto t0 = Clock::now();
        const double got = eval::auroc(s, y);
        elapsed += seconds_since(t0);
        worst = std::max(worst, std::abs(got - brute_force_auroc(s, y)));
    }
    return {worst <= kAurocTolerance && elapsed < kAurocBudgetSeconds,
            fmt::format("200 tied instances, max |diff| {:.3g} (tol {:g}), {:.4f} s", worst, kAurocTolerance,
                        elapsed)};
}

// ---------------------------------------------------------------------------

Outcome gradient_check() {
    Rng rng(derive_seed(1, 102));
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
        const std::size_t d = 1 + rng.below(6);
        const std::size_t n = 2 + rng.below(40);
        std::vector<double> params;
        for (std::size_t j = 0; j <= d; ++j) params.push_back(rng.normal(0.0, 1.0));
        std::vector<std::vector<double>> rows(n);
        std::vector<std::uint8_t> labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) rows[i].push_back(rng.normal(0.0, 1.5));
            labels[i] = rng.bernoulli(0.4) ? 1 : 0;
        }
        const auto lg = model::bce_loss_and_gradient(params, rows, labels);
        const double h = 1e-5;
        double diff2 = 0.0, norm2 = 0.0;
        for (std::size_t j = 0; j < params.size(); ++j) {
            auto up = params, dn = params;
            up[j] += h;
            dn[j] -= h;
            const double fd = (model::bce_loss_and_gradient(up, rows, labels).loss -
                               model::bce_loss_and_gradient(dn, rows, labels).loss) /
                              (2.0 * h);
            diff2 += (fd - lg.gradient[j]) * (fd - lg.gradient[j]);
            norm2 += std::max(fd * fd, lg.gradient[j] * lg.gradient[j]);
        }
        worst = std::max(worst, norm2 == 0.0 ? std::sqrt(diff2) : std::sqrt(diff2 / norm2));
    }
    return {worst < kGradientTolerance,
            fmt::format("100 instances, max relative error {:.3g} (tol {:g})", worst, kGradientTolerance)};
}

// ---------------------------------------------------------------------------

double central_peak_db(double freq, double fs, double seconds) {
    const auto n = static_cast<std::size_t>(seconds * fs);
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = std::sin(2.0 * M_PI * freq * static_cast<double>(i) / fs);
    const auto y = dsp::bandpass(x, fs);
    double peak = 0.0;
    for (std::size_t i = n / 4; i < 3 * n / 4; ++i) peak = std::max(peak, std::abs(y[i]));
    return 20.0 * std::log10(peak);
}

Outcome filter_spec() {
    bool ok = true;
    std::string detail;
    for (const double fs : {500.0, 1000.0}) {
        const double pass = central_peak_db(10.0, fs, 20.0);
        const double wander = central_peak_db(0.05, fs, 160.0);
        const double mains = central_peak_db(50.0, fs, 20.0);

        const std::size_t n = static_cast<std::size_t>(10.0 * fs), c = n / 2;
        std::vector<double> pulse(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double t = (static_cast<double>(i) - static_cast<double>(c)) / fs;
            pulse[i] = std::exp(-t * t / (2.0 * 0.02 * 0.02));
        }
        const auto y = dsp::bandpass(pulse, fs);
        const auto shift = static_cast<long>(std::max_element(y.begin(), y.end()) - y.begin()) - static_cast<long>(c);

        ok = ok && std::abs(pass) <= kPassbandDb && wander <= kStopbandDb && mains <= kStopbandDb && shift == 0;
        detail += fmt::format("{}fs {:g}: 10 Hz {:+.3f} dB, 0.05 Hz {:.1f} dB, 50 Hz {:.1f} dB, shift {}",
                              detail.empty() ? "" : "; ", fs, pass, wander, mains, shift);
    }
    return {ok, detail};
}

// ---------------------------------------------------------------------------

study::RunConfig config_in(const fs::path& dir) {
    auto cfg = study::RunConfig::defaults();
    cfg.data_dir = dir / "data";
    cfg.out_dir = dir / "run";
    return cfg;
}

Outcome leakage(const fs::path& work) {
    auto cfg = config_in(work / "leakage");
    cfg.dev_patients = 500;
    cfg.external_patients = 100;
    study::run_synth(cfg);
    study::run_pair(cfg);
    study::run_split(cfg);

    const auto dev_pairs = ingest::read_pairs_csv(cfg.out_dir / "pairs_dev.csv");
    std::map<std::string, std::pair<bool, bool>> sides;
    for (const auto& p : dev_pairs) {
        auto& s = sides[p.pair.patient_id];
        (p.pair.ecg_timestamp < cfg.cutoff ? s.first : s.second) = true;
    }
    const auto spanning = std::count_if(sides.begin(), sides.end(), [](const auto& e) {
        return e.second.first && e.second.second;
    });

    std::map<ingest::Partition, std::set<std::string>> members;
    for (const auto& p : ingest::read_pairs_csv(cfg.out_dir / "partitions.csv")) {
        if (p.partition && *p.partition != ingest::Partition::Excluded) members[*p.partition].insert(p.pair.patient_id);
    }
    std::size_t overlaps = 0;
    for (auto a = members.begin(); a != members.end(); ++a) {
        for (auto b = std::next(a); b != members.end(); ++b) {
            for (const auto& id : a->second) overlaps += b->second.count(id);
        }
    }
    bool reconciles = true;
    for (const auto& site : cfg.sites()) {
        const auto j = nlohmann::json::parse(read_file(cfg.out_dir / fmt::format("stard_{}.json", site)));
        reconciles = reconciles && j.value("reconciles", false);
    }
    return {spanning > 0 && members.size() == 5 && overlaps == 0 && reconciles,
            fmt::format("{} patients span the cutoff, {} partitions, {} shared patient ids, STARD {}", spanning,
                        members.size(), overlaps, reconciles ? "reconciles" : "does not reconcile")};
}

// ---------------------------------------------------------------------------

struct PipelineRun {
    study::RunConfig cfg;
    double seconds = 0.0;
    std::vector<eval::ScoredRow> rows;
    model::ModelWeights weights;
};

PipelineRun run_pipeline(const fs::path& work) {
    PipelineRun run{config_in(work / "default")};
    const auto t0 = Clock::now();
    for (const auto& stage : {study::run_synth, study::run_pair, study::run_split, study::run_train, study::run_eval,
                              study::run_explain, study::run_track, study::run_report}) {
        stage(run.cfg);
    }
    run.seconds = seconds_since(t0);
    run.rows = eval::read_scored_pairs_csv(run.cfg.out_dir / "scored_pairs.csv");
    run.weights = model::load_weights(run.cfg.out_dir / "weights.json");
    return run;
}

std::vector<eval::ScoredPair> pairs_in(const PipelineRun& run, ingest::Partition p) {
    std::vector<eval::ScoredPair> out;
    for (const auto& r : run.rows) {
        if (r.partition == ingest::partition_name(p)) out.push_back(r.pair);
    }
    return out;
}

Outcome end_to_end(const PipelineRun& run) {
    const auto internal = pairs_in(run, ingest::Partition::InternalTest);
    const auto external = pairs_in(run, ingest::Partition::ExternalValidation);
    const double primary = eval::auroc(internal, eval::Endpoint::Primary);
    const double severe = eval::auroc(internal, eval::Endpoint::Severe);
    const auto npv = eval::confusion_metrics(external, run.weights.frozen_threshold, eval::Endpoint::Primary).npv;

    std::array<std::vector<double>, study::kRiskBins.size()> bins;
    for (const auto& p : internal) bins[study::risk_bin(p.potassium)].push_back(p.score);
    bool monotone = true;
    std::string bin_text;
    double prev = -1.0;
    for (const auto& b : bins) {
        if (b.empty()) {
            monotone = false;
            bin_text += " NA";
            continue;
        }
        const double m = mean(b);
        monotone = monotone && m > prev;
        prev = m;
        bin_text += fmt::format(" {:.4f}", m);
    }
    const bool a = primary >= kMinInternalAuroc;
    const bool b = severe >= primary;
    const bool c = npv && *npv >= kMinNpv;
    const bool t = run.seconds < kPipelineBudgetSeconds;
    return {a && b && c && monotone && t,
            fmt::format("(a) internal AUROC {:.4f} >= {:.2f} {}; (b) severe {:.4f} >= primary {}; (c) external NPV "
                        "{} >= {:.2f} {}; (d) internal mean risk by K bin{} {}; runtime {:.1f} s",
                        primary, kMinInternalAuroc, a ? "ok" : "no", severe, b ? "ok" : "no",
                        npv ? fmt::format("{:.4f}", *npv) : "NA", kMinNpv, c ? "ok" : "no", bin_text,
                        monotone ? "ok" : "no", run.seconds)};
}

// ---------------------------------------------------------------------------

Outcome bootstrap_validity() {
    Rng rng(derive_seed(1, 106));
    std::vector<eval::ScoredPair> pairs;
    for (int p = 0; p < 200; ++p) {
        const auto pid = fmt::format("P{:04d}", p);
        const std::size_t n = 1 + rng.below(4);
        for (std::size_t i = 0; i < n; ++i) {
            const double k = rng.bernoulli(0.1) ? rng.uniform(5.6, 7.0) : rng.uniform(3.5, 5.4);
            pairs.push_back(eval::make_scored_pair(fmt::format("{}-{}", pid, i), pid,
                                                   0.1 * (k - 3.5) + rng.normal(0.0, 0.08), k));
        }
    }
    const std::uint64_t seed = 20160101;
    const auto a = eval::evaluate_endpoint("check", pairs, 0.15, eval::Endpoint::Primary, 2000, seed);
    const auto b = eval::evaluate_endpoint("check", pairs, 0.15, eval::Endpoint::Primary, 2000, seed);
    const bool reproducible = eval::report_to_json(a) == eval::report_to_json(b);
    bool brackets = true;
    for (const auto& m : a.metrics) {
        if (m.ci) brackets = brackets && m.ci->lower <= m.ci->point && m.ci->point <= m.ci->upper;
    }
    const std::vector<eval::ScoredPair> single{eval::make_scored_pair("r1", "solo", 0.9, 6.5),
                                               eval::make_scored_pair("r2", "solo", 0.1, 4.0)};
    const auto one = eval::clustered_bootstrap(
        single, [](std::span<const eval::ScoredPair> s) -> std::optional<double> {
            return eval::auroc(s, eval::Endpoint::Primary);
        },
        2000, seed);
    const bool degenerate = one.degenerate && one.lower == one.point && one.upper == one.point;
    const auto& auc = *a.metric("auroc").ci;
    return {reproducible && brackets && degenerate,
            fmt::format("B=2000 reports byte-identical: {}; all CIs bracket: {} (AUROC {:.4f} [{:.4f}, {:.4f}]); "
                        "single patient flagged degenerate: {}",
                        reproducible, brackets, auc.point, auc.lower, auc.upper, degenerate)};
}

// ---------------------------------------------------------------------------

Outcome explain_localization(const PipelineRun& run) {
    const auto j = nlohmann::json::parse(read_file(run.cfg.out_dir / "explain.json"));
    const double t = j.at("max_abs_difference_time_s").get<double>();
    const auto w = study::t_wave_window();
    const bool in = t >= w.lo_s && t <= w.hi_s;
    return {in, fmt::format("max |high - low| at {:+.3f} s, T window [{:.3f}, {:.3f}] s, {} vs {} beats", t, w.lo_s,
                            w.hi_s, j.at("high_risk_beats").get<std::size_t>(),
                            j.at("low_risk_beats").get<std::size_t>())};
}

Outcome phenotype_enrichment(const PipelineRun& run) {
    const auto j = nlohmann::json::parse(read_file(run.cfg.out_dir / "explain.json"));
    if (!j.contains("ckd_p_value")) return {false, "phenotype comparison not computed"};
    const double lo = j["ckd_low_risk_prevalence"].get<double>();
    const double hi = j["ckd_high_risk_prevalence"].get<double>();
    const double p = j["ckd_p_value"].get<double>();
    return {hi > lo && p < kMaxCkdPValue,
            fmt::format("CKD {:.3f} high-risk vs {:.3f} low-risk, p = {:.3g} (< {:g})", hi, lo, p, kMaxCkdPValue)};
}

// ---------------------------------------------------------------------------

class FixedScorer final : public model::Scorer {
public:
    explicit FixedScorer(std::vector<double> probs) : probs_(std::move(probs)) {}
    double score_clip(std::span<const double>, double) const override { return probs_[next_++ % probs_.size()]; }
    std::string name() const override { return "fixed"; }

private:
    std::vector<double> probs_;
    mutable std::size_t next_ = 0;
};

Outcome device_check(const PipelineRun& run) {
    const auto rec = study::synthesize_device_recording(4.1, derive_seed(1, 109));
    const auto bytes = encode_waveform(rec);
    const auto back = decode_waveform(bytes);
    const bool bit_exact = back.fs_hz == rec.fs_hz && back.samples.size() == rec.samples.size() &&
                           std::memcmp(back.samples.data(), rec.samples.data(), rec.samples.size() * sizeof(float)) ==
                               0 &&
                           encode_waveform(back) == bytes;

    const std::vector<double> probs{0.12, 0.47, 0.83};
    const auto stub = device::run_handheld(rec, FixedScorer(probs), 0.5);
    const double hand = (0.12 + 0.47 + 0.83) / 3.0;
    const bool mean_ok = stub.clips_segmented == 3 && stub.clip_probs == probs &&
                         std::abs(stub.risk - hand) <= kAggregationTolerance;

    const auto real = device::run_handheld(std::span<const std::uint8_t>(bytes), run.weights);
    const auto high = device::run_handheld(
        std::span<const std::uint8_t>(encode_waveform(study::synthesize_device_recording(6.9, derive_seed(1, 110)))),
        run.weights);
    const bool clips_ok = real.clips_segmented == 3 && real.clip_probs.size() == 3;
    const bool fast = real.latency_ms < kDeviceBudgetMs && high.latency_ms < kDeviceBudgetMs;
    return {bit_exact && mean_ok && clips_ok && fast,
            fmt::format("{} clips; stub mean {:.6f} vs hand {:.6f}; latency {:.2f} ms (< {:g}); wire round trip {}; "
                        "K 4.1 risk {:.4f}, K 6.9 risk {:.4f}, tau {:.4f}",
                        real.clips_segmented, stub.risk, hand, std::max(real.latency_ms, high.latency_ms),
                        kDeviceBudgetMs, bit_exact ? "bit-exact" : "differs", real.risk, high.risk,
                        run.weights.frozen_threshold)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pocketk acceptance checks"};
    std::string work = "acceptance_work";
    app.add_option("--work-dir", work, "scratch directory for generated cohorts and runs");
    CLI11_PARSE(app, argc, argv);

    const fs::path work_dir(work);
    fs::remove_all(work_dir);
    fs::create_directories(work_dir);

    int failures = 0;
    auto report = [&](int id, std::string_view name, const std::function<Outcome()>& check) {
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        if (!o.pass) ++failures;
        fmt::print("{} {} {}: {}\n", o.pass ? "PASS" : "FAIL", id, name, o.detail);
        std::fflush(stdout);
    };

    report(1, "auroc_oracle", auroc_oracle);
    report(2, "gradient_check", gradient_check);
    report(3, "filter_spec", filter_spec);
    report(4, "leakage_safety", [&] { return leakage(work_dir); });

    std::optional<PipelineRun> run;
    std::string run_error;
    try {
        run = run_pipeline(work_dir);
    } catch (const std::exception& e) {
        run_error = std::string("pipeline error: ") + e.what();
    }
    auto with_run = [&](const std::function<Outcome(const PipelineRun&)>& f) {
        return [&, f]() -> Outcome { return run ? f(*run) : Outcome{false, run_error}; };
    };
    report(5, "end_to_end", with_run(end_to_end));
    report(6, "bootstrap_validity", bootstrap_validity);
    report(7, "explain_localization", with_run(explain_localization));
    report(8, "phenotype_enrichment", with_run(phenotype_enrichment));
    report(9, "device_latency_roundtrip", with_run(device_check));

    fmt::print("{} of 9 criteria passed\n", 9 - failures);
    return failures == 0 ? 0 : 1;
}

#include "pocketk/longitudinal.hpp"

#include "pocketk/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <json.hpp>
#include <map>
#include <numeric>

namespace pocketk::longitudinal {

std::optional<Trajectory> track_patient(const std::string& patient_id, std::span<const eval::ScoredRow> rows,
                                        std::vector<std::string>* notices) {
    std::vector<const eval::ScoredRow*> mine;
    for (const auto& r : rows) {
        if (r.pair.patient_id == patient_id) mine.push_back(&r);
    }
    std::sort(mine.begin(), mine.end(), [](const auto* a, const auto* b) {
        return a->ecg_timestamp != b->ecg_timestamp ? a->ecg_timestamp < b->ecg_timestamp
                                                    : a->pair.record_id < b->pair.record_id;
    });
    Trajectory t{patient_id, {}};
    for (const auto* r : mine) {
        if (!t.points.empty() && t.points.back().timestamp == r->ecg_timestamp) {
            if (notices) {
                notices->push_back(fmt::format("{}: {} rejected, duplicate timestamp {}", patient_id,
                                               r->pair.record_id, format_rfc3339(r->ecg_timestamp)));
            }
            continue;
        }
        t.points.push_back({r->pair.record_id, r->ecg_timestamp, r->pair.potassium, r->pair.score});
    }
    if (t.points.size() < 2) {
        if (notices) notices->push_back(fmt::format("{}: {} pair(s), trajectory skipped", patient_id, t.points.size()));
        return std::nullopt;
    }
    return t;
}

std::vector<Trajectory> track_all(std::span<const eval::ScoredRow> rows, std::vector<std::string>* notices) {
    std::map<std::string, std::vector<eval::ScoredRow>> by_patient;
    for (const auto& r : rows) by_patient[r.pair.patient_id].push_back(r);
    std::vector<Trajectory> out;
    for (const auto& [id, own] : by_patient) {
        if (own.size() < 2) continue;  // silent: single-pair patients
        if (auto t = track_patient(id, own, notices)) out.push_back(std::move(*t));
    }
    return out;
}

namespace {

std::vector<double> midranks(std::span<const double> x) {
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(x.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
        i = j + 1;
    }
    return ranks;
}

std::vector<double> potassium_of(const Trajectory& t) {
    std::vector<double> k;
    for (const auto& p : t.points) k.push_back(p.potassium);
    return k;
}

std::size_t upward_crossings(const std::vector<double>& k) {
    std::size_t n = 0;
    for (std::size_t i = 1; i < k.size(); ++i) {
        n += !ingest::primary_label(k[i - 1]) && ingest::primary_label(k[i]);
    }
    return n;
}

}  // namespace

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ParameterError("spearman: series differ in length");
    if (x.size() < 2) return std::nullopt;
    const auto rx = midranks(x);
    const auto ry = midranks(y);
    const double mx = mean(rx), my = mean(ry);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return std::nullopt;
    return sxy / std::sqrt(sxx * syy);
}

std::string_view pattern_name(Pattern p) {
    switch (p) {
        case Pattern::Rise: return "rise";
        case Pattern::EpisodeRecovery: return "episode_recovery";
        case Pattern::Fluctuation: return "fluctuation";
        case Pattern::Decline: return "decline";
    }
    return "unknown";
}

bool matches(Pattern p, const Trajectory& t) {
    if (t.points.size() < kMinExemplarPoints) return false;
    const auto k = potassium_of(t);
    const auto high = [](double v) { return ingest::primary_label(v); };
    const bool up = std::adjacent_find(k.begin(), k.end(), std::greater<>()) == k.end();
    const bool down = std::adjacent_find(k.begin(), k.end(), std::less<>()) == k.end();
    const double peak = *std::max_element(k.begin(), k.end());
    switch (p) {
        case Pattern::Rise: return up && !high(k.front()) && high(k.back());
        case Pattern::Decline: return down && high(k.front()) && !high(k.back());
        case Pattern::EpisodeRecovery:
            return !high(k.front()) && !high(k.back()) && high(peak) && upward_crossings(k) == 1;
        case Pattern::Fluctuation: return upward_crossings(k) >= 2;
    }
    return false;
}

std::vector<Exemplar> select_exemplars(std::span<const Trajectory> trajectories) {
    std::vector<Exemplar> out;
    for (const Pattern p : kPatterns) {
        Exemplar e{p, std::nullopt, 0, std::nullopt};
        const Trajectory* chosen = nullptr;
        for (const auto& t : trajectories) {
            if (!matches(p, t)) continue;
            ++e.matches;
            if (!chosen || t.patient_id < chosen->patient_id) chosen = &t;
        }
        if (chosen) {
            e.patient_id = chosen->patient_id;
            std::vector<double> risk;
            for (const auto& pt : chosen->points) risk.push_back(pt.risk);
            e.spearman_k_risk = spearman(potassium_of(*chosen), risk);
        }
        out.push_back(std::move(e));
    }
    return out;
}

std::string trajectories_to_csv(std::span<const Trajectory> trajectories, std::string_view provenance) {
    std::string out;
    if (!provenance.empty()) out += fmt::format("# {}\n", provenance);
    out += "patient_id,record_id,timestamp,potassium_mmol_l,risk\n";
    for (const auto& t : trajectories) {
        for (const auto& p : t.points) {
            out += fmt::format("{},{},{},{},{}\n", t.patient_id, p.record_id, format_rfc3339(p.timestamp),
                               format_double(p.potassium), format_double(p.risk));
        }
    }
    return out;
}

std::string trajectory_to_csv(const Trajectory& t, std::string_view provenance) {
    std::string out;
    if (!provenance.empty()) out += fmt::format("# {}\n", provenance);
    out += "timestamp,potassium_mmol_l,risk\n";
    for (const auto& p : t.points) {
        out += fmt::format("{},{},{}\n", format_rfc3339(p.timestamp), format_double(p.potassium),
                           format_double(p.risk));
    }
    return out;
}

std::string exemplars_to_json(std::span<const Exemplar> exemplars, std::string_view provenance_json) {
    nlohmann::ordered_json j;
    nlohmann::ordered_json patterns = nlohmann::ordered_json::object();
    std::vector<std::string> absent;
    for (const auto& e : exemplars) {
        const std::string name(pattern_name(e.pattern));
        if (!e.patient_id) {
            absent.push_back(name);
            patterns[name] = nullptr;
            continue;
        }
        patterns[name] = {{"patient_id", *e.patient_id},
                          {"matching_patients", e.matches},
                          {"spearman_k_risk", e.spearman_k_risk ? nlohmann::ordered_json(*e.spearman_k_risk)
                                                                : nlohmann::ordered_json(nullptr)},
                          {"trajectory_file", "trajectories/" + *e.patient_id + ".csv"}};
    }
    j["patterns"] = patterns;
    j["absent"] = absent;
    j["min_points"] = kMinExemplarPoints;
    if (!provenance_json.empty()) j["provenance"] = nlohmann::ordered_json::parse(provenance_json);
    return j.dump(2) + "\n";
}

}  // namespace pocketk::longitudinal

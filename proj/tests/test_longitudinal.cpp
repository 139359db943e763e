#include "pocketk/longitudinal.hpp"

#include <doctest.h>

#include <json.hpp>

using namespace pocketk;
using namespace pocketk::longitudinal;

namespace {

eval::ScoredRow row(const std::string& pid, const std::string& rid, int day, double k, double risk) {
    return {eval::make_scored_pair(rid, pid, risk, k), "temporal_validation",
            parse_rfc3339("2022-01-01T10:00:00Z") + std::chrono::days{day}};
}

std::vector<eval::ScoredRow> series(const std::string& pid, const std::vector<double>& ks) {
    std::vector<eval::ScoredRow> out;
    for (std::size_t i = 0; i < ks.size(); ++i) {
        out.push_back(row(pid, pid + "-r" + std::to_string(i), static_cast<int>(30 * i), ks[i], ks[i] / 10.0));
    }
    return out;
}

}  // namespace

TEST_SUITE("longitudinal") {
    TEST_CASE("points are ordered in time") {
        const std::vector<eval::ScoredRow> rows{row("A", "r3", 20, 5.0, 0.3), row("A", "r1", 0, 4.0, 0.1),
                                                row("B", "x", 5, 4.4, 0.2), row("A", "r2", 10, 4.5, 0.2)};
        const auto t = track_patient("A", rows);
        REQUIRE(t.has_value());
        REQUIRE(t->points.size() == 3);
        CHECK(t->points[0].record_id == "r1");
        CHECK(t->points[1].record_id == "r2");
        CHECK(t->points[2].record_id == "r3");
        CHECK(t->points[2].risk == 0.3);
    }

    TEST_CASE("single-pair patients are skipped with a notice") {
        const std::vector<eval::ScoredRow> rows{row("B", "x", 5, 4.4, 0.2)};
        std::vector<std::string> notices;
        CHECK_FALSE(track_patient("B", rows, &notices).has_value());
        CHECK(notices.size() == 1);
        CHECK(track_all(rows).empty());
    }

    TEST_CASE("duplicate timestamps are rejected") {
        const std::vector<eval::ScoredRow> rows{row("A", "r1", 0, 4.0, 0.1), row("A", "r2", 0, 4.1, 0.1),
                                                row("A", "r3", 3, 4.2, 0.1)};
        std::vector<std::string> notices;
        const auto t = track_patient("A", rows, &notices);
        REQUIRE(t.has_value());
        CHECK(t->points.size() == 2);
        CHECK(t->points[0].record_id == "r1");
        CHECK_FALSE(notices.empty());
        for (std::size_t i = 1; i < t->points.size(); ++i) CHECK(t->points[i].timestamp > t->points[i - 1].timestamp);
    }

    TEST_CASE("spearman with ties") {
        CHECK(*spearman(std::vector<double>{1, 2, 3, 4}, std::vector<double>{10, 20, 30, 40}) == doctest::Approx(1.0));
        CHECK(*spearman(std::vector<double>{1, 2, 3, 4}, std::vector<double>{4, 3, 2, 1}) == doctest::Approx(-1.0));
        CHECK(*spearman(std::vector<double>{1, 2, 2, 3}, std::vector<double>{1, 2, 3, 4}) ==
              doctest::Approx(0.9486832980505138));
        CHECK_FALSE(spearman(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}).has_value());
        CHECK_FALSE(spearman(std::vector<double>{1}, std::vector<double>{1}).has_value());
    }

    TEST_CASE("pattern rules") {
        auto traj = [](const std::vector<double>& ks) { return *track_patient("P", series("P", ks)); };
        CHECK(matches(Pattern::Rise, traj({4.2, 4.6, 5.0, 5.5, 6.1, 6.8})));
        CHECK_FALSE(matches(Pattern::Rise, traj({4.2, 4.6, 4.4, 5.5, 6.1, 6.8})));
        CHECK(matches(Pattern::Decline, traj({6.8, 6.2, 5.7, 5.1, 4.6, 4.2})));
        CHECK(matches(Pattern::EpisodeRecovery, traj({4.3, 4.5, 6.5, 6.9, 5.0, 4.4})));
        CHECK_FALSE(matches(Pattern::EpisodeRecovery, traj({4.3, 5.9, 4.5, 6.2, 4.4, 4.0})));
        CHECK(matches(Pattern::Fluctuation, traj({4.3, 5.9, 4.5, 6.2, 4.4, 6.0})));
        CHECK_FALSE(matches(Pattern::Rise, traj({4.2, 5.0, 6.1})));
    }

    TEST_CASE("exemplar selection") {
        std::vector<eval::ScoredRow> rows;
        for (const auto& r : series("b-rise", {4.2, 4.6, 5.0, 5.5, 6.1, 6.8})) rows.push_back(r);
        for (const auto& r : series("a-rise", {4.0, 4.0, 5.2, 5.8})) rows.push_back(r);
        for (const auto& r : series("flat", {4.1, 4.1, 4.1, 4.1})) rows.push_back(r);
        const auto ex = select_exemplars(track_all(rows));
        REQUIRE(ex.size() == 4);
        CHECK(ex[0].pattern == Pattern::Rise);
        CHECK(ex[0].patient_id == std::optional<std::string>("a-rise"));
        CHECK(ex[0].matches == 2);
        CHECK(*ex[0].spearman_k_risk > 0.0);
        for (std::size_t i = 1; i < 4; ++i) CHECK_FALSE(ex[i].patient_id.has_value());
        CHECK(exemplars_to_json(ex) == exemplars_to_json(select_exemplars(track_all(rows))));
        const auto j = nlohmann::json::parse(exemplars_to_json(ex));
        CHECK(j["absent"].size() == 3);
    }

    TEST_CASE("all-flat cohort has no exemplars") {
        std::vector<eval::ScoredRow> rows;
        for (int p = 0; p < 5; ++p) {
            for (const auto& r : series("f" + std::to_string(p), {4.1, 4.2, 4.1, 4.2})) rows.push_back(r);
        }
        for (const auto& e : select_exemplars(track_all(rows))) CHECK_FALSE(e.patient_id.has_value());
    }

    TEST_CASE("csv forms") {
        const auto t = track_all(series("A", {4.0, 5.0}));
        const auto csv = trajectories_to_csv(t, "prov");
        CHECK(csv.rfind("# prov\n", 0) == 0);
        CHECK(csv.find("patient_id,record_id,timestamp,potassium_mmol_l,risk") != std::string::npos);
        const auto one = trajectory_to_csv(t[0]);
        CHECK(one.find("timestamp,potassium_mmol_l,risk") != std::string::npos);
        CHECK(one.find("2022-01-31T10:00:00Z,5,0.5") != std::string::npos);
    }
}

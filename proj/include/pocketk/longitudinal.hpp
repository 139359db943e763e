#pragma once

#include "pocketk/common.hpp"
#include "pocketk/eval.hpp"

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pocketk::longitudinal {

struct TrajectoryPoint {
    std::string record_id;
    Timestamp timestamp;
    double potassium = 0.0;
    double risk = 0.0;
};

/// Points strictly increasing in time.
struct Trajectory {
    std::string patient_id;
    std::vector<TrajectoryPoint> points;
};

/// Series for one patient from scored rows (other patients' rows are
/// ignored). Returns nullopt with a notice for fewer than two pairs. A pair
/// sharing a timestamp with an earlier one (by record id) is rejected with a
/// notice.
std::optional<Trajectory> track_patient(const std::string& patient_id, std::span<const eval::ScoredRow> rows,
                                        std::vector<std::string>* notices = nullptr);

/// Every patient with at least two pairs, ordered by patient id.
std::vector<Trajectory> track_all(std::span<const eval::ScoredRow> rows, std::vector<std::string>* notices = nullptr);

/// Rank correlation with midranks; nullopt when either side is constant or
/// fewer than two points are given.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

enum class Pattern { Rise, EpisodeRecovery, Fluctuation, Decline };
inline constexpr std::array<Pattern, 4> kPatterns = {Pattern::Rise, Pattern::EpisodeRecovery, Pattern::Fluctuation,
                                                     Pattern::Decline};
std::string_view pattern_name(Pattern p);

inline constexpr std::size_t kMinExemplarPoints = 4;

/// Rules over the potassium series k (at least kMinExemplarPoints points),
/// with the hyperkalemia line at 5.5 mmol/L:
///   rise             every step >= 0, k.front() <= 5.5 < k.back()
///   decline          every step <= 0, k.front() > 5.5 >= k.back()
///   episode_recovery k.front() <= 5.5, k.back() <= 5.5, max k > 5.5, one upward crossing
///   fluctuation      at least two upward crossings of 5.5
bool matches(Pattern p, const Trajectory& t);

struct Exemplar {
    Pattern pattern;
    std::optional<std::string> patient_id;  ///< nullopt: pattern absent
    std::size_t matches = 0;
    std::optional<double> spearman_k_risk;
};

/// Lowest matching patient id per pattern.
std::vector<Exemplar> select_exemplars(std::span<const Trajectory> trajectories);

std::string trajectories_to_csv(std::span<const Trajectory> trajectories, std::string_view provenance = {});
/// Single-patient form: timestamp, potassium_mmol_l, risk.
std::string trajectory_to_csv(const Trajectory& t, std::string_view provenance = {});
std::string exemplars_to_json(std::span<const Exemplar> exemplars, std::string_view provenance_json = {});

}  // namespace pocketk::longitudinal

#pragma once

#include "pocketk/common.hpp"
#include "pocketk/dsp.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pocketk::model {

inline constexpr std::size_t kNumFeatures = 5;
inline constexpr std::array<std::string_view, kNumFeatures> kFeatureNames = {
    "t_r_ratio", "qrs_duration_ms", "t_width_ms", "t_symmetry", "heart_rate_bpm"};

using FeatureArray = std::array<double, kNumFeatures>;

struct FeatureVector {
    double t_r_ratio = 0.0;
    double qrs_duration_ms = 0.0;
    double t_width_ms = 0.0;
    double t_symmetry = 0.0;  ///< (T peak - left half-max) / (right half-max - T peak)
    double heart_rate_bpm = 0.0;

    FeatureArray as_array() const { return {t_r_ratio, qrs_duration_ms, t_width_ms, t_symmetry, heart_rate_bpm}; }
};

class FeatureExtractionError : public QualityError {
public:
    using QualityError::QualityError;
};

/// Per-beat measurements on windowed beats, aggregated by median.
FeatureVector extract_features(std::span<const double> clip, const dsp::BeatSet& beats);
/// Detects beats first.
FeatureVector extract_features(std::span<const double> clip, double fs);

// ---------------------------------------------------------------------------
// Standardisation and loss
// ---------------------------------------------------------------------------

struct Standardizer {
    FeatureArray means{};
    FeatureArray sds{1.0, 1.0, 1.0, 1.0, 1.0};  ///< always > 0

    /// Sample SD per feature; a constant feature gets SD 1.
    static Standardizer fit(std::span<const FeatureArray> rows);
    FeatureArray apply(const FeatureArray& x) const;
};

inline constexpr double kLogitClamp = 30.0;

struct LossAndGradient {
    double loss = 0.0;
    std::vector<double> gradient;
};

/// Mean BCE of sigmoid(w . x + b). `params` holds the weights followed by
/// the intercept; the gradient uses the same layout. Logits are clamped to
/// +/-kLogitClamp and the gradient of a clamped sample is zero.
LossAndGradient bce_loss_and_gradient(std::span<const double> params, std::span<const std::vector<double>> rows,
                                      std::span<const std::uint8_t> labels);

class TrainingError : public Error {
public:
    using Error::Error;
};

struct AdamConfig {
    double lr = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;

    static AdamState zeros(std::size_t n) { return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)}; }
};

/// One bias-corrected Adam update at step t >= 1. Throws TrainingError on a
/// non-finite gradient, leaving params and state untouched.
void adam_step(std::vector<double>& params, std::span<const double> gradient, AdamState& state, int t,
               const AdamConfig& config);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
    std::string profile = "compact";
    double lr = 1e-2;
    int max_epochs = 200;
    int patience = 10;
    double decay = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;

    /// lr 1e-4, 30 epochs.
    static TrainConfig reference();
    /// lr 1e-2, 200 epochs.
    static TrainConfig compact();
    static TrainConfig for_profile(std::string_view name);
    void validate() const;
};

/// One clip; `group` is the record id used for recording-level scoring.
struct LabeledSample {
    std::string group;
    FeatureArray features{};
    bool label = false;
};

struct EpochRecord {
    int epoch = 0;
    double loss = 0.0;  ///< fine-tune loss after the epoch's update
    double lr = 0.0;    ///< rate used for the epoch's update
    double val_auroc = 0.0;
    bool is_best = false;
};

struct TrainingMetadata {
    std::string profile;
    int epochs_run = 0;
    int best_epoch = 0;
    double best_val_auroc = 0.0;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::size_t finetune_samples = 0;
    std::size_t selection_records = 0;
    double selection_sensitivity = 0.0;
    double selection_specificity = 0.0;
    bool threshold_degenerate = false;
};

struct ModelWeights {
    Standardizer standardizer;
    FeatureArray coefficients{};
    double intercept = 0.0;
    double frozen_threshold = 0.5;
    TrainingMetadata metadata;
};

struct TrainResult {
    ModelWeights weights;
    std::vector<EpochRecord> history;
};

/// Full-batch Adam on the fine-tune clips; plateau schedule and best-AUROC
/// checkpoint on recording-level model-selection scores; threshold frozen
/// on the same scores.
TrainResult train(std::span<const LabeledSample> finetune, std::span<const LabeledSample> selection,
                  const TrainConfig& config);

double predict_proba(const ModelWeights& weights, const FeatureArray& features);
double predict_proba(const ModelWeights& weights, const FeatureVector& features);

/// Mean of clip probabilities; the one recording-level aggregation rule.
double aggregate_risk(std::span<const double> clip_probabilities);

/// Mean clip probability per group, groups in first-seen order.
struct GroupScore {
    std::string group;
    double score = 0.0;
    bool label = false;
};
std::vector<GroupScore> score_groups(const ModelWeights& weights, std::span<const LabeledSample> samples);

struct ThresholdChoice {
    double tau = 0.5;
    double sensitivity = 0.0;
    double specificity = 0.0;
    double youden_j = 0.0;
    bool degenerate = false;  ///< max J <= 0
};

/// Maximises Youden's J over midpoints between consecutive distinct scores
/// (plus the lowest score itself); ties go to higher sensitivity.
ThresholdChoice freeze_threshold(std::span<const double> scores, std::span<const std::uint8_t> labels);

std::string weights_to_json(const ModelWeights& weights, std::string_view provenance_json = {});
ModelWeights weights_from_json(std::string_view text);
void save_weights(const std::filesystem::path& path, const ModelWeights& weights, std::string_view provenance_json = {});
ModelWeights load_weights(const std::filesystem::path& path);

std::string history_to_csv(std::span<const EpochRecord> history, std::string_view provenance = {});

// ---------------------------------------------------------------------------
// Scorer interface
// ---------------------------------------------------------------------------

/// Maps one preprocessed clip to a probability. Evaluation only consumes
/// the resulting scores.
class Scorer {
public:
    virtual ~Scorer() = default;
    virtual double score_clip(std::span<const double> clip, double fs) const = 0;
    virtual std::string name() const = 0;
};

class LogisticScorer final : public Scorer {
public:
    explicit LogisticScorer(ModelWeights weights) : weights_(std::move(weights)) {}
    double score_clip(std::span<const double> clip, double fs) const override;
    std::string name() const override { return "logistic"; }
    const ModelWeights& weights() const { return weights_; }

private:
    ModelWeights weights_;
};

}  // namespace pocketk::model

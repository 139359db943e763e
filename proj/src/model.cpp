#include "pocketk/model.hpp"

#include "pocketk/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <json.hpp>
#include <map>
#include <optional>

namespace pocketk::model {

namespace {

std::size_t samples_for(double seconds, double fs) {
    return static_cast<std::size_t>(std::lround(seconds * fs));
}

struct BeatMeasurement {
    double t_r_ratio;
    double qrs_ms;
    double t_width_ms;
    double t_symmetry;
};

// Interpolated index where x - base crosses `level` between i and j = i +/- 1.
double crossing(std::span<const double> x, double base, double level, std::size_t inside, std::size_t outside) {
    const double a = x[inside] - base - level;
    const double b = x[outside] - base - level;
    const double frac = a / (a - b);
    return static_cast<double>(inside) + frac * (static_cast<double>(outside) - static_cast<double>(inside));
}

std::optional<BeatMeasurement> measure_beat(std::span<const double> x, std::size_t r, const dsp::BeatSet& beats) {
    const double fs = beats.fs;
    const std::size_t n = x.size();
    const std::size_t base_lo = samples_for(0.125, fs);
    const std::size_t base_hi = samples_for(0.085, fs);
    if (r < base_lo) return std::nullopt;
    const double base = median(std::vector<double>(x.begin() + static_cast<std::ptrdiff_t>(r - base_lo),
                                                   x.begin() + static_cast<std::ptrdiff_t>(r - base_hi + 1)));
    const double r_amp = x[r] - base;
    if (!(r_amp > 0.0)) return std::nullopt;

    // QRS: walk outwards until a 10 ms run stays within 5% of R of the baseline.
    const double quiet = 0.05 * r_amp;
    const std::size_t run = std::max<std::size_t>(1, samples_for(0.010, fs));
    const std::size_t cap = samples_for(0.150, fs);
    std::size_t onset = r >= cap ? r - cap : 0;
    for (std::size_t k = 1, streak = 0; k <= cap && k <= r; ++k) {
        streak = std::abs(x[r - k] - base) < quiet ? streak + 1 : 0;
        if (streak == run) {
            onset = r - k + run - 1;
            break;
        }
    }
    std::size_t offset = std::min(n - 1, r + cap);
    for (std::size_t k = 1, streak = 0; k <= cap && r + k < n; ++k) {
        streak = std::abs(x[r + k] - base) < quiet ? streak + 1 : 0;
        if (streak == run) {
            offset = r + k - run + 1;
            break;
        }
    }
    const double qrs_ms = static_cast<double>(offset - onset) / fs * 1000.0;

    const std::size_t t_lo = r + samples_for(0.120, fs);
    const std::size_t t_hi = std::min({r + samples_for(0.450, fs), r + beats.post - 1, n - 1});
    if (t_lo >= t_hi) return std::nullopt;
    std::size_t tp = t_lo;
    for (std::size_t i = t_lo; i <= t_hi; ++i) {
        if (x[i] > x[tp]) tp = i;
    }
    const double t_amp = x[tp] - base;
    if (!(t_amp > 0.0) || tp == t_lo || tp == t_hi) return std::nullopt;
    const double half = 0.5 * t_amp;
    std::size_t left = tp;
    while (left > t_lo && x[left - 1] - base > half) --left;
    std::size_t right = tp;
    while (right < t_hi && x[right + 1] - base > half) ++right;
    if (left == t_lo || right == t_hi) return std::nullopt;
    const double l = crossing(x, base, half, left, left - 1);
    const double rt = crossing(x, base, half, right, right + 1);
    const double peak = static_cast<double>(tp);
    if (!(rt - peak > 0.0) || !(peak - l > 0.0)) return std::nullopt;
    return BeatMeasurement{t_amp / r_amp, qrs_ms, (rt - l) / fs * 1000.0, (peak - l) / (rt - peak)};
}

}  // namespace

FeatureVector extract_features(std::span<const double> clip, const dsp::BeatSet& beats) {
    if (beats.windowed.empty()) throw FeatureExtractionError("no complete beats in clip");
    std::vector<double> ratio, qrs, width, symmetry;
    for (const std::size_t r : beats.windowed) {
        if (const auto m = measure_beat(clip, r, beats)) {
            ratio.push_back(m->t_r_ratio);
            qrs.push_back(m->qrs_ms);
            width.push_back(m->t_width_ms);
            symmetry.push_back(m->t_symmetry);
        }
    }
    if (ratio.empty()) throw FeatureExtractionError("no measurable beats in clip");
    if (beats.r_peaks.size() < 2) throw FeatureExtractionError("heart rate needs two R peaks");
    std::vector<double> rr;
    for (std::size_t i = 1; i < beats.r_peaks.size(); ++i) {
        rr.push_back(static_cast<double>(beats.r_peaks[i] - beats.r_peaks[i - 1]) / beats.fs);
    }
    FeatureVector f;
    f.t_r_ratio = median(std::move(ratio));
    f.qrs_duration_ms = median(std::move(qrs));
    f.t_width_ms = median(std::move(width));
    f.t_symmetry = median(std::move(symmetry));
    f.heart_rate_bpm = 60.0 / median(std::move(rr));
    if (!(f.heart_rate_bpm > 20.0 && f.heart_rate_bpm < 250.0)) {
        throw FeatureExtractionError(fmt::format("heart rate {:.1f} bpm outside (20, 250)", f.heart_rate_bpm));
    }
    for (const double v : f.as_array()) {
        if (!std::isfinite(v)) throw FeatureExtractionError("non-finite feature");
    }
    if (!(f.qrs_duration_ms > 0.0)) throw FeatureExtractionError("zero QRS duration");
    return f;
}

FeatureVector extract_features(std::span<const double> clip, double fs) {
    return extract_features(clip, dsp::detect_r_peaks(clip, fs));
}

// ---------------------------------------------------------------------------

Standardizer Standardizer::fit(std::span<const FeatureArray> rows) {
    if (rows.empty()) throw ParameterError("standardizer: no rows");
    Standardizer s;
    std::vector<double> col(rows.size());
    for (std::size_t j = 0; j < kNumFeatures; ++j) {
        for (std::size_t i = 0; i < rows.size(); ++i) col[i] = rows[i][j];
        s.means[j] = mean(col);
        const double sd = sample_sd(col);
        s.sds[j] = sd > 0.0 ? sd : 1.0;
    }
    return s;
}

FeatureArray Standardizer::apply(const FeatureArray& x) const {
    FeatureArray z;
    for (std::size_t j = 0; j < kNumFeatures; ++j) z[j] = (x[j] - means[j]) / sds[j];
    return z;
}

LossAndGradient bce_loss_and_gradient(std::span<const double> params, std::span<const std::vector<double>> rows,
                                      std::span<const std::uint8_t> labels) {
    if (rows.size() != labels.size()) throw ParameterError("bce: rows and labels differ in length");
    if (rows.empty()) throw ParameterError("bce: no samples");
    if (params.empty()) throw ParameterError("bce: no parameters");
    const std::size_t d = params.size() - 1;
    LossAndGradient out;
    out.gradient.assign(params.size(), 0.0);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != d) throw ParameterError("bce: row width does not match parameters");
        double z = params[d];
        for (std::size_t j = 0; j < d; ++j) z += params[j] * rows[i][j];
        const bool clamped = std::abs(z) > kLogitClamp;
        z = std::clamp(z, -kLogitClamp, kLogitClamp);
        const double y = labels[i] != 0 ? 1.0 : 0.0;
        // log(1 + e^z) - y z, evaluated stably.
        const double softplus = z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
        out.loss += softplus - y * z;
        if (clamped) continue;
        const double residual = 1.0 / (1.0 + std::exp(-z)) - y;
        for (std::size_t j = 0; j < d; ++j) out.gradient[j] += residual * rows[i][j];
        out.gradient[d] += residual;
    }
    const auto n = static_cast<double>(rows.size());
    out.loss /= n;
    for (auto& g : out.gradient) g /= n;
    return out;
}

void adam_step(std::vector<double>& params, std::span<const double> gradient, AdamState& state, int t,
               const AdamConfig& config) {
    if (t < 1) throw ParameterError("adam_step: t must be >= 1");
    if (gradient.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
        throw ParameterError("adam_step: size mismatch");
    }
    for (std::size_t i = 0; i < gradient.size(); ++i) {
        if (!std::isfinite(gradient[i])) {
            throw TrainingError(fmt::format("non-finite gradient component {} at step {}", i, t));
        }
    }
    const double c1 = 1.0 - std::pow(config.beta1, t);
    const double c2 = 1.0 - std::pow(config.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * gradient[i];
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * gradient[i] * gradient[i];
        const double m_hat = state.m[i] / c1;
        const double v_hat = state.v[i] / c2;
        params[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
}

// ---------------------------------------------------------------------------

TrainConfig TrainConfig::reference() {
    TrainConfig c;
    c.profile = "reference";
    c.lr = 1e-4;
    c.max_epochs = 30;
    return c;
}

TrainConfig TrainConfig::compact() {
    return TrainConfig{};
}

TrainConfig TrainConfig::for_profile(std::string_view name) {
    if (name == "reference") return reference();
    if (name == "compact") return compact();
    throw ParameterError("unknown training profile '" + std::string(name) + "' (expected reference or compact)");
}

void TrainConfig::validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ParameterError("train: lr must be > 0");
    if (max_epochs < 1) throw ParameterError("train: max_epochs must be >= 1");
    if (patience < 1) throw ParameterError("train: patience must be >= 1");
    if (!(decay > 0.0 && decay < 1.0)) throw ParameterError("train: decay must lie in (0, 1)");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ParameterError("train: Adam betas must lie in [0, 1)");
    }
    if (!(eps > 0.0)) throw ParameterError("train: eps must be > 0");
}

namespace {

double linear_score(const ModelWeights& w, const FeatureArray& x) {
    const FeatureArray z = w.standardizer.apply(x);
    double s = w.intercept;
    for (std::size_t j = 0; j < kNumFeatures; ++j) s += w.coefficients[j] * z[j];
    return std::clamp(s, -kLogitClamp, kLogitClamp);
}

void unpack(const std::vector<double>& params, ModelWeights& w) {
    std::copy_n(params.begin(), kNumFeatures, w.coefficients.begin());
    w.intercept = params[kNumFeatures];
}

double group_auroc(const std::vector<GroupScore>& groups) {
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    for (const auto& g : groups) {
        scores.push_back(g.score);
        labels.push_back(g.label ? 1 : 0);
    }
    return eval::auroc(scores, labels);
}

}  // namespace

double predict_proba(const ModelWeights& weights, const FeatureArray& features) {
    for (const double v : features) {
        if (!std::isfinite(v)) throw ParameterError("predict_proba: non-finite feature");
    }
    return 1.0 / (1.0 + std::exp(-linear_score(weights, features)));
}

double predict_proba(const ModelWeights& weights, const FeatureVector& features) {
    return predict_proba(weights, features.as_array());
}

double aggregate_risk(std::span<const double> clip_probabilities) {
    if (clip_probabilities.empty()) throw ParameterError("aggregate_risk: no clip probabilities");
    return mean(clip_probabilities);
}

std::vector<GroupScore> score_groups(const ModelWeights& weights, std::span<const LabeledSample> samples) {
    std::vector<GroupScore> out;
    std::vector<std::vector<double>> probs;
    std::map<std::string, std::size_t> slot;
    for (const auto& s : samples) {
        const auto [it, fresh] = slot.try_emplace(s.group, out.size());
        if (fresh) {
            out.push_back({s.group, 0.0, s.label});
            probs.emplace_back();
        }
        probs[it->second].push_back(predict_proba(weights, s.features));
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i].score = aggregate_risk(probs[i]);
    return out;
}

ThresholdChoice freeze_threshold(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    if (scores.size() != labels.size()) throw ParameterError("freeze_threshold: scores and labels differ in length");
    std::vector<std::pair<double, bool>> sorted;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i])) throw ParameterError("freeze_threshold: non-finite score");
        sorted.emplace_back(scores[i], labels[i] != 0);
        n_pos += labels[i] != 0;
    }
    const std::size_t n_neg = sorted.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw UndefinedMetricError("freeze_threshold: both classes must be present");
    std::sort(sorted.begin(), sorted.end());

    // Cut k calls everything from the k-th distinct score upward positive.
    ThresholdChoice best;
    bool have = false;
    std::size_t below_pos = 0, below_neg = 0;
    for (std::size_t i = 0; i < sorted.size();) {
        const double tau = i == 0 ? sorted[0].first : 0.5 * (sorted[i - 1].first + sorted[i].first);
        const double sens = static_cast<double>(n_pos - below_pos) / static_cast<double>(n_pos);
        const double spec = static_cast<double>(below_neg) / static_cast<double>(n_neg);
        const double j = sens + spec - 1.0;
        if (!have || j > best.youden_j || (j == best.youden_j && sens > best.sensitivity)) {
            best = {tau, sens, spec, j, false};
            have = true;
        }
        const double v = sorted[i].first;
        while (i < sorted.size() && sorted[i].first == v) {
            (sorted[i].second ? below_pos : below_neg) += 1;
            ++i;
        }
    }
    best.degenerate = !(best.youden_j > 0.0);
    return best;
}

TrainResult train(std::span<const LabeledSample> finetune, std::span<const LabeledSample> selection,
                  const TrainConfig& config) {
    config.validate();
    if (finetune.empty()) throw TrainingError("fine-tune set is empty");
    if (selection.empty()) throw TrainingError("model-selection set is empty");

    std::vector<FeatureArray> raw;
    raw.reserve(finetune.size());
    for (const auto& s : finetune) raw.push_back(s.features);
    TrainResult result;
    ModelWeights& w = result.weights;
    w.standardizer = Standardizer::fit(raw);

    std::vector<std::vector<double>> rows;
    std::vector<std::uint8_t> labels;
    for (const auto& s : finetune) {
        const auto z = w.standardizer.apply(s.features);
        rows.emplace_back(z.begin(), z.end());
        labels.push_back(s.label ? 1 : 0);
    }

    {
        bool pos = false, neg = false;
        for (const auto& s : selection) (s.label ? pos : neg) = true;
        if (!(pos && neg)) throw TrainingError("model-selection set has a single class; AUROC is undefined");
    }

    Rng rng(derive_seed(config.seed, 0));
    std::vector<double> params(kNumFeatures + 1);
    for (auto& p : params) p = rng.normal(0.0, 0.01);
    // Intercept starts at the fine-tune log-odds.
    {
        const double n = static_cast<double>(labels.size());
        double pos = 0.0;
        for (const auto l : labels) pos += l;
        const double prior = std::clamp(pos / n, 0.5 / n, 1.0 - 0.5 / n);
        params[kNumFeatures] = std::log(prior / (1.0 - prior));
    }
    AdamState state = AdamState::zeros(params.size());
    AdamConfig adam{config.lr, config.beta1, config.beta2, config.eps};

    ModelWeights probe = w;
    std::vector<double> best_params = params;
    double best_auroc = -1.0;
    int best_epoch = 0;
    int stale = 0;
    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        const auto lg = bce_loss_and_gradient(params, rows, labels);
        adam_step(params, lg.gradient, state, epoch, adam);
        unpack(params, probe);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = adam.lr;
        rec.loss = bce_loss_and_gradient(params, rows, labels).loss;
        rec.val_auroc = group_auroc(score_groups(probe, selection));
        if (rec.val_auroc > best_auroc) {
            best_auroc = rec.val_auroc;
            best_epoch = epoch;
            best_params = params;
            rec.is_best = true;
            stale = 0;
        } else if (++stale >= config.patience) {
            adam.lr *= config.decay;
            stale = 0;
        }
        result.history.push_back(rec);
    }
    // Only the final best flag survives.
    for (auto& rec : result.history) rec.is_best = rec.epoch == best_epoch;

    unpack(best_params, w);
    const auto groups = score_groups(w, selection);
    std::vector<double> scores;
    std::vector<std::uint8_t> group_labels;
    for (const auto& g : groups) {
        scores.push_back(g.score);
        group_labels.push_back(g.label ? 1 : 0);
    }
    const auto tau = freeze_threshold(scores, group_labels);
    w.frozen_threshold = tau.tau;
    w.metadata.profile = config.profile;
    w.metadata.epochs_run = config.max_epochs;
    w.metadata.best_epoch = best_epoch;
    w.metadata.best_val_auroc = best_auroc;
    w.metadata.seed = config.seed;
    w.metadata.finetune_samples = finetune.size();
    w.metadata.selection_records = groups.size();
    w.metadata.selection_sensitivity = tau.sensitivity;
    w.metadata.selection_specificity = tau.specificity;
    w.metadata.threshold_degenerate = tau.degenerate;
    if (!(w.frozen_threshold > 0.0 && w.frozen_threshold < 1.0)) {
        throw TrainingError(fmt::format("frozen threshold {} outside (0, 1)", w.frozen_threshold));
    }
    return result;
}

// ---------------------------------------------------------------------------

std::string weights_to_json(const ModelWeights& w, std::string_view provenance_json) {
    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    j["feature_names"] = std::vector<std::string>(kFeatureNames.begin(), kFeatureNames.end());
    j["standardizer"] = {{"means", w.standardizer.means}, {"sds", w.standardizer.sds}};
    j["coefficients"] = w.coefficients;
    j["intercept"] = w.intercept;
    j["frozen_threshold"] = w.frozen_threshold;
    const auto& m = w.metadata;
    j["training"] = {{"profile", m.profile},
                     {"epochs_run", m.epochs_run},
                     {"best_epoch", m.best_epoch},
                     {"best_model_selection_auroc", m.best_val_auroc},
                     {"config_hash", m.config_hash},
                     {"seed", m.seed},
                     {"finetune_samples", m.finetune_samples},
                     {"model_selection_records", m.selection_records},
                     {"model_selection_sensitivity", m.selection_sensitivity},
                     {"model_selection_specificity", m.selection_specificity},
                     {"threshold_degenerate", m.threshold_degenerate}};
    if (!provenance_json.empty()) j["provenance"] = nlohmann::ordered_json::parse(provenance_json);
    return j.dump(2) + "\n";
}

ModelWeights weights_from_json(std::string_view text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("weights", e.what());
    }
    try {
        if (j.at("schema_version").get<int>() != 1) throw ParseError("schema_version", "unsupported weights schema");
        const auto names = j.at("feature_names").get<std::vector<std::string>>();
        if (names.size() != kNumFeatures || !std::equal(names.begin(), names.end(), kFeatureNames.begin())) {
            throw ParseError("feature_names", "feature list does not match this build");
        }
        ModelWeights w;
        w.standardizer.means = j.at("standardizer").at("means").get<FeatureArray>();
        w.standardizer.sds = j.at("standardizer").at("sds").get<FeatureArray>();
        for (const double sd : w.standardizer.sds) {
            if (!(sd > 0.0)) throw ParseError("standardizer.sds", "SDs must be > 0");
        }
        w.coefficients = j.at("coefficients").get<FeatureArray>();
        w.intercept = j.at("intercept").get<double>();
        w.frozen_threshold = j.at("frozen_threshold").get<double>();
        if (!(w.frozen_threshold > 0.0 && w.frozen_threshold < 1.0)) {
            throw ParseError("frozen_threshold", "must lie in (0, 1)");
        }
        const auto& t = j.at("training");
        auto& m = w.metadata;
        m.profile = t.at("profile").get<std::string>();
        m.epochs_run = t.at("epochs_run").get<int>();
        m.best_epoch = t.at("best_epoch").get<int>();
        m.best_val_auroc = t.at("best_model_selection_auroc").get<double>();
        m.config_hash = t.at("config_hash").get<std::string>();
        m.seed = t.at("seed").get<std::uint64_t>();
        m.finetune_samples = t.at("finetune_samples").get<std::size_t>();
        m.selection_records = t.at("model_selection_records").get<std::size_t>();
        m.selection_sensitivity = t.at("model_selection_sensitivity").get<double>();
        m.selection_specificity = t.at("model_selection_specificity").get<double>();
        m.threshold_degenerate = t.at("threshold_degenerate").get<bool>();
        return w;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("weights", e.what());
    }
}

void save_weights(const std::filesystem::path& path, const ModelWeights& weights, std::string_view provenance_json) {
    write_text_file(path, weights_to_json(weights, provenance_json));
}

ModelWeights load_weights(const std::filesystem::path& path) {
    return weights_from_json(read_text_file(path));
}

std::string history_to_csv(std::span<const EpochRecord> history, std::string_view provenance) {
    std::string out;
    if (!provenance.empty()) out += fmt::format("# {}\n", provenance);
    out += "epoch,loss,lr,val_auroc,is_best\n";
    for (const auto& r : history) {
        out += fmt::format("{},{},{},{},{}\n", r.epoch, format_double(r.loss), format_double(r.lr),
                           format_double(r.val_auroc), r.is_best ? 1 : 0);
    }
    return out;
}

double LogisticScorer::score_clip(std::span<const double> clip, double fs) const {
    return predict_proba(weights_, extract_features(clip, fs));
}

}  // namespace pocketk::model

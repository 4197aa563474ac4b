#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "rlsum/classifier.hpp"
#include "rlsum/errors.hpp"
#include "rlsum/matrix.hpp"

namespace rlsum {

struct RewardConfig {
    double eta = 0.15;           // rank-change scaling inside the tanh
    bool enable_global = true;
    bool enable_local = true;
    bool enable_unsup = true;
    double discard_bonus = 0.05; // paid on every intermediate discard
    double correct_reward = 1.0;
    double wrong_penalty = -5.0;

    void validate() const {
        if (eta <= 0.0) throw ConfigError("RewardConfig: eta must be positive");
    }
};

struct RewardBreakdown {
    double global = 0.0;
    double local = 0.0;
    double unsup = 0.0;
    double total = 0.0;
};

enum class StepKind { Intermediate, Terminal };

// Terminal recognisability: the configured reward if the predicted category
// matches the label, the (stronger) penalty otherwise.
inline double reward_global(int yhat, int y, const RewardConfig& cfg = {}) {
    return yhat == y ? cfg.correct_reward : cfg.wrong_penalty;
}

// Dense per-discard reward: a small removal bonus plus tanh of the rank
// improvement scaled by eta. Keeping leaves the state unchanged, so both
// terms vanish and no reward is paid.
inline double reward_local(int action, int rank_before, int rank_after, double eta,
                           double discard_bonus = 0.05) {
    if (eta <= 0.0) throw ConfigError("reward_local: eta must be positive");
    if (action == 1) return 0.0;
    return discard_bonus + std::tanh(static_cast<double>(rank_before - rank_after) / eta);
}

// Diversity-representativeness reward over the kept frame set. Rows are
// expected unit-normalised; cosine dissimilarity is 1 - dot, and a zero row
// counts as dissimilarity 1. A single kept frame has diversity 0.
inline double reward_dr(const Matrix& features, const std::vector<std::uint32_t>& kept) {
    if (kept.empty()) throw EmptyInputError("reward_dr: empty kept set");
    const std::size_t D = features.cols;
    for (std::uint32_t f : kept)
        if (f >= features.rows) throw ValidationError("reward_dr: kept index out of range");

    double diversity = 0.0;
    if (kept.size() > 1) {
        for (std::size_t i = 0; i < kept.size(); ++i) {
            const double* a = features.row(kept[i]);
            for (std::size_t j = 0; j < kept.size(); ++j) {
                if (i == j) continue;
                const double* b = features.row(kept[j]);
                double dot = 0.0, na = 0.0, nb = 0.0;
                for (std::size_t d = 0; d < D; ++d) {
                    dot += a[d] * b[d];
                    na += a[d] * a[d];
                    nb += b[d] * b[d];
                }
                diversity += (na == 0.0 || nb == 0.0) ? 1.0 : 1.0 - dot;
            }
        }
        diversity /= static_cast<double>(kept.size() * (kept.size() - 1));
    }

    double mean_min_dist = 0.0;
    for (std::size_t t = 0; t < features.rows; ++t) {
        const double* x = features.row(t);
        double best = std::numeric_limits<double>::infinity();
        for (std::uint32_t f : kept) {
            const double* k = features.row(f);
            double sq = 0.0;
            for (std::size_t d = 0; d < D; ++d) {
                const double diff = x[d] - k[d];
                sq += diff * diff;
            }
            best = std::min(best, std::sqrt(sq));
        }
        mean_min_dist += best;
    }
    mean_min_dist /= static_cast<double>(features.rows);

    return diversity + std::exp(-mean_min_dist);
}

// Combines the per-step components: intermediate steps carry only the local
// reward, terminal steps carry global + unsupervised with unit weights.
inline RewardBreakdown assemble_reward(StepKind kind, const RewardConfig& cfg,
                                       std::optional<double> global, std::optional<double> local,
                                       std::optional<double> unsup) {
    RewardBreakdown out;
    if (kind == StepKind::Intermediate) {
        if (global.has_value() || unsup.has_value())
            throw StateError("assemble_reward: terminal components supplied at an intermediate step");
        if (cfg.enable_local && local.has_value()) {
            out.local = *local;
            out.total += out.local;
        }
    } else {
        if (cfg.enable_global && global.has_value()) {
            out.global = *global;
            out.total += out.global;
        }
        if (cfg.enable_unsup && unsup.has_value()) {
            out.unsup = *unsup;
            out.total += out.unsup;
        }
    }
    return out;
}

// Per-episode reward bookkeeping. Keeps the classifier posterior for the
// current retained set so the classifier runs exactly once per discard (and
// never for keeps), plus once at reset.
class EpisodeRewards {
public:
    EpisodeRewards(const RewardConfig& cfg, const ClassifierModel* classifier, const Matrix& features,
                   int label)
        : cfg_(cfg), classifier_(classifier), features_(&features), label_(label) {
        cfg_.validate();
        if ((cfg_.enable_global || cfg_.enable_local) && classifier_ == nullptr)
            throw ConfigError("EpisodeRewards: recognisability rewards need a classifier");
        if ((cfg_.enable_global || cfg_.enable_local) && label_ < 0)
            throw ConfigError("EpisodeRewards: recognisability rewards need a labelled video");
    }

    bool needs_classifier() const { return cfg_.enable_global || cfg_.enable_local; }

    void begin(const std::vector<std::uint32_t>& initial_retained) {
        if (cfg_.enable_local) {
            probs_ = classifier_->classify(*features_, initial_retained);
            rank_ = rank_of_true(probs_, static_cast<std::size_t>(label_));
        }
    }

    struct StepOutcome {
        RewardBreakdown reward;
        std::optional<int> rank_before;
        std::optional<int> rank_after;
        std::optional<bool> recognised;  // terminal only, when a classifier is in play
    };

    // Called once per decision, after the environment applied the action.
    // The local reward classifies once per discard and never for keeps; the
    // cached posterior then already covers the terminal set, so the global
    // reward costs no extra call unless the local reward is disabled.
    StepOutcome on_step(int action, const std::vector<std::uint32_t>& retained_after, bool terminal) {
        StepOutcome out;
        if (cfg_.enable_local) {
            out.rank_before = rank_;
            if (action == 0) {
                probs_ = classifier_->classify(*features_, retained_after);
                rank_ = rank_of_true(probs_, static_cast<std::size_t>(label_));
            }
            out.rank_after = rank_;
        }

        if (!terminal) {
            std::optional<double> local;
            if (cfg_.enable_local)
                local = reward_local(action, *out.rank_before, *out.rank_after, cfg_.eta,
                                     cfg_.discard_bonus);
            out.reward = assemble_reward(StepKind::Intermediate, cfg_, std::nullopt, local, std::nullopt);
        } else {
            std::optional<double> global;
            if (cfg_.enable_global) {
                if (!cfg_.enable_local) probs_ = classifier_->classify(*features_, retained_after);
                const int yhat = predict_label(probs_);
                out.recognised = yhat == label_;
                global = reward_global(yhat, label_, cfg_);
            }
            std::optional<double> unsup;
            if (cfg_.enable_unsup) unsup = reward_dr(*features_, retained_after);
            out.reward = assemble_reward(StepKind::Terminal, cfg_, global, std::nullopt, unsup);
        }
        return out;
    }

private:
    RewardConfig cfg_;
    const ClassifierModel* classifier_;
    const Matrix* features_;
    int label_;
    std::vector<double> probs_;
    int rank_ = 0;
};

}  // namespace rlsum

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "rlsum/dataset.hpp"
#include "rlsum/environment.hpp"
#include "rlsum/qnet.hpp"

namespace rlsum {

// floor(fraction * frames) robust to representation noise in the product.
inline std::uint32_t budget_frames(double fraction, std::uint32_t frames) {
    return static_cast<std::uint32_t>(std::floor(fraction * static_cast<double>(frames) + 1e-9));
}

// Greedy (epsilon = 0) episode; each frame is scored at its decision step
// with the keep probability of the softmax over its two action values. If
// the episode hits the keep floor early, the remaining frames are scored
// against the final state and forcibly kept, so every frame gets a score.
inline std::vector<double> score_frames(const QNetwork& net, const VideoRecord& video,
                                        const EnvConfig& env_cfg) {
    Environment env(video, env_cfg);
    std::vector<double> scores(video.frames(), -1.0);
    while (!env.state().done) {
        const EpisodeState& s = env.state();
        const ActionValues q = net.forward(s, video.features);
        scores[s.attention] = softmax({q.q_discard, q.q_keep})[1];
        env.step(q.q_keep >= q.q_discard ? 1 : 0);
    }
    // frames left undecided by an early stop
    EpisodeState tail = env.state();
    for (std::uint32_t f = tail.attention; f < video.frames(); ++f) {
        if (scores[f] >= 0.0) continue;
        tail.attention = f;
        const ActionValues q = net.forward(tail, video.features);
        scores[f] = softmax({q.q_discard, q.q_keep})[1];
    }
    return scores;
}

// Mean frame score per shot.
inline std::vector<double> shot_scores(const std::vector<double>& frame_scores,
                                       const std::vector<Shot>& shots) {
    std::vector<double> out;
    out.reserve(shots.size());
    for (const auto& s : shots) {
        if (s.end <= s.begin) throw ValidationError("shot_scores: empty shot");
        if (s.end > frame_scores.size()) throw DimensionError("shot_scores: shot range out of bounds");
        double sum = 0.0;
        for (std::uint32_t f = s.begin; f < s.end; ++f) sum += frame_scores[f];
        out.push_back(sum / static_cast<double>(s.length()));
    }
    return out;
}

namespace detail {

// Value of a shot subset accumulated from the highest index down; matches
// the association order of the knapsack recursion so ties compare exactly.
inline double subset_value(const std::vector<double>& values, const std::vector<std::uint32_t>& subset) {
    double sum = 0.0;
    for (auto it = subset.rbegin(); it != subset.rend(); ++it) sum = values[*it] + sum;
    return sum;
}

}  // namespace detail

// Exact 0/1 knapsack: maximize sum(score_i * len_i) subject to
// sum(len_i) <= floor(budget_fraction * total_len). Among optima the
// lexicographically smallest shot-index set wins.
inline std::vector<std::uint32_t> select_shots(const std::vector<double>& scores,
                                               const std::vector<std::uint32_t>& lengths,
                                               double budget_fraction) {
    if (scores.size() != lengths.size()) throw DimensionError("select_shots: score/length size mismatch");
    if (budget_fraction <= 0.0 || budget_fraction > 1.0)
        throw ConfigError("select_shots: budget_fraction must be in (0,1]");
    std::uint32_t total = 0;
    for (std::uint32_t l : lengths) {
        if (l == 0) throw ValidationError("select_shots: zero-length shot");
        total += l;
    }
    const std::uint32_t budget = budget_frames(budget_fraction, total);
    const std::size_t n = scores.size();

    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = scores[i] * static_cast<double>(lengths[i]);

    // best[i][w]: value achievable with shots i.. under capacity w
    std::vector<std::vector<double>> best(n + 1, std::vector<double>(budget + 1, 0.0));
    for (std::size_t i = n; i-- > 0;) {
        for (std::uint32_t w = 0; w <= budget; ++w) {
            double v = best[i + 1][w];
            if (lengths[i] <= w) v = std::max(v, values[i] + best[i + 1][w - lengths[i]]);
            best[i][w] = v;
        }
    }

    std::vector<std::uint32_t> selected;
    std::uint32_t w = budget;
    for (std::size_t i = 0; i < n; ++i) {
        if (lengths[i] <= w && values[i] + best[i + 1][w - lengths[i]] >= best[i + 1][w]) {
            selected.push_back(static_cast<std::uint32_t>(i));
            w -= lengths[i];
        }
    }
    return selected;
}

// Greedy score-ordered fallback kept for comparison runs.
inline std::vector<std::uint32_t> select_shots_greedy(const std::vector<double>& scores,
                                                      const std::vector<std::uint32_t>& lengths,
                                                      double budget_fraction) {
    if (scores.size() != lengths.size())
        throw DimensionError("select_shots_greedy: score/length size mismatch");
    std::uint32_t total = 0;
    for (std::uint32_t l : lengths) total += l;
    const std::uint32_t budget = budget_frames(budget_fraction, total);

    std::vector<std::uint32_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return scores[a] > scores[b]; });
    std::vector<std::uint32_t> selected;
    std::uint32_t used = 0;
    for (std::uint32_t i : order)
        if (used + lengths[i] <= budget) {
            selected.push_back(i);
            used += lengths[i];
        }
    std::sort(selected.begin(), selected.end());
    return selected;
}

// Pairwise F-score between frame sets: harmonic mean of precision and
// recall, zero when either set or the intersection is empty.
inline double f_score(const std::vector<std::uint32_t>& machine,
                      const std::vector<std::uint32_t>& human) {
    if (machine.empty() || human.empty()) return 0.0;
    const std::set<std::uint32_t> h(human.begin(), human.end());
    std::size_t overlap = 0;
    for (std::uint32_t f : machine) overlap += h.count(f);
    if (overlap == 0) return 0.0;
    const double p = static_cast<double>(overlap) / static_cast<double>(machine.size());
    const double r = static_cast<double>(overlap) / h.size();
    return 2.0 * p * r / (p + r);
}

struct Summary {
    std::string video_id;
    std::vector<double> frame_scores;
    std::vector<std::uint32_t> selected_shots;
    std::vector<std::uint32_t> selected_frames;
    double budget_fraction = 0.15;
};

inline nlohmann::json summary_json(const Summary& s) {
    nlohmann::json j;
    j["video_id"] = s.video_id;
    j["frame_scores"] = s.frame_scores;
    j["selected_shots"] = s.selected_shots;
    j["selected_frames"] = s.selected_frames;
    j["budget_fraction"] = s.budget_fraction;
    return j;
}

// Full test-time pipeline for one video: greedy scoring, shot averaging,
// budgeted selection. Labels are never consulted.
inline Summary summarize_video(const QNetwork& net, const VideoRecord& video, const EnvConfig& env_cfg,
                               double budget_fraction, bool greedy_selection = false) {
    Summary s;
    s.video_id = video.id;
    s.budget_fraction = budget_fraction;
    s.frame_scores = score_frames(net, video, env_cfg);

    const std::vector<double> per_shot = shot_scores(s.frame_scores, video.shots);
    std::vector<std::uint32_t> lengths;
    lengths.reserve(video.shots.size());
    for (const auto& shot : video.shots) lengths.push_back(shot.length());

    s.selected_shots = greedy_selection ? select_shots_greedy(per_shot, lengths, budget_fraction)
                                        : select_shots(per_shot, lengths, budget_fraction);
    for (std::uint32_t i : s.selected_shots)
        for (std::uint32_t f = video.shots[i].begin; f < video.shots[i].end; ++f)
            s.selected_frames.push_back(f);
    return s;
}

struct EvalReport {
    struct PerVideo {
        std::string video_id;
        int fold = -1;
        double f = 0.0;
    };
    std::vector<PerVideo> videos;
    std::vector<double> fold_means;  // empty without cross-validation
    double overall = 0.0;
};

// Aggregates per-video F-scores (mean over that video's human summaries)
// into per-fold means and an overall mean. fold_of maps a video index to
// its test fold, or -1 when folds are not in play.
inline EvalReport evaluate_summaries(const Dataset& ds,
                                     const std::vector<std::vector<std::uint32_t>>& machine_frames,
                                     const std::vector<int>& fold_of, std::size_t num_folds) {
    if (machine_frames.size() != ds.videos.size() || fold_of.size() != ds.videos.size())
        throw DimensionError("evaluate_summaries: per-video arrays must match the dataset");

    EvalReport report;
    std::vector<double> fold_sum(num_folds, 0.0);
    std::vector<std::size_t> fold_count(num_folds, 0);
    double total = 0.0;

    std::vector<std::string> missing;
    for (std::size_t i = 0; i < ds.videos.size(); ++i) {
        const auto& v = ds.videos[i];
        if (v.human_summaries.empty()) {
            missing.push_back(v.id);
            continue;
        }
        double sum = 0.0;
        for (const auto& human : v.human_summaries) sum += f_score(machine_frames[i], human);
        const double f = sum / static_cast<double>(v.human_summaries.size());
        report.videos.push_back({v.id, fold_of[i], f});
        total += f;
        if (fold_of[i] >= 0 && static_cast<std::size_t>(fold_of[i]) < num_folds) {
            fold_sum[static_cast<std::size_t>(fold_of[i])] += f;
            fold_count[static_cast<std::size_t>(fold_of[i])]++;
        }
    }
    if (!missing.empty()) {
        std::string names;
        for (const auto& id : missing) names += (names.empty() ? "" : ", ") + id;
        throw ValidationError("evaluate: videos without human summaries: " + names);
    }
    if (report.videos.empty()) throw EmptyInputError("evaluate: no videos to evaluate");

    for (std::size_t f = 0; f < num_folds; ++f)
        report.fold_means.push_back(fold_count[f] > 0 ? fold_sum[f] / fold_count[f] : 0.0);
    report.overall = total / static_cast<double>(report.videos.size());
    return report;
}

// Cross-validated evaluation: each video is summarized by the model whose
// test fold contains it. Per-video work is independent, so it may fan out
// over a small thread pool.
inline EvalReport evaluate(const Dataset& ds, const std::vector<QNetwork>& fold_models,
                           const std::vector<FoldSplit>& folds, const EnvConfig& env_cfg,
                           double budget_fraction, bool greedy_selection = false,
                           std::size_t parallel = 1) {
    if (fold_models.size() != folds.size())
        throw ConfigError("evaluate: one model per fold is required");

    std::vector<int> fold_of(ds.videos.size(), -1);
    for (std::size_t f = 0; f < folds.size(); ++f)
        for (std::uint32_t idx : folds[f].test) fold_of[idx] = static_cast<int>(f);
    for (std::size_t i = 0; i < fold_of.size(); ++i)
        if (fold_of[i] < 0)
            throw ValidationError("evaluate: video " + ds.videos[i].id + " is missing from all folds");

    std::vector<std::vector<std::uint32_t>> machine(ds.videos.size());
    const auto work = [&](std::size_t begin, std::size_t stride) {
        for (std::size_t i = begin; i < ds.videos.size(); i += stride) {
            const QNetwork& model = fold_models[static_cast<std::size_t>(fold_of[i])];
            machine[i] =
                summarize_video(model, ds.videos[i], env_cfg, budget_fraction, greedy_selection)
                    .selected_frames;
        }
    };
    if (parallel <= 1) {
        work(0, 1);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < parallel; ++w) pool.emplace_back(work, w, parallel);
        for (auto& t : pool) t.join();
    }
    return evaluate_summaries(ds, machine, fold_of, folds.size());
}

inline nlohmann::json eval_report_json(const EvalReport& r) {
    nlohmann::json j;
    j["videos"] = nlohmann::json::array();
    for (const auto& v : r.videos)
        j["videos"].push_back({{"video_id", v.video_id}, {"fold", v.fold}, {"f_score", v.f}});
    j["fold_means"] = r.fold_means;
    j["overall"] = r.overall;
    return j;
}

// Plain-text table with percentages at one decimal.
inline std::string eval_report_table(const EvalReport& r) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(1);
    os << "fold   videos   F (%)\n";
    for (std::size_t f = 0; f < r.fold_means.size(); ++f) {
        std::size_t count = 0;
        for (const auto& v : r.videos)
            if (v.fold == static_cast<int>(f)) ++count;
        os << f << "      " << count << "       " << 100.0 * r.fold_means[f] << "\n";
    }
    std::size_t total = r.videos.size();
    os << "all    " << total << "      " << 100.0 * r.overall << "\n";
    return os.str();
}

}  // namespace rlsum

#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rlsum/dataset.hpp"
#include "rlsum/errors.hpp"
#include "rlsum/rewards.hpp"

namespace rlsum {

struct EnvConfig {
    double min_keep_fraction = 0.15;  // episode ends once this floor is reached
    double gamma = 0.99;

    void validate() const {
        if (min_keep_fraction <= 0.0 || min_keep_fraction > 1.0)
            throw ConfigError("EnvConfig: min_keep_fraction must be in (0,1]");
        if (gamma < 0.0 || gamma > 1.0) throw ConfigError("EnvConfig: gamma must be in [0,1]");
    }
};

// ceil(fraction * T) robust to representation noise in the product.
inline std::uint32_t keep_floor(double fraction, std::uint32_t frames) {
    const double raw = fraction * static_cast<double>(frames);
    return static_cast<std::uint32_t>(std::ceil(raw - 1e-9));
}

struct EpisodeState {
    std::string video_id;
    std::uint32_t total_frames = 0;
    std::vector<std::uint32_t> retained;  // sorted ascending
    std::uint32_t attention = 0;          // original frame index under decision
    std::uint32_t t = 1;                  // 1-based decision step
    bool done = false;
};

// Compact retained-set encoding for replay storage.
struct FrameMask {
    std::uint32_t total_frames = 0;
    std::vector<std::uint64_t> words;

    static FrameMask from_indices(std::uint32_t total, const std::vector<std::uint32_t>& indices) {
        FrameMask m;
        m.total_frames = total;
        m.words.assign((total + 63) / 64, 0);
        for (std::uint32_t i : indices) m.words[i >> 6] |= std::uint64_t{1} << (i & 63);
        return m;
    }

    bool test(std::uint32_t i) const { return (words[i >> 6] >> (i & 63)) & 1; }

    void clear(std::uint32_t i) { words[i >> 6] &= ~(std::uint64_t{1} << (i & 63)); }

    std::vector<std::uint32_t> to_indices() const {
        std::vector<std::uint32_t> out;
        for (std::uint32_t i = 0; i < total_frames; ++i)
            if (test(i)) out.push_back(i);
        return out;
    }
};

// Experience tuple. The successor retained set is implied: identical for a
// keep, the attended frame removed for a discard.
struct Transition {
    std::uint32_t video_index = 0;
    std::uint32_t t = 1;
    FrameMask retained_before;
    std::uint32_t attention = 0;
    std::uint8_t action = 1;  // 1 keep, 0 discard
    double reward = 0.0;
    std::uint32_t attention_after = 0;
    bool done = false;

    std::vector<std::uint32_t> retained_after() const {
        FrameMask m = retained_before;
        if (action == 0) m.clear(attention);
        return m.to_indices();
    }
};

// The summarisation MDP. The episode starts with every frame retained and
// attention on frame 0; each step keeps or discards the attended frame and
// advances attention; it ends when every frame is decided or the retained
// count has reached the keep floor (any undecided frames stay kept).
class Environment {
public:
    Environment(const VideoRecord& video, const EnvConfig& cfg) : video_(&video), cfg_(cfg) {
        cfg_.validate();
        if (video.frames() == 0) throw EmptyInputError("Environment: empty video");
        floor_ = keep_floor(cfg_.min_keep_fraction, video.frames());
        reset();
    }

    const EpisodeState& reset() {
        state_.video_id = video_->id;
        state_.total_frames = video_->frames();
        state_.retained.resize(video_->frames());
        for (std::uint32_t i = 0; i < video_->frames(); ++i) state_.retained[i] = i;
        state_.attention = 0;
        state_.t = 1;
        state_.done = false;
        return state_;
    }

    // Applies the action to the attended frame; returns true when the
    // episode is over.
    bool step(int action) {
        if (state_.done) throw StateError("Environment::step: episode already finished");
        if (action != 0 && action != 1) throw ValidationError("Environment::step: action must be 0 or 1");

        // at the floor no further discard is admissible
        if (action == 0 && state_.retained.size() > floor_) {
            auto it = std::lower_bound(state_.retained.begin(), state_.retained.end(), state_.attention);
            state_.retained.erase(it);
        }
        state_.t += 1;
        state_.attention += 1;
        if (state_.t > state_.total_frames || state_.retained.size() <= floor_) state_.done = true;
        return state_.done;
    }

    const EpisodeState& state() const { return state_; }
    std::uint32_t floor_count() const { return floor_; }
    const VideoRecord& video() const { return *video_; }

private:
    const VideoRecord* video_;
    EnvConfig cfg_;
    EpisodeState state_;
    std::uint32_t floor_ = 0;
};

// One JSON-lines record per transition for episode export.
struct TransitionRecord {
    std::string video_id;
    std::uint32_t t = 1;
    std::uint32_t attention = 0;
    int action = 1;
    RewardBreakdown reward;
    std::optional<int> rank_before;
    std::optional<int> rank_after;
};

inline nlohmann::json transition_record_json(const TransitionRecord& r) {
    nlohmann::json j;
    j["video_id"] = r.video_id;
    j["t"] = r.t;
    j["attention"] = r.attention;
    j["action"] = r.action;
    j["reward"] = {{"global", r.reward.global},
                   {"local", r.reward.local},
                   {"unsup", r.reward.unsup},
                   {"total", r.reward.total}};
    j["rank_before"] = r.rank_before ? nlohmann::json(*r.rank_before) : nlohmann::json(nullptr);
    j["rank_after"] = r.rank_after ? nlohmann::json(*r.rank_after) : nlohmann::json(nullptr);
    return j;
}

struct EpisodeResult {
    std::vector<Transition> transitions;
    std::vector<TransitionRecord> records;
    double episode_return = 0.0;  // discounted from step 1
    RewardBreakdown terminal_reward;
    std::optional<bool> recognised;
};

using Policy = std::function<int(const EpisodeState&)>;

// Runs one full episode under the given policy, assembling rewards per step.
inline EpisodeResult run_episode(const VideoRecord& video, std::uint32_t video_index,
                                 const Policy& policy, EpisodeRewards& rewards, const EnvConfig& cfg) {
    Environment env(video, cfg);
    rewards.begin(env.state().retained);

    EpisodeResult result;
    double discount = 1.0;
    while (!env.state().done) {
        const EpisodeState before = env.state();
        const int action = policy(before);
        const bool done = env.step(action);
        const auto outcome = rewards.on_step(action, env.state().retained, done);

        Transition tr;
        tr.video_index = video_index;
        tr.t = before.t;
        tr.retained_before = FrameMask::from_indices(before.total_frames, before.retained);
        tr.attention = before.attention;
        tr.action = static_cast<std::uint8_t>(action);
        tr.reward = outcome.reward.total;
        tr.attention_after = env.state().attention;
        tr.done = done;
        result.transitions.push_back(std::move(tr));

        result.records.push_back(TransitionRecord{video.id, before.t, before.attention, action,
                                                  outcome.reward, outcome.rank_before,
                                                  outcome.rank_after});

        result.episode_return += discount * outcome.reward.total;
        discount *= cfg.gamma;

        if (done) {
            result.terminal_reward = outcome.reward;
            result.recognised = outcome.recognised;
        }
    }
    return result;
}

inline void write_episode_log(std::ostream& os, const std::vector<TransitionRecord>& records) {
    for (const auto& r : records) os << transition_record_json(r).dump() << "\n";
}

}  // namespace rlsum

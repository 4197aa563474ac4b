#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include "json.hpp"
#include "rlsum/errors.hpp"
#include "rlsum/rewards.hpp"

namespace rlsum {

// Flat run configuration shared by every subcommand. Each key is mirrored by
// a command-line flag; flag values override config-file values, which
// override the defaults below.
struct RunConfig {
    std::uint64_t seed = 0;

    // synthetic generator
    std::size_t classes = 5;
    std::size_t per_class = 20;
    std::size_t frames = 60;
    std::size_t dim = 16;
    double signal_fraction = 0.4;
    double noise_level = 0.2;
    std::size_t shot_len = 8;
    std::size_t distractor_pool = 8;

    // shared network sizes
    std::size_t embedding = 256;
    std::size_t hidden = 256;

    // classifier training
    double omega = 0.1;
    double cls_learning_rate = 1e-4;
    std::size_t cls_epochs = 30;
    double holdout = 0.2;

    // q-learning
    std::size_t episodes = 300;
    std::size_t minibatch = 200;
    std::size_t replay_capacity = 6000;
    std::size_t target_sync = 500;
    double learning_rate = 1e-4;
    double grad_clip = 5.0;
    double gamma = 0.99;
    double eta = 0.15;
    double min_keep_fraction = 0.15;
    double eps_start = 1.0;
    double eps_floor = 0.1;
    double eps_decay_fraction = 0.6;
    std::string rewards = "g,l,u";
    double discard_bonus = 0.05;
    double correct_reward = 1.0;
    double wrong_penalty = -5.0;
    std::size_t checkpoint_every = 0;
    bool episode_log = false;

    // summarisation / evaluation
    double budget = 0.15;
    std::size_t folds = 5;
    int fold = -1;
    bool greedy_select = false;
    bool no_cv = false;
    std::size_t parallel = 1;

    // paths
    std::string manifest;
    std::string out;
    std::string classifier;
    std::string qnet;  // comma-separated list for cross-validated evaluation
};

namespace detail {

template <typename T>
void assign_key(const nlohmann::json& j, const std::string& key, T& dst) {
    try {
        dst = j.get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("config: wrong type for key '" + key + "'");
    }
}

}  // namespace detail

#define RLSUM_CONFIG_KEYS(X)            \
    X(seed)                             \
    X(classes)                          \
    X(per_class)                        \
    X(frames)                           \
    X(dim)                              \
    X(signal_fraction)                  \
    X(noise_level)                      \
    X(shot_len)                         \
    X(distractor_pool)                  \
    X(embedding)                        \
    X(hidden)                           \
    X(omega)                            \
    X(cls_learning_rate)                \
    X(cls_epochs)                       \
    X(holdout)                          \
    X(episodes)                         \
    X(minibatch)                        \
    X(replay_capacity)                  \
    X(target_sync)                      \
    X(learning_rate)                    \
    X(grad_clip)                        \
    X(gamma)                            \
    X(eta)                              \
    X(min_keep_fraction)                \
    X(eps_start)                        \
    X(eps_floor)                        \
    X(eps_decay_fraction)               \
    X(rewards)                          \
    X(discard_bonus)                    \
    X(correct_reward)                   \
    X(wrong_penalty)                    \
    X(checkpoint_every)                 \
    X(episode_log)                      \
    X(budget)                           \
    X(folds)                            \
    X(fold)                             \
    X(greedy_select)                    \
    X(no_cv)                            \
    X(parallel)                         \
    X(manifest)                         \
    X(out)                              \
    X(classifier)                       \
    X(qnet)

inline nlohmann::json config_json(const RunConfig& c) {
    nlohmann::json j;
#define RLSUM_X(name) j[#name] = c.name;
    RLSUM_CONFIG_KEYS(RLSUM_X)
#undef RLSUM_X
    return j;
}

// Loads a flat JSON config over the given defaults; unknown keys are
// rejected so typos fail loudly before any work starts.
inline void load_config_file(const std::string& path, RunConfig& cfg) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config file must hold a JSON object: " + path);
    for (const auto& [key, value] : j.items()) {
        if (false) {
        }
#define RLSUM_X(name)                                 \
    else if (key == #name) {                          \
        detail::assign_key(value, key, cfg.name);     \
    }
        RLSUM_CONFIG_KEYS(RLSUM_X)
#undef RLSUM_X
        else {
            throw ConfigError("config: unknown key '" + key + "' in " + path);
        }
    }
}

inline void write_effective_config(const std::string& dir, const RunConfig& cfg) {
    const std::string path = dir + "/effective_config.json";
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write " + path);
    os << config_json(cfg).dump(2) << "\n";
}

// Parses the reward selection string, e.g. "g,l,u" or "g".
inline RewardConfig parse_reward_flags(const RunConfig& cfg) {
    RewardConfig rc;
    rc.enable_global = rc.enable_local = rc.enable_unsup = false;
    rc.eta = cfg.eta;
    rc.discard_bonus = cfg.discard_bonus;
    rc.correct_reward = cfg.correct_reward;
    rc.wrong_penalty = cfg.wrong_penalty;

    std::string token;
    std::istringstream is(cfg.rewards);
    while (std::getline(is, token, ',')) {
        if (token == "g") rc.enable_global = true;
        else if (token == "l") rc.enable_local = true;
        else if (token == "u") rc.enable_unsup = true;
        else if (!token.empty())
            throw ConfigError("rewards: unknown component '" + token + "' (expected g, l, u)");
    }
    if (!rc.enable_global && !rc.enable_local && !rc.enable_unsup)
        throw ConfigError("rewards: at least one component must be enabled");
    return rc;
}

}  // namespace rlsum

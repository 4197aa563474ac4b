#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rlsum/classifier.hpp"
#include "rlsum/dataset.hpp"
#include "rlsum/environment.hpp"
#include "rlsum/qnet.hpp"
#include "rlsum/rewards.hpp"

namespace rlsum {

// Fixed-capacity ring buffer with oldest-first eviction.
class ReplayMemory {
public:
    explicit ReplayMemory(std::size_t capacity) : capacity_(capacity) {
        if (capacity == 0) throw ConfigError("ReplayMemory: capacity must be positive");
    }

    void push(Transition tr) {
        if (buffer_.size() < capacity_) {
            buffer_.push_back(std::move(tr));
        } else {
            buffer_[next_] = std::move(tr);
            next_ = (next_ + 1) % capacity_;
        }
        ++inserted_;
    }

    std::size_t size() const { return buffer_.size(); }
    std::size_t capacity() const { return capacity_; }
    std::uint64_t inserted() const { return inserted_; }
    const Transition& operator[](std::size_t i) const { return buffer_[i]; }

private:
    std::size_t capacity_;
    std::vector<Transition> buffer_;
    std::size_t next_ = 0;
    std::uint64_t inserted_ = 0;
};

// Uniform sample of n transition indices: without replacement when the
// memory holds at least n, with replacement otherwise.
inline std::vector<std::size_t> sample_minibatch(const ReplayMemory& memory, std::size_t n, Rng& rng) {
    if (memory.size() == 0) throw EmptyInputError("sample_minibatch: empty replay memory");
    std::vector<std::size_t> out(n);
    if (memory.size() < n) {
        for (std::size_t i = 0; i < n; ++i) out[i] = rng.uniform_index(memory.size());
        return out;
    }
    // partial Fisher-Yates over the index range
    std::vector<std::size_t> indices(memory.size());
    std::iota(indices.begin(), indices.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i + rng.uniform_index(indices.size() - i);
        std::swap(indices[i], indices[j]);
        out[i] = indices[i];
    }
    return out;
}

// Exponential decay from start to a hard floor.
struct EpsilonSchedule {
    double start = 1.0;
    double floor = 0.1;
    double decay_rate = 0.0;  // per decision step

    // Rate such that the floor is reached after `fraction` of the expected
    // total decision steps.
    static EpsilonSchedule for_total_steps(double start, double floor, std::uint64_t total_steps,
                                           double fraction) {
        if (start < floor || floor <= 0.0) throw ConfigError("EpsilonSchedule: need start >= floor > 0");
        EpsilonSchedule s;
        s.start = start;
        s.floor = floor;
        const double horizon = fraction * static_cast<double>(std::max<std::uint64_t>(total_steps, 1));
        s.decay_rate = horizon > 0.0 ? std::log(start / floor) / horizon : 0.0;
        return s;
    }

    double value(std::uint64_t step) const {
        return std::max(floor, start * std::exp(-decay_rate * static_cast<double>(step)));
    }
};

// Epsilon-greedy with greedy ties broken toward keep.
inline int select_action(const ActionValues& q, double epsilon, Rng& rng) {
    if (epsilon < 0.0 || epsilon > 1.0) throw ConfigError("select_action: epsilon must be in [0,1]");
    if (rng.uniform() < epsilon) return static_cast<int>(rng.uniform_index(2));
    return q.q_keep >= q.q_discard ? 1 : 0;
}

// Double Q-learning target: the online network picks the successor action,
// the target network evaluates it. Terminal transitions carry no bootstrap.
inline double double_q_target(const Transition& tr, const QNetwork& online, const QNetwork& target,
                              double gamma, const Matrix& features) {
    if (tr.done) return tr.reward;
    EpisodeState next;
    next.total_frames = tr.retained_before.total_frames;
    next.retained = tr.retained_after();
    next.attention = tr.attention_after;
    const ActionValues online_q = online.forward(next, features);
    const int best = online_q.q_keep >= online_q.q_discard ? 1 : 0;
    const ActionValues target_q = target.forward(next, features);
    return tr.reward + gamma * target_q.q(best);
}

struct TrainerConfig {
    std::size_t episodes = 300;
    std::size_t minibatch = 200;
    std::size_t replay_capacity = 6000;
    std::size_t target_sync = 500;  // updates between target refreshes
    double learning_rate = 1e-4;
    double grad_clip = 5.0;
    double eps_start = 1.0;
    double eps_floor = 0.1;
    double eps_decay_fraction = 0.6;  // fraction of expected steps to reach the floor
    std::size_t embedding = 256;
    std::size_t hidden = 256;
    std::uint64_t seed = 0;
    RewardConfig rewards;
    EnvConfig env;

    void validate() const {
        rewards.validate();
        env.validate();
        if (minibatch == 0 || replay_capacity == 0 || target_sync == 0)
            throw ConfigError("TrainerConfig: minibatch, replay_capacity and target_sync must be positive");
        if (learning_rate <= 0.0 || grad_clip <= 0.0)
            throw ConfigError("TrainerConfig: learning_rate and grad_clip must be positive");
        if (eps_start < eps_floor || eps_floor <= 0.0 || eps_start > 1.0)
            throw ConfigError("TrainerConfig: need 0 < eps_floor <= eps_start <= 1");
    }
};

struct EpisodeLogRecord {
    std::size_t episode = 0;
    std::string video_id;
    double episode_return = 0.0;
    RewardBreakdown terminal_reward;
    std::optional<bool> recognised;
    double epsilon = 1.0;
    double mean_minibatch_loss = 0.0;
    std::size_t updates = 0;
};

inline nlohmann::json episode_log_json(const EpisodeLogRecord& r) {
    nlohmann::json j;
    j["episode"] = r.episode;
    j["video_id"] = r.video_id;
    j["return"] = r.episode_return;
    j["terminal_reward"] = {{"global", r.terminal_reward.global},
                            {"local", r.terminal_reward.local},
                            {"unsup", r.terminal_reward.unsup},
                            {"total", r.terminal_reward.total}};
    j["recognised"] = r.recognised ? nlohmann::json(*r.recognised) : nlohmann::json(nullptr);
    j["epsilon"] = r.epsilon;
    j["mean_minibatch_loss"] = r.mean_minibatch_loss;
    return j;
}

struct TrainResult {
    QNetwork network;
    std::vector<EpisodeLogRecord> log;
    std::vector<TransitionRecord> transition_records;  // filled when requested
};

// Deep Q-learning with experience replay, epsilon-greedy exploration and a
// periodically synced target network. One gradient update per decision step
// once the memory holds a full minibatch.
inline TrainResult train_dqsn(const Dataset& ds, const std::vector<std::uint32_t>& train_indices,
                              const ClassifierModel* classifier, const TrainerConfig& cfg,
                              const std::function<void(std::size_t, const QNetwork&)>& on_episode_end =
                                  nullptr,
                              bool keep_transition_records = false) {
    cfg.validate();
    if (train_indices.empty()) throw ConfigError("train_dqsn: empty training split");
    if ((cfg.rewards.enable_global || cfg.rewards.enable_local) && classifier == nullptr)
        throw ConfigError("train_dqsn: recognisability rewards require a frozen classifier");
    if (classifier && !classifier->frozen())
        throw ConfigError("train_dqsn: classifier must be frozen before DQSN training");

    std::size_t feature_dim = 0;
    double mean_frames = 0.0;
    for (std::uint32_t idx : train_indices) {
        const VideoRecord& v = ds.videos.at(idx);
        if (v.frames() == 0) throw ConfigError("train_dqsn: video " + v.id + " has no frames");
        feature_dim = v.features.cols;
        mean_frames += v.frames();
    }
    mean_frames /= static_cast<double>(train_indices.size());

    Rng master(cfg.seed);
    Rng init_rng = master.fork("dqsn-init");
    TrainResult result;
    result.network = QNetwork::build(feature_dim, cfg.embedding, cfg.hidden, init_rng);
    QNetwork target = result.network;  // bit-identical copy

    if (cfg.episodes == 0) return result;

    AdamState adam(result.network.params(), cfg.learning_rate);
    ReplayMemory memory(cfg.replay_capacity);
    Rng run_rng = master.fork("dqsn-run");

    const std::uint64_t expected_steps =
        static_cast<std::uint64_t>(static_cast<double>(cfg.episodes) * mean_frames);
    const EpsilonSchedule eps =
        EpsilonSchedule::for_total_steps(cfg.eps_start, cfg.eps_floor, expected_steps,
                                         cfg.eps_decay_fraction);

    std::vector<std::uint32_t> order(train_indices);
    std::uint64_t step_counter = 0;
    std::uint64_t update_counter = 0;

    for (std::size_t episode = 0; episode < cfg.episodes; ++episode) {
        if (episode % order.size() == 0) run_rng.shuffle(order);
        const std::uint32_t video_index = order[episode % order.size()];
        const VideoRecord& video = ds.videos[video_index];

        EpisodeRewards rewards(cfg.rewards, classifier, video.features, video.label);
        Environment env(video, cfg.env);
        rewards.begin(env.state().retained);

        EpisodeLogRecord record;
        record.episode = episode;
        record.video_id = video.id;
        record.epsilon = eps.value(step_counter);

        double discount = 1.0;
        double loss_sum = 0.0;
        while (!env.state().done) {
            const EpisodeState before = env.state();
            const double epsilon = eps.value(step_counter);
            const ActionValues q = result.network.forward(before, video.features);
            const int action = select_action(q, epsilon, run_rng);
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
            memory.push(tr);

            if (keep_transition_records)
                result.transition_records.push_back(TransitionRecord{
                    video.id, before.t, before.attention, action, outcome.reward, outcome.rank_before,
                    outcome.rank_after});

            record.episode_return += discount * outcome.reward.total;
            discount *= cfg.env.gamma;
            if (done) {
                record.terminal_reward = outcome.reward;
                record.recognised = outcome.recognised;
            }
            ++step_counter;

            if (memory.size() >= cfg.minibatch) {
                const auto batch = sample_minibatch(memory, cfg.minibatch, run_rng);
                result.network.params().zero_grads();
                double batch_loss = 0.0;
                const double inv_n = 1.0 / static_cast<double>(batch.size());
                for (std::size_t idx : batch) {
                    const Transition& sample = memory[idx];
                    const Matrix& feats = ds.videos[sample.video_index].features;
                    const double target_value =
                        double_q_target(sample, result.network, target, cfg.env.gamma, feats);
                    EpisodeState st;
                    st.total_frames = sample.retained_before.total_frames;
                    st.retained = sample.retained_before.to_indices();
                    st.attention = sample.attention;
                    QNetwork::TrainTrace trace;
                    const double qv = result.network.train_forward(st, feats, sample.action, trace);
                    const HuberResult h = huber_loss(qv, target_value);
                    batch_loss += h.loss * inv_n;
                    result.network.train_backward(trace, sample.action, h.grad * inv_n);
                }
                clip_gradients(result.network.params(), cfg.grad_clip);
                adam_step(result.network.params(), adam);
                loss_sum += batch_loss;
                ++record.updates;
                ++update_counter;
                if (update_counter % cfg.target_sync == 0)
                    target.params().copy_values_from(result.network.params());
            }
        }

        record.mean_minibatch_loss = record.updates > 0 ? loss_sum / record.updates : 0.0;
        result.log.push_back(std::move(record));
        if (on_episode_end) on_episode_end(episode, result.network);
    }
    return result;
}

}  // namespace rlsum

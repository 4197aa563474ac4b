#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "rlsum/classifier.hpp"
#include "rlsum/config.hpp"
#include "rlsum/dataset.hpp"
#include "rlsum/environment.hpp"
#include "rlsum/log.hpp"
#include "rlsum/qnet.hpp"
#include "rlsum/summarize.hpp"
#include "rlsum/trainer.hpp"

namespace fs = std::filesystem;
using namespace rlsum;

namespace {

// Flags parse into a staging config; resolve() then layers defaults,
// config-file values and explicitly set flags, in that order.
class ConfigBinder {
public:
    RunConfig& staged() { return staged_; }

    template <typename T>
    void bind(CLI::App* cmd, const std::string& flag, T RunConfig::*field, const std::string& desc) {
        CLI::Option* opt = cmd->add_option(flag, staged_.*field, desc);
        bindings_.push_back({opt, [field](RunConfig& dst, const RunConfig& src) { dst.*field = src.*field; }});
    }

    void bind_flag(CLI::App* cmd, const std::string& flag, bool RunConfig::*field,
                   const std::string& desc) {
        CLI::Option* opt = cmd->add_flag(flag, staged_.*field, desc);
        bindings_.push_back({opt, [field](RunConfig& dst, const RunConfig& src) { dst.*field = src.*field; }});
    }

    void bind_config_path(CLI::App* cmd) {
        cmd->add_option("--config", config_path_, "flat JSON config file; explicit flags override it");
    }

    RunConfig resolve() const {
        RunConfig cfg;  // defaults
        if (!config_path_.empty()) load_config_file(config_path_, cfg);
        for (const auto& b : bindings_)
            if (b.option->count() > 0) b.copy(cfg, staged_);
        return cfg;
    }

private:
    struct Binding {
        CLI::Option* option;
        std::function<void(RunConfig&, const RunConfig&)> copy;
    };
    RunConfig staged_;
    std::string config_path_;
    std::vector<Binding> bindings_;
};

void require_path(const std::string& path, const std::string& what) {
    if (path.empty()) throw ConfigError(what + " is required");
    if (!fs::exists(path)) throw ConfigError(what + " not found: " + path);
}

void ensure_out_dir(const RunConfig& cfg) {
    if (cfg.out.empty()) throw ConfigError("--out is required");
    fs::create_directories(cfg.out);
}

Dataset load_and_normalise(const RunConfig& cfg) {
    require_path(cfg.manifest, "--manifest");
    Dataset ds = load_manifest_checked(cfg.manifest, static_cast<std::uint32_t>(cfg.shot_len));
    ValidationReport norm_report;
    l2_normalise_dataset(ds, &norm_report);
    for (const auto& issue : norm_report.issues)
        log_warn("%s/%s: %s", issue.video_id.c_str(), issue.field.c_str(), issue.message.c_str());
    return ds;
}

FoldSplit pick_split(const Dataset& ds, const RunConfig& cfg) {
    if (cfg.fold >= 0) {
        if (static_cast<std::size_t>(cfg.fold) >= cfg.folds)
            throw ConfigError("--fold must be below --folds");
        return make_folds(ds, cfg.folds, cfg.seed)[static_cast<std::size_t>(cfg.fold)];
    }
    return split_holdout(ds, cfg.holdout, cfg.seed);
}

std::vector<std::string> split_list(const std::string& csv) {
    std::vector<std::string> out;
    std::string token;
    std::istringstream is(csv);
    while (std::getline(is, token, ','))
        if (!token.empty()) out.push_back(token);
    return out;
}

int cmd_gen_synthetic(const RunConfig& cfg) {
    ensure_out_dir(cfg);
    SyntheticConfig sc;
    sc.classes = cfg.classes;
    sc.per_class = cfg.per_class;
    sc.frames = cfg.frames;
    sc.dim = cfg.dim;
    sc.signal_fraction = cfg.signal_fraction;
    sc.noise_level = cfg.noise_level;
    sc.shot_len = cfg.shot_len;
    sc.distractor_pool = cfg.distractor_pool;
    sc.seed = cfg.seed;

    const Dataset ds = generate_synthetic(sc);
    const std::string manifest = save_dataset(cfg.out, ds);
    write_effective_config(cfg.out, cfg);
    log_info("generated %zu videos over %zu categories", ds.videos.size(), ds.num_categories());
    std::cout << manifest << "\n";
    return 0;
}

int cmd_train_classifier(const RunConfig& cfg) {
    ensure_out_dir(cfg);
    Dataset ds = load_and_normalise(cfg);
    const FoldSplit split = pick_split(ds, cfg);

    ClassifierConfig cc;
    cc.omega = cfg.omega;
    cc.learning_rate = cfg.cls_learning_rate;
    cc.epochs = cfg.cls_epochs;
    cc.embedding = cfg.embedding;
    cc.hidden = cfg.hidden;
    cc.seed = cfg.seed;

    log_info("training classifier on %zu videos (%zu held out)", split.train.size(),
             split.test.size());
    std::vector<ClassifierEpochStats> log;
    ClassifierModel model = train_classifier(ds, split.train, cc, &log);

    const std::string ckpt = cfg.out + "/classifier.rlsn";
    model.save(ckpt, cfg.omega, cfg.seed, ds.categories);
    {
        std::ofstream os(cfg.out + "/classifier_log.jsonl", std::ios::trunc);
        for (const auto& e : log)
            os << nlohmann::json{{"epoch", e.epoch},
                                 {"mean_loss", e.mean_loss},
                                 {"train_accuracy", e.train_accuracy}}
                      .dump()
               << "\n";
    }
    write_effective_config(cfg.out, cfg);

    const double train_acc = classifier_accuracy(model, ds, split.train);
    std::cout << "train_accuracy " << train_acc << "\n";
    if (!split.test.empty()) {
        const double heldout = classifier_accuracy(model, ds, split.test);
        std::cout << "heldout_accuracy " << heldout << "\n";
    }
    std::cout << ckpt << "\n";
    return 0;
}

int cmd_train_dqsn(const RunConfig& cfg) {
    ensure_out_dir(cfg);
    Dataset ds = load_and_normalise(cfg);

    TrainerConfig tc;
    tc.episodes = cfg.episodes;
    tc.minibatch = cfg.minibatch;
    tc.replay_capacity = cfg.replay_capacity;
    tc.target_sync = cfg.target_sync;
    tc.learning_rate = cfg.learning_rate;
    tc.grad_clip = cfg.grad_clip;
    tc.eps_start = cfg.eps_start;
    tc.eps_floor = cfg.eps_floor;
    tc.eps_decay_fraction = cfg.eps_decay_fraction;
    tc.embedding = cfg.embedding;
    tc.hidden = cfg.hidden;
    tc.seed = cfg.seed;
    tc.rewards = parse_reward_flags(cfg);
    tc.env.min_keep_fraction = cfg.min_keep_fraction;
    tc.env.gamma = cfg.gamma;

    ClassifierModel classifier;
    const ClassifierModel* cls_ptr = nullptr;
    if (tc.rewards.enable_global || tc.rewards.enable_local) {
        if (cfg.classifier.empty())
            throw ConfigError("rewards '" + cfg.rewards + "' need --classifier <checkpoint>");
        require_path(cfg.classifier, "--classifier");
        classifier = ClassifierModel::load(cfg.classifier);
        if (!ds.videos.empty() && classifier.feature_dim() != ds.videos[0].features.cols)
            throw ConfigError("classifier feature dimension does not match the manifest");
        if (classifier.num_categories() != ds.num_categories())
            throw ConfigError("classifier category count does not match the manifest");
        cls_ptr = &classifier;
    }

    std::vector<std::uint32_t> train;
    if (cfg.fold >= 0) {
        train = pick_split(ds, cfg).train;
    } else {
        train.resize(ds.videos.size());
        std::iota(train.begin(), train.end(), 0);
    }

    std::function<void(std::size_t, const QNetwork&)> on_episode;
    if (cfg.checkpoint_every > 0) {
        const std::string dir = cfg.out;
        const std::size_t every = cfg.checkpoint_every;
        const std::uint64_t seed = cfg.seed;
        on_episode = [dir, every, seed](std::size_t episode, const QNetwork& net) {
            if ((episode + 1) % every == 0)
                net.save(dir + "/qnet_ep" + std::to_string(episode + 1) + ".rlsn", seed);
        };
    }

    log_info("training DQSN for %zu episodes on %zu videos (rewards %s)", tc.episodes, train.size(),
             cfg.rewards.c_str());
    TrainResult result = train_dqsn(ds, train, cls_ptr, tc, on_episode, cfg.episode_log);

    const std::string ckpt = cfg.out + "/qnet.rlsn";
    result.network.save(ckpt, cfg.seed);
    {
        std::ofstream os(cfg.out + "/training_log.jsonl", std::ios::trunc);
        for (const auto& rec : result.log) os << episode_log_json(rec).dump() << "\n";
    }
    if (cfg.episode_log) {
        std::ofstream os(cfg.out + "/transitions.jsonl", std::ios::trunc);
        write_episode_log(os, result.transition_records);
    }
    write_effective_config(cfg.out, cfg);

    if (!result.log.empty()) {
        const std::size_t tail = std::max<std::size_t>(1, result.log.size() / 10);
        double ret = 0.0;
        for (std::size_t i = result.log.size() - tail; i < result.log.size(); ++i)
            ret += result.log[i].episode_return;
        std::cout << "final_mean_return " << ret / static_cast<double>(tail) << "\n";
    }
    std::cout << ckpt << "\n";
    return 0;
}

int cmd_summarize(const RunConfig& cfg) {
    ensure_out_dir(cfg);
    Dataset ds = load_and_normalise(cfg);
    require_path(cfg.qnet, "--qnet");
    const QNetwork net = QNetwork::load(cfg.qnet);
    if (!ds.videos.empty() && net.feature_dim() != ds.videos[0].features.cols)
        throw ConfigError("qnet feature dimension does not match the manifest");

    EnvConfig env;
    env.min_keep_fraction = cfg.min_keep_fraction;
    env.gamma = cfg.gamma;

    std::vector<Summary> summaries(ds.videos.size());
    const auto work = [&](std::size_t begin, std::size_t stride) {
        for (std::size_t i = begin; i < ds.videos.size(); i += stride)
            summaries[i] = summarize_video(net, ds.videos[i], env, cfg.budget, cfg.greedy_select);
    };
    if (cfg.parallel <= 1) {
        work(0, 1);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < cfg.parallel; ++w) pool.emplace_back(work, w, cfg.parallel);
        for (auto& t : pool) t.join();
    }

    for (const auto& s : summaries) {
        std::ofstream os(cfg.out + "/" + s.video_id + ".json", std::ios::trunc);
        if (!os) throw IoError("cannot write summary for " + s.video_id);
        os << summary_json(s).dump(2) << "\n";
    }
    write_effective_config(cfg.out, cfg);
    log_info("wrote %zu summaries", summaries.size());
    std::cout << summaries.size() << " summaries -> " << cfg.out << "\n";
    return 0;
}

int cmd_evaluate(const RunConfig& cfg) {
    ensure_out_dir(cfg);
    Dataset ds = load_and_normalise(cfg);

    EnvConfig env;
    env.min_keep_fraction = cfg.min_keep_fraction;
    env.gamma = cfg.gamma;

    const std::vector<std::string> qnet_paths = split_list(cfg.qnet);
    if (qnet_paths.empty()) throw ConfigError("--qnet is required");
    for (const auto& p : qnet_paths) require_path(p, "--qnet");

    EvalReport report;
    if (cfg.no_cv) {
        if (qnet_paths.size() != 1) throw ConfigError("--no-cv expects a single --qnet checkpoint");
        std::vector<QNetwork> models;
        models.push_back(QNetwork::load(qnet_paths[0]));
        std::vector<FoldSplit> folds(1);
        folds[0].test.resize(ds.videos.size());
        std::iota(folds[0].test.begin(), folds[0].test.end(), 0);
        report = evaluate(ds, models, folds, env, cfg.budget, cfg.greedy_select, cfg.parallel);
    } else {
        if (qnet_paths.size() != cfg.folds)
            throw ConfigError("expected one --qnet checkpoint per fold (" + std::to_string(cfg.folds) +
                              "), got " + std::to_string(qnet_paths.size()));
        std::vector<QNetwork> models;
        for (const auto& p : qnet_paths) models.push_back(QNetwork::load(p));
        const auto folds = make_folds(ds, cfg.folds, cfg.seed);
        report = evaluate(ds, models, folds, env, cfg.budget, cfg.greedy_select, cfg.parallel);
    }

    {
        std::ofstream os(cfg.out + "/report.json", std::ios::trunc);
        os << eval_report_json(report).dump(2) << "\n";
    }
    const std::string table = eval_report_table(report);
    {
        std::ofstream os(cfg.out + "/report.txt", std::ios::trunc);
        os << table;
    }
    write_effective_config(cfg.out, cfg);
    std::cout << table;
    return 0;
}

int cmd_inspect(const std::string& path) {
    require_path(path, "path");
    std::ifstream is(path, std::ios::binary);
    char magic[4] = {0, 0, 0, 0};
    is.read(magic, 4);
    const std::string tag(magic, 4);
    if (tag == "RLSN") {
        const ParameterSet ps = load_parameter_set(path);
        std::size_t total = 0;
        std::cout << "parameter container (" << ps.size() << " entries)\n";
        for (std::size_t i = 0; i < ps.size(); ++i) {
            const auto& e = ps.entry(i);
            std::cout << "  " << e.name << "  " << e.value.rows << "x" << e.value.cols << "\n";
            total += e.value.data.size();
        }
        std::cout << "total parameters: " << total << "\n";
        if (fs::exists(path + ".json")) {
            std::ifstream side(path + ".json");
            std::cout << "sidecar: " << nlohmann::json::parse(side).dump() << "\n";
        }
        return 0;
    }
    if (tag == "RLSF") {
        const Matrix m = load_feature_file(path);
        std::cout << "feature file: " << m.rows << " frames x " << m.cols << " dims\n";
        return 0;
    }
    // fall back to JSON (manifest or sidecar)
    is.close();
    std::ifstream js(path);
    nlohmann::json j;
    try {
        js >> j;
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("inspect: unrecognized file format: " + path);
    }
    if (j.contains("videos") && j.contains("categories")) {
        std::cout << "manifest: " << j["categories"].size() << " categories, " << j["videos"].size()
                  << " videos\n";
        for (const auto& c : j["categories"]) std::cout << "  " << c.get<std::string>() << "\n";
    } else {
        std::cout << j.dump(2) << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"weakly-supervised sequence summarisation: synthetic data, classifier and "
                 "Q-learning training, summary generation, evaluation"};
    app.require_subcommand(1);
    ConfigBinder binder;

    auto* gen = app.add_subcommand("gen-synthetic", "generate a category-structured synthetic dataset");
    binder.bind(gen, "--out", &RunConfig::out, "output directory");
    binder.bind(gen, "--seed", &RunConfig::seed, "master seed");
    binder.bind(gen, "--classes", &RunConfig::classes, "number of categories");
    binder.bind(gen, "--per-class", &RunConfig::per_class, "videos per category");
    binder.bind(gen, "--frames", &RunConfig::frames, "frames per video");
    binder.bind(gen, "--dim", &RunConfig::dim, "feature dimension");
    binder.bind(gen, "--signal-fraction", &RunConfig::signal_fraction, "fraction of signal frames");
    binder.bind(gen, "--noise-level", &RunConfig::noise_level, "gaussian noise scale");
    binder.bind(gen, "--shot-len", &RunConfig::shot_len, "uniform shot length");
    binder.bind(gen, "--distractor-pool", &RunConfig::distractor_pool, "shared distractor pool size");
    binder.bind_config_path(gen);

    auto* tcls = app.add_subcommand("train-classifier", "train and freeze the sequence classifier");
    binder.bind(tcls, "--manifest", &RunConfig::manifest, "dataset manifest");
    binder.bind(tcls, "--out", &RunConfig::out, "output directory");
    binder.bind(tcls, "--seed", &RunConfig::seed, "master seed");
    binder.bind(tcls, "--omega", &RunConfig::omega, "label smoothing weight");
    binder.bind(tcls, "--cls-learning-rate", &RunConfig::cls_learning_rate, "Adam learning rate");
    binder.bind(tcls, "--cls-epochs", &RunConfig::cls_epochs, "training epochs");
    binder.bind(tcls, "--embedding", &RunConfig::embedding, "embedding size");
    binder.bind(tcls, "--hidden", &RunConfig::hidden, "recurrent hidden size");
    binder.bind(tcls, "--holdout", &RunConfig::holdout, "held-out fraction when not using folds");
    binder.bind(tcls, "--folds", &RunConfig::folds, "fold count");
    binder.bind(tcls, "--fold", &RunConfig::fold, "train on this fold's training split");
    binder.bind(tcls, "--shot-len", &RunConfig::shot_len, "fallback shot length");
    binder.bind_config_path(tcls);

    auto* tdq = app.add_subcommand("train-dqsn", "train the summarisation network with deep Q-learning");
    binder.bind(tdq, "--manifest", &RunConfig::manifest, "dataset manifest");
    binder.bind(tdq, "--out", &RunConfig::out, "output directory");
    binder.bind(tdq, "--classifier", &RunConfig::classifier, "frozen classifier checkpoint");
    binder.bind(tdq, "--rewards", &RunConfig::rewards, "enabled rewards, e.g. g,l,u");
    binder.bind(tdq, "--seed", &RunConfig::seed, "master seed");
    binder.bind(tdq, "--episodes", &RunConfig::episodes, "training episodes");
    binder.bind(tdq, "--minibatch", &RunConfig::minibatch, "replay minibatch size");
    binder.bind(tdq, "--replay-capacity", &RunConfig::replay_capacity, "replay memory capacity");
    binder.bind(tdq, "--target-sync", &RunConfig::target_sync, "updates between target syncs");
    binder.bind(tdq, "--learning-rate", &RunConfig::learning_rate, "Adam learning rate");
    binder.bind(tdq, "--grad-clip", &RunConfig::grad_clip, "gradient norm clip");
    binder.bind(tdq, "--gamma", &RunConfig::gamma, "discount factor");
    binder.bind(tdq, "--eta", &RunConfig::eta, "rank-change scaling");
    binder.bind(tdq, "--min-keep-fraction", &RunConfig::min_keep_fraction, "episode keep floor");
    binder.bind(tdq, "--eps-start", &RunConfig::eps_start, "initial epsilon");
    binder.bind(tdq, "--eps-floor", &RunConfig::eps_floor, "epsilon floor");
    binder.bind(tdq, "--eps-decay-fraction", &RunConfig::eps_decay_fraction,
                "fraction of steps to reach the floor");
    binder.bind(tdq, "--embedding", &RunConfig::embedding, "embedding size");
    binder.bind(tdq, "--hidden", &RunConfig::hidden, "recurrent hidden size");
    binder.bind(tdq, "--discard-bonus", &RunConfig::discard_bonus, "per-discard bonus");
    binder.bind(tdq, "--correct-reward", &RunConfig::correct_reward, "terminal reward when recognised");
    binder.bind(tdq, "--wrong-penalty", &RunConfig::wrong_penalty, "terminal penalty otherwise");
    binder.bind(tdq, "--checkpoint-every", &RunConfig::checkpoint_every,
                "write a checkpoint every N episodes (0 = final only)");
    binder.bind_flag(tdq, "--episode-log", &RunConfig::episode_log, "write per-transition JSON lines");
    binder.bind(tdq, "--folds", &RunConfig::folds, "fold count");
    binder.bind(tdq, "--fold", &RunConfig::fold, "train on this fold's training split");
    binder.bind(tdq, "--shot-len", &RunConfig::shot_len, "fallback shot length");
    binder.bind_config_path(tdq);

    auto* summ = app.add_subcommand("summarize", "generate summaries with a trained network");
    binder.bind(summ, "--manifest", &RunConfig::manifest, "dataset manifest");
    binder.bind(summ, "--out", &RunConfig::out, "output directory");
    binder.bind(summ, "--qnet", &RunConfig::qnet, "trained network checkpoint");
    binder.bind(summ, "--budget", &RunConfig::budget, "summary budget fraction");
    binder.bind(summ, "--min-keep-fraction", &RunConfig::min_keep_fraction, "episode keep floor");
    binder.bind(summ, "--gamma", &RunConfig::gamma, "discount factor (episode bookkeeping only)");
    binder.bind_flag(summ, "--greedy-select", &RunConfig::greedy_select,
                     "greedy score-ordered selection instead of knapsack");
    binder.bind(summ, "--parallel", &RunConfig::parallel, "worker threads for per-video scoring");
    binder.bind(summ, "--seed", &RunConfig::seed, "master seed");
    binder.bind(summ, "--shot-len", &RunConfig::shot_len, "fallback shot length");
    binder.bind_config_path(summ);

    auto* eval = app.add_subcommand("evaluate", "pairwise F-score evaluation against human summaries");
    binder.bind(eval, "--manifest", &RunConfig::manifest, "dataset manifest");
    binder.bind(eval, "--out", &RunConfig::out, "output directory");
    binder.bind(eval, "--qnet", &RunConfig::qnet,
                "checkpoint per fold (comma separated) or a single one with --no-cv");
    binder.bind(eval, "--folds", &RunConfig::folds, "fold count");
    binder.bind_flag(eval, "--no-cv", &RunConfig::no_cv, "evaluate one checkpoint on every video");
    binder.bind(eval, "--budget", &RunConfig::budget, "summary budget fraction");
    binder.bind(eval, "--min-keep-fraction", &RunConfig::min_keep_fraction, "episode keep floor");
    binder.bind_flag(eval, "--greedy-select", &RunConfig::greedy_select,
                     "greedy score-ordered selection instead of knapsack");
    binder.bind(eval, "--parallel", &RunConfig::parallel, "worker threads");
    binder.bind(eval, "--seed", &RunConfig::seed, "master seed (fold assignment)");
    binder.bind(eval, "--shot-len", &RunConfig::shot_len, "fallback shot length");
    binder.bind_config_path(eval);

    auto* insp = app.add_subcommand("inspect", "print checkpoint / manifest / feature file metadata");
    std::string inspect_path;
    insp->add_option("path", inspect_path, "file to inspect")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        const RunConfig cfg = binder.resolve();
        if (gen->parsed()) return cmd_gen_synthetic(cfg);
        if (tcls->parsed()) return cmd_train_classifier(cfg);
        if (tdq->parsed()) return cmd_train_dqsn(cfg);
        if (summ->parsed()) return cmd_summarize(cfg);
        if (eval->parsed()) return cmd_evaluate(cfg);
        if (insp->parsed()) return cmd_inspect(inspect_path);
        std::cerr << "no subcommand selected\n";
        return 2;
    } catch (const ConfigError& e) {
        log_error("%s", e.what());
        return 2;
    } catch (const ValidationError& e) {
        log_error("%s", e.what());
        return 2;
    } catch (const std::exception& e) {
        log_error("%s", e.what());
        return 1;
    }
}

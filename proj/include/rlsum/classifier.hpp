#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "rlsum/dataset.hpp"
#include "rlsum/errors.hpp"
#include "rlsum/nn.hpp"

namespace rlsum {

// 1-based rank of the true category: 1 + number of strictly greater
// probabilities; equal probabilities at a lower index rank first.
inline int rank_of_true(const std::vector<double>& probs, std::size_t y) {
    if (y >= probs.size()) throw ValidationError("rank_of_true: class index out of range");
    int rank = 1;
    for (std::size_t k = 0; k < probs.size(); ++k) {
        if (probs[k] > probs[y]) ++rank;
        else if (probs[k] == probs[y] && k < y) ++rank;
    }
    return rank;
}

// Argmax with ties resolved toward the lowest index, consistent with
// rank_of_true: predicted == y exactly when rank_of_true(probs, y) == 1.
inline int predict_label(const std::vector<double>& probs) {
    if (probs.empty()) throw EmptyInputError("predict_label: empty probability vector");
    std::size_t best = 0;
    for (std::size_t k = 1; k < probs.size(); ++k)
        if (probs[k] > probs[best]) best = k;
    return static_cast<int>(best);
}

struct ClassifierConfig {
    double omega = 0.1;
    double learning_rate = 1e-4;
    std::size_t epochs = 30;
    std::size_t embedding = 256;
    std::size_t hidden = 256;
    std::uint64_t seed = 0;
};

// Sequence classifier: embedding FC + PReLU, bidirectional GRU encoder,
// temporal average pooling, FC softmax over C categories. The output layer
// starts at zero so an untrained model is exactly uniform.
class ClassifierModel {
public:
    ClassifierModel() = default;

    static ClassifierModel build(std::size_t feature_dim, std::size_t num_categories,
                                 std::size_t embedding, std::size_t hidden, Rng& rng) {
        ClassifierModel m;
        m.feature_dim_ = feature_dim;
        m.num_categories_ = num_categories;
        m.embedding_size_ = embedding;
        m.hidden_size_ = hidden;
        m.embed_ = DenseLayer("embed", feature_dim, embedding);
        m.act_ = PreluLayer("act", embedding);
        m.encoder_ = BiGruEncoder("enc", embedding, hidden);
        m.output_ = DenseLayer("out", 2 * hidden, num_categories);
        m.embed_.register_params(m.params_, rng);
        m.act_.register_params(m.params_);
        m.encoder_.register_params(m.params_, rng);
        m.output_.register_params(m.params_, rng, /*zero_init=*/true);
        return m;
    }

    std::size_t num_categories() const { return num_categories_; }
    std::size_t feature_dim() const { return feature_dim_; }
    std::size_t embedding_size() const { return embedding_size_; }
    std::size_t hidden_size() const { return hidden_size_; }
    bool frozen() const { return frozen_; }
    void freeze() { frozen_ = true; }
    const ParameterSet& params() const { return params_; }

    // Probabilities for the subsequence formed by the retained frames, in
    // ascending index order. The subset must be non-empty, sorted, unique
    // and in range.
    std::vector<double> classify(const Matrix& features,
                                 const std::vector<std::uint32_t>& subset) const {
        check_subset(features, subset);
        return forward(gather_rows(features, subset), nullptr);
    }

    std::vector<double> classify_full(const Matrix& features) const {
        if (features.rows == 0) throw EmptyInputError("classify_full: empty sequence");
        return forward(features, nullptr);
    }

    // One Adam update on a single labelled video. Rejected once frozen.
    double fit_video(const Matrix& features, int label, double omega, AdamState& adam) {
        if (frozen_) throw StateError("ClassifierModel::fit_video: model is frozen");
        if (label < 0 || static_cast<std::size_t>(label) >= num_categories_)
            throw ValidationError("fit_video: label out of range");
        if (features.rows == 0) throw EmptyInputError("fit_video: empty sequence");

        ForwardTrace tr;
        const std::vector<double> probs = forward(features, &tr);
        const double loss = smoothed_cross_entropy(probs, static_cast<std::size_t>(label), omega);

        params_.zero_grads();
        const std::vector<double> dlogits =
            smoothed_ce_grad_logits(probs, static_cast<std::size_t>(label), omega);
        backward(features, tr, Matrix::from_row(dlogits));
        adam_step(params_, adam);
        return loss;
    }

    ParameterSet& mutable_params() {
        if (frozen_) throw StateError("ClassifierModel: parameters are frozen");
        return params_;
    }

    void save(const std::string& path, double omega, std::uint64_t seed,
              const std::vector<std::string>& category_names) const {
        save_parameter_set(path, params_);
        nlohmann::json j;
        j["C"] = num_categories_;
        j["embedding_size"] = embedding_size_;
        j["hidden_size"] = hidden_size_;
        j["omega"] = omega;
        j["seed"] = seed;
        j["category_names"] = category_names;
        std::ofstream os(path + ".json", std::ios::trunc);
        if (!os) throw IoError("cannot write sidecar: " + path + ".json");
        os << j.dump(2) << "\n";
    }

    static ClassifierModel load(const std::string& path) {
        std::ifstream is(path + ".json");
        if (!is) throw IoError("missing checkpoint sidecar: " + path + ".json");
        nlohmann::json j;
        try {
            is >> j;
        } catch (const nlohmann::json::exception& e) {
            throw IoError("sidecar parse error: " + std::string(e.what()));
        }
        ParameterSet ps = load_parameter_set(path);
        const std::size_t embedding = j.at("embedding_size").get<std::size_t>();
        const std::size_t hidden = j.at("hidden_size").get<std::size_t>();
        const std::size_t C = j.at("C").get<std::size_t>();
        const std::size_t D = ps.value("embed.W").rows;

        Rng dummy(0);
        ClassifierModel m = build(D, C, embedding, hidden, dummy);
        m.params_.copy_values_from(ps);
        m.freeze();
        return m;
    }

private:
    struct ForwardTrace {
        Matrix sub, embedded, activated, encoded, pooled;
        BiGruEncoder::Trace enc;
    };

    static void check_subset(const Matrix& features, const std::vector<std::uint32_t>& subset) {
        if (subset.empty()) throw EmptyInputError("classify: empty frame subset");
        for (std::size_t i = 0; i < subset.size(); ++i) {
            if (subset[i] >= features.rows)
                throw ValidationError("classify: frame index out of range");
            if (i > 0 && subset[i] <= subset[i - 1])
                throw ValidationError("classify: subset must be sorted ascending without duplicates");
        }
    }

    std::vector<double> forward(const Matrix& sub, ForwardTrace* tr) const {
        const Matrix embedded = embed_.forward(params_, sub);
        const Matrix activated = act_.forward(params_, embedded);
        BiGruEncoder::Trace enc_tr;
        const Matrix encoded = encoder_.encode(params_, activated, tr ? &tr->enc : &enc_tr);

        Matrix pooled(1, encoded.cols);
        for (std::size_t t = 0; t < encoded.rows; ++t) {
            const double* row = encoded.row(t);
            for (std::size_t c = 0; c < encoded.cols; ++c) pooled.data[c] += row[c];
        }
        scale_inplace(pooled, 1.0 / static_cast<double>(encoded.rows));

        const Matrix logits = output_.forward(params_, pooled);
        if (tr) {
            tr->sub = sub;
            tr->embedded = embedded;
            tr->activated = activated;
            tr->encoded = encoded;
            tr->pooled = pooled;
        }
        return softmax(logits.data);
    }

    void backward(const Matrix& sub, ForwardTrace& tr, const Matrix& dlogits) {
        Matrix dpooled = output_.backward(params_, tr.pooled, dlogits);
        Matrix dencoded(tr.encoded.rows, tr.encoded.cols);
        const double inv = 1.0 / static_cast<double>(tr.encoded.rows);
        for (std::size_t t = 0; t < dencoded.rows; ++t)
            for (std::size_t c = 0; c < dencoded.cols; ++c) dencoded(t, c) = dpooled.data[c] * inv;
        Matrix dact = encoder_.backward(params_, tr.activated, tr.enc, dencoded);
        Matrix dembed = act_.backward(params_, tr.embedded, dact);
        embed_.backward(params_, sub, dembed);
    }

    ParameterSet params_;
    DenseLayer embed_, output_;
    PreluLayer act_;
    BiGruEncoder encoder_;
    std::size_t feature_dim_ = 0, num_categories_ = 0, embedding_size_ = 0, hidden_size_ = 0;
    bool frozen_ = false;
};

struct ClassifierEpochStats {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double train_accuracy = 0.0;
};

// Trains on the given video indices, one video per update step, shuffled
// per epoch; returns the model frozen.
inline ClassifierModel train_classifier(const Dataset& ds, const std::vector<std::uint32_t>& train_indices,
                                        const ClassifierConfig& cfg,
                                        std::vector<ClassifierEpochStats>* log = nullptr) {
    if (cfg.omega < 0.0 || cfg.omega >= 1.0)
        throw ConfigError("train_classifier: omega must be in [0,1)");
    if (train_indices.empty()) throw ConfigError("train_classifier: empty training split");
    if (ds.num_categories() == 0) throw ConfigError("train_classifier: dataset has no categories");

    std::vector<std::size_t> per_category(ds.num_categories(), 0);
    std::size_t feature_dim = 0;
    for (std::uint32_t idx : train_indices) {
        const VideoRecord& v = ds.videos.at(idx);
        if (!v.has_label()) throw ConfigError("train_classifier: video " + v.id + " has no label");
        per_category[static_cast<std::size_t>(v.label)]++;
        feature_dim = v.features.cols;
    }
    for (std::size_t c = 0; c < per_category.size(); ++c)
        if (per_category[c] == 0)
            throw ConfigError("train_classifier: category " + ds.categories[c] +
                              " has no training videos");

    Rng master(cfg.seed);
    Rng init_rng = master.fork("classifier-init");
    ClassifierModel model = ClassifierModel::build(feature_dim, ds.num_categories(), cfg.embedding,
                                                   cfg.hidden, init_rng);
    AdamState adam(model.params(), cfg.learning_rate);
    Rng shuffle_rng = master.fork("classifier-shuffle");

    std::vector<std::uint32_t> order(train_indices);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::uint32_t idx : order)
            loss_sum += model.fit_video(ds.videos[idx].features, ds.videos[idx].label, cfg.omega, adam);
        if (log) {
            std::size_t correct = 0;
            for (std::uint32_t idx : order) {
                const auto probs = model.classify_full(ds.videos[idx].features);
                if (predict_label(probs) == ds.videos[idx].label) ++correct;
            }
            log->push_back({epoch, loss_sum / static_cast<double>(order.size()),
                            static_cast<double>(correct) / static_cast<double>(order.size())});
        }
    }
    model.freeze();
    return model;
}

// Fraction of videos whose full sequence is classified into its label.
inline double classifier_accuracy(const ClassifierModel& model, const Dataset& ds,
                                  const std::vector<std::uint32_t>& indices) {
    if (indices.empty()) throw ConfigError("classifier_accuracy: empty index list");
    std::size_t correct = 0;
    for (std::uint32_t idx : indices) {
        const auto& v = ds.videos.at(idx);
        if (!v.has_label()) throw ConfigError("classifier_accuracy: video " + v.id + " has no label");
        if (predict_label(model.classify_full(v.features)) == v.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(indices.size());
}

}  // namespace rlsum

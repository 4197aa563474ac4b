#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "rlsum/environment.hpp"
#include "rlsum/errors.hpp"
#include "rlsum/nn.hpp"

namespace rlsum {

struct ActionValues {
    double q_discard = 0.0;  // a = 0
    double q_keep = 0.0;     // a = 1
    double v = 0.0;
    double a_discard = 0.0;
    double a_keep = 0.0;

    double q(int action) const { return action == 1 ? q_keep : q_discard; }
};

// Q(s,a) = V(s) + (A(s,a) - mean_a' A(s,a')) over the two actions.
inline std::pair<double, double> dueling_combine(double v, double a_discard, double a_keep) {
    const double mean = 0.5 * (a_discard + a_keep);
    return {v + (a_discard - mean), v + (a_keep - mean)};
}

// Dueling Q-network over the retained subsequence: same trunk shape as the
// classifier (embedding FC + PReLU + bidirectional GRU), then a value stream
// and a two-way advantage stream read at the attended frame's position. The
// stream outputs start at zero, so a fresh network scores every action 0.
class QNetwork {
public:
    QNetwork() = default;

    static QNetwork build(std::size_t feature_dim, std::size_t embedding, std::size_t hidden,
                          Rng& rng) {
        QNetwork n;
        n.feature_dim_ = feature_dim;
        n.embedding_size_ = embedding;
        n.hidden_size_ = hidden;
        n.embed_ = DenseLayer("embed", feature_dim, embedding);
        n.act_ = PreluLayer("act", embedding);
        n.encoder_ = BiGruEncoder("enc", embedding, hidden);
        n.v_hidden_ = DenseLayer("vstream.fc", 2 * hidden, hidden);
        n.v_act_ = PreluLayer("vstream.act", hidden);
        n.v_out_ = DenseLayer("vstream.out", hidden, 1);
        n.a_hidden_ = DenseLayer("astream.fc", 2 * hidden, hidden);
        n.a_act_ = PreluLayer("astream.act", hidden);
        n.a_out_ = DenseLayer("astream.out", hidden, 2);
        n.embed_.register_params(n.params_, rng);
        n.act_.register_params(n.params_);
        n.encoder_.register_params(n.params_, rng);
        n.v_hidden_.register_params(n.params_, rng);
        n.v_act_.register_params(n.params_);
        n.v_out_.register_params(n.params_, rng, /*zero_init=*/true);
        n.a_hidden_.register_params(n.params_, rng);
        n.a_act_.register_params(n.params_);
        n.a_out_.register_params(n.params_, rng, /*zero_init=*/true);
        return n;
    }

    std::size_t feature_dim() const { return feature_dim_; }
    std::size_t embedding_size() const { return embedding_size_; }
    std::size_t hidden_size() const { return hidden_size_; }
    ParameterSet& params() { return params_; }
    const ParameterSet& params() const { return params_; }

    // Action values with attention on state.attention.
    ActionValues forward(const EpisodeState& state, const Matrix& features) const {
        const std::size_t pos = attended_position(state);
        const Matrix encoded = encode_retained(state, features, nullptr);
        Matrix row(1, encoded.cols);
        std::copy(encoded.row(pos), encoded.row(pos) + encoded.cols, row.row(0));
        return heads(row);
    }

    // One encoder pass, heads applied at every retained position. Row i
    // equals forward() with attention on the i-th retained frame.
    std::vector<ActionValues> forward_all(const EpisodeState& state, const Matrix& features) const {
        if (state.retained.empty()) throw EmptyInputError("QNetwork::forward_all: empty retained set");
        const Matrix encoded = encode_retained_unchecked(state.retained, features, nullptr);
        std::vector<ActionValues> out(encoded.rows);
        Matrix row(1, encoded.cols);
        for (std::size_t i = 0; i < encoded.rows; ++i) {
            std::copy(encoded.row(i), encoded.row(i) + encoded.cols, row.row(0));
            out[i] = heads(row);
        }
        return out;
    }

    struct TrainTrace {
        Matrix sub, embedded, activated, encoded;
        BiGruEncoder::Trace enc;
        Matrix head_in;                      // 1 x 2H encoder row at the attended position
        Matrix vh_out, vh_act, ah_out, ah_act;
        std::size_t pos = 0;
    };

    // Forward pass retaining everything needed for the backward pass;
    // returns Q(s, action).
    double train_forward(const EpisodeState& state, const Matrix& features, int action,
                         TrainTrace& tr) const {
        tr.pos = attended_position(state);
        tr.sub = gather_rows(features, state.retained);
        tr.embedded = embed_.forward(params_, tr.sub);
        tr.activated = act_.forward(params_, tr.embedded);
        tr.encoded = encoder_.encode(params_, tr.activated, &tr.enc);
        tr.head_in = Matrix(1, tr.encoded.cols);
        std::copy(tr.encoded.row(tr.pos), tr.encoded.row(tr.pos) + tr.encoded.cols, tr.head_in.row(0));

        tr.vh_out = v_hidden_.forward(params_, tr.head_in);
        tr.vh_act = v_act_.forward(params_, tr.vh_out);
        const Matrix v = v_out_.forward(params_, tr.vh_act);
        tr.ah_out = a_hidden_.forward(params_, tr.head_in);
        tr.ah_act = a_act_.forward(params_, tr.ah_out);
        const Matrix a = a_out_.forward(params_, tr.ah_act);

        const auto [q0, q1] = dueling_combine(v(0, 0), a(0, 0), a(0, 1));
        return action == 1 ? q1 : q0;
    }

    // Accumulates gradients of dq * Q(s, action) into the parameter set.
    void train_backward(const TrainTrace& tr, int action, double dq) {
        Matrix dv(1, 1);
        dv(0, 0) = dq;  // dQ/dV = 1
        Matrix da(1, 2);
        da(0, 0) = dq * ((action == 0 ? 1.0 : 0.0) - 0.5);
        da(0, 1) = dq * ((action == 1 ? 1.0 : 0.0) - 0.5);

        Matrix d_vh_act = v_out_.backward(params_, tr.vh_act, dv);
        Matrix d_vh_out = v_act_.backward(params_, tr.vh_out, d_vh_act);
        Matrix d_head_v = v_hidden_.backward(params_, tr.head_in, d_vh_out);
        Matrix d_ah_act = a_out_.backward(params_, tr.ah_act, da);
        Matrix d_ah_out = a_act_.backward(params_, tr.ah_out, d_ah_act);
        Matrix d_head_a = a_hidden_.backward(params_, tr.head_in, d_ah_out);

        Matrix d_encoded(tr.encoded.rows, tr.encoded.cols);
        double* row = d_encoded.row(tr.pos);
        for (std::size_t c = 0; c < d_encoded.cols; ++c) row[c] = d_head_v.data[c] + d_head_a.data[c];

        Matrix d_act = encoder_.backward(params_, tr.activated, tr.enc, d_encoded);
        Matrix d_emb = act_.backward(params_, tr.embedded, d_act);
        embed_.backward(params_, tr.sub, d_emb);
    }

    void save(const std::string& path, std::uint64_t seed) const {
        save_parameter_set(path, params_);
        nlohmann::json j;
        j["embedding_size"] = embedding_size_;
        j["hidden_size"] = hidden_size_;
        j["seed"] = seed;
        std::ofstream os(path + ".json", std::ios::trunc);
        if (!os) throw IoError("cannot write sidecar: " + path + ".json");
        os << j.dump(2) << "\n";
    }

    static QNetwork load(const std::string& path) {
        std::ifstream is(path + ".json");
        if (!is) throw IoError("missing checkpoint sidecar: " + path + ".json");
        nlohmann::json j;
        try {
            is >> j;
        } catch (const nlohmann::json::exception& e) {
            throw IoError("sidecar parse error: " + std::string(e.what()));
        }
        ParameterSet ps = load_parameter_set(path);
        Rng dummy(0);
        QNetwork n = build(ps.value("embed.W").rows, j.at("embedding_size").get<std::size_t>(),
                           j.at("hidden_size").get<std::size_t>(), dummy);
        n.params_.copy_values_from(ps);
        return n;
    }

private:
    std::size_t attended_position(const EpisodeState& state) const {
        if (state.retained.empty()) throw EmptyInputError("QNetwork: empty retained set");
        const auto it =
            std::lower_bound(state.retained.begin(), state.retained.end(), state.attention);
        if (it == state.retained.end() || *it != state.attention)
            throw StateError("QNetwork: attended frame " + std::to_string(state.attention) +
                             " is not in the retained set");
        return static_cast<std::size_t>(it - state.retained.begin());
    }

    Matrix encode_retained(const EpisodeState& state, const Matrix& features,
                           BiGruEncoder::Trace* tr) const {
        return encode_retained_unchecked(state.retained, features, tr);
    }

    Matrix encode_retained_unchecked(const std::vector<std::uint32_t>& retained, const Matrix& features,
                                     BiGruEncoder::Trace* tr) const {
        const Matrix sub = gather_rows(features, retained);
        const Matrix embedded = embed_.forward(params_, sub);
        const Matrix activated = act_.forward(params_, embedded);
        return encoder_.encode(params_, activated, tr);
    }

    ActionValues heads(const Matrix& row) const {
        const Matrix v = v_out_.forward(params_, v_act_.forward(params_, v_hidden_.forward(params_, row)));
        const Matrix a = a_out_.forward(params_, a_act_.forward(params_, a_hidden_.forward(params_, row)));
        ActionValues out;
        out.v = v(0, 0);
        out.a_discard = a(0, 0);
        out.a_keep = a(0, 1);
        const auto [q0, q1] = dueling_combine(out.v, out.a_discard, out.a_keep);
        out.q_discard = q0;
        out.q_keep = q1;
        return out;
    }

    ParameterSet params_;
    DenseLayer embed_, v_hidden_, v_out_, a_hidden_, a_out_;
    PreluLayer act_, v_act_, a_act_;
    BiGruEncoder encoder_;
    std::size_t feature_dim_ = 0, embedding_size_ = 0, hidden_size_ = 0;
};

}  // namespace rlsum

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "rlsum/errors.hpp"
#include "rlsum/matrix.hpp"
#include "rlsum/params.hpp"
#include "rlsum/rng.hpp"

namespace rlsum {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Uniform in +-sqrt(6 / (fan_in + fan_out)); rows are fan_in, cols fan_out.
inline void init_scaled_uniform(Matrix& w, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(w.rows + w.cols));
    for (double& v : w.data) v = rng.uniform_range(-limit, limit);
}

// Fully connected layer, out = x * W + b with b broadcast per row.
struct DenseLayer {
    std::string w_name, b_name;
    std::size_t in_dim = 0, out_dim = 0;

    DenseLayer() = default;
    DenseLayer(const std::string& prefix, std::size_t in, std::size_t out)
        : w_name(prefix + ".W"), b_name(prefix + ".b"), in_dim(in), out_dim(out) {}

    void register_params(ParameterSet& ps, Rng& rng, bool zero_init = false) const {
        Matrix& w = ps.add(w_name, in_dim, out_dim);
        if (!zero_init) init_scaled_uniform(w, rng);
        ps.add(b_name, 1, out_dim);
    }

    Matrix forward(const ParameterSet& ps, const Matrix& x) const {
        const Matrix& w = ps.value(w_name);
        if (x.cols != w.rows)
            throw DimensionError("DenseLayer::forward: input width " + std::to_string(x.cols) +
                                 " vs weight rows " + std::to_string(w.rows));
        Matrix out = matmul(x, w);
        const Matrix& b = ps.value(b_name);
        for (std::size_t r = 0; r < out.rows; ++r) {
            double* row = out.row(r);
            for (std::size_t c = 0; c < out.cols; ++c) row[c] += b.data[c];
        }
        return out;
    }

    // Accumulates dW, db; returns gradient w.r.t. x.
    Matrix backward(ParameterSet& ps, const Matrix& x, const Matrix& dout) const {
        add_inplace(ps.grad(w_name), matmul(transpose(x), dout));
        Matrix& db = ps.grad(b_name);
        for (std::size_t r = 0; r < dout.rows; ++r) {
            const double* row = dout.row(r);
            for (std::size_t c = 0; c < dout.cols; ++c) db.data[c] += row[c];
        }
        return matmul(dout, transpose(ps.value(w_name)));
    }
};

// PReLU with one learnable slope per channel (column), initialized at 0.25.
struct PreluLayer {
    std::string a_name;
    std::size_t channels = 0;

    PreluLayer() = default;
    PreluLayer(const std::string& prefix, std::size_t n) : a_name(prefix + ".alpha"), channels(n) {}

    void register_params(ParameterSet& ps) const {
        Matrix& a = ps.add(a_name, 1, channels);
        a.fill(0.25);
    }

    Matrix forward(const ParameterSet& ps, const Matrix& x) const {
        const Matrix& a = ps.value(a_name);
        if (x.cols != a.cols)
            throw DimensionError("PreluLayer::forward: " + std::to_string(x.cols) + " channels vs " +
                                 std::to_string(a.cols) + " slopes");
        Matrix out(x.rows, x.cols);
        for (std::size_t r = 0; r < x.rows; ++r) {
            const double* xi = x.row(r);
            double* oi = out.row(r);
            for (std::size_t c = 0; c < x.cols; ++c) oi[c] = xi[c] > 0.0 ? xi[c] : a.data[c] * xi[c];
        }
        return out;
    }

    Matrix backward(ParameterSet& ps, const Matrix& x, const Matrix& dout) const {
        const Matrix& a = ps.value(a_name);
        Matrix& da = ps.grad(a_name);
        Matrix dx(x.rows, x.cols);
        for (std::size_t r = 0; r < x.rows; ++r) {
            const double* xi = x.row(r);
            const double* di = dout.row(r);
            double* gi = dx.row(r);
            for (std::size_t c = 0; c < x.cols; ++c) {
                if (xi[c] > 0.0) {
                    gi[c] = di[c];
                } else {
                    gi[c] = a.data[c] * di[c];
                    da.data[c] += xi[c] * di[c];
                }
            }
        }
        return dx;
    }
};

// Gated recurrent cell:
//   z = sigmoid(x Wz + h Uz + bz)
//   r = sigmoid(x Wr + h Ur + br)
//   hc = tanh(x Wh + (r . h) Uh + bh)
//   h' = (1 - z) . h + z . hc
struct GruCell {
    std::string prefix;
    std::size_t in_dim = 0, hidden = 0;

    GruCell() = default;
    GruCell(const std::string& p, std::size_t in, std::size_t h) : prefix(p), in_dim(in), hidden(h) {}

    void register_params(ParameterSet& ps, Rng& rng) const {
        for (const char* g : {"z", "r", "h"}) {
            Matrix& w = ps.add(prefix + ".W" + g, in_dim, hidden);
            init_scaled_uniform(w, rng);
            Matrix& u = ps.add(prefix + ".U" + g, hidden, hidden);
            init_scaled_uniform(u, rng);
            ps.add(prefix + ".b" + g, 1, hidden);
        }
    }

    struct Trace {
        Matrix z, r, hcand;  // T x H gate activations
        Matrix states;       // (T+1) x H, row 0 is the initial state
    };

    // One step; x is 1 x in_dim, h is 1 x hidden, returns 1 x hidden.
    Matrix step(const ParameterSet& ps, const Matrix& x, const Matrix& h) const {
        if (x.rows != 1 || h.rows != 1 || x.cols != in_dim || h.cols != hidden)
            throw DimensionError("GruCell::step: expected 1x" + std::to_string(in_dim) + " input and 1x" +
                                 std::to_string(hidden) + " state");
        Matrix seq = x;
        Trace tr;
        run(ps, seq, h, &tr);
        Matrix out(1, hidden);
        std::copy(tr.states.row(1), tr.states.row(1) + hidden, out.row(0));
        return out;
    }

    // Runs the cell over the whole sequence (T x in_dim) from initial state
    // h0 (1 x hidden); returns T x hidden states. Trace is optional.
    Matrix run(const ParameterSet& ps, const Matrix& seq, const Matrix& h0, Trace* trace) const {
        if (seq.cols != in_dim)
            throw DimensionError("GruCell::run: input width " + std::to_string(seq.cols) + " vs " +
                                 std::to_string(in_dim));
        const std::size_t T = seq.rows;
        const Matrix& uz = ps.value(prefix + ".Uz");
        const Matrix& ur = ps.value(prefix + ".Ur");
        const Matrix& uh = ps.value(prefix + ".Uh");
        const Matrix& bz = ps.value(prefix + ".bz");
        const Matrix& br = ps.value(prefix + ".br");
        const Matrix& bh = ps.value(prefix + ".bh");

        // Input contributions for all steps at once.
        Matrix xz = matmul(seq, ps.value(prefix + ".Wz"));
        Matrix xr = matmul(seq, ps.value(prefix + ".Wr"));
        Matrix xh = matmul(seq, ps.value(prefix + ".Wh"));

        Trace local;
        Trace& tr = trace ? *trace : local;
        tr.z = Matrix(T, hidden);
        tr.r = Matrix(T, hidden);
        tr.hcand = Matrix(T, hidden);
        tr.states = Matrix(T + 1, hidden);
        std::copy(h0.row(0), h0.row(0) + hidden, tr.states.row(0));

        std::vector<double> rh(hidden), acc(hidden);
        for (std::size_t t = 0; t < T; ++t) {
            const double* h = tr.states.row(t);
            double* z = tr.z.row(t);
            double* r = tr.r.row(t);
            double* hc = tr.hcand.row(t);
            double* hn = tr.states.row(t + 1);

            // z gate
            for (std::size_t c = 0; c < hidden; ++c) acc[c] = xz(t, c) + bz.data[c];
            for (std::size_t k = 0; k < hidden; ++k) {
                const double hk = h[k];
                if (hk == 0.0) continue;
                const double* u = uz.row(k);
                for (std::size_t c = 0; c < hidden; ++c) acc[c] += hk * u[c];
            }
            for (std::size_t c = 0; c < hidden; ++c) z[c] = sigmoid(acc[c]);

            // r gate
            for (std::size_t c = 0; c < hidden; ++c) acc[c] = xr(t, c) + br.data[c];
            for (std::size_t k = 0; k < hidden; ++k) {
                const double hk = h[k];
                if (hk == 0.0) continue;
                const double* u = ur.row(k);
                for (std::size_t c = 0; c < hidden; ++c) acc[c] += hk * u[c];
            }
            for (std::size_t c = 0; c < hidden; ++c) r[c] = sigmoid(acc[c]);

            // candidate
            for (std::size_t c = 0; c < hidden; ++c) rh[c] = r[c] * h[c];
            for (std::size_t c = 0; c < hidden; ++c) acc[c] = xh(t, c) + bh.data[c];
            for (std::size_t k = 0; k < hidden; ++k) {
                const double v = rh[k];
                if (v == 0.0) continue;
                const double* u = uh.row(k);
                for (std::size_t c = 0; c < hidden; ++c) acc[c] += v * u[c];
            }
            for (std::size_t c = 0; c < hidden; ++c) hc[c] = std::tanh(acc[c]);

            for (std::size_t c = 0; c < hidden; ++c) hn[c] = (1.0 - z[c]) * h[c] + z[c] * hc[c];
        }

        Matrix out(T, hidden);
        std::copy(tr.states.data.begin() + static_cast<long>(hidden), tr.states.data.end(),
                  out.data.begin());
        return out;
    }

    // Exact backpropagation through time. dstates is T x hidden (gradient on
    // each emitted state); accumulates parameter grads, returns dseq.
    Matrix backward(ParameterSet& ps, const Matrix& seq, const Trace& tr, const Matrix& dstates) const {
        const std::size_t T = seq.rows;
        if (dstates.rows != T || dstates.cols != hidden)
            throw DimensionError("GruCell::backward: dstates shape mismatch");

        const Matrix& uz = ps.value(prefix + ".Uz");
        const Matrix& ur = ps.value(prefix + ".Ur");
        const Matrix& uh = ps.value(prefix + ".Uh");

        Matrix daz(T, hidden), dar(T, hidden), dah(T, hidden);
        std::vector<double> dh(hidden, 0.0), dnext(hidden), drh(hidden);

        for (std::size_t ti = T; ti-- > 0;) {
            const double* z = tr.z.row(ti);
            const double* r = tr.r.row(ti);
            const double* hc = tr.hcand.row(ti);
            const double* hp = tr.states.row(ti);
            const double* ds = dstates.row(ti);
            double* az = daz.row(ti);
            double* ar = dar.row(ti);
            double* ah = dah.row(ti);

            for (std::size_t c = 0; c < hidden; ++c) dh[c] += ds[c];

            for (std::size_t c = 0; c < hidden; ++c) {
                const double dhc = dh[c] * z[c];
                const double dz = dh[c] * (hc[c] - hp[c]);
                dnext[c] = dh[c] * (1.0 - z[c]);
                ah[c] = dhc * (1.0 - hc[c] * hc[c]);
                az[c] = dz * z[c] * (1.0 - z[c]);
            }
            // through Uh into r . h
            for (std::size_t c = 0; c < hidden; ++c) {
                double s = 0.0;
                const double* u = uh.row(c);
                for (std::size_t k = 0; k < hidden; ++k) s += ah[k] * u[k];
                drh[c] = s;
            }
            for (std::size_t c = 0; c < hidden; ++c) {
                const double dr = drh[c] * hp[c];
                dnext[c] += drh[c] * r[c];
                ar[c] = dr * r[c] * (1.0 - r[c]);
            }
            // through Uz, Ur into previous state
            for (std::size_t c = 0; c < hidden; ++c) {
                double s = 0.0;
                const double* urow = uz.row(c);
                for (std::size_t k = 0; k < hidden; ++k) s += az[k] * urow[k];
                const double* vrow = ur.row(c);
                for (std::size_t k = 0; k < hidden; ++k) s += ar[k] * vrow[k];
                dnext[c] += s;
            }
            dh = dnext;
        }

        // Batched weight gradients.
        Matrix hprev(T, hidden);
        std::copy(tr.states.data.begin(), tr.states.data.begin() + static_cast<long>(T * hidden),
                  hprev.data.begin());
        Matrix rh(T, hidden);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t c = 0; c < hidden; ++c) rh(t, c) = tr.r(t, c) * hprev(t, c);

        const Matrix seq_t = transpose(seq);
        const Matrix hprev_t = transpose(hprev);
        add_inplace(ps.grad(prefix + ".Wz"), matmul(seq_t, daz));
        add_inplace(ps.grad(prefix + ".Wr"), matmul(seq_t, dar));
        add_inplace(ps.grad(prefix + ".Wh"), matmul(seq_t, dah));
        add_inplace(ps.grad(prefix + ".Uz"), matmul(hprev_t, daz));
        add_inplace(ps.grad(prefix + ".Ur"), matmul(hprev_t, dar));
        add_inplace(ps.grad(prefix + ".Uh"), matmul(transpose(rh), dah));
        for (const char* g : {"z", "r", "h"}) {
            Matrix& db = ps.grad(prefix + ".b" + std::string(g));
            const Matrix& da = *g == 'z' ? daz : (*g == 'r' ? dar : dah);
            for (std::size_t t = 0; t < T; ++t) {
                const double* row = da.row(t);
                for (std::size_t c = 0; c < hidden; ++c) db.data[c] += row[c];
            }
        }

        Matrix dseq = matmul(daz, transpose(ps.value(prefix + ".Wz")));
        add_inplace(dseq, matmul(dar, transpose(ps.value(prefix + ".Wr"))));
        add_inplace(dseq, matmul(dah, transpose(ps.value(prefix + ".Wh"))));
        return dseq;
    }
};

// Bidirectional encoder: row t of the output concatenates the forward state
// at t with the backward state at t; output width is 2 * hidden.
struct BiGruEncoder {
    GruCell fw, bw;
    std::size_t in_dim = 0, hidden = 0;

    BiGruEncoder() = default;
    BiGruEncoder(const std::string& prefix, std::size_t in, std::size_t h)
        : fw(prefix + ".fw", in, h), bw(prefix + ".bw", in, h), in_dim(in), hidden(h) {}

    void register_params(ParameterSet& ps, Rng& rng) const {
        fw.register_params(ps, rng);
        bw.register_params(ps, rng);
    }

    struct Trace {
        GruCell::Trace fw, bw;
        Matrix reversed;  // input in reverse order, reused by backward
    };

    static Matrix reverse_rows(const Matrix& m) {
        Matrix out(m.rows, m.cols);
        for (std::size_t r = 0; r < m.rows; ++r)
            std::copy(m.row(m.rows - 1 - r), m.row(m.rows - 1 - r) + m.cols, out.row(r));
        return out;
    }

    Matrix encode(const ParameterSet& ps, const Matrix& seq, Trace* trace) const {
        if (seq.rows == 0) throw EmptyInputError("BiGruEncoder::encode: empty sequence");
        const std::size_t T = seq.rows;
        Matrix h0(1, hidden);
        Trace local;
        Trace& tr = trace ? *trace : local;
        Matrix f = fw.run(ps, seq, h0, &tr.fw);
        tr.reversed = reverse_rows(seq);
        Matrix b = bw.run(ps, tr.reversed, h0, &tr.bw);
        Matrix out(T, 2 * hidden);
        for (std::size_t t = 0; t < T; ++t) {
            std::copy(f.row(t), f.row(t) + hidden, out.row(t));
            std::copy(b.row(T - 1 - t), b.row(T - 1 - t) + hidden, out.row(t) + hidden);
        }
        return out;
    }

    Matrix backward(ParameterSet& ps, const Matrix& seq, const Trace& tr, const Matrix& dout) const {
        const std::size_t T = seq.rows;
        if (dout.rows != T || dout.cols != 2 * hidden)
            throw DimensionError("BiGruEncoder::backward: dout shape mismatch");
        Matrix df(T, hidden), db(T, hidden);
        for (std::size_t t = 0; t < T; ++t) {
            const double* row = dout.row(t);
            std::copy(row, row + hidden, df.row(t));
            // backward-cell state for original position t sits at reversed row T-1-t
            std::copy(row + hidden, row + 2 * hidden, db.row(T - 1 - t));
        }
        Matrix dseq = fw.backward(ps, seq, tr.fw, df);
        Matrix dRev = bw.backward(ps, tr.reversed, tr.bw, db);
        add_inplace(dseq, reverse_rows(dRev));
        return dseq;
    }
};

// Numerically stable softmax; shift-invariant, sums to 1.
inline std::vector<double> softmax(const std::vector<double>& logits) {
    if (logits.empty()) throw EmptyInputError("softmax: empty input");
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

// Cross entropy against the smoothed target q(k) = (1-omega) [k == y] + omega / C.
// Probabilities are clamped at 1e-12 before the log.
inline double smoothed_cross_entropy(const std::vector<double>& probs, std::size_t y, double omega) {
    if (y >= probs.size()) throw ValidationError("smoothed_cross_entropy: class index out of range");
    if (omega < 0.0 || omega >= 1.0) throw ValidationError("smoothed_cross_entropy: omega must be in [0,1)");
    const double c = static_cast<double>(probs.size());
    double loss = 0.0;
    for (std::size_t k = 0; k < probs.size(); ++k) {
        const double q = (k == y ? 1.0 - omega : 0.0) + omega / c;
        loss -= q * std::log(std::max(probs[k], 1e-12));
    }
    return loss;
}

// Gradient of smoothed cross entropy w.r.t. the logits feeding the softmax
// that produced `probs`: p - q.
inline std::vector<double> smoothed_ce_grad_logits(const std::vector<double>& probs, std::size_t y,
                                                   double omega) {
    if (y >= probs.size()) throw ValidationError("smoothed_ce_grad_logits: class index out of range");
    const double c = static_cast<double>(probs.size());
    std::vector<double> g(probs.size());
    for (std::size_t k = 0; k < probs.size(); ++k) {
        const double q = (k == y ? 1.0 - omega : 0.0) + omega / c;
        g[k] = probs[k] - q;
    }
    return g;
}

struct HuberResult {
    double loss;
    double grad;  // d loss / d prediction, magnitude never above 1
};

// Huber loss with unit transition point: 0.5 e^2 for |e| <= 1, |e| - 0.5 otherwise.
inline HuberResult huber_loss(double prediction, double target) {
    const double e = prediction - target;
    if (std::abs(e) <= 1.0) return {0.5 * e * e, e};
    return {std::abs(e) - 0.5, e > 0.0 ? 1.0 : -1.0};
}

// Adam with bias correction; decay rates and epsilon are the published defaults.
struct AdamState {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    std::vector<Matrix> m, v;

    explicit AdamState(const ParameterSet& ps, double learning_rate = 1e-4) : lr(learning_rate) {
        m.reserve(ps.size());
        v.reserve(ps.size());
        for (std::size_t i = 0; i < ps.size(); ++i) {
            m.emplace_back(ps.entry(i).value.rows, ps.entry(i).value.cols);
            v.emplace_back(ps.entry(i).value.rows, ps.entry(i).value.cols);
        }
    }
};

inline void adam_step(ParameterSet& ps, AdamState& st) {
    if (st.m.size() != ps.size()) throw DimensionError("adam_step: state does not match parameter set");
    st.step += 1;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (std::size_t i = 0; i < ps.size(); ++i) {
        auto& e = ps.entry(i);
        Matrix& m = st.m[i];
        Matrix& v = st.v[i];
        for (std::size_t j = 0; j < e.value.data.size(); ++j) {
            const double g = e.grad.data[j];
            m.data[j] = st.beta1 * m.data[j] + (1.0 - st.beta1) * g;
            v.data[j] = st.beta2 * v.data[j] + (1.0 - st.beta2) * g * g;
            const double mhat = m.data[j] / bc1;
            const double vhat = v.data[j] / bc2;
            e.value.data[j] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
        }
    }
}

// Scales all gradients so their global L2 norm does not exceed max_norm;
// returns the applied factor.
inline double clip_gradients(ParameterSet& ps, double max_norm) {
    if (max_norm <= 0.0) throw ValidationError("clip_gradients: max_norm must be positive");
    double sq = 0.0;
    for (std::size_t i = 0; i < ps.size(); ++i)
        for (double g : ps.entry(i).grad.data) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm <= max_norm) return 1.0;
    const double factor = max_norm / norm;
    for (std::size_t i = 0; i < ps.size(); ++i) scale_inplace(ps.entry(i).grad, factor);
    return factor;
}

}  // namespace rlsum

#include "catch_amalgamated.hpp"

#include <cmath>

#include "rlsum/nn.hpp"
#include "rlsum/rng.hpp"
#include "support.hpp"

using namespace rlsum;
using Catch::Approx;

TEST_CASE("matrix basics and matmul") {
    Matrix a(2, 3);
    a(0, 0) = 1; a(0, 1) = 2; a(0, 2) = 3;
    a(1, 0) = 4; a(1, 1) = 5; a(1, 2) = 6;
    Matrix b(3, 2);
    b(0, 0) = 7; b(0, 1) = 8;
    b(1, 0) = 9; b(1, 1) = 10;
    b(2, 0) = 11; b(2, 1) = 12;
    Matrix c = matmul(a, b);
    CHECK(c(0, 0) == Approx(58.0));
    CHECK(c(0, 1) == Approx(64.0));
    CHECK(c(1, 0) == Approx(139.0));
    CHECK(c(1, 1) == Approx(154.0));
    CHECK_THROWS_AS(matmul(a, a), DimensionError);

    Matrix t = transpose(a);
    CHECK(t.rows == 3);
    CHECK(t(2, 1) == Approx(6.0));
}

TEST_CASE("rng forks are label-addressed and order-independent") {
    Rng master(42);
    Rng a1 = master.fork("alpha");
    master.uniform();  // consuming the parent must not change later forks
    Rng a2 = master.fork("alpha");
    CHECK(a1.next_u64() == a2.next_u64());
    Rng b = master.fork("beta");
    CHECK(a1.next_u64() != b.next_u64());
}

TEST_CASE("dense forward examples") {
    Rng rng(1);
    ParameterSet ps;
    DenseLayer layer("fc", 2, 2);
    layer.register_params(ps, rng);

    SECTION("identity weights, zero bias pass the input through") {
        ps.value("fc.W") = Matrix::identity(2);
        ps.value("fc.b").fill(0.0);
        Matrix x = Matrix::from_row({3.5, -1.25});
        Matrix y = layer.forward(ps, x);
        CHECK(y(0, 0) == 3.5);
        CHECK(y(0, 1) == -1.25);
    }
    SECTION("zero weights expose the bias") {
        ps.value("fc.W").fill(0.0);
        ps.value("fc.b") = Matrix::from_row({1.0, 2.0});
        Matrix y = layer.forward(ps, Matrix::from_row({9.0, -9.0}));
        CHECK(y(0, 0) == 1.0);
        CHECK(y(0, 1) == 2.0);
    }
    SECTION("hand-computed affine map") {
        ps.value("fc.W") = Matrix::identity(2);
        ps.value("fc.b") = Matrix::from_row({0.5, -0.5});
        Matrix y = layer.forward(ps, Matrix::from_row({1.0, 2.0}));
        CHECK(y(0, 0) == Approx(1.5).margin(1e-15));
        CHECK(y(0, 1) == Approx(1.5).margin(1e-15));
    }
    SECTION("shape mismatch throws") {
        CHECK_THROWS_AS(layer.forward(ps, Matrix(1, 3, 1.0)), DimensionError);
    }
}

TEST_CASE("dense gradients match finite differences") {
    Rng rng(7);
    ParameterSet ps;
    DenseLayer layer("fc", 3, 2);
    layer.register_params(ps, rng);
    Matrix x(4, 3);
    for (double& v : x.data) v = rng.normal();
    Matrix probe(4, 2);
    for (double& v : probe.data) v = rng.normal();

    auto loss = [&]() {
        Matrix y = layer.forward(ps, x);
        double s = 0.0;
        for (std::size_t i = 0; i < y.data.size(); ++i) s += y.data[i] * probe.data[i];
        return s;
    };
    ps.zero_grads();
    layer.backward(ps, x, probe);
    CHECK(testsupport::max_grad_error(ps, loss) < 1e-6);
}

TEST_CASE("prelu examples and gradients") {
    ParameterSet ps;
    PreluLayer act("act", 3);
    act.register_params(ps);

    Matrix x = Matrix::from_row({3.0, -2.0, 0.0});
    Matrix y = act.forward(ps, x);
    CHECK(y(0, 0) == 3.0);
    CHECK(y(0, 1) == Approx(-0.5).margin(1e-15));  // slope 0.25
    CHECK(y(0, 2) == 0.0);

    CHECK_THROWS_AS(act.forward(ps, Matrix(1, 2, 1.0)), DimensionError);

    Rng rng(11);
    Matrix xs(5, 3);
    for (double& v : xs.data) v = rng.normal();
    Matrix probe(5, 3);
    for (double& v : probe.data) v = rng.normal();
    for (double& v : ps.value("act.alpha").data) v = rng.uniform_range(0.05, 0.6);

    auto loss = [&]() {
        Matrix out = act.forward(ps, xs);
        double s = 0.0;
        for (std::size_t i = 0; i < out.data.size(); ++i) s += out.data[i] * probe.data[i];
        return s;
    };
    ps.zero_grads();
    act.backward(ps, xs, probe);
    CHECK(testsupport::max_grad_error(ps, loss) < 1e-6);
}

TEST_CASE("gru cell hand-evaluated cases") {
    Rng rng(3);
    ParameterSet ps;
    GruCell cell("gru", 3, 4);
    cell.register_params(ps, rng);

    SECTION("all-zero parameters and state give a zero next state") {
        ParameterSet zps;
        GruCell zcell("gru", 3, 4);
        Rng zr(0);
        zcell.register_params(zps, zr);
        for (std::size_t i = 0; i < zps.size(); ++i) zps.entry(i).value.fill(0.0);
        Matrix h = zcell.step(zps, Matrix::from_row({1.0, -2.0, 3.0}), Matrix(1, 4));
        for (double v : h.data) CHECK(v == 0.0);
    }
    SECTION("saturated update gate keeps the previous state") {
        ps.value("gru.bz").fill(-40.0);  // z ~ 0 so h' ~ h
        Matrix h0 = Matrix::from_row({0.3, -0.7, 1.1, 0.05});
        Matrix h1 = cell.step(ps, Matrix::from_row({0.5, 0.5, 0.5}), h0);
        for (std::size_t c = 0; c < 4; ++c) CHECK(h1(0, c) == Approx(h0(0, c)).margin(1e-12));
    }
    SECTION("shape mismatch throws") {
        CHECK_THROWS_AS(cell.step(ps, Matrix(1, 2, 0.0), Matrix(1, 4)), DimensionError);
    }
}

TEST_CASE("gru cell gradients match finite differences on a 4-dim instance") {
    Rng rng(19);
    ParameterSet ps;
    GruCell cell("gru", 4, 4);
    cell.register_params(ps, rng);

    Matrix seq(1, 4);
    for (double& v : seq.data) v = rng.normal();
    Matrix h0(1, 4);
    for (double& v : h0.data) v = rng.normal() * 0.5;
    Matrix probe(1, 4);
    for (double& v : probe.data) v = rng.normal();

    auto loss = [&]() {
        Matrix h = cell.run(ps, seq, h0, nullptr);
        double s = 0.0;
        for (std::size_t i = 0; i < h.data.size(); ++i) s += h.data[i] * probe.data[i];
        return s;
    };
    ps.zero_grads();
    GruCell::Trace tr;
    cell.run(ps, seq, h0, &tr);
    cell.backward(ps, seq, tr, probe);
    CHECK(testsupport::max_grad_error(ps, loss) < 1e-5);
}

TEST_CASE("bidirectional encoder structure") {
    Rng rng(5);
    ParameterSet ps;
    BiGruEncoder enc("enc", 3, 2);
    enc.register_params(ps, rng);

    SECTION("empty sequence is rejected") {
        CHECK_THROWS_AS(enc.encode(ps, Matrix(0, 3), nullptr), EmptyInputError);
    }
    SECTION("single frame runs both directions on the same frame") {
        Matrix seq(1, 3);
        for (double& v : seq.data) v = rng.normal();
        Matrix out = enc.encode(ps, seq, nullptr);
        REQUIRE(out.rows == 1);
        REQUIRE(out.cols == 4);
        Matrix h0(1, 2);
        Matrix f = enc.fw.step(ps, seq, h0);
        Matrix b = enc.bw.step(ps, seq, h0);
        CHECK(out(0, 0) == f(0, 0));
        CHECK(out(0, 1) == f(0, 1));
        CHECK(out(0, 2) == b(0, 0));
        CHECK(out(0, 3) == b(0, 1));
    }
    SECTION("with tied direction weights, reversing the input swaps the halves") {
        // copy forward-cell weights onto the backward cell
        for (const char* g : {"z", "r", "h"}) {
            const std::string s(g);
            ps.value("enc.bw.W" + s).data = ps.value("enc.fw.W" + s).data;
            ps.value("enc.bw.U" + s).data = ps.value("enc.fw.U" + s).data;
            ps.value("enc.bw.b" + s).data = ps.value("enc.fw.b" + s).data;
        }
        Matrix seq(4, 3);
        for (double& v : seq.data) v = rng.normal();
        Matrix out = enc.encode(ps, seq, nullptr);
        Matrix rout = enc.encode(ps, BiGruEncoder::reverse_rows(seq), nullptr);
        for (std::size_t t = 0; t < 4; ++t) {
            for (std::size_t c = 0; c < 2; ++c) {
                CHECK(rout(3 - t, c + 2) == Approx(out(t, c)).margin(1e-14));
                CHECK(rout(3 - t, c) == Approx(out(t, c + 2)).margin(1e-14));
            }
        }
    }
    SECTION("forward pass is bit-deterministic") {
        Matrix seq(5, 3);
        for (double& v : seq.data) v = rng.normal();
        Matrix a = enc.encode(ps, seq, nullptr);
        Matrix b = enc.encode(ps, seq, nullptr);
        CHECK(a.data == b.data);
    }
}

TEST_CASE("bidirectional encoder gradients, T=3 D=4 hidden=3") {
    Rng rng(23);
    ParameterSet ps;
    BiGruEncoder enc("enc", 4, 3);
    enc.register_params(ps, rng);

    Matrix seq(3, 4);
    for (double& v : seq.data) v = rng.normal();
    Matrix probe(3, 6);
    for (double& v : probe.data) v = rng.normal();

    auto loss = [&]() {
        Matrix out = enc.encode(ps, seq, nullptr);
        double s = 0.0;
        for (std::size_t i = 0; i < out.data.size(); ++i) s += out.data[i] * probe.data[i];
        return s;
    };
    ps.zero_grads();
    BiGruEncoder::Trace tr;
    enc.encode(ps, seq, &tr);
    enc.backward(ps, seq, tr, probe);
    CHECK(testsupport::max_grad_error(ps, loss) < 1e-5);
}

TEST_CASE("bigru input gradient is exact") {
    Rng rng(29);
    ParameterSet ps;
    BiGruEncoder enc("enc", 3, 2);
    enc.register_params(ps, rng);
    Matrix seq(4, 3);
    for (double& v : seq.data) v = rng.normal();
    Matrix probe(4, 4);
    for (double& v : probe.data) v = rng.normal();

    BiGruEncoder::Trace tr;
    enc.encode(ps, seq, &tr);
    ps.zero_grads();
    Matrix dseq = enc.backward(ps, seq, tr, probe);

    const double h = 1e-6;
    for (std::size_t i = 0; i < seq.data.size(); ++i) {
        const double backup = seq.data[i];
        auto eval = [&]() {
            Matrix out = enc.encode(ps, seq, nullptr);
            double s = 0.0;
            for (std::size_t k = 0; k < out.data.size(); ++k) s += out.data[k] * probe.data[k];
            return s;
        };
        seq.data[i] = backup + h;
        const double lp = eval();
        seq.data[i] = backup - h;
        const double lm = eval();
        seq.data[i] = backup;
        const double numeric = (lp - lm) / (2.0 * h);
        CHECK(dseq.data[i] == Approx(numeric).margin(1e-5));
    }
}

TEST_CASE("softmax examples and invariants") {
    auto p = softmax({0.0, 0.0});
    CHECK(p[0] == Approx(0.5).margin(1e-15));
    CHECK(p[1] == Approx(0.5).margin(1e-15));

    auto q = softmax({7.3, 7.3, 7.3});
    for (double v : q) CHECK(v == Approx(1.0 / 3.0).margin(1e-15));

    auto r = softmax({1.0, 2.0});
    CHECK(r[0] == Approx(0.26894).margin(1e-5));
    CHECK(r[1] == Approx(0.73106).margin(1e-5));

    Rng rng(31);
    for (int it = 0; it < 25; ++it) {
        std::vector<double> logits(1 + rng.uniform_index(8));
        for (double& v : logits) v = rng.uniform_range(-30.0, 30.0);
        auto s = softmax(logits);
        double sum = 0.0;
        for (double v : s) {
            CHECK(v > 0.0);
            sum += v;
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
        const double shift = rng.uniform_range(-100.0, 100.0);
        std::vector<double> shifted = logits;
        for (double& v : shifted) v += shift;
        auto s2 = softmax(shifted);
        for (std::size_t i = 0; i < s.size(); ++i) CHECK(std::abs(s[i] - s2[i]) < 1e-12);
    }
}

TEST_CASE("smoothed cross entropy") {
    SECTION("omega = 0 equals plain cross entropy exactly") {
        std::vector<double> p = {0.2, 0.5, 0.3};
        CHECK(smoothed_cross_entropy(p, 1, 0.0) == -std::log(0.5));
    }
    SECTION("uniform prediction with C=10, omega=0.1 gives log 10") {
        std::vector<double> p(10, 0.1);
        CHECK(smoothed_cross_entropy(p, 3, 0.1) == Approx(std::log(10.0)).margin(1e-12));
        CHECK(smoothed_cross_entropy(p, 3, 0.1) == Approx(2.302585093).margin(1e-9));
    }
    SECTION("smoothed target weights: q(y)=0.91, q(other)=0.01 for C=10, omega=0.1") {
        std::vector<double> p(10, 0.1);
        auto g = smoothed_ce_grad_logits(p, 3, 0.1);
        CHECK(g[3] == Approx(0.1 - 0.91).margin(1e-15));
        for (std::size_t k = 0; k < 10; ++k)
            if (k != 3) CHECK(g[k] == Approx(0.1 - 0.01).margin(1e-15));
    }
    SECTION("zero probability where the target has mass is clamped, not NaN") {
        std::vector<double> p = {1.0, 0.0};
        const double loss = smoothed_cross_entropy(p, 1, 0.1);
        CHECK(std::isfinite(loss));
        CHECK(loss > 0.0);
    }
    SECTION("logit gradient matches finite differences through softmax") {
        Rng rng(37);
        std::vector<double> logits(6);
        for (double& v : logits) v = rng.normal();
        const std::size_t y = 2;
        const double omega = 0.1;
        auto eval = [&](const std::vector<double>& l) {
            return smoothed_cross_entropy(softmax(l), y, omega);
        };
        auto g = smoothed_ce_grad_logits(softmax(logits), y, omega);
        const double h = 1e-6;
        for (std::size_t i = 0; i < logits.size(); ++i) {
            std::vector<double> lp = logits, lm = logits;
            lp[i] += h;
            lm[i] -= h;
            const double numeric = (eval(lp) - eval(lm)) / (2.0 * h);
            CHECK(g[i] == Approx(numeric).margin(1e-7));
        }
    }
}

TEST_CASE("huber loss values and bounded gradient") {
    CHECK(huber_loss(1.0, 1.0).loss == 0.0);
    CHECK(huber_loss(1.5, 1.0).loss == Approx(0.125).margin(1e-15));
    CHECK(huber_loss(4.0, 1.0).loss == Approx(2.5).margin(1e-15));
    CHECK(huber_loss(-2.0, 1.0).loss == Approx(2.5).margin(1e-15));
    CHECK(huber_loss(4.0, 1.0).grad == 1.0);
    CHECK(huber_loss(-2.0, 1.0).grad == -1.0);

    Rng rng(41);
    for (int it = 0; it < 100; ++it) {
        const double pred = rng.uniform_range(-20.0, 20.0);
        const double target = rng.uniform_range(-20.0, 20.0);
        CHECK(std::abs(huber_loss(pred, target).grad) <= 1.0);
    }
}

TEST_CASE("adam step behaviour") {
    Rng rng(43);
    ParameterSet ps;
    Matrix& w = ps.add("w", 1, 2);
    w(0, 0) = 1.0;
    w(0, 1) = -2.0;
    AdamState st(ps, 1e-4);

    SECTION("zero gradients leave parameters unchanged") {
        adam_step(ps, st);
        CHECK(w(0, 0) == 1.0);
        CHECK(w(0, 1) == -2.0);
        CHECK(st.step == 1);
    }
    SECTION("first-step displacement is about the learning rate, against the gradient") {
        ps.grad("w")(0, 0) = 0.5;
        ps.grad("w")(0, 1) = -0.25;
        adam_step(ps, st);
        CHECK(w(0, 0) == Approx(1.0 - 1e-4).epsilon(1e-6));
        CHECK(w(0, 1) == Approx(-2.0 + 1e-4).epsilon(1e-6));
    }
    SECTION("repeated identical gradients move monotonically") {
        for (int i = 0; i < 2; ++i) {
            ps.grad("w")(0, 0) = 0.5;
            const double before = w(0, 0);
            adam_step(ps, st);
            CHECK(w(0, 0) < before);
        }
    }
}

TEST_CASE("gradient clipping") {
    ParameterSet ps;
    ps.add("a", 1, 2);
    ps.add("b", 1, 1);

    SECTION("norm below the threshold is untouched") {
        ps.grad("a")(0, 0) = 3.0;
        CHECK(clip_gradients(ps, 5.0) == 1.0);
        CHECK(ps.grad("a")(0, 0) == 3.0);
    }
    SECTION("norm above the threshold is rescaled onto it") {
        ps.grad("a")(0, 0) = 6.0;
        ps.grad("a")(0, 1) = 8.0;  // norm 10
        const double factor = clip_gradients(ps, 5.0);
        CHECK(factor == Approx(0.5).margin(1e-15));
        double sq = 0.0;
        for (std::size_t i = 0; i < ps.size(); ++i)
            for (double g : ps.entry(i).grad.data) sq += g * g;
        CHECK(std::sqrt(sq) == Approx(5.0).margin(1e-9));
    }
    SECTION("all-zero gradients are unchanged") {
        CHECK(clip_gradients(ps, 5.0) == 1.0);
    }
    SECTION("clipping is idempotent") {
        ps.grad("a")(0, 0) = 6.0;
        ps.grad("a")(0, 1) = 8.0;
        ps.grad("b")(0, 0) = -2.0;
        clip_gradients(ps, 5.0);
        auto snapshot_a = ps.grad("a").data;
        auto snapshot_b = ps.grad("b").data;
        CHECK(clip_gradients(ps, 5.0) == 1.0);
        CHECK(ps.grad("a").data == snapshot_a);
        CHECK(ps.grad("b").data == snapshot_b);
    }
}

TEST_CASE("randomized gradient suite across all layers") {
    Rng rng(53);
    for (int inst = 0; inst < 20; ++inst) {
        const std::size_t in = 2 + rng.uniform_index(3);
        const std::size_t hid = 2 + rng.uniform_index(3);
        const std::size_t T = 1 + rng.uniform_index(4);

        ParameterSet ps;
        DenseLayer embed("embed", in, hid);
        PreluLayer act("act", hid);
        BiGruEncoder enc("enc", hid, hid);
        embed.register_params(ps, rng);
        act.register_params(ps);
        enc.register_params(ps, rng);
        for (double& v : ps.value("act.alpha").data) v = rng.uniform_range(0.1, 0.5);

        Matrix seq(T, in);
        for (double& v : seq.data) v = rng.normal();
        Matrix probe(T, 2 * hid);
        for (double& v : probe.data) v = rng.normal();

        auto loss = [&]() {
            Matrix e = embed.forward(ps, seq);
            Matrix a = act.forward(ps, e);
            Matrix out = enc.encode(ps, a, nullptr);
            double s = 0.0;
            for (std::size_t i = 0; i < out.data.size(); ++i) s += out.data[i] * probe.data[i];
            return s;
        };

        ps.zero_grads();
        Matrix e = embed.forward(ps, seq);
        Matrix a = act.forward(ps, e);
        BiGruEncoder::Trace tr;
        enc.encode(ps, a, &tr);
        Matrix da = enc.backward(ps, a, tr, probe);
        Matrix de = act.backward(ps, e, da);
        embed.backward(ps, seq, de);

        REQUIRE(testsupport::max_grad_error(ps, loss) < 1e-4);
    }
}

TEST_CASE("parameter container round trip") {
    testsupport::TempDir tmp("params");
    Rng rng(59);
    ParameterSet ps;
    DenseLayer fc("fc", 3, 4);
    fc.register_params(ps, rng);
    GruCell cell("gru", 4, 2);
    cell.register_params(ps, rng);
    ps.value("fc.b")(0, 0) = -0.0;  // signed zero must survive

    const std::string path = tmp.path("weights.rlsn");
    save_parameter_set(path, ps);
    ParameterSet back = load_parameter_set(path);

    REQUIRE(back.size() == ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) {
        CHECK(back.entry(i).name == ps.entry(i).name);
        CHECK(back.entry(i).value.rows == ps.entry(i).value.rows);
        CHECK(back.entry(i).value.cols == ps.entry(i).value.cols);
        CHECK(back.entry(i).value.data == ps.entry(i).value.data);
    }

    SECTION("wrong magic is rejected") {
        const std::string bad = tmp.path("bad.rlsn");
        std::ofstream os(bad, std::ios::binary);
        os << "NOPE    ";
        os.close();
        CHECK_THROWS_AS(load_parameter_set(bad), IoError);
    }
    SECTION("truncated file is rejected") {
        const std::string cut = tmp.path("cut.rlsn");
        std::ifstream is(path, std::ios::binary);
        std::string all((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
        std::ofstream os(cut, std::ios::binary);
        os.write(all.data(), static_cast<std::streamsize>(all.size() / 2));
        os.close();
        CHECK_THROWS_AS(load_parameter_set(cut), IoError);
    }
}

TEST_CASE("duplicate parameter names are rejected") {
    ParameterSet ps;
    ps.add("w", 1, 1);
    CHECK_THROWS_AS(ps.add("w", 2, 2), ValidationError);
}

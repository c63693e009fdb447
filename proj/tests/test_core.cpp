#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "respira/optim.hpp"
#include "respira/rng.hpp"
#include "respira/serialize.hpp"
#include "respira/tensor.hpp"
#include "support/grad_check.hpp"

using respira::Rng;
using respira::Shape;
using respira::Tensor;
using testsupport::grad_check;

using Td = Tensor<double>;

TEST_CASE("rng streams are deterministic and well distributed") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());

    Rng r(7);
    double acc = 0;
    for (int i = 0; i < 20000; ++i) acc += r.uniform();
    REQUIRE(acc / 20000 == Catch::Approx(0.5).margin(0.01));

    // without-replacement draws cover [0,n) uniquely
    auto idx = Rng(3).sample_without_replacement(10, 10);
    std::sort(idx.begin(), idx.end());
    for (size_t i = 0; i < 10; ++i) REQUIRE(idx[i] == i);
}

TEST_CASE("elementwise forward values") {
    SECTION("softmax of a zero vector is uniform") {
        auto s = respira::softmax(Td::zeros({4}), 0);
        for (size_t i = 0; i < 4; ++i) REQUIRE(s.at(i) == Catch::Approx(0.25).epsilon(1e-12));
    }
    SECTION("sigmoid(0) = 0.5") {
        REQUIRE(respira::sigmoid(Td::scalar(0.0)).item() == 0.5);
    }
    SECTION("masked_fill then softmax zeroes the masked key and renormalizes") {
        const double a = 0.3, b = 5.0, c = -0.7;
        auto x = Td::from_values({3}, {a, b, c});
        auto filled = respira::masked_fill(x, {0, 1, 0},
                                           -std::numeric_limits<double>::infinity());
        auto w = respira::softmax(filled, 0);
        const double za = std::exp(a), zc = std::exp(c);  // hand-evaluated oracle
        REQUIRE(w.at(1) == 0.0);
        REQUIRE(w.at(0) == Catch::Approx(za / (za + zc)).epsilon(1e-12));
        REQUIRE(w.at(2) == Catch::Approx(zc / (za + zc)).epsilon(1e-12));
    }
    SECTION("log of a negative value trips the finite check") {
        REQUIRE_THROWS_AS(respira::log_op(Td::scalar(-1.0)), respira::NonFiniteValue);
    }
    SECTION("matmul shape mismatch") {
        REQUIRE_THROWS_AS(respira::matmul(Td::zeros({2, 3}), Td::zeros({2, 3})),
                          respira::ShapeMismatch);
    }
}

TEST_CASE("backward basics") {
    SECTION("loss = sum(x) gives unit gradients") {
        auto x = Td::param({3}, {1.0, -2.0, 0.5});
        respira::sum_all(x).backward();
        for (size_t i = 0; i < 3; ++i) REQUIRE(x.grad()[i] == 1.0);
    }
    SECTION("dot-product gradients swap the operands") {
        auto x = Td::param({3}, {1.0, 2.0, 3.0});
        auto y = Td::param({3}, {-1.0, 0.5, 2.0});
        respira::dot(x, y).backward();
        for (size_t i = 0; i < 3; ++i) {
            REQUIRE(x.grad()[i] == y.values()[i]);
            REQUIRE(y.grad()[i] == x.values()[i]);
        }
    }
    SECTION("backward rejects non-scalar losses") {
        auto x = Td::param({2}, {1.0, 2.0});
        REQUIRE_THROWS_AS(x.backward(), respira::NonScalarLoss);
    }
    SECTION("gradients accumulate across backward calls until cleared") {
        auto x = Td::param({2}, {1.0, 2.0});
        respira::sum_all(x).backward();
        respira::sum_all(x).backward();
        REQUIRE(x.grad()[0] == 2.0);
        x.zero_grad();
        REQUIRE(x.grad()[0] == 0.0);
    }
    SECTION("stop_grad blocks the flow") {
        auto x = Td::param({2}, {1.0, 2.0});
        auto y = respira::sum_all(respira::stop_grad(x));
        REQUIRE(y.item() == 3.0);
        y.backward();  // nothing trainable upstream
        REQUIRE_FALSE(x.has_grad());
    }
}

TEST_CASE("finite-difference checks for each op family") {
    Rng rng(1234);
    const double tol = 1e-4;

    SECTION("binary ops with broadcasting") {
        for (uint64_t seed = 0; seed < 5; ++seed) {
            Rng r(seed + 10);
            auto f_add = [](const std::vector<Td>& in) {
                return respira::sum_all(respira::mul(respira::add(in[0], in[1]),
                                                     respira::sub(in[0], in[2])));
            };
            REQUIRE(grad_check(f_add, {{3, 4}, {1, 4}, {3, 1}}, r) < tol);
            auto f_div = [](const std::vector<Td>& in) {
                return respira::sum_all(respira::div(in[0], in[1]));
            };
            REQUIRE(grad_check(f_div, {{2, 3}, {2, 3}}, r, 0.5, 2.0) < tol);
        }
    }
    SECTION("matmul transpose slice concat") {
        for (uint64_t seed = 0; seed < 5; ++seed) {
            Rng r(seed + 20);
            auto f = [](const std::vector<Td>& in) {
                auto prod = respira::matmul(in[0], respira::transpose(in[1]));
                auto left = respira::slice(prod, 1, 0, 2);
                auto right = respira::slice(prod, 1, 2, 1);
                auto glued = respira::concat<double>({left, right}, 1);
                return respira::mean_all(glued);
            };
            REQUIRE(grad_check(f, {{2, 4}, {3, 4}}, r) < tol);
        }
    }
    SECTION("softmax and log_softmax") {
        for (uint64_t seed = 0; seed < 5; ++seed) {
            Rng r(seed + 30);
            auto f = [](const std::vector<Td>& in) {
                auto s = respira::softmax(in[0], 1);
                auto w = respira::log_softmax(in[1], 1);
                return respira::add(respira::sum_all(respira::mul(s, s)),
                                    respira::sum_all(respira::mul(w, w)));
            };
            REQUIRE(grad_check(f, {{3, 5}, {3, 5}}, r, -2.0, 2.0) < tol);
        }
    }
    SECTION("activations") {
        for (uint64_t seed = 0; seed < 5; ++seed) {
            Rng r(seed + 40);
            auto f = [](const std::vector<Td>& in) {
                auto a = respira::tanh_op(in[0]);
                auto b = respira::sigmoid(in[0]);
                auto c = respira::softplus(in[0]);
                return respira::sum_all(respira::mul(a, respira::mul(b, c)));
            };
            REQUIRE(grad_check(f, {{4, 3}}, r, -2.0, 2.0) < tol);
            // relu checked away from its kink
            auto g = [](const std::vector<Td>& in) {
                return respira::sum_all(respira::relu(in[0]));
            };
            REQUIRE(grad_check(g, {{10}}, r, 0.2, 2.0) < tol);
            REQUIRE(grad_check(g, {{10}}, r, -2.0, -0.2) < tol);
            auto h = [](const std::vector<Td>& in) {
                return respira::sum_all(
                    respira::mul(respira::log_op(in[0]), respira::sqrt_op(in[0])));
            };
            REQUIRE(grad_check(h, {{6}}, r, 0.5, 3.0) < tol);
        }
    }
    SECTION("reductions, layer norm, gather, masked_fill") {
        for (uint64_t seed = 0; seed < 5; ++seed) {
            Rng r(seed + 50);
            auto f = [](const std::vector<Td>& in) {
                auto ln = respira::layer_norm(in[0], in[1], in[2]);
                auto m0 = respira::mean_axis(ln, 0);
                auto m1 = respira::sum_axis(ln, 1);
                return respira::add(respira::sum_all(respira::mul(m0, m0)),
                                    respira::sum_all(respira::mul(m1, m1)));
            };
            REQUIRE(grad_check(f, {{3, 4}, {4}, {4}}, r) < tol);

            auto g = [](const std::vector<Td>& in) {
                auto filled = respira::masked_fill(
                    in[0], {0, 1, 0, 0, 0, 1}, -std::numeric_limits<double>::infinity());
                auto sm = respira::softmax(filled, 1);
                return respira::sum_all(respira::gather_rows(sm, {0, 2}));
            };
            REQUIRE(grad_check(g, {{2, 3}}, r) < tol);
        }
    }
    SECTION("dropout with a fixed mask") {
        auto f = [](const std::vector<Td>& in) {
            Rng fixed(99);  // same gate every evaluation
            return respira::sum_all(
                respira::mul(respira::dropout(in[0], 0.4, true, fixed), in[0]));
        };
        REQUIRE(grad_check(f, {{5, 5}}, rng) < tol);
    }
}

TEST_CASE("graph purity: values do not depend on gradient recording") {
    auto run = [](bool with_grad) {
        auto x = with_grad ? Td::param({3, 3}, std::vector<double>(9, 0.37))
                           : Td::from_values({3, 3}, std::vector<double>(9, 0.37));
        auto y = respira::softmax(respira::matmul(x, respira::transpose(x)), 1);
        return std::vector<double>(y.values().begin(), y.values().end());
    };
    REQUIRE(run(true) == run(false));
}

TEST_CASE("dropout contract") {
    auto x = Td::full({200, 50}, 1.0);
    Rng rng(5);
    SECTION("identity when train flag is off or rate is zero") {
        REQUIRE(respira::dropout(x, 0.3, false, rng).node() == x.node());
        REQUIRE(respira::dropout(x, 0.0, true, rng).node() == x.node());
    }
    SECTION("zeroed fraction within 3 sigma and kept values rescaled") {
        const double rate = 0.3;
        auto y = respira::dropout(x, rate, true, rng);
        size_t zeros = 0;
        for (double v : y.values()) {
            if (v == 0.0)
                ++zeros;
            else
                REQUIRE(v == Catch::Approx(1.0 / 0.7).epsilon(1e-9));
        }
        const double n = static_cast<double>(x.numel());
        const double sigma = std::sqrt(rate * (1 - rate) / n);
        REQUIRE(std::abs(zeros / n - rate) < 3 * sigma);
    }
    SECTION("rate 1 is rejected") {
        REQUIRE_THROWS_AS(respira::dropout(x, 1.0, true, rng), respira::InvalidConfig);
    }
}

TEST_CASE("adam update") {
    SECTION("first step moves a unit-gradient parameter by about -lr") {
        respira::ParameterStore<double> store;
        auto p = store.create("w", {1}, {0.0});
        respira::Adam<double> opt({p}, {});
        respira::scale(respira::sum_all(p), 1.0).backward();
        // hand-evaluated t=1 update: m_hat = v_hat = 1 -> -lr/(1+eps)
        const double expected = -1e-3 / (1.0 + 1e-8);
        opt.step();
        REQUIRE(p.values()[0] == Catch::Approx(expected).margin(1e-15));
        REQUIRE(p.values()[0] == Catch::Approx(-0.001).margin(1e-9));
        REQUIRE(opt.step_count() == 1);
        REQUIRE_FALSE(p.has_grad());  // gradients zeroed by the step
    }
    SECTION("zero gradient leaves parameters unchanged") {
        respira::ParameterStore<double> store;
        auto p = store.create("w", {3}, {1.0, 2.0, 3.0});
        respira::Adam<double> opt({p}, {});
        respira::scale(respira::sum_all(p), 0.0).backward();
        opt.step();
        REQUIRE(p.values()[0] == 1.0);
        REQUIRE(p.values()[1] == 2.0);
        REQUIRE(p.values()[2] == 3.0);
    }
    SECTION("missing gradient names the parameter") {
        respira::ParameterStore<double> store;
        auto p = store.create("enc.w", {1}, {0.0});
        respira::Adam<double> opt({p}, {});
        try {
            opt.step();
            FAIL("expected MissingGradient");
        } catch (const respira::MissingGradient& e) {
            REQUIRE(std::string(e.what()).find("enc.w") != std::string::npos);
        }
    }
    SECTION("identical runs produce bit-identical trajectories") {
        auto run = [] {
            respira::ParameterStore<float> store;
            Rng r(11);
            auto p = store.create("w", {4}, respira::xavier_uniform<float>(4, 4, 4, r));
            respira::Adam<float> opt({p}, {});
            for (int step = 0; step < 5; ++step) {
                auto loss = respira::sum_all(respira::mul(p, p));
                loss.backward();
                opt.step();
            }
            return std::vector<float>(p.values().begin(), p.values().end());
        };
        REQUIRE(run() == run());
    }
}

TEST_CASE("plateau scheduler traces") {
    respira::AdamConfig cfg;  // patience 5, factor 0.1
    SECTION("an improving metric never decays") {
        respira::Adam<double> opt({}, cfg);
        for (int e = 0; e < 20; ++e) opt.plateau_decay(1.0 / (e + 1));
        REQUIRE(opt.lr() == 0.001);
    }
    SECTION("flat metric for patience+1 epochs decays once, twice for two plateaus") {
        respira::Adam<double> opt({}, cfg);
        for (int e = 0; e < 6; ++e) opt.plateau_decay(0.5);
        REQUIRE(opt.lr() == Catch::Approx(1e-4).epsilon(1e-12));
        for (int e = 0; e < 5; ++e) opt.plateau_decay(0.5);
        REQUIRE(opt.lr() == Catch::Approx(1e-5).epsilon(1e-12));
    }
}

TEST_CASE("weight container round trip") {
    namespace fs = std::filesystem;
    const auto path = (fs::temp_directory_path() / "respira_core_weights.rsw").string();

    respira::ParameterStore<float> store;
    Rng rng(77);
    store.create("enc.w", {3, 4}, respira::xavier_uniform<float>(3, 4, 12, rng));
    store.create("enc.b", {4}, std::vector<float>(4, 0.25f));
    store.config_hash = respira::fnv1a("d_model=4");
    store.phase_tag = "pretrain";
    respira::save_store(store, path, "d_model=4");

    auto wf = respira::load_weight_file(path);
    REQUIRE(wf.config_hash == store.config_hash);
    REQUIRE(wf.phase_tag == "pretrain");
    REQUIRE(wf.config_text == "d_model=4");
    REQUIRE(wf.tensors.size() == 2);
    REQUIRE(wf.tensors.at("enc.w").shape == Shape{3, 4});

    SECTION("values restore bit-exactly") {
        respira::ParameterStore<float> dst;
        dst.create("enc.w", {3, 4}, std::vector<float>(12, 0.f));
        dst.create("enc.b", {4}, std::vector<float>(4, 0.f));
        respira::load_into_store(wf, dst, "enc.", "enc.");
        for (size_t i = 0; i < 12; ++i)
            REQUIRE(dst.get("enc.w").values()[i] == store.get("enc.w").values()[i]);
    }
    SECTION("shape mismatch raises ConfigMismatch") {
        respira::ParameterStore<float> dst;
        dst.create("enc.w", {4, 3}, std::vector<float>(12, 0.f));
        REQUIRE_THROWS_AS(respira::load_into_store(wf, dst, "enc.", "enc."),
                          respira::ConfigMismatch);
    }
    SECTION("missing tensor raises ConfigMismatch") {
        respira::ParameterStore<float> dst;
        dst.create("enc.extra", {2}, std::vector<float>(2, 0.f));
        REQUIRE_THROWS_AS(respira::load_into_store(wf, dst, "enc.", "enc."),
                          respira::ConfigMismatch);
    }
    fs::remove(path);
}

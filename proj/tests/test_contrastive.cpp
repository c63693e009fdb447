#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <vector>

#include "respira/contrastive.hpp"
#include "respira/rng.hpp"
#include "support/grad_check.hpp"

using respira::ContrastiveConfig;
using respira::EncoderConfig;
using respira::ParameterStore;
using respira::Rng;
using respira::SimilarityKind;
using respira::Tensor;

using Td = Tensor<double>;

namespace {

// independent per-anchor scalar evaluation of the batch loss
double loss_oracle(const std::vector<std::vector<double>>& sim,
                   const std::vector<size_t>& pair_index, double tau) {
    const size_t m = sim.size();
    double total = 0.0;
    for (size_t i = 0; i < m; ++i) {
        double denom = 0.0;
        for (size_t k = 0; k < m; ++k)
            if (k != i) denom += std::exp(sim[i][k] / tau);
        total += -std::log(std::exp(sim[i][pair_index[i]] / tau) / denom);
    }
    return total / static_cast<double>(m);
}

respira::MelClip tiny_clip(uint64_t seed, const std::string& pid) {
    respira::MelClip c;
    c.n_bins = 4;
    c.n_frames = 6;
    c.participant_id = pid;
    c.source_id = "s" + std::to_string(seed);
    c.values.resize(24);
    Rng rng(seed);
    for (auto& v : c.values) v = static_cast<float>(rng.uniform(-2.0, 2.0));
    return c;
}

}  // namespace

TEST_CASE("pair sampling") {
    SECTION("two participants at B=2 both appear exactly once") {
        std::vector<std::vector<size_t>> pools{{0, 1, 2}, {3, 4}};
        Rng rng(1);
        for (int i = 0; i < 100; ++i) {
            auto batch = respira::sample_batch(pools, 2, rng);
            REQUIRE(batch.pairs.size() == 2);
            std::set<size_t> owners;
            for (const auto& [a, b] : batch.pairs) {
                REQUIRE(a != b);
                const size_t owner_a = a < 3 ? 0 : 1;
                const size_t owner_b = b < 3 ? 0 : 1;
                REQUIRE(owner_a == owner_b);
                owners.insert(owner_a);
            }
            REQUIRE(owners.size() == 2);
        }
    }
    SECTION("more pairs than participants is an error") {
        std::vector<std::vector<size_t>> pools(300, std::vector<size_t>{0, 1});
        Rng rng(2);
        REQUIRE_THROWS_AS(respira::sample_batch(pools, 1024, rng),
                          respira::InsufficientParticipants);
    }
    SECTION("single-clip participants are never sampled") {
        std::vector<std::vector<size_t>> pools{{0}, {1, 2}, {3}, {4, 5}};
        Rng rng(3);
        for (int i = 0; i < 50; ++i) {
            auto batch = respira::sample_batch(pools, 2, rng);
            for (const auto& [a, b] : batch.pairs) {
                REQUIRE(a != 0);
                REQUIRE(a != 3);
                REQUIRE(b != 0);
                REQUIRE(b != 3);
            }
        }
    }
    SECTION("participant selection frequency is uniform: 40% +/- 3%") {
        std::vector<std::vector<size_t>> pools(20);
        for (size_t p = 0; p < 20; ++p) pools[p] = {2 * p, 2 * p + 1};
        Rng rng(4);
        std::vector<int> hits(20, 0);
        const int trials = 10000;
        for (int i = 0; i < trials; ++i)
            for (const auto& [a, b] : respira::sample_batch(pools, 8, rng).pairs)
                ++hits[a / 2];
        for (int p = 0; p < 20; ++p) {
            const double freq = static_cast<double>(hits[p]) / trials;
            REQUIRE(freq > 0.37);
            REQUIRE(freq < 0.43);
        }
    }
}

TEST_CASE("similarity metrics") {
    SECTION("cosine of a vector with itself is 1") {
        std::vector<double> v{0.3, -1.2, 2.0};
        REQUIRE(respira::similarity(v, v, SimilarityKind::kCosine) ==
                Catch::Approx(1.0).epsilon(1e-12));
    }
    SECTION("bilinear with identity reduces to the dot product") {
        std::vector<double> a{1.0, 2.0, 3.0}, b{-1.0, 0.5, 2.0};
        std::vector<double> eye{1, 0, 0, 0, 1, 0, 0, 0, 1};
        REQUIRE(respira::similarity(a, b, SimilarityKind::kBilinear, eye) ==
                Catch::Approx(-1.0 + 1.0 + 6.0).epsilon(1e-12));
    }
    SECTION("orthogonal vectors have zero cosine") {
        std::vector<double> a{1.0, 0.0}, b{0.0, 1.0};
        REQUIRE(respira::similarity(a, b, SimilarityKind::kCosine) == 0.0);
    }
    SECTION("zero norm is rejected for cosine only") {
        std::vector<double> z{0.0, 0.0}, v{1.0, 1.0};
        REQUIRE_THROWS_AS(respira::similarity(z, v, SimilarityKind::kCosine),
                          respira::ZeroNorm);
        std::vector<double> eye{1, 0, 0, 1};
        REQUIRE(respira::similarity(z, v, SimilarityKind::kBilinear, eye) == 0.0);
    }
    SECTION("cosine is scale invariant in either argument") {
        Rng rng(5);
        for (int i = 0; i < 20; ++i) {
            std::vector<double> a(6), b(6);
            for (auto& x : a) x = rng.uniform(-1, 1) + 0.1;
            for (auto& x : b) x = rng.uniform(-1, 1) + 0.1;
            const double c = rng.uniform(0.1, 10.0);
            std::vector<double> ca(a);
            for (auto& x : ca) x *= c;
            REQUIRE(respira::similarity(ca, b, SimilarityKind::kCosine) ==
                    Catch::Approx(respira::similarity(a, b, SimilarityKind::kCosine))
                        .epsilon(1e-12));
        }
    }
}

TEST_CASE("contrastive loss closed forms") {
    SECTION("one pair and no negatives: loss is exactly zero") {
        auto sim = Td::from_values({2, 2}, {1.0, 0.37, 0.37, 1.0});
        auto loss = respira::contrastive_loss_from_similarity(sim, {1, 0}, 0.1);
        REQUIRE(loss.item() == 0.0);
    }
    SECTION("all-equal similarities give log(2B-1)") {
        const size_t b = 4;  // 8 clips -> log 7
        auto sim = Td::full({2 * b, 2 * b}, 0.42);
        std::vector<size_t> pair_index(2 * b);
        for (size_t i = 0; i < 2 * b; ++i) pair_index[i] = i ^ 1;
        auto loss = respira::contrastive_loss_from_similarity(sim, pair_index, 0.5);
        REQUIRE(loss.item() == Catch::Approx(std::log(7.0)).margin(1e-8));
        REQUIRE(loss.item() == Catch::Approx(1.9459101090932196).margin(1e-8));
    }
    SECTION("B=2 hand-set similarity matrix matches the 4-anchor oracle to 1e-10") {
        std::vector<std::vector<double>> sim{{1.0, 0.8, -0.3, 0.1},
                                             {0.8, 1.0, 0.0, -0.5},
                                             {-0.3, 0.0, 1.0, 0.6},
                                             {0.1, -0.5, 0.6, 1.0}};
        std::vector<double> flat;
        for (const auto& row : sim) flat.insert(flat.end(), row.begin(), row.end());
        auto loss = respira::contrastive_loss_from_similarity(
            Td::from_values({4, 4}, flat), {1, 0, 3, 2}, 0.25);
        REQUIRE(loss.item() ==
                Catch::Approx(loss_oracle(sim, {1, 0, 3, 2}, 0.25)).margin(1e-10));
    }
    SECTION("batched loss equals the per-anchor scalar loop for random B <= 8") {
        Rng rng(6);
        for (int trial = 0; trial < 30; ++trial) {
            const size_t b = 1 + rng.uniform_int(8);
            std::vector<std::vector<double>> sim(2 * b, std::vector<double>(2 * b));
            for (size_t i = 0; i < 2 * b; ++i)
                for (size_t j = i; j < 2 * b; ++j)
                    sim[i][j] = sim[j][i] = rng.uniform(-2.0, 2.0);
            std::vector<double> flat;
            for (const auto& row : sim) flat.insert(flat.end(), row.begin(), row.end());
            std::vector<size_t> pair_index(2 * b);
            for (size_t i = 0; i < 2 * b; ++i) pair_index[i] = i ^ 1;
            const double tau = rng.uniform(0.05, 2.0);
            auto loss = respira::contrastive_loss_from_similarity(
                Td::from_values({2 * b, 2 * b}, flat), pair_index, tau);
            REQUIRE(loss.item() ==
                    Catch::Approx(loss_oracle(sim, pair_index, tau)).margin(1e-10));
        }
    }
    SECTION("loss is nonnegative on random batches") {
        Rng rng(7);
        for (int trial = 0; trial < 20; ++trial) {
            const size_t m = 2 * (1 + rng.uniform_int(6));
            std::vector<double> flat(m * m);
            for (auto& v : flat) v = rng.uniform(-3.0, 3.0);
            std::vector<size_t> pair_index(m);
            for (size_t i = 0; i < m; ++i) pair_index[i] = i ^ 1;
            auto loss = respira::contrastive_loss_from_similarity(
                Td::from_values({m, m}, flat), pair_index, 0.3);
            REQUIRE(loss.item() >= 0.0);
        }
    }
    SECTION("temperature only rescales the logits") {
        Rng rng(8);
        std::vector<double> flat(36);
        for (auto& v : flat) v = rng.uniform(-1.0, 1.0);
        auto sim = Td::from_values({6, 6}, flat);
        const double tau = 0.17;
        auto scaled = respira::contrastive_logits(sim, tau);
        auto unit = respira::contrastive_logits(sim, 1.0);
        for (size_t i = 0; i < 36; ++i) {
            if (i % 6 == i / 6) continue;  // diagonal is -inf in both
            REQUIRE(scaled.values()[i] * tau ==
                    Catch::Approx(unit.values()[i]).epsilon(1e-12));
        }
    }
    SECTION("non-positive temperature is rejected") {
        auto sim = Td::full({2, 2}, 0.5);
        REQUIRE_THROWS_AS(respira::contrastive_loss_from_similarity(sim, {1, 0}, 0.0),
                          respira::NonPositiveTemperature);
    }
}

TEST_CASE("similarity matrix + projection gradients match finite differences") {
    Rng rng(9);
    for (auto kind : {SimilarityKind::kBilinear, SimilarityKind::kCosine}) {
        ParameterStore<double> store;
        Rng init(10);
        respira::init_projection_params(store, "proj.", 5, init);
        respira::init_similarity_params<double>(store, "sim.ws", 5);
        auto h = Td::from_values({6, 5}, [&] {
            std::vector<double> v(30);
            for (auto& x : v) x = rng.uniform(-1.0, 1.0);
            return v;
        }());
        auto ws = store.get("sim.ws");
        auto forward = [&]() {
            auto z = respira::project(store, "proj.", h);
            return respira::contrastive_loss<double>(z, kind, 0.2,
                                                     kind == SimilarityKind::kBilinear ? &ws
                                                                                       : nullptr);
        };
        std::vector<Td> params;
        for (const auto& [name, t] : store.entries()) params.push_back(t);
        REQUIRE(testsupport::grad_check_inplace(forward, params) < 1e-4);
    }
}

TEST_CASE("pretrain loop") {
    EncoderConfig enc;
    enc.n_bins = 4;
    enc.d_model = 4;
    enc.n_layers = 1;
    enc.n_heads = 1;
    enc.ffn_dim = 6;
    enc.dropout = 0.1;
    ContrastiveConfig ctr;
    ctr.batch = 3;
    ctr.epochs = 2;
    ctr.mask_rate = 0.5;

    auto build_clips = [](bool poison_labels) {
        std::vector<respira::MelClip> clips;
        std::vector<std::vector<size_t>> pools;
        for (int p = 0; p < 4; ++p) {
            pools.emplace_back();
            for (int c = 0; c < 3; ++c) {
                auto clip = tiny_clip(p * 10 + c, "p" + std::to_string(p));
                if (poison_labels) clip.label = (p + c) % 2;  // must be ignored
                pools.back().push_back(clips.size());
                clips.push_back(std::move(clip));
            }
        }
        return std::make_pair(clips, pools);
    };
    auto run = [&](bool poison) {
        auto [clips, pools] = build_clips(poison);
        ParameterStore<float> store;
        Rng init(21);
        respira::init_encoder_params(store, "enc.", enc, init);
        respira::init_projection_params(store, "proj.", enc.d_model, init);
        respira::init_similarity_params<float>(store, "sim.ws", enc.d_model);
        store.config_hash = enc.hash();
        Rng rng(42);
        auto result = respira::pretrain(store, clips, pools, enc, ctr, respira::AdamConfig{}, rng);
        std::vector<float> flat;
        for (const auto& [name, t] : store.entries())
            flat.insert(flat.end(), t.values().begin(), t.values().end());
        return std::make_pair(result, flat);
    };

    SECTION("deterministic given the seed, and blind to labels") {
        auto [res_a, weights_a] = run(false);
        auto [res_b, weights_b] = run(true);
        REQUIRE(weights_a == weights_b);  // poisoned labels changed nothing
        REQUIRE(res_a.log.size() == res_b.log.size());
        REQUIRE(res_a.first_loss == res_b.first_loss);
    }
    SECTION("batch clamps to the eligible participants and logs steps") {
        auto [clips, pools] = build_clips(false);
        ParameterStore<float> store;
        Rng init(22);
        respira::init_encoder_params(store, "enc.", enc, init);
        respira::init_projection_params(store, "proj.", enc.d_model, init);
        respira::init_similarity_params<float>(store, "sim.ws", enc.d_model);
        store.config_hash = enc.hash();
        ContrastiveConfig big = ctr;
        big.batch = 64;  // only 4 participants available
        Rng rng(43);
        auto result = respira::pretrain(store, clips, pools, enc, big, respira::AdamConfig{}, rng);
        REQUIRE(result.effective_batch == 4);
        REQUIRE(result.log.size() == 2);  // one step per epoch once clamped
        for (const auto& entry : result.log) REQUIRE(std::isfinite(entry.loss));
    }
}

#include "doctest.h"
#include "mrq/teacher.hpp"
#include "mrq/vq.hpp"

#include <cmath>

using namespace mrq;

namespace {

FeatureMap map_of(std::vector<std::vector<double>> frames, double rate = 48.0) {
    FeatureMap x(frames.front().size(), frames.size(), rate);
    for (std::size_t t = 0; t < frames.size(); ++t)
        for (std::size_t i = 0; i < frames[t].size(); ++i) x.at(i, t) = frames[t][i];
    return x;
}

FeatureMap random_map(std::size_t d, std::size_t n, Rng& rng, double rate = 48.0) {
    FeatureMap x(d, n, rate);
    for (double& v : x.values()) v = rng.normal();
    return x;
}

// Exhaustive scan oracle for the nearest codeword.
std::size_t brute_nearest(const Codebook& cb, std::span<const double> frame) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_v = 0;
    for (std::size_t v = 0; v < cb.vocab(); ++v) {
        double dist = 0.0;
        for (std::size_t i = 0; i < cb.dim(); ++i) {
            double diff = frame[i] - cb.vector(v)[i];
            dist += diff * diff;
        }
        if (dist < best) {
            best = dist;
            best_v = v;
        }
    }
    return best_v;
}

}  // namespace

TEST_CASE("nearest: codewords reproduce themselves, distances and ties by hand") {
    Codebook cb = Codebook::from_entries({{0.0, 0.0}, {1.0, 1.0}});
    FeatureMap exact = map_of({{1.0, 1.0}});
    CHECK(cb.nearest(exact).ids[0] == 1);
    CHECK(cb.quantize_st(exact).commit_loss == doctest::Approx(0.0));

    FeatureMap close = map_of({{0.4, 0.4}});  // 0.32 vs 0.72
    CHECK(cb.nearest(close).ids[0] == 0);

    FeatureMap tie = map_of({{0.5, 0.5}});  // equidistant: lowest index wins
    CHECK(cb.nearest(tie).ids[0] == 0);
}

TEST_CASE("nearest matches an exhaustive scan on random codebooks") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        std::size_t vocab = 2 + rng.uniform_int(63);
        std::size_t d = 1 + rng.uniform_int(8);
        std::vector<std::vector<double>> entries(vocab, std::vector<double>(d));
        for (auto& e : entries)
            for (auto& v : e) v = rng.normal();
        Codebook cb = Codebook::from_entries(entries);
        FeatureMap x = random_map(d, 16, rng);
        TokenRow row = cb.nearest(x);
        for (std::size_t t = 0; t < x.frames(); ++t)
            CHECK(row.ids[t] == brute_nearest(cb, x.frame(t)));
    }
}

TEST_CASE("dequantize: lookups, roundtrip, bad ids") {
    Codebook cb = Codebook::from_entries({{0.0, 0.0}, {1.0, 1.0}});
    TokenRow row;
    row.frame_rate_hz = 48.0;
    row.ids = {1, 0};
    FeatureMap out = cb.dequantize(row);
    CHECK(out.at(0, 0) == 1.0);
    CHECK(out.at(1, 0) == 1.0);
    CHECK(out.at(0, 1) == 0.0);
    CHECK(out.at(1, 1) == 0.0);

    Rng rng(5);
    FeatureMap x = random_map(2, 6, rng);
    auto q = cb.quantize_st(x);
    FeatureMap again = cb.dequantize(q.tokens);
    for (std::size_t i = 0; i < again.size(); ++i) CHECK(again.values()[i] == q.quantized.values()[i]);

    TokenRow bad;
    bad.frame_rate_hz = 48.0;
    bad.ids = {7};
    CHECK_THROWS_AS((void)cb.dequantize(bad), DataError);
}

TEST_CASE("single-entry behaviour via two identical rows") {
    Codebook cb = Codebook::from_entries({{0.25}, {0.25}});
    Rng rng(6);
    FeatureMap x = random_map(1, 5, rng);
    FeatureMap out = cb.dequantize(cb.nearest(x));
    for (std::size_t t = 0; t < 5; ++t) CHECK(out.at(0, t) == 0.25);
}

TEST_CASE("quantize_st: scalar example and straight-through gradient") {
    Codebook cb = Codebook::from_entries({{0.0}, {1.0}});
    FeatureMap x = map_of({{0.25}});
    auto q = cb.quantize_st(x);
    CHECK(q.tokens.ids[0] == 0);
    CHECK(q.quantized.at(0, 0) == 0.0);
    CHECK(q.commit_loss == doctest::Approx(0.0625));

    // Downstream gradient w.r.t. x equals the gradient w.r.t. the quantized
    // value: numerically differentiate downstream(q) and compare against the
    // straight-through backward with zero commitment weight.
    Rng rng(9);
    RvqStack stack({cb});
    FeatureMap input = map_of({{0.21}, {0.77}, {0.43}});
    auto fwd = stack.encode(input);
    FeatureMap target = map_of({{0.3}, {0.6}, {0.1}});
    FeatureMap g_h(1, 3, 48.0);
    mae_loss_backward(fwd.h, target, 1.0, g_h);
    stack.zero_grads();
    FeatureMap g_x = rvq_backward_st(stack, fwd, g_h, 0.0);
    FeatureMap q_free = fwd.h;
    auto downstream = [&] { return mae_loss(q_free, target); };
    CHECK(finite_diff_check(downstream, q_free.values(), g_x.values(), 1e-6) < 1e-6);
}

TEST_CASE("single-layer stack: codebook entry gradient includes the commit path exactly") {
    Codebook cb = Codebook::from_entries({{0.1, -0.4}, {0.9, 0.7}});
    RvqStack stack({cb});
    Rng rng(12);
    FeatureMap x = random_map(2, 5, rng);
    FeatureMap target = random_map(2, 5, rng);
    double cw = 0.25;
    auto value = [&] {
        auto fwd = stack.encode(x);
        return mae_loss(fwd.h, target) + cw * fwd.commit_loss;
    };
    auto fwd = stack.encode(x);
    FeatureMap g_h(2, 5, 48.0);
    mae_loss_backward(fwd.h, target, 1.0, g_h);
    stack.zero_grads();
    rvq_backward_st(stack, fwd, g_h, cw);
    auto& layer = stack.layer(0);
    CHECK(finite_diff_check(value, layer.vectors_flat_mut(), layer.grad_flat(), 1e-6) < 1e-5);
}

TEST_CASE("ema_update: exact arithmetic and untouched rows") {
    SUBCASE("decay 0.5, one assigned frame") {
        Codebook cb = Codebook::from_entries({{0.0}, {5.0}}, 0.5);
        FeatureMap x = map_of({{2.0}});
        TokenRow assign;
        assign.frame_rate_hz = 48.0;
        assign.ids = {0};
        Rng rng(1);
        cb.ema_update(x, assign, rng);
        CHECK(cb.ema_cluster_size()[0] == doctest::Approx(1.0));
        CHECK(cb.ema_embed_sum()[0] == doctest::Approx(1.0));
        CHECK(cb.vector(0)[0] == doctest::Approx(1.0));
        // row 1 got nothing: fully untouched
        CHECK(cb.vector(1)[0] == 5.0);
        CHECK(cb.ema_cluster_size()[1] == doctest::Approx(1.0));
    }
    SUBCASE("decay 0 collapses to batch cluster means") {
        Codebook cb = Codebook::from_entries({{0.0}, {10.0}}, 0.0);
        FeatureMap x = map_of({{1.0}, {3.0}, {9.0}});
        TokenRow assign = cb.nearest(x);
        Rng rng(1);
        cb.ema_update(x, assign, rng);
        CHECK(cb.vector(0)[0] == doctest::Approx(2.0));
        CHECK(cb.vector(1)[0] == doctest::Approx(9.0));
    }
}

TEST_CASE("ema fixed point: stationary batch converges to cluster means") {
    Codebook cb = Codebook::from_entries({{-0.5}, {4.5}}, 0.99);
    FeatureMap batch = map_of({{-1.0}, {0.0}, {4.0}, {5.0}});
    Rng rng(3);
    for (int step = 0; step < 4000; ++step) {
        TokenRow assign = cb.nearest(batch);
        cb.ema_update(batch, assign, rng);
    }
    CHECK(std::abs(cb.vector(0)[0] - (-0.5)) < 1e-6);
    CHECK(std::abs(cb.vector(1)[0] - 4.5) < 1e-6);
}

TEST_CASE("dead codes are re-seeded from batch frames after the usage window") {
    Codebook cb = Codebook::from_entries({{0.0}, {100.0}}, 0.99);
    FeatureMap batch = map_of({{0.1}, {-0.1}, {0.2}, {0.0}});
    Rng rng(4);
    for (std::size_t step = 0; step < Codebook::kReseedWindow; ++step) {
        TokenRow assign = cb.nearest(batch);
        cb.ema_update(batch, assign, rng);
    }
    // code 1 was never used; it must now sit on one of the batch frames
    double v = cb.vector(1)[0];
    bool on_batch = false;
    for (std::size_t t = 0; t < batch.frames(); ++t)
        if (v == batch.at(0, t)) on_batch = true;
    CHECK(on_batch);
}

TEST_CASE("kmeans_init: permutation, separated clouds, zero iterations, errors") {
    SUBCASE("V distinct frames with V = n become a permutation") {
        Rng rng(8);
        FeatureMap sample = map_of({{0.0}, {1.0}, {2.0}, {3.0}});
        Codebook cb(4, 1);
        cb.kmeans_init(sample, 3, rng);
        std::vector<double> got;
        for (std::size_t v = 0; v < 4; ++v) got.push_back(cb.vector(v)[0]);
        std::sort(got.begin(), got.end());
        CHECK(got == std::vector<double>{0.0, 1.0, 2.0, 3.0});
    }
    SUBCASE("two separated clouds converge to the cloud means") {
        Rng rng(9);
        std::vector<std::vector<double>> frames;
        for (int i = 0; i < 20; ++i) frames.push_back({0.0 + 0.01 * i});
        for (int i = 0; i < 20; ++i) frames.push_back({10.0 + 0.01 * i});
        FeatureMap sample = map_of(frames);
        double lo_mean = 0.0 + 0.01 * 9.5, hi_mean = 10.0 + 0.01 * 9.5;
        Codebook cb(2, 1);
        cb.kmeans_init(sample, 25, rng);
        std::vector<double> got{cb.vector(0)[0], cb.vector(1)[0]};
        std::sort(got.begin(), got.end());
        CHECK(std::abs(got[0] - lo_mean) < 1e-6);
        CHECK(std::abs(got[1] - hi_mean) < 1e-6);
    }
    SUBCASE("zero iterations keep the seed frames") {
        Rng rng(10);
        FeatureMap sample = map_of({{1.0}, {2.0}, {3.0}, {4.0}, {5.0}});
        Codebook cb(3, 1);
        cb.kmeans_init(sample, 0, rng);
        for (std::size_t v = 0; v < 3; ++v) {
            double val = cb.vector(v)[0];
            CHECK((val == 1.0 || val == 2.0 || val == 3.0 || val == 4.0 || val == 5.0));
        }
    }
    SUBCASE("insufficient samples") {
        Rng rng(11);
        FeatureMap sample = map_of({{1.0}, {2.0}});
        Codebook cb(3, 1);
        CHECK_THROWS_AS(cb.kmeans_init(sample, 1, rng), InsufficientDataError);
    }
}

TEST_CASE("rvq_encode: single layer on a codeword, scalar two-layer walkthrough") {
    SUBCASE("L=1, codeword input") {
        Codebook cb = Codebook::from_entries({{0.25, -1.0}, {3.0, 0.5}});
        RvqStack stack({cb});
        FeatureMap x = map_of({{3.0, 0.5}});
        auto fwd = stack.encode(x);
        CHECK(fwd.tokens[0].ids[0] == 1);
        CHECK(fwd.residual.max_abs() == doctest::Approx(0.0));
        CHECK(fwd.h.at(0, 0) == 3.0);
    }
    SUBCASE("d=1, two layers, brute-force checked") {
        RvqStack stack({Codebook::from_entries({{0.0}, {1.0}}), Codebook::from_entries({{0.0}, {0.25}})});
        FeatureMap x = map_of({{0.8}});
        auto fwd = stack.encode(x);
        CHECK(fwd.tokens[0].ids[0] == 1);  // layer 1 picks 1.0
        CHECK(fwd.tokens[1].ids[0] == 0);  // residual -0.2: dist 0.04 beats 0.2025
        CHECK(fwd.h.at(0, 0) == doctest::Approx(1.0));
        CHECK(fwd.residual.at(0, 0) == doctest::Approx(-0.2));
        // decode reproduces h
        FeatureMap dec = stack.decode(fwd.tokens, 1, 48.0);
        CHECK(dec.at(0, 0) == doctest::Approx(1.0));
    }
}

TEST_CASE("rvq recomposition and monotone residual with a zero codeword") {
    Rng rng(41);
    for (int trial = 0; trial < 10; ++trial) {
        std::size_t d = 1 + rng.uniform_int(6);
        std::size_t layers = 1 + rng.uniform_int(4);
        std::vector<Codebook> cbs;
        for (std::size_t l = 0; l < layers; ++l) {
            std::vector<std::vector<double>> entries(8, std::vector<double>(d));
            entries[0].assign(d, 0.0);  // zero codeword bounds the argmin
            for (std::size_t v = 1; v < 8; ++v)
                for (auto& val : entries[v]) val = rng.normal();
            cbs.push_back(Codebook::from_entries(entries));
        }
        RvqStack stack(std::move(cbs));
        FeatureMap x = random_map(d, 12, rng);
        auto fwd = stack.encode(x);

        // recomposition: x = h + residual
        double scale = std::max(1.0, x.max_abs());
        for (std::size_t i = 0; i < x.size(); ++i) {
            double recomposed = fwd.h.values()[i] + fwd.residual.values()[i];
            CHECK(std::abs(recomposed - x.values()[i]) <= 1e-10 * scale);
        }

        // per-layer residual energy never increases
        FeatureMap residual = x;
        double prev = residual.squared_norm();
        for (std::size_t l = 0; l < stack.layer_count(); ++l) {
            residual.sub(fwd.layer_quantized[l]);
            double cur = residual.squared_norm();
            CHECK(cur <= prev + 1e-12);
            prev = cur;
        }
    }
}

TEST_CASE("rvq_decode: prefix decodes and layer-count mismatch") {
    Rng rng(43);
    RvqStack stack(3, 8, 2, 0.99);
    FeatureMap sample = random_map(2, 32, rng);
    stack.warm_init(sample, 5, rng);
    FeatureMap x = random_map(2, 6, rng);
    auto fwd = stack.encode(x);

    FeatureMap full = stack.decode(fwd.tokens, 6, 48.0);
    for (std::size_t i = 0; i < full.size(); ++i) CHECK(full.values()[i] == fwd.h.values()[i]);

    std::vector<TokenRow> first_only{fwd.tokens[0]};
    FeatureMap l1 = stack.decode(first_only, 6, 48.0);
    FeatureMap expect = stack.layer(0).dequantize(fwd.tokens[0]);
    for (std::size_t i = 0; i < l1.size(); ++i) CHECK(l1.values()[i] == expect.values()[i]);

    std::vector<TokenRow> too_many(4, fwd.tokens[0]);
    CHECK_THROWS_AS((void)stack.decode(too_many, 6, 48.0), DataError);
}

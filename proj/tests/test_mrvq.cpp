#include "doctest.h"
#include "mrq/metrics.hpp"
#include "mrq/mrvq.hpp"

#include <cmath>

using namespace mrq;

namespace {

FeatureMap random_map(std::size_t d, std::size_t n, Rng& rng, double rate = 48.0) {
    FeatureMap x(d, n, rate);
    for (double& v : x.values()) v = rng.normal();
    return x;
}

MrvqConfig desk_config(const std::string& name, std::size_t vocab = 16, std::size_t dim = 4) {
    MrvqConfig cfg = config_from_table(name);
    cfg.vocab = vocab;
    cfg.dim = dim;
    return cfg;
}

MrvqModule make_module(const MrvqConfig& cfg, Rng& rng, std::size_t warm_frames = 0) {
    MrvqModule m(cfg, 0.99, rng);
    std::size_t frames = warm_frames ? warm_frames : cfg.vocab * 8;
    // warm sample long enough for the slowest stack
    frames = std::max(frames, cfg.vocab * cfg.blocks.front().stride + cfg.blocks.front().stride);
    FeatureMap sample = random_map(cfg.dim, frames, rng);
    m.warm_init(sample, 6, rng);
    return m;
}

}  // namespace

TEST_CASE("config_from_table: published tables") {
    SUBCASE("default") {
        MrvqConfig cfg = config_from_table("default");
        REQUIRE(cfg.blocks.size() == 4);
        CHECK(cfg.vocab == 1024);
        CHECK(cfg.dim == 128);
        std::vector<double> rates{8, 16, 24, 48};
        std::vector<std::size_t> alphas{1, 2, 2, 3}, betas{6, 6, 4, 0}, gammas{1, 2, 2, 0},
            strides{6, 3, 2, 1};
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(cfg.blocks[i].frame_rate_hz == rates[i]);
            CHECK(cfg.blocks[i].alpha == alphas[i]);
            CHECK(cfg.blocks[i].beta == betas[i]);
            CHECK(cfg.blocks[i].gamma == gammas[i]);
            CHECK(cfg.blocks[i].stride == strides[i]);
        }
        CHECK(cfg.blocks.back().degenerate());
        // layer accounting: post-quantization depths accumulate to the teacher's 8
        CHECK(cfg.cumulative_postq_depth(1) == 1);
        CHECK(cfg.cumulative_postq_depth(2) == 3);
        CHECK(cfg.cumulative_postq_depth(3) == 5);
        CHECK(cfg.cumulative_postq_depth(4) == 8);
    }
    SUBCASE("two-level") {
        MrvqConfig cfg = config_from_table("two-level");
        REQUIRE(cfg.blocks.size() == 2);
        CHECK(cfg.blocks[0].alpha == 1);
        CHECK(cfg.blocks[0].beta == 6);
        CHECK(cfg.blocks[0].gamma == 1);
        CHECK(cfg.blocks[1].alpha == 7);
        CHECK(cfg.blocks[1].degenerate());
        CHECK(cfg.cumulative_postq_depth(2) == 8);
    }
    SUBCASE("three-level") {
        MrvqConfig cfg = config_from_table("three-level");
        REQUIRE(cfg.blocks.size() == 3);
        CHECK(cfg.blocks[2].alpha == 5);
        CHECK(cfg.cumulative_postq_depth(3) == 8);
    }
    SUBCASE("half-beta") {
        MrvqConfig cfg = config_from_table("half-beta");
        std::vector<std::size_t> betas{3, 3, 2, 0};
        for (std::size_t i = 0; i < 4; ++i) CHECK(cfg.blocks[i].beta == betas[i]);
    }
    SUBCASE("with-4hz starts at 4 Hz") {
        MrvqConfig cfg = config_from_table("with-4hz");
        CHECK(cfg.blocks.front().frame_rate_hz == 4.0);
        CHECK(cfg.blocks.size() == 5);
        CHECK(cfg.cumulative_postq_depth(5) == 8);
    }
    CHECK_THROWS_AS((void)config_from_table("nope"), ConfigError);
}

TEST_CASE("config validation rejects broken ladders") {
    MrvqConfig cfg = config_from_table("default");
    cfg.blocks[1].stride = 4;  // 4 * 16 != 48
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    MrvqConfig cfg2 = config_from_table("default");
    cfg2.blocks[3].beta = 1;  // terminal block must degenerate
    CHECK_THROWS_AS(cfg2.validate(), ConfigError);

    MrvqConfig cfg3 = config_from_table("default");
    std::swap(cfg3.blocks[0], cfg3.blocks[1]);  // rates no longer increasing
    cfg3.blocks[0].k = 1;
    cfg3.blocks[1].k = 2;
    CHECK_THROWS_AS(cfg3.validate(), ConfigError);
}

TEST_CASE("degenerate block: output is the pre-quantizer reconstruction, rows alias") {
    Rng rng(51);
    LrvqConfig bc;
    bc.k = 1;
    bc.alpha = 3;
    bc.beta = 0;
    bc.gamma = 0;
    bc.stride = 1;
    bc.frame_rate_hz = 48.0;
    LrvqBlock blk(bc, 8, 3, 0.99, rng);
    FeatureMap sample = random_map(3, 40, rng);
    blk.preq.warm_init(sample, 5, rng);

    FeatureMap x = random_map(3, 10, rng);
    auto f = blk.forward(x);
    auto plain = blk.preq.encode(x);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(f.c_tilde.values()[i] == plain.h.values()[i]);
    REQUIRE(f.codes.b.size() == f.codes.a.size());
    for (std::size_t l = 0; l < f.codes.a.size(); ++l) {
        CHECK(f.codes.b[l].ids == f.codes.a[l].ids);
        CHECK(f.codes.c[l].ids == f.codes.a[l].ids);
    }
}

TEST_CASE("block frame-rate geometry: 90 s through block 1 gives 6 rows of 720") {
    Rng rng(52);
    MrvqConfig cfg = desk_config("default", 8, 2);
    MrvqModule m = make_module(cfg, rng);
    FeatureMap x = random_map(2, 90 * 48, rng);
    auto fwd = m.forward(x);
    REQUIRE(fwd.blocks[0].codes.b.size() == 6);
    for (const auto& row : fwd.blocks[0].codes.b) {
        CHECK(row.ids.size() == 720);
        CHECK(row.frame_rate_hz == doctest::Approx(8.0));
    }
}

TEST_CASE("identity sub-modules with a shared codebook: c~ equals the plain reconstruction") {
    // stride 1, alpha = beta = gamma = 1, all three quantizers share entries;
    // quantizing an exact codeword is idempotent, so the chained result equals
    // the single-layer reconstruction.
    Rng rng(53);
    LrvqConfig bc;
    bc.k = 1;
    bc.alpha = 1;
    bc.beta = 1;
    bc.gamma = 1;
    bc.stride = 1;
    bc.frame_rate_hz = 48.0;
    std::vector<std::vector<double>> entries{{-1.0}, {0.5}, {2.0}};
    LrvqBlock blk(bc, 3, 1, 0.99, rng);
    blk.preq = RvqStack({Codebook::from_entries(entries)});
    blk.quant = RvqStack({Codebook::from_entries(entries)});
    blk.postq = RvqStack({Codebook::from_entries(entries)});
    blk.sub_enc = StridedLinearMap::identity(1);
    blk.sub_dec = StridedLinearMap::identity(1);

    FeatureMap x(1, 2, 48.0);
    x.at(0, 0) = 0.4;
    x.at(0, 1) = 1.7;
    auto f = blk.forward(x);
    auto plain = blk.preq.encode(x);
    // direct composition: Q(Q(Q(x))) = Q(x) for exact codewords
    CHECK(f.c_tilde.at(0, 0) == plain.h.at(0, 0));
    CHECK(f.c_tilde.at(0, 1) == plain.h.at(0, 1));
    CHECK(f.codes.b[0].ids == plain.tokens[0].ids);
}

TEST_CASE("mrvq_forward: reduction, telescoping, Table-1 token counts") {
    Rng rng(54);
    SUBCASE("K=1 degenerate module is plain RVQ, bit for bit") {
        MrvqConfig cfg;
        cfg.base_rate_hz = 48.0;
        cfg.vocab = 8;
        cfg.dim = 3;
        LrvqConfig bc;
        bc.k = 1;
        bc.alpha = 4;
        bc.beta = 0;
        bc.gamma = 0;
        bc.stride = 1;
        bc.frame_rate_hz = 48.0;
        cfg.blocks = {bc};
        MrvqModule m = make_module(cfg, rng);
        FeatureMap x = random_map(3, 20, rng);
        auto fwd = m.forward(x);
        auto plain = m.block(0).preq.encode(x);
        for (std::size_t i = 0; i < x.size(); ++i) {
            CHECK(fwd.h.values()[i] == plain.h.values()[i]);
            CHECK(fwd.residual.values()[i] == plain.residual.values()[i]);
        }
        for (std::size_t l = 0; l < plain.tokens.size(); ++l)
            CHECK(fwd.blocks[0].codes.a[l].ids == plain.tokens[l].ids);
    }
    SUBCASE("telescoping recomposition on the default table") {
        MrvqConfig cfg = desk_config("default", 16, 4);
        MrvqModule m = make_module(cfg, rng);
        FeatureMap x = random_map(4, 96, rng);
        auto fwd = m.forward(x);
        double scale = std::max(1.0, x.max_abs());
        FeatureMap sum(4, 96, 48.0);
        for (const auto& b : fwd.blocks) sum.add(b.c_tilde);
        for (std::size_t i = 0; i < x.size(); ++i) {
            double lhs = x.values()[i] - sum.values()[i];
            CHECK(std::abs(lhs - fwd.residual.values()[i]) <= 1e-12 * scale);
        }
    }
    SUBCASE("b-token counts for a 720-frame input") {
        MrvqConfig cfg = desk_config("default", 8, 2);
        MrvqModule m = make_module(cfg, rng);
        FeatureMap x = random_map(2, 720, rng);  // 15 s at 48 Hz
        auto fwd = m.forward(x);
        std::vector<std::size_t> expect_frames{120, 240, 360, 720};
        std::vector<std::size_t> expect_rows{6, 6, 4, 3};
        std::size_t total = 0;
        for (std::size_t k = 0; k < 4; ++k) {
            REQUIRE(fwd.blocks[k].codes.b.size() == expect_rows[k]);
            for (const auto& row : fwd.blocks[k].codes.b) CHECK(row.ids.size() == expect_frames[k]);
            total += expect_rows[k] * expect_frames[k];
        }
        CHECK(total == 120 * 6 + 240 * 6 + 360 * 4 + 720 * 3);
    }
}

TEST_CASE("frame-rate law over random durations") {
    Rng rng(55);
    MrvqConfig cfg = desk_config("default", 8, 2);
    MrvqModule m = make_module(cfg, rng);
    for (std::size_t T = 1; T <= 10; ++T) {
        FeatureMap x = random_map(2, T * 48, rng);
        auto fwd = m.forward(x);
        for (std::size_t k = 0; k < cfg.blocks.size(); ++k) {
            const auto& bc = cfg.blocks[k];
            std::size_t expect = static_cast<std::size_t>(T * bc.frame_rate_hz);
            for (const auto& row : fwd.blocks[k].codes.b) {
                CHECK(row.ids.size() == expect);
                CHECK(row.frame_rate_hz == doctest::Approx(bc.frame_rate_hz));
            }
            for (const auto& row : fwd.blocks[k].codes.a) {
                CHECK(row.ids.size() == T * 48);
                CHECK(row.frame_rate_hz == doctest::Approx(48.0));
            }
        }
    }
}

TEST_CASE("decode_from_b: reproduces the forward h exactly") {
    Rng rng(56);
    MrvqConfig cfg = desk_config("default", 16, 4);
    MrvqModule m = make_module(cfg, rng);
    FeatureMap x = random_map(4, 144, rng);
    auto fwd = m.forward(x);
    std::vector<std::vector<TokenRow>> b_rows;
    for (const auto& b : fwd.blocks) b_rows.push_back(b.codes.b);
    FeatureMap h = m.decode_from_b(b_rows);
    REQUIRE(h.frames() == fwd.h.frames());
    for (std::size_t i = 0; i < h.size(); ++i) CHECK(h.values()[i] == fwd.h.values()[i]);
}

TEST_CASE("decode_from_b: zero tokens with a zero codeword decode to a constant map") {
    Rng rng(57);
    // single non-terminal block plus terminal, hand-set 1-d codebooks
    MrvqConfig cfg;
    cfg.base_rate_hz = 48.0;
    cfg.vocab = 2;
    cfg.dim = 1;
    LrvqConfig b1;
    b1.k = 1;
    b1.alpha = 1;
    b1.beta = 1;
    b1.gamma = 1;
    b1.stride = 2;
    b1.frame_rate_hz = 24.0;
    LrvqConfig b2;
    b2.k = 2;
    b2.alpha = 1;
    b2.beta = 0;
    b2.gamma = 0;
    b2.stride = 1;
    b2.frame_rate_hz = 48.0;
    cfg.blocks = {b1, b2};
    MrvqModule m(cfg, 0.99, rng);
    std::vector<std::vector<double>> zero_first{{0.0}, {1.0}};
    m.block(0).preq = RvqStack({Codebook::from_entries(zero_first)});
    m.block(0).quant = RvqStack({Codebook::from_entries(zero_first)});
    m.block(0).postq = RvqStack({Codebook::from_entries(zero_first)});
    m.block(1).preq = RvqStack({Codebook::from_entries(zero_first)});
    // hand-set sub-decoder: every tap 0.25
    for (auto& w : m.block(0).sub_dec.weights) w = 0.25;

    std::size_t frames = 8;
    TokenRow zeros_b1{std::vector<TokenId>(frames / 2, 0), 24.0};
    TokenRow zeros_b2{std::vector<TokenId>(frames, 0), 48.0};
    FeatureMap h = m.decode_from_b({{zeros_b1}, {zeros_b2}});
    // zero ids decode to the zero vector everywhere; the sub-decoder output is
    // zero, the post-quantizer of zero picks the zero codeword, terminal adds zero
    for (std::size_t i = 0; i < h.size(); ++i) CHECK(h.values()[i] == 0.0);

    // ones through block 1: each 24 Hz frame spreads 1.0 through four 0.25 taps,
    // two of which land in range per output frame -> D(b~) = 0.25 everywhere
    // (positions covered by one input) or 0.5 (covered by two); the post
    // quantizer snaps each to the nearest of {0, 1}.
    TokenRow ones_b1{std::vector<TokenId>(frames / 2, 1), 24.0};
    FeatureMap h2 = m.decode_from_b({{ones_b1}, {zeros_b2}});
    for (std::size_t t = 0; t < frames; ++t) {
        double up = 0.0;
        for (std::size_t j = 0; j < frames / 2; ++j) {
            for (std::size_t tap = 0; tap < 4; ++tap)
                if (j * 2 + tap == t) up += 0.25;
        }
        double expect = (std::abs(up - 0.0) <= std::abs(up - 1.0)) ? 0.0 : 1.0;
        CHECK(h2.at(0, t) == expect);
    }
}

TEST_CASE("decode_from_b: corrupt rows raise data errors") {
    Rng rng(58);
    MrvqConfig cfg = desk_config("default", 8, 2);
    MrvqModule m = make_module(cfg, rng);
    FeatureMap x = random_map(2, 48, rng);
    auto fwd = m.forward(x);
    std::vector<std::vector<TokenRow>> b_rows;
    for (const auto& b : fwd.blocks) b_rows.push_back(b.codes.b);
    b_rows[1].pop_back();  // wrong row count
    CHECK_THROWS_AS((void)m.decode_from_b(b_rows), DataError);

    std::vector<std::vector<TokenRow>> b_rows2;
    for (const auto& b : fwd.blocks) b_rows2.push_back(b.codes.b);
    b_rows2[0][0].ids[0] = 255;  // out-of-vocabulary id
    CHECK_THROWS_AS((void)m.decode_from_b(b_rows2), DataError);
}

TEST_CASE("module of degenerate stride-1 blocks reproduces plain RVQ bit for bit") {
    Rng rng(59);
    // one degenerate block with alpha = L is the only valid such module
    MrvqConfig cfg;
    cfg.base_rate_hz = 48.0;
    cfg.vocab = 8;
    cfg.dim = 2;
    LrvqConfig bc;
    bc.k = 1;
    bc.alpha = 5;
    bc.beta = 0;
    bc.gamma = 0;
    bc.stride = 1;
    bc.frame_rate_hz = 48.0;
    cfg.blocks = {bc};
    MrvqModule m = make_module(cfg, rng);
    RvqStack plain = m.block(0).preq;
    FeatureMap x = random_map(2, 24, rng);
    auto fwd = m.forward(x);
    auto expect = plain.encode(x);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(fwd.h.values()[i] == expect.h.values()[i]);
    for (std::size_t l = 0; l < expect.tokens.size(); ++l)
        CHECK(fwd.blocks[0].codes.a[l].ids == expect.tokens[l].ids);
}

TEST_CASE("frame-rate mismatch raises a configuration error") {
    Rng rng(60);
    MrvqConfig cfg = desk_config("default", 8, 2);
    MrvqModule m = make_module(cfg, rng);
    FeatureMap wrong_rate(2, 48, 24.0);
    CHECK_THROWS_AS((void)m.forward(wrong_rate), ConfigError);
}

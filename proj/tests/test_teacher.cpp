#include "doctest.h"
#include "mrq/teacher.hpp"

#include <cmath>

using namespace mrq;

namespace {

SyntheticSpec desk_spec(std::uint64_t seed = 100) {
    SyntheticSpec spec;
    spec.num_tones = 4;
    spec.freq_lo_hz = 30.0;
    spec.freq_hi_hz = 300.0;
    spec.duration_s = 2.0;
    spec.sample_rate_hz = 2400;
    spec.seed = seed;
    return spec;
}

NacConfig desk_nac() {
    NacConfig cfg;
    cfg.sample_rate_hz = 2400;
    cfg.strides = {10, 5};
    cfg.dim = 16;
    cfg.mid_dim = 16;
    cfg.layers = 8;
    cfg.vocab = 64;
    return cfg;
}

NacModel trained_teacher(std::size_t steps = 2000) {
    Rng rng(7);
    NacModel model(desk_nac(), rng);
    auto corpus = synth_corpus(desk_spec(), 64);
    TeacherTrainOptions opts;
    opts.steps = steps;
    opts.seed = 97;
    Trace trace = train_teacher(model, corpus, opts);
    REQUIRE(trace.all_finite());
    return model;
}

}  // namespace

TEST_CASE("synth_signal: zero tones, determinism, normalization, Nyquist guard") {
    SyntheticSpec spec = desk_spec();
    spec.num_tones = 0;
    Signal zero = synth_signal(spec);
    CHECK(zero.samples.size() == 4800);
    for (double v : zero.samples) CHECK(v == 0.0);

    spec = desk_spec(42);
    Signal a = synth_signal(spec);
    Signal b = synth_signal(spec);
    CHECK(a.samples == b.samples);
    spec.seed = 43;
    Signal c = synth_signal(spec);
    CHECK(a.samples != c.samples);

    SyntheticSpec tone = desk_spec(5);
    tone.num_tones = 1;
    tone.freq_lo_hz = 10.0;
    tone.freq_hi_hz = 10.0;
    tone.duration_s = 1.0;
    Signal s = synth_signal(tone);
    CHECK(s.samples.size() == 2400);
    double peak = 0.0;
    for (double v : s.samples) peak = std::max(peak, std::abs(v));
    CHECK(peak == doctest::Approx(1.0));

    SyntheticSpec bad = desk_spec();
    bad.freq_hi_hz = 1300.0;  // above 2400/2
    CHECK_THROWS_AS((void)synth_signal(bad), ConfigError);
}

TEST_CASE("encode: frame counts and the zero-latent case") {
    Rng rng(3);
    NacModel model(desk_nac(), rng);

    SyntheticSpec spec = desk_spec();
    spec.duration_s = 1.0;
    FeatureMap x0 = model.encode(synth_signal(spec));
    CHECK(x0.frames() == 48);
    CHECK(x0.dim() == 16);
    CHECK(x0.frame_rate_hz() == doctest::Approx(48.0));

    spec.duration_s = 90.0;
    FeatureMap x90 = model.encode(synth_signal(spec));
    CHECK(x90.frames() == 4320);  // 6x the 720-token 8 Hz budget

    // zero signal with zero-bias encoder stages gives zero latents
    Signal silence;
    silence.sample_rate_hz = 2400;
    silence.samples.assign(2400, 0.0);
    FeatureMap z = model.encode(silence);
    CHECK(z.max_abs() == 0.0);

    Signal wrong;
    wrong.sample_rate_hz = 8000;
    wrong.samples.assign(100, 0.1);
    CHECK_THROWS_AS((void)model.encode(wrong), ConfigError);
}

TEST_CASE("shape pipeline: reconstruction has exactly the padded length") {
    Rng rng(5);
    NacModel model(desk_nac(), rng);
    auto corpus = synth_corpus(desk_spec(), 4);
    TeacherTrainOptions opts;
    opts.steps = 4;
    opts.warmup_clips = 4;
    train_teacher(model, corpus, opts);

    Signal odd;
    odd.sample_rate_hz = 2400;
    odd.samples.assign(2449, 0.25);  // not a stride multiple
    auto rec = reconstruct(model, odd);
    CHECK(rec.output.samples.size() == 2450);  // padded to the next multiple of 50
}

TEST_CASE("train_teacher: zero steps change nothing, training reduces the loss") {
    Rng rng(7);
    NacModel model(desk_nac(), rng);
    std::uint64_t before = model.parameter_checksum();
    auto corpus = synth_corpus(desk_spec(), 8);
    TeacherTrainOptions opts;
    opts.steps = 0;
    Trace t0 = train_teacher(model, corpus, opts);
    CHECK(t0.rows.empty());
    CHECK(model.parameter_checksum() == before);

    opts.steps = 300;
    Trace trace = train_teacher(model, corpus, opts);
    REQUIRE(trace.rows.size() == 300);
    CHECK(trace.all_finite());
    std::size_t recon_col = trace.column_index("recon_mae");
    CHECK(trace.rows.back()[recon_col] < trace.rows.front()[recon_col]);
}

TEST_CASE("trained teacher reaches 10 dB on held-out clips") {
    NacModel model = trained_teacher();
    auto held_out = synth_corpus(desk_spec(5000), 8);
    double mean = 0.0;
    for (const auto& clip : held_out) mean += reconstruct(model, clip).snr_db;
    mean /= static_cast<double>(held_out.size());
    MESSAGE("held-out snr_db = ", mean);
    CHECK(mean >= 10.0);

    SUBCASE("prefix decodes order by capacity") {
        double snr1 = 0.0, snr4 = 0.0, snr8 = 0.0;
        for (const auto& clip : held_out) {
            snr1 += reconstruct(model, clip, 1).snr_db;
            snr4 += reconstruct(model, clip, 4).snr_db;
            snr8 += reconstruct(model, clip, 8).snr_db;
        }
        MESSAGE("snr by depth 1/4/8: ", snr1 / 8, " ", snr4 / 8, " ", snr8 / 8);
        CHECK(snr8 >= snr4);
        CHECK(snr4 >= snr1);
    }
}

TEST_CASE("reconstruct: exact-codeword input through identity stages has infinite snr") {
    NacConfig cfg;
    cfg.sample_rate_hz = 48;
    cfg.strides = {1};
    cfg.dim = 1;
    cfg.mid_dim = 1;
    cfg.layers = 1;
    cfg.vocab = 2;
    Rng rng(11);
    NacModel model(cfg, rng);
    model.encoder()[0] = StridedLinearMap::identity(1);
    model.decoder()[0] = StridedLinearMap::identity(1);
    model.rvq() = RvqStack({Codebook::from_entries({{-0.25}, {0.5}})});

    Signal sig;
    sig.sample_rate_hz = 48;
    sig.samples = {0.5, -0.25, 0.5, 0.5, -0.25, -0.25};
    auto rec = reconstruct(model, sig);
    CHECK(std::isinf(rec.snr_db));

    Signal silence;
    silence.sample_rate_hz = 48;
    silence.samples.assign(6, 0.0);
    CHECK(std::isinf(reconstruct(model, silence).snr_db));
}

TEST_CASE("teacher training is deterministic per seed") {
    auto run = [] {
        Rng rng(7);
        NacModel model(desk_nac(), rng);
        auto corpus = synth_corpus(desk_spec(), 8);
        TeacherTrainOptions opts;
        opts.steps = 50;
        opts.seed = 13;
        train_teacher(model, corpus, opts);
        return model.parameter_checksum();
    };
    CHECK(run() == run());
}

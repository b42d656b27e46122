// Flat key-value run configuration: schema-validated, unknown keys rejected.
// Nested block tables use indexed keys (block.1.alpha = 1). The MRQ_SEED
// environment variable overrides the configured seed.
#pragma once

#include <string>

#include "mrq/distill.hpp"
#include "mrq/mrvq.hpp"
#include "mrq/teacher.hpp"

namespace mrq {

struct RunConfig {
    // quantizer table
    std::string config_name = "default";  // or "custom" with block.* keys
    std::vector<LrvqConfig> custom_blocks;
    std::size_t vocab = 0;  // 0 keeps the table's published value
    std::size_t dim = 0;    // 0 keeps the table's published value

    std::uint64_t seed = 12345;

    // codec geometry
    std::size_t sample_rate_hz = 2400;
    std::vector<std::size_t> encoder_strides = {10, 5};
    std::size_t mid_dim = 0;  // 0 = same as dim
    std::size_t teacher_layers = 8;

    // teacher training
    std::size_t teacher_steps = 2000;
    double teacher_lr = 0.5;
    double commit_weight = 0.25;
    double ema_decay = 0.99;
    bool quantizer_dropout = false;

    // synthetic corpus
    std::size_t corpus_clips = 64;
    double clip_seconds = 2.0;
    std::size_t num_tones = 4;
    double freq_lo_hz = 48.0;
    double freq_hi_hz = 288.0;
    double am_lo_hz = 0.25;
    double am_hi_hz = 2.0;
    double freq_snap_hz = 48.0;

    // post-training
    std::size_t post_steps = 2500;
    double post_lr = 0.03;
    std::vector<double> fld_weights;  // empty = defaults
    std::vector<double> hsr_weights;  // empty = defaults
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // empty = defaults
    bool from_scratch = false;
    std::size_t kmeans_iters = 10;
    std::size_t warmup_clips = 8;

    // The published table with any vocab/dim overrides applied.
    MrvqConfig mrvq_config() const;
    // Desk-scale effective vocabulary/dim (overrides or table values).
    std::size_t effective_vocab() const { return vocab ? vocab : mrvq_config().vocab; }

    NacConfig nac_config() const;
    SyntheticSpec synthetic_spec() const;
    DistillPlan distill_plan() const;
    TeacherTrainOptions teacher_options() const;
    PostTrainOptions post_options() const;
};

RunConfig parse_run_config(std::istream& is);
RunConfig load_run_config(const std::string& path);  // applies MRQ_SEED
void write_run_config(std::ostream& os, const RunConfig& cfg);

}  // namespace mrq

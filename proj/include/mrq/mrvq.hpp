// Multi-resolution residual VQ: an outer residual loop over low frame-rate
// RVQ blocks. Each block re-expresses its residual at a reduced frame rate
// through pre-quantizer -> sub-encoder -> main quantizer -> sub-decoder ->
// post-quantizer; the terminal block degenerates to its pre-quantizer.
#pragma once

#include <string>
#include <vector>

#include "mrq/numerics.hpp"
#include "mrq/vq.hpp"

namespace mrq {

struct LrvqConfig {
    std::size_t k = 1;           // 1-based block index
    std::size_t alpha = 0;       // pre-quantizer depth
    std::size_t beta = 0;        // main quantizer depth (0 for the terminal block)
    std::size_t gamma = 0;       // post-quantizer depth
    std::size_t stride = 1;      // s0 / s_k
    double frame_rate_hz = 0.0;  // s_k

    bool degenerate() const { return beta == 0 && gamma == 0; }
};

struct MrvqConfig {
    std::vector<LrvqConfig> blocks;
    double base_rate_hz = 48.0;  // s0
    std::size_t vocab = 1024;
    std::size_t dim = 128;

    std::size_t block_count() const { return blocks.size(); }
    // Validates the frame-rate ladder, strides, and terminal degeneracy.
    void validate() const;
    // Post-quantization depth accumulated through block s (terminal block
    // counts its alpha). Drives the distillation pair set.
    std::size_t cumulative_postq_depth(std::size_t s) const;
};

// Published hyperparameter tables.
// Names: default, two-level, three-level, with-4hz, half-beta.
MrvqConfig config_from_table(const std::string& name);

struct LrvqCodes {
    std::size_t k = 0;
    std::vector<TokenRow> a;  // alpha rows at s0 (training side)
    std::vector<TokenRow> b;  // beta rows at s_k (transmitted; terminal: aliases a)
    std::vector<TokenRow> c;  // gamma rows at s0 (training side; terminal: aliases a)
};

struct LrvqBlock {
    LrvqConfig config;
    RvqStack preq;
    StridedLinearMap sub_enc;  // unused when degenerate
    RvqStack quant;            // empty when degenerate
    StridedLinearMap sub_dec;  // applied transposed; unused when degenerate
    RvqStack postq;            // empty when degenerate

    LrvqBlock() = default;
    LrvqBlock(const LrvqConfig& cfg, std::size_t vocab, std::size_t dim, double decay, Rng& rng);

    struct Forward {
        LrvqCodes codes;
        FeatureMap c_tilde;  // block output at s0, same shape as the input
        // Saved intermediates for losses, gradients and EMA.
        RvqStack::EncodeResult preq_fwd;
        RvqStack::EncodeResult quant_fwd;
        RvqStack::EncodeResult postq_fwd;
        FeatureMap enc_out;      // E_k(a~)
        FeatureMap dec_out_full; // untruncated transposed output
        FeatureMap dec_out;      // D_k(b~) truncated to the input frame count
        double commit_loss = 0.0;
    };
    // bypass = true replaces every quantizer with the identity; the block
    // becomes the differentiable map x -> truncate(D(E(x))).
    Forward forward(const FeatureMap& x, bool bypass = false) const;

    // Transmission-time path: rebuild c~ from b rows only.
    FeatureMap decode_from_b(const std::vector<TokenRow>& b_rows, std::size_t frames_s0) const;
};

class MrvqModule {
public:
    MrvqModule() = default;
    MrvqModule(const MrvqConfig& cfg, double decay, Rng& rng);

    const MrvqConfig& config() const { return cfg_; }
    std::size_t block_count() const { return blocks_.size(); }
    LrvqBlock& block(std::size_t k) { return blocks_[k]; }          // 0-based
    const LrvqBlock& block(std::size_t k) const { return blocks_[k]; }

    struct Forward {
        std::vector<LrvqBlock::Forward> blocks;
        std::vector<FeatureMap> block_inputs;  // x_{k-1} per block
        std::vector<FeatureMap> partials;      // cumulative sums of c~ (FLD side)
        FeatureMap h;
        FeatureMap residual;
        double commit_loss = 0.0;
        std::vector<LrvqCodes> all_codes() const;
    };
    Forward forward(const FeatureMap& x0, bool bypass = false) const;

    // h from per-block b rows (terminal block: its a rows under the b name).
    FeatureMap decode_from_b(const std::vector<std::vector<TokenRow>>& b_rows_per_block) const;

    void ema_update(const Forward& fwd, Rng& rng);

    // Initializes every codebook stack in dependency order from a sample batch.
    void warm_init(const FeatureMap& sample, std::size_t kmeans_iters, Rng& rng);
    bool initialized() const;

    void zero_grads();

    // Checksum over every trainable parameter and codebook entry.
    std::uint64_t parameter_checksum() const;

private:
    MrvqConfig cfg_;
    std::vector<LrvqBlock> blocks_;
};

}  // namespace mrq

#include "mrq/mrvq.hpp"

#include <cmath>

namespace mrq {

void MrvqConfig::validate() const {
    if (blocks.empty()) throw ConfigError("MrvqConfig: no blocks");
    double prev_rate = 0.0;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto& b = blocks[i];
        if (b.k != i + 1) throw ConfigError("MrvqConfig: block indices must be 1..K in order");
        if (b.frame_rate_hz <= prev_rate)
            throw ConfigError("MrvqConfig: frame rates must be strictly increasing");
        prev_rate = b.frame_rate_hz;
        if (b.alpha == 0) throw ConfigError("MrvqConfig: alpha must be positive");
        if (b.stride == 0) throw ConfigError("MrvqConfig: stride must be positive");
        if (b.frame_rate_hz * static_cast<double>(b.stride) != base_rate_hz)
            throw ConfigError("MrvqConfig: stride * s_k must equal s0 exactly");
        bool terminal = (i + 1 == blocks.size());
        if (terminal) {
            if (!b.degenerate()) throw ConfigError("MrvqConfig: terminal block must have beta=gamma=0");
            if (b.frame_rate_hz != base_rate_hz)
                throw ConfigError("MrvqConfig: terminal block must run at s0");
        } else if (b.degenerate()) {
            throw ConfigError("MrvqConfig: only the terminal block may degenerate");
        } else if (b.beta == 0 || b.gamma == 0) {
            throw ConfigError("MrvqConfig: non-terminal blocks need beta > 0 and gamma > 0");
        }
    }
    if (vocab < 2 || vocab > 65536) throw ConfigError("MrvqConfig: vocab must be in [2, 65536]");
    if (dim == 0) throw ConfigError("MrvqConfig: dim must be positive");
}

std::size_t MrvqConfig::cumulative_postq_depth(std::size_t s) const {
    if (s == 0 || s > blocks.size()) throw ConfigError("cumulative_postq_depth: block out of range");
    std::size_t depth = 0;
    for (std::size_t i = 0; i < s; ++i) {
        const auto& b = blocks[i];
        depth += b.degenerate() ? b.alpha : b.gamma;
    }
    return depth;
}

namespace {

LrvqConfig make_block(std::size_t k, std::size_t alpha, std::size_t beta, std::size_t gamma,
                      std::size_t stride, double rate) {
    LrvqConfig c;
    c.k = k;
    c.alpha = alpha;
    c.beta = beta;
    c.gamma = gamma;
    c.stride = stride;
    c.frame_rate_hz = rate;
    return c;
}

}  // namespace

MrvqConfig config_from_table(const std::string& name) {
    MrvqConfig cfg;
    cfg.base_rate_hz = 48.0;
    cfg.vocab = 1024;
    cfg.dim = 128;
    if (name == "default") {
        cfg.blocks = {make_block(1, 1, 6, 1, 6, 8.0), make_block(2, 2, 6, 2, 3, 16.0),
                      make_block(3, 2, 4, 2, 2, 24.0), make_block(4, 3, 0, 0, 1, 48.0)};
    } else if (name == "two-level") {
        cfg.blocks = {make_block(1, 1, 6, 1, 6, 8.0), make_block(2, 7, 0, 0, 1, 48.0)};
    } else if (name == "three-level") {
        cfg.blocks = {make_block(1, 1, 6, 1, 6, 8.0), make_block(2, 2, 6, 2, 3, 16.0),
                      make_block(3, 5, 0, 0, 1, 48.0)};
    } else if (name == "with-4hz") {
        // The published ladder adds a 4 Hz stage below the default stack; the
        // per-block depth triplets for it are not published. This arrangement
        // keeps the total post-quantization depth at 8 so the same teacher
        // pairing applies.
        cfg.blocks = {make_block(1, 1, 6, 1, 12, 4.0), make_block(2, 1, 6, 1, 6, 8.0),
                      make_block(3, 2, 6, 2, 3, 16.0), make_block(4, 2, 4, 2, 2, 24.0),
                      make_block(5, 2, 0, 0, 1, 48.0)};
    } else if (name == "half-beta") {
        cfg.blocks = {make_block(1, 1, 3, 1, 6, 8.0), make_block(2, 2, 3, 2, 3, 16.0),
                      make_block(3, 2, 2, 2, 2, 24.0), make_block(4, 3, 0, 0, 1, 48.0)};
    } else {
        throw ConfigError("config_from_table: unknown name '" + name + "'");
    }
    cfg.validate();
    return cfg;
}

LrvqBlock::LrvqBlock(const LrvqConfig& cfg, std::size_t vocab, std::size_t dim, double decay, Rng& rng)
    : config(cfg), preq(cfg.alpha, vocab, dim, decay) {
    if (!cfg.degenerate()) {
        sub_enc = StridedLinearMap(dim, dim, 2 * cfg.stride, cfg.stride);
        sub_enc.init_random(rng);
        quant = RvqStack(cfg.beta, vocab, dim, decay);
        sub_dec = StridedLinearMap(dim, dim, 2 * cfg.stride, cfg.stride);
        sub_dec.init_random(rng);
        postq = RvqStack(cfg.gamma, vocab, dim, decay);
    }
}

LrvqBlock::Forward LrvqBlock::forward(const FeatureMap& x, bool bypass) const {
    if (x.frame_rate_hz() != config.frame_rate_hz * static_cast<double>(config.stride))
        throw ConfigError("LrvqBlock::forward: input frame rate does not match s0");
    Forward f;
    f.codes.k = config.k;
    f.preq_fwd = preq.encode(x, SIZE_MAX, bypass);
    f.commit_loss += f.preq_fwd.commit_loss;
    f.codes.a = f.preq_fwd.tokens;
    if (config.degenerate()) {
        // b and c alias a; the block output is the pre-quantizer reconstruction.
        f.codes.b = f.codes.a;
        f.codes.c = f.codes.a;
        f.c_tilde = f.preq_fwd.h;
        return f;
    }
    f.enc_out = strided_apply(sub_enc, f.preq_fwd.h);
    f.quant_fwd = quant.encode(f.enc_out, SIZE_MAX, bypass);
    f.commit_loss += f.quant_fwd.commit_loss;
    f.codes.b = f.quant_fwd.tokens;
    f.dec_out_full = transposed_apply(sub_dec, f.quant_fwd.h);
    f.dec_out = f.dec_out_full.truncated(x.frames());
    f.postq_fwd = postq.encode(f.dec_out, SIZE_MAX, bypass);
    f.commit_loss += f.postq_fwd.commit_loss;
    f.codes.c = f.postq_fwd.tokens;
    f.c_tilde = f.postq_fwd.h;
    return f;
}

FeatureMap LrvqBlock::decode_from_b(const std::vector<TokenRow>& b_rows, std::size_t frames_s0) const {
    double s0 = config.frame_rate_hz * static_cast<double>(config.stride);
    if (config.degenerate()) {
        if (b_rows.size() != config.alpha) throw DataError("decode_from_b: terminal row count mismatch");
        return preq.decode(b_rows, frames_s0, s0);
    }
    if (b_rows.size() != config.beta) throw DataError("decode_from_b: row count mismatch");
    std::size_t frames_k = (frames_s0 + config.stride - 1) / config.stride;
    FeatureMap b_tilde = quant.decode(b_rows, frames_k, config.frame_rate_hz);
    FeatureMap up = transposed_apply(sub_dec, b_tilde).truncated(frames_s0);
    return postq.encode(up).h;
}

MrvqModule::MrvqModule(const MrvqConfig& cfg, double decay, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    blocks_.reserve(cfg.blocks.size());
    for (const auto& bc : cfg.blocks) blocks_.emplace_back(bc, cfg.vocab, cfg.dim, decay, rng);
}

std::vector<LrvqCodes> MrvqModule::Forward::all_codes() const {
    std::vector<LrvqCodes> codes;
    codes.reserve(blocks.size());
    for (const auto& b : blocks) codes.push_back(b.codes);
    return codes;
}

MrvqModule::Forward MrvqModule::forward(const FeatureMap& x0, bool bypass) const {
    if (x0.dim() != cfg_.dim) throw ConfigError("MrvqModule::forward: dim mismatch");
    if (x0.frame_rate_hz() != cfg_.base_rate_hz)
        throw ConfigError("MrvqModule::forward: input must be at the base frame rate");
    Forward f;
    f.h = FeatureMap(x0.dim(), x0.frames(), x0.frame_rate_hz());
    f.residual = x0;
    for (const auto& blk : blocks_) {
        f.block_inputs.push_back(f.residual);
        auto bf = blk.forward(f.residual, bypass);
        f.commit_loss += bf.commit_loss;
        f.h.add(bf.c_tilde);
        if (blk.config.degenerate() && !bypass)
            f.residual = bf.preq_fwd.residual;  // layer-ordered form, matches plain RVQ bit for bit
        else
            f.residual.sub(bf.c_tilde);
        f.partials.push_back(f.h);
        f.blocks.push_back(std::move(bf));
    }
    return f;
}

FeatureMap MrvqModule::decode_from_b(const std::vector<std::vector<TokenRow>>& b_rows_per_block) const {
    if (b_rows_per_block.size() != blocks_.size())
        throw DataError("decode_from_b: block count mismatch");
    // The terminal block runs at s0, so its row length gives the frame count.
    const auto& last_rows = b_rows_per_block.back();
    if (last_rows.empty()) throw DataError("decode_from_b: terminal block has no rows");
    std::size_t frames_s0 = last_rows.front().ids.size();
    FeatureMap h(cfg_.dim, frames_s0, cfg_.base_rate_hz);
    for (std::size_t k = 0; k < blocks_.size(); ++k)
        h.add(blocks_[k].decode_from_b(b_rows_per_block[k], frames_s0));
    return h;
}

void MrvqModule::ema_update(const Forward& fwd, Rng& rng) {
    for (std::size_t k = 0; k < blocks_.size(); ++k) {
        auto& blk = blocks_[k];
        const auto& bf = fwd.blocks[k];
        blk.preq.ema_update(bf.preq_fwd, rng);
        if (!blk.config.degenerate()) {
            blk.quant.ema_update(bf.quant_fwd, rng);
            blk.postq.ema_update(bf.postq_fwd, rng);
        }
    }
}

void MrvqModule::warm_init(const FeatureMap& sample, std::size_t kmeans_iters, Rng& rng) {
    FeatureMap residual = sample;
    for (auto& blk : blocks_) {
        blk.preq.warm_init(residual, kmeans_iters, rng);
        auto preq_fwd = blk.preq.encode(residual);
        if (blk.config.degenerate()) {
            residual.sub(preq_fwd.h);
            continue;
        }
        FeatureMap enc = strided_apply(blk.sub_enc, preq_fwd.h);
        blk.quant.warm_init(enc, kmeans_iters, rng);
        auto quant_fwd = blk.quant.encode(enc);
        FeatureMap up = transposed_apply(blk.sub_dec, quant_fwd.h).truncated(residual.frames());
        blk.postq.warm_init(up, kmeans_iters, rng);
        auto postq_fwd = blk.postq.encode(up);
        residual.sub(postq_fwd.h);
    }
}

bool MrvqModule::initialized() const {
    for (const auto& blk : blocks_) {
        if (!blk.preq.initialized()) return false;
        if (!blk.config.degenerate() && (!blk.quant.initialized() || !blk.postq.initialized()))
            return false;
    }
    return true;
}

void MrvqModule::zero_grads() {
    for (auto& blk : blocks_) {
        blk.preq.zero_grads();
        if (!blk.config.degenerate()) {
            blk.sub_enc.zero_grads();
            blk.quant.zero_grads();
            blk.sub_dec.zero_grads();
            blk.postq.zero_grads();
        }
    }
}

namespace {

std::uint64_t checksum_stack(const RvqStack& stack, std::uint64_t h) {
    for (std::size_t l = 0; l < stack.layer_count(); ++l) {
        const auto& cb = stack.layer(l);
        h = fnv1a(cb.vectors_flat(), h);
        h = fnv1a(cb.ema_cluster_size(), h);
        h = fnv1a(cb.ema_embed_sum(), h);
    }
    return h;
}

}  // namespace

std::uint64_t MrvqModule::parameter_checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& blk : blocks_) {
        h = checksum_stack(blk.preq, h);
        if (!blk.config.degenerate()) {
            h = fnv1a(blk.sub_enc.weights, h);
            h = fnv1a(blk.sub_enc.bias, h);
            h = checksum_stack(blk.quant, h);
            h = fnv1a(blk.sub_dec.weights, h);
            h = fnv1a(blk.sub_dec.bias, h);
            h = checksum_stack(blk.postq, h);
        }
    }
    return h;
}

}  // namespace mrq

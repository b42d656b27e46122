// Vector quantizers with EMA-learned codebooks and straight-through
// gradients, composed into residual stacks.
#pragma once

#include <cstdint>
#include <vector>

#include "mrq/feature_map.hpp"
#include "mrq/rng.hpp"

namespace mrq {

using TokenId = std::uint16_t;

struct TokenRow {
    std::vector<TokenId> ids;
    double frame_rate_hz = 1.0;
};

class Codebook {
public:
    Codebook() = default;
    Codebook(std::size_t vocab, std::size_t dim, double decay = 0.99);

    // Explicit entries, marked initialized. For tests and hand-built models.
    static Codebook from_entries(std::vector<std::vector<double>> entries, double decay = 0.99);

    std::size_t vocab() const { return vocab_; }
    std::size_t dim() const { return dim_; }
    double decay() const { return decay_; }
    bool initialized() const { return initialized_; }

    std::span<const double> vector(std::size_t v) const { return {vectors_.data() + v * dim_, dim_}; }
    std::span<double> vector_mut(std::size_t v) { return {vectors_.data() + v * dim_, dim_}; }
    std::span<const double> vectors_flat() const { return vectors_; }
    std::span<double> vectors_flat_mut() { return vectors_; }

    // Gradient accumulator w.r.t. entries. Training updates codebooks by EMA;
    // this buffer exists so gradient checks can differentiate through lookups.
    std::span<double> grad_flat() { return grad_; }
    void zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

    std::span<const double> ema_cluster_size() const { return ema_cluster_size_; }
    std::span<const double> ema_embed_sum() const { return ema_embed_sum_; }
    std::span<const std::uint32_t> usage_count() const { return usage_count_; }
    std::uint32_t reseed_step() const { return reseed_step_; }

    // Nearest codeword per frame; ties break to the lowest index.
    TokenRow nearest(const FeatureMap& x) const;

    // Embedding lookup. Throws DataError on out-of-range ids.
    FeatureMap dequantize(const TokenRow& t) const;

    struct QuantizeResult {
        TokenRow tokens;
        FeatureMap quantized;
        double commit_loss = 0.0;  // mean squared distance to assigned codewords
    };
    // Forward value is the codeword lookup; the straight-through convention
    // passes downstream gradients to x unchanged.
    QuantizeResult quantize_st(const FeatureMap& x) const;

    // EMA update of rows that received assignments; untouched rows keep their
    // statistics and vectors. Every `reseed_window` calls, rows used fewer
    // than `dead_usage_threshold` times get re-seeded from random input frames.
    void ema_update(const FeatureMap& x, const TokenRow& assignments, Rng& rng);

    // Lloyd iterations seeded from distinct random frames. Requires n >= V.
    void kmeans_init(const FeatureMap& sample, std::size_t iters, Rng& rng);

    // Restores state loaded from a checkpoint.
    void restore(std::vector<double> vectors, std::vector<double> ema_size,
                 std::vector<double> ema_sum, std::vector<std::uint32_t> usage,
                 std::uint32_t reseed_step, bool initialized);

    static constexpr std::size_t kReseedWindow = 100;
    static constexpr std::uint32_t kDeadUsageThreshold = 2;
    static constexpr double kSizeEpsilon = 1e-9;

private:
    std::size_t vocab_ = 0;
    std::size_t dim_ = 0;
    double decay_ = 0.99;
    bool initialized_ = false;
    std::vector<double> vectors_;          // V x d
    std::vector<double> ema_cluster_size_; // V
    std::vector<double> ema_embed_sum_;    // V x d
    std::vector<std::uint32_t> usage_count_;  // per-row uses within the reseed window
    std::uint32_t reseed_step_ = 0;
    std::vector<double> grad_;
};

// Residual cascade: each layer quantizes what the previous layers left.
class RvqStack {
public:
    RvqStack() = default;
    RvqStack(std::size_t layers, std::size_t vocab, std::size_t dim, double decay = 0.99);
    explicit RvqStack(std::vector<Codebook> layers);

    std::size_t layer_count() const { return layers_.size(); }
    std::size_t dim() const { return layers_.empty() ? 0 : layers_.front().dim(); }
    Codebook& layer(std::size_t l) { return layers_[l]; }
    const Codebook& layer(std::size_t l) const { return layers_[l]; }
    bool initialized() const;

    struct EncodeResult {
        std::vector<TokenRow> tokens;
        FeatureMap h;         // sum of per-layer embeddings
        FeatureMap residual;  // x0 - h, accumulated layer by layer
        // Saved per-layer values for gradients and EMA updates.
        std::vector<FeatureMap> layer_inputs;
        std::vector<FeatureMap> layer_quantized;
        double commit_loss = 0.0;  // sum over layers
    };
    // max_layers < L encodes a prefix of the stack (quantizer dropout).
    // bypass = true turns the stack into the identity (h = x0, no tokens);
    // used by gradient checks to make the composed path differentiable.
    EncodeResult encode(const FeatureMap& x0, std::size_t max_layers = SIZE_MAX, bool bypass = false) const;

    // h from token rows; prefix decodes (fewer rows than layers) are allowed.
    FeatureMap decode(const std::vector<TokenRow>& tokens, std::size_t frames, double frame_rate_hz) const;

    // EMA update of every layer with the assignments recorded by encode().
    void ema_update(const EncodeResult& fwd, Rng& rng);

    // Initializes layer codebooks in residual order from a data sample.
    void warm_init(const FeatureMap& sample, std::size_t kmeans_iters, Rng& rng);

    void zero_grads();

private:
    std::vector<Codebook> layers_;
};

}  // namespace mrq

// Toy teacher codec: strided-linear encoder stages down to the base frame
// rate, an 8-layer residual VQ, and transposed decoder stages back to the
// signal. Trained on synthetic multitone clips; serves as the frozen teacher
// for post-training.
#pragma once

#include <cstdint>
#include <vector>

#include "mrq/numerics.hpp"
#include "mrq/trace.hpp"
#include "mrq/vq.hpp"

namespace mrq {

struct Signal {
    std::vector<double> samples;
    std::size_t sample_rate_hz = 2400;
};

struct SyntheticSpec {
    std::size_t num_tones = 4;
    double freq_lo_hz = 48.0;
    double freq_hi_hz = 288.0;
    double am_lo_hz = 0.25;   // amplitude-modulation rate range
    double am_hi_hz = 2.0;
    // Carriers snap to multiples of this rate (0 disables). Locked carriers
    // keep the latent trajectory inside the AM band, so the corpus carries
    // its information at the low frame rates the hierarchy targets.
    double freq_snap_hz = 48.0;
    double duration_s = 2.0;
    std::size_t sample_rate_hz = 2400;
    std::uint64_t seed = 0;
};

// Sum of random sinusoids under slow AM envelopes, peak-normalized to [-1, 1].
// Deterministic per seed.
Signal synth_signal(const SyntheticSpec& spec);

// `count` clips from consecutive seeds starting at base.seed.
std::vector<Signal> synth_corpus(const SyntheticSpec& base, std::size_t count);

struct NacConfig {
    std::size_t sample_rate_hz = 2400;
    std::vector<std::size_t> strides = {10, 5};  // encoder stages; product = total stride
    std::size_t dim = 16;                        // latent d
    std::size_t mid_dim = 16;                    // channels between stages
    std::size_t layers = 8;
    std::size_t vocab = 64;
    double decay = 0.99;

    std::size_t total_stride() const;
    double base_rate_hz() const;
    void validate() const;
};

// Encoder stage chain with saved per-stage inputs for the backward pass.
struct StageForward {
    std::vector<FeatureMap> inputs;
    FeatureMap out;
};
StageForward apply_stages(const std::vector<StridedLinearMap>& stages, const FeatureMap& x);
FeatureMap apply_stages_backward(std::vector<StridedLinearMap>& stages, const StageForward& fwd,
                                 const FeatureMap& grad_out);
// Decoder direction: stages applied transposed in reverse order.
StageForward apply_stages_transposed(const std::vector<StridedLinearMap>& stages, const FeatureMap& h);
FeatureMap apply_stages_transposed_backward(std::vector<StridedLinearMap>& stages, const StageForward& fwd,
                                            const FeatureMap& grad_out);

// Straight-through backward for a residual stack: downstream gradients pass
// to the stack input unchanged; commitment gradients are added; codebook
// grad accumulators receive the exact lookup-path derivative.
FeatureMap rvq_backward_st(RvqStack& stack, const RvqStack::EncodeResult& fwd, const FeatureMap& grad_h,
                           double commit_weight);

// Exact backward of the quantized forward at pinned assignments: quantize
// nodes contribute only through their lookup edges, the within-stack residual
// chain is differentiated properly, and the returned input gradient carries
// the commitment paths alone. Used by gradient checks.
FeatureMap rvq_backward_exact(RvqStack& stack, const RvqStack::EncodeResult& fwd, const FeatureMap& grad_h,
                              double commit_weight);

class NacModel {
public:
    NacModel() = default;
    NacModel(const NacConfig& cfg, Rng& rng);
    // Used by checkpoint loading.
    NacModel(NacConfig cfg, std::vector<StridedLinearMap> encoder, std::vector<StridedLinearMap> decoder,
             RvqStack rvq);

    const NacConfig& config() const { return cfg_; }
    std::size_t total_stride() const { return cfg_.total_stride(); }
    double base_rate_hz() const { return cfg_.base_rate_hz(); }

    std::vector<StridedLinearMap>& encoder() { return encoder_; }
    const std::vector<StridedLinearMap>& encoder() const { return encoder_; }
    std::vector<StridedLinearMap>& decoder() { return decoder_; }
    const std::vector<StridedLinearMap>& decoder() const { return decoder_; }
    RvqStack& rvq() { return rvq_; }
    const RvqStack& rvq() const { return rvq_; }

    // Signal as a 1 x len map at the sample rate, zero-padded to a stride multiple.
    FeatureMap pad_input(const Signal& sig) const;
    // Latents at the base frame rate.
    FeatureMap encode(const Signal& sig) const;
    FeatureMap encode_features(const FeatureMap& padded) const;
    // Latents back to a 1 x len map at the sample rate.
    FeatureMap decode_latent(const FeatureMap& h) const;

    std::uint64_t parameter_checksum() const;

private:
    NacConfig cfg_;
    std::vector<StridedLinearMap> encoder_;
    std::vector<StridedLinearMap> decoder_;
    RvqStack rvq_;
};

// 10*log10(|x|^2 / |x-y|^2); +inf when the reference is silent or exact.
double snr_db(const FeatureMap& x, const FeatureMap& y);

struct ReconstructionResult {
    Signal output;
    double snr_db = 0.0;
};
// Encode, quantize through the first `max_layers` stack layers, decode.
ReconstructionResult reconstruct(const NacModel& model, const Signal& sig,
                                 std::size_t max_layers = SIZE_MAX);

struct TeacherTrainOptions {
    std::size_t steps = 2000;
    double lr = 0.5;
    double commit_weight = 0.25;
    std::size_t kmeans_iters = 10;
    std::size_t warmup_clips = 8;
    bool quantizer_dropout = false;
    std::uint64_t seed = 1;
};

// In-place training loop (MAE reconstruction + weighted commitment, EMA
// codebooks). Trace columns: step, recon_mae, commit, total.
Trace train_teacher(NacModel& model, const std::vector<Signal>& corpus, const TeacherTrainOptions& opts);

}  // namespace mrq

// Post-training: freeze the teacher codec, initialize the student
// encoder/decoder from teacher copies, attach the multi-resolution quantizer,
// and minimize reconstruction + feature-level distillation + hidden-state
// reconstruction losses.
#pragma once

#include <utility>

#include "mrq/mrvq.hpp"
#include "mrq/teacher.hpp"

namespace mrq {

struct DistillPlan {
    // (student block s, teacher layer t), 1-based. Valid when the cumulative
    // student post-quantization depth at s equals t.
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    std::vector<double> fld_weights;  // one per pair
    std::vector<double> hsr_weights;  // one per block
    std::size_t steps = 2000;
    double lr = 0.03;
    bool from_scratch = false;  // random encoder/decoder init instead of teacher copies

    void validate(const MrvqConfig& cfg, std::size_t teacher_layers) const;
    static DistillPlan defaults_for(const MrvqConfig& cfg, std::size_t teacher_layers);
};

class StudentModel {
public:
    StudentModel() = default;
    // Copies the teacher's encoder/decoder (or random-initializes them) and
    // attaches a fresh quantizer module with the given config.
    StudentModel(const NacModel& teacher, const MrvqConfig& cfg, bool from_scratch, Rng& rng);
    // Used by checkpoint loading.
    StudentModel(NacConfig nac_cfg, std::vector<StridedLinearMap> encoder,
                 std::vector<StridedLinearMap> decoder, MrvqModule mrvq);

    const NacConfig& nac_config() const { return nac_cfg_; }
    std::vector<StridedLinearMap>& encoder() { return encoder_; }
    const std::vector<StridedLinearMap>& encoder() const { return encoder_; }
    std::vector<StridedLinearMap>& decoder() { return decoder_; }
    const std::vector<StridedLinearMap>& decoder() const { return decoder_; }
    MrvqModule& mrvq() { return mrvq_; }
    const MrvqModule& mrvq() const { return mrvq_; }

    FeatureMap pad_input(const Signal& sig) const;
    FeatureMap encode(const Signal& sig) const;  // latents at s0
    FeatureMap encode_features(const FeatureMap& padded) const;
    FeatureMap decode_latent(const FeatureMap& h) const;

    ReconstructionResult reconstruct(const Signal& sig) const;

    std::uint64_t parameter_checksum() const;

private:
    NacConfig nac_cfg_;
    std::vector<StridedLinearMap> encoder_;
    std::vector<StridedLinearMap> decoder_;
    MrvqModule mrvq_;
};

// Teacher prefix embeddings: prefix l = sum of the first l layer embeddings.
std::vector<FeatureMap> teacher_prefixes(const RvqStack::EncodeResult& fwd);

struct FldResult {
    double value = 0.0;
    std::vector<double> per_pair;
};
// Weighted MAE between student cumulative sums and teacher prefixes over the
// plan's pair set. The teacher side carries no gradient. When grad_partials
// is given it must hold one zeroed buffer per student partial; pair gradients
// accumulate into the matching entries.
FldResult fld_loss(const std::vector<FeatureMap>& student_partials,
                   const std::vector<FeatureMap>& teacher_prefix_embeds, const DistillPlan& plan,
                   std::vector<FeatureMap>* grad_partials = nullptr);

struct HsrResult {
    double value = 0.0;
    std::vector<double> per_block;
};
// Per-block weighted MAE between the pre-quantizer reconstruction and the
// sub-decoder output. Degenerate blocks contribute zero. grad_a / grad_u,
// when given, receive gradients w.r.t. the two sides.
HsrResult hsr_loss(const MrvqModule::Forward& fwd, std::span<const double> weights,
                   std::vector<FeatureMap>* grad_a = nullptr, std::vector<FeatureMap>* grad_u = nullptr);

struct LossBreakdown {
    double nac_recon = 0.0;
    double nac_commit = 0.0;
    double fld = 0.0;
    double hsr = 0.0;
    double total = 0.0;
};

struct PostTrainOptions {
    double commit_weight = 0.25;
    std::size_t kmeans_iters = 10;
    std::size_t warmup_clips = 8;
    std::uint64_t seed = 2;
};

// How gradients are propagated through quantize nodes.
//  Train: straight-through at every quantizer, residual chain detached —
//         the update rule used by post-training.
//  BypassQuantizers: quantizers replaced by the identity in the forward;
//         the graph is continuous and the backward is its exact derivative.
//  ExactQuantized: quantizers active; the backward differentiates the
//         computed function exactly at pinned assignments (lookup edges,
//         commitment terms, residual chains). Gradient-check mode.
enum class GradPath { Train, BypassQuantizers, ExactQuantized };

// One full forward + loss evaluation; with_grads also runs the backward pass,
// leaving gradients in the student's parameter and codebook accumulators.
LossBreakdown total_loss(StudentModel& student, const NacModel& teacher, const Signal& batch,
                         const DistillPlan& plan, double commit_weight, bool with_grads,
                         GradPath path = GradPath::Train);

// Runs the post-training loop. The teacher is read-only; a checksum guard
// throws if it ever changes. Trace columns: step, nac, fld, hsr, total.
StudentModel post_train(const NacModel& teacher, const MrvqConfig& cfg, const DistillPlan& plan,
                        const std::vector<Signal>& corpus, const PostTrainOptions& opts, Trace& trace);

}  // namespace mrq

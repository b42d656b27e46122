#include "mrq/distill.hpp"

#include <cmath>
#include <sstream>

namespace mrq {

void DistillPlan::validate(const MrvqConfig& cfg, std::size_t teacher_layers) const {
    if (fld_weights.size() != pairs.size())
        throw ConfigError("DistillPlan: need one FLD weight per pair");
    if (hsr_weights.size() != cfg.blocks.size())
        throw ConfigError("DistillPlan: need one HSR weight per block");
    for (const auto& [s, t] : pairs) {
        if (s < 1 || s > cfg.blocks.size()) throw ConfigError("DistillPlan: student block out of range");
        if (t < 1 || t > teacher_layers) throw ConfigError("DistillPlan: teacher layer out of range");
        std::size_t depth = cfg.cumulative_postq_depth(s);
        if (depth != t) {
            std::ostringstream msg;
            msg << "DistillPlan: pair (" << s << "," << t << ") violates the cumulative-depth rule"
                << " (cumulative post-quantization depth at block " << s << " is " << depth << ")";
            throw ConfigError(msg.str());
        }
    }
}

DistillPlan DistillPlan::defaults_for(const MrvqConfig& cfg, std::size_t teacher_layers) {
    DistillPlan plan;
    std::size_t K = cfg.blocks.size();
    for (std::size_t s = 1; s <= K; ++s) {
        std::size_t t = cfg.cumulative_postq_depth(s);
        if (t > teacher_layers) throw ConfigError("DistillPlan: student depth exceeds teacher layers");
        plan.pairs.emplace_back(s, t);
        plan.fld_weights.push_back(2.0 * static_cast<double>(K - s + 1));
        plan.hsr_weights.push_back(2.0 * static_cast<double>(K - s + 1));
    }
    plan.validate(cfg, teacher_layers);
    return plan;
}

StudentModel::StudentModel(const NacModel& teacher, const MrvqConfig& cfg, bool from_scratch, Rng& rng)
    : nac_cfg_(teacher.config()), encoder_(teacher.encoder()), decoder_(teacher.decoder()) {
    if (cfg.dim != nac_cfg_.dim)
        throw ConfigError("StudentModel: quantizer dim must match the codec latent dim");
    if (cfg.base_rate_hz != nac_cfg_.base_rate_hz())
        throw ConfigError("StudentModel: quantizer base rate must match the codec frame rate");
    if (from_scratch) {
        for (auto& m : encoder_) m.init_random(rng);
        for (auto& m : decoder_) m.init_random(rng);
    }
    mrvq_ = MrvqModule(cfg, nac_cfg_.decay, rng);
}

StudentModel::StudentModel(NacConfig nac_cfg, std::vector<StridedLinearMap> encoder,
                           std::vector<StridedLinearMap> decoder, MrvqModule mrvq)
    : nac_cfg_(std::move(nac_cfg)),
      encoder_(std::move(encoder)),
      decoder_(std::move(decoder)),
      mrvq_(std::move(mrvq)) {}

FeatureMap StudentModel::pad_input(const Signal& sig) const {
    if (sig.sample_rate_hz != nac_cfg_.sample_rate_hz)
        throw ConfigError("StudentModel: signal sample rate does not match the model");
    if (sig.samples.empty()) throw EmptyInputError("StudentModel: empty signal");
    std::size_t r = nac_cfg_.total_stride();
    std::size_t n = (sig.samples.size() + r - 1) / r * r;
    FeatureMap x(1, n, static_cast<double>(nac_cfg_.sample_rate_hz));
    for (std::size_t i = 0; i < sig.samples.size(); ++i) x.at(0, i) = sig.samples[i];
    return x;
}

FeatureMap StudentModel::encode_features(const FeatureMap& padded) const {
    FeatureMap cur = padded;
    for (const auto& m : encoder_) cur = strided_apply(m, cur);
    return cur;
}

FeatureMap StudentModel::encode(const Signal& sig) const { return encode_features(pad_input(sig)); }

FeatureMap StudentModel::decode_latent(const FeatureMap& h) const {
    FeatureMap cur = h;
    for (std::size_t i = decoder_.size(); i-- > 0;) cur = transposed_apply(decoder_[i], cur);
    return cur;
}

ReconstructionResult StudentModel::reconstruct(const Signal& sig) const {
    FeatureMap padded = pad_input(sig);
    auto fwd = mrvq_.forward(encode_features(padded));
    FeatureMap y = decode_latent(fwd.h);
    ReconstructionResult r;
    r.snr_db = snr_db(padded, y);
    r.output.sample_rate_hz = sig.sample_rate_hz;
    r.output.samples.assign(y.values().begin(), y.values().end());
    return r;
}

std::uint64_t StudentModel::parameter_checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& m : encoder_) {
        h = fnv1a(m.weights, h);
        h = fnv1a(m.bias, h);
    }
    for (const auto& m : decoder_) {
        h = fnv1a(m.weights, h);
        h = fnv1a(m.bias, h);
    }
    h ^= mrvq_.parameter_checksum();
    return h;
}

std::vector<FeatureMap> teacher_prefixes(const RvqStack::EncodeResult& fwd) {
    std::vector<FeatureMap> prefixes;
    prefixes.reserve(fwd.layer_quantized.size());
    FeatureMap cur(fwd.h.dim(), fwd.h.frames(), fwd.h.frame_rate_hz());
    for (const auto& q : fwd.layer_quantized) {
        cur.add(q);
        prefixes.push_back(cur);
    }
    return prefixes;
}

FldResult fld_loss(const std::vector<FeatureMap>& student_partials,
                   const std::vector<FeatureMap>& teacher_prefix_embeds, const DistillPlan& plan,
                   std::vector<FeatureMap>* grad_partials) {
    if (plan.fld_weights.size() != plan.pairs.size())
        throw ConfigError("fld_loss: need one weight per pair");
    if (grad_partials != nullptr && grad_partials->empty()) {
        grad_partials->reserve(student_partials.size());
        for (const auto& p : student_partials)
            grad_partials->emplace_back(p.dim(), p.frames(), p.frame_rate_hz());
    }
    FldResult r;
    for (std::size_t i = 0; i < plan.pairs.size(); ++i) {
        auto [s, t] = plan.pairs[i];
        if (s < 1 || s > student_partials.size() || t < 1 || t > teacher_prefix_embeds.size())
            throw ConfigError("fld_loss: pair index out of range");
        double w = plan.fld_weights[i];
        double v;
        if (grad_partials != nullptr)
            v = mae_loss_backward(student_partials[s - 1], teacher_prefix_embeds[t - 1], w,
                                  (*grad_partials)[s - 1]);
        else
            v = mae_loss(student_partials[s - 1], teacher_prefix_embeds[t - 1]);
        r.per_pair.push_back(w * v);
        r.value += w * v;
    }
    return r;
}

HsrResult hsr_loss(const MrvqModule::Forward& fwd, std::span<const double> weights,
                   std::vector<FeatureMap>* grad_a, std::vector<FeatureMap>* grad_u) {
    if (weights.size() != fwd.blocks.size()) throw ConfigError("hsr_loss: need one weight per block");
    HsrResult r;
    for (std::size_t k = 0; k < fwd.blocks.size(); ++k) {
        const auto& bf = fwd.blocks[k];
        const FeatureMap& a_tilde = bf.preq_fwd.h;
        if (grad_a != nullptr)
            grad_a->emplace_back(a_tilde.dim(), a_tilde.frames(), a_tilde.frame_rate_hz());
        bool degenerate = bf.dec_out.dim() == 0;  // degenerate blocks never fill dec_out
        if (degenerate) {
            // terminal block: the sub-decoder path is the identity, zero gap
            if (grad_u != nullptr)
                grad_u->emplace_back(a_tilde.dim(), a_tilde.frames(), a_tilde.frame_rate_hz());
            r.per_block.push_back(0.0);
            continue;
        }
        const FeatureMap& u = bf.dec_out;
        if (grad_u != nullptr) grad_u->emplace_back(u.dim(), u.frames(), u.frame_rate_hz());
        double w = weights[k];
        double v;
        if (grad_a != nullptr && grad_u != nullptr) {
            v = mae_loss_backward(a_tilde, u, w, (*grad_a)[k]);
            mae_loss_backward(u, a_tilde, w, (*grad_u)[k]);
        } else {
            v = mae_loss(a_tilde, u);
        }
        r.per_block.push_back(w * v);
        r.value += w * v;
    }
    return r;
}

namespace {

// Gradient of the full loss w.r.t. the quantizer input, distributing the
// reconstruction gradient, partial-sum (FLD) gradients and per-block HSR
// gradients through every block.
//
// Train: per-layer straight-through semantics make the residual chain
// locally constant, so block backwards are independent given their c~
// gradients and every block's input gradient adds straight into the stack
// input. BypassQuantizers and ExactQuantized differentiate a continuous
// graph, so the residual subtraction x_k = x_{k-1} - c~_k is propagated.
FeatureMap mrvq_backward(MrvqModule& m, const MrvqModule::Forward& fwd, const FeatureMap& g_h,
                         const std::vector<FeatureMap>& g_partials, const std::vector<FeatureMap>& g_a,
                         const std::vector<FeatureMap>& g_u, double commit_weight, GradPath path) {
    bool chain = path != GradPath::Train;
    auto stack_backward = [&](RvqStack& stack, const RvqStack::EncodeResult& sf, const FeatureMap& g) {
        return path == GradPath::ExactQuantized ? rvq_backward_exact(stack, sf, g, commit_weight)
                                                : rvq_backward_st(stack, sf, g, commit_weight);
    };
    FeatureMap g_x(g_h.dim(), g_h.frames(), g_h.frame_rate_hz());  // grad w.r.t. x_k (residual chain)
    FeatureMap suffix(g_h.dim(), g_h.frames(), g_h.frame_rate_hz());
    for (std::size_t k = m.block_count(); k-- > 0;) {
        if (!g_partials.empty()) suffix.add(g_partials[k]);
        FeatureMap g_ct = g_h;
        g_ct.add(suffix);
        if (chain) g_ct.sub(g_x);  // x_k = x_{k-1} - c~_k
        auto& blk = m.block(k);
        const auto& bf = fwd.blocks[k];
        FeatureMap g_in;
        if (blk.config.degenerate()) {
            FeatureMap g_at = std::move(g_ct);
            if (!g_a.empty()) g_at.add(g_a[k]);
            g_in = stack_backward(blk.preq, bf.preq_fwd, g_at);
        } else {
            FeatureMap g_u_local = stack_backward(blk.postq, bf.postq_fwd, g_ct);
            if (!g_u.empty()) g_u_local.add(g_u[k]);
            // truncation backward: frames beyond the block input get zero gradient
            FeatureMap g_u_full(g_u_local.dim(), bf.dec_out_full.frames(),
                                bf.dec_out_full.frame_rate_hz());
            for (std::size_t t = 0; t < g_u_local.frames(); ++t) {
                auto src = g_u_local.frame(t);
                auto dst = g_u_full.frame(t);
                std::copy(src.begin(), src.end(), dst.begin());
            }
            FeatureMap g_bt = transposed_apply_backward(blk.sub_dec, bf.quant_fwd.h, g_u_full);
            FeatureMap g_e = stack_backward(blk.quant, bf.quant_fwd, g_bt);
            FeatureMap g_at = strided_apply_backward(blk.sub_enc, bf.preq_fwd.h, g_e);
            if (!g_a.empty()) g_at.add(g_a[k]);
            g_in = stack_backward(blk.preq, bf.preq_fwd, g_at);
        }
        g_x.add(g_in);  // Train: plain accumulation; chained: identity part of x_k
    }
    return g_x;
}

struct StudentStepRecord {
    FeatureMap xin;
    StageForward enc_fwd;
    MrvqModule::Forward mr_fwd;
    StageForward dec_fwd;
    LossBreakdown losses;
};

StudentStepRecord student_step(StudentModel& student, const NacModel& teacher, const Signal& batch,
                               const DistillPlan& plan, double commit_weight, bool with_grads,
                               GradPath path) {
    plan.validate(student.mrvq().config(), teacher.rvq().layer_count());
    StudentStepRecord rec;
    rec.xin = student.pad_input(batch);
    rec.enc_fwd = apply_stages(student.encoder(), rec.xin);
    rec.mr_fwd = student.mrvq().forward(rec.enc_fwd.out, path == GradPath::BypassQuantizers);
    rec.dec_fwd = apply_stages_transposed(student.decoder(), rec.mr_fwd.h);

    FeatureMap x0_t = teacher.encode(batch);
    auto teacher_fwd = teacher.rvq().encode(x0_t);
    auto prefixes = teacher_prefixes(teacher_fwd);

    auto& lb = rec.losses;
    FeatureMap g_y(rec.dec_fwd.out.dim(), rec.dec_fwd.out.frames(), rec.dec_fwd.out.frame_rate_hz());
    if (with_grads)
        lb.nac_recon = mae_loss_backward(rec.dec_fwd.out, rec.xin, 1.0, g_y);
    else
        lb.nac_recon = mae_loss(rec.dec_fwd.out, rec.xin);
    lb.nac_commit = rec.mr_fwd.commit_loss;

    std::vector<FeatureMap> g_partials, g_a, g_u;
    auto fld = fld_loss(rec.mr_fwd.partials, prefixes, plan, with_grads ? &g_partials : nullptr);
    lb.fld = fld.value;
    auto hsr = hsr_loss(rec.mr_fwd, plan.hsr_weights, with_grads ? &g_a : nullptr,
                        with_grads ? &g_u : nullptr);
    lb.hsr = hsr.value;
    lb.total = lb.nac_recon + commit_weight * lb.nac_commit + lb.fld + lb.hsr;
    if (!with_grads) return rec;

    FeatureMap g_h = apply_stages_transposed_backward(student.decoder(), rec.dec_fwd, g_y);
    FeatureMap g_x0 =
        mrvq_backward(student.mrvq(), rec.mr_fwd, g_h, g_partials, g_a, g_u, commit_weight, path);
    apply_stages_backward(student.encoder(), rec.enc_fwd, g_x0);
    return rec;
}

void sgd_student(StudentModel& student, double lr) {
    for (auto& m : student.encoder()) {
        sgd_step(m.weights, m.weight_grad, lr);
        sgd_step(m.bias, m.bias_grad, lr);
    }
    for (auto& m : student.decoder()) {
        sgd_step(m.weights, m.weight_grad, lr);
        sgd_step(m.bias, m.bias_grad, lr);
    }
    for (std::size_t k = 0; k < student.mrvq().block_count(); ++k) {
        auto& blk = student.mrvq().block(k);
        if (blk.config.degenerate()) continue;
        sgd_step(blk.sub_enc.weights, blk.sub_enc.weight_grad, lr);
        sgd_step(blk.sub_enc.bias, blk.sub_enc.bias_grad, lr);
        sgd_step(blk.sub_dec.weights, blk.sub_dec.weight_grad, lr);
        sgd_step(blk.sub_dec.bias, blk.sub_dec.bias_grad, lr);
    }
}

std::string join_weights(std::span<const double> w) {
    std::ostringstream os;
    for (std::size_t i = 0; i < w.size(); ++i) os << (i ? "," : "") << w[i];
    return os.str();
}

}  // namespace

LossBreakdown total_loss(StudentModel& student, const NacModel& teacher, const Signal& batch,
                         const DistillPlan& plan, double commit_weight, bool with_grads,
                         GradPath path) {
    return student_step(student, teacher, batch, plan, commit_weight, with_grads, path).losses;
}

StudentModel post_train(const NacModel& teacher, const MrvqConfig& cfg, const DistillPlan& plan,
                        const std::vector<Signal>& corpus, const PostTrainOptions& opts, Trace& trace) {
    plan.validate(cfg, teacher.rvq().layer_count());
    if (corpus.empty()) throw ConfigError("post_train: empty corpus");
    std::uint64_t guard = teacher.parameter_checksum();
    Rng rng(opts.seed);
    StudentModel student(teacher, cfg, plan.from_scratch, rng);

    trace.columns = {"step", "nac", "fld", "hsr", "total"};
    trace.notes.push_back(plan.from_scratch ? "init = from-scratch" : "init = teacher-copy");
    trace.notes.push_back("fld_weights = " + join_weights(plan.fld_weights));
    trace.notes.push_back("hsr_weights = " + join_weights(plan.hsr_weights));
    if (plan.steps == 0) return student;

    std::size_t warm = std::min(opts.warmup_clips, corpus.size());
    std::vector<FeatureMap> feats;
    feats.reserve(warm);
    for (std::size_t i = 0; i < warm; ++i) feats.push_back(student.encode(corpus[i]));
    student.mrvq().warm_init(concat_frames(feats), opts.kmeans_iters, rng);

    for (std::size_t step = 0; step < plan.steps; ++step) {
        const Signal& clip = corpus[step % corpus.size()];
        student.mrvq().zero_grads();
        auto rec = student_step(student, teacher, clip, plan, opts.commit_weight, true, GradPath::Train);
        const auto& lb = rec.losses;
        if (!std::isfinite(lb.total)) throw DivergenceError("post_train: non-finite loss");
        trace.add_row({static_cast<double>(step), lb.nac_recon + opts.commit_weight * lb.nac_commit,
                       lb.fld, lb.hsr, lb.total});
        sgd_student(student, cosine_lr(plan.lr, step, plan.steps));
        student.mrvq().ema_update(rec.mr_fwd, rng);
    }
    if (teacher.parameter_checksum() != guard)
        throw DivergenceError("post_train: teacher parameters changed");
    return student;
}

}  // namespace mrq

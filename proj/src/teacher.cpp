#include "mrq/teacher.hpp"

#include <cmath>
#include <numeric>

namespace mrq {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
}

Signal synth_signal(const SyntheticSpec& spec) {
    if (spec.freq_hi_hz >= static_cast<double>(spec.sample_rate_hz) / 2.0)
        throw ConfigError("synth_signal: tone frequency range violates Nyquist");
    if (spec.freq_lo_hz <= 0.0 || spec.freq_lo_hz > spec.freq_hi_hz)
        throw ConfigError("synth_signal: bad frequency range");
    std::size_t n = static_cast<std::size_t>(std::llround(spec.duration_s * static_cast<double>(spec.sample_rate_hz)));
    Signal sig;
    sig.sample_rate_hz = spec.sample_rate_hz;
    sig.samples.assign(n, 0.0);
    if (spec.num_tones == 0) return sig;
    Rng rng(spec.seed);
    struct Tone {
        double freq, phase, amp, am_rate, am_phase;
    };
    std::vector<Tone> tones(spec.num_tones);
    for (auto& t : tones) {
        t.freq = rng.uniform(spec.freq_lo_hz, spec.freq_hi_hz);
        if (spec.freq_snap_hz > 0.0) {
            t.freq = std::round(t.freq / spec.freq_snap_hz) * spec.freq_snap_hz;
            t.freq = std::clamp(t.freq, spec.freq_snap_hz, spec.freq_hi_hz);
        }
        t.phase = rng.uniform(0.0, kTwoPi);
        t.amp = rng.uniform(0.4, 1.0);
        t.am_rate = rng.uniform(spec.am_lo_hz, spec.am_hi_hz);
        t.am_phase = rng.uniform(0.0, kTwoPi);
    }
    double dt = 1.0 / static_cast<double>(spec.sample_rate_hz);
    for (std::size_t i = 0; i < n; ++i) {
        double t = static_cast<double>(i) * dt;
        double s = 0.0;
        for (const auto& tone : tones) {
            double env = 0.5 * (1.0 + std::sin(kTwoPi * tone.am_rate * t + tone.am_phase));
            s += tone.amp * env * std::sin(kTwoPi * tone.freq * t + tone.phase);
        }
        sig.samples[i] = s;
    }
    double peak = 0.0;
    for (double v : sig.samples) peak = std::max(peak, std::abs(v));
    if (peak > 0.0) {
        for (double& v : sig.samples) v /= peak;
    }
    return sig;
}

std::vector<Signal> synth_corpus(const SyntheticSpec& base, std::size_t count) {
    std::vector<Signal> out;
    out.reserve(count);
    SyntheticSpec spec = base;
    for (std::size_t i = 0; i < count; ++i) {
        spec.seed = base.seed + i;
        out.push_back(synth_signal(spec));
    }
    return out;
}

std::size_t NacConfig::total_stride() const {
    std::size_t r = 1;
    for (std::size_t s : strides) r *= s;
    return r;
}

double NacConfig::base_rate_hz() const {
    return static_cast<double>(sample_rate_hz) / static_cast<double>(total_stride());
}

void NacConfig::validate() const {
    if (strides.empty()) throw ConfigError("NacConfig: need at least one encoder stage");
    for (std::size_t s : strides)
        if (s == 0) throw ConfigError("NacConfig: zero stride");
    if (sample_rate_hz % total_stride() != 0)
        throw ConfigError("NacConfig: sample rate must be divisible by the total stride");
    if (dim == 0 || mid_dim == 0) throw ConfigError("NacConfig: dims must be positive");
    if (layers == 0) throw ConfigError("NacConfig: need at least one RVQ layer");
}

StageForward apply_stages(const std::vector<StridedLinearMap>& stages, const FeatureMap& x) {
    StageForward f;
    FeatureMap cur = x;
    for (const auto& m : stages) {
        f.inputs.push_back(cur);
        cur = strided_apply(m, cur);
    }
    f.out = std::move(cur);
    return f;
}

FeatureMap apply_stages_backward(std::vector<StridedLinearMap>& stages, const StageForward& fwd,
                                 const FeatureMap& grad_out) {
    FeatureMap g = grad_out;
    for (std::size_t i = stages.size(); i-- > 0;)
        g = strided_apply_backward(stages[i], fwd.inputs[i], g);
    return g;
}

StageForward apply_stages_transposed(const std::vector<StridedLinearMap>& stages, const FeatureMap& h) {
    StageForward f;
    FeatureMap cur = h;
    for (std::size_t i = stages.size(); i-- > 0;) {
        f.inputs.push_back(cur);
        cur = transposed_apply(stages[i], cur);
    }
    f.out = std::move(cur);
    return f;
}

FeatureMap apply_stages_transposed_backward(std::vector<StridedLinearMap>& stages, const StageForward& fwd,
                                            const FeatureMap& grad_out) {
    FeatureMap g = grad_out;
    std::size_t j = fwd.inputs.size();
    for (std::size_t i = 0; i < stages.size(); ++i) {
        --j;
        g = transposed_apply_backward(stages[i], fwd.inputs[j], g);
    }
    return g;
}

FeatureMap rvq_backward_st(RvqStack& stack, const RvqStack::EncodeResult& fwd, const FeatureMap& grad_h,
                           double commit_weight) {
    FeatureMap g_x = grad_h;
    if (fwd.layer_inputs.empty()) return g_x;  // bypass mode: pure pass-through
    std::size_t n = grad_h.frames();
    double size = static_cast<double>(grad_h.size());
    for (std::size_t l = 0; l < fwd.layer_inputs.size(); ++l) {
        auto& cb = stack.layer(l);
        auto grads = cb.grad_flat();
        const auto& x_l = fwd.layer_inputs[l];
        const auto& q_l = fwd.layer_quantized[l];
        const auto& ids = fwd.tokens[l].ids;
        double coef = commit_weight * 2.0 / size;
        for (std::size_t t = 0; t < n; ++t) {
            auto gh = grad_h.frame(t);
            auto gx = g_x.frame(t);
            auto xf = x_l.frame(t);
            auto qf = q_l.frame(t);
            double* gv = grads.data() + static_cast<std::size_t>(ids[t]) * cb.dim();
            for (std::size_t i = 0; i < cb.dim(); ++i) {
                double diff = xf[i] - qf[i];
                gv[i] += gh[i] - coef * diff;  // lookup path + commit path to the entry
                gx[i] += coef * diff;          // commit path to the stack input
            }
        }
    }
    return g_x;
}

FeatureMap rvq_backward_exact(RvqStack& stack, const RvqStack::EncodeResult& fwd, const FeatureMap& grad_h,
                              double commit_weight) {
    if (fwd.layer_inputs.empty()) return grad_h;  // bypass stacks are the identity
    std::size_t n = grad_h.frames();
    double size = static_cast<double>(grad_h.size());
    // g_x tracks the gradient w.r.t. the running residual x_l; the stack's
    // final residual has no consumers.
    FeatureMap g_x(grad_h.dim(), grad_h.frames(), grad_h.frame_rate_hz());
    for (std::size_t l = fwd.layer_inputs.size(); l-- > 0;) {
        auto& cb = stack.layer(l);
        auto grads = cb.grad_flat();
        const auto& x_l = fwd.layer_inputs[l];
        const auto& q_l = fwd.layer_quantized[l];
        const auto& ids = fwd.tokens[l].ids;
        double coef = commit_weight * 2.0 / size;
        for (std::size_t t = 0; t < n; ++t) {
            auto gh = grad_h.frame(t);
            auto gx = g_x.frame(t);
            auto xf = x_l.frame(t);
            auto qf = q_l.frame(t);
            double* gv = grads.data() + static_cast<std::size_t>(ids[t]) * cb.dim();
            for (std::size_t i = 0; i < cb.dim(); ++i) {
                double diff = xf[i] - qf[i];
                // q~_l feeds h (+gh) and x_l = x_{l-1} - q~_l (-gx), plus its
                // own commitment term.
                gv[i] += gh[i] - gx[i] - coef * diff;
                // x_{l-1} feeds x_l (identity) and commit_l.
                gx[i] += coef * diff;
            }
        }
    }
    return g_x;
}

NacModel::NacModel(NacConfig cfg, std::vector<StridedLinearMap> encoder,
                   std::vector<StridedLinearMap> decoder, RvqStack rvq)
    : cfg_(std::move(cfg)), encoder_(std::move(encoder)), decoder_(std::move(decoder)), rvq_(std::move(rvq)) {
    cfg_.validate();
}

NacModel::NacModel(const NacConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    std::size_t d_in = 1;
    for (std::size_t i = 0; i < cfg.strides.size(); ++i) {
        std::size_t d_out = (i + 1 == cfg.strides.size()) ? cfg.dim : cfg.mid_dim;
        std::size_t s = cfg.strides[i];
        StridedLinearMap enc(d_in, d_out, 2 * s, s);
        enc.init_random(rng);
        encoder_.push_back(std::move(enc));
        StridedLinearMap dec(d_in, d_out, 2 * s, s);
        dec.init_random(rng);
        decoder_.push_back(std::move(dec));
        d_in = d_out;
    }
    rvq_ = RvqStack(cfg.layers, cfg.vocab, cfg.dim, cfg.decay);
}

FeatureMap NacModel::pad_input(const Signal& sig) const {
    if (sig.sample_rate_hz != cfg_.sample_rate_hz)
        throw ConfigError("NacModel: signal sample rate does not match the model");
    if (sig.samples.empty()) throw EmptyInputError("NacModel: empty signal");
    std::size_t r = total_stride();
    std::size_t n = (sig.samples.size() + r - 1) / r * r;
    FeatureMap x(1, n, static_cast<double>(cfg_.sample_rate_hz));
    for (std::size_t i = 0; i < sig.samples.size(); ++i) x.at(0, i) = sig.samples[i];
    return x;
}

FeatureMap NacModel::encode_features(const FeatureMap& padded) const {
    FeatureMap cur = padded;
    for (const auto& m : encoder_) cur = strided_apply(m, cur);
    return cur;
}

FeatureMap NacModel::encode(const Signal& sig) const { return encode_features(pad_input(sig)); }

FeatureMap NacModel::decode_latent(const FeatureMap& h) const {
    FeatureMap cur = h;
    for (std::size_t i = decoder_.size(); i-- > 0;) cur = transposed_apply(decoder_[i], cur);
    return cur;
}

std::uint64_t NacModel::parameter_checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& m : encoder_) {
        h = fnv1a(m.weights, h);
        h = fnv1a(m.bias, h);
    }
    for (const auto& m : decoder_) {
        h = fnv1a(m.weights, h);
        h = fnv1a(m.bias, h);
    }
    for (std::size_t l = 0; l < rvq_.layer_count(); ++l) {
        const auto& cb = rvq_.layer(l);
        h = fnv1a(cb.vectors_flat(), h);
        h = fnv1a(cb.ema_cluster_size(), h);
        h = fnv1a(cb.ema_embed_sum(), h);
    }
    return h;
}

double snr_db(const FeatureMap& x, const FeatureMap& y) {
    x.require_same_shape(y, "snr_db");
    double sig = 0.0, err = 0.0;
    auto xv = x.values();
    auto yv = y.values();
    for (std::size_t i = 0; i < xv.size(); ++i) {
        sig += xv[i] * xv[i];
        double d = xv[i] - yv[i];
        err += d * d;
    }
    if (sig == 0.0 || err == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(sig / err);
}

ReconstructionResult reconstruct(const NacModel& model, const Signal& sig, std::size_t max_layers) {
    FeatureMap padded = model.pad_input(sig);
    FeatureMap x0 = model.encode_features(padded);
    std::size_t depth = std::min(max_layers, model.rvq().layer_count());
    auto fwd = model.rvq().encode(x0, depth);
    FeatureMap y = model.decode_latent(fwd.h);
    ReconstructionResult r;
    r.snr_db = snr_db(padded, y);
    r.output.sample_rate_hz = sig.sample_rate_hz;
    r.output.samples.assign(y.values().begin(), y.values().end());
    return r;
}

Trace train_teacher(NacModel& model, const std::vector<Signal>& corpus, const TeacherTrainOptions& opts) {
    Trace trace;
    trace.columns = {"step", "recon_mae", "commit", "total"};
    if (opts.steps == 0) return trace;
    if (corpus.empty()) throw ConfigError("train_teacher: empty corpus");
    Rng rng(opts.seed);

    if (!model.rvq().initialized()) {
        std::size_t warm = std::min(opts.warmup_clips, corpus.size());
        std::vector<FeatureMap> feats;
        for (std::size_t i = 0; i < warm; ++i) feats.push_back(model.encode(corpus[i]));
        model.rvq().warm_init(concat_frames(feats), opts.kmeans_iters, rng);
    }

    for (std::size_t step = 0; step < opts.steps; ++step) {
        const Signal& clip = corpus[step % corpus.size()];
        FeatureMap xin = model.pad_input(clip);
        auto enc_fwd = apply_stages(model.encoder(), xin);
        std::size_t depth = model.rvq().layer_count();
        if (opts.quantizer_dropout) depth = 1 + static_cast<std::size_t>(rng.uniform_int(depth));
        auto rvq_fwd = model.rvq().encode(enc_fwd.out, depth);
        auto dec_fwd = apply_stages_transposed(model.decoder(), rvq_fwd.h);

        FeatureMap g_y(1, dec_fwd.out.frames(), dec_fwd.out.frame_rate_hz());
        double recon = mae_loss_backward(dec_fwd.out, xin, 1.0, g_y);
        double total = recon + opts.commit_weight * rvq_fwd.commit_loss;
        if (!std::isfinite(total)) throw DivergenceError("train_teacher: non-finite loss");
        trace.add_row({static_cast<double>(step), recon, rvq_fwd.commit_loss, total});

        FeatureMap g_h = apply_stages_transposed_backward(model.decoder(), dec_fwd, g_y);
        model.rvq().zero_grads();
        FeatureMap g_x0 = rvq_backward_st(model.rvq(), rvq_fwd, g_h, opts.commit_weight);
        apply_stages_backward(model.encoder(), enc_fwd, g_x0);

        double lr = cosine_lr(opts.lr, step, opts.steps);
        for (auto& m : model.encoder()) {
            sgd_step(m.weights, m.weight_grad, lr);
            sgd_step(m.bias, m.bias_grad, lr);
        }
        for (auto& m : model.decoder()) {
            sgd_step(m.weights, m.weight_grad, lr);
            sgd_step(m.bias, m.bias_grad, lr);
        }
        model.rvq().ema_update(rvq_fwd, rng);
    }
    return trace;
}

}  // namespace mrq

#include "mrq/vq.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mrq {

Codebook::Codebook(std::size_t vocab, std::size_t dim, double decay)
    : vocab_(vocab),
      dim_(dim),
      decay_(decay),
      vectors_(vocab * dim, 0.0),
      ema_cluster_size_(vocab, 0.0),
      ema_embed_sum_(vocab * dim, 0.0),
      usage_count_(vocab, 0),
      grad_(vocab * dim, 0.0) {
    if (vocab < 2) throw ConfigError("Codebook: vocabulary must be >= 2");
    if (dim == 0) throw ConfigError("Codebook: dim must be positive");
    if (decay <= 0.0 || decay >= 1.0) {
        // decay 0 is allowed as the degenerate "batch means" mode
        if (decay != 0.0) throw ConfigError("Codebook: decay must be in [0,1)");
    }
}

Codebook Codebook::from_entries(std::vector<std::vector<double>> entries, double decay) {
    Codebook cb(entries.size(), entries.empty() ? 0 : entries.front().size(), decay);
    for (std::size_t v = 0; v < cb.vocab_; ++v) {
        if (entries[v].size() != cb.dim_) throw ConfigError("Codebook: ragged entries");
        std::copy(entries[v].begin(), entries[v].end(),
                  cb.vectors_.begin() + static_cast<std::ptrdiff_t>(v * cb.dim_));
        cb.ema_cluster_size_[v] = 1.0;
        std::copy(entries[v].begin(), entries[v].end(),
                  cb.ema_embed_sum_.begin() + static_cast<std::ptrdiff_t>(v * cb.dim_));
    }
    cb.initialized_ = true;
    return cb;
}

TokenRow Codebook::nearest(const FeatureMap& x) const {
    if (x.dim() != dim_) throw ConfigError("Codebook::nearest: dim mismatch");
    if (!initialized_) throw ConfigError("Codebook::nearest: codebook not initialized");
    TokenRow row;
    row.frame_rate_hz = x.frame_rate_hz();
    row.ids.resize(x.frames());
    for (std::size_t t = 0; t < x.frames(); ++t) {
        auto f = x.frame(t);
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_v = 0;
        for (std::size_t v = 0; v < vocab_; ++v) {
            const double* cw = vectors_.data() + v * dim_;
            double dist = 0.0;
            for (std::size_t i = 0; i < dim_; ++i) {
                double diff = f[i] - cw[i];
                dist += diff * diff;
            }
            if (dist < best) {  // strict: ties keep the lowest index
                best = dist;
                best_v = v;
            }
        }
        row.ids[t] = static_cast<TokenId>(best_v);
    }
    return row;
}

FeatureMap Codebook::dequantize(const TokenRow& t) const {
    FeatureMap out(dim_, t.ids.size(), t.frame_rate_hz);
    for (std::size_t k = 0; k < t.ids.size(); ++k) {
        if (t.ids[k] >= vocab_) throw DataError("Codebook::dequantize: token id out of range");
        const double* cw = vectors_.data() + static_cast<std::size_t>(t.ids[k]) * dim_;
        auto of = out.frame(k);
        for (std::size_t i = 0; i < dim_; ++i) of[i] = cw[i];
    }
    return out;
}

Codebook::QuantizeResult Codebook::quantize_st(const FeatureMap& x) const {
    QuantizeResult r;
    r.tokens = nearest(x);
    r.quantized = dequantize(r.tokens);
    double s = 0.0;
    auto xv = x.values();
    auto qv = r.quantized.values();
    for (std::size_t i = 0; i < xv.size(); ++i) {
        double diff = xv[i] - qv[i];
        s += diff * diff;
    }
    r.commit_loss = xv.empty() ? 0.0 : s / static_cast<double>(xv.size());
    return r;
}

void Codebook::ema_update(const FeatureMap& x, const TokenRow& assignments, Rng& rng) {
    if (assignments.ids.size() != x.frames()) throw ConfigError("ema_update: assignment length mismatch");
    std::vector<double> counts(vocab_, 0.0);
    std::vector<double> sums(vocab_ * dim_, 0.0);
    for (std::size_t t = 0; t < x.frames(); ++t) {
        std::size_t v = assignments.ids[t];
        if (v >= vocab_) throw DataError("ema_update: token id out of range");
        counts[v] += 1.0;
        auto f = x.frame(t);
        double* s = sums.data() + v * dim_;
        for (std::size_t i = 0; i < dim_; ++i) s[i] += f[i];
    }
    for (std::size_t v = 0; v < vocab_; ++v) {
        if (counts[v] == 0.0) continue;  // untouched rows keep vector and stats
        ema_cluster_size_[v] = decay_ * ema_cluster_size_[v] + (1.0 - decay_) * counts[v];
        double* es = ema_embed_sum_.data() + v * dim_;
        const double* s = sums.data() + v * dim_;
        double* cw = vectors_.data() + v * dim_;
        double denom = std::max(ema_cluster_size_[v], kSizeEpsilon);
        for (std::size_t i = 0; i < dim_; ++i) {
            es[i] = decay_ * es[i] + (1.0 - decay_) * s[i];
            cw[i] = es[i] / denom;
        }
        usage_count_[v] += static_cast<std::uint32_t>(counts[v]);
    }
    if (++reseed_step_ >= kReseedWindow) {
        if (x.frames() > 0) {
            for (std::size_t v = 0; v < vocab_; ++v) {
                if (usage_count_[v] >= kDeadUsageThreshold) continue;
                std::size_t t = static_cast<std::size_t>(rng.uniform_int(x.frames()));
                auto f = x.frame(t);
                double* cw = vectors_.data() + v * dim_;
                double* es = ema_embed_sum_.data() + v * dim_;
                for (std::size_t i = 0; i < dim_; ++i) {
                    cw[i] = f[i];
                    es[i] = f[i];
                }
                ema_cluster_size_[v] = 1.0;
            }
        }
        std::fill(usage_count_.begin(), usage_count_.end(), 0);
        reseed_step_ = 0;
    }
}

void Codebook::kmeans_init(const FeatureMap& sample, std::size_t iters, Rng& rng) {
    if (sample.dim() != dim_) throw ConfigError("kmeans_init: dim mismatch");
    if (sample.frames() < vocab_)
        throw InsufficientDataError("kmeans_init: need at least V sample frames");
    std::size_t n = sample.frames();
    // Partial Fisher-Yates: V distinct seed frames.
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = 0; i < vocab_; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(n - i));
        std::swap(order[i], order[j]);
    }
    for (std::size_t v = 0; v < vocab_; ++v) {
        auto f = sample.frame(order[v]);
        std::copy(f.begin(), f.end(), vectors_.begin() + static_cast<std::ptrdiff_t>(v * dim_));
    }
    initialized_ = true;
    std::vector<std::size_t> assign(n);
    for (std::size_t it = 0; it < iters; ++it) {
        TokenRow row = nearest(sample);
        std::vector<double> counts(vocab_, 0.0);
        std::vector<double> sums(vocab_ * dim_, 0.0);
        for (std::size_t t = 0; t < n; ++t) {
            std::size_t v = row.ids[t];
            counts[v] += 1.0;
            auto f = sample.frame(t);
            double* s = sums.data() + v * dim_;
            for (std::size_t i = 0; i < dim_; ++i) s[i] += f[i];
        }
        for (std::size_t v = 0; v < vocab_; ++v) {
            if (counts[v] == 0.0) continue;  // empty cluster keeps its centroid
            double* cw = vectors_.data() + v * dim_;
            const double* s = sums.data() + v * dim_;
            for (std::size_t i = 0; i < dim_; ++i) cw[i] = s[i] / counts[v];
        }
    }
    // Seed EMA statistics consistent with the final assignment.
    TokenRow row = nearest(sample);
    std::vector<double> counts(vocab_, 0.0);
    for (TokenId id : row.ids) counts[id] += 1.0;
    for (std::size_t v = 0; v < vocab_; ++v) {
        ema_cluster_size_[v] = std::max(counts[v], 1.0);
        double* es = ema_embed_sum_.data() + v * dim_;
        const double* cw = vectors_.data() + v * dim_;
        for (std::size_t i = 0; i < dim_; ++i) es[i] = cw[i] * ema_cluster_size_[v];
    }
    std::fill(usage_count_.begin(), usage_count_.end(), 0);
    reseed_step_ = 0;
}

void Codebook::restore(std::vector<double> vectors, std::vector<double> ema_size,
                        std::vector<double> ema_sum, std::vector<std::uint32_t> usage,
                        std::uint32_t reseed_step, bool initialized) {
    if (vectors.size() != vocab_ * dim_ || ema_size.size() != vocab_ ||
        ema_sum.size() != vocab_ * dim_ || usage.size() != vocab_)
        throw DataError("Codebook::restore: size mismatch");
    vectors_ = std::move(vectors);
    ema_cluster_size_ = std::move(ema_size);
    ema_embed_sum_ = std::move(ema_sum);
    usage_count_ = std::move(usage);
    reseed_step_ = reseed_step;
    initialized_ = initialized;
}

RvqStack::RvqStack(std::size_t layers, std::size_t vocab, std::size_t dim, double decay) {
    if (layers == 0) throw ConfigError("RvqStack: need at least one layer");
    layers_.reserve(layers);
    for (std::size_t l = 0; l < layers; ++l) layers_.emplace_back(vocab, dim, decay);
}

RvqStack::RvqStack(std::vector<Codebook> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw ConfigError("RvqStack: need at least one layer");
    for (const auto& cb : layers_) {
        if (cb.dim() != layers_.front().dim()) throw ConfigError("RvqStack: layers must share dim");
    }
}

bool RvqStack::initialized() const {
    for (const auto& cb : layers_) {
        if (!cb.initialized()) return false;
    }
    return true;
}

RvqStack::EncodeResult RvqStack::encode(const FeatureMap& x0, std::size_t max_layers, bool bypass) const {
    if (x0.dim() != dim()) throw ConfigError("RvqStack::encode: dim mismatch");
    EncodeResult r;
    if (bypass) {
        r.h = x0;
        r.residual = FeatureMap(x0.dim(), x0.frames(), x0.frame_rate_hz());
        return r;
    }
    std::size_t depth = std::min(max_layers, layers_.size());
    r.h = FeatureMap(x0.dim(), x0.frames(), x0.frame_rate_hz());
    r.residual = x0;
    r.tokens.reserve(depth);
    r.layer_inputs.reserve(depth);
    r.layer_quantized.reserve(depth);
    for (std::size_t l = 0; l < depth; ++l) {
        r.layer_inputs.push_back(r.residual);
        auto q = layers_[l].quantize_st(r.residual);
        r.commit_loss += q.commit_loss;
        r.h.add(q.quantized);
        r.residual.sub(q.quantized);
        r.tokens.push_back(std::move(q.tokens));
        r.layer_quantized.push_back(std::move(q.quantized));
    }
    return r;
}

FeatureMap RvqStack::decode(const std::vector<TokenRow>& tokens, std::size_t frames,
                            double frame_rate_hz) const {
    if (tokens.size() > layers_.size()) throw DataError("RvqStack::decode: more rows than layers");
    FeatureMap h(dim(), frames, frame_rate_hz);
    for (std::size_t l = 0; l < tokens.size(); ++l) {
        if (tokens[l].ids.size() != frames) throw DataError("RvqStack::decode: row length mismatch");
        h.add(layers_[l].dequantize(tokens[l]));
    }
    return h;
}

void RvqStack::ema_update(const EncodeResult& fwd, Rng& rng) {
    // Prefix encodes (dropout) update only the layers that ran.
    for (std::size_t l = 0; l < fwd.layer_inputs.size(); ++l)
        layers_[l].ema_update(fwd.layer_inputs[l], fwd.tokens[l], rng);
}

void RvqStack::warm_init(const FeatureMap& sample, std::size_t kmeans_iters, Rng& rng) {
    FeatureMap residual = sample;
    for (auto& cb : layers_) {
        cb.kmeans_init(residual, kmeans_iters, rng);
        auto q = cb.quantize_st(residual);
        residual.sub(q.quantized);
    }
}

void RvqStack::zero_grads() {
    for (auto& cb : layers_) cb.zero_grad();
}

}  // namespace mrq

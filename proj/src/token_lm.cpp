#include "mrq/token_lm.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace mrq {

void TokenGrid::validate() const {
    for (const auto& row : rows) {
        if (row.ids.size() != frames()) throw DataError("TokenGrid: ragged rows");
        for (TokenId id : row.ids)
            if (id >= vocab) throw DataError("TokenGrid: id out of vocabulary");
    }
}

DelayedGrid apply_delay(const TokenGrid& g) {
    g.validate();
    DelayedGrid dg;
    dg.pad_id = static_cast<TokenId>(g.vocab);
    dg.frame_rate_hz = g.frame_rate_hz;
    dg.block = g.block;
    dg.vocab = g.vocab;
    dg.frames = g.frames();
    std::size_t R = g.row_count();
    std::size_t cols = dg.frames + R - 1;
    dg.rows.assign(R, std::vector<TokenId>(cols, dg.pad_id));
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t t = 0; t < dg.frames; ++t) dg.rows[r][t + r] = g.rows[r].ids[t];
    return dg;
}

TokenGrid remove_delay(const DelayedGrid& dg) {
    TokenGrid g;
    g.frame_rate_hz = dg.frame_rate_hz;
    g.block = dg.block;
    g.vocab = dg.vocab;
    std::size_t R = dg.rows.size();
    if (R == 0) return g;
    std::size_t cols = dg.columns();
    if (cols + 1 < R) throw DataError("remove_delay: grid shorter than its row count");
    std::size_t n = cols - (R - 1);
    if (dg.frames != n) throw DataError("remove_delay: recorded frame count mismatch");
    g.rows.assign(R, TokenRow{std::vector<TokenId>(n), dg.frame_rate_hz});
    for (std::size_t r = 0; r < R; ++r) {
        if (dg.rows[r].size() != cols) throw DataError("remove_delay: ragged delayed rows");
        for (std::size_t t = 0; t < cols; ++t) {
            bool margin = t < r || t >= n + r;
            TokenId id = dg.rows[r][t];
            if (margin) {
                if (id != dg.pad_id) throw DataError("remove_delay: payload id in a margin cell");
            } else {
                if (id == dg.pad_id) throw DataError("remove_delay: pad id inside the payload");
                g.rows[r].ids[t - r] = id;
            }
        }
    }
    return g;
}

std::string CountPredictor::key_of(int layer_id, std::span<const TokenId> ctx) {
    std::string key(sizeof(int) + ctx.size_bytes(), '\0');
    std::memcpy(key.data(), &layer_id, sizeof(int));
    if (!ctx.empty()) std::memcpy(key.data() + sizeof(int), ctx.data(), ctx.size_bytes());
    return key;
}

void CountPredictor::bump(int layer_id, std::span<const TokenId> ctx, TokenId target) {
    if (target >= vocab_) return;  // pads and out-of-range ids are not counted
    auto& slot = counts_[key_of(layer_id, ctx)];
    if (slot.empty()) slot.assign(vocab_ + 1, 0);
    ++slot[target];
}

void CountPredictor::fit_ar(const TokenGrid& grid) {
    DelayedGrid dg = apply_delay(grid);
    std::size_t R = dg.rows.size();
    std::vector<TokenId> prev;
    for (std::size_t t = 0; t < dg.columns(); ++t) {
        for (std::size_t r = 0; r < R; ++r) bump(static_cast<int>(r), prev, dg.rows[r][t]);
        prev.clear();
        for (std::size_t r = 0; r < R; ++r) prev.push_back(dg.rows[r][t]);
    }
}

void CountPredictor::fit_nar(const std::vector<LrvqCodes>& codes, const MrvqConfig& cfg) {
    if (codes.size() != cfg.blocks.size()) throw ConfigError("fit_nar: code set / config mismatch");
    std::vector<std::size_t> alphas;
    for (const auto& b : cfg.blocks) alphas.push_back(b.alpha);
    for (std::size_t k = 1; k < codes.size(); ++k) {
        const auto& below = codes[k - 1].c;
        const auto& a_rows = codes[k].a;
        std::size_t n = a_rows.empty() ? 0 : a_rows.front().ids.size();
        for (std::size_t l = 1; l <= a_rows.size(); ++l) {
            int global = static_cast<int>(layer_id(k + 1, l, alphas));
            for (std::size_t pos = 0; pos < n; ++pos) {
                std::vector<TokenId> ctx;
                for (const auto& row : below) ctx.push_back(row.ids[pos]);
                for (std::size_t lp = 0; lp + 1 < l; ++lp) ctx.push_back(a_rows[lp].ids[pos]);
                bump(global, ctx, a_rows[l - 1].ids[pos]);
            }
        }
    }
}

std::vector<double> CountPredictor::next_distribution(const PredictorQuery& q) const {
    std::vector<TokenId> ctx;
    if (q.site_tokens != nullptr) {
        ctx = *q.site_tokens;
    } else if (q.columns != nullptr && !q.columns->empty()) {
        ctx = q.columns->back();
    }
    std::vector<double> dist(vocab_ + 1, 0.0);
    auto it = counts_.find(key_of(q.layer_id, ctx));
    double total = static_cast<double>(vocab_ + 1);
    if (it != counts_.end())
        for (std::uint32_t c : it->second) total += static_cast<double>(c);
    for (std::size_t v = 0; v <= vocab_; ++v) {
        double c = 1.0;  // add-one smoothing
        if (it != counts_.end()) c += static_cast<double>(it->second[v]);
        dist[v] = c / total;
    }
    return dist;
}

OraclePredictor::OraclePredictor(const std::vector<LrvqCodes>& truth, const MrvqConfig& cfg)
    : vocab_(cfg.vocab) {
    if (truth.size() != cfg.blocks.size()) throw ConfigError("OraclePredictor: code set / config mismatch");
    TokenGrid b1;
    b1.rows = truth.front().b;
    b1.frame_rate_hz = cfg.blocks.front().frame_rate_hz;
    b1.block = 1;
    b1.vocab = cfg.vocab;
    ar_truth_ = apply_delay(b1);
    first_nar_layer_ = cfg.blocks.front().alpha + 1;
    for (std::size_t k = 1; k < truth.size(); ++k)
        for (const auto& row : truth[k].a) nar_rows_.push_back(row.ids);
}

std::vector<double> OraclePredictor::next_distribution(const PredictorQuery& q) const {
    std::vector<double> dist(vocab_ + 1, 0.0);
    TokenId id;
    if (q.site_tokens == nullptr && q.accumulated == nullptr) {
        // AR query: layer is the delayed row, position the column.
        std::size_t r = static_cast<std::size_t>(q.layer_id);
        if (r >= ar_truth_.rows.size() || q.position >= ar_truth_.columns())
            throw DataError("OraclePredictor: query beyond the recorded grid");
        id = ar_truth_.rows[r][q.position];
    } else {
        std::size_t idx = static_cast<std::size_t>(q.layer_id) - first_nar_layer_;
        if (idx >= nar_rows_.size() || q.position >= nar_rows_[idx].size())
            throw DataError("OraclePredictor: query beyond the recorded rows");
        id = nar_rows_[idx][q.position];
    }
    dist[id] = 1.0;
    return dist;
}

namespace {

void check_distribution(const std::vector<double>& dist, std::size_t vocab) {
    if (dist.size() != vocab + 1) throw DataError("predictor: distribution has the wrong support");
    double sum = 0.0;
    for (double p : dist) {
        if (p < 0.0 || !std::isfinite(p)) throw DataError("predictor: invalid probability");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw DataError("predictor: distribution does not sum to 1");
}

TokenId sample_from(const std::vector<double>& dist, const SampleOptions& opts, Rng& rng) {
    if (opts.mode == SampleMode::Greedy) {
        std::size_t best = 0;
        for (std::size_t v = 1; v < dist.size(); ++v)
            if (dist[v] > dist[best]) best = v;  // ties keep the lowest index
        return static_cast<TokenId>(best);
    }
    if (opts.temperature <= 0.0) throw ConfigError("sample: temperature must be positive");
    std::vector<double> scaled(dist.size());
    double total = 0.0;
    for (std::size_t v = 0; v < dist.size(); ++v) {
        scaled[v] = dist[v] > 0.0 ? std::pow(dist[v], 1.0 / opts.temperature) : 0.0;
        total += scaled[v];
    }
    double u = rng.uniform() * total;
    double acc = 0.0;
    for (std::size_t v = 0; v < scaled.size(); ++v) {
        acc += scaled[v];
        if (u < acc) return static_cast<TokenId>(v);
    }
    return static_cast<TokenId>(scaled.size() - 1);
}

}  // namespace

GridSpec grid_spec_for_block(const MrvqModule& m, std::size_t block_1based) {
    if (block_1based < 1 || block_1based > m.block_count())
        throw ConfigError("grid_spec_for_block: block out of range");
    const auto& cfg = m.block(block_1based - 1).config;
    GridSpec spec;
    spec.rows = cfg.degenerate() ? cfg.alpha : cfg.beta;
    spec.vocab = m.config().vocab;
    spec.frame_rate_hz = cfg.frame_rate_hz;
    spec.block = block_1based;
    return spec;
}

TokenGrid ar_generate(const Predictor& pred, const Conditioning& cond, std::size_t frames,
                      const GridSpec& spec, const SampleOptions& opts, StepLedger* ledger) {
    if (spec.rows == 0 || spec.vocab == 0) throw ConfigError("ar_generate: empty grid spec");
    if (pred.vocab() != spec.vocab) throw ConfigError("ar_generate: predictor vocabulary mismatch");
    std::size_t R = spec.rows;
    TokenId pad = static_cast<TokenId>(spec.vocab);
    std::size_t prompt_frames = 0;
    DelayedGrid prompt_delayed;
    if (cond.prompt_grid.frames() > 0) {
        if (cond.prompt_grid.row_count() != R || cond.prompt_grid.vocab != spec.vocab)
            throw ConfigError("ar_generate: prompt grid shape mismatch");
        prompt_delayed = apply_delay(cond.prompt_grid);
        prompt_frames = cond.prompt_grid.frames();
    }
    std::size_t total_frames = prompt_frames + frames;
    std::size_t cols = total_frames + R - 1;
    Rng rng(opts.seed);
    std::vector<std::vector<TokenId>> columns;
    columns.reserve(cols);
    std::vector<TokenId> fused;

    for (std::size_t t = 0; t < cols; ++t) {
        // Fused context rebuilt per step: conditioning symbols, then every
        // delayed column emitted so far, the way a sequence model reads it.
        fused.clear();
        fused.reserve(cond.symbols.size() + t * R);
        fused.insert(fused.end(), cond.symbols.begin(), cond.symbols.end());
        for (const auto& col : columns) fused.insert(fused.end(), col.begin(), col.end());

        std::vector<TokenId> col(R, pad);
        bool sampled_any = false;
        for (std::size_t r = 0; r < R; ++r) {
            if (t < r) continue;                    // leading margin
            std::size_t pos = t - r;                // frame this cell belongs to
            if (pos >= total_frames) continue;      // trailing margin
            if (pos < prompt_frames) {
                col[r] = prompt_delayed.rows[r][t];  // teacher-forced prompt cell
                continue;
            }
            PredictorQuery q;
            q.cond = &cond;
            q.fused_context = &fused;
            q.columns = &columns;
            q.layer_id = static_cast<int>(r);
            q.position = t;
            auto dist = pred.next_distribution(q);
            check_distribution(dist, spec.vocab);
            if (ledger != nullptr) ++ledger->predictor_calls;
            TokenId id = sample_from(dist, opts, rng);
            if (id >= spec.vocab) throw DataError("ar_generate: predictor emitted an invalid id");
            col[r] = id;
            sampled_any = true;
        }
        if (ledger != nullptr) {
            if (t >= prompt_frames && t < total_frames)
                ++ledger->ar_steps;  // this column opens a new generated frame
            else if (sampled_any || t >= total_frames)
                ++ledger->flush_steps;
        }
        columns.push_back(std::move(col));
    }

    // Assemble the generated region (prompt frames excluded).
    TokenGrid out;
    out.frame_rate_hz = spec.frame_rate_hz;
    out.block = spec.block;
    out.vocab = spec.vocab;
    out.rows.assign(R, TokenRow{std::vector<TokenId>(frames), spec.frame_rate_hz});
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t pos = prompt_frames; pos < total_frames; ++pos)
            out.rows[r].ids[pos - prompt_frames] = columns[pos + r][r];
    return out;
}

std::size_t layer_id(std::size_t k_next, std::size_t l, std::span<const std::size_t> alphas) {
    if (k_next < 2 || k_next > alphas.size())
        throw ConfigError("layer_id: refinement starts at block 2");
    if (l < 1 || l > alphas[k_next - 1]) throw ConfigError("layer_id: layer out of range");
    std::size_t sum = 0;
    for (std::size_t k = 0; k + 1 < k_next; ++k) sum += alphas[k];
    return sum + l;
}

NarStepResult nar_step(const MrvqModule& m, const Predictor& pred, const Conditioning& cond,
                       const TokenGrid& b_k, NarState& state, const SampleOptions& opts,
                       StepLedger* ledger, const FeatureMap* prompt_feature) {
    std::size_t K = m.block_count();
    std::size_t k = b_k.block;
    if (k < 1 || k >= K) throw ConfigError("nar_step: refinement needs a block below the terminal one");
    if (pred.vocab() != m.config().vocab) throw ConfigError("nar_step: predictor vocabulary mismatch");
    const LrvqBlock& cur = m.block(k - 1);
    const LrvqBlock& next = m.block(k);
    if (cur.config.degenerate())
        throw ConfigError("nar_step: degenerate block has no sub-decoder to query");

    NarStepResult out;
    out.next_b.block = k + 1;
    out.next_b.frame_rate_hz = next.config.frame_rate_hz;
    out.next_b.vocab = m.config().vocab;
    std::size_t n_k = b_k.frames();
    if (n_k == 0) {
        std::size_t rows = next.config.degenerate() ? next.config.alpha : next.config.beta;
        out.next_b.rows.assign(rows, TokenRow{{}, next.config.frame_rate_hz});
        return out;  // empty propagates, the accumulator stays untouched
    }

    double s0 = m.config().base_rate_hz;
    std::size_t n0 = n_k * cur.config.stride;

    // Step 1: rebuild the current block's output through the frozen
    // sub-decoder and post-quantizer.
    FeatureMap b_tilde = cur.quant.decode(b_k.rows, n_k, cur.config.frame_rate_hz);
    FeatureMap up = transposed_apply(cur.sub_dec, b_tilde).truncated(n0);
    auto postq_fwd = cur.postq.encode(up);
    out.c_rows = postq_fwd.tokens;
    if (state.c_accum.dim() == 0) state.c_accum = FeatureMap(m.config().dim, n0, s0);
    state.c_accum.add(postq_fwd.h);

    // Step 2: predict the next block's pre-quantizer rows layer by layer,
    // maintaining the accumulated feature.
    std::vector<std::size_t> alphas;
    for (std::size_t i = 0; i < K; ++i) alphas.push_back(m.block(i).config.alpha);
    FeatureMap h_bar = state.c_accum;
    FeatureMap a_tilde(m.config().dim, n0, s0);
    std::size_t alpha_next = next.config.alpha;
    for (std::size_t l = 1; l <= alpha_next; ++l) {
        std::size_t global = layer_id(k + 1, l, alphas);
        TokenRow row;
        row.frame_rate_hz = s0;
        row.ids.resize(n0);
        Rng rng(opts.seed + global);
        for (std::size_t pos = 0; pos < n0; ++pos) {
            std::vector<TokenId> site;
            for (const auto& c_row : out.c_rows) site.push_back(c_row.ids[pos]);
            for (std::size_t lp = 0; lp + 1 < l; ++lp) site.push_back(out.a_rows[lp].ids[pos]);
            PredictorQuery q;
            q.cond = &cond;
            q.site_tokens = &site;
            q.accumulated = &h_bar;
            q.prompt_feature = prompt_feature;
            q.layer_id = static_cast<int>(global);
            q.position = pos;
            auto dist = pred.next_distribution(q);
            check_distribution(dist, m.config().vocab);
            if (ledger != nullptr) ++ledger->predictor_calls;
            TokenId id = sample_from(dist, opts, rng);
            if (id >= m.config().vocab) throw DataError("nar_step: predictor emitted an invalid id");
            row.ids[pos] = id;
        }
        FeatureMap embed = next.preq.layer(l - 1).dequantize(row);
        h_bar.add(embed);
        a_tilde.add(embed);
        out.a_rows.push_back(std::move(row));
    }

    // Step 3: re-encode through the frozen sub-encoder and main quantizer.
    if (next.config.degenerate()) {
        out.next_b.rows = out.a_rows;  // terminal block transmits its a rows
        state.c_accum.add(a_tilde);    // its block output is the preq reconstruction
    } else {
        FeatureMap enc = strided_apply(next.sub_enc, a_tilde);
        out.next_b.rows = next.quant.encode(enc).tokens;
    }
    return out;
}

GenResult nar_refine_all(const MrvqModule& m, const Predictor& pred, const Conditioning& cond,
                         const TokenGrid& b1, const SampleOptions& opts,
                         const FeatureMap* prompt_feature) {
    std::size_t K = m.block_count();
    GenResult res;
    res.codes.resize(K);
    res.codes[0].k = 1;
    res.codes[0].b = b1.rows;
    if (K == 1) {
        // Single degenerate block: the grid rows are its a rows; decode directly.
        res.codes[0].a = b1.rows;
        res.codes[0].c = b1.rows;
        res.h = m.decode_from_b({b1.rows});
        return res;
    }
    NarState state;
    TokenGrid grid = b1;
    for (std::size_t k = 1; k < K; ++k) {
        auto step = nar_step(m, pred, cond, grid, state, opts, &res.ledger, prompt_feature);
        res.codes[k - 1].c = std::move(step.c_rows);
        res.codes[k].k = k + 1;
        res.codes[k].a = std::move(step.a_rows);
        res.codes[k].b = step.next_b.rows;
        grid = std::move(step.next_b);
    }
    res.codes[K - 1].c = res.codes[K - 1].b;  // terminal aliases
    res.h = std::move(state.c_accum);
    if (res.h.dim() == 0) res.h = FeatureMap(m.config().dim, 0, m.config().base_rate_hz);
    return res;
}

}  // namespace mrq

// Hierarchical token generation harness: delay-pattern autoregressive
// generation of the first block's low frame-rate grid, and three-step
// non-autoregressive refinement b_k -> b_{k+1} through frozen quantizer
// sub-modules, with a pluggable predictor.
#pragma once

#include <cstdint>
#include <memory>
#include <unordered_map>

#include "mrq/mrvq.hpp"

namespace mrq {

struct TokenGrid {
    std::vector<TokenRow> rows;  // equal lengths
    double frame_rate_hz = 1.0;
    std::size_t block = 1;  // 1-based block index
    std::size_t vocab = 0;

    std::size_t row_count() const { return rows.size(); }
    std::size_t frames() const { return rows.empty() ? 0 : rows.front().ids.size(); }
    void validate() const;
};

// Row r shifted right by r frames; pad cells fill the triangular margins.
// The reserved pad id is the grid's vocab size.
struct DelayedGrid {
    std::vector<std::vector<TokenId>> rows;  // each length frames + R - 1
    TokenId pad_id = 0;
    double frame_rate_hz = 1.0;
    std::size_t block = 1;
    std::size_t vocab = 0;
    std::size_t frames = 0;  // original frame count

    std::size_t columns() const { return rows.empty() ? 0 : rows.front().size(); }
};

DelayedGrid apply_delay(const TokenGrid& g);
// Exact inverse; throws DataError if pads appear outside the margins or
// payload cells hold the pad id.
TokenGrid remove_delay(const DelayedGrid& dg);

struct Conditioning {
    std::vector<std::uint16_t> symbols;  // stand-in for a text prompt
    std::size_t alphabet = 0;
    TokenGrid prompt_grid;  // may be empty; prepended in the delayed domain
};

struct PredictorQuery {
    const Conditioning* cond = nullptr;
    // AR: fused flat context (symbols + delayed columns so far), rebuilt per
    // step the way a sequence model would consume it.
    const std::vector<TokenId>* fused_context = nullptr;
    const std::vector<std::vector<TokenId>>* columns = nullptr;  // AR: delayed columns emitted so far
    // NAR: per-position token context (previous block's c ids, then the a ids
    // of earlier layers at this position).
    const std::vector<TokenId>* site_tokens = nullptr;
    const FeatureMap* accumulated = nullptr;     // NAR: running feature h-bar
    const FeatureMap* prompt_feature = nullptr;  // NAR: prompt-side feature, may be null
    int layer_id = 0;         // AR: row index (0-based); NAR: global 1-based layer id
    std::size_t position = 0;
};

class Predictor {
public:
    virtual ~Predictor() = default;
    virtual std::size_t vocab() const = 0;
    // Distribution over vocab+1 ids (pad last), summing to 1.
    virtual std::vector<double> next_distribution(const PredictorQuery& q) const = 0;
};

// Add-one-smoothed bigram over token tuples. AR contexts key on the previous
// delayed column; NAR contexts key on the site tuple. Pad targets are not
// counted, so the pad id never dominates an in-range cell.
class CountPredictor : public Predictor {
public:
    explicit CountPredictor(std::size_t vocab) : vocab_(vocab) {}

    std::size_t vocab() const override { return vocab_; }

    void fit_ar(const TokenGrid& grid);
    // Observes the a-rows of blocks 2..K against the c-rows of the block below.
    void fit_nar(const std::vector<LrvqCodes>& codes, const MrvqConfig& cfg);

    std::vector<double> next_distribution(const PredictorQuery& q) const override;

private:
    using CountTable = std::unordered_map<std::string, std::vector<std::uint32_t>>;
    static std::string key_of(int layer_id, std::span<const TokenId> ctx);
    void bump(int layer_id, std::span<const TokenId> ctx, TokenId target);

    std::size_t vocab_;
    CountTable counts_;
};

// Replays recorded ground truth; the reference oracle for pipeline checks.
class OraclePredictor : public Predictor {
public:
    OraclePredictor(const std::vector<LrvqCodes>& truth, const MrvqConfig& cfg);

    std::size_t vocab() const override { return vocab_; }
    std::vector<double> next_distribution(const PredictorQuery& q) const override;

private:
    std::size_t vocab_;
    DelayedGrid ar_truth_;                          // block 1 b rows, delayed
    std::vector<std::vector<TokenId>> nar_rows_;    // global layer id - 1 -> a row
    std::size_t first_nar_layer_ = 0;               // alpha_1 + 1
};

enum class SampleMode { Greedy, Temperature };

struct SampleOptions {
    SampleMode mode = SampleMode::Greedy;
    double temperature = 1.0;
    std::uint64_t seed = 0;
};

struct StepLedger {
    std::size_t ar_steps = 0;        // columns that open a new generated frame
    std::size_t flush_steps = 0;     // trailing columns that only finish lower rows
    std::size_t predictor_calls = 0;
};

struct GridSpec {
    std::size_t rows = 1;
    std::size_t vocab = 0;
    double frame_rate_hz = 1.0;
    std::size_t block = 1;
};

GridSpec grid_spec_for_block(const MrvqModule& m, std::size_t block_1based);

// Frame-by-frame sampling over the delayed grid; one step emits one id per
// row. The prompt grid is teacher-forced in the delayed domain and excluded
// from the returned grid, which holds exactly `frames` generated frames.
TokenGrid ar_generate(const Predictor& pred, const Conditioning& cond, std::size_t frames,
                      const GridSpec& spec, const SampleOptions& opts = {},
                      StepLedger* ledger = nullptr);

// Global refinement layer index: layers of blocks 2..k_next stack after the
// first block's pre-quantizer depth.
std::size_t layer_id(std::size_t k_next, std::size_t l, std::span<const std::size_t> alphas);

struct NarState {
    FeatureMap c_accum;  // running sum of reconstructed block outputs at s0
};

struct NarStepResult {
    TokenGrid next_b;
    std::vector<TokenRow> c_rows;  // post-quantizer rows for block k
    std::vector<TokenRow> a_rows;  // predicted pre-quantizer rows for block k+1
};

// Three steps: rebuild c_k from b_k through the frozen sub-decoder and
// post-quantizer, predict the next block's pre-quantizer rows layer by layer
// against the accumulated feature, then re-encode through the frozen
// sub-encoder and main quantizer. All module state is read-only.
NarStepResult nar_step(const MrvqModule& m, const Predictor& pred, const Conditioning& cond,
                       const TokenGrid& b_k, NarState& state, const SampleOptions& opts = {},
                       StepLedger* ledger = nullptr, const FeatureMap* prompt_feature = nullptr);

struct GenResult {
    std::vector<LrvqCodes> codes;  // b rows everywhere; c rows per block; a rows for blocks >= 2
    FeatureMap h;
    StepLedger ledger;
};

// Chains nar_step over blocks 1..K-1 starting from an AR-generated first grid.
GenResult nar_refine_all(const MrvqModule& m, const Predictor& pred, const Conditioning& cond,
                         const TokenGrid& b1, const SampleOptions& opts = {},
                         const FeatureMap* prompt_feature = nullptr);

}  // namespace mrq

#include "mrq/metrics.hpp"

#include <cmath>

namespace mrq {

double bitrate_bps(const MrvqConfig& cfg) {
    cfg.validate();
    double bits = std::log2(static_cast<double>(cfg.vocab));
    double bps = 0.0;
    for (const auto& b : cfg.blocks) {
        if (b.degenerate())
            bps += static_cast<double>(b.alpha) * cfg.base_rate_hz * bits;
        else
            bps += static_cast<double>(b.beta) * b.frame_rate_hz * bits;
    }
    return bps;
}

double bitrate_bps_rvq(std::size_t layers, double frame_rate_hz, std::size_t vocab) {
    return static_cast<double>(layers) * frame_rate_hz * std::log2(static_cast<double>(vocab));
}

TokenBudget token_budget(double seconds, const MrvqConfig& cfg) {
    if (seconds <= 0.0) throw ConfigError("token_budget: duration must be positive");
    cfg.validate();
    TokenBudget tb;
    for (const auto& b : cfg.blocks) {
        std::size_t frames = static_cast<std::size_t>(std::llround(seconds * b.frame_rate_hz));
        std::size_t rows = b.degenerate() ? b.alpha : b.beta;
        tb.frames_per_block.push_back(frames);
        tb.rows_per_block.push_back(rows);
        tb.tokens_per_block.push_back(frames * rows);
        tb.total_tokens += frames * rows;
    }
    tb.ar_frames = tb.frames_per_block.front();
    return tb;
}

double codebook_perplexity(std::span<const double> usage_histogram) {
    if (usage_histogram.empty()) throw ConfigError("codebook_perplexity: empty histogram");
    double total = 0.0;
    for (double c : usage_histogram) {
        if (c < 0.0) throw ConfigError("codebook_perplexity: negative count");
        total += c;
    }
    if (total <= 0.0) throw ConfigError("codebook_perplexity: all-zero histogram");
    double entropy = 0.0;
    for (double c : usage_histogram) {
        if (c <= 0.0) continue;
        double p = c / total;
        entropy -= p * std::log(p);
    }
    return std::exp(entropy);
}

}  // namespace mrq

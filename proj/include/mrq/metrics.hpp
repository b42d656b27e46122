// Bitrate and token accounting, codebook usage diagnostics.
#pragma once

#include <span>

#include "mrq/mrvq.hpp"

namespace mrq {

// Transmitted bits per second: beta rows at their block rates plus the
// terminal block's alpha rows at the base rate, log2(V) bits per id.
double bitrate_bps(const MrvqConfig& cfg);

// Plain residual stack: L rows at one rate.
double bitrate_bps_rvq(std::size_t layers, double frame_rate_hz, std::size_t vocab);

struct TokenBudget {
    std::vector<std::size_t> frames_per_block;  // row length per block
    std::vector<std::size_t> rows_per_block;    // transmitted rows per block
    std::vector<std::size_t> tokens_per_block;  // rows * frames
    std::size_t ar_frames = 0;                  // first-block sequence budget
    std::size_t total_tokens = 0;
};
TokenBudget token_budget(double seconds, const MrvqConfig& cfg);

// exp(entropy) of an empirical code-usage distribution; 1 on collapse,
// vocabulary size on uniform usage.
double codebook_perplexity(std::span<const double> usage_histogram);

}  // namespace mrq

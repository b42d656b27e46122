// Minimal numeric kernel: windowed strided linear maps (downsampling) with
// transposed application (upsampling), MAE loss, SGD, and a central-difference
// gradient checker. All gradients are analytic and hand-derived.
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "mrq/feature_map.hpp"
#include "mrq/rng.hpp"

namespace mrq {

// Linear map applied over a sliding window of `window_len` input frames every
// `stride` frames. Forward downsamples by `stride`; transposed application
// upsamples by the same factor. Out-of-range window taps read zeros.
struct StridedLinearMap {
    std::size_t d_in = 0;
    std::size_t d_out = 0;
    std::size_t window_len = 0;
    std::size_t stride = 0;
    // weights[(w*d_out + o)*d_in + i]: tap w, output channel o, input channel i.
    std::vector<double> weights;
    std::vector<double> bias;  // length d_out, used by the forward direction only
    std::vector<double> weight_grad;
    std::vector<double> bias_grad;

    StridedLinearMap() = default;

    StridedLinearMap(std::size_t d_in_, std::size_t d_out_, std::size_t window_len_, std::size_t stride_)
        : d_in(d_in_),
          d_out(d_out_),
          window_len(window_len_),
          stride(stride_),
          weights(window_len_ * d_out_ * d_in_, 0.0),
          bias(d_out_, 0.0),
          weight_grad(weights.size(), 0.0),
          bias_grad(d_out_, 0.0) {
        if (d_in == 0 || d_out == 0 || window_len == 0 || stride == 0)
            throw ConfigError("StridedLinearMap: all dimensions must be positive");
    }

    double& w(std::size_t tap, std::size_t o, std::size_t i) {
        return weights[(tap * d_out + o) * d_in + i];
    }
    double w(std::size_t tap, std::size_t o, std::size_t i) const {
        return weights[(tap * d_out + o) * d_in + i];
    }

    // Identity map: window 1, stride 1, square weights.
    static StridedLinearMap identity(std::size_t d) {
        StridedLinearMap m(d, d, 1, 1);
        for (std::size_t i = 0; i < d; ++i) m.w(0, i, i) = 1.0;
        return m;
    }

    void init_random(Rng& rng, double scale_mul = 1.0);
    void zero_grads();
    std::size_t param_count() const { return weights.size() + bias.size(); }
};

// out frames = ceil(n_in / stride); out rate = in rate / stride.
FeatureMap strided_apply(const StridedLinearMap& m, const FeatureMap& x);

// Accumulates weight/bias grads in `m`, returns grad w.r.t. the input.
FeatureMap strided_apply_backward(StridedLinearMap& m, const FeatureMap& x, const FeatureMap& grad_out);

// out frames = n_in * stride; out rate = in rate * stride; output dim = d_in.
// Pure weight transpose: the forward-direction bias does not participate.
FeatureMap transposed_apply(const StridedLinearMap& m, const FeatureMap& y);

FeatureMap transposed_apply_backward(StridedLinearMap& m, const FeatureMap& y, const FeatureMap& grad_out);

// Mean absolute error over all d*n entries. Subgradient 0 at exact ties.
double mae_loss(const FeatureMap& a, const FeatureMap& b);

// Adds weight * d(mae)/da into grad_a and returns the loss value.
double mae_loss_backward(const FeatureMap& a, const FeatureMap& b, double weight, FeatureMap& grad_a);

// p -= lr * g, then clears g. Throws DivergenceError on non-finite gradients.
void sgd_step(std::span<double> params, std::span<double> grads, double lr);

struct TrainState {
    double learning_rate = 1e-2;
    std::size_t step_count = 0;
    std::uint64_t rng_seed = 0;
};

// Cosine decay from lr0 down to lr0 * floor_frac over total_steps.
double cosine_lr(double lr0, std::size_t step, std::size_t total_steps, double floor_frac = 0.05);

// Central-difference check of an analytic gradient. Returns
// max over checked parameters of |analytic - central| / (|central| + eps).
// When max_samples < params.size(), checks a random subset (requires rng).
double finite_diff_check(const std::function<double()>& value_fn, std::span<double> params,
                         std::span<const double> analytic, double eps,
                         std::size_t max_samples = SIZE_MAX, Rng* rng = nullptr);

}  // namespace mrq

#include "mrq/numerics.hpp"

#include <algorithm>
#include <cmath>

namespace mrq {

void StridedLinearMap::init_random(Rng& rng, double scale_mul) {
    double scale = scale_mul / std::sqrt(static_cast<double>(window_len * d_in));
    for (double& v : weights) v = rng.normal(0.0, scale);
    std::fill(bias.begin(), bias.end(), 0.0);
    zero_grads();
}

void StridedLinearMap::zero_grads() {
    std::fill(weight_grad.begin(), weight_grad.end(), 0.0);
    std::fill(bias_grad.begin(), bias_grad.end(), 0.0);
}

FeatureMap strided_apply(const StridedLinearMap& m, const FeatureMap& x) {
    if (x.dim() != m.d_in) throw ConfigError("strided_apply: input dim != d_in");
    if (x.frames() == 0) throw EmptyInputError("strided_apply: zero-length input");
    std::size_t n_in = x.frames();
    std::size_t n_out = (n_in + m.stride - 1) / m.stride;
    FeatureMap out(m.d_out, n_out, x.frame_rate_hz() / static_cast<double>(m.stride));
    for (std::size_t j = 0; j < n_out; ++j) {
        for (std::size_t o = 0; o < m.d_out; ++o) out.at(o, j) = m.bias[o];
        for (std::size_t tap = 0; tap < m.window_len; ++tap) {
            std::size_t t = j * m.stride + tap;
            if (t >= n_in) break;  // zero padding beyond the input
            auto xf = x.frame(t);
            const double* wrow = &m.weights[tap * m.d_out * m.d_in];
            for (std::size_t o = 0; o < m.d_out; ++o) {
                double acc = 0.0;
                const double* wr = wrow + o * m.d_in;
                for (std::size_t i = 0; i < m.d_in; ++i) acc += wr[i] * xf[i];
                out.at(o, j) += acc;
            }
        }
    }
    return out;
}

FeatureMap strided_apply_backward(StridedLinearMap& m, const FeatureMap& x, const FeatureMap& grad_out) {
    std::size_t n_in = x.frames();
    std::size_t n_out = (n_in + m.stride - 1) / m.stride;
    if (grad_out.dim() != m.d_out || grad_out.frames() != n_out)
        throw ConfigError("strided_apply_backward: grad shape mismatch");
    FeatureMap grad_in(m.d_in, n_in, x.frame_rate_hz());
    for (std::size_t j = 0; j < n_out; ++j) {
        auto gf = grad_out.frame(j);
        for (std::size_t o = 0; o < m.d_out; ++o) m.bias_grad[o] += gf[o];
        for (std::size_t tap = 0; tap < m.window_len; ++tap) {
            std::size_t t = j * m.stride + tap;
            if (t >= n_in) break;
            auto xf = x.frame(t);
            auto gi = grad_in.frame(t);
            double* wg = &m.weight_grad[tap * m.d_out * m.d_in];
            const double* wr = &m.weights[tap * m.d_out * m.d_in];
            for (std::size_t o = 0; o < m.d_out; ++o) {
                double g = gf[o];
                double* wgo = wg + o * m.d_in;
                const double* wro = wr + o * m.d_in;
                for (std::size_t i = 0; i < m.d_in; ++i) {
                    wgo[i] += g * xf[i];
                    gi[i] += g * wro[i];
                }
            }
        }
    }
    return grad_in;
}

FeatureMap transposed_apply(const StridedLinearMap& m, const FeatureMap& y) {
    if (y.dim() != m.d_out) throw ConfigError("transposed_apply: input dim != d_out");
    if (y.frames() == 0) throw EmptyInputError("transposed_apply: zero-length input");
    std::size_t n_in = y.frames();
    std::size_t n_out = n_in * m.stride;
    FeatureMap out(m.d_in, n_out, y.frame_rate_hz() * static_cast<double>(m.stride));
    for (std::size_t j = 0; j < n_in; ++j) {
        auto yf = y.frame(j);
        for (std::size_t tap = 0; tap < m.window_len; ++tap) {
            std::size_t t = j * m.stride + tap;
            if (t >= n_out) break;
            auto of = out.frame(t);
            const double* wr = &m.weights[tap * m.d_out * m.d_in];
            for (std::size_t o = 0; o < m.d_out; ++o) {
                double v = yf[o];
                const double* wro = wr + o * m.d_in;
                for (std::size_t i = 0; i < m.d_in; ++i) of[i] += v * wro[i];
            }
        }
    }
    return out;
}

FeatureMap transposed_apply_backward(StridedLinearMap& m, const FeatureMap& y, const FeatureMap& grad_out) {
    std::size_t n_in = y.frames();
    std::size_t n_out = n_in * m.stride;
    if (grad_out.dim() != m.d_in || grad_out.frames() != n_out)
        throw ConfigError("transposed_apply_backward: grad shape mismatch");
    FeatureMap grad_in(m.d_out, n_in, y.frame_rate_hz());
    for (std::size_t j = 0; j < n_in; ++j) {
        auto yf = y.frame(j);
        auto gi = grad_in.frame(j);
        for (std::size_t tap = 0; tap < m.window_len; ++tap) {
            std::size_t t = j * m.stride + tap;
            if (t >= n_out) break;
            auto gf = grad_out.frame(t);
            double* wg = &m.weight_grad[tap * m.d_out * m.d_in];
            const double* wr = &m.weights[tap * m.d_out * m.d_in];
            for (std::size_t o = 0; o < m.d_out; ++o) {
                double acc = 0.0;
                double* wgo = wg + o * m.d_in;
                const double* wro = wr + o * m.d_in;
                double v = yf[o];
                for (std::size_t i = 0; i < m.d_in; ++i) {
                    wgo[i] += v * gf[i];
                    acc += wro[i] * gf[i];
                }
                gi[o] += acc;
            }
        }
    }
    return grad_in;
}

double mae_loss(const FeatureMap& a, const FeatureMap& b) {
    a.require_same_shape(b, "mae_loss");
    if (a.frame_rate_hz() != b.frame_rate_hz()) throw ConfigError("mae_loss: frame rate mismatch");
    if (a.size() == 0) throw EmptyInputError("mae_loss: zero-length input");
    double s = 0.0;
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) s += std::abs(av[i] - bv[i]);
    return s / static_cast<double>(av.size());
}

double mae_loss_backward(const FeatureMap& a, const FeatureMap& b, double weight, FeatureMap& grad_a) {
    a.require_same_shape(b, "mae_loss_backward");
    a.require_same_shape(grad_a, "mae_loss_backward(grad)");
    double s = 0.0;
    auto av = a.values();
    auto bv = b.values();
    auto gv = grad_a.values();
    double inv = 1.0 / static_cast<double>(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) {
        double diff = av[i] - bv[i];
        s += std::abs(diff);
        if (diff > 0.0)
            gv[i] += weight * inv;
        else if (diff < 0.0)
            gv[i] -= weight * inv;
        // exact tie: subgradient 0
    }
    return s * inv;
}

void sgd_step(std::span<double> params, std::span<double> grads, double lr) {
    if (params.size() != grads.size()) throw ConfigError("sgd_step: shape mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!std::isfinite(grads[i])) throw DivergenceError("sgd_step: non-finite gradient");
        params[i] -= lr * grads[i];
        grads[i] = 0.0;
    }
}

double cosine_lr(double lr0, std::size_t step, std::size_t total_steps, double floor_frac) {
    if (total_steps == 0) return lr0;
    double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
    double cosine = 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
    return lr0 * (floor_frac + (1.0 - floor_frac) * cosine);
}

double finite_diff_check(const std::function<double()>& value_fn, std::span<double> params,
                         std::span<const double> analytic, double eps, std::size_t max_samples,
                         Rng* rng) {
    if (params.size() != analytic.size()) throw ConfigError("finite_diff_check: shape mismatch");
    std::vector<std::size_t> indices;
    if (max_samples >= params.size()) {
        indices.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) indices[i] = i;
    } else {
        if (rng == nullptr) throw ConfigError("finite_diff_check: sampling requires an rng");
        for (std::size_t s = 0; s < max_samples; ++s)
            indices.push_back(static_cast<std::size_t>(rng->uniform_int(params.size())));
    }
    double worst = 0.0;
    for (std::size_t idx : indices) {
        double saved = params[idx];
        params[idx] = saved + eps;
        double f_plus = value_fn();
        params[idx] = saved - eps;
        double f_minus = value_fn();
        params[idx] = saved;
        double central = (f_plus - f_minus) / (2.0 * eps);
        double rel = std::abs(analytic[idx] - central) / (std::abs(central) + eps);
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace mrq

// FeatureMap: a d x n real matrix (latent dim x frames) carrying its frame
// rate in Hz. The currency of every encode/decode path.
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "mrq/common.hpp"

namespace mrq {

class FeatureMap {
public:
    FeatureMap() = default;

    FeatureMap(std::size_t dim, std::size_t frames, double frame_rate_hz)
        : dim_(dim), frames_(frames), rate_(frame_rate_hz), data_(dim * frames, 0.0) {
        if (dim == 0) throw ConfigError("FeatureMap: dim must be positive");
        if (frame_rate_hz <= 0.0) throw ConfigError("FeatureMap: frame rate must be positive");
    }

    std::size_t dim() const { return dim_; }
    std::size_t frames() const { return frames_; }
    double frame_rate_hz() const { return rate_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return frames_ == 0; }

    // Storage is frame-major: frame t occupies data()[t*d .. t*d+d).
    double& at(std::size_t i, std::size_t t) { return data_[t * dim_ + i]; }
    double at(std::size_t i, std::size_t t) const { return data_[t * dim_ + i]; }

    std::span<double> frame(std::size_t t) { return {data_.data() + t * dim_, dim_}; }
    std::span<const double> frame(std::size_t t) const { return {data_.data() + t * dim_, dim_}; }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    void fill(double v) { data_.assign(data_.size(), v); }

    void add(const FeatureMap& other) {
        require_same_shape(other, "FeatureMap::add");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    }

    void sub(const FeatureMap& other) {
        require_same_shape(other, "FeatureMap::sub");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    }

    void scale(double a) {
        for (double& v : data_) v *= a;
    }

    void accumulate(const FeatureMap& other, double weight) {
        require_same_shape(other, "FeatureMap::accumulate");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += weight * other.data_[i];
    }

    double squared_norm() const {
        double s = 0.0;
        for (double v : data_) s += v * v;
        return s;
    }

    double max_abs() const {
        double m = 0.0;
        for (double v : data_) m = std::max(m, std::abs(v));
        return m;
    }

    bool all_finite() const {
        for (double v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    // First `frames` frames, same rate.
    FeatureMap truncated(std::size_t frames) const {
        if (frames > frames_) throw ConfigError("FeatureMap::truncated: cannot extend");
        FeatureMap out(dim_, frames, rate_);
        std::copy(data_.begin(), data_.begin() + static_cast<std::ptrdiff_t>(frames * dim_),
                  out.data_.begin());
        return out;
    }

    void require_same_shape(const FeatureMap& other, const char* where) const {
        if (dim_ != other.dim_ || frames_ != other.frames_)
            throw ConfigError(std::string(where) + ": shape mismatch");
    }

private:
    std::size_t dim_ = 0;
    std::size_t frames_ = 0;
    double rate_ = 1.0;
    std::vector<double> data_;
};

// Frame-wise concatenation; all parts must share dim and rate.
inline FeatureMap concat_frames(const std::vector<FeatureMap>& parts) {
    if (parts.empty()) throw EmptyInputError("concat_frames: no parts");
    std::size_t total = 0;
    for (const auto& p : parts) total += p.frames();
    FeatureMap out(parts.front().dim(), total, parts.front().frame_rate_hz());
    std::size_t at = 0;
    for (const auto& p : parts) {
        if (p.dim() != out.dim()) throw ConfigError("concat_frames: dim mismatch");
        for (std::size_t t = 0; t < p.frames(); ++t, ++at) {
            for (std::size_t i = 0; i < p.dim(); ++i) out.at(i, at) = p.at(i, t);
        }
    }
    return out;
}

}  // namespace mrq

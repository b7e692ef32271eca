// Copyright 2026 the tdse-toolkit authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tdse/errors.hpp"

namespace tdse {

enum class FieldKind { sinusoid, piecewise_constant, tabulated };
enum class Interpolation { linear, nearest };

/// Scalar control amplitude on [0, T] with declared bounds. Construction
/// verifies the bounds by dense sampling (4096 points), which also covers
/// tabulated fields where no closed form is available.
class ControlField {
public:
    static ControlField sinusoid(double eps_max, double omega, double horizon) {
        if (!(eps_max > 0.0)) throw ConfigError("ControlField::sinusoid: eps_max must be positive");
        if (!(omega > 0.0)) throw ConfigError("ControlField::sinusoid: omega must be positive");
        ControlField f(FieldKind::sinusoid, horizon);
        f.amp_ = eps_max;
        f.omega_ = omega;
        const auto [lo, hi] = sine_range(eps_max, omega, horizon);
        f.lo_ = lo;
        f.hi_ = hi;
        f.check_hypothesis();
        return f;
    }

    /// Left-continuous step function: value v[i] on [t[i], t[i+1]), v.back()
    /// from t.back() to the horizon.
    static ControlField piecewise(std::vector<double> times, std::vector<double> values,
                                  double horizon) {
        ControlField f(FieldKind::piecewise_constant, horizon);
        f.init_samples(std::move(times), std::move(values));
        if (f.times_.front() > 0.0)
            throw ConfigError("ControlField::piecewise: first plateau must start at t <= 0");
        f.lo_ = *std::min_element(f.values_.begin(), f.values_.end());
        f.hi_ = *std::max_element(f.values_.begin(), f.values_.end());
        f.check_hypothesis();
        return f;
    }

    static ControlField tabulated(std::vector<double> times, std::vector<double> values,
                                  Interpolation interp, double horizon) {
        ControlField f(FieldKind::tabulated, horizon);
        f.interp_ = interp;
        f.init_samples(std::move(times), std::move(values));
        if (f.times_.front() > 0.0 || f.times_.back() < horizon)
            throw ConfigError("ControlField::tabulated: samples must cover [0, T]");
        f.lo_ = *std::min_element(f.values_.begin(), f.values_.end());
        f.hi_ = *std::max_element(f.values_.begin(), f.values_.end());
        f.check_hypothesis();
        return f;
    }

    double evaluate(double t) const {
        const double slack = 1e-9 * std::max(horizon_, 1.0);
        if (t < -slack || t > horizon_ + slack) {
            std::ostringstream os;
            os << "ControlField: evaluation at t=" << t << " outside [0, " << horizon_ << "]";
            throw HorizonError(os.str());
        }
        t = std::clamp(t, 0.0, horizon_);
        switch (kind_) {
            case FieldKind::sinusoid:
                return amp_ * std::sin(omega_ * t);
            case FieldKind::piecewise_constant: {
                auto it = std::upper_bound(times_.begin(), times_.end(), t);
                const auto idx = it == times_.begin() ? 0 : (it - times_.begin() - 1);
                return values_[static_cast<size_t>(idx)];
            }
            case FieldKind::tabulated:
                return interpolate(t);
        }
        throw Error("ControlField: unreachable");
    }

    FieldKind kind() const { return kind_; }
    double horizon() const { return horizon_; }
    double lower_bound() const { return lo_; }
    double upper_bound() const { return hi_; }

    std::string description() const {
        std::ostringstream os;
        switch (kind_) {
            case FieldKind::sinusoid:
                os << "sinusoid(eps_max=" << amp_ << ",omega=" << omega_ << ")";
                break;
            case FieldKind::piecewise_constant:
                os << "piecewise(" << times_.size() << " plateaus)";
                break;
            case FieldKind::tabulated:
                os << "tabulated(" << times_.size() << " samples,"
                   << (interp_ == Interpolation::linear ? "linear" : "nearest") << ")";
                break;
        }
        os << "[" << lo_ << "," << hi_ << "]x[0," << horizon_ << "]";
        return os.str();
    }

private:
    ControlField(FieldKind kind, double horizon) : kind_(kind), horizon_(horizon) {
        if (!(horizon > 0.0)) throw ConfigError("ControlField: horizon must be positive");
    }

    void init_samples(std::vector<double> times, std::vector<double> values) {
        if (times.empty() || times.size() != values.size())
            throw ConfigError("ControlField: need equally many sample times and values");
        if (!std::is_sorted(times.begin(), times.end(), std::less_equal<>()))
            throw ConfigError("ControlField: sample times must be strictly increasing");
        times_ = std::move(times);
        values_ = std::move(values);
    }

    double interpolate(double t) const {
        auto it = std::lower_bound(times_.begin(), times_.end(), t);
        if (it == times_.end()) return values_.back();
        auto hi = static_cast<size_t>(it - times_.begin());
        if (times_[hi] == t || hi == 0) return values_[hi];
        const size_t lo = hi - 1;
        if (interp_ == Interpolation::nearest)
            return (t - times_[lo] <= times_[hi] - t) ? values_[lo] : values_[hi];
        const double w = (t - times_[lo]) / (times_[hi] - times_[lo]);
        return (1.0 - w) * values_[lo] + w * values_[hi];
    }

    static std::pair<double, double> sine_range(double amp, double omega, double horizon) {
        const double theta = omega * horizon;
        double hi = theta >= 0.5 * M_PI ? 1.0 : std::sin(theta);
        double lo = 0.0;
        if (theta > M_PI) lo = theta >= 1.5 * M_PI ? -1.0 : std::sin(theta);
        return {amp * lo, amp * hi};
    }

    void check_hypothesis() const {
        const double slack = 1e-12 * std::max({1.0, std::abs(lo_), std::abs(hi_)});
        constexpr int kSamples = 4096;
        for (int i = 0; i <= kSamples; ++i) {
            const double t = horizon_ * i / kSamples;
            const double v = evaluate(t);
            if (v < lo_ - slack || v > hi_ + slack) {
                std::ostringstream os;
                os << "ControlField: value " << v << " at t=" << t << " outside declared bounds ["
                   << lo_ << ", " << hi_ << "]";
                throw HypothesisViolation(os.str());
            }
        }
    }

    FieldKind kind_;
    double horizon_;
    double lo_ = 0.0, hi_ = 0.0;
    double amp_ = 0.0, omega_ = 0.0;
    Interpolation interp_ = Interpolation::linear;
    std::vector<double> times_;
    std::vector<double> values_;
};

/// Uniform quantization grid values[l] = eps_min + l * d_eps, l = 0..m.
/// The top node is pinned to eps_max so both bounds are grid values exactly.
struct FieldGrid {
    double eps_min = 0.0;
    double eps_max = 0.0;
    int m = 0;
    double d_eps = 0.0;
    std::vector<double> values;

    /// Degenerate one-entry grid (m = 0); useful for constant fields.
    static FieldGrid single(double eps) { return FieldGrid{eps, eps, 0, 0.0, {eps}}; }
};

inline FieldGrid make_grid(double eps_min, double eps_max, int m) {
    if (m < 1) throw ConfigError("make_grid: m must be >= 1");
    if (!(eps_max > eps_min)) throw ConfigError("make_grid: eps_max must exceed eps_min");
    FieldGrid g;
    g.eps_min = eps_min;
    g.eps_max = eps_max;
    g.m = m;
    g.d_eps = (eps_max - eps_min) / m;
    g.values.resize(static_cast<size_t>(m) + 1);
    for (int l = 0; l <= m; ++l) g.values[static_cast<size_t>(l)] = eps_min + l * g.d_eps;
    g.values.back() = eps_max;
    for (int l = 0; l < m; ++l)
        if (!(g.values[static_cast<size_t>(l)] < g.values[static_cast<size_t>(l) + 1]))
            throw ConfigError("make_grid: grid not strictly increasing (m too large for span)");
    return g;
}

/// argmin_l |v - values[l]|, ties broken toward the lower index. Values may
/// exceed the bounds by up to d_eps/2 (midpoint rounding); anything further
/// is a bounds violation.
inline int nearest_index(const FieldGrid& grid, double v) {
    if (grid.m == 0) return 0;
    const double slack = 1e-12 * std::max({1.0, std::abs(grid.eps_min), std::abs(grid.eps_max)});
    if (v < grid.eps_min - 0.5 * grid.d_eps - slack || v > grid.eps_max + 0.5 * grid.d_eps + slack) {
        std::ostringstream os;
        os << "nearest_index: value " << v << " outside [" << grid.eps_min << ", " << grid.eps_max
           << "] by more than d_eps/2";
        throw HypothesisViolation(os.str());
    }
    v = std::clamp(v, grid.eps_min, grid.eps_max);
    int lo = static_cast<int>(std::floor((v - grid.eps_min) / grid.d_eps));
    lo = std::clamp(lo, 0, grid.m - 1);
    const double d_lo = v - grid.values[static_cast<size_t>(lo)];
    const double d_hi = grid.values[static_cast<size_t>(lo) + 1] - v;
    return d_lo <= d_hi ? lo : lo + 1;
}

/// Convex split of a field value across its bracketing grid cell:
/// alpha * values[ell] + beta * values[ell+1] == v with alpha + beta == 1.
struct ConvexWeights {
    int ell = 0;
    double alpha = 1.0;
    double beta = 0.0;
};

inline ConvexWeights bracket_weights(const FieldGrid& grid, double v) {
    if (grid.m == 0) throw ConfigError("bracket_weights: degenerate grid has no cell");
    const double slack = 1e-12 * std::max({1.0, std::abs(grid.eps_min), std::abs(grid.eps_max)});
    if (v < grid.eps_min - slack || v > grid.eps_max + slack) {
        std::ostringstream os;
        os << "bracket_weights: value " << v << " outside [" << grid.eps_min << ", "
           << grid.eps_max << "]";
        throw HypothesisViolation(os.str());
    }
    v = std::clamp(v, grid.eps_min, grid.eps_max);
    int ell = static_cast<int>(std::floor((v - grid.eps_min) / grid.d_eps));
    ell = std::clamp(ell, 0, grid.m - 1);
    double beta = (v - grid.values[static_cast<size_t>(ell)]) /
                  (grid.values[static_cast<size_t>(ell) + 1] - grid.values[static_cast<size_t>(ell)]);
    beta = std::clamp(beta, 0.0, 1.0);
    return ConvexWeights{ell, 1.0 - beta, beta};
}

/// Finite-difference estimates of the field's first and second derivative
/// at the step midpoint t_{j+1/2}, built only from field values.
struct DerivativeStencil {
    double alpha = 0.0;  // d eps / dt estimate
    double beta = 0.0;   // d^2 eps / dt^2 estimate
};

/// Divisor of the three-point second-difference. The half-step spacing of
/// the stencil (t_j, t_{j+1/2}, t_{j+1}) makes (dt/2)^2 the consistent
/// estimator of the second derivative; the dt^2 variant (a quarter of the
/// consistent estimate) is kept selectable for comparison runs.
enum class BetaDivisor { half_step, full_step };

inline DerivativeStencil derivative_stencil(const ControlField& field, long long j, double dt,
                                            BetaDivisor divisor = BetaDivisor::half_step) {
    if (j < 0) throw ConfigError("derivative_stencil: negative step index");
    const double t0 = j * dt;
    const double t1 = (j + 1) * dt;
    const double e0 = field.evaluate(t0);
    const double e1 = field.evaluate(t1);
    const double emid = field.evaluate((j + 0.5) * dt);
    DerivativeStencil s;
    s.alpha = (e1 - e0) / dt;
    const double h = (divisor == BetaDivisor::half_step) ? 0.5 * dt : dt;
    s.beta = (e1 - 2.0 * emid + e0) / (h * h);
    if (!std::isfinite(s.alpha) || !std::isfinite(s.beta))
        throw Error("derivative_stencil: non-finite estimate");
    return s;
}

inline double midpoint_value(const ControlField& field, long long j, double dt) {
    if (j < 0) throw ConfigError("midpoint_value: negative step index");
    return field.evaluate((j + 0.5) * dt);
}

}  // namespace tdse

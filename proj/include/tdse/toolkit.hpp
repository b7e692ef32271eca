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
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tdse/control_field.hpp"
#include "tdse/matrix_io.hpp"
#include "tdse/operator_core.hpp"
#include "tdse/parallel.hpp"
#include "tdse/quantum_model.hpp"

namespace tdse {

/// Precomputed one-step propagators exp(-i dt (H0 - mu * values[l])) over a
/// quantization grid. Spectral factors of each generator are retained only
/// when fractional powers will be needed; entries alone suffice for plain
/// nearest-value stepping. Immutable once built, shareable across threads.
struct Toolkit {
    FieldGrid grid;
    double dt = 0.0;
    std::vector<UnitaryPropagator> entries;
    std::vector<std::shared_ptr<const SpectralFactors>> factors;  // empty unless kept
    CostCounter build_cost;

    int dim() const { return entries.empty() ? 0 : entries.front().dim(); }
    bool has_factors() const { return !factors.empty(); }
};

namespace detail {

inline std::shared_ptr<const SpectralFactors> factorize_at(const QuantumModel& model, double eps) {
    Matrix h = model.h0().entries() - eps * model.mu().entries();
    return std::make_shared<SpectralFactors>(spectral_factorize(HermitianOperator(std::move(h))));
}

}  // namespace detail

/// Build the propagator table for every grid value; parallel over grid
/// indices with deterministic placement. Records m+1 eigendecompositions
/// in build_cost.
inline Toolkit build_toolkit(const QuantumModel& model, FieldGrid grid, double dt,
                             bool keep_factors = false, int jobs = 1) {
    if (!(dt > 0.0)) throw ConfigError("build_toolkit: dt must be positive");
    Toolkit tk;
    tk.grid = std::move(grid);
    tk.dt = dt;
    const auto count = static_cast<long long>(tk.grid.values.size());
    std::vector<std::optional<UnitaryPropagator>> slots(static_cast<size_t>(count));
    std::vector<std::shared_ptr<const SpectralFactors>> factor_slots(
        keep_factors ? static_cast<size_t>(count) : 0);
    detail::parallel_for(count, jobs, [&](long long l) {
        try {
            auto f = detail::factorize_at(model, tk.grid.values[static_cast<size_t>(l)]);
            slots[static_cast<size_t>(l)] = expm_unitary(*f, dt);
            if (keep_factors) factor_slots[static_cast<size_t>(l)] = std::move(f);
        } catch (const Error& e) {
            throw Error("build_toolkit: entry " + std::to_string(l) + ": " + e.what());
        }
    });
    tk.entries.reserve(static_cast<size_t>(count));
    for (auto& s : slots) tk.entries.push_back(std::move(*s));
    tk.factors = std::move(factor_slots);
    tk.build_cost.eigendecompositions = count;
    tk.build_cost.online_exponentials = count;
    return tk;
}

/// Per-step propagator table for runs with no field quantization: entry j
/// is generated at the exact midpoint value eps(t_{j+1/2}) of one specific
/// (dt, field) pair, so lookup is by step index rather than by field value.
struct ExactToolkit {
    double dt = 0.0;
    std::vector<double> midpoints;
    std::vector<UnitaryPropagator> entries;
    std::vector<std::shared_ptr<const SpectralFactors>> factors;
    CostCounter build_cost;

    int dim() const { return entries.empty() ? 0 : entries.front().dim(); }
    bool has_factors() const { return !factors.empty(); }
};

inline ExactToolkit build_exact_toolkit(const QuantumModel& model, const ControlField& field,
                                        long long n_steps, bool keep_factors = false,
                                        int jobs = 1) {
    if (n_steps < 1) throw ConfigError("build_exact_toolkit: need at least one step");
    const double dt = field.horizon() / static_cast<double>(n_steps);
    ExactToolkit tk;
    tk.dt = dt;
    tk.midpoints.resize(static_cast<size_t>(n_steps));
    for (long long j = 0; j < n_steps; ++j)
        tk.midpoints[static_cast<size_t>(j)] = midpoint_value(field, j, dt);
    std::vector<std::optional<UnitaryPropagator>> slots(static_cast<size_t>(n_steps));
    std::vector<std::shared_ptr<const SpectralFactors>> factor_slots(
        keep_factors ? static_cast<size_t>(n_steps) : 0);
    detail::parallel_for(n_steps, jobs, [&](long long j) {
        auto f = detail::factorize_at(model, tk.midpoints[static_cast<size_t>(j)]);
        slots[static_cast<size_t>(j)] = expm_unitary(*f, dt);
        if (keep_factors) factor_slots[static_cast<size_t>(j)] = std::move(f);
    });
    tk.entries.reserve(static_cast<size_t>(n_steps));
    for (auto& s : slots) tk.entries.push_back(std::move(*s));
    tk.factors = std::move(factor_slots);
    tk.build_cost.eigendecompositions = n_steps;
    tk.build_cost.online_exponentials = n_steps;
    return tk;
}

/// Corrector pair for the low-intensity improved stepping:
///   omega-generator = (1/12) [mu, H0] dt^3   (anti-Hermitian)
///   theta-generator = (i/24) mu dt^3         (anti-Hermitian)
/// The omega orientation is the one that cancels the first-order local
/// error term -(d eps/dt)(dt^3/12) S [H0, mu] psi of the midpoint toolkit
/// step; the opposite orientation doubles that term instead (verified by
/// the order measurements in the acceptance suite). Powers are taken
/// through the Hermitian forms i*generator, so omega_power(a) =
/// exp(a * omega_generator) stays unitary for any real a.
class CorrectorPair {
public:
    CorrectorPair(const QuantumModel& model, double dt) : dt_(dt) {
        if (!(dt > 0.0)) throw ConfigError("CorrectorPair: dt must be positive");
        const double dt3 = dt * dt * dt;
        omega_generator_ = (dt3 / 12.0) * commutator(model.mu(), model.h0());
        theta_generator_ = (Complex(0.0, 1.0) * dt3 / 24.0) * model.mu().entries();
        // i * omega_generator is Hermitian since the generator is anti-Hermitian.
        omega_hermitian_ = spectral_factorize(
            HermitianOperator(Complex(0.0, 1.0) * omega_generator_));
        mu_factors_ = spectral_factorize(model.mu());
    }

    double dt() const { return dt_; }
    const Matrix& omega_generator() const { return omega_generator_; }
    const Matrix& theta_generator() const { return theta_generator_; }

    /// exp(alpha * omega_generator) materialized.
    UnitaryPropagator omega_power(double alpha) const {
        return expm_unitary(omega_hermitian_, alpha);
    }

    /// exp(beta * theta_generator) materialized.
    UnitaryPropagator theta_power(double beta) const {
        return expm_unitary(mu_factors_, theta_scale(beta));
    }

    StateVector apply_omega_power(double alpha, const StateVector& psi,
                                  CostCounter* cost = nullptr) const {
        if (cost) ++cost->online_exponentials;
        return apply_evolution(omega_hermitian_, alpha, psi, cost);
    }

    StateVector apply_theta_power(double beta, const StateVector& psi,
                                  CostCounter* cost = nullptr) const {
        if (cost) ++cost->online_exponentials;
        return apply_evolution(mu_factors_, theta_scale(beta), psi, cost);
    }

private:
    // exp(beta * (i/24) mu dt^3) = exp(-i * (-beta dt^3 / 24) * mu)
    double theta_scale(double beta) const { return -beta * dt_ * dt_ * dt_ / 24.0; }

    double dt_;
    Matrix omega_generator_;
    Matrix theta_generator_;
    SpectralFactors omega_hermitian_;
    SpectralFactors mu_factors_;
};

inline CorrectorPair build_correctors(const QuantumModel& model, double dt) {
    return CorrectorPair(model, dt);
}

/// S_l(dt)^a == S_l(a*dt) through the stored generator factors. Taking the
/// power through the generator keeps the result single-valued even when
/// dt * ||H|| exceeds pi, where a matrix logarithm of the unitary would
/// pick the wrong branch.
inline UnitaryPropagator fractional_power(const Toolkit& tk, int ell, double alpha) {
    if (!tk.has_factors())
        throw Error("fractional_power: toolkit was built without spectral factors");
    if (ell < 0 || ell >= static_cast<int>(tk.entries.size()))
        throw DimensionError("fractional_power: grid index out of range");
    if (alpha < -1e-12 || alpha > 1.0 + 1e-12)
        throw ConfigError("fractional_power: exponent outside [0, 1]");
    alpha = std::clamp(alpha, 0.0, 1.0);
    return expm_unitary(*tk.factors[static_cast<size_t>(ell)], alpha * tk.dt,
                        tk.factors[static_cast<size_t>(ell)]);
}

inline StateVector apply_fractional_power(const Toolkit& tk, int ell, double alpha,
                                          const StateVector& psi, CostCounter* cost = nullptr) {
    if (!tk.has_factors())
        throw Error("apply_fractional_power: toolkit was built without spectral factors");
    if (ell < 0 || ell >= static_cast<int>(tk.entries.size()))
        throw DimensionError("apply_fractional_power: grid index out of range");
    if (alpha < -1e-12 || alpha > 1.0 + 1e-12)
        throw ConfigError("apply_fractional_power: exponent outside [0, 1]");
    alpha = std::clamp(alpha, 0.0, 1.0);
    if (cost) ++cost->online_exponentials;
    return apply_evolution(*tk.factors[static_cast<size_t>(ell)], alpha * tk.dt, psi, cost);
}

/// Precomputed two-element products S_{l+1}(dt)^{1-a_k} S_l(dt)^{a_k} over a
/// uniform exponent grid a_k = k/(K-1) in [0, 1]. Footprint is m*K complex
/// d x d matrices.
struct PairToolkit {
    Toolkit base;
    std::vector<double> alpha_grid;
    std::vector<std::vector<UnitaryPropagator>> combos;  // [ell][k]
    CostCounter build_cost;

    int alpha_count() const { return static_cast<int>(alpha_grid.size()); }
};

inline PairToolkit build_pair_toolkit(Toolkit tk, int alpha_count, int jobs = 1) {
    if (alpha_count < 2) throw ConfigError("build_pair_toolkit: need at least two exponent values");
    if (!tk.has_factors())
        throw Error("build_pair_toolkit: toolkit was built without spectral factors");
    if (tk.grid.m < 1) throw ConfigError("build_pair_toolkit: degenerate grid has no cell");
    PairToolkit ptk;
    ptk.alpha_grid.resize(static_cast<size_t>(alpha_count));
    for (int k = 0; k < alpha_count; ++k)
        ptk.alpha_grid[static_cast<size_t>(k)] = double(k) / double(alpha_count - 1);
    const int cells = tk.grid.m;
    ptk.combos.resize(static_cast<size_t>(cells));
    detail::parallel_for(cells, jobs, [&](long long ell) {
        auto& row = ptk.combos[static_cast<size_t>(ell)];
        row.reserve(static_cast<size_t>(alpha_count));
        for (int k = 0; k < alpha_count; ++k) {
            const double a = ptk.alpha_grid[static_cast<size_t>(k)];
            const Matrix prod = fractional_power(tk, static_cast<int>(ell) + 1, 1.0 - a).entries() *
                                fractional_power(tk, static_cast<int>(ell), a).entries();
            row.emplace_back(prod, tk.dt);
        }
    });
    ptk.build_cost.matrix_matrix_products = static_cast<std::int64_t>(cells) * alpha_count;
    ptk.build_cost.online_exponentials = 2ll * cells * alpha_count;
    ptk.base = std::move(tk);
    return ptk;
}

/// Nearest exponent-grid index for a bracket weight, lower index on ties.
inline int snap_alpha_index(const PairToolkit& ptk, double alpha) {
    const int k_max = ptk.alpha_count() - 1;
    const double x = std::clamp(alpha, 0.0, 1.0) * k_max;
    int lo = std::clamp(static_cast<int>(std::floor(x)), 0, k_max - 1);
    return (x - lo <= 0.5) ? lo : lo + 1;
}

// ---------------------------------------------------------------------------
// Toolkit persistence: one matrix file per entry plus a JSON manifest, so a
// precomputation can be reused across runs against the same model.

inline void save_toolkit(const Toolkit& tk, const std::filesystem::path& dir,
                         const std::string& model_hash_hex, const std::string& label = "") {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest{
        {"format_version", 1},
        {"label", label},
        {"dim", tk.dim()},
        {"dt", tk.dt},
        {"model_hash", model_hash_hex},
        {"grid", {{"eps_min", tk.grid.eps_min}, {"eps_max", tk.grid.eps_max}, {"m", tk.grid.m}}},
    };
    std::ofstream ms(dir / "manifest.json");
    if (!ms) throw IoError("save_toolkit: cannot open manifest in " + dir.string());
    ms << manifest.dump(2) << '\n';
    char name[32];
    for (size_t l = 0; l < tk.entries.size(); ++l) {
        std::snprintf(name, sizeof(name), "entry_%05zu.mat", l);
        save_matrix(dir / name, tk.entries[l].entries());
    }
}

/// Reload a saved toolkit. The manifest's model hash must match the given
/// model; spectral factors are recomputed from the model when requested.
inline Toolkit load_toolkit(const std::filesystem::path& dir, const QuantumModel& model,
                            bool want_factors = false, int jobs = 1) {
    std::ifstream ms(dir / "manifest.json");
    if (!ms) throw IoError("load_toolkit: cannot open manifest in " + dir.string());
    nlohmann::json manifest;
    try {
        ms >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("load_toolkit: bad manifest: " + std::string(e.what()));
    }
    if (manifest.value("model_hash", "") != model_hash(model))
        throw Error("load_toolkit: toolkit was built for a different model");
    Toolkit tk;
    tk.dt = manifest.at("dt").get<double>();
    const auto& g = manifest.at("grid");
    const int m = g.at("m").get<int>();
    tk.grid = m == 0 ? FieldGrid::single(g.at("eps_min").get<double>())
                     : make_grid(g.at("eps_min").get<double>(), g.at("eps_max").get<double>(), m);
    char name[32];
    for (int l = 0; l <= m; ++l) {
        std::snprintf(name, sizeof(name), "entry_%05d.mat", l);
        tk.entries.emplace_back(load_matrix(dir / name), tk.dt);
    }
    if (static_cast<int>(tk.entries.front().dim()) != model.dim())
        throw DimensionError("load_toolkit: toolkit dimension differs from model");
    if (want_factors) {
        tk.factors.resize(tk.entries.size());
        detail::parallel_for(static_cast<long long>(tk.entries.size()), jobs, [&](long long l) {
            tk.factors[static_cast<size_t>(l)] =
                detail::factorize_at(model, tk.grid.values[static_cast<size_t>(l)]);
        });
        tk.build_cost.eigendecompositions = static_cast<std::int64_t>(tk.entries.size());
    }
    return tk;
}

}  // namespace tdse

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

#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "tdse/control_field.hpp"
#include "tdse/cost.hpp"
#include "tdse/operator_core.hpp"
#include "tdse/quantum_model.hpp"
#include "tdse/toolkit.hpp"

namespace tdse {

enum class SchemeKind { toolkit, improved_low, improved_high, quantified_high, strang, reference };

inline const char* to_string(SchemeKind k) {
    switch (k) {
        case SchemeKind::toolkit: return "toolkit";
        case SchemeKind::improved_low: return "improved-low";
        case SchemeKind::improved_high: return "improved-high";
        case SchemeKind::quantified_high: return "quantified-high";
        case SchemeKind::strang: return "strang";
        case SchemeKind::reference: return "reference";
    }
    return "?";
}

inline SchemeKind scheme_from_string(const std::string& s) {
    if (s == "toolkit") return SchemeKind::toolkit;
    if (s == "improved-low" || s == "improved_low") return SchemeKind::improved_low;
    if (s == "improved-high" || s == "improved_high") return SchemeKind::improved_high;
    if (s == "quantified-high" || s == "quantified_high") return SchemeKind::quantified_high;
    if (s == "strang") return SchemeKind::strang;
    if (s == "reference") return SchemeKind::reference;
    throw ConfigError("unknown scheme '" + s + "'");
}

/// Start-up convention for the low-intensity improved scheme. plain_start
/// applies the corrector pair inside every step only; corrected_start
/// additionally seeds the initial state with the step-0 corrector, which
/// double-applies it relative to the evolution the stepping discretizes.
enum class ImprovedLowInit { plain_start, corrected_start };

struct PropagateOptions {
    bool record_trajectory = false;
    BetaDivisor beta_divisor = BetaDivisor::half_step;
    ImprovedLowInit improved_low_init = ImprovedLowInit::plain_start;
};

/// Final state plus per-run bookkeeping. d_eps == 0 flags a run without
/// field quantization (per-step exact toolkit).
struct PropagationResult {
    StateVector final_state;
    std::vector<StateVector> trajectory;  // psi at every t_j when recorded
    CostCounter cost;
    SchemeKind scheme = SchemeKind::toolkit;
    double dt = 0.0;
    double d_eps = 0.0;
    double horizon = 0.0;
    long long n_steps = 0;
    long long m = 0;
};

namespace detail {

template <typename StepFn>
PropagationResult run_steps(StateVector psi0, const ControlField& field, double dt, long long n,
                            SchemeKind kind, const PropagateOptions& opts, StepFn&& step) {
    if (n < 1) throw ConfigError("propagate: need at least one step");
    if (!(dt > 0.0)) throw ConfigError("propagate: dt must be positive");
    if (n * dt > field.horizon() * (1.0 + 1e-9))
        throw HorizonError("propagate: n_steps * dt exceeds the field horizon");

    PropagationResult r{std::move(psi0), {}, {}, kind, dt, 0.0, n * dt, n, 0};
    if (opts.record_trajectory) {
        r.trajectory.reserve(static_cast<size_t>(n) + 1);
        r.trajectory.push_back(r.final_state);
    }
    for (long long j = 0; j < n; ++j) {
        r.final_state = step(j, std::move(r.final_state), r.cost);
        if (opts.record_trajectory) r.trajectory.push_back(r.final_state);
    }
    r.cost.steps = n;
    return r;
}

inline std::int64_t count_used(const std::vector<char>& used) {
    return std::accumulate(used.begin(), used.end(), std::int64_t{0},
                           [](std::int64_t a, char b) { return a + (b != 0); });
}

}  // namespace detail

/// Nearest-value toolkit stepping: one precomputed propagator application
/// per step, no online exponentials.
inline PropagationResult propagate_toolkit(const QuantumModel& model, const ControlField& field,
                                           const Toolkit& tk, long long n_steps,
                                           const PropagateOptions& opts = {}) {
    if (tk.dim() != model.dim()) throw DimensionError("propagate_toolkit: toolkit/model mismatch");
    std::vector<char> used(tk.entries.size(), 0);
    auto r = detail::run_steps(
        model.psi0(), field, tk.dt, n_steps, SchemeKind::toolkit, opts,
        [&](long long j, StateVector psi, CostCounter& cost) {
            const int l = nearest_index(tk.grid, midpoint_value(field, j, tk.dt));
            used[static_cast<size_t>(l)] = 1;
            return apply(tk.entries[static_cast<size_t>(l)], psi, &cost);
        });
    r.d_eps = tk.grid.d_eps;
    r.m = tk.grid.m;
    r.cost.toolkit_entries_used = detail::count_used(used);
    return r;
}

/// Toolkit stepping against a per-step exact table (no quantization error):
/// entry j is applied at step j.
inline PropagationResult propagate_toolkit(const QuantumModel& model, const ControlField& field,
                                           const ExactToolkit& tk, long long n_steps,
                                           const PropagateOptions& opts = {}) {
    if (tk.dim() != model.dim()) throw DimensionError("propagate_toolkit: toolkit/model mismatch");
    if (n_steps != static_cast<long long>(tk.entries.size()))
        throw ConfigError("propagate_toolkit: exact toolkit was built for a different step count");
    auto r = detail::run_steps(model.psi0(), field, tk.dt, n_steps, SchemeKind::toolkit, opts,
                               [&](long long j, StateVector psi, CostCounter& cost) {
                                   return apply(tk.entries[static_cast<size_t>(j)], psi, &cost);
                               });
    r.d_eps = 0.0;
    r.m = static_cast<long long>(tk.entries.size());
    r.cost.toolkit_entries_used = r.m;
    return r;
}

namespace detail {

template <typename LookupFn>
PropagationResult improved_low_impl(const QuantumModel& model, const ControlField& field,
                                    double dt, long long n_steps, const CorrectorPair& corr,
                                    const PropagateOptions& opts, LookupFn&& lookup) {
    if (std::abs(corr.dt() - dt) > 1e-12 * std::max(1.0, dt))
        throw ConfigError("propagate_improved_low: corrector built with a different dt");
    auto stepper = [&](long long j, StateVector psi, CostCounter& cost) {
        const DerivativeStencil s = derivative_stencil(field, j, dt, opts.beta_divisor);
        psi = corr.apply_theta_power(s.beta, psi, &cost);
        psi = corr.apply_omega_power(s.alpha, psi, &cost);
        return lookup(j)(psi, cost);
    };
    StateVector psi0 = model.psi0();
    CostCounter seed_cost;
    if (opts.improved_low_init == ImprovedLowInit::corrected_start) {
        // Seed the start with the step-0 corrector, then run the plain loop.
        const DerivativeStencil s0 = derivative_stencil(field, 0, dt, opts.beta_divisor);
        psi0 = corr.apply_omega_power(s0.alpha, corr.apply_theta_power(s0.beta, psi0, &seed_cost),
                                      &seed_cost);
    }
    auto out = run_steps(std::move(psi0), field, dt, n_steps, SchemeKind::improved_low, opts,
                         stepper);
    out.cost += seed_cost;
    return out;
}

}  // namespace detail

/// Low-intensity improved stepping: corrector powers (from field-derivative
/// stencils) followed by the nearest toolkit propagator. Three operator
/// applications and two online exponentials per step.
inline PropagationResult propagate_improved_low(const QuantumModel& model,
                                                const ControlField& field, const Toolkit& tk,
                                                const CorrectorPair& corr, long long n_steps,
                                                const PropagateOptions& opts = {}) {
    if (tk.dim() != model.dim())
        throw DimensionError("propagate_improved_low: toolkit/model mismatch");
    std::vector<char> used(tk.entries.size(), 0);
    auto r = detail::improved_low_impl(
        model, field, tk.dt, n_steps, corr, opts, [&](long long j) {
            const int l = nearest_index(tk.grid, midpoint_value(field, j, tk.dt));
            used[static_cast<size_t>(l)] = 1;
            return [&tk, l](StateVector& psi, CostCounter& cost) {
                return apply(tk.entries[static_cast<size_t>(l)], psi, &cost);
            };
        });
    r.d_eps = tk.grid.d_eps;
    r.m = tk.grid.m;
    r.cost.toolkit_entries_used = detail::count_used(used);
    return r;
}

inline PropagationResult propagate_improved_low(const QuantumModel& model,
                                                const ControlField& field, const ExactToolkit& tk,
                                                const CorrectorPair& corr, long long n_steps,
                                                const PropagateOptions& opts = {}) {
    if (tk.dim() != model.dim())
        throw DimensionError("propagate_improved_low: toolkit/model mismatch");
    if (n_steps != static_cast<long long>(tk.entries.size()))
        throw ConfigError("propagate_improved_low: exact toolkit step count mismatch");
    auto r = detail::improved_low_impl(
        model, field, tk.dt, n_steps, corr, opts, [&](long long j) {
            return [&tk, j](StateVector& psi, CostCounter& cost) {
                return apply(tk.entries[static_cast<size_t>(j)], psi, &cost);
            };
        });
    r.d_eps = 0.0;
    r.m = static_cast<long long>(tk.entries.size());
    r.cost.toolkit_entries_used = r.m;
    return r;
}

/// High-intensity improved stepping: the midpoint field value is split
/// convexly across its bracketing cell and the two bracket propagators are
/// applied with fractional durations (lower bracket first). Two operator
/// applications and two online exponentials per step.
inline PropagationResult propagate_improved_high(const QuantumModel& model,
                                                 const ControlField& field, const Toolkit& tk,
                                                 long long n_steps,
                                                 const PropagateOptions& opts = {}) {
    if (tk.dim() != model.dim())
        throw DimensionError("propagate_improved_high: toolkit/model mismatch");
    if (!tk.has_factors())
        throw Error("propagate_improved_high: toolkit must retain spectral factors");
    std::vector<char> used(tk.entries.size(), 0);
    auto r = detail::run_steps(
        model.psi0(), field, tk.dt, n_steps, SchemeKind::improved_high, opts,
        [&](long long j, StateVector psi, CostCounter& cost) {
            const ConvexWeights w = bracket_weights(tk.grid, midpoint_value(field, j, tk.dt));
            used[static_cast<size_t>(w.ell)] = 1;
            used[static_cast<size_t>(w.ell) + 1] = 1;
            psi = apply_fractional_power(tk, w.ell, w.alpha, psi, &cost);
            return apply_fractional_power(tk, w.ell + 1, w.beta, psi, &cost);
        });
    r.d_eps = tk.grid.d_eps;
    r.m = tk.grid.m;
    r.cost.toolkit_entries_used = detail::count_used(used);
    return r;
}

/// High-intensity stepping with quantized bracket exponents: one lookup in
/// the precomputed pair table per step, no online exponentials.
inline PropagationResult propagate_quantified_high(const QuantumModel& model,
                                                   const ControlField& field,
                                                   const PairToolkit& ptk, long long n_steps,
                                                   const PropagateOptions& opts = {}) {
    const Toolkit& tk = ptk.base;
    if (tk.dim() != model.dim())
        throw DimensionError("propagate_quantified_high: toolkit/model mismatch");
    std::vector<char> used(ptk.combos.size() * ptk.alpha_grid.size(), 0);
    auto r = detail::run_steps(
        model.psi0(), field, tk.dt, n_steps, SchemeKind::quantified_high, opts,
        [&](long long j, StateVector psi, CostCounter& cost) {
            const ConvexWeights w = bracket_weights(tk.grid, midpoint_value(field, j, tk.dt));
            const int k = snap_alpha_index(ptk, w.alpha);
            used[static_cast<size_t>(w.ell) * ptk.alpha_grid.size() + static_cast<size_t>(k)] = 1;
            return apply(ptk.combos[static_cast<size_t>(w.ell)][static_cast<size_t>(k)], psi,
                         &cost);
        });
    r.d_eps = tk.grid.d_eps;
    r.m = tk.grid.m;
    r.cost.toolkit_entries_used = detail::count_used(used);
    return r;
}

/// Precomputed pieces of the symmetric splitting step: the half-step
/// field-free propagator and the dipole eigenbasis for the per-step field
/// factor.
struct StrangWorkspace {
    UnitaryPropagator half_kinetic;
    SpectralFactors mu_factors;
    double dt = 0.0;
    CostCounter build_cost;
};

inline StrangWorkspace build_strang(const QuantumModel& model, double dt) {
    if (!(dt > 0.0)) throw ConfigError("build_strang: dt must be positive");
    SpectralFactors h0_factors = spectral_factorize(model.h0());
    StrangWorkspace ws{expm_unitary(h0_factors, 0.5 * dt), spectral_factorize(model.mu()), dt, {}};
    ws.build_cost.eigendecompositions = 2;
    ws.build_cost.online_exponentials = 1;
    return ws;
}

/// Symmetric splitting baseline. With H = H0 - mu * eps the field half of
/// the step carries the opposite sign: exp(-i dt/2 H0) exp(+i dt eps mu)
/// exp(-i dt/2 H0). Three applications and one online exponential per step.
inline PropagationResult propagate_strang(const QuantumModel& model, const ControlField& field,
                                          const StrangWorkspace& ws, long long n_steps,
                                          const PropagateOptions& opts = {}) {
    if (ws.half_kinetic.dim() != model.dim())
        throw DimensionError("propagate_strang: workspace/model mismatch");
    auto r = detail::run_steps(
        model.psi0(), field, ws.dt, n_steps, SchemeKind::strang, opts,
        [&](long long j, StateVector psi, CostCounter& cost) {
            const double v = midpoint_value(field, j, ws.dt);
            psi = apply(ws.half_kinetic, psi, &cost);
            ++cost.online_exponentials;
            psi = apply_evolution(ws.mu_factors, -v * ws.dt, psi, &cost);
            return apply(ws.half_kinetic, psi, &cost);
        });
    r.cost.toolkit_entries_used = 1;
    return r;
}

/// Midpoint exact-exponential rule: every step factorizes the frozen
/// Hamiltonian at the midpoint field value and applies its exact
/// exponential. Second order in dt and exact for plateaus aligned with the
/// step grid; used as ground truth for error measurement.
inline PropagationResult propagate_reference_fixed(const QuantumModel& model,
                                                   const ControlField& field, long long n_steps,
                                                   const PropagateOptions& opts = {}) {
    if (n_steps < 1) throw ConfigError("propagate_reference_fixed: need at least one step");
    const double dt = field.horizon() / static_cast<double>(n_steps);
    auto r = detail::run_steps(model.psi0(), field, dt, n_steps, SchemeKind::reference, opts,
                               [&](long long j, StateVector psi, CostCounter& cost) {
                                   const double v = midpoint_value(field, j, dt);
                                   auto f = detail::factorize_at(model, v);
                                   ++cost.eigendecompositions;
                                   ++cost.online_exponentials;
                                   return apply_evolution(*f, dt, psi, &cost);
                               });
    return r;
}

/// Reference ladder: run the midpoint rule at n, 2n, 4n, ... until one
/// doubling changes the final state by less than `tol`; the finest state is
/// the accepted reference. richardson holds (coarse n, gap to 2n) rows.
struct ReferenceSolution {
    PropagationResult result;
    std::vector<std::pair<long long, double>> richardson;
    long long accepted_n = 0;
    CostCounter total_cost;
};

inline ReferenceSolution solve_reference(const QuantumModel& model, const ControlField& field,
                                         double tol = 1e-11, long long n_start = 4096,
                                         long long n_cap = (1ll << 22)) {
    if (!(tol > 0.0)) throw ConfigError("solve_reference: tolerance must be positive");
    if (n_start < 1 || n_start > n_cap) throw ConfigError("solve_reference: bad step range");
    ReferenceSolution sol{propagate_reference_fixed(model, field, n_start), {}, 0, {}};
    sol.total_cost += sol.result.cost;
    long long n = n_start;
    while (2 * n <= n_cap) {
        PropagationResult finer = propagate_reference_fixed(model, field, 2 * n);
        sol.total_cost += finer.cost;
        const double gap =
            (finer.final_state.amplitudes() - sol.result.final_state.amplitudes()).norm();
        sol.richardson.emplace_back(n, gap);
        sol.result = std::move(finer);
        if (gap < tol) {
            sol.accepted_n = n;
            return sol;
        }
        n *= 2;
    }
    const double best = sol.richardson.empty() ? std::numeric_limits<double>::quiet_NaN()
                                               : sol.richardson.back().second;
    std::ostringstream os;
    os << "solve_reference: gap " << best << " still above tolerance " << tol
       << " at the step cap " << n_cap;
    throw ReferenceError(os.str(), best);
}

}  // namespace tdse

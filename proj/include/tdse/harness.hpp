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
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tdse/control_field.hpp"
#include "tdse/parallel.hpp"
#include "tdse/quantum_model.hpp"
#include "tdse/schemes.hpp"
#include "tdse/toolkit.hpp"

namespace tdse {

// ---------------------------------------------------------------------------
// Experiment configuration

enum class GridPolicy { exact, fixed, dt_scaled };

struct ModelSpec {
    enum class Kind { rotor, file, random } kind = Kind::rotor;
    int j_max = 20;
    double b_rot = 1.0;
    double mu0 = 1.0;
    std::filesystem::path h0_path, mu_path, psi0_path;
    int dim = 8;
    std::uint64_t seed = 1234;
};

struct FieldSpec {
    FieldKind kind = FieldKind::sinusoid;
    double eps_max = 0.5;
    double omega = 0.05;
    std::filesystem::path path;
    Interpolation interpolation = Interpolation::linear;
};

struct GridSpec {
    GridPolicy policy = GridPolicy::exact;
    long long m = 1024;                  // fixed policy
    std::optional<double> c;             // dt_scaled policy; default 4*span/T
    std::optional<double> eps_min, eps_max;  // default: field bounds
};

struct ReferenceSpec {
    double tol = 1e-11;
    long long n_start = 4096;
    long long n_cap = 1ll << 22;
};

struct FitSpec {
    int drop_largest = 2;
    double floor_factor = 10.0;
};

struct EpsSweepSpec {
    long long n_steps = 8192;
    std::vector<long long> m_list = {16, 32, 64, 128, 256, 512, 1024};
};

struct CostSpec {
    double tol = 5e-3;
    long long n_min = 64;
    long long n_cap = 1ll << 17;
    long long m_min = 16;
    long long m_cap = 1ll << 14;
    long long quantified_m_cap = 1ll << 10;
    double reference_tol = 5e-6;
    long long reference_n_start = 1024;
    std::map<SchemeKind, int> equiv_products_per_step = {
        {SchemeKind::strang, 2},        {SchemeKind::toolkit, 1},
        {SchemeKind::improved_low, 2},  {SchemeKind::improved_high, 3},
        {SchemeKind::quantified_high, 1}};
};

struct ExperimentConfig {
    std::string label = "default";
    std::string output_dir;  // default output location; CLI --out overrides
    ModelSpec model;
    FieldSpec field;
    double horizon = M_PI / 0.05;
    std::vector<SchemeKind> schemes = {SchemeKind::toolkit, SchemeKind::improved_low,
                                       SchemeKind::strang};
    std::vector<long long> n_sweep = {64, 128, 256, 512, 1024, 2048, 4096};
    GridSpec grid;
    int alpha_grid_size = 100;
    ImprovedLowInit improved_low_init = ImprovedLowInit::plain_start;
    BetaDivisor beta_divisor = BetaDivisor::half_step;
    ReferenceSpec reference;
    FitSpec fit;
    EpsSweepSpec eps_sweep;
    CostSpec cost;
    bool trajectory = false;
    int jobs = 1;
};

namespace detail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                       const char* where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                ok = true;
                break;
            }
        if (!ok) throw ConfigError(std::string(where) + ": unknown key '" + it.key() + "'");
    }
}

inline std::vector<std::pair<double, double>> load_field_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("field csv: cannot open " + path.string());
    std::vector<std::pair<double, double>> rows;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw ParseError("field csv: expected 't,eps' in " + path.string());
        try {
            rows.emplace_back(std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1)));
        } catch (const std::exception&) {
            if (rows.empty() && (line[0] == 't' || line[0] == '#')) continue;  // header
            throw ParseError("field csv: bad row '" + line + "' in " + path.string());
        }
    }
    if (rows.empty()) throw ParseError("field csv: no samples in " + path.string());
    return rows;
}

}  // namespace detail

inline ModelSpec parse_model_spec(const nlohmann::json& j,
                                  std::uint64_t default_seed = 1234) {
    detail::check_keys(j, {"kind", "j_max", "B", "mu0", "h0", "mu", "psi0", "dim", "seed"},
                       "model");
    ModelSpec spec;
    spec.seed = default_seed;
    const std::string kind = j.value("kind", "rotor");
    if (kind == "rotor") {
        spec.kind = ModelSpec::Kind::rotor;
        spec.j_max = j.value("j_max", 20);
        spec.b_rot = j.value("B", 1.0);
        spec.mu0 = j.value("mu0", 1.0);
    } else if (kind == "file") {
        spec.kind = ModelSpec::Kind::file;
        for (const char* k : {"h0", "mu", "psi0"})
            if (!j.contains(k)) throw ConfigError("model: file kind needs 'h0','mu','psi0'");
        spec.h0_path = j.at("h0").get<std::string>();
        spec.mu_path = j.at("mu").get<std::string>();
        spec.psi0_path = j.at("psi0").get<std::string>();
    } else if (kind == "random") {
        spec.kind = ModelSpec::Kind::random;
        spec.dim = j.value("dim", 8);
        spec.seed = j.value("seed", spec.seed);
    } else {
        throw ConfigError("model: unknown kind '" + kind + "'");
    }
    return spec;
}

inline FieldSpec parse_field_spec(const nlohmann::json& j) {
    detail::check_keys(j, {"kind", "eps_max", "omega", "path", "interpolation"}, "field");
    FieldSpec spec;
    const std::string kind = j.value("kind", "sinusoid");
    if (kind == "sinusoid") {
        spec.kind = FieldKind::sinusoid;
        spec.eps_max = j.value("eps_max", 0.5);
        spec.omega = j.value("omega", 0.05);
    } else if (kind == "tabulated" || kind == "piecewise") {
        spec.kind = kind == "tabulated" ? FieldKind::tabulated : FieldKind::piecewise_constant;
        if (!j.contains("path")) throw ConfigError("field: '" + kind + "' needs a csv 'path'");
        spec.path = j.at("path").get<std::string>();
        const std::string interp = j.value("interpolation", "linear");
        if (interp == "linear")
            spec.interpolation = Interpolation::linear;
        else if (interp == "nearest")
            spec.interpolation = Interpolation::nearest;
        else
            throw ConfigError("field: unknown interpolation '" + interp + "'");
    } else {
        throw ConfigError("field: unknown kind '" + kind + "'");
    }
    return spec;
}

inline ExperimentConfig parse_config(const nlohmann::json& j) {
    detail::check_keys(j,
                       {"label", "output_dir", "model", "field", "horizon", "schemes", "sweep",
                        "grid", "alpha_grid_size", "improved_low_init", "beta_divisor",
                        "reference", "fit", "eps_sweep", "cost", "seed", "trajectory", "jobs"},
                       "config");
    ExperimentConfig cfg;
    cfg.label = j.value("label", "default");
    cfg.output_dir = j.value("output_dir", "");
    const auto seed = j.value("seed", std::uint64_t{1234});
    if (j.contains("model")) cfg.model = parse_model_spec(j.at("model"), seed);
    if (j.contains("field")) cfg.field = parse_field_spec(j.at("field"));

    if (j.contains("horizon")) {
        cfg.horizon = j.at("horizon").get<double>();
    } else if (cfg.field.kind == FieldKind::sinusoid) {
        cfg.horizon = M_PI / cfg.field.omega;  // one half-period
    } else {
        throw ConfigError("config: 'horizon' is required for non-sinusoid fields");
    }
    if (!(cfg.horizon > 0.0)) throw ConfigError("config: horizon must be positive");

    if (j.contains("schemes")) {
        cfg.schemes.clear();
        for (const auto& s : j.at("schemes")) cfg.schemes.push_back(scheme_from_string(s));
        if (cfg.schemes.empty()) throw ConfigError("config: scheme list is empty");
    }

    if (j.contains("sweep")) {
        const auto& sw = j.at("sweep");
        detail::check_keys(sw, {"n_steps", "dt", "geometric_dt"}, "sweep");
        cfg.n_sweep.clear();
        if (sw.contains("n_steps")) {
            for (const auto& n : sw.at("n_steps")) cfg.n_sweep.push_back(n.get<long long>());
        } else if (sw.contains("dt") || sw.contains("geometric_dt")) {
            std::vector<double> dts;
            if (sw.contains("dt")) {
                for (const auto& d : sw.at("dt")) dts.push_back(d.get<double>());
            } else {
                const auto& g = sw.at("geometric_dt");
                detail::check_keys(g, {"start", "ratio", "count"}, "geometric_dt");
                double dt = g.at("start").get<double>();
                const double ratio = g.at("ratio").get<double>();
                const int count = g.at("count").get<int>();
                if (!(ratio > 0.0 && ratio < 1.0) || count < 1)
                    throw ConfigError("geometric_dt: need ratio in (0,1) and count >= 1");
                for (int i = 0; i < count; ++i, dt *= ratio) dts.push_back(dt);
            }
            for (double dt : dts) {
                if (!(dt > 0.0)) throw ConfigError("sweep: dt must be positive");
                const auto n = static_cast<long long>(std::llround(cfg.horizon / dt));
                if (n < 1 || std::abs(double(n) * dt - cfg.horizon) > 1e-12 * cfg.horizon)
                    throw ConfigError("sweep: dt does not divide the horizon");
                cfg.n_sweep.push_back(n);
            }
        } else {
            throw ConfigError("sweep: need 'n_steps', 'dt', or 'geometric_dt'");
        }
        if (cfg.n_sweep.empty()) throw ConfigError("sweep: empty");
        for (long long n : cfg.n_sweep)
            if (n < 1) throw ConfigError("sweep: step counts must be >= 1");
    }

    if (j.contains("grid")) {
        const auto& g = j.at("grid");
        detail::check_keys(g, {"policy", "m", "c", "eps_min", "eps_max"}, "grid");
        const std::string policy = g.value("policy", "exact");
        if (policy == "exact")
            cfg.grid.policy = GridPolicy::exact;
        else if (policy == "fixed")
            cfg.grid.policy = GridPolicy::fixed;
        else if (policy == "dt_scaled")
            cfg.grid.policy = GridPolicy::dt_scaled;
        else
            throw ConfigError("grid: unknown policy '" + policy + "'");
        if (g.contains("m")) cfg.grid.m = g.at("m").get<long long>();
        if (g.contains("c")) cfg.grid.c = g.at("c").get<double>();
        if (g.contains("eps_min")) cfg.grid.eps_min = g.at("eps_min").get<double>();
        if (g.contains("eps_max")) cfg.grid.eps_max = g.at("eps_max").get<double>();
    }

    cfg.alpha_grid_size = j.value("alpha_grid_size", 100);
    if (cfg.alpha_grid_size < 2) throw ConfigError("config: alpha_grid_size must be >= 2");

    const std::string init = j.value("improved_low_init", "plain_start");
    if (init == "plain_start")
        cfg.improved_low_init = ImprovedLowInit::plain_start;
    else if (init == "corrected_start")
        cfg.improved_low_init = ImprovedLowInit::corrected_start;
    else
        throw ConfigError("config: unknown improved_low_init '" + init + "'");

    const std::string divisor = j.value("beta_divisor", "half_step");
    if (divisor == "half_step")
        cfg.beta_divisor = BetaDivisor::half_step;
    else if (divisor == "full_step")
        cfg.beta_divisor = BetaDivisor::full_step;
    else
        throw ConfigError("config: unknown beta_divisor '" + divisor + "'");

    if (j.contains("reference")) {
        const auto& r = j.at("reference");
        detail::check_keys(r, {"tol", "n_start", "n_cap"}, "reference");
        cfg.reference.tol = r.value("tol", cfg.reference.tol);
        cfg.reference.n_start = r.value("n_start", cfg.reference.n_start);
        cfg.reference.n_cap = r.value("n_cap", cfg.reference.n_cap);
    }

    if (j.contains("fit")) {
        const auto& f = j.at("fit");
        detail::check_keys(f, {"drop_largest", "floor_factor"}, "fit");
        cfg.fit.drop_largest = f.value("drop_largest", cfg.fit.drop_largest);
        cfg.fit.floor_factor = f.value("floor_factor", cfg.fit.floor_factor);
    }

    if (j.contains("eps_sweep")) {
        const auto& e = j.at("eps_sweep");
        detail::check_keys(e, {"n_steps", "m_list"}, "eps_sweep");
        cfg.eps_sweep.n_steps = e.value("n_steps", cfg.eps_sweep.n_steps);
        if (e.contains("m_list")) {
            cfg.eps_sweep.m_list.clear();
            for (const auto& m : e.at("m_list")) cfg.eps_sweep.m_list.push_back(m.get<long long>());
        }
        if (cfg.eps_sweep.m_list.empty()) throw ConfigError("eps_sweep: m_list is empty");
    }

    if (j.contains("cost")) {
        const auto& c = j.at("cost");
        detail::check_keys(c,
                           {"tol", "n_min", "n_cap", "m_min", "m_cap", "quantified_m_cap",
                            "reference_tol", "reference_n_start", "equiv_products_per_step"},
                           "cost");
        cfg.cost.tol = c.value("tol", cfg.cost.tol);
        cfg.cost.n_min = c.value("n_min", cfg.cost.n_min);
        cfg.cost.n_cap = c.value("n_cap", cfg.cost.n_cap);
        cfg.cost.m_min = c.value("m_min", cfg.cost.m_min);
        cfg.cost.m_cap = c.value("m_cap", cfg.cost.m_cap);
        cfg.cost.quantified_m_cap = c.value("quantified_m_cap", cfg.cost.quantified_m_cap);
        cfg.cost.reference_tol = c.value("reference_tol", cfg.cost.reference_tol);
        cfg.cost.reference_n_start = c.value("reference_n_start", cfg.cost.reference_n_start);
        if (c.contains("equiv_products_per_step"))
            for (auto it = c.at("equiv_products_per_step").begin();
                 it != c.at("equiv_products_per_step").end(); ++it)
                cfg.cost.equiv_products_per_step[scheme_from_string(it.key())] =
                    it.value().get<int>();
        if (!(cfg.cost.tol > 0.0 && cfg.cost.tol <= 2.0))
            throw ConfigError("cost: tol must lie in (0, 2]");
    }

    cfg.trajectory = j.value("trajectory", false);
    cfg.jobs = j.value("jobs", 1);
    if (cfg.jobs < 1) throw ConfigError("config: jobs must be >= 1");
    return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad config json: " + std::string(e.what()));
    }
    return parse_config(j);
}

inline QuantumModel make_model(const ModelSpec& spec) {
    switch (spec.kind) {
        case ModelSpec::Kind::rotor:
            return build_rigid_rotor(spec.j_max, spec.b_rot, spec.mu0);
        case ModelSpec::Kind::file:
            return load_model(spec.h0_path, spec.mu_path, spec.psi0_path);
        case ModelSpec::Kind::random:
            return random_model(spec.dim, spec.seed);
    }
    throw ConfigError("make_model: unreachable");
}

inline ControlField make_field(const FieldSpec& spec, double horizon) {
    switch (spec.kind) {
        case FieldKind::sinusoid:
            return ControlField::sinusoid(spec.eps_max, spec.omega, horizon);
        case FieldKind::piecewise_constant: {
            auto rows = detail::load_field_csv(spec.path);
            std::vector<double> t, v;
            for (auto& [ti, vi] : rows) {
                t.push_back(ti);
                v.push_back(vi);
            }
            return ControlField::piecewise(std::move(t), std::move(v), horizon);
        }
        case FieldKind::tabulated: {
            auto rows = detail::load_field_csv(spec.path);
            std::vector<double> t, v;
            for (auto& [ti, vi] : rows) {
                t.push_back(ti);
                v.push_back(vi);
            }
            return ControlField::tabulated(std::move(t), std::move(v), spec.interpolation,
                                           horizon);
        }
    }
    throw ConfigError("make_field: unreachable");
}

// ---------------------------------------------------------------------------
// Order fitting

struct FitResult {
    double slope = 0.0;
    double intercept = 0.0;  // in log space
    double residual = 0.0;   // RMS of log residuals
    int points_used = 0;

    double predict(double x) const { return std::exp(intercept + slope * std::log(x)); }
};

/// Ordinary least squares of log(error) against log(x). Nonpositive errors
/// are excluded; fewer than three usable points is an error.
inline FitResult fit_order(const std::vector<std::pair<double, double>>& points) {
    std::vector<std::pair<double, double>> logs;
    for (const auto& [x, err] : points) {
        if (!(x > 0.0)) throw ConfigError("fit_order: x values must be positive");
        if (err > 0.0) logs.emplace_back(std::log(x), std::log(err));
    }
    if (logs.size() < 3)
        throw Error("fit_order: fewer than 3 usable points (" + std::to_string(logs.size()) + ")");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& [lx, ly] : logs) {
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    const double n = double(logs.size());
    const double denom = n * sxx - sx * sx;
    if (std::abs(denom) < 1e-30) throw Error("fit_order: degenerate abscissae");
    FitResult fit;
    fit.slope = (n * sxy - sx * sy) / denom;
    fit.intercept = (sy - fit.slope * sx) / n;
    fit.points_used = static_cast<int>(logs.size());
    double ss = 0;
    for (const auto& [lx, ly] : logs) {
        const double r = ly - (fit.intercept + fit.slope * lx);
        ss += r * r;
    }
    fit.residual = std::sqrt(ss / n);
    return fit;
}

// ---------------------------------------------------------------------------
// Sweep execution

struct ConvergenceRow {
    SchemeKind scheme = SchemeKind::toolkit;
    double x = 0.0;  // dt for time sweeps, d_eps for grid sweeps
    double dt = 0.0;
    double d_eps = 0.0;
    long long n_steps = 0;
    long long m = 0;
    double error = 0.0;
    CostCounter cost;
};

struct ConvergenceReport {
    std::string label;
    std::string x_axis;  // "dt" or "d_eps"
    std::vector<ConvergenceRow> rows;
    std::vector<std::pair<SchemeKind, FitResult>> fits;
    long long reference_accepted_n = 0;
    double reference_gap = 0.0;
    double fit_floor = 0.0;
    std::vector<std::string> warnings;

    const FitResult* fit_for(SchemeKind k) const {
        for (const auto& [scheme, fit] : fits)
            if (scheme == k) return &fit;
        return nullptr;
    }
};

namespace detail {

struct SweepContext {
    const ExperimentConfig& cfg;
    const QuantumModel& model;
    const ControlField& field;
    const StateVector& psi_ref;
};

inline bool is_pow2(long long v) { return v > 0 && (v & (v - 1)) == 0; }

/// Reference ladders must start on a grid that nests with every swept step
/// count (a power-of-two multiple of each). Raise the configured start when
/// needed; reject sweeps that admit no common refinement.
inline long long align_reference_start(long long n_start, const std::vector<long long>& sweep_ns,
                                       long long n_cap) {
    auto aligned = [&](long long candidate) {
        for (long long n : sweep_ns)
            if (candidate % n != 0 || !is_pow2(candidate / n)) return false;
        return true;
    };
    for (long long candidate = n_start; candidate <= n_cap; candidate *= 2)
        if (aligned(candidate)) return candidate;
    throw ConfigError(
        "reference: n_start cannot be aligned to the sweep step counts; "
        "use power-of-two-related step counts");
}

inline std::pair<double, double> grid_bounds(const ExperimentConfig& cfg,
                                             const ControlField& field) {
    const double lo = cfg.grid.eps_min.value_or(field.lower_bound());
    const double hi = cfg.grid.eps_max.value_or(field.upper_bound());
    if (!(hi > lo)) throw ConfigError("grid: eps_max must exceed eps_min");
    return {lo, hi};
}

inline long long dt_scaled_m(const ExperimentConfig& cfg, const ControlField& field, double dt) {
    const auto [lo, hi] = grid_bounds(cfg, field);
    const double span = hi - lo;
    const double c = cfg.grid.c.value_or(4.0 * span / field.horizon());
    const auto m = static_cast<long long>(std::llround(span / (c * dt)));
    return std::max<long long>(1, m);
}

/// One sweep evaluation: build whatever the scheme needs at (n, grid choice)
/// and propagate. Returns the finished row.
inline ConvergenceRow run_sweep_point(const SweepContext& ctx, SchemeKind scheme, long long n) {
    const ExperimentConfig& cfg = ctx.cfg;
    const double dt = ctx.field.horizon() / double(n);
    PropagateOptions opts;
    opts.beta_divisor = cfg.beta_divisor;
    opts.improved_low_init = cfg.improved_low_init;

    PropagationResult result = [&]() -> PropagationResult {
        switch (scheme) {
            case SchemeKind::strang:
                return propagate_strang(ctx.model, ctx.field, build_strang(ctx.model, dt), n,
                                        opts);
            case SchemeKind::reference:
                return propagate_reference_fixed(ctx.model, ctx.field, n, opts);
            case SchemeKind::toolkit:
            case SchemeKind::improved_low: {
                if (cfg.grid.policy == GridPolicy::exact) {
                    auto tk = build_exact_toolkit(ctx.model, ctx.field, n);
                    if (scheme == SchemeKind::toolkit)
                        return propagate_toolkit(ctx.model, ctx.field, tk, n, opts);
                    auto corr = build_correctors(ctx.model, dt);
                    return propagate_improved_low(ctx.model, ctx.field, tk, corr, n, opts);
                }
                const auto [lo, hi] = grid_bounds(cfg, ctx.field);
                const long long m = cfg.grid.policy == GridPolicy::fixed
                                        ? cfg.grid.m
                                        : dt_scaled_m(cfg, ctx.field, dt);
                auto tk = build_toolkit(ctx.model, make_grid(lo, hi, int(m)), dt);
                if (scheme == SchemeKind::toolkit)
                    return propagate_toolkit(ctx.model, ctx.field, tk, n, opts);
                auto corr = build_correctors(ctx.model, dt);
                return propagate_improved_low(ctx.model, ctx.field, tk, corr, n, opts);
            }
            case SchemeKind::improved_high:
            case SchemeKind::quantified_high: {
                if (cfg.grid.policy == GridPolicy::exact)
                    throw ConfigError(
                        "convergence: bracket schemes need a quantized grid "
                        "(grid policy 'fixed' or 'dt_scaled')");
                const auto [lo, hi] = grid_bounds(cfg, ctx.field);
                const long long m = cfg.grid.policy == GridPolicy::fixed
                                        ? cfg.grid.m
                                        : dt_scaled_m(cfg, ctx.field, dt);
                auto tk = build_toolkit(ctx.model, make_grid(lo, hi, int(m)), dt, true);
                if (scheme == SchemeKind::improved_high)
                    return propagate_improved_high(ctx.model, ctx.field, tk, n, opts);
                auto ptk = build_pair_toolkit(std::move(tk), cfg.alpha_grid_size);
                return propagate_quantified_high(ctx.model, ctx.field, ptk, n, opts);
            }
        }
        throw Error("run_sweep_point: unreachable");
    }();

    ConvergenceRow row;
    row.scheme = scheme;
    row.dt = dt;
    row.d_eps = result.d_eps;
    row.x = dt;
    row.n_steps = n;
    row.m = result.m;
    row.error = (result.final_state.amplitudes() - ctx.psi_ref.amplitudes()).norm();
    row.cost = result.cost;
    return row;
}

inline void check_monotone(ConvergenceReport& report, double floor, bool hard_fail) {
    // Within a scheme, halving dt should not grow the error. Mild wobble
    // gets a warning; a large jump flags a wiring bug. Grid sweeps only
    // warn: the quantization residual is pseudo-random in the aliased
    // regime and genuinely non-monotone.
    std::map<SchemeKind, std::vector<const ConvergenceRow*>> per_scheme;
    for (const auto& row : report.rows) per_scheme[row.scheme].push_back(&row);
    for (auto& [scheme, rows] : per_scheme) {
        std::sort(rows.begin(), rows.end(),
                  [](const ConvergenceRow* a, const ConvergenceRow* b) { return a->x > b->x; });
        for (size_t i = 0; i + 1 < rows.size(); ++i) {
            const double coarse = rows[i]->error;
            const double fine = rows[i + 1]->error;
            if (coarse <= 100.0 * floor) continue;
            if (fine > 10.0 * coarse && hard_fail)
                throw Error(std::string("convergence: error grew more than 10x refining ") +
                            to_string(scheme));
            if (fine > 2.0 * coarse)
                report.warnings.push_back(std::string("error of ") + to_string(scheme) +
                                          " grew refining x=" + std::to_string(rows[i]->x) +
                                          " -> " + std::to_string(rows[i + 1]->x));
        }
    }
}

inline void fit_report(ConvergenceReport& report, const ExperimentConfig& cfg) {
    std::map<SchemeKind, std::vector<ConvergenceRow>> per_scheme;
    for (const auto& row : report.rows) per_scheme[row.scheme].push_back(row);
    for (SchemeKind scheme : cfg.schemes) {
        auto it = per_scheme.find(scheme);
        if (it == per_scheme.end()) continue;
        auto rows = it->second;
        std::sort(rows.begin(), rows.end(),
                  [](const ConvergenceRow& a, const ConvergenceRow& b) { return a.x > b.x; });
        std::vector<std::pair<double, double>> pts;
        for (size_t i = 0; i < rows.size(); ++i) {
            if (static_cast<int>(i) < cfg.fit.drop_largest) continue;
            if (rows[i].error <= cfg.fit.floor_factor * report.fit_floor) continue;
            pts.emplace_back(rows[i].x, rows[i].error);
        }
        try {
            report.fits.emplace_back(scheme, fit_order(pts));
        } catch (const Error& e) {
            report.warnings.push_back(std::string("fit skipped for ") + to_string(scheme) + ": " +
                                      e.what());
        }
    }
}

}  // namespace detail

/// Time-order sweep: propagate every (scheme, n) pair of the config against
/// one converged reference, then fit log(error) vs log(dt) per scheme.
inline ConvergenceReport run_convergence(const ExperimentConfig& cfg) {
    const QuantumModel model = make_model(cfg.model);
    const ControlField field = make_field(cfg.field, cfg.horizon);
    const long long ref_start = detail::align_reference_start(
        cfg.reference.n_start, cfg.n_sweep, cfg.reference.n_cap);
    const ReferenceSolution reference =
        solve_reference(model, field, cfg.reference.tol, ref_start, cfg.reference.n_cap);

    ConvergenceReport report;
    report.label = cfg.label;
    report.x_axis = "dt";
    report.reference_accepted_n = reference.accepted_n;
    report.reference_gap = reference.richardson.back().second;
    report.fit_floor = std::max(report.reference_gap, 1e-15);

    detail::SweepContext ctx{cfg, model, field, reference.result.final_state};
    std::vector<std::pair<SchemeKind, long long>> tasks;
    for (SchemeKind scheme : cfg.schemes)
        for (long long n : cfg.n_sweep) tasks.emplace_back(scheme, n);
    std::vector<std::optional<ConvergenceRow>> slots(tasks.size());
    detail::parallel_for(static_cast<long long>(tasks.size()), cfg.jobs, [&](long long i) {
        const auto& [scheme, n] = tasks[static_cast<size_t>(i)];
        try {
            slots[static_cast<size_t>(i)] = detail::run_sweep_point(ctx, scheme, n);
        } catch (const Error& e) {
            throw Error(std::string("sweep point (") + to_string(scheme) + ", n=" +
                        std::to_string(n) + "): " + e.what());
        }
    });
    for (auto& slot : slots) report.rows.push_back(std::move(*slot));

    detail::check_monotone(report, report.fit_floor, true);
    detail::fit_report(report, cfg);
    return report;
}

/// Grid-order sweep: fixed small dt, varying quantization step. The time
/// error measured with an unquantized run at the same dt sets the fit floor,
/// below which rows are excluded as saturated.
inline ConvergenceReport run_eps_sweep(const ExperimentConfig& cfg) {
    const QuantumModel model = make_model(cfg.model);
    const ControlField field = make_field(cfg.field, cfg.horizon);
    const long long ref_start = detail::align_reference_start(
        cfg.reference.n_start, {cfg.eps_sweep.n_steps}, cfg.reference.n_cap);
    const ReferenceSolution reference =
        solve_reference(model, field, cfg.reference.tol, ref_start, cfg.reference.n_cap);

    ConvergenceReport report;
    report.label = cfg.label;
    report.x_axis = "d_eps";
    report.reference_accepted_n = reference.accepted_n;
    report.reference_gap = reference.richardson.back().second;

    const long long n = cfg.eps_sweep.n_steps;
    const double dt = field.horizon() / double(n);
    const auto [lo, hi] = detail::grid_bounds(cfg, field);

    // Time-error floor at this dt, measured without quantization.
    {
        auto tk = build_exact_toolkit(model, field, n);
        auto r = propagate_toolkit(model, field, tk, n);
        const double time_floor =
            (r.final_state.amplitudes() - reference.result.final_state.amplitudes()).norm();
        report.fit_floor = std::max({time_floor, report.reference_gap, 1e-15});
    }

    detail::SweepContext ctx{cfg, model, field, reference.result.final_state};
    std::vector<std::pair<SchemeKind, long long>> tasks;
    for (SchemeKind scheme : cfg.schemes) {
        // Gridless schemes have no d_eps axis; skip them so one config can
        // serve both sweep flavors.
        if (scheme == SchemeKind::strang || scheme == SchemeKind::reference) {
            report.warnings.push_back(std::string("eps-sweep: skipping gridless scheme ") +
                                      to_string(scheme));
            continue;
        }
        for (long long m : cfg.eps_sweep.m_list) tasks.emplace_back(scheme, m);
    }
    if (tasks.empty()) throw ConfigError("eps-sweep: no grid-based schemes in the config");
    std::vector<std::optional<ConvergenceRow>> slots(tasks.size());
    detail::parallel_for(static_cast<long long>(tasks.size()), cfg.jobs, [&](long long i) {
        const auto& [scheme, m] = tasks[static_cast<size_t>(i)];
        PropagateOptions opts;
        opts.beta_divisor = cfg.beta_divisor;
        opts.improved_low_init = cfg.improved_low_init;
        const bool needs_factors =
            scheme == SchemeKind::improved_high || scheme == SchemeKind::quantified_high;
        auto tk = build_toolkit(model, make_grid(lo, hi, int(m)), dt, needs_factors);
        PropagationResult result = [&]() {
            switch (scheme) {
                case SchemeKind::toolkit:
                    return propagate_toolkit(model, field, tk, n, opts);
                case SchemeKind::improved_low: {
                    auto corr = build_correctors(model, dt);
                    return propagate_improved_low(model, field, tk, corr, n, opts);
                }
                case SchemeKind::improved_high:
                    return propagate_improved_high(model, field, tk, n, opts);
                case SchemeKind::quantified_high: {
                    auto ptk = build_pair_toolkit(std::move(tk), cfg.alpha_grid_size);
                    return propagate_quantified_high(model, field, ptk, n, opts);
                }
                default:
                    throw ConfigError("eps-sweep: unsupported scheme");
            }
        }();
        ConvergenceRow row;
        row.scheme = scheme;
        row.dt = dt;
        row.d_eps = result.d_eps;
        row.x = result.d_eps;
        row.n_steps = n;
        row.m = result.m;
        row.error = (result.final_state.amplitudes() - ctx.psi_ref.amplitudes()).norm();
        row.cost = result.cost;
        slots[static_cast<size_t>(i)] = std::move(row);
    });
    for (auto& slot : slots) report.rows.push_back(std::move(*slot));

    detail::check_monotone(report, report.fit_floor, false);
    // No drop-largest window here; saturation filtering alone applies.
    ExperimentConfig fit_cfg = cfg;
    fit_cfg.fit.drop_largest = 0;
    detail::fit_report(report, fit_cfg);
    return report;
}

// ---------------------------------------------------------------------------
// Cost-to-tolerance search

struct CostTableRow {
    SchemeKind scheme = SchemeKind::toolkit;
    long long n_steps = 0;
    long long equiv_products = 0;
    long long m = 0;            // grid cells (span / d_eps); 0 when gridless
    long long alpha_grid = 0;   // exponent grid size for the quantified scheme
    long long toolkit_elements = 0;
    double achieved_error = 0.0;
    bool reached = false;
    CostCounter run_cost;  // raw counters of the selected run
};

namespace detail {

struct CostSearchContext {
    const ExperimentConfig& cfg;
    const QuantumModel& model;
    const ControlField& field;
    const StateVector& psi_ref;
    double tol;
};

struct CostProbe {
    double err = 0.0;
    CostCounter cost;
};

inline CostProbe cost_probe(const CostSearchContext& ctx, const PropagationResult& r) {
    return {(r.final_state.amplitudes() - ctx.psi_ref.amplitudes()).norm(), r.cost};
}

struct StepSearchResult {
    long long n = 0;
    double err = 0.0;
    bool ok = false;
    CostCounter cost;
};

/// Smallest power-of-two step count in [n_min, n_cap] reaching the
/// tolerance for a fixed precomputation, or the best error seen. Doubling
/// stops early once the error stalls below the saturation zone, which marks
/// the quantization floor of the current grid; errors near the unit-vector
/// bound of 2 are preasymptotic and never treated as a floor.
template <typename RunFn>
StepSearchResult min_steps_to_tol(const CostSearchContext& ctx, RunFn&& run) {
    StepSearchResult best;
    best.n = ctx.cfg.cost.n_cap;
    best.err = std::numeric_limits<double>::infinity();
    int stalls = 0;
    for (long long n = ctx.cfg.cost.n_min; n <= ctx.cfg.cost.n_cap; n *= 2) {
        const CostProbe probe = run(n);
        if (probe.err <= ctx.tol) return {n, probe.err, true, probe.cost};
        if (probe.err < 0.2 && probe.err > 0.9 * best.err) {
            if (++stalls >= 3) break;  // error no longer dropping with n
        } else if (probe.err < 0.9 * best.err) {
            stalls = 0;
        }
        if (probe.err < best.err) best = {n, probe.err, false, probe.cost};
    }
    return best;
}

}  // namespace detail

/// Search, per scheme, for the cheapest power-of-two (n, m) reaching the
/// target error, measured against a converged reference. Cost is the
/// configured equivalent-products-per-step weight times the step count.
inline std::vector<CostTableRow> cost_to_tolerance(const ExperimentConfig& cfg, double tol) {
    if (!(tol > 0.0 && tol <= 2.0)) throw ConfigError("cost_to_tolerance: tol must be in (0, 2]");
    const QuantumModel model = make_model(cfg.model);
    const ControlField field = make_field(cfg.field, cfg.horizon);
    const ReferenceSolution reference =
        solve_reference(model, field, cfg.cost.reference_tol, cfg.cost.reference_n_start,
                        cfg.reference.n_cap);
    detail::CostSearchContext ctx{cfg, model, field, reference.result.final_state, tol};
    const auto [lo, hi] = detail::grid_bounds(cfg, field);

    std::vector<CostTableRow> rows;
    for (SchemeKind scheme : cfg.schemes) {
        const auto equiv_it = cfg.cost.equiv_products_per_step.find(scheme);
        if (equiv_it == cfg.cost.equiv_products_per_step.end()) continue;  // reference etc.
        const int equiv = equiv_it->second;
        CostTableRow row;
        row.scheme = scheme;
        row.achieved_error = std::numeric_limits<double>::infinity();

        if (scheme == SchemeKind::strang) {
            auto found = detail::min_steps_to_tol(ctx, [&](long long n) {
                auto ws = build_strang(model, field.horizon() / double(n));
                return detail::cost_probe(ctx, propagate_strang(model, field, ws, n));
            });
            row.n_steps = found.n;
            row.achieved_error = found.err;
            row.reached = found.ok;
            row.run_cost = found.cost;
            row.toolkit_elements = 1;
        } else {
            const long long m_cap = scheme == SchemeKind::quantified_high
                                        ? std::min(cfg.cost.m_cap, cfg.cost.quantified_m_cap)
                                        : cfg.cost.m_cap;
            long long best_cost = std::numeric_limits<long long>::max();
            long long prev_best_n = std::numeric_limits<long long>::max();
            int m_stalls = 0;
            for (long long m = cfg.cost.m_min; m <= m_cap; m *= 2) {
                const bool needs_factors = scheme == SchemeKind::improved_high ||
                                           scheme == SchemeKind::quantified_high;
                // The table depends on dt, so each (m, n) pair rebuilds it.
                auto found = detail::min_steps_to_tol(ctx, [&](long long n) {
                    const double dt = field.horizon() / double(n);
                    PropagateOptions opts;
                    opts.beta_divisor = cfg.beta_divisor;
                    opts.improved_low_init = cfg.improved_low_init;
                    auto tk = build_toolkit(model, make_grid(lo, hi, int(m)), dt, needs_factors);
                    switch (scheme) {
                        case SchemeKind::toolkit:
                            return detail::cost_probe(ctx,
                                                      propagate_toolkit(model, field, tk, n, opts));
                        case SchemeKind::improved_low: {
                            auto corr = build_correctors(model, dt);
                            return detail::cost_probe(
                                ctx, propagate_improved_low(model, field, tk, corr, n, opts));
                        }
                        case SchemeKind::improved_high:
                            return detail::cost_probe(
                                ctx, propagate_improved_high(model, field, tk, n, opts));
                        case SchemeKind::quantified_high: {
                            auto ptk = build_pair_toolkit(std::move(tk), cfg.alpha_grid_size);
                            return detail::cost_probe(
                                ctx, propagate_quantified_high(model, field, ptk, n, opts));
                        }
                        default:
                            throw Error("cost_to_tolerance: unreachable scheme");
                    }
                });
                const long long cost_here = equiv * found.n;
                const bool improves = found.ok && cost_here < best_cost;
                const bool fallback = !row.reached && !found.ok && found.err < row.achieved_error;
                if (improves || fallback) {
                    if (found.ok) best_cost = cost_here;
                    row.n_steps = found.n;
                    row.achieved_error = found.err;
                    row.reached = row.reached || found.ok;
                    row.run_cost = found.cost;
                    row.m = m;
                    row.toolkit_elements =
                        scheme == SchemeKind::quantified_high ? m * cfg.alpha_grid_size : m + 1;
                }
                // Stop growing the grid once the required n stopped improving.
                if (found.ok) {
                    if (found.n >= prev_best_n) {
                        if (++m_stalls >= 2) break;
                    } else {
                        m_stalls = 0;
                    }
                    prev_best_n = std::min(prev_best_n, found.n);
                    if (found.n == cfg.cost.n_min) break;  // cannot get cheaper
                }
            }
        }
        if (scheme == SchemeKind::quantified_high) row.alpha_grid = cfg.alpha_grid_size;
        row.equiv_products = equiv * row.n_steps;
        rows.push_back(row);
    }
    std::sort(rows.begin(), rows.end(), [](const CostTableRow& a, const CostTableRow& b) {
        return a.equiv_products < b.equiv_products;
    });
    return rows;
}

// ---------------------------------------------------------------------------
// Emission

namespace detail {

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline void write_convergence_csv(const ConvergenceReport& report,
                                  const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw IoError("write_convergence_csv: cannot open " + path.string());
    os << "scheme,x,dt,d_eps,n_steps,m,error,applies,online_exps,matmuls,eigendecompositions,"
          "entries_used\n";
    for (const auto& r : report.rows) {
        os << to_string(r.scheme) << ',' << detail::fmt_double(r.x) << ','
           << detail::fmt_double(r.dt) << ',' << detail::fmt_double(r.d_eps) << ',' << r.n_steps
           << ',' << r.m << ',' << detail::fmt_double(r.error) << ','
           << r.cost.matrix_vector_applies << ',' << r.cost.online_exponentials << ','
           << r.cost.matrix_matrix_products << ',' << r.cost.eigendecompositions << ','
           << r.cost.toolkit_entries_used << '\n';
    }
    if (!os) throw IoError("write_convergence_csv: write failed");
}

inline nlohmann::json report_metadata(const ConvergenceReport& report) {
    nlohmann::json fits = nlohmann::json::object();
    for (const auto& [scheme, fit] : report.fits)
        fits[to_string(scheme)] = {{"slope", fit.slope},
                                   {"intercept", fit.intercept},
                                   {"residual", fit.residual},
                                   {"points_used", fit.points_used}};
    return nlohmann::json{
        {"label", report.label},
        {"x_axis", report.x_axis},
        {"reference", {{"accepted_n", report.reference_accepted_n},
                       {"richardson_gap", report.reference_gap}}},
        {"fit_floor", report.fit_floor},
        {"fits", fits},
        {"warnings", report.warnings},
    };
}

inline void write_report_metadata(const ConvergenceReport& report,
                                  const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw IoError("write_report_metadata: cannot open " + path.string());
    os << report_metadata(report).dump(2) << '\n';
}

/// Plot-ready data: a CSV of (scheme, x, error) plus a JSON sidecar with the
/// axes and fitted slopes.
inline void emit_plot_data(const ConvergenceReport& report, const std::filesystem::path& csv_path) {
    if (report.rows.empty()) throw Error("emit_plot_data: empty report");
    std::ofstream os(csv_path);
    if (!os) throw IoError("emit_plot_data: cannot open " + csv_path.string());
    os << "scheme,x,error\n";
    for (const auto& r : report.rows)
        os << to_string(r.scheme) << ',' << detail::fmt_double(r.x) << ','
           << detail::fmt_double(r.error) << '\n';
    auto meta_path = csv_path;
    meta_path += ".meta.json";
    write_report_metadata(report, meta_path);
}

inline void write_cost_csv(const std::vector<CostTableRow>& rows,
                           const std::filesystem::path& path,
                           const std::string& m_convention_note = std::string(
                               "m counts grid cells over the span [eps_min, eps_max]")) {
    std::ofstream os(path);
    if (!os) throw IoError("write_cost_csv: cannot open " + path.string());
    os << "scheme,n_steps,equiv_products,m,alpha_grid,toolkit_elements,achieved_error,reached,"
          "applies,online_exps\n";
    for (const auto& r : rows) {
        os << to_string(r.scheme) << ',' << r.n_steps << ',' << r.equiv_products << ',' << r.m
           << ',' << r.alpha_grid << ',' << r.toolkit_elements << ','
           << detail::fmt_double(r.achieved_error) << ',' << (r.reached ? 1 : 0) << ','
           << r.run_cost.matrix_vector_applies << ',' << r.run_cost.online_exponentials << '\n';
    }
    auto meta_path = path;
    meta_path += ".meta.json";
    std::ofstream ms(meta_path);
    ms << nlohmann::json{{"m_convention", m_convention_note}}.dump(2) << '\n';
}

}  // namespace tdse

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

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "tdse/harness.hpp"

namespace fs = std::filesystem;
using namespace tdse;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNumerical = 2;

int resolve_jobs(int cli_jobs, const ExperimentConfig& cfg) {
    int jobs = cli_jobs > 0 ? cli_jobs : cfg.jobs;
    if (const char* env = std::getenv("TDSE_TOOLKIT_JOBS")) {
        try {
            jobs = std::max(1, std::stoi(env));
        } catch (const std::exception&) {
            throw ConfigError("TDSE_TOOLKIT_JOBS is not an integer");
        }
    }
    return std::max(1, jobs);
}

void write_state_csv(const fs::path& path, const StateVector& psi) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path.string());
    os << "index,re,im\n";
    char buf[96];
    for (int i = 0; i < psi.dim(); ++i) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g\n", i, psi.amplitudes()[i].real(),
                      psi.amplitudes()[i].imag());
        os << buf;
    }
}

void write_trajectory_csv(const fs::path& path, const PropagationResult& result) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path.string());
    os << "step,index,re,im\n";
    char buf[112];
    for (size_t s = 0; s < result.trajectory.size(); ++s) {
        const auto& psi = result.trajectory[s];
        for (int i = 0; i < psi.dim(); ++i) {
            std::snprintf(buf, sizeof(buf), "%zu,%d,%.17g,%.17g\n", s, i,
                          psi.amplitudes()[i].real(), psi.amplitudes()[i].imag());
            os << buf;
        }
    }
}

// --model accepts inline JSON ('{"kind":"rotor","j_max":8}') or @file.json.
ModelSpec parse_model_arg(const std::string& arg) {
    nlohmann::json j;
    try {
        if (!arg.empty() && arg[0] == '@') {
            std::ifstream is(arg.substr(1));
            if (!is) throw ConfigError("cannot open model file " + arg.substr(1));
            is >> j;
        } else {
            j = nlohmann::json::parse(arg);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad --model json: " + std::string(e.what()));
    }
    return parse_model_spec(j);
}

int cmd_build(const ExperimentConfig& cfg_in, const fs::path& out_dir,
              const std::string& model_arg, std::optional<double> eps_min,
              std::optional<double> eps_max, std::optional<long long> m,
              std::optional<double> dt, bool keep_factors, int jobs) {
    ExperimentConfig cfg = cfg_in;
    if (!model_arg.empty()) cfg.model = parse_model_arg(model_arg);
    if (eps_min) cfg.grid.eps_min = *eps_min;
    if (eps_max) cfg.grid.eps_max = *eps_max;
    if (m) cfg.grid.m = *m;

    const auto model = make_model(cfg.model);
    const auto field = make_field(cfg.field, cfg.horizon);
    const auto [lo, hi] = detail::grid_bounds(cfg, field);
    const double step = dt.value_or(cfg.horizon / double(cfg.n_sweep.back()));
    auto tk = build_toolkit(model, make_grid(lo, hi, int(cfg.grid.m)), step, keep_factors, jobs);
    save_toolkit(tk, out_dir, model_hash(model), cfg.label);
    std::cout << "built " << tk.entries.size() << " propagators (dt=" << step << ", dim="
              << tk.dim() << ") in " << out_dir.string() << "\n";
    return kExitOk;
}

int cmd_propagate(const ExperimentConfig& cfg, SchemeKind scheme, long long n_steps,
                  const fs::path& out_csv, const std::optional<fs::path>& trajectory_csv,
                  const std::optional<fs::path>& toolkit_dir, int jobs) {
    const auto model = make_model(cfg.model);
    const auto field = make_field(cfg.field, cfg.horizon);
    const double dt = field.horizon() / double(n_steps);
    PropagateOptions opts;
    opts.record_trajectory = trajectory_csv.has_value() || cfg.trajectory;
    opts.beta_divisor = cfg.beta_divisor;
    opts.improved_low_init = cfg.improved_low_init;

    PropagationResult result = [&]() -> PropagationResult {
        switch (scheme) {
            case SchemeKind::strang:
                return propagate_strang(model, field, build_strang(model, dt), n_steps, opts);
            case SchemeKind::reference:
                return propagate_reference_fixed(model, field, n_steps, opts);
            case SchemeKind::toolkit:
            case SchemeKind::improved_low: {
                if (cfg.grid.policy == GridPolicy::exact) {
                    auto tk = build_exact_toolkit(model, field, n_steps, false, jobs);
                    if (scheme == SchemeKind::toolkit)
                        return propagate_toolkit(model, field, tk, n_steps, opts);
                    return propagate_improved_low(model, field, tk, build_correctors(model, dt),
                                                  n_steps, opts);
                }
                const auto [lo, hi] = detail::grid_bounds(cfg, field);
                const long long m = cfg.grid.policy == GridPolicy::fixed
                                        ? cfg.grid.m
                                        : detail::dt_scaled_m(cfg, field, dt);
                auto tk = toolkit_dir
                              ? load_toolkit(*toolkit_dir, model, false, jobs)
                              : build_toolkit(model, make_grid(lo, hi, int(m)), dt, false, jobs);
                if (toolkit_dir && std::abs(tk.dt - dt) > 1e-12 * std::max(1.0, dt))
                    throw ConfigError("saved toolkit dt does not match n-steps");
                if (scheme == SchemeKind::toolkit)
                    return propagate_toolkit(model, field, tk, n_steps, opts);
                return propagate_improved_low(model, field, tk, build_correctors(model, dt),
                                              n_steps, opts);
            }
            case SchemeKind::improved_high:
            case SchemeKind::quantified_high: {
                if (cfg.grid.policy == GridPolicy::exact)
                    throw ConfigError("bracket schemes need grid policy 'fixed' or 'dt_scaled'");
                const auto [lo, hi] = detail::grid_bounds(cfg, field);
                const long long m = cfg.grid.policy == GridPolicy::fixed
                                        ? cfg.grid.m
                                        : detail::dt_scaled_m(cfg, field, dt);
                auto tk = toolkit_dir
                              ? load_toolkit(*toolkit_dir, model, true, jobs)
                              : build_toolkit(model, make_grid(lo, hi, int(m)), dt, true, jobs);
                if (toolkit_dir && std::abs(tk.dt - dt) > 1e-12 * std::max(1.0, dt))
                    throw ConfigError("saved toolkit dt does not match n-steps");
                if (scheme == SchemeKind::improved_high)
                    return propagate_improved_high(model, field, tk, n_steps, opts);
                auto ptk = build_pair_toolkit(std::move(tk), cfg.alpha_grid_size, jobs);
                return propagate_quantified_high(model, field, ptk, n_steps, opts);
            }
        }
        throw ConfigError("unknown scheme");
    }();

    write_state_csv(out_csv, result.final_state);
    if (opts.record_trajectory && trajectory_csv) write_trajectory_csv(*trajectory_csv, result);
    std::cout << to_string(scheme) << ": " << n_steps << " steps, final norm "
              << result.final_state.norm() << ", applies "
              << result.cost.matrix_vector_applies << ", online exps "
              << result.cost.online_exponentials << "\n";
    return kExitOk;
}

int cmd_convergence(ExperimentConfig cfg, const fs::path& out_dir, int jobs, bool eps_sweep) {
    cfg.jobs = jobs;
    fs::create_directories(out_dir);
    const ConvergenceReport report = eps_sweep ? run_eps_sweep(cfg) : run_convergence(cfg);
    const std::string stem = eps_sweep ? "eps_sweep" : "convergence";
    write_convergence_csv(report, out_dir / (stem + ".csv"));
    write_report_metadata(report, out_dir / (stem + ".meta.json"));
    emit_plot_data(report, out_dir / (stem + "_plot.csv"));
    for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
    for (const auto& [scheme, fit] : report.fits)
        std::cout << to_string(scheme) << ": slope " << fit.slope << " (residual " << fit.residual
                  << ", " << fit.points_used << " points)\n";
    std::cout << "reference accepted at n=" << report.reference_accepted_n << " (gap "
              << report.reference_gap << ")\n";
    return kExitOk;
}

int cmd_cost_table(ExperimentConfig cfg, const fs::path& out_dir, int jobs) {
    cfg.jobs = jobs;
    fs::create_directories(out_dir);
    const auto rows = cost_to_tolerance(cfg, cfg.cost.tol);
    write_cost_csv(rows, out_dir / "cost_table.csv");
    bool all_reached = true;
    for (const auto& r : rows) {
        std::cout << to_string(r.scheme) << ": n=" << r.n_steps << " products="
                  << r.equiv_products << " m=" << r.m << " err=" << r.achieved_error
                  << (r.reached ? "" : " (tolerance unreachable)") << "\n";
        all_reached = all_reached && r.reached;
    }
    return all_reached ? kExitOk : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Precomputed-propagator solvers for driven quantum dynamics"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_arg;
    int jobs_arg = 0;

    auto add_common = [&](CLI::App* sub, const char* out_default) {
        sub->add_option("--config", config_path, "experiment config (json)");
        sub->add_option("--out", out_arg, "output path")->default_val(out_default);
        sub->add_option("--jobs", jobs_arg, "worker threads (TDSE_TOOLKIT_JOBS overrides)");
    };

    auto* build = app.add_subcommand("build", "precompute and store a propagator toolkit");
    std::optional<double> b_eps_min, b_eps_max, b_dt;
    std::optional<long long> b_m;
    std::string b_model;
    bool b_keep_factors = false;
    add_common(build, "toolkit_out");
    build->add_option("--model", b_model, "model spec: inline json or @file.json");
    build->add_option("--eps-min", b_eps_min, "grid lower bound (default: field bound)");
    build->add_option("--eps-max", b_eps_max, "grid upper bound (default: field bound)");
    build->add_option("--m", b_m, "grid cell count");
    build->add_option("--dt", b_dt, "time step");
    build->add_flag("--keep-factors", b_keep_factors, "retain spectral factors");

    auto* propagate = app.add_subcommand("propagate", "run one scheme and write the final state");
    std::string p_scheme = "toolkit";
    long long p_n = 0;
    std::string p_trajectory, p_toolkit_dir;
    add_common(propagate, "state.csv");
    propagate
        ->add_option("--scheme", p_scheme,
                     "toolkit|improved-low|improved-high|quantified-high|strang|reference")
        ->required();
    propagate->add_option("--n-steps", p_n, "number of time steps")->required();
    propagate->add_option("--trajectory", p_trajectory, "also write per-step states (csv)");
    propagate->add_option("--toolkit", p_toolkit_dir, "reuse a saved toolkit directory");

    auto* convergence = app.add_subcommand("convergence", "time-order sweep with slope fits");
    add_common(convergence, "out");
    auto* eps_sweep = app.add_subcommand("eps-sweep", "grid-order sweep with slope fits");
    add_common(eps_sweep, "out");
    auto* cost_table = app.add_subcommand("cost-table", "cheapest settings reaching a tolerance");
    add_common(cost_table, "out");

    CLI11_PARSE(app, argc, argv);

    try {
        ExperimentConfig cfg =
            config_path.empty() ? ExperimentConfig{} : load_config(config_path);
        const int jobs = resolve_jobs(jobs_arg, cfg);
        // --out falls back to the config's output_dir when not given.
        auto out_was_set = [&](CLI::App* sub) { return sub->count("--out") > 0; };
        auto pick_out = [&](CLI::App* sub) {
            return (!out_was_set(sub) && !cfg.output_dir.empty()) ? cfg.output_dir : out_arg;
        };

        if (build->parsed())
            return cmd_build(cfg, pick_out(build), b_model, b_eps_min, b_eps_max, b_m, b_dt,
                             b_keep_factors, jobs);
        if (propagate->parsed()) {
            std::optional<fs::path> traj, tk_dir;
            if (!p_trajectory.empty()) traj = p_trajectory;
            if (!p_toolkit_dir.empty()) tk_dir = p_toolkit_dir;
            return cmd_propagate(cfg, scheme_from_string(p_scheme), p_n, pick_out(propagate),
                                 traj, tk_dir, jobs);
        }
        if (convergence->parsed()) return cmd_convergence(cfg, pick_out(convergence), jobs, false);
        if (eps_sweep->parsed()) return cmd_convergence(cfg, pick_out(eps_sweep), jobs, true);
        if (cost_table->parsed()) return cmd_cost_table(cfg, pick_out(cost_table), jobs);
        return kExitConfig;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    }
}

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

#include <catch2/catch_amalgamated.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tdse/harness.hpp"

using namespace tdse;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* name) {
    auto dir = fs::temp_directory_path() / name;
    fs::create_directories(dir);
    return dir;
}

nlohmann::json small_convergence_config() {
    return nlohmann::json{
        {"label", "unit"},
        {"model", {{"kind", "rotor"}, {"j_max", 2}, {"B", 1.0}, {"mu0", 1.0}}},
        {"field", {{"kind", "sinusoid"}, {"eps_max", 0.4}, {"omega", 0.8}}},
        {"horizon", 2.0},
        {"schemes", {"toolkit", "strang"}},
        {"sweep", {{"n_steps", {8, 16, 32, 64, 128}}}},
        {"grid", {{"policy", "exact"}}},
        {"reference", {{"tol", 1e-11}, {"n_start", 1024}}},
        {"jobs", 2},
    };
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("fit_order recovers exact powers", "[harness]") {
    auto quad = fit_order({{0.1, 1e-2}, {0.05, 2.5e-3}, {0.025, 6.25e-4}});
    CHECK(quad.slope == Catch::Approx(2.0).margin(1e-12));
    CHECK(quad.residual < 1e-12);
    CHECK(quad.points_used == 3);

    auto cube = fit_order({{0.1, 1e-3}, {0.05, 1.25e-4}, {0.025, 1.5625e-5}});
    CHECK(cube.slope == Catch::Approx(3.0).margin(1e-12));

    auto flat = fit_order({{0.1, 0.5}, {0.05, 0.5}, {0.025, 0.5}});
    CHECK(flat.slope == Catch::Approx(0.0).margin(1e-12));

    CHECK_THROWS_AS(fit_order({{0.1, 1e-2}, {0.05, 2.5e-3}}), Error);
    CHECK_THROWS_AS(fit_order({{0.1, 1e-2}, {0.05, 0.0}, {0.025, -1.0}}), Error);
    CHECK(fit_order({{0.1, 1e-2}, {0.05, 2.5e-3}, {0.025, 6.25e-4}, {0.0125, 0.0}}).points_used ==
          3);
}

TEST_CASE("config parsing, defaults, and validation", "[harness]") {
    ExperimentConfig def = parse_config(nlohmann::json::object());
    CHECK(def.model.j_max == 20);
    CHECK(def.field.eps_max == 0.5);
    CHECK(def.field.omega == 0.05);
    CHECK(def.horizon == Catch::Approx(M_PI / 0.05));
    CHECK(def.grid.policy == GridPolicy::exact);
    CHECK(def.reference.tol == 1e-11);

    CHECK_THROWS_AS(parse_config({{"bogus", 1}}), ConfigError);
    CHECK_THROWS_AS(parse_config({{"model", {{"kind", "nope"}}}}), ConfigError);
    CHECK_THROWS_AS(parse_config({{"schemes", nlohmann::json::array()}}), ConfigError);

    // dt entries must divide the horizon.
    nlohmann::json bad_dt{{"horizon", 2.0}, {"sweep", {{"dt", {0.3}}}}};
    CHECK_THROWS_AS(parse_config(bad_dt), ConfigError);
    nlohmann::json good_dt{{"horizon", 2.0}, {"sweep", {{"dt", {0.25, 0.125}}}}};
    auto cfg = parse_config(good_dt);
    REQUIRE(cfg.n_sweep.size() == 2);
    CHECK(cfg.n_sweep[0] == 8);
    CHECK(cfg.n_sweep[1] == 16);

    nlohmann::json geo{{"horizon", 2.0},
                       {"sweep", {{"geometric_dt", {{"start", 0.25}, {"ratio", 0.5}, {"count", 3}}}}}};
    CHECK(parse_config(geo).n_sweep == std::vector<long long>{8, 16, 32});
}

TEST_CASE("convergence run fits sane slopes and is deterministic", "[harness]") {
    auto cfg = parse_config(small_convergence_config());
    auto report = run_convergence(cfg);

    REQUIRE(report.rows.size() == 10);
    const auto* tk_fit = report.fit_for(SchemeKind::toolkit);
    const auto* st_fit = report.fit_for(SchemeKind::strang);
    REQUIRE(tk_fit != nullptr);
    REQUIRE(st_fit != nullptr);
    CHECK(tk_fit->slope > 1.5);
    CHECK(tk_fit->slope < 2.5);
    CHECK(st_fit->slope > 1.5);
    CHECK(st_fit->slope < 2.5);
    CHECK(report.reference_gap < 1e-11);

    auto dir = temp_dir("tdse_harness_conv");
    write_convergence_csv(report, dir / "a.csv");
    auto report2 = run_convergence(cfg);
    write_convergence_csv(report2, dir / "b.csv");
    CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));

    emit_plot_data(report, dir / "plot.csv");
    CHECK(fs::exists(dir / "plot.csv"));
    CHECK(fs::exists(dir / "plot.csv.meta.json"));
    nlohmann::json meta;
    std::ifstream(dir / "plot.csv.meta.json") >> meta;
    CHECK(meta.at("fits").contains("toolkit"));
}

TEST_CASE("eps sweep slope and saturation handling", "[harness]") {
    nlohmann::json j{
        {"label", "unit-eps"},
        {"model", {{"kind", "rotor"}, {"j_max", 2}, {"B", 1.0}, {"mu0", 1.0}}},
        {"field", {{"kind", "sinusoid"}, {"eps_max", 0.4}, {"omega", 0.8}}},
        {"horizon", 2.0},
        {"schemes", {"toolkit"}},
        {"grid", {{"policy", "fixed"}}},
        {"eps_sweep", {{"n_steps", 4096}, {"m_list", {8, 16, 32, 64, 128}}}},
        {"reference", {{"tol", 1e-11}, {"n_start", 1024}}},
        {"jobs", 2},
    };
    auto report = run_eps_sweep(parse_config(j));
    REQUIRE(report.rows.size() == 5);
    const auto* fit = report.fit_for(SchemeKind::toolkit);
    REQUIRE(fit != nullptr);
    // Fine grids superconverge once many steps fall inside one cell, so the
    // sanity window here is wider than the first-order asymptotic regime.
    CHECK(fit->slope > 0.5);
    CHECK(fit->slope < 1.9);
    for (const auto& row : report.rows) CHECK(row.error <= 2.0);
}

TEST_CASE("eps sweep is flat for on-grid plateaus", "[harness]") {
    auto dir = temp_dir("tdse_harness_pw");
    {
        std::ofstream csv(dir / "field.csv");
        csv << "t,eps\n0,0\n1.0,0.4\n";
    }
    nlohmann::json j{
        {"label", "unit-pw"},
        {"model", {{"kind", "rotor"}, {"j_max", 2}, {"B", 1.0}, {"mu0", 1.0}}},
        {"field", {{"kind", "piecewise"}, {"path", (dir / "field.csv").string()}}},
        {"horizon", 2.0},
        {"schemes", {"toolkit"}},
        {"grid", {{"policy", "fixed"}}},
        {"eps_sweep", {{"n_steps", 64}, {"m_list", {4, 8, 16}}}},
        {"reference", {{"tol", 1e-11}, {"n_start", 64}}},
    };
    auto report = run_eps_sweep(parse_config(j));
    // Plateau values 0 and 0.4 are nodes of every tested grid, so the scheme
    // is exact regardless of d_eps; all rows sit below the fit floor.
    for (const auto& row : report.rows) CHECK(row.error <= 1e-11);
    CHECK(report.fit_for(SchemeKind::toolkit) == nullptr);
    REQUIRE_FALSE(report.warnings.empty());
}

TEST_CASE("cost search at the trivial tolerance picks minimal settings", "[harness]") {
    nlohmann::json j{
        {"label", "unit-cost"},
        {"model", {{"kind", "rotor"}, {"j_max", 2}, {"B", 1.0}, {"mu0", 1.0}}},
        {"field", {{"kind", "sinusoid"}, {"eps_max", 0.4}, {"omega", 0.8}}},
        {"horizon", 2.0},
        {"schemes", {"toolkit", "improved-low", "improved-high", "quantified-high", "strang"}},
        {"alpha_grid_size", 10},
        {"cost",
         {{"tol", 2.0}, {"n_min", 8}, {"n_cap", 64}, {"m_min", 4}, {"m_cap", 16},
          {"reference_tol", 1e-6}, {"reference_n_start", 64}}},
    };
    auto rows = cost_to_tolerance(parse_config(j), 2.0);
    REQUIRE(rows.size() == 5);
    for (const auto& r : rows) {
        CHECK(r.reached);
        CHECK(r.n_steps == 8);
    }
    for (size_t i = 0; i + 1 < rows.size(); ++i)
        CHECK(rows[i].equiv_products <= rows[i + 1].equiv_products);
}

TEST_CASE("cost search reports modest tolerances and unreachable caps", "[harness]") {
    nlohmann::json j{
        {"label", "unit-cost2"},
        {"model", {{"kind", "rotor"}, {"j_max", 2}, {"B", 1.0}, {"mu0", 1.0}}},
        {"field", {{"kind", "sinusoid"}, {"eps_max", 0.4}, {"omega", 0.8}}},
        {"horizon", 2.0},
        {"schemes", {"toolkit", "strang"}},
        {"cost",
         {{"tol", 1e-3}, {"n_min", 8}, {"n_cap", 4096}, {"m_min", 4}, {"m_cap", 256},
          {"reference_tol", 1e-7}, {"reference_n_start", 256}}},
    };
    auto cfg = parse_config(j);
    auto rows = cost_to_tolerance(cfg, 1e-3);
    for (const auto& r : rows) {
        CHECK(r.reached);
        CHECK(r.achieved_error <= 1e-3);
    }

    auto tight = cost_to_tolerance(cfg, 1e-9);
    bool any_unreached = false;
    for (const auto& r : tight) any_unreached = any_unreached || !r.reached;
    CHECK(any_unreached);
}

TEST_CASE("empty reports refuse to emit", "[harness]") {
    ConvergenceReport empty;
    CHECK_THROWS_AS(emit_plot_data(empty, fs::temp_directory_path() / "nope.csv"), Error);
    CHECK_FALSE(fs::exists(fs::temp_directory_path() / "nope.csv"));
}

TEST_CASE("cli smoke test", "[cli]") {
    const char* bin = std::getenv("TDSE_TOOLKIT_BIN");
    if (!bin) {
        SUCCEED("TDSE_TOOLKIT_BIN not set; run through ctest");
        return;
    }
    auto dir = temp_dir("tdse_cli_smoke");
    const auto cfg_path = dir / "cfg.json";
    {
        std::ofstream os(cfg_path);
        os << small_convergence_config().dump(2);
    }
    const auto state = dir / "state.csv";
    std::string cmd = std::string(bin) + " propagate --config " + cfg_path.string() +
                      " --scheme toolkit --n-steps 16 --out " + state.string() + " > " +
                      (dir / "log.txt").string() + " 2>&1";
    CHECK(std::system(cmd.c_str()) == 0);
    CHECK(fs::exists(state));
    CHECK(slurp(state).rfind("index,re,im", 0) == 0);

    {
        std::ofstream os(cfg_path);
        os << R"({"bogus": true})";
    }
    const int rc = std::system(cmd.c_str());
    CHECK(WEXITSTATUS(rc) == 1);
}

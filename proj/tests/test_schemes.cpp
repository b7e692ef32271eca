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

#include "tdse/schemes.hpp"

using namespace tdse;

namespace {

QuantumModel scalar_model(double h0, double mu) {
    Matrix h(1, 1), m(1, 1);
    h(0, 0) = h0;
    m(0, 0) = mu;
    return QuantumModel(HermitianOperator(h), HermitianOperator(m), StateVector::basis_state(1, 0),
                        "scalar");
}

QuantumModel diagonal_model() {
    Matrix h = Matrix::Zero(3, 3), m = Matrix::Zero(3, 3);
    h.diagonal() << 0.0, 1.3, 2.9;
    m.diagonal() << 0.4, -0.2, 0.7;
    Vector psi(3);
    psi << 0.6, Complex(0.0, 0.8), 0.0;
    return QuantumModel(HermitianOperator(h), HermitianOperator(m), StateVector(psi), "diag");
}

StateVector exact_constant_evolution(const QuantumModel& model, double eps, double t) {
    Matrix h = model.h0().entries() - eps * model.mu().entries();
    auto f = spectral_factorize(HermitianOperator(h));
    return apply_evolution(f, t, model.psi0());
}

double state_distance(const StateVector& a, const StateVector& b) {
    return (a.amplitudes() - b.amplitudes()).norm();
}

}  // namespace

TEST_CASE("toolkit stepping is exact on a grid-value constant field", "[schemes]") {
    auto model = build_rigid_rotor(4, 1.0, 1.0);
    auto grid = make_grid(0.0, 0.4, 8);
    const double eps = grid.values[3];
    const double horizon = 3.0;
    auto field = ControlField::piecewise({0.0}, {eps}, horizon);

    for (long long n : {1, 7, 64}) {
        auto tk = build_toolkit(model, grid, horizon / double(n));
        auto r = propagate_toolkit(model, field, tk, n);
        CHECK(state_distance(r.final_state, exact_constant_evolution(model, eps, horizon)) <=
              1e-12);
    }
}

TEST_CASE("toolkit stepping is exact on aligned on-grid plateaus", "[schemes]") {
    auto model = build_rigid_rotor(4, 1.0, 1.0);
    auto grid = make_grid(0.0, 0.4, 8);
    const double horizon = 4.0;
    // Plateau switches at multiples of dt for every n used below.
    auto field = ControlField::piecewise({0.0, 1.0, 2.0, 3.0},
                                         {grid.values[2], grid.values[5], grid.values[8],
                                          grid.values[1]},
                                         horizon);
    auto reference = solve_reference(model, field, 1e-11, 16);
    auto tk = build_toolkit(model, grid, horizon / 16.0);
    auto r = propagate_toolkit(model, field, tk, 16);
    CHECK(state_distance(r.final_state, reference.result.final_state) <= 1e-12);
    CHECK(reference.accepted_n == 16);  // already exact at the first rung
}

TEST_CASE("improved-low equals toolkit when the correctors vanish", "[schemes]") {
    auto model = build_rigid_rotor(4, 1.0, 1.0);
    auto grid = make_grid(0.0, 0.4, 8);
    const double eps = grid.values[5];
    auto field = ControlField::piecewise({0.0}, {eps}, 2.0);
    auto tk = build_toolkit(model, grid, 0.125);
    auto corr = build_correctors(model, 0.125);

    auto plain = propagate_toolkit(model, field, tk, 16);
    auto improved = propagate_improved_low(model, field, tk, corr, 16);
    CHECK(state_distance(plain.final_state, improved.final_state) <= 1e-13);
    CHECK(state_distance(improved.final_state, exact_constant_evolution(model, eps, 2.0)) <=
          1e-12);
}

TEST_CASE("improved-low on a commuting model with a linear ramp", "[schemes]") {
    // [H0, mu] = 0 kills the omega corrector and a linear field kills the
    // second-difference, so the corrected scheme collapses onto the plain one.
    auto model = diagonal_model();
    auto field = ControlField::tabulated({0.0, 2.0}, {0.1, 0.3}, Interpolation::linear, 2.0);
    auto grid = make_grid(0.0, 0.4, 16);
    auto tk = build_toolkit(model, grid, 0.25);
    auto corr = build_correctors(model, 0.25);

    auto plain = propagate_toolkit(model, field, tk, 8);
    auto improved = propagate_improved_low(model, field, tk, corr, 8);
    CHECK(state_distance(plain.final_state, improved.final_state) <= 1e-13);
}

TEST_CASE("improved-high reduces to toolkit on grid nodes", "[schemes]") {
    auto model = build_rigid_rotor(4, 1.0, 1.0);
    auto grid = make_grid(0.0, 0.4, 8);
    const double eps = grid.values[5];
    auto field = ControlField::piecewise({0.0}, {eps}, 2.0);
    auto tk = build_toolkit(model, grid, 0.25, true);

    auto plain = propagate_toolkit(model, field, tk, 8);
    auto high = propagate_improved_high(model, field, tk, 8);
    CHECK(state_distance(plain.final_state, high.final_state) <= 1e-12);
}

TEST_CASE("improved-high is exact for scalar off-grid constants", "[schemes]") {
    auto model = scalar_model(2.0, 1.0);
    const double eps = 0.3;  // strictly between the nodes of a m=1 grid
    auto field = ControlField::piecewise({0.0}, {eps}, 2.0);
    auto tk = build_toolkit(model, make_grid(0.0, 1.0, 1), 0.25, true);
    auto r = propagate_improved_high(model, field, tk, 8);
    CHECK(state_distance(r.final_state, exact_constant_evolution(model, eps, 2.0)) <= 1e-12);
}

TEST_CASE("strang free evolution and commuting exactness", "[schemes]") {
    auto model = build_rigid_rotor(4, 1.0, 1.0);
    auto zero_field = ControlField::piecewise({0.0}, {0.0}, 2.0);
    auto ws = build_strang(model, 0.25);
    auto r = propagate_strang(model, zero_field, ws, 8);
    CHECK(state_distance(r.final_state, exact_constant_evolution(model, 0.0, 2.0)) <= 1e-12);

    // With [H0, mu] = 0 the three factors merge; any sign slip in the field
    // factor would show up immediately.
    auto dmodel = diagonal_model();
    auto dfield = ControlField::piecewise({0.0}, {0.35}, 2.0);
    auto dws = build_strang(dmodel, 0.25);
    auto dr = propagate_strang(dmodel, dfield, dws, 8);
    CHECK(state_distance(dr.final_state, exact_constant_evolution(dmodel, 0.35, 2.0)) <= 1e-12);
}

TEST_CASE("quantified stepping matches improved-high on its alpha grid", "[schemes]") {
    auto model = build_rigid_rotor(3, 1.0, 1.0);
    auto grid = make_grid(0.0, 0.4, 4);
    // Constant field whose bracket weight is exactly 0.25 = 1/4 of a cell.
    const double eps = grid.values[1] + 0.75 * grid.d_eps;
    auto field = ControlField::piecewise({0.0}, {eps}, 2.0);
    auto tk = build_toolkit(model, grid, 0.25, true);
    auto high = propagate_improved_high(model, field, tk, 8);

    auto ptk = build_pair_toolkit(std::move(tk), 5);  // alpha grid 0, .25, .5, .75, 1
    auto quant = propagate_quantified_high(model, field, ptk, 8);
    CHECK(state_distance(high.final_state, quant.final_state) <= 1e-12);
    CHECK(quant.cost.matrix_vector_applies == 8);
    CHECK(quant.cost.online_exponentials == 0);
}

TEST_CASE("reference solver on constant and smooth fields", "[schemes]") {
    auto model = build_rigid_rotor(3, 1.0, 1.0);
    auto field = ControlField::piecewise({0.0}, {0.3}, 2.0);
    for (long long n : {1, 5, 32}) {
        auto r = propagate_reference_fixed(model, field, n);
        CHECK(state_distance(r.final_state, exact_constant_evolution(model, 0.3, 2.0)) <= 1e-13);
    }

    auto sine = ControlField::sinusoid(0.4, 0.8, 2.0);
    auto sol = solve_reference(model, sine, 1e-11, 16);
    REQUIRE(sol.richardson.size() >= 3);
    CHECK(sol.richardson.back().second < 1e-11);
    // Second-order rule: each doubling divides the gap by about four.
    for (size_t i = 0; i + 1 < sol.richardson.size(); ++i) {
        const double gap = sol.richardson[i].second;
        const double next = sol.richardson[i + 1].second;
        if (next > 1e-10) {
            const double ratio = gap / next;
            CHECK(ratio > 3.0);
            CHECK(ratio < 5.0);
        }
    }
}

TEST_CASE("reference solver reports an unreachable tolerance", "[schemes]") {
    auto model = build_rigid_rotor(3, 1.0, 1.0);
    auto sine = ControlField::sinusoid(0.4, 0.8, 2.0);
    CHECK_THROWS_AS(solve_reference(model, sine, 1e-13, 4, 64), ReferenceError);
}

TEST_CASE("per-step cost counters per scheme", "[schemes]") {
    auto model = build_rigid_rotor(3, 1.0, 1.0);
    auto field = ControlField::sinusoid(0.4, 0.2, 2.0);
    auto grid = make_grid(0.0, 0.4, 8);
    const long long n = 8;
    const double dt = 0.25;
    auto tk = build_toolkit(model, grid, dt, true);
    auto corr = build_correctors(model, dt);

    auto r_tk = propagate_toolkit(model, field, tk, n);
    CHECK(r_tk.cost.matrix_vector_applies == n);
    CHECK(r_tk.cost.online_exponentials == 0);
    CHECK(r_tk.cost.steps == n);
    CHECK(r_tk.cost.toolkit_entries_used <= 9);

    auto r_low = propagate_improved_low(model, field, tk, corr, n);
    CHECK(r_low.cost.matrix_vector_applies == 3 * n);
    CHECK(r_low.cost.online_exponentials == 2 * n);

    auto r_high = propagate_improved_high(model, field, tk, n);
    CHECK(r_high.cost.matrix_vector_applies == 2 * n);
    CHECK(r_high.cost.online_exponentials == 2 * n);

    auto ws = build_strang(model, dt);
    auto r_st = propagate_strang(model, field, ws, n);
    CHECK(r_st.cost.matrix_vector_applies == 3 * n);
    CHECK(r_st.cost.online_exponentials == n);

    auto ptk = build_pair_toolkit(std::move(tk), 10);
    auto r_q = propagate_quantified_high(model, field, ptk, n);
    CHECK(r_q.cost.matrix_vector_applies == n);
    CHECK(r_q.cost.online_exponentials == 0);

    auto r_ref = propagate_reference_fixed(model, field, n);
    CHECK(r_ref.cost.matrix_vector_applies == n);
    CHECK(r_ref.cost.online_exponentials == n);
    CHECK(r_ref.cost.eigendecompositions == n);
}

TEST_CASE("norm conservation across schemes", "[schemes]") {
    auto model = build_rigid_rotor(6, 1.0, 1.0);
    auto field = ControlField::sinusoid(0.4, 0.2, 8.0);
    const long long n = 256;
    const double dt = 8.0 / double(n);
    auto tk = build_toolkit(model, make_grid(0.0, 0.4, 16), dt, true);
    auto corr = build_correctors(model, dt);
    auto ws = build_strang(model, dt);

    auto check_norm = [&](const PropagationResult& r) {
        CHECK(std::abs(r.final_state.norm() - 1.0) <= 1e-10 * double(n));
    };
    check_norm(propagate_toolkit(model, field, tk, n));
    check_norm(propagate_improved_low(model, field, tk, corr, n));
    check_norm(propagate_improved_high(model, field, tk, n));
    check_norm(propagate_strang(model, field, ws, n));
    check_norm(propagate_reference_fixed(model, field, n));
}

TEST_CASE("trajectory recording", "[schemes]") {
    auto model = build_rigid_rotor(3, 1.0, 1.0);
    auto field = ControlField::sinusoid(0.4, 0.2, 2.0);
    auto tk = build_toolkit(model, make_grid(0.0, 0.4, 8), 0.25);
    PropagateOptions opts;
    opts.record_trajectory = true;
    auto r = propagate_toolkit(model, field, tk, 8, opts);
    REQUIRE(r.trajectory.size() == 9);
    CHECK(state_distance(r.trajectory.front(), model.psi0()) == 0.0);
    CHECK(state_distance(r.trajectory.back(), r.final_state) == 0.0);
}

TEST_CASE("horizon overrun is rejected", "[schemes]") {
    auto model = build_rigid_rotor(3, 1.0, 1.0);
    auto field = ControlField::sinusoid(0.4, 0.2, 2.0);
    auto tk = build_toolkit(model, make_grid(0.0, 0.4, 8), 0.25);
    CHECK_THROWS_AS(propagate_toolkit(model, field, tk, 9), HorizonError);
}

TEST_CASE("exact toolkit stepping matches the reference rule step count", "[schemes]") {
    auto model = build_rigid_rotor(3, 1.0, 1.0);
    auto field = ControlField::sinusoid(0.4, 0.2, 2.0);
    auto tk = build_exact_toolkit(model, field, 16);
    auto r = propagate_toolkit(model, field, tk, 16);
    auto ref = propagate_reference_fixed(model, field, 16);
    CHECK(state_distance(r.final_state, ref.final_state) <= 1e-13);
    CHECK(r.d_eps == 0.0);
    CHECK_THROWS_AS(propagate_toolkit(model, field, tk, 8), ConfigError);
}

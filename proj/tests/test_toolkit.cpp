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
#include <filesystem>
#include <random>

#include "tdse/quantum_model.hpp"
#include "tdse/toolkit.hpp"

using namespace tdse;

namespace {

QuantumModel scalar_model(double h0, double mu) {
    Matrix h(1, 1), m(1, 1);
    h(0, 0) = h0;
    m(0, 0) = mu;
    return QuantumModel(HermitianOperator(h), HermitianOperator(m), StateVector::basis_state(1, 0),
                        "scalar");
}

double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("toolkit on a scalar model matches closed-form phases", "[toolkit]") {
    auto model = scalar_model(2.0, 1.0);
    auto tk = build_toolkit(model, make_grid(0.0, 1.0, 1), 0.5);
    REQUIRE(tk.entries.size() == 2);
    CHECK(std::abs(tk.entries[0].entries()(0, 0) - std::polar(1.0, -1.0)) < 1e-14);
    CHECK(std::abs(tk.entries[1].entries()(0, 0) - std::polar(1.0, -0.5)) < 1e-14);
    CHECK(tk.build_cost.eigendecompositions == 2);
}

TEST_CASE("toolkit accepts a degenerate single-value grid", "[toolkit]") {
    auto model = scalar_model(2.0, 1.0);
    auto tk = build_toolkit(model, FieldGrid::single(0.25), 0.5);
    REQUIRE(tk.entries.size() == 1);
    CHECK(std::abs(tk.entries[0].entries()(0, 0) - std::polar(1.0, -0.875)) < 1e-14);
    CHECK(nearest_index(tk.grid, 0.3) == 0);
}

TEST_CASE("toolkit entries are unitary and eigenphase-consistent", "[toolkit]") {
    auto model = build_rigid_rotor(3, 1.0, 1.0);
    auto tk = build_toolkit(model, make_grid(-0.5, 0.5, 16), 0.37, true, 2);
    REQUIRE(tk.entries.size() == 17);
    for (size_t l = 0; l < tk.entries.size(); ++l) {
        CHECK(unitarity_defect(tk.entries[l].entries()) <= 1e-12);
        const auto& f = *tk.factors[l];
        for (int k = 0; k < model.dim(); ++k) {
            Vector expected = std::polar(1.0, -0.37 * f.eigenvalues[k]) * f.eigenvectors.col(k);
            Vector actual = tk.entries[l].entries() * f.eigenvectors.col(k);
            CHECK((actual - expected).norm() <= 1e-10);
        }
    }
}

TEST_CASE("toolkit entries satisfy the one-step semigroup law", "[toolkit]") {
    auto model = build_rigid_rotor(3, 1.0, 1.0);
    auto grid = make_grid(-0.5, 0.5, 4);
    auto tk1 = build_toolkit(model, grid, 0.4);
    auto tk2 = build_toolkit(model, grid, 0.8);
    for (size_t l = 0; l < tk1.entries.size(); ++l) {
        Matrix sq = tk1.entries[l].entries() * tk1.entries[l].entries();
        CHECK(max_abs(sq - tk2.entries[l].entries()) <= 1e-10);
    }
}

TEST_CASE("toolkit entry gap scales with the grid step", "[toolkit]") {
    auto model = build_rigid_rotor(4, 1.0, 1.0);
    auto gap = [&](int m) {
        auto tk = build_toolkit(model, make_grid(-0.5, 0.5, m), 0.25);
        double worst = 0.0;
        for (size_t l = 0; l + 1 < tk.entries.size(); ++l)
            worst = std::max(worst,
                             max_abs(tk.entries[l + 1].entries() - tk.entries[l].entries()));
        return worst;
    };
    const double ratio = gap(8) / gap(16);
    CHECK(ratio > 1.4);
    CHECK(ratio < 2.6);
}

TEST_CASE("corrector powers vanish for commuting pairs", "[toolkit]") {
    Matrix h = Matrix::Zero(3, 3), m = Matrix::Zero(3, 3);
    h.diagonal() << 1.0, 2.0, 3.0;
    m.diagonal() << 0.5, -0.25, 0.125;
    QuantumModel model(HermitianOperator(h), HermitianOperator(m), StateVector::basis_state(3, 0),
                       "diag");
    auto corr = build_correctors(model, 1.0);
    for (double a : {-2.0, 0.3, 1.0})
        CHECK(max_abs(corr.omega_power(a).entries() - Matrix::Identity(3, 3)) <= 1e-13);

    // Theta on a diagonal dipole is a pure phase ramp exp(i b d_k / 24).
    auto theta = corr.theta_power(0.7);
    for (int k = 0; k < 3; ++k) {
        const Complex expected = std::polar(1.0, 0.7 * m(k, k).real() / 24.0);
        CHECK(std::abs(theta.entries()(k, k) - expected) < 1e-14);
    }
}

TEST_CASE("corrector magnitude scales with dt^3", "[toolkit]") {
    auto model = build_rigid_rotor(4, 1.0, 1.0);
    auto omega_dist = [&](double dt) {
        auto corr = build_correctors(model, dt);
        return max_abs(corr.omega_power(1.0).entries() - Matrix::Identity(model.dim(), model.dim()));
    };
    const double ratio = omega_dist(0.2) / omega_dist(0.1);
    CHECK(ratio > 6.4);
    CHECK(ratio < 9.6);
}

TEST_CASE("corrector powers form a one-parameter group", "[toolkit]") {
    auto model = build_rigid_rotor(4, 1.0, 1.0);
    auto corr = build_correctors(model, 0.5);
    CHECK(max_abs(corr.omega_power(0.0).entries() - Matrix::Identity(5, 5)) <= 1e-13);
    CHECK(max_abs(corr.theta_power(0.0).entries() - Matrix::Identity(5, 5)) <= 1e-13);
    for (double a : {-10.0, -1.7, 2.4, 10.0})
        CHECK(unitarity_defect(corr.omega_power(a).entries()) <= 1e-12);
    for (double b : {-10.0, 0.9, 10.0})
        CHECK(unitarity_defect(corr.theta_power(b).entries()) <= 1e-12);

    Matrix lhs = corr.omega_power(1.3).entries() * corr.omega_power(-0.45).entries();
    Matrix rhs = corr.omega_power(0.85).entries();
    CHECK(max_abs(lhs - rhs) <= 1e-12);
}

TEST_CASE("fractional powers come from the generator", "[toolkit]") {
    auto model = build_rigid_rotor(5, 1.0, 1.0);
    auto tk = build_toolkit(model, make_grid(-0.5, 0.5, 8), 0.3, true);

    CHECK(max_abs(fractional_power(tk, 3, 1.0).entries() - tk.entries[3].entries()) <= 1e-13);
    CHECK(max_abs(fractional_power(tk, 3, 0.0).entries() -
                  Matrix::Identity(model.dim(), model.dim())) <= 1e-13);

    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int trial = 0; trial < 25; ++trial) {
        const int l = int(unif(rng) * 8.99);
        const double a = unif(rng);
        Matrix prod = fractional_power(tk, l, a).entries() *
                      fractional_power(tk, l, 1.0 - a).entries();
        CHECK(max_abs(prod - tk.entries[size_t(l)].entries()) <= 1e-12);
    }

    CHECK_THROWS_AS(fractional_power(tk, 3, 1.5), ConfigError);
    auto bare = build_toolkit(model, make_grid(-0.5, 0.5, 8), 0.3, false);
    CHECK_THROWS_AS(fractional_power(bare, 3, 0.5), Error);
}

TEST_CASE("pair toolkit endpoints and scalar closed form", "[toolkit]") {
    auto model = build_rigid_rotor(3, 1.0, 1.0);
    auto tk = build_toolkit(model, make_grid(-0.5, 0.5, 4), 0.3, true);
    auto ptk = build_pair_toolkit(std::move(tk), 2);
    REQUIRE(ptk.combos.size() == 4);
    for (size_t l = 0; l < ptk.combos.size(); ++l) {
        CHECK(max_abs(ptk.combos[l][0].entries() - ptk.base.entries[l + 1].entries()) <= 1e-12);
        CHECK(max_abs(ptk.combos[l][1].entries() - ptk.base.entries[l].entries()) <= 1e-12);
    }
    CHECK(ptk.build_cost.matrix_matrix_products == 8);

    auto scal = scalar_model(2.0, 1.0);
    auto stk = build_toolkit(scal, make_grid(0.0, 1.0, 1), 0.5, true);
    auto sptk = build_pair_toolkit(std::move(stk), 11);
    const double lam0 = 2.0, lam1 = 1.0;  // generator values at the two grid nodes
    for (int k = 0; k < 11; ++k) {
        const double a = k / 10.0;
        const Complex expected = std::polar(1.0, -0.5 * (a * lam0 + (1.0 - a) * lam1));
        CHECK(std::abs(sptk.combos[0][size_t(k)].entries()(0, 0) - expected) < 1e-13);
    }
}

TEST_CASE("alpha snapping is nearest with lower ties", "[toolkit]") {
    auto model = scalar_model(1.0, 1.0);
    auto tk = build_toolkit(model, make_grid(0.0, 1.0, 1), 0.5, true);
    auto ptk = build_pair_toolkit(std::move(tk), 5);  // grid 0, .25, .5, .75, 1
    CHECK(snap_alpha_index(ptk, 0.0) == 0);
    CHECK(snap_alpha_index(ptk, 0.3) == 1);
    CHECK(snap_alpha_index(ptk, 0.375) == 1);  // exact tie, lower index
    CHECK(snap_alpha_index(ptk, 0.4) == 2);
    CHECK(snap_alpha_index(ptk, 1.0) == 4);
}

TEST_CASE("toolkit persistence round-trips through the manifest", "[toolkit]") {
    auto dir = std::filesystem::temp_directory_path() / "tdse_toolkit_test";
    std::filesystem::remove_all(dir);
    auto model = build_rigid_rotor(3, 1.0, 1.0);
    auto tk = build_toolkit(model, make_grid(-0.4, 0.4, 6), 0.21, false);
    save_toolkit(tk, dir, model_hash(model), "unit");

    auto loaded = load_toolkit(dir, model, true);
    REQUIRE(loaded.entries.size() == tk.entries.size());
    CHECK(loaded.dt == tk.dt);
    CHECK(loaded.grid.m == tk.grid.m);
    for (size_t l = 0; l < tk.entries.size(); ++l)
        CHECK(max_abs(loaded.entries[l].entries() - tk.entries[l].entries()) == 0.0);
    CHECK(loaded.has_factors());
    CHECK(max_abs(fractional_power(loaded, 2, 1.0).entries() - tk.entries[2].entries()) <= 1e-13);

    auto other = build_rigid_rotor(3, 1.0, 0.9);
    CHECK_THROWS_WITH(load_toolkit(dir, other),
                      Catch::Matchers::ContainsSubstring("different model"));
}

TEST_CASE("exact toolkit matches per-step midpoint generators", "[toolkit]") {
    auto model = scalar_model(2.0, 1.0);
    auto field = ControlField::sinusoid(0.5, 0.05, 10.0);
    auto tk = build_exact_toolkit(model, field, 4);
    REQUIRE(tk.entries.size() == 4);
    for (int j = 0; j < 4; ++j) {
        const double eps = field.evaluate((j + 0.5) * 2.5);
        const Complex expected = std::polar(1.0, -2.5 * (2.0 - eps));
        CHECK(std::abs(tk.entries[size_t(j)].entries()(0, 0) - expected) < 1e-13);
    }
}

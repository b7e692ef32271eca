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

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <sstream>
#include <string>
#include <utility>

#include "tdse/matrix_io.hpp"
#include "tdse/operator_core.hpp"

namespace tdse {

/// The finite-dimensional model triple (H0, mu, psi0) of a driven system:
/// field-free Hamiltonian, dipole operator, and unit-norm initial state,
/// all sharing one dimension.
class QuantumModel {
public:
    QuantumModel(HermitianOperator h0, HermitianOperator mu, StateVector psi0, std::string label)
        : h0_(std::move(h0)), mu_(std::move(mu)), psi0_(std::move(psi0)), label_(std::move(label)) {
        if (h0_.dim() != mu_.dim() || h0_.dim() != psi0_.dim())
            throw DimensionError("QuantumModel: H0, mu, psi0 dimensions differ");
        if (std::abs(psi0_.norm() - 1.0) > 1e-12)
            throw Error("QuantumModel: psi0 must have unit norm");
    }

    int dim() const { return h0_.dim(); }
    const HermitianOperator& h0() const { return h0_; }
    const HermitianOperator& mu() const { return mu_; }
    const StateVector& psi0() const { return psi0_; }
    const std::string& label() const { return label_; }

private:
    HermitianOperator h0_;
    HermitianOperator mu_;
    StateVector psi0_;
    std::string label_;
};

/// Rigid-rotor ladder truncated at j_max (m = 0 column of the full angular
/// basis): H0 = diag(B j(j+1)) and a tridiagonal dipole with couplings
/// mu0 (j+1)/sqrt((2j+1)(2j+3)), started from the ground state.
inline QuantumModel build_rigid_rotor(int j_max, double b_rot, double mu0) {
    if (j_max < 1)
        throw ConfigError("build_rigid_rotor: j_max must be >= 1 (the control term vanishes)");
    if (!(b_rot > 0.0)) throw ConfigError("build_rigid_rotor: B must be positive");
    if (mu0 == 0.0) throw ConfigError("build_rigid_rotor: mu0 must be nonzero");

    const int d = j_max + 1;
    Matrix h0 = Matrix::Zero(d, d);
    Matrix mu = Matrix::Zero(d, d);
    for (int j = 0; j <= j_max; ++j) {
        h0(j, j) = b_rot * j * (j + 1);
        if (j < j_max) {
            const double c = mu0 * (j + 1) / std::sqrt(double(2 * j + 1) * double(2 * j + 3));
            mu(j, j + 1) = c;
            mu(j + 1, j) = c;
        }
    }
    std::ostringstream label;
    label << "rotor(j_max=" << j_max << ",B=" << b_rot << ",mu0=" << mu0 << ")";
    return QuantumModel(HermitianOperator(std::move(h0)), HermitianOperator(std::move(mu)),
                        StateVector::basis_state(d, 0), label.str());
}

namespace detail {

// Box-Muller on top of mt19937_64 so that models are reproducible from the
// seed alone, independently of the standard library's distribution choices.
class GaussianStream {
public:
    explicit GaussianStream(std::uint64_t seed) : rng_(seed) {}

    double next() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u = (double(rng_() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
        const double v = double(rng_() >> 11) * 0x1.0p-53;          // [0, 1)
        const double r = std::sqrt(-2.0 * std::log(u));
        spare_ = r * std::sin(2.0 * M_PI * v);
        have_spare_ = true;
        return r * std::cos(2.0 * M_PI * v);
    }

    Complex next_complex() {
        const double re = next();
        return {re, next()};
    }

private:
    std::mt19937_64 rng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

inline Matrix random_hermitian(GaussianStream& g, int dim) {
    Matrix a(dim, dim);
    for (int r = 0; r < dim; ++r)
        for (int c = 0; c < dim; ++c) a(r, c) = g.next_complex();
    return 0.5 * (a + a.adjoint()).eval();
}

}  // namespace detail

/// Deterministic-from-seed random model: Gaussian Hermitian H0 and mu,
/// random unit psi0. Intended as a property-test fixture.
inline QuantumModel random_model(int dim, std::uint64_t seed) {
    if (dim < 2) throw ConfigError("random_model: dim must be >= 2");
    detail::GaussianStream g(seed);
    Matrix h0 = detail::random_hermitian(g, dim);
    Matrix mu = detail::random_hermitian(g, dim);
    Vector psi(dim);
    for (int r = 0; r < dim; ++r) psi[r] = g.next_complex();
    psi /= psi.norm();
    std::ostringstream label;
    label << "random(dim=" << dim << ",seed=" << seed << ")";
    return QuantumModel(HermitianOperator(std::move(h0)), HermitianOperator(std::move(mu)),
                        StateVector(std::move(psi)), label.str());
}

inline void save_model(const QuantumModel& model, const std::filesystem::path& h0_path,
                       const std::filesystem::path& mu_path,
                       const std::filesystem::path& psi0_path) {
    save_matrix(h0_path, model.h0().entries());
    save_matrix(mu_path, model.mu().entries());
    save_vector(psi0_path, model.psi0().amplitudes());
}

/// Ingest a model from three text files. The initial state is renormalized
/// when its norm is within 1e-6 of unity and rejected otherwise; hermiticity
/// defects above 1e-10 are reported with their magnitude.
inline QuantumModel load_model(const std::filesystem::path& h0_path,
                               const std::filesystem::path& mu_path,
                               const std::filesystem::path& psi0_path) {
    Matrix h0 = load_matrix(h0_path);
    Matrix mu = load_matrix(mu_path);
    Vector psi = load_vector(psi0_path);
    if (h0.rows() != mu.rows() || h0.rows() != psi.size())
        throw DimensionError("load_model: dimension mismatch between H0, mu, psi0 files");

    const double h0_defect = hermiticity_defect(h0);
    if (!(h0_defect <= kHermitianDefectTol)) {
        std::ostringstream os;
        os << "load_model: H0 hermiticity defect " << h0_defect << " exceeds "
           << kHermitianDefectTol << " (" << h0_path.string() << ")";
        throw Error(os.str());
    }
    const double mu_defect = hermiticity_defect(mu);
    if (!(mu_defect <= kHermitianDefectTol)) {
        std::ostringstream os;
        os << "load_model: mu hermiticity defect " << mu_defect << " exceeds "
           << kHermitianDefectTol << " (" << mu_path.string() << ")";
        throw Error(os.str());
    }

    const double norm = psi.norm();
    if (norm < 1e-6) throw Error("load_model: psi0 is near zero");
    if (std::abs(norm - 1.0) > 1e-6) {
        std::ostringstream os;
        os << "load_model: psi0 norm " << norm << " outside [1-1e-6, 1+1e-6]";
        throw Error(os.str());
    }
    psi /= norm;

    return QuantumModel(HermitianOperator(std::move(h0)), HermitianOperator(std::move(mu)),
                        StateVector(std::move(psi)), "file(" + h0_path.string() + ")");
}

/// FNV-1a hash of the exact text serialization; identifies a model in
/// toolkit manifests so stale precomputations are rejected on reuse.
inline std::string model_hash(const QuantumModel& model) {
    std::ostringstream os;
    write_matrix(os, model.h0().entries());
    write_matrix(os, model.mu().entries());
    write_vector(os, model.psi0().amplitudes());
    const std::string text = os.str();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace tdse

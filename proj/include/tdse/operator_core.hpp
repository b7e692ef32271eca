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

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <limits>
#include <memory>
#include <sstream>
#include <utility>

#include "tdse/cost.hpp"
#include "tdse/errors.hpp"

namespace tdse {

using Complex = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;

inline constexpr double kHermitianDefectTol = 1e-10;
inline constexpr double kUnitaryDefectTol = 1e-12;
inline constexpr double kReconstructionTol = 1e-10;

/// Max-entry norm of H - H^dagger. Zero for an exactly Hermitian matrix.
inline double hermiticity_defect(const Matrix& h) {
    if (h.rows() != h.cols()) throw DimensionError("hermiticity_defect: matrix not square");
    return (h - h.adjoint()).cwiseAbs().maxCoeff();
}

/// Max-entry norm of U^dagger U - I. Zero for an exactly unitary matrix.
inline double unitarity_defect(const Matrix& u) {
    if (u.rows() != u.cols()) throw DimensionError("unitarity_defect: matrix not square");
    Matrix g = u.adjoint() * u;
    g.diagonal().array() -= 1.0;
    return g.cwiseAbs().maxCoeff();
}

/// Dense Hermitian operator. Construction symmetrizes the input to
/// (H + H^dagger)/2 and rejects inputs whose hermiticity defect exceeds
/// kHermitianDefectTol, so stored entries always satisfy
/// entries(j,k) == conj(entries(k,j)).
class HermitianOperator {
public:
    explicit HermitianOperator(Matrix entries) {
        if (entries.rows() != entries.cols())
            throw DimensionError("HermitianOperator: matrix not square");
        if (entries.rows() < 1) throw DimensionError("HermitianOperator: dimension must be >= 1");
        const double defect = hermiticity_defect(entries);
        if (!(defect <= kHermitianDefectTol)) {
            std::ostringstream os;
            os << "HermitianOperator: hermiticity defect " << defect << " exceeds "
               << kHermitianDefectTol;
            throw Error(os.str());
        }
        entries_ = 0.5 * (entries + entries.adjoint()).eval();
        dim_ = static_cast<int>(entries_.rows());
    }

    int dim() const { return dim_; }
    const Matrix& entries() const { return entries_; }

private:
    int dim_ = 0;
    Matrix entries_;
};

/// Eigendecomposition H = V diag(lambda) V^dagger with real ascending
/// eigenvalues and orthonormal columns. Column phases are fixed so the
/// first component above kPhaseFixThreshold is real positive, which makes
/// repeated factorizations of the same matrix reproduce bit-identically.
struct SpectralFactors {
    Eigen::VectorXd eigenvalues;
    Matrix eigenvectors;

    int dim() const { return static_cast<int>(eigenvalues.size()); }

    Matrix reconstruct() const {
        return eigenvectors * eigenvalues.cast<Complex>().asDiagonal() * eigenvectors.adjoint();
    }
};

inline constexpr double kPhaseFixThreshold = 1e-9;

namespace detail {

inline void fix_column_phases(Matrix& v) {
    for (Eigen::Index k = 0; k < v.cols(); ++k) {
        for (Eigen::Index r = 0; r < v.rows(); ++r) {
            const double a = std::abs(v(r, k));
            if (a > kPhaseFixThreshold) {
                v.col(k) *= std::conj(v(r, k)) / a;
                break;
            }
        }
    }
}

}  // namespace detail

/// Factorize a Hermitian operator. Throws EigensolverError (carrying the
/// residual) if the solver fails to converge or the reconstruction misses
/// the input by more than kReconstructionTol in max-entry norm.
inline SpectralFactors spectral_factorize(const HermitianOperator& h) {
    Eigen::SelfAdjointEigenSolver<Matrix> solver(h.entries());
    if (solver.info() != Eigen::Success)
        throw EigensolverError("spectral_factorize: eigensolver did not converge",
                               std::numeric_limits<double>::quiet_NaN());
    SpectralFactors f{solver.eigenvalues(), solver.eigenvectors()};
    detail::fix_column_phases(f.eigenvectors);
    const double residual = (f.reconstruct() - h.entries()).cwiseAbs().maxCoeff();
    if (!(residual <= kReconstructionTol)) {
        std::ostringstream os;
        os << "spectral_factorize: reconstruction residual " << residual;
        throw EigensolverError(os.str(), residual);
    }
    return f;
}

/// Dense unitary matrix, optionally carrying the spectral factors of the
/// Hermitian generator it was exponentiated from.
class UnitaryPropagator {
public:
    explicit UnitaryPropagator(Matrix entries, double duration = 0.0,
                               std::shared_ptr<const SpectralFactors> generator = nullptr)
        : duration_(duration), generator_(std::move(generator)) {
        if (entries.rows() != entries.cols())
            throw DimensionError("UnitaryPropagator: matrix not square");
        const double defect = unitarity_defect(entries);
        if (!(defect <= kUnitaryDefectTol)) {
            std::ostringstream os;
            os << "UnitaryPropagator: unitarity defect " << defect << " exceeds "
               << kUnitaryDefectTol;
            throw Error(os.str());
        }
        entries_ = std::move(entries);
        dim_ = static_cast<int>(entries_.rows());
    }

    int dim() const { return dim_; }
    double duration() const { return duration_; }
    const Matrix& entries() const { return entries_; }
    const std::shared_ptr<const SpectralFactors>& generator() const { return generator_; }

    /// Max-entry distance between entries and exp(-i t H) rebuilt from the
    /// stored generator; NaN when no generator is attached.
    double generator_defect() const;

private:
    int dim_ = 0;
    Matrix entries_;
    double duration_ = 0.0;
    std::shared_ptr<const SpectralFactors> generator_;
};

namespace detail {

inline Vector evolution_phases(const SpectralFactors& f, double t) {
    if (!std::isfinite(t)) throw Error("expm_unitary: non-finite duration");
    Vector phases(f.dim());
    for (int k = 0; k < f.dim(); ++k) {
        const double angle = t * f.eigenvalues[k];
        if (!std::isfinite(angle)) throw Error("expm_unitary: non-finite phase t*lambda");
        phases[k] = std::polar(1.0, -angle);
    }
    return phases;
}

}  // namespace detail

/// exp(-i t H) materialized from the spectral factors of H.
inline UnitaryPropagator expm_unitary(const SpectralFactors& f, double t,
                                      std::shared_ptr<const SpectralFactors> attach = nullptr) {
    const Vector phases = detail::evolution_phases(f, t);
    Matrix u = f.eigenvectors * phases.asDiagonal() * f.eigenvectors.adjoint();
    return UnitaryPropagator(std::move(u), t, std::move(attach));
}

inline double UnitaryPropagator::generator_defect() const {
    if (!generator_) return std::numeric_limits<double>::quiet_NaN();
    return (expm_unitary(*generator_, duration_).entries() - entries_).cwiseAbs().maxCoeff();
}

/// AB - BA. The commutator of two Hermitian operators is anti-Hermitian.
inline Matrix commutator(const HermitianOperator& a, const HermitianOperator& b) {
    if (a.dim() != b.dim()) throw DimensionError("commutator: dimension mismatch");
    return a.entries() * b.entries() - b.entries() * a.entries();
}

/// Complex amplitude vector in the working basis; immutable after
/// construction. The Euclidean norm is the discrete L2 norm.
class StateVector {
public:
    explicit StateVector(Vector amplitudes) : amplitudes_(std::move(amplitudes)) {
        if (amplitudes_.size() < 1) throw DimensionError("StateVector: dimension must be >= 1");
    }

    static StateVector basis_state(int dim, int index) {
        if (index < 0 || index >= dim) throw DimensionError("StateVector: basis index out of range");
        Vector v = Vector::Zero(dim);
        v[index] = 1.0;
        return StateVector(std::move(v));
    }

    int dim() const { return static_cast<int>(amplitudes_.size()); }
    const Vector& amplitudes() const { return amplitudes_; }
    double norm() const { return amplitudes_.norm(); }

private:
    Vector amplitudes_;
};

/// U * psi. Increments the caller's matrix-vector counter when one is given.
inline StateVector apply(const UnitaryPropagator& u, const StateVector& psi,
                         CostCounter* cost = nullptr) {
    if (u.dim() != psi.dim()) throw DimensionError("apply: dimension mismatch");
    if (cost) ++cost->matrix_vector_applies;
    return StateVector(u.entries() * psi.amplitudes());
}

/// exp(-i t H) psi without materializing the matrix: two mat-vec products
/// against the eigenbasis plus a diagonal phase scaling.
inline StateVector apply_evolution(const SpectralFactors& f, double t, const StateVector& psi,
                                   CostCounter* cost = nullptr) {
    if (f.dim() != psi.dim()) throw DimensionError("apply_evolution: dimension mismatch");
    const Vector phases = detail::evolution_phases(f, t);
    Vector y = f.eigenvectors.adjoint() * psi.amplitudes();
    y.array() *= phases.array();
    if (cost) ++cost->matrix_vector_applies;
    return StateVector(f.eigenvectors * y);
}

}  // namespace tdse

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

#include <cstdint>

namespace tdse {

/// Operation tallies for one propagation run or one precomputation phase.
///
/// matrix_vector_applies counts logical operator-on-state applications;
/// online_exponentials counts exponentials assembled during stepping (as
/// opposed to looked up from a precomputed table); eigendecompositions
/// counts spectral factorizations. All counts are monotone while a run
/// is in progress. Each run owns its counter, so concurrent propagations
/// never share one.
struct CostCounter {
    std::int64_t matrix_vector_applies = 0;
    std::int64_t matrix_matrix_products = 0;
    std::int64_t online_exponentials = 0;
    std::int64_t eigendecompositions = 0;
    std::int64_t toolkit_entries_used = 0;
    std::int64_t steps = 0;

    CostCounter& operator+=(const CostCounter& o) {
        matrix_vector_applies += o.matrix_vector_applies;
        matrix_matrix_products += o.matrix_matrix_products;
        online_exponentials += o.online_exponentials;
        eigendecompositions += o.eigendecompositions;
        toolkit_entries_used += o.toolkit_entries_used;
        steps += o.steps;
        return *this;
    }
};

}  // namespace tdse

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace rbfssm {

// Process-wide worker cap for parallel_for. Defaults to 1 (serial). Results of
// every parallel loop in this library are bitwise independent of this setting:
// tasks write to disjoint slots and reductions happen in index order afterwards.
void set_max_threads(int n);
int max_threads();

// Runs body(i) for i in [0, n). Work is split into contiguous chunks. If any
// task throws, the exception with the lowest index is rethrown after all
// workers have joined, so error reporting is deterministic too.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace rbfssm

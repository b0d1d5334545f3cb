// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>

namespace fixquant {

/// Worker count for internal parallel loops: FIXQUANT_THREADS if set to a
/// positive integer, otherwise the hardware concurrency.
int thread_count();

/// Runs body(i) for i in [0, n). Iterations must write disjoint outputs;
/// results are then independent of the schedule.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& body);

}  // namespace fixquant

// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace fixquant::cli {

/// Runs the command line `args` (without the program name) and returns the
/// process exit code: 0 ok, 2 usage, 3 data, 4 numeric.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fixquant::cli

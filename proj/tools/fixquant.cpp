// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) {
    return fixquant::cli::run({argv + 1, argv + argc}, std::cout, std::cerr);
}

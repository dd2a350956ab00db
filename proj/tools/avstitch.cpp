// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#include "avs/evalx/evalx.hpp"

int main(int argc, char** argv) { return avs::run_cli(argc, argv); }

// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <ostream>

namespace mvtf::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2, kAcceptanceFailure = 3 };

/// Parses argv, runs one subcommand and returns its exit code. Results go to
/// `out`, diagnostics and progress to `err`.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mvtf::cli

// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <string>
#include <vector>

namespace mvtf {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;  // measured value against its tolerance
};

struct SuiteResult {
  std::string name;
  std::vector<CheckResult> checks;
  double seconds = 0.0;
  double budget_seconds = 0.0;  // 0 means unbounded

  bool pass() const;
};

/// Fast mode trims repetition counts; every check still runs.
struct SelftestOptions {
  bool fast = false;
};

SuiteResult fusion_suite(const SelftestOptions& opt = {});
SuiteResult gradient_suite(const SelftestOptions& opt = {});
SuiteResult signal_suite(const SelftestOptions& opt = {});
SuiteResult data_suite(const SelftestOptions& opt = {});
SuiteResult protocol_suite(const SelftestOptions& opt = {});

std::vector<SuiteResult> run_selftest(const SelftestOptions& opt = {});

/// Fixed-width table, one row per check plus a suite summary line.
std::string format_table(const std::vector<SuiteResult>& suites);

}  // namespace mvtf

#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace lionxa {

struct CheckResult {
  std::string suite;
  std::string name;
  bool passed = false;
  std::string detail;
};

struct VerifyOptions {
  int grad_seeds = 20;  // random points per gradient target
  int kl_pairs = 1000;
  int scans = 50;       // synthetic scans per geometry check
};

// gradcheck, geometry, losses
const std::vector<std::string>& verify_suites();

// Runs one suite, or every suite for "all". Unknown names throw ConfigError.
std::vector<CheckResult> run_verify(std::string_view suite, const VerifyOptions& options = {});

}  // namespace lionxa

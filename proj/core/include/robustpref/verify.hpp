#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace robustpref {

struct CheckResult {
  std::string name;
  bool pass = false;
  double max_err = 0.0;    // worst deviation seen, when the check measures one
  double tolerance = 0.0;  // threshold enforced; 0 for exact/structural checks
  std::string detail;
};

struct SuiteReport {
  std::string suite;
  std::vector<CheckResult> checks;

  bool passed() const {
    for (const CheckResult& c : checks)
      if (!c.pass) return false;
    return true;
  }
};

// Suite names, in canonical order: lemmas, gradients, reductions, bounds,
// oracles. Each suite draws its instances from `seed`, so reruns match.
std::vector<std::string> verify_suite_names();
SuiteReport run_verify_suite(const std::string& name, std::uint64_t seed = 0);
std::vector<SuiteReport> run_all_verify_suites(std::uint64_t seed = 0);

std::string suite_reports_to_json_text(const std::vector<SuiteReport>& reports);

}  // namespace robustpref

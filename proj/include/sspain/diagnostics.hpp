#pragma once

#include <string>
#include <vector>

namespace sspain {

struct CheckResult {
    std::string name;
    bool passed = false;
    double measure = 0.0;    // worst error observed
    double tolerance = 0.0;
    double seconds = 0.0;
    std::string note;        // extra context on failure (e.g. inactive hinge)
};

// Finite-difference verification of every loss gradient through a small
// encoder/decoder (8x8 input), including the decode path and the weight-tied
// kernel contributions from both passes.
std::vector<CheckResult> gradient_suite();

// Brute-force equivalence: histogram EMD against exhaustive minimum-cost
// transport, and batch-hard mining against exhaustive search.
std::vector<CheckResult> oracle_suite();

bool all_passed(const std::vector<CheckResult>& results);
std::string format_results(const std::vector<CheckResult>& results);

}  // namespace sspain

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "df2am/autodiff.hpp"

namespace df2am {

struct GradSuiteOptions {
    std::size_t coordinates = 100;
    double step = 1e-3;
    double nudge = 1e-2;
    std::uint64_t seed = 1;
};

struct GradSuiteEntry {
    std::string loss;  // L_ID, L_BH, L_D, L_1, L_A, L_Final
    ad::GradCheckResult result;
};

// Central-difference check of every training loss on small random instances. L_Final runs
// through a reduced-width model on a synthetic batch so the encoder is covered too.
std::vector<GradSuiteEntry> gradient_suite(const GradSuiteOptions& options);

}  // namespace df2am

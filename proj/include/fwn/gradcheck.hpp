#pragma once

#include <cstdint>
#include <string>

namespace fwn {

// Central-finite-difference validation of an operator's analytic gradients.
// Probe points are sampled away from kinks (integer sampling positions, L1
// zeros, layout rounding boundaries), so the comparison is meaningful.
struct GradCheckResult {
    std::string op;
    double max_rel_err = 0.0;
    double threshold = 0.0;
    int probes = 0;

    bool pass() const { return max_rel_err < threshold; }
};

GradCheckResult gradcheck_warp(std::uint64_t seed);
GradCheckResult gradcheck_lcdconv(std::uint64_t seed);
GradCheckResult gradcheck_ftc(std::uint64_t seed);
GradCheckResult gradcheck_tvl1(std::uint64_t seed);
GradCheckResult gradcheck_tps(std::uint64_t seed);
GradCheckResult gradcheck_network(std::uint64_t seed);

// Dispatch by name: warp | lcdconv | ftc | tvl1 | tps | network.
GradCheckResult gradcheck(const std::string& op, std::uint64_t seed);

}  // namespace fwn

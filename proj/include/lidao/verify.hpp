#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lidao/infoth.hpp"

namespace lidao::verify {

// ---- report -----------------------------------------------------------------

struct CheckResult {
    std::string check_name;
    std::size_t instances = 0;
    double max_residual = 0.0;
    bool pass = false;
};

struct VerificationReport {
    std::vector<CheckResult> checks;

    bool all_pass() const;
    std::string to_json_string() const;  // array of {check_name, instances, max_residual, pass}
};

// ---- options ----------------------------------------------------------------

using LemmaResidualFn = std::function<double(const infoth::Joint&, std::size_t, std::size_t,
                                             std::span<const std::size_t>, std::size_t)>;

struct VerifyOptions {
    std::uint64_t seed = 0;
    int chain_rule_joints = 100;
    int interleaved_instances = 20;
    int coarsening_joints = 200;
    int vi_triples = 200;
    int gradient_triples = 100;

    // Override hook for the chain-rule residual (used by the negative-control
    // test fixture); empty = the library implementation.
    LemmaResidualFn chain_rule_fn;
};

// Run every check with its tolerance pinned in code; a check that throws is
// recorded as failed with an infinite residual.
VerificationReport run_verification(const VerifyOptions& opts = {});

} // namespace lidao::verify

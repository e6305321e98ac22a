// SPDX-License-Identifier: Apache-2.0
//
// Randomized cross-pipeline equivalence harness: the padded reference, the
// padding-free pipeline, the bypassing dispatch, and the sequence-sharded
// block run over seeded random instances and are compared pairwise. Shared
// by the command-line runner and the acceptance suite.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "moesim/moe_instance.hpp"

namespace moesim {

// Bounds for the random instance generator. Workers come as nodes times
// gpus-per-node so topologies with real node boundaries can be requested.
struct TrialBounds {
    std::int64_t max_seq = 64;
    std::int64_t max_experts = 8;
    std::int64_t max_top_k = 4;
    std::int64_t max_dim = 16;  // model_dim and ffn_dim
    std::int64_t min_nodes = 1;
    std::int64_t max_nodes = 2;
    std::int64_t max_gpus_per_node = 2;
    bool allow_drops = true;  // half the draws use a tight capacity
};

struct Trial {
    MoeInstance inst;
    std::vector<std::int64_t> node_of;  // one entry per worker
};

// Deterministic: one seed, one trial.
Trial random_trial(std::uint64_t seed, const TrialBounds& bounds);

struct VerifyOptions {
    std::uint64_t seed = 0;
    int trials = 50;
    // Nudges one combine weight on the packed side of every padded-vs-packed
    // trial; a healthy oracle must then report a mismatch.
    bool perturb = false;
};

struct VerifyReport {
    bool ok = true;
    std::string suite;  // failing comparison when !ok
    std::uint64_t failing_seed = 0;
    double max_abs = 0.0;  // worst element difference on the failing instance
    double max_rel = 0.0;
    int trials_run = 0;
};

// Runs the three suites (padded vs packed, bypass vs direct, sharded vs
// unsharded), `trials` instances each; stops at the first mismatch.
VerifyReport run_verify(const VerifyOptions& opt);

}  // namespace moesim

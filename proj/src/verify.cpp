// SPDX-License-Identifier: Apache-2.0

#include "moesim/verify.hpp"

#include <cstring>

#include "moesim/padded_pipeline.hpp"
#include "moesim/pf_pipeline.hpp"
#include "moesim/rbd.hpp"
#include "moesim/ssmb.hpp"

namespace moesim {

namespace {

Comm trial_comm(const Trial& t) {
    Comm comm;
    comm.group.node_of = t.node_of;
    comm.topo = Topology{};
    return comm;
}

// Mirrors the packed forward so a deliberate fault can be injected between
// construction and dispatch; the library path stays hook-free.
std::vector<Matrix> packed_forward(const MoeInstance& inst, Comm& comm, bool perturb) {
    const std::size_t W = comm.group.size();
    const std::int64_t e_local = inst.num_experts / static_cast<std::int64_t>(W);
    std::vector<Pft> pfts(W);
    for (std::size_t w = 0; w < W; ++w) {
        const auto gate = gate_forward(inst.tokens[w], inst.weights.gate, inst.top_k);
        pfts[w] = pft_construct(inst.max_token_count, inst.num_experts, gate);
        pfts[w].x = gather_rows(inst.tokens[w], pfts[w].token_ids);
    }
    if (perturb && !pfts[0].combine_weights.empty()) pfts[0].combine_weights[0] += 0.5;

    auto disp = pf_dispatch(comm, pfts, inst.num_experts);
    std::vector<Matrix> expert_out(W);
    std::vector<std::size_t> seq_lens(W);
    for (std::size_t w = 0; w < W; ++w) {
        expert_out[w] = grouped_expert_mlp(disp.expert_input[w], disp.recv_per_expert[w],
                                           inst.weights, static_cast<std::int64_t>(w) * e_local);
        seq_lens[w] = inst.tokens[w].rows;
    }
    return pf_combine(comm, disp, expert_out, pfts, seq_lens);
}

struct Diff {
    double abs = 0.0;
    double rel = 0.0;
};

Diff worst_diff(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
    Diff d;
    for (std::size_t w = 0; w < a.size(); ++w) {
        d.abs = std::max(d.abs, max_abs_diff(a[w], b[w]));
        d.rel = std::max(d.rel, max_rel_diff(a[w], b[w]));
    }
    return d;
}

bool fail(VerifyReport& rep, const char* suite, std::uint64_t seed, const Diff& d) {
    rep.ok = false;
    rep.suite = suite;
    rep.failing_seed = seed;
    rep.max_abs = d.abs;
    rep.max_rel = d.rel;
    return false;
}

}  // namespace

Trial random_trial(std::uint64_t seed, const TrialBounds& b) {
    Rng rng(seed);
    const std::int64_t nodes =
        b.min_nodes + static_cast<std::int64_t>(rng.below(b.max_nodes - b.min_nodes + 1));
    const std::int64_t gpn = 1 + static_cast<std::int64_t>(rng.below(b.max_gpus_per_node));
    const std::int64_t W = nodes * gpn;

    Trial t;
    for (std::int64_t n = 0; n < nodes; ++n)
        for (std::int64_t g = 0; g < gpn; ++g) t.node_of.push_back(n);

    auto& inst = t.inst;
    const std::int64_t e_per = std::max<std::int64_t>(1, b.max_experts / W);
    inst.num_experts = W * (1 + static_cast<std::int64_t>(rng.below(e_per)));
    inst.top_k = 1 + static_cast<std::int64_t>(
                         rng.below(std::min(b.max_top_k, inst.num_experts)));
    const std::int64_t H = 1 + static_cast<std::int64_t>(rng.below(b.max_dim));
    const std::int64_t F = 1 + static_cast<std::int64_t>(rng.below(b.max_dim));
    inst.weights = make_layer_weights(rng, inst.num_experts, H, F);

    const std::int64_t S = 1 + static_cast<std::int64_t>(rng.below(b.max_seq));
    inst.max_token_count = (b.allow_drops && rng.below(2) == 0)
                               ? 1 + static_cast<std::int64_t>(rng.below(3))
                               : S * inst.top_k;
    for (std::int64_t w = 0; w < W; ++w) {
        Matrix x(S, H);
        for (auto& v : x.data) v = rng.uniform(-1.0, 1.0);
        inst.tokens.push_back(std::move(x));
    }
    return t;
}

VerifyReport run_verify(const VerifyOptions& opt) {
    VerifyReport rep;

    // Padded reference against the packed pipeline, drops on and off.
    for (int n = 0; n < opt.trials; ++n) {
        const std::uint64_t s = salt_seed(opt.seed, 1, n);
        const Trial t = random_trial(s, TrialBounds{});
        auto comm_a = trial_comm(t);
        auto comm_b = trial_comm(t);
        const auto packed = packed_forward(t.inst, comm_a, opt.perturb);
        const auto padded = padded_moe_forward(t.inst, comm_b);
        const Diff d = worst_diff(packed, padded);
        ++rep.trials_run;
        if (d.rel > 1e-5) {
            fail(rep, "padded-vs-packed", s, d);
            return rep;
        }
    }

    // Bypassing dispatch against direct dispatch: buffers must be identical
    // bit for bit, the combined output within 1e-6.
    TrialBounds multi;
    multi.min_nodes = 2;
    multi.max_nodes = 4;
    for (int n = 0; n < opt.trials; ++n) {
        const std::uint64_t s = salt_seed(opt.seed, 2, n);
        const Trial t = random_trial(s, multi);
        const std::size_t W = t.node_of.size();

        std::vector<Pft> pfts(W);
        for (std::size_t w = 0; w < W; ++w) {
            const auto gate = gate_forward(t.inst.tokens[w], t.inst.weights.gate, t.inst.top_k);
            pfts[w] = pft_construct(t.inst.max_token_count, t.inst.num_experts, gate);
            pfts[w].x = gather_rows(t.inst.tokens[w], pfts[w].token_ids);
        }
        const WorkerGroup grp{t.node_of};
        std::vector<RbdPlan> plans;
        for (std::size_t w = 0; w < W; ++w)
            plans.push_back(select_pilots(pfts[w], grp, t.inst.num_experts, salt_seed(s, w, 0)));

        auto comm_a = trial_comm(t);
        auto comm_b = trial_comm(t);
        const auto direct = pf_dispatch(comm_a, pfts, t.inst.num_experts);
        const auto bypass = rbd_dispatch(comm_b, pfts, plans, t.inst.num_experts);
        ++rep.trials_run;
        for (std::size_t w = 0; w < W; ++w) {
            if (!direct.expert_input[w].same_shape(bypass.expert_input[w]) ||
                std::memcmp(direct.expert_input[w].data.data(),
                            bypass.expert_input[w].data.data(),
                            direct.expert_input[w].data.size() * sizeof(double)) != 0) {
                Diff d;
                if (direct.expert_input[w].same_shape(bypass.expert_input[w]))
                    d.abs = d.rel = max_abs_diff(direct.expert_input[w], bypass.expert_input[w]);
                fail(rep, "bypass-dispatch", s, d);
                return rep;
            }
        }

        auto comm_c = trial_comm(t);
        auto comm_d = trial_comm(t);
        const auto via_bypass = rbd_moe_forward(t.inst, comm_c, s);
        const auto via_direct = pf_moe_forward(t.inst, comm_d);
        const Diff d = worst_diff(via_bypass, via_direct);
        if (d.rel > 1e-6) {
            fail(rep, "bypass-combine", s, d);
            return rep;
        }
    }

    // Sequence sharding against the unsharded run, dropping disabled.
    TrialBounds solo;
    solo.max_nodes = 1;
    solo.max_gpus_per_node = 1;
    solo.allow_drops = false;
    for (int n = 0; n < opt.trials; ++n) {
        const std::uint64_t s = salt_seed(opt.seed, 3, n);
        const Trial t = random_trial(s, solo);
        auto comm_ref = trial_comm(t);
        const auto want = pf_moe_forward(t.inst, comm_ref);
        for (const std::int64_t G : {2, 4}) {
            if (G > static_cast<std::int64_t>(t.inst.tokens[0].rows)) continue;
            Comm comm;
            for (std::int64_t g = 0; g < G; ++g) comm.group.node_of.push_back(g / 2);
            comm.topo = Topology{};
            const auto got =
                ssmb_forward(t.inst.tokens[0], G, t.inst.weights, t.inst.num_experts,
                             t.inst.top_k, t.inst.max_token_count, comm);
            Diff d;
            d.abs = max_abs_diff(got, want[0]);
            d.rel = max_rel_diff(got, want[0]);
            ++rep.trials_run;
            if (d.rel > 1e-6) {
                fail(rep, "sharded-vs-unsharded", s, d);
                return rep;
            }
        }
    }
    return rep;
}

}  // namespace moesim

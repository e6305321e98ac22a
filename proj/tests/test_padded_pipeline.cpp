// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <vector>

#include "moesim/padded_pipeline.hpp"
#include "moesim/pft.hpp"

using namespace moesim;

namespace {

Comm single_node_comm(std::size_t workers, CostLedger* ledger = nullptr) {
    Comm comm;
    comm.group.node_of.assign(workers, 0);
    comm.topo = Topology{};
    comm.ledger = ledger;
    return comm;
}

}  // namespace

TEST_CASE("dispatch mask applies the capacity drop rule") {
    // One copy per token: token 0 -> e0 (0.9), 1 -> e1 (0.8), 2 -> e0 (0.5),
    // 3 -> e0 (0.7). Capacity 2 drops token 2's copy, the lightest on e0.
    GateOutput gate;
    gate.top_k = 1;
    gate.top_experts = {0, 1, 0, 0};
    gate.combine_weights = {0.9, 0.8, 0.5, 0.7};
    gate.gate_out = Matrix(4, 1);

    const auto m = build_dispatch_mask(gate, 2, 2);
    CHECK(m.at(0, 0, 0));
    CHECK(m.at(3, 0, 1));
    CHECK(m.at(1, 1, 0));
    std::size_t set = 0;
    for (auto b : m.mask) set += b;
    CHECK(set == 3);
    CHECK(m.weight[0 * 2 + 0] == 0.9);
    CHECK(m.weight[3 * 2 + 0] == 0.7);
    CHECK(m.weight[1 * 2 + 1] == 0.8);
    CHECK(m.weight[2 * 2 + 0] == 0.0);
}

TEST_CASE("mask occupancy matches the packed construction under drops") {
    // The mask builder ranks copies globally by weight; the packed arrays
    // select per expert. Both must retain identical copy sets.
    Rng rng(2024);
    for (int trial = 0; trial < 40; ++trial) {
        const std::int64_t E = 2 + static_cast<std::int64_t>(rng.below(7));
        const std::int64_t k = 1 + static_cast<std::int64_t>(rng.below(std::min<std::uint64_t>(E, 4)));
        const std::size_t S = 1 + rng.below(24);
        const std::int64_t cap = 1 + static_cast<std::int64_t>(rng.below(6));

        GateOutput gate;
        gate.top_k = k;
        gate.gate_out = Matrix(S, 1);
        for (std::size_t t = 0; t < S; ++t) {
            // k distinct experts per token via partial shuffle.
            std::vector<std::int64_t> ids(E);
            for (std::int64_t e = 0; e < E; ++e) ids[e] = e;
            for (std::int64_t j = 0; j < k; ++j) {
                const auto pick = j + static_cast<std::int64_t>(rng.below(E - j));
                std::swap(ids[j], ids[pick]);
                gate.top_experts.push_back(ids[j]);
                gate.combine_weights.push_back(rng.uniform(0.05, 1.0));
            }
        }

        const auto mask = build_dispatch_mask(gate, E, cap);
        const auto pft = pft_construct(cap, E, S, k, gate.top_experts, gate.combine_weights);

        // Same survivors: every packed (token, expert) pair holds a slot with
        // the same weight, and the totals agree.
        std::size_t set = 0;
        for (auto b : mask.mask) set += b;
        CHECK(set == pft.size());
        for (std::size_t i = 0; i < pft.size(); ++i) {
            const auto t = pft.token_ids[i];
            const auto e = pft.expert_ids[i];
            bool found = false;
            for (std::int64_t c = 0; c < cap; ++c) found = found || mask.at(t, e, c);
            CHECK(found);
            CHECK(mask.weight[t * E + e] == pft.combine_weights[i]);
        }
        // Per-expert slot usage equals the packed per-expert counts.
        for (std::int64_t e = 0; e < E; ++e) {
            std::int64_t used = 0;
            for (std::size_t t = 0; t < S; ++t)
                for (std::int64_t c = 0; c < cap; ++c) used += mask.at(t, e, c) ? 1 : 0;
            CHECK(used == pft.tokens_per_expert[e]);
        }
    }
}

TEST_CASE("single expert, top-1: the layer is a plain two-matmul MLP") {
    Rng rng(7);
    MoeInstance inst;
    inst.num_experts = 1;
    inst.top_k = 1;
    inst.max_token_count = 5;
    inst.weights = make_layer_weights(rng, 1, 3, 4);
    Matrix x(5, 3);
    for (auto& v : x.data) v = rng.uniform(-1.0, 1.0);
    inst.tokens.push_back(x);

    auto comm = single_node_comm(1);
    const auto out = padded_moe_forward(inst, comm);
    REQUIRE(out.size() == 1);

    // With one expert the softmax weight is exactly 1.
    const auto& w1 = inst.weights.w1[0];
    const auto& w2 = inst.weights.w2[0];
    Matrix want(5, 3);
    for (std::size_t t = 0; t < 5; ++t) {
        std::vector<double> mid(4, 0.0);
        for (std::size_t f = 0; f < 4; ++f) {
            double acc = 0.0;
            for (std::size_t h = 0; h < 3; ++h) acc += x.at(t, h) * w1.at(h, f);
            mid[f] = acc > 0.0 ? acc : 0.0;
        }
        for (std::size_t h = 0; h < 3; ++h) {
            double acc = 0.0;
            for (std::size_t f = 0; f < 4; ++f) acc += mid[f] * w2.at(f, h);
            want.at(t, h) = acc;
        }
    }
    CHECK(max_abs_diff(out[0], want) < 1e-12);
}

TEST_CASE("padded exchange volume is even regardless of routing") {
    Rng rng(99);
    MoeInstance inst;
    inst.num_experts = 8;
    inst.top_k = 2;
    inst.max_token_count = 3;
    inst.weights = make_layer_weights(rng, 8, 4, 6);
    for (int w = 0; w < 2; ++w) {
        Matrix x(10, 4);
        for (auto& v : x.data) v = rng.uniform(-1.0, 1.0);
        inst.tokens.push_back(std::move(x));
    }

    CostLedger ledger;
    auto comm = single_node_comm(2, &ledger);
    ActivationCounters counters;
    padded_moe_forward(inst, comm, &counters);

    // Every worker ships the full E*C*H buffer each way, routing-independent.
    const std::uint64_t slab = 8u * 3u * 4u;
    CHECK(counters.dispatch_in_elements == std::vector<std::uint64_t>{slab, slab});
    CHECK(counters.dispatch_out_elements == std::vector<std::uint64_t>{slab, slab});

    const auto fwd = ledger.totals("padded_dispatch");
    const auto bwd = ledger.totals("padded_combine");
    // 2 workers x E*C*H elements x 2 bytes, logical volume counts the
    // self-destined half too.
    CHECK(fwd.self_bytes + fwd.intra_bytes + fwd.inter_bytes == 2 * slab * 2);
    CHECK(bwd.self_bytes + bwd.intra_bytes + bwd.inter_bytes == 2 * slab * 2);
    CHECK(fwd.self_bytes == fwd.intra_bytes);
}

TEST_CASE("padded forward needs one token matrix per worker") {
    MoeInstance inst;
    inst.num_experts = 4;
    inst.tokens.emplace_back(2, 3);
    auto comm = single_node_comm(2);
    CHECK_THROWS_AS(padded_moe_forward(inst, comm), DimensionError);
}

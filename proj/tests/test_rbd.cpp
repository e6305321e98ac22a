// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <map>
#include <vector>

#include "moesim/pf_pipeline.hpp"
#include "moesim/rbd.hpp"

using namespace moesim;

namespace {

Comm make_comm(std::vector<std::int64_t> node_of, CostLedger* ledger = nullptr) {
    Comm comm;
    comm.group.node_of = std::move(node_of);
    comm.topo = Topology{};
    comm.ledger = ledger;
    return comm;
}

MoeInstance random_instance(Rng& rng, std::size_t workers) {
    MoeInstance inst;
    inst.num_experts = static_cast<std::int64_t>(workers) * (1 + rng.below(3));
    inst.top_k = 1 + static_cast<std::int64_t>(
                         rng.below(std::min<std::uint64_t>(inst.num_experts, 4)));
    const std::int64_t H = 2 + static_cast<std::int64_t>(rng.below(5));
    const std::int64_t F = 2 + static_cast<std::int64_t>(rng.below(5));
    inst.weights = make_layer_weights(rng, inst.num_experts, H, F);
    const std::size_t S = 2 + rng.below(23);
    inst.max_token_count = (rng.below(2) == 0)
                               ? 1 + static_cast<std::int64_t>(rng.below(4))
                               : static_cast<std::int64_t>(S) * inst.top_k;
    for (std::size_t w = 0; w < workers; ++w) {
        Matrix x(S, H);
        for (auto& v : x.data) v = rng.uniform(-1.0, 1.0);
        inst.tokens.push_back(std::move(x));
    }
    return inst;
}

std::vector<Pft> build_pfts(const MoeInstance& inst) {
    std::vector<Pft> pfts;
    for (const auto& tokens : inst.tokens) {
        const auto gate = gate_forward(tokens, inst.weights.gate, inst.top_k);
        auto pft = pft_construct(inst.max_token_count, inst.num_experts, gate);
        pft.x = gather_rows(tokens, pft.token_ids);
        pfts.push_back(std::move(pft));
    }
    return pfts;
}

std::vector<RbdPlan> build_plans(const std::vector<Pft>& pfts, const WorkerGroup& group,
                                 std::int64_t num_experts, std::uint64_t seed) {
    std::vector<RbdPlan> plans;
    for (std::size_t w = 0; w < pfts.size(); ++w)
        plans.push_back(select_pilots(pfts[w], group, num_experts, salt_seed(seed, w, 0)));
    return plans;
}

// Two nodes of two workers each, one expert per worker; a single token on
// worker 0 routed to the two experts of node 1.
struct TwoNodeTrace {
    std::vector<Pft> pfts;
    Comm comm;
    CostLedger ledger;

    TwoNodeTrace() {
        comm = make_comm({0, 0, 1, 1}, &ledger);
        Pft p0;
        p0.token_ids = {0, 0};
        p0.expert_ids = {2, 3};
        p0.tokens_per_expert = {0, 0, 1, 1};
        p0.combine_weights = {0.6, 0.4};
        p0.x = Matrix(2, 2);
        p0.x.at(0, 0) = 1.0;
        p0.x.at(0, 1) = 2.0;
        p0.x.at(1, 0) = 1.0;
        p0.x.at(1, 1) = 2.0;
        pfts.push_back(std::move(p0));
        for (int w = 1; w < 4; ++w) {
            Pft p;
            p.tokens_per_expert = {0, 0, 0, 0};
            p.x = Matrix(0, 2);
            pfts.push_back(std::move(p));
        }
    }
};

}  // namespace

TEST_CASE("expert nodes follow the contiguous ownership blocks") {
    WorkerGroup g;
    g.node_of = {0, 0, 1, 1};
    CHECK(expert_nodes(g, 8) == std::vector<std::int64_t>{0, 0, 0, 0, 1, 1, 1, 1});
    CHECK(expert_nodes(g, 4) == std::vector<std::int64_t>{0, 0, 1, 1});
    CHECK_THROWS_AS(expert_nodes(g, 6), ValidationError);
}

TEST_CASE("pilot selection groups copies by token and destination node") {
    WorkerGroup g;
    g.node_of = {0, 0, 1, 1};

    SUBCASE("two copies to one remote node yield one pilot and one replica") {
        TwoNodeTrace t;
        const auto plan = select_pilots(t.pfts[0], t.comm.group, 4, 7);
        CHECK(plan.pilot_mask.size() == 2);
        CHECK(plan.pilot_mask[0] + plan.pilot_mask[1] == 1);
        CHECK(plan.pilots.size() == 1);
        CHECK(plan.replicas.size() == 1);
        CHECK(plan.s1_mapping == std::vector<std::int64_t>{0});
        CHECK(plan.replica_pilot_seq == std::vector<std::int64_t>{0});
        CHECK(plan.pilots.token_ids == std::vector<std::int64_t>{0});
    }

    SUBCASE("copies on distinct nodes are all pilots") {
        Pft p;
        p.token_ids = {0, 0};
        p.expert_ids = {1, 2};  // nodes 0 and 1
        p.tokens_per_expert = {0, 1, 1, 0};
        p.combine_weights = {0.5, 0.5};
        const auto plan = select_pilots(p, g, 4, 123);
        CHECK(plan.pilot_mask == std::vector<std::uint8_t>{1, 1});
        CHECK(plan.replicas.size() == 0);
    }

    SUBCASE("a single node collapses each token to one pilot") {
        WorkerGroup one;
        one.node_of = {0, 0};
        Pft p;
        p.token_ids = {0, 1, 0, 1};
        p.expert_ids = {0, 0, 1, 1};
        p.tokens_per_expert = {2, 2, 0, 0};
        p.combine_weights = {0.3, 0.3, 0.3, 0.3};
        const auto plan = select_pilots(p, one, 4, 99);
        CHECK(plan.pilots.size() == 2);
        CHECK(plan.replicas.size() == 2);
    }

    SUBCASE("selection is pure given the seed and splits stay expert-sorted") {
        Rng rng(404);
        Pft p;
        p.tokens_per_expert.assign(4, 0);
        for (std::int64_t e = 0; e < 4; ++e)
            for (int n = 0; n < 3; ++n) {
                p.token_ids.push_back(static_cast<std::int64_t>(rng.below(4)));
                p.expert_ids.push_back(e);
                p.combine_weights.push_back(rng.uniform(0.0, 1.0));
                p.tokens_per_expert[e] += 1;
            }
        const auto a = select_pilots(p, g, 4, 555);
        const auto b = select_pilots(p, g, 4, 555);
        CHECK(a.pilot_mask == b.pilot_mask);
        CHECK(std::is_sorted(a.pilots.expert_ids.begin(), a.pilots.expert_ids.end()));
        CHECK(std::is_sorted(a.replicas.expert_ids.begin(), a.replicas.expert_ids.end()));

        // Exactly one pilot per (token, node) group.
        std::map<std::pair<std::int64_t, std::int64_t>, int> pilots_per_group;
        const auto nodes = expert_nodes(g, 4);
        for (std::size_t i = 0; i < p.size(); ++i)
            pilots_per_group[{p.token_ids[i], nodes[p.expert_ids[i]]}] += a.pilot_mask[i];
        for (const auto& [key, n] : pilots_per_group) {
            (void)key;
            CHECK(n == 1);
        }
    }
}

TEST_CASE("hand trace: one pilot row crosses nodes instead of two") {
    TwoNodeTrace t;
    const auto plans = build_plans(t.pfts, t.comm.group, 4, 31);
    const auto d = rbd_dispatch(t.comm, t.pfts, plans, 4);

    // Worker 2 and 3 each end up with the token's row for their expert.
    CHECK(d.recv_per_expert[2] == std::vector<std::int64_t>{1});
    CHECK(d.recv_per_expert[3] == std::vector<std::int64_t>{1});
    for (std::size_t w : {2u, 3u}) {
        REQUIRE(d.expert_input[w].rows == 1);
        CHECK(d.expert_input[w].at(0, 0) == 1.0);
        CHECK(d.expert_input[w].at(0, 1) == 2.0);
    }

    // One pilot row inter (4 bytes at H=2, 2-byte dtype), one replica row
    // forwarded inside node 1.
    const auto rows1 = t.ledger.totals("rbd_dispatch_rows1");
    const auto rows2 = t.ledger.totals("rbd_dispatch_rows2");
    CHECK(rows1.inter_bytes == 4);
    CHECK(rows1.intra_bytes == 0);
    CHECK(rows2.intra_bytes == 4);
    CHECK(rows2.inter_bytes == 0);
    // Descriptors: one replica (24 + 2) plus the multi-copy pilot's weight.
    CHECK(t.ledger.totals("rbd_dispatch_meta").inter_bytes == 28);
    CHECK(t.ledger.totals("rbd_dispatch_meta2").intra_bytes == 24);

    // The direct path ships both copies across.
    CostLedger direct;
    auto comm = make_comm({0, 0, 1, 1}, &direct);
    const auto ref = pf_dispatch(comm, t.pfts, 4);
    CHECK(direct.totals("dispatch_rows").inter_bytes == 8);
    for (std::size_t w = 0; w < 4; ++w) {
        CHECK(d.expert_input[w].same_shape(ref.expert_input[w]));
        CHECK(d.recv_per_expert[w] == ref.recv_per_expert[w]);
    }
}

TEST_CASE("hand trace: group outputs are scaled and merged at the landing worker") {
    TwoNodeTrace t;
    const auto plans = build_plans(t.pfts, t.comm.group, 4, 31);
    const auto d = rbd_dispatch(t.comm, t.pfts, plans, 4);

    // Feed chosen expert outputs instead of running the FFNs.
    std::vector<Matrix> expert_out(4);
    expert_out[0] = Matrix(0, 2);
    expert_out[1] = Matrix(0, 2);
    expert_out[2] = Matrix(1, 2);  // o2
    expert_out[2].at(0, 0) = 10.0;
    expert_out[2].at(0, 1) = 20.0;
    expert_out[3] = Matrix(1, 2);  // o3
    expert_out[3].at(0, 0) = 100.0;
    expert_out[3].at(0, 1) = 200.0;

    const auto out = rbd_combine(t.comm, d, expert_out, plans, {1, 0, 0, 0});
    REQUIRE(out[0].rows == 1);
    CHECK(out[0].at(0, 0) == doctest::Approx(0.6 * 10.0 + 0.4 * 100.0).epsilon(1e-12));
    CHECK(out[0].at(0, 1) == doctest::Approx(0.6 * 20.0 + 0.4 * 200.0).epsilon(1e-12));

    // One merged row returns across the node boundary.
    CHECK(t.ledger.totals("rbd_combine_rows1").inter_bytes == 4);
    CHECK(t.ledger.totals("rbd_combine_rows2").intra_bytes == 4);
}

TEST_CASE("bypassing dispatch reproduces direct dispatch bit for bit") {
    Rng rng(808);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t W = 2 * (2 + rng.below(3));  // 4, 6, 8 workers
        std::vector<std::int64_t> node_of(W);
        for (std::size_t w = 0; w < W; ++w) node_of[w] = static_cast<std::int64_t>(w / 2);
        auto inst = random_instance(rng, W);
        const auto pfts = build_pfts(inst);

        auto comm_a = make_comm(node_of);
        auto comm_b = make_comm(node_of);
        const auto plans = build_plans(pfts, comm_a.group, inst.num_experts, rng.next_u64());
        const auto d = rbd_dispatch(comm_a, pfts, plans, inst.num_experts);
        const auto ref = pf_dispatch(comm_b, pfts, inst.num_experts);

        for (std::size_t w = 0; w < W; ++w) {
            CHECK(d.recv_per_expert[w] == ref.recv_per_expert[w]);
            REQUIRE(d.expert_input[w].same_shape(ref.expert_input[w]));
            CHECK(std::memcmp(d.expert_input[w].data.data(), ref.expert_input[w].data.data(),
                              d.expert_input[w].data.size() * sizeof(double)) == 0);
        }
    }
}

TEST_CASE("zero-replica plans are byte-identical to the direct path") {
    Rng rng(21);
    auto inst = random_instance(rng, 4);
    inst.top_k = 1;  // one copy per token, so every group is a singleton
    const std::vector<std::int64_t> node_of{0, 0, 1, 1};
    const auto pfts = build_pfts(inst);

    CostLedger bypass, direct;
    auto comm_a = make_comm(node_of, &bypass);
    auto comm_b = make_comm(node_of, &direct);
    const auto plans = build_plans(pfts, comm_a.group, inst.num_experts, 5);
    for (const auto& p : plans) CHECK(p.replicas.size() == 0);

    const auto d = rbd_dispatch(comm_a, pfts, plans, inst.num_experts);
    const auto ref = pf_dispatch(comm_b, pfts, inst.num_experts);

    const auto b_rows = bypass.totals("rbd_dispatch_rows");
    const auto p_rows = direct.totals("dispatch_rows");
    CHECK(b_rows.self_bytes == p_rows.self_bytes);
    CHECK(b_rows.intra_bytes == p_rows.intra_bytes);
    CHECK(b_rows.inter_bytes == p_rows.inter_bytes);
    CHECK(bypass.totals("rbd_dispatch_counts").intra_bytes ==
          direct.totals("dispatch_counts").intra_bytes);
    CHECK(bypass.totals("rbd_dispatch_counts").inter_bytes ==
          direct.totals("dispatch_counts").inter_bytes);
    CHECK(bypass.totals("rbd_dispatch_meta").self_bytes == 0);
    CHECK(bypass.totals("rbd_dispatch_meta").intra_bytes == 0);
    CHECK(bypass.totals("rbd_dispatch_meta").inter_bytes == 0);

    // Combine too: raw rows return and the source applies the weights, so
    // even the arithmetic matches the direct path exactly.
    const auto eo_a = d.expert_input;  // identity compute
    const auto eo_b = ref.expert_input;
    std::vector<std::size_t> seq_lens;
    for (const auto& tk : inst.tokens) seq_lens.push_back(tk.rows);
    const auto out_a = rbd_combine(comm_a, d, eo_a, plans, seq_lens);
    const auto out_b = pf_combine(comm_b, ref, eo_b, pfts, seq_lens);
    for (std::size_t w = 0; w < 4; ++w) CHECK(max_abs_diff(out_a[w], out_b[w]) == 0.0);

    const auto bc = bypass.totals("rbd_combine_rows");
    const auto pc = direct.totals("combine_rows");
    CHECK(bc.self_bytes == pc.self_bytes);
    CHECK(bc.intra_bytes == pc.intra_bytes);
    CHECK(bc.inter_bytes == pc.inter_bytes);
}

TEST_CASE("full layer over the bypass matches the direct path") {
    Rng rng(1717);
    for (int trial = 0; trial < 15; ++trial) {
        const std::size_t W = 2 * (1 + rng.below(4));  // includes single-node W=2
        std::vector<std::int64_t> node_of(W);
        for (std::size_t w = 0; w < W; ++w) node_of[w] = static_cast<std::int64_t>(w / 2);
        const auto inst = random_instance(rng, W);

        auto comm_a = make_comm(node_of);
        auto comm_b = make_comm(node_of);
        const auto got = rbd_moe_forward(inst, comm_a, rng.next_u64());
        const auto want = pf_moe_forward(inst, comm_b);
        for (std::size_t w = 0; w < W; ++w) CHECK(max_abs_diff(got[w], want[w]) < 1e-9);
    }
}

TEST_CASE("redundancy rate definition cases") {
    // One token, four copies, all on one node.
    std::vector<std::int64_t> one_node{0, 0, 0, 0};
    CHECK(redundancy_rate({0, 1, 2, 3}, 4, one_node) == doctest::Approx(0.75));
    // All copies on distinct nodes.
    std::vector<std::int64_t> distinct{0, 1, 2, 3};
    CHECK(redundancy_rate({0, 1, 2, 3}, 4, distinct) == 0.0);
    // Two tokens sharing experts double the copies and the groups alike.
    CHECK(redundancy_rate({0, 1, 0, 1}, 2, {0, 0}) == doctest::Approx(0.5));

    // The packed overload agrees with the raw one when nothing was dropped.
    Pft p;
    p.token_ids = {0, 1, 0, 1};
    p.expert_ids = {0, 0, 1, 1};
    p.tokens_per_expert = {2, 2};
    p.combine_weights = {0.5, 0.5, 0.5, 0.5};
    CHECK(redundancy_rate(p, {0, 0}) == doctest::Approx(0.5));
    CHECK(redundancy_rate_internode(p, 0, {0, 0}) == 0.0);
    CHECK(redundancy_rate_internode(p, 1, {0, 0}) == doctest::Approx(0.5));
}

TEST_CASE("node-crossing reduction equals the inter-node redundancy rate") {
    Rng rng(6161);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t W = 6;
        const std::vector<std::int64_t> node_of{0, 0, 1, 1, 2, 2};
        auto inst = random_instance(rng, W);
        inst.top_k = std::min<std::int64_t>(inst.num_experts, 4);
        const auto pfts = build_pfts(inst);
        const auto nodes = expert_nodes(WorkerGroup{node_of}, inst.num_experts);

        CostLedger bypass, direct;
        auto comm_a = make_comm(node_of, &bypass);
        auto comm_b = make_comm(node_of, &direct);
        const auto plans = build_plans(pfts, comm_a.group, inst.num_experts, rng.next_u64());
        rbd_dispatch(comm_a, pfts, plans, inst.num_experts);
        pf_dispatch(comm_b, pfts, inst.num_experts);

        RedundancyCounts agg;
        for (std::size_t w = 0; w < W; ++w) {
            const auto c = internode_redundancy_counts(pfts[w], node_of[w], nodes);
            agg.copies += c.copies;
            agg.groups += c.groups;
        }
        const auto row_bytes = static_cast<std::uint64_t>(inst.weights.gate.rows) * 2;
        CHECK(bypass.totals("rbd_dispatch_rows1").inter_bytes ==
              static_cast<std::uint64_t>(agg.groups) * row_bytes);
        CHECK(direct.totals("dispatch_rows").inter_bytes ==
              static_cast<std::uint64_t>(agg.copies) * row_bytes);
        if (agg.copies > 0) {
            const double reduction =
                1.0 - static_cast<double>(bypass.totals("rbd_dispatch_rows1").inter_bytes) /
                          static_cast<double>(direct.totals("dispatch_rows").inter_bytes);
            const double rate =
                1.0 - static_cast<double>(agg.groups) / static_cast<double>(agg.copies);
            CHECK(reduction == doctest::Approx(rate).epsilon(1e-12));
        }
    }
}

TEST_CASE("bypass dispatch never serializes slower than direct dispatch") {
    Rng rng(99);
    int with_redundancy = 0;
    for (int trial = 0; trial < 15; ++trial) {
        const std::size_t W = 2 * (2 + rng.below(3));
        std::vector<std::int64_t> node_of(W);
        for (std::size_t w = 0; w < W; ++w) node_of[w] = static_cast<std::int64_t>(w / 2);
        const auto inst = random_instance(rng, W);
        const auto pfts = build_pfts(inst);

        CostLedger bypass, direct;
        auto comm_a = make_comm(node_of, &bypass);
        auto comm_b = make_comm(node_of, &direct);
        const auto plans = build_plans(pfts, comm_a.group, inst.num_experts, rng.next_u64());
        rbd_dispatch(comm_a, pfts, plans, inst.num_experts);
        pf_dispatch(comm_b, pfts, inst.num_experts);

        std::size_t replicas = 0;
        for (const auto& p : plans) replicas += p.replicas.size();
        if (replicas == 0) continue;
        ++with_redundancy;
        const double t_bypass =
            serialized_time(bypass.totals("rbd_dispatch_rows"), comm_a.topo);
        const double t_direct = serialized_time(direct.totals("dispatch_rows"), comm_b.topo);
        CHECK(t_bypass <= t_direct + 1e-18);
    }
    CHECK(with_redundancy > 0);
}

TEST_CASE("sampled redundancy grows with experts per node") {
    const std::int64_t E = 16;
    std::vector<double> rates;
    for (std::int64_t per_node : {1, 2, 4, 8, 16}) {
        std::vector<std::int64_t> nodes(E);
        for (std::int64_t e = 0; e < E; ++e) nodes[e] = e / per_node;
        Rng rng(2025);
        rates.push_back(sample_redundancy(rng, 2000, 4, nodes));
    }
    CHECK(rates.front() == 0.0);
    CHECK(rates.back() == doctest::Approx(0.75));  // single node: always 3 of 4 redundant
    for (std::size_t i = 1; i < rates.size(); ++i) CHECK(rates[i - 1] <= rates[i] + 1e-9);
}

TEST_CASE("dispatch rejects a plan that disagrees with the buffer") {
    TwoNodeTrace t;
    auto plans = build_plans(t.pfts, t.comm.group, 4, 31);
    plans[0].pilot_mask.pop_back();
    CHECK_THROWS_AS(rbd_dispatch(t.comm, t.pfts, plans, 4), PlanMismatch);
}

// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <vector>

#include "moesim/pf_pipeline.hpp"
#include "moesim/ssmb.hpp"

using namespace moesim;

namespace {

Comm make_comm(std::vector<std::int64_t> node_of, CostLedger* ledger = nullptr) {
    Comm comm;
    comm.group.node_of = std::move(node_of);
    comm.topo = Topology{};
    comm.ledger = ledger;
    return comm;
}

struct Layer {
    Matrix tokens;
    MoeLayerWeights weights;
    std::int64_t E, k, H;
};

Layer random_layer(Rng& rng, std::int64_t S) {
    Layer l;
    l.E = 4 + static_cast<std::int64_t>(rng.below(5));
    l.k = 1 + static_cast<std::int64_t>(rng.below(3));
    l.H = 3 + static_cast<std::int64_t>(rng.below(4));
    const std::int64_t F = 2 + static_cast<std::int64_t>(rng.below(5));
    l.weights = make_layer_weights(rng, l.E, l.H, F);
    l.tokens = Matrix(S, l.H);
    for (auto& v : l.tokens.data) v = rng.uniform(-1.0, 1.0);
    return l;
}

Matrix unsharded(const Layer& l, std::int64_t cap) {
    MoeInstance inst;
    inst.tokens.push_back(l.tokens);
    inst.weights = l.weights;
    inst.num_experts = l.E;
    inst.top_k = l.k;
    inst.max_token_count = cap;
    auto comm = make_comm({0});
    return pf_moe_forward(inst, comm)[0];
}

}  // namespace

TEST_CASE("one shard is exactly the unsharded pipeline") {
    Rng rng(11);
    const auto l = random_layer(rng, 9);
    auto comm = make_comm({0});
    const auto got = ssmb_forward(l.tokens, 1, l.weights, l.E, l.k, 9 * l.k, comm);
    CHECK(max_abs_diff(got, unsharded(l, 9 * l.k)) == 0.0);
}

TEST_CASE("sharding does not change the output when nothing is dropped") {
    Rng rng(12);
    for (const std::int64_t S : {8, 10, 16}) {
        const auto l = random_layer(rng, S);
        const std::int64_t cap = S * l.k;  // no shard can exceed this
        const auto want = unsharded(l, cap);
        for (const std::int64_t G : {2, 4}) {
            std::vector<std::int64_t> node_of(G);
            for (std::int64_t g = 0; g < G; ++g) node_of[g] = g / 2;
            auto comm = make_comm(node_of);
            const auto got = ssmb_forward(l.tokens, G, l.weights, l.E, l.k, cap, comm);
            // Per-row compute and per-token combine order are untouched by
            // where the shard boundary falls, so this is exact.
            CHECK(max_abs_diff(got, want) == 0.0);
        }
    }
}

TEST_CASE("per-rank dispatch buffers shrink by the shard factor") {
    Rng rng(13);
    const std::int64_t S = 16, G = 4;
    const auto l = random_layer(rng, S);
    const std::int64_t cap = S * l.k;

    ActivationCounters whole;
    {
        MoeInstance inst;
        inst.tokens.push_back(l.tokens);
        inst.weights = l.weights;
        inst.num_experts = l.E;
        inst.top_k = l.k;
        inst.max_token_count = cap;
        auto comm = make_comm({0});
        pf_moe_forward(inst, comm, &whole);
    }
    REQUIRE(whole.dispatch_in_elements.size() == 1);
    CHECK(whole.dispatch_in_elements[0] ==
          static_cast<std::uint64_t>(l.k) * S * l.H);

    ActivationCounters sharded;
    auto comm = make_comm({0, 0, 1, 1});
    ssmb_forward(l.tokens, G, l.weights, l.E, l.k, cap, comm, &sharded);
    REQUIRE(sharded.dispatch_in_elements.size() == static_cast<std::size_t>(G));
    for (std::int64_t g = 0; g < G; ++g) {
        CHECK(sharded.dispatch_in_elements[g] ==
              static_cast<std::uint64_t>(l.k) * (S / G) * l.H);
        CHECK(sharded.dispatch_out_elements[g] == sharded.dispatch_in_elements[g]);
        CHECK(sharded.dispatch_in_elements[g] == whole.dispatch_in_elements[0] / G);
    }
}

TEST_CASE("the restoring all-gather ships each shard around the ring") {
    Rng rng(14);
    const std::int64_t S = 12, G = 3;
    const auto l = random_layer(rng, S);
    CostLedger ledger;
    auto comm = make_comm({0, 0, 1}, &ledger);
    ssmb_forward(l.tokens, G, l.weights, l.E, l.k, S * l.k, comm);
    const auto t = ledger.totals("ssmb_gather_rows");
    const auto row_bytes = static_cast<std::uint64_t>(l.H) * 2;
    CHECK(t.self_bytes == 0);
    CHECK(t.intra_bytes + t.inter_bytes ==
          static_cast<std::uint64_t>(G - 1) * S * row_bytes);
}

TEST_CASE("shard count is validated") {
    Rng rng(15);
    const auto l = random_layer(rng, 4);
    auto comm = make_comm({0, 0, 0, 0, 0});
    CHECK_THROWS_AS(ssmb_forward(l.tokens, 5, l.weights, l.E, l.k, 99, comm),
                    ValidationError);
    auto two = make_comm({0, 0});
    CHECK_THROWS_AS(ssmb_forward(l.tokens, 4, l.weights, l.E, l.k, 99, two),
                    ValidationError);
}

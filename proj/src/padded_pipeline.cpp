// SPDX-License-Identifier: Apache-2.0

#include "moesim/padded_pipeline.hpp"

#include <algorithm>
#include <numeric>

#include "moesim/error.hpp"
#include "moesim/kernels.hpp"

namespace moesim {

MoeLayerWeights make_layer_weights(Rng& rng, std::int64_t num_experts,
                                   std::int64_t model_dim, std::int64_t ffn_dim) {
    MoeLayerWeights w;
    w.gate = make_gate_weights(rng, model_dim, num_experts);
    w.w1.reserve(num_experts);
    w.w2.reserve(num_experts);
    for (std::int64_t e = 0; e < num_experts; ++e) {
        Matrix a(model_dim, ffn_dim), b(ffn_dim, model_dim);
        for (auto& x : a.data) x = rng.uniform(-0.1, 0.1);
        for (auto& x : b.data) x = rng.uniform(-0.1, 0.1);
        w.w1.push_back(std::move(a));
        w.w2.push_back(std::move(b));
    }
    return w;
}

DispatchMask build_dispatch_mask(const GateOutput& gate, std::int64_t num_experts,
                                 std::int64_t max_token_count) {
    if (max_token_count < 1) throw ValidationError("max_token_count must be >= 1");
    const std::size_t S = gate.gate_out.rows;
    const std::size_t E = num_experts;
    const std::size_t C = max_token_count;
    const std::size_t k = gate.top_k;
    const std::size_t flat = S * k;

    // Rank every routing position by weight (ties toward the earlier
    // position); a copy survives if its rank within its expert fits the
    // capacity.
    std::vector<std::int64_t> order(flat);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
        if (gate.combine_weights[a] != gate.combine_weights[b])
            return gate.combine_weights[a] > gate.combine_weights[b];
        return a < b;
    });
    std::vector<std::int64_t> seen(E, 0);
    std::vector<std::uint8_t> keep(flat, 0);
    for (std::int64_t f : order) {
        const std::int64_t e = gate.top_experts[f];
        if (e < 0 || e >= num_experts) throw IndexError("expert id out of range");
        if (seen[e]++ < max_token_count) keep[f] = 1;
    }

    DispatchMask m;
    m.seq_len = S;
    m.num_experts = E;
    m.capacity = C;
    m.mask.assign(S * E * C, 0);
    m.weight.assign(S * E, 0.0);
    // Grant slots in token order (the flat scan is token-major).
    std::vector<std::int64_t> next_slot(E, 0);
    for (std::size_t f = 0; f < flat; ++f) {
        if (!keep[f]) continue;
        const std::size_t t = f / k;
        const std::size_t e = gate.top_experts[f];
        const std::size_t c = next_slot[e]++;
        m.mask[(t * E + e) * C + c] = 1;
        m.weight[t * E + e] = gate.combine_weights[f];
    }
    return m;
}

std::vector<Matrix> padded_moe_forward(const MoeInstance& inst, Comm& comm,
                                       ActivationCounters* counters) {
    const std::size_t W = comm.group.size();
    const std::int64_t E = inst.num_experts;
    const std::int64_t C = inst.max_token_count;
    const std::size_t H = inst.weights.gate.rows;
    if (inst.tokens.size() != W)
        throw DimensionError("padded_moe_forward: need one token matrix per worker");
    if (E % static_cast<std::int64_t>(W) != 0)
        throw ValidationError("num_experts must be divisible by the worker-group size");
    const std::int64_t e_local = E / static_cast<std::int64_t>(W);

    // Gating and dense dispatch buffers [E*C, H], expert-major so the buffer
    // is already ordered by destination worker.
    std::vector<DispatchMask> masks(W);
    std::vector<Matrix> dispatch(W);
    for (std::size_t w = 0; w < W; ++w) {
        const auto gate = gate_forward(inst.tokens[w], inst.weights.gate, inst.top_k);
        masks[w] = build_dispatch_mask(gate, E, C);
        Matrix buf(E * C, H);
        for (std::size_t t = 0; t < masks[w].seq_len; ++t)
            for (std::int64_t e = 0; e < E; ++e)
                for (std::int64_t c = 0; c < C; ++c)
                    if (masks[w].at(t, e, c))
                        std::copy_n(inst.tokens[w].row(t), H, buf.row(e * C + c));
        dispatch[w] = std::move(buf);
        if (counters) {
            counters->dispatch_in_elements.push_back(E * C * H);
            counters->dispatch_out_elements.push_back(E * C * H);
        }
    }

    // Even all-to-all: every pair moves e_local*C padded slots no matter how
    // routing came out.
    CountMatrix counts(W, std::vector<std::int64_t>(W, e_local * C));
    auto recv = alltoallv_rows(comm, dispatch, counts, "padded_dispatch_rows");

    // recv[w] layout: source-major, then w's local experts, then slot. Expert
    // compute runs over all W*C slots of each local expert; padded zero rows
    // pass through the bias-free MLP as zeros.
    const auto& kern = kernels::active();
    for (std::size_t w = 0; w < W; ++w) {
        Matrix out(recv[w].rows, H);
        for (std::int64_t le = 0; le < e_local; ++le) {
            const std::int64_t e = static_cast<std::int64_t>(w) * e_local + le;
            const std::size_t F = inst.weights.w1[e].cols;
            Matrix x(W * C, H);
            for (std::size_t src = 0; src < W; ++src)
                for (std::int64_t c = 0; c < C; ++c)
                    std::copy_n(recv[w].row((src * e_local + le) * C + c), H,
                                x.row(src * C + c));
            Matrix mid(W * C, F);
            kern.matmul(x.data.data(), inst.weights.w1[e].data.data(), mid.data.data(),
                        W * C, H, F);
            kern.relu(mid.data.data(), mid.data.size());
            Matrix y(W * C, H);
            kern.matmul(mid.data.data(), inst.weights.w2[e].data.data(), y.data.data(),
                        W * C, F, H);
            for (std::size_t src = 0; src < W; ++src)
                for (std::int64_t c = 0; c < C; ++c)
                    std::copy_n(y.row(src * C + c), H,
                                out.row((src * e_local + le) * C + c));
        }
        recv[w] = std::move(out);
    }

    // Reverse even all-to-all restores each worker's [E*C, H] layout, now
    // holding expert outputs.
    auto back = alltoallv_rows(comm, recv, alltoall_counts(counts), "padded_combine_rows");

    // Weighted combine through the mask.
    std::vector<Matrix> result(W);
    for (std::size_t w = 0; w < W; ++w) {
        const auto& m = masks[w];
        Matrix out(inst.tokens[w].rows, H);
        for (std::size_t t = 0; t < m.seq_len; ++t)
            for (std::int64_t e = 0; e < E; ++e)
                for (std::int64_t c = 0; c < C; ++c)
                    if (m.at(t, e, c))
                        kern.axpy(out.row(t), back[w].row(e * C + c),
                                  m.weight[t * E + e], H);
        result[w] = std::move(out);
    }
    return result;
}

}  // namespace moesim

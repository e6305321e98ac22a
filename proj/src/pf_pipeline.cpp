// SPDX-License-Identifier: Apache-2.0

#include "moesim/pf_pipeline.hpp"

#include <algorithm>

#include "moesim/error.hpp"
#include "moesim/kernels.hpp"

namespace moesim {

PfDispatch pf_dispatch(Comm& comm, const std::vector<Pft>& pfts, std::int64_t num_experts) {
    const std::size_t W = comm.group.size();
    if (pfts.size() != W)
        throw DimensionError("pf_dispatch: need one packed buffer per worker");
    if (num_experts % static_cast<std::int64_t>(W) != 0)
        throw ValidationError("num_experts must be divisible by the worker-group size");
    const std::int64_t e_local = num_experts / static_cast<std::int64_t>(W);

    CountMatrix counts(W, std::vector<std::int64_t>(W, 0));
    for (std::size_t i = 0; i < W; ++i) {
        if (pfts[i].tokens_per_expert.size() != static_cast<std::size_t>(num_experts))
            throw DimensionError("pf_dispatch: tokens_per_expert length mismatch");
        if (pfts[i].x.rows != pfts[i].size())
            throw DimensionError("pf_dispatch: packed rows not gathered");
        for (std::int64_t e = 0; e < num_experts; ++e)
            counts[i][e / e_local] += pfts[i].tokens_per_expert[e];
    }

    // Each pair exchanges the per-expert counts of the destination's block so
    // the receiver can segment arrivals; 8 bytes per count.
    CountMatrix meta(W, std::vector<std::int64_t>(W, 0));
    for (std::size_t i = 0; i < W; ++i)
        for (std::size_t j = 0; j < W; ++j)
            if (i != j) meta[i][j] = e_local * 8;
    charge_bytes(comm, meta, "dispatch_counts");

    std::vector<Matrix> send(W);
    for (std::size_t i = 0; i < W; ++i) send[i] = pfts[i].x;
    auto arrivals = alltoallv_rows(comm, send, counts, "dispatch_rows");

    PfDispatch out;
    out.row_counts = counts;
    out.recv_per_expert.assign(W, {});
    out.arrival_to_grouped.assign(W, {});
    out.expert_input.resize(W);
    for (std::size_t j = 0; j < W; ++j) {
        // Arrivals come (source, local expert, position); compute wants
        // (local expert, source, position).
        std::vector<std::int64_t> per_expert(e_local, 0);
        for (std::size_t src = 0; src < W; ++src)
            for (std::int64_t le = 0; le < e_local; ++le)
                per_expert[le] +=
                    pfts[src].tokens_per_expert[static_cast<std::int64_t>(j) * e_local + le];

        std::vector<std::int64_t> next(e_local, 0);
        for (std::int64_t le = 1; le < e_local; ++le)
            next[le] = next[le - 1] + per_expert[le - 1];

        const auto& arr = arrivals[j];
        Matrix grouped(arr.rows, arr.cols);
        std::vector<std::int64_t> a2g(arr.rows);
        std::size_t a = 0;
        for (std::size_t src = 0; src < W; ++src)
            for (std::int64_t le = 0; le < e_local; ++le) {
                const auto n =
                    pfts[src].tokens_per_expert[static_cast<std::int64_t>(j) * e_local + le];
                for (std::int64_t p = 0; p < n; ++p, ++a) {
                    const auto g = next[le]++;
                    a2g[a] = g;
                    std::copy_n(arr.row(a), arr.cols, grouped.row(g));
                }
            }
        if (a != arr.rows)
            throw CountMismatch("pf_dispatch: segment counts disagree with received rows");
        out.expert_input[j] = std::move(grouped);
        out.recv_per_expert[j] = std::move(per_expert);
        out.arrival_to_grouped[j] = std::move(a2g);
    }
    return out;
}

Matrix grouped_expert_mlp(const Matrix& input, const std::vector<std::int64_t>& rows_per_expert,
                          const MoeLayerWeights& weights, std::int64_t first_expert) {
    const auto& kern = kernels::active();
    Matrix out(input.rows, input.cols);
    std::size_t off = 0;
    for (std::size_t i = 0; i < rows_per_expert.size(); ++i) {
        const std::size_t n = rows_per_expert[i];
        if (n == 0) continue;
        const auto& w1 = weights.w1[first_expert + i];
        const auto& w2 = weights.w2[first_expert + i];
        if (input.cols != w1.rows)
            throw DimensionError("grouped_expert_mlp: activation width mismatch");
        const std::size_t F = w1.cols;
        Matrix mid(n, F);
        kern.matmul(input.row(off), w1.data.data(), mid.data.data(), n, input.cols, F);
        kern.relu(mid.data.data(), mid.data.size());
        kern.matmul(mid.data.data(), w2.data.data(), out.row(off), n, F, input.cols);
        off += n;
    }
    if (off != input.rows)
        throw CountMismatch("grouped_expert_mlp: segment counts disagree with input rows");
    return out;
}

std::vector<Matrix> pf_combine(Comm& comm, const PfDispatch& dispatch,
                               const std::vector<Matrix>& expert_out,
                               const std::vector<Pft>& pfts,
                               const std::vector<std::size_t>& seq_lens) {
    const std::size_t W = comm.group.size();
    if (expert_out.size() != W || pfts.size() != W || seq_lens.size() != W)
        throw DimensionError("pf_combine: per-worker argument length mismatch");

    // Undo the compute regroup; in arrival order the buffer is segmented by
    // return destination ascending, each destination's rows in its original
    // packed order.
    std::vector<Matrix> send(W);
    for (std::size_t j = 0; j < W; ++j) {
        const auto& a2g = dispatch.arrival_to_grouped[j];
        if (expert_out[j].rows != a2g.size())
            throw DimensionError("pf_combine: expert output rows mismatch");
        Matrix buf(expert_out[j].rows, expert_out[j].cols);
        for (std::size_t a = 0; a < a2g.size(); ++a)
            std::copy_n(expert_out[j].row(a2g[a]), expert_out[j].cols, buf.row(a));
        send[j] = std::move(buf);
    }
    auto back = alltoallv_rows(comm, send, alltoall_counts(dispatch.row_counts), "combine_rows");

    std::vector<Matrix> result(W);
    for (std::size_t w = 0; w < W; ++w)
        result[w] = scatter_combine(back[w], pfts[w].token_ids, pfts[w].combine_weights,
                                    seq_lens[w]);
    return result;
}

std::vector<Matrix> pf_moe_forward(const MoeInstance& inst, Comm& comm,
                                   ActivationCounters* counters) {
    const std::size_t W = comm.group.size();
    if (inst.tokens.size() != W)
        throw DimensionError("pf_moe_forward: need one token matrix per worker");
    const std::int64_t E = inst.num_experts;
    if (E % static_cast<std::int64_t>(W) != 0)
        throw ValidationError("num_experts must be divisible by the worker-group size");
    const std::int64_t e_local = E / static_cast<std::int64_t>(W);
    const std::size_t H = inst.weights.gate.rows;

    std::vector<Pft> pfts(W);
    for (std::size_t w = 0; w < W; ++w) {
        const auto gate = gate_forward(inst.tokens[w], inst.weights.gate, inst.top_k);
        pfts[w] = pft_construct(inst.max_token_count, E, gate);
        pfts[w].x = gather_rows(inst.tokens[w], pfts[w].token_ids);
    }

    auto disp = pf_dispatch(comm, pfts, E);

    std::vector<Matrix> expert_out(W);
    std::vector<std::size_t> seq_lens(W);
    for (std::size_t w = 0; w < W; ++w) {
        expert_out[w] = grouped_expert_mlp(disp.expert_input[w], disp.recv_per_expert[w],
                                           inst.weights, static_cast<std::int64_t>(w) * e_local);
        seq_lens[w] = inst.tokens[w].rows;
        if (counters) {
            counters->dispatch_in_elements.push_back(pfts[w].size() * H);
            counters->dispatch_out_elements.push_back(disp.expert_input[w].rows * H);
        }
    }
    return pf_combine(comm, disp, expert_out, pfts, seq_lens);
}

}  // namespace moesim

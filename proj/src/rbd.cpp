// SPDX-License-Identifier: Apache-2.0

#include "moesim/rbd.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <utility>

#include "moesim/error.hpp"
#include "moesim/kernels.hpp"
#include "moesim/pf_pipeline.hpp"

namespace moesim {

std::vector<std::int64_t> expert_nodes(const WorkerGroup& group, std::int64_t num_experts) {
    const auto W = static_cast<std::int64_t>(group.size());
    if (W == 0 || num_experts % W != 0)
        throw ValidationError("num_experts must be divisible by the worker-group size");
    const std::int64_t e_local = num_experts / W;
    std::vector<std::int64_t> nodes(num_experts);
    for (std::int64_t e = 0; e < num_experts; ++e) nodes[e] = group.node_of[e / e_local];
    return nodes;
}

RbdPlan select_pilots(const Pft& pft, const WorkerGroup& group, std::int64_t num_experts,
                      std::uint64_t seed) {
    const auto node_of_expert = expert_nodes(group, num_experts);
    if (pft.tokens_per_expert.size() != static_cast<std::size_t>(num_experts))
        throw DimensionError("select_pilots: tokens_per_expert length mismatch");
    const std::size_t B = pft.size();

    // Group copies by (token, destination node). An ordered map keeps the
    // random draws in a fixed order, so the plan is pure given the seed.
    std::map<std::pair<std::int64_t, std::int64_t>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < B; ++i) {
        const auto e = pft.expert_ids[i];
        if (e < 0 || e >= num_experts) throw IndexError("select_pilots: expert id out of range");
        groups[{pft.token_ids[i], node_of_expert[e]}].push_back(i);
    }

    RbdPlan plan;
    plan.pilot_mask.assign(B, 0);
    std::vector<std::int64_t> pilot_of(B, -1);  // packed row -> its group's pilot row
    Rng rng(seed);
    for (const auto& [key, members] : groups) {
        (void)key;
        const auto pilot = members[rng.below(members.size())];
        plan.pilot_mask[pilot] = 1;
        for (auto m : members) pilot_of[m] = static_cast<std::int64_t>(pilot);
    }

    // Split into pilot and replica ERI arrays (both stay expert-sorted as
    // subsequences of an expert-sorted buffer).
    plan.pilots.tokens_per_expert.assign(num_experts, 0);
    plan.replicas.tokens_per_expert.assign(num_experts, 0);
    std::vector<std::int64_t> pilot_seq(B, -1);
    std::vector<std::int64_t> pilot_rel(B, -1);
    std::vector<std::int64_t> seen_per_expert(num_experts, 0);
    for (std::size_t i = 0; i < B; ++i) {
        if (!plan.pilot_mask[i]) continue;
        const auto e = pft.expert_ids[i];
        pilot_seq[i] = static_cast<std::int64_t>(plan.pilots.size());
        pilot_rel[i] = seen_per_expert[e]++;
        plan.pilots.token_ids.push_back(pft.token_ids[i]);
        plan.pilots.expert_ids.push_back(e);
        plan.pilots.combine_weights.push_back(pft.combine_weights[i]);
        plan.pilots.tokens_per_expert[e] += 1;
    }
    for (std::size_t i = 0; i < B; ++i) {
        if (plan.pilot_mask[i]) continue;
        const auto e = pft.expert_ids[i];
        plan.replicas.token_ids.push_back(pft.token_ids[i]);
        plan.replicas.expert_ids.push_back(e);
        plan.replicas.combine_weights.push_back(pft.combine_weights[i]);
        plan.replicas.tokens_per_expert[e] += 1;
        plan.replica_pilot_seq.push_back(pilot_seq[pilot_of[i]]);
        plan.s1_mapping.push_back(pilot_rel[pilot_of[i]]);
    }
    return plan;
}

RbdDispatch rbd_dispatch(Comm& comm, const std::vector<Pft>& pfts,
                         const std::vector<RbdPlan>& plans, std::int64_t num_experts) {
    const std::size_t W = comm.group.size();
    if (pfts.size() != W || plans.size() != W)
        throw DimensionError("rbd_dispatch: need one packed buffer and plan per worker");
    if (W == 0 || num_experts % static_cast<std::int64_t>(W) != 0)
        throw ValidationError("num_experts must be divisible by the worker-group size");
    const std::int64_t e_local = num_experts / static_cast<std::int64_t>(W);

    std::size_t cols = 0;
    for (std::size_t w = 0; w < W; ++w) {
        const auto& p = pfts[w];
        const auto& pl = plans[w];
        if (p.tokens_per_expert.size() != static_cast<std::size_t>(num_experts))
            throw DimensionError("rbd_dispatch: tokens_per_expert length mismatch");
        if (p.x.rows != p.size())
            throw DimensionError("rbd_dispatch: packed rows not gathered");
        if (pl.pilot_mask.size() != p.size() ||
            pl.pilots.size() + pl.replicas.size() != p.size() ||
            pl.replica_pilot_seq.size() != pl.replicas.size() ||
            pl.s1_mapping.size() != pl.replicas.size())
            throw PlanMismatch("rbd_dispatch: plan inconsistent with packed buffer");
        if (p.x.cols > 0) cols = p.x.cols;
    }

    // Per-source bookkeeping: packed row of every pilot and replica, prefix
    // offsets into the packed buffer and into the pilot arrays.
    std::vector<std::vector<std::int64_t>> pilot_row(W), replica_row(W);
    std::vector<std::vector<std::int64_t>> block_off(W), pil_pfx(W);
    RbdDispatch out;
    out.source_pilot_multi.assign(W, {});
    for (std::size_t w = 0; w < W; ++w) {
        const auto& pl = plans[w];
        for (std::size_t i = 0; i < pfts[w].size(); ++i)
            (pl.pilot_mask[i] ? pilot_row[w] : replica_row[w]).push_back(
                static_cast<std::int64_t>(i));
        block_off[w].assign(num_experts + 1, 0);
        pil_pfx[w].assign(num_experts + 1, 0);
        for (std::int64_t e = 0; e < num_experts; ++e) {
            block_off[w][e + 1] = block_off[w][e] + pfts[w].tokens_per_expert[e];
            pil_pfx[w][e + 1] = pil_pfx[w][e] + pl.pilots.tokens_per_expert[e];
        }
        out.source_pilot_multi[w].assign(pl.pilots.size(), 0);
        for (auto s : pl.replica_pilot_seq) out.source_pilot_multi[w][s] = 1;
    }

    // Control plane mirrors the plain path: per-expert totals to each peer.
    CountMatrix counts_meta(W, std::vector<std::int64_t>(W, 0));
    for (std::size_t i = 0; i < W; ++i)
        for (std::size_t j = 0; j < W; ++j)
            if (i != j) counts_meta[i][j] = e_local * 8;
    charge_bytes(comm, counts_meta, "rbd_dispatch_counts");

    // Stage 1: pilot rows only, destination-segmented because the pilot
    // arrays are expert-sorted and ownership is a contiguous block.
    out.s1_counts.assign(W, std::vector<std::int64_t>(W, 0));
    std::vector<Matrix> s1_send(W);
    for (std::size_t w = 0; w < W; ++w) {
        const auto& pl = plans[w];
        Matrix buf(pl.pilots.size(), cols);
        for (std::size_t s = 0; s < pl.pilots.size(); ++s)
            std::copy_n(pfts[w].x.row(pilot_row[w][s]), cols, buf.row(s));
        s1_send[w] = std::move(buf);
        for (std::int64_t e = 0; e < num_experts; ++e)
            out.s1_counts[w][e / e_local] += pl.pilots.tokens_per_expert[e];
    }

    // Replica descriptors ride to the pilot's landing worker: two ERI
    // integers plus the mapping index, and the copy weights needed for the
    // combine-side scaling (every replica's, plus the pilot's own when the
    // group has replicas).
    CountMatrix meta(W, std::vector<std::int64_t>(W, 0));
    for (std::size_t w = 0; w < W; ++w) {
        const auto& pl = plans[w];
        for (std::size_t r = 0; r < pl.replicas.size(); ++r) {
            const auto L = pl.pilots.expert_ids[pl.replica_pilot_seq[r]] / e_local;
            meta[w][L] += 3 * 8 + comm.dtype_bytes;
        }
        for (std::size_t s = 0; s < pl.pilots.size(); ++s)
            if (out.source_pilot_multi[w][s])
                meta[w][pl.pilots.expert_ids[s] / e_local] += comm.dtype_bytes;
    }
    charge_bytes(comm, meta, "rbd_dispatch_meta");

    auto s1_arr = alltoallv_rows(comm, s1_send, out.s1_counts, "rbd_dispatch_rows1");

    // Landing-site arrival order: sources ascending, each source's pilots in
    // sequence order.
    std::vector<std::vector<std::pair<std::size_t, std::int64_t>>> landing(W);
    for (std::size_t src = 0; src < W; ++src)
        for (std::size_t s = 0; s < plans[src].pilots.size(); ++s)
            landing[plans[src].pilots.expert_ids[s] / e_local].emplace_back(
                src, static_cast<std::int64_t>(s));

    // Source segment offsets within each landing buffer, for the
    // relative-to-absolute re-encoding of mapping indices.
    std::vector<std::vector<std::int64_t>> src_off(W, std::vector<std::int64_t>(W + 1, 0));
    for (std::size_t L = 0; L < W; ++L)
        for (std::size_t w = 0; w < W; ++w)
            src_off[L][w + 1] = src_off[L][w] + out.s1_counts[w][L];

    // Stage-2 construction at each landing worker: reconstruct replica rows
    // from the arrived pilots and bucket them by owner. Iteration runs
    // sources ascending, replicas in sequence order, so every bucket is
    // deterministic.
    out.s2_counts.assign(W, std::vector<std::int64_t>(W, 0));
    out.s2_slot_pilot.assign(W, std::vector<std::vector<std::int64_t>>(W));
    out.s2_slot_weight.assign(W, std::vector<std::vector<double>>(W));
    // Per (landing, owner) bucket: the replica's (source, expert, rank) for
    // the merge at the owner; rank is the copy's position within its (source,
    // expert) segment.
    std::vector<std::vector<std::vector<std::array<std::int64_t, 3>>>> s2_desc(
        W, std::vector<std::vector<std::array<std::int64_t, 3>>>(W));
    CountMatrix meta2(W, std::vector<std::int64_t>(W, 0));
    for (std::size_t w = 0; w < W; ++w) {
        const auto& pl = plans[w];
        for (std::size_t r = 0; r < pl.replicas.size(); ++r) {
            const auto ep = pl.pilots.expert_ids[pl.replica_pilot_seq[r]];
            const auto L = static_cast<std::size_t>(ep / e_local);
            // Re-encode the relative mapping index to an absolute row in L's
            // stage-1 arrivals.
            const auto abs_row = src_off[L][w] +
                                 (pil_pfx[w][ep] - pil_pfx[w][L * e_local]) +
                                 pl.s1_mapping[r];
            const auto e = pl.replicas.expert_ids[r];
            const auto k = static_cast<std::size_t>(e / e_local);
            if (comm.group.node_of[k] != comm.group.node_of[L])
                throw CountMismatch("rbd_dispatch: replica owner off the pilot's node");
            const auto rank = replica_row[w][r] - block_off[w][e];
            out.s2_slot_pilot[L][k].push_back(abs_row);
            out.s2_slot_weight[L][k].push_back(pl.replicas.combine_weights[r]);
            s2_desc[L][k].push_back({static_cast<std::int64_t>(w), e, rank});
            out.s2_counts[L][k] += 1;
            meta2[L][k] += 3 * 8;
        }
    }
    charge_bytes(comm, meta2, "rbd_dispatch_meta2");

    std::vector<Matrix> s2_send(W);
    for (std::size_t L = 0; L < W; ++L) {
        std::int64_t rows = 0;
        for (std::size_t k = 0; k < W; ++k) rows += out.s2_counts[L][k];
        Matrix buf(rows, cols);
        std::int64_t at = 0;
        for (std::size_t k = 0; k < W; ++k)
            for (auto abs_row : out.s2_slot_pilot[L][k])
                std::copy_n(s1_arr[L].row(abs_row), cols, buf.row(at++));
        s2_send[L] = std::move(buf);
    }
    auto s2_arr = alltoallv_rows(comm, s2_send, out.s2_counts, "rbd_dispatch_rows2");

    // Merge at each owner into (local expert, source, source position) order,
    // the exact layout the plain dispatch produces. Row positions come in
    // closed form from the exchanged per-expert counts.
    out.expert_input.resize(W);
    out.recv_per_expert.assign(W, {});
    out.landed_pos.assign(W, {});
    out.landed_weight.assign(W, {});
    out.landed_multi.assign(W, {});
    out.s2_recv_pos.assign(W, std::vector<std::vector<std::int64_t>>(W));
    for (std::size_t k = 0; k < W; ++k) {
        std::vector<std::int64_t> per_expert(e_local, 0);
        for (std::int64_t le = 0; le < e_local; ++le)
            for (std::size_t w = 0; w < W; ++w)
                per_expert[le] +=
                    pfts[w].tokens_per_expert[static_cast<std::int64_t>(k) * e_local + le];
        std::vector<std::int64_t> expert_base(e_local + 1, 0);
        for (std::int64_t le = 0; le < e_local; ++le)
            expert_base[le + 1] = expert_base[le] + per_expert[le];

        // Grouped row of copy (source w, expert e, rank p).
        auto grouped_row = [&](std::size_t w, std::int64_t e, std::int64_t p) {
            const auto le = e % e_local;
            std::int64_t before = 0;
            for (std::size_t w2 = 0; w2 < w; ++w2)
                before += pfts[w2].tokens_per_expert[e];
            return expert_base[le] + before + p;
        };

        Matrix grouped(expert_base[e_local], cols);
        out.landed_pos[k].reserve(landing[k].size());
        for (std::size_t a = 0; a < landing[k].size(); ++a) {
            const auto [w, s] = landing[k][a];
            const auto e = plans[w].pilots.expert_ids[s];
            const auto g = grouped_row(w, e, pilot_row[w][s] - block_off[w][e]);
            std::copy_n(s1_arr[k].row(a), cols, grouped.row(g));
            out.landed_pos[k].push_back(g);
            out.landed_weight[k].push_back(plans[w].pilots.combine_weights[s]);
            out.landed_multi[k].push_back(out.source_pilot_multi[w][s]);
        }
        std::int64_t at = 0;
        for (std::size_t L = 0; L < W; ++L) {
            for (const auto& desc : s2_desc[L][k]) {
                const auto g = grouped_row(static_cast<std::size_t>(desc[0]), desc[1], desc[2]);
                std::copy_n(s2_arr[k].row(at++), cols, grouped.row(g));
                out.s2_recv_pos[k][L].push_back(g);
            }
        }
        out.expert_input[k] = std::move(grouped);
        out.recv_per_expert[k] = std::move(per_expert);
    }
    return out;
}

std::vector<Matrix> rbd_combine(Comm& comm, const RbdDispatch& dispatch,
                                const std::vector<Matrix>& expert_out,
                                const std::vector<RbdPlan>& plans,
                                const std::vector<std::size_t>& seq_lens) {
    const std::size_t W = comm.group.size();
    if (expert_out.size() != W || plans.size() != W || seq_lens.size() != W)
        throw DimensionError("rbd_combine: per-worker argument length mismatch");
    const auto& kern = kernels::active();
    std::size_t cols = 0;
    for (const auto& m : expert_out)
        if (m.rows > 0) cols = m.cols;

    // Reverse stage 2: owners return replica expert-outputs, in the exact
    // slot order of the forward exchange.
    std::vector<Matrix> rs2_send(W);
    for (std::size_t k = 0; k < W; ++k) {
        std::int64_t rows = 0;
        for (std::size_t L = 0; L < W; ++L)
            rows += static_cast<std::int64_t>(dispatch.s2_recv_pos[k][L].size());
        Matrix buf(rows, cols);
        std::int64_t at = 0;
        for (std::size_t L = 0; L < W; ++L)
            for (auto pos : dispatch.s2_recv_pos[k][L])
                std::copy_n(expert_out[k].row(pos), cols, buf.row(at++));
        rs2_send[k] = std::move(buf);
    }
    auto rs2 = alltoallv_rows(comm, rs2_send, alltoall_counts(dispatch.s2_counts),
                              "rbd_combine_rows2");

    // Scale and merge each group at its landing worker. Multi-copy groups
    // fold every weighted copy into the pilot row; singletons return raw.
    std::vector<Matrix> merged(W);
    for (std::size_t L = 0; L < W; ++L) {
        Matrix buf(dispatch.landed_pos[L].size(), cols);
        for (std::size_t p = 0; p < dispatch.landed_pos[L].size(); ++p) {
            std::copy_n(expert_out[L].row(dispatch.landed_pos[L][p]), cols, buf.row(p));
            if (dispatch.landed_multi[L][p])
                kern.scale(buf.row(p), dispatch.landed_weight[L][p], cols);
        }
        std::int64_t at = 0;
        for (std::size_t k = 0; k < W; ++k)
            for (std::size_t slot = 0; slot < dispatch.s2_slot_pilot[L][k].size(); ++slot) {
                // Slot indices were absolute stage-1 arrival rows, which is
                // also the landed-pilot order.
                const auto pilot = dispatch.s2_slot_pilot[L][k][slot];
                kern.axpy(buf.row(pilot), rs2[L].row(at++),
                          dispatch.s2_slot_weight[L][k][slot], cols);
            }
        merged[L] = std::move(buf);
    }

    // Reverse stage 1: one row per pilot goes home; arrival order at the
    // source is its own pilot order.
    auto rs1 = alltoallv_rows(comm, merged, alltoall_counts(dispatch.s1_counts),
                              "rbd_combine_rows1");

    std::vector<Matrix> result(W);
    for (std::size_t w = 0; w < W; ++w) {
        const auto& pl = plans[w];
        if (rs1[w].rows != pl.pilots.size())
            throw CountMismatch("rbd_combine: returned rows disagree with pilot count");
        Matrix out_w(seq_lens[w], cols);
        for (std::size_t s = 0; s < pl.pilots.size(); ++s) {
            const double scale = dispatch.source_pilot_multi[w][s]
                                     ? 1.0
                                     : pl.pilots.combine_weights[s];
            kern.axpy(out_w.row(pl.pilots.token_ids[s]), rs1[w].row(s), scale, cols);
        }
        result[w] = std::move(out_w);
    }
    return result;
}

std::vector<Matrix> rbd_moe_forward(const MoeInstance& inst, Comm& comm, std::uint64_t seed) {
    const std::size_t W = comm.group.size();
    if (inst.tokens.size() != W)
        throw DimensionError("rbd_moe_forward: need one token matrix per worker");
    const std::int64_t E = inst.num_experts;
    if (E % static_cast<std::int64_t>(W) != 0)
        throw ValidationError("num_experts must be divisible by the worker-group size");
    const std::int64_t e_local = E / static_cast<std::int64_t>(W);

    std::vector<Pft> pfts(W);
    std::vector<RbdPlan> plans(W);
    std::vector<std::size_t> seq_lens(W);
    for (std::size_t w = 0; w < W; ++w) {
        const auto gate = gate_forward(inst.tokens[w], inst.weights.gate, inst.top_k);
        pfts[w] = pft_construct(inst.max_token_count, E, gate);
        pfts[w].x = gather_rows(inst.tokens[w], pfts[w].token_ids);
        plans[w] = select_pilots(pfts[w], comm.group, E, salt_seed(seed, w, 0));
        seq_lens[w] = inst.tokens[w].rows;
    }

    auto disp = rbd_dispatch(comm, pfts, plans, E);
    std::vector<Matrix> expert_out(W);
    for (std::size_t w = 0; w < W; ++w)
        expert_out[w] = grouped_expert_mlp(disp.expert_input[w], disp.recv_per_expert[w],
                                           inst.weights, static_cast<std::int64_t>(w) * e_local);
    return rbd_combine(comm, disp, expert_out, plans, seq_lens);
}

namespace {

double rate_from_pairs(std::vector<std::pair<std::int64_t, std::int64_t>>& pairs) {
    if (pairs.empty()) return 0.0;
    const double total = static_cast<double>(pairs.size());
    std::sort(pairs.begin(), pairs.end());
    const double groups = static_cast<double>(
        std::unique(pairs.begin(), pairs.end()) - pairs.begin());
    return 1.0 - groups / total;
}

}  // namespace

double redundancy_rate(const std::vector<std::int64_t>& top_experts, std::int64_t top_k,
                       const std::vector<std::int64_t>& expert_node) {
    if (top_k < 1) throw ValidationError("top_k must be >= 1");
    std::vector<std::pair<std::int64_t, std::int64_t>> pairs;
    pairs.reserve(top_experts.size());
    for (std::size_t f = 0; f < top_experts.size(); ++f) {
        const auto e = top_experts[f];
        if (e < 0 || e >= static_cast<std::int64_t>(expert_node.size()))
            throw IndexError("redundancy_rate: expert id out of range");
        pairs.emplace_back(static_cast<std::int64_t>(f) / top_k, expert_node[e]);
    }
    return rate_from_pairs(pairs);
}

double redundancy_rate(const Pft& pft, const std::vector<std::int64_t>& expert_node) {
    std::vector<std::pair<std::int64_t, std::int64_t>> pairs;
    pairs.reserve(pft.size());
    for (std::size_t i = 0; i < pft.size(); ++i) {
        const auto e = pft.expert_ids[i];
        if (e < 0 || e >= static_cast<std::int64_t>(expert_node.size()))
            throw IndexError("redundancy_rate: expert id out of range");
        pairs.emplace_back(pft.token_ids[i], expert_node[e]);
    }
    return rate_from_pairs(pairs);
}

RedundancyCounts internode_redundancy_counts(const Pft& pft, std::int64_t source_node,
                                             const std::vector<std::int64_t>& expert_node) {
    std::vector<std::pair<std::int64_t, std::int64_t>> pairs;
    for (std::size_t i = 0; i < pft.size(); ++i) {
        const auto e = pft.expert_ids[i];
        if (e < 0 || e >= static_cast<std::int64_t>(expert_node.size()))
            throw IndexError("internode_redundancy_counts: expert id out of range");
        if (expert_node[e] != source_node)
            pairs.emplace_back(pft.token_ids[i], expert_node[e]);
    }
    RedundancyCounts c;
    c.copies = static_cast<std::int64_t>(pairs.size());
    std::sort(pairs.begin(), pairs.end());
    c.groups = std::unique(pairs.begin(), pairs.end()) - pairs.begin();
    return c;
}

double redundancy_rate_internode(const Pft& pft, std::int64_t source_node,
                                 const std::vector<std::int64_t>& expert_node) {
    const auto c = internode_redundancy_counts(pft, source_node, expert_node);
    if (c.copies == 0) return 0.0;
    return 1.0 - static_cast<double>(c.groups) / static_cast<double>(c.copies);
}

double sample_redundancy(Rng& rng, std::size_t tokens, std::int64_t top_k,
                         const std::vector<std::int64_t>& expert_node) {
    const auto E = static_cast<std::int64_t>(expert_node.size());
    if (top_k < 1) throw ValidationError("top_k must be >= 1");
    if (top_k > E) throw ValidationError("top_k must be <= num_experts");
    if (tokens == 0) return 0.0;

    std::vector<std::int64_t> ids(E);
    for (std::int64_t e = 0; e < E; ++e) ids[e] = e;
    std::vector<std::int64_t> nodes(top_k);
    std::uint64_t distinct_total = 0;
    for (std::size_t t = 0; t < tokens; ++t) {
        for (std::int64_t j = 0; j < top_k; ++j) {
            const auto pick = j + static_cast<std::int64_t>(rng.below(E - j));
            std::swap(ids[j], ids[pick]);
            nodes[j] = expert_node[ids[j]];
        }
        std::sort(nodes.begin(), nodes.end());
        distinct_total += static_cast<std::uint64_t>(
            std::unique(nodes.begin(), nodes.end()) - nodes.begin());
    }
    return 1.0 - static_cast<double>(distinct_total) /
                     (static_cast<double>(tokens) * static_cast<double>(top_k));
}

}  // namespace moesim

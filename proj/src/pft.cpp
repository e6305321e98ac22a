// SPDX-License-Identifier: Apache-2.0

#include "moesim/pft.hpp"

#include <algorithm>

#include "moesim/error.hpp"
#include "moesim/kernels.hpp"

namespace moesim {

Pft pft_construct(std::int64_t max_token_count, std::int64_t num_experts,
                  std::size_t seq_len, std::int64_t top_k,
                  const std::vector<std::int64_t>& top_experts,
                  const std::vector<double>& combine_weights) {
    if (max_token_count < 1) throw ValidationError("max_token_count must be >= 1");
    if (num_experts < 1) throw ValidationError("num_experts must be >= 1");
    if (top_k < 1) throw ValidationError("top_k must be >= 1");
    const std::size_t flat = seq_len * static_cast<std::size_t>(top_k);
    if (top_experts.size() != flat || combine_weights.size() != flat)
        throw DimensionError("pft_construct: routing arrays must be seq_len * top_k");

    for (std::size_t t = 0; t < seq_len; ++t) {
        for (std::int64_t a = 0; a < top_k; ++a) {
            const std::int64_t e = top_experts[t * top_k + a];
            if (e < 0 || e >= num_experts) throw IndexError("expert id out of range");
            for (std::int64_t b = 0; b < a; ++b)
                if (top_experts[t * top_k + b] == e)
                    throw ValidationError("top_experts rows must contain distinct expert ids");
        }
    }

    // Bucket routing positions by expert; iteration order keeps each bucket
    // ascending in flat position.
    std::vector<std::vector<std::int64_t>> bucket(num_experts);
    for (std::size_t f = 0; f < flat; ++f) bucket[top_experts[f]].push_back(f);

    Pft pft;
    pft.tokens_per_expert.assign(num_experts, 0);
    for (std::int64_t e = 0; e < num_experts; ++e) {
        auto& members = bucket[e];
        if (members.size() > static_cast<std::size_t>(max_token_count)) {
            std::sort(members.begin(), members.end(),
                      [&](std::int64_t a, std::int64_t b) {
                          if (combine_weights[a] != combine_weights[b])
                              return combine_weights[a] > combine_weights[b];
                          return a < b;
                      });
            members.resize(max_token_count);
            std::sort(members.begin(), members.end());
        }
        pft.tokens_per_expert[e] = members.size();
        for (std::int64_t f : members) {
            pft.token_ids.push_back(f / top_k);
            pft.expert_ids.push_back(e);
            pft.combine_weights.push_back(combine_weights[f]);
        }
    }
    return pft;
}

Pft pft_construct(std::int64_t max_token_count, std::int64_t num_experts,
                  const GateOutput& gate) {
    return pft_construct(max_token_count, num_experts, gate.gate_out.rows,
                         gate.top_k, gate.top_experts, gate.combine_weights);
}

Matrix gather_rows(const Matrix& src, const std::vector<std::int64_t>& ids) {
    Matrix out(ids.size(), src.cols);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const std::int64_t id = ids[i];
        if (id < 0 || static_cast<std::size_t>(id) >= src.rows)
            throw IndexError("gather_rows: row id out of range");
        std::copy_n(src.row(id), src.cols, out.row(i));
    }
    return out;
}

Matrix scatter_combine(const Matrix& rows, const std::vector<std::int64_t>& token_ids,
                       const std::vector<double>& weights, std::size_t seq_len) {
    if (rows.rows != token_ids.size() || rows.rows != weights.size())
        throw DimensionError("scatter_combine: rows and ERI arrays disagree");
    Matrix out(seq_len, rows.cols);
    for (std::size_t i = 0; i < rows.rows; ++i) {
        const std::int64_t t = token_ids[i];
        if (t < 0 || static_cast<std::size_t>(t) >= seq_len)
            throw IndexError("scatter_combine: token id out of range");
        kernels::active().axpy(out.row(t), rows.row(i), weights[i], rows.cols);
    }
    return out;
}

}  // namespace moesim

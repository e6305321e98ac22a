// SPDX-License-Identifier: Apache-2.0

#include "moesim/collectives.hpp"

#include <algorithm>
#include <cstdio>

#include "moesim/error.hpp"

namespace moesim {

LedgerTotals CostLedger::totals(std::string_view kind_prefix) const {
    LedgerTotals t;
    for (const auto& e : entries_) {
        if (e.kind.rfind(kind_prefix, 0) != 0) continue;
        t.self_bytes += e.self_bytes;
        t.intra_bytes += e.intra_bytes;
        t.inter_bytes += e.inter_bytes;
        t.intra_msgs += e.intra_msgs;
        t.inter_msgs += e.inter_msgs;
        t.time_s += e.time_s;
    }
    return t;
}

void CostLedger::write_csv(std::ostream& out) const {
    out << "collective_id,kind,intra_bytes,inter_bytes,modeled_time_s\n";
    char buf[64];
    for (const auto& e : entries_) {
        std::snprintf(buf, sizeof buf, "%.12g", e.time_s);
        out << e.id << ',' << e.kind << ',' << e.intra_bytes << ','
            << e.inter_bytes << ',' << buf << '\n';
    }
}

namespace {

enum class Link { kSelf, kIntra, kInter };

Link classify(const WorkerGroup& g, std::size_t i, std::size_t j) {
    if (i == j) return Link::kSelf;
    return g.node_of[i] == g.node_of[j] ? Link::kIntra : Link::kInter;
}

void check_counts_shape(const CountMatrix& counts, std::size_t w, const char* who) {
    if (counts.size() != w)
        throw DimensionError(std::string(who) + ": counts must be W x W");
    for (const auto& row : counts) {
        if (row.size() != w)
            throw DimensionError(std::string(who) + ": counts must be W x W");
        for (std::int64_t c : row)
            if (c < 0) throw ValidationError(std::string(who) + ": counts must be >= 0");
    }
}

// One message i -> j of `bytes` wire bytes: accumulate class bytes and the
// sender's alpha-beta cost.
void charge_message(const Comm& comm, LedgerEntry& e, std::vector<double>& sender_time,
                    std::size_t i, std::size_t j, std::uint64_t bytes) {
    switch (classify(comm.group, i, j)) {
        case Link::kSelf:
            e.self_bytes += bytes;
            break;
        case Link::kIntra:
            e.intra_bytes += bytes;
            e.intra_msgs += 1;
            sender_time[i] += comm.topo.latency_intra +
                              static_cast<double>(bytes) / comm.topo.bw_intra;
            break;
        case Link::kInter:
            e.inter_bytes += bytes;
            e.inter_msgs += 1;
            sender_time[i] += comm.topo.latency_inter +
                              static_cast<double>(bytes) / comm.topo.bw_inter;
            break;
    }
}

}  // namespace

CountMatrix alltoall_counts(const CountMatrix& counts) {
    const std::size_t w = counts.size();
    check_counts_shape(counts, w, "alltoall_counts");
    CountMatrix out(w, std::vector<std::int64_t>(w, 0));
    for (std::size_t i = 0; i < w; ++i)
        for (std::size_t j = 0; j < w; ++j) out[j][i] = counts[i][j];
    return out;
}

std::vector<Matrix> alltoallv_rows(Comm& comm, const std::vector<Matrix>& send,
                                   const CountMatrix& counts, std::string kind) {
    const std::size_t w = comm.group.size();
    if (send.size() != w) throw DimensionError("alltoallv_rows: need one buffer per worker");
    check_counts_shape(counts, w, "alltoallv_rows");

    std::size_t cols = 0;
    for (const auto& m : send)
        if (m.rows > 0) cols = m.cols;
    for (std::size_t i = 0; i < w; ++i) {
        std::int64_t total = 0;
        for (std::size_t j = 0; j < w; ++j) total += counts[i][j];
        if (static_cast<std::size_t>(total) != send[i].rows)
            throw CountMismatch("alltoallv_rows: send counts do not match buffer rows");
        if (send[i].rows > 0 && send[i].cols != cols)
            throw DimensionError("alltoallv_rows: buffers disagree on row width");
    }

    // Receive side: segments land in ascending source order.
    std::vector<Matrix> recv(w);
    for (std::size_t j = 0; j < w; ++j) {
        std::size_t rows = 0;
        for (std::size_t i = 0; i < w; ++i) rows += counts[i][j];
        recv[j] = Matrix(rows, cols);
    }
    std::vector<std::size_t> write_pos(w, 0);
    const std::uint64_t row_bytes =
        static_cast<std::uint64_t>(cols) * static_cast<std::uint64_t>(comm.dtype_bytes);

    LedgerEntry local;
    LedgerEntry& e = comm.ledger ? comm.ledger->add(std::move(kind)) : local;
    std::vector<double> sender_time(w, 0.0);

    for (std::size_t i = 0; i < w; ++i) {
        std::size_t read_pos = 0;
        for (std::size_t j = 0; j < w; ++j) {
            const auto n = static_cast<std::size_t>(counts[i][j]);
            if (n == 0) continue;
            for (std::size_t r = 0; r < n; ++r)
                std::copy_n(send[i].row(read_pos + r), cols,
                            recv[j].row(write_pos[j] + r));
            read_pos += n;
            write_pos[j] += n;
            charge_message(comm, e, sender_time, i, j,
                           static_cast<std::uint64_t>(n) * row_bytes);
        }
    }
    e.time_s = sender_time.empty()
                   ? 0.0
                   : *std::max_element(sender_time.begin(), sender_time.end());
    return recv;
}

Matrix allgather_rows(Comm& comm, const std::vector<Matrix>& shards, std::string kind) {
    const std::size_t w = comm.group.size();
    if (shards.size() != w) throw DimensionError("allgather_rows: need one shard per worker");
    std::size_t cols = 0, total_rows = 0;
    for (const auto& m : shards) {
        if (m.rows > 0) {
            if (cols != 0 && m.cols != cols)
                throw DimensionError("allgather_rows: shards disagree on row width");
            cols = m.cols;
        }
        total_rows += m.rows;
    }

    Matrix out(total_rows, cols);
    std::size_t pos = 0;
    for (const auto& m : shards) {
        std::copy_n(m.data.data(), m.rows * cols, out.row(pos));
        pos += m.rows;
    }

    if (comm.ledger && w > 1) {
        LedgerEntry& e = comm.ledger->add(std::move(kind));
        // Synchronous ring: at step s, worker i forwards shard (i - s mod W)
        // to worker i+1; after W-1 steps everyone holds everything.
        double total_time = 0.0;
        std::vector<double> one(w, 0.0);
        for (std::size_t step = 0; step < w - 1; ++step) {
            double step_time = 0.0;
            for (std::size_t i = 0; i < w; ++i) {
                const std::size_t j = (i + 1) % w;
                const std::size_t chunk = (i + w - step) % w;
                const std::uint64_t bytes = static_cast<std::uint64_t>(shards[chunk].rows) *
                                            cols * comm.dtype_bytes;
                if (bytes == 0) continue;
                one[i] = 0.0;
                charge_message(comm, e, one, i, j, bytes);
                step_time = std::max(step_time, one[i]);
            }
            total_time += step_time;
        }
        e.time_s = total_time;
    }
    return out;
}

void charge_bytes(Comm& comm, const CountMatrix& bytes, std::string kind) {
    const std::size_t w = comm.group.size();
    check_counts_shape(bytes, w, "charge_bytes");
    if (!comm.ledger) return;
    LedgerEntry& e = comm.ledger->add(std::move(kind));
    std::vector<double> sender_time(w, 0.0);
    for (std::size_t i = 0; i < w; ++i)
        for (std::size_t j = 0; j < w; ++j)
            if (bytes[i][j] > 0)
                charge_message(comm, e, sender_time, i, j,
                               static_cast<std::uint64_t>(bytes[i][j]));
    e.time_s = sender_time.empty()
                   ? 0.0
                   : *std::max_element(sender_time.begin(), sender_time.end());
}

}  // namespace moesim

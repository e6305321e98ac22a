// SPDX-License-Identifier: Apache-2.0
//
// Single-process simulation of the collectives the pipelines use, with a cost
// ledger. Buffers are per-worker vectors indexed by group-local rank; a call
// executes the whole collective at once.
//
// Byte accounting per message class:
//   self  - sender and receiver are the same worker (no network)
//   intra - same node, different worker
//   inter - different nodes
// Modeled time follows a per-destination alpha-beta model: each worker pays
// latency + bytes/bandwidth per nonzero message it sends, and the collective
// takes the maximum over workers. The all-gather instead walks a ring,
// summing per-step maxima.
#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "moesim/config.hpp"
#include "moesim/matrix.hpp"
#include "moesim/placement.hpp"

namespace moesim {

using CountMatrix = std::vector<std::vector<std::int64_t>>;

struct LedgerEntry {
    std::int64_t id = 0;
    std::string kind;
    std::uint64_t self_bytes = 0;
    std::uint64_t intra_bytes = 0;
    std::uint64_t inter_bytes = 0;
    std::uint64_t intra_msgs = 0;
    std::uint64_t inter_msgs = 0;
    double time_s = 0.0;
};

struct LedgerTotals {
    std::uint64_t self_bytes = 0;
    std::uint64_t intra_bytes = 0;
    std::uint64_t inter_bytes = 0;
    std::uint64_t intra_msgs = 0;
    std::uint64_t inter_msgs = 0;
    double time_s = 0.0;
};

class CostLedger {
  public:
    LedgerEntry& add(std::string kind) {
        entries_.push_back(LedgerEntry{next_id_++, std::move(kind), 0, 0, 0, 0, 0, 0.0});
        return entries_.back();
    }
    const std::vector<LedgerEntry>& entries() const { return entries_; }

    // Sum over entries whose kind starts with the given prefix (empty matches
    // everything).
    LedgerTotals totals(std::string_view kind_prefix = {}) const;

    // collective_id,kind,intra_bytes,inter_bytes,modeled_time_s
    void write_csv(std::ostream& out) const;

  private:
    std::vector<LedgerEntry> entries_;
    std::int64_t next_id_ = 0;
};

// Everything a collective needs to run and be priced.
struct Comm {
    WorkerGroup group;
    Topology topo;  // only bandwidth/latency fields are read
    std::int64_t dtype_bytes = 2;
    CostLedger* ledger = nullptr;
};

// Transposes a [W, W] send-count matrix: entry [i][j] moves from "i sends j"
// to "j receives from i". Pure bookkeeping, no ledger traffic.
CountMatrix alltoall_counts(const CountMatrix& counts);

// Exchanges rows. send[i] holds worker i's rows as contiguous segments in
// ascending destination order, counts[i][j] rows each; the result for worker
// j concatenates segments from sources in ascending source order. Row bytes
// are charged as rows * cols * dtype_bytes.
std::vector<Matrix> alltoallv_rows(Comm& comm, const std::vector<Matrix>& send,
                                   const CountMatrix& counts, std::string kind);

// Ring all-gather of per-worker shards; every worker ends with the full
// concatenation (returned once).
Matrix allgather_rows(Comm& comm, const std::vector<Matrix>& shards, std::string kind);

// Charges an explicit [W, W] byte matrix (control-plane messages: count
// exchanges, routing metadata). No payload moves through this call.
void charge_bytes(Comm& comm, const CountMatrix& bytes, std::string kind);

// Serialization time of a traffic aggregate, ignoring latency and self
// traffic: the composite of several collectives is compared by what its
// bytes cost on each link class. Per-entry time_s stays the per-collective
// bottleneck model; this is the whole-path view used when stages with
// different bottleneck workers are chained.
inline double serialized_time(const LedgerTotals& t, const Topology& topo) {
    return static_cast<double>(t.intra_bytes) / topo.bw_intra +
           static_cast<double>(t.inter_bytes) / topo.bw_inter;
}

}  // namespace moesim

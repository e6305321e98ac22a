// SPDX-License-Identifier: Apache-2.0
//
// Model, cluster, and run descriptions. Scale parameters describe the modeled
// training job; the simulator itself only ever materializes desk-scale
// instances of them.
#pragma once

#include <cstdint>
#include <string>

namespace moesim {

struct ModelConfig {
    std::string name = "custom";
    std::int64_t num_experts = 64;         // experts per MoE layer
    std::int64_t model_dim = 2048;         // hidden size entering the layer
    std::int64_t ffn_dim = 1408;           // expert FFN inner size
    std::int64_t top_k = 6;                // experts selected per token
    std::int64_t seq_len = 2048;           // tokens per sequence
    std::int64_t micro_batch = 1;          // sequences per device step
    std::int64_t num_layers = 28;
    std::int64_t fine_grained_factor = 1;  // expert-splitting factor vs a conventional layer
    double capacity_factor = 1.25;
    std::int64_t dtype_bytes = 2;          // wire bytes per element in the cost model

    // Tokens a device contributes to one MoE layer.
    std::int64_t local_tokens() const { return micro_batch * seq_len; }
};

struct Topology {
    std::int64_t num_nodes = 1;
    std::int64_t gpus_per_node = 8;
    double bw_intra = 200e9;     // bytes/s between GPUs of one node
    double bw_inter = 25e9;      // bytes/s between GPUs of different nodes
    double latency_intra = 0.0;  // seconds per message
    double latency_inter = 0.0;

    std::int64_t workers() const { return num_nodes * gpus_per_node; }
    std::int64_t node_of(std::int64_t worker) const { return worker / gpus_per_node; }
};

enum class PlacementStrategy {
    kEpFirst,  // consecutive workers form an expert-parallel group
    kDpFirst,  // expert-parallel groups stride across nodes; an expert's
               // replicas end up co-located within a node
};

struct RunConfig {
    ModelConfig model;
    Topology topology;
    std::int64_t ep_size = 0;  // resolved to topology.workers() when left 0
    PlacementStrategy strategy = PlacementStrategy::kEpFirst;
    std::uint64_t seed = 0;
    std::int64_t max_token_count = 0;  // per-worker expert capacity; 0 = derive
    std::int64_t ssmb_group = 1;       // sequence-shard count G
};

// Per-worker expert capacity implied by the capacity factor when the file does
// not pin max_token_count: ceil(c * local_tokens * top_k / num_experts).
std::int64_t derived_max_token_count(const ModelConfig& m);

// Reads the documented JSON schema (sections "model", "topology", "run").
// Unknown keys and malformed text raise ParseError naming the key; values
// violating the contract raise ValidationError with a stable message.
// Validation also resolves ep_size and max_token_count defaults.
RunConfig load_config(const std::string& path);
RunConfig load_config_text(const std::string& text);

// Shared validation for configs built in code.
void validate(RunConfig& cfg);

// Built-in model presets ("small", "medium", "large", "super").
ModelConfig named_model(const std::string& name);

PlacementStrategy parse_strategy(const std::string& name);
const char* strategy_name(PlacementStrategy s);

}  // namespace moesim

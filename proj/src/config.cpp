// SPDX-License-Identifier: Apache-2.0

#include "moesim/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "moesim/error.hpp"

namespace moesim {

using nlohmann::json;

namespace {

// Pull one key out of a section, type-checked, erasing it so leftovers can be
// reported as unknown.
template <typename T>
void take(json& section, const std::string& section_name, const char* key, T& out) {
    auto it = section.find(key);
    if (it == section.end()) return;
    try {
        out = it->get<T>();
    } catch (const json::exception&) {
        throw ParseError("bad value type for key: " + section_name + "." + key);
    }
    section.erase(it);
}

void reject_leftovers(const json& section, const std::string& section_name) {
    for (auto it = section.begin(); it != section.end(); ++it)
        throw ParseError("unknown key: " + section_name + "." + it.key());
}

void require(bool ok, const char* msg) {
    if (!ok) throw ValidationError(msg);
}

}  // namespace

std::int64_t derived_max_token_count(const ModelConfig& m) {
    const double raw = m.capacity_factor *
                       static_cast<double>(m.local_tokens()) *
                       static_cast<double>(m.top_k) /
                       static_cast<double>(m.num_experts);
    const auto cap = static_cast<std::int64_t>(std::ceil(raw));
    return cap < 1 ? 1 : cap;
}

void validate(RunConfig& cfg) {
    const ModelConfig& m = cfg.model;
    require(m.num_experts >= 1, "num_experts must be >= 1");
    require(m.model_dim >= 1, "model_dim must be >= 1");
    require(m.ffn_dim >= 1, "ffn_dim must be >= 1");
    require(m.top_k >= 1, "top_k must be >= 1");
    require(m.top_k <= m.num_experts, "top_k must be <= num_experts");
    require(m.seq_len >= 1, "seq_len must be >= 1");
    require(m.micro_batch >= 1, "micro_batch must be >= 1");
    require(m.num_layers >= 1, "num_layers must be >= 1");
    require(m.fine_grained_factor >= 1, "fine_grained_factor must be >= 1");
    require(m.capacity_factor > 0.0, "capacity_factor must be > 0");
    require(m.dtype_bytes >= 1, "dtype_bytes must be >= 1");

    const Topology& t = cfg.topology;
    require(t.num_nodes >= 1, "num_nodes must be >= 1");
    require(t.gpus_per_node >= 1, "gpus_per_node must be >= 1");
    require(t.bw_intra > 0.0, "bw_intra must be > 0");
    require(t.bw_inter > 0.0, "bw_inter must be > 0");
    require(t.latency_intra >= 0.0, "latency_intra must be >= 0");
    require(t.latency_inter >= 0.0, "latency_inter must be >= 0");

    if (cfg.ep_size == 0) cfg.ep_size = t.workers();
    require(cfg.ep_size >= 1, "ep_size must be >= 1");
    require(t.workers() % cfg.ep_size == 0, "ep_size must divide the total worker count");
    require(m.num_experts % cfg.ep_size == 0, "num_experts must be divisible by ep_size");

    if (cfg.max_token_count == 0) cfg.max_token_count = derived_max_token_count(m);
    require(cfg.max_token_count >= 1, "max_token_count must be >= 1");

    require(cfg.ssmb_group >= 1, "ssmb_group must be >= 1");
    require(cfg.ssmb_group <= m.seq_len, "ssmb_group must be <= seq_len");
}

RunConfig load_config_text(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!root.is_object()) throw ParseError("config root must be a JSON object");

    RunConfig cfg;
    json model = root.value("model", json::object());
    json topo = root.value("topology", json::object());
    json run = root.value("run", json::object());
    root.erase("model");
    root.erase("topology");
    root.erase("run");
    reject_leftovers(root, "<root>");

    if (!model.is_object()) throw ParseError("model section must be an object");
    if (!topo.is_object()) throw ParseError("topology section must be an object");
    if (!run.is_object()) throw ParseError("run section must be an object");

    std::string preset;
    take(model, "model", "preset", preset);
    if (!preset.empty()) cfg.model = named_model(preset);
    take(model, "model", "name", cfg.model.name);
    take(model, "model", "num_experts", cfg.model.num_experts);
    take(model, "model", "model_dim", cfg.model.model_dim);
    take(model, "model", "ffn_dim", cfg.model.ffn_dim);
    take(model, "model", "top_k", cfg.model.top_k);
    take(model, "model", "seq_len", cfg.model.seq_len);
    take(model, "model", "micro_batch", cfg.model.micro_batch);
    take(model, "model", "num_layers", cfg.model.num_layers);
    take(model, "model", "fine_grained_factor", cfg.model.fine_grained_factor);
    take(model, "model", "capacity_factor", cfg.model.capacity_factor);
    take(model, "model", "dtype_bytes", cfg.model.dtype_bytes);
    reject_leftovers(model, "model");

    take(topo, "topology", "num_nodes", cfg.topology.num_nodes);
    take(topo, "topology", "gpus_per_node", cfg.topology.gpus_per_node);
    take(topo, "topology", "bw_intra", cfg.topology.bw_intra);
    take(topo, "topology", "bw_inter", cfg.topology.bw_inter);
    take(topo, "topology", "latency_intra", cfg.topology.latency_intra);
    take(topo, "topology", "latency_inter", cfg.topology.latency_inter);
    reject_leftovers(topo, "topology");

    std::string strategy;
    take(run, "run", "ep_size", cfg.ep_size);
    take(run, "run", "strategy", strategy);
    take(run, "run", "seed", cfg.seed);
    take(run, "run", "max_token_count", cfg.max_token_count);
    take(run, "run", "ssmb_group", cfg.ssmb_group);
    reject_leftovers(run, "run");
    if (!strategy.empty()) cfg.strategy = parse_strategy(strategy);

    validate(cfg);
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return load_config_text(buf.str());
}

ModelConfig named_model(const std::string& name) {
    ModelConfig m;
    m.name = name;
    if (name == "small") {
        m.num_experts = 64; m.model_dim = 2048; m.ffn_dim = 1408;
        m.top_k = 6; m.seq_len = 2048; m.num_layers = 28;
        m.fine_grained_factor = 8; m.capacity_factor = 1.25;
    } else if (name == "medium") {
        m.num_experts = 128; m.model_dim = 5120; m.ffn_dim = 1536;
        m.top_k = 6; m.seq_len = 4096; m.num_layers = 28;
        m.fine_grained_factor = 8; m.capacity_factor = 1.25;
    } else if (name == "large") {
        m.num_experts = 256; m.model_dim = 7168; m.ffn_dim = 2048;
        m.top_k = 8; m.seq_len = 4096; m.num_layers = 28;
        m.fine_grained_factor = 8; m.capacity_factor = 1.25;
    } else if (name == "super") {
        m.num_experts = 256; m.model_dim = 7168; m.ffn_dim = 2560;
        m.top_k = 8; m.seq_len = 4096; m.num_layers = 61;
        m.fine_grained_factor = 8; m.capacity_factor = 1.25;
    } else {
        throw ValidationError("unknown model preset: " + name);
    }
    return m;
}

PlacementStrategy parse_strategy(const std::string& name) {
    if (name == "ep_first") return PlacementStrategy::kEpFirst;
    if (name == "dp_first") return PlacementStrategy::kDpFirst;
    throw ValidationError("unknown placement strategy: " + name);
}

const char* strategy_name(PlacementStrategy s) {
    return s == PlacementStrategy::kEpFirst ? "ep_first" : "dp_first";
}

}  // namespace moesim

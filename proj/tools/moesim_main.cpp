// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Subcommands:
//   verify      cross-pipeline equivalence suites over random instances
//   simulate    run MoE layers end-to-end and dump the collective ledger
//   redundancy  Monte Carlo redundancy-rate sweep over expert-parallel sizes
//   plan        activation/tradeoff tables for named or file-supplied models
//   placement   step-traffic comparison of the two placement strategies
// Exit codes: 0 success, 1 configuration or validation error, 2 verification
// mismatch.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "moesim/collectives.hpp"
#include "moesim/config.hpp"
#include "moesim/error.hpp"
#include "moesim/pf_pipeline.hpp"
#include "moesim/placement.hpp"
#include "moesim/planner.hpp"
#include "moesim/rbd.hpp"
#include "moesim/verify.hpp"

using namespace moesim;

namespace {

struct CommonOpts {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_given = false;
    std::int64_t trials = 0;  // 0 = subcommand default
    std::string csv_out;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "JSON run configuration");
    auto* s = cmd->add_option("--seed", o.seed, "base seed (overrides the config)");
    cmd->callback([&o, s] { o.seed_given = s->count() > 0; });
    cmd->add_option("--trials", o.trials, "trial / sample / layer count");
    cmd->add_option("--csv-out", o.csv_out, "write the subcommand's CSV here");
}

RunConfig resolve_config(const CommonOpts& o) {
    RunConfig cfg;
    if (!o.config_path.empty()) {
        cfg = load_config(o.config_path);
    } else {
        validate(cfg);
    }
    if (o.seed_given) cfg.seed = o.seed;
    return cfg;
}

// CSV goes to --csv-out when given, and always to stdout so a bare run is
// inspectable; both sinks see identical bytes.
int emit_csv(const std::string& csv, const std::string& path) {
    std::fputs(csv.c_str(), stdout);
    if (path.empty()) return 0;
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        std::fprintf(stderr, "error: cannot open %s\n", path.c_str());
        return 1;
    }
    out << csv;
    return 0;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

int cmd_verify(const CommonOpts& o, bool perturb) {
    VerifyOptions opt;
    opt.seed = resolve_config(o).seed;
    if (o.seed_given) opt.seed = o.seed;
    opt.trials = o.trials > 0 ? static_cast<int>(o.trials) : 50;
    opt.perturb = perturb;
    const VerifyReport rep = run_verify(opt);
    if (rep.ok) {
        std::printf("verify: %d comparisons across three suites, all pipelines agree\n",
                    rep.trials_run);
        return 0;
    }
    std::printf("verify: mismatch in %s at instance seed %llu: max abs diff %.17g "
                "(rel %.17g)\n",
                rep.suite.c_str(), static_cast<unsigned long long>(rep.failing_seed),
                rep.max_abs, rep.max_rel);
    return 2;
}

// The ledger and the pipelines are desk-scale tools; paper-scale dimensions
// in a config are clamped down with a note instead of grinding for hours.
ModelConfig clamp_desk(const ModelConfig& in) {
    ModelConfig m = in;
    const auto clamp = [](std::int64_t& v, std::int64_t hi, const char* name) {
        if (v > hi) {
            std::fprintf(stderr, "note: clamped %s %lld -> %lld for simulation\n", name,
                         static_cast<long long>(v), static_cast<long long>(hi));
            v = hi;
        }
    };
    clamp(m.seq_len, 32, "seq_len");
    clamp(m.micro_batch, 2, "micro_batch");
    clamp(m.model_dim, 16, "model_dim");
    clamp(m.ffn_dim, 16, "ffn_dim");
    clamp(m.num_experts, 64, "num_experts");
    clamp(m.top_k, 4, "top_k");
    clamp(m.num_layers, 8, "num_layers");
    if (m.top_k > m.num_experts) m.top_k = m.num_experts;
    return m;
}

int cmd_simulate(const CommonOpts& o) {
    RunConfig cfg = resolve_config(o);
    ModelConfig m = clamp_desk(cfg.model);
    std::int64_t ep = cfg.ep_size;
    if (ep > 64) {
        std::fprintf(stderr, "note: clamped ep_size %lld -> 64 for simulation\n",
                     static_cast<long long>(ep));
        ep = 64;
    }
    if (m.num_experts % ep != 0) m.num_experts = ep * std::max<std::int64_t>(1, m.num_experts / ep);

    const Placement pl = place_experts(m, cfg.topology, ep, cfg.strategy);
    Comm comm;
    comm.group = ep_group_view(pl, cfg.topology);
    comm.topo = cfg.topology;
    comm.dtype_bytes = m.dtype_bytes;
    CostLedger ledger;
    comm.ledger = &ledger;

    const std::int64_t layers = o.trials > 0 ? o.trials : m.num_layers;
    const std::int64_t cap = cfg.max_token_count > 0 ? cfg.max_token_count
                                                     : derived_max_token_count(m);
    for (std::int64_t layer = 0; layer < layers; ++layer) {
        Rng wrng(salt_seed(cfg.seed, 7000 + layer));
        MoeInstance inst;
        inst.num_experts = m.num_experts;
        inst.top_k = m.top_k;
        inst.max_token_count = cap;
        inst.weights = make_layer_weights(wrng, m.num_experts, m.model_dim, m.ffn_dim);
        Rng trng(salt_seed(cfg.seed, 9000 + layer));
        for (std::size_t w = 0; w < comm.group.size(); ++w) {
            Matrix x(m.local_tokens(), m.model_dim);
            for (auto& v : x.data) v = trng.uniform(-1.0, 1.0);
            inst.tokens.push_back(std::move(x));
        }
        rbd_moe_forward(inst, comm, salt_seed(cfg.seed, layer));
    }

    std::map<std::string, LedgerTotals> by_kind;
    for (const auto& e : ledger.entries()) {
        auto& t = by_kind[e.kind];
        t.self_bytes += e.self_bytes;
        t.intra_bytes += e.intra_bytes;
        t.inter_bytes += e.inter_bytes;
        t.time_s += e.time_s;
    }
    std::printf("simulate: %lld layers, %zu workers, %zu collectives\n",
                static_cast<long long>(layers), comm.group.size(), ledger.entries().size());
    std::printf("%-22s %14s %14s %14s %12s\n", "kind", "self_bytes", "intra_bytes",
                "inter_bytes", "time_s");
    for (const auto& [kind, t] : by_kind)
        std::printf("%-22s %14llu %14llu %14llu %12.3e\n", kind.c_str(),
                    static_cast<unsigned long long>(t.self_bytes),
                    static_cast<unsigned long long>(t.intra_bytes),
                    static_cast<unsigned long long>(t.inter_bytes), t.time_s);

    if (!o.csv_out.empty()) {
        std::ostringstream csv;
        ledger.write_csv(csv);
        std::ofstream out(o.csv_out, std::ios::binary);
        if (!out) {
            std::fprintf(stderr, "error: cannot open %s\n", o.csv_out.c_str());
            return 1;
        }
        out << csv.str();
    }
    return 0;
}

int cmd_redundancy(const CommonOpts& o) {
    const RunConfig cfg = resolve_config(o);
    const std::int64_t E = cfg.model.num_experts;
    const std::int64_t k = cfg.model.top_k;
    const std::int64_t gpn = cfg.topology.gpus_per_node;
    const std::size_t samples = o.trials > 0 ? static_cast<std::size_t>(o.trials) : 10000;

    std::string csv = "ep_size,experts_per_node,samples,redundancy_rate\n";
    for (std::int64_t ep = gpn; ep <= E; ep *= 2) {
        const std::int64_t nodes = ep / gpn;
        if (nodes < 1 || E % nodes != 0) continue;
        const std::int64_t per_node = E / nodes;
        std::vector<std::int64_t> expert_node(E);
        for (std::int64_t e = 0; e < E; ++e) expert_node[e] = e / per_node;
        Rng rng(salt_seed(cfg.seed, static_cast<std::uint64_t>(ep)));
        const double rate = sample_redundancy(rng, samples, k, expert_node);
        char line[128];
        std::snprintf(line, sizeof line, "%lld,%lld,%zu,%.6f\n", static_cast<long long>(ep),
                      static_cast<long long>(per_node), samples, rate);
        csv += line;
    }
    return emit_csv(csv, o.csv_out);
}

int cmd_plan(const CommonOpts& o) {
    std::vector<ModelConfig> models;
    if (!o.config_path.empty()) {
        models.push_back(load_config(o.config_path).model);
    } else {
        for (const char* name : {"small", "medium", "large", "super"})
            models.push_back(named_model(name));
    }

    // Savings/cost columns use two-way sharding, the canonical comparison
    // point; the region itself is shard-count-free.
    std::string csv = "model_name,r,threshold,region,ssmb_saving_bytes,ted_min_cost_bytes\n";
    for (const auto& m : models) {
        const double r = static_cast<double>(m.top_k) / static_cast<double>(m.ffn_dim);
        const double threshold = 2.0 / (m.capacity_factor * static_cast<double>(m.seq_len));
        const Region region =
            advantage_region(m.top_k, m.ffn_dim, m.seq_len, m.capacity_factor);
        const double saving =
            ssmb_saving(2, m.capacity_factor, m.top_k, m.seq_len, m.model_dim);
        const double cost = ted_min_cost(2, m.ffn_dim, m.model_dim);
        csv += m.name + ',' + format_double(r) + ',' + format_double(threshold) + ',' +
               region_name(region) + ',' + format_double(saving) + ',' +
               format_double(cost) + '\n';
    }
    return emit_csv(csv, o.csv_out);
}

int cmd_placement(const CommonOpts& o) {
    const RunConfig cfg = resolve_config(o);
    std::string csv =
        "strategy,ep_internode_bytes,ep_intranode_bytes,dp_internode_bytes,dp_intranode_bytes\n";
    for (const PlacementStrategy s : {PlacementStrategy::kEpFirst, PlacementStrategy::kDpFirst}) {
        const Placement pl = place_experts(cfg.model, cfg.topology, cfg.ep_size, s);
        const PlacementCost c = placement_cost(cfg.model, cfg.topology, pl);
        csv += std::string(strategy_name(s)) + ',' + format_double(c.ep_internode_bytes) + ',' +
               format_double(c.ep_intranode_bytes) + ',' + format_double(c.dp_internode_bytes) +
               ',' + format_double(c.dp_intranode_bytes) + '\n';
    }
    return emit_csv(csv, o.csv_out);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MoE expert-parallel training simulator and planner"};
    app.require_subcommand(1);

    CommonOpts vo, so, ro, po, lo;
    bool perturb = false;

    auto* verify = app.add_subcommand("verify", "cross-check the pipelines on random instances");
    add_common(verify, vo);
    verify->add_flag("--perturb", perturb, "inject a combine-weight fault (self-test)");

    auto* simulate = app.add_subcommand("simulate", "run MoE layers and dump the cost ledger");
    add_common(simulate, so);

    auto* redundancy = app.add_subcommand("redundancy", "token-redundancy sweep over ep sizes");
    add_common(redundancy, ro);

    auto* plan = app.add_subcommand("plan", "activation and sharding-tradeoff table");
    add_common(plan, po);

    auto* placement = app.add_subcommand("placement", "compare placement strategies");
    add_common(placement, lo);

    try {
        app.parse(argc, argv);
        if (verify->parsed()) return cmd_verify(vo, perturb);
        if (simulate->parsed()) return cmd_simulate(so);
        if (redundancy->parsed()) return cmd_redundancy(ro);
        if (plan->parsed()) return cmd_plan(po);
        if (placement->parsed()) return cmd_placement(lo);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}

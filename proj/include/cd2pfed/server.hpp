#pragma once

// Federation orchestrator: strategy-to-plan compilation, per-round client
// fan-out (optionally threaded), and weighted FedAvg aggregation of the
// shared parameters.

#include <exception>
#include <string>
#include <thread>
#include <vector>

#include "cd2pfed/client.hpp"
#include "cd2pfed/decouple.hpp"

namespace cd2pfed::server {

struct Toggles {
    bool progressive = true;    // LI
    bool temporal_avg = true;   // TA
    bool distill = true;        // CD
};

/// Every comparison strategy compiles to a per-round partition-plan
/// generator plus a loss configuration. Layer-wise personalization
/// schemes are whole-layer special cases of the channel plans.
struct Strategy {
    enum class Kind { fedavg, local_only, lg_fed, fed_per, cd2pfed };
    Kind kind = Kind::fedavg;
    double p_max = 0.5;
    int boundary_layers = 1;  // LG-Fed / FedPer private layer count
    Toggles toggles;

    static Strategy fedavg() { return {Kind::fedavg, 0.0, 1, {false, false, false}}; }
    static Strategy local_only() { return {Kind::local_only, 1.0, 1, {false, false, false}}; }
    static Strategy lg_fed(int bottom_layers) {
        return {Kind::lg_fed, 0.0, bottom_layers, {false, false, false}};
    }
    static Strategy fed_per(int top_layers) {
        return {Kind::fed_per, 0.0, top_layers, {false, false, false}};
    }
    static Strategy cd2pfed(double p_max, Toggles t) { return {Kind::cd2pfed, p_max, 1, t}; }

    bool distill_enabled() const { return kind == Kind::cd2pfed && toggles.distill; }
    bool temporal_avg_enabled() const { return kind == Kind::cd2pfed && toggles.temporal_avg; }

    /// Round 0 is the initial full broadcast and is always all-shared.
    decouple::PartitionPlan plan_for_round(const std::vector<nn::LayerSpec>& spec, int t,
                                           int total_rounds) const {
        if (t <= 0) return decouple::make_plan(spec, 0.0);
        switch (kind) {
            case Kind::fedavg:
                return decouple::make_plan(spec, 0.0);
            case Kind::local_only:
                return decouple::make_plan(spec, 1.0);
            case Kind::lg_fed: {
                std::vector<std::size_t> priv;
                auto base = decouple::make_plan(spec, 0.0);
                for (int i = 0; i < boundary_layers && i < static_cast<int>(base.total_channels.size()); ++i)
                    priv.push_back(static_cast<std::size_t>(i));
                return decouple::make_layer_plan(spec, priv);
            }
            case Kind::fed_per: {
                std::vector<std::size_t> priv;
                auto base = decouple::make_plan(spec, 0.0);
                int n = static_cast<int>(base.total_channels.size());
                for (int i = std::max(0, n - boundary_layers); i < n; ++i)
                    priv.push_back(static_cast<std::size_t>(i));
                return decouple::make_layer_plan(spec, priv);
            }
            case Kind::cd2pfed:
                return decouple::make_plan(
                    spec, decouple::schedule_p(t, total_rounds, p_max, toggles.progressive));
        }
        throw ConfigError("unknown strategy");
    }

    std::string name() const {
        switch (kind) {
            case Kind::fedavg: return "fedavg";
            case Kind::local_only: return "local";
            case Kind::lg_fed: return "lgfed";
            case Kind::fed_per: return "fedper";
            case Kind::cd2pfed: return "cd2pfed";
        }
        return "?";
    }
};

struct ServerState {
    int round = 0;                       // rounds completed
    std::vector<Scalar> shared;          // canonical w_0 under `plan`
    decouple::PartitionPlan plan;        // plan the payload corresponds to
    std::vector<double> alphas;          // per client, sums to 1
};

/// Entrywise alpha-weighted mean. Every registered client must upload;
/// iteration order is fixed by client index so floating-point sums are
/// deterministic.
inline std::vector<Scalar> aggregate(const std::vector<std::vector<Scalar>>& uploads,
                                     const std::vector<double>& alphas) {
    if (uploads.empty() || uploads.size() != alphas.size())
        throw ProtocolError("aggregate: upload/weight count mismatch");
    std::size_t n = uploads[0].size();
    for (const auto& u : uploads)
        if (u.size() != n) throw ProtocolError("aggregate: shared payload shape drift");
    std::vector<Scalar> out(n, 0.0);
    for (std::size_t i = 0; i < uploads.size(); ++i)
        for (std::size_t j = 0; j < n; ++j) out[j] += alphas[i] * uploads[i][j];
    return out;
}

/// One federated round: broadcast w_0, run every client's local round
/// (optionally across `workers` threads; results are independent of the
/// schedule), aggregate, advance the round counter.
inline std::vector<client::RoundReport> run_round(ServerState& srv,
                                                  std::vector<client::ClientState>& clients,
                                                  const Strategy& strategy,
                                                  const client::LocalConfig& local_cfg,
                                                  int total_rounds, int workers = 1) {
    const int t = srv.round + 1;
    if (t > total_rounds) throw ProtocolError("run_round past the configured horizon");
    auto new_plan = strategy.plan_for_round(clients[0].spec, t, total_rounds);

    client::LocalConfig cfg = local_cfg;
    cfg.distill = strategy.distill_enabled();
    cfg.temporal_avg = strategy.temporal_avg_enabled();

    std::vector<client::LocalRoundResult> results(clients.size());
    std::vector<std::exception_ptr> errors(clients.size());

    auto run_one = [&](std::size_t k) {
        try {
            results[k] = client::local_round(clients[k], srv.shared, srv.plan, new_plan, t, cfg);
        } catch (...) {
            errors[k] = std::current_exception();
        }
    };

    if (workers <= 1) {
        for (std::size_t k = 0; k < clients.size(); ++k) run_one(k);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                for (std::size_t k = w; k < clients.size(); k += workers) run_one(k);
            });
        for (auto& th : pool) th.join();
    }
    for (std::size_t k = 0; k < clients.size(); ++k)
        if (errors[k]) std::rethrow_exception(errors[k]);

    std::vector<std::vector<Scalar>> uploads;
    uploads.reserve(clients.size());
    for (auto& r : results) uploads.push_back(std::move(r.upload));
    srv.shared = aggregate(uploads, srv.alphas);
    srv.plan = new_plan;
    srv.round = t;

    std::vector<client::RoundReport> reports;
    reports.reserve(results.size());
    for (auto& r : results) reports.push_back(std::move(r.report));
    return reports;
}

}  // namespace cd2pfed::server

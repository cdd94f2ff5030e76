#pragma once

// End-to-end experiment runner: dataset construction, federation setup,
// the round loop with metric evaluation, and the on-disk run directory
// (resolved config, partition manifest, metrics.csv, training log,
// per-client checkpoints).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "cd2pfed/checkpoint.hpp"
#include "cd2pfed/config.hpp"
#include "cd2pfed/eval.hpp"
#include "cd2pfed/server.hpp"

namespace cd2pfed::experiment {

namespace fs = std::filesystem;

inline std::uint64_t client_stream_seed(std::uint64_t base, int client_id) {
    // splitmix64 of (base, id) so client streams never collide
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(client_id + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

struct RunContext {
    config::FederationConfig cfg;
    data::ShardSet shards;
    server::ServerState srv;
    std::vector<client::ClientState> clients;
};

inline data::Dataset load_source(const config::DataConfig& d, std::uint64_t seed) {
    if (d.source == "synth")
        return data::synth_generate(d.num_classes, d.dims, d.per_class, d.spread, seed);
    if (d.source == "csv") return data::load_csv(d.path);
    return data::load_idx(d.images_path, d.labels_path);
}

inline RunContext setup(const config::FederationConfig& cfg) {
    config::validate(cfg);
    RunContext ctx;
    ctx.cfg = cfg;

    data::Dataset source = load_source(cfg.data, cfg.seed);
    if (source.num_classes != cfg.data.num_classes)
        throw ConfigError("dataset has " + std::to_string(source.num_classes) +
                          " classes, config says " + std::to_string(cfg.data.num_classes));
    ctx.shards = data::build_shards(source, cfg.data.het);

    std::mt19937_64 init_rng(cfg.seed);
    nn::ModelParams init = nn::init_params(cfg.layers, init_rng);

    ctx.srv.round = 0;
    ctx.srv.plan = cfg.strategy.plan_for_round(cfg.layers, 0, cfg.rounds);
    auto own0 = decouple::ownership_of(cfg.layers, ctx.srv.plan, init);
    ctx.srv.shared = decouple::split_for_upload(init, own0);

    std::size_t total_train = 0;
    for (const auto& sh : ctx.shards.clients) total_train += sh.train.size();
    for (int k = 0; k < cfg.clients; ++k) {
        client::ClientState st;
        st.client_id = k;
        st.spec = cfg.layers;
        st.input_shape = cfg.input_shape;
        st.params = init;
        st.opt = nn::OptimizerState::for_params(init, cfg.lr, cfg.momentum, cfg.weight_decay);
        st.ema_shadow = init;
        st.train = &ctx.shards.clients[k].train;
        st.rng.seed(client_stream_seed(cfg.seed, k));
        st.alpha = static_cast<double>(ctx.shards.clients[k].train.size()) /
                   static_cast<double>(total_train);
        ctx.clients.push_back(std::move(st));
        ctx.srv.alphas.push_back(ctx.clients.back().alpha);
    }
    return ctx;
}

inline client::LocalConfig local_config(const config::FederationConfig& cfg) {
    client::LocalConfig lc;
    lc.local_epochs = cfg.local_epochs;
    lc.batch_size = cfg.batch_size;
    lc.lr = cfg.lr;
    lc.momentum = cfg.momentum;
    lc.weight_decay = cfg.weight_decay;
    lc.lambda = cfg.lambda;
    lc.beta_max = cfg.beta_max;
    lc.t0 = cfg.t0();
    return lc;
}

inline std::vector<eval::EvalModel> personalized_models(const RunContext& ctx) {
    std::vector<eval::EvalModel> models;
    for (const auto& st : ctx.clients)
        models.push_back(eval::personalized_model(st, ctx.srv.plan, ctx.srv.shared));
    return models;
}

inline void evaluate_round(const RunContext& ctx, std::vector<eval::MetricRow>& rows) {
    auto models = personalized_models(ctx);
    const std::string strat = ctx.cfg.strategy.name();
    std::vector<double> per_client;
    double local = eval::local_accuracy(models, ctx.shards.clients, &per_client);
    rows.push_back({ctx.srv.round, strat, "local", local, -1, ctx.cfg.seed});
    for (std::size_t k = 0; k < per_client.size(); ++k)
        rows.push_back({ctx.srv.round, strat, "local", per_client[k], static_cast<int>(k), ctx.cfg.seed});
    rows.push_back({ctx.srv.round, strat, "new",
                    eval::new_accuracy(models, ctx.shards.new_test), -1, ctx.cfg.seed});
    if (!ctx.shards.external_test.empty())
        rows.push_back({ctx.srv.round, strat, "external",
                        eval::external_accuracy(models, ctx.shards.external_test), -1, ctx.cfg.seed});
}

using RoundHook =
    std::function<void(const RunContext&, const std::vector<client::RoundReport>&)>;

/// Run all configured rounds, evaluating at the configured cadence (and
/// always at the final round). Fully deterministic in cfg.seed; `workers`
/// must not change any output.
inline std::vector<eval::MetricRow> run_all(RunContext& ctx, int workers = 1,
                                            const RoundHook& hook = {},
                                            std::vector<client::RoundReport>* log = nullptr) {
    std::vector<eval::MetricRow> rows;
    auto lc = local_config(ctx.cfg);
    for (int t = 1; t <= ctx.cfg.rounds; ++t) {
        auto reports =
            server::run_round(ctx.srv, ctx.clients, ctx.cfg.strategy, lc, ctx.cfg.rounds, workers);
        if (log) log->insert(log->end(), reports.begin(), reports.end());
        if (t % ctx.cfg.eval_cadence == 0 || t == ctx.cfg.rounds) evaluate_round(ctx, rows);
        if (hook) hook(ctx, reports);
    }
    return rows;
}

// ---- run directory --------------------------------------------------------

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_metrics_csv(const std::string& path, const std::vector<eval::MetricRow>& rows) {
    std::ofstream out(path);
    if (!out) throw ConfigError(path + ": cannot write");
    out << "round,strategy,metric,value,client_id,seed\n";
    for (const auto& r : rows) {
        out << r.round << ',' << r.strategy << ',' << r.metric << ',' << fmt_double(r.value) << ',';
        if (r.client_id >= 0) out << r.client_id;
        out << ',' << r.seed << '\n';
    }
}

inline std::vector<eval::MetricRow> read_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path + ": cannot open");
    std::string line;
    if (!std::getline(in, line) || line != "round,strategy,metric,value,client_id,seed")
        throw ConfigError(path + ": not a metrics.csv file");
    std::vector<eval::MetricRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::size_t pos = 0;
        while (pos <= line.size()) {
            std::size_t comma = line.find(',', pos);
            cells.push_back(line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (cells.size() != 6)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected 6 columns");
        eval::MetricRow r;
        r.round = std::stoi(cells[0]);
        r.strategy = cells[1];
        r.metric = cells[2];
        r.value = std::stod(cells[3]);
        r.client_id = cells[4].empty() ? -1 : std::stoi(cells[4]);
        r.seed = std::stoull(cells[5]);
        rows.push_back(std::move(r));
    }
    return rows;
}

inline void write_manifest(const std::string& path, const data::ShardSet& shards) {
    nlohmann::json j;
    j["clients"] = nlohmann::json::array();
    for (std::size_t k = 0; k < shards.clients.size(); ++k)
        j["clients"].push_back({{"id", k},
                                {"train", shards.clients[k].train_src},
                                {"local_test", shards.clients[k].local_test_src}});
    j["new_test"] = shards.new_test_src;
    j["external"] = shards.external_src;
    std::ofstream out(path);
    if (!out) throw ConfigError(path + ": cannot write");
    out << j.dump(2) << "\n";
}

inline void write_training_log(const std::string& path,
                               const std::vector<client::RoundReport>& log) {
    std::ofstream out(path);
    if (!out) throw ConfigError(path + ": cannot write");
    out << "round,client_id,mean_ce,mean_cd,samples,wall_seconds\n";
    for (const auto& r : log)
        out << r.round << ',' << r.client_id << ',' << fmt_double(r.mean_ce) << ','
            << fmt_double(r.mean_cd) << ',' << r.samples_seen << ',' << fmt_double(r.wall_seconds)
            << '\n';
}

struct RunOutput {
    std::string run_dir;
    std::vector<eval::MetricRow> rows;
};

/// One run directory per (config, seed); refuses to overwrite.
inline RunOutput run_experiment(const config::FederationConfig& cfg, int workers = 1) {
    std::string name = cfg.run_name.empty()
                           ? cfg.strategy.name() + "-seed" + std::to_string(cfg.seed)
                           : cfg.run_name;
    fs::path dir = fs::path(cfg.output_dir) / name;
    if (fs::exists(dir)) throw ConfigError(dir.string() + ": run directory already exists");
    fs::create_directories(dir / "checkpoints");

    {
        std::ofstream out(dir / "resolved_config.json");
        out << config::resolve(cfg).dump(2) << "\n";
    }

    RunContext ctx = setup(cfg);
    write_manifest((dir / "partition_manifest.json").string(), ctx.shards);

    std::vector<client::RoundReport> log;
    auto rows = run_all(ctx, workers, {}, &log);
    write_metrics_csv((dir / "metrics.csv").string(), rows);
    write_training_log((dir / "training_log.csv").string(), log);

    std::uint64_t chash = config::config_hash(cfg);
    auto models = personalized_models(ctx);
    for (std::size_t k = 0; k < models.size(); ++k) {
        checkpoint::Checkpoint ck;
        ck.spec = models[k].spec;
        ck.input_shape = models[k].input_shape;
        ck.plan = ctx.srv.plan;
        ck.params = models[k].params;
        ck.round = ctx.srv.round;
        ck.config_hash = chash;
        ck.client_id = static_cast<int>(k);
        checkpoint::save((dir / "checkpoints" / ("client" + std::to_string(k))).string(), ck);
    }
    return {dir.string(), std::move(rows)};
}

}  // namespace cd2pfed::experiment

// Experiment front-end: `run` executes a federated training run from a
// JSON config, `partition` writes the shard manifest without training,
// `gradcheck` runs the finite-difference suite, `report` summarizes one
// or more run directories into mean +/- std tables and plot-ready CSVs.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "cd2pfed/experiment.hpp"
#include "cd2pfed/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace cd2pfed;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct CommonOpts {
    std::string config_path;
    std::int64_t seed = -1;
    std::string out_dir;
    int parallel = 1;
};

config::FederationConfig load_config(const CommonOpts& opts) {
    auto cfg = config::load(opts.config_path);
    if (opts.seed >= 0) cfg.seed = static_cast<std::uint64_t>(opts.seed);
    if (!opts.out_dir.empty()) cfg.output_dir = opts.out_dir;
    cfg.data.het.seed = cfg.seed;
    return cfg;
}

int cmd_run(const CommonOpts& opts) {
    auto cfg = load_config(opts);
    auto out = experiment::run_experiment(cfg, opts.parallel);
    std::cout << "run directory: " << out.run_dir << "\n";
    for (const auto& s : eval::summarize(out.rows))
        std::printf("%-10s %-8s  final rows mean %.2f%%\n", s.strategy.c_str(), s.metric.c_str(),
                    s.mean);
    return kExitOk;
}

int cmd_partition(const CommonOpts& opts) {
    auto cfg = load_config(opts);
    auto source = experiment::load_source(cfg.data, cfg.seed);
    auto shards = data::build_shards(source, cfg.data.het);
    fs::path dir = opts.out_dir.empty() ? fs::path(".") : fs::path(opts.out_dir);
    fs::create_directories(dir);
    std::string path = (dir / "partition_manifest.json").string();
    experiment::write_manifest(path, shards);
    std::cout << "wrote " << path << "\n";
    for (std::size_t k = 0; k < shards.clients.size(); ++k)
        std::cout << "client " << k << ": " << shards.clients[k].train.size() << " train, "
                  << shards.clients[k].local_test.size() << " local-test\n";
    std::cout << "new-test pool: " << shards.new_test.size() << "\n";
    if (!shards.external_test.empty())
        std::cout << "external pool: " << shards.external_test.size() << "\n";
    return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, int nets) {
    auto res = gradcheck::run_suite(seed, nets);
    std::printf("checked %zu parameter entries over %d networks\n", res.entries_checked, nets);
    std::printf("max relative error: %.3e (threshold 1e-4)\n", res.max_rel_err);
    if (res.max_rel_err < 1e-4) {
        std::cout << "gradcheck: PASS\n";
        return kExitOk;
    }
    std::cout << "gradcheck: FAIL\n";
    return kExitRuntime;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
    // final-round aggregate rows per (strategy, metric), one value per run
    std::vector<eval::MetricRow> final_rows;
    std::vector<eval::MetricRow> all_rows;
    std::map<std::string, int> run_s;  // run dir -> label-skew s (if any)
    for (const auto& dir : run_dirs) {
        auto rows = experiment::read_metrics_csv((fs::path(dir) / "metrics.csv").string());
        int max_round = 0;
        for (const auto& r : rows) max_round = std::max(max_round, r.round);
        for (const auto& r : rows) {
            if (r.client_id >= 0) continue;
            all_rows.push_back(r);
            if (r.round == max_round) final_rows.push_back(r);
        }
        std::ifstream cf(fs::path(dir) / "resolved_config.json");
        if (cf) {
            nlohmann::json j;
            cf >> j;
            if (j.contains("data") && j["data"].contains("heterogeneity") &&
                j["data"]["heterogeneity"].value("kind", "") == "label_skew")
                run_s[dir] = j["data"]["heterogeneity"].value("s", 0);
        }
    }

    auto summaries = eval::summarize(final_rows);
    std::printf("%-10s %-10s %10s %10s %6s\n", "strategy", "metric", "mean", "std", "runs");
    for (const auto& s : summaries)
        std::printf("%-10s %-10s %9.2f%% %9.2f%% %6zu\n", s.strategy.c_str(), s.metric.c_str(),
                    s.mean, s.stddev, s.count);

    fs::path out = out_dir.empty() ? fs::path(".") : fs::path(out_dir);
    fs::create_directories(out);
    {
        std::ofstream f(out / "report_summary.csv");
        f << "strategy,metric,mean,std,runs\n";
        for (const auto& s : summaries)
            f << s.strategy << ',' << s.metric << ',' << experiment::fmt_double(s.mean) << ','
              << experiment::fmt_double(s.stddev) << ',' << s.count << '\n';
    }
    {
        // accuracy-vs-round: mean over seeds per (round, strategy, metric)
        std::map<std::tuple<int, std::string, std::string>, std::pair<double, int>> acc;
        for (const auto& r : all_rows) {
            auto& slot = acc[{r.round, r.strategy, r.metric}];
            slot.first += r.value;
            slot.second += 1;
        }
        std::ofstream f(out / "curve_round.csv");
        f << "round,strategy,metric,mean\n";
        for (const auto& [key, slot] : acc)
            f << std::get<0>(key) << ',' << std::get<1>(key) << ',' << std::get<2>(key) << ','
              << experiment::fmt_double(slot.first / slot.second) << '\n';
    }
    {
        // accuracy-vs-s: final-round mean per (s, strategy, metric)
        std::map<std::tuple<int, std::string, std::string>, std::pair<double, int>> acc;
        for (const auto& dir : run_dirs) {
            auto it = run_s.find(dir);
            if (it == run_s.end()) continue;
            auto rows = experiment::read_metrics_csv((fs::path(dir) / "metrics.csv").string());
            int max_round = 0;
            for (const auto& r : rows) max_round = std::max(max_round, r.round);
            for (const auto& r : rows)
                if (r.client_id < 0 && r.round == max_round) {
                    auto& slot = acc[{it->second, r.strategy, r.metric}];
                    slot.first += r.value;
                    slot.second += 1;
                }
        }
        std::ofstream f(out / "curve_s.csv");
        f << "s,strategy,metric,mean\n";
        for (const auto& [key, slot] : acc)
            f << std::get<0>(key) << ',' << std::get<1>(key) << ',' << std::get<2>(key) << ','
              << experiment::fmt_double(slot.first / slot.second) << '\n';
    }
    std::cout << "wrote report_summary.csv, curve_round.csv, curve_s.csv under " << out.string()
              << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale personalized federated learning simulator"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::uint64_t gc_seed = 7;
    int gc_nets = 20;
    std::vector<std::string> report_dirs;

    auto* run = app.add_subcommand("run", "execute a federated training run");
    run->add_option("--config", opts.config_path, "JSON config path")->required();
    run->add_option("--seed", opts.seed, "override config seed");
    run->add_option("--out", opts.out_dir, "override output directory");
    run->add_option("--parallel", opts.parallel, "client worker cap (does not affect results)")
        ->check(CLI::PositiveNumber);

    auto* part = app.add_subcommand("partition", "write the partition manifest only (dry run)");
    part->add_option("--config", opts.config_path, "JSON config path")->required();
    part->add_option("--seed", opts.seed, "override config seed");
    part->add_option("--out", opts.out_dir, "output directory");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    gc->add_option("--seed", gc_seed, "suite seed");
    gc->add_option("--nets", gc_nets, "number of random networks")->check(CLI::PositiveNumber);

    auto* rep = app.add_subcommand("report", "summarize run directories");
    rep->add_option("dirs", report_dirs, "run directories")->required()->expected(-1);
    rep->add_option("--out", opts.out_dir, "output directory for report CSVs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (run->parsed()) return cmd_run(opts);
        if (part->parsed()) return cmd_partition(opts);
        if (gc->parsed()) return cmd_gradcheck(gc_seed, gc_nets);
        if (rep->parsed()) return cmd_report(report_dirs, opts.out_dir);
    } catch (const cd2pfed::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitConfig;
}

#pragma once

// Strict-schema JSON experiment configuration. Unknown keys are errors:
// a silently ignored hyperparameter typo is the main reproducibility
// hazard in this kind of tooling.

#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "cd2pfed/data.hpp"
#include "cd2pfed/nn.hpp"
#include "cd2pfed/server.hpp"

namespace cd2pfed::config {

using json = nlohmann::json;

struct DataConfig {
    std::string source = "synth";  // synth | csv | idx
    std::string path;              // csv path
    std::string images_path, labels_path;  // idx pair
    int num_classes = 10;
    int dims = 32;
    int per_class = 100;
    double spread = 0.5;
    data::HeterogeneityConfig het;
};

struct FederationConfig {
    server::Strategy strategy;
    int clients = 4;
    int rounds = 50;
    int local_epochs = 1;
    int batch_size = 128;
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double lambda = 1.0;
    double beta_max = 0.5;
    double t0_fraction = 0.1;
    int eval_cadence = 1;
    std::uint64_t seed = 1;
    std::string output_dir = "runs";
    std::string run_name;  // defaults to <strategy>-seed<seed>
    nn::ActShape input_shape;
    std::vector<nn::LayerSpec> layers;
    DataConfig data;

    int t0() const {
        return std::max(1, static_cast<int>(std::ceil(t0_fraction * static_cast<double>(rounds))));
    }
};

namespace detail {

inline void require_keys(const json& j, const std::set<std::string>& allowed,
                         const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError(where + ": unknown key '" + it.key() + "'");
}

inline nn::LayerSpec parse_layer(const json& j, std::size_t idx) {
    std::string where = "model.layers[" + std::to_string(idx) + "]";
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "dense") {
        require_keys(j, {"kind", "in", "out"}, where);
        return nn::LayerSpec::make_dense(j.at("in").get<int>(), j.at("out").get<int>());
    }
    if (kind == "conv2d") {
        require_keys(j, {"kind", "in", "out", "kernel", "stride"}, where);
        return nn::LayerSpec::make_conv2d(j.at("in").get<int>(), j.at("out").get<int>(),
                                          j.at("kernel").get<int>(),
                                          j.value("stride", 1));
    }
    if (kind == "maxpool2d") {
        require_keys(j, {"kind", "window", "stride"}, where);
        return nn::LayerSpec::make_maxpool2d(j.at("window").get<int>(), j.at("stride").get<int>());
    }
    if (kind == "relu") {
        require_keys(j, {"kind"}, where);
        return nn::LayerSpec::make_relu();
    }
    if (kind == "flatten") {
        require_keys(j, {"kind"}, where);
        return nn::LayerSpec::make_flatten();
    }
    throw ConfigError(where + ": unknown layer kind '" + kind + "'");
}

inline server::Strategy parse_strategy(const json& j) {
    require_keys(j, {"kind", "p_max", "boundary_layers", "toggles"}, "strategy");
    std::string kind = j.at("kind").get<std::string>();
    server::Strategy s;
    if (kind == "fedavg") s = server::Strategy::fedavg();
    else if (kind == "local") s = server::Strategy::local_only();
    else if (kind == "lgfed") s = server::Strategy::lg_fed(j.value("boundary_layers", 1));
    else if (kind == "fedper") s = server::Strategy::fed_per(j.value("boundary_layers", 1));
    else if (kind == "cd2pfed") {
        server::Toggles t;
        if (j.contains("toggles")) {
            const json& jt = j.at("toggles");
            require_keys(jt, {"li", "ta", "cd"}, "strategy.toggles");
            t.progressive = jt.value("li", true);
            t.temporal_avg = jt.value("ta", true);
            t.distill = jt.value("cd", true);
        }
        s = server::Strategy::cd2pfed(j.value("p_max", 0.5), t);
    } else {
        throw ConfigError("strategy.kind: unknown strategy '" + kind + "'");
    }
    return s;
}

inline DataConfig parse_data(const json& j) {
    require_keys(j,
                 {"source", "path", "images_path", "labels_path", "num_classes", "dims",
                  "per_class", "spread", "heterogeneity", "local_test_fraction",
                  "new_test_fraction", "external", "external_strength"},
                 "data");
    DataConfig d;
    d.source = j.value("source", std::string("synth"));
    if (d.source != "synth" && d.source != "csv" && d.source != "idx")
        throw ConfigError("data.source: must be synth, csv, or idx");
    d.path = j.value("path", std::string());
    d.images_path = j.value("images_path", std::string());
    d.labels_path = j.value("labels_path", std::string());
    d.num_classes = j.value("num_classes", 10);
    d.dims = j.value("dims", 32);
    d.per_class = j.value("per_class", 100);
    d.spread = j.value("spread", 0.5);
    d.het.local_test_fraction = j.value("local_test_fraction", 0.2);
    d.het.new_test_fraction = j.value("new_test_fraction", 0.2);
    d.het.with_external = j.value("external", false);
    d.het.external_strength = j.value("external_strength", 1.0);
    if (j.contains("heterogeneity")) {
        const json& h = j.at("heterogeneity");
        require_keys(h, {"kind", "s", "strength"}, "data.heterogeneity");
        std::string kind = h.value("kind", std::string("label_skew"));
        if (kind == "label_skew") d.het.kind = data::Heterogeneity::label_skew;
        else if (kind == "feature_skew") d.het.kind = data::Heterogeneity::feature_skew;
        else if (kind == "concept_shift") d.het.kind = data::Heterogeneity::concept_shift;
        else throw ConfigError("data.heterogeneity.kind: unknown kind '" + kind + "'");
        d.het.label_classes_per_client = h.value("s", 2);
        d.het.feature_strength = h.value("strength", 0.5);
    }
    return d;
}

}  // namespace detail

inline void validate(const FederationConfig& cfg) {
    if (cfg.strategy.p_max < 0.0 || cfg.strategy.p_max > 1.0)
        throw ConfigError("strategy.p_max: must be within [0, 1]");
    if (cfg.lambda < 0.0) throw ConfigError("lambda: must be non-negative");
    if (cfg.batch_size < 1) throw ConfigError("batch_size: must be at least 1");
    if (cfg.rounds < 1) throw ConfigError("rounds: must be at least 1");
    if (cfg.clients < 1) throw ConfigError("clients: must be at least 1");
    if (cfg.local_epochs < 0) throw ConfigError("local_epochs: must be non-negative");
    if (cfg.beta_max < 0.0 || cfg.beta_max > 1.0) throw ConfigError("beta_max: must be within [0, 1]");
    if (cfg.t0_fraction <= 0.0 || cfg.t0_fraction > 1.0)
        throw ConfigError("t0_fraction: must be within (0, 1]");
    if (cfg.eval_cadence < 1) throw ConfigError("eval_cadence: must be at least 1");
    if (cfg.data.het.kind == data::Heterogeneity::label_skew) {
        int s = cfg.data.het.label_classes_per_client;
        if (s < 2 || s > cfg.data.num_classes)
            throw ConfigError("data.heterogeneity.s: must be within [2, num_classes]");
    }
    if (cfg.layers.empty()) throw ConfigError("model.layers: must not be empty");
    nn::infer_shapes(cfg.layers, cfg.input_shape);  // chains consistently or throws
    auto shapes = nn::infer_shapes(cfg.layers, cfg.input_shape);
    if (shapes.back().size() != cfg.data.num_classes)
        throw ConfigError("model: head output width must equal data.num_classes");
    auto pidx = nn::parametric_layers(cfg.layers);
    for (std::size_t i = 0; i + 1 < pidx.size(); ++i) {
        const auto& l = cfg.layers[pidx[i]];
        int width = l.kind == nn::LayerKind::dense ? l.out_units : l.out_channels;
        if (width < 2) throw ConfigError("model: partitionable layers need at least 2 channels");
    }
}

inline FederationConfig parse(const json& j) {
    detail::require_keys(j,
                         {"strategy", "clients", "rounds", "local_epochs", "batch_size", "lr",
                          "momentum", "weight_decay", "lambda", "beta_max", "t0_fraction",
                          "eval_cadence", "seed", "output_dir", "run_name", "model", "data"},
                         "config");
    FederationConfig cfg;
    cfg.strategy = detail::parse_strategy(j.at("strategy"));
    cfg.clients = j.value("clients", 4);
    cfg.rounds = j.value("rounds", 50);
    cfg.local_epochs = j.value("local_epochs", 1);
    cfg.batch_size = j.value("batch_size", 128);
    cfg.lr = j.value("lr", 0.01);
    cfg.momentum = j.value("momentum", 0.9);
    cfg.weight_decay = j.value("weight_decay", 5e-4);
    cfg.lambda = j.value("lambda", 1.0);
    cfg.beta_max = j.value("beta_max", 0.5);
    cfg.t0_fraction = j.value("t0_fraction", 0.1);
    cfg.eval_cadence = j.value("eval_cadence", 1);
    cfg.seed = j.value("seed", std::uint64_t{1});
    cfg.output_dir = j.value("output_dir", std::string("runs"));
    cfg.run_name = j.value("run_name", std::string());

    const json& m = j.at("model");
    detail::require_keys(m, {"input", "layers"}, "model");
    auto input = m.at("input").get<std::vector<int>>();
    if (input.size() == 1) cfg.input_shape = {input[0], 0, 0};
    else if (input.size() == 3) cfg.input_shape = {input[0], input[1], input[2]};
    else throw ConfigError("model.input: expected [features] or [channels, height, width]");
    const json& layers = m.at("layers");
    if (!layers.is_array()) throw ConfigError("model.layers: expected an array");
    for (std::size_t i = 0; i < layers.size(); ++i)
        cfg.layers.push_back(detail::parse_layer(layers[i], i));

    cfg.data = detail::parse_data(j.at("data"));
    cfg.data.het.clients = cfg.clients;
    cfg.data.het.seed = cfg.seed;
    validate(cfg);
    return cfg;
}

inline FederationConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path + ": cannot open config file");
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return parse(j);
}

/// All defaults materialized, so a run directory is self-describing.
inline json resolve(const FederationConfig& cfg) {
    json j;
    json s;
    s["kind"] = cfg.strategy.name();
    if (cfg.strategy.kind == server::Strategy::Kind::cd2pfed) {
        s["p_max"] = cfg.strategy.p_max;
        s["toggles"] = {{"li", cfg.strategy.toggles.progressive},
                        {"ta", cfg.strategy.toggles.temporal_avg},
                        {"cd", cfg.strategy.toggles.distill}};
    }
    if (cfg.strategy.kind == server::Strategy::Kind::lg_fed ||
        cfg.strategy.kind == server::Strategy::Kind::fed_per)
        s["boundary_layers"] = cfg.strategy.boundary_layers;
    j["strategy"] = s;
    j["clients"] = cfg.clients;
    j["rounds"] = cfg.rounds;
    j["local_epochs"] = cfg.local_epochs;
    j["batch_size"] = cfg.batch_size;
    j["lr"] = cfg.lr;
    j["momentum"] = cfg.momentum;
    j["weight_decay"] = cfg.weight_decay;
    j["lambda"] = cfg.lambda;
    j["beta_max"] = cfg.beta_max;
    j["t0_fraction"] = cfg.t0_fraction;
    j["t0"] = cfg.t0();
    j["eval_cadence"] = cfg.eval_cadence;
    j["seed"] = cfg.seed;
    j["output_dir"] = cfg.output_dir;

    json layers = json::array();
    for (const auto& l : cfg.layers) {
        json jl;
        switch (l.kind) {
            case nn::LayerKind::dense:
                jl = {{"kind", "dense"}, {"in", l.in_units}, {"out", l.out_units}};
                break;
            case nn::LayerKind::conv2d:
                jl = {{"kind", "conv2d"}, {"in", l.in_channels}, {"out", l.out_channels},
                      {"kernel", l.kernel_size}, {"stride", l.stride}};
                break;
            case nn::LayerKind::maxpool2d:
                jl = {{"kind", "maxpool2d"}, {"window", l.window}, {"stride", l.pool_stride}};
                break;
            case nn::LayerKind::relu:
                jl = {{"kind", "relu"}};
                break;
            case nn::LayerKind::flatten:
                jl = {{"kind", "flatten"}};
                break;
        }
        layers.push_back(jl);
    }
    json input = json::array();
    if (cfg.input_shape.flat()) input.push_back(cfg.input_shape.channels);
    else input = {cfg.input_shape.channels, cfg.input_shape.height, cfg.input_shape.width};
    j["model"] = {{"input", input}, {"layers", layers}};

    json d;
    d["source"] = cfg.data.source;
    if (!cfg.data.path.empty()) d["path"] = cfg.data.path;
    if (!cfg.data.images_path.empty()) d["images_path"] = cfg.data.images_path;
    if (!cfg.data.labels_path.empty()) d["labels_path"] = cfg.data.labels_path;
    d["num_classes"] = cfg.data.num_classes;
    d["dims"] = cfg.data.dims;
    d["per_class"] = cfg.data.per_class;
    d["spread"] = cfg.data.spread;
    switch (cfg.data.het.kind) {
        case data::Heterogeneity::label_skew:
            d["heterogeneity"] = {{"kind", "label_skew"}, {"s", cfg.data.het.label_classes_per_client}};
            break;
        case data::Heterogeneity::feature_skew:
            d["heterogeneity"] = {{"kind", "feature_skew"}, {"strength", cfg.data.het.feature_strength}};
            break;
        case data::Heterogeneity::concept_shift:
            d["heterogeneity"] = {{"kind", "concept_shift"}};
            break;
    }
    d["local_test_fraction"] = cfg.data.het.local_test_fraction;
    d["new_test_fraction"] = cfg.data.het.new_test_fraction;
    d["external"] = cfg.data.het.with_external;
    d["external_strength"] = cfg.data.het.external_strength;
    j["data"] = d;
    return j;
}

/// FNV-1a over the canonical resolved-config dump.
inline std::uint64_t config_hash(const FederationConfig& cfg) {
    std::string s = resolve(cfg).dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace cd2pfed::config

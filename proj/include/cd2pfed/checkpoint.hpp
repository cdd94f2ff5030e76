#pragma once

// Checkpoints: a JSON manifest (layer specs, partition plan, round, config
// hash, tensor shapes) next to a flat little-endian 64-bit float payload in
// canonical tensor order. Round-trips reproduce forward outputs bitwise.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cd2pfed/decouple.hpp"
#include "cd2pfed/nn.hpp"

namespace cd2pfed::checkpoint {

using json = nlohmann::json;

struct Checkpoint {
    std::vector<nn::LayerSpec> spec;
    nn::ActShape input_shape;
    decouple::PartitionPlan plan;
    nn::ModelParams params;
    int round = 0;
    std::uint64_t config_hash = 0;
    int client_id = -1;  // -1: aggregated/global
};

namespace detail {

inline json layer_to_json(const nn::LayerSpec& l) {
    switch (l.kind) {
        case nn::LayerKind::dense:
            return {{"kind", "dense"}, {"in", l.in_units}, {"out", l.out_units}};
        case nn::LayerKind::conv2d:
            return {{"kind", "conv2d"}, {"in", l.in_channels}, {"out", l.out_channels},
                    {"kernel", l.kernel_size}, {"stride", l.stride}};
        case nn::LayerKind::maxpool2d:
            return {{"kind", "maxpool2d"}, {"window", l.window}, {"stride", l.pool_stride}};
        case nn::LayerKind::relu:
            return {{"kind", "relu"}};
        case nn::LayerKind::flatten:
            return {{"kind", "flatten"}};
    }
    throw ConfigError("unknown layer kind");
}

inline nn::LayerSpec layer_from_json(const json& j) {
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "dense") return nn::LayerSpec::make_dense(j.at("in"), j.at("out"));
    if (kind == "conv2d")
        return nn::LayerSpec::make_conv2d(j.at("in"), j.at("out"), j.at("kernel"), j.at("stride"));
    if (kind == "maxpool2d") return nn::LayerSpec::make_maxpool2d(j.at("window"), j.at("stride"));
    if (kind == "relu") return nn::LayerSpec::make_relu();
    if (kind == "flatten") return nn::LayerSpec::make_flatten();
    throw ConfigError("checkpoint: unknown layer kind '" + kind + "'");
}

inline void write_f64_le(std::ostream& out, const std::vector<Scalar>& v) {
    for (Scalar x : v) {
        std::uint64_t bits;
        std::memcpy(&bits, &x, 8);
        if constexpr (std::endian::native == std::endian::big) {
            std::uint64_t r = 0;
            for (int i = 0; i < 8; ++i) r |= ((bits >> (i * 8)) & 0xFF) << ((7 - i) * 8);
            bits = r;
        }
        char buf[8];
        std::memcpy(buf, &bits, 8);
        out.write(buf, 8);
    }
}

inline void read_f64_le(std::istream& in, std::vector<Scalar>& v, const std::string& path) {
    for (Scalar& x : v) {
        char buf[8];
        if (!in.read(buf, 8)) throw ConfigError(path + ": truncated checkpoint payload");
        std::uint64_t bits;
        std::memcpy(&bits, buf, 8);
        if constexpr (std::endian::native == std::endian::big) {
            std::uint64_t r = 0;
            for (int i = 0; i < 8; ++i) r |= ((bits >> (i * 8)) & 0xFF) << ((7 - i) * 8);
            bits = r;
        }
        std::memcpy(&x, &bits, 8);
    }
}

}  // namespace detail

/// Writes <base>.json and <base>.bin.
inline void save(const std::string& base, const Checkpoint& ck) {
    json m;
    m["round"] = ck.round;
    m["config_hash"] = ck.config_hash;
    m["client_id"] = ck.client_id;
    json input = json::array();
    if (ck.input_shape.flat()) input.push_back(ck.input_shape.channels);
    else input = {ck.input_shape.channels, ck.input_shape.height, ck.input_shape.width};
    m["input"] = input;
    m["layers"] = json::array();
    for (const auto& l : ck.spec) m["layers"].push_back(detail::layer_to_json(l));
    m["plan"] = {{"private", ck.plan.private_count}, {"total", ck.plan.total_channels}};
    json tensors = json::array();
    std::size_t payload_len = 0;
    for (const auto& t : ck.params.tensors) {
        tensors.push_back({{"out", t.out_ch}, {"in", t.in_per_out}});
        payload_len += t.w.size() + t.b.size();
    }
    m["tensors"] = tensors;
    m["payload_doubles"] = payload_len;

    std::ofstream mj(base + ".json");
    if (!mj) throw ConfigError(base + ".json: cannot write");
    mj << m.dump(2) << "\n";

    std::ofstream bin(base + ".bin", std::ios::binary);
    if (!bin) throw ConfigError(base + ".bin: cannot write");
    for (const auto& t : ck.params.tensors) {
        detail::write_f64_le(bin, t.w);
        detail::write_f64_le(bin, t.b);
    }
}

inline Checkpoint load(const std::string& base) {
    std::ifstream mj(base + ".json");
    if (!mj) throw ConfigError(base + ".json: cannot open");
    json m;
    mj >> m;

    Checkpoint ck;
    ck.round = m.at("round").get<int>();
    ck.config_hash = m.at("config_hash").get<std::uint64_t>();
    ck.client_id = m.value("client_id", -1);
    auto input = m.at("input").get<std::vector<int>>();
    if (input.size() == 1) ck.input_shape = {input[0], 0, 0};
    else ck.input_shape = {input[0], input[1], input[2]};
    for (const auto& jl : m.at("layers")) ck.spec.push_back(detail::layer_from_json(jl));
    ck.plan.private_count = m.at("plan").at("private").get<std::vector<int>>();
    ck.plan.total_channels = m.at("plan").at("total").get<std::vector<int>>();

    std::size_t payload_len = 0;
    for (const auto& jt : m.at("tensors")) {
        nn::ParamTensor t;
        t.out_ch = jt.at("out").get<int>();
        t.in_per_out = jt.at("in").get<int>();
        t.w.resize(static_cast<std::size_t>(t.out_ch) * t.in_per_out);
        t.b.resize(t.out_ch);
        payload_len += t.w.size() + t.b.size();
        ck.params.tensors.push_back(std::move(t));
    }
    if (payload_len != m.at("payload_doubles").get<std::size_t>())
        throw ConfigError(base + ".json: tensor shapes do not match declared payload length");

    std::ifstream bin(base + ".bin", std::ios::binary);
    if (!bin) throw ConfigError(base + ".bin: cannot open");
    for (auto& t : ck.params.tensors) {
        detail::read_f64_le(bin, t.w, base + ".bin");
        detail::read_f64_le(bin, t.b, base + ".bin");
    }
    char extra;
    if (bin.read(&extra, 1)) throw ConfigError(base + ".bin: payload longer than manifest declares");
    return ck;
}

}  // namespace cd2pfed::checkpoint

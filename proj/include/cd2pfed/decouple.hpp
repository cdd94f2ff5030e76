#pragma once

// Channel decoupling: per-layer private/shared channel partitions, the
// progressive personalization schedule, forward masks for the full net and
// the two subnets, parameter ownership, and the shared-part wire format
// used between client and server.

#include <cmath>
#include <cstdint>
#include <vector>

#include "cd2pfed/nn.hpp"

namespace cd2pfed::decouple {

/// Per partitionable (hidden parametric) layer: how many of the layer's
/// output channels are private. Convention: the LAST private_count
/// channels are private, the first (total - private_count) are shared.
/// The classifier head's output dimension is never partitioned.
struct PartitionPlan {
    std::vector<int> private_count;
    std::vector<int> total_channels;

    bool operator==(const PartitionPlan&) const = default;

    int total_private() const {
        int n = 0;
        for (int c : private_count) n += c;
        return n;
    }
    int total_shared() const {
        int n = 0;
        for (std::size_t i = 0; i < total_channels.size(); ++i)
            n += total_channels[i] - private_count[i];
        return n;
    }
};

enum class Subnet { full, shared_only, private_only };

/// Linear growth p_t = p_max * t / T. With progressive personalization
/// disabled the ratio jumps straight to p_max from round 1; round 0 is
/// always fully shared so every client starts from the same broadcast.
inline double schedule_p(int t, int total_rounds, double p_max, bool progressive = true) {
    if (t <= 0) return 0.0;
    if (!progressive) return p_max;
    if (t >= total_rounds) return p_max;
    return p_max * static_cast<double>(t) / static_cast<double>(total_rounds);
}

inline int round_half_up(double x) { return static_cast<int>(std::floor(x + 0.5)); }

/// Uniform plan: private_count = round(p_t * width) per hidden layer.
inline PartitionPlan make_plan(const std::vector<nn::LayerSpec>& spec, double p_t) {
    auto pidx = nn::parametric_layers(spec);
    PartitionPlan plan;
    for (std::size_t i = 0; i + 1 < pidx.size(); ++i) {  // head excluded
        const nn::LayerSpec& l = spec[pidx[i]];
        int width = l.kind == nn::LayerKind::dense ? l.out_units : l.out_channels;
        plan.total_channels.push_back(width);
        plan.private_count.push_back(round_half_up(p_t * width));
    }
    return plan;
}

/// Whole-layer plan: layers with indices in `private_layers` (0-based over
/// hidden partitionable layers) are fully private, the rest fully shared.
/// Realizes representation-layer and classifier-layer personalization as
/// special cases of the channel scheme.
inline PartitionPlan make_layer_plan(const std::vector<nn::LayerSpec>& spec,
                                     const std::vector<std::size_t>& private_layers) {
    PartitionPlan plan = make_plan(spec, 0.0);
    for (std::size_t li : private_layers) {
        if (li >= plan.total_channels.size())
            throw ConfigError("private layer index out of range");
        plan.private_count[li] = plan.total_channels[li];
    }
    return plan;
}

inline void check_plan(const PartitionPlan& plan) {
    if (plan.private_count.size() != plan.total_channels.size())
        throw ConfigError("partition plan layer count mismatch");
    for (std::size_t i = 0; i < plan.private_count.size(); ++i)
        if (plan.private_count[i] < 0 || plan.private_count[i] > plan.total_channels[i])
            throw ConfigError("partition plan private count out of range");
}

/// Channel keep-vector masks for one subnet. The head entry is all-ones.
inline nn::ForwardMask mask_for(const PartitionPlan& plan, const nn::ModelParams& params,
                                Subnet which) {
    check_plan(plan);
    if (params.tensors.size() != plan.total_channels.size() + 1)
        throw ConfigError("plan does not match model layer count");
    nn::ForwardMask m;
    for (std::size_t i = 0; i < plan.total_channels.size(); ++i) {
        int total = plan.total_channels[i];
        int priv = plan.private_count[i];
        std::vector<std::uint8_t> keep(total, 1);
        if (which == Subnet::shared_only)
            for (int c = total - priv; c < total; ++c) keep[c] = 0;
        else if (which == Subnet::private_only)
            for (int c = 0; c < total - priv; ++c) keep[c] = 0;
        m.keep.push_back(std::move(keep));
    }
    m.keep.emplace_back(params.tensors.back().out_ch, 1);  // head, never partitioned
    return m;
}

/// True when the subnet has no channels anywhere, i.e. its logits would be
/// bias-only end-to-end. Cyclic distillation is skipped in that case.
inline bool subnet_empty(const PartitionPlan& plan, Subnet which) {
    if (plan.total_channels.empty()) return which == Subnet::private_only;
    if (which == Subnet::private_only) return plan.total_private() == 0;
    if (which == Subnet::shared_only) return plan.total_shared() == 0;
    return false;
}

/// Per-entry privacy flags mirroring ModelParams. Hidden layers: a weight
/// row and its bias entry are private iff the output channel is private.
/// Head: a weight is private iff its input feature comes from a private
/// channel of the last hidden partitionable layer; head bias is shared.
struct Ownership {
    struct TensorFlags {
        std::vector<std::uint8_t> w_private;
        std::vector<std::uint8_t> b_private;
    };
    std::vector<TensorFlags> tensors;
};

inline Ownership ownership_of(const std::vector<nn::LayerSpec>& spec, const PartitionPlan& plan,
                              const nn::ModelParams& params) {
    check_plan(plan);
    auto pidx = nn::parametric_layers(spec);
    if (params.tensors.size() != pidx.size() || plan.total_channels.size() + 1 != pidx.size())
        throw ConfigError("ownership: plan/model/spec mismatch");

    Ownership own;
    for (std::size_t i = 0; i + 1 < pidx.size(); ++i) {
        const nn::ParamTensor& t = params.tensors[i];
        Ownership::TensorFlags f;
        f.w_private.assign(t.w.size(), 0);
        f.b_private.assign(t.b.size(), 0);
        int first_private = plan.total_channels[i] - plan.private_count[i];
        for (int o = first_private; o < t.out_ch; ++o) {
            std::fill(f.w_private.begin() + static_cast<std::size_t>(o) * t.in_per_out,
                      f.w_private.begin() + static_cast<std::size_t>(o + 1) * t.in_per_out, 1);
            f.b_private[o] = 1;
        }
        own.tensors.push_back(std::move(f));
    }

    // head: column ownership follows the feeding layer's channel ownership
    const nn::ParamTensor& head = params.tensors.back();
    Ownership::TensorFlags hf;
    hf.w_private.assign(head.w.size(), 0);
    hf.b_private.assign(head.b.size(), 0);  // head bias shared
    if (!plan.total_channels.empty()) {
        std::size_t last = plan.total_channels.size() - 1;
        int channels = plan.total_channels[last];
        int first_private = channels - plan.private_count[last];
        if (head.in_per_out % channels != 0)
            throw ConfigError("head input width not divisible by feeding layer channels");
        int per_ch = head.in_per_out / channels;
        for (int o = 0; o < head.out_ch; ++o)
            for (int j = 0; j < head.in_per_out; ++j)
                if (j / per_ch >= first_private)
                    hf.w_private[static_cast<std::size_t>(o) * head.in_per_out + j] = 1;
    }
    own.tensors.push_back(std::move(hf));
    return own;
}

/// Growing the private set keeps every weight value in place, so the full
/// network's outputs are bit-identical before and after. Shrinking is an
/// unsupported transition.
inline void promote(const PartitionPlan& old_plan, const PartitionPlan& new_plan) {
    check_plan(old_plan);
    check_plan(new_plan);
    if (old_plan.total_channels != new_plan.total_channels)
        throw ProtocolError("promotion across different architectures");
    for (std::size_t i = 0; i < old_plan.private_count.size(); ++i)
        if (new_plan.private_count[i] < old_plan.private_count[i])
            throw ProtocolError("shrinking the private channel set is unsupported");
}

/// Flat little-endian-friendly payload of all SHARED entries in canonical
/// tensor order (weights then bias per tensor).
inline std::vector<Scalar> split_for_upload(const nn::ModelParams& params, const Ownership& own) {
    std::vector<Scalar> payload;
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
        const auto& t = params.tensors[i];
        const auto& f = own.tensors[i];
        for (std::size_t j = 0; j < t.w.size(); ++j)
            if (!f.w_private[j]) payload.push_back(t.w[j]);
        for (std::size_t j = 0; j < t.b.size(); ++j)
            if (!f.b_private[j]) payload.push_back(t.b[j]);
    }
    return payload;
}

inline void merge_from_download(nn::ModelParams& params, const Ownership& own,
                                const std::vector<Scalar>& payload) {
    std::size_t k = 0;
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
        auto& t = params.tensors[i];
        const auto& f = own.tensors[i];
        for (std::size_t j = 0; j < t.w.size(); ++j)
            if (!f.w_private[j]) {
                if (k >= payload.size()) throw ProtocolError("shared payload too short");
                t.w[j] = payload[k++];
            }
        for (std::size_t j = 0; j < t.b.size(); ++j)
            if (!f.b_private[j]) {
                if (k >= payload.size()) throw ProtocolError("shared payload too short");
                t.b[j] = payload[k++];
            }
    }
    if (k != payload.size()) throw ProtocolError("shared payload length mismatch");
}

}  // namespace cd2pfed::decouple

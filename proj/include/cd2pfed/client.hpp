#pragma once

// One client's local training procedure per federated round: merge the
// downloaded shared weights, grow the personalization ratio, run local
// epochs of (cross entropy + cyclic distillation) SGD, smooth private
// weights with EMA after each epoch, and split the shared part for upload.

#include <chrono>
#include <random>
#include <string>
#include <vector>

#include "cd2pfed/data.hpp"
#include "cd2pfed/decouple.hpp"
#include "cd2pfed/distill.hpp"
#include "cd2pfed/nn.hpp"

namespace cd2pfed::client {

/// Ramp-up of the EMA smoothing coefficient:
/// beta_t = beta_max * exp(-5 (1 - t/t0)^2) for t <= t0, else beta_max.
inline Scalar ramp_beta(int t, int t0, Scalar beta_max) {
    if (t > t0) return beta_max;
    Scalar frac = static_cast<Scalar>(t) / static_cast<Scalar>(t0);
    return beta_max * std::exp(-5.0 * (1.0 - frac) * (1.0 - frac));
}

/// w <- beta * w_raw + (1 - beta) * w_prev on PRIVATE entries only.
inline void ema_update(nn::ModelParams& params, const nn::ModelParams& shadow,
                       const decouple::Ownership& own, Scalar beta) {
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
        auto& t = params.tensors[i];
        const auto& s = shadow.tensors[i];
        const auto& f = own.tensors[i];
        for (std::size_t j = 0; j < t.w.size(); ++j)
            if (f.w_private[j]) t.w[j] = beta * t.w[j] + (1.0 - beta) * s.w[j];
        for (std::size_t j = 0; j < t.b.size(); ++j)
            if (f.b_private[j]) t.b[j] = beta * t.b[j] + (1.0 - beta) * s.b[j];
    }
}

struct LocalConfig {
    int local_epochs = 1;
    int batch_size = 128;
    Scalar lr = 0.01;
    Scalar momentum = 0.9;
    Scalar weight_decay = 5e-4;
    Scalar lambda = 1.0;
    Scalar beta_max = 0.5;
    int t0 = 5;  // ceil(0.1 * T) in the full pipeline
    bool distill = true;        // CD toggle
    bool temporal_avg = true;   // TA toggle
};

struct ClientState {
    int client_id = 0;
    std::vector<nn::LayerSpec> spec;
    nn::ActShape input_shape;
    nn::ModelParams params;
    nn::OptimizerState opt;
    nn::ModelParams ema_shadow;
    const data::Dataset* train = nullptr;
    std::mt19937_64 rng;
    double alpha = 0.0;  // |D_i| / sum_j |D_j|
};

struct RoundReport {
    int client_id = 0;
    int round = 0;
    Scalar mean_ce = 0.0;
    Scalar mean_cd = 0.0;
    std::size_t samples_seen = 0;
    double wall_seconds = 0.0;
    std::vector<std::string> events;  // Alg-order audit trail
};

struct LocalRoundResult {
    std::vector<Scalar> upload;
    RoundReport report;
};

/// One federated round at this client. `download` is the shared payload
/// under `prev_plan`; the upload is produced under `new_plan`. Private
/// entries never enter the payload.
inline LocalRoundResult local_round(ClientState& st, const std::vector<Scalar>& download,
                                    const decouple::PartitionPlan& prev_plan,
                                    const decouple::PartitionPlan& new_plan, int round,
                                    const LocalConfig& cfg) {
    auto t_start = std::chrono::steady_clock::now();
    LocalRoundResult res;
    res.report.client_id = st.client_id;
    res.report.round = round;

    auto prev_own = decouple::ownership_of(st.spec, prev_plan, st.params);
    decouple::merge_from_download(st.params, prev_own, download);
    res.report.events.push_back("download");

    decouple::promote(prev_plan, new_plan);
    auto own = decouple::ownership_of(st.spec, new_plan, st.params);
    res.report.events.push_back("p_update");

    // shadow tracks the private weights as of the previous epoch boundary;
    // newly promoted channels start from their shared-trained values
    st.ema_shadow = st.params;

    auto mask_full = decouple::mask_for(new_plan, st.params, decouple::Subnet::full);
    auto mask_priv = decouple::mask_for(new_plan, st.params, decouple::Subnet::private_only);
    auto mask_shared = decouple::mask_for(new_plan, st.params, decouple::Subnet::shared_only);
    const bool cd_active = cfg.distill &&
                           !decouple::subnet_empty(new_plan, decouple::Subnet::private_only) &&
                           !decouple::subnet_empty(new_plan, decouple::Subnet::shared_only);

    nn::OptimizerState& opt = st.opt;
    opt.lr = cfg.lr;
    opt.momentum = cfg.momentum;
    opt.weight_decay = cfg.weight_decay;

    const data::Dataset& train = *st.train;
    Scalar ce_sum = 0.0, cd_sum = 0.0;

    for (int epoch = 1; epoch <= cfg.local_epochs; ++epoch) {
        res.report.events.push_back("epoch " + std::to_string(epoch));
        std::vector<std::size_t> order(train.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), st.rng);

        for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size) {
            std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
            Matrix x(hi - lo, train.inputs.cols);
            std::vector<int> labels(hi - lo);
            for (std::size_t i = lo; i < hi; ++i) {
                std::copy(train.inputs.row(order[i]), train.inputs.row(order[i]) + train.inputs.cols,
                          x.row(i - lo));
                labels[i - lo] = train.labels[order[i]];
            }

            auto cache_full = nn::forward(st.params, st.spec, st.input_shape, x, mask_full);
            nn::ForwardCache cache_priv, cache_shared;
            if (cd_active) {
                cache_priv = nn::forward(st.params, st.spec, st.input_shape, x, mask_priv);
                cache_shared = nn::forward(st.params, st.spec, st.input_shape, x, mask_shared);
            }
            auto loss = distill::total_loss(
                nn::logits_of(cache_full), labels,
                cd_active ? nn::logits_of(cache_priv) : nn::logits_of(cache_full),
                cd_active ? nn::logits_of(cache_shared) : nn::logits_of(cache_full), cfg.lambda,
                cd_active);
            if (!std::isfinite(loss.total))
                throw TrainingError("non-finite loss at round " + std::to_string(round) +
                                    ", client " + std::to_string(st.client_id));

            auto grads = nn::zeros_like(st.params);
            nn::backward(st.params, st.spec, st.input_shape, mask_full, cache_full, loss.d_full, grads);
            if (cd_active) {
                nn::backward(st.params, st.spec, st.input_shape, mask_priv, cache_priv,
                             loss.d_private, grads);
                nn::backward(st.params, st.spec, st.input_shape, mask_shared, cache_shared,
                             loss.d_shared, grads);
            }
            nn::sgd_step(st.params, grads, opt,
                         "round " + std::to_string(round) + ", client " + std::to_string(st.client_id));

            ce_sum += loss.ce * static_cast<Scalar>(hi - lo);
            cd_sum += loss.cd * static_cast<Scalar>(hi - lo);
            res.report.samples_seen += hi - lo;
        }

        if (cfg.temporal_avg) {
            Scalar beta = ramp_beta(round, cfg.t0, cfg.beta_max);
            ema_update(st.params, st.ema_shadow, own, beta);
            res.report.events.push_back("ema");
        }
        st.ema_shadow = st.params;
    }

    res.upload = decouple::split_for_upload(st.params, own);
    res.report.events.push_back("upload");
    if (res.report.samples_seen > 0) {
        ce_sum /= static_cast<Scalar>(res.report.samples_seen);
        cd_sum /= static_cast<Scalar>(res.report.samples_seen);
    }
    res.report.mean_ce = ce_sum;
    res.report.mean_cd = cd_sum;
    res.report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return res;
}

}  // namespace cd2pfed::client

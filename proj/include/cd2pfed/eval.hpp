#pragma once

// The three evaluation metrics: own-model accuracy on each client's local
// test split, and softmax-ensemble accuracy on the pooled new-test and
// distribution-shifted external pools.

#include <cmath>
#include <string>
#include <vector>

#include "cd2pfed/client.hpp"
#include "cd2pfed/data.hpp"
#include "cd2pfed/decouple.hpp"
#include "cd2pfed/nn.hpp"

namespace cd2pfed::eval {

/// A frozen per-client model ready for inference: the client's
/// personalized weights with the freshly aggregated shared part merged in.
struct EvalModel {
    std::vector<nn::LayerSpec> spec;
    nn::ActShape input_shape;
    nn::ModelParams params;
};

inline EvalModel personalized_model(const client::ClientState& st,
                                    const decouple::PartitionPlan& plan,
                                    const std::vector<Scalar>& aggregated_shared) {
    EvalModel m{st.spec, st.input_shape, st.params};
    auto own = decouple::ownership_of(m.spec, plan, m.params);
    decouple::merge_from_download(m.params, own, aggregated_shared);
    return m;
}

inline Matrix predict_probs(const EvalModel& m, const data::Dataset& ds) {
    auto mask = nn::ForwardMask::full_for(m.params);
    auto cache = nn::forward(m.params, m.spec, m.input_shape, ds.inputs, mask);
    return nn::softmax(nn::logits_of(cache));
}

/// Argmax with ties broken toward the lowest class index.
inline int argmax_row(const Scalar* row, std::size_t n) {
    int best = 0;
    for (std::size_t j = 1; j < n; ++j)
        if (row[j] > row[best]) best = static_cast<int>(j);
    return best;
}

/// Each sample is scored by its OWN client's personalized full model;
/// accuracy (%) is sample-weighted across clients.
inline double local_accuracy(const std::vector<EvalModel>& models,
                             const std::vector<data::ClientShard>& shards,
                             std::vector<double>* per_client = nullptr) {
    std::size_t correct = 0, total = 0;
    if (per_client) per_client->clear();
    for (std::size_t k = 0; k < models.size(); ++k) {
        const data::Dataset& pool = shards[k].local_test;
        Matrix probs = predict_probs(models[k], pool);
        std::size_t c = 0;
        for (std::size_t s = 0; s < pool.size(); ++s)
            if (argmax_row(probs.row(s), probs.cols) == pool.labels[s]) ++c;
        if (per_client)
            per_client->push_back(100.0 * static_cast<double>(c) / static_cast<double>(pool.size()));
        correct += c;
        total += pool.size();
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

/// Ensemble rule used for the new-test and external-test metrics: average
/// the clients' softmax outputs, then take top-1.
inline double ensemble_accuracy(const std::vector<EvalModel>& models, const data::Dataset& pool) {
    if (pool.empty()) throw ConfigError("ensemble metric on an empty pool");
    Matrix mean(pool.size(), static_cast<std::size_t>(pool.num_classes));
    for (const auto& m : models) {
        Matrix probs = predict_probs(m, pool);
        for (std::size_t j = 0; j < mean.data.size(); ++j) mean.data[j] += probs.data[j];
    }
    std::size_t correct = 0;
    for (std::size_t s = 0; s < pool.size(); ++s)
        if (argmax_row(mean.row(s), mean.cols) == pool.labels[s]) ++correct;
    return 100.0 * static_cast<double>(correct) / static_cast<double>(pool.size());
}

inline double new_accuracy(const std::vector<EvalModel>& models, const data::Dataset& pool) {
    return ensemble_accuracy(models, pool);
}
inline double external_accuracy(const std::vector<EvalModel>& models, const data::Dataset& pool) {
    return ensemble_accuracy(models, pool);
}

struct MetricRow {
    int round = 0;
    std::string strategy;
    std::string metric;  // local | new | external
    double value = 0.0;  // top-1 accuracy, percent
    int client_id = -1;  // -1 for aggregate rows
    std::uint64_t seed = 0;
};

struct Summary {
    std::string strategy;
    std::string metric;
    double mean = 0.0;
    double stddev = 0.0;
    std::size_t count = 0;
};

/// Mean and sample standard deviation per (strategy, metric), in first-seen
/// order.
inline std::vector<Summary> summarize(const std::vector<MetricRow>& rows) {
    std::vector<Summary> out;
    auto find = [&](const MetricRow& r) -> Summary& {
        for (auto& s : out)
            if (s.strategy == r.strategy && s.metric == r.metric) return s;
        out.push_back({r.strategy, r.metric, 0.0, 0.0, 0});
        return out.back();
    };
    std::vector<std::vector<double>> values;
    for (const auto& r : rows) {
        Summary& s = find(r);
        std::size_t idx = &s - out.data();
        if (values.size() <= idx) values.resize(idx + 1);
        values[idx].push_back(r.value);
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
        double sum = 0.0;
        for (double v : values[i]) sum += v;
        out[i].count = values[i].size();
        out[i].mean = sum / static_cast<double>(values[i].size());
        double sq = 0.0;
        for (double v : values[i]) sq += (v - out[i].mean) * (v - out[i].mean);
        out[i].stddev = values[i].size() > 1 ? std::sqrt(sq / static_cast<double>(values[i].size() - 1)) : 0.0;
    }
    return out;
}

}  // namespace cd2pfed::eval

#pragma once

// Central finite-difference validation of the total-loss gradients. The
// numeric side only ever calls forward passes and recomputes the losses
// in long double, with the distillation targets frozen at the unperturbed
// parameters (the stop-gradient convention), so it is independent of the
// analytic backward path it checks.

#include <random>
#include <vector>

#include "cd2pfed/decouple.hpp"
#include "cd2pfed/distill.hpp"
#include "cd2pfed/nn.hpp"

namespace cd2pfed::gradcheck {

namespace detail {

inline std::vector<long double> softmax_row_ld(const Scalar* z, std::size_t n) {
    long double mx = z[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max<long double>(mx, z[j]);
    std::vector<long double> q(n);
    long double sum = 0.0L;
    for (std::size_t j = 0; j < n; ++j) {
        q[j] = std::exp(static_cast<long double>(z[j]) - mx);
        sum += q[j];
    }
    for (auto& v : q) v /= sum;
    return q;
}

inline long double kl_ld(const std::vector<long double>& p, const std::vector<long double>& q) {
    long double acc = 0.0L;
    for (std::size_t j = 0; j < p.size(); ++j) {
        long double pj = std::max<long double>(p[j], 1e-12L);
        long double qj = std::max<long double>(q[j], 1e-12L);
        acc += pj * (std::log(pj) - std::log(qj));
    }
    return acc;
}

}  // namespace detail

struct Problem {
    std::vector<nn::LayerSpec> spec;
    nn::ActShape input_shape;
    nn::ModelParams params;
    decouple::PartitionPlan plan;
    Matrix x;
    std::vector<int> labels;
    Scalar lambda = 1.0;
    bool cd = true;
};

/// Total objective at `params` with the distillation targets frozen to
/// the probability rows computed at the base parameters.
inline long double objective(const Problem& pb, const nn::ModelParams& params,
                             const std::vector<std::vector<long double>>& target_local,
                             const std::vector<std::vector<long double>>& target_global) {
    auto mask_full = decouple::mask_for(pb.plan, params, decouple::Subnet::full);
    auto cache = nn::forward(params, pb.spec, pb.input_shape, pb.x, mask_full);
    const Matrix& zf = nn::logits_of(cache);

    long double loss = 0.0L;
    for (std::size_t s = 0; s < zf.rows; ++s) {
        auto p = detail::softmax_row_ld(zf.row(s), zf.cols);
        loss += -std::log(std::max<long double>(p[pb.labels[s]], 1e-12L));
    }
    loss /= static_cast<long double>(zf.rows);

    if (pb.cd) {
        auto mask_l = decouple::mask_for(pb.plan, params, decouple::Subnet::private_only);
        auto mask_g = decouple::mask_for(pb.plan, params, decouple::Subnet::shared_only);
        auto cl = nn::forward(params, pb.spec, pb.input_shape, pb.x, mask_l);
        auto cg = nn::forward(params, pb.spec, pb.input_shape, pb.x, mask_g);
        const Matrix& zl = nn::logits_of(cl);
        const Matrix& zg = nn::logits_of(cg);
        long double cd_loss = 0.0L;
        for (std::size_t s = 0; s < zl.rows; ++s) {
            auto pl = detail::softmax_row_ld(zl.row(s), zl.cols);
            auto pg = detail::softmax_row_ld(zg.row(s), zg.cols);
            // KL(sg(y_L), y_G): only y_G moves; KL(sg(y_G), y_L): only y_L moves
            cd_loss += 0.5L * (detail::kl_ld(target_local[s], pg) + detail::kl_ld(target_global[s], pl));
        }
        loss += pb.lambda * cd_loss / static_cast<long double>(zl.rows);
    }
    return loss;
}

struct Result {
    double max_rel_err = 0.0;
    std::size_t entries_checked = 0;
};

/// Compares the analytic gradient of the total loss against central
/// finite differences (step h) entry by entry.
inline Result check(const Problem& pb, Scalar h = 1e-5) {
    // frozen distillation targets at the base parameters
    std::vector<std::vector<long double>> tl, tg;
    if (pb.cd) {
        auto ml = decouple::mask_for(pb.plan, pb.params, decouple::Subnet::private_only);
        auto mg = decouple::mask_for(pb.plan, pb.params, decouple::Subnet::shared_only);
        auto cl = nn::forward(pb.params, pb.spec, pb.input_shape, pb.x, ml);
        auto cg = nn::forward(pb.params, pb.spec, pb.input_shape, pb.x, mg);
        for (std::size_t s = 0; s < pb.x.rows; ++s) {
            tl.push_back(detail::softmax_row_ld(nn::logits_of(cl).row(s), nn::logits_of(cl).cols));
            tg.push_back(detail::softmax_row_ld(nn::logits_of(cg).row(s), nn::logits_of(cg).cols));
        }
    }

    // analytic gradient
    auto mask_full = decouple::mask_for(pb.plan, pb.params, decouple::Subnet::full);
    auto cache_full = nn::forward(pb.params, pb.spec, pb.input_shape, pb.x, mask_full);
    nn::ForwardCache cache_l, cache_g;
    nn::ForwardMask mask_l, mask_g;
    if (pb.cd) {
        mask_l = decouple::mask_for(pb.plan, pb.params, decouple::Subnet::private_only);
        mask_g = decouple::mask_for(pb.plan, pb.params, decouple::Subnet::shared_only);
        cache_l = nn::forward(pb.params, pb.spec, pb.input_shape, pb.x, mask_l);
        cache_g = nn::forward(pb.params, pb.spec, pb.input_shape, pb.x, mask_g);
    }
    auto loss = distill::total_loss(nn::logits_of(cache_full), pb.labels,
                                    pb.cd ? nn::logits_of(cache_l) : nn::logits_of(cache_full),
                                    pb.cd ? nn::logits_of(cache_g) : nn::logits_of(cache_full),
                                    pb.lambda, pb.cd);
    auto grads = nn::zeros_like(pb.params);
    nn::backward(pb.params, pb.spec, pb.input_shape, mask_full, cache_full, loss.d_full, grads);
    if (pb.cd) {
        nn::backward(pb.params, pb.spec, pb.input_shape, mask_l, cache_l, loss.d_private, grads);
        nn::backward(pb.params, pb.spec, pb.input_shape, mask_g, cache_g, loss.d_shared, grads);
    }

    Result res;
    nn::ModelParams work = pb.params;
    auto check_entry = [&](std::vector<Scalar>& vec, std::size_t j, Scalar analytic) {
        Scalar orig = vec[j];
        vec[j] = orig + h;
        long double fp = objective(pb, work, tl, tg);
        vec[j] = orig - h;
        long double fm = objective(pb, work, tl, tg);
        vec[j] = orig;
        double numeric = static_cast<double>((fp - fm) / (2.0L * h));
        double diff = std::abs(analytic - numeric);
        if (diff > 1e-8) {
            double rel = diff / std::max(std::abs(analytic), std::abs(numeric));
            res.max_rel_err = std::max(res.max_rel_err, rel);
        }
        ++res.entries_checked;
    };
    for (std::size_t i = 0; i < work.tensors.size(); ++i) {
        for (std::size_t j = 0; j < work.tensors[i].w.size(); ++j)
            check_entry(work.tensors[i].w, j, grads.tensors[i].w[j]);
        for (std::size_t j = 0; j < work.tensors[i].b.size(); ++j)
            check_entry(work.tensors[i].b, j, grads.tensors[i].b[j]);
    }
    return res;
}

/// Random dense/relu chain of 2-4 parametric layers with a random
/// partition plan and batch.
inline Problem random_problem(std::mt19937_64& rng, bool with_cd = true) {
    std::uniform_int_distribution<int> nlayers(2, 4);
    std::uniform_int_distribution<int> width(3, 8);
    std::uniform_int_distribution<int> classes(2, 5);
    std::uniform_real_distribution<Scalar> unit(0.0, 1.0);

    Problem pb;
    int in = width(rng);
    pb.input_shape = {in, 0, 0};
    int n = nlayers(rng);
    for (int i = 0; i < n - 1; ++i) {
        int out = width(rng);
        pb.spec.push_back(nn::LayerSpec::make_dense(in, out));
        pb.spec.push_back(nn::LayerSpec::make_relu());
        in = out;
    }
    int c = classes(rng);
    pb.spec.push_back(nn::LayerSpec::make_dense(in, c));

    pb.params = nn::init_params(pb.spec, rng);
    // random biases keep ReLU preactivations off the kink, where central
    // differences of the subgradient are undefined
    std::uniform_real_distribution<Scalar> bias_dist(0.05, 0.3);
    for (auto& t : pb.params.tensors)
        for (auto& b : t.b) b = bias_dist(rng);
    pb.plan = decouple::make_plan(pb.spec, unit(rng));
    pb.cd = with_cd && !decouple::subnet_empty(pb.plan, decouple::Subnet::private_only) &&
            !decouple::subnet_empty(pb.plan, decouple::Subnet::shared_only);
    pb.lambda = 1.0;

    std::uniform_int_distribution<int> batch_dist(2, 6);
    int b = batch_dist(rng);
    pb.x = Matrix(b, pb.input_shape.size());
    for (auto& v : pb.x.data) v = unit(rng);
    std::uniform_int_distribution<int> label(0, c - 1);
    pb.labels.resize(b);
    for (auto& y : pb.labels) y = label(rng);
    return pb;
}

/// The full suite: `nets` random networks, reporting the worst relative
/// error seen.
inline Result run_suite(std::uint64_t seed, int nets = 20) {
    std::mt19937_64 rng(seed);
    Result worst;
    for (int i = 0; i < nets; ++i) {
        auto pb = random_problem(rng);
        auto r = check(pb);
        worst.max_rel_err = std::max(worst.max_rel_err, r.max_rel_err);
        worst.entries_checked += r.entries_checked;
    }
    return worst;
}

}  // namespace cd2pfed::gradcheck

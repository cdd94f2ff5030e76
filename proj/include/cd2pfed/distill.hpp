#pragma once

// Cyclic distillation between the private and shared subnet predictions,
// and the total training loss with its head logit gradients.

#include <cmath>
#include <vector>

#include "cd2pfed/nn.hpp"

namespace cd2pfed::distill {

inline constexpr Scalar kProbFloor = 1e-12;

/// KL(p || q) over one probability row, entries clamped to >= 1e-12
/// before the logarithms.
inline Scalar kl(const Scalar* p, const Scalar* q, std::size_t n) {
    Scalar acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        Scalar pj = std::max(p[j], kProbFloor);
        Scalar qj = std::max(q[j], kProbFloor);
        acc += pj * (std::log(pj) - std::log(qj));
    }
    return acc;
}

inline Scalar kl(const std::vector<Scalar>& p, const std::vector<Scalar>& q) {
    return kl(p.data(), q.data(), p.size());
}

/// Batch-mean symmetric distillation loss:
///   L_CD = 1/2 (KL(y_L, y_G) + KL(y_G, y_L)).
/// Gradient contract: in each KL(a, b) the first argument is a frozen
/// target and gradients flow only into b's logits, so the two subnets
/// pull each other mutually.
inline Scalar cyclic_distillation_loss(const Matrix& probs_local, const Matrix& probs_global) {
    Scalar total = 0.0;
    for (std::size_t s = 0; s < probs_local.rows; ++s)
        total += 0.5 * (kl(probs_local.row(s), probs_global.row(s), probs_local.cols) +
                        kl(probs_global.row(s), probs_local.row(s), probs_local.cols));
    return total / static_cast<Scalar>(probs_local.rows);
}

struct TotalLoss {
    Scalar ce = 0.0;
    Scalar cd = 0.0;
    Scalar total = 0.0;
    Matrix d_full;     // dL/dz of the full network head
    Matrix d_private;  // dL/dz of the private subnet head
    Matrix d_shared;   // dL/dz of the shared subnet head
};

/// Cross entropy on the full-network prediction plus lambda * L_CD.
/// Returns the three logit-gradient blocks for the backward passes; the
/// subnet blocks are zero when distillation is disabled.
inline TotalLoss total_loss(const Matrix& logits_full, const std::vector<int>& labels,
                            const Matrix& logits_local, const Matrix& logits_global,
                            Scalar lambda, bool cd_enabled) {
    const std::size_t batch = logits_full.rows;
    const std::size_t classes = logits_full.cols;
    const Scalar inv_b = 1.0 / static_cast<Scalar>(batch);

    TotalLoss out;
    Matrix p_full = nn::softmax(logits_full);
    out.ce = nn::cross_entropy(p_full, labels);
    out.d_full = Matrix(batch, classes);
    for (std::size_t s = 0; s < batch; ++s) {
        for (std::size_t j = 0; j < classes; ++j) out.d_full.at(s, j) = p_full.at(s, j) * inv_b;
        out.d_full.at(s, static_cast<std::size_t>(labels[s])) -= inv_b;
    }

    if (cd_enabled) {
        Matrix p_local = nn::softmax(logits_local);
        Matrix p_global = nn::softmax(logits_global);
        out.cd = cyclic_distillation_loss(p_local, p_global);
        out.d_private = Matrix(batch, classes);
        out.d_shared = Matrix(batch, classes);
        const Scalar scale = lambda * 0.5 * inv_b;
        for (std::size_t s = 0; s < batch; ++s)
            for (std::size_t j = 0; j < classes; ++j) {
                Scalar diff = p_local.at(s, j) - p_global.at(s, j);
                out.d_private.at(s, j) = scale * diff;   // student in KL(y_G, y_L)
                out.d_shared.at(s, j) = -scale * diff;   // student in KL(y_L, y_G)
            }
    }
    out.total = out.ce + (cd_enabled ? lambda * out.cd : 0.0);
    return out;
}

}  // namespace cd2pfed::distill

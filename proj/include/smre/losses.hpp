#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "smre/errors.hpp"
#include "smre/ops.hpp"
#include "smre/tensor.hpp"

namespace smre {

struct SSTConfig {
    double alpha = 0.2;     // ranking margin
    double m = 0.2;         // contrastive margin
    double y_signal = 1.0;  // mixes the two contrastive terms, in [0, 1]

    void validate() const {
        if (!(alpha >= 0.0)) throw ContractError("loss config: alpha must be >= 0");
        if (!(m >= 0.0)) throw ContractError("loss config: m must be >= 0");
        if (!(y_signal >= 0.0 && y_signal <= 1.0))
            throw ContractError("loss config: y_signal must lie in [0, 1]");
    }
};

struct HardestNegatives {
    std::vector<std::size_t> text_for_video;  // per row i: argmax_{j != i} sim[i, j]
    std::vector<std::size_t> video_for_text;  // per col j: argmax_{i != j} sim[i, j]
};

/// Ties resolve to the lowest index so reruns pick identical negatives.
template <typename S>
HardestNegatives hardest_negatives(const Tensor<S>& sim) {
    if (sim.rank() != 2 || sim.dim(0) != sim.dim(1))
        throw DimensionError("hardest_negatives: need a square similarity matrix, got " +
                             shape_str(sim.shape()));
    const std::size_t b = sim.dim(0);
    if (b < 2) throw ContractError("hardest_negatives: need at least two pairs, got " + std::to_string(b));
    HardestNegatives out;
    out.text_for_video.resize(b);
    out.video_for_text.resize(b);
    const S* s = sim.data();
    for (std::size_t i = 0; i < b; ++i) {
        std::size_t best = (i == 0) ? 1 : 0;
        for (std::size_t j = 0; j < b; ++j) {
            if (j == i) continue;
            if (s[i * b + j] > s[i * b + best]) best = j;
        }
        out.text_for_video[i] = best;
    }
    for (std::size_t j = 0; j < b; ++j) {
        std::size_t best = (j == 0) ? 1 : 0;
        for (std::size_t i = 0; i < b; ++i) {
            if (i == j) continue;
            if (s[i * b + j] > s[best * b + j]) best = i;
        }
        out.video_for_text[j] = best;
    }
    return out;
}

/// Bidirectional hinge ranking loss over the in-batch similarity matrix,
/// each positive pitted against its single hardest negative per direction,
/// averaged over the batch. Degenerates to 0 for a batch of one.
template <typename S>
Tensor<S> triplet_loss_hardest(const Tensor<S>& sim, S alpha) {
    if (sim.rank() != 2 || sim.dim(0) != sim.dim(1))
        throw DimensionError("triplet_loss_hardest: need a square similarity matrix, got " +
                             shape_str(sim.shape()));
    if (!sim.all_finite()) throw EvaluationError("triplet_loss_hardest: similarity matrix has non-finite entries");
    const std::size_t b = sim.dim(0);
    if (b < 2) return Tensor<S>::scalar(S(0));
    HardestNegatives hn = hardest_negatives(sim);
    std::vector<std::size_t> iota(b);
    for (std::size_t i = 0; i < b; ++i) iota[i] = i;
    Tensor<S> pos = gather2d(sim, iota, iota);
    Tensor<S> neg_text = gather2d(sim, iota, hn.text_for_video);
    Tensor<S> neg_video = gather2d(sim, hn.video_for_text, iota);
    Tensor<S> hinge_t = relu(add_scalar(sub(neg_text, pos), alpha));
    Tensor<S> hinge_v = relu(add_scalar(sub(neg_video, pos), alpha));
    return mean_all(add(hinge_t, hinge_v));
}

/// Margin contrastive loss on encoded pairs: D = 1 - cosine(a_i, b_i),
/// per-pair term (1-Y) D^2 + Y max(0, m - D)^2, averaged over the batch.
template <typename S>
Tensor<S> contrastive_loss(const Tensor<S>& a, const Tensor<S>& b, S m, S y_signal) {
    if (!(y_signal >= S(0) && y_signal <= S(1)))
        throw ContractError("contrastive_loss: y_signal must lie in [0, 1]");
    if (!(m >= S(0))) throw ContractError("contrastive_loss: margin must be >= 0");
    Tensor<S> cos = cosine_pairs(a, b);
    Tensor<S> dist = rsub_scalar(S(1), cos);
    Tensor<S> pull = square(dist);
    Tensor<S> push = square(relu(rsub_scalar(m, dist)));
    return mean_all(add(scale(pull, S(1) - y_signal), scale(push, y_signal)));
}

}  // namespace smre

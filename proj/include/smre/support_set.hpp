#pragma once

#include <cmath>
#include <string>

#include "smre/encoder.hpp"
#include "smre/instrumentation.hpp"
#include "smre/ops.hpp"
#include "smre/tensor.hpp"

namespace smre {

struct SupportConfig {
    double theta_scale = 10.0;  // softmax sharpening constant
    bool include_self = true;   // keep W[i,i]; masking it is an ablation knob
    bool enabled = true;

    void validate() const {
        if (!(theta_scale > 0.0)) throw ContractError("support config: theta_scale must be > 0");
    }
};

/// Mixing weights: S[i,j] = cosine(t_gt_i, vo_pooled_j), W = row-softmax of
/// theta_scale * S. Rows index text, columns index videos.
template <typename S>
Tensor<S> compute_weights(const Tensor<S>& t_gt, const Tensor<S>& vo_pooled,
                          const SupportConfig& cfg) {
    cfg.validate();
    Counters::global().compute_weights_calls += 1;
    Tensor<S> sim = cosine_similarity_matrix(t_gt, vo_pooled);
    if (!cfg.include_self) {
        // push the diagonal to -inf before the softmax by a large margin
        const std::size_t b = sim.dim(0);
        if (b < 2) throw ContractError("compute_weights: include_self=false needs B >= 2");
        std::vector<S> penalty(b * b, S(0));
        for (std::size_t i = 0; i < b; ++i) penalty[i * b + i] = S(-1e9) / static_cast<S>(cfg.theta_scale);
        sim = add(sim, Tensor<S>::from(sim.shape(), std::move(penalty)));
    }
    return softmax_lastdim(sim, static_cast<S>(cfg.theta_scale));
}

/// out[i] = sum_j w[i,j] * v_o[j]: one convex combination of the batch's raw
/// feature tensors per sample, the same blend at every clip and channel.
template <typename S>
Tensor<S> build_support_set(const Tensor<S>& w, const Tensor<S>& v_o) {
    if (w.rank() != 2 || w.dim(0) != w.dim(1))
        throw DimensionError("build_support_set: weights must be square, got " + shape_str(w.shape()));
    if (v_o.rank() != 3 || v_o.dim(0) != w.dim(0))
        throw DimensionError("build_support_set: weights " + shape_str(w.shape()) +
                             " do not match features " + shape_str(v_o.shape()));
    const std::size_t b = w.dim(0);
    for (std::size_t i = 0; i < b; ++i) {
        S row = S(0);
        for (std::size_t j = 0; j < b; ++j) row += w.data()[i * b + j];
        if (std::fabs(static_cast<double>(row) - 1.0) > 1e-5)
            throw ContractError("build_support_set: weight row " + std::to_string(i) +
                                " sums to " + std::to_string(static_cast<double>(row)));
    }
    Counters::global().build_support_calls += 1;
    const std::size_t t = v_o.dim(1), dv = v_o.dim(2);
    Tensor<S> flat = v_o.reshaped({b, t * dv});
    Tensor<S> mixed = matmul(w, flat);
    return mixed.reshaped({b, t, dv});
}

/// Runs the support branch through the shared encoder. Training only; the
/// branch must never run at inference.
template <typename S>
void forward_support_branch(const Batch<S>& batch, EncodedBatch<S>& enc, const Tensor<S>& enc_w,
                            const Tensor<S>& enc_b, const SupportConfig& cfg, bool training) {
    if (!cfg.enabled) return;
    if (!training) throw ModeError("support branch is a training-only construct");
    if (!enc.has_text) throw ContractError("support branch needs text embeddings in the encoded batch");
    Tensor<S> w = compute_weights(enc.t_gt, enc.vo_pooled, cfg);
    enc.vs = build_support_set(w, batch.video_features);
    enc.vs_mid = encode_video(*enc.vs, enc_w, enc_b);
    enc.vs_pooled = pool_temporal(*enc.vs_mid);
}

}  // namespace smre

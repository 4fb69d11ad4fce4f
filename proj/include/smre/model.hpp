#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "smre/decoder.hpp"
#include "smre/encoder.hpp"
#include "smre/errors.hpp"
#include "smre/params.hpp"
#include "smre/support_set.hpp"
#include "smre/tensor.hpp"
#include "smre/vocabulary.hpp"

namespace smre {

struct ModelDims {
    std::size_t vocab = 0;   // set from the vocabulary
    std::size_t d_v = 64;    // raw clip feature width
    std::size_t d_h = 128;   // clip embedding width
    std::size_t d_s = 128;   // shared video/text embedding width
    std::size_t d_e = 64;    // token embedding width
    std::size_t d_dec = 128; // LSTM state width
    std::size_t d_a = 64;    // attention hidden width
    std::size_t t_clips = 26;
    std::size_t max_len = 20;

    void validate() const {
        if (vocab < Vocabulary::kReservedCount)
            throw ContractError("model dims: vocab must cover the reserved ids");
        if (d_s != d_h)
            throw ContractError("model dims: pooled clip embeddings double as the shared space, so d_s must equal d_h");
        for (std::size_t d : {d_v, d_h, d_e, d_dec, d_a, t_clips, max_len})
            if (d == 0) throw ContractError("model dims: all widths must be positive");
    }
};

/// The full parameter table in its one canonical order.
inline std::vector<std::pair<std::string, Shape>> param_shapes(const ModelDims& dims) {
    return {
        {"text.embed", {dims.vocab, dims.d_e}},
        {"text.proj.w", {dims.d_e, dims.d_s}},
        {"text.proj.b", {dims.d_s}},
        {"enc.w", {dims.d_v, dims.d_h}},
        {"enc.b", {dims.d_h}},
        {"dec.embed", {dims.vocab, dims.d_e}},
        {"dec.att.wx", {dims.d_e + dims.d_h + dims.d_dec, 4 * dims.d_dec}},
        {"dec.att.wh", {dims.d_dec, 4 * dims.d_dec}},
        {"dec.att.b", {4 * dims.d_dec}},
        {"dec.lang.wx", {dims.d_h + dims.d_dec, 4 * dims.d_dec}},
        {"dec.lang.wh", {dims.d_dec, 4 * dims.d_dec}},
        {"dec.lang.b", {4 * dims.d_dec}},
        {"attn.wk", {dims.d_h, dims.d_a}},
        {"attn.wq", {dims.d_dec, dims.d_a}},
        {"attn.v", {dims.d_a, 1}},
        {"attn.b", {dims.d_a}},
        {"out.w", {dims.d_dec, dims.vocab}},
        {"out.b", {dims.vocab}},
    };
}

/// Allocates every parameter in the canonical order with seeded uniform
/// init: weight matrices at 1/sqrt(fan_in), embedding tables at 0.1, biases
/// (and any other rank-1 tensor) at zero.
template <typename S>
ModelParams<S> init_model_params(const ModelDims& dims, std::uint32_t seed) {
    dims.validate();
    std::mt19937 rng(seed);
    ModelParams<S> p;
    for (const auto& [name, shape] : param_shapes(dims)) {
        Tensor<S>& t = p.add(name, Tensor<S>::zeros(shape));
        if (shape.size() == 1) continue;
        const bool is_embedding = name.size() > 6 && name.rfind(".embed") == name.size() - 6;
        const double bound =
            is_embedding ? 0.1 : 1.0 / std::sqrt(static_cast<double>(shape[0]));
        init_uniform(t, rng, bound);
    }
    return p;
}

template <typename S>
DecoderParams<S> decoder_params(const ModelParams<S>& p) {
    return DecoderParams<S>{p.at("dec.embed"),  p.at("dec.att.wx"),  p.at("dec.att.wh"),
                            p.at("dec.att.b"),  p.at("dec.lang.wx"), p.at("dec.lang.wh"),
                            p.at("dec.lang.b"), p.at("attn.wk"),     p.at("attn.wq"),
                            p.at("attn.v"),     p.at("attn.b"),      p.at("out.w"),
                            p.at("out.b")};
}

/// Shared forward pass up to the decoder. The text and support branches only
/// run in training mode; inference touches nothing but the video encoder.
/// with_text pulls in the caption encoder even when the support branch is
/// off (the ranking loss needs it on its own).
template <typename S>
EncodedBatch<S> encode_batch(const ModelParams<S>& params, const Batch<S>& batch, bool training,
                             const SupportConfig& support, bool with_text = true) {
    EncodedBatch<S> enc;
    enc.vo_mid = encode_video(batch.video_features, params.at("enc.w"), params.at("enc.b"));
    enc.vo_pooled = pool_temporal(enc.vo_mid);
    if (!training) return enc;
    if (with_text || support.enabled) {
        enc.t_gt = encode_text_gt(batch.captions, batch.caption_mask, batch.batch_size,
                                  batch.caption_len, params.at("text.embed"),
                                  params.at("text.proj.w"), params.at("text.proj.b"));
        enc.has_text = true;
    }
    forward_support_branch(batch, enc, params.at("enc.w"), params.at("enc.b"), support, training);
    return enc;
}

}  // namespace smre

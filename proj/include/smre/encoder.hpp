#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "smre/corpus.hpp"
#include "smre/instrumentation.hpp"
#include "smre/ops.hpp"
#include "smre/params.hpp"
#include "smre/tensor.hpp"
#include "smre/vocabulary.hpp"

namespace smre {

/// A minibatch: raw clip features plus tokenized ground-truth captions.
/// One caption per video is selected at batch-assembly time.
template <typename S>
struct Batch {
    Tensor<S> video_features;          // [B, T, d_v]
    std::vector<int> captions;         // [B, L] row-major, BOS ... EOS PAD*
    std::vector<std::uint8_t> caption_mask;  // 1 on non-PAD positions
    std::size_t batch_size = 0;
    std::size_t caption_len = 0;
    std::vector<std::string> video_ids;
};

/// Encoder outputs. Support fields are populated only when the support
/// branch ran (training with the branch enabled).
template <typename S>
struct EncodedBatch {
    Tensor<S> vo_mid;      // per-clip video embeddings [B, T, d_h]
    Tensor<S> vo_pooled;   // [B, d_s]
    Tensor<S> t_gt;        // caption embeddings [B, d_s]; empty when the text side was not run
    bool has_text = false;
    std::optional<Tensor<S>> vs;         // mixed raw features [B, T, d_v]
    std::optional<Tensor<S>> vs_mid;     // encoded mixture [B, T, d_h]
    std::optional<Tensor<S>> vs_pooled;  // [B, d_s]
};

/// Builds a batch from records; caption_choice picks which reference to use
/// per video (wrapped by the caption count).
template <typename S>
Batch<S> make_batch(const std::vector<const VideoRecord*>& records, const Vocabulary& vocab,
                    std::size_t caption_len, std::size_t caption_choice = 0) {
    if (records.empty()) throw ContractError("make_batch: empty record list");
    const std::size_t b = records.size();
    const std::size_t t = records[0]->t_clips;
    const std::size_t dv = records[0]->d_v;
    Batch<S> batch;
    batch.batch_size = b;
    batch.caption_len = caption_len;
    std::vector<S> feats(b * t * dv);
    for (std::size_t i = 0; i < b; ++i) {
        const VideoRecord& rec = *records[i];
        if (rec.t_clips != t || rec.d_v != dv)
            throw DimensionError("make_batch: record " + rec.video_id + " shape differs");
        for (std::size_t k = 0; k < t * dv; ++k)
            feats[i * t * dv + k] = static_cast<S>(rec.features[k]);
        const auto& cap = rec.captions[caption_choice % rec.captions.size()];
        std::vector<int> ids = vocab.encode(cap, caption_len);
        for (std::size_t k = 0; k < caption_len; ++k) {
            batch.captions.push_back(ids[k]);
            batch.caption_mask.push_back(ids[k] != Vocabulary::kPad ? 1 : 0);
        }
        batch.video_ids.push_back(rec.video_id);
    }
    batch.video_features = Tensor<S>::from({b, t, dv}, std::move(feats));
    return batch;
}

/// Raw features of a single record as a [1, T, d_v] tensor, for decoding
/// outside of batch assembly.
template <typename S>
Tensor<S> video_tensor(const VideoRecord& rec) {
    std::vector<S> feats(rec.features.size());
    for (std::size_t k = 0; k < feats.size(); ++k) feats[k] = static_cast<S>(rec.features[k]);
    return Tensor<S>::from({1, rec.t_clips, rec.d_v}, std::move(feats));
}

/// Per-clip affine projection into the middle state: [B,T,d_v] -> [B,T,d_h].
/// The same weights serve the original and support branches.
template <typename S>
Tensor<S> encode_video(const Tensor<S>& v, const Tensor<S>& w, const Tensor<S>& b) {
    if (v.rank() != 3) throw DimensionError("encode_video expects [B,T,d_v], got " + shape_str(v.shape()));
    if (w.rank() != 2 || v.dim(2) != w.dim(0))
        throw ContractError("encode_video: feature dim " + std::to_string(v.dim(2)) +
                            " does not match projection " + shape_str(w.shape()));
    const std::size_t bb = v.dim(0), t = v.dim(1);
    Tensor<S> flat = v.reshaped({bb * t, v.dim(2)});
    Tensor<S> mid = add_rowwise(matmul(flat, w), b);
    return mid.reshaped({bb, t, w.dim(1)});
}

/// Trainable stand-in for the pretrained text encoder: token embeddings,
/// masked mean pool over non-PAD positions, affine projection to the shared
/// space. With freeze=true the whole text side is cut out of gradient flow.
template <typename S>
Tensor<S> encode_text_gt(const std::vector<int>& captions, const std::vector<std::uint8_t>& mask,
                         std::size_t batch_size, std::size_t caption_len, const Tensor<S>& embed,
                         const Tensor<S>& proj_w, const Tensor<S>& proj_b, bool freeze = false) {
    if (captions.size() != batch_size * caption_len || mask.size() != captions.size())
        throw ContractError("encode_text_gt: captions/mask do not match batch layout");
    Counters::global().encode_text_calls += 1;
    for (std::size_t i = 0; i < batch_size; ++i) {
        bool any = false;
        for (std::size_t k = 0; k < caption_len; ++k) any = any || mask[i * caption_len + k];
        if (!any) throw DegenerateInputError("encode_text_gt: all-PAD caption at row " + std::to_string(i));
    }
    const Tensor<S>& emb_table = embed;
    const Tensor<S>& pw = proj_w;
    const Tensor<S>& pb = proj_b;
    Tensor<S> tok = embed_rows(freeze ? emb_table.detached() : emb_table, captions);
    Tensor<S> pooled = masked_mean_time(tok.reshaped({batch_size, caption_len, embed.dim(1)}), mask);
    Tensor<S> out = add_rowwise(matmul(pooled, freeze ? pw.detached() : pw),
                                freeze ? pb.detached() : pb);
    return out;
}

}  // namespace smre

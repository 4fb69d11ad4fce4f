#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "smre/errors.hpp"
#include "smre/ops.hpp"
#include "smre/tensor.hpp"

namespace smre {

template <typename S>
struct DecoderParams {
    Tensor<S> embed;  // [vocab, d_e]
    Tensor<S> att_wx, att_wh, att_b;
    Tensor<S> lang_wx, lang_wh, lang_b;
    Tensor<S> attn_wk, attn_wq, attn_v, attn_b;
    Tensor<S> out_w, out_b;  // [d_dec, vocab], [vocab]
};

template <typename S>
struct LstmOut {
    Tensor<S> h, c;
};

/// One LSTM cell step. Gate order in the fused preactivation is i, f, g, o.
template <typename S>
LstmOut<S> lstm_step(const Tensor<S>& x, const Tensor<S>& h, const Tensor<S>& c,
                     const Tensor<S>& wx, const Tensor<S>& wh, const Tensor<S>& b) {
    if (wh.rank() != 2 || wh.dim(1) != 4 * wh.dim(0))
        throw DimensionError("lstm_step: recurrent weights must be [H, 4H], got " + shape_str(wh.shape()));
    const std::size_t hsz = wh.dim(0);
    Tensor<S> pre = add_rowwise(add(matmul(x, wx), matmul(h, wh)), b);
    Tensor<S> gi = sigmoid(slice_cols(pre, 0, hsz));
    Tensor<S> gf = sigmoid(slice_cols(pre, hsz, 2 * hsz));
    Tensor<S> gg = tanh(slice_cols(pre, 2 * hsz, 3 * hsz));
    Tensor<S> go = sigmoid(slice_cols(pre, 3 * hsz, 4 * hsz));
    Tensor<S> c_new = add(mul(gf, c), mul(gi, gg));
    Tensor<S> h_new = mul(go, tanh(c_new));
    return {h_new, c_new};
}

template <typename S>
struct DecoderState {
    Tensor<S> h_att, c_att, h_lang, c_lang;

    static DecoderState zeros(std::size_t batch, std::size_t d_dec) {
        return {Tensor<S>::zeros({batch, d_dec}), Tensor<S>::zeros({batch, d_dec}),
                Tensor<S>::zeros({batch, d_dec}), Tensor<S>::zeros({batch, d_dec})};
    }
};

/// Per-batch inputs the decoder reads at every step: clip embeddings, their
/// temporal mean, and the attention keys (projected once, not per step).
template <typename S>
struct DecoderContext {
    Tensor<S> v_mid;   // [B, T, d_h]
    Tensor<S> pooled;  // [B, d_h]
    Tensor<S> keys;    // [B, T, d_a]
};

template <typename S>
DecoderContext<S> prepare_context(const DecoderParams<S>& p, const Tensor<S>& v_mid,
                                  const Tensor<S>& pooled) {
    if (v_mid.rank() != 3)
        throw DimensionError("prepare_context: clip embeddings must be [B, T, d], got " +
                             shape_str(v_mid.shape()));
    const std::size_t b = v_mid.dim(0), t = v_mid.dim(1), dh = v_mid.dim(2);
    const std::size_t da = p.attn_wk.dim(1);
    Tensor<S> keys = matmul(v_mid.reshaped({b * t, dh}), p.attn_wk).reshaped({b, t, da});
    return {v_mid, pooled, keys};
}

template <typename S>
struct AttentionOut {
    Tensor<S> weights;  // [B, T]
    Tensor<S> context;  // [B, d]
};

/// Additive attention: score[b,t] = v' tanh(key[b,t] + Wq q + b).
template <typename S>
AttentionOut<S> additive_attention(const DecoderContext<S>& ctx, const Tensor<S>& query,
                                   const Tensor<S>& wq, const Tensor<S>& v, const Tensor<S>& b) {
    const std::size_t bsz = ctx.keys.dim(0), t = ctx.keys.dim(1), da = ctx.keys.dim(2);
    Tensor<S> q = add_rowwise(matmul(query, wq), b);
    Tensor<S> act = tanh(add_time_broadcast(ctx.keys, q));
    Tensor<S> scores = matmul(act.reshaped({bsz * t, da}), v).reshaped({bsz, t});
    Tensor<S> weights = softmax_lastdim(scores);
    Tensor<S> context = attend(ctx.v_mid, weights);
    return {weights, context};
}

template <typename S>
struct StepOut {
    Tensor<S> logits;  // [B, vocab]
    DecoderState<S> state;
    Tensor<S> attention;  // [B, T]
};

/// One decoding step. The first LSTM watches [prev embedding; pooled video;
/// last language state], its output queries the clip attention, and the
/// second LSTM turns [context; first-stage state] into vocabulary logits.
template <typename S>
StepOut<S> decode_step(const DecoderParams<S>& p, const DecoderContext<S>& ctx,
                       const std::vector<int>& prev_tokens, const DecoderState<S>& state) {
    Tensor<S> emb = embed_rows(p.embed, prev_tokens);
    Tensor<S> x_att = concat_cols<S>({emb, ctx.pooled, state.h_lang});
    LstmOut<S> att = lstm_step(x_att, state.h_att, state.c_att, p.att_wx, p.att_wh, p.att_b);
    AttentionOut<S> seen = additive_attention(ctx, att.h, p.attn_wq, p.attn_v, p.attn_b);
    Tensor<S> x_lang = concat_cols<S>({seen.context, att.h});
    LstmOut<S> lang = lstm_step(x_lang, state.h_lang, state.c_lang, p.lang_wx, p.lang_wh, p.lang_b);
    Tensor<S> logits = add_rowwise(matmul(lang.h, p.out_w), p.out_b);
    return {logits, DecoderState<S>{att.h, att.c, lang.h, lang.c}, seen.weights};
}

/// Unrolls the decoder over a gold caption batch and returns the stacked
/// next-token logits [B, L-1, vocab]. tf_prob is the per-position chance of
/// feeding the gold token instead of the model's previous argmax; 1 and 0
/// never touch the RNG, anything in between draws once per (step, sample)
/// from step 1 on. Step 0 always feeds the gold start token.
template <typename S>
Tensor<S> teacher_forced_decode(const DecoderParams<S>& p, const DecoderContext<S>& ctx,
                                const std::vector<int>& captions, std::size_t batch,
                                std::size_t len, double tf_prob, std::mt19937& rng) {
    if (captions.size() != batch * len)
        throw DimensionError("teacher_forced_decode: caption buffer holds " +
                             std::to_string(captions.size()) + " ids, expected " +
                             std::to_string(batch * len));
    if (len < 2) throw ContractError("teacher_forced_decode: captions need a start token plus one target");
    if (!(tf_prob >= 0.0 && tf_prob <= 1.0))
        throw ContractError("teacher_forced_decode: tf_prob must lie in [0, 1]");
    const std::size_t d_dec = p.att_wh.dim(0);
    DecoderState<S> state = DecoderState<S>::zeros(batch, d_dec);
    std::vector<Tensor<S>> steps;
    steps.reserve(len - 1);
    std::vector<int> inputs(batch);
    std::vector<int> prev_argmax(batch, 0);
    std::bernoulli_distribution use_gold(tf_prob);
    for (std::size_t st = 0; st + 1 < len; ++st) {
        for (std::size_t bi = 0; bi < batch; ++bi) {
            const int gold = captions[bi * len + st];
            if (st == 0 || tf_prob == 1.0)
                inputs[bi] = gold;
            else if (tf_prob == 0.0)
                inputs[bi] = prev_argmax[bi];
            else
                inputs[bi] = use_gold(rng) ? gold : prev_argmax[bi];
        }
        StepOut<S> out = decode_step(p, ctx, inputs, state);
        state = out.state;
        if (tf_prob < 1.0) {
            const S* lg = out.logits.data();
            const std::size_t vsz = out.logits.dim(1);
            for (std::size_t bi = 0; bi < batch; ++bi) {
                std::size_t best = 0;
                for (std::size_t k = 1; k < vsz; ++k)
                    if (lg[bi * vsz + k] > lg[bi * vsz + best]) best = k;
                prev_argmax[bi] = static_cast<int>(best);
            }
        }
        steps.push_back(std::move(out.logits));
    }
    return stack_time(steps);
}

/// Mean next-token cross entropy against captions[:, 1:], padding masked out.
template <typename S>
Tensor<S> caption_cross_entropy(const Tensor<S>& logits, const std::vector<int>& captions,
                                std::size_t batch, std::size_t len, int pad_id) {
    if (logits.rank() != 3 || logits.dim(0) != batch || logits.dim(1) + 1 != len)
        throw DimensionError("caption_cross_entropy: logits " + shape_str(logits.shape()) +
                             " do not line up with captions of length " + std::to_string(len));
    const std::size_t lt = len - 1;
    std::vector<int> targets(batch * lt);
    std::vector<std::uint8_t> mask(batch * lt);
    for (std::size_t bi = 0; bi < batch; ++bi)
        for (std::size_t t = 0; t < lt; ++t) {
            const int tok = captions[bi * len + t + 1];
            targets[bi * lt + t] = tok;
            mask[bi * lt + t] = (tok != pad_id) ? 1 : 0;
        }
    return cross_entropy_masked(logits, targets, mask);
}

/// Greedy decoding for one video; stops after eos or max_len tokens. The
/// returned ids include eos when it was emitted. Ties go to the lowest id.
template <typename S>
std::vector<int> greedy_decode(const DecoderParams<S>& p, const DecoderContext<S>& ctx, int bos,
                               int eos, std::size_t max_len) {
    if (ctx.v_mid.dim(0) != 1) throw ContractError("greedy_decode: one video at a time");
    DecoderState<S> state = DecoderState<S>::zeros(1, p.att_wh.dim(0));
    std::vector<int> out;
    int prev = bos;
    for (std::size_t st = 0; st < max_len; ++st) {
        StepOut<S> so = decode_step(p, ctx, std::vector<int>{prev}, state);
        state = so.state;
        const S* lg = so.logits.data();
        const std::size_t vsz = so.logits.dim(1);
        std::size_t best = 0;
        for (std::size_t k = 1; k < vsz; ++k)
            if (lg[k] > lg[best]) best = k;
        out.push_back(static_cast<int>(best));
        if (static_cast<int>(best) == eos) break;
        prev = static_cast<int>(best);
    }
    return out;
}

struct BeamHypothesis {
    std::vector<int> tokens;  // generated ids, start token excluded
    double score = 0.0;       // sum of token log probabilities, never normalized
    bool finished = false;
};

/// Beam search over any step model exposing
///   State init() const;
///   std::pair<std::vector<double>, State> step(const State&, int token) const;
/// where step consumes one input token and returns next-token log
/// probabilities. Candidates rank by score, ties by lexicographically
/// smallest token sequence, so beam_size 1 reproduces greedy decoding
/// exactly. The final ranking prefers finished hypotheses and optionally
/// divides scores by length; pruning always uses raw scores.
template <typename Model>
std::vector<BeamHypothesis> beam_search(const Model& model, std::size_t beam_size,
                                        std::size_t max_len, int bos, int eos,
                                        bool length_normalize = false) {
    if (beam_size < 1) throw ContractError("beam_search: beam_size must be >= 1");
    if (max_len < 1) throw ContractError("beam_search: max_len must be >= 1");
    struct Hyp {
        typename Model::State state;
        std::vector<int> tokens;
        double score;
        bool finished;
    };
    auto better = [](const Hyp& a, const Hyp& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.tokens < b.tokens;
    };
    std::vector<Hyp> beam;
    beam.push_back(Hyp{model.init(), {}, 0.0, false});
    for (std::size_t st = 0; st < max_len; ++st) {
        bool any_open = false;
        for (const Hyp& h : beam)
            if (!h.finished) any_open = true;
        if (!any_open) break;
        std::vector<Hyp> cands;
        for (const Hyp& h : beam) {
            if (h.finished) {
                cands.push_back(h);
                continue;
            }
            const int input = h.tokens.empty() ? bos : h.tokens.back();
            auto [logprobs, next] = model.step(h.state, input);
            if (logprobs.empty()) throw EvaluationError("beam_search: step model returned no scores");
            cands.reserve(cands.size() + logprobs.size());
            for (std::size_t v = 0; v < logprobs.size(); ++v) {
                Hyp c{next, h.tokens, h.score + logprobs[v], static_cast<int>(v) == eos};
                c.tokens.push_back(static_cast<int>(v));
                cands.push_back(std::move(c));
            }
        }
        std::sort(cands.begin(), cands.end(), better);
        if (cands.size() > beam_size)
            cands.erase(cands.begin() + static_cast<std::ptrdiff_t>(beam_size), cands.end());
        beam = std::move(cands);
    }
    auto final_key = [&](const BeamHypothesis& h) {
        const double denom = length_normalize ? std::max<std::size_t>(h.tokens.size(), 1) : 1.0;
        return h.score / denom;
    };
    std::vector<BeamHypothesis> out;
    out.reserve(beam.size());
    for (Hyp& h : beam) out.push_back(BeamHypothesis{std::move(h.tokens), h.score, h.finished});
    std::sort(out.begin(), out.end(), [&](const BeamHypothesis& a, const BeamHypothesis& b) {
        if (a.finished != b.finished) return a.finished;
        const double ka = final_key(a), kb = final_key(b);
        if (ka != kb) return ka > kb;
        return a.tokens < b.tokens;
    });
    return out;
}

/// Step-model adapter running the real decoder on one encoded video.
template <typename S>
class SingleVideoStepModel {
  public:
    struct State {
        DecoderState<S> dec;
    };

    SingleVideoStepModel(DecoderParams<S> p, DecoderContext<S> ctx)
        : p_(std::move(p)), ctx_(std::move(ctx)) {
        if (ctx_.v_mid.dim(0) != 1) throw ContractError("beam decoding runs one video at a time");
    }

    State init() const { return State{DecoderState<S>::zeros(1, p_.att_wh.dim(0))}; }

    std::pair<std::vector<double>, State> step(const State& st, int token) const {
        StepOut<S> out = decode_step(p_, ctx_, std::vector<int>{token}, st.dec);
        const S* lg = out.logits.data();
        const std::size_t vsz = out.logits.dim(1);
        double mx = static_cast<double>(lg[0]);
        for (std::size_t k = 1; k < vsz; ++k) mx = std::max(mx, static_cast<double>(lg[k]));
        double lse = 0.0;
        for (std::size_t k = 0; k < vsz; ++k) lse += std::exp(static_cast<double>(lg[k]) - mx);
        lse = mx + std::log(lse);
        std::vector<double> lp(vsz);
        for (std::size_t k = 0; k < vsz; ++k) lp[k] = static_cast<double>(lg[k]) - lse;
        return {std::move(lp), State{out.state}};
    }

  private:
    DecoderParams<S> p_;
    DecoderContext<S> ctx_;
};

}  // namespace smre

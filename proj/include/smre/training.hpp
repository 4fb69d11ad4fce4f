#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "smre/checkpoint.hpp"
#include "smre/config.hpp"
#include "smre/corpus.hpp"
#include "smre/decoder.hpp"
#include "smre/encoder.hpp"
#include "smre/errors.hpp"
#include "smre/instrumentation.hpp"
#include "smre/losses.hpp"
#include "smre/metrics.hpp"
#include "smre/model.hpp"
#include "smre/optim.hpp"
#include "smre/support_set.hpp"
#include "smre/tensor.hpp"
#include "smre/vocabulary.hpp"

namespace smre {

struct LossReport {
    double l_ori_cap = 0.0;
    double l_sup_cap = 0.0;
    double l_inter = 0.0;
    double l_intra = 0.0;
    double l_overall = 0.0;

    double recomposed(const TrainConfig& cfg) const {
        return cfg.lambda1 * l_inter + cfg.lambda2 * l_intra + cfg.lambda3 * l_sup_cap + l_ori_cap;
    }
};

namespace detail {

inline std::uint32_t epoch_seed(std::uint32_t seed, std::uint64_t epoch) {
    return seed ^ static_cast<std::uint32_t>(epoch * 2654435761ull);
}

inline std::string format_step_line(std::uint64_t epoch, std::size_t step, const LossReport& r) {
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "epoch %llu step %zu ori %.9e sup %.9e inter %.9e intra %.9e overall %.9e",
                  static_cast<unsigned long long>(epoch), step, r.l_ori_cap, r.l_sup_cap,
                  r.l_inter, r.l_intra, r.l_overall);
    return buf;
}

}  // namespace detail

inline ModelDims dims_with_vocab(const ModelDims& dims, const Vocabulary& vocab) {
    ModelDims d = dims;
    d.vocab = static_cast<std::size_t>(vocab.size());
    return d;
}

/// The vocabulary is always built from the training split only, so held-out
/// tokens exercise the UNK path.
inline Vocabulary build_train_vocabulary(const std::vector<VideoRecord>& records,
                                         int min_count = 2) {
    std::vector<std::vector<std::string>> caps;
    for (const auto& r : records)
        if (r.split == "train")
            for (const auto& c : r.captions) caps.push_back(c);
    return Vocabulary::build(caps, min_count);
}

/// Caption window: longest caption plus the start/end tokens, capped at
/// max_len (longer captions get truncated at encode time).
inline std::size_t batch_caption_len(const std::vector<const VideoRecord*>& records,
                                     std::size_t max_len) {
    std::size_t longest = 0;
    for (const VideoRecord* r : records)
        for (const auto& cap : r->captions) longest = std::max(longest, cap.size());
    return std::min(longest + 2, max_len);
}

template <typename S>
struct StepLoss {
    Tensor<S> overall;
    LossReport report;
};

/// One forward pass through every enabled branch. Weighted terms join the
/// graph only when their weight is nonzero; the support caption loss is
/// always evaluated when the branch is on so reports stay comparable across
/// rows. The unrolling RNG is consumed in a fixed order: original branch
/// first, then support.
template <typename S>
StepLoss<S> compute_step_loss(const ModelParams<S>& params, const Batch<S>& batch,
                              const TrainConfig& cfg, std::mt19937& rng) {
    const bool with_text = cfg.support.enabled || cfg.lambda1 > 0.0;
    EncodedBatch<S> enc = encode_batch(params, batch, true, cfg.support, with_text);
    DecoderParams<S> dp = decoder_params(params);

    DecoderContext<S> ctx_ori = prepare_context(dp, enc.vo_mid, enc.vo_pooled);
    Tensor<S> logits_ori = teacher_forced_decode(dp, ctx_ori, batch.captions, batch.batch_size,
                                                 batch.caption_len, cfg.tel_prob, rng);
    Tensor<S> l_ori = caption_cross_entropy(logits_ori, batch.captions, batch.batch_size,
                                            batch.caption_len, Vocabulary::kPad);
    StepLoss<S> out;
    out.report.l_ori_cap = static_cast<double>(l_ori.item());
    Tensor<S> overall = l_ori;

    if (cfg.support.enabled) {
        DecoderContext<S> ctx_sup = prepare_context(dp, *enc.vs_mid, *enc.vs_pooled);
        Tensor<S> logits_sup = teacher_forced_decode(dp, ctx_sup, batch.captions, batch.batch_size,
                                                     batch.caption_len, cfg.tel_prob, rng);
        Tensor<S> l_sup = caption_cross_entropy(logits_sup, batch.captions, batch.batch_size,
                                                batch.caption_len, Vocabulary::kPad);
        out.report.l_sup_cap = static_cast<double>(l_sup.item());
        if (cfg.lambda3 > 0.0) overall = add(overall, scale(l_sup, static_cast<S>(cfg.lambda3)));
    }
    if (cfg.lambda1 > 0.0) {
        Tensor<S> sim = cosine_similarity_matrix(enc.vo_pooled, enc.t_gt);
        Tensor<S> l_inter = triplet_loss_hardest(sim, static_cast<S>(cfg.sst.alpha));
        out.report.l_inter = static_cast<double>(l_inter.item());
        overall = add(overall, scale(l_inter, static_cast<S>(cfg.lambda1)));
    }
    if (cfg.lambda2 > 0.0) {
        Tensor<S> l_intra = contrastive_loss(enc.vo_pooled, *enc.vs_pooled,
                                             static_cast<S>(cfg.sst.m),
                                             static_cast<S>(cfg.sst.y_signal));
        out.report.l_intra = static_cast<double>(l_intra.item());
        overall = add(overall, scale(l_intra, static_cast<S>(cfg.lambda2)));
    }
    out.report.l_overall = static_cast<double>(overall.item());
    out.overall = overall;
    return out;
}

struct EpochResult {
    std::vector<LossReport> steps;
    std::vector<std::string> log_lines;
};

/// One pass over the shuffled training split. The epoch RNG (derived from
/// seed and epoch index) drives the shuffle first, then the unrolling
/// draws, so a run resumed at an epoch boundary replays identically. The
/// last partial minibatch is kept. Captions rotate with the epoch index.
template <typename S>
EpochResult train_epoch(const std::vector<const VideoRecord*>& train_records,
                        const Vocabulary& vocab, ModelParams<S>& params, AdamState<S>& opt,
                        const TrainConfig& cfg, std::uint64_t epoch) {
    cfg.validate();
    if (train_records.empty()) throw ContractError("train_epoch: empty training split");
    std::mt19937 rng(detail::epoch_seed(cfg.seed, epoch));
    std::vector<std::size_t> order(train_records.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t cap_len = batch_caption_len(train_records, cfg.dims.max_len);
    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);

    EpochResult out;
    std::size_t step = 0;
    for (std::size_t start = 0; start < order.size(); start += bs, ++step) {
        std::vector<const VideoRecord*> recs;
        for (std::size_t i = start; i < std::min(start + bs, order.size()); ++i)
            recs.push_back(train_records[order[i]]);
        Batch<S> batch = make_batch<S>(recs, vocab, cap_len, static_cast<std::size_t>(epoch));
        params.zero_grad();
        Tape<S> tape;
        LossReport rep;
        {
            typename Tape<S>::Scope scope(tape);
            StepLoss<S> sl = compute_step_loss(params, batch, cfg, rng);
            rep = sl.report;
            if (!std::isfinite(rep.l_overall) || !std::isfinite(rep.l_ori_cap) ||
                !std::isfinite(rep.l_sup_cap) || !std::isfinite(rep.l_inter) ||
                !std::isfinite(rep.l_intra)) {
                char buf[200];
                std::snprintf(buf, sizeof(buf),
                              "train step %zu: non-finite loss (ori=%g sup=%g inter=%g intra=%g)",
                              step, rep.l_ori_cap, rep.l_sup_cap, rep.l_inter, rep.l_intra);
                throw EvaluationError(buf);
            }
            tape.backward(sl.overall);
        }
        if (cfg.grad_clip > 0.0) clip_global_norm(params, cfg.grad_clip);
        adam_step(params, opt, static_cast<S>(cfg.lr));
        out.steps.push_back(rep);
        out.log_lines.push_back(detail::format_step_line(epoch, step, rep));
    }
    return out;
}

template <typename S>
struct EvalResult {
    MetricReport metrics;
    std::vector<std::string> video_ids;
    std::vector<TokenSeq> hypotheses;
};

/// Beam-decodes one split and scores it against all reference captions.
/// Pure inference: no text encoding, no support construction, records
/// visited in file order (sorted by id).
template <typename S>
EvalResult<S> evaluate(const ModelParams<S>& params, const std::vector<VideoRecord>& records,
                       const std::string& split, const Vocabulary& vocab, const ModelDims& dims,
                       std::size_t beam_size, bool length_normalize = false) {
    DecoderParams<S> dp = decoder_params(params);
    EvalResult<S> out;
    std::vector<std::vector<TokenSeq>> refs;
    for (const VideoRecord& rec : records) {
        if (rec.split != split) continue;
        Tensor<S> feats = video_tensor<S>(rec);
        Tensor<S> v_mid = encode_video(feats, params.at("enc.w"), params.at("enc.b"));
        Tensor<S> pooled = pool_temporal(v_mid);
        SingleVideoStepModel<S> step_model(dp, prepare_context(dp, v_mid, pooled));
        auto beams = beam_search(step_model, beam_size, dims.max_len, Vocabulary::kBos,
                                 Vocabulary::kEos, length_normalize);
        out.hypotheses.push_back(vocab.decode(beams.front().tokens));
        out.video_ids.push_back(rec.video_id);
        refs.push_back(rec.captions);
    }
    if (out.hypotheses.empty())
        throw ContractError("evaluate: split '" + split + "' is empty");
    out.metrics = score_corpus(out.hypotheses, refs);
    return out;
}

template <typename S>
struct TrainResult {
    ModelParams<S> params;  // state after the last epoch
    AdamState<S> opt;
    ModelParams<S> best_params;  // deep copy of the best validation epoch
    std::uint64_t best_epoch = 0;
    double best_val_bleu = -1.0;
    std::vector<LossReport> steps;
    std::vector<std::string> log_lines;
};

/// Runs epochs [start_epoch, cfg.epochs), adopting the given parameter and
/// optimizer state (resume path). Epoch-end selection scores the validation
/// split with greedy decoding; without a validation split the last epoch
/// wins by default.
template <typename S>
TrainResult<S> continue_training(const std::vector<VideoRecord>& records, const Vocabulary& vocab,
                                 const TrainConfig& cfg, ModelParams<S> params, AdamState<S> opt,
                                 std::uint64_t start_epoch) {
    cfg.validate();
    if (cfg.dims.vocab != static_cast<std::size_t>(vocab.size()))
        throw ContractError("continue_training: dims.vocab does not match the vocabulary");
    check_checkpoint_dims(params, cfg.dims);
    if (start_epoch > static_cast<std::uint64_t>(cfg.epochs))
        throw ContractError("continue_training: start epoch past the configured epoch count");
    const auto train_recs = split_of(records, "train");
    const bool have_val = !split_of(records, "val").empty();

    TrainResult<S> out;
    out.best_params = params.clone();
    for (std::uint64_t epoch = start_epoch; epoch < static_cast<std::uint64_t>(cfg.epochs); ++epoch) {
        EpochResult er = train_epoch(train_recs, vocab, params, opt, cfg, epoch);
        out.steps.insert(out.steps.end(), er.steps.begin(), er.steps.end());
        out.log_lines.insert(out.log_lines.end(), er.log_lines.begin(), er.log_lines.end());
        double val_bleu = -1.0;
        if (have_val) {
            val_bleu = evaluate(params, records, "val", vocab, cfg.dims, 1).metrics.bleu.score;
            char buf[96];
            std::snprintf(buf, sizeof(buf), "epoch %llu val_bleu %.9e",
                          static_cast<unsigned long long>(epoch), val_bleu);
            out.log_lines.push_back(buf);
        }
        if (val_bleu > out.best_val_bleu || !have_val) {
            out.best_val_bleu = val_bleu;
            out.best_epoch = epoch;
            out.best_params = params.clone();
        }
    }
    out.params = std::move(params);
    out.opt = std::move(opt);
    return out;
}

/// Fresh training run: seeded parameter init, zeroed Adam state, all epochs.
template <typename S>
TrainResult<S> train_model(const std::vector<VideoRecord>& records, const Vocabulary& vocab,
                           TrainConfig cfg) {
    cfg.dims.vocab = static_cast<std::size_t>(vocab.size());
    cfg.validate();
    cfg.dims.validate();
    ModelParams<S> params = init_model_params<S>(cfg.dims, cfg.seed);
    AdamState<S> opt = AdamState<S>::init(params);
    return continue_training(records, vocab, cfg, std::move(params), std::move(opt), 0);
}

struct AblationRow {
    std::string label;
    double lambda1 = 0.0, lambda2 = 0.0, lambda3 = 0.0;
    bool support_enabled = false;
    LossReport last_epoch;  // mean over the final epoch's steps
    double val_bleu4 = 0.0;
    std::uint64_t compute_weights_calls = 0;
    std::uint64_t initial_params_hash = 0;
};

namespace detail {

inline LossReport mean_reports(const std::vector<LossReport>& reports, std::size_t tail) {
    LossReport m;
    if (reports.empty() || tail == 0) return m;
    const std::size_t from = reports.size() > tail ? reports.size() - tail : 0;
    const std::size_t n = reports.size() - from;
    for (std::size_t i = from; i < reports.size(); ++i) {
        m.l_ori_cap += reports[i].l_ori_cap;
        m.l_sup_cap += reports[i].l_sup_cap;
        m.l_inter += reports[i].l_inter;
        m.l_intra += reports[i].l_intra;
        m.l_overall += reports[i].l_overall;
    }
    m.l_ori_cap /= n;
    m.l_sup_cap /= n;
    m.l_inter /= n;
    m.l_intra /= n;
    m.l_overall /= n;
    return m;
}

inline double lambda_or(double base, double fallback) { return base > 0.0 ? base : fallback; }

}  // namespace detail

/// The five-row loss-combination grid: caption loss only, plus the support
/// caption loss, plus each auxiliary term, then everything. All rows share
/// the base seed so they start from identical parameters.
template <typename S>
std::vector<AblationRow> run_ablation(const std::vector<VideoRecord>& records,
                                      const Vocabulary& vocab, const TrainConfig& base) {
    const double l1 = detail::lambda_or(base.lambda1, 1.0);
    const double l2 = detail::lambda_or(base.lambda2, 1.0);
    const double l3 = detail::lambda_or(base.lambda3, 1.0);
    struct RowCfg {
        const char* label;
        double lambda1, lambda2, lambda3;
        bool support;
    };
    const RowCfg rows[] = {
        {"ori_cap", 0.0, 0.0, 0.0, false},
        {"sup_cap", 0.0, 0.0, l3, true},
        {"sup_cap+inter", l1, 0.0, l3, true},
        {"sup_cap+intra", 0.0, l2, l3, true},
        {"full", l1, l2, l3, true},
    };
    std::vector<AblationRow> out;
    const std::size_t steps_per_epoch =
        (split_of(records, "train").size() + static_cast<std::size_t>(base.batch_size) - 1) /
        static_cast<std::size_t>(base.batch_size);
    for (const RowCfg& rc : rows) {
        TrainConfig cfg = base;
        cfg.lambda1 = rc.lambda1;
        cfg.lambda2 = rc.lambda2;
        cfg.lambda3 = rc.lambda3;
        cfg.support.enabled = rc.support;
        Counters::global().reset();
        const std::uint64_t hash0 =
            params_hash(init_model_params<S>(dims_with_vocab(cfg.dims, vocab), cfg.seed));
        TrainResult<S> tr = train_model<S>(records, vocab, cfg);
        AblationRow row;
        row.label = rc.label;
        row.lambda1 = rc.lambda1;
        row.lambda2 = rc.lambda2;
        row.lambda3 = rc.lambda3;
        row.support_enabled = rc.support;
        row.last_epoch = detail::mean_reports(tr.steps, steps_per_epoch);
        row.compute_weights_calls = Counters::global().compute_weights_calls;
        row.initial_params_hash = hash0;
        row.val_bleu4 = evaluate(tr.params, records, "val", vocab, dims_with_vocab(cfg.dims, vocab),
                                 static_cast<std::size_t>(cfg.beam_size))
                            .metrics.bleu.score;
        out.push_back(std::move(row));
    }
    return out;
}

struct SweepRow {
    double y = 0.0;
    LossReport last_epoch;
    double val_bleu4 = 0.0;
};

/// One full training per control-signal value; everything else fixed.
template <typename S>
std::vector<SweepRow> sweep_y(const std::vector<VideoRecord>& records, const Vocabulary& vocab,
                              const TrainConfig& base,
                              const std::vector<double>& y_values = {0.0, 0.2, 0.5, 0.8, 1.0}) {
    if (!base.support.enabled || base.lambda2 <= 0.0)
        throw ContractError("sweep_y: needs the support branch and a nonzero lambda2");
    std::vector<SweepRow> out;
    const std::size_t steps_per_epoch =
        (split_of(records, "train").size() + static_cast<std::size_t>(base.batch_size) - 1) /
        static_cast<std::size_t>(base.batch_size);
    for (double y : y_values) {
        TrainConfig cfg = base;
        cfg.sst.y_signal = y;
        TrainResult<S> tr = train_model<S>(records, vocab, cfg);
        SweepRow row;
        row.y = y;
        row.last_epoch = detail::mean_reports(tr.steps, steps_per_epoch);
        row.val_bleu4 = evaluate(tr.params, records, "val", vocab, dims_with_vocab(cfg.dims, vocab),
                                 static_cast<std::size_t>(cfg.beam_size))
                            .metrics.bleu.score;
        out.push_back(row);
    }
    return out;
}

}  // namespace smre

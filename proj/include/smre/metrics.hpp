#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "smre/errors.hpp"

namespace smre {

using TokenSeq = std::vector<std::string>;

namespace detail {

inline void check_corpus(const std::vector<TokenSeq>& hyps,
                         const std::vector<std::vector<TokenSeq>>& refs, const char* what) {
    if (hyps.empty()) throw ContractError(std::string(what) + ": empty corpus");
    if (hyps.size() != refs.size())
        throw ContractError(std::string(what) + ": " + std::to_string(hyps.size()) +
                            " hypotheses vs " + std::to_string(refs.size()) + " reference sets");
    for (std::size_t i = 0; i < refs.size(); ++i)
        if (refs[i].empty())
            throw ContractError(std::string(what) + ": sample " + std::to_string(i) +
                                " has no references");
}

/// N-gram multiset keyed by tokens joined on an unprintable separator.
inline std::map<std::string, std::size_t> ngram_counts(const TokenSeq& toks, std::size_t n) {
    std::map<std::string, std::size_t> out;
    if (toks.size() < n) return out;
    for (std::size_t i = 0; i + n <= toks.size(); ++i) {
        std::string key = toks[i];
        for (std::size_t j = 1; j < n; ++j) {
            key.push_back('\x1f');
            key += toks[i + j];
        }
        out[key] += 1;
    }
    return out;
}

inline std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b) {
    if (a.empty() || b.empty()) return 0;
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            if (a[i - 1] == b[j - 1])
                cur[j] = prev[j - 1] + 1;
            else
                cur[j] = std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace detail

struct BleuReport {
    double score = 0.0;
    std::array<double, 4> precisions{0, 0, 0, 0};
    double brevity_penalty = 0.0;
    std::size_t hyp_len = 0;
    std::size_t ref_len = 0;
    bool smoothed = false;  // true when a zero match count was floored
};

/// Corpus-level 4-gram precision score with uniform weights. Matched counts
/// are clipped per reference, the brevity penalty uses the closest reference
/// length (ties to the shorter), and zero match counts are floored at 1e-9
/// with the report flagged.
inline BleuReport bleu4(const std::vector<TokenSeq>& hyps,
                        const std::vector<std::vector<TokenSeq>>& refs) {
    detail::check_corpus(hyps, refs, "bleu4");
    constexpr double kFloor = 1e-9;
    BleuReport rep;
    std::array<std::size_t, 4> matched{0, 0, 0, 0}, total{0, 0, 0, 0};
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        const TokenSeq& hyp = hyps[i];
        rep.hyp_len += hyp.size();
        std::size_t best_ref = refs[i][0].size();
        for (const TokenSeq& r : refs[i]) {
            const auto diff = [&](std::size_t L) {
                return L > hyp.size() ? L - hyp.size() : hyp.size() - L;
            };
            if (diff(r.size()) < diff(best_ref) || (diff(r.size()) == diff(best_ref) && r.size() < best_ref))
                best_ref = r.size();
        }
        rep.ref_len += best_ref;
        for (std::size_t n = 1; n <= 4; ++n) {
            auto hc = detail::ngram_counts(hyp, n);
            std::map<std::string, std::size_t> cap;
            for (const TokenSeq& r : refs[i])
                for (const auto& [g, c] : detail::ngram_counts(r, n))
                    cap[g] = std::max(cap[g], c);
            for (const auto& [g, c] : hc) {
                total[n - 1] += c;
                auto it = cap.find(g);
                if (it != cap.end()) matched[n - 1] += std::min(c, it->second);
            }
        }
    }
    if (rep.hyp_len == 0) return rep;
    double log_sum = 0.0;
    for (std::size_t n = 0; n < 4; ++n) {
        double p;
        if (total[n] == 0 || matched[n] == 0) {
            p = kFloor;
            rep.smoothed = true;
        } else {
            p = static_cast<double>(matched[n]) / static_cast<double>(total[n]);
        }
        rep.precisions[n] = p;
        log_sum += 0.25 * std::log(p);
    }
    rep.brevity_penalty =
        rep.hyp_len >= rep.ref_len
            ? 1.0
            : std::exp(1.0 - static_cast<double>(rep.ref_len) / static_cast<double>(rep.hyp_len));
    rep.score = rep.brevity_penalty * std::exp(log_sum);
    return rep;
}

/// Longest-common-subsequence F measure with beta = 1.2, best reference per
/// sample, averaged over the corpus.
inline double rouge_l(const std::vector<TokenSeq>& hyps,
                      const std::vector<std::vector<TokenSeq>>& refs) {
    detail::check_corpus(hyps, refs, "rouge_l");
    constexpr double kBeta = 1.2;
    double sum = 0.0;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        double best = 0.0;
        for (const TokenSeq& r : refs[i]) {
            const std::size_t l = detail::lcs_length(hyps[i], r);
            if (l == 0 || hyps[i].empty() || r.empty()) continue;
            const double rec = static_cast<double>(l) / static_cast<double>(r.size());
            const double prec = static_cast<double>(l) / static_cast<double>(hyps[i].size());
            const double denom = rec + kBeta * kBeta * prec;
            if (denom > 0.0) best = std::max(best, (1.0 + kBeta * kBeta) * rec * prec / denom);
        }
        sum += best;
    }
    return sum / static_cast<double>(hyps.size());
}

/// Consensus score: tf-idf vectors over 1..4-grams, cosine against each
/// reference, averaged over orders and references, scaled by 10. Document
/// frequency counts reference sets containing the n-gram; idf is
/// log(N / max(df, 1)) so n-grams outside the reference corpus still weigh
/// down the hypothesis norm.
inline double cider(const std::vector<TokenSeq>& hyps,
                    const std::vector<std::vector<TokenSeq>>& refs) {
    detail::check_corpus(hyps, refs, "cider");
    const std::size_t n_videos = refs.size();
    std::array<std::map<std::string, std::size_t>, 4> df;
    for (const auto& rset : refs)
        for (std::size_t n = 1; n <= 4; ++n) {
            std::map<std::string, std::size_t> seen;
            for (const TokenSeq& r : rset)
                for (const auto& gc : detail::ngram_counts(r, n)) seen[gc.first] = 1;
            for (const auto& gc : seen) df[n - 1][gc.first] += 1;
        }
    auto idf = [&](std::size_t n, const std::string& g) {
        auto it = df[n - 1].find(g);
        const double d = it == df[n - 1].end() ? 1.0 : static_cast<double>(std::max<std::size_t>(it->second, 1));
        return std::log(static_cast<double>(n_videos) / d);
    };
    double corpus = 0.0;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        double video = 0.0;
        for (const TokenSeq& r : refs[i]) {
            double over_n = 0.0;
            for (std::size_t n = 1; n <= 4; ++n) {
                auto hc = detail::ngram_counts(hyps[i], n);
                auto rc = detail::ngram_counts(r, n);
                double dot = 0.0, nh = 0.0, nr = 0.0;
                for (const auto& [g, c] : hc) {
                    const double w = static_cast<double>(c) * idf(n, g);
                    nh += w * w;
                    auto it = rc.find(g);
                    if (it != rc.end()) dot += w * static_cast<double>(it->second) * idf(n, g);
                }
                for (const auto& [g, c] : rc) {
                    const double w = static_cast<double>(c) * idf(n, g);
                    nr += w * w;
                }
                if (nh > 0.0 && nr > 0.0) over_n += dot / (std::sqrt(nh) * std::sqrt(nr));
            }
            video += over_n / 4.0;
        }
        corpus += video / static_cast<double>(refs[i].size());
    }
    return 10.0 * corpus / static_cast<double>(n_videos);
}

struct MetricReport {
    BleuReport bleu;
    double rouge_l = 0.0;
    double cider = 0.0;
    // METEOR needs external linguistic resources; reported as unavailable.
    bool meteor_available = false;

    std::string to_string() const {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "BLEU-4 %.4f  ROUGE-L %.4f  CIDEr %.4f  METEOR n/a",
                      bleu.score, rouge_l, cider);
        return buf;
    }
};

inline MetricReport score_corpus(const std::vector<TokenSeq>& hyps,
                                 const std::vector<std::vector<TokenSeq>>& refs) {
    MetricReport rep;
    rep.bleu = bleu4(hyps, refs);
    rep.rouge_l = rouge_l(hyps, refs);
    rep.cider = cider(hyps, refs);
    return rep;
}

}  // namespace smre

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "smre/params.hpp"

namespace smre {

/// Adam moment buffers, aligned index-for-index with a ModelParams collection.
template <typename S>
struct AdamState {
    std::vector<std::vector<S>> m;
    std::vector<std::vector<S>> v;
    std::int64_t step = 0;

    static AdamState init(const ModelParams<S>& params) {
        AdamState st;
        for (const auto& [name, t] : params.items()) {
            st.m.emplace_back(t.size(), S(0));
            st.v.emplace_back(t.size(), S(0));
        }
        return st;
    }

    void check_matches(const ModelParams<S>& params) const {
        if (m.size() != params.count() || v.size() != params.count())
            throw ContractError("optimizer state has " + std::to_string(m.size()) +
                                " slots for " + std::to_string(params.count()) + " parameters");
        for (std::size_t i = 0; i < m.size(); ++i)
            if (m[i].size() != params.items()[i].second.size() ||
                v[i].size() != params.items()[i].second.size())
                throw ContractError("optimizer state shape mismatch for parameter " +
                                    params.items()[i].first);
    }
};

/// One Adam update with bias correction; empty grad buffers count as zero.
template <typename S>
void adam_step(ModelParams<S>& params, AdamState<S>& state, S lr, S beta1 = S(0.9),
               S beta2 = S(0.999), S eps = S(1e-8)) {
    if (!(lr >= S(0))) throw ContractError("adam_step: lr must be >= 0");
    state.check_matches(params);
    state.step += 1;
    const S bc1 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta1), static_cast<double>(state.step)));
    const S bc2 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta2), static_cast<double>(state.step)));
    for (std::size_t p = 0; p < params.count(); ++p) {
        Tensor<S>& t = params.items()[p].second;
        const auto& g = t.grad();
        if (g.empty()) continue;  // zero gradient, parameter unchanged
        auto& m = state.m[p];
        auto& v = state.v[p];
        S* w = t.mutable_data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            m[i] = beta1 * m[i] + (S(1) - beta1) * g[i];
            v[i] = beta2 * v[i] + (S(1) - beta2) * g[i] * g[i];
            const S mhat = m[i] / bc1;
            const S vhat = v[i] / bc2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

/// Scales all gradients so their global L2 norm is at most max_norm.
/// Returns the pre-clip norm.
template <typename S>
double clip_global_norm(ModelParams<S>& params, double max_norm) {
    double sq = 0.0;
    for (const auto& [name, t] : params.items())
        for (S g : t.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const S factor = static_cast<S>(max_norm / norm);
        for (auto& [name, t] : params.items())
            for (S& v : t.mutable_grad()) v *= factor;
    }
    return norm;
}

}  // namespace smre

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "smre/tensor.hpp"

namespace smre {

/// x[N,H] + b[H], broadcast over rows.
template <typename S>
Tensor<S> add_rowwise(const Tensor<S>& x, const Tensor<S>& b) {
    if (x.rank() != 2 || b.rank() != 1 || b.dim(0) != x.dim(1))
        throw DimensionError("add_rowwise: " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
    const std::size_t n = x.dim(0), h = x.dim(1);
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    S* o = out.mutable_data();
    const S* px = x.data();
    const S* pb = b.data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < h; ++j) o[i * h + j] = px[i * h + j] + pb[j];
    detail::record_if_needed(x.requires_grad() || b.requires_grad(), out, [x, b, out, n, h]() mutable {
        const auto& g = out.grad();
        if (g.empty()) return;
        if (x.requires_grad()) x.accumulate_grad(g.data(), g.size());
        if (b.requires_grad()) {
            std::vector<S> db(h, S(0));
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < h; ++j) db[j] += g[i * h + j];
            b.accumulate_grad(db.data(), db.size());
        }
    });
    return out;
}

/// Row-wise softmax(scale * x) over the last dimension, with max-subtraction.
template <typename S>
Tensor<S> softmax_lastdim(const Tensor<S>& x, S scale_factor = S(1)) {
    if (x.rank() == 0) throw DimensionError("softmax_lastdim on rank-0 tensor");
    if (!std::isfinite(static_cast<double>(scale_factor)))
        throw ContractError("softmax scale must be finite");
    const std::size_t n = x.dim(x.rank() - 1);
    const std::size_t rows = x.size() / n;
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    S* o = out.mutable_data();
    const S* px = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const S* row = px + r * n;
        S m = row[0] * scale_factor;
        for (std::size_t j = 1; j < n; ++j) m = std::max(m, row[j] * scale_factor);
        S denom = S(0);
        for (std::size_t j = 0; j < n; ++j) {
            S e = std::exp(row[j] * scale_factor - m);
            o[r * n + j] = e;
            denom += e;
        }
        for (std::size_t j = 0; j < n; ++j) o[r * n + j] /= denom;
    }
    detail::record_if_needed(x.requires_grad(), out, [x, out, rows, n, scale_factor]() mutable {
        const auto& g = out.grad();
        if (g.empty()) return;
        std::vector<S> dx(x.size());
        const S* y = out.data();
        for (std::size_t r = 0; r < rows; ++r) {
            S dot = S(0);
            for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
            for (std::size_t j = 0; j < n; ++j)
                dx[r * n + j] = scale_factor * y[r * n + j] * (g[r * n + j] - dot);
        }
        x.accumulate_grad(dx.data(), dx.size());
    });
    return out;
}

namespace detail {

template <typename S>
std::vector<S> row_norms_checked(const Tensor<S>& x, const char* which, S eps) {
    const std::size_t b = x.dim(0), d = x.dim(1);
    std::vector<S> norms(b);
    for (std::size_t i = 0; i < b; ++i) {
        S acc = S(0);
        for (std::size_t c = 0; c < d; ++c) acc += x.data()[i * d + c] * x.data()[i * d + c];
        norms[i] = std::sqrt(acc);
        if (!(norms[i] >= eps))
            throw DegenerateInputError(std::string("zero-norm row ") + std::to_string(i) + " in " + which);
    }
    return norms;
}

}  // namespace detail

inline constexpr double kNormEpsilon = 1e-12;

/// out[i,j] = cosine of a's row i and b's row j. Entries lie in [-1, 1].
template <typename S>
Tensor<S> cosine_similarity_matrix(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
        throw DimensionError("cosine_similarity_matrix: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    const std::size_t ba = a.dim(0), bb = b.dim(0), d = a.dim(1);
    const S eps = static_cast<S>(kNormEpsilon);
    std::vector<S> na = detail::row_norms_checked(a, "first argument", eps);
    std::vector<S> nb = detail::row_norms_checked(b, "second argument", eps);
    Tensor<S> out = Tensor<S>::zeros({ba, bb});
    S* o = out.mutable_data();
    for (std::size_t i = 0; i < ba; ++i)
        for (std::size_t j = 0; j < bb; ++j) {
            S dot = S(0);
            for (std::size_t c = 0; c < d; ++c) dot += a.data()[i * d + c] * b.data()[j * d + c];
            o[i * bb + j] = dot / (na[i] * nb[j]);
        }
    detail::record_if_needed(a.requires_grad() || b.requires_grad(), out,
                             [a, b, out, ba, bb, d, na, nb]() mutable {
        const auto& g = out.grad();
        if (g.empty()) return;
        const S* s = out.data();
        if (a.requires_grad()) {
            std::vector<S> da(ba * d, S(0));
            for (std::size_t i = 0; i < ba; ++i)
                for (std::size_t j = 0; j < bb; ++j) {
                    const S gij = g[i * bb + j];
                    if (gij == S(0)) continue;
                    const S sij = s[i * bb + j];
                    for (std::size_t c = 0; c < d; ++c) {
                        const S bh = b.data()[j * d + c] / nb[j];
                        const S ah = a.data()[i * d + c] / na[i];
                        da[i * d + c] += gij * (bh - sij * ah) / na[i];
                    }
                }
            a.accumulate_grad(da.data(), da.size());
        }
        if (b.requires_grad()) {
            std::vector<S> db(bb * d, S(0));
            for (std::size_t i = 0; i < ba; ++i)
                for (std::size_t j = 0; j < bb; ++j) {
                    const S gij = g[i * bb + j];
                    if (gij == S(0)) continue;
                    const S sij = s[i * bb + j];
                    for (std::size_t c = 0; c < d; ++c) {
                        const S ah = a.data()[i * d + c] / na[i];
                        const S bh = b.data()[j * d + c] / nb[j];
                        db[j * d + c] += gij * (ah - sij * bh) / nb[j];
                    }
                }
            b.accumulate_grad(db.data(), db.size());
        }
    });
    return out;
}

/// out[i] = cosine of paired rows a[i], b[i].
template <typename S>
Tensor<S> cosine_pairs(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 2 || a.shape() != b.shape())
        throw DimensionError("cosine_pairs: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::size_t n = a.dim(0), d = a.dim(1);
    const S eps = static_cast<S>(kNormEpsilon);
    std::vector<S> na = detail::row_norms_checked(a, "first argument", eps);
    std::vector<S> nb = detail::row_norms_checked(b, "second argument", eps);
    Tensor<S> out = Tensor<S>::zeros({n});
    S* o = out.mutable_data();
    for (std::size_t i = 0; i < n; ++i) {
        S dot = S(0);
        for (std::size_t c = 0; c < d; ++c) dot += a.data()[i * d + c] * b.data()[i * d + c];
        o[i] = dot / (na[i] * nb[i]);
    }
    detail::record_if_needed(a.requires_grad() || b.requires_grad(), out,
                             [a, b, out, n, d, na, nb]() mutable {
        const auto& g = out.grad();
        if (g.empty()) return;
        const S* s = out.data();
        std::vector<S> buf(n * d, S(0));
        if (a.requires_grad()) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t c = 0; c < d; ++c) {
                    const S ah = a.data()[i * d + c] / na[i];
                    const S bh = b.data()[i * d + c] / nb[i];
                    buf[i * d + c] = g[i] * (bh - s[i] * ah) / na[i];
                }
            a.accumulate_grad(buf.data(), buf.size());
        }
        if (b.requires_grad()) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t c = 0; c < d; ++c) {
                    const S ah = a.data()[i * d + c] / na[i];
                    const S bh = b.data()[i * d + c] / nb[i];
                    buf[i * d + c] = g[i] * (ah - s[i] * bh) / nb[i];
                }
            b.accumulate_grad(buf.data(), buf.size());
        }
    });
    return out;
}

/// Picks entries x[rows[k], cols[k]] into a rank-1 tensor.
template <typename S>
Tensor<S> gather2d(const Tensor<S>& x, const std::vector<std::size_t>& rows,
                   const std::vector<std::size_t>& cols) {
    if (x.rank() != 2) throw DimensionError("gather2d expects a matrix, got " + shape_str(x.shape()));
    if (rows.size() != cols.size()) throw ContractError("gather2d: index lists differ in length");
    const std::size_t r = x.dim(0), c = x.dim(1), n = rows.size();
    if (n == 0) throw ContractError("gather2d: empty index list");
    for (std::size_t k = 0; k < n; ++k)
        if (rows[k] >= r || cols[k] >= c)
            throw ContractError("gather2d: index (" + std::to_string(rows[k]) + "," +
                                std::to_string(cols[k]) + ") outside " + shape_str(x.shape()));
    Tensor<S> out = Tensor<S>::zeros({n});
    for (std::size_t k = 0; k < n; ++k) out.mutable_data()[k] = x.data()[rows[k] * c + cols[k]];
    detail::record_if_needed(x.requires_grad(), out, [x, out, rows, cols, r, c]() mutable {
        const auto& g = out.grad();
        if (g.empty()) return;
        std::vector<S> dx(r * c, S(0));
        for (std::size_t k = 0; k < rows.size(); ++k) dx[rows[k] * c + cols[k]] += g[k];
        x.accumulate_grad(dx.data(), dx.size());
    });
    return out;
}

/// Concatenates matrices with equal row counts along the column axis.
template <typename S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& xs) {
    if (xs.empty()) throw ContractError("concat_cols: empty input list");
    const std::size_t n = xs[0].dim(0);
    std::size_t total = 0;
    bool needs_grad = false;
    for (const auto& x : xs) {
        if (x.rank() != 2 || x.dim(0) != n)
            throw DimensionError("concat_cols: incompatible shape " + shape_str(x.shape()));
        total += x.dim(1);
        needs_grad = needs_grad || x.requires_grad();
    }
    Tensor<S> out = Tensor<S>::zeros({n, total});
    S* o = out.mutable_data();
    std::size_t off = 0;
    for (const auto& x : xs) {
        const std::size_t d = x.dim(1);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) o[i * total + off + j] = x.data()[i * d + j];
        off += d;
    }
    detail::record_if_needed(needs_grad, out, [xs, out, n, total]() mutable {
        const auto& g = out.grad();
        if (g.empty()) return;
        std::size_t off = 0;
        for (auto& x : xs) {
            const std::size_t d = x.dim(1);
            if (x.requires_grad()) {
                std::vector<S> dx(n * d);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < d; ++j) dx[i * d + j] = g[i * total + off + j];
                x.accumulate_grad(dx.data(), dx.size());
            }
            off += d;
        }
    });
    return out;
}

/// Column range [lo, hi) of a matrix.
template <typename S>
Tensor<S> slice_cols(const Tensor<S>& x, std::size_t lo, std::size_t hi) {
    if (x.rank() != 2) throw DimensionError("slice_cols expects a matrix");
    const std::size_t n = x.dim(0), d = x.dim(1);
    if (lo >= hi || hi > d)
        throw ContractError("slice_cols: range [" + std::to_string(lo) + "," + std::to_string(hi) +
                            ") outside " + shape_str(x.shape()));
    const std::size_t w = hi - lo;
    Tensor<S> out = Tensor<S>::zeros({n, w});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < w; ++j) out.mutable_data()[i * w + j] = x.data()[i * d + lo + j];
    detail::record_if_needed(x.requires_grad(), out, [x, out, n, d, lo, w]() mutable {
        const auto& g = out.grad();
        if (g.empty()) return;
        std::vector<S> dx(n * d, S(0));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < w; ++j) dx[i * d + lo + j] = g[i * w + j];
        x.accumulate_grad(dx.data(), dx.size());
    });
    return out;
}

/// Row lookup: out[k,:] = table[ids[k],:]. Rows repeated in ids accumulate
/// their gradients.
template <typename S>
Tensor<S> embed_rows(const Tensor<S>& table, const std::vector<int>& ids) {
    if (table.rank() != 2) throw DimensionError("embed_rows expects a matrix table");
    const std::size_t v = table.dim(0), d = table.dim(1), n = ids.size();
    if (n == 0) throw ContractError("embed_rows: empty id list");
    for (int id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= v)
            throw ContractError("embed_rows: id " + std::to_string(id) + " outside table of " +
                                std::to_string(v) + " rows");
    Tensor<S> out = Tensor<S>::zeros({n, d});
    for (std::size_t k = 0; k < n; ++k) {
        const S* row = table.data() + static_cast<std::size_t>(ids[k]) * d;
        std::copy(row, row + d, out.mutable_data() + k * d);
    }
    detail::record_if_needed(table.requires_grad(), out, [table, out, ids, v, d]() mutable {
        const auto& g = out.grad();
        if (g.empty()) return;
        std::vector<S> dt(v * d, S(0));
        for (std::size_t k = 0; k < ids.size(); ++k)
            for (std::size_t j = 0; j < d; ++j) dt[static_cast<std::size_t>(ids[k]) * d + j] += g[k * d + j];
        table.accumulate_grad(dt.data(), dt.size());
    });
    return out;
}

/// Arithmetic mean over the clip axis: [B,T,d] -> [B,d].
template <typename S>
Tensor<S> pool_temporal(const Tensor<S>& x) {
    if (x.rank() != 3) throw DimensionError("pool_temporal expects [B,T,d], got " + shape_str(x.shape()));
    const std::size_t b = x.dim(0), t = x.dim(1), d = x.dim(2);
    Tensor<S> out = Tensor<S>::zeros({b, d});
    S* o = out.mutable_data();
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t k = 0; k < t; ++k)
            for (std::size_t c = 0; c < d; ++c) o[i * d + c] += x.data()[(i * t + k) * d + c];
    const S inv = S(1) / static_cast<S>(t);
    for (std::size_t i = 0; i < b * d; ++i) o[i] *= inv;
    detail::record_if_needed(x.requires_grad(), out, [x, out, b, t, d, inv]() mutable {
        const auto& g = out.grad();
        if (g.empty()) return;
        std::vector<S> dx(b * t * d);
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t k = 0; k < t; ++k)
                for (std::size_t c = 0; c < d; ++c) dx[(i * t + k) * d + c] = g[i * d + c] * inv;
        x.accumulate_grad(dx.data(), dx.size());
    });
    return out;
}

/// x[B,T,d] + y[B,d] broadcast over the time axis.
template <typename S>
Tensor<S> add_time_broadcast(const Tensor<S>& x, const Tensor<S>& y) {
    if (x.rank() != 3 || y.rank() != 2 || x.dim(0) != y.dim(0) || x.dim(2) != y.dim(1))
        throw DimensionError("add_time_broadcast: " + shape_str(x.shape()) + " + " + shape_str(y.shape()));
    const std::size_t b = x.dim(0), t = x.dim(1), d = x.dim(2);
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    S* o = out.mutable_data();
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t k = 0; k < t; ++k)
            for (std::size_t c = 0; c < d; ++c)
                o[(i * t + k) * d + c] = x.data()[(i * t + k) * d + c] + y.data()[i * d + c];
    detail::record_if_needed(x.requires_grad() || y.requires_grad(), out, [x, y, out, b, t, d]() mutable {
        const auto& g = out.grad();
        if (g.empty()) return;
        if (x.requires_grad()) x.accumulate_grad(g.data(), g.size());
        if (y.requires_grad()) {
            std::vector<S> dy(b * d, S(0));
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t k = 0; k < t; ++k)
                    for (std::size_t c = 0; c < d; ++c) dy[i * d + c] += g[(i * t + k) * d + c];
            y.accumulate_grad(dy.data(), dy.size());
        }
    });
    return out;
}

/// Attention readout: out[b,:] = sum_t w[b,t] * values[b,t,:].
template <typename S>
Tensor<S> attend(const Tensor<S>& values, const Tensor<S>& weights) {
    if (values.rank() != 3 || weights.rank() != 2 || values.dim(0) != weights.dim(0) ||
        values.dim(1) != weights.dim(1))
        throw DimensionError("attend: " + shape_str(values.shape()) + " with " +
                             shape_str(weights.shape()));
    const std::size_t b = values.dim(0), t = values.dim(1), d = values.dim(2);
    Tensor<S> out = Tensor<S>::zeros({b, d});
    S* o = out.mutable_data();
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t k = 0; k < t; ++k) {
            const S w = weights.data()[i * t + k];
            for (std::size_t c = 0; c < d; ++c) o[i * d + c] += w * values.data()[(i * t + k) * d + c];
        }
    detail::record_if_needed(values.requires_grad() || weights.requires_grad(), out,
                             [values, weights, out, b, t, d]() mutable {
        const auto& g = out.grad();
        if (g.empty()) return;
        if (values.requires_grad()) {
            std::vector<S> dv(b * t * d);
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t k = 0; k < t; ++k) {
                    const S w = weights.data()[i * t + k];
                    for (std::size_t c = 0; c < d; ++c) dv[(i * t + k) * d + c] = w * g[i * d + c];
                }
            values.accumulate_grad(dv.data(), dv.size());
        }
        if (weights.requires_grad()) {
            std::vector<S> dw(b * t, S(0));
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t k = 0; k < t; ++k) {
                    S acc = S(0);
                    for (std::size_t c = 0; c < d; ++c)
                        acc += values.data()[(i * t + k) * d + c] * g[i * d + c];
                    dw[i * t + k] = acc;
                }
            weights.accumulate_grad(dw.data(), dw.size());
        }
    });
    return out;
}

/// Mean over unmasked time positions: [B,L,d] with {0,1} mask [B,L] -> [B,d].
/// Rows whose mask is all zero are rejected.
template <typename S>
Tensor<S> masked_mean_time(const Tensor<S>& x, const std::vector<std::uint8_t>& mask) {
    if (x.rank() != 3) throw DimensionError("masked_mean_time expects [B,L,d]");
    const std::size_t b = x.dim(0), l = x.dim(1), d = x.dim(2);
    if (mask.size() != b * l) throw ContractError("masked_mean_time: mask length mismatch");
    std::vector<S> inv_count(b);
    for (std::size_t i = 0; i < b; ++i) {
        std::size_t c = 0;
        for (std::size_t k = 0; k < l; ++k) c += (mask[i * l + k] != 0);
        if (c == 0) throw DegenerateInputError("masked_mean_time: row " + std::to_string(i) +
                                               " has no unmasked positions");
        inv_count[i] = S(1) / static_cast<S>(c);
    }
    Tensor<S> out = Tensor<S>::zeros({b, d});
    S* o = out.mutable_data();
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t k = 0; k < l; ++k) {
            if (!mask[i * l + k]) continue;
            for (std::size_t c = 0; c < d; ++c) o[i * d + c] += x.data()[(i * l + k) * d + c];
        }
        for (std::size_t c = 0; c < d; ++c) o[i * d + c] *= inv_count[i];
    }
    detail::record_if_needed(x.requires_grad(), out, [x, out, mask, b, l, d, inv_count]() mutable {
        const auto& g = out.grad();
        if (g.empty()) return;
        std::vector<S> dx(b * l * d, S(0));
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t k = 0; k < l; ++k) {
                if (!mask[i * l + k]) continue;
                for (std::size_t c = 0; c < d; ++c)
                    dx[(i * l + k) * d + c] = g[i * d + c] * inv_count[i];
            }
        x.accumulate_grad(dx.data(), dx.size());
    });
    return out;
}

/// Stacks L step outputs [B,V] into [B,L,V].
template <typename S>
Tensor<S> stack_time(const std::vector<Tensor<S>>& steps) {
    if (steps.empty()) throw ContractError("stack_time: empty step list");
    const std::size_t b = steps[0].dim(0), v = steps[0].dim(1), l = steps.size();
    bool needs_grad = false;
    for (const auto& s : steps) {
        if (s.rank() != 2 || s.dim(0) != b || s.dim(1) != v)
            throw DimensionError("stack_time: incompatible step shape " + shape_str(s.shape()));
        needs_grad = needs_grad || s.requires_grad();
    }
    Tensor<S> out = Tensor<S>::zeros({b, l, v});
    S* o = out.mutable_data();
    for (std::size_t k = 0; k < l; ++k)
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < v; ++j) o[(i * l + k) * v + j] = steps[k].data()[i * v + j];
    detail::record_if_needed(needs_grad, out, [steps, out, b, l, v]() mutable {
        const auto& g = out.grad();
        if (g.empty()) return;
        std::vector<S> ds(b * v);
        for (std::size_t k = 0; k < l; ++k) {
            if (!steps[k].requires_grad()) continue;
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < v; ++j) ds[i * v + j] = g[(i * l + k) * v + j];
            steps[k].accumulate_grad(ds.data(), ds.size());
        }
    });
    return out;
}

/// Mean negative log-likelihood over unmasked rows of flattened logits.
/// logits may be [N,V] or [B,L,V]; targets/mask are flat over rows.
template <typename S>
Tensor<S> cross_entropy_masked(const Tensor<S>& logits, const std::vector<int>& targets,
                               const std::vector<std::uint8_t>& mask) {
    if (logits.rank() != 2 && logits.rank() != 3)
        throw DimensionError("cross_entropy_masked expects [N,V] or [B,L,V]");
    const std::size_t v = logits.dim(logits.rank() - 1);
    const std::size_t n = logits.size() / v;
    if (targets.size() != n || mask.size() != n)
        throw ContractError("cross_entropy_masked: targets/mask length " + std::to_string(targets.size()) +
                            "/" + std::to_string(mask.size()) + " vs " + std::to_string(n) + " rows");
    std::size_t count = 0;
    for (std::uint8_t m : mask) count += (m != 0);
    if (count == 0) throw DegenerateInputError("cross_entropy_masked: all positions masked");
    for (std::size_t r = 0; r < n; ++r)
        if (mask[r] && (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= v))
            throw ContractError("cross_entropy_masked: target " + std::to_string(targets[r]) +
                                " outside vocab of " + std::to_string(v));
    Tensor<S> out = Tensor<S>::zeros({1});
    S acc = S(0);
    const S* px = logits.data();
    for (std::size_t r = 0; r < n; ++r) {
        if (!mask[r]) continue;
        const S* row = px + r * v;
        S m = row[0];
        for (std::size_t j = 1; j < v; ++j) m = std::max(m, row[j]);
        S denom = S(0);
        for (std::size_t j = 0; j < v; ++j) denom += std::exp(row[j] - m);
        acc += (m + std::log(denom)) - row[static_cast<std::size_t>(targets[r])];
    }
    out.mutable_data()[0] = acc / static_cast<S>(count);
    detail::record_if_needed(logits.requires_grad(), out, [logits, out, targets, mask, n, v, count]() mutable {
        const auto& g = out.grad();
        if (g.empty()) return;
        const S gup = g[0] / static_cast<S>(count);
        std::vector<S> dx(n * v, S(0));
        const S* px = logits.data();
        for (std::size_t r = 0; r < n; ++r) {
            if (!mask[r]) continue;
            const S* row = px + r * v;
            S m = row[0];
            for (std::size_t j = 1; j < v; ++j) m = std::max(m, row[j]);
            S denom = S(0);
            for (std::size_t j = 0; j < v; ++j) denom += std::exp(row[j] - m);
            for (std::size_t j = 0; j < v; ++j) dx[r * v + j] = gup * std::exp(row[j] - m) / denom;
            dx[r * v + static_cast<std::size_t>(targets[r])] -= gup;
        }
        logits.accumulate_grad(dx.data(), dx.size());
    });
    return out;
}

}  // namespace smre

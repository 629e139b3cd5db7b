#pragma once

// Differentiable operations over TensorT. Every op returns a new node wired
// into the autograd graph; backward closures accumulate into parent grads.
// Arithmetic runs in double internally and is cast to the storage type on
// write, so float tensors still see well-conditioned reductions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "apa/nn/tensor.hpp"

namespace apa::nn {

namespace detail {

template <class T>
void require_rank2(const TensorPtr<T>& x, const char* op) {
    if (x->shape.size() != 2)
        throw Error(std::string(op) + ": expected a rank-2 tensor, got shape " +
                    shape_str(x->shape));
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw Error(msg);
}

}  // namespace detail

// ---------------------------------------------------------------- matmul --

template <class T>
TensorPtr<T> matmul(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    detail::require_rank2(a, "matmul");
    detail::require_rank2(b, "matmul");
    const int n = a->shape[0], k = a->shape[1], k2 = b->shape[0], m = b->shape[1];
    if (k != k2)
        throw Error("matmul: inner dimensions differ, " + shape_str(a->shape) + " x " +
                    shape_str(b->shape));
    auto out = make_tensor<T>({n, m});
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) {
            double acc = 0;
            for (int t = 0; t < k; ++t)
                acc += static_cast<double>(a->data[i * k + t]) *
                       static_cast<double>(b->data[t * m + j]);
            out->data[i * m + j] = static_cast<T>(acc);
        }
    }
    TensorT<T>*ap = a.get(), *bp = b.get(), *op = out.get();
    wire(out, {a, b}, [ap, bp, op, n, k, m] {
        if (ap->requires_grad) {
            for (int i = 0; i < n; ++i)
                for (int t = 0; t < k; ++t) {
                    double acc = 0;
                    for (int j = 0; j < m; ++j)
                        acc += static_cast<double>(op->grad[i * m + j]) *
                               static_cast<double>(bp->data[t * m + j]);
                    ap->grad[i * k + t] += static_cast<T>(acc);
                }
        }
        if (bp->requires_grad) {
            for (int t = 0; t < k; ++t)
                for (int j = 0; j < m; ++j) {
                    double acc = 0;
                    for (int i = 0; i < n; ++i)
                        acc += static_cast<double>(ap->data[i * k + t]) *
                               static_cast<double>(op->grad[i * m + j]);
                    bp->grad[t * m + j] += static_cast<T>(acc);
                }
        }
    });
    return out;
}

// ------------------------------------------------------------------- add --
// b may share a's shape, be a rank-1 [cols] row bias, or be a scalar [1].

template <class T>
TensorPtr<T> add(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    const bool same = a->shape == b->shape;
    const bool row_bias = a->shape.size() == 2 && b->shape.size() == 1 &&
                          b->shape[0] == a->shape[1];
    const bool scalar = b->numel() == 1 && b->shape.size() == 1 && !same;
    if (!same && !row_bias && !scalar)
        throw Error("add: incompatible shapes " + shape_str(a->shape) + " + " +
                    shape_str(b->shape));
    auto out = make_tensor<T>(a->shape);
    const std::size_t n = a->numel();
    const std::size_t bcols = b->numel();
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t bi = same ? i : (row_bias ? i % bcols : 0);
        out->data[i] = static_cast<T>(static_cast<double>(a->data[i]) +
                                      static_cast<double>(b->data[bi]));
    }
    TensorT<T>*ap = a.get(), *bp = b.get(), *op = out.get();
    wire(out, {a, b}, [ap, bp, op, same, row_bias, n, bcols] {
        if (ap->requires_grad)
            for (std::size_t i = 0; i < n; ++i) ap->grad[i] += op->grad[i];
        if (bp->requires_grad) {
            if (same) {
                for (std::size_t i = 0; i < n; ++i) bp->grad[i] += op->grad[i];
            } else if (row_bias) {
                for (std::size_t j = 0; j < bcols; ++j) {
                    double acc = 0;
                    for (std::size_t i = j; i < n; i += bcols)
                        acc += static_cast<double>(op->grad[i]);
                    bp->grad[j] += static_cast<T>(acc);
                }
            } else {
                double acc = 0;
                for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(op->grad[i]);
                bp->grad[0] += static_cast<T>(acc);
            }
        }
    });
    return out;
}

// ------------------------------------------------------------ mul / scale --

template <class T>
TensorPtr<T> mul(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    if (a->shape != b->shape)
        throw Error("mul: incompatible shapes " + shape_str(a->shape) + " * " +
                    shape_str(b->shape));
    auto out = make_tensor<T>(a->shape);
    const std::size_t n = a->numel();
    for (std::size_t i = 0; i < n; ++i)
        out->data[i] = static_cast<T>(static_cast<double>(a->data[i]) *
                                      static_cast<double>(b->data[i]));
    TensorT<T>*ap = a.get(), *bp = b.get(), *op = out.get();
    wire(out, {a, b}, [ap, bp, op, n] {
        for (std::size_t i = 0; i < n; ++i) {
            if (ap->requires_grad)
                ap->grad[i] += static_cast<T>(static_cast<double>(op->grad[i]) *
                                              static_cast<double>(bp->data[i]));
            if (bp->requires_grad)
                bp->grad[i] += static_cast<T>(static_cast<double>(op->grad[i]) *
                                              static_cast<double>(ap->data[i]));
        }
    });
    return out;
}

template <class T>
TensorPtr<T> scale(const TensorPtr<T>& x, double c) {
    auto out = make_tensor<T>(x->shape);
    const std::size_t n = x->numel();
    for (std::size_t i = 0; i < n; ++i)
        out->data[i] = static_cast<T>(c * static_cast<double>(x->data[i]));
    TensorT<T>*xp = x.get(), *op = out.get();
    wire(out, {x}, [xp, op, c, n] {
        if (!xp->requires_grad) return;
        for (std::size_t i = 0; i < n; ++i)
            xp->grad[i] += static_cast<T>(c * static_cast<double>(op->grad[i]));
    });
    return out;
}

// ------------------------------------------------------ shape operations --

template <class T>
TensorPtr<T> transpose(const TensorPtr<T>& x) {
    detail::require_rank2(x, "transpose");
    const int n = x->shape[0], m = x->shape[1];
    auto out = make_tensor<T>({m, n});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) out->data[j * n + i] = x->data[i * m + j];
    TensorT<T>*xp = x.get(), *op = out.get();
    wire(out, {x}, [xp, op, n, m] {
        if (!xp->requires_grad) return;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) xp->grad[i * m + j] += op->grad[j * n + i];
    });
    return out;
}

template <class T>
TensorPtr<T> slice_cols(const TensorPtr<T>& x, int start, int len) {
    detail::require_rank2(x, "slice_cols");
    const int n = x->shape[0], m = x->shape[1];
    if (start < 0 || len <= 0 || start + len > m)
        throw Error("slice_cols: range [" + std::to_string(start) + ", " +
                    std::to_string(start + len) + ") outside " + shape_str(x->shape));
    auto out = make_tensor<T>({n, len});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < len; ++j) out->data[i * len + j] = x->data[i * m + start + j];
    TensorT<T>*xp = x.get(), *op = out.get();
    wire(out, {x}, [xp, op, n, m, start, len] {
        if (!xp->requires_grad) return;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < len; ++j) xp->grad[i * m + start + j] += op->grad[i * len + j];
    });
    return out;
}

// Column-wise concatenation of two matrices with equal row counts.
template <class T>
TensorPtr<T> concat(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    detail::require_rank2(a, "concat");
    detail::require_rank2(b, "concat");
    if (a->shape[0] != b->shape[0])
        throw Error("concat: row counts differ, " + shape_str(a->shape) + " | " +
                    shape_str(b->shape));
    const int n = a->shape[0], da = a->shape[1], db = b->shape[1];
    auto out = make_tensor<T>({n, da + db});
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < da; ++j) out->data[i * (da + db) + j] = a->data[i * da + j];
        for (int j = 0; j < db; ++j) out->data[i * (da + db) + da + j] = b->data[i * db + j];
    }
    TensorT<T>*ap = a.get(), *bp = b.get(), *op = out.get();
    wire(out, {a, b}, [ap, bp, op, n, da, db] {
        for (int i = 0; i < n; ++i) {
            if (ap->requires_grad)
                for (int j = 0; j < da; ++j)
                    ap->grad[i * da + j] += op->grad[i * (da + db) + j];
            if (bp->requires_grad)
                for (int j = 0; j < db; ++j)
                    bp->grad[i * db + j] += op->grad[i * (da + db) + da + j];
        }
    });
    return out;
}

// Row-wise concatenation: stacks matrices with equal column counts on top
// of each other, in order.
template <class T>
TensorPtr<T> stack_rows(const std::vector<TensorPtr<T>>& parts) {
    if (parts.empty()) throw Error("stack_rows: no inputs");
    int n = 0;
    const int d = parts.front()->shape.size() == 2 ? parts.front()->shape[1] : -1;
    for (const auto& p : parts) {
        detail::require_rank2(p, "stack_rows");
        if (p->shape[1] != d)
            throw Error("stack_rows: column counts differ, " + shape_str(parts.front()->shape) +
                        " | " + shape_str(p->shape));
        n += p->shape[0];
    }
    auto out = make_tensor<T>({n, d});
    int row = 0;
    for (const auto& p : parts) {
        const int r = p->shape[0];
        std::copy(p->data.begin(), p->data.end(), out->data.begin() + row * d);
        row += r;
    }
    auto raw = std::make_shared<std::vector<TensorT<T>*>>();
    for (const auto& p : parts) raw->push_back(p.get());
    TensorT<T>* op = out.get();
    wire(out, parts, [raw, op, d] {
        int row = 0;
        for (TensorT<T>* p : *raw) {
            const int r = p->shape[0];
            if (p->requires_grad)
                for (int i = 0; i < r * d; ++i) p->grad[i] += op->grad[row * d + i];
            row += r;
        }
    });
    return out;
}

// ------------------------------------------------------- row reductions --

template <class T>
TensorPtr<T> row_sum(const TensorPtr<T>& x) {
    detail::require_rank2(x, "row_sum");
    const int n = x->shape[0], m = x->shape[1];
    auto out = make_tensor<T>({n, 1});
    for (int i = 0; i < n; ++i) {
        double acc = 0;
        for (int j = 0; j < m; ++j) acc += static_cast<double>(x->data[i * m + j]);
        out->data[i] = static_cast<T>(acc);
    }
    TensorT<T>*xp = x.get(), *op = out.get();
    wire(out, {x}, [xp, op, n, m] {
        if (!xp->requires_grad) return;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) xp->grad[i * m + j] += op->grad[i];
    });
    return out;
}

// Divides each row of a by the matching scalar in s (shape [n, 1]).
template <class T>
TensorPtr<T> div_rows(const TensorPtr<T>& a, const TensorPtr<T>& s) {
    detail::require_rank2(a, "div_rows");
    if (s->shape != Shape{a->shape[0], 1})
        throw Error("div_rows: divisor shape " + shape_str(s->shape) + " does not match rows of " +
                    shape_str(a->shape));
    const int n = a->shape[0], m = a->shape[1];
    auto out = make_tensor<T>(a->shape);
    for (int i = 0; i < n; ++i) {
        const double d = static_cast<double>(s->data[i]);
        if (d == 0) throw Error("div_rows: zero divisor in row " + std::to_string(i));
        for (int j = 0; j < m; ++j)
            out->data[i * m + j] = static_cast<T>(static_cast<double>(a->data[i * m + j]) / d);
    }
    TensorT<T>*ap = a.get(), *sp = s.get(), *op = out.get();
    wire(out, {a, s}, [ap, sp, op, n, m] {
        for (int i = 0; i < n; ++i) {
            const double d = static_cast<double>(sp->data[i]);
            double sacc = 0;
            for (int j = 0; j < m; ++j) {
                const double g = static_cast<double>(op->grad[i * m + j]);
                if (ap->requires_grad) ap->grad[i * m + j] += static_cast<T>(g / d);
                sacc -= g * static_cast<double>(ap->data[i * m + j]) / (d * d);
            }
            if (sp->requires_grad) sp->grad[i] += static_cast<T>(sacc);
        }
    });
    return out;
}

// ------------------------------------------------------------ layer_norm --

template <class T>
TensorPtr<T> layer_norm(const TensorPtr<T>& x, const TensorPtr<T>& gain,
                        const TensorPtr<T>& bias, double eps = 1e-5) {
    detail::require_rank2(x, "layer_norm");
    const int n = x->shape[0], d = x->shape[1];
    if (gain->shape != Shape{d} || bias->shape != Shape{d})
        throw Error("layer_norm: gain/bias shapes " + shape_str(gain->shape) + "/" +
                    shape_str(bias->shape) + " do not match feature dim of " +
                    shape_str(x->shape));
    auto out = make_tensor<T>(x->shape);
    auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n) * d);
    auto inv_std = std::make_shared<std::vector<double>>(n);
    for (int i = 0; i < n; ++i) {
        double mean = 0;
        for (int j = 0; j < d; ++j) mean += static_cast<double>(x->data[i * d + j]);
        mean /= d;
        double var = 0;
        for (int j = 0; j < d; ++j) {
            const double c = static_cast<double>(x->data[i * d + j]) - mean;
            var += c * c;
        }
        var /= d;
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[i] = is;
        for (int j = 0; j < d; ++j) {
            const double xh = (static_cast<double>(x->data[i * d + j]) - mean) * is;
            (*xhat)[i * d + j] = xh;
            out->data[i * d + j] =
                static_cast<T>(xh * static_cast<double>(gain->data[j]) +
                               static_cast<double>(bias->data[j]));
        }
    }
    TensorT<T>*xp = x.get(), *gp = gain.get(), *bp = bias.get(), *op = out.get();
    wire(out, {x, gain, bias}, [xp, gp, bp, op, xhat, inv_std, n, d] {
        for (int i = 0; i < n; ++i) {
            double mean_dyh = 0, mean_dyh_xh = 0;
            for (int j = 0; j < d; ++j) {
                const double dy = static_cast<double>(op->grad[i * d + j]);
                const double dyh = dy * static_cast<double>(gp->data[j]);
                mean_dyh += dyh;
                mean_dyh_xh += dyh * (*xhat)[i * d + j];
            }
            mean_dyh /= d;
            mean_dyh_xh /= d;
            for (int j = 0; j < d; ++j) {
                const double dy = static_cast<double>(op->grad[i * d + j]);
                const double xh = (*xhat)[i * d + j];
                if (xp->requires_grad) {
                    const double dyh = dy * static_cast<double>(gp->data[j]);
                    xp->grad[i * d + j] += static_cast<T>(
                        (*inv_std)[i] * (dyh - mean_dyh - xh * mean_dyh_xh));
                }
                if (gp->requires_grad) gp->grad[j] += static_cast<T>(dy * xh);
                if (bp->requires_grad) bp->grad[j] += static_cast<T>(dy);
            }
        }
    });
    return out;
}

// --------------------------------------------------------------- softmax --
// Row-wise softmax; key_mask (length = columns, 1 = excluded) zeroes masked
// columns. A fully-masked row is a contract violation.

template <class T>
TensorPtr<T> softmax(const TensorPtr<T>& x,
                     const std::vector<std::uint8_t>* key_mask = nullptr) {
    detail::require_rank2(x, "softmax");
    const int n = x->shape[0], m = x->shape[1];
    if (key_mask != nullptr && static_cast<int>(key_mask->size()) != m)
        throw Error("softmax: mask length " + std::to_string(key_mask->size()) +
                    " does not match columns of " + shape_str(x->shape));
    auto out = make_tensor<T>(x->shape);
    for (int i = 0; i < n; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < m; ++j) {
            if (key_mask && (*key_mask)[j]) continue;
            mx = std::max(mx, static_cast<double>(x->data[i * m + j]));
        }
        if (mx == -std::numeric_limits<double>::infinity())
            throw Error("softmax: fully-masked row " + std::to_string(i));
        double z = 0;
        for (int j = 0; j < m; ++j) {
            if (key_mask && (*key_mask)[j]) continue;
            z += std::exp(static_cast<double>(x->data[i * m + j]) - mx);
        }
        for (int j = 0; j < m; ++j) {
            const bool excluded = key_mask && (*key_mask)[j];
            out->data[i * m + j] =
                excluded ? T(0)
                         : static_cast<T>(std::exp(static_cast<double>(x->data[i * m + j]) - mx) / z);
        }
    }
    TensorT<T>*xp = x.get(), *op = out.get();
    wire(out, {x}, [xp, op, n, m] {
        if (!xp->requires_grad) return;
        for (int i = 0; i < n; ++i) {
            double dot = 0;
            for (int j = 0; j < m; ++j)
                dot += static_cast<double>(op->grad[i * m + j]) *
                       static_cast<double>(op->data[i * m + j]);
            for (int j = 0; j < m; ++j) {
                const double y = static_cast<double>(op->data[i * m + j]);
                xp->grad[i * m + j] += static_cast<T>(
                    y * (static_cast<double>(op->grad[i * m + j]) - dot));
            }
        }
    });
    return out;
}

// ------------------------------------------------------------------ gelu --
// Exact (erf) form.

template <class T>
TensorPtr<T> gelu(const TensorPtr<T>& x) {
    auto out = make_tensor<T>(x->shape);
    const std::size_t n = x->numel();
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    for (std::size_t i = 0; i < n; ++i) {
        const double v = static_cast<double>(x->data[i]);
        out->data[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2)));
    }
    TensorT<T>*xp = x.get(), *op = out.get();
    wire(out, {x}, [xp, op, n] {
        if (!xp->requires_grad) return;
        constexpr double inv_sqrt2pi = 0.39894228040143267794;
        for (std::size_t i = 0; i < n; ++i) {
            const double v = static_cast<double>(xp->data[i]);
            const double d = 0.5 * (1.0 + std::erf(v * 0.70710678118654752440)) +
                             v * inv_sqrt2pi * std::exp(-0.5 * v * v);
            xp->grad[i] += static_cast<T>(d * static_cast<double>(op->grad[i]));
        }
    });
    return out;
}

// -------------------------------------------------------------- clip_min --
// Elementwise max(x, floor); gradient passes only where x > floor.

template <class T>
TensorPtr<T> clip_min(const TensorPtr<T>& x, double floor) {
    auto out = make_tensor<T>(x->shape);
    const std::size_t n = x->numel();
    for (std::size_t i = 0; i < n; ++i) {
        const double v = static_cast<double>(x->data[i]);
        out->data[i] = static_cast<T>(v > floor ? v : floor);
    }
    TensorT<T>*xp = x.get(), *op = out.get();
    wire(out, {x}, [xp, op, floor, n] {
        if (!xp->requires_grad) return;
        for (std::size_t i = 0; i < n; ++i)
            if (static_cast<double>(xp->data[i]) > floor) xp->grad[i] += op->grad[i];
    });
    return out;
}

// ---------------------------------------------------- embedding_lookup --

template <class T>
TensorPtr<T> embedding_lookup(const TensorPtr<T>& table, const std::vector<int>& ids) {
    detail::require_rank2(table, "embedding_lookup");
    const int v = table->shape[0], d = table->shape[1];
    const int n = static_cast<int>(ids.size());
    auto out = make_tensor<T>({n, d});
    for (int i = 0; i < n; ++i) {
        if (ids[i] < 0 || ids[i] >= v)
            throw Error("embedding_lookup: id " + std::to_string(ids[i]) +
                        " outside table " + shape_str(table->shape));
        for (int j = 0; j < d; ++j) out->data[i * d + j] = table->data[ids[i] * d + j];
    }
    TensorT<T>*tp = table.get(), *op = out.get();
    auto ids_copy = std::make_shared<std::vector<int>>(ids);
    wire(out, {table}, [tp, op, ids_copy, n, d] {
        if (!tp->requires_grad) return;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j)
                tp->grad[(*ids_copy)[i] * d + j] += op->grad[i * d + j];
    });
    return out;
}

// ------------------------------------------------------------- mean_pool --
// Means over row segments; one output row per segment.

template <class T>
TensorPtr<T> mean_pool(const TensorPtr<T>& x, const std::vector<std::vector<int>>& segments) {
    detail::require_rank2(x, "mean_pool");
    const int n = x->shape[0], d = x->shape[1];
    const int s = static_cast<int>(segments.size());
    auto out = make_tensor<T>({s, d});
    for (int g = 0; g < s; ++g) {
        if (segments[g].empty())
            throw Error("mean_pool: empty segment " + std::to_string(g));
        for (int idx : segments[g])
            if (idx < 0 || idx >= n)
                throw Error("mean_pool: row index " + std::to_string(idx) + " outside " +
                            shape_str(x->shape));
        for (int j = 0; j < d; ++j) {
            double acc = 0;
            for (int idx : segments[g]) acc += static_cast<double>(x->data[idx * d + j]);
            out->data[g * d + j] = static_cast<T>(acc / static_cast<double>(segments[g].size()));
        }
    }
    TensorT<T>*xp = x.get(), *op = out.get();
    auto segs = std::make_shared<std::vector<std::vector<int>>>(segments);
    wire(out, {x}, [xp, op, segs, d] {
        if (!xp->requires_grad) return;
        for (std::size_t g = 0; g < segs->size(); ++g) {
            const double inv = 1.0 / static_cast<double>((*segs)[g].size());
            for (int idx : (*segs)[g])
                for (int j = 0; j < d; ++j)
                    xp->grad[idx * d + j] +=
                        static_cast<T>(inv * static_cast<double>(op->grad[g * d + static_cast<int>(j)]));
        }
    });
    return out;
}

// --------------------------------------------------------------- dropout --
// Inverted dropout; identity when rate is 0 or in eval mode.

template <class T>
TensorPtr<T> dropout(const TensorPtr<T>& x, double rate, Rng& rng, bool training) {
    if (rate < 0 || rate >= 1)
        throw Error("dropout: rate must be in [0, 1), got " + std::to_string(rate));
    if (!training || rate == 0) return x;
    const std::size_t n = x->numel();
    auto keep = std::make_shared<std::vector<std::uint8_t>>(n);
    const double scale_up = 1.0 / (1.0 - rate);
    auto out = make_tensor<T>(x->shape);
    for (std::size_t i = 0; i < n; ++i) {
        (*keep)[i] = rng.bernoulli(1.0 - rate) ? 1 : 0;
        out->data[i] = (*keep)[i]
                           ? static_cast<T>(static_cast<double>(x->data[i]) * scale_up)
                           : T(0);
    }
    TensorT<T>*xp = x.get(), *op = out.get();
    wire(out, {x}, [xp, op, keep, scale_up, n] {
        if (!xp->requires_grad) return;
        for (std::size_t i = 0; i < n; ++i)
            if ((*keep)[i])
                xp->grad[i] +=
                    static_cast<T>(static_cast<double>(op->grad[i]) * scale_up);
    });
    return out;
}

// --------------------------------------------------------- cross_entropy --
// Mean negative log-likelihood over included rows. include: optional 0/1
// row filter (nullptr = all rows).

template <class T>
TensorPtr<T> cross_entropy(const TensorPtr<T>& logits, const std::vector<int>& targets,
                           const std::vector<std::uint8_t>* include = nullptr) {
    detail::require_rank2(logits, "cross_entropy");
    const int n = logits->shape[0], c = logits->shape[1];
    if (static_cast<int>(targets.size()) != n)
        throw Error("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                    shape_str(logits->shape));
    if (include && static_cast<int>(include->size()) != n)
        throw Error("cross_entropy: include mask length " + std::to_string(include->size()) +
                    " does not match rows of " + shape_str(logits->shape));
    int count = 0;
    for (int i = 0; i < n; ++i) {
        if (include && !(*include)[i]) continue;
        if (targets[i] < 0 || targets[i] >= c)
            throw Error("cross_entropy: target " + std::to_string(targets[i]) +
                        " outside [0, " + std::to_string(c) + ") at row " + std::to_string(i));
        ++count;
    }
    if (count == 0) throw Error("cross_entropy: no included rows");

    auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n) * c, 0.0);
    auto rows = std::make_shared<std::vector<std::uint8_t>>(
        include ? *include : std::vector<std::uint8_t>(n, 1));
    double total = 0;
    for (int i = 0; i < n; ++i) {
        if (!(*rows)[i]) continue;
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < c; ++j)
            mx = std::max(mx, static_cast<double>(logits->data[i * c + j]));
        double z = 0;
        for (int j = 0; j < c; ++j)
            z += std::exp(static_cast<double>(logits->data[i * c + j]) - mx);
        const double logz = std::log(z) + mx;
        for (int j = 0; j < c; ++j)
            (*probs)[i * c + j] =
                std::exp(static_cast<double>(logits->data[i * c + j]) - logz);
        total += logz - static_cast<double>(logits->data[i * c + targets[i]]);
    }
    auto out = make_tensor<T>({1}, std::vector<T>{static_cast<T>(total / count)});
    TensorT<T>*lp = logits.get(), *op = out.get();
    auto tgt = std::make_shared<std::vector<int>>(targets);
    wire(out, {logits}, [lp, op, probs, rows, tgt, n, c, count] {
        if (!lp->requires_grad) return;
        const double g = static_cast<double>(op->grad[0]) / count;
        for (int i = 0; i < n; ++i) {
            if (!(*rows)[i]) continue;
            for (int j = 0; j < c; ++j) {
                const double p = (*probs)[i * c + j];
                const double onehot = j == (*tgt)[i] ? 1.0 : 0.0;
                lp->grad[i * c + j] += static_cast<T>(g * (p - onehot));
            }
        }
    });
    return out;
}

// ----------------------------------------------------------------- mse --
// Mean squared error over included rows (all elements of those rows).

template <class T>
TensorPtr<T> mse(const TensorPtr<T>& pred, const TensorPtr<T>& target,
                 const std::vector<std::uint8_t>* include = nullptr) {
    if (pred->shape != target->shape)
        throw Error("mse: shapes differ, " + shape_str(pred->shape) + " vs " +
                    shape_str(target->shape));
    const int n = pred->rows(), d = static_cast<int>(pred->numel()) / pred->rows();
    if (include && static_cast<int>(include->size()) != n)
        throw Error("mse: include mask length " + std::to_string(include->size()) +
                    " does not match rows of " + shape_str(pred->shape));
    int count = 0;
    for (int i = 0; i < n; ++i)
        if (!include || (*include)[i]) ++count;
    if (count == 0) throw Error("mse: no included rows");

    auto rows = std::make_shared<std::vector<std::uint8_t>>(
        include ? *include : std::vector<std::uint8_t>(n, 1));
    double total = 0;
    for (int i = 0; i < n; ++i) {
        if (!(*rows)[i]) continue;
        for (int j = 0; j < d; ++j) {
            const double diff = static_cast<double>(pred->data[i * d + j]) -
                                static_cast<double>(target->data[i * d + j]);
            total += diff * diff;
        }
    }
    const double denom = static_cast<double>(count) * d;
    auto out = make_tensor<T>({1}, std::vector<T>{static_cast<T>(total / denom)});
    TensorT<T>*pp = pred.get(), *tp = target.get(), *op = out.get();
    wire(out, {pred, target}, [pp, tp, op, rows, n, d, denom] {
        const double g = 2.0 * static_cast<double>(op->grad[0]) / denom;
        for (int i = 0; i < n; ++i) {
            if (!(*rows)[i]) continue;
            for (int j = 0; j < d; ++j) {
                const double diff = static_cast<double>(pp->data[i * d + j]) -
                                    static_cast<double>(tp->data[i * d + j]);
                if (pp->requires_grad) pp->grad[i * d + j] += static_cast<T>(g * diff);
                if (tp->requires_grad) tp->grad[i * d + j] -= static_cast<T>(g * diff);
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------- linear --

template <class T>
TensorPtr<T> linear(const TensorPtr<T>& x, const TensorPtr<T>& w, const TensorPtr<T>& b) {
    return add(matmul(x, w), b);
}

// ------------------------------------------------- multi_head_attention --
// Standard scaled dot-product attention with explicit projection weights,
// composed from the primitive ops (each primitive carries its own backward).
// key_mask: optional per-position exclusion (1 = padding); a fully-masked key
// set raises an error inside softmax.

template <class T>
TensorPtr<T> multi_head_attention(const TensorPtr<T>& q, const TensorPtr<T>& k,
                                  const TensorPtr<T>& v, const TensorPtr<T>& wq,
                                  const TensorPtr<T>& wk, const TensorPtr<T>& wv,
                                  const TensorPtr<T>& wo, int heads,
                                  const std::vector<std::uint8_t>* key_mask = nullptr) {
    detail::require_rank2(q, "multi_head_attention");
    const int d = wq->shape[1];
    if (heads <= 0 || d % heads != 0)
        throw Error("multi_head_attention: model dim " + std::to_string(d) +
                    " not divisible by heads " + std::to_string(heads));
    const int dh = d / heads;
    const TensorPtr<T> qp = matmul(q, wq);
    const TensorPtr<T> kp = matmul(k, wk);
    const TensorPtr<T> vp = matmul(v, wv);
    TensorPtr<T> merged;
    for (int h = 0; h < heads; ++h) {
        const TensorPtr<T> qh = slice_cols(qp, h * dh, dh);
        const TensorPtr<T> kh = slice_cols(kp, h * dh, dh);
        const TensorPtr<T> vh = slice_cols(vp, h * dh, dh);
        TensorPtr<T> scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(double(dh)));
        const TensorPtr<T> weights = softmax(scores, key_mask);
        const TensorPtr<T> oh = matmul(weights, vh);
        merged = h == 0 ? oh : concat(merged, oh);
    }
    return matmul(merged, wo);
}

}  // namespace apa::nn

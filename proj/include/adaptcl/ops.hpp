#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "adaptcl/error.hpp"
#include "adaptcl/tensor.hpp"

// Differentiable primitives. Every op computes its result eagerly and, when
// a tape is active and any input requires grad, records a pull closure that
// routes the output gradient into the inputs' grad buffers. Closures capture
// tensor handles, so the saved activations stay alive for the tape lifetime.
//
// Broadcasting is restricted to scalar-vs-tensor and exact same-shape; bias
// broadcasts are folded into `linear` instead.

namespace adaptcl {

namespace detail {

template <typename Real>
void record_op(const char* op, TensorT<Real>& out,
               std::vector<const TensorT<Real>*> inputs, std::function<void()> pull) {
    bool any = false;
    for (const auto* t : inputs) any = any || t->requires_grad();
    out.set_requires_grad(any);
    auto* tape = TapeT<Real>::active();
    if (tape == nullptr || !any) return;
    std::vector<int> parents;
    parents.reserve(inputs.size());
    for (const auto* t : inputs) parents.push_back(t->node());
    const int id = tape->record(op, std::move(parents), std::move(pull));
    out.set_record(tape, id);
}

template <typename Real>
void require_rank2(const TensorT<Real>& t, const char* op) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(op) + ": expected a rank-2 tensor, got shape " +
                             shape_str(t.shape()));
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// matmul / linear

template <typename Real>
TensorT<Real> matmul(const TensorT<Real>& a, const TensorT<Real>& b) {
    detail::require_rank2(a, "matmul");
    detail::require_rank2(b, "matmul");
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner dimensions disagree, " +
                             detail::shape_str(a.shape()) + " x " + detail::shape_str(b.shape()));
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    auto out = TensorT<Real>::zeros({m, n});
    const Real* pa = a.data().data();
    const Real* pb = b.data().data();
    Real* pc = out.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t l = 0; l < k; ++l) {
            const Real av = pa[i * k + l];
            if (av == Real(0)) continue;
            const Real* brow = pb + l * n;
            Real* crow = pc + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
    detail::record_op<Real>("matmul", out, {&a, &b}, [a, b, out]() {
        if (!out.has_grad()) return;
        const auto& g = out.grad();
        const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
        if (a.requires_grad()) {
            std::vector<Real> da(m * k, Real(0));
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const Real gv = g[i * n + j];
                    if (gv == Real(0)) continue;
                    for (std::size_t l = 0; l < k; ++l)
                        da[i * k + l] += gv * b.data()[l * n + j];
                }
            a.accumulate_grad(da);
        }
        if (b.requires_grad()) {
            std::vector<Real> db(k * n, Real(0));
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t l = 0; l < k; ++l) {
                    const Real av = a.data()[i * k + l];
                    if (av == Real(0)) continue;
                    for (std::size_t j = 0; j < n; ++j)
                        db[l * n + j] += av * g[i * n + j];
                }
            b.accumulate_grad(db);
        }
    });
    return out;
}

// y = x.W + b with b broadcast across rows.
template <typename Real>
TensorT<Real> linear(const TensorT<Real>& x, const TensorT<Real>& w, const TensorT<Real>& b) {
    detail::require_rank2(x, "linear");
    detail::require_rank2(w, "linear");
    if (x.cols() != w.rows()) {
        throw DimensionError("linear: input " + detail::shape_str(x.shape()) +
                             " incompatible with weight " + detail::shape_str(w.shape()));
    }
    if (b.rank() != 1 || b.shape()[0] != w.cols()) {
        throw DimensionError("linear: bias " + detail::shape_str(b.shape()) +
                             " incompatible with weight " + detail::shape_str(w.shape()));
    }
    const std::size_t m = x.rows(), k = x.cols(), n = w.cols();
    auto out = TensorT<Real>::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        Real* orow = out.data().data() + i * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] = b.data()[j];
        for (std::size_t l = 0; l < k; ++l) {
            const Real xv = x.data()[i * k + l];
            if (xv == Real(0)) continue;
            const Real* wrow = w.data().data() + l * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += xv * wrow[j];
        }
    }
    detail::record_op<Real>("linear", out, {&x, &w, &b}, [x, w, b, out]() {
        if (!out.has_grad()) return;
        const auto& g = out.grad();
        const std::size_t m = x.rows(), k = x.cols(), n = w.cols();
        if (x.requires_grad()) {
            std::vector<Real> dx(m * k, Real(0));
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const Real gv = g[i * n + j];
                    if (gv == Real(0)) continue;
                    for (std::size_t l = 0; l < k; ++l)
                        dx[i * k + l] += gv * w.data()[l * n + j];
                }
            x.accumulate_grad(dx);
        }
        if (w.requires_grad()) {
            std::vector<Real> dw(k * n, Real(0));
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t l = 0; l < k; ++l) {
                    const Real xv = x.data()[i * k + l];
                    if (xv == Real(0)) continue;
                    for (std::size_t j = 0; j < n; ++j)
                        dw[l * n + j] += xv * g[i * n + j];
                }
            w.accumulate_grad(dw);
        }
        if (b.requires_grad()) {
            std::vector<Real> db(n, Real(0));
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) db[j] += g[i * n + j];
            b.accumulate_grad(db);
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// elementwise

template <typename Real>
TensorT<Real> add(const TensorT<Real>& a, const TensorT<Real>& b) {
    if (a.shape() != b.shape() && !a.is_scalar() && !b.is_scalar()) {
        throw DimensionError("add: shapes " + detail::shape_str(a.shape()) + " and " +
                             detail::shape_str(b.shape()) +
                             " are neither equal nor scalar-vs-tensor");
    }
    const bool a_scalar = a.is_scalar() && a.shape() != b.shape();
    const bool b_scalar = b.is_scalar() && a.shape() != b.shape();
    auto out = TensorT<Real>::zeros(a_scalar ? b.shape() : a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.at(i) = (a_scalar ? a.at(0) : a.at(i)) + (b_scalar ? b.at(0) : b.at(i));
    }
    detail::record_op<Real>("add", out, {&a, &b}, [a, b, out, a_scalar, b_scalar]() {
        if (!out.has_grad()) return;
        const auto& g = out.grad();
        if (a.requires_grad()) {
            if (a_scalar) {
                Real s = Real(0);
                for (Real v : g) s += v;
                a.accumulate_grad({s});
            } else {
                a.accumulate_grad(g);
            }
        }
        if (b.requires_grad()) {
            if (b_scalar) {
                Real s = Real(0);
                for (Real v : g) s += v;
                b.accumulate_grad({s});
            } else {
                b.accumulate_grad(g);
            }
        }
    });
    return out;
}

template <typename Real>
TensorT<Real> mul(const TensorT<Real>& a, const TensorT<Real>& b) {
    if (a.shape() != b.shape() && !a.is_scalar() && !b.is_scalar()) {
        throw DimensionError("mul: shapes " + detail::shape_str(a.shape()) + " and " +
                             detail::shape_str(b.shape()) +
                             " are neither equal nor scalar-vs-tensor");
    }
    const bool a_scalar = a.is_scalar() && a.shape() != b.shape();
    const bool b_scalar = b.is_scalar() && a.shape() != b.shape();
    auto out = TensorT<Real>::zeros(a_scalar ? b.shape() : a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.at(i) = (a_scalar ? a.at(0) : a.at(i)) * (b_scalar ? b.at(0) : b.at(i));
    }
    detail::record_op<Real>("mul", out, {&a, &b}, [a, b, out, a_scalar, b_scalar]() {
        if (!out.has_grad()) return;
        const auto& g = out.grad();
        if (a.requires_grad()) {
            if (a_scalar) {
                Real s = Real(0);
                for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * b.at(i);
                a.accumulate_grad({s});
            } else {
                std::vector<Real> da(g.size());
                for (std::size_t i = 0; i < g.size(); ++i)
                    da[i] = g[i] * (b_scalar ? b.at(0) : b.at(i));
                a.accumulate_grad(da);
            }
        }
        if (b.requires_grad()) {
            if (b_scalar) {
                Real s = Real(0);
                for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * a.at(i);
                b.accumulate_grad({s});
            } else {
                std::vector<Real> db(g.size());
                for (std::size_t i = 0; i < g.size(); ++i)
                    db[i] = g[i] * (a_scalar ? a.at(0) : a.at(i));
                b.accumulate_grad(db);
            }
        }
    });
    return out;
}

template <typename Real>
TensorT<Real> scale(const TensorT<Real>& x, Real c) {
    auto out = TensorT<Real>::zeros(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out.at(i) = x.at(i) * c;
    detail::record_op<Real>("scale", out, {&x}, [x, out, c]() {
        if (!out.has_grad() || !x.requires_grad()) return;
        const auto& g = out.grad();
        std::vector<Real> dx(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] = g[i] * c;
        x.accumulate_grad(dx);
    });
    return out;
}

template <typename Real>
TensorT<Real> add_scalar(const TensorT<Real>& x, Real c) {
    auto out = TensorT<Real>::zeros(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out.at(i) = x.at(i) + c;
    detail::record_op<Real>("add_scalar", out, {&x}, [x, out]() {
        if (!out.has_grad() || !x.requires_grad()) return;
        x.accumulate_grad(out.grad());
    });
    return out;
}

// Subgradient at 0 is 0.
template <typename Real>
TensorT<Real> relu(const TensorT<Real>& x) {
    auto out = TensorT<Real>::zeros(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out.at(i) = x.at(i) > Real(0) ? x.at(i) : Real(0);
    detail::record_op<Real>("relu", out, {&x}, [x, out]() {
        if (!out.has_grad() || !x.requires_grad()) return;
        const auto& g = out.grad();
        std::vector<Real> dx(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] = x.at(i) > Real(0) ? g[i] : Real(0);
        x.accumulate_grad(dx);
    });
    return out;
}

namespace detail {
// tanh-approximation constants: gelu(x) ~= 0.5 x (1 + tanh(c1 (x + c2 x^3)))
constexpr double kGeluC1 = 0.7978845608028654; // sqrt(2/pi)
constexpr double kGeluC2 = 0.044715;
} // namespace detail

template <typename Real>
TensorT<Real> gelu(const TensorT<Real>& x) {
    const Real c1 = Real(detail::kGeluC1);
    const Real c2 = Real(detail::kGeluC2);
    auto out = TensorT<Real>::zeros(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const Real v = x.at(i);
        const Real t = std::tanh(c1 * (v + c2 * v * v * v));
        out.at(i) = Real(0.5) * v * (Real(1) + t);
    }
    detail::record_op<Real>("gelu", out, {&x}, [x, out, c1, c2]() {
        if (!out.has_grad() || !x.requires_grad()) return;
        const auto& g = out.grad();
        std::vector<Real> dx(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
            const Real v = x.at(i);
            const Real t = std::tanh(c1 * (v + c2 * v * v * v));
            const Real du = c1 * (Real(1) + Real(3) * c2 * v * v);
            dx[i] = g[i] * (Real(0.5) * (Real(1) + t) +
                            Real(0.5) * v * (Real(1) - t * t) * du);
        }
        x.accumulate_grad(dx);
    });
    return out;
}

// ---------------------------------------------------------------------------
// softmax / layernorm

// Softmax along `axis` (-1 means the last axis), stabilized by
// max-subtraction. Rank-1 and rank-2 tensors supported.
template <typename Real>
TensorT<Real> softmax(const TensorT<Real>& x, int axis = -1) {
    const int rankN = static_cast<int>(x.rank());
    if (rankN < 1 || rankN > 2) {
        throw DimensionError("softmax: rank-1 or rank-2 tensor expected, got shape " +
                             detail::shape_str(x.shape()));
    }
    if (axis < 0) axis += rankN;
    if (axis < 0 || axis >= rankN) {
        throw DimensionError("softmax: axis " + std::to_string(axis) +
                             " out of range for shape " + detail::shape_str(x.shape()));
    }
    // lines = independent softmax vectors of length `len`, stride `stride`.
    const std::size_t len = x.shape()[static_cast<std::size_t>(axis)];
    const std::size_t lines = x.size() / len;
    const std::size_t stride = (rankN == 2 && axis == 0) ? x.shape()[1] : 1;

    auto out = TensorT<Real>::zeros(x.shape());
    for (std::size_t line = 0; line < lines; ++line) {
        const std::size_t base = (stride == 1) ? line * len : line;
        Real mx = x.at(base);
        for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, x.at(base + i * stride));
        Real denom = Real(0);
        for (std::size_t i = 0; i < len; ++i) {
            const Real e = std::exp(x.at(base + i * stride) - mx);
            out.at(base + i * stride) = e;
            denom += e;
        }
        for (std::size_t i = 0; i < len; ++i) out.at(base + i * stride) /= denom;
    }
    detail::record_op<Real>("softmax", out, {&x}, [x, out, len, lines, stride]() {
        if (!out.has_grad() || !x.requires_grad()) return;
        const auto& g = out.grad();
        std::vector<Real> dx(x.size(), Real(0));
        for (std::size_t line = 0; line < lines; ++line) {
            const std::size_t base = (stride == 1) ? line * len : line;
            Real dot = Real(0);
            for (std::size_t i = 0; i < len; ++i) {
                const std::size_t idx = base + i * stride;
                dot += g[idx] * out.at(idx);
            }
            for (std::size_t i = 0; i < len; ++i) {
                const std::size_t idx = base + i * stride;
                dx[idx] = out.at(idx) * (g[idx] - dot);
            }
        }
        x.accumulate_grad(dx);
    });
    return out;
}

// Row-wise layer normalization: y = gamma * (x - mean) / sqrt(var + eps) + beta.
// A zero-variance row normalizes to zeros (eps keeps the division finite).
template <typename Real>
TensorT<Real> layernorm(const TensorT<Real>& x, const TensorT<Real>& gamma,
                        const TensorT<Real>& beta, Real eps) {
    if (eps <= Real(0)) {
        throw ContractError("layernorm: eps must be positive");
    }
    const bool vec = x.rank() == 1;
    if (!vec) detail::require_rank2(x, "layernorm");
    const std::size_t d = vec ? x.shape()[0] : x.cols();
    const std::size_t m = vec ? 1 : x.rows();
    if (gamma.rank() != 1 || gamma.shape()[0] != d || beta.rank() != 1 || beta.shape()[0] != d) {
        throw DimensionError("layernorm: gamma/beta must be rank-1 of length " + std::to_string(d));
    }
    auto out = TensorT<Real>::zeros(x.shape());
    for (std::size_t r = 0; r < m; ++r) {
        const std::size_t base = r * d;
        Real mean = Real(0);
        for (std::size_t i = 0; i < d; ++i) mean += x.at(base + i);
        mean /= Real(d);
        Real var = Real(0);
        for (std::size_t i = 0; i < d; ++i) {
            const Real c = x.at(base + i) - mean;
            var += c * c;
        }
        var /= Real(d);
        const Real inv = Real(1) / std::sqrt(var + eps);
        for (std::size_t i = 0; i < d; ++i) {
            out.at(base + i) = gamma.at(i) * (x.at(base + i) - mean) * inv + beta.at(i);
        }
    }
    detail::record_op<Real>("layernorm", out, {&x, &gamma, &beta},
                            [x, gamma, beta, out, m, d, eps]() {
        if (!out.has_grad()) return;
        const auto& g = out.grad();
        std::vector<Real> dx(x.requires_grad() ? x.size() : 0, Real(0));
        std::vector<Real> dgamma(gamma.requires_grad() ? d : 0, Real(0));
        std::vector<Real> dbeta(beta.requires_grad() ? d : 0, Real(0));
        for (std::size_t r = 0; r < m; ++r) {
            const std::size_t base = r * d;
            Real mean = Real(0);
            for (std::size_t i = 0; i < d; ++i) mean += x.at(base + i);
            mean /= Real(d);
            Real var = Real(0);
            for (std::size_t i = 0; i < d; ++i) {
                const Real c = x.at(base + i) - mean;
                var += c * c;
            }
            var /= Real(d);
            const Real inv = Real(1) / std::sqrt(var + eps);
            // xhat, g*gamma and their row means drive all three gradients
            Real mean_gg = Real(0), mean_ggx = Real(0);
            for (std::size_t i = 0; i < d; ++i) {
                const Real xhat = (x.at(base + i) - mean) * inv;
                const Real gg = g[base + i] * gamma.at(i);
                mean_gg += gg;
                mean_ggx += gg * xhat;
                if (!dgamma.empty()) dgamma[i] += g[base + i] * xhat;
                if (!dbeta.empty()) dbeta[i] += g[base + i];
            }
            mean_gg /= Real(d);
            mean_ggx /= Real(d);
            if (!dx.empty()) {
                for (std::size_t i = 0; i < d; ++i) {
                    const Real xhat = (x.at(base + i) - mean) * inv;
                    const Real gg = g[base + i] * gamma.at(i);
                    dx[base + i] = inv * (gg - mean_gg - xhat * mean_ggx);
                }
            }
        }
        if (!dx.empty()) x.accumulate_grad(dx);
        if (!dgamma.empty()) gamma.accumulate_grad(dgamma);
        if (!dbeta.empty()) beta.accumulate_grad(dbeta);
    });
    return out;
}

// ---------------------------------------------------------------------------
// structural ops

template <typename Real>
TensorT<Real> transpose(const TensorT<Real>& x) {
    detail::require_rank2(x, "transpose");
    const std::size_t m = x.rows(), n = x.cols();
    auto out = TensorT<Real>::zeros({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(j, i) = x.at(i, j);
    detail::record_op<Real>("transpose", out, {&x}, [x, out, m, n]() {
        if (!out.has_grad() || !x.requires_grad()) return;
        const auto& g = out.grad();
        std::vector<Real> dx(m * n);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) dx[i * n + j] = g[j * m + i];
        x.accumulate_grad(dx);
    });
    return out;
}

template <typename Real>
TensorT<Real> slice_cols(const TensorT<Real>& x, std::size_t start, std::size_t len) {
    detail::require_rank2(x, "slice_cols");
    if (len == 0 || start + len > x.cols()) {
        throw DimensionError("slice_cols: range [" + std::to_string(start) + "," +
                             std::to_string(start + len) + ") invalid for " +
                             detail::shape_str(x.shape()));
    }
    const std::size_t m = x.rows(), n = x.cols();
    auto out = TensorT<Real>::zeros({m, len});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < len; ++j) out.at(i, j) = x.at(i, start + j);
    detail::record_op<Real>("slice_cols", out, {&x}, [x, out, start, len, m, n]() {
        if (!out.has_grad() || !x.requires_grad()) return;
        const auto& g = out.grad();
        std::vector<Real> dx(m * n, Real(0));
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < len; ++j) dx[i * n + start + j] = g[i * len + j];
        x.accumulate_grad(dx);
    });
    return out;
}

template <typename Real>
TensorT<Real> concat_cols(const std::vector<TensorT<Real>>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const std::size_t m = parts[0].rows();
    std::size_t total = 0;
    for (const auto& p : parts) {
        detail::require_rank2(p, "concat_cols");
        if (p.rows() != m) {
            throw DimensionError("concat_cols: row counts differ");
        }
        total += p.cols();
    }
    auto out = TensorT<Real>::zeros({m, total});
    std::size_t off = 0;
    for (const auto& p : parts) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < p.cols(); ++j) out.at(i, off + j) = p.at(i, j);
        off += p.cols();
    }
    std::vector<const TensorT<Real>*> ins;
    for (const auto& p : parts) ins.push_back(&p);
    detail::record_op<Real>("concat_cols", out, ins, [parts, out, m, total]() {
        if (!out.has_grad()) return;
        const auto& g = out.grad();
        std::size_t off = 0;
        for (const auto& p : parts) {
            if (p.requires_grad()) {
                std::vector<Real> dp(m * p.cols());
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < p.cols(); ++j)
                        dp[i * p.cols() + j] = g[i * total + off + j];
                p.accumulate_grad(dp);
            }
            off += p.cols();
        }
    });
    return out;
}

template <typename Real>
TensorT<Real> concat_rows(const std::vector<TensorT<Real>>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    const std::size_t n = parts[0].cols();
    std::size_t total = 0;
    for (const auto& p : parts) {
        detail::require_rank2(p, "concat_rows");
        if (p.cols() != n) {
            throw DimensionError("concat_rows: column counts differ");
        }
        total += p.rows();
    }
    auto out = TensorT<Real>::zeros({total, n});
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.data().begin(), p.data().end(), out.data().begin() + off * n);
        off += p.rows();
    }
    std::vector<const TensorT<Real>*> ins;
    for (const auto& p : parts) ins.push_back(&p);
    detail::record_op<Real>("concat_rows", out, ins, [parts, out, n]() {
        if (!out.has_grad()) return;
        const auto& g = out.grad();
        std::size_t off = 0;
        for (const auto& p : parts) {
            if (p.requires_grad()) {
                std::vector<Real> dp(g.begin() + static_cast<std::ptrdiff_t>(off * n),
                                     g.begin() + static_cast<std::ptrdiff_t>((off + p.rows()) * n));
                p.accumulate_grad(dp);
            }
            off += p.rows();
        }
    });
    return out;
}

// Stacks rank-1 tensors of equal length into a [parts, n] matrix.
template <typename Real>
TensorT<Real> stack_rows(const std::vector<TensorT<Real>>& parts) {
    if (parts.empty()) throw DimensionError("stack_rows: no inputs");
    const std::size_t n = parts[0].size();
    for (const auto& p : parts) {
        if (p.rank() != 1 || p.size() != n) {
            throw DimensionError("stack_rows: all inputs must be rank-1 of length " +
                                 std::to_string(n));
        }
    }
    auto out = TensorT<Real>::zeros({parts.size(), n});
    for (std::size_t r = 0; r < parts.size(); ++r) {
        std::copy(parts[r].data().begin(), parts[r].data().end(), out.data().begin() + r * n);
    }
    std::vector<const TensorT<Real>*> ins;
    for (const auto& p : parts) ins.push_back(&p);
    detail::record_op<Real>("stack_rows", out, ins, [parts, out, n]() {
        if (!out.has_grad()) return;
        const auto& g = out.grad();
        for (std::size_t r = 0; r < parts.size(); ++r) {
            if (!parts[r].requires_grad()) continue;
            std::vector<Real> dp(g.begin() + static_cast<std::ptrdiff_t>(r * n),
                                 g.begin() + static_cast<std::ptrdiff_t>((r + 1) * n));
            parts[r].accumulate_grad(dp);
        }
    });
    return out;
}

template <typename Real>
TensorT<Real> select_row(const TensorT<Real>& x, std::size_t row) {
    detail::require_rank2(x, "select_row");
    if (row >= x.rows()) {
        throw RangeError("select_row: row " + std::to_string(row) + " out of range for " +
                         detail::shape_str(x.shape()));
    }
    const std::size_t n = x.cols();
    auto out = TensorT<Real>::zeros({n});
    for (std::size_t j = 0; j < n; ++j) out.at(j) = x.at(row, j);
    detail::record_op<Real>("select_row", out, {&x}, [x, out, row, n]() {
        if (!out.has_grad() || !x.requires_grad()) return;
        const auto& g = out.grad();
        std::vector<Real> dx(x.size(), Real(0));
        for (std::size_t j = 0; j < n; ++j) dx[row * n + j] = g[j];
        x.accumulate_grad(dx);
    });
    return out;
}

template <typename Real>
TensorT<Real> mean_rows(const TensorT<Real>& x) {
    detail::require_rank2(x, "mean_rows");
    const std::size_t m = x.rows(), n = x.cols();
    auto out = TensorT<Real>::zeros({n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(j) += x.at(i, j);
    for (std::size_t j = 0; j < n; ++j) out.at(j) /= Real(m);
    detail::record_op<Real>("mean_rows", out, {&x}, [x, out, m, n]() {
        if (!out.has_grad() || !x.requires_grad()) return;
        const auto& g = out.grad();
        std::vector<Real> dx(m * n);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) dx[i * n + j] = g[j] / Real(m);
        x.accumulate_grad(dx);
    });
    return out;
}

// ---------------------------------------------------------------------------
// reductions

template <typename Real>
TensorT<Real> sum(const TensorT<Real>& x) {
    Real s = Real(0);
    for (Real v : x.data()) s += v;
    auto out = TensorT<Real>::scalar(s);
    detail::record_op<Real>("sum", out, {&x}, [x, out]() {
        if (!out.has_grad() || !x.requires_grad()) return;
        x.accumulate_grad(std::vector<Real>(x.size(), out.grad()[0]));
    });
    return out;
}

template <typename Real>
TensorT<Real> mean(const TensorT<Real>& x) {
    Real s = Real(0);
    for (Real v : x.data()) s += v;
    auto out = TensorT<Real>::scalar(s / Real(x.size()));
    detail::record_op<Real>("mean", out, {&x}, [x, out]() {
        if (!out.has_grad() || !x.requires_grad()) return;
        x.accumulate_grad(std::vector<Real>(x.size(), out.grad()[0] / Real(x.size())));
    });
    return out;
}

// ---------------------------------------------------------------------------
// classification heads

// L2-normalizes each row. A zero-norm row means a degenerate feature and is
// rejected rather than clamped; the epsilon floor only guards the division
// on the error path.
template <typename Real>
TensorT<Real> normalize_rows(const TensorT<Real>& x) {
    const bool vec = x.rank() == 1;
    if (!vec) detail::require_rank2(x, "normalize_rows");
    const std::size_t d = vec ? x.shape()[0] : x.cols();
    const std::size_t m = vec ? 1 : x.rows();
    auto out = TensorT<Real>::zeros(x.shape());
    std::vector<Real> norms(m);
    for (std::size_t r = 0; r < m; ++r) {
        Real sq = Real(0);
        for (std::size_t i = 0; i < d; ++i) sq += x.at(r * d + i) * x.at(r * d + i);
        const Real nrm = std::sqrt(sq);
        if (nrm == Real(0)) {
            throw ContractError("normalize_rows: row " + std::to_string(r) + " has zero norm");
        }
        norms[r] = nrm;
        for (std::size_t i = 0; i < d; ++i) out.at(r * d + i) = x.at(r * d + i) / nrm;
    }
    detail::record_op<Real>("normalize_rows", out, {&x}, [x, out, norms, m, d]() {
        if (!out.has_grad() || !x.requires_grad()) return;
        const auto& g = out.grad();
        std::vector<Real> dx(x.size());
        for (std::size_t r = 0; r < m; ++r) {
            Real dot = Real(0);
            for (std::size_t i = 0; i < d; ++i) dot += g[r * d + i] * out.at(r * d + i);
            for (std::size_t i = 0; i < d; ++i) {
                dx[r * d + i] = (g[r * d + i] - out.at(r * d + i) * dot) / norms[r];
            }
        }
        x.accumulate_grad(dx);
    });
    return out;
}

// Mean negative log-likelihood of softmax(logits) at the given labels,
// computed through a shifted log-sum-exp.
template <typename Real>
TensorT<Real> cross_entropy_logits(const TensorT<Real>& logits, const std::vector<int>& labels) {
    detail::require_rank2(logits, "cross_entropy_logits");
    const std::size_t m = logits.rows(), c = logits.cols();
    if (labels.size() != m) {
        throw DimensionError("cross_entropy_logits: " + std::to_string(labels.size()) +
                             " labels for " + std::to_string(m) + " rows");
    }
    for (int l : labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= c) {
            throw ContractError("cross_entropy_logits: label " + std::to_string(l) +
                                " outside [0," + std::to_string(c) + ")");
        }
    }
    Real total = Real(0);
    for (std::size_t r = 0; r < m; ++r) {
        Real mx = logits.at(r, 0);
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits.at(r, j));
        Real denom = Real(0);
        for (std::size_t j = 0; j < c; ++j) denom += std::exp(logits.at(r, j) - mx);
        const Real lse = std::log(denom) + mx;
        total += lse - logits.at(r, static_cast<std::size_t>(labels[r]));
    }
    auto out = TensorT<Real>::scalar(total / Real(m));
    detail::record_op<Real>("cross_entropy_logits", out, {&logits}, [logits, out, labels, m, c]() {
        if (!out.has_grad() || !logits.requires_grad()) return;
        const Real gs = out.grad()[0];
        std::vector<Real> dz(m * c);
        for (std::size_t r = 0; r < m; ++r) {
            Real mx = logits.at(r, 0);
            for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits.at(r, j));
            Real denom = Real(0);
            for (std::size_t j = 0; j < c; ++j) denom += std::exp(logits.at(r, j) - mx);
            for (std::size_t j = 0; j < c; ++j) {
                const Real p = std::exp(logits.at(r, j) - mx) / denom;
                const Real onehot = (static_cast<std::size_t>(labels[r]) == j) ? Real(1) : Real(0);
                dz[r * c + j] = gs * (p - onehot) / Real(m);
            }
        }
        logits.accumulate_grad(dz);
    });
    return out;
}

} // namespace adaptcl

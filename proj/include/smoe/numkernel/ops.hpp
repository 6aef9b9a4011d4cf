#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "smoe/numkernel/tape.hpp"
#include "smoe/numkernel/tensor.hpp"

// Differentiable primitives recorded on a Tape. Every op checks shapes up
// front and throws DimensionError naming the offending shapes.

namespace smoe {

namespace detail {

inline void require_matrix(const Tensor& t, const char* op) {
    if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got shape " + to_string(t.shape()));
}

inline void require_same_tape(Var a, Var b) {
    if (a.tape != b.tape) throw std::invalid_argument("operands recorded on different tapes");
}

// Plain dense product c = a * b, optionally with a or b transposed.
inline Tensor gemm(const Tensor& a, bool ta, const Tensor& b, bool tb) {
    const std::size_t m = ta ? a.dim(1) : a.dim(0);
    const std::size_t k = ta ? a.dim(0) : a.dim(1);
    const std::size_t n = tb ? b.dim(0) : b.dim(1);
    Tensor c({m, n});
    const std::size_t lda = a.dim(1), ldb = b.dim(1);
    const double* A = a.data().data();
    const double* B = b.data().data();
    double* C = c.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t t = 0; t < k; ++t) {
            const double av = ta ? A[t * lda + i] : A[i * lda + t];
            if (av == 0.0) continue;
            double* crow = C + i * n;
            if (!tb) {
                const double* brow = B + t * ldb;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            } else {
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * B[j * ldb + t];
            }
        }
    }
    return c;
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_matrix(a, "matmul");
    detail::require_matrix(b, "matmul");
    if (a.dim(1) != b.dim(0))
        throw DimensionError("matmul: inner dimensions differ, " + to_string(a.shape()) + " x " + to_string(b.shape()));
    return detail::gemm(a, false, b, false);
}

inline Var matmul(Var a, Var b) {
    detail::require_same_tape(a, b);
    Tensor out = matmul(a.value(), b.value());
    return a.tape->record(std::move(out), {a, b},
                          [a, b](Tape& t, const Tensor& g) {
                              if (t.requires_grad(a.id)) t.accumulate(a.id, detail::gemm(g, false, t.value(b.id), true));
                              if (t.requires_grad(b.id)) t.accumulate(b.id, detail::gemm(t.value(a.id), true, g, false));
                          },
                          "matmul");
}

inline Var transpose(Var a) {
    const Tensor& x = a.value();
    detail::require_matrix(x, "transpose");
    Tensor out({x.dim(1), x.dim(0)});
    for (std::size_t i = 0; i < x.dim(0); ++i)
        for (std::size_t j = 0; j < x.dim(1); ++j) out(j, i) = x(i, j);
    return a.tape->record(std::move(out), {a},
                          [a](Tape& t, const Tensor& g) {
                              Tensor gt({g.dim(1), g.dim(0)});
                              for (std::size_t i = 0; i < g.dim(0); ++i)
                                  for (std::size_t j = 0; j < g.dim(1); ++j) gt(j, i) = g(i, j);
                              t.accumulate(a.id, gt);
                          },
                          "transpose");
}

inline Var add(Var a, Var b) {
    detail::require_same_tape(a, b);
    a.value().require_same_shape(b.value(), "add");
    Tensor out = a.value();
    out += b.value();
    return a.tape->record(std::move(out), {a, b},
                          [a, b](Tape& t, const Tensor& g) {
                              t.accumulate(a.id, g);
                              t.accumulate(b.id, g);
                          },
                          "add");
}

/// Adds a length-n bias to every row of an (m x n) matrix.
inline Var add_row(Var a, Var bias) {
    detail::require_same_tape(a, bias);
    const Tensor& x = a.value();
    const Tensor& b = bias.value();
    detail::require_matrix(x, "add_row");
    if (b.size() != x.dim(1))
        throw DimensionError("add_row: bias " + to_string(b.shape()) + " does not match rows of " + to_string(x.shape()));
    Tensor out = x;
    for (std::size_t i = 0; i < x.dim(0); ++i)
        for (std::size_t j = 0; j < x.dim(1); ++j) out(i, j) += b[j];
    return a.tape->record(std::move(out), {a, bias},
                          [a, bias](Tape& t, const Tensor& g) {
                              t.accumulate(a.id, g);
                              if (t.requires_grad(bias.id)) {
                                  Tensor gb(t.value(bias.id).shape());
                                  for (std::size_t i = 0; i < g.dim(0); ++i)
                                      for (std::size_t j = 0; j < g.dim(1); ++j) gb[j] += g(i, j);
                                  t.accumulate(bias.id, gb);
                              }
                          },
                          "add_row");
}

inline Var scale(Var a, double s) {
    Tensor out = a.value();
    out *= s;
    return a.tape->record(std::move(out), {a},
                          [a, s](Tape& t, const Tensor& g) {
                              Tensor ga = g;
                              ga *= s;
                              t.accumulate(a.id, ga);
                          },
                          "scale");
}

/// a * s[index], where s is a recorded tensor (e.g. a gate weight vector).
inline Var scale_by(Var a, Var s, std::size_t index) {
    detail::require_same_tape(a, s);
    if (index >= s.value().size())
        throw DimensionError("scale_by: index " + std::to_string(index) + " outside " + to_string(s.value().shape()));
    const double w = s.value()[index];
    Tensor out = a.value();
    out *= w;
    return a.tape->record(std::move(out), {a, s},
                          [a, s, index](Tape& t, const Tensor& g) {
                              if (t.requires_grad(a.id)) {
                                  Tensor ga = g;
                                  ga *= t.value(s.id)[index];
                                  t.accumulate(a.id, ga);
                              }
                              if (t.requires_grad(s.id)) {
                                  const Tensor& x = t.value(a.id);
                                  double dot = 0.0;
                                  for (std::size_t i = 0; i < x.size(); ++i) dot += g[i] * x[i];
                                  Tensor gs(t.value(s.id).shape());
                                  gs[index] = dot;
                                  t.accumulate(s.id, gs);
                              }
                          },
                          "scale_by");
}

/// Elementwise max(0, x); the subgradient at exactly 0 is 0.
inline Var relu(Var a) {
    Tensor out = a.value();
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    return a.tape->record(std::move(out), {a},
                          [a](Tape& t, const Tensor& g) {
                              const Tensor& x = t.value(a.id);
                              Tensor ga(x.shape());
                              for (std::size_t i = 0; i < x.size(); ++i) ga[i] = x[i] > 0.0 ? g[i] : 0.0;
                              t.accumulate(a.id, ga);
                          },
                          "relu");
}

inline Var log(Var a) {
    Tensor out = a.value();
    for (double& v : out.data()) {
        if (v <= 0.0) throw DomainError("log: non-positive input " + std::to_string(v));
        v = std::log(v);
    }
    return a.tape->record(std::move(out), {a},
                          [a](Tape& t, const Tensor& g) {
                              const Tensor& x = t.value(a.id);
                              Tensor ga(x.shape());
                              for (std::size_t i = 0; i < x.size(); ++i) ga[i] = g[i] / x[i];
                              t.accumulate(a.id, ga);
                          },
                          "log");
}

inline Var sum(Var a) {
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    return a.tape->record(Tensor::scalar(s), {a},
                          [a](Tape& t, const Tensor& g) { t.accumulate(a.id, Tensor(t.value(a.id).shape(), g[0])); },
                          "sum");
}

inline Var mean(Var a) {
    const double n = static_cast<double>(a.value().size());
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    return a.tape->record(Tensor::scalar(s / n), {a},
                          [a, n](Tape& t, const Tensor& g) {
                              t.accumulate(a.id, Tensor(t.value(a.id).shape(), g[0] / n));
                          },
                          "mean");
}

/// Sum_i w_i * a_i as a scalar.
inline Var weighted_sum(Var a, std::vector<double> weights) {
    if (weights.size() != a.value().size())
        throw DimensionError("weighted_sum: " + std::to_string(weights.size()) + " weights for shape " +
                             to_string(a.value().shape()));
    double s = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * a.value()[i];
    return a.tape->record(Tensor::scalar(s), {a},
                          [a, w = std::move(weights)](Tape& t, const Tensor& g) {
                              Tensor ga(t.value(a.id).shape());
                              for (std::size_t i = 0; i < w.size(); ++i) ga[i] = g[0] * w[i];
                              t.accumulate(a.id, ga);
                          },
                          "weighted_sum");
}

namespace detail {

struct AxisLayout {
    std::size_t outer = 1, n = 1, inner = 1;
};

inline AxisLayout axis_layout(const Shape& shape, std::size_t axis) {
    if (axis >= shape.size())
        throw DimensionError("axis " + std::to_string(axis) + " invalid for shape " + to_string(shape));
    AxisLayout l;
    for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
    l.n = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
    return l;
}

}  // namespace detail

/// Softmax along `axis`, stabilized by subtracting the slice maximum.
inline Tensor softmax(const Tensor& x, std::size_t axis) {
    const auto l = detail::axis_layout(x.shape(), axis);
    Tensor y(x.shape());
    for (std::size_t o = 0; o < l.outer; ++o) {
        for (std::size_t in = 0; in < l.inner; ++in) {
            auto at = [&](std::size_t i) { return (o * l.n + i) * l.inner + in; };
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < l.n; ++i) mx = std::max(mx, x[at(i)]);
            double z = 0.0;
            for (std::size_t i = 0; i < l.n; ++i) {
                y[at(i)] = std::exp(x[at(i)] - mx);
                z += y[at(i)];
            }
            for (std::size_t i = 0; i < l.n; ++i) y[at(i)] /= z;
        }
    }
    return y;
}

inline Var softmax(Var a, std::size_t axis) {
    Tensor y = softmax(a.value(), axis);
    return a.tape->record(std::move(y), {a},
                          [a, axis](Tape& t, const Tensor& g) {
                              // Output is the node right after a; recompute to avoid self-reference.
                              const Tensor y = softmax(t.value(a.id), axis);
                              const auto l = detail::axis_layout(y.shape(), axis);
                              Tensor ga(y.shape());
                              for (std::size_t o = 0; o < l.outer; ++o) {
                                  for (std::size_t in = 0; in < l.inner; ++in) {
                                      auto at = [&](std::size_t i) { return (o * l.n + i) * l.inner + in; };
                                      double dot = 0.0;
                                      for (std::size_t i = 0; i < l.n; ++i) dot += y[at(i)] * g[at(i)];
                                      for (std::size_t i = 0; i < l.n; ++i) ga[at(i)] = y[at(i)] * (g[at(i)] - dot);
                                  }
                              }
                              t.accumulate(a.id, ga);
                          },
                          "softmax");
}

/// Per last-axis slice: (x - mean) / sqrt(var + eps) * gamma + beta, with
/// population variance.
inline Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5) {
    if (!(eps > 0.0)) throw DomainError("layer_norm: eps must be positive");
    detail::require_same_tape(x, gamma);
    detail::require_same_tape(x, beta);
    const Tensor& xv = x.value();
    const std::size_t n = xv.shape().back();
    if (gamma.value().size() != n || beta.value().size() != n)
        throw DimensionError("layer_norm: gamma " + to_string(gamma.value().shape()) + " / beta " +
                             to_string(beta.value().shape()) + " do not match last axis of " + to_string(xv.shape()));
    const std::size_t rows = xv.size() / n;
    auto xhat = std::make_shared<Tensor>(xv.shape());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    Tensor out(xv.shape());
    const Tensor& gv = gamma.value();
    const Tensor& bv = beta.value();
    for (std::size_t r = 0; r < rows; ++r) {
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += xv[r * n + j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double c = xv[r * n + j] - mu;
            var += c * c;
        }
        var /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t j = 0; j < n; ++j) {
            const double h = (xv[r * n + j] - mu) * is;
            (*xhat)[r * n + j] = h;
            out[r * n + j] = h * gv[j] + bv[j];
        }
    }
    return x.tape->record(
        std::move(out), {x, gamma, beta},
        [x, gamma, beta, n, rows, xhat, inv_std](Tape& t, const Tensor& g) {
            const Tensor& gv = t.value(gamma.id);
            if (t.requires_grad(x.id)) {
                Tensor gx(t.value(x.id).shape());
                std::vector<double> dh(n);
                for (std::size_t r = 0; r < rows; ++r) {
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        dh[j] = g[r * n + j] * gv[j];
                        m1 += dh[j];
                        m2 += dh[j] * (*xhat)[r * n + j];
                    }
                    m1 /= static_cast<double>(n);
                    m2 /= static_cast<double>(n);
                    for (std::size_t j = 0; j < n; ++j)
                        gx[r * n + j] = (*inv_std)[r] * (dh[j] - m1 - (*xhat)[r * n + j] * m2);
                }
                t.accumulate(x.id, gx);
            }
            if (t.requires_grad(gamma.id) || t.requires_grad(beta.id)) {
                Tensor gg(t.value(gamma.id).shape()), gb(t.value(beta.id).shape());
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < n; ++j) {
                        gg[j] += g[r * n + j] * (*xhat)[r * n + j];
                        gb[j] += g[r * n + j];
                    }
                t.accumulate(gamma.id, gg);
                t.accumulate(beta.id, gb);
            }
        },
        "layer_norm");
}

inline Var concat_cols(Var a, Var b) {
    detail::require_same_tape(a, b);
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    detail::require_matrix(x, "concat_cols");
    detail::require_matrix(y, "concat_cols");
    if (x.dim(0) != y.dim(0))
        throw DimensionError("concat_cols: row counts differ, " + to_string(x.shape()) + " vs " + to_string(y.shape()));
    const std::size_t m = x.dim(0), p = x.dim(1), q = y.dim(1);
    Tensor out({m, p + q});
    for (std::size_t i = 0; i < m; ++i) {
        std::copy_n(x.row(i).begin(), p, out.row(i).begin());
        std::copy_n(y.row(i).begin(), q, out.row(i).begin() + static_cast<std::ptrdiff_t>(p));
    }
    return a.tape->record(std::move(out), {a, b},
                          [a, b, m, p, q](Tape& t, const Tensor& g) {
                              Tensor ga({m, p}), gb({m, q});
                              for (std::size_t i = 0; i < m; ++i) {
                                  for (std::size_t j = 0; j < p; ++j) ga(i, j) = g(i, j);
                                  for (std::size_t j = 0; j < q; ++j) gb(i, j) = g(i, p + j);
                              }
                              t.accumulate(a.id, ga);
                              t.accumulate(b.id, gb);
                          },
                          "concat_cols");
}

inline Var concat_rows(Var a, Var b) {
    detail::require_same_tape(a, b);
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    detail::require_matrix(x, "concat_rows");
    detail::require_matrix(y, "concat_rows");
    if (x.dim(1) != y.dim(1))
        throw DimensionError("concat_rows: column counts differ, " + to_string(x.shape()) + " vs " + to_string(y.shape()));
    const std::size_t m1 = x.dim(0), m2 = y.dim(0), n = x.dim(1);
    std::vector<double> data(x.values());
    data.insert(data.end(), y.values().begin(), y.values().end());
    return a.tape->record(Tensor({m1 + m2, n}, std::move(data)), {a, b},
                          [a, b, m1, m2, n](Tape& t, const Tensor& g) {
                              const auto& gd = g.values();
                              t.accumulate(a.id, Tensor({m1, n}, std::vector<double>(gd.begin(), gd.begin() + m1 * n)));
                              t.accumulate(b.id, Tensor({m2, n}, std::vector<double>(gd.begin() + m1 * n, gd.end())));
                          },
                          "concat_rows");
}

/// Embedding lookup: row ids[i] of table becomes output row i.
inline Var gather_rows(Var table, std::vector<std::size_t> ids) {
    const Tensor& tv = table.value();
    detail::require_matrix(tv, "gather_rows");
    if (ids.empty()) throw DimensionError("gather_rows: empty id list");
    const std::size_t n = tv.dim(1);
    Tensor out({ids.size(), n});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= tv.dim(0))
            throw DimensionError("gather_rows: id " + std::to_string(ids[i]) + " outside table " + to_string(tv.shape()));
        std::copy_n(tv.row(ids[i]).begin(), n, out.row(i).begin());
    }
    return table.tape->record(std::move(out), {table},
                              [table, ids = std::move(ids), n](Tape& t, const Tensor& g) {
                                  Tensor gt(t.value(table.id).shape());
                                  for (std::size_t i = 0; i < ids.size(); ++i)
                                      for (std::size_t j = 0; j < n; ++j) gt(ids[i], j) += g(i, j);
                                  t.accumulate(table.id, gt);
                              },
                              "gather_rows");
}

/// Output row s is the mean of the listed input rows; an empty list yields a zero row.
inline Var segment_mean(Var a, std::vector<std::vector<std::size_t>> segments) {
    const Tensor& x = a.value();
    detail::require_matrix(x, "segment_mean");
    if (segments.empty()) throw DimensionError("segment_mean: no segments");
    const std::size_t n = x.dim(1);
    Tensor out({segments.size(), n});
    for (std::size_t s = 0; s < segments.size(); ++s) {
        if (segments[s].empty()) continue;
        const double w = 1.0 / static_cast<double>(segments[s].size());
        for (std::size_t r : segments[s]) {
            if (r >= x.dim(0))
                throw DimensionError("segment_mean: row " + std::to_string(r) + " outside " + to_string(x.shape()));
            for (std::size_t j = 0; j < n; ++j) out(s, j) += w * x(r, j);
        }
    }
    return a.tape->record(std::move(out), {a},
                          [a, segs = std::move(segments), n](Tape& t, const Tensor& g) {
                              Tensor ga(t.value(a.id).shape());
                              for (std::size_t s = 0; s < segs.size(); ++s) {
                                  if (segs[s].empty()) continue;
                                  const double w = 1.0 / static_cast<double>(segs[s].size());
                                  for (std::size_t r : segs[s])
                                      for (std::size_t j = 0; j < n; ++j) ga(r, j) += w * g(s, j);
                              }
                              t.accumulate(a.id, ga);
                          },
                          "segment_mean");
}

/// Mean over rows: (m x n) -> (1 x n).
inline Var mean_rows(Var a) {
    detail::require_matrix(a.value(), "mean_rows");
    std::vector<std::size_t> all(a.value().dim(0));
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return segment_mean(a, {std::move(all)});
}

/// Constant sparse matrix in coordinate form.
struct SparseMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    struct Entry {
        std::size_t row, col;
        double value;
    };
    std::vector<Entry> entries;

    Tensor dense() const {
        Tensor t({rows, cols});
        for (const auto& e : entries) t(e.row, e.col) += e.value;
        return t;
    }
};

/// A * x for a constant sparse A; differentiable w.r.t. x only.
inline Var sparse_matmul(std::shared_ptr<const SparseMatrix> a, Var x) {
    const Tensor& xv = x.value();
    detail::require_matrix(xv, "sparse_matmul");
    if (a->cols != xv.dim(0))
        throw DimensionError("sparse_matmul: [" + std::to_string(a->rows) + "," + std::to_string(a->cols) + "] x " +
                             to_string(xv.shape()));
    const std::size_t n = xv.dim(1);
    Tensor out({a->rows, n});
    for (const auto& e : a->entries)
        for (std::size_t j = 0; j < n; ++j) out(e.row, j) += e.value * xv(e.col, j);
    return x.tape->record(std::move(out), {x},
                          [a, x, n](Tape& t, const Tensor& g) {
                              Tensor gx(t.value(x.id).shape());
                              for (const auto& e : a->entries)
                                  for (std::size_t j = 0; j < n; ++j) gx(e.col, j) += e.value * g(e.row, j);
                              t.accumulate(x.id, gx);
                          },
                          "sparse_matmul");
}

/// Neighborhood-restricted attention: for node k, weights
/// alpha_kj = softmax_{j in N(k)}(scale * z_k . z_j) and output
/// sum_j alpha_kj * v_j. Attention weights are written to `alpha_out`
/// (one row per node, aligned with `neighbors[k]`) when non-null.
inline Var neighbor_attention(Var z, Var v, std::shared_ptr<const std::vector<std::vector<std::size_t>>> neighbors,
                              double scale, std::vector<std::vector<double>>* alpha_out = nullptr) {
    detail::require_same_tape(z, v);
    const Tensor& zv = z.value();
    const Tensor& vv = v.value();
    detail::require_matrix(zv, "neighbor_attention");
    detail::require_matrix(vv, "neighbor_attention");
    const std::size_t nodes = zv.dim(0), dz = zv.dim(1), dv = vv.dim(1);
    if (vv.dim(0) != nodes || neighbors->size() != nodes)
        throw DimensionError("neighbor_attention: node counts differ, " + to_string(zv.shape()) + " / " +
                             to_string(vv.shape()) + " / " + std::to_string(neighbors->size()) + " neighborhoods");
    auto alpha = std::make_shared<std::vector<std::vector<double>>>(nodes);
    Tensor out({nodes, dv});
    for (std::size_t k = 0; k < nodes; ++k) {
        const auto& nb = (*neighbors)[k];
        if (nb.empty()) throw DomainError("neighbor_attention: node " + std::to_string(k) + " has no neighbors");
        std::vector<double>& a = (*alpha)[k];
        a.resize(nb.size());
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < nb.size(); ++i) {
            if (nb[i] >= nodes) throw DimensionError("neighbor_attention: neighbor index out of range");
            double dot = 0.0;
            for (std::size_t c = 0; c < dz; ++c) dot += zv(k, c) * zv(nb[i], c);
            a[i] = scale * dot;
            mx = std::max(mx, a[i]);
        }
        double s = 0.0;
        for (double& x : a) {
            x = std::exp(x - mx);
            s += x;
        }
        for (double& x : a) x /= s;
        for (std::size_t i = 0; i < nb.size(); ++i)
            for (std::size_t c = 0; c < dv; ++c) out(k, c) += a[i] * vv(nb[i], c);
    }
    if (alpha_out) *alpha_out = *alpha;
    return z.tape->record(
        std::move(out), {z, v},
        [z, v, neighbors, alpha, scale, nodes, dz, dv](Tape& t, const Tensor& g) {
            const Tensor& zv = t.value(z.id);
            const Tensor& vv = t.value(v.id);
            Tensor gz(zv.shape()), gvv(vv.shape());
            std::vector<double> ds;
            for (std::size_t k = 0; k < nodes; ++k) {
                const auto& nb = (*neighbors)[k];
                const auto& a = (*alpha)[k];
                ds.assign(nb.size(), 0.0);
                double weighted = 0.0;
                for (std::size_t i = 0; i < nb.size(); ++i) {
                    double da = 0.0;
                    for (std::size_t c = 0; c < dv; ++c) {
                        da += g(k, c) * vv(nb[i], c);
                        gvv(nb[i], c) += a[i] * g(k, c);
                    }
                    ds[i] = da;
                    weighted += a[i] * da;
                }
                for (std::size_t i = 0; i < nb.size(); ++i) {
                    const double dlogit = scale * a[i] * (ds[i] - weighted);
                    const std::size_t j = nb[i];
                    for (std::size_t c = 0; c < dz; ++c) {
                        gz(k, c) += dlogit * zv(j, c);
                        gz(j, c) += dlogit * zv(k, c);
                    }
                }
            }
            t.accumulate(z.id, gz);
            t.accumulate(v.id, gvv);
        },
        "neighbor_attention");
}

/// softmax(q k^T / (sqrt(d) if scaled else 1)) v, rows of q attending over rows of k.
inline Var attention(Var q, Var k, Var v, bool scaled) {
    detail::require_same_tape(q, k);
    detail::require_same_tape(q, v);
    const Tensor& qv = q.value();
    const Tensor& kv = k.value();
    const Tensor& vv = v.value();
    detail::require_matrix(qv, "attention");
    detail::require_matrix(kv, "attention");
    detail::require_matrix(vv, "attention");
    if (qv.dim(1) != kv.dim(1))
        throw DimensionError("attention: query " + to_string(qv.shape()) + " and key " + to_string(kv.shape()) +
                             " feature widths differ");
    if (kv.dim(0) != vv.dim(0))
        throw DimensionError("attention: key " + to_string(kv.shape()) + " and value " + to_string(vv.shape()) +
                             " sequence lengths differ");
    const double width = static_cast<double>(qv.dim(1));
    Var logits = matmul(q, transpose(k));
    if (scaled) logits = scale(logits, 1.0 / std::sqrt(width));
    return matmul(softmax(logits, 1), v);
}

/// Cross-entropy of a single row of logits against a class index.
inline Var cross_entropy(Var logits, std::size_t target) {
    const Tensor& z = logits.value();
    const std::size_t k = z.size();
    if (target >= k)
        throw DomainError("cross_entropy: target " + std::to_string(target) + " outside " + std::to_string(k) + " classes");
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : z.data()) mx = std::max(mx, v);
    double s = 0.0;
    for (double v : z.data()) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    return logits.tape->record(Tensor::scalar(lse - z[target]), {logits},
                               [logits, target, mx, s](Tape& t, const Tensor& g) {
                                   const Tensor& z = t.value(logits.id);
                                   Tensor gz(z.shape());
                                   for (std::size_t i = 0; i < z.size(); ++i)
                                       gz[i] = g[0] * (std::exp(z[i] - mx) / s - (i == target ? 1.0 : 0.0));
                                   t.accumulate(logits.id, gz);
                               },
                               "cross_entropy");
}

inline double sigmoid(double z) {
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

/// Mean binary cross-entropy of logits against {0,1} labels.
inline Var binary_cross_entropy(Var logits, std::vector<double> labels) {
    const Tensor& z = logits.value();
    if (labels.size() != z.size())
        throw DimensionError("binary_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                             to_string(z.shape()));
    const double m = static_cast<double>(z.size());
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double x = z[i];
        s += std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))) - labels[i] * x;
    }
    return logits.tape->record(Tensor::scalar(s / m), {logits},
                               [logits, y = std::move(labels), m](Tape& t, const Tensor& g) {
                                   const Tensor& z = t.value(logits.id);
                                   Tensor gz(z.shape());
                                   for (std::size_t i = 0; i < z.size(); ++i) gz[i] = g[0] * (sigmoid(z[i]) - y[i]) / m;
                                   t.accumulate(logits.id, gz);
                               },
                               "binary_cross_entropy");
}

}  // namespace smoe

#pragma once

// Differentiable operations over ad::Tensor. Matrix products go through
// Eigen maps over the row-major buffers; everything else is plain loops with
// a fixed summation order, so results are bit-reproducible.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "errors.hpp"
#include "tensor.hpp"

namespace hagcn::ad {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

namespace detail {

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// For every flat index of `out`, the flat index of `in` it reads under
// trailing-dimension broadcasting.
inline std::vector<std::size_t> broadcast_index(const Shape& out, const Shape& in) {
    const std::size_t r = out.size();
    std::vector<std::size_t> in_stride(r, 0);
    std::size_t stride = 1;
    for (std::size_t i = 0; i < in.size(); ++i) {
        const std::size_t axis = r - 1 - i;
        const std::size_t d = in[in.size() - 1 - i];
        in_stride[axis] = d == 1 ? 0 : stride;
        stride *= d;
    }
    const std::size_t n = numel(out);
    std::vector<std::size_t> idx(n);
    std::vector<std::size_t> coord(r, 0);
    std::size_t pos = 0;
    for (std::size_t f = 0; f < n; ++f) {
        idx[f] = pos;
        for (std::size_t a = r; a-- > 0;) {
            ++coord[a];
            pos += in_stride[a];
            if (coord[a] < out[a]) break;
            pos -= in_stride[a] * coord[a];
            coord[a] = 0;
        }
    }
    return idx;
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op) {
    if (t.rank() != rank)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

namespace detail {

// Input strides of `in` laid over `out` (0 on broadcast axes).
inline Shape broadcast_strides(const Shape& out, const Shape& in) {
    Shape strides(out.size(), 0);
    std::size_t stride = 1;
    for (std::size_t i = 0; i < in.size(); ++i) {
        const std::size_t axis = out.size() - 1 - i;
        const std::size_t d = in[in.size() - 1 - i];
        strides[axis] = d == 1 ? 0 : stride;
        stride *= d;
    }
    return strides;
}

// Calls f(out_index, a_index, b_index) for every output element, in order.
template <typename F>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, F&& f) {
    const std::size_t r = out.size();
    const Shape sa = broadcast_strides(out, a), sb = broadcast_strides(out, b);
    if (r == 0) {
        f(std::size_t{0}, std::size_t{0}, std::size_t{0});
        return;
    }
    const std::size_t inner = out[r - 1], ia_step = sa[r - 1], ib_step = sb[r - 1];
    const std::size_t outer = numel(out) / std::max<std::size_t>(inner, 1);
    std::vector<std::size_t> coord(r, 0);
    std::size_t pa = 0, pb = 0, po = 0;
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t j = 0; j < inner; ++j) f(po + j, pa + j * ia_step, pb + j * ib_step);
        po += inner;
        for (std::size_t ax = r - 1; ax-- > 0;) {
            ++coord[ax];
            pa += sa[ax];
            pb += sb[ax];
            if (coord[ax] < out[ax]) break;
            pa -= sa[ax] * coord[ax];
            pb -= sb[ax] * coord[ax];
            coord[ax] = 0;
        }
    }
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() == b.shape()) {
        std::vector<T> v(a.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] + b.values()[i];
        return make_result<T>("add", a.shape(), std::move(v), {&a, &b}, [pa = a.node(), pb = b.node()](Node<T>& o) {
            for (auto* p : {pa.get(), pb.get()}) {
                if (!p->requires_grad) continue;
                auto& g = p->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
            }
        });
    }
    Shape shape = detail::broadcast_shape(a.shape(), b.shape(), "add");
    std::vector<T> v(numel(shape));
    const T* av = a.values().data();
    const T* bv = b.values().data();
    detail::for_each_broadcast(shape, a.shape(), b.shape(),
                               [&](std::size_t i, std::size_t ia, std::size_t ib) { v[i] = av[ia] + bv[ib]; });
    return make_result<T>("add", shape, std::move(v), {&a, &b}, [pa = a.node(), pb = b.node()](Node<T>& o) {
        T* ga = pa->requires_grad ? pa->ensure_grad().data() : nullptr;
        T* gb = pb->requires_grad ? pb->ensure_grad().data() : nullptr;
        detail::for_each_broadcast(o.shape, pa->shape, pb->shape, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            if (ga) ga[ia] += o.grad[i];
            if (gb) gb[ib] += o.grad[i];
        });
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    Shape shape = detail::broadcast_shape(a.shape(), b.shape(), "mul");
    std::vector<T> v(numel(shape));
    const T* av = a.values().data();
    const T* bv = b.values().data();
    detail::for_each_broadcast(shape, a.shape(), b.shape(),
                               [&](std::size_t i, std::size_t ia, std::size_t ib) { v[i] = av[ia] * bv[ib]; });
    return make_result<T>("mul", shape, std::move(v), {&a, &b}, [pa = a.node(), pb = b.node()](Node<T>& o) {
        T* ga = pa->requires_grad ? pa->ensure_grad().data() : nullptr;
        T* gb = pb->requires_grad ? pb->ensure_grad().data() : nullptr;
        const T* av = pa->value.data();
        const T* bv = pb->value.data();
        detail::for_each_broadcast(o.shape, pa->shape, pb->shape, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            if (ga) ga[ia] += o.grad[i] * bv[ib];
            if (gb) gb[ib] += o.grad[i] * av[ia];
        });
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    std::vector<T> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * s;
    return make_result<T>("scale", a.shape(), std::move(v), {&a}, [pa = a.node(), s](Node<T>& o) {
        auto& g = pa->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * s;
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return add(a, scale(b, T(-1)));
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    std::vector<T> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] > T(0) ? a.values()[i] : T(0);
    return make_result<T>("relu", a.shape(), std::move(v), {&a}, [pa = a.node()](Node<T>& o) {
        auto& g = pa->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += pa->value[i] > T(0) ? o.grad[i] : T(0);
    });
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T s = 0;
    for (T x : a.values()) s += x;
    return make_result<T>("sum", {}, {s}, {&a}, [pa = a.node()](Node<T>& o) {
        auto& g = pa->ensure_grad();
        for (auto& x : g) x += o.grad[0];
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (numel(shape) != a.size())
        throw ShapeError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
    std::vector<T> v(a.values().begin(), a.values().end());
    return make_result<T>("reshape", std::move(shape), std::move(v), {&a}, [pa = a.node()](Node<T>& o) {
        auto& g = pa->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    });
}

// Swaps the last two axes.
template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& a) {
    if (a.rank() < 2) throw ShapeError("transpose_last2: rank < 2");
    Shape shape = a.shape();
    const std::size_t m = shape[shape.size() - 2], n = shape.back();
    std::swap(shape[shape.size() - 2], shape.back());
    const std::size_t batch = a.size() / (m * n);
    std::vector<T> v(a.size());
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) v[b * m * n + j * m + i] = a.values()[b * m * n + i * n + j];
    return make_result<T>("transpose", std::move(shape), std::move(v), {&a}, [pa = a.node(), m, n, batch](Node<T>& o) {
        auto& g = pa->ensure_grad();
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) g[b * m * n + i * n + j] += o.grad[b * m * n + j * m + i];
    });
}

// Mean over every axis after the second: [N, C, ...] -> [N, C].
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    if (x.rank() < 3) throw ShapeError("global_avg_pool: need rank >= 3, got " + shape_str(x.shape()));
    const std::size_t nc = x.dim(0) * x.dim(1);
    const std::size_t inner = x.size() / nc;
    std::vector<T> v(nc);
    for (std::size_t i = 0; i < nc; ++i) {
        T s = 0;
        for (std::size_t j = 0; j < inner; ++j) s += x.values()[i * inner + j];
        v[i] = s / static_cast<T>(inner);
    }
    return make_result<T>("global_avg_pool", {x.dim(0), x.dim(1)}, std::move(v), {&x},
                          [px = x.node(), nc, inner](Node<T>& o) {
                              auto& g = px->ensure_grad();
                              const T w = T(1) / static_cast<T>(inner);
                              for (std::size_t i = 0; i < nc; ++i)
                                  for (std::size_t j = 0; j < inner; ++j) g[i * inner + j] += o.grad[i] * w;
                          });
}

// ---------------------------------------------------------------------------
// Softmax and loss

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis = -1) {
    const int r = static_cast<int>(x.rank());
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError("softmax: axis out of range");
    const std::size_t len = x.dim(static_cast<std::size_t>(axis));
    std::size_t post = 1;
    for (int a = axis + 1; a < r; ++a) post *= x.dim(static_cast<std::size_t>(a));
    const std::size_t pre = x.size() / (len * post);
    std::vector<T> v(x.size());
    for (std::size_t p = 0; p < pre; ++p) {
        for (std::size_t q = 0; q < post; ++q) {
            const std::size_t base = p * len * post + q;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, x.values()[base + i * post]);
            T s = 0;
            for (std::size_t i = 0; i < len; ++i) {
                const T e = std::exp(x.values()[base + i * post] - mx);
                v[base + i * post] = e;
                s += e;
            }
            for (std::size_t i = 0; i < len; ++i) v[base + i * post] /= s;
        }
    }
    auto out = make_result<T>("softmax", x.shape(), std::move(v), {&x}, nullptr);
    if (out.requires_grad()) {
        // The rule needs the output values; hold them by copy to avoid a cycle.
        out.node()->backward_fn = [px = x.node(), y = out.node()->value, pre, len, post](Node<T>& o) {
            auto& g = px->ensure_grad();
            for (std::size_t p = 0; p < pre; ++p) {
                for (std::size_t q = 0; q < post; ++q) {
                    const std::size_t base = p * len * post + q;
                    T dot = 0;
                    for (std::size_t i = 0; i < len; ++i) dot += o.grad[base + i * post] * y[base + i * post];
                    for (std::size_t i = 0; i < len; ++i)
                        g[base + i * post] += y[base + i * post] * (o.grad[base + i * post] - dot);
                }
            }
        };
    }
    return out;
}

// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
    detail::require_rank(logits, 2, "cross_entropy");
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    if (labels.size() != n) throw ShapeError("cross_entropy: label count does not match batch");
    std::vector<T> prob(n * k);
    T loss = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
            throw ValidationError("cross_entropy: label " + std::to_string(labels[i]) + " out of range [0," +
                                  std::to_string(k) + ")");
        const T* row = logits.values().data() + i * k;
        T mx = *std::max_element(row, row + k);
        T s = 0;
        for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - mx);
        const T lse = mx + std::log(s);
        for (std::size_t j = 0; j < k; ++j) prob[i * k + j] = std::exp(row[j] - lse);
        loss += lse - row[labels[i]];
    }
    loss /= static_cast<T>(n);
    std::vector<int> lab(labels.begin(), labels.end());
    return make_result<T>("cross_entropy", {}, {loss}, {&logits},
                          [pl = logits.node(), prob = std::move(prob), lab = std::move(lab), n, k](Node<T>& o) {
                              auto& g = pl->ensure_grad();
                              const T w = o.grad[0] / static_cast<T>(n);
                              for (std::size_t i = 0; i < n; ++i)
                                  for (std::size_t j = 0; j < k; ++j)
                                      g[i * k + j] += w * (prob[i * k + j] - (static_cast<int>(j) == lab[i] ? T(1) : T(0)));
                          });
}

// ---------------------------------------------------------------------------
// Matrix products

// [..., m, k] x [..., k, n] -> [..., m, n], batch dimensions broadcast.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() < 2 || b.rank() < 2) throw ShapeError("matmul: operands need rank >= 2");
    const std::size_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
    const std::size_t k2 = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
    if (k != k2)
        throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
    const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
    Shape out_batch = detail::broadcast_shape(a_batch, b_batch, "matmul");
    auto ia = detail::broadcast_index(out_batch, a_batch);
    auto ib = detail::broadcast_index(out_batch, b_batch);
    const std::size_t batches = numel(out_batch);

    Shape shape = out_batch;
    shape.push_back(m);
    shape.push_back(n);
    std::vector<T> v(batches * m * n);
    for (std::size_t p = 0; p < batches; ++p) {
        ConstMatMap<T> A(a.values().data() + ia[p] * m * k, m, k);
        ConstMatMap<T> B(b.values().data() + ib[p] * k * n, k, n);
        MatMap<T> C(v.data() + p * m * n, m, n);
        C.noalias() = A * B;
    }
    return make_result<T>(
        "matmul", std::move(shape), std::move(v), {&a, &b},
        [pa = a.node(), pb = b.node(), ia = std::move(ia), ib = std::move(ib), batches, m, k, n](Node<T>& o) {
            for (std::size_t p = 0; p < batches; ++p) {
                ConstMatMap<T> G(o.grad.data() + p * m * n, m, n);
                if (pa->requires_grad) {
                    MatMap<T> GA(pa->ensure_grad().data() + ia[p] * m * k, m, k);
                    ConstMatMap<T> B(pb->value.data() + ib[p] * k * n, k, n);
                    GA.noalias() += G * B.transpose();
                }
                if (pb->requires_grad) {
                    MatMap<T> GB(pb->ensure_grad().data() + ib[p] * k * n, k, n);
                    ConstMatMap<T> A(pa->value.data() + ia[p] * m * k, m, k);
                    GB.noalias() += A.transpose() * G;
                }
            }
        });
}

// Spatial aggregation over hand joints:
//   out[n,c,t,v] = sum_w x[n,c,t,w] * adj[w,v]
// adj is [V,V] (shared) or [N,V,V] (per sample).
template <typename T>
Tensor<T> graph_conv_term(const Tensor<T>& x, const Tensor<T>& adj) {
    detail::require_rank(x, 4, "graph_conv_term");
    const std::size_t N = x.dim(0), V = x.dim(3);
    const bool per_sample = adj.rank() == 3;
    if (!((adj.rank() == 2 || (per_sample && adj.dim(0) == N)) && adj.dim(adj.rank() - 1) == V &&
          adj.dim(adj.rank() - 2) == V))
        throw ShapeError("graph_conv_term: adjacency " + shape_str(adj.shape()) + " incompatible with " +
                         shape_str(x.shape()));
    const std::size_t rows = x.dim(1) * x.dim(2);  // per sample
    std::vector<T> v(x.size());
    if (!per_sample) {
        ConstMatMap<T> X(x.values().data(), N * rows, V);
        ConstMatMap<T> A(adj.values().data(), V, V);
        MatMap<T>(v.data(), N * rows, V).noalias() = X * A;
    } else {
        for (std::size_t s = 0; s < N; ++s) {
            ConstMatMap<T> X(x.values().data() + s * rows * V, rows, V);
            ConstMatMap<T> A(adj.values().data() + s * V * V, V, V);
            MatMap<T>(v.data() + s * rows * V, rows, V).noalias() = X * A;
        }
    }
    return make_result<T>("graph_conv_term", x.shape(), std::move(v), {&x, &adj},
                          [px = x.node(), pa = adj.node(), per_sample, N, rows, V](Node<T>& o) {
                              const std::size_t groups = per_sample ? N : 1;
                              const std::size_t r = per_sample ? rows : N * rows;
                              for (std::size_t s = 0; s < groups; ++s) {
                                  ConstMatMap<T> G(o.grad.data() + s * r * V, r, V);
                                  if (px->requires_grad) {
                                      ConstMatMap<T> A(pa->value.data() + s * V * V, V, V);
                                      MatMap<T>(px->ensure_grad().data() + s * r * V, r, V).noalias() +=
                                          G * A.transpose();
                                  }
                                  if (pa->requires_grad) {
                                      ConstMatMap<T> X(px->value.data() + s * r * V, r, V);
                                      MatMap<T>(pa->ensure_grad().data() + s * V * V, V, V).noalias() +=
                                          X.transpose() * G;
                                  }
                              }
                          });
}

// Fused adaptive spatial step:
//   out[n] = sum_k weight[k] . (x[n] . adj[n,k])
// x [N,Cin,T,V]; adj [N,K,V,V] or [K,V,V]; weight [K,Cout,Cin] -> [N,Cout,T,V].
// Equivalent to K graph_conv_term calls each followed by a 1x1 channel map,
// without materializing the K intermediate tensors.
template <typename T>
Tensor<T> spatial_graph_conv(const Tensor<T>& x, const Tensor<T>& adj, const Tensor<T>& weight) {
    detail::require_rank(x, 4, "spatial_graph_conv");
    detail::require_rank(weight, 3, "spatial_graph_conv");
    const std::size_t N = x.dim(0), Cin = x.dim(1), TT = x.dim(2), V = x.dim(3);
    const std::size_t K = weight.dim(0), Cout = weight.dim(1);
    const bool per_sample = adj.rank() == 4;
    const bool ok_adj = (adj.rank() == 3 || (per_sample && adj.dim(0) == N)) && adj.dim(adj.rank() - 3) == K &&
                        adj.dim(adj.rank() - 2) == V && adj.dim(adj.rank() - 1) == V;
    if (!ok_adj || weight.dim(2) != Cin)
        throw ShapeError("spatial_graph_conv: x " + shape_str(x.shape()) + ", adj " + shape_str(adj.shape()) +
                         ", weight " + shape_str(weight.shape()));
    const std::size_t TV = TT * V;
    std::vector<T> v(N * Cout * TV, T(0));
    RowMatrix<T> z(Cin * TT, V);
    for (std::size_t s = 0; s < N; ++s) {
        ConstMatMap<T> X(x.values().data() + s * Cin * TV, Cin * TT, V);
        MatMap<T> Y(v.data() + s * Cout * TV, Cout, TV);
        for (std::size_t k = 0; k < K; ++k) {
            ConstMatMap<T> A(adj.values().data() + ((per_sample ? s * K : 0) + k) * V * V, V, V);
            z.noalias() = X * A;
            ConstMatMap<T> W(weight.values().data() + k * Cout * Cin, Cout, Cin);
            Y.noalias() += W * Eigen::Map<const RowMatrix<T>>(z.data(), Cin, TV);
        }
    }
    return make_result<T>(
        "spatial_graph_conv", {N, Cout, TT, V}, std::move(v), {&x, &adj, &weight},
        [px = x.node(), pa = adj.node(), pw = weight.node(), per_sample, N, Cin, Cout, TT, V, K, TV](Node<T>& o) {
            RowMatrix<T> z(Cin * TT, V);
            RowMatrix<T> dz(Cin, TV);
            for (std::size_t s = 0; s < N; ++s) {
                ConstMatMap<T> X(px->value.data() + s * Cin * TV, Cin * TT, V);
                ConstMatMap<T> G(o.grad.data() + s * Cout * TV, Cout, TV);
                for (std::size_t k = 0; k < K; ++k) {
                    const std::size_t aoff = ((per_sample ? s * K : 0) + k) * V * V;
                    ConstMatMap<T> A(pa->value.data() + aoff, V, V);
                    ConstMatMap<T> W(pw->value.data() + k * Cout * Cin, Cout, Cin);
                    if (pw->requires_grad) {
                        z.noalias() = X * A;
                        MatMap<T>(pw->ensure_grad().data() + k * Cout * Cin, Cout, Cin).noalias() +=
                            G * Eigen::Map<const RowMatrix<T>>(z.data(), Cin, TV).transpose();
                    }
                    if (!px->requires_grad && !pa->requires_grad) continue;
                    dz.noalias() = W.transpose() * G;
                    Eigen::Map<const RowMatrix<T>> DZ(dz.data(), Cin * TT, V);
                    if (pa->requires_grad)
                        MatMap<T>(pa->ensure_grad().data() + aoff, V, V).noalias() += X.transpose() * DZ;
                    if (px->requires_grad)
                        MatMap<T>(px->ensure_grad().data() + s * Cin * TV, Cin * TT, V).noalias() +=
                            DZ * A.transpose();
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Temporal convolution

struct TemporalConvGeometry {
    std::size_t kernel = 1;
    std::size_t stride = 1;
    std::size_t padding = 0;

    // Output length, or 0 when the window does not fit.
    std::size_t output_length(std::size_t t) const {
        const std::size_t padded = t + 2 * padding;
        if (padded < kernel || stride == 0) return 0;
        return (padded - kernel) / stride + 1;
    }
};

namespace detail {

// col[(c*kt + j), (t'*V + v)] = x[c, t'*stride + j - pad, v] (zero outside).
template <typename T>
void im2col_time(const T* x, std::size_t C, std::size_t TT, std::size_t V, const TemporalConvGeometry& g,
                 std::size_t t_out, T* col) {
    const std::size_t kt = g.kernel;
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t j = 0; j < kt; ++j) {
            T* row = col + (c * kt + j) * t_out * V;
            for (std::size_t to = 0; to < t_out; ++to) {
                const auto ti = static_cast<std::ptrdiff_t>(to * g.stride + j) - static_cast<std::ptrdiff_t>(g.padding);
                T* dst = row + to * V;
                if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(TT)) {
                    std::fill(dst, dst + V, T(0));
                } else {
                    const T* src = x + (c * TT + static_cast<std::size_t>(ti)) * V;
                    std::copy(src, src + V, dst);
                }
            }
        }
    }
}

template <typename T>
void col2im_time(const T* col, std::size_t C, std::size_t TT, std::size_t V, const TemporalConvGeometry& g,
                 std::size_t t_out, T* dx) {
    const std::size_t kt = g.kernel;
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t j = 0; j < kt; ++j) {
            const T* row = col + (c * kt + j) * t_out * V;
            for (std::size_t to = 0; to < t_out; ++to) {
                const auto ti = static_cast<std::ptrdiff_t>(to * g.stride + j) - static_cast<std::ptrdiff_t>(g.padding);
                if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(TT)) continue;
                T* dst = dx + (c * TT + static_cast<std::size_t>(ti)) * V;
                const T* src = row + to * V;
                for (std::size_t v = 0; v < V; ++v) dst[v] += src[v];
            }
        }
    }
}

}  // namespace detail

// x [N,C,T,V], w [Cout,C,kt,1] -> [N,Cout,T',V]; convolution along T only,
// zero padded, independent per vertex.
template <typename T>
Tensor<T> temporal_conv(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride, std::size_t padding) {
    detail::require_rank(x, 4, "temporal_conv");
    detail::require_rank(w, 4, "temporal_conv");
    const std::size_t N = x.dim(0), C = x.dim(1), TT = x.dim(2), V = x.dim(3);
    const std::size_t Cout = w.dim(0), kt = w.dim(2);
    if (w.dim(1) != C || w.dim(3) != 1)
        throw ShapeError("temporal_conv: weight " + shape_str(w.shape()) + " incompatible with " + shape_str(x.shape()));
    if (kt % 2 == 0) throw ShapeError("temporal_conv: kernel length must be odd");
    const TemporalConvGeometry g{kt, stride, padding};
    const std::size_t t_out = g.output_length(TT);
    if (t_out == 0) throw ShapeError("temporal_conv: non-positive output length for T=" + std::to_string(TT));

    const std::size_t cols = t_out * V;
    std::vector<T> v(N * Cout * cols);
    RowMatrix<T> col(C * kt, cols);
    ConstMatMap<T> W(w.values().data(), Cout, C * kt);
    for (std::size_t s = 0; s < N; ++s) {
        detail::im2col_time(x.values().data() + s * C * TT * V, C, TT, V, g, t_out, col.data());
        MatMap<T>(v.data() + s * Cout * cols, Cout, cols).noalias() = W * col;
    }
    return make_result<T>(
        "temporal_conv", {N, Cout, t_out, V}, std::move(v), {&x, &w},
        [px = x.node(), pw = w.node(), g, N, C, TT, V, Cout, kt, t_out, cols](Node<T>& o) {
            RowMatrix<T> col(C * kt, cols);
            RowMatrix<T> dcol(C * kt, cols);
            ConstMatMap<T> W(pw->value.data(), Cout, C * kt);
            for (std::size_t s = 0; s < N; ++s) {
                ConstMatMap<T> G(o.grad.data() + s * Cout * cols, Cout, cols);
                if (pw->requires_grad) {
                    detail::im2col_time(px->value.data() + s * C * TT * V, C, TT, V, g, t_out, col.data());
                    MatMap<T>(pw->ensure_grad().data(), Cout, C * kt).noalias() += G * col.transpose();
                }
                if (px->requires_grad) {
                    dcol.noalias() = W.transpose() * G;
                    detail::col2im_time(dcol.data(), C, TT, V, g, t_out, px->ensure_grad().data() + s * C * TT * V);
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Batch normalization

enum class Mode { train, eval };

inline constexpr double kBatchNormMomentum = 0.9;
inline constexpr double kBatchNormEpsilon = 1e-5;

template <typename T>
struct BatchNormState {
    std::vector<T> running_mean;
    std::vector<T> running_var;

    explicit BatchNormState(std::size_t channels = 0) : running_mean(channels, T(0)), running_var(channels, T(1)) {}
};

namespace detail {

// Visits x as runs of consecutive elements that share one channel:
// f(channel, first, length). Kept axes that are contiguous give runs of the
// trailing extent; otherwise every element is its own run.
class ChannelRuns {
public:
    ChannelRuns(const Shape& shape, const std::vector<std::size_t>& kept_axes) {
        std::size_t channels = 1;
        for (auto a : kept_axes) channels *= shape[a];
        channels_ = channels;
        total_ = numel(shape);
        contiguous_ = kept_axes.back() - kept_axes.front() + 1 == kept_axes.size();
        inner_ = 1;
        for (std::size_t a = kept_axes.back() + 1; a < shape.size(); ++a) inner_ *= shape[a];
        if (!contiguous_) {
            Shape cshape(shape.size(), 1);
            for (auto a : kept_axes) cshape[a] = shape[a];
            auto idx = broadcast_index(shape, cshape);
            table_.assign(idx.begin(), idx.end());
        }
    }

    std::size_t channels() const { return channels_; }

    template <typename F>
    void visit(F&& f) const {
        if (contiguous_) {
            const std::size_t runs = total_ / inner_;
            for (std::size_t r = 0; r < runs; ++r) f(r % channels_, r * inner_, inner_);
        } else {
            for (std::size_t i = 0; i < total_; ++i) f(static_cast<std::size_t>(table_[i]), i, std::size_t{1});
        }
    }

private:
    std::size_t channels_ = 1;
    std::size_t total_ = 0;
    std::size_t inner_ = 1;
    bool contiguous_ = true;
    std::vector<std::uint32_t> table_;
};

}  // namespace detail

// Normalizes x per "channel", where a channel is one coordinate tuple over
// `kept_axes` (sorted); statistics reduce over all other axes. gamma and
// beta have the shape of the kept axes. Running statistics follow
//   running = momentum * running + (1 - momentum) * batch
// with the unbiased batch variance.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const std::vector<std::size_t>& kept_axes, const Tensor<T>& gamma,
                     const Tensor<T>& beta, Mode mode, BatchNormState<T>& state,
                     double eps = kBatchNormEpsilon, double momentum = kBatchNormMomentum) {
    if (kept_axes.empty() || !std::is_sorted(kept_axes.begin(), kept_axes.end()) || kept_axes.back() >= x.rank())
        throw ShapeError("batch_norm: bad kept axes for " + shape_str(x.shape()));
    Shape cshape;
    for (auto a : kept_axes) cshape.push_back(x.dim(a));
    const std::size_t C = numel(cshape);
    if (gamma.size() != C || beta.size() != C)
        throw ShapeError("batch_norm: gamma/beta must have shape " + shape_str(cshape));
    if (state.running_mean.size() != C) state = BatchNormState<T>(C);
    const std::size_t count = x.size() / C;
    if (x.size() == 0 || count == 0) throw ShapeError("batch_norm: zero-size reduction");

    detail::ChannelRuns runs(x.shape(), kept_axes);
    const T* xv = x.values().data();
    std::vector<double> mean_c(C, 0.0), var_c(C, 0.0);
    if (mode == Mode::train) {
        runs.visit([&](std::size_t c, std::size_t first, std::size_t len) {
            double s = 0.0;
            for (std::size_t i = first; i < first + len; ++i) s += xv[i];
            mean_c[c] += s;
        });
        for (auto& m : mean_c) m /= static_cast<double>(count);
        runs.visit([&](std::size_t c, std::size_t first, std::size_t len) {
            double s = 0.0;
            const double m = mean_c[c];
            for (std::size_t i = first; i < first + len; ++i) s += (xv[i] - m) * (xv[i] - m);
            var_c[c] += s;
        });
        for (auto& v : var_c) v /= static_cast<double>(count);
        const double unbias = count > 1 ? static_cast<double>(count) / static_cast<double>(count - 1) : 1.0;
        for (std::size_t c = 0; c < C; ++c) {
            state.running_mean[c] = static_cast<T>(momentum * state.running_mean[c] + (1.0 - momentum) * mean_c[c]);
            state.running_var[c] =
                static_cast<T>(momentum * state.running_var[c] + (1.0 - momentum) * var_c[c] * unbias);
        }
    } else {
        for (std::size_t c = 0; c < C; ++c) {
            mean_c[c] = state.running_mean[c];
            var_c[c] = state.running_var[c];
        }
    }
    std::vector<T> inv_std(C), mean_t(C);
    for (std::size_t c = 0; c < C; ++c) {
        inv_std[c] = static_cast<T>(1.0 / std::sqrt(var_c[c] + eps));
        mean_t[c] = static_cast<T>(mean_c[c]);
    }

    std::vector<T> xhat(x.size()), y(x.size());
    const T* gv = gamma.values().data();
    const T* bv = beta.values().data();
    runs.visit([&](std::size_t c, std::size_t first, std::size_t len) {
        const T m = mean_t[c], is = inv_std[c], g = gv[c], b = bv[c];
        for (std::size_t i = first; i < first + len; ++i) {
            xhat[i] = (xv[i] - m) * is;
            y[i] = g * xhat[i] + b;
        }
    });

    return make_result<T>(
        "batch_norm", x.shape(), std::move(y), {&x, &gamma, &beta},
        [px = x.node(), pg = gamma.node(), pb = beta.node(), xhat = std::move(xhat), inv_std = std::move(inv_std),
         runs = std::move(runs), C, count, train = mode == Mode::train](Node<T>& o) {
            const T* dy = o.grad.data();
            std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
            runs.visit([&](std::size_t c, std::size_t first, std::size_t len) {
                double s = 0.0, sx = 0.0;
                for (std::size_t i = first; i < first + len; ++i) {
                    s += dy[i];
                    sx += static_cast<double>(dy[i]) * xhat[i];
                }
                sum_dy[c] += s;
                sum_dy_xhat[c] += sx;
            });
            if (pg->requires_grad) {
                auto& g = pg->ensure_grad();
                for (std::size_t c = 0; c < C; ++c) g[c] += static_cast<T>(sum_dy_xhat[c]);
            }
            if (pb->requires_grad) {
                auto& g = pb->ensure_grad();
                for (std::size_t c = 0; c < C; ++c) g[c] += static_cast<T>(sum_dy[c]);
            }
            if (!px->requires_grad) return;
            T* gx = px->ensure_grad().data();
            const double m = static_cast<double>(count);
            runs.visit([&](std::size_t c, std::size_t first, std::size_t len) {
                const double scale_c = static_cast<double>(pg->value[c]) * inv_std[c];
                if (train) {
                    const T k = static_cast<T>(scale_c);
                    const T mdy = static_cast<T>(sum_dy[c] / m);
                    const T mdyx = static_cast<T>(sum_dy_xhat[c] / m);
                    for (std::size_t i = first; i < first + len; ++i) gx[i] += k * (dy[i] - mdy - xhat[i] * mdyx);
                } else {
                    const T k = static_cast<T>(scale_c);
                    for (std::size_t i = first; i < first + len; ++i) gx[i] += k * dy[i];
                }
            });
        });
}

// ---------------------------------------------------------------------------
// Bone differences along the last (vertex) axis:
//   out[..., v] = x[..., v] - x[..., parent[v]],  zero where parent[v] == v.
template <typename T>
Tensor<T> vertex_difference(const Tensor<T>& x, const std::vector<std::size_t>& parent) {
    if (x.rank() < 1 || x.dim(x.rank() - 1) != parent.size())
        throw ShapeError("vertex_difference: last axis must have " + std::to_string(parent.size()) + " entries");
    const std::size_t V = parent.size();
    for (auto p : parent)
        if (p >= V) throw ShapeError("vertex_difference: parent index out of range");
    const std::size_t rows = x.size() / V;
    std::vector<T> v(x.size());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < V; ++j)
            v[r * V + j] = parent[j] == j ? T(0) : x.values()[r * V + j] - x.values()[r * V + parent[j]];
    return make_result<T>("vertex_difference", x.shape(), std::move(v), {&x}, [px = x.node(), parent, rows, V](Node<T>& o) {
        auto& g = px->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < V; ++j) {
                if (parent[j] == j) continue;
                g[r * V + j] += o.grad[r * V + j];
                g[r * V + parent[j]] -= o.grad[r * V + j];
            }
    });
}

}  // namespace hagcn::ad

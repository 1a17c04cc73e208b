#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "wgpt/optim.hpp"
#include "wgpt/rng.hpp"
#include "wgpt/tensor.hpp"

namespace wgpt {

namespace eigen {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<RowMat>;
using CMap = Eigen::Map<const RowMat>;
using Stride = Eigen::OuterStride<>;
using BlockMap = Eigen::Map<RowMat, 0, Stride>;
using CBlockMap = Eigen::Map<const RowMat, 0, Stride>;

inline Map map(Tensor& t) { return Map(t.data(), t.rows(), t.cols()); }
inline CMap map(const Tensor& t) { return CMap(t.data(), t.rows(), t.cols()); }
} // namespace eigen

// Handle to a node on a Tape.
struct Ref {
    int idx = -1;
    bool valid() const { return idx >= 0; }
};

// Reverse-mode autodiff tape. A fresh graph is recorded per forward pass;
// creation order is a topological order, so backward() is a single reverse
// sweep. Gradients of parameters accumulate (+=) into the bound ParameterSet,
// so a parameter used several times, or across several passes, sums its
// contributions until explicitly zeroed.
class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_(grad_enabled) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const { return grad_; }
    int size() const { return static_cast<int>(nodes_.size()); }

    const Tensor& value(Ref r) const { return node(r).value; }

    const Tensor& grad(Ref r) const {
        if (!grad_) fail_contract("Tape::grad: gradients are disabled on this tape");
        return node(r).grad;
    }

    // Constant leaf: participates in forward only.
    Ref input(Tensor v) { return push(std::move(v), {}); }

    // Differentiable leaf bound to a parameter; backward adds into p.grad.
    Ref leaf(Parameter& p) {
        Ref r = push(Tensor(p.value), {});
        if (grad_) {
            Parameter* pp = &p;
            node(r).back = [this, r, pp] {
                const Tensor& g = node(r).grad;
                for (std::int64_t i = 0; i < g.numel(); ++i) pp->grad[i] += g[i];
            };
        }
        return r;
    }

    Ref matmul(Ref a, Ref b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (A.ndim() != 2 || B.ndim() != 2 || A.cols() != B.rows())
            fail_contract("matmul: inner dimensions disagree: ", A.shape_str(), " x ", B.shape_str());
        Tensor out({A.rows(), B.cols()});
        eigen::map(out).noalias() = eigen::map(A) * eigen::map(B);
        Ref r = push(std::move(out), {a, b});
        if (grad_) node(r).back = [this, r, a, b] {
            const Tensor& g = node(r).grad;
            eigen::map(node(a).grad).noalias() += eigen::map(g) * eigen::map(value(b)).transpose();
            eigen::map(node(b).grad).noalias() += eigen::map(value(a)).transpose() * eigen::map(g);
        };
        return r;
    }

    Ref transpose(Ref a) {
        const Tensor& A = value(a);
        Tensor out({A.cols(), A.rows()});
        eigen::map(out) = eigen::map(A).transpose();
        Ref r = push(std::move(out), {a});
        if (grad_) node(r).back = [this, r, a] {
            eigen::map(node(a).grad) += eigen::map(node(r).grad).transpose();
        };
        return r;
    }

    Ref add(Ref a, Ref b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (!A.same_shape(B))
            fail_contract("add: shape mismatch: ", A.shape_str(), " vs ", B.shape_str());
        Tensor out(A.shape());
        for (std::int64_t i = 0; i < A.numel(); ++i) out[i] = A[i] + B[i];
        Ref r = push(std::move(out), {a, b});
        if (grad_) node(r).back = [this, r, a, b] {
            const Tensor& g = node(r).grad;
            for (std::int64_t i = 0; i < g.numel(); ++i) {
                node(a).grad[i] += g[i];
                node(b).grad[i] += g[i];
            }
        };
        return r;
    }

    // Adds a length-n bias vector to every row of an [m x n] matrix.
    Ref add_row(Ref a, Ref bias) {
        const Tensor& A = value(a);
        const Tensor& B = value(bias);
        if (A.ndim() != 2 || B.numel() != A.cols())
            fail_contract("add_row: bias ", B.shape_str(), " does not match ", A.shape_str());
        Tensor out(A.shape());
        const std::int64_t m = A.rows(), n = A.cols();
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j) out.at(i, j) = A.at(i, j) + B[j];
        Ref r = push(std::move(out), {a, bias});
        if (grad_) node(r).back = [this, r, a, bias] {
            const Tensor& g = node(r).grad;
            const std::int64_t m = g.rows(), n = g.cols();
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t j = 0; j < n; ++j) {
                    node(a).grad.at(i, j) += g.at(i, j);
                    node(bias).grad[j] += g.at(i, j);
                }
        };
        return r;
    }

    Ref mul(Ref a, Ref b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (!A.same_shape(B))
            fail_contract("mul: shape mismatch: ", A.shape_str(), " vs ", B.shape_str());
        Tensor out(A.shape());
        for (std::int64_t i = 0; i < A.numel(); ++i) out[i] = A[i] * B[i];
        Ref r = push(std::move(out), {a, b});
        if (grad_) node(r).back = [this, r, a, b] {
            const Tensor& g = node(r).grad;
            for (std::int64_t i = 0; i < g.numel(); ++i) {
                node(a).grad[i] += g[i] * value(b)[i];
                node(b).grad[i] += g[i] * value(a)[i];
            }
        };
        return r;
    }

    Ref scale(Ref a, double c) {
        const Tensor& A = value(a);
        Tensor out(A.shape());
        for (std::int64_t i = 0; i < A.numel(); ++i) out[i] = A[i] * c;
        Ref r = push(std::move(out), {a});
        if (grad_) node(r).back = [this, r, a, c] {
            const Tensor& g = node(r).grad;
            for (std::int64_t i = 0; i < g.numel(); ++i) node(a).grad[i] += g[i] * c;
        };
        return r;
    }

    // Exact GELU: 0.5 x (1 + erf(x / sqrt(2))).
    Ref gelu(Ref a) {
        const Tensor& A = value(a);
        Tensor out(A.shape());
        for (std::int64_t i = 0; i < A.numel(); ++i) {
            const double x = A[i];
            out[i] = 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244));
        }
        Ref r = push(std::move(out), {a});
        if (grad_) node(r).back = [this, r, a] {
            const Tensor& g = node(r).grad;
            const Tensor& x = value(a);
            for (std::int64_t i = 0; i < g.numel(); ++i) {
                const double v = x[i];
                const double cdf = 0.5 * (1.0 + std::erf(v * 0.7071067811865475244));
                const double pdf = std::exp(-0.5 * v * v) * 0.3989422804014326779;
                node(a).grad[i] += g[i] * (cdf + v * pdf);
            }
        };
        return r;
    }

    // Row-wise softmax with max subtraction. With causal=true, row i is a
    // distribution over columns 0..i and zero beyond (requires square input).
    Ref softmax_rows(Ref a, bool causal = false) {
        const Tensor& A = value(a);
        if (A.ndim() != 2) fail_contract("softmax_rows: expected 2-D, got ", A.shape_str());
        if (causal && A.rows() != A.cols())
            fail_contract("softmax_rows: causal mode needs a square matrix, got ", A.shape_str());
        Tensor out(A.shape());
        softmax_fill(A, out, causal);
        Ref r = push(std::move(out), {a});
        if (grad_) node(r).back = [this, r, a, causal] {
            const Tensor& g = node(r).grad;
            const Tensor& p = value(r);
            const std::int64_t m = p.rows(), n = p.cols();
            for (std::int64_t i = 0; i < m; ++i) {
                const std::int64_t lim = causal ? i + 1 : n;
                double dot = 0.0;
                for (std::int64_t j = 0; j < lim; ++j) dot += g.at(i, j) * p.at(i, j);
                for (std::int64_t j = 0; j < lim; ++j)
                    node(a).grad.at(i, j) += p.at(i, j) * (g.at(i, j) - dot);
            }
        };
        return r;
    }

    Ref layer_norm(Ref x, Ref gain, Ref bias, double eps) {
        const Tensor& X = value(x);
        const std::int64_t d = X.ndim() == 2 ? X.cols() : X.numel();
        const std::int64_t rows = X.numel() / d;
        if (value(gain).numel() != d || value(bias).numel() != d)
            fail_contract("layer_norm: gain/bias must have ", d, " entries");
        Tensor out(X.shape());
        Tensor norm(X.shape());       // (x - mean) / std, saved for backward
        Tensor inv_std({rows});
        const Tensor& G = value(gain);
        const Tensor& B = value(bias);
        for (std::int64_t i = 0; i < rows; ++i) {
            const double* px = X.data() + i * d;
            double mean = 0.0;
            for (std::int64_t j = 0; j < d; ++j) mean += px[j];
            mean /= static_cast<double>(d);
            double var = 0.0;
            for (std::int64_t j = 0; j < d; ++j) var += (px[j] - mean) * (px[j] - mean);
            var /= static_cast<double>(d);
            const double is = 1.0 / std::sqrt(var + eps);
            inv_std[i] = is;
            for (std::int64_t j = 0; j < d; ++j) {
                const double y = (px[j] - mean) * is;
                norm[i * d + j] = y;
                out[i * d + j] = y * G[j] + B[j];
            }
        }
        Ref r = push(std::move(out), {x, gain, bias});
        if (grad_) {
            auto saved_norm = std::make_shared<Tensor>(std::move(norm));
            auto saved_is = std::make_shared<Tensor>(std::move(inv_std));
            node(r).back = [this, r, x, gain, bias, d, rows, saved_norm, saved_is] {
                const Tensor& g = node(r).grad;
                const Tensor& G = value(gain);
                const Tensor& y = *saved_norm;
                for (std::int64_t i = 0; i < rows; ++i) {
                    double mean_dy = 0.0, mean_dyy = 0.0;
                    for (std::int64_t j = 0; j < d; ++j) {
                        const double dy = g[i * d + j] * G[j];
                        mean_dy += dy;
                        mean_dyy += dy * y[i * d + j];
                    }
                    mean_dy /= static_cast<double>(d);
                    mean_dyy /= static_cast<double>(d);
                    const double is = (*saved_is)[i];
                    for (std::int64_t j = 0; j < d; ++j) {
                        const double dy = g[i * d + j] * G[j];
                        node(x).grad[i * d + j] += (dy - mean_dy - y[i * d + j] * mean_dyy) * is;
                        node(gain).grad[j] += g[i * d + j] * y[i * d + j];
                        node(bias).grad[j] += g[i * d + j];
                    }
                }
            };
        }
        return r;
    }

    // Gather rows of `table` ([vocab x d]) by token id.
    Ref embedding(Ref table, std::span<const int> ids) {
        const Tensor& T = value(table);
        if (T.ndim() != 2) fail_contract("embedding: table must be 2-D, got ", T.shape_str());
        const std::int64_t vocab = T.rows(), d = T.cols();
        const std::int64_t n = static_cast<std::int64_t>(ids.size());
        Tensor out({n, d});
        for (std::int64_t i = 0; i < n; ++i) {
            const int id = ids[i];
            if (id < 0 || id >= vocab)
                fail_contract("embedding: token id ", id, " out of vocabulary [0,", vocab, ")");
            for (std::int64_t j = 0; j < d; ++j) out.at(i, j) = T.at(id, j);
        }
        Ref r = push(std::move(out), {table});
        if (grad_) {
            std::vector<int> idv(ids.begin(), ids.end());
            node(r).back = [this, r, table, idv = std::move(idv), d] {
                const Tensor& g = node(r).grad;
                for (std::size_t i = 0; i < idv.size(); ++i)
                    for (std::int64_t j = 0; j < d; ++j)
                        node(table).grad.at(idv[i], j) += g.at(static_cast<std::int64_t>(i), j);
            };
        }
        return r;
    }

    // Concatenate along the last axis: [m x n1], [m x n2], ... -> [m x sum(ni)].
    Ref concat_cols(std::span<const Ref> parts) {
        if (parts.empty()) fail_contract("concat_cols: no inputs");
        const std::int64_t m = value(parts[0]).rows();
        std::int64_t total = 0;
        for (Ref p : parts) {
            if (value(p).ndim() != 2 || value(p).rows() != m)
                fail_contract("concat_cols: row count mismatch at ", value(p).shape_str());
            total += value(p).cols();
        }
        Tensor out({m, total});
        std::int64_t off = 0;
        for (Ref p : parts) {
            const Tensor& A = value(p);
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t j = 0; j < A.cols(); ++j) out.at(i, off + j) = A.at(i, j);
            off += A.cols();
        }
        std::vector<Ref> deps(parts.begin(), parts.end());
        Ref r = push(std::move(out), deps);
        if (grad_) node(r).back = [this, r, deps] {
            const Tensor& g = node(r).grad;
            std::int64_t off = 0;
            for (Ref p : deps) {
                Tensor& pg = node(p).grad;
                for (std::int64_t i = 0; i < pg.rows(); ++i)
                    for (std::int64_t j = 0; j < pg.cols(); ++j) pg.at(i, j) += g.at(i, off + j);
                off += pg.cols();
            }
        };
        return r;
    }

    Ref concat_cols(std::initializer_list<Ref> parts) {
        return concat_cols(std::span<const Ref>(parts.begin(), parts.size()));
    }

    // Concatenate along the first axis: [p x d], [q x d] -> [(p+q) x d].
    Ref concat_rows(Ref a, Ref b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (A.ndim() != 2 || B.ndim() != 2 || A.cols() != B.cols())
            fail_contract("concat_rows: column mismatch: ", A.shape_str(), " vs ", B.shape_str());
        Tensor out({A.rows() + B.rows(), A.cols()});
        std::copy(A.data(), A.data() + A.numel(), out.data());
        std::copy(B.data(), B.data() + B.numel(), out.data() + A.numel());
        Ref r = push(std::move(out), {a, b});
        if (grad_) node(r).back = [this, r, a, b] {
            const Tensor& g = node(r).grad;
            Tensor& ga = node(a).grad;
            Tensor& gb = node(b).grad;
            for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] += g[i];
            for (std::int64_t i = 0; i < gb.numel(); ++i) gb[i] += g[i + ga.numel()];
        };
        return r;
    }

    Ref slice_cols(Ref a, std::int64_t off, std::int64_t width) {
        const Tensor& A = value(a);
        if (A.ndim() != 2 || off < 0 || width <= 0 || off + width > A.cols())
            fail_contract("slice_cols: [", off, ",", off + width, ") out of range for ", A.shape_str());
        Tensor out({A.rows(), width});
        for (std::int64_t i = 0; i < A.rows(); ++i)
            for (std::int64_t j = 0; j < width; ++j) out.at(i, j) = A.at(i, off + j);
        Ref r = push(std::move(out), {a});
        if (grad_) node(r).back = [this, r, a, off, width] {
            const Tensor& g = node(r).grad;
            for (std::int64_t i = 0; i < g.rows(); ++i)
                for (std::int64_t j = 0; j < width; ++j) node(a).grad.at(i, off + j) += g.at(i, j);
        };
        return r;
    }

    // Fused multi-head causal self-attention. q, k, v are [T x d] with d
    // divisible by n_heads; per head, scores are scaled by 1/sqrt(d/heads),
    // masked so position i attends positions <= i, softmaxed, and applied to v.
    // Heads are concatenated back into [T x d]. Keeping this fused avoids
    // materializing per-head slice/concat nodes and their gradients.
    Ref causal_mha(Ref q, Ref k, Ref v, int n_heads) {
        const Tensor& Q = value(q);
        const Tensor& K = value(k);
        const Tensor& V = value(v);
        if (!Q.same_shape(K) || !Q.same_shape(V) || Q.ndim() != 2)
            fail_contract("causal_mha: q/k/v shapes differ: ", Q.shape_str(), " ", K.shape_str(), " ", V.shape_str());
        const std::int64_t T = Q.rows(), d = Q.cols();
        if (n_heads <= 0 || d % n_heads != 0)
            fail_contract("causal_mha: model dim ", d, " not divisible by ", n_heads, " heads");
        const std::int64_t dh = d / n_heads;
        const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

        Tensor out({T, d});
        auto probs = std::make_shared<std::vector<Tensor>>();  // per-head [T x T], rows causal
        eigen::RowMat scores(T, T);
        for (int h = 0; h < n_heads; ++h) {
            eigen::CBlockMap Qh(Q.data() + h * dh, T, dh, eigen::Stride(d));
            eigen::CBlockMap Kh(K.data() + h * dh, T, dh, eigen::Stride(d));
            eigen::CBlockMap Vh(V.data() + h * dh, T, dh, eigen::Stride(d));
            scores.noalias() = Qh * Kh.transpose() * sc;
            Tensor P({T, T});
            for (std::int64_t i = 0; i < T; ++i) {
                double mx = scores(i, 0);
                for (std::int64_t j = 1; j <= i; ++j) mx = std::max(mx, scores(i, j));
                double sum = 0.0;
                for (std::int64_t j = 0; j <= i; ++j) {
                    const double e = std::exp(scores(i, j) - mx);
                    P.at(i, j) = e;
                    sum += e;
                }
                const double inv = 1.0 / sum;
                for (std::int64_t j = 0; j <= i; ++j) P.at(i, j) *= inv;
                for (std::int64_t j = i + 1; j < T; ++j) P.at(i, j) = 0.0;
            }
            eigen::BlockMap Oh(out.data() + h * dh, T, dh, eigen::Stride(d));
            Oh.noalias() = eigen::map(P) * Vh;
            if (grad_) probs->push_back(std::move(P));
        }
        Ref r = push(std::move(out), {q, k, v});
        if (grad_) node(r).back = [this, r, q, k, v, n_heads, dh, sc, probs] {
            const Tensor& g = node(r).grad;
            const std::int64_t T = g.rows(), d = g.cols();
            eigen::RowMat dP(T, T), dS(T, T);
            for (int h = 0; h < n_heads; ++h) {
                eigen::CBlockMap Qh(value(q).data() + h * dh, T, dh, eigen::Stride(d));
                eigen::CBlockMap Kh(value(k).data() + h * dh, T, dh, eigen::Stride(d));
                eigen::CBlockMap Vh(value(v).data() + h * dh, T, dh, eigen::Stride(d));
                eigen::CBlockMap Gh(g.data() + h * dh, T, dh, eigen::Stride(d));
                eigen::BlockMap dQh(node(q).grad.data() + h * dh, T, dh, eigen::Stride(d));
                eigen::BlockMap dKh(node(k).grad.data() + h * dh, T, dh, eigen::Stride(d));
                eigen::BlockMap dVh(node(v).grad.data() + h * dh, T, dh, eigen::Stride(d));
                const Tensor& P = (*probs)[static_cast<std::size_t>(h)];
                dVh.noalias() += eigen::map(P).transpose() * Gh;
                dP.noalias() = Gh * Vh.transpose();
                for (std::int64_t i = 0; i < T; ++i) {
                    double dot = 0.0;
                    for (std::int64_t j = 0; j <= i; ++j) dot += dP(i, j) * P.at(i, j);
                    for (std::int64_t j = 0; j <= i; ++j) dS(i, j) = P.at(i, j) * (dP(i, j) - dot);
                    for (std::int64_t j = i + 1; j < T; ++j) dS(i, j) = 0.0;
                }
                dQh.noalias() += dS * Kh * sc;
                dKh.noalias() += dS.transpose() * Qh * sc;
            }
        };
        return r;
    }

    // Mean over positions of -log softmax(logits)[target]. Natural log.
    Ref cross_entropy(Ref logits, std::span<const int> targets) {
        const Tensor& L = value(logits);
        if (L.ndim() != 2) fail_contract("cross_entropy: logits must be 2-D, got ", L.shape_str());
        const std::int64_t T = L.rows(), V = L.cols();
        if (static_cast<std::int64_t>(targets.size()) != T)
            fail_contract("cross_entropy: ", targets.size(), " targets for ", T, " rows");
        auto probs = std::make_shared<Tensor>(std::vector<std::int64_t>{T, V});
        double loss = 0.0;
        for (std::int64_t i = 0; i < T; ++i) {
            const int t = targets[i];
            if (t < 0 || t >= V)
                fail_contract("cross_entropy: target ", t, " out of vocabulary [0,", V, ") at position ", i);
            const double* row = L.data() + i * V;
            double mx = row[0];
            for (std::int64_t j = 1; j < V; ++j) mx = std::max(mx, row[j]);
            double sum = 0.0;
            for (std::int64_t j = 0; j < V; ++j) {
                const double e = std::exp(row[j] - mx);
                (*probs)[i * V + j] = e;
                sum += e;
            }
            const double inv = 1.0 / sum;
            for (std::int64_t j = 0; j < V; ++j) (*probs)[i * V + j] *= inv;
            loss += std::log(sum) + mx - row[t];
        }
        Tensor out({1});
        out[0] = loss / static_cast<double>(T);
        Ref r = push(std::move(out), {logits});
        if (grad_) {
            std::vector<int> tv(targets.begin(), targets.end());
            node(r).back = [this, r, logits, tv = std::move(tv), probs] {
                const double g = node(r).grad[0];
                const std::int64_t T = value(logits).rows(), V = value(logits).cols();
                const double s = g / static_cast<double>(T);
                Tensor& lg = node(logits).grad;
                for (std::int64_t i = 0; i < T; ++i) {
                    for (std::int64_t j = 0; j < V; ++j) lg.at(i, j) += s * (*probs)[i * V + j];
                    lg.at(i, tv[static_cast<std::size_t>(i)]) -= s;
                }
            };
        }
        return r;
    }

    Ref sum(Ref a) {
        const Tensor& A = value(a);
        Tensor out({1});
        double s = 0.0;
        for (std::int64_t i = 0; i < A.numel(); ++i) s += A[i];
        out[0] = s;
        Ref r = push(std::move(out), {a});
        if (grad_) node(r).back = [this, r, a] {
            const double g = node(r).grad[0];
            for (std::int64_t i = 0; i < node(a).grad.numel(); ++i) node(a).grad[i] += g;
        };
        return r;
    }

    // Inverted dropout; identity when rate == 0.
    Ref dropout(Ref a, double rate, Rng& rng) {
        if (rate <= 0.0) return a;
        if (rate >= 1.0) fail_contract("dropout: rate must be < 1, got ", rate);
        const Tensor& A = value(a);
        auto mask = std::make_shared<Tensor>(A.shape());
        const double keep = 1.0 - rate;
        Tensor out(A.shape());
        for (std::int64_t i = 0; i < A.numel(); ++i) {
            const double m = rng.uniform() < keep ? 1.0 / keep : 0.0;
            (*mask)[i] = m;
            out[i] = A[i] * m;
        }
        Ref r = push(std::move(out), {a});
        if (grad_) node(r).back = [this, r, a, mask] {
            const Tensor& g = node(r).grad;
            for (std::int64_t i = 0; i < g.numel(); ++i) node(a).grad[i] += g[i] * (*mask)[i];
        };
        return r;
    }

    // Reverse sweep from `loss` (a scalar node), seeding d(loss)/d(loss) with
    // `seed` (1/batch_size gives a mean over per-sequence losses). May be
    // called once per tape.
    void backward(Ref loss, double seed = 1.0) {
        if (!grad_) fail_contract("backward: gradients are disabled on this tape");
        if (backward_done_) fail_contract("backward: called twice on the same tape without reset");
        if (value(loss).numel() != 1)
            fail_contract("backward: loss must be scalar, got ", value(loss).shape_str());
        backward_done_ = true;
        node(loss).grad[0] = seed;
        for (int i = loss.idx; i >= 0; --i)
            if (nodes_[static_cast<std::size_t>(i)].back) nodes_[static_cast<std::size_t>(i)].back();
    }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::function<void()> back;
    };

    Node& node(Ref r) { return nodes_[static_cast<std::size_t>(r.idx)]; }
    const Node& node(Ref r) const { return nodes_[static_cast<std::size_t>(r.idx)]; }

    Ref push(Tensor v, std::span<const Ref> deps) {
        for (Ref d : deps)
            if (!d.valid() || d.idx >= size()) fail_contract("Tape: dangling input ref");
        Node n;
        if (grad_) n.grad = Tensor::zeros(v.shape());
        n.value = std::move(v);
        nodes_.push_back(std::move(n));
        return Ref{size() - 1};
    }

    Ref push(Tensor v, std::initializer_list<Ref> deps) {
        return push(std::move(v), std::span<const Ref>(deps.begin(), deps.size()));
    }

    static void softmax_fill(const Tensor& A, Tensor& out, bool causal) {
        const std::int64_t m = A.rows(), n = A.cols();
        for (std::int64_t i = 0; i < m; ++i) {
            const std::int64_t lim = causal ? i + 1 : n;
            const double* row = A.data() + i * n;
            double mx = row[0];
            for (std::int64_t j = 1; j < lim; ++j) mx = std::max(mx, row[j]);
            double sum = 0.0;
            for (std::int64_t j = 0; j < lim; ++j) {
                const double e = std::exp(row[j] - mx);
                out.at(i, j) = e;
                sum += e;
            }
            const double inv = 1.0 / sum;
            for (std::int64_t j = 0; j < lim; ++j) out.at(i, j) *= inv;
            for (std::int64_t j = lim; j < n; ++j) out.at(i, j) = 0.0;
        }
    }

    std::vector<Node> nodes_;
    bool grad_ = true;
    bool backward_done_ = false;
};

} // namespace wgpt

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "hear/common.hpp"
#include "hear/flops_meter.hpp"
#include "hear/tensor.hpp"

namespace hear {

// Reverse-mode autodiff over dense tensors. Forward values are computed
// eagerly when an op is recorded; backward() walks the tape in reverse
// creation order. Values are immutable once produced.
//
// GEMM kernels are backed by Eigen; everything else is plain loops.
template <class S>
class Tape {
public:
    using Id = int32_t;
    static constexpr Id kNone = -1;

    enum class Op : uint8_t {
        Leaf,
        Matmul,
        MatmulNT,
        Add,
        Sub,
        Mul,
        AddRowVec,
        MulColVec,
        Scale,
        AddConst,
        Sigmoid,
        Gelu,
        Square,
        SoftmaxRows,
        LayerNormRows,
        MeanAll,
        MeanRows,
        ConcatCols,
        ConcatRows,
        SliceRows,
        SliceCols,
        RelBiasAdd,
        CrossEntropyRows,
        CosineRows,
        Detach,
        PoolMean,
        PoolStd,
        PoolMax,
        GatherRows,
    };

    struct Node {
        Op op = Op::Leaf;
        Id in0 = kNone, in1 = kNone, in2 = kNone;
        Tensor<S> val;
        Tensor<S> grad; // allocated by backward()
        bool needs_grad = false;
        bool trainable_leaf = false;
        S s0 = S(0);            // scalar payload
        int i0 = 0, i1 = 0;     // int payloads
        std::vector<int> idx;   // targets / gather indices / argmax rows
        std::vector<uint8_t> sel; // selection / validity mask
    };

    size_t size() const { return nodes_.size(); }

    const Tensor<S>& value(Id id) const { return nodes_[check(id)].val; }
    const Tensor<S>& grad(Id id) const {
        const Node& n = nodes_[check(id)];
        if (n.grad.data.empty()) throw NumericError("tape: gradient not computed for node");
        return n.grad;
    }
    bool has_grad(Id id) const { return !nodes_[check(id)].grad.data.empty(); }
    bool trainable(Id id) const { return nodes_[check(id)].trainable_leaf; }

    Id leaf(Tensor<S> value, bool requires_grad = false) {
        Node n;
        n.op = Op::Leaf;
        n.val = std::move(value);
        n.needs_grad = requires_grad;
        n.trainable_leaf = requires_grad;
        return push(std::move(n));
    }

    Id constant(Tensor<S> value) { return leaf(std::move(value), false); }

    // --- binary elementwise ---

    Id add(Id a, Id b) { return ew2(Op::Add, a, b); }
    Id sub(Id a, Id b) { return ew2(Op::Sub, a, b); }
    Id mul(Id a, Id b) { return ew2(Op::Mul, a, b); }

    Id add_rowvec(Id a, Id v) {
        const Tensor<S>& A = value(a);
        const Tensor<S>& V = value(v);
        if (V.size() != A.cols()) throw NumericError("add_rowvec: width mismatch");
        Tensor<S> out = A;
        for (int r = 0; r < A.rows(); ++r)
            for (int c = 0; c < A.cols(); ++c) out.at(r, c) += V[c];
        charge_flops(flops_cost::kAdd * A.size());
        return push(make2(Op::AddRowVec, a, v, std::move(out)));
    }

    Id mul_colvec(Id a, Id w) {
        const Tensor<S>& A = value(a);
        const Tensor<S>& W = value(w);
        if (W.size() != A.rows()) throw NumericError("mul_colvec: height mismatch");
        Tensor<S> out = A;
        for (int r = 0; r < A.rows(); ++r)
            for (int c = 0; c < A.cols(); ++c) out.at(r, c) *= W[r];
        charge_flops(flops_cost::kMul * A.size());
        return push(make2(Op::MulColVec, a, w, std::move(out)));
    }

    Id scale(Id a, S c) {
        Tensor<S> out = value(a);
        for (S& v : out.data) v *= c;
        charge_flops(flops_cost::kMul * out.size());
        Node n = make1(Op::Scale, a, std::move(out));
        n.s0 = c;
        return push(std::move(n));
    }

    Id add_const(Id a, S c) {
        Tensor<S> out = value(a);
        for (S& v : out.data) v += c;
        charge_flops(flops_cost::kAdd * out.size());
        Node n = make1(Op::AddConst, a, std::move(out));
        n.s0 = c;
        return push(std::move(n));
    }

    // --- matmul ---

    // [m,k] x [k,n] -> [m,n]
    Id matmul(Id a, Id b) {
        const Tensor<S>& A = value(a);
        const Tensor<S>& B = value(b);
        if (A.cols() != B.rows()) throw NumericError("matmul: inner dimension mismatch");
        Tensor<S> out({A.rows(), B.cols()});
        emap(out) = cmap(A) * cmap(B);
        charge_flops(flops_cost::kMulAdd * int64_t(A.rows()) * A.cols() * B.cols());
        return push(make2(Op::Matmul, a, b, std::move(out)));
    }

    // [m,k] x [n,k]^T -> [m,n]
    Id matmul_nt(Id a, Id b) {
        const Tensor<S>& A = value(a);
        const Tensor<S>& B = value(b);
        if (A.cols() != B.cols()) throw NumericError("matmul_nt: inner dimension mismatch");
        Tensor<S> out({A.rows(), B.rows()});
        emap(out) = cmap(A) * cmap(B).transpose();
        charge_flops(flops_cost::kMulAdd * int64_t(A.rows()) * A.cols() * B.rows());
        return push(make2(Op::MatmulNT, a, b, std::move(out)));
    }

    // y = x W^T + b for a linear layer with W stored [out,in]
    Id linear(Id x, Id w, Id b) { return add_rowvec(matmul_nt(x, w), b); }

    // --- unary ---

    Id sigmoid(Id a) {
        Tensor<S> out = value(a);
        for (S& v : out.data) v = S(1) / (S(1) + std::exp(-v));
        charge_flops(flops_cost::kSigmoid * out.size());
        return push(make1(Op::Sigmoid, a, std::move(out)));
    }

    Id gelu(Id a) {
        Tensor<S> out = value(a);
        for (S& v : out.data)
            v = v * S(0.5) * (S(1) + std::erf(v * S(0.7071067811865476)));
        charge_flops(flops_cost::kGelu * out.size());
        return push(make1(Op::Gelu, a, std::move(out)));
    }

    Id square(Id a) {
        Tensor<S> out = value(a);
        for (S& v : out.data) v = v * v;
        charge_flops(flops_cost::kSquare * out.size());
        return push(make1(Op::Square, a, std::move(out)));
    }

    Id detach(Id a) {
        Node n = make1(Op::Detach, a, value(a));
        n.needs_grad = false;
        return push(std::move(n));
    }

    // --- row softmax, optionally restricted to valid key columns ---

    Id softmax_rows(Id a, const std::vector<uint8_t>* valid_cols = nullptr) {
        const Tensor<S>& A = value(a);
        if (valid_cols && static_cast<int>(valid_cols->size()) != A.cols())
            throw NumericError("softmax_rows: mask width mismatch");
        Tensor<S> out({A.rows(), A.cols()});
        for (int r = 0; r < A.rows(); ++r) {
            S mx = std::numeric_limits<S>::lowest();
            bool any = false;
            for (int c = 0; c < A.cols(); ++c) {
                if (valid_cols && !(*valid_cols)[c]) continue;
                mx = std::max(mx, A.at(r, c));
                any = true;
            }
            if (!any) throw NumericError("softmax_rows: all key positions masked");
            S sum = S(0);
            for (int c = 0; c < A.cols(); ++c) {
                if (valid_cols && !(*valid_cols)[c]) continue;
                const S e = std::exp(A.at(r, c) - mx);
                out.at(r, c) = e;
                sum += e;
            }
            for (int c = 0; c < A.cols(); ++c) {
                if (valid_cols && !(*valid_cols)[c]) {
                    out.at(r, c) = S(0);
                    continue;
                }
                out.at(r, c) /= sum;
            }
        }
        charge_flops(flops_cost::kSoftmax * A.size());
        Node n = make1(Op::SoftmaxRows, a, std::move(out));
        if (valid_cols) n.sel = *valid_cols;
        return push(std::move(n));
    }

    Id layer_norm_rows(Id a, Id gain, Id bias, S eps = S(1e-5)) {
        const Tensor<S>& A = value(a);
        const Tensor<S>& G = value(gain);
        const Tensor<S>& B = value(bias);
        if (G.size() != A.cols() || B.size() != A.cols())
            throw NumericError("layer_norm_rows: affine width mismatch");
        Tensor<S> out({A.rows(), A.cols()});
        for (int r = 0; r < A.rows(); ++r) {
            S mu = S(0);
            for (int c = 0; c < A.cols(); ++c) mu += A.at(r, c);
            mu /= S(A.cols());
            S var = S(0);
            for (int c = 0; c < A.cols(); ++c) {
                const S d = A.at(r, c) - mu;
                var += d * d;
            }
            var /= S(A.cols());
            const S inv = S(1) / std::sqrt(var + eps);
            for (int c = 0; c < A.cols(); ++c)
                out.at(r, c) = (A.at(r, c) - mu) * inv * G[c] + B[c];
        }
        charge_flops(flops_cost::kLayerNorm * A.size());
        Node n;
        n.op = Op::LayerNormRows;
        n.in0 = a;
        n.in1 = gain;
        n.in2 = bias;
        n.val = std::move(out);
        n.s0 = eps;
        n.needs_grad = needs(a) || needs(gain) || needs(bias);
        return push(std::move(n));
    }

    // --- reductions ---

    Id mean_all(Id a) {
        const Tensor<S>& A = value(a);
        if (A.size() == 0) throw NumericError("mean_all: empty tensor");
        S acc = S(0);
        for (S v : A.data) acc += v;
        Tensor<S> out({1, 1});
        out[0] = acc / S(A.size());
        charge_flops(flops_cost::kAdd * A.size());
        return push(make1(Op::MeanAll, a, std::move(out)));
    }

    // column means: [m,n] -> [1,n]
    Id mean_rows(Id a) {
        const Tensor<S>& A = value(a);
        if (A.rows() == 0) throw NumericError("mean_rows: empty tensor");
        Tensor<S> out({1, A.cols()});
        for (int c = 0; c < A.cols(); ++c) {
            S acc = S(0);
            for (int r = 0; r < A.rows(); ++r) acc += A.at(r, c);
            out[c] = acc / S(A.rows());
        }
        charge_flops(flops_cost::kAdd * A.size());
        return push(make1(Op::MeanRows, a, std::move(out)));
    }

    // --- slicing / concatenation ---

    Id concat_cols(Id a, Id b) {
        const Tensor<S>& A = value(a);
        const Tensor<S>& B = value(b);
        if (A.rows() != B.rows()) throw NumericError("concat_cols: row count mismatch");
        Tensor<S> out({A.rows(), A.cols() + B.cols()});
        for (int r = 0; r < A.rows(); ++r) {
            for (int c = 0; c < A.cols(); ++c) out.at(r, c) = A.at(r, c);
            for (int c = 0; c < B.cols(); ++c) out.at(r, A.cols() + c) = B.at(r, c);
        }
        return push(make2(Op::ConcatCols, a, b, std::move(out)));
    }

    Id concat_rows(Id a, Id b) {
        const Tensor<S>& A = value(a);
        const Tensor<S>& B = value(b);
        if (A.cols() != B.cols()) throw NumericError("concat_rows: column count mismatch");
        Tensor<S> out({A.rows() + B.rows(), A.cols()});
        std::copy(A.data.begin(), A.data.end(), out.data.begin());
        std::copy(B.data.begin(), B.data.end(), out.data.begin() + A.size());
        return push(make2(Op::ConcatRows, a, b, std::move(out)));
    }

    Id concat_rows(const std::vector<Id>& parts) {
        if (parts.empty()) throw NumericError("concat_rows: no parts");
        Id acc = parts[0];
        for (size_t i = 1; i < parts.size(); ++i) acc = concat_rows(acc, parts[i]);
        return acc;
    }

    Id slice_rows(Id a, int r0, int r1) {
        const Tensor<S>& A = value(a);
        if (r0 < 0 || r1 > A.rows() || r0 >= r1) throw NumericError("slice_rows: bad range");
        Tensor<S> out({r1 - r0, A.cols()});
        std::copy(A.data.begin() + int64_t(r0) * A.cols(),
                  A.data.begin() + int64_t(r1) * A.cols(), out.data.begin());
        Node n = make1(Op::SliceRows, a, std::move(out));
        n.i0 = r0;
        n.i1 = r1;
        return push(std::move(n));
    }

    Id slice_cols(Id a, int c0, int c1) {
        const Tensor<S>& A = value(a);
        if (c0 < 0 || c1 > A.cols() || c0 >= c1) throw NumericError("slice_cols: bad range");
        Tensor<S> out({A.rows(), c1 - c0});
        for (int r = 0; r < A.rows(); ++r)
            for (int c = c0; c < c1; ++c) out.at(r, c - c0) = A.at(r, c);
        Node n = make1(Op::SliceCols, a, std::move(out));
        n.i0 = c0;
        n.i1 = c1;
        return push(std::move(n));
    }

    // --- attention relative-position bias ---

    // logits[i][j] += table[clip(j-i, -k, k) + k]; table is a [2k+1] vector
    Id rel_bias_add(Id logits, Id table, int k) {
        const Tensor<S>& L = value(logits);
        const Tensor<S>& T = value(table);
        if (L.rows() != L.cols()) throw NumericError("rel_bias_add: logits must be square");
        if (T.size() != 2 * k + 1) throw NumericError("rel_bias_add: table size != 2k+1");
        Tensor<S> out = L;
        for (int i = 0; i < L.rows(); ++i)
            for (int j = 0; j < L.cols(); ++j)
                out.at(i, j) += T[relative_index(i, j, k)];
        charge_flops(flops_cost::kAdd * L.size());
        Node n = make2(Op::RelBiasAdd, logits, table, std::move(out));
        n.i0 = k;
        return push(std::move(n));
    }

    static int relative_index(int i, int j, int k) {
        return std::clamp(j - i, -k, k) + k;
    }

    // --- losses ---

    // Mean softmax cross-entropy over selected rows. `select` may be empty
    // (all rows) or one flag per row. With zero selected rows the loss is 0.
    Id cross_entropy_rows(Id logits, std::vector<int> targets, std::vector<uint8_t> select = {}) {
        const Tensor<S>& L = value(logits);
        if (static_cast<int>(targets.size()) != L.rows())
            throw NumericError("cross_entropy_rows: one target per row required");
        if (!select.empty() && static_cast<int>(select.size()) != L.rows())
            throw NumericError("cross_entropy_rows: selection size mismatch");
        int count = 0;
        double acc = 0.0;
        for (int r = 0; r < L.rows(); ++r) {
            if (!select.empty() && !select[r]) continue;
            const int t = targets[r];
            if (t < 0 || t >= L.cols()) throw NumericError("cross_entropy_rows: target out of range");
            S mx = L.at(r, 0);
            for (int c = 1; c < L.cols(); ++c) mx = std::max(mx, L.at(r, c));
            double lse = 0.0;
            for (int c = 0; c < L.cols(); ++c) lse += std::exp(double(L.at(r, c) - mx));
            acc += std::log(lse) + double(mx) - double(L.at(r, t));
            ++count;
        }
        Tensor<S> out({1, 1});
        out[0] = count ? S(acc / count) : S(0);
        charge_flops(flops_cost::kSoftmax * L.size());
        Node n = make1(Op::CrossEntropyRows, logits, std::move(out));
        n.idx = std::move(targets);
        n.sel = std::move(select);
        n.i0 = count;
        if (count == 0) n.needs_grad = false;
        return push(std::move(n));
    }

    // Per-row cosine similarity between a and b: [n,d],[n,d] -> [n,1].
    // Norms are clamped at eps so zero vectors stay finite.
    Id cosine_rows(Id a, Id b, S eps = S(1e-8)) {
        const Tensor<S>& A = value(a);
        const Tensor<S>& B = value(b);
        if (!A.same_shape(B)) throw NumericError("cosine_rows: shape mismatch");
        Tensor<S> out({A.rows(), 1});
        for (int r = 0; r < A.rows(); ++r) {
            S dot = S(0), na = S(0), nb = S(0);
            for (int c = 0; c < A.cols(); ++c) {
                dot += A.at(r, c) * B.at(r, c);
                na += A.at(r, c) * A.at(r, c);
                nb += B.at(r, c) * B.at(r, c);
            }
            na = std::max(std::sqrt(na), eps);
            nb = std::max(std::sqrt(nb), eps);
            out.at(r, 0) = dot / (na * nb);
        }
        charge_flops(6 * A.size());
        Node n = make2(Op::CosineRows, a, b, std::move(out));
        n.s0 = eps;
        return push(std::move(n));
    }

    // --- time pooling: [T,d] -> [1,d] ---

    Id pool_mean(Id a) {
        Tensor<S> out = col_mean(value(a));
        charge_flops(flops_cost::kPoolMean * value(a).size());
        return push(make1(Op::PoolMean, a, std::move(out)));
    }

    // population standard deviation per column; exact 0 for constant columns,
    // backward guarded at 1e-8
    Id pool_std(Id a) {
        const Tensor<S>& A = value(a);
        Tensor<S> mu = col_mean(A);
        Tensor<S> out({1, A.cols()});
        for (int c = 0; c < A.cols(); ++c) {
            S var = S(0);
            for (int r = 0; r < A.rows(); ++r) {
                const S d = A.at(r, c) - mu[c];
                var += d * d;
            }
            out[c] = std::sqrt(var / S(A.rows()));
        }
        charge_flops(flops_cost::kPoolStd * A.size());
        return push(make1(Op::PoolStd, a, std::move(out)));
    }

    Id pool_max(Id a) {
        const Tensor<S>& A = value(a);
        Tensor<S> out({1, A.cols()});
        std::vector<int> arg(static_cast<size_t>(A.cols()), 0);
        for (int c = 0; c < A.cols(); ++c) {
            S best = A.at(0, c);
            for (int r = 1; r < A.rows(); ++r) {
                if (A.at(r, c) > best) {
                    best = A.at(r, c);
                    arg[static_cast<size_t>(c)] = r;
                }
            }
            out[c] = best;
        }
        charge_flops(flops_cost::kPoolMax * A.size());
        Node n = make1(Op::PoolMax, a, std::move(out));
        n.idx = std::move(arg);
        return push(std::move(n));
    }

    // table[V,d], idx[n] -> [n,d]
    Id gather_rows(Id table, std::vector<int> idx) {
        const Tensor<S>& T = value(table);
        Tensor<S> out({static_cast<int>(idx.size()), T.cols()});
        for (size_t r = 0; r < idx.size(); ++r) {
            if (idx[r] < 0 || idx[r] >= T.rows()) throw NumericError("gather_rows: index out of range");
            for (int c = 0; c < T.cols(); ++c)
                out.at(static_cast<int>(r), c) = T.at(idx[r], c);
        }
        Node n = make1(Op::GatherRows, table, std::move(out));
        n.idx = std::move(idx);
        return push(std::move(n));
    }

    // --- backward ---

    void backward(Id root) {
        Node& r = nodes_[check(root)];
        if (r.val.size() != 1) throw NumericError("backward: root must be scalar");
        if (!std::isfinite(double(r.val[0]))) throw NumericError("backward: non-finite loss");
        for (Id i = 0; i <= root; ++i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (n.needs_grad) n.grad = Tensor<S>(n.val.shape);
        }
        if (!r.needs_grad) return; // loss independent of every trainable leaf
        r.grad[0] = S(1);
        for (Id i = root; i >= 0; --i) backward_node(i);
    }

private:
    std::vector<Node> nodes_;

    using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using EMap = Eigen::Map<EMat>;
    using ECMap = Eigen::Map<const EMat>;

    static ECMap cmap(const Tensor<S>& t) { return ECMap(t.data.data(), t.rows(), t.cols()); }
    static EMap emap(Tensor<S>& t) { return EMap(t.data.data(), t.rows(), t.cols()); }

    size_t check(Id id) const {
        if (id < 0 || static_cast<size_t>(id) >= nodes_.size())
            throw NumericError("tape: invalid node id");
        return static_cast<size_t>(id);
    }

    bool needs(Id id) const { return id != kNone && nodes_[check(id)].needs_grad; }

    Id push(Node n) {
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size() - 1);
    }

    Node make1(Op op, Id a, Tensor<S> out) {
        Node n;
        n.op = op;
        n.in0 = a;
        n.val = std::move(out);
        n.needs_grad = needs(a);
        return n;
    }

    Node make2(Op op, Id a, Id b, Tensor<S> out) {
        Node n;
        n.op = op;
        n.in0 = a;
        n.in1 = b;
        n.val = std::move(out);
        n.needs_grad = needs(a) || needs(b);
        return n;
    }

    Id ew2(Op op, Id a, Id b) {
        const Tensor<S>& A = value(a);
        const Tensor<S>& B = value(b);
        if (!A.same_shape(B)) throw NumericError("elementwise op: shape mismatch");
        Tensor<S> out = A;
        switch (op) {
            case Op::Add:
                for (int64_t i = 0; i < A.size(); ++i) out[i] += B[i];
                break;
            case Op::Sub:
                for (int64_t i = 0; i < A.size(); ++i) out[i] -= B[i];
                break;
            case Op::Mul:
                for (int64_t i = 0; i < A.size(); ++i) out[i] *= B[i];
                break;
            default:
                throw NumericError("ew2: bad op");
        }
        charge_flops(flops_cost::kAdd * A.size());
        return push(make2(op, a, b, std::move(out)));
    }

    static Tensor<S> col_mean(const Tensor<S>& A) {
        Tensor<S> out({1, A.cols()});
        for (int c = 0; c < A.cols(); ++c) {
            S acc = S(0);
            for (int r = 0; r < A.rows(); ++r) acc += A.at(r, c);
            out[c] = acc / S(A.rows());
        }
        return out;
    }

    Tensor<S>* gptr(Id id) {
        if (id == kNone) return nullptr;
        Node& n = nodes_[check(id)];
        return n.needs_grad ? &n.grad : nullptr;
    }

    void backward_node(Id id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.needs_grad || n.op == Op::Leaf) return;
        const Tensor<S>& g = n.grad;
        Tensor<S>* ga = gptr(n.in0);
        Tensor<S>* gb = gptr(n.in1);
        const Tensor<S>& A = n.in0 != kNone ? nodes_[check(n.in0)].val : n.val;
        const Tensor<S>& B = n.in1 != kNone ? nodes_[check(n.in1)].val : n.val;

        switch (n.op) {
            case Op::Leaf:
            case Op::Detach:
                break;

            case Op::Matmul:
                if (ga) emap(*ga) += cmap(g) * cmap(B).transpose();
                if (gb) emap(*gb) += cmap(A).transpose() * cmap(g);
                break;

            case Op::MatmulNT:
                if (ga) emap(*ga) += cmap(g) * cmap(B);
                if (gb) emap(*gb) += cmap(g).transpose() * cmap(A);
                break;

            case Op::Add:
                if (ga) axpy(*ga, g, S(1));
                if (gb) axpy(*gb, g, S(1));
                break;

            case Op::Sub:
                if (ga) axpy(*ga, g, S(1));
                if (gb) axpy(*gb, g, S(-1));
                break;

            case Op::Mul:
                if (ga)
                    for (int64_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * B[i];
                if (gb)
                    for (int64_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * A[i];
                break;

            case Op::AddRowVec:
                if (ga) axpy(*ga, g, S(1));
                if (gb)
                    for (int r = 0; r < g.rows(); ++r)
                        for (int c = 0; c < g.cols(); ++c) (*gb)[c] += g.at(r, c);
                break;

            case Op::MulColVec:
                if (ga)
                    for (int r = 0; r < g.rows(); ++r)
                        for (int c = 0; c < g.cols(); ++c) (*ga).at(r, c) += g.at(r, c) * B[r];
                if (gb)
                    for (int r = 0; r < g.rows(); ++r) {
                        S acc = S(0);
                        for (int c = 0; c < g.cols(); ++c) acc += g.at(r, c) * A.at(r, c);
                        (*gb)[r] += acc;
                    }
                break;

            case Op::Scale:
                if (ga) axpy(*ga, g, n.s0);
                break;

            case Op::AddConst:
                if (ga) axpy(*ga, g, S(1));
                break;

            case Op::Sigmoid:
                if (ga)
                    for (int64_t i = 0; i < g.size(); ++i) {
                        const S s = n.val[i];
                        (*ga)[i] += g[i] * s * (S(1) - s);
                    }
                break;

            case Op::Gelu:
                if (ga)
                    for (int64_t i = 0; i < g.size(); ++i) {
                        const S x = A[i];
                        const S phi = S(0.5) * (S(1) + std::erf(x * S(0.7071067811865476)));
                        const S pdf = std::exp(-x * x * S(0.5)) * S(0.3989422804014327);
                        (*ga)[i] += g[i] * (phi + x * pdf);
                    }
                break;

            case Op::Square:
                if (ga)
                    for (int64_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * S(2) * A[i];
                break;

            case Op::SoftmaxRows:
                if (ga) {
                    const Tensor<S>& p = n.val;
                    for (int r = 0; r < p.rows(); ++r) {
                        S dot = S(0);
                        for (int c = 0; c < p.cols(); ++c) dot += g.at(r, c) * p.at(r, c);
                        for (int c = 0; c < p.cols(); ++c) {
                            if (!n.sel.empty() && !n.sel[static_cast<size_t>(c)]) continue;
                            (*ga).at(r, c) += p.at(r, c) * (g.at(r, c) - dot);
                        }
                    }
                }
                break;

            case Op::LayerNormRows: {
                Tensor<S>* gg = gptr(n.in1);
                Tensor<S>* gbias = gptr(n.in2);
                const Tensor<S>& G = nodes_[check(n.in1)].val;
                const int cols = A.cols();
                for (int r = 0; r < A.rows(); ++r) {
                    S mu = S(0);
                    for (int c = 0; c < cols; ++c) mu += A.at(r, c);
                    mu /= S(cols);
                    S var = S(0);
                    for (int c = 0; c < cols; ++c) {
                        const S d = A.at(r, c) - mu;
                        var += d * d;
                    }
                    var /= S(cols);
                    const S inv = S(1) / std::sqrt(var + n.s0);
                    S m1 = S(0), m2 = S(0);
                    for (int c = 0; c < cols; ++c) {
                        const S xh = (A.at(r, c) - mu) * inv;
                        const S dxh = g.at(r, c) * G[c];
                        m1 += dxh;
                        m2 += dxh * xh;
                        if (gg) (*gg)[c] += g.at(r, c) * xh;
                        if (gbias) (*gbias)[c] += g.at(r, c);
                    }
                    if (ga) {
                        m1 /= S(cols);
                        m2 /= S(cols);
                        for (int c = 0; c < cols; ++c) {
                            const S xh = (A.at(r, c) - mu) * inv;
                            const S dxh = g.at(r, c) * G[c];
                            (*ga).at(r, c) += (dxh - m1 - xh * m2) * inv;
                        }
                    }
                }
                break;
            }

            case Op::MeanAll:
                if (ga) {
                    const S w = g[0] / S(A.size());
                    for (int64_t i = 0; i < A.size(); ++i) (*ga)[i] += w;
                }
                break;

            case Op::MeanRows:
                if (ga) {
                    const S inv = S(1) / S(A.rows());
                    for (int r = 0; r < A.rows(); ++r)
                        for (int c = 0; c < A.cols(); ++c) (*ga).at(r, c) += g[c] * inv;
                }
                break;

            case Op::ConcatCols:
                if (ga)
                    for (int r = 0; r < A.rows(); ++r)
                        for (int c = 0; c < A.cols(); ++c) (*ga).at(r, c) += g.at(r, c);
                if (gb)
                    for (int r = 0; r < B.rows(); ++r)
                        for (int c = 0; c < B.cols(); ++c) (*gb).at(r, c) += g.at(r, A.cols() + c);
                break;

            case Op::ConcatRows:
                if (ga)
                    for (int64_t i = 0; i < A.size(); ++i) (*ga)[i] += g[i];
                if (gb)
                    for (int64_t i = 0; i < B.size(); ++i) (*gb)[i] += g[A.size() + i];
                break;

            case Op::SliceRows:
                if (ga)
                    for (int r = 0; r < g.rows(); ++r)
                        for (int c = 0; c < g.cols(); ++c) (*ga).at(n.i0 + r, c) += g.at(r, c);
                break;

            case Op::SliceCols:
                if (ga)
                    for (int r = 0; r < g.rows(); ++r)
                        for (int c = 0; c < g.cols(); ++c) (*ga).at(r, n.i0 + c) += g.at(r, c);
                break;

            case Op::RelBiasAdd:
                if (ga) axpy(*ga, g, S(1));
                if (gb)
                    for (int i = 0; i < g.rows(); ++i)
                        for (int j = 0; j < g.cols(); ++j)
                            (*gb)[relative_index(i, j, n.i0)] += g.at(i, j);
                break;

            case Op::CrossEntropyRows:
                if (ga && n.i0 > 0) {
                    const S w = g[0] / S(n.i0);
                    for (int r = 0; r < A.rows(); ++r) {
                        if (!n.sel.empty() && !n.sel[static_cast<size_t>(r)]) continue;
                        S mx = A.at(r, 0);
                        for (int c = 1; c < A.cols(); ++c) mx = std::max(mx, A.at(r, c));
                        double sum = 0.0;
                        for (int c = 0; c < A.cols(); ++c) sum += std::exp(double(A.at(r, c) - mx));
                        for (int c = 0; c < A.cols(); ++c) {
                            const S p = S(std::exp(double(A.at(r, c) - mx)) / sum);
                            (*ga).at(r, c) += w * (p - S(c == n.idx[static_cast<size_t>(r)] ? 1 : 0));
                        }
                    }
                }
                break;

            case Op::CosineRows:
                for (int r = 0; r < A.rows(); ++r) {
                    S dot = S(0), na2 = S(0), nb2 = S(0);
                    for (int c = 0; c < A.cols(); ++c) {
                        dot += A.at(r, c) * B.at(r, c);
                        na2 += A.at(r, c) * A.at(r, c);
                        nb2 += B.at(r, c) * B.at(r, c);
                    }
                    const S na = std::max(std::sqrt(na2), n.s0);
                    const S nb = std::max(std::sqrt(nb2), n.s0);
                    const bool clamp_a = std::sqrt(na2) < n.s0;
                    const bool clamp_b = std::sqrt(nb2) < n.s0;
                    const S gr = g.at(r, 0);
                    for (int c = 0; c < A.cols(); ++c) {
                        if (ga) {
                            S d = B.at(r, c) / (na * nb);
                            if (!clamp_a) d -= dot * A.at(r, c) / (na * na * na * nb);
                            (*ga).at(r, c) += gr * d;
                        }
                        if (gb) {
                            S d = A.at(r, c) / (na * nb);
                            if (!clamp_b) d -= dot * B.at(r, c) / (nb * nb * nb * na);
                            (*gb).at(r, c) += gr * d;
                        }
                    }
                }
                break;

            case Op::PoolMean:
                if (ga) {
                    const S inv = S(1) / S(A.rows());
                    for (int r = 0; r < A.rows(); ++r)
                        for (int c = 0; c < A.cols(); ++c) (*ga).at(r, c) += g[c] * inv;
                }
                break;

            case Op::PoolStd:
                if (ga) {
                    const int T = A.rows();
                    for (int c = 0; c < A.cols(); ++c) {
                        S mu = S(0);
                        for (int r = 0; r < T; ++r) mu += A.at(r, c);
                        mu /= S(T);
                        const S s = std::max(n.val[c], S(1e-8));
                        const S w = g[c] / (S(T) * s);
                        for (int r = 0; r < T; ++r) (*ga).at(r, c) += w * (A.at(r, c) - mu);
                    }
                }
                break;

            case Op::PoolMax:
                if (ga)
                    for (int c = 0; c < A.cols(); ++c)
                        (*ga).at(n.idx[static_cast<size_t>(c)], c) += g[c];
                break;

            case Op::GatherRows:
                if (ga)
                    for (size_t r = 0; r < n.idx.size(); ++r)
                        for (int c = 0; c < A.cols(); ++c)
                            (*ga).at(n.idx[r], c) += g.at(static_cast<int>(r), c);
                break;
        }
    }

    static void axpy(Tensor<S>& dst, const Tensor<S>& src, S a) {
        for (int64_t i = 0; i < src.size(); ++i) dst[i] += a * src[i];
    }
};

using Tapef = Tape<float>;
using Taped = Tape<double>;

} // namespace hear

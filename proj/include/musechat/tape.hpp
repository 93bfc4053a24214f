#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "musechat/errors.hpp"
#include "musechat/matrix.hpp"
#include "musechat/params.hpp"

namespace musechat {

/// Handle to a value recorded on a Tape.
struct Node {
    std::uint32_t id = 0;
};

enum class OpKind : std::uint8_t {
    kInput,
    kParam,
    kMatmul,
    kTranspose,
    kAdd,
    kScale,
    kScaleByNode,
    kAddRowBroadcast,
    kMulElem,
    kExp,
    kTanh,
    kSoftmaxRows,
    kLogSoftmaxRows,
    kLayerNormRows,
    kL2NormalizeRows,
    kSliceRows,
    kSliceCols,
    kConcatRows,
    kConcatCols,
    kMeanRows,
    kSumAll,
    kTrace,
    kGatherRows,
    kSelectNll,
};

/// One recorded primitive: the op, its input node ids, the output node id
/// and a small payload (scalar / extents / index lists).
struct OpRecord {
    OpKind kind = OpKind::kInput;
    std::vector<Node> inputs;
    Node out;
    double scalar = 0.0;
    std::size_t a = 0;
    std::size_t b = 0;
    std::vector<std::size_t> indices;
    std::vector<double> weights;
};

/// Reverse-mode tape over dense matrices. Forward calls append records;
/// backward() walks them in reverse and accumulates adjoints, adding the
/// gradient of every parameter leaf into Parameter::grad. Replaying the
/// same calls on the same inputs reproduces every value bit-identically.
class Tape {
  public:
    const Matrix& value(Node n) const { return values_[n.id]; }

    /// Adjoint of a node; valid after backward().
    const Matrix& grad(Node n) const { return grads_[n.id]; }

    std::size_t num_nodes() const { return values_.size(); }
    const std::vector<OpRecord>& records() const { return ops_; }

    Node input(Matrix m) { return push(OpKind::kInput, {}, std::move(m)); }

    Node constant(double v) { return input(Matrix::full(1, 1, v)); }

    Node param(Parameter& p) {
        Node n = push(OpKind::kParam, {}, p.value);
        params_.emplace_back(n, &p);
        return n;
    }

    Node matmul(Node a, Node b) {
        const Matrix& A = values_[a.id];
        const Matrix& B = values_[b.id];
        if (A.cols != B.rows) throw DimensionError("matmul: " + A.shape_str() + " * " + B.shape_str());
        Matrix C(A.rows, B.cols);
        matmul_into(A, B, C);
        return push(OpKind::kMatmul, {a, b}, std::move(C));
    }

    Node transpose(Node a) {
        const Matrix& A = values_[a.id];
        Matrix C(A.cols, A.rows);
        for (std::size_t i = 0; i < A.rows; ++i)
            for (std::size_t j = 0; j < A.cols; ++j) C.at(j, i) = A.at(i, j);
        return push(OpKind::kTranspose, {a}, std::move(C));
    }

    Node add(Node a, Node b) {
        const Matrix& A = values_[a.id];
        const Matrix& B = values_[b.id];
        if (!A.same_shape(B)) throw DimensionError("add: " + A.shape_str() + " + " + B.shape_str());
        Matrix C = A;
        for (std::size_t i = 0; i < C.data.size(); ++i) C.data[i] += B.data[i];
        return push(OpKind::kAdd, {a, b}, std::move(C));
    }

    Node scale(Node a, double s) {
        Matrix C = values_[a.id];
        for (double& v : C.data) v *= s;
        Node n = push(OpKind::kScale, {a}, std::move(C));
        ops_.back().scalar = s;
        return n;
    }

    /// out = a * s where s is a 1x1 node (used for the trainable 1/tau).
    Node scale_by(Node a, Node s) {
        const Matrix& S = values_[s.id];
        if (S.rows != 1 || S.cols != 1) throw DimensionError("scale_by: scalar node is " + S.shape_str());
        Matrix C = values_[a.id];
        for (double& v : C.data) v *= S.data[0];
        return push(OpKind::kScaleByNode, {a, s}, std::move(C));
    }

    /// out[r, :] = m[r, :] + row[0, :]
    Node add_row_broadcast(Node m, Node row) {
        const Matrix& A = values_[m.id];
        const Matrix& R = values_[row.id];
        if (R.rows != 1 || R.cols != A.cols)
            throw DimensionError("add_row_broadcast: " + A.shape_str() + " + " + R.shape_str());
        Matrix C = A;
        for (std::size_t r = 0; r < C.rows; ++r)
            for (std::size_t j = 0; j < C.cols; ++j) C.at(r, j) += R.data[j];
        return push(OpKind::kAddRowBroadcast, {m, row}, std::move(C));
    }

    Node mul_elem(Node a, Node b) {
        const Matrix& A = values_[a.id];
        const Matrix& B = values_[b.id];
        if (!A.same_shape(B)) throw DimensionError("mul_elem: " + A.shape_str() + " * " + B.shape_str());
        Matrix C = A;
        for (std::size_t i = 0; i < C.data.size(); ++i) C.data[i] *= B.data[i];
        return push(OpKind::kMulElem, {a, b}, std::move(C));
    }

    Node exp_elem(Node a) {
        Matrix C = values_[a.id];
        for (double& v : C.data) v = std::exp(v);
        return push(OpKind::kExp, {a}, std::move(C));
    }

    Node tanh_elem(Node a) {
        Matrix C = values_[a.id];
        for (double& v : C.data) v = std::tanh(v);
        return push(OpKind::kTanh, {a}, std::move(C));
    }

    /// Row-wise stable softmax: subtract the row max before exponentiation.
    Node softmax_rows(Node a) {
        const Matrix& A = values_[a.id];
        if (A.size() == 0) throw ContractError("softmax_rows: empty matrix");
        Matrix C(A.rows, A.cols);
        for (std::size_t r = 0; r < A.rows; ++r) {
            double mx = A.at(r, 0);
            for (std::size_t j = 1; j < A.cols; ++j) mx = std::max(mx, A.at(r, j));
            double sum = 0.0;
            for (std::size_t j = 0; j < A.cols; ++j) {
                double e = std::exp(A.at(r, j) - mx);
                C.at(r, j) = e;
                sum += e;
            }
            for (std::size_t j = 0; j < A.cols; ++j) C.at(r, j) /= sum;
        }
        return push(OpKind::kSoftmaxRows, {a}, std::move(C));
    }

    Node log_softmax_rows(Node a) {
        const Matrix& A = values_[a.id];
        if (A.size() == 0) throw ContractError("log_softmax_rows: empty matrix");
        Matrix C(A.rows, A.cols);
        for (std::size_t r = 0; r < A.rows; ++r) {
            double mx = A.at(r, 0);
            for (std::size_t j = 1; j < A.cols; ++j) mx = std::max(mx, A.at(r, j));
            double sum = 0.0;
            for (std::size_t j = 0; j < A.cols; ++j) sum += std::exp(A.at(r, j) - mx);
            double lse = mx + std::log(sum);
            for (std::size_t j = 0; j < A.cols; ++j) C.at(r, j) = A.at(r, j) - lse;
        }
        return push(OpKind::kLogSoftmaxRows, {a}, std::move(C));
    }

    /// Row-wise layer norm with learnable gain/bias (1 x cols each).
    Node layer_norm_rows(Node x, Node gain, Node bias, double eps = 1e-5) {
        const Matrix& A = values_[x.id];
        const Matrix& G = values_[gain.id];
        const Matrix& B = values_[bias.id];
        if (G.rows != 1 || G.cols != A.cols || B.rows != 1 || B.cols != A.cols)
            throw DimensionError("layer_norm_rows: x " + A.shape_str() + ", gain " + G.shape_str() + ", bias " +
                                 B.shape_str());
        Matrix C(A.rows, A.cols);
        for (std::size_t r = 0; r < A.rows; ++r) {
            double mu = 0.0;
            for (std::size_t j = 0; j < A.cols; ++j) mu += A.at(r, j);
            mu /= static_cast<double>(A.cols);
            double var = 0.0;
            for (std::size_t j = 0; j < A.cols; ++j) {
                double d = A.at(r, j) - mu;
                var += d * d;
            }
            var /= static_cast<double>(A.cols);
            double inv = 1.0 / std::sqrt(var + eps);
            for (std::size_t j = 0; j < A.cols; ++j)
                C.at(r, j) = G.data[j] * (A.at(r, j) - mu) * inv + B.data[j];
        }
        Node n = push(OpKind::kLayerNormRows, {x, gain, bias}, std::move(C));
        ops_.back().scalar = eps;
        return n;
    }

    /// y = x / sqrt(|x|^2 + 1e-16) per row; smooth at zero so gradient
    /// checks stay valid, unit norm to well under 1e-12 for |x| > 0.01.
    Node l2_normalize_rows(Node a) {
        const Matrix& A = values_[a.id];
        Matrix C(A.rows, A.cols);
        for (std::size_t r = 0; r < A.rows; ++r) {
            double d = 0.0;
            for (std::size_t j = 0; j < A.cols; ++j) d += A.at(r, j) * A.at(r, j);
            double inv = 1.0 / std::sqrt(d + kNormEps2);
            for (std::size_t j = 0; j < A.cols; ++j) C.at(r, j) = A.at(r, j) * inv;
        }
        return push(OpKind::kL2NormalizeRows, {a}, std::move(C));
    }

    Node slice_rows(Node a, std::size_t r0, std::size_t count) {
        const Matrix& A = values_[a.id];
        if (r0 + count > A.rows)
            throw DimensionError("slice_rows: [" + std::to_string(r0) + ", " + std::to_string(r0 + count) +
                                 ") of " + A.shape_str());
        Matrix C(count, A.cols);
        for (std::size_t r = 0; r < count; ++r)
            for (std::size_t j = 0; j < A.cols; ++j) C.at(r, j) = A.at(r0 + r, j);
        Node n = push(OpKind::kSliceRows, {a}, std::move(C));
        ops_.back().a = r0;
        ops_.back().b = count;
        return n;
    }

    Node slice_cols(Node a, std::size_t c0, std::size_t count) {
        const Matrix& A = values_[a.id];
        if (c0 + count > A.cols)
            throw DimensionError("slice_cols: [" + std::to_string(c0) + ", " + std::to_string(c0 + count) +
                                 ") of " + A.shape_str());
        Matrix C(A.rows, count);
        for (std::size_t r = 0; r < A.rows; ++r)
            for (std::size_t j = 0; j < count; ++j) C.at(r, j) = A.at(r, c0 + j);
        Node n = push(OpKind::kSliceCols, {a}, std::move(C));
        ops_.back().a = c0;
        ops_.back().b = count;
        return n;
    }

    Node concat_rows(const std::vector<Node>& parts) {
        if (parts.empty()) throw ContractError("concat_rows: no parts");
        std::size_t cols = values_[parts[0].id].cols, rows = 0;
        for (Node p : parts) {
            const Matrix& M = values_[p.id];
            if (M.cols != cols) throw DimensionError("concat_rows: column mismatch " + M.shape_str());
            rows += M.rows;
        }
        Matrix C(rows, cols);
        std::size_t r = 0;
        for (Node p : parts) {
            const Matrix& M = values_[p.id];
            for (std::size_t i = 0; i < M.rows; ++i, ++r)
                for (std::size_t j = 0; j < cols; ++j) C.at(r, j) = M.at(i, j);
        }
        return push(OpKind::kConcatRows, parts, std::move(C));
    }

    Node concat_cols(const std::vector<Node>& parts) {
        if (parts.empty()) throw ContractError("concat_cols: no parts");
        std::size_t rows = values_[parts[0].id].rows, cols = 0;
        for (Node p : parts) {
            const Matrix& M = values_[p.id];
            if (M.rows != rows) throw DimensionError("concat_cols: row mismatch " + M.shape_str());
            cols += M.cols;
        }
        Matrix C(rows, cols);
        std::size_t c = 0;
        for (Node p : parts) {
            const Matrix& M = values_[p.id];
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < M.cols; ++j) C.at(i, c + j) = M.at(i, j);
            c += M.cols;
        }
        return push(OpKind::kConcatCols, parts, std::move(C));
    }

    /// Column means accumulate over sorted addends in extended precision,
    /// so row permutations pool bit-identically.
    Node mean_rows(Node a) {
        const Matrix& A = values_[a.id];
        if (A.rows == 0) throw ContractError("mean_rows: empty matrix");
        Matrix C(1, A.cols);
        std::vector<double> col(A.rows);
        for (std::size_t j = 0; j < A.cols; ++j) {
            for (std::size_t r = 0; r < A.rows; ++r) col[r] = A.at(r, j);
            std::sort(col.begin(), col.end());
            long double s = 0.0L;
            for (double v : col) s += v;
            C.data[j] = static_cast<double>(s / static_cast<long double>(A.rows));
        }
        return push(OpKind::kMeanRows, {a}, std::move(C));
    }

    Node sum_all(Node a) {
        const Matrix& A = values_[a.id];
        double s = 0.0;
        for (double v : A.data) s += v;
        return push(OpKind::kSumAll, {a}, Matrix::full(1, 1, s));
    }

    Node trace(Node a) {
        const Matrix& A = values_[a.id];
        if (A.rows != A.cols) throw DimensionError("trace: " + A.shape_str());
        double s = 0.0;
        for (std::size_t i = 0; i < A.rows; ++i) s += A.at(i, i);
        return push(OpKind::kTrace, {a}, Matrix::full(1, 1, s));
    }

    /// out = table[ids, :]; backward scatter-adds (embedding lookup).
    Node gather_rows(Node table, const std::vector<std::size_t>& ids) {
        const Matrix& T = values_[table.id];
        Matrix C(ids.size(), T.cols);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] >= T.rows)
                throw DataError("gather_rows: index " + std::to_string(ids[i]) + " out of " +
                                std::to_string(T.rows));
            for (std::size_t j = 0; j < T.cols; ++j) C.at(i, j) = T.at(ids[i], j);
        }
        Node n = push(OpKind::kGatherRows, {table}, std::move(C));
        ops_.back().indices = ids;
        return n;
    }

    /// loss = -sum_r weights[r] * logp[r, targets[r]]; the per-token NLL
    /// with a mask. Weights of zero drop a position from the loss.
    Node select_nll(Node logp, const std::vector<std::size_t>& targets, const std::vector<double>& weights) {
        const Matrix& L = values_[logp.id];
        if (targets.size() != L.rows || weights.size() != L.rows)
            throw DimensionError("select_nll: " + std::to_string(targets.size()) + " targets for " +
                                 L.shape_str());
        double s = 0.0;
        for (std::size_t r = 0; r < L.rows; ++r) {
            if (targets[r] >= L.cols)
                throw DataError("select_nll: target " + std::to_string(targets[r]) + " out of vocabulary " +
                                std::to_string(L.cols));
            s -= weights[r] * L.at(r, targets[r]);
        }
        Node n = push(OpKind::kSelectNll, {logp}, Matrix::full(1, 1, s));
        ops_.back().indices = targets;
        ops_.back().weights = weights;
        return n;
    }

    /// Reverse pass from a scalar loss. Accumulates d(loss)/d(param) into
    /// each Parameter::grad registered via param().
    void backward(Node loss) {
        const Matrix& L = values_[loss.id];
        if (L.rows != 1 || L.cols != 1)
            throw ContractError("backward: loss must be a scalar, got " + L.shape_str());
        grads_.clear();
        grads_.reserve(values_.size());
        for (const Matrix& v : values_) grads_.emplace_back(v.rows, v.cols);
        grads_[loss.id].data[0] = 1.0;

        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) backward_one(*it);

        for (auto& [node, p] : params_) {
            const Matrix& g = grads_[node.id];
            for (std::size_t i = 0; i < g.data.size(); ++i) p->grad.data[i] += g.data[i];
            if (!p->grad.finite()) throw ContractError("backward: non-finite gradient for " + p->name);
        }
    }

    static constexpr double kNormEps2 = 1e-16;

  private:
    Node push(OpKind kind, std::vector<Node> inputs, Matrix value) {
        Node n{static_cast<std::uint32_t>(values_.size())};
        values_.push_back(std::move(value));
        OpRecord rec;
        rec.kind = kind;
        rec.inputs = std::move(inputs);
        rec.out = n;
        ops_.push_back(std::move(rec));
        return n;
    }

    static void matmul_into(const Matrix& A, const Matrix& B, Matrix& C) {
        // ikj loop order; desk-scale sizes, no blocking needed
        for (std::size_t i = 0; i < A.rows; ++i) {
            double* crow = &C.data[i * C.cols];
            for (std::size_t k = 0; k < A.cols; ++k) {
                double aik = A.at(i, k);
                if (aik == 0.0) continue;
                const double* brow = &B.data[k * B.cols];
                for (std::size_t j = 0; j < B.cols; ++j) crow[j] += aik * brow[j];
            }
        }
    }

    void backward_one(const OpRecord& op) {
        const Matrix& g = grads_[op.out.id];
        switch (op.kind) {
            case OpKind::kInput:
            case OpKind::kParam:
                break;
            case OpKind::kMatmul: {
                const Matrix& A = values_[op.inputs[0].id];
                const Matrix& B = values_[op.inputs[1].id];
                Matrix& dA = grads_[op.inputs[0].id];
                Matrix& dB = grads_[op.inputs[1].id];
                // dA += g * B^T
                for (std::size_t i = 0; i < A.rows; ++i)
                    for (std::size_t k = 0; k < B.cols; ++k) {
                        double gik = g.at(i, k);
                        if (gik == 0.0) continue;
                        for (std::size_t j = 0; j < A.cols; ++j) dA.at(i, j) += gik * B.at(j, k);
                    }
                // dB += A^T * g
                for (std::size_t i = 0; i < A.rows; ++i)
                    for (std::size_t j = 0; j < A.cols; ++j) {
                        double aij = A.at(i, j);
                        if (aij == 0.0) continue;
                        for (std::size_t k = 0; k < B.cols; ++k) dB.at(j, k) += aij * g.at(i, k);
                    }
                break;
            }
            case OpKind::kTranspose: {
                Matrix& dA = grads_[op.inputs[0].id];
                for (std::size_t i = 0; i < g.rows; ++i)
                    for (std::size_t j = 0; j < g.cols; ++j) dA.at(j, i) += g.at(i, j);
                break;
            }
            case OpKind::kAdd: {
                Matrix& dA = grads_[op.inputs[0].id];
                Matrix& dB = grads_[op.inputs[1].id];
                for (std::size_t i = 0; i < g.data.size(); ++i) {
                    dA.data[i] += g.data[i];
                    dB.data[i] += g.data[i];
                }
                break;
            }
            case OpKind::kScale: {
                Matrix& dA = grads_[op.inputs[0].id];
                for (std::size_t i = 0; i < g.data.size(); ++i) dA.data[i] += op.scalar * g.data[i];
                break;
            }
            case OpKind::kScaleByNode: {
                const Matrix& A = values_[op.inputs[0].id];
                double s = values_[op.inputs[1].id].data[0];
                Matrix& dA = grads_[op.inputs[0].id];
                Matrix& dS = grads_[op.inputs[1].id];
                for (std::size_t i = 0; i < g.data.size(); ++i) {
                    dA.data[i] += s * g.data[i];
                    dS.data[0] += A.data[i] * g.data[i];
                }
                break;
            }
            case OpKind::kAddRowBroadcast: {
                Matrix& dA = grads_[op.inputs[0].id];
                Matrix& dR = grads_[op.inputs[1].id];
                for (std::size_t r = 0; r < g.rows; ++r)
                    for (std::size_t j = 0; j < g.cols; ++j) {
                        dA.at(r, j) += g.at(r, j);
                        dR.data[j] += g.at(r, j);
                    }
                break;
            }
            case OpKind::kMulElem: {
                const Matrix& A = values_[op.inputs[0].id];
                const Matrix& B = values_[op.inputs[1].id];
                Matrix& dA = grads_[op.inputs[0].id];
                Matrix& dB = grads_[op.inputs[1].id];
                for (std::size_t i = 0; i < g.data.size(); ++i) {
                    dA.data[i] += g.data[i] * B.data[i];
                    dB.data[i] += g.data[i] * A.data[i];
                }
                break;
            }
            case OpKind::kExp: {
                const Matrix& Y = values_[op.out.id];
                Matrix& dA = grads_[op.inputs[0].id];
                for (std::size_t i = 0; i < g.data.size(); ++i) dA.data[i] += g.data[i] * Y.data[i];
                break;
            }
            case OpKind::kTanh: {
                const Matrix& Y = values_[op.out.id];
                Matrix& dA = grads_[op.inputs[0].id];
                for (std::size_t i = 0; i < g.data.size(); ++i)
                    dA.data[i] += g.data[i] * (1.0 - Y.data[i] * Y.data[i]);
                break;
            }
            case OpKind::kSoftmaxRows: {
                const Matrix& Y = values_[op.out.id];
                Matrix& dA = grads_[op.inputs[0].id];
                for (std::size_t r = 0; r < Y.rows; ++r) {
                    double dotv = 0.0;
                    for (std::size_t j = 0; j < Y.cols; ++j) dotv += g.at(r, j) * Y.at(r, j);
                    for (std::size_t j = 0; j < Y.cols; ++j)
                        dA.at(r, j) += Y.at(r, j) * (g.at(r, j) - dotv);
                }
                break;
            }
            case OpKind::kLogSoftmaxRows: {
                const Matrix& Y = values_[op.out.id];
                Matrix& dA = grads_[op.inputs[0].id];
                for (std::size_t r = 0; r < Y.rows; ++r) {
                    double gsum = 0.0;
                    for (std::size_t j = 0; j < Y.cols; ++j) gsum += g.at(r, j);
                    for (std::size_t j = 0; j < Y.cols; ++j)
                        dA.at(r, j) += g.at(r, j) - std::exp(Y.at(r, j)) * gsum;
                }
                break;
            }
            case OpKind::kLayerNormRows: {
                const Matrix& X = values_[op.inputs[0].id];
                const Matrix& G = values_[op.inputs[1].id];
                Matrix& dX = grads_[op.inputs[0].id];
                Matrix& dG = grads_[op.inputs[1].id];
                Matrix& dB = grads_[op.inputs[2].id];
                double eps = op.scalar;
                std::size_t d = X.cols;
                std::vector<double> xhat(d);
                for (std::size_t r = 0; r < X.rows; ++r) {
                    double mu = 0.0;
                    for (std::size_t j = 0; j < d; ++j) mu += X.at(r, j);
                    mu /= static_cast<double>(d);
                    double var = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        double diff = X.at(r, j) - mu;
                        var += diff * diff;
                    }
                    var /= static_cast<double>(d);
                    double inv = 1.0 / std::sqrt(var + eps);
                    double m1 = 0.0, m2 = 0.0;  // mean(dxhat), mean(dxhat * xhat)
                    for (std::size_t j = 0; j < d; ++j) {
                        xhat[j] = (X.at(r, j) - mu) * inv;
                        double dxh = g.at(r, j) * G.data[j];
                        m1 += dxh;
                        m2 += dxh * xhat[j];
                        dG.data[j] += g.at(r, j) * xhat[j];
                        dB.data[j] += g.at(r, j);
                    }
                    m1 /= static_cast<double>(d);
                    m2 /= static_cast<double>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        double dxh = g.at(r, j) * G.data[j];
                        dX.at(r, j) += inv * (dxh - m1 - xhat[j] * m2);
                    }
                }
                break;
            }
            case OpKind::kL2NormalizeRows: {
                const Matrix& X = values_[op.inputs[0].id];
                Matrix& dX = grads_[op.inputs[0].id];
                for (std::size_t r = 0; r < X.rows; ++r) {
                    double d2 = kNormEps2, xg = 0.0;
                    for (std::size_t j = 0; j < X.cols; ++j) {
                        d2 += X.at(r, j) * X.at(r, j);
                        xg += X.at(r, j) * g.at(r, j);
                    }
                    double n = std::sqrt(d2);
                    double n3 = n * d2;
                    for (std::size_t j = 0; j < X.cols; ++j)
                        dX.at(r, j) += g.at(r, j) / n - X.at(r, j) * xg / n3;
                }
                break;
            }
            case OpKind::kSliceRows: {
                Matrix& dA = grads_[op.inputs[0].id];
                for (std::size_t r = 0; r < g.rows; ++r)
                    for (std::size_t j = 0; j < g.cols; ++j) dA.at(op.a + r, j) += g.at(r, j);
                break;
            }
            case OpKind::kSliceCols: {
                Matrix& dA = grads_[op.inputs[0].id];
                for (std::size_t r = 0; r < g.rows; ++r)
                    for (std::size_t j = 0; j < g.cols; ++j) dA.at(r, op.a + j) += g.at(r, j);
                break;
            }
            case OpKind::kConcatRows: {
                std::size_t r0 = 0;
                for (Node p : op.inputs) {
                    Matrix& dP = grads_[p.id];
                    for (std::size_t r = 0; r < dP.rows; ++r)
                        for (std::size_t j = 0; j < dP.cols; ++j) dP.at(r, j) += g.at(r0 + r, j);
                    r0 += dP.rows;
                }
                break;
            }
            case OpKind::kConcatCols: {
                std::size_t c0 = 0;
                for (Node p : op.inputs) {
                    Matrix& dP = grads_[p.id];
                    for (std::size_t r = 0; r < dP.rows; ++r)
                        for (std::size_t j = 0; j < dP.cols; ++j) dP.at(r, j) += g.at(r, c0 + j);
                    c0 += dP.cols;
                }
                break;
            }
            case OpKind::kMeanRows: {
                Matrix& dA = grads_[op.inputs[0].id];
                double inv = 1.0 / static_cast<double>(dA.rows);
                for (std::size_t r = 0; r < dA.rows; ++r)
                    for (std::size_t j = 0; j < dA.cols; ++j) dA.at(r, j) += g.data[j] * inv;
                break;
            }
            case OpKind::kSumAll: {
                Matrix& dA = grads_[op.inputs[0].id];
                for (double& v : dA.data) v += g.data[0];
                break;
            }
            case OpKind::kTrace: {
                Matrix& dA = grads_[op.inputs[0].id];
                for (std::size_t i = 0; i < dA.rows; ++i) dA.at(i, i) += g.data[0];
                break;
            }
            case OpKind::kGatherRows: {
                Matrix& dT = grads_[op.inputs[0].id];
                for (std::size_t i = 0; i < op.indices.size(); ++i)
                    for (std::size_t j = 0; j < dT.cols; ++j) dT.at(op.indices[i], j) += g.at(i, j);
                break;
            }
            case OpKind::kSelectNll: {
                Matrix& dL = grads_[op.inputs[0].id];
                for (std::size_t r = 0; r < op.indices.size(); ++r)
                    dL.at(r, op.indices[r]) -= g.data[0] * op.weights[r];
                break;
            }
        }
    }

    std::vector<Matrix> values_;
    std::vector<Matrix> grads_;
    std::vector<OpRecord> ops_;
    std::vector<std::pair<Node, Parameter*>> params_;
};

}  // namespace musechat

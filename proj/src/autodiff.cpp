#include "apl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace apl {

namespace {

void require(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
}

template <typename T>
void softmax_rows_causal(const T* in, T* out, std::size_t rows, std::size_t cols, std::size_t seq) {
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t visible = std::min(cols, r % seq + 1);
        const T* s = in + r * cols;
        T* p = out + r * cols;
        T mx = s[0];
        for (std::size_t j = 1; j < visible; ++j) mx = std::max(mx, s[j]);
        T total = 0;
        for (std::size_t j = 0; j < visible; ++j) {
            p[j] = std::exp(s[j] - mx);
            total += p[j];
        }
        for (std::size_t j = 0; j < visible; ++j) p[j] /= total;
        for (std::size_t j = visible; j < cols; ++j) p[j] = 0;
    }
}

// Writes normalized rows into xhat and 1/sqrt(var+eps) into rstd.
template <typename T>
void normalize_rows(const Tensor<T>& x, T eps, Tensor<T>& xhat, std::vector<T>& rstd) {
    const std::size_t R = x.rows(), C = x.cols();
    xhat = Tensor<T>(x.shape);
    rstd.assign(R, 0);
    for (std::size_t r = 0; r < R; ++r) {
        const T* row = &x.data[r * C];
        T mean = 0;
        for (std::size_t c = 0; c < C; ++c) mean += row[c];
        mean /= static_cast<T>(C);
        T var = 0;
        for (std::size_t c = 0; c < C; ++c) var += (row[c] - mean) * (row[c] - mean);
        var /= static_cast<T>(C);
        const T inv = T(1) / std::sqrt(var + eps);
        rstd[r] = inv;
        for (std::size_t c = 0; c < C; ++c) xhat.data[r * C + c] = (row[c] - mean) * inv;
    }
}

template <typename T>
T log_softmax_at(const T* row, std::size_t n, std::size_t target, T* probs_out) {
    T mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    T total = 0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(row[j] - mx);
    const T log_z = mx + std::log(total);
    if (probs_out) {
        for (std::size_t j = 0; j < n; ++j) probs_out[j] = std::exp(row[j] - log_z);
    }
    return row[target] - log_z;
}

}  // namespace

template <typename T>
typename Tape<T>::Node& Tape<T>::node(Var v) {
    if (!v.valid() || v.id >= nodes_.size()) throw UsageError("variable is not on this tape");
    return nodes_[v.id];
}

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(Var v) const {
    if (!v.valid() || v.id >= nodes_.size()) throw UsageError("variable is not on this tape");
    return nodes_[v.id];
}

template <typename T>
const Tensor<T>& Tape<T>::val(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
}

template <typename T>
const Tensor<T>& Tape<T>::value(Var v) const {
    node(v);
    return val(v.id);
}

template <typename T>
const Tensor<T>& Tape<T>::aux(Var v) const {
    return node(v).aux;
}

template <typename T>
Var Tape<T>::push(Node n) {
    if (consumed_) throw UsageError("tape already ran backward; record a new forward pass");
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

template <typename T>
Tensor<T>* Tape<T>::grad_of(Var v) {
    Node& n = nodes_[v.id];
    if (!n.needs_grad) return nullptr;
    if (n.grad.data.empty()) n.grad = Tensor<T>(val(v.id).shape);
    return &n.grad;
}

template <typename T>
Var Tape<T>::constant(Tensor<T> value) {
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
}

template <typename T>
Var Tape<T>::param(Parameter<T>& p) {
    Node n;
    n.external = &p.value;
    n.param = &p;
    n.needs_grad = true;
    return push(std::move(n));
}

template <typename T>
Var Tape<T>::param(const Parameter<T>& p) {
    Node n;
    n.external = &p.value;
    return push(std::move(n));
}

template <typename T>
Var Tape<T>::matmul(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    require(A.cols() == B.rows(), "matmul: inner dimensions differ");
    Node n;
    n.value = Tensor<T>::matrix(A.rows(), B.cols());
    n.value.mat().noalias() = A.mat() * B.mat();
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    n.back = [a, b](Tape& t, std::size_t self) {
        const auto& G = t.nodes_[self].grad.mat();
        if (auto* ga = t.grad_of(a)) ga->mat().noalias() += G * t.val(b.id).mat().transpose();
        if (auto* gb = t.grad_of(b)) gb->mat().noalias() += t.val(a.id).mat().transpose() * G;
    };
    return push(std::move(n));
}

template <typename T>
Var Tape<T>::add(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    require(A.same_shape(B), "add: shape mismatch");
    Node n;
    n.value = A;
    n.value.mat() += B.mat();
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    n.back = [a, b](Tape& t, std::size_t self) {
        const auto& G = t.nodes_[self].grad.mat();
        if (auto* ga = t.grad_of(a)) ga->mat() += G;
        if (auto* gb = t.grad_of(b)) gb->mat() += G;
    };
    return push(std::move(n));
}

template <typename T>
Var Tape<T>::add_bias(Var x, Var bias) {
    const auto& X = value(x);
    const auto& b = value(bias);
    require(b.size() == X.cols(), "add_bias: bias length differs from column count");
    Node n;
    n.value = X;
    n.value.mat().rowwise() += b.mat().row(0);
    n.needs_grad = node(x).needs_grad || node(bias).needs_grad;
    n.back = [x, bias](Tape& t, std::size_t self) {
        const auto& G = t.nodes_[self].grad.mat();
        if (auto* gx = t.grad_of(x)) gx->mat() += G;
        if (auto* gb = t.grad_of(bias)) gb->mat().row(0) += G.colwise().sum();
    };
    return push(std::move(n));
}

template <typename T>
Var Tape<T>::add_tiled(Var x, Var p) {
    const auto& X = value(x);
    const auto& P = value(p);
    require(P.cols() == X.cols() && P.rows() > 0 && X.rows() % P.rows() == 0, "add_tiled: shape mismatch");
    Node n;
    n.value = X;
    const std::size_t period = P.rows();
    for (std::size_t r = 0; r < X.rows(); r += period) {
        n.value.mat().middleRows(r, period) += P.mat();
    }
    n.needs_grad = node(x).needs_grad || node(p).needs_grad;
    n.back = [x, p, period](Tape& t, std::size_t self) {
        const auto& G = t.nodes_[self].grad;
        if (auto* gx = t.grad_of(x)) gx->mat() += G.mat();
        if (auto* gp = t.grad_of(p)) {
            for (std::size_t r = 0; r < G.rows(); r += period) gp->mat() += G.mat().middleRows(r, period);
        }
    };
    return push(std::move(n));
}

template <typename T>
Var Tape<T>::gather_rows(Var table, std::vector<std::size_t> ids) {
    const auto& W = value(table);
    Node n;
    n.value = Tensor<T>::matrix(ids.size(), W.cols());
    for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] >= W.rows()) throw std::out_of_range("gather_rows: id " + std::to_string(ids[r]) + " out of range");
        n.value.mat().row(r) = W.mat().row(ids[r]);
    }
    n.needs_grad = node(table).needs_grad;
    n.back = [table, ids = std::move(ids)](Tape& t, std::size_t self) {
        const auto& G = t.nodes_[self].grad;
        if (auto* gw = t.grad_of(table)) {
            for (std::size_t r = 0; r < ids.size(); ++r) gw->mat().row(ids[r]) += G.mat().row(r);
        }
    };
    return push(std::move(n));
}

template <typename T>
Var Tape<T>::select_rows(Var x, std::vector<std::size_t> rows) {
    return gather_rows(x, std::move(rows));
}

template <typename T>
Var Tape<T>::causal_scores(Var q, Var k, std::size_t seq, T scale) {
    const auto& Q = value(q);
    const auto& K = value(k);
    require(Q.same_shape(K) && seq > 0 && Q.rows() % seq == 0, "causal_scores: shape mismatch");
    const std::size_t B = Q.rows() / seq;
    Node n;
    n.value = Tensor<T>::matrix(Q.rows(), seq);
    auto S = n.value.mat();
    for (std::size_t b = 0; b < B; ++b) {
        const auto r0 = static_cast<Eigen::Index>(b * seq);
        const auto L = static_cast<Eigen::Index>(seq);
        S.middleRows(r0, L).noalias() = scale * (Q.mat().middleRows(r0, L) * K.mat().middleRows(r0, L).transpose());
        S.middleRows(r0, L).template triangularView<Eigen::StrictlyUpper>().setZero();
    }
    n.needs_grad = node(q).needs_grad || node(k).needs_grad;
    n.back = [q, k, seq, scale, B](Tape& t, std::size_t self) {
        RowMatrix<T> G = t.nodes_[self].grad.mat();
        auto* gq = t.grad_of(q);
        auto* gk = t.grad_of(k);
        const auto& Qv = t.val(q.id).mat();
        const auto& Kv = t.val(k.id).mat();
        const auto L = static_cast<Eigen::Index>(seq);
        for (std::size_t b = 0; b < B; ++b) {
            const auto r0 = static_cast<Eigen::Index>(b * seq);
            auto Gb = G.middleRows(r0, L);
            Gb.template triangularView<Eigen::StrictlyUpper>().setZero();
            if (gq) gq->mat().middleRows(r0, L).noalias() += scale * (Gb * Kv.middleRows(r0, L));
            if (gk) gk->mat().middleRows(r0, L).noalias() += scale * (Gb.transpose() * Qv.middleRows(r0, L));
        }
    };
    return push(std::move(n));
}

template <typename T>
Var Tape<T>::causal_softmax(Var scores, std::size_t seq) {
    const auto& S = value(scores);
    require(seq > 0 && S.cols() == seq && S.rows() % seq == 0, "causal_softmax: shape mismatch");
    Node n;
    n.value = Tensor<T>(S.shape);
    softmax_rows_causal(S.data.data(), n.value.data.data(), S.rows(), S.cols(), seq);
    n.needs_grad = node(scores).needs_grad;
    n.back = [scores, seq](Tape& t, std::size_t self) {
        auto* gs = t.grad_of(scores);
        if (!gs) return;
        const auto& P = t.nodes_[self].value;
        const auto& G = t.nodes_[self].grad;
        const std::size_t C = P.cols();
        for (std::size_t r = 0; r < P.rows(); ++r) {
            const std::size_t visible = std::min(C, r % seq + 1);
            T dot = 0;
            for (std::size_t j = 0; j < visible; ++j) dot += G(r, j) * P(r, j);
            for (std::size_t j = 0; j < visible; ++j) (*gs)(r, j) += P(r, j) * (G(r, j) - dot);
        }
    };
    return push(std::move(n));
}

template <typename T>
Var Tape<T>::attend(Var probs, Var v, std::size_t seq) {
    const auto& P = value(probs);
    const auto& V = value(v);
    require(P.cols() == seq && P.rows() == V.rows() && V.rows() % seq == 0, "attend: shape mismatch");
    const std::size_t B = V.rows() / seq;
    Node n;
    n.value = Tensor<T>::matrix(V.rows(), V.cols());
    const auto L = static_cast<Eigen::Index>(seq);
    for (std::size_t b = 0; b < B; ++b) {
        const auto r0 = static_cast<Eigen::Index>(b * seq);
        n.value.mat().middleRows(r0, L).noalias() = P.mat().middleRows(r0, L) * V.mat().middleRows(r0, L);
    }
    n.needs_grad = node(probs).needs_grad || node(v).needs_grad;
    n.back = [probs, v, seq, B](Tape& t, std::size_t self) {
        const auto& G = t.nodes_[self].grad.mat();
        auto* gp = t.grad_of(probs);
        auto* gv = t.grad_of(v);
        const auto L = static_cast<Eigen::Index>(seq);
        for (std::size_t b = 0; b < B; ++b) {
            const auto r0 = static_cast<Eigen::Index>(b * seq);
            if (gp) gp->mat().middleRows(r0, L).noalias() += G.middleRows(r0, L) * t.val(v.id).mat().middleRows(r0, L).transpose();
            if (gv) gv->mat().middleRows(r0, L).noalias() += t.val(probs.id).mat().middleRows(r0, L).transpose() * G.middleRows(r0, L);
        }
    };
    return push(std::move(n));
}

template <typename T>
Var Tape<T>::layer_norm(Var x, Var gain, Var bias, T eps) {
    const auto& X = value(x);
    const auto& g = value(gain);
    const auto& b = value(bias);
    require(X.cols() >= 2 && g.size() == X.cols() && b.size() == X.cols(), "layer_norm: shape mismatch");
    Node n;
    normalize_rows(X, eps, n.aux, n.scratch);
    n.value = n.aux;
    n.value.mat().array().rowwise() *= g.mat().row(0).array();
    n.value.mat().rowwise() += b.mat().row(0);
    n.needs_grad = node(x).needs_grad || node(gain).needs_grad || node(bias).needs_grad;
    n.back = [x, gain, bias](Tape& t, std::size_t self) {
        const Node& me = t.nodes_[self];
        const auto& G = me.grad.mat();
        const auto& xhat = me.aux.mat();
        if (auto* gg = t.grad_of(gain)) gg->mat().row(0) += (G.array() * xhat.array()).colwise().sum().matrix();
        if (auto* gb = t.grad_of(bias)) gb->mat().row(0) += G.colwise().sum();
        if (auto* gx = t.grad_of(x)) {
            const auto& gvec = t.val(gain.id).mat();
            const auto C = static_cast<T>(xhat.cols());
            RowMatrix<T> dxhat = G.array().rowwise() * gvec.row(0).array();
            for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
                const T mean_d = dxhat.row(r).sum() / C;
                const T mean_dx = dxhat.row(r).dot(xhat.row(r)) / C;
                gx->mat().row(r).array() +=
                    me.scratch[static_cast<std::size_t>(r)] *
                    (dxhat.row(r).array() - mean_d - xhat.row(r).array() * mean_dx);
            }
        }
    };
    return push(std::move(n));
}

template <typename T>
Var Tape<T>::gelu(Var x) {
    const auto& X = value(x);
    Node n;
    n.value = Tensor<T>(X.shape);
    const T inv_sqrt2 = static_cast<T>(0.70710678118654752440);
    for (std::size_t i = 0; i < X.size(); ++i) {
        const T v = X.data[i];
        n.value.data[i] = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
    }
    n.needs_grad = node(x).needs_grad;
    n.back = [x, inv_sqrt2](Tape& t, std::size_t self) {
        auto* gx = t.grad_of(x);
        if (!gx) return;
        const auto& X = t.val(x.id);
        const auto& G = t.nodes_[self].grad;
        const T inv_sqrt_2pi = static_cast<T>(0.39894228040143267794);
        for (std::size_t i = 0; i < X.size(); ++i) {
            const T v = X.data[i];
            const T d = T(0.5) * (T(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
            gx->data[i] += G.data[i] * d;
        }
    };
    return push(std::move(n));
}

template <typename T>
Var Tape<T>::relu(Var x) {
    const auto& X = value(x);
    Node n;
    n.value = X;
    n.value.mat() = X.mat().cwiseMax(T(0));
    n.needs_grad = node(x).needs_grad;
    n.back = [x](Tape& t, std::size_t self) {
        auto* gx = t.grad_of(x);
        if (!gx) return;
        const auto& X = t.val(x.id);
        const auto& G = t.nodes_[self].grad;
        for (std::size_t i = 0; i < X.size(); ++i) {
            if (X.data[i] > 0) gx->data[i] += G.data[i];
        }
    };
    return push(std::move(n));
}

template <typename T>
Var Tape<T>::sum(Var x) {
    Node n;
    n.value = Tensor<T>::vector(1, value(x).mat().sum());
    n.needs_grad = node(x).needs_grad;
    n.back = [x](Tape& t, std::size_t self) {
        if (auto* gx = t.grad_of(x)) gx->mat().array() += t.nodes_[self].grad.data[0];
    };
    return push(std::move(n));
}

template <typename T>
Var Tape<T>::cross_entropy(Var logits, std::vector<std::size_t> targets) {
    const auto& Z = value(logits);
    require(targets.size() == Z.rows() && !targets.empty(), "cross_entropy: one target per row required");
    Node n;
    n.aux = Tensor<T>(Z.shape);
    T total = 0;
    for (std::size_t r = 0; r < Z.rows(); ++r) {
        if (targets[r] >= Z.cols()) {
            throw std::out_of_range("cross_entropy: target " + std::to_string(targets[r]) + " outside vocabulary");
        }
        total -= log_softmax_at(&Z.data[r * Z.cols()], Z.cols(), targets[r], &n.aux.data[r * Z.cols()]);
    }
    n.value = Tensor<T>::vector(1, total / static_cast<T>(Z.rows()));
    n.needs_grad = node(logits).needs_grad;
    n.back = [logits, targets = std::move(targets)](Tape& t, std::size_t self) {
        auto* gz = t.grad_of(logits);
        if (!gz) return;
        const Node& me = t.nodes_[self];
        const T scale = me.grad.data[0] / static_cast<T>(targets.size());
        gz->mat() += scale * me.aux.mat();
        for (std::size_t r = 0; r < targets.size(); ++r) (*gz)(r, targets[r]) -= scale;
    };
    return push(std::move(n));
}

template <typename T>
void Tape<T>::backward(Var loss) {
    if (consumed_) throw UsageError("backward already ran on this tape");
    if (!loss.valid() || loss.id >= nodes_.size()) throw UsageError("backward without a recorded forward pass");
    if (val(loss.id).size() != 1) throw UsageError("backward needs a scalar loss");
    consumed_ = true;
    if (!nodes_[loss.id].needs_grad) return;
    grad_of(loss)->data[0] = T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.grad.data.empty()) continue;
        if (n.back) n.back(*this, i);
        if (n.param) n.param->grad.mat() += n.grad.mat();
    }
}

template <typename T>
Tensor<T> masked_row_softmax(const Tensor<T>& scores) {
    require(scores.rank() == 2 && scores.rows() == scores.cols(), "masked_row_softmax: square matrix required");
    Tensor<T> out(scores.shape);
    softmax_rows_causal(scores.data.data(), out.data.data(), scores.rows(), scores.cols(), scores.rows());
    return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
    require(x.cols() >= 2 && gain.size() == x.cols() && bias.size() == x.cols(), "layer_norm: shape mismatch");
    Tensor<T> out;
    std::vector<T> rstd;
    normalize_rows(x, eps, out, rstd);
    out.mat().array().rowwise() *= gain.mat().row(0).array();
    out.mat().rowwise() += bias.mat().row(0);
    return out;
}

template <typename T>
T cross_entropy_last(const Tensor<T>& logits, std::size_t target) {
    if (target >= logits.cols()) throw std::out_of_range("cross_entropy_last: target outside vocabulary");
    return -log_softmax_at(&logits.data[(logits.rows() - 1) * logits.cols()], logits.cols(), target, static_cast<T*>(nullptr));
}

template <typename T>
Tensor<T> cross_entropy_last_grad(const Tensor<T>& logits, std::size_t target) {
    if (target >= logits.cols()) throw std::out_of_range("cross_entropy_last_grad: target outside vocabulary");
    Tensor<T> g(logits.shape);
    const std::size_t last = logits.rows() - 1;
    log_softmax_at(&logits.data[last * logits.cols()], logits.cols(), target, &g.data[last * logits.cols()]);
    g(last, target) -= T(1);
    return g;
}

template class Tape<float>;
template class Tape<double>;
template Tensor<float> masked_row_softmax(const Tensor<float>&);
template Tensor<double> masked_row_softmax(const Tensor<double>&);
template Tensor<float> layer_norm(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&, float);
template Tensor<double> layer_norm(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&, double);
template float cross_entropy_last(const Tensor<float>&, std::size_t);
template double cross_entropy_last(const Tensor<double>&, std::size_t);
template Tensor<float> cross_entropy_last_grad(const Tensor<float>&, std::size_t);
template Tensor<double> cross_entropy_last_grad(const Tensor<double>&, std::size_t);

}  // namespace apl

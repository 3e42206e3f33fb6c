#pragma once

// Reverse-mode differentiation over an explicit tape of operation records.
// Every op appends a node holding its output value and a backward closure;
// backward() walks the tape in reverse and accumulates into Parameter::grad.

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "apl/tensor.hpp"

namespace apl {

class UsageError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

inline constexpr double kLayerNormEps = 1e-5;

struct Var {
    std::size_t id = static_cast<std::size_t>(-1);
    bool valid() const { return id != static_cast<std::size_t>(-1); }
};

template <typename T>
class Tape {
public:
    Var constant(Tensor<T> value);
    /// Leaf bound to a parameter; its value is read in place, never copied,
    /// and backward() adds into p.grad.
    Var param(Parameter<T>& p);
    /// Read-only parameter leaf (inference); receives no gradient.
    Var param(const Parameter<T>& p);

    const Tensor<T>& value(Var v) const;
    /// Pre-affine normalized rows for layer_norm nodes, softmax probabilities for cross_entropy.
    const Tensor<T>& aux(Var v) const;
    std::size_t size() const { return nodes_.size(); }

    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    /// x (R x C) + bias (C) broadcast over rows.
    Var add_bias(Var x, Var bias);
    /// x (R x C) + p (n x C) with row r receiving p[r % n]; R must be a multiple of n.
    Var add_tiled(Var x, Var p);
    Var gather_rows(Var table, std::vector<std::size_t> ids);
    Var select_rows(Var x, std::vector<std::size_t> rows);

    /// Per-sequence scale * Q K^T for blocks of `seq` rows, stored as (B*seq) x seq; future cells are 0.
    Var causal_scores(Var q, Var k, std::size_t seq, T scale);
    /// Row softmax where row r may only see columns <= r % seq; masked cells are exactly 0.
    Var causal_softmax(Var scores, std::size_t seq);
    /// Per-sequence probs (seq x seq) times V block.
    Var attend(Var probs, Var v, std::size_t seq);

    Var layer_norm(Var x, Var gain, Var bias, T eps = static_cast<T>(kLayerNormEps));
    Var gelu(Var x);
    Var relu(Var x);
    Var sum(Var x);
    /// Mean over rows of -log softmax(logits[r])[targets[r]].
    Var cross_entropy(Var logits, std::vector<std::size_t> targets);

    /// Accumulates d(loss)/d(param) into every reachable Parameter's grad. One call per tape.
    void backward(Var loss);

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        Tensor<T> aux;
        std::vector<T> scratch;
        const Tensor<T>* external = nullptr;
        Parameter<T>* param = nullptr;
        bool needs_grad = false;
        std::function<void(Tape&, std::size_t)> back;
    };

    Node& node(Var v);
    const Node& node(Var v) const;
    Var push(Node n);
    /// Gradient buffer of an input, allocated on first use; nullptr when the input needs no gradient.
    Tensor<T>* grad_of(Var v);
    const Tensor<T>& val(std::size_t id) const;

    std::vector<Node> nodes_;
    bool consumed_ = false;
};

/// Standalone causal softmax on a square score matrix.
template <typename T>
Tensor<T> masked_row_softmax(const Tensor<T>& scores);

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = static_cast<T>(kLayerNormEps));

/// -log softmax(logits[last row])[target], evaluated in log space.
template <typename T>
T cross_entropy_last(const Tensor<T>& logits, std::size_t target);

/// d cross_entropy_last / d logits: softmax - onehot on the last row, zero elsewhere.
template <typename T>
Tensor<T> cross_entropy_last_grad(const Tensor<T>& logits, std::size_t target);

}  // namespace apl

#pragma once

// Single-head post-LN decoder:
//   X1   = onehot(tokens) W_em + X_pos
//   Attn = causal_softmax(Q K^T / sqrt(d_k)),  X_qkv = Attn V
//   X_ao = LN(X + X_qkv W_attn)
//   X_do = LN(FFN(X_ao) + X_ao)            (next layer input)
//   logits = X_do(L) W_dec

#include <cstddef>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "apl/autodiff.hpp"
#include "apl/datagen.hpp"
#include "apl/tensor.hpp"

namespace apl {

enum class Activation { Gelu, Relu };

const char* to_string(Activation a);
Activation parse_activation(const std::string& text);

struct ModelConfig {
    int depth = 2;
    int d_model = 400;
    int d_ff = 1200;
    int d_k = 200;
    int d_v = 200;
    int vocab = kDefaultVocab;
    int seq_len = kDefaultSeqLen;
    double gamma = 0.5;
    Activation activation = Activation::Gelu;
    /// Draw LN gains/biases and FFN biases from the gamma scheme too (ablation knob).
    bool gamma_init_all = false;

    /// Throws ConfigError naming the offending field.
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

template <typename T>
class TransformerParams {
public:
    struct LayerSlots {
        std::size_t wq, wk, wv, wattn, ln1_gain, ln1_bias, w1, b1, w2, b2, ln2_gain, ln2_bias;
    };

    /// Allocates every tensor with zeros (gains = 1); use init_params for a trainable model.
    explicit TransformerParams(ModelConfig config);

    const ModelConfig& config() const { return config_; }
    std::vector<Parameter<T>>& all() { return params_; }
    const std::vector<Parameter<T>>& all() const { return params_; }

    Parameter<T>& at(const std::string& name);
    const Parameter<T>& at(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    Parameter<T>& operator[](std::size_t i) { return params_[i]; }
    const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }

    std::size_t embed() const { return embed_; }
    std::size_t pos() const { return pos_; }
    std::size_t decoder() const { return decoder_; }
    const LayerSlots& layer(std::size_t l) const { return layers_.at(l); }

    void zero_grad();
    std::size_t parameter_count() const;

    template <typename U>
    TransformerParams<U> cast() const;

private:
    std::size_t add(std::string name, std::vector<std::size_t> shape, std::size_t d_in, T fill = T(0));

    ModelConfig config_;
    std::vector<Parameter<T>> params_;
    std::unordered_map<std::string, std::size_t> index_;
    std::size_t embed_ = 0, pos_ = 0, decoder_ = 0;
    std::vector<LayerSlots> layers_;
};

/// Weight matrices ~ N(0, ((1/d_in)^gamma)^2) with d_in = row count; X_pos uses d_in = d_model.
/// Biases are 0 and LN gains 1 unless config.gamma_init_all.
template <typename T>
TransformerParams<T> init_params(const ModelConfig& config, Rng& rng);

template <typename T>
struct LayerTrace {
    Tensor<T> input;      // X^(l)
    Tensor<T> q, k, v;
    Tensor<T> attn;       // (B*n) x n, row-stochastic, causal
    Tensor<T> qkv;        // Attn V
    Tensor<T> ao;         // X^ao(l)
    Tensor<T> dout;       // X^do(l)
    Tensor<T> ao_normalized;   // pre-affine LN rows
    Tensor<T> do_normalized;
};

template <typename T>
struct ActivationTrace {
    Tensor<T> embedded;   // X^em (before positions)
    std::vector<LayerTrace<T>> layers;
    Tensor<T> logits;
};

/// Full-sequence logits (batch*n x vocab) for `batch` sequences laid out back to back.
template <typename T>
Tensor<T> forward_batch(const TransformerParams<T>& params, std::span<const Token> tokens, std::size_t batch,
                        ActivationTrace<T>* trace = nullptr);

/// n x vocab logits of one sequence.
template <typename T>
Tensor<T> forward(const TransformerParams<T>& params, std::span<const Token> tokens,
                  ActivationTrace<T>* trace = nullptr);

/// Argmax of the last row; ties go to the lowest token id.
template <typename T>
int argmax_row(const Tensor<T>& logits, std::size_t row);

template <typename T>
int predict(const TransformerParams<T>& params, std::span<const Token> tokens);

/// Predictions for many samples, computing only last-position logits.
template <typename T>
std::vector<int> predict_samples(const TransformerParams<T>& params, std::span<const Sample> samples,
                                 std::size_t chunk = 512);

/// Mean last-token cross-entropy over the batch; gradients are zeroed and then written to params' grad.
template <typename T>
T loss_and_grads(TransformerParams<T>& params, std::span<const Sample> batch);

/// Same loss without gradients.
template <typename T>
T batch_loss(const TransformerParams<T>& params, std::span<const Sample> batch);

}  // namespace apl

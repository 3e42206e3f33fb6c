#include "apl/transformer.hpp"

#include <cmath>
#include <stdexcept>
#include <type_traits>

namespace apl {

const char* to_string(Activation a) { return a == Activation::Gelu ? "gelu" : "relu"; }

Activation parse_activation(const std::string& text) {
    if (text == "gelu") return Activation::Gelu;
    if (text == "relu") return Activation::Relu;
    throw ConfigError("model.activation: unknown activation '" + text + "'");
}

void ModelConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v < 1) throw ConfigError(std::string("model.") + name + " must be >= 1");
    };
    positive(depth, "depth");
    positive(d_model, "d_model");
    positive(d_ff, "d_ff");
    positive(d_k, "d_k");
    positive(d_v, "d_v");
    positive(vocab, "vocab");
    positive(seq_len, "seq_len");
    if (d_model < 2) throw ConfigError("model.d_model must be >= 2 for layer norm");
    if (d_k > d_model) throw ConfigError("model.d_k must not exceed d_model");
    if (!std::isfinite(gamma)) throw ConfigError("model.gamma must be finite");
}

template <typename T>
TransformerParams<T>::TransformerParams(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    const auto V = static_cast<std::size_t>(config_.vocab);
    const auto D = static_cast<std::size_t>(config_.d_model);
    const auto F = static_cast<std::size_t>(config_.d_ff);
    const auto K = static_cast<std::size_t>(config_.d_k);
    const auto Dv = static_cast<std::size_t>(config_.d_v);
    const auto N = static_cast<std::size_t>(config_.seq_len);

    embed_ = add("embed.W", {V, D}, V);
    pos_ = add("pos.X", {N, D}, D);
    for (int l = 0; l < config_.depth; ++l) {
        const std::string p = "layer." + std::to_string(l) + ".";
        LayerSlots s{};
        s.wq = add(p + "WQ", {D, K}, D);
        s.wk = add(p + "WK", {D, K}, D);
        s.wv = add(p + "WV", {D, Dv}, D);
        s.wattn = add(p + "Wattn", {Dv, D}, Dv);
        s.ln1_gain = add(p + "ln1.gain", {D}, D, T(1));
        s.ln1_bias = add(p + "ln1.bias", {D}, D);
        s.w1 = add(p + "ffn.W1", {D, F}, D);
        s.b1 = add(p + "ffn.b1", {F}, D);
        s.w2 = add(p + "ffn.W2", {F, D}, F);
        s.b2 = add(p + "ffn.b2", {D}, F);
        s.ln2_gain = add(p + "ln2.gain", {D}, D, T(1));
        s.ln2_bias = add(p + "ln2.bias", {D}, D);
        layers_.push_back(s);
    }
    decoder_ = add("decoder.W", {D, V}, D);
}

template <typename T>
std::size_t TransformerParams<T>::add(std::string name, std::vector<std::size_t> shape, std::size_t d_in, T fill) {
    if (index_.count(name)) throw std::logic_error("duplicate parameter " + name);
    index_[name] = params_.size();
    params_.emplace_back(std::move(name), Tensor<T>(std::move(shape), fill), d_in);
    return params_.size() - 1;
}

template <typename T>
Parameter<T>& TransformerParams<T>::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return params_[it->second];
}

template <typename T>
const Parameter<T>& TransformerParams<T>::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return params_[it->second];
}

template <typename T>
void TransformerParams<T>::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

template <typename T>
std::size_t TransformerParams<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

template <typename T>
template <typename U>
TransformerParams<U> TransformerParams<T>::cast() const {
    TransformerParams<U> out(config_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        out[i].value = params_[i].value.template cast<U>();
    }
    return out;
}

template <typename T>
TransformerParams<T> init_params(const ModelConfig& config, Rng& rng) {
    TransformerParams<T> params(config);
    for (auto& p : params.all()) {
        if (p.is_matrix() || config.gamma_init_all) {
            p.value = init_normal<T>(p.value.shape, p.d_in, config.gamma, rng);
        }
    }
    return params;
}

namespace {

template <typename T>
struct LayerVars {
    Var input, q, k, v, attn, qkv, ao, dout;
};

template <typename T>
struct ForwardVars {
    Var embedded;
    std::vector<LayerVars<T>> layers;
    Var logits;
};

// Records the forward pass; Params is TransformerParams<T> (trainable) or const (inference).
template <typename T, typename Params>
ForwardVars<T> record_forward(Tape<T>& tape, Params& params, std::span<const Token> tokens, std::size_t batch,
                              bool last_only) {
    const ModelConfig& cfg = params.config();
    const auto n = static_cast<std::size_t>(cfg.seq_len);
    if (batch == 0 || tokens.size() != batch * n) {
        throw std::invalid_argument("forward: expected " + std::to_string(batch * n) + " tokens, got " +
                                    std::to_string(tokens.size()));
    }
    std::vector<std::size_t> ids(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] >= static_cast<std::size_t>(cfg.vocab)) {
            throw std::out_of_range("forward: token " + std::to_string(tokens[i]) + " outside vocabulary");
        }
        ids[i] = tokens[i];
    }
    auto P = [&](std::size_t idx) { return tape.param(params[idx]); };

    ForwardVars<T> out;
    out.embedded = tape.gather_rows(P(params.embed()), std::move(ids));
    Var x = tape.add_tiled(out.embedded, P(params.pos()));
    const T scale = T(1) / std::sqrt(static_cast<T>(cfg.d_k));
    for (int l = 0; l < cfg.depth; ++l) {
        const auto& s = params.layer(static_cast<std::size_t>(l));
        LayerVars<T> lv;
        lv.input = x;
        lv.q = tape.matmul(x, P(s.wq));
        lv.k = tape.matmul(x, P(s.wk));
        lv.v = tape.matmul(x, P(s.wv));
        lv.attn = tape.causal_softmax(tape.causal_scores(lv.q, lv.k, n, scale), n);
        lv.qkv = tape.attend(lv.attn, lv.v, n);
        lv.ao = tape.layer_norm(tape.add(x, tape.matmul(lv.qkv, P(s.wattn))), P(s.ln1_gain), P(s.ln1_bias));
        Var h = tape.add_bias(tape.matmul(lv.ao, P(s.w1)), P(s.b1));
        h = cfg.activation == Activation::Gelu ? tape.gelu(h) : tape.relu(h);
        Var f = tape.add_bias(tape.matmul(h, P(s.w2)), P(s.b2));
        lv.dout = tape.layer_norm(tape.add(f, lv.ao), P(s.ln2_gain), P(s.ln2_bias));
        x = lv.dout;
        out.layers.push_back(lv);
    }
    if (last_only) {
        std::vector<std::size_t> last(batch);
        for (std::size_t b = 0; b < batch; ++b) last[b] = b * n + n - 1;
        x = tape.select_rows(x, std::move(last));
    }
    out.logits = tape.matmul(x, P(params.decoder()));
    return out;
}

template <typename T>
void fill_trace(const Tape<T>& tape, const ForwardVars<T>& vars, ActivationTrace<T>& trace) {
    trace.embedded = tape.value(vars.embedded);
    trace.layers.clear();
    for (const auto& lv : vars.layers) {
        LayerTrace<T> lt;
        lt.input = tape.value(lv.input);
        lt.q = tape.value(lv.q);
        lt.k = tape.value(lv.k);
        lt.v = tape.value(lv.v);
        lt.attn = tape.value(lv.attn);
        lt.qkv = tape.value(lv.qkv);
        lt.ao = tape.value(lv.ao);
        lt.dout = tape.value(lv.dout);
        lt.ao_normalized = tape.aux(lv.ao);
        lt.do_normalized = tape.aux(lv.dout);
        trace.layers.push_back(std::move(lt));
    }
    trace.logits = tape.value(vars.logits);
}

template <typename T>
std::vector<Token> flatten(std::span<const Sample> samples, std::size_t n) {
    std::vector<Token> flat;
    flat.reserve(samples.size() * n);
    for (const auto& s : samples) {
        if (s.tokens.size() != n) throw std::invalid_argument("sample length differs from model seq_len");
        flat.insert(flat.end(), s.tokens.begin(), s.tokens.end());
    }
    return flat;
}

std::vector<std::size_t> targets_of(std::span<const Sample> samples) {
    std::vector<std::size_t> t;
    t.reserve(samples.size());
    for (const auto& s : samples) t.push_back(s.target);
    return t;
}

}  // namespace

template <typename T>
Tensor<T> forward_batch(const TransformerParams<T>& params, std::span<const Token> tokens, std::size_t batch,
                        ActivationTrace<T>* trace) {
    Tape<T> tape;
    auto vars = record_forward(tape, params, tokens, batch, false);
    if (trace) fill_trace(tape, vars, *trace);
    return tape.value(vars.logits);
}

template <typename T>
Tensor<T> forward(const TransformerParams<T>& params, std::span<const Token> tokens, ActivationTrace<T>* trace) {
    return forward_batch(params, tokens, 1, trace);
}

template <typename T>
int argmax_row(const Tensor<T>& logits, std::size_t row) {
    const std::size_t C = logits.cols();
    std::size_t best = 0;
    for (std::size_t j = 1; j < C; ++j) {
        if (logits(row, j) > logits(row, best)) best = j;
    }
    return static_cast<int>(best);
}

template <typename T>
int predict(const TransformerParams<T>& params, std::span<const Token> tokens) {
    const Tensor<T> logits = forward(params, tokens);
    return argmax_row(logits, logits.rows() - 1);
}

template <typename T>
std::vector<int> predict_samples(const TransformerParams<T>& params, std::span<const Sample> samples,
                                 std::size_t chunk) {
    const auto n = static_cast<std::size_t>(params.config().seq_len);
    std::vector<int> out;
    out.reserve(samples.size());
    for (std::size_t start = 0; start < samples.size(); start += chunk) {
        auto part = samples.subspan(start, std::min(chunk, samples.size() - start));
        const auto flat = flatten<T>(part, n);
        Tape<T> tape;
        auto vars = record_forward(tape, params, flat, part.size(), true);
        const auto& logits = tape.value(vars.logits);
        for (std::size_t r = 0; r < part.size(); ++r) out.push_back(argmax_row(logits, r));
    }
    return out;
}

template <typename T>
T loss_and_grads(TransformerParams<T>& params, std::span<const Sample> batch) {
    if (batch.empty()) throw std::invalid_argument("loss_and_grads: empty batch");
    params.zero_grad();
    const auto n = static_cast<std::size_t>(params.config().seq_len);
    const auto flat = flatten<T>(batch, n);
    Tape<T> tape;
    auto vars = record_forward(tape, params, flat, batch.size(), true);
    Var loss = tape.cross_entropy(vars.logits, targets_of(batch));
    tape.backward(loss);
    return tape.value(loss).data[0];
}

template <typename T>
T batch_loss(const TransformerParams<T>& params, std::span<const Sample> batch) {
    if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
    const auto n = static_cast<std::size_t>(params.config().seq_len);
    const auto flat = flatten<T>(batch, n);
    Tape<T> tape;
    auto vars = record_forward(tape, params, flat, batch.size(), true);
    return tape.value(tape.cross_entropy(vars.logits, targets_of(batch))).data[0];
}

#define APL_INSTANTIATE(T)                                                                                      \
    template class TransformerParams<T>;                                                                        \
    template TransformerParams<T> init_params<T>(const ModelConfig&, Rng&);                                     \
    template Tensor<T> forward_batch<T>(const TransformerParams<T>&, std::span<const Token>, std::size_t,       \
                                        ActivationTrace<T>*);                                                   \
    template Tensor<T> forward<T>(const TransformerParams<T>&, std::span<const Token>, ActivationTrace<T>*);    \
    template int argmax_row<T>(const Tensor<T>&, std::size_t);                                                  \
    template int predict<T>(const TransformerParams<T>&, std::span<const Token>);                               \
    template std::vector<int> predict_samples<T>(const TransformerParams<T>&, std::span<const Sample>,          \
                                                 std::size_t);                                                  \
    template T loss_and_grads<T>(TransformerParams<T>&, std::span<const Sample>);                               \
    template T batch_loss<T>(const TransformerParams<T>&, std::span<const Sample>);

APL_INSTANTIATE(float)
APL_INSTANTIATE(double)
#undef APL_INSTANTIATE

template TransformerParams<double> TransformerParams<float>::cast<double>() const;
template TransformerParams<float> TransformerParams<double>::cast<float>() const;
template TransformerParams<float> TransformerParams<float>::cast<float>() const;
template TransformerParams<double> TransformerParams<double>::cast<double>() const;

}  // namespace apl

#pragma once

// Central finite-difference oracle for analytic gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "apl/tensor.hpp"
#include "apl/transformer.hpp"

namespace apl::testing {

// Relative error of a parameter's gradient: ||a - n|| / (||a|| + ||n||) over the whole
// tensor. Per-entry ratios are also tracked, but near-zero entries make them measure
// the O(h^2) truncation of the difference quotient rather than the analytic gradient.
struct GradCheck {
    double max_rel_error = 0.0;        // worst parameter tensor
    std::string worst;                 // its name
    double max_entry_rel_error = 0.0;  // worst single entry, |a - n| / (|a| + |n|)
    std::string worst_entry;           // "name[index]"
    double max_abs_error = 0.0;
    std::size_t checked = 0;
};

inline double rel_error(double analytic, double numeric, double floor = 1e-12) {
    return std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), floor);
}

/// loss() must be a pure function of the current parameter values; grads must already hold
/// the analytic gradient at the unperturbed point.
inline GradCheck check_gradients(std::vector<Parameter<double>>& params, const std::function<double()>& loss,
                                 double h = 1e-3) {
    GradCheck out;
    for (auto& p : params) {
        double diff_sq = 0.0, a_sq = 0.0, n_sq = 0.0;
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double saved = p.value[i];
            p.value[i] = saved + h;
            const double up = loss();
            p.value[i] = saved - h;
            const double down = loss();
            p.value[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = p.grad[i];
            diff_sq += (analytic - numeric) * (analytic - numeric);
            a_sq += analytic * analytic;
            n_sq += numeric * numeric;
            const double rel = rel_error(analytic, numeric);
            out.max_abs_error = std::max(out.max_abs_error, std::abs(analytic - numeric));
            if (rel > out.max_entry_rel_error) {
                out.max_entry_rel_error = rel;
                out.worst_entry = p.name + "[" + std::to_string(i) + "]";
            }
            ++out.checked;
        }
        const double rel = std::sqrt(diff_sq) / std::max(std::sqrt(a_sq) + std::sqrt(n_sq), 1e-12);
        if (rel > out.max_rel_error) {
            out.max_rel_error = rel;
            out.worst = p.name;
        }
    }
    return out;
}

/// The small 64-bit model used for gradient fidelity checks.
inline ModelConfig gradcheck_model() {
    ModelConfig c;
    c.depth = 2;
    c.d_model = 16;
    c.d_ff = 32;
    c.d_k = 8;
    c.d_v = 8;
    c.vocab = 16;
    c.seq_len = 5;
    c.gamma = 0.5;
    c.gamma_init_all = true;  // random gains and biases exercise every path
    return c;
}

inline std::vector<Sample> gradcheck_batch(const ModelConfig& c, std::uint64_t seed, std::size_t count) {
    Rng rng(seed);
    std::uniform_int_distribution<int> tok(0, c.vocab - 1);
    std::vector<Sample> batch(count);
    for (auto& s : batch) {
        s.tokens.resize(static_cast<std::size_t>(c.seq_len));
        for (auto& t : s.tokens) t = static_cast<Token>(tok(rng));
        s.target = static_cast<Token>(tok(rng));
    }
    return batch;
}

/// Analytic vs. numeric gradients of the mean batch loss over every parameter entry.
inline GradCheck model_gradcheck(const ModelConfig& config, std::uint64_t seed, std::size_t batch_size = 3,
                                 double h = 1e-3) {
    Rng rng(seed);
    auto params = init_params<double>(config, rng);
    const auto batch = gradcheck_batch(config, seed + 1, batch_size);
    loss_and_grads(params, std::span<const Sample>(batch));
    return check_gradients(params.all(), [&] { return batch_loss(params, std::span<const Sample>(batch)); }, h);
}

}  // namespace apl::testing

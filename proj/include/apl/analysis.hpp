#pragma once

// Mechanistic analyses over trained parameters: attention flow, cosine-similarity
// heatmaps of fused vectors and Value rows, W^Q condensation grouping, embedding
// covariance spectra, weight singular values, and 2D projections.

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "apl/datagen.hpp"
#include "apl/tensor.hpp"
#include "apl/transformer.hpp"

namespace apl {

struct FlowReport {
    std::vector<Token> tokens;
    std::vector<std::string> labels;  // "key:99", "anchor:4", "noise:52"
    int key_pos = -1;
    std::vector<Tensor<double>> layers;  // Attn^(l), n x n
};

/// Key position of the first consecutive anchor pair, or -1.
int locate_key(std::span<const Token> tokens, const AnchorFunctionTable& table);

template <typename T>
FlowReport attention_flow(const TransformerParams<T>& params, std::span<const Token> tokens,
                          const AnchorFunctionTable& table = AnchorFunctionTable::standard());

/// Dense similarity grid; undefined cells (a zero-norm row) carry value 0 and defined = 0.
struct SimilarityMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;
    std::vector<std::uint8_t> defined;
    std::vector<std::uint8_t> masked;

    double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
    bool is_defined(std::size_t r, std::size_t c) const { return defined[r * cols + c] != 0; }
    bool is_masked(std::size_t r, std::size_t c) const { return !masked.empty() && masked[r * cols + c] != 0; }
    /// Long-form CSV: row,col,value,masked,defined
    std::string to_csv() const;
};

SimilarityMatrix cosine_matrix(const RowMatrix<double>& rows);
SimilarityMatrix cosine_cross(const RowMatrix<double>& a, const RowMatrix<double>& b);

struct CondensationReport {
    SimilarityMatrix permuted;                  // |cos| not applied; signed cosines in grouped order
    std::vector<std::size_t> permutation;       // position -> original row
    std::vector<std::vector<std::size_t>> groups;
    double threshold = 0.7;
    double score = 0.0;                         // fraction of off-diagonal pairs with |cos| > threshold
};

/// Groups rows of W into connected components of the |cos| > threshold graph.
CondensationReport condensation_report(const RowMatrix<double>& w, double threshold = 0.7);

/// Neuron input-weight vectors of a projection stored as x * W: the columns of W, one per row.
template <typename T>
RowMatrix<double> neuron_rows(const Parameter<T>& weight);

struct ProbeOptions {
    int key_lo = 30;
    int key_hi = 40;
    int key_pos = 2;
    std::uint64_t seed = 0;
};

/// Fixed noise template obeying the training placement rule, shared by all probes.
std::vector<Token> probe_template(int seq_len, std::uint64_t seed);
std::vector<Token> probe_tokens(const std::vector<Token>& noise, int key, AnchorPair pair, int key_pos);

struct Heatmap {
    std::string kind;
    std::string row_label, col_label;
    std::vector<int> row_keys, col_keys;
    SimilarityMatrix sim;

    double masked_mean() const;
    double unmasked_mean() const;
    double gap() const { return masked_mean() - unmasked_mean(); }
};

/// cos(v(x1; pair_a), v(x2; pair_b)) with v the last-token row of X^ao(2);
/// cells are masked where the designated targets coincide (held-out pairs: inferential).
template <typename T>
Heatmap fused_similarity_heatmap(const TransformerParams<T>& params, AnchorPair pair_a, AnchorPair pair_b,
                                 const MappingSpec& spec, const ProbeOptions& options = {});

/// cos(u(x1; a), u(x2; b)) with u the V^(2) row at the first anchor's position;
/// masked where g(x1; a) == g(x2; b).
template <typename T>
Heatmap value_row_similarity(const TransformerParams<T>& params, int anchor_a, int anchor_b,
                             const MappingSpec& spec, const ProbeOptions& options = {});

/// Masked-minus-unmasked mean cosine pooled over the (3,3)/(2,2) and (1,2)/(1,3) heatmaps.
template <typename T>
double fused_similarity_gap(const TransformerParams<T>& params, const MappingSpec& spec,
                            const ProbeOptions& options = {});

struct SpectrumReport {
    std::string name;
    std::vector<double> values;  // descending
};

/// Eigenvalues (descending) of the sample covariance of the given rows.
std::vector<double> covariance_eigenvalues(const RowMatrix<double>& rows);
std::vector<double> singular_values(const RowMatrix<double>& m);
double top_k_mass(std::span<const double> values, std::size_t k);

/// Covariance spectrum of the item-token embedding rows (tokens 20..99).
template <typename T>
SpectrumReport embedding_spectrum(const TransformerParams<T>& params);

struct SpectrumSeries {
    std::vector<int> epochs;
    std::vector<std::vector<double>> spectra;
    /// values at index `i` across the series
    std::vector<double> trajectory(std::size_t i) const;
};

SpectrumSeries embedding_spectrum_series(std::span<const std::string> checkpoint_paths);

template <typename T>
std::vector<SpectrumReport> weight_singular_values(const TransformerParams<T>& params);

struct Projection2D {
    std::vector<std::array<double, 2>> coords;
    std::vector<std::string> labels;
    std::array<double, 2> explained{0.0, 0.0};
    bool degenerate = false;
    std::string to_csv() const;
};

class Projector {
public:
    virtual ~Projector() = default;
    virtual Projection2D project(const RowMatrix<double>& vectors, std::uint64_t seed) const = 0;
};

/// Top-2 principal components; each axis is signed so its largest-magnitude loading is positive.
class PcaProjector : public Projector {
public:
    Projection2D project(const RowMatrix<double>& vectors, std::uint64_t seed) const override;
};

Projection2D project_2d(const RowMatrix<double>& vectors, std::vector<std::string> labels, std::uint64_t seed = 0,
                        const Projector& projector = PcaProjector{});

template <typename T>
Projection2D embedding_projection(const TransformerParams<T>& params);

/// X^ao(1) last-token vectors of `count` sequences drawn uniformly over pairs, keys and
/// positions; labels are "a1-a2".
template <typename T>
Projection2D attention_output_projection(const TransformerParams<T>& params, std::size_t count, std::uint64_t seed,
                                         const AnchorFunctionTable& table = AnchorFunctionTable::standard());

/// Mean distance between the (a,b) and (b,a) centroids over unordered a != b, divided by
/// the mean distance between all distinct pair centroids.
double symmetric_centroid_ratio(const Projection2D& projection);

}  // namespace apl

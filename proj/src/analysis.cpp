#include "apl/analysis.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "apl/checkpoint.hpp"

namespace apl {

int locate_key(std::span<const Token> tokens, const AnchorFunctionTable& table) {
    for (std::size_t i = 0; i + 2 < tokens.size(); ++i) {
        if (!table.contains(tokens[i]) && table.contains(tokens[i + 1]) && table.contains(tokens[i + 2])) {
            return static_cast<int>(i);
        }
    }
    return -1;
}

template <typename T>
FlowReport attention_flow(const TransformerParams<T>& params, std::span<const Token> tokens,
                          const AnchorFunctionTable& table) {
    ActivationTrace<T> trace;
    forward(params, tokens, &trace);
    FlowReport report;
    report.tokens.assign(tokens.begin(), tokens.end());
    report.key_pos = locate_key(tokens, table);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const int p = static_cast<int>(i);
        const char* role = p == report.key_pos                                   ? "key"
                           : (p == report.key_pos + 1 || p == report.key_pos + 2) && report.key_pos >= 0 ? "anchor"
                                                                                                          : "noise";
        report.labels.push_back(std::string(role) + ":" + std::to_string(tokens[i]));
    }
    for (const auto& layer : trace.layers) report.layers.push_back(layer.attn.template cast<double>());
    return report;
}

std::string SimilarityMatrix::to_csv() const {
    std::ostringstream os;
    os << "row,col,value,masked,defined\n" << std::setprecision(10);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            os << r << ',' << c << ',' << (*this)(r, c) << ',' << (is_masked(r, c) ? 1 : 0) << ','
               << (is_defined(r, c) ? 1 : 0) << '\n';
        }
    }
    return os.str();
}

SimilarityMatrix cosine_cross(const RowMatrix<double>& a, const RowMatrix<double>& b) {
    if (a.cols() != b.cols()) throw std::invalid_argument("cosine: vectors differ in dimension");
    SimilarityMatrix s;
    s.rows = static_cast<std::size_t>(a.rows());
    s.cols = static_cast<std::size_t>(b.rows());
    s.values.assign(s.rows * s.cols, 0.0);
    s.defined.assign(s.rows * s.cols, 0);
    const Eigen::VectorXd na = a.rowwise().norm();
    const Eigen::VectorXd nb = b.rowwise().norm();
    const RowMatrix<double> dots = a * b.transpose();
    for (std::size_t r = 0; r < s.rows; ++r) {
        for (std::size_t c = 0; c < s.cols; ++c) {
            const double denom = na(static_cast<Eigen::Index>(r)) * nb(static_cast<Eigen::Index>(c));
            if (denom > 0.0) {
                s.values[r * s.cols + c] =
                    std::clamp(dots(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) / denom, -1.0, 1.0);
                s.defined[r * s.cols + c] = 1;
            }
        }
    }
    return s;
}

SimilarityMatrix cosine_matrix(const RowMatrix<double>& rows) {
    SimilarityMatrix s = cosine_cross(rows, rows);
    for (std::size_t i = 0; i < s.rows; ++i) {
        if (s.is_defined(i, i)) s.values[i * s.cols + i] = 1.0;
        for (std::size_t j = i + 1; j < s.cols; ++j) s.values[j * s.cols + i] = s.values[i * s.cols + j];
    }
    return s;
}

CondensationReport condensation_report(const RowMatrix<double>& w, double threshold) {
    if (w.rows() < 2) throw std::invalid_argument("condensation: need at least two rows");
    const SimilarityMatrix sim = cosine_matrix(w);
    const std::size_t n = sim.rows;

    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    std::function<std::size_t(std::size_t)> root = [&](std::size_t i) {
        return parent[i] == i ? i : parent[i] = root(parent[i]);
    };
    std::size_t linked = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (sim.is_defined(i, j) && std::abs(sim(i, j)) > threshold) {
                ++linked;
                parent[root(i)] = root(j);
            }
        }
    }

    std::map<std::size_t, std::vector<std::size_t>> by_root;
    for (std::size_t i = 0; i < n; ++i) by_root[root(i)].push_back(i);
    CondensationReport report;
    report.threshold = threshold;
    for (auto& [_, members] : by_root) report.groups.push_back(std::move(members));
    std::stable_sort(report.groups.begin(), report.groups.end(),
                     [](const auto& a, const auto& b) { return a.size() > b.size(); });
    for (const auto& g : report.groups) report.permutation.insert(report.permutation.end(), g.begin(), g.end());

    report.permuted.rows = report.permuted.cols = n;
    report.permuted.values.resize(n * n);
    report.permuted.defined.resize(n * n);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < n; ++c) {
            report.permuted.values[r * n + c] = sim(report.permutation[r], report.permutation[c]);
            report.permuted.defined[r * n + c] = sim.is_defined(report.permutation[r], report.permutation[c]);
        }
    }
    report.score = static_cast<double>(linked) / (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
    return report;
}

template <typename T>
RowMatrix<double> neuron_rows(const Parameter<T>& weight) {
    return weight.value.mat().transpose().template cast<double>();
}

std::vector<Token> probe_template(int seq_len, std::uint64_t seed) {
    const SplitRule rule = SplitRule::for_seq_len(seq_len);
    Rng rng = make_rng(seed, "analysis.noise");
    std::vector<Token> noise(static_cast<std::size_t>(seq_len));
    for (int p = 0; p < seq_len; ++p) {
        const auto items = admissible_items(p, rule, SlotCheck::Train);
        std::uniform_int_distribution<std::size_t> pick(0, items.size() - 1);
        noise[static_cast<std::size_t>(p)] = static_cast<Token>(items[pick(rng)]);
    }
    return noise;
}

std::vector<Token> probe_tokens(const std::vector<Token>& noise, int key, AnchorPair pair, int key_pos) {
    if (key_pos < 0 || static_cast<std::size_t>(key_pos + 2) >= noise.size()) {
        throw std::invalid_argument("probe: key position out of range");
    }
    std::vector<Token> t = noise;
    t[static_cast<std::size_t>(key_pos)] = static_cast<Token>(key);
    t[static_cast<std::size_t>(key_pos + 1)] = static_cast<Token>(pair.first);
    t[static_cast<std::size_t>(key_pos + 2)] = static_cast<Token>(pair.second);
    return t;
}

namespace {

std::vector<int> key_range(const ProbeOptions& o) {
    if (o.key_hi < o.key_lo) throw std::invalid_argument("probe: empty key range");
    std::vector<int> keys;
    for (int k = o.key_lo; k <= o.key_hi; ++k) keys.push_back(k);
    return keys;
}

enum class ProbeVector { FusedLast, ValueAtFirstAnchor };

// One row per key: the requested activation for the probe sequence.
template <typename T>
RowMatrix<double> probe_vectors(const TransformerParams<T>& params, const std::vector<int>& keys, AnchorPair pair,
                                const ProbeOptions& o, ProbeVector which) {
    const auto& cfg = params.config();
    if (cfg.depth < 2) throw std::invalid_argument("probe: model depth must be at least 2");
    const auto n = static_cast<std::size_t>(cfg.seq_len);
    const auto noise = probe_template(cfg.seq_len, o.seed);
    std::vector<Token> flat;
    for (int k : keys) {
        const auto t = probe_tokens(noise, k, pair, o.key_pos);
        flat.insert(flat.end(), t.begin(), t.end());
    }
    ActivationTrace<T> trace;
    forward_batch(params, flat, keys.size(), &trace);
    const auto& layer = trace.layers[1];
    const std::size_t offset = which == ProbeVector::FusedLast ? n - 1 : static_cast<std::size_t>(o.key_pos + 1);
    const Tensor<T>& src = which == ProbeVector::FusedLast ? layer.ao : layer.v;
    RowMatrix<double> out(static_cast<Eigen::Index>(keys.size()), static_cast<Eigen::Index>(src.cols()));
    for (std::size_t i = 0; i < keys.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = src.mat().row(static_cast<Eigen::Index>(i * n + offset)).template cast<double>();
    }
    return out;
}

int target_or_inferential(int x, AnchorPair pair, const MappingSpec& spec) {
    return designated_target(x, pair, spec, Designation::inferential());
}

}  // namespace

double Heatmap::masked_mean() const {
    double total = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < sim.values.size(); ++i) {
        if (sim.masked[i] && sim.defined[i]) {
            total += sim.values[i];
            ++n;
        }
    }
    return n ? total / n : 0.0;
}

double Heatmap::unmasked_mean() const {
    double total = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < sim.values.size(); ++i) {
        if (!sim.masked[i] && sim.defined[i]) {
            total += sim.values[i];
            ++n;
        }
    }
    return n ? total / n : 0.0;
}

template <typename T>
Heatmap fused_similarity_heatmap(const TransformerParams<T>& params, AnchorPair pair_a, AnchorPair pair_b,
                                 const MappingSpec& spec, const ProbeOptions& options) {
    Heatmap h;
    h.kind = "fused";
    h.row_label = pair_a.to_string();
    h.col_label = pair_b.to_string();
    h.row_keys = h.col_keys = key_range(options);
    h.sim = cosine_cross(probe_vectors(params, h.row_keys, pair_a, options, ProbeVector::FusedLast),
                         probe_vectors(params, h.col_keys, pair_b, options, ProbeVector::FusedLast));
    h.sim.masked.assign(h.sim.values.size(), 0);
    for (std::size_t r = 0; r < h.row_keys.size(); ++r) {
        for (std::size_t c = 0; c < h.col_keys.size(); ++c) {
            h.sim.masked[r * h.sim.cols + c] = target_or_inferential(h.row_keys[r], pair_a, spec) ==
                                               target_or_inferential(h.col_keys[c], pair_b, spec);
        }
    }
    return h;
}

template <typename T>
Heatmap value_row_similarity(const TransformerParams<T>& params, int anchor_a, int anchor_b, const MappingSpec& spec,
                             const ProbeOptions& options) {
    // The causal mask makes the first-anchor row independent of the second anchor.
    Heatmap h;
    h.kind = "valuesim";
    h.row_label = std::to_string(anchor_a);
    h.col_label = std::to_string(anchor_b);
    h.row_keys = h.col_keys = key_range(options);
    h.sim = cosine_cross(
        probe_vectors(params, h.row_keys, {anchor_a, anchor_a}, options, ProbeVector::ValueAtFirstAnchor),
        probe_vectors(params, h.col_keys, {anchor_b, anchor_b}, options, ProbeVector::ValueAtFirstAnchor));
    h.sim.masked.assign(h.sim.values.size(), 0);
    for (std::size_t r = 0; r < h.row_keys.size(); ++r) {
        for (std::size_t c = 0; c < h.col_keys.size(); ++c) {
            h.sim.masked[r * h.sim.cols + c] = single_anchor_apply(h.row_keys[r], anchor_a, spec.table()) ==
                                               single_anchor_apply(h.col_keys[c], anchor_b, spec.table());
        }
    }
    return h;
}

template <typename T>
double fused_similarity_gap(const TransformerParams<T>& params, const MappingSpec& spec, const ProbeOptions& options) {
    const Heatmap a = fused_similarity_heatmap(params, {3, 3}, {2, 2}, spec, options);
    const Heatmap b = fused_similarity_heatmap(params, {1, 2}, {1, 3}, spec, options);
    double sums[2] = {0.0, 0.0};
    int counts[2] = {0, 0};
    for (const Heatmap* h : {&a, &b}) {
        for (std::size_t i = 0; i < h->sim.values.size(); ++i) {
            if (!h->sim.defined[i]) continue;
            const int m = h->sim.masked[i] ? 1 : 0;
            sums[m] += h->sim.values[i];
            ++counts[m];
        }
    }
    if (!counts[0] || !counts[1]) throw std::logic_error("fused gap: heatmaps lack masked or unmasked cells");
    return sums[1] / counts[1] - sums[0] / counts[0];
}

std::vector<double> covariance_eigenvalues(const RowMatrix<double>& rows) {
    if (rows.rows() < 2) throw std::invalid_argument("covariance: need at least two rows");
    const RowMatrix<double> centered = rows.rowwise() - rows.colwise().mean();
    const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(rows.rows() - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov, Eigen::EigenvaluesOnly);
    std::vector<double> ev(solver.eigenvalues().data(), solver.eigenvalues().data() + solver.eigenvalues().size());
    std::sort(ev.begin(), ev.end(), std::greater<>());
    return ev;
}

std::vector<double> singular_values(const RowMatrix<double>& m) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(m);
    const auto& s = svd.singularValues();
    std::vector<double> out(s.data(), s.data() + s.size());
    std::sort(out.begin(), out.end(), std::greater<>());
    return out;
}

double top_k_mass(std::span<const double> values, std::size_t k) {
    double total = 0.0, top = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double v = std::max(values[i], 0.0);
        total += v;
        if (i < k) top += v;
    }
    return total > 0.0 ? top / total : 0.0;
}

template <typename T>
SpectrumReport embedding_spectrum(const TransformerParams<T>& params) {
    const auto& W = params[params.embed()].value;
    if (static_cast<int>(W.rows()) <= kItemMax) throw std::invalid_argument("embedding: vocabulary too small for items");
    const RowMatrix<double> items =
        W.mat().middleRows(kItemMin, kItemMax - kItemMin + 1).template cast<double>();
    return {"embed.W[20..99]", covariance_eigenvalues(items)};
}

std::vector<double> SpectrumSeries::trajectory(std::size_t i) const {
    std::vector<double> out;
    for (const auto& s : spectra) out.push_back(i < s.size() ? s[i] : 0.0);
    return out;
}

SpectrumSeries embedding_spectrum_series(std::span<const std::string> checkpoint_paths) {
    std::vector<std::pair<int, std::vector<double>>> points;
    for (const auto& path : checkpoint_paths) {
        auto ckpt = load_checkpoint<double>(path);
        points.emplace_back(ckpt.meta.epoch, embedding_spectrum(ckpt.params).values);
    }
    std::stable_sort(points.begin(), points.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    SpectrumSeries series;
    for (auto& [epoch, values] : points) {
        series.epochs.push_back(epoch);
        series.spectra.push_back(std::move(values));
    }
    return series;
}

template <typename T>
std::vector<SpectrumReport> weight_singular_values(const TransformerParams<T>& params) {
    std::vector<SpectrumReport> out;
    for (const auto& p : params.all()) {
        if (!p.is_matrix()) continue;
        out.push_back({p.name, singular_values(p.value.mat().template cast<double>())});
    }
    return out;
}

std::string Projection2D::to_csv() const {
    std::ostringstream os;
    os << "index,x,y,label\n" << std::setprecision(10);
    for (std::size_t i = 0; i < coords.size(); ++i) {
        os << i << ',' << coords[i][0] << ',' << coords[i][1] << ',' << (i < labels.size() ? labels[i] : "") << '\n';
    }
    return os.str();
}

Projection2D PcaProjector::project(const RowMatrix<double>& x, std::uint64_t) const {
    if (x.rows() < 3) throw std::invalid_argument("projection: need at least three vectors");
    Projection2D out;
    out.coords.assign(static_cast<std::size_t>(x.rows()), {0.0, 0.0});
    const RowMatrix<double> centered = x.rowwise() - x.colwise().mean();
    const double total = centered.squaredNorm();
    if (!(total > 1e-24)) {
        out.degenerate = true;
        return out;
    }
    // Gram-side eigenproblem when there are fewer vectors than dimensions.
    Eigen::MatrixXd axes;
    Eigen::VectorXd ev;
    if (centered.rows() < centered.cols()) {
        const Eigen::MatrixXd gram = centered * centered.transpose();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
        ev = solver.eigenvalues();
        axes = centered.transpose() * solver.eigenvectors();
        for (Eigen::Index i = 0; i < axes.cols(); ++i) {
            const double norm = axes.col(i).norm();
            if (norm > 0) axes.col(i) /= norm;
        }
    } else {
        const Eigen::MatrixXd scatter = centered.transpose() * centered;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(scatter);
        ev = solver.eigenvalues();
        axes = solver.eigenvectors();
    }
    const Eigen::Index last = ev.size() - 1;
    for (int k = 0; k < 2; ++k) {
        const Eigen::Index idx = last - k;
        if (idx < 0) break;
        Eigen::VectorXd axis = axes.col(idx);
        Eigen::Index arg = 0;
        axis.cwiseAbs().maxCoeff(&arg);
        if (axis(arg) < 0) axis = -axis;
        const Eigen::VectorXd proj = centered * axis;
        for (Eigen::Index r = 0; r < proj.size(); ++r) out.coords[static_cast<std::size_t>(r)][k] = proj(r);
        out.explained[k] = std::max(ev(idx), 0.0) / total;
    }
    return out;
}

Projection2D project_2d(const RowMatrix<double>& vectors, std::vector<std::string> labels, std::uint64_t seed,
                        const Projector& projector) {
    Projection2D p = projector.project(vectors, seed);
    p.labels = std::move(labels);
    return p;
}

template <typename T>
Projection2D embedding_projection(const TransformerParams<T>& params) {
    const auto& W = params[params.embed()].value;
    const RowMatrix<double> items = W.mat().middleRows(kItemMin, kItemMax - kItemMin + 1).template cast<double>();
    std::vector<std::string> labels;
    for (int t = kItemMin; t <= kItemMax; ++t) labels.push_back(std::to_string(t));
    return project_2d(items, std::move(labels));
}

template <typename T>
Projection2D attention_output_projection(const TransformerParams<T>& params, std::size_t count, std::uint64_t seed,
                                         const AnchorFunctionTable& table) {
    const auto& cfg = params.config();
    const auto n = static_cast<std::size_t>(cfg.seq_len);
    const SplitRule rule = SplitRule::for_seq_len(cfg.seq_len);
    const auto anchors = table.anchors();
    Rng rng = make_rng(seed, "analysis.embed2d");
    std::uniform_int_distribution<std::size_t> pick_anchor(0, anchors.size() - 1);
    std::uniform_int_distribution<int> pick_key(kItemMin, kItemMax);
    std::uniform_int_distribution<int> pick_pos(0, cfg.seq_len - 3);

    RowMatrix<double> vectors(static_cast<Eigen::Index>(count), cfg.d_model);
    std::vector<std::string> labels;
    constexpr std::size_t kChunk = 500;
    for (std::size_t start = 0; start < count; start += kChunk) {
        const std::size_t m = std::min(kChunk, count - start);
        std::vector<Token> flat;
        for (std::size_t i = 0; i < m; ++i) {
            const AnchorPair pair{anchors[pick_anchor(rng)], anchors[pick_anchor(rng)]};
            const int key_pos = pick_pos(rng);
            std::vector<Token> t(n);
            for (std::size_t p = 0; p < n; ++p) {
                const auto items = admissible_items(static_cast<int>(p), rule, SlotCheck::Train);
                std::uniform_int_distribution<std::size_t> pick(0, items.size() - 1);
                t[p] = static_cast<Token>(items[pick(rng)]);
            }
            t = probe_tokens(t, pick_key(rng), pair, key_pos);
            flat.insert(flat.end(), t.begin(), t.end());
            labels.push_back(std::to_string(pair.first) + "-" + std::to_string(pair.second));
        }
        ActivationTrace<T> trace;
        forward_batch(params, flat, m, &trace);
        const auto& ao = trace.layers[0].ao;
        for (std::size_t i = 0; i < m; ++i) {
            vectors.row(static_cast<Eigen::Index>(start + i)) =
                ao.mat().row(static_cast<Eigen::Index>(i * n + n - 1)).template cast<double>();
        }
    }
    return project_2d(vectors, std::move(labels), seed);
}

double symmetric_centroid_ratio(const Projection2D& p) {
    std::map<std::string, std::array<double, 3>> acc;  // sum x, sum y, count
    for (std::size_t i = 0; i < p.coords.size(); ++i) {
        auto& a = acc[p.labels.at(i)];
        a[0] += p.coords[i][0];
        a[1] += p.coords[i][1];
        a[2] += 1.0;
    }
    std::map<std::string, std::array<double, 2>> centroid;
    for (const auto& [label, a] : acc) centroid[label] = {a[0] / a[2], a[1] / a[2]};
    auto dist = [](const std::array<double, 2>& u, const std::array<double, 2>& v) {
        return std::hypot(u[0] - v[0], u[1] - v[1]);
    };

    double all_sum = 0.0;
    int all_n = 0;
    for (auto i = centroid.begin(); i != centroid.end(); ++i) {
        for (auto j = std::next(i); j != centroid.end(); ++j) {
            all_sum += dist(i->second, j->second);
            ++all_n;
        }
    }
    double sym_sum = 0.0;
    int sym_n = 0;
    for (const auto& [label, c] : centroid) {
        const auto dash = label.find('-');
        const std::string a = label.substr(0, dash), b = label.substr(dash + 1);
        if (a >= b) continue;
        auto mirror = centroid.find(b + "-" + a);
        if (mirror == centroid.end()) continue;
        sym_sum += dist(c, mirror->second);
        ++sym_n;
    }
    if (!all_n || !sym_n || all_sum <= 0.0) return 0.0;
    return (sym_sum / sym_n) / (all_sum / all_n);
}

#define APL_INSTANTIATE(T)                                                                                         \
    template FlowReport attention_flow<T>(const TransformerParams<T>&, std::span<const Token>,                     \
                                          const AnchorFunctionTable&);                                             \
    template RowMatrix<double> neuron_rows<T>(const Parameter<T>&);                                                \
    template Heatmap fused_similarity_heatmap<T>(const TransformerParams<T>&, AnchorPair, AnchorPair,              \
                                                 const MappingSpec&, const ProbeOptions&);                         \
    template Heatmap value_row_similarity<T>(const TransformerParams<T>&, int, int, const MappingSpec&,            \
                                             const ProbeOptions&);                                                 \
    template double fused_similarity_gap<T>(const TransformerParams<T>&, const MappingSpec&, const ProbeOptions&); \
    template SpectrumReport embedding_spectrum<T>(const TransformerParams<T>&);                                    \
    template std::vector<SpectrumReport> weight_singular_values<T>(const TransformerParams<T>&);                   \
    template Projection2D embedding_projection<T>(const TransformerParams<T>&);                                    \
    template Projection2D attention_output_projection<T>(const TransformerParams<T>&, std::size_t, std::uint64_t,  \
                                                         const AnchorFunctionTable&);

APL_INSTANTIATE(float)
APL_INSTANTIATE(double)
#undef APL_INSTANTIATE

}  // namespace apl

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "apl/analysis.hpp"
#include "apl/checkpoint.hpp"

using namespace apl;

namespace {

ModelConfig small_model() {
    ModelConfig c;
    c.d_model = 24;
    c.d_ff = 48;
    c.d_k = 12;
    c.d_v = 12;
    return c;
}

RowMatrix<double> random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    RowMatrix<double> m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
    return m;
}

}  // namespace

TEST_CASE("cosine similarity basics") {
    RowMatrix<double> m(4, 2);
    m << 1, 0,  //
        2, 0,   //
        -3, 0,  //
        0, 5;
    const auto s = cosine_matrix(m);
    CHECK(s(0, 1) == doctest::Approx(1.0));
    CHECK(s(0, 2) == doctest::Approx(-1.0));
    CHECK(s(0, 3) == doctest::Approx(0.0));
    for (std::size_t i = 0; i < 4; ++i) CHECK(s(i, i) == doctest::Approx(1.0));

    RowMatrix<double> z(2, 2);
    z << 0, 0, 1, 1;
    const auto u = cosine_matrix(z);
    CHECK_FALSE(u.is_defined(0, 1));
    CHECK(u(0, 1) == 0.0);
    CHECK(u.is_defined(1, 1));

    const auto r = cosine_matrix(random_matrix(10, 6, 1));
    for (std::size_t i = 0; i < 10; ++i)
        for (std::size_t j = 0; j < 10; ++j) {
            CHECK(r(i, j) >= -1.0);
            CHECK(r(i, j) <= 1.0);
            CHECK(r(i, j) == doctest::Approx(r(j, i)));
        }
    CHECK(r.to_csv().rfind("row,col,value,masked,defined\n", 0) == 0);
}

TEST_CASE("condensation grouping") {
    RowMatrix<double> same(5, 3);
    for (int i = 0; i < 5; ++i) same.row(i) << 1, 2, 3;
    const auto one = condensation_report(same);
    CHECK(one.groups.size() == 1);
    CHECK(one.score == doctest::Approx(1.0));

    const RowMatrix<double> eye = RowMatrix<double>::Identity(4, 4);
    const auto singles = condensation_report(eye);
    CHECK(singles.groups.size() == 4);
    CHECK(singles.score == 0.0);

    // two clusters (sign-agnostic) plus a loner
    RowMatrix<double> w(5, 3);
    w << 1, 0, 0,   //
        0, 1, 0,    //
        -1, 0.1, 0, //
        0, 0.9, 0.1,//
        0, 0, 1;
    const auto rep = condensation_report(w);
    REQUIRE(rep.groups.size() == 3);
    CHECK(rep.groups[0].size() == 2);
    CHECK(rep.groups[1].size() == 2);
    CHECK(rep.score == doctest::Approx(2.0 / 10.0));
    // partition + bijection
    std::vector<std::size_t> perm = rep.permutation;
    std::sort(perm.begin(), perm.end());
    CHECK(perm == std::vector<std::size_t>{0, 1, 2, 3, 4});
    std::multiset<std::size_t> members;
    for (const auto& g : rep.groups) members.insert(g.begin(), g.end());
    CHECK(members.size() == 5);
    CHECK(std::set<std::size_t>(members.begin(), members.end()).size() == 5);
    // grouped rows sit next to each other in the permuted matrix
    CHECK(std::abs(rep.permuted(0, 1)) > 0.7);
}

TEST_CASE("neuron rows are weight columns") {
    Parameter<float> p("w", Tensor<float>::matrix(3, 2), 3);
    for (std::size_t i = 0; i < 6; ++i) p.value[i] = static_cast<float>(i);
    const auto rows = neuron_rows(p);
    CHECK(rows.rows() == 2);
    CHECK(rows.cols() == 3);
    CHECK(rows(1, 2) == 5.0);
    CHECK(rows(0, 1) == 2.0);
}

TEST_CASE("spectra") {
    // rank-1 rows: one nonzero eigenvalue
    RowMatrix<double> r1(10, 4);
    for (int i = 0; i < 10; ++i) r1.row(i) = static_cast<double>(i) * Eigen::RowVector4d(1, -2, 0.5, 3);
    const auto ev = covariance_eigenvalues(r1);
    REQUIRE(ev.size() == 4);
    CHECK(ev[0] > 1.0);
    for (std::size_t i = 1; i < 4; ++i) CHECK(std::abs(ev[i]) < 1e-9);

    const auto m = random_matrix(30, 6, 2);
    const auto e = covariance_eigenvalues(m);
    const RowMatrix<double> centered = m.rowwise() - m.colwise().mean();
    const double trace = (centered.transpose() * centered).trace() / 29.0;
    CHECK(std::accumulate(e.begin(), e.end(), 0.0) == doctest::Approx(trace).epsilon(1e-6));
    for (double v : e) CHECK(v >= -1e-8);
    CHECK(std::is_sorted(e.rbegin(), e.rend()));

    const auto sv = singular_values(RowMatrix<double>::Identity(5, 5));
    for (double v : sv) CHECK(v == doctest::Approx(1.0));
    const RowMatrix<double> low = random_matrix(8, 2, 3) * random_matrix(2, 6, 4);
    const auto lsv = singular_values(low);
    CHECK(std::count_if(lsv.begin(), lsv.end(), [](double v) { return v > 1e-9; }) == 2);

    RowMatrix<double> shuffled = m;
    shuffled.row(0).swap(shuffled.row(7));
    shuffled.row(3).swap(shuffled.row(29));
    const auto a = singular_values(m), b = singular_values(shuffled);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-6));

    const std::vector<double> vals{4, 3, 2, 1};
    CHECK(top_k_mass(vals, 2) == doctest::Approx(0.7));
    CHECK(top_k_mass(vals, 10) == doctest::Approx(1.0));
}

TEST_CASE("model spectra and series") {
    Rng rng(3);
    const auto p = init_params<double>(small_model(), rng);
    const auto rep = embedding_spectrum(p);
    CHECK(rep.values.size() == 24);
    const auto svs = weight_singular_values(p);
    CHECK(std::any_of(svs.begin(), svs.end(), [](const SpectrumReport& r) { return r.name == "layer.0.WQ"; }));
    for (const auto& r : svs) CHECK(std::is_sorted(r.values.rbegin(), r.values.rend()));

    const auto dir = std::filesystem::temp_directory_path() / "apl_unit" / "series";
    std::filesystem::create_directories(dir);
    std::vector<std::string> paths;
    for (int epoch : {5, 1}) {
        Rng r(static_cast<std::uint64_t>(epoch));
        const auto pe = init_params<float>(small_model(), r);
        paths.push_back((dir / ("epoch-" + std::to_string(epoch) + ".aplc")).string());
        save_checkpoint(paths.back(), pe, {small_model(), 0, epoch, {}});
    }
    const auto series = embedding_spectrum_series(paths);
    CHECK(series.epochs == std::vector<int>{1, 5});  // ordered by epoch
    CHECK(series.trajectory(0).size() == 2);
}

TEST_CASE("attention flow labels and rows") {
    Rng rng(4);
    const auto p = init_params<double>(small_model(), rng);
    const std::vector<Token> tokens{50, 99, 4, 3, 22, 23, 24, 25, 26};
    const auto flow = attention_flow(p, tokens);
    CHECK(flow.key_pos == 1);
    CHECK(flow.labels[1] == "key:99");
    CHECK(flow.labels[2] == "anchor:4");
    CHECK(flow.labels[0] == "noise:50");
    REQUIRE(flow.layers.size() == 2);
    for (const auto& a : flow.layers)
        for (std::size_t r = 0; r < 9; ++r) {
            double sum = 0.0;
            for (std::size_t c = 0; c < 9; ++c) {
                if (c > r) CHECK(a(r, c) == 0.0);
                sum += a(r, c);
            }
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
    // same numbers as the forward pass used for the loss
    ActivationTrace<double> trace;
    forward(p, tokens, &trace);
    CHECK(flow.layers[1] == trace.layers[1].attn);
    CHECK(locate_key(std::vector<Token>{30, 31, 32}, AnchorFunctionTable::standard()) == -1);
}

TEST_CASE("probe heatmaps: masks and trivial diagonals") {
    Rng rng(5);
    const auto p = init_params<double>(small_model(), rng);
    const auto spec = MappingSpec::standard();

    const auto noise = probe_template(9, 1);
    CHECK(noise == probe_template(9, 1));
    for (std::size_t pos = 0; pos < noise.size(); ++pos) CHECK(noise[pos] % 7 != static_cast<int>(pos));
    const auto t = probe_tokens(noise, 35, {2, 3}, 2);
    CHECK(t[2] == 35);
    CHECK(t[3] == 2);
    CHECK(t[4] == 3);

    const auto h = fused_similarity_heatmap(p, {2, 2}, {3, 3}, spec);
    CHECK(h.sim.rows == 11);
    CHECK(h.sim.is_masked(0, 6));  // f(30; 2,2) = f(36; 3,3) = 32
    CHECK_FALSE(h.sim.is_masked(0, 0));

    const auto same = fused_similarity_heatmap(p, {1, 2}, {1, 2}, spec);
    for (std::size_t i = 0; i < 11; ++i) CHECK(same.sim(i, i) == doctest::Approx(1.0));

    // held-out pair cells are scored with inferential targets
    const auto ho = fused_similarity_heatmap(p, {4, 3}, {3, 3}, spec);
    CHECK(ho.sim.is_masked(6, 0));        // 36 - 10 = 30 - 4
    CHECK_FALSE(ho.sim.is_masked(2, 0));  // would match only under x - 6

    const auto v = value_row_similarity(p, 1, 2, spec);
    CHECK(v.sim.is_masked(5, 9));  // g(35;1) = g(39;2) = 40
    const auto vv = value_row_similarity(p, 3, 3, spec);
    for (std::size_t i = 0; i < 11; ++i) CHECK(vv.sim(i, i) == doctest::Approx(1.0));
    CHECK(std::isfinite(fused_similarity_gap(p, spec)));
}

TEST_CASE("2D projection") {
    // three collinear points in 5D stay collinear
    RowMatrix<double> pts(3, 5);
    pts.row(0) << 0, 0, 0, 0, 0;
    pts.row(1) << 1, 2, 3, 4, 5;
    pts.row(2) << 2, 4, 6, 8, 10;
    const auto proj = project_2d(pts, {"a", "b", "c"});
    const auto& c = proj.coords;
    const double cross = (c[1][0] - c[0][0]) * (c[2][1] - c[0][1]) - (c[1][1] - c[0][1]) * (c[2][0] - c[0][0]);
    CHECK(std::abs(cross) < 1e-9);
    CHECK(proj.explained[0] + proj.explained[1] <= 1.0 + 1e-12);
    CHECK(proj.labels[2] == "c");

    const auto m = random_matrix(40, 8, 6);
    const auto a = project_2d(m, std::vector<std::string>(40, "x"), 3);
    const auto b = project_2d(m, std::vector<std::string>(40, "x"), 3);
    CHECK(a.coords == b.coords);

    RowMatrix<double> flat = RowMatrix<double>::Constant(5, 3, 2.0);
    const auto d = project_2d(flat, std::vector<std::string>(5, "k"));
    CHECK(d.degenerate);
    for (const auto& xy : d.coords) {
        CHECK(xy[0] == 0.0);
        CHECK(xy[1] == 0.0);
    }
    CHECK(a.to_csv().rfind("index,x,y,label\n", 0) == 0);
}

TEST_CASE("model projections and centroid ratio") {
    Rng rng(7);
    const auto p = init_params<double>(small_model(), rng);
    const auto e = embedding_projection(p);
    CHECK(e.coords.size() == 80);
    CHECK(e.labels.front() == "20");
    const auto ao = attention_output_projection(p, 400, 9);
    CHECK(ao.coords.size() == 400);
    CHECK(ao.labels.front().find('-') != std::string::npos);
    const double ratio = symmetric_centroid_ratio(ao);
    CHECK(std::isfinite(ratio));
    CHECK(ratio > 0.0);

    // symmetric pairs placed on top of each other give a ratio of 0
    Projection2D toy;
    for (int a = 1; a <= 2; ++a)
        for (int b = 1; b <= 2; ++b) {
            toy.coords.push_back({static_cast<double>(a + b), static_cast<double>(a * b)});
            toy.labels.push_back(std::to_string(a) + "-" + std::to_string(b));
        }
    CHECK(symmetric_centroid_ratio(toy) == doctest::Approx(0.0));
}

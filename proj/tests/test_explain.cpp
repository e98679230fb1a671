#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "evomail/error.hpp"
#include "evomail/explain.hpp"
#include "evomail/util.hpp"

using namespace evomail;

namespace {

HeteroGraph chain(int n, std::uint64_t seed) {
    HeteroGraph g;
    for (int i = 0; i < n; ++i) g.nodes.push_back({NodeKind::Email, "n" + std::to_string(i)});
    g.n_emails = n;
    for (int i = 0; i + 1 < n; ++i) g.edges.push_back({i, i + 1, Relation::Domain, 1.0});
    Rng rng(seed);
    Eigen::MatrixXd x(7, n);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1, 1);
    g.features = x.sparseView();
    g.index();
    g.compute_structural_stats();
    return g;
}

Hyper hyper(int layers) {
    Hyper h;
    h.d_in = 7;
    h.d_h = 5;
    h.layers = layers;
    h.top_k = 3;
    h.d_p = 16;
    h.attn_hidden = 4;
    h.dropout = 0.0;
    return h;
}

std::string namer(int, int i) { return "f" + std::to_string(i); }

// Re-derives the walk from the recorded attention maps.
void revalidate(const HeteroGraph& g, const ForwardTrace& t, int v, const PathOptions& opt, const EvidencePath& path) {
    const int L = t.layers;
    const auto row = [&](int node, int layer) {
        std::vector<std::pair<int, double>> out;
        for (int p = t.sel_begin[static_cast<std::size_t>(node)]; p < t.sel_begin[static_cast<std::size_t>(node) + 1]; ++p) {
            out.emplace_back(t.pair_nbr[static_cast<std::size_t>(p)], t.alpha[static_cast<std::size_t>(layer) - 1][p]);
        }
        return out;
    };
    const auto layer_at = [L](int l) { return l >= 1 ? l : L; };
    REQUIRE(!path.steps.empty());
    CHECK(path.steps[0].node == v);
    CHECK(path.steps.size() <= static_cast<std::size_t>(opt.max_depth) + 1);
    double top = 0.0;
    for (auto [u, a] : row(v, L)) top = std::max(top, a);
    CHECK(path.steps[0].confidence == top);
    std::set<int> seen{v};
    for (std::size_t i = 1; i < path.steps.size(); ++i) {
        const int prev = path.steps[i - 1].node;
        const int cur = path.steps[i].node;
        CHECK(g.find_slot(prev, cur) >= 0);
        CHECK(path.steps[i].relation == g.slot_relation(g.find_slot(prev, cur)));
        const auto r = row(prev, layer_at(L - static_cast<int>(i) + 1));
        int best = -1;
        double ba = -1;
        for (auto [u, a] : r) {
            if (a > ba || (a == ba && u < best)) {
                best = u;
                ba = a;
            }
        }
        CHECK(cur == best);
        double conf = 0.0;
        for (auto [u, a] : row(cur, layer_at(L - static_cast<int>(i)))) conf = std::max(conf, a);
        CHECK(path.steps[i].confidence == conf);
        CHECK(conf >= opt.min_confidence);
        CHECK(seen.insert(cur).second);
    }
    // the stop cause from the last node
    const int d = static_cast<int>(path.steps.size()) - 1;
    const int last = path.steps.back().node;
    PathStop expect = PathStop::DeadEnd;
    if (d >= opt.max_depth) {
        expect = PathStop::DepthCap;
    } else {
        const auto r = row(last, layer_at(L - d));
        if (!r.empty()) {
            int best = -1;
            double ba = -1;
            for (auto [u, a] : r) {
                if (a > ba || (a == ba && u < best)) {
                    best = u;
                    ba = a;
                }
            }
            if (!seen.contains(best)) expect = PathStop::ConfidenceFloor;
        }
    }
    CHECK(path.terminated_by == expect);
}

}  // namespace

TEST_CASE("two-node chain") {
    const auto g = chain(2, 1);
    HashedEncoder enc(16);
    CogGnn gnn(g, enc);
    const auto m = ModelState::initialize(hyper(2), 1);
    const auto t = gnn.forward(m);
    const auto path = extract_evidence_path(g, *t, 0, {3, 0.1});
    REQUIRE(path.steps.size() == 2);
    CHECK(path.steps[0].node == 0);
    CHECK(path.steps[0].confidence == 1.0);
    CHECK(!path.steps[0].relation);
    CHECK(path.steps[1].node == 1);
    CHECK(path.steps[1].relation == Relation::Domain);
    CHECK(path.terminated_by == PathStop::DeadEnd);

    const auto floor = extract_evidence_path(g, *t, 0, {3, 1.1});
    CHECK(floor.steps.size() == 1);
    CHECK(floor.terminated_by == PathStop::ConfidenceFloor);

    const auto capped = extract_evidence_path(g, *t, 0, {0, 0.1});
    CHECK(capped.steps.size() == 1);
    CHECK(capped.terminated_by == PathStop::DepthCap);

    CHECK_THROWS_AS(extract_evidence_path(g, *t, 7), TraceUnavailable);
}

TEST_CASE("depth cap and isolated nodes") {
    const auto g = chain(5, 2);
    HashedEncoder enc(16);
    CogGnn gnn(g, enc);
    const auto t = gnn.forward(ModelState::initialize(hyper(2), 2));
    for (int v = 0; v < 5; ++v) CHECK(extract_evidence_path(g, *t, v, {1, 0.0}).steps.size() <= 2);

    const auto lone = chain(1, 3);
    CogGnn gl(lone, enc);
    const auto tl = gl.forward(ModelState::initialize(hyper(1), 3));
    const auto p = extract_evidence_path(lone, *tl, 0);
    CHECK(p.steps.size() == 1);
    CHECK(p.steps[0].confidence == 0.0);
    CHECK(p.terminated_by == PathStop::DeadEnd);
}

TEST_CASE("paths revalidate against recorded attention") {
    Rng rng(4);
    HashedEncoder enc(16);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = 6 + static_cast<int>(rng.index(20));
        HeteroGraph g = chain(n, static_cast<std::uint64_t>(trial));
        std::set<std::pair<int, int>> used;
        for (const auto& e : g.edges) used.insert({e.u, e.v});
        for (int k = 0; k < n; ++k) {
            const int u = static_cast<int>(rng.index(static_cast<std::size_t>(n)));
            const int v = static_cast<int>(rng.index(static_cast<std::size_t>(n)));
            if (u == v || !used.insert({std::min(u, v), std::max(u, v)}).second) continue;
            g.edges.push_back({std::min(u, v), std::max(u, v), Relation::Semantic, 1.0});
        }
        std::sort(g.edges.begin(), g.edges.end(), [](const Edge& a, const Edge& b) { return std::tie(a.u, a.v) < std::tie(b.u, b.v); });
        g.index();
        g.compute_structural_stats();
        CogGnn gnn(g, enc);
        const int layers = 1 + trial % 3;
        const auto t = gnn.forward(ModelState::initialize(hyper(layers), static_cast<std::uint64_t>(trial)));
        for (const PathOptions opt : {PathOptions{}, PathOptions{6, 0.3}, PathOptions{2, 0.0}}) {
            for (int v = 0; v < n; ++v) revalidate(g, *t, v, opt, extract_evidence_path(g, *t, v, opt));
        }
    }
}

TEST_CASE("feature importance") {
    const auto g = chain(3, 5);
    HashedEncoder enc(16);
    CogGnn gnn(g, enc);
    const auto m = ModelState::initialize(hyper(2), 5);
    const auto t = gnn.forward(m);
    const auto all = feature_importance(gnn, m, *t, 0, {0, 1}, 100, namer);
    REQUIRE(all.size() == 2);
    CHECK(all[0].size() == 7);
    for (const auto& row : all) {
        for (std::size_t i = 1; i < row.size(); ++i) CHECK(row[i - 1].importance >= row[i].importance);
        for (const auto& f : row) CHECK(f.importance >= 0.0);
    }
    CHECK(feature_importance(gnn, m, *t, 0, {0}, 3, namer)[0].size() == 3);
    CHECK(all[0][0].name == "f" + std::to_string(all[0][0].index));

    auto sparse = g;
    sparse.features.coeffRef(2, 0) = 0.0;
    sparse.features.prune(0.0);
    CogGnn gs(sparse, enc);
    const auto ts = gs.forward(m);
    const auto zeroed = feature_importance(gs, m, *ts, 0, {0}, 7, namer);
    for (const auto& f : zeroed[0]) {
        if (f.index == 2) CHECK(f.importance == 0.0);
    }
}

TEST_CASE("linear probe ranking") {
    // isolated node, one layer: the effective weight is ∂ŷ/∂x in closed form
    const auto g = chain(1, 6);
    HashedEncoder enc(16);
    CogGnn gnn(g, enc);
    const auto hy = hyper(1);
    const auto m = ModelState::initialize(hy, 6);
    const auto t = gnn.forward(m);
    const auto ln_jac = [](const Eigen::VectorXd& pre) {
        const Eigen::VectorXd r = pre.cwiseMax(0.0);
        Eigen::VectorXd y(r.size());
        const double inv = layer_norm(r, y);
        const auto n = static_cast<double>(r.size());
        Eigen::MatrixXd j = inv * (Eigen::MatrixXd::Identity(r.size(), r.size()) -
                                   Eigen::MatrixXd::Constant(r.size(), r.size(), 1.0 / n) - y * y.transpose() / n);
        for (Eigen::Index c = 0; c < r.size(); ++c) {
            if (!(pre[c] > 0)) j.col(c).setZero();
        }
        return std::make_pair(j, y);
    };
    const Eigen::VectorXd x = Eigen::MatrixXd(g.features).col(0);
    const auto [j0, h0] = ln_jac(m.init_weight * x + m.init_bias.col(0));
    const auto [j1, n1] = ln_jac(m.layers[0].self * h0 + m.layers[0].bias.col(0));
    const Eigen::VectorXd h1 = n1 + h0;
    const double y = sigmoid((m.out_weight * h1)(0, 0) + m.out_bias(0, 0));
    const Eigen::RowVectorXd w = y * (1 - y) * m.out_weight * (j1 * m.layers[0].self + Eigen::MatrixXd::Identity(hy.d_h, hy.d_h)) * j0 * m.init_weight;

    std::vector<int> expect(7);
    std::iota(expect.begin(), expect.end(), 0);
    std::sort(expect.begin(), expect.end(), [&](int a, int b) {
        const double ia = std::abs(w[a] * x[a]);
        const double ib = std::abs(w[b] * x[b]);
        return ia != ib ? ia > ib : a < b;
    });
    const auto got = feature_importance(gnn, m, *t, 0, {0}, 7, namer)[0];
    REQUIRE(got.size() == 7);
    for (std::size_t i = 0; i < 7; ++i) {
        CHECK(got[i].index == expect[i]);
        CHECK(got[i].importance == doctest::Approx(std::abs(w[got[i].index] * x[got[i].index])).epsilon(1e-10));
    }
}

TEST_CASE("rendered explanation") {
    EvidencePath single{{{4, NodeKind::Email, std::nullopt, 0.75}}, PathStop::DeadEnd};
    const auto text = render_explanation(single, {}, 0.8125);
    CHECK(text == "score=0.812, verdict=spam\nemail(4) --self--> confidence 0.750\n");
    CHECK(std::count(text.begin(), text.end(), '\n') == 2);
    CHECK(render_explanation(single, {}, 0.2).starts_with("score=0.200, verdict=ham\n"));

    EvidencePath path{{{0, NodeKind::Email, std::nullopt, 0.9},
                       {11, NodeKind::Sender, Relation::SentTo, 0.6},
                       {12, NodeKind::Domain, Relation::HostedOn, 0.5}},
                      PathStop::DepthCap};
    const std::vector<std::vector<FeatureImportance>> attr = {{{3, "tok:free", 0.25}, {0, "len", 0.125}}, {}, {{6, "deg", 1.0}}};
    const auto a = render_explanation(path, attr, 0.5);
    CHECK(a == render_explanation(path, attr, 0.5));
    const auto steps = a.substr(0, a.find("features"));
    for (int id : {0, 11, 12}) {
        const std::string needle = "(" + std::to_string(id) + ")";
        CHECK(steps.find(needle) != std::string::npos);
        CHECK(steps.find(needle) == steps.rfind(needle));
    }
    CHECK(a.find("features 0: tok:free=0.250, len=0.125\n") != std::string::npos);
    CHECK(a.find("features 1") == std::string::npos);
    CHECK(a.find("features 2: deg=1.000\n") != std::string::npos);
    CHECK(entity_feature_name(3) == "entity:is_domain");
    CHECK(entity_feature_name(6) == "entity:log_degree");
}
